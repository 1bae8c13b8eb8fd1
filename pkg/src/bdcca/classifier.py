"""Frame-wise binary event detector (conv blocks + bidirectional GRU).

One class serves two roles: the bootstrap model that pseudo-labels
unlabeled accelerometer clips, and the downstream detector trained on
spectrograms or on DCCA embeddings.
"""

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn

from ._validation import ConfigError, check_binary, check_clip_stack, check_random_state
from .augment import AugmentConfig, spec_augment
from .checkpoint import load_arrays_into, load_checkpoint, save_checkpoint, state_dict_to_arrays
from .dsp import FrameTrack

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.6


@dataclass
class DetectionConfig:
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")


def binarize(probabilities, threshold=DEFAULT_THRESHOLD):
    """Unit step on ``p - threshold`` with the step at 0 mapped to 0."""
    if isinstance(threshold, DetectionConfig):
        threshold = threshold.threshold
    if isinstance(probabilities, FrameTrack):
        return FrameTrack((probabilities.values > threshold).astype(np.float64), "label",
                          probabilities.clip_id)
    return (np.asarray(probabilities) > threshold).astype(np.int64)


class DCRNN(nn.Module):
    def __init__(self, n_rows, conv_channels=(16, 32, 32), pool=4, hidden=64):
        super().__init__()
        blocks, width, rows = [], 1, n_rows
        for c in conv_channels:
            blocks += [nn.Conv2d(width, c, 3, padding=1), nn.BatchNorm2d(c), nn.ReLU(),
                       nn.MaxPool2d((pool, 1), ceil_mode=True)]
            width, rows = c, -(-rows // pool)
        self.conv = nn.Sequential(*blocks)
        self.gru = nn.GRU(width * rows, hidden, batch_first=True, bidirectional=True)
        self.head = nn.Linear(2 * hidden, 1)

    def forward(self, x):
        z = self.conv(x.unsqueeze(1))
        b, c, f, t = z.shape
        z, _ = self.gru(z.reshape(b, c * f, t).transpose(1, 2))
        return self.head(z).squeeze(-1)


def balance_labeled_set(X, y, target=0.2, augment=None, rng=None, max_added=None):
    """Duplicate-and-augment clips that contain events to raise the positive-frame share.

    Clips are cycled in order of decreasing positive fraction. Each copy is
    masked with :func:`spec_augment` and keeps its labels. Copying stops
    once positives reach ``target`` of all frames or after ``max_added``
    copies (default: as many copies as there are clips).
    """
    y = np.asarray(y)
    if target <= 0 or y.size == 0:
        return X, y
    augment = augment or AugmentConfig()
    rng = check_random_state(rng)
    pos_frac = y.mean(axis=1)
    order = [i for i in np.argsort(-pos_frac, kind="stable") if pos_frac[i] > 0]
    if not order:
        return X, y
    max_added = len(X) if max_added is None else max_added
    positives, total = y.sum(), y.size
    extra_x, extra_y = [], []
    while positives / total < target and len(extra_x) < max_added:
        i = order[len(extra_x) % len(order)]
        extra_x.append(spec_augment(X[i], augment, rng))
        extra_y.append(y[i])
        positives += y[i].sum()
        total += y.shape[1]
    if not extra_x:
        return X, y
    return np.concatenate([X, np.stack(extra_x)]), np.concatenate([y, np.stack(extra_y)])


class FrameClassifier(ClassifierMixin, BaseEstimator):
    """DCRNN-style per-frame detector.

    ``X`` is ``(clips, rows, frames)`` (spectrograms or embeddings) and ``y``
    is ``(clips, frames)`` binary.

    Parameters
    ----------
    conv_channels : tuple of int
        Widths of the 3x3 conv blocks; each block pools the row axis by ``pool``.
    pool : int
    hidden : int
        GRU units per direction.
    log_input : bool
        Apply ``log(1 + x)`` to the input (intended for power spectrograms).
    learning_rate, epochs, batch_size : training settings.
    optimizer : {"sgd", "adam"}
    threshold : float
        Decision threshold used by :meth:`predict`.
    balance_target : float
        Target positive-frame share for :func:`balance_labeled_set`; 0 disables.
    augment : dict, optional
        :class:`AugmentConfig` fields for the balancing copies.
    random_state : int
    """

    def __init__(self, conv_channels=(16, 32, 32), pool=4, hidden=64, log_input=True,
                 learning_rate=0.05, epochs=50, batch_size=8, optimizer="sgd",
                 threshold=DEFAULT_THRESHOLD, balance_target=0.2, augment=None,
                 random_state=0):
        self.conv_channels = conv_channels
        self.pool = pool
        self.hidden = hidden
        self.log_input = log_input
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.threshold = threshold
        self.balance_target = balance_target
        self.augment = augment
        self.random_state = random_state

    def _build(self, n_rows):
        torch.manual_seed(self.random_state)
        self.model_ = DCRNN(n_rows, tuple(self.conv_channels), self.pool, self.hidden)
        self.n_features_in_ = n_rows
        self.classes_ = np.array([0, 1])

    def _prepare(self, X):
        x = torch.as_tensor(np.asarray(X, dtype=np.float32))
        return torch.log1p(x) if self.log_input else x

    def _augment_config(self):
        if self.augment is None:
            return AugmentConfig()
        if isinstance(self.augment, AugmentConfig):
            return self.augment
        return AugmentConfig(**self.augment)

    def loss(self, X, y):
        """Mean per-frame binary cross entropy (inference mode)."""
        check_is_fitted(self, "model_")
        self.model_.eval()
        with torch.no_grad():
            logits = self.model_(self._prepare(X))
            return float(nn.functional.binary_cross_entropy_with_logits(
                logits, torch.as_tensor(np.asarray(y, dtype=np.float32))))

    def fit(self, X, y):
        X = check_clip_stack(X, "X")
        y = check_binary(y, "y")
        if y.shape != (X.shape[0], X.shape[2]):
            raise ValueError(f"labels shape {y.shape} does not match features {X.shape}")
        if y.min() == y.max():
            warnings.warn("training labels contain a single class", RuntimeWarning)
        rng = check_random_state(self.random_state)
        X, y = balance_labeled_set(X, y, self.balance_target, self._augment_config(), rng)
        self._build(X.shape[1])
        params = self.model_.parameters()
        if self.optimizer == "sgd":
            opt = torch.optim.SGD(params, lr=self.learning_rate)
        elif self.optimizer == "adam":
            opt = torch.optim.Adam(params, lr=self.learning_rate)
        else:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        xt, yt = self._prepare(X), torch.as_tensor(y, dtype=torch.float32)
        self.loss_curve_ = []
        self.model_.train()
        for epoch in range(self.epochs):
            order = rng.permutation(len(X))
            total = 0.0
            for start in range(0, len(order), self.batch_size):
                idx = torch.as_tensor(order[start:start + self.batch_size])
                loss = nn.functional.binary_cross_entropy_with_logits(self.model_(xt[idx]), yt[idx])
                if not torch.isfinite(loss):
                    raise FloatingPointError(f"non-finite BCE at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            self.loss_curve_.append(total / len(order))
            logger.debug("epoch %d bce %.5f", epoch, self.loss_curve_[-1])
        self.model_.eval()
        return self

    def predict_proba(self, X, chunk=16):
        """Per-frame event probabilities, shape (clips, frames)."""
        check_is_fitted(self, "model_")
        X = check_clip_stack(X, "X", self.n_features_in_)
        self.model_.eval()
        with torch.no_grad():
            out = [torch.sigmoid(self.model_(self._prepare(X[i:i + chunk]))).numpy()
                   for i in range(0, len(X), chunk)]
        return np.concatenate(out).astype(np.float64)

    def predict(self, X):
        return binarize(self.predict_proba(X), self.threshold)

    def score(self, X, y):
        """Per-frame accuracy."""
        return float(np.mean(self.predict(X) == np.asarray(y)))

    def save(self, path):
        check_is_fitted(self, "model_")
        params = self.get_params()
        params["conv_channels"] = list(params["conv_channels"])
        if isinstance(params["augment"], AugmentConfig):
            params["augment"] = asdict(params["augment"])
        save_checkpoint(path, state_dict_to_arrays(self.model_),
                        {"kind": "classifier", "params": params,
                         "n_features_in": self.n_features_in_})

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        if not meta or meta.get("kind") != "classifier":
            raise ValueError(f"{path} is not a classifier checkpoint")
        params = dict(meta["params"])
        params["conv_channels"] = tuple(params["conv_channels"])
        model = cls(**params)
        model._build(meta["n_features_in"])
        load_arrays_into(model.model_, tensors)
        model.model_.eval()
        return model
