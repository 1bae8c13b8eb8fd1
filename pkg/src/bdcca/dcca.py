"""Deep CCA: two 1-D convolutional encoders trained on the trace-norm objective.

The loss is the negated sum of singular values of the whitened
cross-covariance of the two embeddings. Every frame of every clip in a
batch counts as one sample, except frames within the encoders' receptive
field of a clip edge. Zero padding makes those frames carry a position
signal shared by both views, which the objective would otherwise latch
onto. The gradient is analytic (the DCCA
derivation) and is wrapped as a custom autograd function, so the encoders
train with ordinary torch optimizers.
"""

import csv
import logging

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn

from ._validation import SingularCovarianceError, check_clip_stack, check_paired_views, check_random_state
from .cca import EIGEN_FLOOR
from .checkpoint import load_arrays_into, load_checkpoint, save_checkpoint, state_dict_to_arrays

logger = logging.getLogger(__name__)


def _inv_sqrt(c):
    eigvals, eigvecs = torch.linalg.eigh((c + c.T) / 2.0)
    if eigvals[0] <= EIGEN_FLOOR:
        raise SingularCovarianceError(
            f"embedding covariance is near-singular (min eigenvalue {eigvals[0].item():.3e}); "
            "use a regularizer r1 > 0"
        )
    return (eigvecs / eigvals.sqrt()) @ eigvecs.T


class TraceNormLoss(torch.autograd.Function):
    """``-||T||_tr`` for embeddings shaped (o, samples), with the analytic gradient."""

    @staticmethod
    def forward(ctx, h1, h2, r1):
        m = h1.shape[1]
        h1c = h1 - h1.mean(dim=1, keepdim=True)
        h2c = h2 - h2.mean(dim=1, keepdim=True)
        scale = 1.0 / (m - 1)
        c11 = scale * h1c @ h1c.T + r1 * torch.eye(h1.shape[0], dtype=h1.dtype)
        c22 = scale * h2c @ h2c.T + r1 * torch.eye(h2.shape[0], dtype=h2.dtype)
        c12 = scale * h1c @ h2c.T
        w1, w2 = _inv_sqrt(c11), _inv_sqrt(c22)
        u, s, vh = torch.linalg.svd(w1 @ c12 @ w2, full_matrices=False)
        ctx.save_for_backward(h1c, h2c, w1, w2, u, s, vh)
        ctx.scale = scale
        return -s.sum()

    @staticmethod
    def backward(ctx, grad_output):
        h1c, h2c, w1, w2, u, s, vh = ctx.saved_tensors
        v = vh.T
        d12 = w1 @ u @ vh @ w2
        d11 = -0.5 * w1 @ (u * s) @ u.T @ w1
        d22 = -0.5 * w2 @ (v * s) @ vh @ w2
        g1 = ctx.scale * (2.0 * d11 @ h1c + d12 @ h2c)
        g2 = ctx.scale * (2.0 * d22 @ h2c + d12.T @ h1c)
        return -grad_output * g1, -grad_output * g2, None


def trace_norm_loss(h1, h2, r1=1e-4):
    """Differentiable negated total correlation of two (o, samples) tensors."""
    return TraceNormLoss.apply(h1, h2, r1)


def dcca_loss(h1, h2, r1=1e-4):
    """Loss value and analytic gradients for (o, samples) numpy views.

    Returns ``(value, grad_h1, grad_h2)`` where ``value = -||T||_tr``.
    """
    h1, h2 = check_paired_views(h1, h2)
    t1 = torch.tensor(h1, dtype=torch.float64, requires_grad=True)
    t2 = torch.tensor(h2, dtype=torch.float64, requires_grad=True)
    value = trace_norm_loss(t1, t2, r1)
    value.backward()
    return value.item(), t1.grad.numpy(), t2.grad.numpy()


def flatten_frames(h):
    """(clips, o, t) -> (o, clips * t): every frame becomes one sample."""
    return h.permute(1, 0, 2).reshape(h.shape[1], -1)


class Encoder(nn.Module):
    """Time-preserving 1-D conv stack over the frequency-as-channels input.

    Hidden layers are conv -> batch norm -> ReLU. The output layer is a
    plain linear convolution, so embeddings are unbounded.
    """

    def __init__(self, in_channels, channels=(128, 128, 64), out_channels=50,
                 kernel_size=5, bn_momentum=0.1):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd to preserve the time axis")
        layers, width = [], in_channels
        for c in channels:
            layers += [nn.Conv1d(width, c, kernel_size, padding=kernel_size // 2),
                       nn.BatchNorm1d(c, momentum=bn_momentum), nn.ReLU()]
            width = c
        layers.append(nn.Conv1d(width, out_channels, kernel_size, padding=kernel_size // 2))
        self.net = nn.Sequential(*layers)

    @property
    def output_layer(self):
        return self.net[-1]

    def forward(self, x):
        return self.net(x)


def _bn_buffers(module):
    return {k: v.clone() for k, v in module.named_buffers()}


class DCCA(TransformerMixin, BaseEstimator):
    """Paired deep encoders maximizing canonical correlation between two views.

    View 1 is the microphone spectrogram stack and view 2 the accelerometer
    stack, both shaped ``(clips, freq_bins, frames)``. ``fit`` draws batches
    either uniformly over clips or from a fitted
    :class:`~bdcca.sampler.BalancedBinSampler` passed as ``sampler``.

    Parameters
    ----------
    n_components : int
        Embedding width ``o`` per frame.
    channels : tuple of int
        Hidden conv widths; together with the output layer this gives
        ``len(channels) + 1`` conv layers.
    kernel_size : int
    reg : float
        Covariance ridge ``r1``.
    learning_rate : float
    n_steps : int
    batch_size : int
        Clips per step; the covariance sees ``batch_size * frames`` samples.
    optimizer : {"sgd", "adam"}
    momentum : float
        SGD momentum (0 gives the plain update).
    input_transform : {"none", "log1p"}
        Element-wise compression applied to the spectrogram before encoding.
    bn_momentum : float
        Torch-convention running-statistics update rate (0.1 keeps 0.9 of
        the previous average).
    edge_frames : int or None
        Frames dropped at each clip edge before pooling samples for the
        loss. ``None`` uses the receptive-field radius plus one.
    random_state : int
    """

    def __init__(self, n_components=50, channels=(128, 128, 64), kernel_size=5,
                 reg=1e-4, learning_rate=1e-3, n_steps=500, batch_size=8,
                 optimizer="sgd", momentum=0.0, input_transform="none",
                 bn_momentum=0.1, edge_frames=None, random_state=0):
        self.n_components = n_components
        self.channels = channels
        self.kernel_size = kernel_size
        self.reg = reg
        self.learning_rate = learning_rate
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.momentum = momentum
        self.input_transform = input_transform
        self.bn_momentum = bn_momentum
        self.edge_frames = edge_frames
        self.random_state = random_state

    def _build(self, n_features):
        torch.manual_seed(self.random_state)
        make = lambda: Encoder(n_features, tuple(self.channels), self.n_components,
                               self.kernel_size, self.bn_momentum)
        self.encoder_mic_ = make()
        self.encoder_accel_ = make()
        self.n_features_in_ = n_features

    def _prepare(self, X):
        x = torch.as_tensor(np.asarray(X, dtype=np.float32))
        if self.input_transform == "log1p":
            x = torch.log1p(x)
        elif self.input_transform != "none":
            raise ValueError(f"unknown input_transform {self.input_transform!r}")
        return x

    def _make_optimizer(self):
        params = list(self.encoder_mic_.parameters()) + list(self.encoder_accel_.parameters())
        if self.optimizer == "sgd":
            return torch.optim.SGD(params, lr=self.learning_rate, momentum=self.momentum)
        if self.optimizer == "adam":
            return torch.optim.Adam(params, lr=self.learning_rate)
        raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def trim_(self):
        if self.edge_frames is not None:
            return self.edge_frames
        return (len(self.channels) + 1) * (self.kernel_size // 2) + 1

    def _trimmed(self, h):
        e = self.trim_
        return h[:, :, e:h.shape[2] - e] if e else h

    def _pair_loss(self, x_mic, x_accel):
        h1 = flatten_frames(self._trimmed(self.encoder_mic_(x_mic))).double()
        h2 = flatten_frames(self._trimmed(self.encoder_accel_(x_accel))).double()
        return trace_norm_loss(h1, h2, self.reg)

    def probe_loss(self, X_mic, X_accel):
        """Loss on a fixed batch using batch statistics, leaving running stats untouched."""
        check_is_fitted(self, "encoder_mic_")
        saved = [_bn_buffers(e) for e in (self.encoder_mic_, self.encoder_accel_)]
        modes = [e.training for e in (self.encoder_mic_, self.encoder_accel_)]
        try:
            self.encoder_mic_.train()
            self.encoder_accel_.train()
            with torch.no_grad():
                return float(self._pair_loss(self._prepare(X_mic), self._prepare(X_accel)))
        finally:
            for enc, buffers, mode in zip((self.encoder_mic_, self.encoder_accel_), saved, modes):
                for name, buf in enc.named_buffers():
                    buf.copy_(buffers[name])
                enc.train(mode)

    def fit(self, X_mic, X_accel, sampler=None, probe=None):
        """Train both encoders.

        Parameters
        ----------
        X_mic, X_accel : array of shape (clips, freq_bins, frames)
        sampler : fitted BalancedBinSampler, optional
            Source of balanced batches. Without it, clips are drawn
            uniformly with replacement.
        probe : array of clip indices, optional
            Frozen batch whose loss is logged before and after training.
        """
        from .sampler import uniform_batch_indices

        X_mic = check_clip_stack(X_mic, "X_mic")
        X_accel = check_clip_stack(X_accel, "X_accel")
        if X_mic.shape[0] != X_accel.shape[0] or X_mic.shape[2] != X_accel.shape[2]:
            raise ValueError("views must be synchronized: same clip count and frame count")
        if X_mic.shape[2] <= 2 * self.trim_:
            raise ValueError(f"clips of {X_mic.shape[2]} frames are too short for edge trim {self.trim_}")
        if self.batch_size * (X_mic.shape[2] - 2 * self.trim_) <= self.n_components:
            logger.warning("batch has fewer frame samples than embedding dimensions; "
                           "covariances will be rank deficient")
        self._build(X_mic.shape[1])
        opt = self._make_optimizer()
        rng = check_random_state(self.random_state)
        if probe is None:
            probe = np.arange(min(self.batch_size, X_mic.shape[0]))
        probe = np.asarray(probe)
        self.probe_loss_initial_ = self.probe_loss(X_mic[probe], X_accel[probe])
        self.loss_curve_ = []
        self.encoder_mic_.train()
        self.encoder_accel_.train()
        for step in range(self.n_steps):
            if sampler is None:
                idx = uniform_batch_indices(X_mic.shape[0], self.batch_size, rng)
                x_mic, x_accel, ids = X_mic[idx], X_accel[idx], idx
            else:
                batch = sampler.sample_batch(X_mic, X_accel, rng)
                x_mic, x_accel, ids = batch.mic, batch.accel, batch.clip_index
            loss = self._pair_loss(self._prepare(x_mic), self._prepare(x_accel))
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite DCCA loss at step {step} on clips {list(np.asarray(ids))}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.loss_curve_.append(loss.item())
        self.probe_loss_final_ = self.probe_loss(X_mic[probe], X_accel[probe])
        self.encoder_mic_.eval()
        self.encoder_accel_.eval()
        return self

    def _encode(self, encoder, X, chunk=16):
        check_is_fitted(self, "encoder_mic_")
        X = check_clip_stack(X, "X", self.n_features_in_)
        encoder.eval()
        with torch.no_grad():
            out = [encoder(self._prepare(X[i:i + chunk])).numpy() for i in range(0, len(X), chunk)]
        return np.concatenate(out)

    def transform(self, X, view="mic"):
        """Embed a stack of spectrograms; returns (clips, n_components, frames)."""
        if view == "mic":
            return self._encode(self.encoder_mic_, X)
        if view == "accel":
            return self._encode(self.encoder_accel_, X)
        raise ValueError(f"view must be 'mic' or 'accel', got {view!r}")

    def score(self, X_mic, X_accel):
        """Total correlation of the inference-mode embeddings (edge frames excluded)."""
        e = self.trim_
        h1 = self.transform(X_mic, "mic")
        h2 = self.transform(X_accel, "accel")
        h1 = np.concatenate(list(h1[:, :, e:h1.shape[2] - e]), axis=1)
        h2 = np.concatenate(list(h2[:, :, e:h2.shape[2] - e]), axis=1)
        from .cca import total_correlation

        return total_correlation(h1, h2, self.reg)

    def save(self, path):
        check_is_fitted(self, "encoder_mic_")
        tensors = {f"mic.{k}": v for k, v in state_dict_to_arrays(self.encoder_mic_).items()}
        tensors.update({f"accel.{k}": v for k, v in state_dict_to_arrays(self.encoder_accel_).items()})
        params = self.get_params()
        params["channels"] = list(params["channels"])
        save_checkpoint(path, tensors, {"kind": "dcca", "params": params,
                                        "n_features_in": self.n_features_in_})

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        if not meta or meta.get("kind") != "dcca":
            raise ValueError(f"{path} is not a DCCA checkpoint")
        params = dict(meta["params"])
        params["channels"] = tuple(params["channels"])
        model = cls(**params)
        model._build(meta["n_features_in"])
        load_arrays_into(model.encoder_mic_, tensors, "mic.")
        load_arrays_into(model.encoder_accel_, tensors, "accel.")
        model.encoder_mic_.eval()
        model.encoder_accel_.eval()
        return model


def write_loss_log(path, losses):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss"])
        for step, loss in enumerate(losses):
            writer.writerow([step, repr(float(loss))])
