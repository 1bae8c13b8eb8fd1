"""Occupancy binning and entropy-balanced batch sampling.

The bootstrap classifier pseudo-labels each unlabeled accelerometer clip.
The positive-frame count ``m`` of each clip is quantized into one of ``B``
bins by ``n = ceil(m * B / M)``, where ``M`` is the largest count in the
set (``m = 0`` folds into bin 1). Batches pick a bin uniformly at random
and then a clip uniformly within that bin. Sparse clips therefore do not
dominate the batch. Pseudo-labels only serve to choose bins and never
leave this module as frame labels.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigError, check_binary, check_random_state
from .augment import AugmentConfig, spec_augment
from .classifier import binarize
from .dsp import FrameTrack


@dataclass(frozen=True)
class OccupancyRecord:
    clip_id: str
    positive_frame_count: int
    bin: int


@dataclass
class BinningConfig:
    n_bins: int = 10
    batch_size: int = 8
    min_bin_population: int = 8
    on_empty_bin: str = "error"
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.n_bins < 1:
            raise ConfigError("n_bins must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.on_empty_bin not in ("error", "skip"):
            raise ConfigError("on_empty_bin must be 'error' or 'skip'")
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)


@dataclass
class BalancedBatch:
    mic: np.ndarray
    accel: np.ndarray
    clip_index: np.ndarray
    clip_ids: list
    bins: np.ndarray
    augmented: np.ndarray


def count_positives(track):
    """Number of active frames in a binary track."""
    if isinstance(track, FrameTrack):
        if track.kind != "label":
            raise TypeError("count_positives needs a binary label track, got probabilities")
        track = track.values
    try:
        return int(check_binary(track).sum())
    except ValueError as exc:
        raise TypeError(str(exc)) from exc


def assign_bin(m, max_count, n_bins):
    """Bin index in ``[1, n_bins]`` for positive-frame count ``m``.

    Uses exact integer ceiling division ``ceil(m * n_bins / max_count)``.
    """
    m, max_count, n_bins = int(m), int(max_count), int(n_bins)
    if n_bins < 1 or max_count < 1:
        raise ValueError(f"need n_bins >= 1 and max_count >= 1, got {n_bins}, {max_count}")
    if m < 0:
        raise ValueError(f"positive-frame count must be >= 0, got {m}")
    if m > max_count:
        raise ValueError(
            f"positive-frame count {m} exceeds the indexed maximum {max_count}; rebuild the index"
        )
    if m == 0:
        return 1
    return -(-m * n_bins // max_count)


def occupancy_counts(bootstrap, X_accel, threshold=0.6):
    """Positive-frame count per clip from thresholded bootstrap predictions."""
    labels = binarize(bootstrap.predict_proba(X_accel), threshold)
    return labels.sum(axis=1).astype(np.int64)


def build_index(X_accel, clip_ids, bootstrap, threshold=0.6, n_bins=10):
    """Pseudo-label unlabeled accelerometer clips and bin them.

    Returns ``(records, M)``.
    """
    if len(X_accel) == 0:
        raise ValueError("unlabeled set is empty")
    counts = occupancy_counts(bootstrap, X_accel, threshold)
    return index_from_counts(counts, clip_ids, n_bins)


def index_from_counts(counts, clip_ids, n_bins):
    counts = np.asarray(counts, dtype=np.int64)
    max_count = int(counts.max()) if counts.size else 0
    if max_count == 0:
        raise ValueError(
            "the bootstrap model predicts no positive frames in any unlabeled clip; "
            "review the detection threshold or the bootstrap model"
        )
    records = [OccupancyRecord(str(cid), int(m), assign_bin(m, max_count, n_bins))
               for cid, m in zip(clip_ids, counts)]
    return records, max_count


def write_index(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clip_id", "m", "bin"])
        for r in records:
            writer.writerow([r.clip_id, r.positive_frame_count, r.bin])


def read_index(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [OccupancyRecord(row["clip_id"], int(row["m"]), int(row["bin"]))
                for row in csv.DictReader(fh)]


def uniform_batch_indices(n_clips, batch_size, rng):
    """Plain DCCA sampling: clips uniformly with replacement."""
    return rng.integers(0, n_clips, size=batch_size)


class BalancedBinSampler(BaseEstimator):
    """Draws batches that are uniform over occupancy bins.

    Parameters
    ----------
    n_bins : int
        ``B``. With ``n_bins=1`` the draws reduce to uniform clip sampling.
    batch_size : int
    min_bin_population : int
        Bins with fewer clips are topped up with SpecAugment copies of their
        members (cycled) until they reach this size. Copies of the mic and
        accel views are masked independently.
    on_empty_bin : {"error", "skip"}
        What to do when a bin holds no clip at all.
    augment : dict, optional
        :class:`AugmentConfig` fields for the top-up copies.
    random_state : int
        Seeds the augmentation copies (batch draws use the generator passed
        to :meth:`sample_batch`).

    Attributes
    ----------
    records_ : list of OccupancyRecord
    max_count_ : int
    entries_ : ndarray of shape (n_entries, 2)
        ``(clip_index, copy)`` pairs; ``copy = -1`` marks an original clip.
    members_ : list of ndarray
        Entry indices per non-empty bin.
    bin_labels_ : ndarray
        1-based bin number of each element of ``members_``.
    """

    def __init__(self, n_bins=10, batch_size=8, min_bin_population=8,
                 on_empty_bin="error", augment=None, random_state=0):
        self.n_bins = n_bins
        self.batch_size = batch_size
        self.min_bin_population = min_bin_population
        self.on_empty_bin = on_empty_bin
        self.augment = augment
        self.random_state = random_state

    @classmethod
    def from_config(cls, cfg, random_state=0):
        from dataclasses import asdict

        return cls(cfg.n_bins, cfg.batch_size, cfg.min_bin_population, cfg.on_empty_bin,
                   asdict(cfg.augment), random_state)

    def fit(self, positive_counts, clip_ids=None):
        counts = np.asarray(positive_counts, dtype=np.int64)
        if clip_ids is None:
            clip_ids = [str(i) for i in range(len(counts))]
        self.clip_ids_ = list(clip_ids)
        self.records_, self.max_count_ = index_from_counts(counts, self.clip_ids_, self.n_bins)
        bins = np.array([r.bin for r in self.records_])
        entries, members, labels, empty = [], [], [], []
        for b in range(1, self.n_bins + 1):
            clips = np.flatnonzero(bins == b)
            if clips.size == 0:
                empty.append(b)
                continue
            ids = list(range(len(entries), len(entries) + clips.size))
            entries += [(int(c), -1) for c in clips]
            for k in range(max(0, self.min_bin_population - clips.size)):
                ids.append(len(entries))
                entries.append((int(clips[k % clips.size]), k))
            members.append(np.array(ids))
            labels.append(b)
        if empty and self.on_empty_bin == "error":
            raise ConfigError(f"occupancy bins {empty} are empty; nothing to sample or augment")
        self.empty_bins_ = empty
        self.entries_ = np.array(entries, dtype=np.int64).reshape(-1, 2)
        self.members_ = members
        self.bin_labels_ = np.array(labels)
        return self

    def sample_indices(self, rng):
        """Entry indices for one batch, plus the 1-based bin of each draw."""
        check_is_fitted(self, "members_")
        n = len(self.members_)
        if n == 1:
            which = np.zeros(self.batch_size, dtype=np.int64)
        else:
            which = rng.integers(0, n, size=self.batch_size)
        sizes = np.array([m.size for m in self.members_])
        pos = rng.integers(0, sizes[which])
        entries = np.array([self.members_[w][p] for w, p in zip(which, pos)], dtype=np.int64)
        return entries, self.bin_labels_[which]

    def _augment_config(self):
        if self.augment is None:
            return AugmentConfig()
        return self.augment if isinstance(self.augment, AugmentConfig) else AugmentConfig(**self.augment)

    def _materialize(self, X, clip, copy, view):
        if copy < 0:
            return X[clip]
        seed = np.random.SeedSequence([int(self.random_state), clip, copy, view])
        return spec_augment(X[clip], self._augment_config(), np.random.default_rng(seed))

    def sample_batch(self, X_mic, X_accel, rng):
        """Draw one synchronized batch of (mic, accel) spectrograms."""
        entries, bins = self.sample_indices(check_random_state(rng))
        clips, copies = self.entries_[entries, 0], self.entries_[entries, 1]
        mic = np.stack([self._materialize(X_mic, c, k, 0) for c, k in zip(clips, copies)])
        accel = np.stack([self._materialize(X_accel, c, k, 1) for c, k in zip(clips, copies)])
        return BalancedBatch(mic, accel, clips, [self.clip_ids_[c] for c in clips], bins,
                             copies >= 0)
