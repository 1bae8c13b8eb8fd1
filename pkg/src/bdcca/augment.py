"""SpecAugment-style frequency and time masking (no time warping)."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import ConfigError, check_random_state


@dataclass
class AugmentConfig:
    num_freq_masks: int = 2
    max_freq_width: int = 24
    num_time_masks: int = 2
    max_time_width: int = 30
    fill: str = "zero"  # or "mean"
    seed: int = 0

    def __post_init__(self):
        for name in ("num_freq_masks", "max_freq_width", "num_time_masks", "max_time_width"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.fill not in ("zero", "mean"):
            raise ConfigError(f"fill must be 'zero' or 'mean', got {self.fill!r}")

    def check_shape(self, shape):
        rows, cols = shape[-2:]
        if self.num_freq_masks and self.max_freq_width >= rows:
            raise ConfigError(
                f"max_freq_width={self.max_freq_width} must be < {rows} frequency rows"
            )
        if self.num_time_masks and self.max_time_width >= cols:
            raise ConfigError(
                f"max_time_width={self.max_time_width} must be < {cols} frames"
            )


def spec_augment(x, cfg=None, rng=None):
    """Return a masked copy of the (rows, frames) matrix ``x``.

    Each mask width is uniform on ``[0, max_width]`` and its start uniform
    over the valid positions. Entries outside the masks are left untouched.
    ``rng`` defaults to a generator seeded with ``cfg.seed``.
    """
    cfg = cfg or AugmentConfig()
    x = np.asarray(x)
    cfg.check_shape(x.shape)
    rng = check_random_state(cfg.seed if rng is None else rng)
    out = x.copy()
    fill = x.mean() if cfg.fill == "mean" else 0.0
    rows, cols = x.shape
    for _ in range(cfg.num_freq_masks):
        width = int(rng.integers(0, cfg.max_freq_width + 1))
        start = int(rng.integers(0, rows - width + 1))
        out[start:start + width, :] = fill
    for _ in range(cfg.num_time_masks):
        width = int(rng.integers(0, cfg.max_time_width + 1))
        start = int(rng.integers(0, cols - width + 1))
        out[:, start:start + width] = fill
    return out


class SpecAugment(TransformerMixin, BaseEstimator):
    """Applies :func:`spec_augment` independently to every clip in a stack."""

    def __init__(self, num_freq_masks=2, max_freq_width=24, num_time_masks=2,
                 max_time_width=30, fill="zero", random_state=0):
        self.num_freq_masks = num_freq_masks
        self.max_freq_width = max_freq_width
        self.num_time_masks = num_time_masks
        self.max_time_width = max_time_width
        self.fill = fill
        self.random_state = random_state

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        cfg = AugmentConfig(self.num_freq_masks, self.max_freq_width,
                            self.num_time_masks, self.max_time_width, self.fill)
        rng = check_random_state(self.random_state)
        return np.stack([spec_augment(x, cfg, rng) for x in np.asarray(X)])
