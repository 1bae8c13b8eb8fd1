"""Input validation helpers shared by the estimators and functional cores."""

import numbers

import numpy as np


class SingularCovarianceError(np.linalg.LinAlgError):
    """Raised when a covariance estimate is not safely positive definite."""


class ConfigError(ValueError):
    """Raised for invalid configuration values."""


def check_random_state(seed):
    """Turn ``seed`` into a :class:`numpy.random.Generator`.

    Accepts ``None``, an integer, a ``SeedSequence`` or an existing
    ``Generator`` (returned unchanged so callers can thread RNG state).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def check_view(x, name="X", min_samples=2):
    """Validate a (dimension, samples) view matrix; returns a float64 copy."""
    x = np.array(x, dtype=np.float64, copy=True)
    if x.ndim == 1:
        x = x[np.newaxis, :]
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D (dimension, samples), got shape {x.shape}")
    if x.shape[1] < min_samples:
        raise ValueError(
            f"{name} needs at least {min_samples} samples (columns), got {x.shape[1]}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or infinite entries")
    return x


def check_paired_views(x1, x2, min_samples=2):
    x1 = check_view(x1, "h1", min_samples)
    x2 = check_view(x2, "h2", min_samples)
    if x1.shape[1] != x2.shape[1]:
        raise ValueError(
            f"views have different sample counts: {x1.shape[1]} != {x2.shape[1]}"
        )
    return x1, x2


def check_clip_stack(X, name="X", n_rows=None):
    """Validate a stack of feature matrices shaped (clips, rows, frames)."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[np.newaxis]
    if X.ndim != 3:
        raise ValueError(f"{name} must have shape (clips, rows, frames), got {X.shape}")
    if n_rows is not None and X.shape[1] != n_rows:
        raise ValueError(f"{name} has {X.shape[1]} rows per clip, expected {n_rows}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinite entries")
    return X


def check_binary(values, name="track"):
    values = np.asarray(values)
    if not np.all((values == 0) | (values == 1)):
        raise ValueError(f"{name} must be binary (0/1)")
    return values.astype(np.int64)


def check_positive(value, name, strict=True):
    if strict and not value > 0:
        raise ConfigError(f"{name} must be > 0, got {value!r}")
    if not strict and not value >= 0:
        raise ConfigError(f"{name} must be >= 0, got {value!r}")
    return value
