"""Small argument-checking helpers shared across modules."""

import numbers

import numpy as np

from .errors import ConfigError, ContractError


def check_int(value, name, minimum=None, error=ConfigError):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise error(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise error(f"{name} must be >= {minimum}, got {value}")
    return value


def check_real(value, name, minimum=None, strict=False, error=ConfigError):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise error(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise error(f"{name} must be finite, got {value}")
    if minimum is not None:
        if strict and value <= minimum:
            raise error(f"{name} must be > {minimum}, got {value}")
        if not strict and value < minimum:
            raise error(f"{name} must be >= {minimum}, got {value}")
    return value


def check_ratio(r, name="ratio", error=ConfigError):
    r = check_real(r, name, error=error)
    if not 0.0 < r <= 1.0:
        raise error(f"{name} must lie in (0, 1], got {r}")
    return r


def check_matrix(a, name, shape=None, dtype=np.float64):
    """Return ``a`` as a finite 2-D array, optionally of a fixed shape."""
    a = np.asarray(a, dtype=dtype)
    if a.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {a.shape}")
    if shape is not None:
        for axis, (got, want) in enumerate(zip(a.shape, shape)):
            if want is not None and got != want:
                raise ContractError(
                    f"{name} has shape {a.shape}, expected {shape} (axis {axis})"
                )
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} contains non-finite values")
    return a


def check_vector(v, name, length=None, dtype=np.float64):
    v = np.asarray(v, dtype=dtype)
    if v.ndim != 1:
        raise ContractError(f"{name} must be 1-D, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise ContractError(f"{name} has length {v.shape[0]}, expected {length}")
    return v


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_videos(X, feature_dim=None):
    """Validate a collection of per-video frame matrices.

    Accepts a 3-D array ``(n_videos, T, D)`` or a sequence of 2-D ``(T_i, D)``
    arrays with varying ``T_i``. Returns a list of float arrays.
    """
    if isinstance(X, np.ndarray) and X.ndim == 3:
        videos = list(X)
    else:
        videos = [np.asarray(v) for v in X]
    if not videos:
        raise ContractError("at least one video is required")
    out = []
    for i, v in enumerate(videos):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 2:
            raise ContractError(f"video {i} must be a (T, D) matrix, got shape {v.shape}")
        if feature_dim is None:
            feature_dim = v.shape[1]
        if v.shape[1] != feature_dim:
            raise ContractError(
                f"video {i} has feature dimension {v.shape[1]}, expected {feature_dim}"
            )
        if not np.all(np.isfinite(v)):
            raise ContractError(f"video {i} contains non-finite values")
        out.append(v)
    return out
