"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import DimensionError, DomainError


def check_matrix(M, name="matrix", shape=None, square=False, dtype=float):
    """Return ``M`` as a finite 2-d float array, validating its shape.

    ``shape`` may contain ``None`` entries for unconstrained axes.
    """
    arr = np.asarray(M, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got ndim={arr.ndim}")
    if square and arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    if shape is not None:
        for axis, (got, want) in enumerate(zip(arr.shape, shape)):
            if want is not None and got != want:
                raise DimensionError(
                    f"{name} has shape {arr.shape}, expected {tuple(shape)} "
                    f"(mismatch on axis {axis})"
                )
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def check_vector(v, name="vector", size=None):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if size is not None and arr.size != size:
        raise DimensionError(f"{name} has length {arr.size}, expected {size}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def check_probability(delta, name="delta"):
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise DomainError(f"{name} must lie in (0, 1), got {delta}")
    return delta


def check_positive_int(n, name="n", minimum=1):
    if isinstance(n, bool) or int(n) != n:
        raise DomainError(f"{name} must be an integer, got {n!r}")
    n = int(n)
    if n < minimum:
        raise DomainError(f"{name} must be >= {minimum}, got {n}")
    return n


def symmetrize(M):
    return 0.5 * (M + M.T)
