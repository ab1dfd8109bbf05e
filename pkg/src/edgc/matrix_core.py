"""Dense gradient-matrix primitives and exact spectral oracles.

Everything here is pure and reentrant. Entries are held as float64 internally
even when trace files carry float32, so these routines can serve as reference
oracles for the rest of the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError


@dataclass
class GradientMatrix:
    """A 2-D real gradient with layer/stage/iteration identity.

    Invariants checked at construction: two dimensions, both positive, and
    every entry finite.
    """

    data: np.ndarray
    layer_id: int = 0
    stage_id: int = 0
    iteration: int = 0

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"gradient matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"matrix dimensions must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("gradient matrix contains non-finite entries")
        self.data = arr

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]


def _entries(matrix) -> np.ndarray:
    """Accept a GradientMatrix or a raw 2-D array."""
    if isinstance(matrix, GradientMatrix):
        return matrix.data
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def frobenius_norm(matrix) -> float:
    """sqrt of the sum of squared entries; zero only for the zero matrix."""
    return float(np.linalg.norm(_entries(matrix), "fro"))


def singular_values(matrix) -> np.ndarray:
    """Singular values in descending order."""
    return np.linalg.svd(_entries(matrix), compute_uv=False)


def optimal_rank_r_error(matrix, r: int) -> float:
    """Frobenius distance to the best rank-r approximation.

    Equals sqrt(sum of squared singular values beyond index r); the lower
    bound no lossy rank-r compressor can beat.
    """
    a = _entries(matrix)
    k = min(a.shape)
    if not 0 <= r <= k:
        raise ValueError(f"rank {r} outside [0, {k}] for shape {a.shape}")
    s = singular_values(a)
    return float(np.sqrt(np.sum(s[r:] ** 2)))


def pearson_correlation(matrix_a, matrix_b) -> float:
    """Pearson coefficient over flattened entries, in [-1, 1].

    Raises DegenerateInputError when either input has zero variance; a
    correlation against a constant matrix is undefined, not zero.
    """
    x = _entries(matrix_a).ravel()
    y = _entries(matrix_b).ravel()
    if x.size != y.size:
        raise ValueError(f"element counts differ: {x.size} vs {y.size}")
    sx = float(x.std())
    sy = float(y.std())
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInputError("zero-variance input to correlation")
    xc = x - x.mean()
    yc = y - y.mean()
    rho = float(np.dot(xc, yc) / (x.size * sx * sy))
    return min(1.0, max(-1.0, rho))
