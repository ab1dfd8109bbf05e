"""Rank-r gradient compression: warm-started power iteration with error feedback.

One power-iteration round per step against a persistent right basis, with the
left factor re-orthonormalized each step and the approximation residual fed
back into the next gradient. Error feedback is applied per worker, before any
averaging across data-parallel replicas. 1-D tensors (biases, norms) are never
routed through this module; low-rank structure is undefined for vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matrix_core import GradientMatrix, _entries
from .seeds import TAG_BASIS, rng

# Columns whose norm falls below this fraction of the factor's overall scale
# carry only cancellation noise (rank-deficient input leaves them near machine
# epsilon relative); they are zeroed instead of normalized. The relative
# threshold keeps compression exactly scale-equivariant.
_COLUMN_TOL = 1e-12


@dataclass
class LowRankFactors:
    """The (P, Q) pair whose product approximates one gradient matrix."""

    p: np.ndarray  # m x r, orthonormal (or zero) columns
    q: np.ndarray  # n x r
    layer_id: int = 0
    stage_id: int = 0
    iteration: int = 0

    @property
    def rank(self) -> int:
        return self.p.shape[1]

    @property
    def element_count(self) -> int:
        return self.p.size + self.q.size


class CompressorState:
    """Error-feedback residual plus warm-start basis for one gradient matrix.

    Single-owner: one state per (matrix, worker) pair. Distinct states may be
    used from different threads; a single state must not be shared.
    """

    def __init__(self, m: int, n: int, rank: int, rng_seed: int = 0):
        if m < 1 or n < 1:
            raise ValueError(f"matrix dimensions must be positive, got {(m, n)}")
        _check_rank(rank, m, n)
        self.m = m
        self.n = n
        self.rank = rank
        self.rng_seed = rng_seed
        self.residual = np.zeros((m, n))
        self.q_warm = np.column_stack([self._basis_column(j) for j in range(rank)])

    def _basis_column(self, j: int) -> np.ndarray:
        # column j is a fixed function of (rng_seed, j): shrinking then growing
        # the rank restores the exact same fresh columns
        return rng(self.rng_seed, TAG_BASIS, j).standard_normal(self.n)


def _check_rank(r: int, m: int, n: int) -> None:
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank {r} outside [1, {min(m, n)}] for shape {(m, n)}")


def _orthonormalize_columns(a: np.ndarray) -> np.ndarray:
    """In-place modified Gram-Schmidt; noise columns are zeroed, not normalized.

    Returns the mask of zeroed columns.
    """
    tol = _COLUMN_TOL * np.linalg.norm(a)
    dead = np.zeros(a.shape[1], dtype=bool)
    for j in range(a.shape[1]):
        col = a[:, j]
        for i in range(j):
            col -= (a[:, i] @ col) * a[:, i]
        nrm = np.linalg.norm(col)
        if nrm > tol:
            col /= nrm
        else:
            col[:] = 0.0
            dead[j] = True
    return dead


def compress(matrix, state: CompressorState) -> LowRankFactors:
    """One compression step: error feedback, power iteration, residual update.

    Forms work = matrix + residual, runs P = work Q_warm (orthonormalized),
    Q = work^T P, then stores residual = work - P Q^T and Q as the next warm
    start. Basis slots whose projection collapsed (rank-deficient work) are
    re-seeded with their fixed fresh columns so they can pick up directions
    the error feedback accumulates later.
    """
    a = _entries(matrix)
    if a.shape != (state.m, state.n):
        raise ValueError(f"state is bound to shape {(state.m, state.n)}, got {a.shape}")
    work = a + state.residual
    if not np.isfinite(work).all():
        raise ValueError("non-finite entries in gradient or residual")
    p = work @ state.q_warm
    dead = _orthonormalize_columns(p)
    q = work.T @ p
    state.residual = work - p @ q.T
    for j in np.nonzero(dead)[0]:
        q[:, j] = state._basis_column(int(j))
    state.q_warm = q
    meta = matrix if isinstance(matrix, GradientMatrix) else None
    return LowRankFactors(
        p=p,
        q=q,
        layer_id=meta.layer_id if meta else 0,
        stage_id=meta.stage_id if meta else 0,
        iteration=meta.iteration if meta else 0,
    )


def decompress(factors: LowRankFactors) -> GradientMatrix:
    """Reconstruct the approximation P Q^T."""
    return GradientMatrix(
        factors.p @ factors.q.T,
        layer_id=factors.layer_id,
        stage_id=factors.stage_id,
        iteration=factors.iteration,
    )


def set_rank(state: CompressorState, r_new: int) -> None:
    """Resize the warm-start basis; the residual buffer is preserved.

    Shrinking truncates columns; growing appends fresh seeded columns at their
    fixed per-index positions.
    """
    _check_rank(r_new, state.m, state.n)
    r_old = state.rank
    if r_new == r_old:
        return
    if r_new < r_old:
        state.q_warm = state.q_warm[:, :r_new].copy()
    else:
        fresh = np.column_stack([state._basis_column(j) for j in range(r_old, r_new)])
        state.q_warm = np.hstack([state.q_warm, fresh])
    state.rank = r_new


def compressed_element_count(m: int, n: int, r: int) -> int:
    """Elements on the wire for a rank-r factor pair: r * (m + n)."""
    if m < 1 or n < 1:
        raise ValueError(f"matrix dimensions must be positive, got {(m, n)}")
    if r < 0:
        raise ValueError(f"rank must be non-negative, got {r}")
    return r * (m + n)
