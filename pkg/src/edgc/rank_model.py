"""Spectral rank/error model for random gradient matrices.

For an m x n matrix with i.i.d. unit-variance entries (m <= n), the eigenvalue
distribution of A A^T approaches the Marchenko-Pastur law on
[a, b] = [(sqrt(n)-sqrt(m))^2, (sqrt(n)+sqrt(m))^2]. Sampling eigenvalues from
its CDF by inverse-transform gives a Monte-Carlo estimate of the expected
best-rank-r Frobenius error g(r; m, n) (the squared error is the expected sum
of the m - r smallest eigenvalues). Inverting g turns an error budget, a
standard-deviation ratio, or an entropy difference into a rank.

Tables are immutable once built and cached per (m, n, trials, seed); real
gradients are correlated, so g acts as a conservative upper bound for them.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

GRID_POINTS = 1024
DEFAULT_TRIALS = 64


@dataclass(frozen=True)
class MpSupport:
    """Support endpoints of the limiting eigenvalue distribution."""

    a: float
    b: float
    m: int
    n: int


def mp_support(m: int, n: int) -> MpSupport:
    """Endpoints a = (sqrt(n)-sqrt(m))^2, b = (sqrt(n)+sqrt(m))^2; needs m <= n."""
    if not 1 <= m <= n:
        raise ValueError(
            f"need 1 <= m <= n, got ({m}, {n}); transpose the matrix before modeling"
        )
    a = (math.sqrt(n) - math.sqrt(m)) ** 2
    b = (math.sqrt(n) + math.sqrt(m)) ** 2
    return MpSupport(a=a, b=b, m=m, n=n)


def mp_cdf(lam, m: int, n: int):
    """CDF of the limiting eigenvalue distribution of A A^T at lam.

    Closed form: [ -2 sqrt(ab) arctan(sqrt(b(lam-a)/(a(b-lam))))
    + (a+b) arcsin(sqrt((lam-a)/(b-a))) + sqrt((lam-a)(b-lam)) ] / (2 pi m).
    Extended with 0 below a and 1 above b; accepts scalars or arrays.
    """
    sup = mp_support(m, n)
    a, b = sup.a, sup.b
    lam_arr = np.asarray(lam, dtype=np.float64)
    scalar = lam_arr.ndim == 0
    lam_arr = np.atleast_1d(lam_arr)
    out = np.empty_like(lam_arr)
    below = lam_arr <= a
    above = lam_arr >= b
    inside = ~(below | above)
    out[below] = 0.0
    out[above] = 1.0
    x = lam_arr[inside]
    if x.size:
        sq = np.sqrt((x - a) * (b - x))
        asin = (a + b) * np.arcsin(np.clip(np.sqrt((x - a) / (b - a)), 0.0, 1.0))
        if a > 0.0:
            atan = -2.0 * math.sqrt(a * b) * np.arctan(np.sqrt(b * (x - a) / (a * (b - x))))
        else:
            # square case: the arctan coefficient vanishes with a
            atan = 0.0
        out[inside] = np.clip((atan + asin + sq) / (2.0 * math.pi * m), 0.0, 1.0)
    return float(out[0]) if scalar else out


def _inverse_cdf_grid(m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    sup = mp_support(m, n)
    lam_grid = np.linspace(sup.a, sup.b, GRID_POINTS)
    p_grid = mp_cdf(lam_grid, m, n)
    return lam_grid, np.asarray(p_grid)


def sample_eigenvalues(m: int, n: int, seed: int = 0) -> np.ndarray:
    """Draw m eigenvalues by inverse-transform over a uniform lambda grid.

    Uniform probabilities are mapped to eigenvalues by linear interpolation
    between bracketing (lambda, p) grid pairs; deterministic under the seed.
    """
    lam_grid, p_grid = _inverse_cdf_grid(m, n)
    p = np.random.default_rng(seed).uniform(size=m)
    return np.interp(p, p_grid, lam_grid)


@dataclass(frozen=True)
class GTable:
    """Monte-Carlo table of expected rank-r compression errors for one shape.

    g_sq[r] estimates E||A - A_r||_F^2 for unit-variance A; g_values holds the
    square roots (Frobenius errors). Immutable and safe to share.
    """

    m: int
    n: int
    trials: int
    rng_seed: int
    g_sq: np.ndarray
    g_values: np.ndarray

    def g(self, r: int) -> float:
        if not 0 <= r <= self.m:
            raise ValueError(f"rank {r} outside [0, {self.m}]")
        return float(self.g_values[r])


def build_g_table(m: int, n: int, trials: int = DEFAULT_TRIALS, seed: int = 0) -> GTable:
    """Average, over trials, the partial sums of sorted sampled eigenvalues."""
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    lam_grid, p_grid = _inverse_cdf_grid(m, n)
    p = np.random.default_rng(seed).uniform(size=(trials, m))
    lam = np.interp(p, p_grid, lam_grid)
    lam.sort(axis=1)
    csum = np.cumsum(lam, axis=1)  # csum[:, k-1] = sum of the k smallest
    g_sq = np.zeros(m + 1)
    g_sq[:m] = csum[:, ::-1].mean(axis=0)  # index r -> smallest m - r
    return GTable(m=m, n=n, trials=trials, rng_seed=seed, g_sq=g_sq, g_values=np.sqrt(g_sq))


_TABLE_CACHE: dict[tuple[int, int, int, int], GTable] = {}
_TABLE_LOCK = threading.Lock()


def g_table(m: int, n: int, trials: int = DEFAULT_TRIALS, seed: int = 0) -> GTable:
    """Cached table lookup; construction is serialized."""
    key = (m, n, trials, seed)
    with _TABLE_LOCK:
        table = _TABLE_CACHE.get(key)
        if table is None:
            table = build_g_table(m, n, trials, seed)
            _TABLE_CACHE[key] = table
    return table


def estimate_g(r: int, m: int, n: int, trials: int = DEFAULT_TRIALS, seed: int = 0) -> float:
    """Expected Frobenius error of the best rank-r approximation (unit variance)."""
    return g_table(m, n, trials, seed).g(r)


def invert_g(target_error: float, table: GTable) -> int:
    """Smallest rank whose modeled error is <= target_error.

    Saturates at 0 (target at or above g(0)) and at m (target 0).
    """
    if target_error < 0.0:
        raise ValueError(f"target error must be non-negative, got {target_error}")
    # g_values is non-increasing, so -g_values is sorted ascending
    idx = int(np.searchsorted(-table.g_values, -target_error, side="left"))
    return min(idx, table.m)


def rank_from_sigma(r0: int, sigma0: float, sigma1: float, table: GTable) -> int:
    """Rank preserving a fixed absolute error when the entry scale changes.

    Under constant error, g(r0) sigma0 = g(r1) sigma1, so
    r1 = g^{-1}((sigma0 / sigma1) g(r0)).
    """
    if sigma0 <= 0.0 or sigma1 <= 0.0:
        raise ValueError(f"standard deviations must be positive, got {sigma0}, {sigma1}")
    return invert_g((sigma0 / sigma1) * table.g(r0), table)


def rank_from_entropy(r0: int, h0: float, h1: float, table: GTable) -> int:
    """Rank preserving a fixed absolute error across an entropy change.

    For Gaussian entries the scale ratio is sigma0/sigma1 = e^{h0 - h1}, so
    r1 = g^{-1}(e^{h0 - h1} g(r0)).
    """
    if not (math.isfinite(h0) and math.isfinite(h1)):
        raise ValueError(f"entropies must be finite, got {h0}, {h1}")
    try:
        ratio = math.exp(h0 - h1)
    except OverflowError:
        ratio = math.inf
    target = ratio * table.g(r0)
    if not math.isfinite(target):
        return 0  # unbounded error budget: any rank qualifies
    return invert_g(target, table)
