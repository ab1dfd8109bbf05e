"""Gradient down-sampling and differential-entropy estimation.

Two-level sampling keeps entropy tracking cheap: an iteration-level rate
(alpha) decides which iterations are inspected at all, and an element-level
rate (beta) decides how many entries of each inspected matrix are used.
Entropy is reported in nats. The Gaussian plug-in estimator is the default
(the rank-update law consumes entropy differences under a normality
assumption); the histogram estimator is kept for distribution-shape analysis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError
from .matrix_core import _entries
from .seeds import TAG_SUBSAMPLE, rng

#: differential entropy of a standard normal, 0.5 * ln(2*pi*e)
GAUSSIAN_ENTROPY_CONST = 0.5 * math.log(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class SamplerConfig:
    """Down-sampling rates: both in (0, 1]."""

    alpha: float = 0.1
    beta: float = 0.25
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")


@dataclass
class EntropyWindow:
    """Aggregated entropy for one window of iterations."""

    window_index: int
    window_size: int
    mean_entropy: float
    samples_used: int
    per_iteration_entropies: list[float] = field(default_factory=list)


def should_sample_iteration(iteration: int, alpha: float) -> bool:
    """Deterministic iteration gate: true once every round(1/alpha) iterations."""
    if iteration < 0:
        raise ValueError(f"iteration must be non-negative, got {iteration}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    period = max(1, round(1.0 / alpha))
    return iteration % period == 0


def sampling_period(alpha: float) -> int:
    return max(1, round(1.0 / alpha))


def subsample_entries(matrix, beta: float, seed: int) -> np.ndarray:
    """ceil(beta * m * n) entries drawn uniformly without replacement.

    Reproducible under the seed; beta = 1 returns every entry.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    flat = _entries(matrix).ravel()
    count = min(flat.size, math.ceil(beta * flat.size))
    if count == flat.size:
        return flat.copy()
    idx = np.random.default_rng(seed).choice(flat.size, size=count, replace=False, shuffle=False)
    return flat[idx]


def entropy_gaussian_plugin(samples) -> float:
    """ln(sigma_hat) + 0.5 ln(2 pi e), with the unbiased (n-1) deviation estimate."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError(f"need at least 2 samples, got {x.size}")
    sigma = float(x.std(ddof=1))
    if sigma == 0.0:
        raise DegenerateInputError("zero-variance sample has no differential entropy")
    return math.log(sigma) + GAUSSIAN_ENTROPY_CONST


def entropy_histogram(samples, bins="fd") -> float:
    """Histogram density estimate of differential entropy, -sum p ln(p / width).

    Default binning is Freedman-Diaconis; any rule accepted by numpy works.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError(f"need at least 2 samples, got {x.size}")
    if float(x.max()) == float(x.min()):
        raise DegenerateInputError("zero-range sample has no histogram entropy")
    counts, edges = np.histogram(x, bins=bins)
    widths = np.diff(edges)
    p = counts / counts.sum()
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz] / widths[nz])).sum())


def close_window(records, window_index: int = 0, window_size: int | None = None) -> EntropyWindow:
    """Fold per-iteration entropies into one window record (arithmetic mean)."""
    values = [float(v) for v in records]
    if not values:
        raise DegenerateInputError("cannot close a window with no sampled iterations")
    return EntropyWindow(
        window_index=window_index,
        window_size=window_size if window_size is not None else len(values),
        mean_entropy=float(np.mean(values)),
        samples_used=len(values),
        per_iteration_entropies=values,
    )


def relative_change_rate(series_sampled, series_full) -> np.ndarray:
    """Per-window |H_sampled - H_full| / |H_full| between two window series."""
    a = np.asarray(series_sampled, dtype=np.float64)
    b = np.asarray(series_full, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"window series lengths differ: {a.shape} vs {b.shape}")
    if np.any(b == 0.0):
        raise DegenerateInputError("zero baseline entropy in relative change rate")
    return np.abs(a - b) / np.abs(b)


class EntropyTracker:
    """Streams per-iteration layer matrices into fixed-size entropy windows.

    Per-iteration entropy is the mean over that iteration's sampled layer
    matrices; a window aggregates the per-iteration values of ``window``
    consecutive iterations. Single-owner per stage.
    """

    def __init__(self, config: SamplerConfig, window: int, estimator=entropy_gaussian_plugin):
        if window < 1:
            raise ValueError(f"window must be positive, got {window}")
        if window < sampling_period(config.alpha):
            raise ValueError(
                f"window {window} shorter than the sampling period "
                f"{sampling_period(config.alpha)}: windows could close empty"
            )
        self.config = config
        self.window = window
        self.estimator = estimator
        self.windows: list[EntropyWindow] = []
        self._pending: list[float] = []
        self._current = 0

    def observe(self, iteration: int, matrices) -> EntropyWindow | None:
        """Feed one iteration's 2-D gradients; returns a window when one closes."""
        closed = None
        win = iteration // self.window
        if win < self._current:
            raise ValueError(f"iteration {iteration} precedes window {self._current}")
        if win > self._current:
            closed = self._close()
            self._current = win
        if should_sample_iteration(iteration, self.config.alpha):
            per_layer = []
            for k, mat in enumerate(matrices):
                sub = subsample_entries(
                    mat,
                    self.config.beta,
                    rng(self.config.rng_seed, TAG_SUBSAMPLE, iteration, k).integers(2**31),
                )
                per_layer.append(self.estimator(sub))
            if per_layer:
                self._pending.append(float(np.mean(per_layer)))
        return closed

    def flush(self) -> EntropyWindow | None:
        """Close the trailing partial window, if it sampled anything."""
        if not self._pending:
            return None
        out = self._close()
        self._current += 1
        return out

    def _close(self) -> EntropyWindow:
        win = close_window(self._pending, window_index=self._current, window_size=self.window)
        self.windows.append(win)
        self._pending = []
        return win


def write_window_csv(path, windows) -> None:
    """Per-window records as CSV: window_index, mean_entropy, samples_used."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["window_index", "mean_entropy", "samples_used"])
        for w in windows:
            writer.writerow([w.window_index, repr(w.mean_entropy), w.samples_used])
