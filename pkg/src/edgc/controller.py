"""Rank scheduling: comm-model calibration, rank bounds, adaptive warm-up,
windowed rank adjustment, and stage-aligned rank assignment.

Communication time is modeled as T_com(r) = eta * r, with eta calibrated from
(rank, seconds) measurements. Rank bounds come from requiring that compress +
transfer + decompress never exceeds the uncompressed transfer; warm-up defers
compression until the windowed entropy first implies a rank below r_max (with
a floor fraction of total iterations). Active windows move the rank by the
entropy-implied amount, limited to +-step_limit and clamped to the bounds, and
later pipeline stages receive larger ranks sized to the head-start they gain
by finishing backpropagation earlier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, CompressionInfeasibleError
from .rank_model import GTable, rank_from_entropy

PHASE_WARMUP = "warmup"
PHASE_ACTIVE = "active"


@dataclass
class CommModel:
    """Calibrated linear timing model for one link.

    comm time = eta * r; compress/decompress costs are affine in the rank.
    """

    eta: float
    bandwidth: float = 1.0
    element_size: int = 4
    compress_cost: tuple[float, float] = (0.0, 0.0)
    decompress_cost: tuple[float, float] = (0.0, 0.0)
    mape: float = 0.0

    def __post_init__(self) -> None:
        if self.eta <= 0.0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.bandwidth <= 0.0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.element_size < 1:
            raise ValueError(f"element_size must be positive, got {self.element_size}")

    def comm_time(self, r: float) -> float:
        return self.eta * r

    def compress_time(self, r: float) -> float:
        return self.compress_cost[0] + self.compress_cost[1] * r

    def decompress_time(self, r: float) -> float:
        return self.decompress_cost[0] + self.decompress_cost[1] * r


@dataclass(frozen=True)
class RankBounds:
    r_min: int
    r_max: int

    def __post_init__(self) -> None:
        if not 1 <= self.r_min <= self.r_max:
            raise ValueError(f"need 1 <= r_min <= r_max, got [{self.r_min}, {self.r_max}]")

    def clamp(self, r: int) -> int:
        return max(self.r_min, min(self.r_max, r))


def calibrate_comm_model(
    measurements,
    *,
    bandwidth: float = 1.0,
    element_size: int = 4,
    compress_cost: tuple[float, float] = (0.0, 0.0),
    decompress_cost: tuple[float, float] = (0.0, 0.0),
) -> CommModel:
    """Least-squares fit of T = eta * r through the origin, with its MAPE.

    Needs at least two measurements at two distinct ranks. Points with zero
    measured time are excluded from the MAPE.
    """
    pts = [(int(r), float(t)) for r, t in measurements]
    if len(pts) < 2:
        raise CalibrationError(f"need at least 2 measurements, got {len(pts)}")
    ranks = np.array([p[0] for p in pts], dtype=np.float64)
    times = np.array([p[1] for p in pts], dtype=np.float64)
    if len(set(p[0] for p in pts)) < 2:
        raise CalibrationError("need measurements at two distinct ranks")
    denom = float(np.sum(ranks * ranks))
    if denom == 0.0:
        raise CalibrationError("all measurements at rank 0; slope is undefined")
    eta = float(np.sum(ranks * times) / denom)
    if eta <= 0.0:
        raise CalibrationError(f"fitted eta {eta} is not positive")
    pred = eta * ranks
    pos = times > 0.0
    mape = float(np.mean(np.abs(pred[pos] - times[pos]) / times[pos])) if pos.any() else 0.0
    return CommModel(
        eta=eta,
        bandwidth=bandwidth,
        element_size=element_size,
        compress_cost=compress_cost,
        decompress_cost=decompress_cost,
        mape=mape,
    )


def compute_rank_bounds(
    model: CommModel,
    d_original: float,
    shapes,
    compressible_fraction: float = 1.0,
) -> RankBounds:
    """Largest rank for which compression still wins, and the matching floor.

    r_max is the largest r with compress(r) + bytes(r)/B + decompress(r) <=
    d_original/B, where bytes(r) = element_size * sum_i r (m_i + n_i), clamped
    to the smallest matrix dimension. r_min defaults to round(r_max / 5), the
    midpoint of the recommended [r_max/6, r_max/4] interval. When only a
    fraction of the payload compresses, the remainder is charged raw on both
    sides of the inequality.
    """
    shapes = [(int(m), int(n)) for m, n in shapes]
    if d_original <= 0.0:
        raise ValueError(f"d_original must be positive, got {d_original}")
    if not shapes:
        raise ValueError("need at least one matrix shape")
    if not 0.0 < compressible_fraction <= 1.0:
        raise ValueError(f"compressible_fraction must be in (0, 1], got {compressible_fraction}")
    per_rank = compressible_fraction * sum(m + n for m, n in shapes)
    min_dim = min(min(m, n) for m, n in shapes)
    budget = compressible_fraction * d_original / model.bandwidth

    def total_time(r: int) -> float:
        wire = model.element_size * r * per_rank / model.bandwidth
        return model.compress_time(r) + wire + model.decompress_time(r)

    slope = (
        model.compress_cost[1]
        + model.decompress_cost[1]
        + model.element_size * per_rank / model.bandwidth
    )
    intercept = model.compress_cost[0] + model.decompress_cost[0]
    if slope <= 0.0:
        candidate = min_dim
    else:
        candidate = int(np.floor((budget - intercept) / slope + 1e-12))
        candidate = max(0, min(candidate, min_dim))
    # the closed form can be off by one at float boundaries; settle it exactly
    while candidate > 0 and total_time(candidate) > budget:
        candidate -= 1
    while candidate < min_dim and total_time(candidate + 1) <= budget:
        candidate += 1
    if candidate < 1:
        raise CompressionInfeasibleError(
            "no rank >= 1 beats the uncompressed transfer; disable compression"
        )
    r_max = candidate
    r_min = min(max(1, round(r_max / 5)), r_max)
    return RankBounds(r_min=r_min, r_max=r_max)


@dataclass
class RankControllerState:
    """Mutable controller state for one training run (single owner).

    h_ref holds the first recorded window entropy and anchors the warm-up
    exit test; once active, (r_prev, h_prev) is the window-to-window base
    pair for rank updates and eps_ini records the error level fixed at exit.
    """

    bounds: RankBounds
    window: int = 1000
    step_limit: int = 8
    warmup_floor: float = 0.10
    total_iterations: int = 0
    phase: str = PHASE_WARMUP
    eps_ini: float | None = None
    h_ref: float | None = None
    h_prev: float | None = None
    r_prev: int | None = None

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError(f"window must be positive, got {self.window}")
        if self.step_limit < 1:
            raise ValueError(f"step_limit must be positive, got {self.step_limit}")
        if not 0.0 <= self.warmup_floor <= 1.0:
            raise ValueError(f"warmup_floor must be in [0, 1], got {self.warmup_floor}")


def _check_table_covers(table: GTable, bounds: RankBounds) -> None:
    # at r = table.m the modeled error is exactly zero and the multiplicative
    # rank law cannot move; the table must extend strictly beyond r_max
    if table.m <= bounds.r_max:
        raise ValueError(
            f"rank table for ({table.m}, {table.n}) covers ranks only up to "
            f"{table.m}; bounds r_max {bounds.r_max} needs a larger table shape"
        )


def warmup_step(
    ctl: RankControllerState,
    h_window: float,
    iteration: int,
    table: GTable,
    current_error: float | None = None,
) -> str:
    """One warm-up decision at a window close; returns the phase afterwards.

    The entropy-implied rank is computed against the first recorded window
    entropy; the phase flips to active only when it falls below r_max and the
    iteration floor has passed. On exit, r_prev starts at r_max and eps_ini
    records the measured compression error at r_max (falling back to the
    unit-variance model value when no measurement is supplied).
    """
    if ctl.phase != PHASE_WARMUP:
        raise ValueError(f"warmup_step called in phase {ctl.phase!r}")
    _check_table_covers(table, ctl.bounds)
    if ctl.h_ref is None:
        ctl.h_ref = float(h_window)
    r_max = ctl.bounds.r_max
    r_new = rank_from_entropy(r_max, ctl.h_ref, float(h_window), table)
    if r_new < r_max and iteration >= ctl.warmup_floor * ctl.total_iterations:
        ctl.phase = PHASE_ACTIVE
        ctl.r_prev = r_max
        ctl.h_prev = float(h_window)
        ctl.eps_ini = float(current_error) if current_error is not None else table.g(r_max)
    return ctl.phase


def clamp_rank_step(r_raw: int, r_prev: int, step_limit: int, bounds: RankBounds) -> int:
    """Limit a rank move to +-step_limit around r_prev, then clamp to bounds."""
    if abs(r_raw - r_prev) > step_limit:
        r_new = r_prev + step_limit if r_raw > r_prev else r_prev - step_limit
    else:
        r_new = r_raw
    return bounds.clamp(r_new)


def adjust_rank_window(
    ctl: RankControllerState,
    h_curr: float,
    table: GTable,
    model: CommModel,
) -> tuple[int, float]:
    """Window-close rank update for stage 1: entropy step, clamp, predict time.

    Returns (new rank, predicted comm seconds) and advances (r_prev, h_prev).
    """
    if ctl.phase != PHASE_ACTIVE:
        raise ValueError(f"adjust_rank_window called in phase {ctl.phase!r}")
    _check_table_covers(table, ctl.bounds)
    r_raw = rank_from_entropy(ctl.r_prev, ctl.h_prev, float(h_curr), table)
    r_new = clamp_rank_step(r_raw, ctl.r_prev, ctl.step_limit, ctl.bounds)
    t_pred = model.comm_time(r_new)
    ctl.h_prev = float(h_curr)
    ctl.r_prev = r_new
    return r_new, t_pred


def align_stage_ranks(
    r_s1: int,
    model: CommModel,
    t_micro_back: float,
    num_stages: int,
    bounds: RankBounds,
) -> list[int]:
    """Per-stage ranks equalizing communication completion times.

    Stage i starts communicating (i-1) * t_micro_back earlier than stage 1, so
    it can spend that much longer on the wire: r_i = round((eta * r_s1 +
    (i-1) * t_micro_back) / eta), clamped to bounds. Stage 1 keeps r_s1.
    """
    if num_stages < 1:
        raise ValueError(f"num_stages must be positive, got {num_stages}")
    if t_micro_back < 0.0:
        raise ValueError(f"t_micro_back must be non-negative, got {t_micro_back}")
    base = model.comm_time(r_s1)
    ranks = [
        bounds.clamp(int(round((base + i * t_micro_back) / model.eta)))
        for i in range(num_stages)
    ]
    ranks[0] = int(r_s1)
    return ranks


@dataclass
class RankDecision:
    """One controller decision record, loggable as CSV."""

    window_index: int
    mean_entropy: float
    ranks: list[int] | None
    t_pred: float | None


def write_decision_csv(path, decisions, num_stages: int) -> None:
    """Decision log: window_index, mean_entropy, r_stage_1..S, t_pred."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["window_index", "mean_entropy"]
            + [f"r_stage_{i + 1}" for i in range(num_stages)]
            + ["t_pred"]
        )
        for d in decisions:
            ranks = d.ranks if d.ranks is not None else [""] * num_stages
            t_pred = repr(float(d.t_pred)) if d.t_pred is not None else ""
            writer.writerow([d.window_index, repr(float(d.mean_entropy)), *ranks, t_pred])
