"""Deterministic timeline simulation of data-parallel gradient traffic under a
one-forward-one-backward pipeline schedule.

Stage 1 holds the first layers, so the final backward of an iteration reaches
it last: with uniform per-micro-batch backward time, stage i finishes
backpropagation (i - 1) backward-times earlier than stage 1 and starts its
data-parallel communication at that point. This head-start is exactly the
offset the stage-alignment rule spends on larger ranks. Tensor parallelism is
intra-node and not modeled; the allreduce algorithm factor is folded into the
calibrated per-rank time and bandwidth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controller import (
    PHASE_ACTIVE,
    PHASE_WARMUP,
    CommModel,
    RankControllerState,
    RankDecision,
    adjust_rank_window,
    align_stage_ranks,
    warmup_step,
)
from .rank_model import GTable


@dataclass
class PipelineConfig:
    """Static description of one pipeline-parallel iteration.

    stage_shapes lists, per stage, the 2-D parameter matrices whose gradients
    are communicated; compressible_fraction scales how much of each stage's
    payload is subject to compression (1.0 = everything).
    """

    num_stages: int
    micro_batches: int
    t_forward_micro: list[float]
    t_backward_micro: list[float]
    stage_shapes: list[list[tuple[int, int]]]
    comm_model: CommModel
    dp_degree: int = 2
    compressible_fraction: float = 1.0

    def __post_init__(self) -> None:
        s = self.num_stages
        if s < 1:
            raise ValueError(f"num_stages must be positive, got {s}")
        if self.micro_batches < 1:
            raise ValueError(f"micro_batches must be positive, got {self.micro_batches}")
        if self.dp_degree < 1:
            raise ValueError(f"dp_degree must be positive, got {self.dp_degree}")
        if not 0.0 <= self.compressible_fraction <= 1.0:
            raise ValueError(
                f"compressible_fraction must be in [0, 1], got {self.compressible_fraction}"
            )
        self.t_forward_micro = _per_stage(self.t_forward_micro, s, "t_forward_micro")
        self.t_backward_micro = _per_stage(self.t_backward_micro, s, "t_backward_micro")
        if len(self.stage_shapes) != s:
            raise ValueError(f"stage_shapes must list {s} stages, got {len(self.stage_shapes)}")
        self.stage_shapes = [[(int(m), int(n)) for m, n in shapes] for shapes in self.stage_shapes]
        for i, shapes in enumerate(self.stage_shapes):
            if not shapes:
                raise ValueError(f"stage {i + 1} has no parameter matrices")

    def stage_bytes(self, stage: int) -> float:
        """Raw payload of one stage: element_size * sum(m * n)."""
        es = self.comm_model.element_size
        return float(es * sum(m * n for m, n in self.stage_shapes[stage]))

    def stage_min_dim(self, stage: int) -> int:
        return min(min(m, n) for m, n in self.stage_shapes[stage])

    def t_micro_back_mean(self) -> float:
        return float(np.mean(self.t_backward_micro))


def _per_stage(value, s: int, name: str) -> list[float]:
    vals = [float(value)] * s if np.isscalar(value) else [float(v) for v in value]
    if len(vals) != s:
        raise ValueError(f"{name} must have {s} entries, got {len(vals)}")
    if any(v < 0.0 for v in vals):
        raise ValueError(f"{name} entries must be non-negative")
    return vals


@dataclass(frozen=True)
class StageTiming:
    """Timeline of one stage within one iteration (times relative to its start)."""

    stage: int
    backprop_finish: float
    comm_start: float
    comm_duration: float
    comm_finish: float
    rank_used: int | None
    bytes_sent: float


@dataclass
class TimelineReport:
    """Per-iteration stage timelines plus run totals."""

    stage_timings: list[list[StageTiming]]
    iteration_times: list[float]
    total_comm_seconds: float
    total_comm_bytes: float
    rank_history: list[RankDecision] = field(default_factory=list)
    infeasible: bool = False

    def to_dict(self) -> dict:
        return {
            "iterations": len(self.stage_timings),
            "total_comm_seconds": self.total_comm_seconds,
            "total_comm_bytes": self.total_comm_bytes,
            "iteration_time_max": max(self.iteration_times) if self.iteration_times else 0.0,
            "infeasible": self.infeasible,
            "rank_history": [
                {
                    "window_index": d.window_index,
                    "mean_entropy": d.mean_entropy,
                    "ranks": d.ranks,
                    "t_pred": d.t_pred,
                }
                for d in self.rank_history
            ],
        }


def _backward_finish_times(cfg: PipelineConfig) -> list[float]:
    """Finish time of each stage's last micro-batch backward under 1F1B.

    Event enumeration over the fixed per-stage operation order (warm-up
    forwards, steady forward/backward alternation, cool-down backwards) with
    cross-stage data dependencies, resolved in earliest-feasible order.
    """
    s, mb = cfg.num_stages, cfg.micro_batches
    orders: list[list[tuple[str, int]]] = []
    for i in range(s):
        warm = min(s - 1 - i, mb)
        ops: list[tuple[str, int]] = [("F", j) for j in range(warm)]
        for k in range(mb - warm):
            ops.append(("F", warm + k))
            ops.append(("B", k))
        ops.extend(("B", j) for j in range(mb - warm, mb))
        orders.append(ops)

    f_fin = np.full((s, mb), -1.0)
    b_fin = np.full((s, mb), -1.0)
    clock = [0.0] * s
    heads = [0] * s
    remaining = s * mb * 2
    while remaining:
        progressed = False
        for i in range(s):
            while heads[i] < len(orders[i]):
                kind, j = orders[i][heads[i]]
                if kind == "F":
                    ready = 0.0 if i == 0 else f_fin[i - 1, j]
                    cost = cfg.t_forward_micro[i]
                else:
                    ready = f_fin[s - 1, j] if i == s - 1 else b_fin[i + 1, j]
                    cost = cfg.t_backward_micro[i]
                if ready < 0.0:
                    break  # dependency not scheduled yet
                start = max(clock[i], ready)
                finish = start + cost
                if kind == "F":
                    f_fin[i, j] = finish
                else:
                    b_fin[i, j] = finish
                clock[i] = finish
                heads[i] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            raise RuntimeError("pipeline schedule deadlocked; invalid configuration")
    return [float(b_fin[i, mb - 1]) for i in range(s)]


def stage_comm_bytes(cfg: PipelineConfig, stage: int, rank: int | None) -> float:
    """Bytes one stage puts on the wire, raw or at the given rank."""
    raw = cfg.stage_bytes(stage)
    if rank is None:
        return raw
    es = cfg.comm_model.element_size
    frac = cfg.compressible_fraction
    compressed = es * sum(rank * (m + n) for m, n in cfg.stage_shapes[stage])
    return frac * compressed + (1.0 - frac) * raw


def simulate_iteration(cfg: PipelineConfig, ranks=None) -> list[StageTiming]:
    """Timeline of one iteration; ranks is a per-stage list or None (raw)."""
    s = cfg.num_stages
    if ranks is not None:
        if len(ranks) != s:
            raise ValueError(f"need {s} ranks, got {len(ranks)}")
        for i, r in enumerate(ranks):
            if not 1 <= int(r) <= cfg.stage_min_dim(i):
                raise ValueError(
                    f"rank {r} outside [1, {cfg.stage_min_dim(i)}] for stage {i + 1}"
                )
    finishes = _backward_finish_times(cfg)
    model = cfg.comm_model
    timings: list[StageTiming] = []
    for i in range(s):
        sent = stage_comm_bytes(cfg, i, None if ranks is None else int(ranks[i]))
        if ranks is None:
            duration = sent / model.bandwidth
        else:
            r = int(ranks[i])
            duration = model.compress_time(r) + sent / model.bandwidth + model.decompress_time(r)
        start = finishes[i]
        timings.append(
            StageTiming(
                stage=i + 1,
                backprop_finish=start,
                comm_start=start,
                comm_duration=duration,
                comm_finish=start + duration,
                rank_used=None if ranks is None else int(ranks[i]),
                bytes_sent=sent,
            )
        )
    return timings


def simulate_training(
    cfg: PipelineConfig,
    ctl: RankControllerState | None = None,
    entropy_stream=(),
    table: GTable | None = None,
    error_probe=None,
    window: int | None = None,
) -> TimelineReport:
    """Replay whole windows of iterations under the rank controller.

    entropy_stream supplies one windowed mean entropy per window; ctl = None
    simulates the uncompressed baseline over the same horizon (pass the same
    window size to keep iteration counts comparable). Ranks decided at a
    window close apply from the next window on. error_probe, when given, maps
    a rank to a measured compression error for the warm-up exit record.
    """
    entropies = [float(h) for h in entropy_stream]
    if ctl is not None and table is None:
        raise ValueError("a rank table is required when a controller is given")
    if ctl is not None:
        window = ctl.window
    elif window is None:
        window = 1
    if ctl is not None and ctl.total_iterations == 0:
        ctl.total_iterations = len(entropies) * window

    report = TimelineReport(
        stage_timings=[], iteration_times=[], total_comm_seconds=0.0, total_comm_bytes=0.0
    )
    ranks: list[int] | None = None
    cache: dict[tuple[int, ...] | None, list[StageTiming]] = {}
    t_back = cfg.t_micro_back_mean()
    for k, h_mean in enumerate(entropies):
        key = None if ranks is None else tuple(ranks)
        if key not in cache:
            cache[key] = simulate_iteration(cfg, ranks)
        timings = cache[key]
        if ranks is not None:
            _assert_time_win(cfg, timings)
        for _ in range(window):
            report.stage_timings.append(timings)
            report.iteration_times.append(max(t.comm_finish for t in timings))
            report.total_comm_seconds += sum(t.comm_duration for t in timings)
            report.total_comm_bytes += sum(t.bytes_sent for t in timings)
        t_pred: float | None = None
        if ctl is not None:
            if ctl.phase == PHASE_WARMUP:
                probe = None
                if error_probe is not None:
                    probe = error_probe(ctl.bounds.r_max)
                warmup_step(ctl, h_mean, (k + 1) * window, table, current_error=probe)
                if ctl.phase == PHASE_ACTIVE:
                    ranks = align_stage_ranks(
                        ctl.r_prev, cfg.comm_model, t_back, cfg.num_stages, ctl.bounds
                    )
                    t_pred = cfg.comm_model.comm_time(ctl.r_prev)
            else:
                r_s1, t_pred = adjust_rank_window(ctl, h_mean, table, cfg.comm_model)
                ranks = align_stage_ranks(
                    r_s1, cfg.comm_model, t_back, cfg.num_stages, ctl.bounds
                )
        report.rank_history.append(
            RankDecision(
                window_index=k,
                mean_entropy=h_mean,
                ranks=None if ranks is None else list(ranks),
                t_pred=t_pred,
            )
        )
    return report


def _assert_time_win(cfg: PipelineConfig, timings) -> None:
    """Compressed stages must never take longer than the raw transfer."""
    for t in timings:
        raw = cfg.stage_bytes(t.stage - 1) / cfg.comm_model.bandwidth
        if t.comm_duration > raw + 1e-9:
            raise RuntimeError(
                f"stage {t.stage} at rank {t.rank_used} breaks the time-win bound: "
                f"{t.comm_duration} > {raw}"
            )
