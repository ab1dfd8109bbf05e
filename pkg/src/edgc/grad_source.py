"""Gradient providers: binary trace replay, synthetic streams with controlled
variance schedules, and a tiny data-parallel trainer.

Trace format (little-endian):
    magic "EDGT" (4 bytes), version u16, layer_count u16, iteration_count u32,
    element_width u16 (= 4, float32 payload), then layer_count (m u32, n u32)
    pairs, then iteration_count frames of all layers' row-major float32 data.

The toy trainer is a two-layer perceptron on seeded synthetic classification
data. Workers are simulated sequentially in one thread; per-worker gradients
pass through the compressor (per the chosen policy) before a fixed-order
average, then a plain SGD update. It records loss, per-layer gradient scale,
and the logical bytes each worker would have sent.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import seeds
from .compressor import CompressorState, compress, compressed_element_count, decompress, set_rank
from .controller import (
    PHASE_ACTIVE,
    PHASE_WARMUP,
    CommModel,
    RankBounds,
    RankControllerState,
    RankDecision,
    adjust_rank_window,
    compute_rank_bounds,
    warmup_step,
)
from .entropy import EntropyTracker, SamplerConfig
from .errors import DivergenceError, TraceFormatError
from .matrix_core import GradientMatrix, optimal_rank_r_error
from .rank_model import g_table

TRACE_MAGIC = b"EDGT"
TRACE_VERSION = 1
_HEADER = struct.Struct("<4sHHIH")
_DIMS = struct.Struct("<II")
_ELEMENT_WIDTH = 4


def write_trace(path, iterations) -> int:
    """Serialize per-iteration lists of matrices; returns the iteration count.

    All iterations must carry the same layer shapes as the first one.
    """
    frames = []
    shapes: list[tuple[int, int]] | None = None
    for mats in iterations:
        arrays = [np.asarray(m.data if isinstance(m, GradientMatrix) else m) for m in mats]
        if shapes is None:
            shapes = [a.shape for a in arrays]
            if not shapes:
                raise ValueError("iterations must contain at least one layer")
        if [a.shape for a in arrays] != shapes:
            raise ValueError("layer shapes changed between iterations")
        frames.append(arrays)
    if shapes is None:
        shapes = []
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TRACE_MAGIC, TRACE_VERSION, len(shapes), len(frames), _ELEMENT_WIDTH))
        for m, n in shapes:
            fh.write(_DIMS.pack(m, n))
        for arrays in frames:
            for a in arrays:
                fh.write(a.astype("<f4").tobytes(order="C"))
    return len(frames)


def read_trace_header(path) -> tuple[int, list[tuple[int, int]]]:
    """(iteration_count, layer shapes), with full length validation."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise TraceFormatError(
                f"truncated header: need {_HEADER.size} bytes, file has {len(head)}"
            )
        magic, version, layer_count, iteration_count, width = _HEADER.unpack(head)
        if magic != TRACE_MAGIC:
            raise TraceFormatError(f"bad magic {magic!r} at byte 0, expected {TRACE_MAGIC!r}")
        if version != TRACE_VERSION:
            raise TraceFormatError(f"unsupported version {version}, expected {TRACE_VERSION}")
        if width != _ELEMENT_WIDTH:
            raise TraceFormatError(f"unsupported element width {width}, expected {_ELEMENT_WIDTH}")
        dims_bytes = fh.read(_DIMS.size * layer_count)
        if len(dims_bytes) < _DIMS.size * layer_count:
            raise TraceFormatError(
                f"truncated layer table at byte {_HEADER.size}: need "
                f"{_DIMS.size * layer_count} bytes, got {len(dims_bytes)}"
            )
        shapes = [
            _DIMS.unpack_from(dims_bytes, k * _DIMS.size) for k in range(layer_count)
        ]
    for m, n in shapes:
        if m < 1 or n < 1:
            raise TraceFormatError(f"non-positive layer dimensions {(m, n)}")
    header = _HEADER.size + _DIMS.size * layer_count
    frame = sum(m * n for m, n in shapes) * _ELEMENT_WIDTH
    expected = header + iteration_count * frame
    if size != expected:
        raise TraceFormatError(
            f"file length {size} != expected {expected} "
            f"({expected - size} bytes missing)" if size < expected
            else f"file length {size} != expected {expected} ({size - expected} trailing bytes)"
        )
    return iteration_count, shapes


def replay_trace(path) -> Iterator[list[GradientMatrix]]:
    """Stream per-iteration matrix lists; constant memory in iteration count."""
    iteration_count, shapes = read_trace_header(path)
    header = _HEADER.size + _DIMS.size * len(shapes)
    with open(path, "rb") as fh:
        fh.seek(header)
        for t in range(iteration_count):
            mats = []
            for k, (m, n) in enumerate(shapes):
                raw = fh.read(m * n * _ELEMENT_WIDTH)
                data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(m, n)
                mats.append(GradientMatrix(data, layer_id=k, iteration=t))
            yield mats


@dataclass(frozen=True)
class SynthSchedule:
    """Gaussian stream whose entry scale follows a fixed schedule.

    kind "exp" uses sigma0 * exp(-t / tau); kind "piecewise" holds the sigma
    of the latest breakpoint (start_iteration, sigma) at or below t.
    """

    shapes: tuple[tuple[int, int], ...]
    iterations: int
    seed: int = 0
    kind: str = "exp"
    sigma0: float = 1.0
    tau: float = 1000.0
    breakpoints: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("exp", "piecewise"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.kind == "exp":
            if self.sigma0 <= 0.0 or self.tau <= 0.0:
                raise ValueError("sigma0 and tau must be positive")
        else:
            if not self.breakpoints or self.breakpoints[0][0] != 0:
                raise ValueError("piecewise schedule needs a breakpoint at iteration 0")
            if any(s <= 0.0 for _, s in self.breakpoints):
                raise ValueError("piecewise sigmas must be positive")

    def sigma(self, t: int) -> float:
        if self.kind == "exp":
            return self.sigma0 * math.exp(-t / self.tau)
        value = self.breakpoints[0][1]
        for start, s in self.breakpoints:
            if t >= start:
                value = s
        return value


def synth_stream(schedule: SynthSchedule) -> Iterator[list[GradientMatrix]]:
    """Seeded i.i.d. N(0, sigma(t)^2) matrices, one list per iteration."""
    for t in range(schedule.iterations):
        s = schedule.sigma(t)
        yield [
            GradientMatrix(
                s * seeds.rng(schedule.seed, seeds.TAG_SYNTH, t, k).standard_normal((m, n)),
                layer_id=k,
                iteration=t,
            )
            for k, (m, n) in enumerate(schedule.shapes)
        ]


POLICY_NONE = "none"
POLICY_FIXED = "fixed"
POLICY_EDGC = "edgc"


@dataclass(frozen=True)
class CompressionPolicy:
    """What each worker does to its 2-D gradients before averaging."""

    kind: str = POLICY_NONE
    fixed_rank: int | None = None
    sampler: SamplerConfig = SamplerConfig()
    window: int = 100
    step_limit: int = 8
    warmup_floor: float = 0.10
    table_trials: int = 64

    def __post_init__(self) -> None:
        if self.kind not in (POLICY_NONE, POLICY_FIXED, POLICY_EDGC):
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.kind == POLICY_FIXED and (self.fixed_rank is None or self.fixed_rank < 1):
            raise ValueError("fixed policy needs fixed_rank >= 1")


@dataclass(frozen=True)
class ToyModelConfig:
    in_dim: int = 64
    hidden: int = 256
    classes: int = 10
    lr: float = 0.05
    lr_schedule: str = "constant"  # or "cosine"

    def __post_init__(self) -> None:
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")


@dataclass(frozen=True)
class ToyDataConfig:
    pool: int = 4096
    batch_size: int = 64
    teacher_noise: float = 1.0
    seed: int = 0


@dataclass
class TrainResult:
    losses: np.ndarray
    layer_sigma: np.ndarray          # per step, per weight matrix: std of raw worker-0 grad
    bytes_per_step: np.ndarray       # logical bytes all workers would send
    total_bytes: float
    uncompressed_bytes_per_step: float
    rank_history: list[RankDecision] = field(default_factory=list)
    entropy_windows: list = field(default_factory=list)
    gradient_log: list[list[GradientMatrix]] = field(default_factory=list)
    final_params: dict[str, np.ndarray] = field(default_factory=dict)
    eps_ini: float | None = None


def _softmax_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    rows = np.arange(labels.size)
    loss = float(np.mean(np.log(expz.sum(axis=1)) - shifted[rows, labels]))
    grad = probs
    grad[rows, labels] -= 1.0
    return loss, grad / labels.size


def train_toy(
    model_cfg: ToyModelConfig,
    data_cfg: ToyDataConfig,
    steps: int,
    dp_workers: int,
    policy: CompressionPolicy,
    record_gradients_every: int = 0,
) -> TrainResult:
    """Run the toy data-parallel loop and return its traces.

    Every step shards the batch across workers, computes per-worker gradients,
    compresses the two weight-matrix gradients per the policy (biases always
    bypass), averages the decompressed gradients in worker order, and applies
    SGD. Divergence (non-finite loss or gradient) raises DivergenceError.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    if dp_workers < 1:
        raise ValueError("dp_workers must be positive")
    if data_cfg.batch_size % dp_workers:
        raise ValueError(
            f"batch_size {data_cfg.batch_size} not divisible by {dp_workers} workers"
        )
    seed = data_cfg.seed
    pool_x = seeds.rng(seed, seeds.TAG_DATA).standard_normal((data_cfg.pool, model_cfg.in_dim))
    teacher = seeds.rng(seed, seeds.TAG_TEACHER).standard_normal(
        (model_cfg.in_dim, model_cfg.classes)
    )
    teacher_logits = pool_x @ teacher + data_cfg.teacher_noise * seeds.rng(
        seed, seeds.TAG_LABEL_NOISE
    ).standard_normal((data_cfg.pool, model_cfg.classes))
    pool_y = teacher_logits.argmax(axis=1)

    init = seeds.rng(seed, seeds.TAG_INIT)
    w1 = init.standard_normal((model_cfg.in_dim, model_cfg.hidden)) / math.sqrt(model_cfg.in_dim)
    b1 = np.zeros(model_cfg.hidden)
    w2 = init.standard_normal((model_cfg.hidden, model_cfg.classes)) / math.sqrt(model_cfg.hidden)
    b2 = np.zeros(model_cfg.classes)

    weight_shapes = [w1.shape, w2.shape]
    raw_elements = sum(m * n for m, n in weight_shapes)
    bias_elements = b1.size + b2.size
    element_size = 4
    per_step_raw_bytes = float(dp_workers * element_size * (raw_elements + bias_elements))

    states: dict[tuple[int, int], CompressorState] = {}
    ctl: RankControllerState | None = None
    tracker: EntropyTracker | None = None
    table = None
    model: CommModel | None = None
    current_rank: int | None = None
    if policy.kind == POLICY_FIXED:
        current_rank = policy.fixed_rank
    if policy.kind == POLICY_EDGC:
        # bounds from a cost-free byte model over this stage's weight matrices;
        # eta is the physical wire slope so predicted times stay meaningful
        bandwidth = 1e9
        per_rank = sum(m + n for m, n in weight_shapes)
        model = CommModel(
            eta=element_size * per_rank / bandwidth,
            bandwidth=bandwidth,
            element_size=element_size,
        )
        bounds = compute_rank_bounds(model, element_size * raw_elements, weight_shapes)
        big = max(weight_shapes, key=lambda s: s[0] * s[1])
        table = g_table(min(big), max(big), policy.table_trials, seed)
        if bounds.r_max >= table.m:
            # the entropy rank law cannot move at the table's full rank
            r_max = table.m - 1
            bounds = RankBounds(r_min=min(bounds.r_min, r_max), r_max=r_max)
        current_rank = bounds.r_max
        ctl = RankControllerState(
            bounds=bounds,
            window=policy.window,
            step_limit=policy.step_limit,
            warmup_floor=policy.warmup_floor,
            total_iterations=steps,
        )
        tracker = EntropyTracker(policy.sampler, policy.window)
    if policy.kind in (POLICY_FIXED, POLICY_EDGC):
        basis_seeds = _state_seeds(seed, dp_workers, len(weight_shapes))
        for w in range(dp_workers):
            for k, (m, n) in enumerate(weight_shapes):
                states[(w, k)] = CompressorState(
                    m, n, min(current_rank, min(m, n)), rng_seed=basis_seeds[(w, k)]
                )

    losses = np.empty(steps)
    layer_sigma = np.empty((steps, len(weight_shapes)))
    bytes_per_step = np.empty(steps)
    result = TrainResult(
        losses=losses,
        layer_sigma=layer_sigma,
        bytes_per_step=bytes_per_step,
        total_bytes=0.0,
        uncompressed_bytes_per_step=per_step_raw_bytes,
    )
    shard = data_cfg.batch_size // dp_workers

    for t in range(steps):
        idx = seeds.rng(seed, seeds.TAG_BATCH, t).integers(0, data_cfg.pool, data_cfg.batch_size)
        xb, yb = pool_x[idx], pool_y[idx]
        with np.errstate(over="ignore", invalid="ignore"):
            hidden_full = np.maximum(xb @ w1 + b1, 0.0)
            loss, _ = _softmax_grad(hidden_full @ w2 + b2, yb)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss} at step {t}")
        losses[t] = loss

        sums = [np.zeros_like(w1), np.zeros_like(w2), np.zeros_like(b1), np.zeros_like(b2)]
        step_bytes = 0.0
        raw_worker0: list[GradientMatrix] = []
        for w in range(dp_workers):
            xs = xb[w * shard : (w + 1) * shard]
            ys = yb[w * shard : (w + 1) * shard]
            with np.errstate(over="ignore", invalid="ignore"):
                h = np.maximum(xs @ w1 + b1, 0.0)
                _, dlogits = _softmax_grad(h @ w2 + b2, ys)
                g2 = h.T @ dlogits
                gb2 = dlogits.sum(axis=0)
                dh = (dlogits @ w2.T) * (h > 0.0)
                g1 = xs.T @ dh
                gb1 = dh.sum(axis=0)
            for g in (g1, g2):
                if not np.isfinite(g).all():
                    raise DivergenceError(f"non-finite gradient at step {t}, worker {w}")
            if w == 0:
                raw_worker0 = [
                    GradientMatrix(g1.copy(), layer_id=0, iteration=t),
                    GradientMatrix(g2.copy(), layer_id=1, iteration=t),
                ]
            grads = [g1, g2]
            compressing = policy.kind == POLICY_FIXED or (
                policy.kind == POLICY_EDGC and ctl.phase == PHASE_ACTIVE
            )
            if compressing:
                for k, g in enumerate(grads):
                    state = states[(w, k)]
                    factors = compress(GradientMatrix(g, layer_id=k, iteration=t), state)
                    grads[k] = decompress(factors).data
                    step_bytes += element_size * compressed_element_count(
                        state.m, state.n, state.rank
                    )
                step_bytes += element_size * bias_elements
            else:
                step_bytes += element_size * (raw_elements + bias_elements)
            sums[0] += grads[0]
            sums[1] += grads[1]
            sums[2] += gb1
            sums[3] += gb2
        avg = [s / dp_workers for s in sums]
        layer_sigma[t, 0] = raw_worker0[0].data.std(ddof=1)
        layer_sigma[t, 1] = raw_worker0[1].data.std(ddof=1)
        bytes_per_step[t] = step_bytes
        if record_gradients_every and t % record_gradients_every == 0:
            result.gradient_log.append(raw_worker0)

        if tracker is not None:
            closed = tracker.observe(t, raw_worker0)
            if closed is not None:
                _edgc_window_update(closed, ctl, table, model, states, raw_worker0, result)

        lr = model_cfg.lr
        if model_cfg.lr_schedule == "cosine":
            lr = model_cfg.lr * 0.5 * (1.0 + math.cos(math.pi * t / steps))
        w1 -= lr * avg[0]
        w2 -= lr * avg[1]
        b1 -= lr * avg[2]
        b2 -= lr * avg[3]

    if tracker is not None:
        closed = tracker.flush()
        if closed is not None:
            _edgc_window_update(closed, ctl, table, model, states, raw_worker0, result)
        result.entropy_windows = tracker.windows
    result.total_bytes = float(bytes_per_step.sum())
    result.final_params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}
    if ctl is not None:
        result.eps_ini = ctl.eps_ini
    return result


def _state_seeds(seed: int, workers: int, layers: int) -> dict[tuple[int, int], int]:
    ss = np.random.SeedSequence([seed, seeds.TAG_BASIS])
    children = ss.spawn(workers * layers)
    return {
        (w, k): int(children[w * layers + k].generate_state(1)[0])
        for w in range(workers)
        for k in range(layers)
    }


def _edgc_window_update(window, ctl, table, model, states, raw_grads, result) -> None:
    """Apply one controller decision at a window close and log it."""
    t_pred = None
    if ctl.phase == PHASE_WARMUP:
        def probe(r_max: int) -> float:
            return math.hypot(
                *(optimal_rank_r_error(g, min(r_max, min(g.data.shape))) for g in raw_grads)
            )

        warmup_step(
            ctl,
            window.mean_entropy,
            (window.window_index + 1) * ctl.window,
            table,
            current_error=probe(ctl.bounds.r_max),
        )
        rank = ctl.r_prev if ctl.phase == PHASE_ACTIVE else None
    else:
        rank, t_pred = adjust_rank_window(ctl, window.mean_entropy, table, model)
    if rank is not None:
        for state in states.values():
            set_rank(state, min(rank, min(state.m, state.n)))
    result.rank_history.append(
        RankDecision(
            window_index=window.window_index,
            mean_entropy=window.mean_entropy,
            ranks=None if rank is None else [rank],
            t_pred=t_pred,
        )
    )
