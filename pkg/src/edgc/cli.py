"""Command-line surface: calibrate, simulate, train-toy, analyze-trace, mp-table.

Runs are driven by a JSON config file (flags override config keys; the
EDGC_SEED environment variable overrides the config seed, and --seed overrides
both). Unknown config keys are rejected. All randomness is derived from the
single run seed (see seeds.py for the splitting scheme), so identical config
plus seed reproduces byte-identical outputs. Exit codes: 0 success, 2
config/format error, 3 runtime divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import entropy as ent
from . import grad_source as gs
from . import seeds
from .compressor import CompressorState, compress, decompress
from .controller import (
    CommModel,
    RankBounds,
    RankControllerState,
    calibrate_comm_model,
    compute_rank_bounds,
    write_decision_csv,
)
from .errors import (
    CalibrationError,
    CompressionInfeasibleError,
    ConfigError,
    DivergenceError,
    EdgcError,
    TraceFormatError,
)
from .matrix_core import pearson_correlation
from .pipeline_sim import PipelineConfig, simulate_training
from .rank_model import build_g_table, g_table

# ---------------------------------------------------------------- config


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _check_keys(cfg: dict, schema: dict, path: str = "") -> None:
    for key, value in cfg.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key {here!r}")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here!r} must be an object")
            _check_keys(value, sub, here)


def _load_config(args, defaults: dict, schema: dict) -> dict:
    cfg = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        _check_keys(user, schema)
        cfg = _merge(cfg, user)
    env_seed = os.environ.get("EDGC_SEED")
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"EDGC_SEED must be an integer, got {env_seed!r}") from exc
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "output_dir", None):
        cfg["output_dir"] = args.output_dir
    try:
        cfg["seed"] = int(cfg.get("seed", 0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed must be an integer, got {cfg.get('seed')!r}") from exc
    if cfg["seed"] < 0:
        raise ConfigError("seed must be non-negative")
    return cfg


def _outdir(cfg: dict) -> str:
    path = cfg["output_dir"]
    os.makedirs(path, exist_ok=True)
    return path


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- calibrate

CALIBRATE_DEFAULTS = {
    "seed": 0,
    "output_dir": "edgc_out",
    "comm": {
        "measurements_csv": None,
        "measure": None,  # {"m","n","ranks","repeats"}
        "bandwidth": 1e9,
        "element_size": 4,
        "compress_cost": [0.0, 0.0],
        "decompress_cost": [0.0, 0.0],
    },
}

CALIBRATE_SCHEMA = {
    "seed": None,
    "output_dir": None,
    "comm": {
        "measurements_csv": None,
        "measure": {"m": None, "n": None, "ranks": None, "repeats": None},
        "bandwidth": None,
        "element_size": None,
        "compress_cost": None,
        "decompress_cost": None,
    },
}


def _read_measurements(path: str) -> list[tuple[int, float]]:
    rows = []
    with open(path, newline="") as fh:
        for record in csv.reader(fh):
            if not record:
                continue
            try:
                rows.append((int(record[0]), float(record[1])))
            except (ValueError, IndexError):
                if not rows:  # tolerate one header line
                    continue
                raise ConfigError(f"bad measurement row {record!r} in {path}")
    return rows


def _measure_compressor(comm: dict, seed: int):
    sweep_cfg = comm["measure"]
    m, n = int(sweep_cfg["m"]), int(sweep_cfg["n"])
    ranks = [int(r) for r in sweep_cfg["ranks"]]
    repeats = int(sweep_cfg.get("repeats") or 50)
    matrix = seeds.rng(seed, seeds.TAG_NOISE, 0).standard_normal((m, n))
    sweep = []
    for r in ranks:
        state = CompressorState(m, n, r, rng_seed=seed)
        factors = compress(matrix, state)  # warm the state before timing
        t_c = []
        t_d = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            factors = compress(matrix, state)
            t_c.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            decompress(factors)
            t_d.append(time.perf_counter() - t0)
        sweep.append((r, float(np.median(t_c)), float(np.median(t_d))))
    return sweep


def cmd_calibrate(cfg: dict) -> int:
    out = _outdir(cfg)
    comm = cfg["comm"]
    seed = cfg["seed"]
    if comm.get("measurements_csv"):
        measurements = _read_measurements(comm["measurements_csv"])
        model = calibrate_comm_model(
            measurements,
            bandwidth=float(comm["bandwidth"]),
            element_size=int(comm["element_size"]),
            compress_cost=tuple(comm["compress_cost"]),
            decompress_cost=tuple(comm["decompress_cost"]),
        )
    elif comm.get("measure"):
        sweep = _measure_compressor(comm, seed)
        ranks = np.array([s[0] for s in sweep], dtype=float)
        fit_c = np.polyfit(ranks, [s[1] for s in sweep], 1)
        fit_d = np.polyfit(ranks, [s[2] for s in sweep], 1)
        pred = np.polyval(fit_c, ranks)
        meas = np.array([s[1] for s in sweep])
        mape = float(np.mean(np.abs(pred - meas) / meas))
        m, n = int(comm["measure"]["m"]), int(comm["measure"]["n"])
        eta = int(comm["element_size"]) * (m + n) / float(comm["bandwidth"])
        model = CommModel(
            eta=eta,
            bandwidth=float(comm["bandwidth"]),
            element_size=int(comm["element_size"]),
            compress_cost=(max(0.0, float(fit_c[1])), max(0.0, float(fit_c[0]))),
            decompress_cost=(max(0.0, float(fit_d[1])), max(0.0, float(fit_d[0]))),
            mape=mape,
        )
        _write_csv(
            os.path.join(out, "measurements.csv"),
            ["rank", "compress_seconds", "decompress_seconds"],
            sweep,
        )
    else:
        raise CalibrationError("calibrate needs comm.measurements_csv or comm.measure")
    _write_json(os.path.join(out, "comm_model.json"), _model_to_dict(model))
    print(f"calibrated eta={model.eta!r} s/rank, MAPE={model.mape * 100:.2f}%")
    return 0


def _model_to_dict(model: CommModel) -> dict:
    return {
        "eta": model.eta,
        "bandwidth": model.bandwidth,
        "element_size": model.element_size,
        "compress_cost": list(model.compress_cost),
        "decompress_cost": list(model.decompress_cost),
        "mape": model.mape,
    }


def _model_from_dict(d: dict) -> CommModel:
    return CommModel(
        eta=float(d["eta"]),
        bandwidth=float(d["bandwidth"]),
        element_size=int(d["element_size"]),
        compress_cost=tuple(d.get("compress_cost", (0.0, 0.0))),
        decompress_cost=tuple(d.get("decompress_cost", (0.0, 0.0))),
        mape=float(d.get("mape", 0.0)),
    )


# ---------------------------------------------------------------- simulate

SIMULATE_DEFAULTS = {
    "seed": 0,
    "output_dir": "edgc_out",
    "pipeline": {
        "num_stages": 4,
        "micro_batches": 8,
        "t_forward_micro": 0.001,
        "t_backward_micro": 0.002,
        "dp_degree": 2,
        "stage_shapes": [[[1024, 1024]] * 8] * 4,
        "compressible_fraction": 1.0,
    },
    "comm": {
        "model_json": None,
        "eta": None,  # derived from bandwidth and stage-1 shapes when null
        "bandwidth": 1e9,
        "element_size": 4,
        "compress_cost": [0.0, 0.0],
        "decompress_cost": [0.0, 0.0],
    },
    "controller": {
        "window": 50,
        "step_limit": 8,
        "warmup_floor": 0.10,
        "table_trials": 64,
    },
    "entropy": {
        "kind": "exp",  # "exp" | "piecewise" | "csv"
        "sigma0": 1.0,
        "tau": 1500.0,
        "windows": 200,
        "breakpoints": None,
        "csv": None,
    },
}

SIMULATE_SCHEMA = {
    "seed": None,
    "output_dir": None,
    "pipeline": {
        "num_stages": None,
        "micro_batches": None,
        "t_forward_micro": None,
        "t_backward_micro": None,
        "dp_degree": None,
        "stage_shapes": None,
        "compressible_fraction": None,
    },
    "comm": {
        "model_json": None,
        "eta": None,
        "bandwidth": None,
        "element_size": None,
        "compress_cost": None,
        "decompress_cost": None,
    },
    "controller": {
        "window": None,
        "step_limit": None,
        "warmup_floor": None,
        "table_trials": None,
    },
    "entropy": {
        "kind": None,
        "sigma0": None,
        "tau": None,
        "windows": None,
        "breakpoints": None,
        "csv": None,
    },
}


def _window_entropies(cfg: dict) -> list[float]:
    source = cfg["entropy"]
    window = int(cfg["controller"]["window"])
    kind = source["kind"]
    if kind == "csv":
        if not source.get("csv"):
            raise ConfigError("entropy.kind=csv needs entropy.csv path")
        values = []
        with open(source["csv"], newline="") as fh:
            for record in csv.reader(fh):
                if not record or record[0] == "window_index":
                    continue
                values.append(float(record[1]))
        return values
    windows = int(source["windows"])
    const = ent.GAUSSIAN_ENTROPY_CONST
    if kind == "exp":
        sigma0, tau = float(source["sigma0"]), float(source["tau"])
        return [
            math.log(sigma0) + const - (k * window + (window - 1) / 2.0) / tau
            for k in range(windows)
        ]
    if kind == "piecewise":
        if not source.get("breakpoints"):
            raise ConfigError("entropy.kind=piecewise needs entropy.breakpoints")
        sched = gs.SynthSchedule(
            shapes=((2, 2),),
            iterations=windows * window,
            kind="piecewise",
            breakpoints=tuple((int(t), float(s)) for t, s in source["breakpoints"]),
        )
        sig = np.array([sched.sigma(t) for t in range(windows * window)])
        h = np.log(sig) + const
        return [float(h[k * window : (k + 1) * window].mean()) for k in range(windows)]
    raise ConfigError(f"unknown entropy.kind {kind!r}")


def _simulate_comm_model(cfg: dict, pipeline_cfg: dict) -> CommModel:
    comm = cfg["comm"]
    if comm.get("model_json"):
        with open(comm["model_json"]) as fh:
            return _model_from_dict(json.load(fh))
    eta = comm.get("eta")
    element_size = int(comm["element_size"])
    bandwidth = float(comm["bandwidth"])
    compress_cost = tuple(comm["compress_cost"])
    decompress_cost = tuple(comm["decompress_cost"])
    if eta is None:
        shapes = pipeline_cfg["stage_shapes"][0]
        per_rank = sum(int(m) + int(n) for m, n in shapes)
        # effective seconds-per-rank seen by stage 1: wire plus rank-linear costs
        eta = element_size * per_rank / bandwidth + compress_cost[1] + decompress_cost[1]
    return CommModel(
        eta=float(eta),
        bandwidth=bandwidth,
        element_size=element_size,
        compress_cost=compress_cost,
        decompress_cost=decompress_cost,
    )


def cmd_simulate(cfg: dict) -> int:
    out = _outdir(cfg)
    pcfg = cfg["pipeline"]
    model = _simulate_comm_model(cfg, pcfg)
    pipe = PipelineConfig(
        num_stages=int(pcfg["num_stages"]),
        micro_batches=int(pcfg["micro_batches"]),
        t_forward_micro=pcfg["t_forward_micro"],
        t_backward_micro=pcfg["t_backward_micro"],
        stage_shapes=[[tuple(s) for s in shapes] for shapes in pcfg["stage_shapes"]],
        comm_model=model,
        dp_degree=int(pcfg["dp_degree"]),
        compressible_fraction=float(pcfg["compressible_fraction"]),
    )
    entropies = _window_entropies(cfg)
    ctl_cfg = cfg["controller"]
    window = int(ctl_cfg["window"])

    baseline_ctl = None
    infeasible = False
    bounds = None
    try:
        per_stage = [
            compute_rank_bounds(
                model,
                pipe.stage_bytes(i),
                pipe.stage_shapes[i],
                compressible_fraction=pipe.compressible_fraction,
            )
            for i in range(pipe.num_stages)
        ]
        r_max = min(b.r_max for b in per_stage)
        bounds = RankBounds(r_min=min(max(1, round(r_max / 5)), r_max), r_max=r_max)
    except CompressionInfeasibleError:
        infeasible = True

    baseline = simulate_training(pipe, baseline_ctl, entropies, window=window)
    if infeasible:
        report = baseline
        report.infeasible = True
    else:
        big = max(pipe.stage_shapes[0], key=lambda s: s[0] * s[1])
        table = g_table(min(big), max(big), int(ctl_cfg["table_trials"]), cfg["seed"])
        if table.m <= bounds.r_max:
            raise ConfigError(
                f"stage-1 table covers ranks up to {table.m} but r_max is {bounds.r_max}; "
                "compression at full table rank cannot be entropy-scheduled"
            )
        ctl = RankControllerState(
            bounds=bounds,
            window=window,
            step_limit=int(ctl_cfg["step_limit"]),
            warmup_floor=float(ctl_cfg["warmup_floor"]),
            total_iterations=len(entropies) * window,
        )
        report = simulate_training(pipe, ctl, entropies, table)

    reduction = 1.0 - (
        report.total_comm_seconds / baseline.total_comm_seconds
        if baseline.total_comm_seconds
        else 1.0
    )
    summary = report.to_dict()
    summary["baseline_comm_seconds"] = baseline.total_comm_seconds
    summary["baseline_comm_bytes"] = baseline.total_comm_bytes
    summary["comm_seconds_reduction"] = reduction
    summary["config"] = {k: v for k, v in cfg.items() if k != "output_dir"}
    _write_json(os.path.join(out, "report.json"), summary)

    rows = []
    for it, timings in enumerate(report.stage_timings):
        for t in timings:
            rows.append((it, t.stage, t.comm_start, t.comm_finish,
                         t.rank_used if t.rank_used is not None else ""))
    _write_csv(
        os.path.join(out, "timeline.csv"),
        ["iteration", "stage", "comm_start", "comm_finish", "rank"],
        rows,
    )
    write_decision_csv(os.path.join(out, "decisions.csv"), report.rank_history, pipe.num_stages)
    print(
        f"comm seconds: baseline {baseline.total_comm_seconds!r} "
        f"edgc {report.total_comm_seconds!r} reduction {100 * reduction:.2f}%"
    )
    return 0


# ---------------------------------------------------------------- train-toy

TRAIN_DEFAULTS = {
    "seed": 0,
    "output_dir": "edgc_out",
    "train": {
        "steps": 2000,
        "dp_workers": 2,
        "policy": "edgc",  # "none" | "fixed" | "edgc"
        "fixed_rank": None,
        "lr": 0.05,
        "lr_schedule": "constant",
        "batch_size": 64,
        "pool": 4096,
        "teacher_noise": 1.0,
        "in_dim": 64,
        "hidden": 256,
        "classes": 10,
    },
    "sampler": {"alpha": 0.1, "beta": 0.25},
    "controller": {"window": 100, "step_limit": 8, "warmup_floor": 0.10, "table_trials": 64},
}

TRAIN_SCHEMA = {
    "seed": None,
    "output_dir": None,
    "train": {
        "steps": None,
        "dp_workers": None,
        "policy": None,
        "fixed_rank": None,
        "lr": None,
        "lr_schedule": None,
        "batch_size": None,
        "pool": None,
        "teacher_noise": None,
        "in_dim": None,
        "hidden": None,
        "classes": None,
    },
    "sampler": {"alpha": None, "beta": None},
    "controller": {"window": None, "step_limit": None, "warmup_floor": None, "table_trials": None},
}


def cmd_train_toy(cfg: dict) -> int:
    out = _outdir(cfg)
    train = cfg["train"]
    policy = gs.CompressionPolicy(
        kind=train["policy"],
        fixed_rank=train["fixed_rank"],
        sampler=ent.SamplerConfig(
            alpha=float(cfg["sampler"]["alpha"]),
            beta=float(cfg["sampler"]["beta"]),
            rng_seed=cfg["seed"],
        ),
        window=int(cfg["controller"]["window"]),
        step_limit=int(cfg["controller"]["step_limit"]),
        warmup_floor=float(cfg["controller"]["warmup_floor"]),
        table_trials=int(cfg["controller"]["table_trials"]),
    )
    result = gs.train_toy(
        gs.ToyModelConfig(
            in_dim=int(train["in_dim"]),
            hidden=int(train["hidden"]),
            classes=int(train["classes"]),
            lr=float(train["lr"]),
            lr_schedule=train["lr_schedule"],
        ),
        gs.ToyDataConfig(
            pool=int(train["pool"]),
            batch_size=int(train["batch_size"]),
            teacher_noise=float(train["teacher_noise"]),
            seed=cfg["seed"],
        ),
        steps=int(train["steps"]),
        dp_workers=int(train["dp_workers"]),
        policy=policy,
    )
    _write_csv(
        os.path.join(out, "loss.csv"),
        ["step", "loss"],
        [(t, float(v)) for t, v in enumerate(result.losses)],
    )
    cumulative = np.cumsum(result.bytes_per_step)
    _write_csv(
        os.path.join(out, "ledger.csv"),
        ["step", "bytes", "cumulative_bytes"],
        [(t, float(b), float(c)) for t, (b, c) in
         enumerate(zip(result.bytes_per_step, cumulative))],
    )
    if policy.kind == gs.POLICY_EDGC:
        write_decision_csv(os.path.join(out, "ranks.csv"), result.rank_history, 1)
        ent.write_window_csv(os.path.join(out, "windows.csv"), result.entropy_windows)
    baseline_total = result.uncompressed_bytes_per_step * len(result.losses)
    print(
        f"final loss {float(result.losses[-1])!r}, bytes {result.total_bytes!r} "
        f"({100 * (1 - result.total_bytes / baseline_total):.2f}% below uncompressed)"
    )
    return 0


# ---------------------------------------------------------------- analyze-trace

ANALYZE_DEFAULTS = {
    "seed": 0,
    "output_dir": "edgc_out",
    "source": {"trace": None},
    "sampler": {"alpha": 0.1, "beta": 0.25},
    "window": 100,
    "estimator": "histogram",  # "histogram" | "gaussian"
    "correlation_iterations": 4,
}

ANALYZE_SCHEMA = {
    "seed": None,
    "output_dir": None,
    "source": {"trace": None},
    "sampler": {"alpha": None, "beta": None},
    "window": None,
    "estimator": None,
    "correlation_iterations": None,
}


def cmd_analyze_trace(cfg: dict) -> int:
    out = _outdir(cfg)
    path = cfg["source"].get("trace")
    if not path:
        raise ConfigError("analyze-trace needs source.trace")
    iteration_count, shapes = gs.read_trace_header(path)
    estimator = {
        "histogram": ent.entropy_histogram,
        "gaussian": ent.entropy_gaussian_plugin,
    }.get(cfg["estimator"])
    if estimator is None:
        raise ConfigError(f"unknown estimator {cfg['estimator']!r}")
    sampler = ent.SamplerConfig(
        alpha=float(cfg["sampler"]["alpha"]),
        beta=float(cfg["sampler"]["beta"]),
        rng_seed=cfg["seed"],
    )
    tracker = ent.EntropyTracker(sampler, int(cfg["window"]), estimator=estimator)

    want = cfg["correlation_iterations"]
    if isinstance(want, int):
        count = min(want, iteration_count) if iteration_count else 0
        corr_iters = sorted(
            {round(i * (iteration_count - 1) / max(1, count - 1)) for i in range(count)}
        ) if count else []
    else:
        corr_iters = sorted({int(i) for i in want})
    corr_rows = []
    hist_rows = []
    for t, mats in enumerate(gs.replay_trace(path)):
        tracker.observe(t, mats)
        if ent.should_sample_iteration(t, sampler.alpha):
            for k, mat in enumerate(mats):
                counts, edges = np.histogram(mat.data.ravel(), bins="fd")
                for j, c in enumerate(counts):
                    hist_rows.append((t, k, float(edges[j]), float(edges[j + 1]), int(c)))
        if t in corr_iters:
            for i in range(len(mats)):
                for j in range(len(mats)):
                    if mats[i].data.size != mats[j].data.size:
                        continue
                    rho = pearson_correlation(mats[i], mats[j])
                    corr_rows.append((t, i, j, float(rho)))
    tracker.flush()
    ent.write_window_csv(os.path.join(out, "entropy_windows.csv"), tracker.windows)
    _write_csv(
        os.path.join(out, "gradient_histograms.csv"),
        ["iteration", "layer", "bin_left", "bin_right", "count"],
        hist_rows,
    )
    _write_csv(
        os.path.join(out, "layer_correlations.csv"),
        ["iteration", "layer_i", "layer_j", "pearson"],
        corr_rows,
    )
    print(
        f"analyzed {iteration_count} iterations, {len(shapes)} layers: "
        f"{len(tracker.windows)} windows, {len(corr_rows)} correlation pairs"
    )
    return 0


# ---------------------------------------------------------------- mp-table

MPTABLE_DEFAULTS = {
    "seed": 0,
    "output_dir": "edgc_out",
    "m": 64,
    "n": 128,
    "trials": 64,
}

MPTABLE_SCHEMA = {"seed": None, "output_dir": None, "m": None, "n": None, "trials": None}


def cmd_mp_table(cfg: dict) -> int:
    out = _outdir(cfg)
    m, n, trials = int(cfg["m"]), int(cfg["n"]), int(cfg["trials"])
    if m > n:
        raise ConfigError(f"need m <= n, got ({m}, {n}); pass the transposed shape")
    table = build_g_table(m, n, trials, cfg["seed"])
    path = os.path.join(out, f"gtable_{m}x{n}.csv")
    _write_csv(path, ["r", "g"], [(r, float(table.g_values[r])) for r in range(m + 1)])
    print(f"wrote {path} ({m + 1} rows)")
    return 0


# ---------------------------------------------------------------- entry point

_COMMANDS = {
    "calibrate": (cmd_calibrate, CALIBRATE_DEFAULTS, CALIBRATE_SCHEMA),
    "simulate": (cmd_simulate, SIMULATE_DEFAULTS, SIMULATE_SCHEMA),
    "train-toy": (cmd_train_toy, TRAIN_DEFAULTS, TRAIN_SCHEMA),
    "analyze-trace": (cmd_analyze_trace, ANALYZE_DEFAULTS, ANALYZE_SCHEMA),
    "mp-table": (cmd_mp_table, MPTABLE_DEFAULTS, MPTABLE_SCHEMA),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgc",
        description="Entropy-driven dynamic gradient compression toolkit",
        epilog="EDGC_SEED overrides the config seed; --seed overrides both.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, defaults, _schema) in _COMMANDS.items():
        p = sub.add_parser(name, help=f"{name} run (defaults: {json.dumps(defaults)})")
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--seed", type=int, help="run seed (default from config, else 0)")
        p.add_argument("--output-dir", help="directory for CSV/JSON outputs")
        if name == "mp-table":
            p.add_argument("--m", type=int, help="rows (m <= n)")
            p.add_argument("--n", type=int, help="columns")
            p.add_argument("--trials", type=int, help="Monte-Carlo trials (default 64)")
        if name == "train-toy":
            p.add_argument("--policy", choices=["none", "fixed", "edgc"])
            p.add_argument("--steps", type=int)
            p.add_argument("--fixed-rank", type=int, dest="fixed_rank")
        if name == "analyze-trace":
            p.add_argument("--trace", help="input trace file")
        if name == "calibrate":
            p.add_argument("--measurements-csv", dest="measurements_csv",
                           help="CSV of rank,seconds pairs")
    return parser


def _apply_flag_overrides(name: str, args, cfg: dict) -> None:
    if name == "mp-table":
        for key in ("m", "n", "trials"):
            value = getattr(args, key, None)
            if value is not None:
                cfg[key] = value
    elif name == "train-toy":
        if args.policy is not None:
            cfg["train"]["policy"] = args.policy
        if args.steps is not None:
            cfg["train"]["steps"] = args.steps
        if args.fixed_rank is not None:
            cfg["train"]["fixed_rank"] = args.fixed_rank
    elif name == "analyze-trace":
        if args.trace is not None:
            cfg["source"]["trace"] = args.trace
    elif name == "calibrate":
        if args.measurements_csv is not None:
            cfg["comm"]["measurements_csv"] = args.measurements_csv


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    command, defaults, schema = _COMMANDS[args.command]
    try:
        cfg = _load_config(args, json.loads(json.dumps(defaults)), schema)
        _apply_flag_overrides(args.command, args, cfg)
        return command(cfg)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, TraceFormatError, CalibrationError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EdgcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
