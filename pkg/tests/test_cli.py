import csv
import json
import math

import numpy as np
import pytest

from edgc import GradientMatrix, SynthSchedule, synth_stream, write_trace
from edgc.cli import main


def run(args):
    return main([str(a) for a in args])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


class TestMpTable:
    def test_writes_full_table(self, tmp_path):
        out = tmp_path / "out"
        assert run(["mp-table", "--m", 16, "--n", 64, "--output-dir", out]) == 0
        header, rows = read_csv(out / "gtable_16x64.csv")
        assert header == ["r", "g"]
        assert len(rows) == 17
        assert int(rows[-1][0]) == 16 and float(rows[-1][1]) == 0.0

    def test_rank_zero_near_sqrt_mn(self, tmp_path):
        out = tmp_path / "out"
        run(["mp-table", "--m", 64, "--n", 128, "--output-dir", out])
        _, rows = read_csv(out / "gtable_64x128.csv")
        assert float(rows[0][1]) == pytest.approx(math.sqrt(64 * 128), rel=0.03)

    def test_m_greater_than_n_exits_2(self, tmp_path, capsys):
        assert run(["mp-table", "--m", 8, "--n", 4, "--output-dir", tmp_path]) == 2
        assert "transpose" in capsys.readouterr().err

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["mp-table", "--m", 32, "--n", 48, "--seed", 7, "--output-dir", a])
        run(["mp-table", "--m", 32, "--n", 48, "--seed", 7, "--output-dir", b])
        assert (a / "gtable_32x48.csv").read_bytes() == (b / "gtable_32x48.csv").read_bytes()


class TestCalibrate:
    def test_exact_line_recovers_eta(self, tmp_path, capsys):
        csv_path = tmp_path / "meas.csv"
        csv_path.write_text("rank,seconds\n" + "\n".join(f"{r},{0.5 * r}" for r in (4, 8, 16)) + "\n")
        out = tmp_path / "out"
        assert run(["calibrate", "--measurements-csv", csv_path, "--output-dir", out]) == 0
        model = json.loads((out / "comm_model.json").read_text())
        assert model["eta"] == pytest.approx(0.5, abs=1e-12)
        assert model["mape"] == pytest.approx(0.0, abs=1e-12)

    def test_missing_file_exits_2(self, tmp_path):
        assert run(["calibrate", "--measurements-csv", tmp_path / "nope.csv",
                    "--output-dir", tmp_path]) == 2

    def test_no_source_exits_2(self, tmp_path):
        assert run(["calibrate", "--output-dir", tmp_path]) == 2

    def test_measure_mode_monotone_times(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "cal.json",
            {"comm": {"measure": {"m": 64, "n": 64, "ranks": [8, 16, 32], "repeats": 200}}},
        )
        out = tmp_path / "out"
        assert run(["calibrate", "--config", cfg, "--output-dir", out]) == 0
        _, rows = read_csv(out / "measurements.csv")
        times = [float(r[1]) for r in rows]
        assert times[0] <= times[1] <= times[2]
        model = json.loads((out / "comm_model.json").read_text())
        assert model["compress_cost"][1] >= 0.0

    def test_determinism_csv_mode(self, tmp_path):
        csv_path = tmp_path / "meas.csv"
        csv_path.write_text("rank,seconds\n4,1.04\n8,1.96\n16,4.08\n")
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            run(["calibrate", "--measurements-csv", csv_path, "--output-dir", out])
            outs.append((out / "comm_model.json").read_bytes())
        assert outs[0] == outs[1]


class TestSimulate:
    def small_config(self, tmp_path, windows=30, tau=400.0, window=20):
        return write_config(
            tmp_path,
            "sim.json",
            {
                "pipeline": {
                    "num_stages": 4,
                    "micro_batches": 4,
                    "t_forward_micro": 0.001,
                    "t_backward_micro": 0.002,
                    "stage_shapes": [[[256, 256]] * 4] * 4,
                },
                "controller": {"window": window},
                "entropy": {"kind": "exp", "sigma0": 1.0, "tau": tau, "windows": windows},
            },
        )

    def test_default_demo_reduction_positive_and_consistent(self, tmp_path, capsys):
        cfg = self.small_config(tmp_path)
        out = tmp_path / "out"
        assert run(["simulate", "--config", cfg, "--output-dir", out]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["comm_seconds_reduction"] > 0.0
        assert report["comm_seconds_reduction"] == pytest.approx(
            1.0 - report["total_comm_seconds"] / report["baseline_comm_seconds"], abs=1e-12
        )
        line = capsys.readouterr().out
        assert "reduction" in line

    def test_warmup_only_config_reports_zero_reduction(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "sim.json",
            {
                "pipeline": {
                    "num_stages": 2,
                    "micro_batches": 2,
                    "t_forward_micro": 0.001,
                    "t_backward_micro": 0.002,
                    "stage_shapes": [[[128, 128]]] * 2,
                },
                "controller": {"window": 10},
                # constant sigma: entropy never drops, warm-up never ends
                "entropy": {"kind": "piecewise", "breakpoints": [[0, 1.0]], "windows": 10},
            },
        )
        out = tmp_path / "out"
        assert run(["simulate", "--config", cfg, "--output-dir", out]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["comm_seconds_reduction"] == 0.0

    def test_timeline_matches_report_totals(self, tmp_path):
        cfg = self.small_config(tmp_path, windows=12)
        out = tmp_path / "out"
        run(["simulate", "--config", cfg, "--output-dir", out])
        report = json.loads((out / "report.json").read_text())
        _, rows = read_csv(out / "timeline.csv")
        assert len(rows) == report["iterations"] * 4
        total = sum(float(r[3]) - float(r[2]) for r in rows)
        assert total == pytest.approx(report["total_comm_seconds"], rel=1e-9)

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "bad.json", {"pipelines": {}})
        assert run(["simulate", "--config", cfg, "--output-dir", tmp_path]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_deterministic_outputs(self, tmp_path):
        cfg = self.small_config(tmp_path, windows=10)
        blobs = []
        for name in ("a", "b"):
            out = tmp_path / name
            run(["simulate", "--config", cfg, "--seed", 5, "--output-dir", out])
            blobs.append(
                tuple((out / f).read_bytes() for f in ("report.json", "timeline.csv", "decisions.csv"))
            )
        assert blobs[0] == blobs[1]

    def test_entropy_from_csv(self, tmp_path):
        wins = tmp_path / "wins.csv"
        wins.write_text(
            "window_index,mean_entropy,samples_used\n"
            + "".join(f"{k},{1.4 - 0.07 * k},50\n" for k in range(10))
        )
        cfg = write_config(
            tmp_path,
            "simcsv.json",
            {
                "pipeline": {
                    "num_stages": 2,
                    "micro_batches": 4,
                    "t_forward_micro": 0.001,
                    "t_backward_micro": 0.002,
                    "stage_shapes": [[[256, 256]], [[256, 256]]],
                },
                "controller": {"window": 25},
                "entropy": {"kind": "csv", "csv": str(wins)},
            },
        )
        out = tmp_path / "out"
        assert run(["simulate", "--config", cfg, "--output-dir", out]) == 0
        _, rows = read_csv(out / "decisions.csv")
        assert len(rows) == 10
        active = [r for r in rows if r[2]]
        assert active, "controller never activated from the CSV stream"


class TestTrainToy:
    def test_none_policy_row_count(self, tmp_path):
        out = tmp_path / "out"
        assert run(["train-toy", "--policy", "none", "--steps", 10, "--output-dir", out]) == 0
        _, rows = read_csv(out / "loss.csv")
        assert len(rows) == 10

    def test_edgc_policy_emits_rank_history(self, tmp_path):
        out = tmp_path / "out"
        assert run(["train-toy", "--policy", "edgc", "--steps", 600, "--output-dir", out]) == 0
        header, rows = read_csv(out / "ranks.csv")
        assert header == ["window_index", "mean_entropy", "r_stage_1", "t_pred"]
        assert rows, "no controller decisions logged"
        assert (out / "windows.csv").exists()

    def test_divergent_lr_exits_3(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "div.json", {"train": {"lr": 100.0, "policy": "none"}})
        assert run(["train-toy", "--config", cfg, "--steps", 400, "--output-dir", tmp_path]) == 3
        assert "non-finite" in capsys.readouterr().err

    def test_deterministic_outputs(self, tmp_path):
        blobs = []
        for name in ("a", "b"):
            out = tmp_path / name
            run(["train-toy", "--policy", "edgc", "--steps", 400, "--seed", 3,
                 "--output-dir", out])
            blobs.append(
                tuple((out / f).read_bytes() for f in ("loss.csv", "ledger.csv", "ranks.csv"))
            )
        assert blobs[0] == blobs[1]

    def test_env_seed_override(self, tmp_path, monkeypatch):
        out_env = tmp_path / "env"
        monkeypatch.setenv("EDGC_SEED", "11")
        run(["train-toy", "--policy", "none", "--steps", 20, "--output-dir", out_env])
        monkeypatch.delenv("EDGC_SEED")
        out_plain = tmp_path / "plain"
        run(["train-toy", "--policy", "none", "--steps", 20, "--seed", 11,
             "--output-dir", out_plain])
        assert (out_env / "loss.csv").read_bytes() == (out_plain / "loss.csv").read_bytes()


def make_decaying_trace(path, iterations=400, shape=(48, 48), tau=150.0):
    sched = SynthSchedule(shapes=(shape,), iterations=iterations, seed=5, tau=tau, sigma0=2.0)
    write_trace(path, synth_stream(sched))


class TestAnalyzeTrace:
    def test_decaying_trace_entropy_strictly_decreasing(self, tmp_path):
        trace = tmp_path / "decay.edgt"
        make_decaying_trace(trace)
        out = tmp_path / "out"
        cfg = write_config(tmp_path, "an.json", {"window": 100, "sampler": {"alpha": 0.25}})
        assert run(["analyze-trace", "--config", cfg, "--trace", trace,
                    "--output-dir", out]) == 0
        _, rows = read_csv(out / "entropy_windows.csv")
        means = [float(r[1]) for r in rows]
        assert len(means) == 4
        assert all(a > b for a, b in zip(means, means[1:]))

    def test_identical_layers_give_unit_correlations(self, tmp_path):
        trace = tmp_path / "same.edgt"
        rng = np.random.default_rng(0)
        frames = []
        for t in range(4):
            base = rng.standard_normal((16, 16))
            frames.append([GradientMatrix(base.copy(), layer_id=k) for k in range(3)])
        write_trace(trace, frames)
        out = tmp_path / "out"
        run(["analyze-trace", "--trace", trace, "--output-dir", out])
        _, rows = read_csv(out / "layer_correlations.csv")
        assert rows
        assert all(float(r[3]) == pytest.approx(1.0, abs=1e-12) for r in rows)

    def test_random_layers_weakly_correlated(self, tmp_path):
        trace = tmp_path / "rand.edgt"
        rng = np.random.default_rng(1)
        frames = [[rng.standard_normal((64, 64)) for _ in range(3)] for _ in range(3)]
        write_trace(trace, frames)
        out = tmp_path / "out"
        run(["analyze-trace", "--trace", trace, "--output-dir", out])
        _, rows = read_csv(out / "layer_correlations.csv")
        for r in rows:
            if r[1] != r[2]:
                assert abs(float(r[3])) <= 4.0 / math.sqrt(64 * 64)

    def test_histogram_rows_emitted(self, tmp_path):
        trace = tmp_path / "h.edgt"
        make_decaying_trace(trace, iterations=40)
        out = tmp_path / "out"
        cfg = write_config(tmp_path, "an.json", {"window": 20})
        run(["analyze-trace", "--config", cfg, "--trace", trace, "--output-dir", out])
        header, rows = read_csv(out / "gradient_histograms.csv")
        assert header == ["iteration", "layer", "bin_left", "bin_right", "count"]
        sampled_iters = {int(r[0]) for r in rows}
        assert sampled_iters == {0, 10, 20, 30}

    def test_truncated_trace_exits_2(self, tmp_path, capsys):
        trace = tmp_path / "t.edgt"
        make_decaying_trace(trace, iterations=20)
        data = trace.read_bytes()
        trace.write_bytes(data[:-16])
        assert run(["analyze-trace", "--trace", trace, "--output-dir", tmp_path]) == 2
        assert "missing" in capsys.readouterr().err

    def test_missing_trace_exits_2(self, tmp_path):
        assert run(["analyze-trace", "--output-dir", tmp_path]) == 2

    def test_deterministic_outputs(self, tmp_path):
        trace = tmp_path / "d.edgt"
        make_decaying_trace(trace, iterations=120)
        blobs = []
        for name in ("a", "b"):
            out = tmp_path / name
            run(["analyze-trace", "--trace", trace, "--seed", 2, "--output-dir", out])
            blobs.append(
                tuple(
                    (out / f).read_bytes()
                    for f in ("entropy_windows.csv", "gradient_histograms.csv",
                              "layer_correlations.csv")
                )
            )
        assert blobs[0] == blobs[1]
