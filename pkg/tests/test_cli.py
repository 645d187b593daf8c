"""End-to-end tests for the command-line interface.

Most cases invoke ``main(argv)`` in process (it returns the exit code);
one subprocess test covers the real interpreter entry point.
"""

import json
import subprocess
import sys

import pytest

from demkit.cli import (
    DEFAULT_CONFIG,
    EXIT_BAD_HYPERPARAMS,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_USAGE,
    METRICS_HEADER,
    UsageError,
    fmt9,
    jround,
    load_config,
    main,
    vec9,
)


def small_config(tmp_path, **overrides):
    """A config small enough that every command finishes in well under a
    second; sections in ``overrides`` replace the corresponding block."""
    cfg = {
        "seed": 0,
        "output_dir": str(tmp_path / "out"),
        "mixture": {"C": 5, "d": 2, "radius": 4.0, "sigma": 1.0},
        "source": {
            "arch": "linear",
            "epochs": 2,
            "n": 200,
            "lr": 0.5,
            "momentum": 0.0,
            "batch_size": 32,
            "init_scale": 0.0,
        },
        "stream": {
            "mode": "single_domain",
            "shifts": [{"kind": "rotate2d", "magnitude": 0.4}],
            "batches_per_shift": 3,
            "batch_size": 16,
        },
        "optimizer": {"lr": 0.001, "momentum": 0.9, "scope": "all"},
        "loss": {"name": "em"},
        "lrs": [1e-3, 5e-3],
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestFormatting:
    def test_fmt9(self):
        assert fmt9(0.1) == "0.1"
        assert fmt9(-0.0) == "0"
        assert fmt9(1 / 3) == "0.333333333"
        assert fmt9(1234567891.0) == "1.23456789e+09"

    def test_jround_is_fmt9_fixed_point(self):
        x = jround(1 / 3)
        assert fmt9(x) == "0.333333333"
        assert jround(x) == x

    def test_vec9(self):
        assert vec9([0.5, -0.0, 1.0]) == "0.5;0;1"


class TestLoadConfig:
    def test_sections_merge_over_defaults(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"optimizer": {"lr": 0.01}}))
        cfg = load_config(str(path))
        assert cfg["optimizer"]["lr"] == 0.01
        assert cfg["optimizer"]["momentum"] == DEFAULT_CONFIG["optimizer"]["momentum"]
        assert cfg["seed"] == DEFAULT_CONFIG["seed"]

    def test_shifts_replace_rather_than_merge(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"stream": {"shifts": [{"kind": "translate"}]}}))
        cfg = load_config(str(path))
        assert len(cfg["stream"]["shifts"]) == 1
        assert cfg["stream"]["shifts"][0]["kind"] == "translate"
        assert cfg["stream"]["batches_per_shift"] == 60  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"optimiser": {"lr": 0.01}}))
        with pytest.raises(UsageError, match="schema"):
            load_config(str(path))

    def test_rho_and_priors_conflict(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(
            json.dumps({"stream": {"label_rho": 5.0, "label_priors": [0.5, 0.5]}})
        )
        with pytest.raises(UsageError, match="pick one"):
            load_config(str(path))

    def test_missing_file_and_bad_json(self, tmp_path):
        with pytest.raises(UsageError):
            load_config(str(tmp_path / "absent.json"))
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(UsageError):
            load_config(str(bad))


class TestRewardCurveCommand:
    def test_writes_curve(self, tmp_path, capsys):
        out = tmp_path / "curve.csv"
        code = main([
            "reward-curve", "--c", "10", "--m-min", "0", "--m-max", "1",
            "--m-step", "0.5", "--out", str(out),
        ])
        assert code == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == "m,p_max,reward"
        assert len(lines) == 4  # header + m in {0, 0.5, 1}
        # At zero margin the logits are uniform: p_max = 1/C and the
        # classical reward vanishes exactly.
        assert lines[1] == "0,0.1,0"

    def test_deterministic_bytes(self, tmp_path):
        out = tmp_path / "curve.csv"
        argv = ["reward-curve", "--m-max", "2", "--m-step", "0.25", "--out", str(out)]
        assert main(argv) == EXIT_OK
        first = out.read_bytes()
        assert main(argv) == EXIT_OK
        assert out.read_bytes() == first

    def test_invalid_hyperparameters_exit_2(self, tmp_path, capsys):
        code = main([
            "reward-curve", "--tau", "1.5", "--alpha", "2.0",
            "--out", str(tmp_path / "x.csv"),
        ])
        assert code == EXIT_BAD_HYPERPARAMS
        assert "invalid hyperparameters" in capsys.readouterr().err

    def test_bad_grid_exit_64(self, tmp_path):
        base = ["reward-curve", "--out", str(tmp_path / "x.csv")]
        assert main(base + ["--m-step", "0"]) == EXIT_USAGE
        assert main(base + ["--m-min", "2", "--m-max", "1"]) == EXIT_USAGE
        assert main(base + ["--c", "1"]) == EXIT_USAGE


class TestGradcheckCommand:
    def test_passes_and_reports_every_loss(self, capsys):
        assert main(["gradcheck", "--trials", "2"]) == EXIT_OK
        out = capsys.readouterr().out
        for name in ("em", "detached_em", "cadf_tempered", "dem", "cross_entropy",
                     "adadem", "linear/em", "mlp/adadem"):
            assert f"gradcheck {name}:" in out
        assert "[ok]" in out and "FAIL" not in out

    def test_corrupted_gradient_fails_with_exit_3(self, capsys):
        assert main(["gradcheck", "--trials", "2", "--corrupt"]) == EXIT_NUMERIC
        captured = capsys.readouterr()
        assert "FAIL" in captured.out
        assert "gradcheck failed" in captured.err

    def test_zero_trials_is_usage_error(self):
        assert main(["gradcheck", "--trials", "0"]) == EXIT_USAGE


class TestRunCommand:
    def test_writes_metrics_and_summary(self, tmp_path, capsys):
        cfg = small_config(tmp_path)
        assert main(["run", "--config", str(cfg)]) == EXIT_OK
        assert "run[em/single_domain]" in capsys.readouterr().out

        lines = (tmp_path / "out" / "metrics.csv").read_text().splitlines()
        assert lines[0] == METRICS_HEADER
        assert len(lines) == 3  # one shift row + overall
        assert lines[1].startswith("shift0,rotate2d,2,")
        assert lines[2].startswith("overall,-,-,")

        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["mode"] == "single_domain"
        assert summary["loss"] == "em"
        assert summary["seed"] == 0
        assert 0.0 <= summary["accuracy"] <= 1.0
        assert len(summary["per_shift_accuracy"]) == 1
        assert len(summary["per_shift_baseline"]) == 1

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = small_config(tmp_path)
        assert main(["run", "--config", str(cfg)]) == EXIT_OK
        metrics = (tmp_path / "out" / "metrics.csv").read_bytes()
        summary = (tmp_path / "out" / "summary.json").read_bytes()
        assert main(["run", "--config", str(cfg)]) == EXIT_OK
        assert (tmp_path / "out" / "metrics.csv").read_bytes() == metrics
        assert (tmp_path / "out" / "summary.json").read_bytes() == summary

    def test_continual_mode(self, tmp_path):
        cfg = small_config(
            tmp_path,
            stream={
                "mode": "continual",
                "shifts": [
                    {"kind": "rotate2d", "magnitude": 0.3},
                    {"kind": "rotate2d", "magnitude": 0.5},
                ],
                "batches_per_shift": 3,
                "batch_size": 16,
            },
            loss={"name": "adadem"},
        )
        assert main(["run", "--config", str(cfg)]) == EXIT_OK
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["mode"] == "continual"
        assert len(summary["per_shift_accuracy"]) == 2

    def test_schema_violation_exit_64(self, tmp_path, capsys):
        cfg = small_config(tmp_path, typo_section={"x": 1})
        assert main(["run", "--config", str(cfg)]) == EXIT_USAGE
        assert "schema violation" in capsys.readouterr().err

    def test_invalid_dem_config_exit_2(self, tmp_path, capsys):
        cfg = small_config(tmp_path, loss={"name": "dem", "tau": 1.5, "alpha": 2.0})
        assert main(["run", "--config", str(cfg)]) == EXIT_BAD_HYPERPARAMS
        assert "invalid hyperparameters" in capsys.readouterr().err

    def test_three_dimensional_mixture_rejected(self, tmp_path):
        cfg = small_config(tmp_path, mixture={"C": 5, "d": 3, "radius": 4.0, "sigma": 1.0})
        assert main(["run", "--config", str(cfg)]) == EXIT_USAGE

    def test_label_priors_length_checked(self, tmp_path):
        cfg = small_config(
            tmp_path,
            stream={
                "mode": "single_domain",
                "shifts": [{"kind": "translate"}],
                "batches_per_shift": 2,
                "batch_size": 8,
                "label_priors": [0.5, 0.5],  # mixture has five classes
            },
        )
        assert main(["run", "--config", str(cfg)]) == EXIT_USAGE


class TestGridSearchCommand:
    GRID = {
        "tau_min": 1.0, "tau_max": 2.0, "alpha_min": 0.0, "alpha_max": 2.0,
        "step": 1.0, "subset_fraction": 0.5,
    }

    def test_writes_table_and_summary(self, tmp_path):
        cfg = small_config(tmp_path, grid=self.GRID)
        assert main(["grid-search", "--config", str(cfg)]) == EXIT_OK

        lines = (tmp_path / "out" / "grid.csv").read_text().splitlines()
        assert lines[0] == "tau,alpha,valid,accuracy"
        assert len(lines) == 7  # 2 taus x 3 alphas
        invalid = [l for l in lines[1:] if l.split(",")[2] == "0"]
        assert invalid == ["2,2,0,"]  # tau=2, alpha=2 breaks tau <= 2/alpha

        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["total_points"] == 6
        assert summary["valid_points"] == 5
        assert summary["classical"]["tau"] == 1.0
        assert summary["best"]["subset_accuracy"] >= summary["classical"]["subset_accuracy"]
        for key in ("tau", "alpha", "subset_accuracy", "full_accuracy"):
            assert key in summary["best"]

    def test_classical_point_absent_gives_null(self, tmp_path):
        grid = {
            "tau_min": 1.5, "tau_max": 1.5, "alpha_min": 0.0, "alpha_max": 0.0,
            "step": 0.5, "subset_fraction": 0.5,
        }
        cfg = small_config(tmp_path, grid=grid)
        assert main(["grid-search", "--config", str(cfg)]) == EXIT_OK
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["classical"] is None

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = small_config(tmp_path, grid=self.GRID)
        assert main(["grid-search", "--config", str(cfg)]) == EXIT_OK
        first = (tmp_path / "out" / "grid.csv").read_bytes()
        assert main(["grid-search", "--config", str(cfg)]) == EXIT_OK
        assert (tmp_path / "out" / "grid.csv").read_bytes() == first


class TestLrSweepCommand:
    def test_writes_sweep(self, tmp_path, capsys):
        cfg = small_config(tmp_path)
        assert main(["lr-sweep", "--config", str(cfg)]) == EXIT_OK
        assert "tolerance count" in capsys.readouterr().out

        lines = (tmp_path / "out" / "lr_sweep.csv").read_text().splitlines()
        assert lines[0] == "lr,accuracy"
        assert len(lines) == 3
        assert lines[1].startswith("0.001,")

        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["loss"] == "em"
        assert summary["lrs"] == [0.001, 0.005]
        assert 0 <= summary["tolerance_count"] <= 2
        assert len(summary["accuracies"]) == 2

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = small_config(tmp_path)
        assert main(["lr-sweep", "--config", str(cfg)]) == EXIT_OK
        first = (tmp_path / "out" / "lr_sweep.csv").read_bytes()
        assert main(["lr-sweep", "--config", str(cfg)]) == EXIT_OK
        assert (tmp_path / "out" / "lr_sweep.csv").read_bytes() == first


class TestArgumentErrors:
    def test_unknown_option_exits_64(self):
        with pytest.raises(SystemExit) as exc:
            main(["reward-curve", "--bogus"])
        assert exc.value.code == EXIT_USAGE

    def test_missing_config_flag_exits_64(self):
        with pytest.raises(SystemExit) as exc:
            main(["run"])
        assert exc.value.code == EXIT_USAGE

    def test_no_command_exits_64(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == EXIT_USAGE


class TestSubprocessEntryPoint:
    def test_module_invocation(self, tmp_path):
        out = tmp_path / "curve.csv"
        proc = subprocess.run(
            [sys.executable, "-m", "demkit.cli", "reward-curve",
             "--m-max", "1", "--m-step", "0.5", "--out", str(out)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert out.exists()
        assert "reward-curve: wrote" in proc.stdout
