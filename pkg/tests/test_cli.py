"""Tests for the command-line interface (argument handling, stage dispatch,
exit codes) and for figure rendering from artifact directories."""

import json
from pathlib import Path

import pytest

import uatomo.cli as cli
import uatomo.pipeline as pipeline
from uatomo.cli import build_parser, main
from uatomo.config import load_config, preset
from uatomo.errors import SolverError

CONFIG_TOML = """\
scale = "half"
n_sources = 3
n_sensors = 3
dtheta_deg = 60.0
freqs_mhz = [1.0]
eta = 0.003
noise_level = 0.01
seed = 1234
"""


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "mini.toml"
    path.write_text(CONFIG_TOML)
    return path


@pytest.fixture(scope="module")
def completed_run(config_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    assert main(["contrast", "--config", str(config_file), "--out", str(out)]) == 0
    return out


class TestStageDispatch:
    def test_contrast_runs_full_pipeline(self, completed_run, capsys):
        for name in ("tau_true.field", "data_noisy.csv", "jacobian.bin",
                      "recon.field", "contrast.csv", "manifest.json"):
            assert (completed_run / name).exists(), name

    def test_prints_out_dir_and_metrics(self, config_file, completed_run, capsys):
        assert main(["contrast", "--config", str(config_file),
                     "--out", str(completed_run)]) == 0
        printed = capsys.readouterr().out
        assert str(completed_run) in printed
        assert "fwhm_mm_inv=" in printed and "c_max=" in printed

    def test_simulate_stops_early(self, config_file, tmp_path):
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(config_file), "--out", str(out)]) == 0
        assert (out / "data_noisy.csv").exists()
        assert not (out / "jacobian.bin").exists()

    def test_reruns_resume_by_default(self, config_file, completed_run):
        assert main(["contrast", "--config", str(config_file),
                     "--out", str(completed_run)]) == 0
        doc = json.loads((completed_run / "manifest.json").read_text())
        assert all(st["skipped"] for st in doc["stages"].values())

    def test_fresh_flag_recomputes(self, config_file, completed_run):
        assert main(["contrast", "--config", str(config_file),
                     "--out", str(completed_run), "--fresh"]) == 0
        doc = json.loads((completed_run / "manifest.json").read_text())
        assert all(not st["skipped"] for st in doc["stages"].values())


class TestConfigResolution:
    def test_flag_overrides_reach_pipeline(self, monkeypatch, tmp_path):
        seen = {}

        def capture(cfg, **kwargs):
            seen["cfg"] = cfg
            raise SolverError("stop here", diagnostics={})

        monkeypatch.setattr(cli, "run_experiment", capture)
        code = main([
            "simulate", "--scale", "half", "--seed", "7", "--eta", "lcurve",
            "--sensor-type", "pi", "--sensor-width-mm", "5", "--dtheta-deg", "15",
            "--freqs", "1.0,1.25", "--noise", "0.02", "--out", str(tmp_path / "o"),
        ])
        assert code == 3
        cfg = seen["cfg"]
        assert cfg.scale == "half" and cfg.seed == 7 and cfg.eta == "lcurve"
        assert cfg.sensor_type == "pi" and cfg.sensor_width_mm == 5.0
        assert cfg.dtheta_deg == 15.0 and cfg.freqs_mhz == (1.0, 1.25)
        assert cfg.noise_level == 0.02 and cfg.out_dir == str(tmp_path / "o")

    def test_config_file_with_matching_scale_flag(self, config_file, monkeypatch):
        monkeypatch.setattr(cli, "run_experiment",
                            lambda cfg, **k: (_ for _ in ()).throw(SolverError("x", diagnostics={})))
        assert main(["simulate", "--config", str(config_file), "--scale", "half"]) == 3

    def test_defaults_to_full_preset(self, monkeypatch):
        seen = {}

        def capture(cfg, **kwargs):
            seen["cfg"] = cfg
            raise SolverError("stop", diagnostics={})

        monkeypatch.setattr(cli, "run_experiment", capture)
        assert main(["simulate"]) == 3
        assert seen["cfg"] == preset("full")


class TestExitCodes:
    def test_bad_eta_is_config_error(self, tmp_path):
        assert main(["contrast", "--eta", "banana", "--out", str(tmp_path)]) == 2

    def test_bad_freqs_is_config_error(self, tmp_path):
        assert main(["contrast", "--freqs", "1.0,x", "--out", str(tmp_path)]) == 2

    def test_unknown_config_key_is_config_error(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("mystery_knob = 1\n")
        assert main(["simulate", "--config", str(path)]) == 2

    def test_scale_conflict_is_config_error(self, config_file):
        assert main(["simulate", "--config", str(config_file), "--scale", "full"]) == 2

    def test_solver_failure_exit_code(self, config_file, tmp_path, monkeypatch):
        def explode(*a, **k):
            raise SolverError("synthetic", diagnostics={"istop": 7})

        monkeypatch.setattr(pipeline, "simulate_measurements", explode)
        out = tmp_path / "fail"
        assert main(["simulate", "--config", str(config_file), "--out", str(out)]) == 3
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["status"] == "FAILED"

    def test_unknown_subcommand_exits_via_argparse(self):
        with pytest.raises(SystemExit):
            main(["polish"])

    def test_missing_subcommand_exits_via_argparse(self):
        with pytest.raises(SystemExit):
            main([])


class TestSweepCommand:
    def test_clean_sweep_exit_zero(self, tmp_path, monkeypatch, capsys):
        def fake_sweep(cfg, precision="single", **k):
            return {"rows": [], "failures": [], "out_dir": str(tmp_path)}

        monkeypatch.setattr(cli, "run_sweep", fake_sweep)
        assert main(["sweep", "--out", str(tmp_path)]) == 0
        assert "sweep.csv" in capsys.readouterr().out

    def test_partial_sweep_exit_four(self, tmp_path, monkeypatch):
        def fake_sweep(cfg, precision="single", **k):
            return {
                "rows": [],
                "failures": [{"index": 3, "label": "w1_dt15_f5_pi_n1",
                              "error": "SolverError: diverged"}],
                "out_dir": str(tmp_path),
            }

        monkeypatch.setattr(cli, "run_sweep", fake_sweep)
        assert main(["sweep", "--out", str(tmp_path)]) == 4

    def test_real_reduced_sweep_through_cli(self, config_file, tmp_path, monkeypatch):
        monkeypatch.setattr(pipeline, "SWEEP_WIDTHS_MM", (1.0,))
        monkeypatch.setattr(pipeline, "SWEEP_DTHETAS_DEG", (60.0,))
        monkeypatch.setattr(pipeline, "SWEEP_NOISE_LEVELS", (0.0,))
        out = tmp_path / "sweep"
        code = main(["sweep", "--config", str(config_file), "--out", str(out)])
        assert code == 0
        assert (out / "sweep.csv").exists()
        assert (out / "sweep_manifest.json").exists()


class TestParser:
    def test_all_subcommands_registered(self):
        parser = build_parser()
        args = parser.parse_args(["jacobian", "--precision", "double"])
        assert args.command == "jacobian" and args.precision == "double"
        args = parser.parse_args(["plot", "--out", "somewhere"])
        assert args.command == "plot" and args.out == "somewhere"

    def test_plot_requires_out(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["plot"])

    def test_config_round_trip_through_file(self, config_file):
        cfg = load_config(config_file)
        assert cfg.scale == "half" and cfg.freqs_mhz == (1.0,)


class TestPlotCommand:
    def test_plots_from_completed_run(self, completed_run, capsys):
        assert main(["plot", "--out", str(completed_run)]) == 0
        printed = capsys.readouterr().out.strip().splitlines()
        assert printed, "expected at least one figure path"
        for line in printed:
            assert line.endswith(".png")
            assert Path(line).exists()
        names = {Path(line).name for line in printed}
        assert {"phantom.png", "recon.png", "esf.png"} <= names

    def test_plot_on_empty_directory_warns_but_succeeds(self, tmp_path, capsys):
        assert main(["plot", "--out", str(tmp_path)]) == 0
        assert capsys.readouterr().out.strip() == ""

    def test_plot_outputs_contract(self, completed_run):
        from uatomo.plots import plot_outputs

        result = plot_outputs(str(completed_run))
        assert set(result) == {"written", "warnings"}
        assert all(Path(p).exists() for p in result["written"])
