"""Command-line interface.

Subcommands run the pipeline through the named stage (earlier stages are
reused from the output directory's manifest when their artifacts are intact):

- ``simulate``     phantoms + measurement data CSVs
- ``jacobian``     ... + sensitivity matrix
- ``reconstruct``  ... + regularized inversion and low-pass filter
- ``contrast``     ... + quality metrics CSV (the full single-run pipeline)
- ``sweep``        the width x angles x frequencies x type x noise study
- ``plot``         render figures from an artifact directory

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 sweep completed with some failed combinations.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ExperimentConfig, apply_overrides, load_config, preset
from .errors import InvalidArgumentError, SolverError
from .pipeline import run_experiment, run_sweep
from .plots import plot_outputs

__all__ = ["main", "build_parser"]

log = logging.getLogger("uatomo")

_STAGE_OF = {
    "simulate": "simulate",
    "jacobian": "jacobian",
    "reconstruct": "reconstruct",
    "contrast": "contrast",
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="TOML config file")
    p.add_argument("--seed", type=int, metavar="INT")
    p.add_argument("--jobs", type=int, default=1, metavar="INT",
                   help="parallel workers for the regularization grid")
    p.add_argument("--scale", choices=("full", "half"),
                   help="preset scale (must match the config file if both given)")
    p.add_argument("--eta", metavar="FLOAT|lcurve")
    p.add_argument("--sensor-type", choices=("ps", "pi"))
    p.add_argument("--sensor-width-mm", type=float, metavar="FLOAT")
    p.add_argument("--dtheta-deg", type=float, metavar="FLOAT")
    p.add_argument("--freqs", metavar="MHZ[,MHZ...]",
                   help="comma-separated source frequencies in MHz")
    p.add_argument("--noise", type=float, metavar="FLOAT",
                   help="noise level as a fraction of the data maximum")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--precision", choices=("single", "double"), default="single",
                   help="Jacobian storage precision")
    p.add_argument("--fresh", action="store_true",
                   help="recompute every stage even if cached artifacts exist")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uatomo",
        description="Frequency-domain ultrasound absorption tomography toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "write phantoms and measurement data"),
        ("jacobian", "additionally assemble the sensitivity matrix"),
        ("reconstruct", "additionally solve the regularized inversion"),
        ("contrast", "full single-run pipeline including quality metrics"),
        ("sweep", "run the 64-combination parameter study"),
    ):
        _add_common(sub.add_parser(name, help=help_text))
    plot = sub.add_parser("plot", help="render figures from artifacts")
    plot.add_argument("--out", metavar="DIR", required=True,
                      help="artifact directory to render")
    return parser


def _parse_eta(text: str):
    if text == "lcurve":
        return "lcurve"
    try:
        return float(text)
    except ValueError as e:
        raise InvalidArgumentError(f"--eta must be a number or 'lcurve', got {text!r}") from e


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
        if args.scale and args.scale != cfg.scale:
            raise InvalidArgumentError(
                f"--scale {args.scale} conflicts with config file scale {cfg.scale!r}; "
                "set scale in the file or drop the flag"
            )
    else:
        cfg = preset(args.scale or "full")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.eta is not None:
        overrides["eta"] = _parse_eta(args.eta)
    if args.sensor_type is not None:
        overrides["sensor_type"] = args.sensor_type
    if args.sensor_width_mm is not None:
        overrides["sensor_width_mm"] = args.sensor_width_mm
    if args.dtheta_deg is not None:
        overrides["dtheta_deg"] = args.dtheta_deg
    if args.freqs is not None:
        try:
            overrides["freqs_mhz"] = tuple(float(f) for f in args.freqs.split(","))
        except ValueError as e:
            raise InvalidArgumentError(f"bad --freqs value {args.freqs!r}") from e
    if args.noise is not None:
        overrides["noise_level"] = args.noise
    if args.out is not None:
        overrides["out_dir"] = args.out
    return apply_overrides(cfg, **overrides) if overrides else cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot":
            result = plot_outputs(args.out)
            for w in result["warnings"]:
                log.warning("%s", w)
            for p in result["written"]:
                print(p)
            return 0
        cfg = _config_from_args(args)
        if args.command == "sweep":
            result = run_sweep(cfg, precision=args.precision)
            print((result["out_dir"] + "/sweep.csv"))
            if result["failures"]:
                for f in result["failures"]:
                    log.error("failed combination %s: %s", f["label"], f["error"])
                return 4
            return 0
        summary = run_experiment(
            cfg,
            resume=not args.fresh,
            jobs=args.jobs,
            precision=args.precision,
            until=_STAGE_OF[args.command],
        )
        print(summary["out_dir"])
        if summary["contrast_row"] is not None:
            row = summary["contrast_row"]
            print(
                "fwhm_mm_inv=%.6g c_max=%.6g eta=%.6g"
                % (row["fwhm_mm_inv"], row["c_max"], row["eta"])
            )
        return 0
    except InvalidArgumentError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except SolverError as exc:
        log.error("solver failure: %s (%s)", exc, exc.diagnostics)
        return 3


if __name__ == "__main__":
    sys.exit(main())
