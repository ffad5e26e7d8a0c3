#!/usr/bin/env python3
"""Render every figure an artifact directory supports.

Works on both single-run directories (phantom, reconstruction, edge profile,
L-curve) and sweep directories (reconstruction grids per detector type plus
resolution/contrast trend curves).  Directories missing some artifacts are
fine — each figure is rendered only when its inputs exist, and anything
skipped is listed as a warning.

Examples:
    python scripts/make_figures.py runs/full
    python scripts/make_figures.py runs/sweep runs/sweep_noisy
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from uatomo.plots import plot_outputs  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("directories", nargs="+", metavar="DIR",
                        help="artifact directories to render")
    args = parser.parse_args()
    status = 0
    for directory in args.directories:
        result = plot_outputs(directory)
        for path in result["written"]:
            print(f"figure: {path}")
        for warning in result["warnings"]:
            print(f"skipped: {warning}")
        if not result["written"]:
            print(f"no renderable artifacts in {directory}")
            status = 1
    return status


if __name__ == "__main__":
    sys.exit(main())
