"""Figure rendering from run artifacts. Every plot is optional: missing
inputs produce a warning entry and the renderer moves on, so a partially
complete run directory still yields whatever figures its artifacts support."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .config import ExperimentConfig, preset
from .contrast import erf_model, extract_esf, fit_erf
from .fieldio import read_contrast_csv, read_field, read_lcurve_csv

__all__ = ["plot_outputs"]


def _load_config(run_dir: Path) -> ExperimentConfig | None:
    for name in ("manifest.json", "sweep_manifest.json"):
        p = run_dir / name
        if p.exists():
            doc = json.loads(p.read_text())
            cfg = dict(doc.get("config", {}))
            if not cfg:
                return None
            cfg["freqs_mhz"] = tuple(cfg.get("freqs_mhz", ()))
            scale = cfg.pop("scale", "full")
            try:
                return preset(scale, **cfg)
            except Exception:
                return None
    return None


def _imshow_field(ax, values, grid, title, vmin=None, vmax=None):
    x0, y0 = grid.origin
    extent = [
        x0 - grid.dx / 2,
        x0 + (grid.Lx - 0.5) * grid.dx,
        y0 - grid.dy / 2,
        y0 + (grid.Ly - 0.5) * grid.dy,
    ]
    im = ax.imshow(values, origin="lower", extent=extent, vmin=vmin, vmax=vmax,
                   cmap="viridis")
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    return im


def _plot_field_file(run_dir, name, out_name, title, written, warnings):
    p = run_dir / name
    if not p.exists():
        warnings.append(f"missing {name}; skipped {out_name}")
        return
    values, grid = read_field(p)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = _imshow_field(ax, values, grid, title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(run_dir / out_name, dpi=130)
    plt.close(fig)
    written.append(str(run_dir / out_name))


def _plot_esf(run_dir, cfg, written, warnings):
    p = run_dir / "recon.field"
    if not p.exists() or cfg is None:
        warnings.append("missing recon.field or config; skipped esf.png")
        return
    values, grid = read_field(p)
    try:
        pos, esf = extract_esf(values, cfg.edge_roi(), grid)
        fit = fit_erf(pos, esf)
    except Exception as exc:
        warnings.append(f"esf extraction failed: {exc}")
        return
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(pos, esf, "k-", label="ensemble edge profile")
    xs = np.linspace(pos.min(), pos.max(), 400)
    ax.plot(xs, erf_model(xs, fit.B, fit.mu, fit.sigma, fit.r), "r--",
            label="erf fit")
    ax.set_xlabel("distance from edge (mm)")
    ax.set_ylabel("reconstructed absorption difference")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(run_dir / "esf.png", dpi=130)
    plt.close(fig)
    written.append(str(run_dir / "esf.png"))


def _plot_lcurve(run_dir, written, warnings):
    p = run_dir / "lcurve.csv"
    if not p.exists():
        warnings.append("missing lcurve.csv; skipped lcurve.png")
        return
    curve = read_lcurve_csv(p)
    fig, ax = plt.subplots(figsize=(5, 4))
    res = [c[1] for c in curve]
    semi = [c[2] for c in curve]
    ax.loglog(res, semi, "o-")
    for eta, r, s in curve[:: max(1, len(curve) // 5)]:
        ax.annotate(f"{eta:.2g}", (r, s), fontsize=7)
    ax.set_xlabel("residual norm")
    ax.set_ylabel("gradient seminorm")
    fig.tight_layout()
    fig.savefig(run_dir / "lcurve.png", dpi=130)
    plt.close(fig)
    written.append(str(run_dir / "lcurve.png"))


def _sweep_field_groups(run_dir):
    groups: dict[tuple, dict] = {}
    for p in sorted(run_dir.glob("recon_*.field")):
        stem = p.stem[len("recon_"):]
        parts = stem.split("_")  # w{}, dt{}, f{}, {type}, n{}
        if len(parts) != 5:
            continue
        key = (parts[0], parts[1], parts[2])
        groups.setdefault(key, {})[(parts[3], parts[4])] = p
    return groups


def _plot_sweep_grids(run_dir, written, warnings):
    groups = _sweep_field_groups(run_dir)
    if not groups:
        warnings.append("no recon_*.field files; skipped reconstruction grids")
        return
    for key, members in groups.items():
        fields = {}
        for quad, p in members.items():
            fields[quad], grid = read_field(p)
        vmax = max(np.max(np.abs(v)) for v in fields.values())
        quads = [("ps", "n0"), ("pi", "n0"), ("ps", "n1"), ("pi", "n1")]
        fig, axes = plt.subplots(2, 2, figsize=(9, 8))
        for ax, quad in zip(axes.ravel(), quads):
            if quad in fields:
                im = _imshow_field(
                    ax, fields[quad], grid,
                    f"{quad[0]} / noise {quad[1][1:]}%", vmin=-vmax, vmax=vmax,
                )
            else:
                ax.axis("off")
        fig.colorbar(im, ax=axes.ravel().tolist(), shrink=0.7)
        name = "recon_grid_{}_{}_{}.png".format(*key)
        fig.savefig(run_dir / name, dpi=110)
        plt.close(fig)
        written.append(str(run_dir / name))


def _plot_contrast_curves(run_dir, written, warnings):
    p = run_dir / "sweep.csv"
    if not p.exists():
        warnings.append("missing sweep.csv; skipped contrast curves")
        return
    rows = read_contrast_csv(p)
    widths = sorted({r["sensor_width_mm"] for r in rows})
    nfreqs = sorted({r["n_freqs"] for r in rows})
    for width in widths:
        fig, axes = plt.subplots(len(nfreqs), 2, figsize=(9, 4 * len(nfreqs)),
                                 squeeze=False)
        for i, nf in enumerate(nfreqs):
            for j, metric in enumerate(("fwhm_mm_inv", "c_max")):
                ax = axes[i][j]
                for sensor_type, style in (("ps", "-"), ("pi", "--")):
                    for noise, marker in ((0.0, "o"), (1.0, "D")):
                        pts = sorted(
                            (r["n_angles"], r[metric])
                            for r in rows
                            if r["sensor_width_mm"] == width
                            and r["n_freqs"] == nf
                            and r["sensor_type"] == sensor_type
                            and r["noise_pct"] == noise
                        )
                        if pts:
                            ax.plot(*zip(*pts), style, marker=marker,
                                    label=f"{sensor_type} noise={noise:g}%")
                ax.set_xlabel("number of angles")
                ax.set_ylabel(metric)
                ax.set_title(f"{nf} frequencies", fontsize=9)
                ax.legend(fontsize=7)
        fig.suptitle(f"sensor width {width:g} mm")
        fig.tight_layout()
        name = f"contrast_curves_w{width:g}.png"
        fig.savefig(run_dir / name, dpi=120)
        plt.close(fig)
        written.append(str(run_dir / name))


def plot_outputs(run_dir) -> dict:
    """Render all figures the directory's artifacts support; returns
    ``{"written": [...], "warnings": [...]}``."""
    run_dir = Path(run_dir)
    written: list[str] = []
    warnings: list[str] = []
    cfg = _load_config(run_dir)
    _plot_field_file(run_dir, "tau_true.field", "phantom.png",
                     "true absorption", written, warnings)
    _plot_field_file(run_dir, "recon.field", "recon.png",
                     "reconstructed absorption difference", written, warnings)
    _plot_esf(run_dir, cfg, written, warnings)
    _plot_lcurve(run_dir, written, warnings)
    _plot_sweep_grids(run_dir, written, warnings)
    _plot_contrast_curves(run_dir, written, warnings)
    return {"written": written, "warnings": warnings}
