"""Experiment orchestration: staged single runs (phantoms → data → Jacobian →
reconstruction → quality metrics) with a hash-verified manifest for
resumability, and the multi-axis parameter sweep that shares simulated data
and Jacobian rows across nested sub-protocols."""

from __future__ import annotations

import hashlib
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .acquisition import AcquisitionProtocol, DataVector, add_noise, simulate_measurements
from .config import ExperimentConfig, apply_overrides, config_to_toml
from .contrast import contrast_report
from .errors import InvalidArgumentError
from .fieldio import (
    file_sha256,
    read_data_csv,
    read_field,
    read_jacobian,
    write_contrast_csv,
    write_data_csv,
    write_field,
    write_jacobian,
    write_jacobian_header,
    write_lcurve_csv,
    write_manifest,
)
from .grid_medium import MediumMap
from .inversion import (
    build_augmented,
    default_eta_grid,
    lowpass_filter,
    lsqr_solve,
    reconstruct,
)
from .jacobian import JacobianMatrix, assemble_jacobian

__all__ = [
    "run_experiment",
    "run_sweep",
    "sweep_axes",
    "combo_seed",
    "SWEEP_WIDTHS_MM",
    "SWEEP_DTHETAS_DEG",
    "SWEEP_NOISE_LEVELS",
]

log = logging.getLogger("uatomo")

SWEEP_WIDTHS_MM = (1.0, 5.0)
SWEEP_DTHETAS_DEG = (7.5, 15.0, 30.0, 60.0)
SWEEP_NOISE_LEVELS = (0.0, 0.01)
MEMMAP_THRESHOLD_BYTES = 2**31


def _config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(config_to_toml(cfg).encode()).hexdigest()


def _versions() -> dict:
    import scipy

    return {
        "uatomo": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": sys.version.split()[0],
    }


def _jacobian_dtype(sensor_type: str, precision: str):
    if precision == "single":
        return np.complex64 if sensor_type == "ps" else np.float32
    if precision == "double":
        return np.complex128 if sensor_type == "ps" else np.float64
    raise InvalidArgumentError(f"precision must be single|double, got {precision!r}")


def _stage_recorded(manifest: dict | None, name: str, cfg_hash: str, out: Path) -> bool:
    """A stage may be skipped only if the previous manifest has the same
    config hash and every recorded artifact still matches its hash."""
    if not manifest or manifest.get("config_hash") != cfg_hash:
        return False
    st = manifest.get("stages", {}).get(name)
    if not st or st.get("status") != "ok" or not st.get("artifacts"):
        return False
    for rel, digest in st["artifacts"].items():
        p = out / rel
        if not p.exists() or file_sha256(p) != digest:
            return False
    return True


class _Manifest:
    def __init__(self, out: Path, cfg: ExperimentConfig, previous: dict | None):
        self.out = out
        self.doc = {
            "config": cfg.to_dict(),
            "config_hash": _config_hash(cfg),
            "versions": _versions(),
            "stages": {},
            "status": "ok",
        }
        self.previous = previous

    def record(self, name: str, artifacts: list[str], wall_time_s: float, skipped: bool):
        self.doc["stages"][name] = {
            "status": "ok",
            "skipped": skipped,
            "wall_time_s": round(wall_time_s, 6),
            "artifacts": {rel: file_sha256(self.out / rel) for rel in artifacts},
        }
        write_manifest(self.out / "manifest.json", self.doc)

    def fail(self, name: str, exc: BaseException):
        self.doc["status"] = "FAILED"
        self.doc["failed_stage"] = name
        self.doc["error"] = f"{type(exc).__name__}: {exc}"
        write_manifest(self.out / "manifest.json", self.doc)


STAGES = ("phantoms", "simulate", "jacobian", "reconstruct", "contrast")


def run_experiment(
    cfg: ExperimentConfig,
    resume: bool = False,
    jobs: int = 1,
    precision: str = "single",
    label: str | None = None,
    memmap_threshold: int = MEMMAP_THRESHOLD_BYTES,
    until: str = "contrast",
) -> dict:
    """Execute the pipeline into ``cfg.out_dir`` through stage ``until``
    (inclusive); deterministic given the config (including its seed). Returns
    a summary with artifact paths, the reconstruction, and the contrast row.
    With ``resume=True``, stages whose artifacts already exist unchanged
    (same config hash) are loaded from disk instead of recomputed."""
    if until not in STAGES:
        raise InvalidArgumentError(f"until must be one of {STAGES}, got {until!r}")
    last = STAGES.index(until)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid, pml, protocol = cfg.grid(), cfg.pml(), cfg.protocol()
    previous = None
    if resume and (out / "manifest.json").exists():
        import json

        previous = json.loads((out / "manifest.json").read_text())
    manifest = _Manifest(out, cfg, previous)
    cfg_hash = manifest.doc["config_hash"]
    state: dict = {}

    def stage(name, artifacts, compute, load):
        t0 = time.perf_counter()
        skipped = resume and _stage_recorded(previous, name, cfg_hash, out)
        try:
            if skipped:
                load()
            else:
                compute()
        except Exception as exc:
            log.error("stage %r failed: %s", name, exc)
            manifest.fail(name, exc)
            raise
        manifest.record(name, artifacts, time.perf_counter() - t0, skipped)

    # ------------------------------------------------------------ phantoms
    def compute_phantoms():
        state["tau_true"] = cfg.true_medium()
        state["tau0"] = cfg.model_medium()
        write_field(out / "tau_true.field", state["tau_true"].tau, grid)
        write_field(out / "tau0.field", state["tau0"].tau, grid)

    def load_phantoms():
        tau_true, _ = read_field(out / "tau_true.field")
        tau0, _ = read_field(out / "tau0.field")
        c = np.full(grid.shape, cfg.sound_speed)
        state["tau_true"] = MediumMap(grid, tau_true, c)
        state["tau0"] = MediumMap(grid, tau0, c.copy())

    def summary():
        sol = state.get("recon")
        return {
            "out_dir": str(out),
            "recon": sol,
            "h_hat": sol.h_hat if sol is not None else state.get("h_hat"),
            "contrast_row": state.get("row"),
            "report": state.get("report"),
            "manifest": manifest.doc,
        }

    stage("phantoms", ["tau_true.field", "tau0.field"], compute_phantoms, load_phantoms)
    if last < 1:
        return summary()

    # ------------------------------------------------------------ simulate
    def compute_simulate():
        clean = simulate_measurements(state["tau_true"], protocol, grid, pml)
        noisy = add_noise(clean, cfg.noise_level, cfg.seed)
        write_data_csv(out / "data_clean.csv", clean)
        write_data_csv(out / "data_noisy.csv", noisy)
        state["data"] = noisy

    def load_simulate():
        state["data"] = read_data_csv(out / "data_noisy.csv", protocol)

    stage("simulate", ["data_clean.csv", "data_noisy.csv"], compute_simulate, load_simulate)
    if last < 2:
        return summary()

    # ------------------------------------------------------------ jacobian
    def compute_jacobian():
        dtype = _jacobian_dtype(cfg.sensor_type, precision)
        nbytes = protocol.size * grid.n_pixels * np.dtype(dtype).itemsize
        if nbytes > memmap_threshold:
            # too large to hold twice in memory: assemble straight into the
            # destination file, then add the JSON sidecar
            entries_out = np.memmap(
                out / "jacobian.bin", dtype=dtype, mode="w+",
                shape=(protocol.size, grid.n_pixels),
            )
            J = assemble_jacobian(
                state["tau0"], protocol, grid, pml, dtype=dtype, entries_out=entries_out
            )
            entries_out.flush()
            write_jacobian_header(out / "jacobian.bin", J)
            del entries_out, J
            state["J"] = read_jacobian(out / "jacobian.bin")
        else:
            J = assemble_jacobian(state["tau0"], protocol, grid, pml, dtype=dtype)
            write_jacobian(out / "jacobian.bin", J)
            state["J"] = J

    def load_jacobian():
        state["J"] = read_jacobian(out / "jacobian.bin")

    stage("jacobian", ["jacobian.bin", "jacobian.json"], compute_jacobian, load_jacobian)
    if last < 3:
        return summary()

    # ------------------------------------------------------------ reconstruct
    recon_artifacts = ["recon.field", "recon_raw.field"]
    if cfg.eta == "lcurve":
        recon_artifacts.append("lcurve.csv")

    def compute_reconstruct():
        sol = reconstruct(
            state["data"],
            state["tau0"],
            protocol,
            grid,
            pml,
            eta=cfg.eta,
            cutoff=cfg.cutoff_mm_inv,
            jacobian=state["J"],
            jobs=jobs,
        )
        write_field(out / "recon.field", sol.h_hat, grid)
        write_field(out / "recon_raw.field", sol.h_raw, grid)
        if sol.lcurve is not None:
            write_lcurve_csv(out / "lcurve.csv", sol.lcurve)
        state["recon"] = sol

    def load_reconstruct():
        h_hat, _ = read_field(out / "recon.field")
        state["recon"] = None
        state["h_hat"] = h_hat

    stage("reconstruct", recon_artifacts, compute_reconstruct, load_reconstruct)
    if last < 4:
        return summary()
    sol = state.get("recon")
    h_hat = sol.h_hat if sol is not None else state["h_hat"]
    resolved_eta = sol.eta if sol is not None else _resumed_eta(cfg, out)

    # ------------------------------------------------------------ contrast
    def compute_contrast():
        report = contrast_report(h_hat, grid, cfg.edge_roi(), cfg.contrast_roi())
        row = {
            "label": label if label is not None else out.name,
            "n_angles": len(protocol.angles_deg),
            "n_freqs": len(protocol.frequencies),
            "sensor_width_mm": cfg.sensor_width_mm,
            "sensor_type": cfg.sensor_type,
            "noise_pct": 100.0 * cfg.noise_level,
            "eta": float(resolved_eta),
            "fwhm_mm_inv": report.mtf_fwhm,
            "c_max": report.c_max,
            "fit_residual": report.fit.residual_rms,
        }
        write_contrast_csv(out / "contrast.csv", [row])
        state["row"] = row
        state["report"] = report

    def load_contrast():
        from .fieldio import read_contrast_csv

        state["row"] = read_contrast_csv(out / "contrast.csv")[0]
        state["report"] = None

    stage("contrast", ["contrast.csv"], compute_contrast, load_contrast)
    out_summary = summary()
    out_summary["h_hat"] = h_hat
    return out_summary


def _resumed_eta(cfg: ExperimentConfig, out: Path) -> float:
    """Regularization weight of a reconstruction loaded from disk."""
    if isinstance(cfg.eta, (int, float)):
        return float(cfg.eta)
    from .fieldio import read_lcurve_csv
    from .inversion import _max_curvature_index

    curve = read_lcurve_csv(out / "lcurve.csv")
    res = np.log(np.maximum([c[1] for c in curve], 1e-300))
    semi = np.log(np.maximum([c[2] for c in curve], 1e-300))
    return curve[_max_curvature_index(res, semi)][0]


# ---------------------------------------------------------------------- sweep

def combo_seed(base_seed: int, index: int) -> int:
    digest = hashlib.sha256(f"{base_seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def sweep_axes(base_cfg: ExperimentConfig) -> list[dict]:
    """The 64 combinations: width × angle increment × frequency set × sensor
    type × noise, ordered deterministically."""
    full = base_cfg.freqs_mhz
    mid = full[len(full) // 2]
    freq_sets = ((mid,), full)
    combos = []
    for width in SWEEP_WIDTHS_MM:
        for dtheta in SWEEP_DTHETAS_DEG:
            for freqs in freq_sets:
                for sensor_type in ("ps", "pi"):
                    for noise in SWEEP_NOISE_LEVELS:
                        combos.append(
                            dict(
                                sensor_width_mm=width,
                                dtheta_deg=dtheta,
                                freqs_mhz=freqs,
                                sensor_type=sensor_type,
                                noise_level=noise,
                            )
                        )
    return combos


def _subset_rows(master: AcquisitionProtocol, sub: AcquisitionProtocol) -> np.ndarray:
    """Row indices of ``sub``'s measurements inside ``master``'s canonical
    order; requires sub's frequency and angle sets to be subsets."""
    freq_idx = [master.frequencies.index(f) for f in sub.frequencies]
    angle_idx = [master.angles_deg.index(a) for a in sub.angles_deg]
    N, M = master.geometry.n_sources, master.geometry.n_sensors
    rows = np.empty(sub.size, dtype=np.int64)
    k = 0
    for iw in freq_idx:
        for it in angle_idx:
            base = (iw * len(master.angles_deg) + it) * N * M
            rows[k : k + N * M] = np.arange(base, base + N * M)
            k += N * M
    return rows


def _combo_label(c: dict) -> str:
    return (
        f"w{c['sensor_width_mm']:g}_dt{c['dtheta_deg']:g}_f{len(c['freqs_mhz'])}"
        f"_{c['sensor_type']}_n{100 * c['noise_level']:g}"
    )


def run_sweep(
    base_cfg: ExperimentConfig,
    out_dir: str | None = None,
    precision: str = "single",
    max_iter: int = 400,
    write_fields: bool = True,
) -> dict:
    """Run all sweep combinations, sharing the master simulation and Jacobian
    per (sensor width, sensor type) and slicing rows for each combination's
    sub-protocol. Per-combination failures are recorded and the sweep
    continues. Writes ``sweep.csv`` plus per-combination reconstruction
    fields, and returns rows, failures, and the output directory."""
    out = Path(out_dir if out_dir is not None else base_cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid, pml = base_cfg.grid(), base_cfg.pml()
    tau_true = base_cfg.true_medium()
    tau0 = base_cfg.model_medium()
    combos = sweep_axes(base_cfg)
    rows: list[dict] = []
    failures: list[dict] = []

    # group combination indices by shared (width, type) master problem
    groups: dict[tuple, list[int]] = {}
    for idx, combo in enumerate(combos):
        groups.setdefault((combo["sensor_width_mm"], combo["sensor_type"]), []).append(idx)

    for (width, sensor_type), indices in groups.items():
        master_cfg = apply_overrides(
            base_cfg, sensor_width_mm=width, sensor_type=sensor_type
        )
        master_protocol = master_cfg.protocol()
        log.info("sweep master: width=%g mm type=%s (%d combos)", width, sensor_type, len(indices))
        y_master = simulate_measurements(tau_true, master_protocol, grid, pml)
        y0_master = simulate_measurements(tau0, master_protocol, grid, pml)
        J_master = assemble_jacobian(
            tau0,
            master_protocol,
            grid,
            pml,
            dtype=_jacobian_dtype(sensor_type, precision),
        )
        for idx in indices:
            combo = combos[idx]
            label = _combo_label(combo)
            try:
                row, h_hat = _run_combo(
                    base_cfg, combo, idx, label, grid, pml,
                    master_protocol, y_master, y0_master, J_master, max_iter,
                )
                rows.append(row)
                if write_fields:
                    write_field(out / f"recon_{label}.field", h_hat, grid)
            except Exception as exc:  # record and continue per the contract
                log.error("sweep combination %s failed: %s", label, exc)
                failures.append({"index": idx, "label": label,
                                 "error": f"{type(exc).__name__}: {exc}"})
        del y_master, y0_master, J_master

    order = {_combo_label(c): i for i, c in enumerate(combos)}
    rows.sort(key=lambda r: order[r["label"]])
    write_contrast_csv(out / "sweep.csv", rows)
    write_manifest(
        out / "sweep_manifest.json",
        {
            "config": base_cfg.to_dict(),
            "config_hash": _config_hash(base_cfg),
            "versions": _versions(),
            "n_combinations": len(combos),
            "n_failed": len(failures),
            "failures": failures,
            "status": "ok" if not failures else "PARTIAL",
        },
    )
    return {"rows": rows, "failures": failures, "out_dir": str(out)}


def _run_combo(
    base_cfg, combo, idx, label, grid, pml,
    master_protocol, y_master, y0_master, J_master, max_iter,
):
    sub_cfg = apply_overrides(
        base_cfg,
        sensor_width_mm=combo["sensor_width_mm"],
        sensor_type=combo["sensor_type"],
        dtheta_deg=combo["dtheta_deg"],
        freqs_mhz=combo["freqs_mhz"],
        noise_level=combo["noise_level"],
    )
    sub_protocol = sub_cfg.protocol()
    sel = _subset_rows(master_protocol, sub_protocol)
    if sel.size == master_protocol.size:
        entries = J_master.entries
    else:
        entries = J_master.entries[sel]
    J = JacobianMatrix(entries, sub_protocol, grid, J_master.tau0_hash)
    y = DataVector(np.ascontiguousarray(y_master.values[sel]), sub_protocol)
    y0 = DataVector(np.ascontiguousarray(y0_master.values[sel]), sub_protocol)
    seed = combo_seed(base_cfg.seed, idx)
    y_noisy = add_noise(y, combo["noise_level"], seed)
    residual = y_noisy.copy_with(y_noisy.values - y0.values)
    etas = default_eta_grid(J)
    eta = float(np.sqrt(etas[0] * etas[-1]))  # the Frobenius anchor
    sol = lsqr_solve(build_augmented(J, residual, eta), max_iter=max_iter)
    h_hat = lowpass_filter(sol.h_raw, base_cfg.cutoff_mm_inv, grid)
    report = contrast_report(h_hat, grid, sub_cfg.edge_roi(), sub_cfg.contrast_roi())
    row = {
        "label": label,
        "n_angles": len(sub_protocol.angles_deg),
        "n_freqs": len(sub_protocol.frequencies),
        "sensor_width_mm": combo["sensor_width_mm"],
        "sensor_type": combo["sensor_type"],
        "noise_pct": 100.0 * combo["noise_level"],
        "eta": eta,
        "fwhm_mm_inv": report.mtf_fwhm,
        "c_max": report.c_max,
        "fit_residual": report.fit.residual_rms,
    }
    return row, h_hat
