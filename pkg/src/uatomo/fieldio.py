"""Deterministic on-disk artifact formats.

- real 2-D fields: one JSON header line + raw little-endian float64,
  row-major;
- data vectors: CSV with columns ``omega_hz, theta_deg, n, m, re, im``
  in canonical row order, 17 significant digits;
- Jacobians: JSON header beside a raw binary block, loadable as a memmap;
- L-curve and contrast-report CSVs;
- run manifests (JSON) and SHA-256 helpers.

All writes go through a temp-file-then-rename so partially written artifacts
never appear under their final name.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionProtocol, ArrayGeometry, DataVector
from .errors import InvalidArgumentError
from .grid_medium import Grid
from .jacobian import JacobianMatrix

__all__ = [
    "write_field",
    "read_field",
    "write_data_csv",
    "read_data_csv",
    "write_jacobian",
    "read_jacobian",
    "write_lcurve_csv",
    "read_lcurve_csv",
    "CONTRAST_COLUMNS",
    "write_contrast_csv",
    "read_contrast_csv",
    "write_manifest",
    "read_manifest",
    "file_sha256",
    "grid_to_dict",
    "grid_from_dict",
    "protocol_to_dict",
    "protocol_from_dict",
]

_FMT = "%.17g"  # round-trips float64 exactly


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp.{os.getpid()}")
    try:
        with open(tmp, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_line(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode() + b"\n"


def grid_to_dict(grid: Grid) -> dict:
    return {
        "Lx": grid.Lx,
        "Ly": grid.Ly,
        "dx": grid.dx,
        "dy": grid.dy,
        "origin": [grid.origin[0], grid.origin[1]],
    }


def grid_from_dict(d: dict) -> Grid:
    return Grid(int(d["Lx"]), int(d["Ly"]), float(d["dx"]), float(d["dy"]),
                (float(d["origin"][0]), float(d["origin"][1])))


def protocol_to_dict(protocol: AcquisitionProtocol) -> dict:
    g = protocol.geometry
    return {
        "geometry": {
            "n_sources": g.n_sources,
            "n_sensors": g.n_sensors,
            "array_length": g.array_length,
            "separation": g.separation,
            "sensor_width": g.sensor_width,
            "center": [g.center[0], g.center[1]],
        },
        "frequencies": list(protocol.frequencies),
        "angles_deg": list(protocol.angles_deg),
        "sensor_type": protocol.sensor_type,
        "source_amplitude": protocol.source_amplitude,
    }


def protocol_from_dict(d: dict) -> AcquisitionProtocol:
    g = d["geometry"]
    geom = ArrayGeometry(
        n_sources=int(g["n_sources"]),
        n_sensors=int(g["n_sensors"]),
        array_length=float(g["array_length"]),
        separation=float(g["separation"]),
        sensor_width=float(g["sensor_width"]),
        center=(float(g["center"][0]), float(g["center"][1])),
    )
    return AcquisitionProtocol(
        geom,
        tuple(float(f) for f in d["frequencies"]),
        tuple(float(a) for a in d["angles_deg"]),
        sensor_type=str(d["sensor_type"]),
        source_amplitude=float(d["source_amplitude"]),
    )


# ---------------------------------------------------------------- fields

def write_field(path, values: np.ndarray, grid: Grid) -> None:
    values = np.asarray(values)
    if np.iscomplexobj(values):
        raise InvalidArgumentError("field files store real fields only")
    if values.shape != grid.shape:
        raise InvalidArgumentError(f"field shape {values.shape} != grid {grid.shape}")
    header = {"kind": "field", "dtype": "<f8", "grid": grid_to_dict(grid)}
    body = np.ascontiguousarray(values, dtype="<f8").tobytes()
    _atomic_write_bytes(Path(path), _json_line(header) + body)


def read_field(path) -> tuple[np.ndarray, Grid]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        if header.get("kind") != "field":
            raise InvalidArgumentError(f"{path} is not a field file")
        grid = grid_from_dict(header["grid"])
        body = f.read()
    values = np.frombuffer(body, dtype="<f8").reshape(grid.shape).copy()
    return values, grid


# ---------------------------------------------------------------- data CSV

def write_data_csv(path, data: DataVector) -> None:
    table = data.index_table()
    lines = ["omega_hz,theta_deg,n,m,re,im"]
    for k in range(data.values.shape[0]):
        v = data.values[k]
        lines.append(
            ",".join(
                (
                    _FMT % (table["omega"][k] / (2.0 * np.pi)),
                    _FMT % table["theta_deg"][k],
                    str(int(table["n"][k])),
                    str(int(table["m"][k])),
                    _FMT % v.real,
                    _FMT % v.imag,
                )
            )
        )
    _atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode())


def read_data_csv(path, protocol: AcquisitionProtocol) -> DataVector:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "omega_hz,theta_deg,n,m,re,im":
            raise InvalidArgumentError(f"unexpected data CSV header: {header!r}")
        rows = [line.strip().split(",") for line in f if line.strip()]
    if len(rows) != protocol.size:
        raise InvalidArgumentError(
            f"{path} has {len(rows)} rows, protocol expects {protocol.size}"
        )
    table = protocol.index_table()
    values = np.empty(protocol.size, dtype=np.complex128)
    for k, row in enumerate(rows):
        if int(row[2]) != table["n"][k] or int(row[3]) != table["m"][k]:
            raise InvalidArgumentError(f"row {k} of {path} is out of canonical order")
        values[k] = complex(float(row[4]), float(row[5]))
    return DataVector(values, protocol)


# ---------------------------------------------------------------- Jacobian

_DTYPE_TAGS = {"<c16": np.complex128, "<c8": np.complex64, "<f8": np.float64, "<f4": np.float32}


def _jacobian_header(J: JacobianMatrix) -> dict:
    tag = np.dtype(J.entries.dtype).newbyteorder("<").str
    if tag not in _DTYPE_TAGS:
        raise InvalidArgumentError(f"unsupported Jacobian dtype {J.entries.dtype}")
    return {
        "kind": "jacobian",
        "dtype": tag,
        "shape": [int(J.shape[0]), int(J.shape[1])],
        "grid": grid_to_dict(J.grid),
        "protocol": protocol_to_dict(J.protocol),
        "tau0_hash": J.tau0_hash,
    }


def write_jacobian_header(path, J: JacobianMatrix) -> None:
    """Write only the JSON sidecar for entries already on disk at ``path``
    (used when the matrix was assembled straight into a memory map)."""
    _atomic_write_bytes(Path(path).with_suffix(".json"), _json_line(_jacobian_header(J)))


def write_jacobian(path, J: JacobianMatrix) -> None:
    """Write ``<path>`` (raw entries) and ``<path stem>.json`` (header)."""
    path = Path(path)
    header = _jacobian_header(J)
    body = np.ascontiguousarray(J.entries, dtype=header["dtype"]).tobytes()
    _atomic_write_bytes(path, body)
    _atomic_write_bytes(path.with_suffix(".json"), _json_line(header))


def read_jacobian(path, mmap: bool = True) -> JacobianMatrix:
    path = Path(path)
    with open(path.with_suffix(".json"), "rb") as f:
        header = json.loads(f.readline().decode())
    if header.get("kind") != "jacobian":
        raise InvalidArgumentError(f"{path} is not a Jacobian artifact")
    dtype = _DTYPE_TAGS[header["dtype"]]
    shape = tuple(header["shape"])
    if mmap:
        entries = np.memmap(path, dtype=dtype, mode="r", shape=shape)
    else:
        entries = np.fromfile(path, dtype=dtype).reshape(shape)
    return JacobianMatrix(
        entries,
        protocol_from_dict(header["protocol"]),
        grid_from_dict(header["grid"]),
        tau0_hash=str(header["tau0_hash"]),
    )


# ---------------------------------------------------------------- CSVs

def write_lcurve_csv(path, curve) -> None:
    lines = ["eta,residual_norm,seminorm"]
    for eta, res, semi in curve:
        lines.append(",".join(_FMT % v for v in (eta, res, semi)))
    _atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode())


def read_lcurve_csv(path) -> list[tuple[float, float, float]]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "eta,residual_norm,seminorm":
            raise InvalidArgumentError(f"unexpected L-curve header: {header!r}")
        return [tuple(float(x) for x in line.split(",")) for line in f if line.strip()]


CONTRAST_COLUMNS = (
    "label",
    "n_angles",
    "n_freqs",
    "sensor_width_mm",
    "sensor_type",
    "noise_pct",
    "eta",
    "fwhm_mm_inv",
    "c_max",
    "fit_residual",
)


def _format_cell(key, value):
    if isinstance(value, float):
        return _FMT % value
    return str(value)


def write_contrast_csv(path, rows: list[dict]) -> None:
    lines = [",".join(CONTRAST_COLUMNS)]
    for row in rows:
        missing = set(CONTRAST_COLUMNS) - set(row)
        if missing:
            raise InvalidArgumentError(f"contrast row missing columns {sorted(missing)}")
        lines.append(",".join(_format_cell(k, row[k]) for k in CONTRAST_COLUMNS))
    _atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode())


def read_contrast_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        if tuple(header) != CONTRAST_COLUMNS:
            raise InvalidArgumentError(f"unexpected contrast header: {header}")
        out = []
        for line in f:
            if not line.strip():
                continue
            cells = line.strip().split(",")
            row = dict(zip(CONTRAST_COLUMNS, cells))
            for k in ("n_angles", "n_freqs"):
                row[k] = int(row[k])
            for k in ("sensor_width_mm", "noise_pct", "eta", "fwhm_mm_inv", "c_max", "fit_residual"):
                row[k] = float(row[k])
            out.append(row)
    return out


# ---------------------------------------------------------------- manifest

def write_manifest(path, manifest: dict) -> None:
    _atomic_write_bytes(
        Path(path),
        json.dumps(manifest, sort_keys=True, indent=2).encode() + b"\n",
    )


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
