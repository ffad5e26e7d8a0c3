"""Experiment configuration: flat TOML files, presets at full and half scale,
and derived objects (grid, protocol, phantom, regions of interest).

The default configuration reproduces the reference simulation parameters:
40x40 mm domain on a 256x256 grid (dx = 0.15625 mm), a 5 px quadratic
absorbing boundary, two 30 mm ten-element arrays separated by 30 mm, 1 mm
sensors driven at {1.5, 1.75, 2, 2.25, 2.5} MHz over angles stepped by 7.5
degrees, a 0.006 absorption square on a 0.003 background at c = 1540 m/s,
and a 1.75 cycles/mm low-pass cutoff.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import tomli

from .acquisition import AcquisitionProtocol, ArrayGeometry
from .contrast import EdgeRoi
from .errors import InvalidArgumentError
from .grid_medium import (
    Grid,
    MediumMap,
    PhantomSpec,
    RectanglePx,
    build_phantom,
    make_grid,
)
from .helmholtz import PmlSpec

__all__ = [
    "ExperimentConfig",
    "preset",
    "load_config",
    "config_to_toml",
    "save_config",
    "apply_overrides",
]

FULL_FREQS_MHZ = (1.5, 1.75, 2.0, 2.25, 2.5)
SINGLE_FREQ_MHZ = (2.0,)


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat, fully serializable experiment description. All lengths in mm,
    frequencies in MHz, angles in degrees."""

    scale: str = "full"
    grid_px: int = 256
    dx_mm: float = 0.15625
    pml_width_px: int = 5
    pml_strength: float = 2.0
    separation_mm: float = 30.0
    array_length_mm: float = 30.0
    n_sources: int = 10
    n_sensors: int = 10
    sensor_width_mm: float = 1.0
    sensor_type: str = "ps"
    source_amplitude: float = 1.0
    freqs_mhz: tuple = FULL_FREQS_MHZ
    dtheta_deg: float = 7.5
    tau0: float = 0.003
    tau_square: float = 0.006
    sound_speed: float = 1540.0
    noise_level: float = 0.0
    seed: int = 1234
    eta: object = "lcurve"  # positive float or the string "lcurve"
    cutoff_mm_inv: float = 1.75
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.scale not in ("full", "half"):
            raise InvalidArgumentError(f"scale must be full|half, got {self.scale!r}")
        if self.sensor_type not in ("ps", "pi"):
            raise InvalidArgumentError(f"sensor_type must be ps|pi, got {self.sensor_type!r}")
        if isinstance(self.eta, str):
            if self.eta != "lcurve":
                raise InvalidArgumentError(f"eta must be a number or 'lcurve', got {self.eta!r}")
        elif not (isinstance(self.eta, (int, float)) and self.eta >= 0):
            raise InvalidArgumentError(f"eta must be >= 0 or 'lcurve', got {self.eta!r}")
        if not (0 < self.dtheta_deg <= 180):
            raise InvalidArgumentError(f"dtheta_deg must be in (0, 180], got {self.dtheta_deg}")
        if self.noise_level < 0:
            raise InvalidArgumentError(f"noise_level must be >= 0, got {self.noise_level}")
        if not self.freqs_mhz or any(f <= 0 for f in self.freqs_mhz):
            raise InvalidArgumentError("freqs_mhz must be non-empty and positive")
        for name in ("grid_px", "n_sources", "n_sensors"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        for name in (
            "dx_mm", "separation_mm", "array_length_mm", "sensor_width_mm",
            "source_amplitude", "tau0", "sound_speed", "cutoff_mm_inv",
        ):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be > 0")
        object.__setattr__(self, "freqs_mhz", tuple(float(f) for f in self.freqs_mhz))

    # ---------------------------------------------------------- derived

    @property
    def px_factor(self) -> int:
        """Pixel-coordinate divisor of the half-scale preset (1 or 2)."""
        return 2 if self.scale == "half" else 1

    def grid(self) -> Grid:
        return make_grid(self.grid_px, self.grid_px, self.dx_mm, self.dx_mm)

    def pml(self) -> PmlSpec:
        return PmlSpec(self.pml_width_px, self.pml_strength)

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(
            n_sources=self.n_sources,
            n_sensors=self.n_sensors,
            array_length=self.array_length_mm,
            separation=self.separation_mm,
            sensor_width=self.sensor_width_mm,
        )

    def angles_deg(self) -> tuple:
        n = math.ceil(180.0 / self.dtheta_deg - 1e-12)
        return tuple(k * self.dtheta_deg for k in range(n))

    def frequencies_rad(self) -> tuple:
        return tuple(2.0 * math.pi * f * 1e6 for f in self.freqs_mhz)

    def protocol(self) -> AcquisitionProtocol:
        return AcquisitionProtocol(
            self.geometry(),
            self.frequencies_rad(),
            self.angles_deg(),
            sensor_type=self.sensor_type,
            source_amplitude=self.source_amplitude,
        )

    def target_block(self) -> RectanglePx:
        f = self.px_factor
        return RectanglePx(100 // f, 150 // f, 150 // f, 200 // f)

    def true_medium(self) -> MediumMap:
        spec = PhantomSpec(self.tau0, ((self.target_block(), self.tau_square),))
        return build_phantom(self.grid(), spec, self.sound_speed)

    def model_medium(self) -> MediumMap:
        return build_phantom(self.grid(), PhantomSpec(self.tau0, ()), self.sound_speed)

    def contrast_roi(self) -> RectanglePx:
        if self.scale == "half":
            return RectanglePx(50, 75, 91, 110)
        return RectanglePx(100, 149, 181, 220)

    def edge_roi(self) -> EdgeRoi:
        return EdgeRoi(self.contrast_roi(), axis="y")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["freqs_mhz"] = list(self.freqs_mhz)
        return d


def preset(scale: str = "full", **overrides) -> ExperimentConfig:
    """Reference configuration at full scale, or the half-scale variant
    (128 px, dx = 0.3125 mm, frequencies halved so points-per-wavelength is
    preserved; physical dimensions unchanged)."""
    if scale == "full":
        cfg = ExperimentConfig()
    elif scale == "half":
        cfg = ExperimentConfig(
            scale="half",
            grid_px=128,
            dx_mm=0.3125,
            freqs_mhz=tuple(f / 2.0 for f in FULL_FREQS_MHZ),
        )
    else:
        raise InvalidArgumentError(f"scale must be full|half, got {scale!r}")
    return apply_overrides(cfg, **overrides) if overrides else cfg


def apply_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    unknown = set(overrides) - {f.name for f in dataclasses.fields(ExperimentConfig)}
    if unknown:
        raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
    return dataclasses.replace(cfg, **overrides)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as f:
            raw = tomli.load(f)
    except tomli.TOMLDecodeError as e:
        raise InvalidArgumentError(f"invalid config file {path}: {e}") from e
    if "freqs_mhz" in raw:
        raw["freqs_mhz"] = tuple(raw["freqs_mhz"])
    scale = raw.pop("scale", "full")
    return preset(scale, **raw)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(float(v)) if isinstance(v, float) else str(v)
    if isinstance(v, str):
        return '"%s"' % v.replace("\\", "\\\\").replace('"', '\\"')
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise InvalidArgumentError(f"cannot serialize config value {v!r}")


def config_to_toml(cfg: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(ExperimentConfig):
        lines.append(f"{f.name} = {_toml_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(config_to_toml(cfg), encoding="utf-8")
