"""Rotating parallel source/sensor arrays: geometry placement, sensor aperture
quadrature, the phase-sensitive / phase-insensitive field transform,
measurement synthesis, and noise injection.

Geometry convention: at angle 0 the source line sits ``separation/2`` below
the array center (negative y) and the sensor line the same distance above,
both horizontal; positive angles rotate the whole arrangement
counterclockwise about ``center``. Angles are degrees throughout.

Measurements are ordered with (frequency, angle, source, sensor) from slowest
to fastest axis. A phase-sensitive (PS) sensor integrates the complex field
over its aperture segment; a phase-insensitive (PI) sensor integrates the
squared magnitude, so PI entries are real and non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._spectral import sample_bandlimited, spectral_delta
from .errors import InvalidArgumentError, SolverError
from .grid_medium import Grid, MediumMap
from .helmholtz import (
    MM,
    ComplexField,
    PmlSpec,
    SpectralOperator,
    assemble_operator,
)

__all__ = [
    "ArrayGeometry",
    "AcquisitionProtocol",
    "SensorSegment",
    "SensorWeights",
    "DataVector",
    "place_arrays",
    "sensor_quadrature",
    "segment_nodes",
    "field_transform",
    "required_pad_px",
    "simulate_measurements",
    "add_noise",
]


def _rotation(theta_deg: float) -> np.ndarray:
    a = np.deg2rad(theta_deg)
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


@dataclass(frozen=True)
class SensorSegment:
    """A sensor aperture: a line segment of ``length`` mm centered at
    ``center`` along unit vector ``direction``."""

    center: tuple[float, float]
    direction: tuple[float, float]
    length: float

    def endpoints(self) -> np.ndarray:
        c = np.asarray(self.center)
        d = np.asarray(self.direction)
        return np.stack([c - 0.5 * self.length * d, c + 0.5 * self.length * d])


@dataclass(frozen=True)
class ArrayGeometry:
    """Parallel source and sensor arrays facing each other across ``separation`` mm."""

    n_sources: int = 10
    n_sensors: int = 10
    array_length: float = 30.0
    separation: float = 30.0
    sensor_width: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.n_sources < 1 or self.n_sensors < 1:
            raise InvalidArgumentError(
                f"need at least one source and one sensor, got "
                f"{self.n_sources}/{self.n_sensors}"
            )
        for name in ("array_length", "separation", "sensor_width"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise InvalidArgumentError(f"{name} must be positive, got {v}")

    def _line_offsets(self, count: int) -> np.ndarray:
        if count == 1:
            return np.zeros(1)
        return np.linspace(-0.5 * self.array_length, 0.5 * self.array_length, count)

    def source_positions(self, theta_deg: float) -> np.ndarray:
        """(N, 2) source coordinates in mm at array angle ``theta_deg``."""
        xs = self._line_offsets(self.n_sources)
        pts = np.stack([xs, np.full_like(xs, -0.5 * self.separation)], axis=1)
        return pts @ _rotation(theta_deg).T + np.asarray(self.center)

    def sensor_segments(self, theta_deg: float) -> list[SensorSegment]:
        """Sensor apertures (length ``sensor_width``) at array angle ``theta_deg``."""
        R = _rotation(theta_deg)
        xs = self._line_offsets(self.n_sensors)
        centers = np.stack([xs, np.full_like(xs, 0.5 * self.separation)], axis=1)
        centers = centers @ R.T + np.asarray(self.center)
        direction = R @ np.array([1.0, 0.0])
        return [
            SensorSegment(tuple(c), tuple(direction), self.sensor_width)
            for c in centers
        ]


def place_arrays(
    geometry: ArrayGeometry, theta_deg: float
) -> tuple[np.ndarray, list[SensorSegment]]:
    """Source positions and sensor segments rigidly rotated by ``theta_deg``
    about the geometry center."""
    return geometry.source_positions(theta_deg), geometry.sensor_segments(theta_deg)


@dataclass(frozen=True)
class AcquisitionProtocol:
    """Full acquisition plan: geometry, frequencies (rad/s), array angles
    (degrees in [0, 180)), sensor type ("ps" or "pi"), source amplitude (Pa)."""

    geometry: ArrayGeometry
    frequencies: tuple[float, ...]
    angles_deg: tuple[float, ...]
    sensor_type: str = "ps"
    source_amplitude: float = 1.0

    def __post_init__(self):
        freqs = tuple(float(w) for w in self.frequencies)
        angles = tuple(float(t) for t in self.angles_deg)
        if len(freqs) == 0 or any(w <= 0 or not np.isfinite(w) for w in freqs):
            raise InvalidArgumentError(f"frequencies must be non-empty positive, got {freqs}")
        if len(angles) == 0 or any(not (0.0 <= t < 180.0) for t in angles):
            raise InvalidArgumentError(
                f"angles must be non-empty and within [0, 180) degrees, got {angles}"
            )
        st = str(self.sensor_type).lower()
        if st not in ("ps", "pi"):
            raise InvalidArgumentError(f"sensor_type must be 'ps' or 'pi', got {self.sensor_type!r}")
        if not np.isfinite(self.source_amplitude):
            raise InvalidArgumentError("source_amplitude must be finite")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "angles_deg", angles)
        object.__setattr__(self, "sensor_type", st)

    @property
    def size(self) -> int:
        g = self.geometry
        return len(self.frequencies) * len(self.angles_deg) * g.n_sources * g.n_sensors

    def index_of(self, iw: int, it: int, n: int, m: int) -> int:
        """Flat data index for (frequency iw, angle it, source n, sensor m)."""
        g = self.geometry
        return ((iw * len(self.angles_deg) + it) * g.n_sources + n) * g.n_sensors + m

    def index_table(self) -> dict[str, np.ndarray]:
        """Per-entry (omega, theta, n, m) arrays in canonical order."""
        g = self.geometry
        W, T, N, M = len(self.frequencies), len(self.angles_deg), g.n_sources, g.n_sensors
        iw, it, nn, mm = np.unravel_index(np.arange(W * T * N * M), (W, T, N, M))
        return {
            "omega": np.asarray(self.frequencies)[iw],
            "theta_deg": np.asarray(self.angles_deg)[it],
            "n": nn,
            "m": mm,
        }


@dataclass
class SensorWeights:
    """Pixel-level quadrature of one sensor aperture: ``pixels`` (K, 2) as
    (j, i) indices and matching arc-length ``weights`` in mm (summing to the
    segment length)."""

    pixels: np.ndarray
    weights: np.ndarray
    m: int = -1
    theta_deg: float = 0.0

    def as_field(self, grid: Grid) -> np.ndarray:
        out = np.zeros(grid.shape, dtype=np.float64)
        np.add.at(out, (self.pixels[:, 0], self.pixels[:, 1]), self.weights)
        return out


def segment_nodes(segment: SensorSegment, grid: Grid, nodes_per_px: int = 4):
    """Uniform quadrature nodes along the aperture (midpoint rule).

    Returns (points (nq, 2) mm, weights (nq,) mm); at least ``nodes_per_px``
    nodes per pixel width, at least 4 total; weights sum to the segment length
    exactly.
    """
    d = segment.length
    nq = max(4, int(np.ceil(nodes_per_px * d / min(grid.dx, grid.dy))))
    ds = d / nq
    t = (np.arange(nq) + 0.5) * ds - 0.5 * d
    c = np.asarray(segment.center)
    u = np.asarray(segment.direction)
    pts = c[None, :] + t[:, None] * u[None, :]
    w = np.full(nq, ds)
    return pts, w


def sensor_quadrature(
    grid: Grid,
    segment: SensorSegment,
    forbidden_margin_px: int = 0,
    m: int = -1,
    theta_deg: float = 0.0,
) -> SensorWeights:
    """Pixel weights of one aperture by bilinear spreading of its quadrature
    nodes; errors if any node's 4-pixel support exits the grid or enters the
    outermost ``forbidden_margin_px`` pixels (the absorbing ring)."""
    pts, w = segment_nodes(segment, grid)
    fi = (pts[:, 0] - grid.origin[0]) / grid.dx
    fj = (pts[:, 1] - grid.origin[1]) / grid.dy
    i0 = np.floor(fi).astype(int)
    j0 = np.floor(fj).astype(int)
    lo = forbidden_margin_px
    if (
        i0.min() < lo
        or j0.min() < lo
        or (i0.max() + 1) >= grid.Lx - lo
        or (j0.max() + 1) >= grid.Ly - lo
    ):
        raise InvalidArgumentError(
            f"sensor segment at {segment.center} (angle {theta_deg}) leaves the "
            f"usable grid region (margin {lo} px)"
        )
    tx = fi - i0
    ty = fj - j0
    acc: dict[tuple[int, int], float] = {}
    for k in range(pts.shape[0]):
        for (jj, ii, ww) in (
            (j0[k], i0[k], (1 - tx[k]) * (1 - ty[k])),
            (j0[k], i0[k] + 1, tx[k] * (1 - ty[k])),
            (j0[k] + 1, i0[k], (1 - tx[k]) * ty[k]),
            (j0[k] + 1, i0[k] + 1, tx[k] * ty[k]),
        ):
            if ww != 0.0:
                acc[(jj, ii)] = acc.get((jj, ii), 0.0) + ww * w[k]
    pixels = np.array(sorted(acc.keys()), dtype=np.intp)
    weights = np.array([acc[tuple(p)] for p in pixels])
    return SensorWeights(pixels=pixels, weights=weights, m=m, theta_deg=theta_deg)


def field_transform(P: ComplexField, sensor_type: str) -> ComplexField:
    """PS: identity. PI: pointwise squared magnitude (imaginary part zero)."""
    st = str(sensor_type).lower()
    if st == "ps":
        return P
    if st == "pi":
        v = P.values
        return ComplexField(v.real**2 + v.imag**2 + 0j, role="intensity")
    raise InvalidArgumentError(f"sensor_type must be 'ps' or 'pi', got {sensor_type!r}")


@dataclass
class DataVector:
    """Measurement vector in canonical (frequency, angle, source, sensor) order."""

    values: np.ndarray
    protocol: AcquisitionProtocol

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.complex128)
        if self.values.shape != (self.protocol.size,):
            raise InvalidArgumentError(
                f"data length {self.values.shape} does not match protocol size "
                f"{self.protocol.size}"
            )

    @property
    def sensor_type(self) -> str:
        return self.protocol.sensor_type

    def index_table(self) -> dict[str, np.ndarray]:
        return self.protocol.index_table()

    def copy_with(self, values: np.ndarray) -> "DataVector":
        return DataVector(values=np.array(values, dtype=np.complex128), protocol=self.protocol)


# ---------------------------------------------------------------------------
# geometry <-> solve-grid fitting


def _protocol_points_mm(protocol: AcquisitionProtocol) -> np.ndarray:
    """All source positions and sensor aperture endpoints over all angles."""
    pts = []
    for theta in protocol.angles_deg:
        srcs, segs = place_arrays(protocol.geometry, theta)
        pts.append(srcs)
        for s in segs:
            pts.append(s.endpoints())
    return np.concatenate(pts, axis=0)


def required_pad_px(
    grid: Grid,
    pml: PmlSpec,
    protocol: AcquisitionProtocol,
    margin_mm: float = 1.5,
) -> int:
    """Symmetric grid extension (pixels per side) that keeps every source and
    sensor at least ``margin_mm`` away from the absorbing ring.

    Zero when the protocol already fits inside the grid's damping-free
    interior with that margin.
    """
    pts = _protocol_points_mm(protocol)
    cx = grid.origin[0] + 0.5 * (grid.Lx - 1) * grid.dx
    cy = grid.origin[1] + 0.5 * (grid.Ly - 1) * grid.dy
    need_x = np.abs(pts[:, 0] - cx).max() + margin_mm + pml.width_px * grid.dx
    need_y = np.abs(pts[:, 1] - cy).max() + margin_mm + pml.width_px * grid.dy
    pad_x = int(np.ceil(max(0.0, need_x - 0.5 * grid.Lx * grid.dx) / grid.dx))
    pad_y = int(np.ceil(max(0.0, need_y - 0.5 * grid.Ly * grid.dy) / grid.dy))
    pad = max(pad_x, pad_y)
    if pad > 0:
        # once extending at all, keep the absorbing ring entirely inside the
        # extension so the imaging grid itself stays damping-free
        pad = max(pad, pml.width_px)
    return pad


def _ext_px(points_mm: np.ndarray, grid: Grid, pad_px: int) -> np.ndarray:
    """Fractional pixel coordinates on the (possibly extended) solve grid."""
    pts = np.atleast_2d(points_mm)
    fi = (pts[:, 0] - grid.origin[0]) / grid.dx + pad_px
    fj = (pts[:, 1] - grid.origin[1]) / grid.dy + pad_px
    return np.stack([fi, fj], axis=1)


def _source_fields_ext(
    op: SpectralOperator,
    positions_mm: np.ndarray,
    amplitude: float,
    kcut_frac: float | None,
) -> np.ndarray:
    """Band-limited point sources at exact positions, solved in one batch."""
    grid = op.grid
    pts = _ext_px(positions_mm, grid, op.pad_px)
    rhs = np.stack(
        [
            amplitude
            * spectral_delta(
                op.ext_shape, grid.dx * MM, grid.dy * MM, [p], [1.0], kcut_frac=kcut_frac
            )
            for p in pts
        ]
    )
    return op.solve_ext_batch(rhs)


DEFAULT_KCUT = 0.8


def simulate_measurements(
    medium: MediumMap,
    protocol: AcquisitionProtocol,
    grid: Grid,
    pml: PmlSpec | None = None,
    scheme: str = "spectral",
    pad_px: int | str = "auto",
    kcut_frac: float | None = DEFAULT_KCUT,
) -> DataVector:
    """Synthesize the full measurement vector for a protocol.

    Spectral scheme: sources are band-limited deltas at their exact positions
    and sensors integrate the band-limited interpolant at their quadrature
    nodes; the grid auto-extends (``pad_px="auto"``) so off-grid array
    positions sit in a damping-free buffer. fd5 scheme: sources snap to grid
    nodes and sensors use pixel-level bilinear quadrature; the protocol must
    fit inside the grid's damping-free interior.
    """
    if pml is None:
        pml = PmlSpec()
    if scheme == "spectral":
        return _simulate_spectral(medium, protocol, grid, pml, pad_px, kcut_frac)
    if scheme == "fd5":
        return _simulate_fd5(medium, protocol, grid, pml)
    raise InvalidArgumentError(f"unknown scheme {scheme!r}")


def _simulate_spectral(medium, protocol, grid, pml, pad_px, kcut_frac) -> DataVector:
    if pad_px == "auto":
        pad_px = required_pad_px(grid, pml, protocol)
    g = protocol.geometry
    y = np.zeros(protocol.size, dtype=np.complex128)
    for iw, omega in enumerate(protocol.frequencies):
        op = assemble_operator(grid, medium, omega, pml, scheme="spectral", pad_px=int(pad_px))
        for it, theta in enumerate(protocol.angles_deg):
            try:
                srcs, segs = place_arrays(g, theta)
                fields = _source_fields_ext(op, srcs, protocol.source_amplitude, kcut_frac)
                node_pts = []
                node_w = []
                for seg in segs:
                    pts, w = segment_nodes(seg, grid)
                    node_pts.append(_ext_px(pts, grid, op.pad_px))
                    node_w.append(w)
                all_pts = np.concatenate(node_pts, axis=0)
                for n in range(g.n_sources):
                    fhat = np.fft.fft2(fields[n])
                    vals = sample_bandlimited(
                        None,
                        grid.dx * MM,
                        grid.dy * MM,
                        all_pts,
                        kcut_frac=kcut_frac,
                        field_hat=fhat,
                    )
                    pos = 0
                    for m, w in enumerate(node_w):
                        v = vals[pos : pos + w.size]
                        pos += w.size
                        if protocol.sensor_type == "ps":
                            y[protocol.index_of(iw, it, n, m)] = np.sum(w * v)
                        else:
                            y[protocol.index_of(iw, it, n, m)] = np.sum(
                                w * (v.real**2 + v.imag**2)
                            )
            except SolverError as exc:
                exc.diagnostics.update(omega=omega, theta_deg=theta)
                raise
    return DataVector(values=y, protocol=protocol)


def _simulate_fd5(medium, protocol, grid, pml) -> DataVector:
    from .helmholtz import point_source, solve_forward

    if required_pad_px(grid, pml, protocol, margin_mm=0.0) > 0:
        raise InvalidArgumentError(
            "protocol geometry does not fit inside the grid's damping-free "
            "interior; the fd5 scheme cannot extend the grid"
        )
    g = protocol.geometry
    y = np.zeros(protocol.size, dtype=np.complex128)
    for iw, omega in enumerate(protocol.frequencies):
        op = assemble_operator(grid, medium, omega, pml, scheme="fd5")
        for it, theta in enumerate(protocol.angles_deg):
            srcs, segs = place_arrays(g, theta)
            weights = [
                sensor_quadrature(grid, seg, forbidden_margin_px=pml.width_px, m=m, theta_deg=theta)
                for m, seg in enumerate(segs)
            ]
            for n in range(g.n_sources):
                src = point_source(grid, tuple(srcs[n]), protocol.source_amplitude, scheme="fd5")
                P = solve_forward(op, src)
                T = field_transform(P, protocol.sensor_type).values
                for m, sw in enumerate(weights):
                    val = np.sum(sw.weights * T[sw.pixels[:, 0], sw.pixels[:, 1]])
                    y[protocol.index_of(iw, it, n, m)] = val
    return DataVector(values=y, protocol=protocol)


def add_noise(data: DataVector, level: float, seed: int) -> DataVector:
    """Additive Gaussian noise scaled by ``level`` times the maximum signal.

    PS: independent noise on real and imaginary parts, each with standard
    deviation ``level * max|y|``. PI: noise on the real part only, standard
    deviation ``level * max(y)`` (values may go negative; they are not
    clipped). Deterministic for a given seed.
    """
    if level < 0 or not np.isfinite(level):
        raise InvalidArgumentError(f"noise level must be >= 0, got {level}")
    rng = np.random.default_rng(seed)
    y = data.values
    if data.sensor_type == "ps":
        sigma = level * np.abs(y).max()
        noisy = y + sigma * rng.standard_normal(y.size) + 1j * sigma * rng.standard_normal(y.size)
    else:
        sigma = level * y.real.max()
        noisy = y + sigma * rng.standard_normal(y.size)
    return data.copy_with(noisy)
