"""Adjoint-state assembly of the measurement Jacobian with respect to the
absorption map, with rotational row reuse for constant backgrounds.

Derivative convention (fixed empirically by the central finite-difference
oracle in the test suite): with the forward solve A(tau) u = s and measurement
y = sum_t w_t * M[u](x_t), the sensitivity of one measurement to the
absorption at pixel j is

    row(j) = -ic(j) * conj(Z(j)) * u(j) * (dx * dy)

where ic = d(mass)/d(tau) (see ``imaging_condition``), Z solves the adjoint
system with the sensor-aperture source, and the aperture weights enter the
adjoint source as densities (divided by the pixel area). Phase-insensitive
sensors measure |u|^2, which is not complex-differentiable; the real
derivative is the real part of the same expression with adjoint source
2 * w * u, and rows are stored with the imaginary part dropped.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ._spectral import bilinear_rotate, fourier_rotate, sample_bandlimited, spectral_delta
from .acquisition import (
    DEFAULT_KCUT,
    AcquisitionProtocol,
    SensorWeights,
    _ext_px,
    _source_fields_ext,
    place_arrays,
    required_pad_px,
    segment_nodes,
    sensor_quadrature,
)
from .errors import InvalidArgumentError
from .grid_medium import Grid, MediumMap
from .helmholtz import (
    MM,
    ComplexField,
    PmlSpec,
    _reference_values,
    assemble_operator,
    imaging_condition,
    point_source,
    solve_adjoint,
    solve_forward,
)

__all__ = [
    "SensitivityRow",
    "JacobianMatrix",
    "adjoint_source",
    "jacobian_row",
    "rotate_sensitivity",
    "assemble_jacobian",
]


@dataclass
class SensitivityRow:
    """One Jacobian row reshaped onto the imaging grid, with its data index."""

    values: np.ndarray
    omega: float
    theta_deg: float
    n: int
    m: int

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise InvalidArgumentError("sensitivity row must be a 2-D grid field")

    def as_vector(self) -> np.ndarray:
        return self.values.ravel()


def medium_hash(medium: MediumMap) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(medium.tau).tobytes())
    h.update(np.ascontiguousarray(medium.c).tobytes())
    return h.hexdigest()[:16]


@dataclass
class JacobianMatrix:
    """Dense row-major Jacobian; row k maps to (omega, theta, n, m) exactly as
    in the DataVector ordering."""

    entries: np.ndarray
    protocol: AcquisitionProtocol
    grid: Grid
    tau0_hash: str

    def __post_init__(self):
        T = self.protocol.size
        npix = self.grid.n_pixels
        if self.entries.shape != (T, npix):
            raise InvalidArgumentError(
                f"Jacobian shape {self.entries.shape} != ({T}, {npix})"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def row(self, iw: int, it: int, n: int, m: int) -> SensitivityRow:
        k = self.protocol.index_of(iw, it, n, m)
        return SensitivityRow(
            values=np.asarray(self.entries[k]).reshape(self.grid.shape),
            omega=self.protocol.frequencies[iw],
            theta_deg=self.protocol.angles_deg[it],
            n=n,
            m=m,
        )


def adjoint_source(
    P: ComplexField,
    weights: SensorWeights,
    sensor_type: str,
    grid: Grid,
) -> ComplexField:
    """Adjoint right-hand side for one sensor, as a density field on ``grid``.

    PS: the aperture weight field itself (independent of P). PI: pointwise
    2 * P * weights, realizing the real derivative of |P|^2.
    """
    if P.values.shape != grid.shape:
        raise InvalidArgumentError(
            f"field shape {P.values.shape} does not match grid {grid.shape}"
        )
    if weights.pixels.size and (
        weights.pixels[:, 0].max() >= grid.Ly or weights.pixels[:, 1].max() >= grid.Lx
    ):
        raise InvalidArgumentError("sensor weights reference pixels outside the grid")
    density = weights.as_field(grid) / (grid.dx * MM * grid.dy * MM)
    st = str(sensor_type).lower()
    if st == "ps":
        return ComplexField(density + 0j, role="adjoint_source")
    if st == "pi":
        return ComplexField(2.0 * P.values * density, role="adjoint_source")
    raise InvalidArgumentError(f"sensor_type must be 'ps' or 'pi', got {sensor_type!r}")


def jacobian_row(
    P: ComplexField,
    Z: ComplexField,
    ic: ComplexField,
    sensor_type: str,
    grid: Grid,
    omega: float = 0.0,
    theta_deg: float = 0.0,
    n: int = -1,
    m: int = -1,
) -> SensitivityRow:
    """Combine forward field, adjoint field, and the mass derivative into one
    sensitivity map: -ic * conj(Z) * P * (dx*dy). PI rows keep the real part
    (the actual derivative of the squared magnitude)."""
    for f in (P, Z, ic):
        if f.values.shape != grid.shape:
            raise InvalidArgumentError(
                f"field shape {f.values.shape} does not match grid {grid.shape}"
            )
    vals = -ic.values * np.conj(Z.values) * P.values * (grid.dx * MM * grid.dy * MM)
    st = str(sensor_type).lower()
    if st == "pi":
        vals = vals.real + 0j
    elif st != "ps":
        raise InvalidArgumentError(f"sensor_type must be 'ps' or 'pi', got {sensor_type!r}")
    return SensitivityRow(values=vals, omega=omega, theta_deg=theta_deg, n=n, m=m)


def rotate_sensitivity(
    row: SensitivityRow,
    dtheta_deg: float,
    center_mm: tuple[float, float],
    grid: Grid,
    method: str = "bilinear",
    new_theta_deg: float | None = None,
) -> SensitivityRow:
    """Rotate a sensitivity map by ``dtheta_deg`` about ``center_mm``.

    "bilinear": first-order interpolation, source pixels outside the grid read
    as 0. "fourier": exact for band-limited maps, but requires the rotation
    center to coincide with the grid center. Returned metadata carries the new
    angle."""
    cx = (center_mm[0] - grid.origin[0]) / grid.dx
    cy = (center_mm[1] - grid.origin[1]) / grid.dy
    theta_new = row.theta_deg + dtheta_deg if new_theta_deg is None else new_theta_deg
    if method == "auto":
        gx, gy = 0.5 * (grid.Lx - 1), 0.5 * (grid.Ly - 1)
        centered = grid.Lx == grid.Ly and abs(cx - gx) < 1e-9 and abs(cy - gy) < 1e-9
        method = "fourier" if centered else "bilinear"
    if method == "bilinear":
        vals = bilinear_rotate(row.values, dtheta_deg, center_px=(cx, cy))
    elif method == "fourier":
        gx, gy = 0.5 * (grid.Lx - 1), 0.5 * (grid.Ly - 1)
        if abs(cx - gx) > 1e-9 or abs(cy - gy) > 1e-9:
            raise InvalidArgumentError(
                "fourier rotation requires the rotation center at the grid center; "
                f"got pixel ({cx:.3f}, {cy:.3f}), center ({gx}, {gy})"
            )
        vals = fourier_rotate(row.values, dtheta_deg)
    else:
        raise InvalidArgumentError(f"unknown rotation method {method!r}")
    return SensitivityRow(
        values=vals, omega=row.omega, theta_deg=theta_new, n=row.n, m=row.m
    )


def _is_constant(medium: MediumMap) -> bool:
    return (
        np.all(medium.tau == medium.tau.flat[0])
        and np.all(medium.c == medium.c.flat[0])
    )


def _entries_array(protocol, grid, dtype, entries_out):
    T, npix = protocol.size, grid.n_pixels
    if entries_out is not None:
        if entries_out.shape != (T, npix):
            raise InvalidArgumentError(
                f"output array shape {entries_out.shape} != ({T}, {npix})"
            )
        return entries_out
    if dtype is None:
        dtype = np.float64 if protocol.sensor_type == "pi" else np.complex128
    return np.zeros((T, npix), dtype=dtype)


def _store(entries, k, values, sensor_type):
    if sensor_type == "pi" and not np.iscomplexobj(entries):
        entries[k] = values.real.ravel()
    else:
        entries[k] = values.ravel()


def assemble_jacobian(
    tau0: MediumMap,
    protocol: AcquisitionProtocol,
    grid: Grid,
    pml: PmlSpec | None = None,
    scheme: str = "spectral",
    reuse: bool | str = "auto",
    rotation: str = "auto",
    pad_px: int | str = "auto",
    kcut_frac: float | None = DEFAULT_KCUT,
    dtype=None,
    entries_out: np.ndarray | None = None,
) -> JacobianMatrix:
    """Assemble the full Jacobian at linearization point ``tau0``.

    With ``reuse`` on (default for spatially constant backgrounds) the forward
    and adjoint fields are computed only at the first angle — |frequencies| x
    (N + M) solves for PS — and rows at every other angle are rotated copies
    about the array center. ``reuse=True`` with a non-constant background is
    rejected; ``reuse=False`` assembles every angle directly.
    """
    if pml is None:
        pml = PmlSpec()
    constant = _is_constant(tau0)
    if reuse == "auto":
        reuse = constant
    elif reuse and not constant:
        raise InvalidArgumentError(
            "rotational row reuse requires a spatially constant background"
        )
    entries = _entries_array(protocol, grid, dtype, entries_out)
    if scheme == "spectral":
        _assemble_spectral(
            tau0, protocol, grid, pml, bool(reuse), rotation, pad_px, kcut_frac, entries
        )
    elif scheme == "fd5":
        _assemble_fd5(tau0, protocol, grid, pml, bool(reuse), rotation, entries)
    else:
        raise InvalidArgumentError(f"unknown scheme {scheme!r}")
    return JacobianMatrix(
        entries=entries, protocol=protocol, grid=grid, tau0_hash=medium_hash(tau0)
    )


def _assemble_spectral(
    tau0, protocol, grid, pml, reuse, rotation, pad_px, kcut_frac, entries
):
    g = protocol.geometry
    N, M = g.n_sources, g.n_sensors
    if pad_px == "auto":
        pad_px = required_pad_px(grid, pml, protocol)
    angles = protocol.angles_deg if not reuse else protocol.angles_deg[:1]
    dxdy = grid.dx * MM * grid.dy * MM
    for iw, omega in enumerate(protocol.frequencies):
        op = assemble_operator(grid, tau0, omega, pml, scheme="spectral", pad_px=int(pad_px))
        ic = imaging_condition(tau0, omega).values
        ic_ext = op.embed(ic)
        if op.pad_px:
            # pad pixels carry the background (reference) mass derivative
            tau_ref, c_ref = _reference_values(tau0)
            fill = 2j * (omega / c_ref) ** 2 * (1 + 1j * tau_ref)
            ic_ext[ic_ext == 0] = fill
        keep_ext = reuse and len(protocol.angles_deg) > 1
        for it, theta in enumerate(angles):
            srcs, segs = place_arrays(g, theta)
            fields = _source_fields_ext(op, srcs, protocol.source_amplitude, kcut_frac)
            nodes = [segment_nodes(seg, grid) for seg in segs]
            node_px = [_ext_px(pts, grid, op.pad_px) for pts, _ in nodes]
            rows_ext = (
                np.empty((N, M) + op.ext_shape, dtype=np.complex128) if keep_ext else None
            )
            if protocol.sensor_type == "ps":
                q = np.stack(
                    [
                        spectral_delta(
                            op.ext_shape,
                            grid.dx * MM,
                            grid.dy * MM,
                            node_px[m],
                            nodes[m][1],
                            kcut_frac=kcut_frac,
                        )
                        for m in range(M)
                    ]
                )
                V = op.solve_ext_batch(q)
                for n in range(N):
                    rows = -ic_ext * V * fields[n] * dxdy  # (M, ny, nx)
                    for m in range(M):
                        _store(entries, protocol.index_of(iw, it, n, m), op.crop(rows[m]), "ps")
                    if keep_ext:
                        rows_ext[n] = rows
            else:
                for n in range(N):
                    fhat = np.fft.fft2(fields[n])
                    q = []
                    for m in range(M):
                        a = sample_bandlimited(
                            None,
                            grid.dx * MM,
                            grid.dy * MM,
                            node_px[m],
                            kcut_frac=kcut_frac,
                            field_hat=fhat,
                        )
                        q.append(
                            spectral_delta(
                                op.ext_shape,
                                grid.dx * MM,
                                grid.dy * MM,
                                node_px[m],
                                2.0 * nodes[m][1] * np.conj(a),
                                kcut_frac=kcut_frac,
                            )
                        )
                        # adjoint source weights 2*w*conj(P at nodes): the
                        # plain (unconjugated) solve of this stack equals
                        # conj(Z) of the adjoint-solve convention.
                    V = op.solve_ext_batch(np.stack(q))
                    rows = (-ic_ext * V * fields[n] * dxdy).real
                    for m in range(M):
                        _store(entries, protocol.index_of(iw, it, n, m), op.crop(rows[m]), "pi")
                    if keep_ext:
                        rows_ext[n] = rows
        if keep_ext:
            _fill_rotated_ext(protocol, grid, op, entries, iw, rows_ext, rotation)


def _fill_rotated_ext(protocol, grid, op, entries, iw, rows_ext, rotation):
    """Fill the remaining angles by rotating the first-angle rows on the full
    solve grid about the array center, then cropping to the imaging grid —
    content that swings into the imaging window from the buffer is kept."""
    g = protocol.geometry
    theta0 = protocol.angles_deg[0]
    cx = (g.center[0] - grid.origin[0]) / grid.dx + op.pad_px
    cy = (g.center[1] - grid.origin[1]) / grid.dy + op.pad_px
    ny, nx = op.ext_shape
    centered = nx == ny and abs(cx - 0.5 * (nx - 1)) < 1e-9 and abs(cy - 0.5 * (ny - 1)) < 1e-9
    if rotation == "auto":
        # spectral shears are exact on band-limited rows; first-order
        # resampling blurs them, so prefer the former whenever the layout
        # allows it
        rotation = "fourier" if centered else "bilinear"
    if rotation == "fourier" and not centered:
        raise InvalidArgumentError(
            "fourier rotation reuse requires a square solve grid with the "
            "array center at its middle"
        )
    mask_radius = 0.5 * (min(nx, ny) - 1) - 1.0
    for it, theta in enumerate(protocol.angles_deg):
        if it == 0:
            continue
        dtheta = theta - theta0
        for n in range(g.n_sources):
            for m in range(g.n_sensors):
                if rotation == "fourier":
                    rot = fourier_rotate(rows_ext[n, m], dtheta, mask_radius_px=mask_radius)
                else:
                    rot = bilinear_rotate(rows_ext[n, m], dtheta, center_px=(cx, cy))
                if protocol.sensor_type == "pi":
                    rot = rot.real
                _store(
                    entries,
                    protocol.index_of(iw, it, n, m),
                    op.crop(rot),
                    protocol.sensor_type,
                )


def _assemble_fd5(tau0, protocol, grid, pml, reuse, rotation, entries):
    g = protocol.geometry
    if required_pad_px(grid, pml, protocol, margin_mm=0.0) > 0:
        raise InvalidArgumentError(
            "protocol geometry does not fit inside the grid's damping-free "
            "interior; the fd5 scheme cannot extend the grid"
        )
    angles = protocol.angles_deg if not reuse else protocol.angles_deg[:1]
    for iw, omega in enumerate(protocol.frequencies):
        op = assemble_operator(grid, tau0, omega, pml, scheme="fd5")
        ic = imaging_condition(tau0, omega)
        for it, theta in enumerate(angles):
            srcs, segs = place_arrays(g, theta)
            weights = [
                sensor_quadrature(grid, seg, forbidden_margin_px=pml.width_px, m=m, theta_deg=theta)
                for m, seg in enumerate(segs)
            ]
            P = [
                solve_forward(
                    op, point_source(grid, tuple(p), protocol.source_amplitude, scheme="fd5")
                )
                for p in srcs
            ]
            if protocol.sensor_type == "ps":
                Z = [solve_adjoint(op, adjoint_source(P[0], w, "ps", grid)) for w in weights]
                for n in range(g.n_sources):
                    for m in range(g.n_sensors):
                        r = jacobian_row(P[n], Z[m], ic, "ps", grid, omega, theta, n, m)
                        _store(entries, protocol.index_of(iw, it, n, m), r.values, "ps")
            else:
                for n in range(g.n_sources):
                    for m, w in enumerate(weights):
                        Z = solve_adjoint(op, adjoint_source(P[n], w, "pi", grid))
                        r = jacobian_row(P[n], Z, ic, "pi", grid, omega, theta, n, m)
                        _store(entries, protocol.index_of(iw, it, n, m), r.values, "pi")
        if reuse and len(protocol.angles_deg) > 1:
            _fill_rotated(protocol, grid, entries, iw, rotation)


def _fill_rotated(protocol, grid, entries, iw, rotation):
    g = protocol.geometry
    theta0 = protocol.angles_deg[0]
    center = protocol.geometry.center
    for it, theta in enumerate(protocol.angles_deg):
        if it == 0:
            continue
        for n in range(g.n_sources):
            for m in range(g.n_sensors):
                k0 = protocol.index_of(iw, 0, n, m)
                base = SensitivityRow(
                    values=np.asarray(entries[k0]).reshape(grid.shape),
                    omega=protocol.frequencies[iw],
                    theta_deg=theta0,
                    n=n,
                    m=m,
                )
                rot = rotate_sensitivity(
                    base, theta - theta0, center, grid, method=rotation
                )
                _store(entries, protocol.index_of(iw, it, n, m), rot.values, protocol.sensor_type)
