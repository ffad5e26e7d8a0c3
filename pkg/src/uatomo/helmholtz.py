"""Frequency-domain acoustic operator: assembly, direct/adjoint solves, and the
pointwise imaging condition.

The continuous model is the Helmholtz operator with absorption folded into a
complex wavenumber,

    A p = lap(p) + (omega * (1 + i*tau(x)) / c(x))**2 p,

closed by an absorbing layer (quadratic damping ramp) along the domain
boundary. Two discretizations are provided:

``scheme="spectral"`` (default)
    FFT Laplacian plus a separable damping layer, inverted exactly through
    1-D eigendecompositions (see ``_spectral``). Medium anomalies relative to
    the dominant background value enter through a low-rank correction or, for
    large supports, a preconditioned iteration. The grid may be extended by
    ``pad_px`` pixels per side so that sources/sensors sit in a damping-free
    buffer outside the imaging region while the absorbing ring stays at the
    outer boundary.

``scheme="fd5"``
    Classical 5-point stencil with Dirichlet rows on the outermost pixel ring
    and a sparse LU factorization. Heterogeneous media are handled directly.
    Used for cross-validation; dispersion limits it to well-resolved setups.

All public functions take and return fields on the caller's grid in mm-based
coordinates; SI conversion is internal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._spectral import (
    SOLVE_COUNTER,
    SeparableHelmholtz,
    WoodburyCorrection,
    sponge_profile,
    spectral_delta,
)
from .errors import InvalidArgumentError, SolverError
from .grid_medium import Grid, MediumMap

__all__ = [
    "MM",
    "PmlSpec",
    "ComplexField",
    "ResolutionWarning",
    "points_per_wavelength",
    "DiscreteOperator",
    "SpectralOperator",
    "assemble_operator",
    "solve_forward",
    "solve_adjoint",
    "imaging_condition",
    "point_source",
    "reset_solve_count",
    "get_solve_count",
]

#: mm -> m conversion for grid spacings/coordinates.
MM = 1e-3

#: residual acceptance thresholds (relative, checked after every public solve)
DIRECT_RESIDUAL_TOL = 1e-10
ITERATIVE_RESIDUAL_TOL = 1e-8


class ResolutionWarning(UserWarning):
    """Grid resolves the shortest wavelength with few points per wavelength."""


@dataclass(frozen=True)
class PmlSpec:
    """Absorbing boundary layer: quadratic damping ramp over the outermost
    ``width_px`` pixels, peaking at ``strength`` (dimensionless, scales k0^2).

    ``strength=0`` or ``width_px=0`` degenerates to no absorbing layer.
    """

    width_px: int = 5
    strength: float = 2.0

    def __post_init__(self):
        if self.width_px < 0:
            raise InvalidArgumentError(f"width_px must be >= 0, got {self.width_px}")
        if not np.isfinite(self.strength) or self.strength < 0:
            raise InvalidArgumentError(f"strength must be >= 0, got {self.strength}")


@dataclass
class ComplexField:
    """A complex-valued field on a grid, tagged with its physical role
    ("source", "pressure", "adjoint", ...)."""

    values: np.ndarray
    role: str = "generic"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2:
            raise InvalidArgumentError(f"field must be 2-D, got shape {self.values.shape}")

    @property
    def shape(self):
        return self.values.shape


def points_per_wavelength(omega: float, c: float, dx_mm: float) -> float:
    """Grid points per wavelength at angular frequency ``omega`` (rad/s)."""
    return 2.0 * np.pi * c / (omega * dx_mm * MM)


def _check_resolution(grid: Grid, medium: MediumMap, omega: float) -> None:
    if not np.isfinite(omega) or omega <= 0:
        raise InvalidArgumentError(f"omega must be positive and finite, got {omega}")
    ppw = points_per_wavelength(omega, float(medium.c.min()), max(grid.dx, grid.dy))
    if ppw < 2.0:
        raise InvalidArgumentError(
            f"grid cannot represent the wavelength: {ppw:.2f} points per "
            f"wavelength at omega={omega:.4g} rad/s (need >= 2)"
        )
    if ppw < 6.0:
        warnings.warn(
            f"coarse resolution: {ppw:.2f} points per wavelength at "
            f"omega={omega:.4g} rad/s",
            ResolutionWarning,
            stacklevel=3,
        )


def _mass_field(medium: MediumMap, omega: float) -> np.ndarray:
    """Complex squared wavenumber (omega*(1+i*tau)/c)^2 in 1/m^2."""
    return ((omega * (1.0 + 1j * medium.tau)) / medium.c) ** 2


def _reference_values(medium: MediumMap) -> tuple[float, float]:
    """Dominant (most frequent) tau and c values — the anomaly-free background."""
    vals, counts = np.unique(medium.tau, return_counts=True)
    tau_ref = float(vals[np.argmax(counts)])
    vals, counts = np.unique(medium.c, return_counts=True)
    c_ref = float(vals[np.argmax(counts)])
    return tau_ref, c_ref


def make_subgrid_1x1(grid: Grid) -> Grid:
    """Single-pixel grid sharing the parent's spacing (for reference-value
    evaluation through the same array code paths)."""
    return Grid(1, 1, grid.dx, grid.dy, grid.origin)


class DiscreteOperator:
    """Sparse 5-point discretization with an LU factorization.

    Interior rows carry the stencil (1/dx^2 and 1/dy^2 off-diagonals, diagonal
    -2/dx^2 - 2/dy^2 plus the complex mass and damping); the outermost pixel
    ring carries identity rows closing the system (Dirichlet).
    """

    scheme = "fd5"

    def __init__(self, grid: Grid, medium: MediumMap, omega: float, pml: PmlSpec):
        self.grid, self.medium, self.omega, self.pml = grid, medium, float(omega), pml
        self.matrix = self._assemble()
        self._factor = None

    def _assemble(self) -> sp.csc_matrix:
        g, med, pml = self.grid, self.medium, self.pml
        Lx, Ly = g.Lx, g.Ly
        if Lx < 3 or Ly < 3:
            raise InvalidArgumentError("fd5 scheme needs at least a 3x3 grid")
        dx2 = (g.dx * MM) ** 2
        dy2 = (g.dy * MM) ** 2
        mass = _mass_field(med, self.omega)
        gx = sponge_profile(Lx, pml.width_px, pml.strength) if pml.width_px else np.zeros(Lx)
        gy = sponge_profile(Ly, pml.width_px, pml.strength) if pml.width_px else np.zeros(Ly)
        damp = (self.omega / med.c) ** 2 * (gx[None, :] + gy[:, None])
        diag = (-2.0 / dx2 - 2.0 / dy2) + mass + 1j * damp

        idx = np.arange(Lx * Ly).reshape(Ly, Lx)
        ring = np.zeros((Ly, Lx), dtype=bool)
        ring[0, :] = ring[-1, :] = True
        ring[:, 0] = ring[:, -1] = True
        interior = ~ring

        rows, cols, vals = [], [], []
        p = idx[interior]
        rows.append(p)
        cols.append(p)
        vals.append(diag[interior])
        for dj, di, w in ((0, 1, 1.0 / dx2), (0, -1, 1.0 / dx2), (1, 0, 1.0 / dy2), (-1, 0, 1.0 / dy2)):
            q = np.roll(np.roll(idx, -dj, axis=0), -di, axis=1)[interior]
            rows.append(p)
            cols.append(q)
            vals.append(np.full(p.size, w, dtype=np.complex128))
        b = idx[ring]
        rows.append(b)
        cols.append(b)
        vals.append(np.ones(b.size, dtype=np.complex128))

        n = Lx * Ly
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        return A.tocsc()

    def factor(self):
        if self._factor is None:
            try:
                self._factor = spla.splu(self.matrix)
            except RuntimeError as exc:  # singular / failed pivoting
                raise SolverError(
                    f"sparse factorization failed: {exc}",
                    omega=self.omega,
                    shape=self.grid.shape,
                ) from exc
        return self._factor

    def solve_values(self, rhs: np.ndarray, verify: bool = False) -> np.ndarray:
        SOLVE_COUNTER.add(1)
        b = rhs.ravel().astype(np.complex128)
        f = self.factor()
        out = f.solve(b)
        out += f.solve(b - self.matrix @ out)  # one refinement step
        out = out.reshape(self.grid.shape)
        if verify:
            _check_residual(
                self.apply_values(out), rhs, out, self.operator_norm(), self.residual_tol, self.omega, False
            )
        return out

    def solve_adjoint_values(self, rhs: np.ndarray, verify: bool = False) -> np.ndarray:
        """Adjoint (conjugate-transpose) solve reusing the forward factorization."""
        SOLVE_COUNTER.add(1)
        b = rhs.ravel().astype(np.complex128)
        f = self.factor()
        AH = self.matrix.conj().T
        out = f.solve(b, trans="H")
        out += f.solve(b - AH @ out, trans="H")
        out = out.reshape(self.grid.shape)
        if verify:
            _check_residual(
                self.apply_adjoint_values(out), rhs, out, self.operator_norm(), self.residual_tol, self.omega, True
            )
        return out

    def apply_values(self, u: np.ndarray) -> np.ndarray:
        return (self.matrix @ u.ravel()).reshape(self.grid.shape)

    def apply_adjoint_values(self, u: np.ndarray) -> np.ndarray:
        return (self.matrix.conj().T @ u.ravel()).reshape(self.grid.shape)

    def operator_norm(self) -> float:
        """Infinity-norm of the assembled matrix (max absolute row sum)."""
        return float(abs(self.matrix).sum(axis=1).max())

    @property
    def residual_tol(self) -> float:
        return DIRECT_RESIDUAL_TOL


class SpectralOperator:
    """FFT-Laplacian discretization with a separable absorbing layer and exact
    Kronecker-sum inversion; optional symmetric grid extension ``pad_px``.

    The solve grid is the caller's grid plus ``pad_px`` pixels on every side,
    filled with the background medium; the absorbing ring occupies the
    outermost ``pml.width_px`` pixels of the *solve* grid, leaving the pad
    interior as a damping-free buffer (where off-grid sources and sensors may
    live).
    """

    scheme = "spectral"

    def __init__(
        self,
        grid: Grid,
        medium: MediumMap,
        omega: float,
        pml: PmlSpec,
        pad_px: int = 0,
        max_lowrank: int = 4096,
        refine: int = 1,
    ):
        if pad_px < 0:
            raise InvalidArgumentError(f"pad_px must be >= 0, got {pad_px}")
        self.refine = int(refine)
        self.grid, self.medium, self.omega, self.pml = grid, medium, float(omega), pml
        self.pad_px = int(pad_px)
        self.nx = grid.Lx + 2 * self.pad_px
        self.ny = grid.Ly + 2 * self.pad_px

        tau_ref, c_ref = _reference_values(medium)
        self.tau_ref, self.c_ref = tau_ref, c_ref
        k0_sq = (self.omega / c_ref) ** 2
        gx = sponge_profile(self.nx, pml.width_px, pml.strength) if pml.width_px else np.zeros(self.nx)
        gy = sponge_profile(self.ny, pml.width_px, pml.strength) if pml.width_px else np.zeros(self.ny)
        # evaluate the reference mass through the same ufunc path as the
        # per-pixel field so background pixels cancel bitwise
        ref_med = type(medium)(
            make_subgrid_1x1(grid), np.array([[tau_ref]]), np.array([[c_ref]])
        )
        mass0 = complex(_mass_field(ref_med, self.omega)[0, 0])
        self.base = SeparableHelmholtz(
            self.nx, self.ny, grid.dx * MM, grid.dy * MM, mass0, k0_sq * gx, k0_sq * gy
        )

        extra_user = _mass_field(medium, self.omega) - mass0
        # strip rounding residue; genuine anomalies are many orders larger
        extra_user[np.abs(extra_user) <= 1e-12 * abs(mass0)] = 0.0
        extra = np.zeros((self.ny, self.nx), dtype=np.complex128)
        p = self.pad_px
        extra[p : p + grid.Ly, p : p + grid.Lx] = extra_user
        self._extra = extra
        nnz = int(np.count_nonzero(extra))
        if nnz == 0:
            self._mode = "direct"
            self._solver = self.base
        elif nnz <= max_lowrank:
            self._mode = "direct"
            self._solver = WoodburyCorrection(self.base, extra)
        else:
            self._mode = "iterative"
            self._solver = None

    # -- extended-grid internals ------------------------------------------

    @property
    def ext_shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def embed(self, user_values: np.ndarray) -> np.ndarray:
        if self.pad_px == 0:
            return np.asarray(user_values, dtype=np.complex128)
        out = np.zeros(self.ext_shape, dtype=np.complex128)
        p = self.pad_px
        out[p : p + self.grid.Ly, p : p + self.grid.Lx] = user_values
        return out

    def crop(self, ext_values: np.ndarray) -> np.ndarray:
        if self.pad_px == 0:
            return ext_values
        p = self.pad_px
        return ext_values[p : p + self.grid.Ly, p : p + self.grid.Lx]

    def ext_origin_px(self) -> tuple[float, float]:
        """Fractional-pixel coordinates on the solve grid of the user-grid
        pixel (0, 0) — i.e. the pad offset."""
        return (float(self.pad_px), float(self.pad_px))

    def apply_ext(self, u: np.ndarray) -> np.ndarray:
        return self.base.apply(u, self._extra)

    def apply_adjoint_ext(self, u: np.ndarray) -> np.ndarray:
        # the operator matrix is complex symmetric: A^H u = conj(A conj(u))
        return np.conj(self.apply_ext(np.conj(u)))

    def operator_norm(self) -> float:
        """Upper estimate of the operator norm: max |k|^2 plus mass bounds."""
        kmax2 = (np.pi / (self.grid.dx * MM)) ** 2 + (np.pi / (self.grid.dy * MM)) ** 2
        mass_max = np.abs(self.base.mass_field()).max() + np.abs(self._extra).max()
        return float(kmax2 + mass_max)

    def _solve_iterative(self, rhs: np.ndarray) -> np.ndarray:
        n = self.nx * self.ny
        extra = self._extra

        def matvec(v):
            return self.apply_ext(v.reshape(self.ext_shape)).ravel()

        def prec(v):
            # preconditioner applications are not logical solves: uncounted
            return self.base._solve_raw(v.reshape(self.ext_shape)).ravel()

        A = spla.LinearOperator((n, n), matvec=matvec, dtype=np.complex128)
        M = spla.LinearOperator((n, n), matvec=prec, dtype=np.complex128)
        b = rhs.ravel()
        try:
            u, info = spla.bicgstab(A, b, M=M, rtol=ITERATIVE_RESIDUAL_TOL / 10, atol=0.0, maxiter=400)
        except TypeError:  # older scipy spells it `tol`
            u, info = spla.bicgstab(A, b, M=M, tol=ITERATIVE_RESIDUAL_TOL / 10, atol=0.0, maxiter=400)
        if info != 0:
            raise SolverError(
                "iterative solve did not converge",
                omega=self.omega,
                info=info,
                anomaly_pixels=int(np.count_nonzero(extra)),
            )
        return u.reshape(self.ext_shape)

    def solve_ext(self, rhs: np.ndarray) -> np.ndarray:
        if self._mode == "direct":
            u = self._solver.solve(rhs)
            for _ in range(self.refine):  # knocks eigenbasis roundoff to ~1e-12
                u = u + self._solver._solve_raw(rhs - self.apply_ext(u))
            return u
        SOLVE_COUNTER.add(1)
        return self._solve_iterative(rhs)

    def solve_ext_batch(self, rhs: np.ndarray) -> np.ndarray:
        if self._mode == "direct":
            u = self._solver.solve_batch(rhs)
            for _ in range(self.refine):
                u = u + self._solver._solve_raw_batch(rhs - self.apply_ext(u))
            return u
        SOLVE_COUNTER.add(rhs.shape[0] - 1)  # per-RHS add happens in solve_ext
        return np.stack([self._solve_iterative(r) for r in rhs])

    def solve_adjoint_ext(self, rhs: np.ndarray) -> np.ndarray:
        """A^H z = b via the complex-symmetry trick: z = conj(A^{-1} conj(b))."""
        return np.conj(self.solve_ext(np.conj(rhs)))

    def solve_adjoint_ext_batch(self, rhs: np.ndarray) -> np.ndarray:
        return np.conj(self.solve_ext_batch(np.conj(rhs)))

    # -- user-grid API ------------------------------------------------------

    def solve_values(self, rhs: np.ndarray, verify: bool = False) -> np.ndarray:
        b = self.embed(rhs)
        u = self.solve_ext(b)
        if verify:
            _check_residual(self.apply_ext(u), b, u, self.operator_norm(), self.residual_tol, self.omega, False)
        return self.crop(u)

    def solve_adjoint_values(self, rhs: np.ndarray, verify: bool = False) -> np.ndarray:
        b = self.embed(rhs)
        z = self.solve_adjoint_ext(b)
        if verify:
            _check_residual(self.apply_adjoint_ext(z), b, z, self.operator_norm(), self.residual_tol, self.omega, True)
        return self.crop(z)

    def apply_values(self, u: np.ndarray) -> np.ndarray:
        if self.pad_px:
            raise SolverError("apply on the user grid is only defined for pad_px=0")
        return self.apply_ext(np.asarray(u, dtype=np.complex128))

    @property
    def residual_tol(self) -> float:
        return DIRECT_RESIDUAL_TOL if self._mode == "direct" else ITERATIVE_RESIDUAL_TOL


def assemble_operator(
    grid: Grid,
    medium: MediumMap,
    omega: float,
    pml: PmlSpec | None = None,
    scheme: str = "spectral",
    pad_px: int = 0,
):
    """Build the discrete frequency-domain operator for one angular frequency.

    Warns (``ResolutionWarning``) below 6 points per wavelength and refuses to
    assemble below 2 (the grid cannot carry the wave at all).
    """
    if pml is None:
        pml = PmlSpec()
    if medium.grid is not grid and medium.grid != grid:
        raise InvalidArgumentError("medium is defined on a different grid")
    _check_resolution(grid, medium, omega)
    if scheme == "spectral":
        return SpectralOperator(grid, medium, omega, pml, pad_px=pad_px)
    if scheme == "fd5":
        if pad_px:
            raise InvalidArgumentError("pad_px is only supported by the spectral scheme")
        return DiscreteOperator(grid, medium, omega, pml)
    raise InvalidArgumentError(f"unknown scheme {scheme!r} (expected 'spectral' or 'fd5')")


def _check_residual(
    Au: np.ndarray,
    rhs: np.ndarray,
    u: np.ndarray,
    op_norm: float,
    tol: float,
    omega: float,
    adjoint: bool,
) -> None:
    """Normwise backward-error check: ||Au - b|| / (||b|| + ||A||*||u||) <= tol.

    The ||A||*||u|| term keeps the criterion meaningful when the residual
    evaluation itself is dominated by rounding in A@u (stiff scalings); for
    well-scaled systems it reduces to the plain relative residual.
    """
    denom = np.linalg.norm(rhs) + op_norm * np.linalg.norm(u)
    if denom == 0:
        return
    rel = np.linalg.norm(Au - rhs) / denom
    if rel > tol:
        raise SolverError(
            "solve residual exceeds tolerance",
            residual=float(rel),
            tolerance=tol,
            omega=omega,
            adjoint=adjoint,
        )


def solve_forward(op, source: ComplexField, verify: bool = True) -> ComplexField:
    """Solve A p = s on the operator's grid and return the pressure field."""
    if source.values.shape != op.grid.shape:
        raise InvalidArgumentError(
            f"source shape {source.values.shape} does not match grid {op.grid.shape}"
        )
    return ComplexField(op.solve_values(source.values, verify=verify), role="pressure")


def solve_adjoint(op, source: ComplexField, verify: bool = True) -> ComplexField:
    """Solve A^H z = q, reusing the forward factorization/decomposition."""
    if source.values.shape != op.grid.shape:
        raise InvalidArgumentError(
            f"adjoint source shape {source.values.shape} does not match grid {op.grid.shape}"
        )
    return ComplexField(op.solve_adjoint_values(source.values, verify=verify), role="adjoint")


def imaging_condition(medium: MediumMap, omega: float) -> ComplexField:
    """Pointwise derivative of the operator with respect to the absorption map:
    d(mass)/d(tau) = 2i * (omega/c)^2 * (1 + i*tau), per pixel (units 1/m^2)."""
    if not np.isfinite(omega) or omega <= 0:
        raise InvalidArgumentError(f"omega must be positive and finite, got {omega}")
    vals = 2j * (omega / medium.c) ** 2 * (1.0 + 1j * medium.tau)
    return ComplexField(vals, role="sensitivity-weight")


def point_source(
    grid: Grid,
    position_mm: tuple[float, float],
    amplitude: complex = 1.0,
    scheme: str = "spectral",
    kcut_frac: float | None = 0.8,
) -> ComplexField:
    """Unit point source (area density ``amplitude/(dx*dy)``, SI) at a position
    given in mm.

    Spectral scheme: band-limited delta at the exact (generally off-grid)
    position; ``kcut_frac=None`` keeps the full square spectrum. fd5 scheme:
    single-pixel delta at the nearest grid node.
    """
    x, y = position_mm
    if not grid.contains_point(x, y):
        raise InvalidArgumentError(f"source position {position_mm} lies outside the grid")
    fi = (x - grid.origin[0]) / grid.dx
    fj = (y - grid.origin[1]) / grid.dy
    if scheme == "spectral":
        vals = amplitude * spectral_delta(
            grid.shape, grid.dx * MM, grid.dy * MM, [(fi, fj)], [1.0], kcut_frac=kcut_frac
        )
    elif scheme == "fd5":
        vals = np.zeros(grid.shape, dtype=np.complex128)
        vals[int(round(fj)), int(round(fi))] = amplitude / (grid.dx * MM * grid.dy * MM)
    else:
        raise InvalidArgumentError(f"unknown scheme {scheme!r}")
    return ComplexField(vals, role="source")


def reset_solve_count() -> None:
    """Zero the global linear-solve counter."""
    SOLVE_COUNTER.reset()


def get_solve_count() -> int:
    """Number of right-hand sides solved since the last reset."""
    return SOLVE_COUNTER.count
