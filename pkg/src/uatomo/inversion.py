"""Regularized linear inversion: gradient penalties, the real-split augmented
least-squares system, LSQR solving, isotropic low-pass post-filtering, and
L-curve selection of the regularization weight.

The unknown is the real absorption difference h = tau - tau0. Complex
(phase-sensitive) rows are split into real and imaginary parts, which
minimizes the identical objective over real h; phase-insensitive rows are
real to begin with.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, lsqr

from .acquisition import DataVector
from .errors import InvalidArgumentError
from .grid_medium import Grid, MediumMap
from .jacobian import JacobianMatrix, assemble_jacobian
from .helmholtz import PmlSpec

__all__ = [
    "GradientOperators",
    "AugmentedSystem",
    "Reconstruction",
    "gradient_ops",
    "build_augmented",
    "lsqr_solve",
    "lowpass_filter",
    "default_eta_grid",
    "lcurve_select",
    "reconstruct",
]

LSQR_TOL = 1e-8
LSQR_MAX_ITER = 2000
DEFAULT_CUTOFF = 1.75  # spatial frequency cutoff, cycles per mm


@dataclass
class GradientOperators:
    """Forward-difference gradients on the imaging grid (sparse, one row per
    pixel); the far-edge rows are zero so opposite edges never couple."""

    Dx: sp.csr_matrix
    Dy: sp.csr_matrix
    grid: Grid

    def seminorm(self, h: np.ndarray) -> float:
        v = h.ravel()
        return float(np.sqrt(np.linalg.norm(self.Dx @ v) ** 2 + np.linalg.norm(self.Dy @ v) ** 2))


def gradient_ops(grid: Grid) -> GradientOperators:
    Ly, Lx = grid.shape
    n = Lx * Ly
    # x-direction: within each row of the raster, pixel k couples to k+1
    idx = np.arange(n).reshape(Ly, Lx)
    rx = idx[:, :-1].ravel()
    data = np.concatenate([-np.ones(rx.size), np.ones(rx.size)]) / grid.dx
    rows = np.concatenate([rx, rx])
    cols = np.concatenate([rx, (idx[:, 1:]).ravel()])
    Dx = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    # y-direction: pixel couples to the same column one raster row down
    ry = idx[:-1, :].ravel()
    data = np.concatenate([-np.ones(ry.size), np.ones(ry.size)]) / grid.dy
    rows = np.concatenate([ry, ry])
    cols = np.concatenate([ry, (idx[1:, :]).ravel()])
    Dy = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    return GradientOperators(Dx=Dx, Dy=Dy, grid=grid)


@dataclass
class AugmentedSystem:
    """Stacked least-squares system [J; sqrt(eta) Dx; sqrt(eta) Dy] h = [r; 0; 0]
    in real-split form."""

    data_rows: np.ndarray  # real 2-D block for the measurement rows
    rhs_data: np.ndarray  # real right-hand side for those rows
    gradients: GradientOperators
    eta: float
    jacobian: JacobianMatrix
    residual: DataVector

    @property
    def n_pixels(self) -> int:
        return self.gradients.grid.n_pixels

    @property
    def rows(self) -> int:
        """Logical row count (complex rows counted once): data + 2 gradient blocks."""
        return self.jacobian.protocol.size + 2 * self.n_pixels

    @property
    def real_shape(self) -> tuple[int, int]:
        nreg = 2 * self.n_pixels if self.eta > 0 else 0
        return (self.data_rows.shape[0] + nreg, self.n_pixels)

    def rhs(self) -> np.ndarray:
        nreg = 2 * self.n_pixels if self.eta > 0 else 0
        return np.concatenate([self.rhs_data, np.zeros(nreg)])

    def operator(self) -> LinearOperator:
        A = self.data_rows
        compute_dtype = A.dtype
        Dx, Dy = self.gradients.Dx, self.gradients.Dy
        sq = np.sqrt(self.eta)
        with_reg = self.eta > 0
        shape = self.real_shape
        npix = self.n_pixels
        nd = A.shape[0]

        def matvec(x):
            xr = np.asarray(x, dtype=np.float64).ravel()
            top = A @ xr.astype(compute_dtype, copy=False)
            if not with_reg:
                return np.asarray(top, dtype=np.float64)
            return np.concatenate(
                [np.asarray(top, dtype=np.float64), sq * (Dx @ xr), sq * (Dy @ xr)]
            )

        def rmatvec(y):
            yr = np.asarray(y, dtype=np.float64).ravel()
            out = A.T @ yr[:nd].astype(compute_dtype, copy=False)
            out = np.asarray(out, dtype=np.float64)
            if with_reg:
                out = out + sq * (Dx.T @ yr[nd : nd + npix])
                out = out + sq * (Dy.T @ yr[nd + npix :])
            return out

        return LinearOperator(shape, matvec=matvec, rmatvec=rmatvec, dtype=np.float64)

    def apply(self, h: np.ndarray) -> np.ndarray:
        return self.operator().matvec(np.asarray(h).ravel())


def build_augmented(J: JacobianMatrix, residual: DataVector, eta: float) -> AugmentedSystem:
    """Real-split the measurement rows and stack the weighted gradient blocks."""
    if eta < 0 or not np.isfinite(eta):
        raise InvalidArgumentError(f"eta must be >= 0, got {eta}")
    if residual.values.shape[0] != J.shape[0]:
        raise InvalidArgumentError(
            f"residual length {residual.values.shape[0]} does not match "
            f"Jacobian rows {J.shape[0]}"
        )
    if np.iscomplexobj(J.entries):
        real_dtype = np.float32 if J.entries.dtype == np.complex64 else np.float64
        T = J.shape[0]
        data = np.empty((2 * T, J.shape[1]), dtype=real_dtype)
        data[:T] = J.entries.real
        data[T:] = J.entries.imag
        rhs = np.concatenate([residual.values.real, residual.values.imag])
    else:
        data = J.entries
        rhs = residual.values.real.copy()
    return AugmentedSystem(
        data_rows=data,
        rhs_data=rhs,
        gradients=gradient_ops(J.grid),
        eta=float(eta),
        jacobian=J,
        residual=residual,
    )


@dataclass
class Reconstruction:
    """Recovered absorption difference plus solver bookkeeping."""

    h_hat: np.ndarray
    h_raw: np.ndarray
    grid: Grid
    eta: float
    cutoff: float | None
    iterations: int
    residual_norm: float
    data_residual_norm: float
    seminorm: float
    converged: bool
    imag_residue: float = 0.0
    lcurve: list[tuple[float, float, float]] | None = None


def lsqr_solve(
    system: AugmentedSystem, tol: float = LSQR_TOL, max_iter: int = LSQR_MAX_ITER
) -> Reconstruction:
    """Iterative least squares on the real-split system; the unknown is real
    by construction, so no complex residue is ever discarded."""
    if tol <= 0:
        raise InvalidArgumentError(f"tol must be > 0, got {tol}")
    op = system.operator()
    b = system.rhs()
    result = lsqr(op, b, atol=tol, btol=tol, iter_lim=int(max_iter))
    x, istop, itn, r1norm = result[0], result[1], result[2], result[3]
    grid = system.gradients.grid
    h = x.reshape(grid.shape)
    E = system.jacobian.entries
    xe = x if E.dtype in (np.float64, np.complex128) else x.astype(np.float32)
    data_res = E @ xe - system.residual.values
    return Reconstruction(
        h_hat=h,
        h_raw=h,
        grid=grid,
        eta=system.eta,
        cutoff=None,
        iterations=int(itn),
        residual_norm=float(r1norm),
        data_residual_norm=float(np.linalg.norm(data_res)),
        seminorm=system.gradients.seminorm(h),
        converged=istop != 7,
    )


def lowpass_filter(h: np.ndarray, cutoff: float, grid: Grid) -> np.ndarray:
    """Zero all spatial-frequency content above ``cutoff`` (cycles/mm) with an
    isotropic circular mask; returns the real part."""
    if cutoff <= 0:
        raise InvalidArgumentError(f"cutoff must be > 0, got {cutoff}")
    kx = np.fft.fftfreq(grid.Lx, d=grid.dx)
    ky = np.fft.fftfreq(grid.Ly, d=grid.dy)
    mask = (kx[None, :] ** 2 + ky[:, None] ** 2) <= cutoff**2
    return np.fft.ifft2(np.fft.fft2(h) * mask).real


def _max_curvature_index(xs: np.ndarray, ys: np.ndarray) -> int:
    """Index of the largest-magnitude discrete (Menger) curvature; endpoints
    excluded."""
    best, best_k = 1, 0.0
    for i in range(1, len(xs) - 1):
        p0 = np.array([xs[i - 1], ys[i - 1]])
        p1 = np.array([xs[i], ys[i]])
        p2 = np.array([xs[i + 1], ys[i + 1]])
        a, bb, c = p1 - p0, p2 - p1, p2 - p0
        denom = np.linalg.norm(a) * np.linalg.norm(bb) * np.linalg.norm(c)
        if denom == 0:
            continue
        kappa = abs(2.0 * float(a[0] * bb[1] - a[1] * bb[0])) / denom
        if kappa > best_k:
            best_k, best = kappa, i
    return best


def default_eta_grid(J: JacobianMatrix, n: int = 15, decades: float = 6.0) -> np.ndarray:
    """Log-spaced grid centered on the Frobenius-norm anchor
    ||J||_F^2 / (2 ||[Dx; Dy]||_F^2)."""
    g = gradient_ops(J.grid)
    jf = float(np.linalg.norm(J.entries)) ** 2
    df = float(g.Dx.power(2).sum() + g.Dy.power(2).sum())
    anchor = jf / (2.0 * df)
    half = 10.0 ** (decades / 2.0)
    return np.geomspace(anchor / half, anchor * half, n)


def lcurve_select(
    J: JacobianMatrix,
    residual: DataVector,
    eta_grid,
    tol: float = LSQR_TOL,
    max_iter: int = LSQR_MAX_ITER,
    jobs: int = 1,
) -> tuple[float, list[tuple[float, float, float]]]:
    """Solve per grid point and pick the eta at the corner (maximum discrete
    curvature) of the log residual-norm vs log seminorm curve. Returns the
    full (eta, residual_norm, seminorm) curve for manual override. ``jobs``
    solves grid points concurrently (thread-level; the matrix is shared)."""
    etas = np.asarray(list(eta_grid), dtype=float)
    if etas.size < 3:
        raise InvalidArgumentError("eta grid needs at least 3 values")
    if np.any(etas <= 0):
        raise InvalidArgumentError("eta grid values must be strictly positive")
    if np.any(np.diff(etas) <= 0):
        raise InvalidArgumentError("eta grid must be strictly increasing")

    def solve_one(eta):
        sol = lsqr_solve(build_augmented(J, residual, eta), tol=tol, max_iter=max_iter)
        return (float(eta), sol.residual_norm, sol.seminorm)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=int(jobs)) as pool:
            curve = list(pool.map(solve_one, etas))
    else:
        curve = [solve_one(eta) for eta in etas]
    logs = np.log(np.maximum([c[1] for c in curve], 1e-300))
    semis = np.log(np.maximum([c[2] for c in curve], 1e-300))
    corner = _max_curvature_index(logs, semis)
    return curve[corner][0], curve


def reconstruct(
    g: DataVector,
    tau0: MediumMap,
    protocol,
    grid: Grid,
    pml: PmlSpec | None = None,
    eta: float | str = 0.0,
    cutoff: float | None = DEFAULT_CUTOFF,
    scheme: str = "spectral",
    jacobian: JacobianMatrix | None = None,
    tol: float = LSQR_TOL,
    max_iter: int = LSQR_MAX_ITER,
    jacobian_dtype=None,
    jobs: int = 1,
) -> Reconstruction:
    """Full linearized inversion: simulate the background data, form the
    residual, assemble (or accept) the Jacobian, solve the augmented system,
    and low-pass the result. ``eta="lcurve"`` selects the weight
    automatically and attaches the curve."""
    from .acquisition import simulate_measurements

    y0 = simulate_measurements(tau0, protocol, grid, pml, scheme=scheme)
    residual = g.copy_with(g.values - y0.values)
    J = jacobian
    if J is None:
        J = assemble_jacobian(
            tau0, protocol, grid, pml, scheme=scheme, dtype=jacobian_dtype
        )
    curve = None
    if isinstance(eta, str):
        if eta != "lcurve":
            raise InvalidArgumentError(f"eta must be a number or 'lcurve', got {eta!r}")
        eta, curve = lcurve_select(
            J, residual, default_eta_grid(J), tol=tol, max_iter=max_iter, jobs=jobs
        )
    sol = lsqr_solve(build_augmented(J, residual, float(eta)), tol=tol, max_iter=max_iter)
    h = sol.h_raw
    if cutoff is not None:
        h = lowpass_filter(h, cutoff, grid)
    sol.h_hat = h
    sol.cutoff = cutoff
    sol.lcurve = curve
    return sol
