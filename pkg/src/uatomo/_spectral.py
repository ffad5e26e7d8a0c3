"""Internal numerical core: Fourier-Laplacian Helmholtz solves on rectangular
grids with a separable absorbing boundary layer.

The operator treated here is

    A u = lap(u) + (m0 + i*(gx(x) + gy(y))) u + extra(x, y) u

where ``lap`` is the exact FFT Laplacian, ``m0`` a constant complex mass,
``gx``/``gy`` real 1-D damping profiles (the absorbing layer), and ``extra``
an optional complex field supported on a small set of pixels (medium
anomalies). Without ``extra`` the operator is a Kronecker sum of two dense
1-D operators and is inverted exactly by a pair of eigendecompositions; the
``extra`` term is folded in through a Woodbury low-rank correction. This gives
millisecond direct solves at the grid sizes used here, with residuals at the
1e-10 level.

Everything in this module works in SI units (metres) and fractional *pixel*
coordinates; unit conversion happens in the calling layers.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import SolverError

__all__ = [
    "SolveCounter",
    "SOLVE_COUNTER",
    "sponge_profile",
    "SeparableHelmholtz",
    "WoodburyCorrection",
    "spectral_delta",
    "sample_bandlimited",
    "fourier_rotate",
    "bilinear_rotate",
]


class SolveCounter:
    """Counts factorization applications (one per right-hand side)."""

    def __init__(self):
        self.count = 0

    def add(self, n=1):
        self.count += n

    def reset(self):
        self.count = 0


#: Global counter shared by all solver instances (tests read/reset it).
SOLVE_COUNTER = SolveCounter()


def sponge_profile(n: int, width: int, strength: float) -> np.ndarray:
    """Quadratic damping ramp over the outermost ``width`` samples of an axis.

    Rises from 0 at the inner edge of the layer to ``strength`` at the outer
    boundary; evaluated at pixel centers (half-sample offsets).
    """
    g = np.zeros(n, dtype=np.float64)
    if width <= 0 or strength == 0.0:
        return g
    if 2 * width >= n:
        raise SolverError(
            f"absorbing layer of width {width} px does not fit in {n} px axis",
            width=width,
            n=n,
        )
    depth = (width - np.arange(width) - 0.5) / width
    ramp = strength * depth**2
    g[:width] = ramp
    g[n - width :] = ramp[::-1]
    return g


def _spectral_lap1d(n: int, d_m: float) -> np.ndarray:
    """Dense matrix of the 1-D FFT Laplacian (exact for grid-periodic modes)."""
    k = 2.0 * np.pi * np.fft.fftfreq(n, d_m)
    first_col = np.fft.ifft(-(k**2)).real
    return sla.circulant(first_col)


class SeparableHelmholtz:
    """Exact direct solver for the constant-medium operator with separable damping.

    Parameters
    ----------
    nx, ny : int
        Grid size (fields are ``(ny, nx)`` arrays).
    dx_m, dy_m : float
        Spacing in metres.
    mass : complex
        Constant interior mass term added to the Laplacian diagonal (1/m^2).
    damp_x, damp_y : ndarray
        Real 1-D profiles; ``i*(damp_x + damp_y)`` is added to the mass.
        Already scaled to 1/m^2.
    """

    def __init__(self, nx, ny, dx_m, dy_m, mass, damp_x, damp_y):
        self.nx, self.ny = int(nx), int(ny)
        self.dx_m, self.dy_m = float(dx_m), float(dy_m)
        self.mass = complex(mass)
        self.damp_x = np.asarray(damp_x, dtype=np.float64)
        self.damp_y = np.asarray(damp_y, dtype=np.float64)
        if self.damp_x.shape != (self.nx,) or self.damp_y.shape != (self.ny,):
            raise SolverError("damping profile shapes do not match grid")

        share = (
            self.nx == self.ny
            and self.dx_m == self.dy_m
            and np.array_equal(self.damp_x, self.damp_y)
        )
        Ax = _spectral_lap1d(self.nx, self.dx_m).astype(np.complex128)
        Ax[np.diag_indices(self.nx)] += 1j * self.damp_x
        lx, Wx = sla.eig(Ax)
        if share:
            ly, Wy = lx, Wx
        else:
            Ay = _spectral_lap1d(self.ny, self.dy_m).astype(np.complex128)
            Ay[np.diag_indices(self.ny)] += 1j * self.damp_y
            ly, Wy = sla.eig(Ay)
        # constant mass folded into the x eigenvalues (shift by a multiple of I)
        self._lx = lx + self.mass
        self._Wx = Wx
        self._Wxi = sla.inv(Wx)
        self._Wy = Wy
        self._Wyi = self._Wxi if share else sla.inv(Wy)
        self._D = ly[:, None] + self._lx[None, :]
        small = np.abs(self._D).min()
        scale = np.abs(self._D).max()
        if small < 1e-12 * scale:
            raise SolverError(
                "operator is numerically singular (undamped resonance); "
                "add absorption or an absorbing layer",
                min_eig=small,
                max_eig=scale,
            )

    @property
    def shape(self):
        return (self.ny, self.nx)

    def mass_field(self) -> np.ndarray:
        """Dense (ny, nx) mass term of the base operator."""
        return self.mass + 1j * (self.damp_y[:, None] + self.damp_x[None, :])

    def _solve_raw(self, rhs: np.ndarray) -> np.ndarray:
        T = self._Wyi @ rhs @ self._Wxi.T
        T /= self._D
        return self._Wy @ T @ self._Wx.T

    def _solve_raw_batch(self, rhs: np.ndarray) -> np.ndarray:
        T = np.matmul(self._Wyi[None], np.matmul(rhs, self._Wxi.T[None]))
        T /= self._D[None]
        return np.matmul(self._Wy[None], np.matmul(T, self._Wx.T[None]))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve A u = rhs for one (ny, nx) right-hand side."""
        SOLVE_COUNTER.add(1)
        return self._solve_raw(rhs)

    def solve_batch(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for a (b, ny, nx) batch of right-hand sides."""
        rhs = np.asarray(rhs)
        SOLVE_COUNTER.add(rhs.shape[0])
        return self._solve_raw_batch(rhs)

    def apply(self, u: np.ndarray, extra_mass: np.ndarray | None = None) -> np.ndarray:
        """Apply the operator (FFT Laplacian + mass); broadcasts over leading axes."""
        kx = 2.0 * np.pi * np.fft.fftfreq(self.nx, self.dx_m)
        ky = 2.0 * np.pi * np.fft.fftfreq(self.ny, self.dy_m)
        k2 = kx[None, :] ** 2 + ky[:, None] ** 2
        out = np.fft.ifft2(np.fft.fft2(u, axes=(-2, -1)) * (-k2), axes=(-2, -1))
        out += self.mass_field() * u
        if extra_mass is not None:
            out += extra_mass * u
        return out


class WoodburyCorrection:
    """Direct solver for (A + diag(extra_mass)) built on a :class:`SeparableHelmholtz`.

    ``extra_mass`` must vanish outside a modest set of pixels; the setup cost
    is one batched solve per support pixel and the per-RHS cost is two base
    solves plus a dense triangular solve on the support.
    """

    def __init__(self, base: SeparableHelmholtz, extra_mass: np.ndarray, chunk: int = 256):
        self.base = base
        extra = np.asarray(extra_mass, dtype=np.complex128)
        if extra.shape != base.shape:
            raise SolverError("extra_mass shape does not match solver grid")
        flat = extra.ravel()
        self.idx = np.flatnonzero(flat != 0)
        self.v = flat[self.idx]
        s = self.idx.size
        if s == 0:
            self._lu = None
            return
        ny, nx = base.shape
        G = np.empty((s, s), dtype=np.complex128)
        for start in range(0, s, chunk):
            stop = min(start + chunk, s)
            B = np.zeros((stop - start, ny * nx), dtype=np.complex128)
            B[np.arange(stop - start), self.idx[start:stop]] = 1.0
            U = self.base._solve_raw_batch(B.reshape(-1, ny, nx))
            G[:, start:stop] = U.reshape(stop - start, -1)[:, self.idx].T
        M = np.eye(s, dtype=np.complex128) + self.v[:, None] * G
        self._lu = sla.lu_factor(M)

    @property
    def shape(self):
        return self.base.shape

    def extra_mass_field(self) -> np.ndarray:
        out = np.zeros(np.prod(self.base.shape), dtype=np.complex128)
        out[self.idx] = self.v
        return out.reshape(self.base.shape)

    def _solve_raw(self, rhs: np.ndarray) -> np.ndarray:
        u0 = self.base._solve_raw(rhs)
        if self._lu is None:
            return u0
        w = sla.lu_solve(self._lu, self.v * u0.ravel()[self.idx])
        corr = np.zeros(np.prod(self.base.shape), dtype=np.complex128)
        corr[self.idx] = w
        return u0 - self.base._solve_raw(corr.reshape(self.base.shape))

    def _solve_raw_batch(self, rhs: np.ndarray) -> np.ndarray:
        u0 = self.base._solve_raw_batch(rhs)
        if self._lu is None:
            return u0
        b = u0.shape[0]
        w = sla.lu_solve(self._lu, (self.v[None] * u0.reshape(b, -1)[:, self.idx]).T).T
        corr = np.zeros((b, np.prod(self.base.shape)), dtype=np.complex128)
        corr[:, self.idx] = w
        return u0 - self.base._solve_raw_batch(corr.reshape(u0.shape))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        SOLVE_COUNTER.add(1)
        return self._solve_raw(rhs)

    def solve_batch(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs)
        SOLVE_COUNTER.add(rhs.shape[0])
        return self._solve_raw_batch(rhs)


def _disc_mask(nx, ny, dx_m, dy_m, kcut_frac):
    """Boolean k-space mask keeping |k| <= kcut_frac * pi/max_spacing-equivalent."""
    kx = 2.0 * np.pi * np.fft.fftfreq(nx, dx_m)
    ky = 2.0 * np.pi * np.fft.fftfreq(ny, dy_m)
    kmax = kcut_frac * np.pi / max(dx_m, dy_m)
    return (kx[None, :] ** 2 + ky[:, None] ** 2) <= kmax**2


def spectral_delta(
    shape: tuple[int, int],
    dx_m: float,
    dy_m: float,
    points_px: np.ndarray,
    weights,
    kcut_frac: float | None = 0.8,
) -> np.ndarray:
    """Band-limited superposition of weighted deltas at fractional pixel positions.

    Returns a (ny, nx) complex field whose integral (sum * dx * dy) equals the
    sum of ``weights``; each delta sits at its exact, generally off-grid,
    position. ``kcut_frac=None`` keeps the full square spectrum; otherwise the
    spectrum is limited to the isotropic disc |k| <= kcut_frac * (pi/d).
    """
    ny, nx = shape
    pts = np.atleast_2d(np.asarray(points_px, dtype=np.float64))
    w = np.broadcast_to(np.asarray(weights, dtype=np.complex128).ravel(), (pts.shape[0],))
    kx = 2.0 * np.pi * np.fft.fftfreq(nx)  # per-pixel angular frequency
    ky = 2.0 * np.pi * np.fft.fftfreq(ny)
    phase = np.zeros((ny, nx), dtype=np.complex128)
    for (fi, fj), wt in zip(pts, w):
        phase += wt * np.exp(-1j * (ky[:, None] * fj + kx[None, :] * fi))
    if kcut_frac is not None:
        phase *= _disc_mask(nx, ny, dx_m, dy_m, kcut_frac)
    return np.fft.ifft2(phase) / (dx_m * dy_m)


def sample_bandlimited(
    field: np.ndarray,
    dx_m: float,
    dy_m: float,
    points_px: np.ndarray,
    kcut_frac: float | None = 0.8,
    field_hat: np.ndarray | None = None,
) -> np.ndarray:
    """Evaluate the band-limited interpolant of a grid field at fractional pixels.

    Exact for fields whose spectrum lies inside the cutoff disc; the adjoint of
    :func:`spectral_delta` up to the 1/(dx*dy) density factor.
    """
    ny, nx = field.shape if field is not None else field_hat.shape
    if field_hat is None:
        field_hat = np.fft.fft2(field)
    if kcut_frac is not None:
        mask = _disc_mask(nx, ny, dx_m, dy_m, kcut_frac)
    else:
        mask = np.ones((ny, nx), dtype=bool)
    mj, mi = np.nonzero(mask)
    coeff = field_hat[mj, mi] / (nx * ny)
    kx = 2.0 * np.pi * np.fft.fftfreq(nx)
    ky = 2.0 * np.pi * np.fft.fftfreq(ny)
    pts = np.atleast_2d(np.asarray(points_px, dtype=np.float64))
    out = np.empty(pts.shape[0], dtype=np.complex128)
    chunk = max(1, int(4e6 // max(coeff.size, 1)))
    for start in range(0, pts.shape[0], chunk):
        stop = min(start + chunk, pts.shape[0])
        ph = np.exp(
            1j
            * (
                np.outer(pts[start:stop, 0], kx[mi])
                + np.outer(pts[start:stop, 1], ky[mj])
            )
        )
        out[start:stop] = ph @ coeff
    return out


def _shear_x(G, s, cy):
    n0, n1 = G.shape
    kx = 2.0 * np.pi * np.fft.fftfreq(n1)
    y = np.arange(n0) - cy
    return np.fft.ifft(np.fft.fft(G, axis=1) * np.exp(-1j * (s * y)[:, None] * kx[None, :]), axis=1)


def _shear_y(G, s, cx):
    n0, n1 = G.shape
    ky = 2.0 * np.pi * np.fft.fftfreq(n0)
    x = np.arange(n1) - cx
    return np.fft.ifft(np.fft.fft(G, axis=0) * np.exp(-1j * ky[:, None] * (s * x)[None, :]), axis=0)


def fourier_rotate(field: np.ndarray, dtheta_deg: float, mask_radius_px: float | None = None) -> np.ndarray:
    """Rotate a square field by ``dtheta_deg`` (counterclockwise in (x, y)) about
    its array center.

    Exact multiples of 90 degrees are grid permutations; the remainder
    (|angle| <= 45 deg) is applied as three FFT shear passes, which rotate
    band-limited content exactly. Content outside ``mask_radius_px`` from the
    center is zeroed first so that the periodic shears cannot wrap it into the
    region of interest.
    """
    n0, n1 = field.shape
    if n0 != n1:
        raise SolverError("fourier_rotate requires a square field", shape=field.shape)
    k90 = int(np.round(dtheta_deg / 90.0))
    resid = dtheta_deg - 90.0 * k90
    # np.rot90(k=1) maps a +x feature to -y under the row=y, col=x layout, so
    # a counterclockwise turn needs k = -k90.
    G = np.rot90(field, k=-k90).astype(np.complex128)
    c = (n0 - 1) / 2.0
    if mask_radius_px is not None:
        jj, ii = np.ogrid[:n0, :n1]
        G = G * ((jj - c) ** 2 + (ii - c) ** 2 <= mask_radius_px**2)
    if abs(resid) < 1e-12:
        return G
    a = np.deg2rad(resid)
    tn, sn = -np.tan(a / 2.0), np.sin(a)
    return _shear_x(_shear_y(_shear_x(G, tn, c), sn, c), tn, c)


def bilinear_rotate(
    field: np.ndarray,
    dtheta_deg: float,
    center_px: tuple[float, float],
) -> np.ndarray:
    """Rotate by bilinear resampling about ``center_px`` = (ci, cj); outside
    pixels map to 0. Works for real or complex fields of any shape."""
    from scipy.ndimage import map_coordinates

    n0, n1 = field.shape
    a = np.deg2rad(dtheta_deg)
    ci, cj = center_px
    jj, ii = np.meshgrid(np.arange(n0, dtype=np.float64), np.arange(n1, dtype=np.float64), indexing="ij")
    di, dj = ii - ci, jj - cj
    # pull-back: sample the source at the inverse-rotated position
    src_i = ci + np.cos(a) * di + np.sin(a) * dj
    src_j = cj - np.sin(a) * di + np.cos(a) * dj
    # map_coordinates zeroes samples even marginally outside [0, n-1]; snap
    # rotation roundoff (~n*eps) back onto the boundary so exact multiples of
    # 90 degrees stay lossless
    for src, hi in ((src_i, n1 - 1.0), (src_j, n0 - 1.0)):
        np.copyto(src, 0.0, where=np.abs(src) < 1e-9)
        np.copyto(src, hi, where=np.abs(src - hi) < 1e-9)
    if np.iscomplexobj(field):
        re = map_coordinates(field.real, [src_j, src_i], order=1, cval=0.0)
        im = map_coordinates(field.imag, [src_j, src_i], order=1, cval=0.0)
        return re + 1j * im
    return map_coordinates(field, [src_j, src_i], order=1, cval=0.0)
