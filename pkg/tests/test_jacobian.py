"""Adjoint-state Jacobian: finite-difference oracles, rotation reuse, bookkeeping."""

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from uatomo.acquisition import (
    AcquisitionProtocol,
    ArrayGeometry,
    SensorSegment,
    sensor_quadrature,
    simulate_measurements,
)
from uatomo.errors import InvalidArgumentError
from uatomo.grid_medium import MediumMap, make_grid
from uatomo.helmholtz import (
    ComplexField,
    PmlSpec,
    get_solve_count,
    imaging_condition,
    reset_solve_count,
)
from uatomo.jacobian import (
    JacobianMatrix,
    SensitivityRow,
    adjoint_source,
    assemble_jacobian,
    jacobian_row,
    rotate_sensitivity,
)

OMEGA = 2 * np.pi * 0.5e6


def homogeneous(grid, tau=0.003, c=1540.0):
    return MediumMap(grid, tau=np.full(grid.shape, tau), c=np.full(grid.shape, c))


def small_setup(sensor_type="ps", angles=(0.0,)):
    grid = make_grid(64, 64, 0.3125, 0.3125)
    tau0 = homogeneous(grid)
    geom = ArrayGeometry(
        n_sources=3, n_sensors=3, array_length=8.0, separation=12.0, sensor_width=1.5
    )
    prot = AcquisitionProtocol(geom, (OMEGA,), angles, sensor_type)
    return grid, tau0, prot, PmlSpec(24, 2.0)


class TestAdjointSourceAndRow:
    def test_ps_source_is_weight_density_independent_of_field(self):
        grid = make_grid(32, 32, 0.5, 0.5)
        w = sensor_quadrature(grid, SensorSegment((0.0, 0.0), (1.0, 0.0), 1.0))
        Pa = ComplexField(np.full(grid.shape, 1 + 2j))
        Pb = ComplexField(np.full(grid.shape, -5j))
        qa = adjoint_source(Pa, w, "ps", grid)
        qb = adjoint_source(Pb, w, "ps", grid)
        assert np.array_equal(qa.values, qb.values)
        area_m2 = (grid.dx * 1e-3) * (grid.dy * 1e-3)
        assert qa.values.sum() * area_m2 == pytest.approx(1.0, rel=1e-9)

    def test_pi_source_doubles_real_field_times_weights(self):
        grid = make_grid(32, 32, 0.5, 0.5)
        w = sensor_quadrature(grid, SensorSegment((0.0, 0.0), (1.0, 0.0), 1.0))
        P = ComplexField(np.full(grid.shape, 3.0 + 0j))
        q = adjoint_source(P, w, "pi", grid)
        dens = w.as_field(grid) / ((grid.dx * 1e-3) * (grid.dy * 1e-3))
        np.testing.assert_allclose(q.values, 2.0 * 3.0 * dens, rtol=1e-12)
        assert np.all(q.values.imag == 0.0)

    def test_mismatched_grid_rejected(self):
        grid = make_grid(32, 32, 0.5, 0.5)
        w = sensor_quadrature(grid, SensorSegment((0.0, 0.0), (1.0, 0.0), 1.0))
        P = ComplexField(np.zeros((16, 16), dtype=complex))
        with pytest.raises(InvalidArgumentError):
            adjoint_source(P, w, "ps", grid)

    def test_row_formula_pointwise(self):
        grid = make_grid(4, 4, 0.5, 0.5)
        rng = np.random.default_rng(0)
        P = ComplexField(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
        Z = ComplexField(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
        ic = ComplexField(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
        row = jacobian_row(P, Z, ic, "ps", grid, omega=1.0, theta_deg=2.0, n=3, m=4)
        expect = -ic.values * np.conj(Z.values) * P.values * (0.5e-3 * 0.5e-3)
        np.testing.assert_allclose(row.values, expect, rtol=1e-15)
        assert (row.omega, row.theta_deg, row.n, row.m) == (1.0, 2.0, 3, 4)

    def test_zero_field_gives_zero_row(self):
        grid = make_grid(8, 8, 0.5, 0.5)
        zero = ComplexField(np.zeros((8, 8), dtype=complex))
        ic = imaging_condition(homogeneous(grid), OMEGA)
        row = jacobian_row(zero, zero, ic, "ps", grid)
        assert np.all(row.values == 0.0)

    def test_pi_row_is_real(self):
        grid = make_grid(8, 8, 0.5, 0.5)
        rng = np.random.default_rng(1)
        P = ComplexField(rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8)))
        Z = ComplexField(rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8)))
        ic = imaging_condition(homogeneous(grid), OMEGA)
        row = jacobian_row(P, Z, ic, "pi", grid)
        assert np.all(row.values.imag == 0.0)

    def test_lossless_background_row_uses_pure_imaginary_mass_derivative(self):
        grid = make_grid(8, 8, 0.5, 0.5)
        med = homogeneous(grid, tau=0.0)
        ic = imaging_condition(med, OMEGA)
        expect = 2j * (OMEGA / 1540.0) ** 2
        np.testing.assert_allclose(ic.values, expect, rtol=1e-12)

    def test_unknown_sensor_type_rejected(self):
        grid = make_grid(8, 8, 0.5, 0.5)
        f = ComplexField(np.zeros((8, 8), dtype=complex))
        with pytest.raises(InvalidArgumentError):
            jacobian_row(f, f, f, "intensity", grid)


class TestFiniteDifferenceOracle:
    def fd_probe(self, grid, tau0, prot, pml, pixel, k, eps):
        tp = tau0.tau.copy()
        tm = tau0.tau.copy()
        tp[pixel] += eps
        tm[pixel] -= eps
        yp = simulate_measurements(MediumMap(grid, tp, tau0.c), prot, grid, pml).values[k]
        ym = simulate_measurements(MediumMap(grid, tm, tau0.c), prot, grid, pml).values[k]
        return (yp - ym) / (2 * eps)

    @pytest.mark.parametrize("sensor_type,tol", [("ps", 1e-4), ("pi", 1e-3)])
    def test_rows_match_central_differences(self, sensor_type, tol):
        grid, tau0, prot, pml = small_setup(sensor_type)
        J = assemble_jacobian(tau0, prot, grid, pml)
        rng = np.random.default_rng(5)
        for _ in range(6):
            pixel = (int(rng.integers(16, 48)), int(rng.integers(16, 48)))
            k = int(rng.integers(0, prot.size))
            fd = self.fd_probe(grid, tau0, prot, pml, pixel, k, 1e-6)
            jv = J.entries[k].reshape(grid.shape)[pixel]
            assert abs(fd - jv) <= tol * abs(fd)

    def test_epsilon_sweep_shows_second_order_then_plateau(self):
        grid, tau0, prot, pml = small_setup("ps")
        J = assemble_jacobian(tau0, prot, grid, pml)
        pixel, k = (30, 35), 4
        jv = J.entries[k].reshape(grid.shape)[pixel]
        eps_list = [1e-3, 1e-4, 1e-5]
        errs = [
            abs(self.fd_probe(grid, tau0, prot, pml, pixel, k, e) - jv) / abs(jv)
            for e in eps_list
        ]
        slope = np.polyfit(np.log(eps_list[:2]), np.log(errs[:2]), 1)[0]
        assert 1.7 <= slope <= 2.3
        assert min(errs) <= 1e-6  # cancellation floor well below the O(eps^2) branch

    def test_fd5_scheme_rows_match_central_differences(self):
        grid = make_grid(96, 96, 0.3125, 0.3125, origin=(0.0, 0.0))
        tau0 = homogeneous(grid)
        geom = ArrayGeometry(
            n_sources=2,
            n_sensors=2,
            array_length=7.5,
            separation=12.5,
            sensor_width=1.5,
            center=(15.0, 15.0),
        )
        prot = AcquisitionProtocol(geom, (2 * np.pi * 0.25e6,), (0.0,), "ps")
        pml = PmlSpec(24, 2.0)
        J = assemble_jacobian(tau0, prot, grid, pml, scheme="fd5")
        rng = np.random.default_rng(7)
        for _ in range(3):
            pixel = (int(rng.integers(36, 60)), int(rng.integers(36, 60)))
            k = int(rng.integers(0, prot.size))
            tp = tau0.tau.copy()
            tm = tau0.tau.copy()
            tp[pixel] += 1e-6
            tm[pixel] -= 1e-6
            yp = simulate_measurements(
                MediumMap(grid, tp, tau0.c), prot, grid, pml, scheme="fd5"
            ).values[k]
            ym = simulate_measurements(
                MediumMap(grid, tm, tau0.c), prot, grid, pml, scheme="fd5"
            ).values[k]
            fd = (yp - ym) / 2e-6
            jv = J.entries[k].reshape(grid.shape)[pixel]
            assert abs(fd - jv) <= 1e-4 * abs(fd)

    def test_linearization_residual_shrinks_linearly(self):
        grid, tau0, prot, pml = small_setup("ps")
        J = assemble_jacobian(tau0, prot, grid, pml)
        y0 = simulate_measurements(tau0, prot, grid, pml).values
        rng = np.random.default_rng(9)
        h_dir = gaussian_filter(rng.standard_normal(grid.shape), 3.0)
        mask = np.zeros(grid.shape)
        mask[12:52, 12:52] = 1.0  # keep the buffer background untouched
        h_dir *= mask
        h_dir /= np.abs(h_dir).max()
        rels = []
        for hmax in (1e-3, 1e-4, 1e-5):
            h = hmax * h_dir
            yh = simulate_measurements(
                MediumMap(grid, tau0.tau + h, tau0.c), prot, grid, pml
            ).values
            Jh = J.entries @ h.ravel()
            rels.append(np.linalg.norm(yh - y0 - Jh) / np.linalg.norm(Jh))
        assert rels[1] <= 1e-2
        assert 5.0 <= rels[0] / rels[1] <= 20.0
        assert 5.0 <= rels[1] / rels[2] <= 20.0


class TestRotation:
    def make_row(self, grid):
        rng = np.random.default_rng(3)
        vals = gaussian_filter(rng.standard_normal(grid.shape), 2.0) + 1j * gaussian_filter(
            rng.standard_normal(grid.shape), 2.0
        )
        return SensitivityRow(values=vals, omega=OMEGA, theta_deg=10.0, n=0, m=1)

    def test_zero_angle_is_identity(self):
        grid = make_grid(64, 64, 0.3125, 0.3125)
        row = self.make_row(grid)
        for method in ("bilinear", "fourier"):
            out = rotate_sensitivity(row, 0.0, (0.0, 0.0), grid, method=method)
            np.testing.assert_allclose(out.values, row.values, atol=1e-12)

    def test_four_quarter_turns_recover_original(self):
        grid = make_grid(64, 64, 0.3125, 0.3125)
        row = self.make_row(grid)
        out = row
        for _ in range(4):
            out = rotate_sensitivity(out, 90.0, (0.0, 0.0), grid, method="bilinear")
        assert np.abs(out.values - row.values).max() <= 1e-9
        assert out.theta_deg == pytest.approx(row.theta_deg + 360.0)

    def test_fourier_requires_centered_rotation(self):
        grid = make_grid(64, 64, 0.3125, 0.3125)
        row = self.make_row(grid)
        with pytest.raises(InvalidArgumentError):
            rotate_sensitivity(row, 30.0, (5.0, 0.0), grid, method="fourier")

    def test_reused_rows_match_direct_assembly(self):
        # imaging grid 64^2 over 20 mm; deep damping-free buffer so the
        # absorber frame barely breaks rotational symmetry
        grid, tau0, _, _ = small_setup()
        geom = ArrayGeometry(
            n_sources=3, n_sensors=3, array_length=8.0, separation=12.0, sensor_width=1.5
        )
        prot = AcquisitionProtocol(geom, (OMEGA,), (0.0, 30.0, 75.0), "ps")
        pml = PmlSpec(24, 2.0)
        direct = assemble_jacobian(tau0, prot, grid, pml, reuse=False, pad_px=44)
        reused = assemble_jacobian(tau0, prot, grid, pml, reuse=True, pad_px=44)
        for it in (1, 2):
            for n in range(3):
                for m in range(3):
                    k = prot.index_of(0, it, n, m)
                    num = np.linalg.norm(reused.entries[k] - direct.entries[k])
                    den = np.linalg.norm(direct.entries[k])
                    assert num / den <= 0.02


class TestAssembly:
    def test_ps_solve_count_is_sources_plus_sensors_per_frequency(self):
        grid, tau0, _, pml = small_setup()
        geom = ArrayGeometry(
            n_sources=3, n_sensors=4, array_length=8.0, separation=12.0, sensor_width=1.5
        )
        prot = AcquisitionProtocol(geom, (OMEGA, 1.2 * OMEGA), (0.0, 40.0, 80.0), "ps")
        reset_solve_count()
        assemble_jacobian(tau0, prot, grid, pml, reuse=True)
        assert get_solve_count() == 2 * (3 + 4)

    def test_pi_needs_one_adjoint_solve_per_source_sensor_pair(self):
        grid, tau0, _, pml = small_setup()
        geom = ArrayGeometry(
            n_sources=3, n_sensors=4, array_length=8.0, separation=12.0, sensor_width=1.5
        )
        prot = AcquisitionProtocol(geom, (OMEGA,), (0.0, 40.0), "pi")
        reset_solve_count()
        assemble_jacobian(tau0, prot, grid, pml, reuse=True)
        assert get_solve_count() == 3 + 3 * 4

    def test_matrix_shape_and_row_addressing(self):
        grid, tau0, prot, pml = small_setup(angles=(0.0, 50.0))
        J = assemble_jacobian(tau0, prot, grid, pml)
        assert J.shape == (prot.size, grid.n_pixels)
        row = J.row(0, 1, 2, 1)
        k = prot.index_of(0, 1, 2, 1)
        assert np.array_equal(row.as_vector(), J.entries[k])
        assert row.values.shape == grid.shape
        assert (row.theta_deg, row.n, row.m) == (50.0, 2, 1)

    def test_reuse_with_heterogeneous_background_rejected(self):
        grid, tau0, prot, pml = small_setup()
        tau = tau0.tau.copy()
        tau[30:34, 30:34] = 0.006
        hetero = MediumMap(grid, tau, tau0.c)
        with pytest.raises(InvalidArgumentError):
            assemble_jacobian(hetero, prot, grid, pml, reuse=True)

    def test_heterogeneous_background_assembles_directly(self):
        grid, tau0, prot, pml = small_setup()
        tau = tau0.tau.copy()
        tau[30:34, 30:34] = 0.006
        hetero = MediumMap(grid, tau, tau0.c)
        J = assemble_jacobian(hetero, prot, grid, pml)  # reuse auto-disables
        assert np.isfinite(J.entries).all()

    def test_entry_dtypes(self):
        grid, tau0, prot, pml = small_setup("ps")
        assert assemble_jacobian(tau0, prot, grid, pml).entries.dtype == np.complex128
        _, _, prot_pi, _ = small_setup("pi")
        assert assemble_jacobian(tau0, prot_pi, grid, pml).entries.dtype == np.float64

    def test_preallocated_output_must_match_shape(self):
        grid, tau0, prot, pml = small_setup()
        bad = np.zeros((3, 3), dtype=np.complex128)
        with pytest.raises(InvalidArgumentError):
            assemble_jacobian(tau0, prot, grid, pml, entries_out=bad)

    def test_wrong_shape_matrix_rejected(self):
        grid, tau0, prot, pml = small_setup()
        with pytest.raises(InvalidArgumentError):
            JacobianMatrix(
                entries=np.zeros((2, 2)), protocol=prot, grid=grid, tau0_hash="x"
            )
