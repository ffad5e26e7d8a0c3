import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uatomo.errors import InvalidArgumentError
from uatomo.grid_medium import (
    Grid,
    MediumMap,
    PhantomSpec,
    RectanglePx,
    alpha_to_tau,
    build_phantom,
    make_grid,
    tau_to_alpha,
)


class TestMakeGrid:
    def test_table_defaults_extent(self):
        g = make_grid(256, 256, 0.15625, 0.15625)
        assert g.extent_mm == (40.0, 40.0)

    def test_single_pixel(self):
        g = make_grid(1, 1, 1.0, 1.0, origin=(0.0, 0.0))
        assert g.extent_mm == (1.0, 1.0)
        assert g.pixel_center(0, 0) == (0.0, 0.0)

    def test_rectangular(self):
        g = make_grid(2, 4, 0.5, 0.25, origin=(0.0, 0.0))
        assert g.extent_mm == (1.0, 1.0)

    def test_centered_default_origin(self):
        g = make_grid(256, 256, 0.15625, 0.15625)
        # pixel centers are symmetric about zero
        assert g.origin == (-19.921875, -19.921875)
        x = g.x_coords()
        assert x[0] == -x[-1]

    @pytest.mark.parametrize(
        "args", [(0, 4, 1.0, 1.0), (4, 0, 1.0, 1.0), (4, 4, 0.0, 1.0), (4, 4, 1.0, -2.0)]
    )
    def test_invalid_dims_rejected(self, args):
        with pytest.raises(InvalidArgumentError):
            make_grid(*args)

    @given(
        Lx=st.integers(1, 64),
        Ly=st.integers(1, 64),
        dx=st.floats(1e-3, 10, allow_nan=False),
        dy=st.floats(1e-3, 10, allow_nan=False),
        i=st.integers(0, 1000),
        j=st.integers(0, 1000),
    )
    def test_coordinate_mapping_is_affine_bijection(self, Lx, Ly, dx, dy, i, j):
        g = make_grid(Lx, Ly, dx, dy)
        i, j = i % Lx, j % Ly
        x, y = g.pixel_center(i, j)
        # invert the mapping
        assert round((x - g.origin[0]) / g.dx) == i
        assert round((y - g.origin[1]) / g.dy) == j

    @given(Lx=st.integers(1, 128), dx=st.floats(1e-3, 5, allow_nan=False))
    def test_extent_is_count_times_spacing(self, Lx, dx):
        g = make_grid(Lx, 3, dx, 1.0)
        assert math.isclose(g.extent_mm[0], Lx * dx, rel_tol=1e-12)


class TestBuildPhantom:
    def test_reference_square_insert(self):
        g = make_grid(256, 256, 0.15625, 0.15625)
        spec = PhantomSpec(0.003, ((RectanglePx(100, 150, 150, 200), 0.006),))
        m = build_phantom(g, spec, 1540.0)
        assert m.tau[175, 125] == 0.006
        assert m.tau[149, 125] == 0.003  # just below the square in y
        # inclusive bounds on all four sides
        assert m.tau[150, 100] == 0.006
        assert m.tau[200, 150] == 0.006
        assert m.tau[201, 150] == 0.003
        assert m.tau[200, 151] == 0.003
        assert np.all(m.c == 1540.0)

    def test_homogeneous_background(self):
        g = make_grid(16, 16, 1.0, 1.0)
        m = build_phantom(g, PhantomSpec(0.003), 1540.0)
        assert np.all(m.tau == 0.003)
        assert m.is_constant()

    def test_lossless(self):
        g = make_grid(8, 8, 1.0, 1.0)
        m = build_phantom(g, PhantomSpec(0.0), 1500.0)
        assert np.all(m.tau == 0.0)

    def test_out_of_bounds_inclusion_rejected(self):
        g = make_grid(32, 32, 1.0, 1.0)
        spec = PhantomSpec(0.0, ((RectanglePx(10, 40, 2, 5), 0.1),))
        with pytest.raises(InvalidArgumentError):
            build_phantom(g, spec, 1540.0)

    def test_negative_values_rejected(self):
        with pytest.raises(InvalidArgumentError):
            PhantomSpec(-0.1)
        with pytest.raises(InvalidArgumentError):
            PhantomSpec(0.0, ((RectanglePx(0, 1, 0, 1), -0.5),))

    def test_values_exact_no_interpolation(self):
        g = make_grid(10, 10, 0.3, 0.3)
        spec = PhantomSpec(0.25, ((RectanglePx(2, 4, 3, 6), 0.75),))
        m = build_phantom(g, spec, 1000.0)
        assert set(np.unique(m.tau)) == {0.25, 0.75}
        assert m.tau[3:7, 2:5].min() == 0.75
        assert (m.tau == 0.75).sum() == 3 * 4

    def test_medium_validation(self):
        g = make_grid(4, 4, 1.0, 1.0)
        with pytest.raises(InvalidArgumentError):
            MediumMap(g, np.zeros((3, 4)), np.full((4, 4), 1540.0))
        with pytest.raises(InvalidArgumentError):
            MediumMap(g, np.full((4, 4), -1e-9), np.full((4, 4), 1540.0))
        with pytest.raises(InvalidArgumentError):
            MediumMap(g, np.zeros((4, 4)), np.zeros((4, 4)))


class TestAbsorptionConversion:
    def test_background_value(self):
        assert tau_to_alpha(0.003, 1540.0, 2 * math.pi * 1e6) == pytest.approx(1.06, abs=0.01)

    def test_target_value(self):
        assert tau_to_alpha(0.006, 1540.0, 2 * math.pi * 1e6) == pytest.approx(2.13, abs=0.01)

    def test_zero(self):
        assert tau_to_alpha(0.0, 1540.0, 1e6) == 0.0
        assert alpha_to_tau(0.0, 1540.0, 1e6) == 0.0

    def test_inverse_of_published_value(self):
        assert alpha_to_tau(1.06, 1540.0, 2 * math.pi * 1e6) == pytest.approx(0.003, abs=1e-4)

    @pytest.mark.parametrize("bad", [(0.003, 0.0, 1e6), (0.003, 1540.0, -1e6)])
    def test_nonpositive_rejected(self, bad):
        with pytest.raises(InvalidArgumentError):
            tau_to_alpha(*bad)
        with pytest.raises(InvalidArgumentError):
            alpha_to_tau(*bad)

    @given(
        tau=st.floats(1e-9, 10.0),
        c=st.floats(100.0, 5000.0),
        f=st.floats(1e4, 1e8),
    )
    def test_round_trip_identity(self, tau, c, f):
        omega = 2 * math.pi * f
        back = alpha_to_tau(tau_to_alpha(tau, c, omega), c, omega)
        assert back == pytest.approx(tau, rel=1e-12)

    @given(tau=st.floats(1e-9, 1.0), a=st.floats(1e-3, 1e3))
    def test_linearity_in_tau(self, tau, a):
        omega = 2 * math.pi * 2e6
        assert tau_to_alpha(a * tau, 1540.0, omega) == pytest.approx(
            a * tau_to_alpha(tau, 1540.0, omega), rel=1e-12
        )

    def test_array_input(self):
        taus = np.array([0.0, 0.003, 0.006])
        out = tau_to_alpha(taus, 1540.0, 2 * math.pi * 1e6)
        assert out.shape == (3,)
        assert out[2] == pytest.approx(2 * out[1], rel=1e-12)
