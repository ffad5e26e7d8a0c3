"""Tests for the experiment configuration layer: reference defaults, the
half-scale preset, derived geometry/protocol objects, TOML round trips, and
input validation."""

import dataclasses
import math

import numpy as np
import pytest

from uatomo.config import (
    FULL_FREQS_MHZ,
    ExperimentConfig,
    apply_overrides,
    config_to_toml,
    load_config,
    preset,
    save_config,
)
from uatomo.contrast import EdgeRoi
from uatomo.errors import InvalidArgumentError
from uatomo.grid_medium import RectanglePx


class TestDefaults:
    def test_reference_parameter_set(self):
        cfg = ExperimentConfig()
        assert cfg.scale == "full"
        assert cfg.grid_px == 256
        assert cfg.dx_mm == 0.15625
        assert cfg.pml_width_px == 5
        assert cfg.pml_strength == 2.0
        assert cfg.separation_mm == 30.0
        assert cfg.array_length_mm == 30.0
        assert cfg.n_sources == 10 and cfg.n_sensors == 10
        assert cfg.sensor_width_mm == 1.0
        assert cfg.sensor_type == "ps"
        assert cfg.source_amplitude == 1.0
        assert cfg.freqs_mhz == (1.5, 1.75, 2.0, 2.25, 2.5)
        assert cfg.dtheta_deg == 7.5
        assert cfg.tau0 == 0.003 and cfg.tau_square == 0.006
        assert cfg.sound_speed == 1540.0
        assert cfg.noise_level == 0.0
        assert cfg.eta == "lcurve"
        assert cfg.cutoff_mm_inv == 1.75

    def test_domain_is_40mm_square(self):
        g = ExperimentConfig().grid()
        assert g.shape == (256, 256)
        assert g.Lx * g.dx == pytest.approx(40.0)
        assert g.Ly * g.dy == pytest.approx(40.0)

    def test_default_angle_set_has_24_views(self):
        angles = ExperimentConfig().angles_deg()
        assert len(angles) == 24
        assert angles[0] == 0.0
        assert angles[-1] == pytest.approx(172.5)
        assert np.allclose(np.diff(angles), 7.5)

    def test_angle_count_at_coarser_steps(self):
        assert preset("full", dtheta_deg=15.0).angles_deg() == tuple(
            15.0 * k for k in range(12)
        )
        assert preset("full", dtheta_deg=30.0).angles_deg() == (0.0, 30.0, 60.0, 90.0, 120.0, 150.0)
        assert preset("full", dtheta_deg=60.0).angles_deg() == (0.0, 60.0, 120.0)
        # exactly-180 never duplicates the 0-degree view
        assert preset("full", dtheta_deg=180.0).angles_deg() == (0.0,)

    def test_frequencies_in_rad_per_s(self):
        cfg = ExperimentConfig()
        rad = cfg.frequencies_rad()
        assert rad == tuple(2 * math.pi * f * 1e6 for f in cfg.freqs_mhz)

    def test_protocol_echoes_config(self):
        cfg = preset("full", sensor_type="pi", n_sources=4, n_sensors=6)
        p = cfg.protocol()
        assert p.sensor_type == "pi"
        assert p.geometry.n_sources == 4
        assert p.geometry.n_sensors == 6
        assert p.geometry.array_length == 30.0
        assert p.geometry.separation == 30.0
        assert p.geometry.sensor_width == 1.0
        assert p.size == len(cfg.freqs_mhz) * 24 * 4 * 6


class TestHalfPreset:
    def test_half_scale_parameters(self):
        cfg = preset("half")
        assert cfg.grid_px == 128
        assert cfg.dx_mm == 0.3125
        assert cfg.freqs_mhz == tuple(f / 2 for f in FULL_FREQS_MHZ)

    def test_physical_domain_is_unchanged(self):
        full, half = preset("full").grid(), preset("half").grid()
        assert half.Lx * half.dx == pytest.approx(full.Lx * full.dx)

    def test_points_per_wavelength_is_preserved(self):
        # halving the frequencies exactly compensates doubling the spacing
        full, half = preset("full"), preset("half")
        ppw_full = full.sound_speed / (max(full.freqs_mhz) * 1e6) / (full.dx_mm * 1e-3)
        ppw_half = half.sound_speed / (max(half.freqs_mhz) * 1e6) / (half.dx_mm * 1e-3)
        assert ppw_half == pytest.approx(ppw_full)

    def test_px_factor(self):
        assert preset("full").px_factor == 1
        assert preset("half").px_factor == 2

    def test_target_block_pixels(self):
        assert preset("full").target_block() == RectanglePx(100, 150, 150, 200)
        assert preset("half").target_block() == RectanglePx(50, 75, 75, 100)

    def test_contrast_roi_pixels(self):
        assert preset("full").contrast_roi() == RectanglePx(100, 149, 181, 220)
        assert preset("half").contrast_roi() == RectanglePx(50, 75, 91, 110)

    def test_half_block_covers_same_mm_region(self):
        full, half = preset("full"), preset("half")
        bf, bh = full.target_block(), half.target_block()
        gf, gh = full.grid(), half.grid()
        for attr_f, attr_h, coords_f, coords_h in (
            ("i1", "i1", gf.x_coords(), gh.x_coords()),
            ("i2", "i2", gf.x_coords(), gh.x_coords()),
            ("j1", "j1", gf.y_coords(), gh.y_coords()),
            ("j2", "j2", gf.y_coords(), gh.y_coords()),
        ):
            mm_f = coords_f[getattr(bf, attr_f)]
            mm_h = coords_h[getattr(bh, attr_h)]
            assert abs(mm_f - mm_h) <= gh.dx  # within one coarse pixel


class TestDerivedRegions:
    def test_target_block_physical_position(self):
        # documented placement of the absorbing square on the reference grid,
        # stated as mm ranges; pixel centers must land within 1.2 grid steps
        cfg = preset("full")
        g, b = cfg.grid(), cfg.target_block()
        x, y = g.x_coords(), g.y_coords()
        tol = 1.2 * g.dx
        assert abs(x[b.i1] - (-4.4706)) <= tol
        assert abs(x[b.i2] - 3.3725) <= tol
        assert abs(y[b.j1] - 3.3725) <= tol
        assert abs(y[b.j2] - 11.2157) <= tol

    def test_phantom_media(self):
        cfg = preset("half")
        true_med, model_med = cfg.true_medium(), cfg.model_medium()
        b = cfg.target_block()  # fields are indexed [j, i]
        assert np.all(true_med.tau[b.j1 : b.j2 + 1, b.i1 : b.i2 + 1] == cfg.tau_square)
        outside = true_med.tau.copy()
        outside[b.j1 : b.j2 + 1, b.i1 : b.i2 + 1] = cfg.tau0
        assert np.all(outside == cfg.tau0)
        assert np.all(model_med.tau == cfg.tau0)
        assert np.all(true_med.c == cfg.sound_speed)

    def test_edge_roi_bisected_by_block_edge(self):
        for scale in ("full", "half"):
            cfg = preset(scale)
            roi = cfg.edge_roi()
            assert isinstance(roi, EdgeRoi)
            assert roi.axis == "y"
            block = cfg.target_block()
            r = roi.rect
            across = r.j2 - r.j1 + 1
            assert across % 2 == 0
            # the first frame beyond the block starts the upper half
            assert block.j2 + 1 == r.j1 + across // 2
            assert r.within(cfg.grid())

    def test_pml_spec(self):
        spec = preset("full").pml()
        assert spec.width_px == 5
        assert spec.strength == 2.0


class TestSerialization:
    def test_toml_round_trip_identity(self, tmp_path):
        cfg = preset(
            "half",
            sensor_type="pi",
            eta=3.25e-4,
            noise_level=0.01,
            dtheta_deg=22.5,
            freqs_mhz=(0.75, 1.0),
            seed=77,
            out_dir="runs/x",
        )
        path = tmp_path / "cfg.toml"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_round_trip_preserves_float_bits(self, tmp_path):
        cfg = preset("full", eta=1.2345678901234567e-5, dx_mm=0.15625)
        path = tmp_path / "cfg.toml"
        save_config(cfg, path)
        back = load_config(path)
        assert back.eta == cfg.eta
        assert back.dx_mm == cfg.dx_mm

    def test_lcurve_eta_round_trips(self, tmp_path):
        path = tmp_path / "cfg.toml"
        save_config(preset("full"), path)
        assert load_config(path).eta == "lcurve"

    def test_toml_text_is_flat_key_value(self):
        text = config_to_toml(preset("full"))
        fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
        keys = {line.split(" = ")[0] for line in text.strip().splitlines()}
        assert keys == fields

    def test_load_rejects_unknown_key(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('scale = "full"\nwavelets = 3\n')
        with pytest.raises(InvalidArgumentError, match="wavelets"):
            load_config(path)

    def test_load_rejects_bad_toml_syntax(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("scale = full\n")  # bare value is invalid TOML
        with pytest.raises(InvalidArgumentError):
            load_config(path)

    def test_load_applies_scale_preset_then_overrides(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('scale = "half"\nn_sources = 3\n')
        cfg = load_config(path)
        assert cfg.grid_px == 128 and cfg.dx_mm == 0.3125
        assert cfg.n_sources == 3
        assert cfg.freqs_mhz == tuple(f / 2 for f in FULL_FREQS_MHZ)


class TestValidation:
    @pytest.mark.parametrize(
        "overrides",
        [
            {"scale": "quarter"},
            {"sensor_type": "amplitude"},
            {"eta": -1.0},
            {"eta": "auto"},
            {"dtheta_deg": 0.0},
            {"dtheta_deg": 181.0},
            {"noise_level": -0.1},
            {"freqs_mhz": ()},
            {"freqs_mhz": (1.0, -2.0)},
            {"grid_px": 0},
            {"n_sources": 0},
            {"dx_mm": 0.0},
            {"cutoff_mm_inv": -1.75},
            {"tau0": 0.0},
        ],
    )
    def test_rejected_values(self, overrides):
        with pytest.raises(InvalidArgumentError):
            dataclasses.replace(preset("full"), **overrides)

    def test_unknown_override_key(self):
        with pytest.raises(InvalidArgumentError, match="unknown config keys"):
            apply_overrides(preset("full"), gamma=2.0)

    def test_unknown_preset_scale(self):
        with pytest.raises(InvalidArgumentError):
            preset("double")

    def test_eta_zero_is_allowed(self):
        assert preset("full", eta=0.0).eta == 0.0

    def test_freqs_normalized_to_float_tuple(self):
        cfg = preset("full", freqs_mhz=[2, 3])
        assert cfg.freqs_mhz == (2.0, 3.0)
        assert all(isinstance(f, float) for f in cfg.freqs_mhz)
