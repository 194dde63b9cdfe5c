import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ringcast.errors import ConfigurationError, StructuralError
from ringcast.geometry import (
    Graticule,
    circular_patch,
    circular_unpatch,
    cos_lat_deg,
    grid_patch,
    grid_patch_cells,
    grid_unpatch,
    latitude_weights,
    make_graticule,
)

from conftest import make_state

# 1/mean(cos lat) on the 121-row 1.5 deg grid, pinned from the direct
# summation below (test_equator_weight_regression recomputes it).
EQUATOR_WEIGHT_121 = 1.5839767672650453


class TestMakeGraticule:
    def test_default_resolution(self):
        g = make_graticule(1.5, 1.5)
        assert g.num_lat == 121
        assert g.num_lon == 240
        assert g.lat_deg[0] == -90.0 and g.lat_deg[-1] == 90.0
        assert g.lon_deg[0] == -180.0 and g.lon_deg[-1] == 178.5

    def test_coarse_grids(self):
        g = make_graticule(90.0, 90.0)
        assert g.num_lat == 3 and g.num_lon == 4
        np.testing.assert_array_equal(g.lat_deg, [-90.0, 0.0, 90.0])
        g2 = make_graticule(30.0, 60.0)
        assert g2.num_lat == 7 and g2.num_lon == 6

    def test_non_divisible_resolution_is_named(self):
        with pytest.raises(ConfigurationError, match="7"):
            make_graticule(7.0, 1.5)
        with pytest.raises(ConfigurationError, match="11"):
            make_graticule(1.5, 11.0)

    def test_uniform_lon_spacing(self):
        g = make_graticule(30.0, 30.0)
        dlon = np.diff(g.lon_deg)
        assert np.all(dlon == dlon[0])

    def test_invalid_vectors_rejected(self):
        with pytest.raises(StructuralError):
            Graticule(lat_deg=np.array([0.0, 0.0]), lon_deg=np.array([0.0]))
        with pytest.raises(StructuralError):
            Graticule(lat_deg=np.array([-91.0, 0.0]), lon_deg=np.array([0.0]))
        with pytest.raises(StructuralError):
            Graticule(lat_deg=np.array([0.0]), lon_deg=np.array([0.0, 180.0]))


class TestLatitudeWeights:
    @pytest.mark.parametrize("res", [1.5, 10.0, 30.0, 90.0])
    def test_mean_is_one(self, res):
        w = latitude_weights(make_graticule(res, res))
        assert abs(w.mean() - 1.0) < 1e-12

    def test_three_row_grid(self):
        w = latitude_weights(make_graticule(90.0, 90.0))
        np.testing.assert_allclose(w, [0.0, 3.0, 0.0], atol=1e-12)
        assert w[0] == 0.0 and w[2] == 0.0  # poles exactly zero

    def test_equator_weight_regression(self):
        g = make_graticule(1.5, 1.5)
        # independent direct summation
        total = 0.0
        for lat in g.lat_deg:
            total += float(cos_lat_deg(lat))
        expected = 1.0 / (total / g.num_lat)
        w = latitude_weights(g)
        equator = np.where(g.lat_deg == 0.0)[0][0]
        assert abs(w[equator] - expected) < 1e-12
        assert abs(w[equator] - EQUATOR_WEIGHT_121) < 1e-12

    def test_nonnegative(self):
        w = latitude_weights(make_graticule(1.5, 1.5))
        assert np.all(w >= 0)


class TestCircularPatch:
    def test_default_grid_shape(self, rng):
        g = make_graticule(1.5, 1.5)
        state = make_state(g, rng.normal(size=(121, 240, 63)).astype(np.float32))
        p = circular_patch(state)
        assert p.flat.shape == (121, 15120)
        assert p.num_patches == 121

    def test_flatten_order(self):
        g = make_graticule(90.0, 90.0)
        values = np.zeros((3, 4, 1))
        for h in range(3):
            for w in range(4):
                values[h, w, 0] = 10 * h + w
        p = circular_patch(make_state(g, values))
        np.testing.assert_array_equal(p.flat[0], [0, 1, 2, 3])
        np.testing.assert_array_equal(p.flat[1], [10, 11, 12, 13])

    def test_ring_lengths(self):
        g = make_graticule(90.0, 90.0)
        p = circular_patch(make_state(g, np.zeros((3, 4, 1))))
        assert p.patch_length_km[0] == 0.0
        assert p.patch_length_km[2] == 0.0
        np.testing.assert_allclose(p.patch_length_km[1], 2 * np.pi * 6371.0)
        assert abs(p.patch_length_km[1] - 40030.17) < 0.01

    def test_spacing_metadata(self):
        g = make_graticule(30.0, 30.0)
        p = circular_patch(make_state(g, np.zeros((7, 12, 1))))
        dphi = np.deg2rad(30.0)
        np.testing.assert_allclose(p.nominal_spacing_km, 6371.0 * dphi)
        np.testing.assert_allclose(
            p.neighbor_spacing_km, 6371.0 * dphi * cos_lat_deg(g.lat_deg))

    def test_monotone_shrink_with_latitude(self):
        g = make_graticule(1.5, 1.5)
        p = circular_patch(make_state(g, np.zeros((121, 240, 1))))
        north = p.patch_length_km[g.lat_deg >= 0]
        assert np.all(np.diff(north) < 0)  # strictly decreasing toward the pole

    def test_roundtrip_bitwise(self, rng):
        g = make_graticule(30.0, 30.0)
        values = rng.normal(size=(7, 12, 3)).astype(np.float32)
        state = make_state(g, values)
        out = circular_unpatch(circular_patch(state))
        assert out.dtype == values.dtype
        assert np.array_equal(out, values)

    def test_roundtrip_zeros_and_single_row(self):
        g = make_graticule(30.0, 30.0)
        z = np.zeros((7, 12, 2))
        assert np.array_equal(circular_unpatch(circular_patch(make_state(g, z))), z)
        g1 = Graticule(lat_deg=np.array([0.0]), lon_deg=np.arange(-180.0, 180.0, 90.0))
        v1 = np.arange(8.0).reshape(1, 4, 2)
        assert np.array_equal(circular_unpatch(circular_patch(make_state(g1, v1))), v1)

    def test_layout_mismatch_raises(self, rng):
        g = make_graticule(30.0, 30.0)
        p = circular_patch(make_state(g, rng.normal(size=(7, 12, 2))))
        p.flat = p.flat[:, :-1]
        with pytest.raises(StructuralError):
            circular_unpatch(p)

    def test_shape_mismatch_raises(self):
        g = make_graticule(30.0, 30.0)
        with pytest.raises(StructuralError):
            make_state(g, np.zeros((6, 12, 2)))


class TestGridPatch:
    def test_cell_counts(self, rng):
        g = make_graticule(1.5, 1.5)
        state = make_state(g, rng.normal(size=(121, 240, 2)))
        p = grid_patch(state, 3.0)  # 2x2 cells
        assert p.patch_cells == (2, 2)
        assert p.pad_rows == 1  # 121 -> 122
        assert p.num_patches == (122 // 2) * (240 // 2)
        assert p.flat.shape[1] == 2 * 2 * 2

    def test_four_by_four(self):
        lat = np.array([-60.0, -20.0, 20.0, 60.0])
        lon = np.arange(-180.0, 180.0, 90.0)
        g = Graticule(lat_deg=lat, lon_deg=lon)
        state = make_state(g, np.arange(16.0).reshape(4, 4, 1))
        p = grid_patch_cells(state, 2, 2)
        assert p.num_patches == 4
        assert p.flat.shape == (4, 4)
        # row-major token order: top-left patch first
        np.testing.assert_array_equal(p.flat[0], [0, 1, 4, 5])

    def test_roundtrip_with_padding(self, rng):
        g = make_graticule(1.5, 1.5)
        values = rng.normal(size=(121, 240, 3)).astype(np.float32)
        state = make_state(g, values)
        out = grid_unpatch(grid_patch(state, 3.0))
        assert np.array_equal(out, values)

    def test_non_divisible_patch_raises(self):
        g = make_graticule(30.0, 30.0)
        state = make_state(g, np.zeros((7, 12, 1)))
        with pytest.raises(ConfigurationError):
            grid_patch(state, 45.0)
        with pytest.raises(ConfigurationError):
            grid_patch_cells(state, 1, 5)  # 5 does not divide W=12

    def test_layout_mismatch_raises(self, rng):
        g = make_graticule(30.0, 30.0)
        p = grid_patch_cells(make_state(g, rng.normal(size=(7, 12, 1))), 2, 2)
        p.flat = p.flat[:-1]
        with pytest.raises(StructuralError):
            grid_unpatch(p)


@settings(max_examples=40, deadline=None)
@given(
    h=st.integers(min_value=1, max_value=9),
    w=st.integers(min_value=1, max_value=12),
    k=st.integers(min_value=1, max_value=4),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_patching_bijection_property(h, w, k, seed):
    lat = np.linspace(-90.0, 90.0, h) if h > 1 else np.array([0.0])
    lon = -180.0 + (360.0 / w) * np.arange(w)
    g = Graticule(lat_deg=lat, lon_deg=lon)
    values = np.random.default_rng(seed).normal(size=(h, w, k))
    state = make_state(g, values)
    assert np.array_equal(circular_unpatch(circular_patch(state)), values)
    # grid variant with 1-cell "patches" always applies
    assert np.array_equal(grid_unpatch(grid_patch_cells(state, 1, 1)), values)
