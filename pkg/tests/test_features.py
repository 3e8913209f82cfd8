import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eigenmatch import (
    FeatureGrid,
    GrayImage,
    builtin_dense_descriptor,
    l2_normalize_channels,
    load_feature_grid,
    resample_grid,
    write_feature_grid,
)
from eigenmatch.errors import (
    DimensionError,
    FormatError,
    TruncationError,
    ValidationError,
)
from conftest import random_grid
from oracles import bilinear_resample_loop


def make_grid(values, image_id="img", image_size=(64, 64)):
    return FeatureGrid.from_values(
        np.asarray(values, dtype=np.float64),
        source_image_width=image_size[0],
        source_image_height=image_size[1],
        image_id=image_id,
    )


class TestFeatureGridInvariants:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            FeatureGrid(
                grid_width=2,
                grid_height=2,
                channels=3,
                values=np.zeros((2, 2, 4)),
                source_image_width=10,
                source_image_height=10,
            )

    def test_non_finite_rejected(self):
        values = np.zeros((2, 2, 3))
        values[0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            make_grid(values)

    def test_zero_dims_rejected(self):
        with pytest.raises(ValidationError):
            FeatureGrid(
                grid_width=0,
                grid_height=1,
                channels=1,
                values=np.zeros((1, 0, 1)),
                source_image_width=10,
                source_image_height=10,
            )

    def test_values_read_only(self):
        grid = make_grid(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            grid.values[0, 0, 0] = 1.0


class TestGrayImage:
    def test_range_enforced(self):
        with pytest.raises(ValidationError):
            GrayImage.from_array(np.full((4, 4), 1.5))

    def test_valid(self):
        img = GrayImage.from_array(np.full((3, 5), 0.25))
        assert (img.width, img.height) == (5, 3)


class TestFgrdFormat:
    def test_minimal_round_trip(self, tmp_path):
        grid = make_grid(np.arange(12, dtype=np.float64).reshape(2, 2, 3))
        path = tmp_path / "g.fgrd"
        write_feature_grid(grid, path)
        loaded = load_feature_grid(path)
        assert (loaded.grid_width, loaded.grid_height, loaded.channels) == (2, 2, 3)
        assert np.array_equal(loaded.values, grid.values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fgrd"
        path.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(FormatError):
            load_feature_grid(path)

    def test_bad_version(self, tmp_path):
        grid = make_grid(np.zeros((1, 1, 1)))
        path = tmp_path / "g.fgrd"
        write_feature_grid(grid, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_feature_grid(path)

    def test_declared_size_inconsistent(self, tmp_path):
        # header says 4x4x8 (=128 floats) but carries 100
        header = b"FGRD" + bytes([1, 0, 0, 0])
        header += struct.pack("<4I", 4, 4, 8, 0)
        header += struct.pack("<2I", 32, 32)
        payload = np.zeros(100, dtype="<f4").tobytes()
        path = tmp_path / "short.fgrd"
        path.write_bytes(header + payload)
        with pytest.raises(TruncationError):
            load_feature_grid(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        grid = make_grid(np.zeros((1, 1, 1)))
        path = tmp_path / "g.fgrd"
        write_feature_grid(grid, path)
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(TruncationError):
            load_feature_grid(path)

    def test_non_finite_payload(self, tmp_path):
        header = b"FGRD" + bytes([1, 0, 0, 0])
        header += struct.pack("<4I", 1, 1, 2, 0)
        header += struct.pack("<2I", 8, 8)
        payload = np.array([1.0, np.inf], dtype="<f4").tobytes()
        path = tmp_path / "inf.fgrd"
        path.write_bytes(header + payload)
        with pytest.raises(ValidationError):
            load_feature_grid(path)

    def test_unicode_image_id(self, tmp_path):
        grid = make_grid(np.ones((1, 2, 1)), image_id="видок-κλπ-01")
        path = tmp_path / "id.fgrd"
        write_feature_grid(grid, path)
        assert load_feature_grid(path).image_id == "видок-κλπ-01"

    @settings(max_examples=30, deadline=None)
    @given(data=st.data())
    def test_round_trip_bit_exact(self, data, tmp_path_factory):
        gw = data.draw(st.integers(1, 5))
        gh = data.draw(st.integers(1, 5))
        ch = data.draw(st.integers(1, 6))
        flat = data.draw(
            st.lists(
                st.floats(
                    allow_nan=False, allow_infinity=False, width=32, min_value=-1e6, max_value=1e6
                ),
                min_size=gw * gh * ch,
                max_size=gw * gh * ch,
            )
        )
        values = np.array(flat, dtype=np.float32).astype(np.float64).reshape(gh, gw, ch)
        grid = make_grid(values)
        path = tmp_path_factory.mktemp("rt") / "g.fgrd"
        write_feature_grid(grid, path)
        loaded = load_feature_grid(path)
        # float32-representable payload must survive exactly
        assert np.array_equal(loaded.values, values)
        assert (loaded.source_image_width, loaded.source_image_height) == (64, 64)


class TestBuiltinDescriptor:
    def test_constant_image_identical_cells_zero_hist(self):
        img = GrayImage.from_array(np.full((32, 32), 0.5))
        grid = builtin_dense_descriptor(img, 4, 4, patch_radius=2, orientation_bins=8)
        vecs = grid.cell_vectors()
        assert np.array_equal(vecs, np.tile(vecs[0], (16, 1)))
        # zero gradients: histogram block is all zero, intensity block mean-free
        assert np.array_equal(vecs[0][25:], np.zeros(8))
        assert np.allclose(vecs[0][:25], 0.0)

    def test_deterministic(self, rng):
        pixels = rng.uniform(0, 1, (40, 40))
        img = GrayImage.from_array(pixels)
        g1 = builtin_dense_descriptor(img, 6, 6, patch_radius=3, orientation_bins=8)
        g2 = builtin_dense_descriptor(img, 6, 6, patch_radius=3, orientation_bins=8)
        assert np.array_equal(g1.values, g2.values)

    def test_flip_mirrors_intensity_block(self, rng):
        # 8x8 grid on an 8x8 image puts every cell centre on its own pixel,
        # so mirrored cells see mirrored patches exactly
        pixels = rng.uniform(0, 1, (8, 8))
        img = GrayImage.from_array(pixels)
        flipped = GrayImage.from_array(np.fliplr(pixels))
        r = 1
        side = 2 * r + 1
        g = builtin_dense_descriptor(img, 8, 8, patch_radius=r, orientation_bins=4)
        gf = builtin_dense_descriptor(flipped, 8, 8, patch_radius=r, orientation_bins=4)
        for row in range(8):
            for col in range(8):
                a = g.values[row, col, : side * side].reshape(side, side)
                b = gf.values[row, 7 - col, : side * side].reshape(side, side)
                assert np.allclose(b, np.fliplr(a), atol=1e-12)

    def test_step_edge_mass_in_horizontal_bin(self):
        # dark left half, bright right half: gradient points along +x,
        # angle 0, so all histogram mass lands in bin 0
        pixels = np.zeros((24, 24))
        pixels[:, 12:] = 1.0
        img = GrayImage.from_array(pixels)
        grid = builtin_dense_descriptor(img, 6, 6, patch_radius=2, orientation_bins=8)
        hist = grid.values[:, :, 25:]
        on_edge = hist.sum(axis=2) > 0
        assert on_edge.any()
        assert np.all(np.argmax(hist[on_edge], axis=1) == 0)

    def test_image_smaller_than_patch(self):
        img = GrayImage.from_array(np.zeros((8, 8)))
        with pytest.raises(DimensionError):
            builtin_dense_descriptor(img, 2, 2, patch_radius=4, orientation_bins=8)

    def test_too_few_orientation_bins(self):
        img = GrayImage.from_array(np.zeros((16, 16)))
        with pytest.raises(ValidationError):
            builtin_dense_descriptor(img, 2, 2, patch_radius=2, orientation_bins=3)

    def test_channel_count(self):
        img = GrayImage.from_array(np.zeros((30, 30)))
        grid = builtin_dense_descriptor(img, 3, 3, patch_radius=3, orientation_bins=12)
        assert grid.channels == 7 * 7 + 12


class TestNormalize:
    def test_three_four_five(self):
        grid = make_grid(np.array([[[3.0, 4.0]]]))
        out = l2_normalize_channels(grid)
        assert np.allclose(out.values[0, 0], [0.6, 0.8])
        assert not out.degenerate_mask[0, 0]

    def test_zero_vector_flagged(self):
        grid = make_grid(np.array([[[0.0, 0.0]]]))
        out = l2_normalize_channels(grid, epsilon=1e-12)
        assert np.array_equal(out.values[0, 0], [0.0, 0.0])
        assert out.degenerate_mask[0, 0]

    def test_idempotent(self, rng):
        grid = random_grid(rng, 4, 4, 6)
        once = l2_normalize_channels(grid)
        twice = l2_normalize_channels(once)
        assert np.max(np.abs(twice.values - once.values)) <= 1e-12

    def test_unit_norms(self, rng):
        grid = random_grid(rng, 5, 3, 7)
        out = l2_normalize_channels(grid)
        norms = np.linalg.norm(out.values, axis=2)
        assert np.max(np.abs(norms[~out.degenerate_mask] - 1.0)) <= 1e-9

    def test_bad_epsilon(self, rng):
        with pytest.raises(ValidationError):
            l2_normalize_channels(random_grid(rng, 2, 2, 2), epsilon=0.0)


class TestResample:
    def test_identity_same_dims(self, rng):
        grid = random_grid(rng, 4, 4, 2)
        out = resample_grid(grid, 4, 4)
        assert np.max(np.abs(out.values - grid.values)) <= 1e-12

    def test_two_by_two_to_three(self):
        # rows (0,0) and (1,1): the middle output row interpolates halfway
        grid = make_grid(np.array([[[0.0], [0.0]], [[1.0], [1.0]]]))
        out = resample_grid(grid, 3, 3)
        expected = np.array(
            [
                [[0.0], [0.0], [0.0]],
                [[0.5], [0.5], [0.5]],
                [[1.0], [1.0], [1.0]],
            ]
        )
        assert np.allclose(out.values, expected, atol=1e-12)

    def test_matches_loop_oracle(self, rng):
        grid = random_grid(rng, 5, 4, 3)
        out = resample_grid(grid, 7, 6)
        oracle = bilinear_resample_loop(grid.values, 7, 6)
        assert np.allclose(out.values, oracle, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(
        sw=st.integers(1, 6),
        sh=st.integers(1, 6),
        tw=st.integers(1, 9),
        th=st.integers(1, 9),
        fill=st.floats(min_value=-100, max_value=100, allow_nan=False),
    )
    def test_constant_grid_fixed_point(self, sw, sh, tw, th, fill):
        grid = make_grid(np.full((sh, sw, 2), fill))
        out = resample_grid(grid, tw, th)
        assert np.allclose(out.values, fill, atol=1e-9)

    def test_bad_target(self, rng):
        with pytest.raises(ValidationError):
            resample_grid(random_grid(rng, 2, 2, 1), 0, 3)
