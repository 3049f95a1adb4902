"""Geometry primitives, resampling and cropping.

The interpolation oracle here is an intentionally slow scalar re-implementation
of trilinear sampling (explicit 8-corner weights, one output voxel at a time)
so the vectorised production code is checked against something independent.
"""

import math

import numpy as np
import pytest

from breastmri import (
    BBox3D,
    Volume3D,
    crop,
    mask_background,
    resample,
    resample_to_shape,
    sample_at_voxel_coords,
    stack_channels,
)


def trilinear_oracle(data, z, y, x):
    """Evaluate one channel of [Z, Y, X] data at a fractional coordinate."""
    nz, ny, nx = data.shape
    z = min(max(z, 0.0), nz - 1.0)
    y = min(max(y, 0.0), ny - 1.0)
    x = min(max(x, 0.0), nx - 1.0)
    z0, y0, x0 = int(math.floor(z)), int(math.floor(y)), int(math.floor(x))
    z1, y1, x1 = min(z0 + 1, nz - 1), min(y0 + 1, ny - 1), min(x0 + 1, nx - 1)
    wz, wy, wx = z - z0, y - y0, x - x0
    acc = 0.0
    for iz, fz in ((z0, 1 - wz), (z1, wz)):
        for iy, fy in ((y0, 1 - wy), (y1, wy)):
            for ix, fx in ((x0, 1 - wx), (x1, wx)):
                acc += fz * fy * fx * float(data[iz, iy, ix])
    return acc


class TestVolume3D:
    def test_promotes_3d_to_single_channel(self):
        v = Volume3D(np.zeros((4, 5, 6)), spacing=(1, 1, 1))
        assert v.data.shape == (1, 4, 5, 6)
        assert v.num_channels == 1
        assert v.spatial_shape == (4, 5, 6)

    def test_coerces_to_float32(self):
        v = Volume3D(np.ones((2, 3, 4, 5), dtype=np.float64), spacing=(1, 1, 1))
        assert v.data.dtype == np.float32

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            Volume3D(np.zeros((2, 2)), spacing=(1, 1, 1))
        with pytest.raises(ValueError):
            Volume3D(np.zeros((2, 2, 2)), spacing=(1, 0, 1))
        with pytest.raises(ValueError):
            Volume3D(np.zeros((2, 2, 2)), spacing=(1, -1, 1))
        bad = np.zeros((2, 2, 2), dtype=np.float32)
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            Volume3D(bad, spacing=(1, 1, 1))

    def test_channel_extracts_copy(self, random_volume):
        ch = random_volume.channel(1)
        assert ch.num_channels == 1
        np.testing.assert_array_equal(ch.data[0], random_volume.data[1])
        ch.data[0, 0, 0, 0] = 123.0
        assert random_volume.data[1, 0, 0, 0] != 123.0

    def test_same_geometry(self, random_volume):
        assert random_volume.same_geometry(random_volume.with_data(random_volume.data * 2))
        moved = Volume3D(random_volume.data, random_volume.spacing, (1, 2, 3))
        assert not random_volume.same_geometry(moved)


class TestBBox3D:
    def test_shape_and_contains(self):
        outer = BBox3D((0, 0, 0), (10, 10, 10))
        inner = BBox3D((2, 3, 4), (5, 6, 7))
        assert inner.shape == (3, 3, 3)
        assert outer.contains(inner)
        assert not inner.contains(outer)

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            BBox3D((0, 0, 0), (0, 1, 1))
        with pytest.raises(ValueError):
            BBox3D((-1, 0, 0), (1, 1, 1))
        with pytest.raises(ValueError):
            BBox3D((2, 0, 0), (1, 1, 1))


class TestSampling:
    def test_matches_scalar_oracle(self, rng):
        data = rng.normal(size=(2, 5, 6, 7)).astype(np.float32)
        vol = Volume3D(data, spacing=(1, 1, 1))
        pts = rng.uniform(-1.0, 8.0, size=(3, 40))
        out = sample_at_voxel_coords(vol, pts)
        for c in range(2):
            for k in range(pts.shape[1]):
                want = trilinear_oracle(data[c], *pts[:, k])
                assert out[c, k] == pytest.approx(want, abs=1e-5)

    def test_integer_coords_exact(self, rng):
        data = rng.normal(size=(1, 4, 4, 4)).astype(np.float32)
        vol = Volume3D(data, spacing=(2, 2, 2))
        idx = np.stack(np.meshgrid(*(np.arange(4),) * 3, indexing="ij"))
        out = sample_at_voxel_coords(vol, idx.reshape(3, -1))
        np.testing.assert_array_equal(out.reshape(1, 4, 4, 4), data)

    def test_clamping_at_edges(self):
        data = np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2)
        vol = Volume3D(data, spacing=(1, 1, 1))
        out = sample_at_voxel_coords(vol, np.array([[-5.0, 9.0], [0.0, 1.0], [0.0, 1.0]]))
        assert out[0, 0] == data[0, 0, 0, 0]
        assert out[0, 1] == data[0, 1, 1, 1]

    def test_nearest_rounds_half_up(self):
        data = np.arange(4, dtype=np.float32).reshape(1, 1, 1, 4)
        vol = Volume3D(data, spacing=(1, 1, 1))
        coords = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.49, 0.5, 1.51]])
        out = sample_at_voxel_coords(vol, coords, mode="nearest")
        np.testing.assert_array_equal(out[0], [0.0, 1.0, 2.0])

    def test_rejects_unknown_mode(self, random_volume):
        with pytest.raises(ValueError):
            sample_at_voxel_coords(random_volume, np.zeros((3, 1)), mode="cubic")


class TestResample:
    def test_output_shape_rule(self):
        vol = Volume3D(np.zeros((1, 10, 11, 12)), spacing=(2.0, 2.0, 2.0))
        out = resample(vol, (1.0, 4.0, 3.0))
        # 10*2/1 = 20, 11*2/4 = 5.5 -> 6 (half away from zero), 12*2/3 = 8
        assert out.spatial_shape == (20, 6, 8)
        assert out.spacing == (1.0, 4.0, 3.0)
        assert out.origin == vol.origin

    def test_identity_when_spacing_matches(self, random_volume):
        out = resample(random_volume, random_volume.spacing)
        assert out.spatial_shape == random_volume.spatial_shape
        np.testing.assert_allclose(out.data, random_volume.data, atol=1e-6)

    def test_constant_field_stays_constant(self):
        vol = Volume3D(np.full((2, 6, 6, 6), 0.7, dtype=np.float32), spacing=(3, 3, 3))
        out = resample(vol, (2.0, 1.3, 0.9))
        np.testing.assert_array_equal(out.data, np.full_like(out.data, np.float32(0.7)))

    def test_matches_scalar_oracle_on_upsample(self, rng):
        data = rng.normal(size=(1, 3, 4, 5)).astype(np.float32)
        vol = Volume3D(data, spacing=(2.0, 2.0, 2.0))
        out = resample(vol, (1.0, 1.0, 1.0))
        for z in range(out.spatial_shape[0]):
            for y in range(out.spatial_shape[1]):
                for x in range(out.spatial_shape[2]):
                    want = trilinear_oracle(data[0], z * 0.5, y * 0.5, x * 0.5)
                    assert out.data[0, z, y, x] == pytest.approx(want, abs=1e-5)

    def test_respects_value_bounds(self, rng):
        data = rng.uniform(-2.0, 3.0, size=(1, 7, 7, 7)).astype(np.float32)
        vol = Volume3D(data, spacing=(1.7, 1.1, 2.3))
        out = resample(vol, (0.9, 1.4, 0.6))
        assert out.data.min() >= data.min() - 1e-5
        assert out.data.max() <= data.max() + 1e-5

    def test_nearest_mode_preserves_label_set(self, rng):
        labels = rng.integers(0, 3, size=(1, 6, 6, 6)).astype(np.float32)
        vol = Volume3D(labels, spacing=(2, 2, 2))
        out = resample(vol, (0.7, 1.3, 0.9), mode="nearest")
        assert set(np.unique(out.data)) <= set(np.unique(labels))

    def test_rejects_bad_spacing(self, random_volume):
        with pytest.raises(ValueError):
            resample(random_volume, (0.0, 1.0, 1.0))


class TestResampleToShape:
    def test_exact_shape_and_footprint(self, random_volume):
        out = resample_to_shape(random_volume, (5, 6, 7))
        assert out.spatial_shape == (5, 6, 7)
        for s_out, n_out, s_in, n_in in zip(
            out.spacing, out.spatial_shape, random_volume.spacing, random_volume.spatial_shape
        ):
            assert s_out * n_out == pytest.approx(s_in * n_in)

    def test_same_shape_is_identity(self, random_volume):
        out = resample_to_shape(random_volume, random_volume.spatial_shape)
        np.testing.assert_allclose(out.data, random_volume.data, atol=1e-6)

    def test_rejects_bad_shape(self, random_volume):
        with pytest.raises(ValueError):
            resample_to_shape(random_volume, (0, 4, 4))


class TestCrop:
    def test_matches_naive_loop(self, rng):
        data = rng.normal(size=(2, 6, 7, 8)).astype(np.float32)
        vol = Volume3D(data, spacing=(1, 2, 3), origin=(10, 20, 30))
        box = BBox3D((1, 2, 3), (4, 6, 7))
        out = crop(vol, box)
        assert out.spatial_shape == box.shape
        for c in range(2):
            for z in range(out.spatial_shape[0]):
                for y in range(out.spatial_shape[1]):
                    for x in range(out.spatial_shape[2]):
                        assert out.data[c, z, y, x] == data[c, 1 + z, 2 + y, 3 + x]

    def test_origin_shift(self):
        vol = Volume3D(np.zeros((1, 4, 4, 4)), spacing=(1.5, 2.0, 2.5), origin=(1, 2, 3))
        out = crop(vol, BBox3D((1, 2, 3), (2, 3, 4)))
        assert out.origin == (1 + 1.5, 2 + 2 * 2.0, 3 + 3 * 2.5)

    def test_full_box_is_bit_identical(self, random_volume):
        box = BBox3D((0, 0, 0), random_volume.spatial_shape)
        out = crop(random_volume, box)
        np.testing.assert_array_equal(out.data, random_volume.data)

    def test_nested_crops_compose(self, rng):
        data = rng.normal(size=(1, 8, 8, 8)).astype(np.float32)
        vol = Volume3D(data, spacing=(1, 1, 1))
        once = crop(vol, BBox3D((1, 1, 1), (7, 7, 7)))
        twice = crop(once, BBox3D((2, 2, 2), (5, 5, 5)))
        direct = crop(vol, BBox3D((3, 3, 3), (6, 6, 6)))
        np.testing.assert_array_equal(twice.data, direct.data)
        assert twice.origin == direct.origin

    def test_out_of_bounds_raises(self, random_volume):
        shape = random_volume.spatial_shape
        with pytest.raises(ValueError):
            crop(random_volume, BBox3D((0, 0, 0), (shape[0] + 1, shape[1], shape[2])))


class TestMaskBackground:
    def test_zeroes_only_outside(self, rng):
        data = rng.normal(size=(3, 4, 4, 4)).astype(np.float32) + 5.0
        vol = Volume3D(data, spacing=(1, 1, 1))
        m = (rng.uniform(size=(4, 4, 4)) > 0.5).astype(np.float32)
        mask = Volume3D(m, spacing=(1, 1, 1))
        out = mask_background(vol, mask)
        np.testing.assert_array_equal(out.data[:, m == 0], 0.0)
        np.testing.assert_array_equal(out.data[:, m == 1], data[:, m == 1])

    def test_idempotent(self, rng):
        data = rng.normal(size=(1, 3, 3, 3)).astype(np.float32)
        vol = Volume3D(data, spacing=(1, 1, 1))
        m = Volume3D(np.eye(3, dtype=np.float32)[np.newaxis].repeat(3, axis=0), spacing=(1, 1, 1))
        once = mask_background(vol, m)
        twice = mask_background(once, m)
        np.testing.assert_array_equal(once.data, twice.data)

    def test_rejects_nonbinary_and_mismatched(self, random_volume):
        m = Volume3D(np.full(random_volume.spatial_shape, 0.5, dtype=np.float32), random_volume.spacing)
        with pytest.raises(ValueError):
            mask_background(random_volume, m)
        small = Volume3D(np.ones((2, 2, 2), dtype=np.float32), random_volume.spacing)
        with pytest.raises(ValueError):
            mask_background(random_volume, small)


class TestStackChannels:
    def test_preserves_order_and_values(self, rng):
        parts = [
            Volume3D(rng.normal(size=(1, 3, 3, 3)).astype(np.float32), spacing=(1, 1, 1))
            for _ in range(3)
        ]
        out = stack_channels(parts)
        assert out.num_channels == 3
        for i, p in enumerate(parts):
            np.testing.assert_array_equal(out.data[i], p.data[0])

    def test_commutes_with_crop(self, rng):
        parts = [
            Volume3D(rng.normal(size=(1, 5, 5, 5)).astype(np.float32), spacing=(2, 2, 2))
            for _ in range(2)
        ]
        box = BBox3D((1, 0, 2), (4, 3, 5))
        a = crop(stack_channels(parts), box)
        b = stack_channels([crop(p, box) for p in parts])
        np.testing.assert_array_equal(a.data, b.data)
        assert a.origin == b.origin

    def test_rejects_geometry_mismatch(self):
        a = Volume3D(np.zeros((1, 2, 2, 2)), spacing=(1, 1, 1))
        b = Volume3D(np.zeros((1, 2, 2, 2)), spacing=(2, 1, 1))
        with pytest.raises(ValueError):
            stack_channels([a, b])
        with pytest.raises(ValueError):
            stack_channels([])
