"""Augmentation determinism, identity parameters and statistical behaviour."""

import numpy as np
import pytest

from breastmri import (
    ALL_KINDS,
    AugPipeline,
    TransformSpec,
    Volume3D,
    apply_pipeline,
    apply_transform,
    default_pipeline,
)

INTENSITY_KINDS = ("contrast", "gamma", "gaussian_blur", "gaussian_noise", "mult_brightness")
SPATIAL_KINDS = ("sim_low_res", "spatial_3d", "spatial_inplane", "scaling", "elastic")


@pytest.fixture
def vol(rng):
    data = rng.normal(0.6, 0.25, size=(3, 8, 10, 12)).astype(np.float32)
    return Volume3D(data, spacing=(2.0, 1.0, 1.0), origin=(0.0, 5.0, -3.0))


class TestTransformSpec:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            TransformSpec("posterize")

    def test_rejects_unknown_param(self):
        with pytest.raises(ValueError):
            TransformSpec("contrast", params={"sigma": (0, 1)})

    def test_rejects_reversed_range(self):
        with pytest.raises(ValueError):
            TransformSpec("gamma", params={"gamma": (1.5, 0.7)})

    def test_rejects_bad_probability(self):
        with pytest.raises(ValueError):
            TransformSpec("contrast", probability=1.5)

    def test_override_merges_with_defaults(self):
        spec = TransformSpec("spatial_3d", params={"rotation_deg": (-5, 5)})
        eff = spec.effective_params()
        assert eff["rotation_deg"] == (-5, 5)
        assert eff["translation_frac"] == (-0.05, 0.05)


class TestDeterminism:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_same_seed_bit_identical(self, kind, vol):
        spec = TransformSpec(kind)
        a = apply_transform(spec, vol, rng_seed=424242)
        b = apply_transform(spec, vol, rng_seed=424242)
        np.testing.assert_array_equal(a.data, b.data)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_different_seed_differs(self, kind, vol):
        spec = TransformSpec(kind)
        a = apply_transform(spec, vol, rng_seed=1)
        b = apply_transform(spec, vol, rng_seed=2)
        assert not np.array_equal(a.data, b.data)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_geometry_unchanged(self, kind, vol):
        out = apply_transform(TransformSpec(kind), vol, rng_seed=9)
        assert out.spatial_shape == vol.spatial_shape
        assert out.spacing == vol.spacing
        assert out.origin == vol.origin
        assert out.data.dtype == np.float32


class TestIdentityParams:
    def test_noise_sigma_zero(self, vol):
        spec = TransformSpec("gaussian_noise", params={"sigma": (0.0, 0.0)})
        out = apply_transform(spec, vol, rng_seed=3)
        np.testing.assert_array_equal(out.data, vol.data)

    def test_brightness_factor_one(self, vol):
        spec = TransformSpec("mult_brightness", params={"factor": (1.0, 1.0)})
        out = apply_transform(spec, vol, rng_seed=3)
        np.testing.assert_allclose(out.data, vol.data, atol=1e-6)

    def test_contrast_factor_one(self, vol):
        spec = TransformSpec("contrast", params={"factor": (1.0, 1.0)})
        out = apply_transform(spec, vol, rng_seed=3)
        np.testing.assert_allclose(out.data, vol.data, atol=1e-6)

    def test_gamma_one(self, vol):
        spec = TransformSpec("gamma", params={"gamma": (1.0, 1.0)})
        out = apply_transform(spec, vol, rng_seed=3)
        np.testing.assert_allclose(out.data, vol.data, atol=1e-5)

    def test_low_res_factor_one(self, vol):
        spec = TransformSpec("sim_low_res", params={"factor": (1.0, 1.0)})
        out = apply_transform(spec, vol, rng_seed=3)
        np.testing.assert_allclose(out.data, vol.data, atol=1e-6)

    def test_scaling_factor_one(self, vol):
        spec = TransformSpec("scaling", params={"factor": (1.0, 1.0)})
        out = apply_transform(spec, vol, rng_seed=3)
        np.testing.assert_allclose(out.data, vol.data, atol=1e-6)

    def test_elastic_amplitude_zero(self, vol):
        spec = TransformSpec("elastic", params={"amplitude": (0.0, 0.0)})
        out = apply_transform(spec, vol, rng_seed=3)
        np.testing.assert_allclose(out.data, vol.data, atol=1e-6)

    def test_spatial_zero_rotation_translation(self, vol):
        spec = TransformSpec(
            "spatial_3d",
            params={"rotation_deg": (0.0, 0.0), "translation_frac": (0.0, 0.0)},
        )
        out = apply_transform(spec, vol, rng_seed=3)
        np.testing.assert_allclose(out.data, vol.data, atol=1e-6)


class TestStatistics:
    def test_noise_sigma_matches_sample_std(self):
        zeros = Volume3D(np.zeros((1, 64, 64, 64), dtype=np.float32), spacing=(1, 1, 1))
        spec = TransformSpec("gaussian_noise", params={"sigma": (0.1, 0.1)})
        out = apply_transform(spec, zeros, rng_seed=77)
        assert 0.095 < float(out.data.std()) < 0.105

    def test_contrast_preserves_channel_means(self, vol):
        spec = TransformSpec("contrast", params={"factor": (0.5, 0.5)})
        out = apply_transform(spec, vol, rng_seed=5)
        for c in range(vol.num_channels):
            assert float(out.data[c].mean()) == pytest.approx(float(vol.data[c].mean()), abs=1e-5)

    def test_contrast_shrinks_spread(self, vol):
        spec = TransformSpec("contrast", params={"factor": (0.5, 0.5)})
        out = apply_transform(spec, vol, rng_seed=5)
        for c in range(vol.num_channels):
            assert float(out.data[c].std()) == pytest.approx(0.5 * float(vol.data[c].std()), rel=1e-4)

    def test_gamma_preserves_order_and_range(self, vol, rng):
        spec = TransformSpec("gamma", params={"gamma": (1.4, 1.4)})
        out = apply_transform(spec, vol, rng_seed=5)
        for c in range(vol.num_channels):
            assert float(out.data[c].min()) == pytest.approx(float(vol.data[c].min()), abs=1e-5)
            assert float(out.data[c].max()) == pytest.approx(float(vol.data[c].max()), abs=1e-5)
            flat_in = vol.data[c].ravel()
            flat_out = out.data[c].ravel()
            i, j = rng.integers(0, flat_in.size, size=(2, 200))
            lower = flat_in[i] < flat_in[j]
            assert (flat_out[i][lower] <= flat_out[j][lower]).all()

    def test_blur_preserves_mean(self):
        rng = np.random.Generator(np.random.PCG64(4))
        data = (1.0 + 0.1 * rng.normal(size=(1, 16, 16, 16))).astype(np.float32)
        vol = Volume3D(data, spacing=(1, 1, 1))
        spec = TransformSpec("gaussian_blur", params={"sigma": (1.0, 1.0)})
        out = apply_transform(spec, vol, rng_seed=5)
        assert float(out.data.mean()) == pytest.approx(float(data.mean()), rel=5e-3)
        assert float(out.data.std()) < float(data.std())

    def test_brightness_scales_everything(self, vol):
        spec = TransformSpec("mult_brightness", params={"factor": (0.8, 0.8)})
        out = apply_transform(spec, vol, rng_seed=5)
        np.testing.assert_allclose(out.data, 0.8 * vol.data, atol=1e-6)

    def test_low_res_discards_detail(self, vol):
        spec = TransformSpec("sim_low_res", params={"factor": (2.0, 2.0)})
        out = apply_transform(spec, vol, rng_seed=5)
        assert float(out.data.std()) < float(vol.data.std())

    def test_spatial_moves_center_content_little(self):
        # a centred bright cube survives a small rotation near-identically
        data = np.zeros((1, 16, 16, 16), dtype=np.float32)
        data[0, 6:10, 6:10, 6:10] = 1.0
        vol = Volume3D(data, spacing=(1, 1, 1))
        spec = TransformSpec(
            "spatial_3d",
            params={"rotation_deg": (2.0, 2.0), "translation_frac": (0.0, 0.0)},
        )
        out = apply_transform(spec, vol, rng_seed=5)
        assert float(out.data.sum()) == pytest.approx(float(data.sum()), rel=0.05)
        assert float(np.abs(out.data - data).sum()) > 0


class TestPipeline:
    def test_empty_pipeline_is_identity(self, vol):
        out = apply_pipeline(AugPipeline(()), vol, sample_seed=1)
        np.testing.assert_array_equal(out.data, vol.data)

    def test_probability_zero_never_fires(self, vol):
        pipe = AugPipeline(tuple(TransformSpec(k, probability=0.0) for k in ALL_KINDS))
        for seed in range(5):
            out = apply_pipeline(pipe, vol, sample_seed=seed)
            np.testing.assert_array_equal(out.data, vol.data)

    def test_probability_one_always_fires(self, vol):
        pipe = AugPipeline((TransformSpec("mult_brightness", params={"factor": (0.5, 0.5)}, probability=1.0),))
        for seed in range(5):
            out = apply_pipeline(pipe, vol, sample_seed=seed)
            np.testing.assert_allclose(out.data, 0.5 * vol.data, atol=1e-6)

    def test_replays_bit_identically(self, vol):
        pipe = default_pipeline(probability=0.5)
        a = apply_pipeline(pipe, vol, sample_seed=99)
        b = apply_pipeline(pipe, vol, sample_seed=99)
        np.testing.assert_array_equal(a.data, b.data)

    def test_seed_changes_outcome(self, vol):
        pipe = default_pipeline(probability=0.5)
        outs = [apply_pipeline(pipe, vol, sample_seed=s).data for s in range(8)]
        assert any(not np.array_equal(outs[0], o) for o in outs[1:])

    def test_fire_rate_tracks_probability(self, vol):
        pipe = AugPipeline((TransformSpec("mult_brightness", params={"factor": (2.0, 2.0)}, probability=0.2),))
        fired = sum(
            not np.array_equal(apply_pipeline(pipe, vol, sample_seed=s).data, vol.data)
            for s in range(200)
        )
        assert 20 <= fired <= 60  # binomial(200, 0.2), generous bounds

    def test_default_pipeline_composition(self):
        pipe = default_pipeline(probability=0.3)
        assert [t.kind for t in pipe.transforms] == [
            "contrast",
            "gaussian_noise",
            "mult_brightness",
            "spatial_3d",
            "scaling",
        ]
        assert all(t.probability == 0.3 for t in pipe.transforms)
