"""Seed-deterministic data augmentation for multi-channel volumes.

Ten transform kinds are available; each can be applied in isolation or
composed into a pipeline where every entry fires independently with its
own probability. All randomness per transform comes from one integer
seed, so pipelines replay bit-identically. Spatial kinds share their
geometric draw across channels; intensity kinds share the drawn factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from .seeding import derive_seed, rng_from
from .volume import Volume3D, resample_to_shape, sample_at_voxel_coords

ALL_KINDS = (
    "contrast",
    "gamma",
    "gaussian_blur",
    "gaussian_noise",
    "mult_brightness",
    "sim_low_res",
    "spatial_3d",
    "spatial_inplane",
    "scaling",
    "elastic",
)

# Transforms that beat the no-augmentation baseline; these make up the
# default training pipeline.
DEFAULT_KINDS = ("contrast", "gaussian_noise", "mult_brightness", "spatial_3d", "scaling")

DEFAULT_PARAMS = {
    "contrast": {"factor": (0.75, 1.25)},
    "gamma": {"gamma": (0.7, 1.5)},
    "gaussian_blur": {"sigma": (0.5, 1.0)},
    "gaussian_noise": {"sigma": (0.0, 0.1)},
    "mult_brightness": {"factor": (0.75, 1.25)},
    "sim_low_res": {"factor": (1.0, 2.0)},
    "spatial_3d": {"rotation_deg": (-15.0, 15.0), "translation_frac": (-0.05, 0.05)},
    "spatial_inplane": {"rotation_deg": (-15.0, 15.0)},
    "scaling": {"factor": (0.85, 1.15)},
    "elastic": {"amplitude": (0.0, 4.0), "smoothing_sigma": 8.0},
}


@dataclass(frozen=True)
class TransformSpec:
    """One augmentation: a kind, optional parameter overrides, and the
    probability with which a pipeline applies it."""

    kind: str
    params: dict = field(default_factory=dict)
    probability: float = 1.0

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}, expected one of {ALL_KINDS}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must be in [0, 1], got {self.probability}")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ValueError(f"unknown params for {self.kind}: {sorted(unknown)}")
        for key, value in self.effective_params().items():
            if isinstance(value, tuple) and len(value) == 2 and value[0] > value[1]:
                raise ValueError(f"{self.kind}.{key} range is reversed: {value}")

    def effective_params(self) -> dict:
        merged = dict(DEFAULT_PARAMS[self.kind])
        for key, value in self.params.items():
            merged[key] = tuple(value) if isinstance(value, (list, tuple)) else value
        return merged


@dataclass(frozen=True)
class AugPipeline:
    """Ordered transforms; equal (input, seed) replays bit-identically."""

    transforms: tuple[TransformSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))


def default_pipeline(probability: float = 0.2) -> AugPipeline:
    return AugPipeline(tuple(TransformSpec(kind, probability=probability) for kind in DEFAULT_KINDS))


def single_transform_pipeline(kind: str, probability: float = 0.2) -> AugPipeline:
    """Pipeline with one transform, for isolation studies."""
    return AugPipeline((TransformSpec(kind, probability=probability),))


# ---------------------------------------------------------------------------
# intensity transforms
# ---------------------------------------------------------------------------


def _contrast(data, rng, params):
    f = rng.uniform(*params["factor"])
    mean = data.mean(axis=(1, 2, 3), keepdims=True)
    return mean + f * (data - mean)


def _gamma(data, rng, params):
    g = rng.uniform(*params["gamma"])
    out = np.empty_like(data)
    for c in range(data.shape[0]):
        lo = data[c].min()
        hi = data[c].max()
        span = hi - lo
        if span <= 0:
            out[c] = data[c]
            continue
        out[c] = ((data[c] - lo) / span) ** g * span + lo
    return out


def _gaussian_blur(data, rng, params):
    sigma = rng.uniform(*params["sigma"])
    out = data
    for axis in (1, 2, 3):
        out = gaussian_filter1d(out, sigma, axis=axis, mode="nearest")
    return out


def _gaussian_noise(data, rng, params):
    sigma = rng.uniform(*params["sigma"])
    return data + rng.normal(0.0, sigma, size=data.shape)


def _mult_brightness(data, rng, params):
    return rng.uniform(*params["factor"]) * data


# ---------------------------------------------------------------------------
# spatial transforms (all resample with trilinear, edge-clamped sampling
# and keep the output grid identical to the input grid)
# ---------------------------------------------------------------------------


def _identity_coords(shape) -> np.ndarray:
    axes = [np.arange(n, dtype=np.float64) for n in shape]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=0)


def _sim_low_res(vol: Volume3D, rng, params) -> Volume3D:
    f = rng.uniform(*params["factor"])
    small = tuple(max(1, int(math.floor(n / f + 0.5))) for n in vol.spatial_shape)
    down = resample_to_shape(vol, small, mode="trilinear")
    up = resample_to_shape(down, vol.spatial_shape, mode="trilinear")
    return vol.with_data(up.data)


def _rotation_matrix(angles_rad) -> np.ndarray:
    az, ay, ax = angles_rad
    cz, sz = math.cos(az), math.sin(az)
    cy, sy = math.cos(ay), math.sin(ay)
    cx, sx = math.cos(ax), math.sin(ax)
    # Axis order (z, y, x); rotation "about z" moves the (y, x) plane.
    rz = np.array([[1, 0, 0], [0, cz, -sz], [0, sz, cz]], dtype=np.float64)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=np.float64)
    rx = np.array([[cx, -sx, 0], [sx, cx, 0], [0, 0, 1]], dtype=np.float64)
    return rz @ ry @ rx


def _warp(vol: Volume3D, coords: np.ndarray) -> Volume3D:
    sampled = sample_at_voxel_coords(vol, coords, mode="trilinear")
    return vol.with_data(sampled)


def _spatial(vol: Volume3D, rng, params, inplane: bool) -> Volume3D:
    lo, hi = params["rotation_deg"]
    if inplane:
        angles = np.array([rng.uniform(lo, hi) * math.pi / 180.0, 0.0, 0.0])
        t_mm = np.zeros(3)
    else:
        angles = rng.uniform(lo, hi, size=3) * math.pi / 180.0
        t_lo, t_hi = params["translation_frac"]
        extent = np.array([n * s for n, s in zip(vol.spatial_shape, vol.spacing)])
        t_mm = rng.uniform(t_lo, t_hi, size=3) * extent
    rot = _rotation_matrix(angles)
    spacing = np.asarray(vol.spacing, dtype=np.float64)
    center = (np.asarray(vol.spatial_shape, dtype=np.float64) - 1.0) / 2.0 * spacing
    idx = _identity_coords(vol.spatial_shape)
    mm = idx * spacing[:, None, None, None] - center[:, None, None, None]
    mm = mm - t_mm[:, None, None, None]
    src_mm = np.einsum("ab,b...->a...", rot.T, mm) + center[:, None, None, None]
    coords = src_mm / spacing[:, None, None, None]
    return _warp(vol, coords)


def _scaling(vol: Volume3D, rng, params) -> Volume3D:
    f = rng.uniform(*params["factor"])
    center = (np.asarray(vol.spatial_shape, dtype=np.float64) - 1.0) / 2.0
    idx = _identity_coords(vol.spatial_shape)
    coords = center[:, None, None, None] + (idx - center[:, None, None, None]) / f
    return _warp(vol, coords)


def _elastic(vol: Volume3D, rng, params) -> Volume3D:
    amplitude = rng.uniform(*params["amplitude"])
    sigma = params["smoothing_sigma"]
    coords = _identity_coords(vol.spatial_shape)
    for axis in range(3):
        fld = gaussian_filter(rng.normal(0.0, 1.0, size=vol.spatial_shape), sigma, mode="nearest")
        peak = np.abs(fld).max()
        if peak > 0:
            coords[axis] += fld / peak * amplitude
    return _warp(vol, coords)


_INTENSITY = {
    "contrast": _contrast,
    "gamma": _gamma,
    "gaussian_blur": _gaussian_blur,
    "gaussian_noise": _gaussian_noise,
    "mult_brightness": _mult_brightness,
}


def apply_transform(spec: TransformSpec, vol: Volume3D, rng_seed: int) -> Volume3D:
    """Apply one transform deterministically.

    Intensity kinds change values only; spatial kinds warp content but
    keep shape, spacing and origin unchanged.
    """
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    params = spec.effective_params()
    if spec.kind in _INTENSITY:
        data = _INTENSITY[spec.kind](vol.data.astype(np.float64), rng, params)
        return vol.with_data(data.astype(np.float32))
    if spec.kind == "sim_low_res":
        return _sim_low_res(vol, rng, params)
    if spec.kind == "spatial_3d":
        return _spatial(vol, rng, params, inplane=False)
    if spec.kind == "spatial_inplane":
        return _spatial(vol, rng, params, inplane=True)
    if spec.kind == "scaling":
        return _scaling(vol, rng, params)
    return _elastic(vol, rng, params)


def apply_pipeline(pipe: AugPipeline, vol: Volume3D, sample_seed: int) -> Volume3D:
    """Apply transforms in order; entry ``i`` fires with its probability
    under a sub-seed derived from ``(sample_seed, i)``."""
    out = vol
    for i, tspec in enumerate(pipe.transforms):
        rng = rng_from(sample_seed, i)
        if rng.random() < tspec.probability:
            out = apply_transform(tspec, out, derive_seed(sample_seed, i, tspec.kind))
    return out
