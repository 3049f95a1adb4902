"""Geometric and intensity primitives for multi-channel 3D volumes.

Conventions used consistently across the package:

- Voxel data is indexed ``[channel, z, y, x]`` and stored as float32.
- ``spacing`` is the per-axis voxel size ``(sz, sy, sx)`` in millimetres.
- ``origin`` is the physical position (mm) of voxel ``(0, 0, 0)``, so voxel
  index ``v`` sits at physical coordinate ``origin + v * spacing``.
- Interpolation clamps coordinates to the volume edge rather than padding
  with zeros, so border values never bleed artificial zeros into crops.

All operations are pure: they never mutate their inputs and return new
:class:`Volume3D` instances. Treat volumes as immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Volume3D",
    "BBox3D",
    "resample",
    "resample_to_shape",
    "crop",
    "mask_background",
    "stack_channels",
    "sample_at_voxel_coords",
]


@dataclass(frozen=True)
class Volume3D:
    """A multi-channel volumetric image with axis-aligned physical geometry.

    Args:
        data: Array of shape ``[C, Z, Y, X]`` (or ``[Z, Y, X]``, promoted to
            a single channel). Coerced to float32; must be finite.
        spacing: Per-axis voxel size ``(sz, sy, sx)`` in mm, all positive.
        origin: Physical coordinate (mm) of voxel ``(0, 0, 0)``.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 3:
            arr = arr[np.newaxis]
        if arr.ndim != 4:
            raise ValueError(f"expected 3D or 4D voxel data, got {arr.ndim}D")
        if arr.size == 0:
            raise ValueError("volume must contain at least one voxel")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        if not np.isfinite(arr).all():
            raise ValueError("volume data contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        if len(origin) != 3:
            raise ValueError(f"origin must have three components, got {self.origin}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, int, int]:
        """The ``(Z, Y, X)`` grid shape, excluding the channel axis."""
        return tuple(self.data.shape[1:])

    def channel(self, index: int) -> "Volume3D":
        """A single-channel view (copied) of channel ``index``."""
        return Volume3D(self.data[index : index + 1].copy(), self.spacing, self.origin)

    def with_data(self, data: np.ndarray) -> "Volume3D":
        """A new volume with replaced voxel data and unchanged geometry."""
        return Volume3D(data, self.spacing, self.origin)

    def same_geometry(self, other: "Volume3D") -> bool:
        """True if spatial shape, spacing and origin all match exactly."""
        return (
            self.spatial_shape == other.spatial_shape
            and self.spacing == other.spacing
            and self.origin == other.origin
        )


@dataclass(frozen=True)
class BBox3D:
    """An axis-aligned box in voxel index space.

    ``start`` is inclusive, ``stop`` exclusive, both ordered ``(z, y, x)``.
    """

    start: tuple[int, int, int]
    stop: tuple[int, int, int]

    def __post_init__(self):
        start = tuple(int(v) for v in self.start)
        stop = tuple(int(v) for v in self.stop)
        if len(start) != 3 or len(stop) != 3:
            raise ValueError("box corners must have three components")
        if any(s < 0 for s in start):
            raise ValueError(f"box start must be non-negative, got {start}")
        if any(a >= b for a, b in zip(start, stop)):
            raise ValueError(f"box start must be strictly below stop, got {start} vs {stop}")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "stop", stop)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(b - a for a, b in zip(self.start, self.stop))

    def contains(self, other: "BBox3D") -> bool:
        return all(a <= b for a, b in zip(self.start, other.start)) and all(
            a >= b for a, b in zip(self.stop, other.stop)
        )


# ---------------------------------------------------------------------------
# sampling core
# ---------------------------------------------------------------------------


def _lerp_along_axis(data: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    """Linearly interpolate ``data`` at fractional ``coords`` along one axis.

    Coordinates are clamped to ``[0, n - 1]``. The fused ``lo + w * (hi - lo)``
    form keeps constant fields exactly constant.
    """
    n = data.shape[axis]
    c = np.clip(coords.astype(np.float64), 0.0, float(n - 1))
    i0 = np.floor(c).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    w = c - i0
    lo = np.take(data, i0, axis=axis)
    hi = np.take(data, i1, axis=axis)
    w_shape = [1] * data.ndim
    w_shape[axis] = len(coords)
    w = w.reshape(w_shape)
    return lo + w * (hi - lo)


def _nearest_along_axis(data: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    """Nearest-neighbour gather along one axis; halves round up."""
    n = data.shape[axis]
    c = np.clip(coords.astype(np.float64), 0.0, float(n - 1))
    idx = np.minimum(np.floor(c + 0.5).astype(np.int64), n - 1)
    return np.take(data, idx, axis=axis)


def _sample_regular_grid(data: np.ndarray, axis_coords, mode: str) -> np.ndarray:
    """Sample ``[C, Z, Y, X]`` data on a separable grid of voxel coordinates."""
    out = data.astype(np.float64)
    pick = _lerp_along_axis if mode == "trilinear" else _nearest_along_axis
    for spatial_axis, coords in enumerate(axis_coords):
        out = pick(out, np.asarray(coords, dtype=np.float64), spatial_axis + 1)
    return out.astype(np.float32)


def sample_at_voxel_coords(vol: Volume3D, coords: np.ndarray, mode: str = "trilinear") -> np.ndarray:
    """Sample every channel of ``vol`` at arbitrary fractional voxel coordinates.

    Args:
        vol: Source volume.
        coords: Array of shape ``(3, ...)`` holding ``(z, y, x)`` voxel
            coordinates; clamped to the volume edge.
        mode: ``"trilinear"`` or ``"nearest"``.

    Returns:
        float32 array of shape ``(C, ...)`` matching the coordinate grid.
    """
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown interpolation mode {mode!r}")
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] != 3:
        raise ValueError(f"coords must have leading dimension 3, got {coords.shape}")
    data = vol.data.astype(np.float64)
    nz, ny, nx = vol.spatial_shape
    z = np.clip(coords[0], 0.0, nz - 1.0)
    y = np.clip(coords[1], 0.0, ny - 1.0)
    x = np.clip(coords[2], 0.0, nx - 1.0)
    if mode == "nearest":
        zi = np.minimum(np.floor(z + 0.5).astype(np.int64), nz - 1)
        yi = np.minimum(np.floor(y + 0.5).astype(np.int64), ny - 1)
        xi = np.minimum(np.floor(x + 0.5).astype(np.int64), nx - 1)
        return data[:, zi, yi, xi].astype(np.float32)
    z0 = np.floor(z).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    z1 = np.minimum(z0 + 1, nz - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    x1 = np.minimum(x0 + 1, nx - 1)
    wz, wy, wx = z - z0, y - y0, x - x0
    c000 = data[:, z0, y0, x0]
    c001 = data[:, z0, y0, x1]
    c010 = data[:, z0, y1, x0]
    c011 = data[:, z0, y1, x1]
    c100 = data[:, z1, y0, x0]
    c101 = data[:, z1, y0, x1]
    c110 = data[:, z1, y1, x0]
    c111 = data[:, z1, y1, x1]
    c00 = c000 + wx * (c001 - c000)
    c01 = c010 + wx * (c011 - c010)
    c10 = c100 + wx * (c101 - c100)
    c11 = c110 + wx * (c111 - c110)
    c0 = c00 + wy * (c01 - c00)
    c1 = c10 + wy * (c11 - c10)
    return (c0 + wz * (c1 - c0)).astype(np.float32)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5))


def resample(vol: Volume3D, target_spacing, mode: str = "trilinear") -> Volume3D:
    """Resample a volume onto a grid with the given voxel spacing.

    The output grid has ``max(1, round(n * spacing / target))`` voxels per
    axis (round half away from zero). Output voxel ``j`` samples the input at
    fractional coordinate ``j * target / spacing``, i.e. index 0 of both
    grids coincides and the origin is preserved. Coordinates beyond the last
    input voxel are clamped to the edge.

    Args:
        vol: Input volume.
        target_spacing: Desired ``(sz, sy, sx)`` in mm, all positive.
        mode: ``"trilinear"`` or ``"nearest"``.
    """
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown interpolation mode {mode!r}")
    target = tuple(float(s) for s in target_spacing)
    if len(target) != 3 or any(s <= 0 for s in target):
        raise ValueError(f"target spacing must be three positive values, got {target_spacing}")
    out_shape = tuple(
        max(1, _round_half_away(n * s / t))
        for n, s, t in zip(vol.spatial_shape, vol.spacing, target)
    )
    axis_coords = [
        np.arange(n_out, dtype=np.float64) * (t / s)
        for n_out, t, s in zip(out_shape, target, vol.spacing)
    ]
    data = _sample_regular_grid(vol.data, axis_coords, mode)
    return Volume3D(data, target, vol.origin)


def resample_to_shape(vol: Volume3D, out_shape, mode: str = "trilinear") -> Volume3D:
    """Resample a volume onto a grid with an exact spatial shape.

    Output voxel ``j`` samples input coordinate ``j * n_in / n_out`` per
    axis; the output spacing is scaled accordingly so the physical footprint
    is preserved and the origin is unchanged.
    """
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown interpolation mode {mode!r}")
    out_shape = tuple(int(n) for n in out_shape)
    if len(out_shape) != 3 or any(n < 1 for n in out_shape):
        raise ValueError(f"output shape must be three positive sizes, got {out_shape}")
    axis_coords = [
        np.arange(n_out, dtype=np.float64) * (n_in / n_out)
        for n_out, n_in in zip(out_shape, vol.spatial_shape)
    ]
    spacing = tuple(
        s * n_in / n_out for s, n_in, n_out in zip(vol.spacing, vol.spatial_shape, out_shape)
    )
    data = _sample_regular_grid(vol.data, axis_coords, mode)
    return Volume3D(data, spacing, vol.origin)


def crop(vol: Volume3D, box: BBox3D) -> Volume3D:
    """Extract the subvolume covered by ``box``.

    Values are copied bit-identically; the origin shifts by
    ``start * spacing``. A box reaching outside the volume raises a
    ValueError instead of being silently clamped.
    """
    for axis, (b, n) in enumerate(zip(box.stop, vol.spatial_shape)):
        if b > n:
            raise ValueError(
                f"box {box.start}..{box.stop} exceeds volume spatial shape "
                f"{vol.spatial_shape} on axis {axis}"
            )
    z0, y0, x0 = box.start
    z1, y1, x1 = box.stop
    data = np.ascontiguousarray(vol.data[:, z0:z1, y0:y1, x0:x1])
    origin = tuple(o + a * s for o, a, s in zip(vol.origin, box.start, vol.spacing))
    return Volume3D(data, vol.spacing, origin)


def mask_background(vol: Volume3D, mask: Volume3D) -> Volume3D:
    """Zero every voxel where the binary mask is 0, in all channels."""
    if mask.num_channels != 1:
        raise ValueError(f"mask must be single-channel, got {mask.num_channels} channels")
    if mask.spatial_shape != vol.spatial_shape:
        raise ValueError(
            f"mask spatial shape {mask.spatial_shape} does not match volume "
            f"spatial shape {vol.spatial_shape}"
        )
    m = mask.data[0]
    values = np.unique(m)
    if not np.isin(values, (0.0, 1.0)).all():
        raise ValueError(f"mask must be binary (0/1), found values {values[:8]}")
    return vol.with_data(vol.data * m)


def stack_channels(vols: list[Volume3D]) -> Volume3D:
    """Concatenate volumes along the channel axis, preserving order."""
    if not vols:
        raise ValueError("need at least one volume to stack")
    first = vols[0]
    for i, v in enumerate(vols[1:], start=1):
        if not first.same_geometry(v):
            raise ValueError(
                f"volume {i} geometry (shape {v.spatial_shape}, spacing {v.spacing}, "
                f"origin {v.origin}) does not match volume 0 "
                f"(shape {first.spatial_shape}, spacing {first.spacing}, origin {first.origin})"
            )
    data = np.concatenate([v.data for v in vols], axis=0)
    return Volume3D(data, first.spacing, first.origin)
