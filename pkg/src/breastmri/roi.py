"""Breast ROI extraction: split a segmentation into left/right breasts and
crop matching regions out of the high-resolution channels.

The segmentation normally lives on a coarser grid than the channels (it is
predicted at low resolution), so boxes are mapped between grids through
physical coordinates, never by copying voxel indices.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateROIError, NoForegroundError
from .volume import BBox3D, Volume3D, crop, mask_background, resample, sample_at_voxel_coords

logger = logging.getLogger(__name__)

SIDES = ("left", "right")

# 26-connectivity for component labelling.
_STRUCTURE = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class RoiConfig:
    """Extraction settings.

    ``low_spacing`` is the working resolution the segmentation is brought
    to before splitting (None keeps the segmentation grid as given).
    ``margin_mm`` grows each side's bounding box before it is mapped to
    the channel grid. ``apply_background_mask`` zeroes ROI voxels outside
    that side's mask.
    """

    low_spacing: tuple[float, float, float] | None = (4.0, 4.0, 4.0)
    margin_mm: float = 10.0
    apply_background_mask: bool = True

    def __post_init__(self):
        if self.low_spacing is not None:
            object.__setattr__(self, "low_spacing", tuple(float(s) for s in self.low_spacing))
            if any(s <= 0 for s in self.low_spacing):
                raise ValueError(f"low_spacing must be positive, got {self.low_spacing}")
        if self.margin_mm < 0:
            raise ValueError(f"margin_mm must be non-negative, got {self.margin_mm}")


@dataclass(frozen=True)
class BreastRoi:
    """One cropped breast region plus its mask on the same crop grid."""

    side: str
    box_highres: BBox3D
    volume: Volume3D
    mask: Volume3D
    source_case: str = ""

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got {self.side!r}")
        if self.volume.spatial_shape != self.box_highres.shape:
            raise ValueError("ROI volume shape does not match its box")


def connected_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """26-connected components, relabelled 1..K by decreasing size.

    Ties break on first-voxel scan order, so the labelling is
    deterministic. An empty mask yields zero components.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ValueError(f"mask must be 3D, got shape {mask.shape}")
    raw, n = ndimage.label(mask, structure=_STRUCTURE)
    if n == 0:
        return np.zeros(mask.shape, dtype=np.int32), 0
    counts = np.bincount(raw.ravel())[1:]
    order = sorted(range(1, n + 1), key=lambda lab: (-counts[lab - 1], lab))
    remap = np.zeros(n + 1, dtype=np.int32)
    for new, old in enumerate(order, start=1):
        remap[old] = new
    return remap[raw], n


def binary_foreground(seg: Volume3D) -> np.ndarray:
    """Boolean foreground of a single-channel segmentation (values > 0.5)."""
    if seg.num_channels != 1:
        raise ValueError(f"segmentation must be single-channel, got {seg.num_channels}")
    return seg.data[0] > 0.5


def split_left_right(seg: Volume3D) -> dict[str, np.ndarray]:
    """Split a segmentation into per-side boolean masks.

    A labelled mask (values {1, 2}: 1 = anatomical left, 2 = anatomical
    right) is taken as-is. Otherwise the binary foreground is split by
    connected components: the two largest are assigned by centroid, the
    higher-x one being the anatomical left; extra components are dropped
    with a warning. A single component is cut at the x midplane of its
    bounding box ((x0 + x1 + 1) // 2), the lower-x half becoming the
    right side.

    Returns only non-empty sides; raises :class:`NoForegroundError` when
    the mask has no foreground at all.
    """
    fg = binary_foreground(seg)
    if not fg.any():
        raise NoForegroundError("segmentation has no foreground voxels")

    values = set(np.unique(seg.data[0][fg]).tolist())
    if values == {1.0, 2.0}:
        return {"left": seg.data[0] == 1.0, "right": seg.data[0] == 2.0}

    labels, n = connected_components(fg)
    if n >= 2:
        if n > 2:
            logger.warning("segmentation has %d components; keeping the largest two", n)
        c1 = ndimage.center_of_mass(fg, labels, 1)
        c2 = ndimage.center_of_mass(fg, labels, 2)
        if c1[2] >= c2[2]:
            return {"left": labels == 1, "right": labels == 2}
        return {"left": labels == 2, "right": labels == 1}

    xs = np.nonzero(fg.any(axis=(0, 1)))[0]
    x0, x1 = int(xs[0]), int(xs[-1])
    mid = (x0 + x1 + 1) // 2
    xx = np.arange(fg.shape[2])[None, None, :]
    out = {"left": fg & (xx >= mid), "right": fg & (xx < mid)}
    return {side: m for side, m in out.items() if m.any()}


def bbox_of(mask: np.ndarray, margin_voxels=(0, 0, 0)) -> BBox3D:
    """Tight bounding box of a boolean mask, expanded by a per-axis voxel
    margin and clamped to the mask's grid. Raises on an empty mask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ValueError(f"mask must be 3D, got shape {mask.shape}")
    if not mask.any():
        raise NoForegroundError("cannot take the bounding box of an empty mask")
    start = []
    stop = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        hits = np.nonzero(mask.any(axis=other))[0]
        m = int(margin_voxels[axis])
        if m < 0:
            raise ValueError(f"margin must be non-negative, got {margin_voxels}")
        start.append(max(0, int(hits[0]) - m))
        stop.append(min(mask.shape[axis], int(hits[-1]) + 1 + m))
    return BBox3D(tuple(start), tuple(stop))


def margin_to_voxels(margin_mm: float, spacing) -> tuple[int, int, int]:
    """Physical margin to per-axis voxel counts, rounded up."""
    if margin_mm < 0:
        raise ValueError(f"margin must be non-negative, got {margin_mm}")
    return tuple(math.ceil(_snap(margin_mm / s)) for s in spacing)


def _snap(value: float) -> float:
    nearest = round(value)
    if abs(value - nearest) <= 1e-9 * max(1.0, abs(value)):
        return float(nearest)
    return value


def map_box(
    box: BBox3D,
    src_spacing,
    dst_spacing,
    dst_shape,
    *,
    src_origin=(0.0, 0.0, 0.0),
    dst_origin=(0.0, 0.0, 0.0),
) -> BBox3D:
    """Map a box between grids through physical coordinates.

    Both box edges are converted to millimetres and re-expressed in
    target voxel indices, flooring the start and ceiling the stop, so the
    mapped box covers at least the source box's physical extent.
    Fractional indices within 1e-9 (relative) of an integer are snapped
    first, which makes the mapping exact between identical geometries.
    Raises :class:`DegenerateROIError` if the mapped box collapses after
    clamping to the target grid.
    """
    start = []
    stop = []
    for axis in range(3):
        w_lo = src_origin[axis] + box.start[axis] * src_spacing[axis]
        w_hi = src_origin[axis] + box.stop[axis] * src_spacing[axis]
        lo = math.floor(_snap((w_lo - dst_origin[axis]) / dst_spacing[axis]))
        hi = math.ceil(_snap((w_hi - dst_origin[axis]) / dst_spacing[axis]))
        lo = max(0, lo)
        hi = min(int(dst_shape[axis]), hi)
        if hi <= lo:
            raise DegenerateROIError(
                f"box {box} collapses on axis {axis} when mapped (indices {lo}..{hi})"
            )
        start.append(lo)
        stop.append(hi)
    return BBox3D(tuple(start), tuple(stop))


def map_box_to_grid(box: BBox3D, src: Volume3D, dst: Volume3D) -> BBox3D:
    return map_box(
        box,
        src.spacing,
        dst.spacing,
        dst.spatial_shape,
        src_origin=src.origin,
        dst_origin=dst.origin,
    )


def _mask_on_grid(mask: np.ndarray, seg: Volume3D, target: Volume3D, box: BBox3D) -> np.ndarray:
    """Nearest-neighbour transfer of a segmentation-grid mask onto the
    part of the target grid covered by ``box``."""
    axes = [
        np.arange(box.start[a], box.stop[a], dtype=np.float64) * target.spacing[a]
        + target.origin[a]
        for a in range(3)
    ]
    world = np.meshgrid(*axes, indexing="ij")
    coords = np.stack(
        [(world[a] - seg.origin[a]) / seg.spacing[a] for a in range(3)],
        axis=0,
    )
    mask_vol = Volume3D(mask[np.newaxis].astype(np.float32), seg.spacing, seg.origin)
    sampled = sample_at_voxel_coords(mask_vol, coords, mode="nearest")
    return sampled[0] > 0.5


def extract_rois(
    channels: Volume3D,
    seg: Volume3D,
    config: RoiConfig = RoiConfig(),
    *,
    case_id: str = "",
) -> list[BreastRoi]:
    """Crop one ROI per breast out of ``channels``.

    Pipeline: bring the segmentation to the working resolution (nearest),
    split into sides, take each side's bounding box plus margin, map it
    into the channel grid, crop channels and mask, and optionally zero
    everything outside the mask. ROIs come back left first.
    """
    if config.low_spacing is not None and tuple(seg.spacing) != config.low_spacing:
        seg = resample(seg, config.low_spacing, mode="nearest")
    side_masks = split_left_right(seg)
    rois = []
    for side in SIDES:
        if side not in side_masks:
            continue
        mask = side_masks[side]
        box = bbox_of(mask, margin_to_voxels(config.margin_mm, seg.spacing))
        box = map_box_to_grid(box, seg, channels)
        roi = crop(channels, box)
        roi_mask = _mask_on_grid(mask, seg, channels, box)
        if not roi_mask.any():
            raise DegenerateROIError(f"side {side!r} mask is empty after mapping to the channel grid")
        mask_vol = Volume3D(roi_mask[np.newaxis].astype(np.float32), roi.spacing, roi.origin)
        if config.apply_background_mask:
            roi = mask_background(roi, mask_vol)
        rois.append(BreastRoi(side=side, box_highres=box, volume=roi, mask=mask_vol, source_case=case_id))
    if not rois:
        raise NoForegroundError("no usable breast region found")
    return rois


def extract_case_rois(case, config: RoiConfig = RoiConfig()) -> list[BreastRoi]:
    """ROI extraction for a dataset case (channels + segmentation mask)."""
    return extract_rois(case.channels, case.seg_mask, config, case_id=case.case_id)
