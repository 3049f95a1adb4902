"""
From whole volume to per-breast ROIs, step by step
==================================================

The two-stage idea: find each breast cheaply on a low-resolution copy,
then cut the corresponding high-resolution region for the classifier.
This walkthrough does each step by hand, then shows the one-call
version used by the pipeline.
"""

import numpy as np

from breastmri import (
    PhantomSpec,
    RoiConfig,
    bbox_of,
    crop,
    default_centers,
    extract_rois,
    generate_dataset,
    map_box,
    mask_background,
    resample,
    split_left_right,
)

spec = PhantomSpec(centers=default_centers(2), cases_per_center=2, master_seed=7)
case = next(c for c in generate_dataset(spec) if c.label == "malignant")
print(f"case {case.case_id} ({case.label}), shape {case.channels.spatial_shape}, "
      f"spacing {case.channels.spacing} mm")

# Step 1: downsample the segmentation to a coarse grid. In the real
# pipeline a trained segmenter produces this mask; here we reuse the
# ground-truth mask to show the geometry.
low_seg = resample(case.seg_mask, (4.0, 4.0, 4.0), mode="nearest")
print(f"low-res grid {low_seg.spatial_shape} at {low_seg.spacing} mm")

# Step 2: split the foreground into left and right breasts.
sides = split_left_right(low_seg)
for side, mask in sides.items():
    print(f"  {side}: {int(mask.data.sum())} low-res voxels")

# Step 3: bounding box with a safety margin, in low-res voxel units.
margin_mm = 10.0
for side, mask in sides.items():
    box_low = bbox_of(mask, margin_mm=margin_mm)
    # Step 4: map the low-res box onto the high-res grid through world
    # coordinates. Start edges floor, stop edges ceil, so the high-res
    # box always covers the low-res one.
    box_high = map_box(box_low, mask, case.channels)
    print(f"  {side}: low-res box {box_low.start}->{box_low.stop} "
          f"maps to high-res {box_high.start}->{box_high.stop}")

# Step 5: crop and mask. Background masking zeroes everything outside
# the breast so the classifier cannot key on background structure.
box_high = map_box(bbox_of(sides["left"], margin_mm=margin_mm), sides["left"], case.channels)
roi_plain = crop(case.channels, box_high)
seg_crop = crop(case.seg_mask, box_high)
roi_masked = mask_background(roi_plain, (seg_crop.data[0] > 0).astype(np.float32))
outside = seg_crop.data[0] == 0
print(f"\nleft ROI {roi_plain.spatial_shape}: "
      f"background mean before masking {roi_plain.data[0][outside].mean():.4f}, "
      f"after {roi_masked.data[0][outside].mean():.4f}")

# The one-call version: low-res split + box mapping + crop + masking.
config = RoiConfig(low_spacing=(4.0, 4.0, 4.0), margin_mm=10.0, apply_background_mask=True)
rois = extract_rois(case.channels, case.seg_mask, config, case_id=case.case_id)
for roi in rois:
    covered = crop(case.seg_mask, roi.box_highres).data[0] > 0
    total = {"left": 1, "right": 2}[roi.side]
    full = (case.seg_mask.data[0] == total).sum()
    print(f"{roi.side}: box {roi.box_highres.start}->{roi.box_highres.stop}, "
          f"covers {covered.sum()}/{full} voxels of that breast")
