"""
Generating a synthetic breast DCE-MRI dataset
=============================================

Every case is a three-channel volume (pre-contrast, two post-contrast
phases) plus a two-breast segmentation mask. Cases come from named
"centers" whose intensity scaling and voxel spacing differ, which is
what makes leave-one-center-out evaluation meaningful.
"""

import numpy as np

from breastmri import (
    CHANNEL_NAMES,
    PhantomSpec,
    default_centers,
    generate_dataset,
    load_dataset,
    save_dataset,
)

# A small two-center cohort. The master seed pins everything: case
# seeds, lesion placement, noise, and the per-center spacing jitter.
spec = PhantomSpec(
    centers=default_centers(2),
    cases_per_center=6,
    class_mix=(0.4, 0.3, 0.3),
    master_seed=2024,
)
cases = generate_dataset(spec)
print(f"generated {len(cases)} cases from {len(spec.centers)} centers")

# Per-center label counts follow the class mix via largest remainders.
for center in spec.centers:
    labels = [c.label for c in cases if c.center_id == center.center_id]
    counts = {lab: labels.count(lab) for lab in ("healthy", "benign", "malignant")}
    print(f"  {center.center_id}: {counts}")

# The enhancement curve over the breast tissue separates the classes:
# malignant lesions wash in fast and wash out, benign lesions keep
# rising, healthy tissue barely moves.
print("\nmean intensity inside the segmentation, per channel:")
print(f"{'case':>10} {'label':>10} " + " ".join(f"{n:>8}" for n in CHANNEL_NAMES))
for case in cases[:6]:
    inside = case.seg_mask.data[0] > 0
    means = [float(case.channels.data[ch][inside].mean()) for ch in range(3)]
    print(f"{case.case_id:>10} {case.label:>10} " + " ".join(f"{m:8.4f}" for m in means))

# The segmentation uses label 1 for the left breast (higher x) and
# label 2 for the right breast.
case = cases[0]
seg = case.seg_mask.data[0]
for value, side in ((1, "left"), (2, "right")):
    xs = np.argwhere(seg == value)[:, 2]
    print(f"\nlabel {value} ({side}): {int((seg == value).sum())} voxels, "
          f"x centroid {xs.mean():.1f}")

# Round trip through disk. Volumes are stored as .bvol (a small
# header + raw float32) next to a manifest.csv.
out = "demo_dataset"
save_dataset(cases, out)
reloaded = load_dataset(out)
same = all(
    np.array_equal(a.channels.data, b.channels.data) for a, b in zip(cases, reloaded)
)
print(f"\nsaved to {out}/ and reloaded bit-identical: {same}")
