"""Deterministic synthetic multi-center breast DCE-MRI dataset.

Each case is a three-phase volume (pre-contrast plus two post-contrast
phases) holding two ellipsoidal breasts on a dim background, with a
per-center intensity scale, noise level and spacing perturbation to mimic
acquisition-site heterogeneity. Lesion kinetics follow the usual pattern:
malignant lesions wash in fast and partially wash out, benign lesions
enhance gradually and persist, healthy cases have no focal lesion.

Everything is derived from per-case seeds, so a dataset is byte-identical
across runs given the same spec.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .io import load_volume, save_volume
from .seeding import derive_seed, rng_from
from .volume import Volume3D

logger = logging.getLogger(__name__)

LABELS = ("healthy", "benign", "malignant")
CHANNEL_NAMES = ("pre", "post1", "post2")

TISSUE_INTENSITY = 1.0
BACKGROUND_INTENSITY = 0.08
# Fractional parenchymal enhancement of plain breast tissue per phase.
TISSUE_ENHANCEMENT = (0.0, 0.01, 0.018)
# Lesion wash-in/washout multipliers per phase.
MALIGNANT_KINETICS = (0.15, 1.0, 0.55)
BENIGN_KINETICS = (0.10, 0.5, 0.8)
# Lesion ground-truth mask covers the 2-sigma surface of the blob.
_LESION_MASK_LEVEL = math.exp(-2.0)


@dataclass(frozen=True)
class CenterProfile:
    """Acquisition-center heterogeneity knobs."""

    center_id: str
    intensity_scale: float = 1.0
    noise_sigma: float = 0.02
    spacing_jitter: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.intensity_scale <= 0:
            raise ValueError(f"intensity_scale must be positive, got {self.intensity_scale}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")


@dataclass(frozen=True)
class PhantomSpec:
    """Full description of a synthetic dataset."""

    centers: tuple[CenterProfile, ...]
    cases_per_center: int
    class_mix: tuple[float, float, float] = (0.4, 0.3, 0.3)
    base_shape: tuple[int, int, int] = (32, 64, 64)
    base_spacing: tuple[float, float, float] = (2.0, 2.0, 2.0)
    master_seed: int = 0
    malignant_amplitude: tuple[float, float] = (0.9, 1.3)
    benign_amplitude: tuple[float, float] = (0.5, 0.7)
    lesion_sigma_mm: tuple[float, float] = (5.0, 8.0)
    # Healthy cases stay below this voxelwise |post1 - pre| inside the breast.
    lesion_contrast_threshold: float = 0.35

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(self.centers))
        if len(self.centers) < 2:
            raise ValueError("need at least two centers (held-out-center evaluation)")
        mix = tuple(float(p) for p in self.class_mix)
        if len(mix) != 3 or any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError(f"class_mix must be three non-negative values summing to 1, got {mix}")
        object.__setattr__(self, "class_mix", mix)
        if self.cases_per_center < 1:
            raise ValueError("cases_per_center must be at least 1")


def default_centers(n: int) -> tuple[CenterProfile, ...]:
    """A spread of center profiles: intensity scales 0.95..1.05, noise
    0.02..0.03, and a cycling z-spacing perturbation."""
    if n < 2:
        raise ValueError("need at least two centers")
    profiles = []
    for i in range(n):
        t = i / (n - 1)
        jitter = (0.2 * ((i % 3) - 1), 0.0, 0.0)
        profiles.append(
            CenterProfile(
                center_id=f"C{i:02d}",
                intensity_scale=0.95 + 0.10 * t,
                noise_sigma=0.02 + 0.01 * t,
                spacing_jitter=jitter,
            )
        )
    return tuple(profiles)


@dataclass
class CaseRecord:
    """One generated subject: three-phase channels plus the breast mask.

    ``lesion_mask`` and ``lesion_side`` are generator ground truth kept for
    test assertions only; they are never serialized and never feed the
    classification path.
    """

    case_id: str
    center_id: str
    label: str
    channels: Volume3D
    seg_mask: Volume3D
    seed: int
    lesion_mask: Volume3D | None = None
    lesion_side: str | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}, expected one of {LABELS}")


def _ellipsoid(grids, center, semi_axes) -> np.ndarray:
    zz, yy, xx = grids
    cz, cy, cx = center
    az, ay, ax = semi_axes
    d = ((zz - cz) / az) ** 2 + ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2
    return d <= 1.0


def _gaussian_blob(grids, center, sigma_vox) -> np.ndarray:
    zz, yy, xx = grids
    cz, cy, cx = center
    sz, sy, sx = sigma_vox
    d2 = ((zz - cz) / sz) ** 2 + ((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2
    return np.exp(-0.5 * d2)


def generate_case(
    spec: PhantomSpec,
    center: CenterProfile,
    label: str,
    seed: int,
    case_id: str | None = None,
) -> CaseRecord:
    """Generate one case deterministically from its seed.

    The random draw order is fixed (right breast geometry, left breast
    geometry, lesion, background artifacts, noise), so outputs are
    bit-identical for equal inputs.
    """
    if label not in LABELS:
        raise ValueError(f"unknown label {label!r}, expected one of {LABELS}")
    rng = np.random.Generator(np.random.PCG64(seed))
    nz, ny, nx = spec.base_shape
    spacing = tuple(s + j for s, j in zip(spec.base_spacing, center.spacing_jitter))
    if any(s <= 0 for s in spacing):
        raise ValueError(f"center {center.center_id} jitter makes spacing non-positive: {spacing}")
    grids = (
        np.arange(nz, dtype=np.float64)[:, None, None],
        np.arange(ny, dtype=np.float64)[None, :, None],
        np.arange(nx, dtype=np.float64)[None, None, :],
    )

    # Breast ellipsoids. Anatomical left is the higher-x half of the grid.
    sides = {}
    for side, cx_frac in (("right", 0.27), ("left", 0.73)):
        cx = nx * (cx_frac + rng.uniform(-0.02, 0.02))
        cy = ny * (0.52 + rng.uniform(-0.03, 0.03))
        cz = nz * (0.50 + rng.uniform(-0.03, 0.03))
        semi = (
            nz * (0.30 + rng.uniform(-0.025, 0.025)),
            ny * (0.30 + rng.uniform(-0.025, 0.025)),
            nx * (0.165 + rng.uniform(-0.015, 0.015)),
        )
        sides[side] = {"mask": _ellipsoid(grids, (cz, cy, cx), semi), "center": (cz, cy, cx), "semi": semi}
    foreground = sides["left"]["mask"] | sides["right"]["mask"]

    # Lesion (focal Gaussian blob strictly inside one breast).
    lesion_field = np.zeros(spec.base_shape, dtype=np.float64)
    lesion_mask = None
    lesion_side = None
    amplitude = 0.0
    kinetics = (0.0, 0.0, 0.0)
    if label != "healthy":
        lesion_side = "left" if rng.random() < 0.5 else "right"
        host = sides[lesion_side]
        offsets = rng.uniform(-0.45, 0.45, size=3) * np.asarray(host["semi"])
        lesion_center = tuple(c + o for c, o in zip(host["center"], offsets))
        sigma_mm = rng.uniform(*spec.lesion_sigma_mm)
        sigma_vox = tuple(sigma_mm / s for s in spacing)
        blob = _gaussian_blob(grids, lesion_center, sigma_vox)
        lesion_field = blob * foreground
        lesion_mask = (blob >= _LESION_MASK_LEVEL) & foreground
        if label == "malignant":
            amplitude = rng.uniform(*spec.malignant_amplitude)
            kinetics = MALIGNANT_KINETICS
        else:
            amplitude = rng.uniform(*spec.benign_amplitude)
            kinetics = BENIGN_KINETICS

    # Background artifacts: faint blobs outside the breasts with random,
    # class-independent per-channel amplitudes. Background masking removes
    # exactly this nuisance signal.
    artifacts = np.zeros((3, nz, ny, nx), dtype=np.float64)
    n_blobs = int(rng.integers(1, 4))
    for _ in range(n_blobs):
        blob_center = (
            rng.uniform(0, nz - 1),
            rng.uniform(0, ny - 1),
            rng.uniform(0, nx - 1),
        )
        blob_sigma_mm = rng.uniform(4.0, 8.0)
        blob = _gaussian_blob(grids, blob_center, tuple(blob_sigma_mm / s for s in spacing))
        amps = rng.uniform(0.0, 0.35, size=3)
        artifacts += amps[:, None, None, None] * blob[None]
    artifacts *= ~foreground

    noise = rng.normal(0.0, center.noise_sigma, size=(3, nz, ny, nx))

    channels = np.empty((3, nz, ny, nx), dtype=np.float64)
    for k in range(3):
        tissue = TISSUE_INTENSITY * (1.0 + TISSUE_ENHANCEMENT[k])
        signal = np.where(foreground, tissue, BACKGROUND_INTENSITY)
        signal = signal + artifacts[k] + kinetics[k] * amplitude * lesion_field
        channels[k] = center.intensity_scale * signal + noise[k]

    seg = np.zeros(spec.base_shape, dtype=np.float32)
    seg[sides["left"]["mask"]] = 1.0
    seg[sides["right"]["mask"]] = 2.0

    if case_id is None:
        case_id = f"{center.center_id}-s{seed % 10**9:09d}"
    return CaseRecord(
        case_id=case_id,
        center_id=center.center_id,
        label=label,
        channels=Volume3D(channels.astype(np.float32), spacing),
        seg_mask=Volume3D(seg, spacing),
        seed=seed,
        lesion_mask=None if lesion_mask is None else Volume3D(lesion_mask.astype(np.float32), spacing),
        lesion_side=lesion_side,
    )


def _label_sequence(spec: PhantomSpec, center_id: str) -> list[str]:
    """Quota sampling: per-center label counts within 1 of the exact mix."""
    n = spec.cases_per_center
    exact = [p * n for p in spec.class_mix]
    counts = [int(math.floor(e)) for e in exact]
    remainder = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    labels = [label for label, c in zip(LABELS, counts) for _ in range(c)]
    rng_from(spec.master_seed, center_id, "label-order").shuffle(labels)
    return labels


def generate_dataset(spec: PhantomSpec) -> list[CaseRecord]:
    """Generate all cases for all centers.

    Per-case seeds depend only on (master_seed, center_id, case index), so
    the dataset content is independent of generation order.
    """
    cases = []
    for center in spec.centers:
        labels = _label_sequence(spec, center.center_id)
        for idx, label in enumerate(labels):
            seed = derive_seed(spec.master_seed, center.center_id, idx)
            case_id = f"{center.center_id}-{idx:04d}"
            cases.append(generate_case(spec, center, label, seed, case_id=case_id))
    return cases


def synthesize_noise_channel(case: CaseRecord) -> Volume3D:
    """A pure-noise extra channel with the case's geometry.

    Used to exercise four-channel input configurations with a deliberately
    uninformative channel."""
    rng = rng_from(case.seed, "noise-channel")
    data = rng.normal(0.3, 0.2, size=case.channels.spatial_shape).astype(np.float32)
    return Volume3D(data[np.newaxis], case.channels.spacing, case.channels.origin)


# ---------------------------------------------------------------------------
# dataset persistence
# ---------------------------------------------------------------------------

MANIFEST_FIELDS = ("case_id", "center_id", "label", "channels_path", "seg_path", "seed")


def save_dataset(cases: list[CaseRecord], out_dir) -> Path:
    """Write case volumes plus a manifest CSV; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for case in cases:
        channels_path = f"{case.case_id}_channels.bvol"
        seg_path = f"{case.case_id}_seg.bvol"
        save_volume(case.channels, out_dir / channels_path)
        save_volume(case.seg_mask, out_dir / seg_path)
        rows.append(
            {
                "case_id": case.case_id,
                "center_id": case.center_id,
                "label": case.label,
                "channels_path": channels_path,
                "seg_path": seg_path,
                "seed": str(case.seed),
            }
        )
    manifest = out_dir / "manifest.csv"
    tmp = manifest.with_suffix(".csv.tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    tmp.replace(manifest)
    logger.info("wrote %d cases to %s", len(cases), out_dir)
    return manifest


def load_manifest(manifest_path) -> list[dict]:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"dataset manifest not found: {manifest_path}")
    with open(manifest_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    missing = [f for f in MANIFEST_FIELDS if rows and f not in rows[0]]
    if missing:
        raise DataError(f"manifest {manifest_path} lacks required columns: {missing}")
    return rows


def load_case(row: dict, root) -> CaseRecord:
    root = Path(root)
    for key in ("channels_path", "seg_path"):
        if not (root / row[key]).exists():
            raise DataError(f"volume file missing for case {row['case_id']}: {root / row[key]}")
    return CaseRecord(
        case_id=row["case_id"],
        center_id=row["center_id"],
        label=row["label"],
        channels=load_volume(root / row["channels_path"]),
        seg_mask=load_volume(root / row["seg_path"]),
        seed=int(row["seed"]),
    )


def load_dataset(manifest_path) -> list[CaseRecord]:
    manifest_path = Path(manifest_path)
    rows = load_manifest(manifest_path)
    return [load_case(row, manifest_path.parent) for row in rows]
