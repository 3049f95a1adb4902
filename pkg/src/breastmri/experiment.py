"""Experiment orchestration: trials, grids, and segmentation pretraining.

A trial = phantom dataset -> ROI extraction -> per-fold training ->
leave-one-center-out evaluation, all derived from one resolved config.
Fold results are cached on disk under the run directory, so interrupted
trials resume without recomputing finished folds. Grids run the
cross-product of config overrides and emit comparison tables.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import ALL_KINDS
from .config import (
    config_hash,
    make_backbone,
    make_head,
    make_phantom_spec,
    make_roi_config,
    make_task,
    make_train_config,
    resolve_config,
)
from .errors import RunFailedError
from .evaluation import FoldMetrics, evaluate_fold, make_loco_splits
from .models import (
    build_model,
    build_segmenter,
    checkpoint_from_model,
    load_checkpoint,
    make_predict_fn,
    save_checkpoint,
    transfer_encoder_weights,
)
from .phantom import CHANNEL_NAMES, generate_dataset, synthesize_noise_channel
from .roi import extract_rois
from .seeding import derive_seed
from .training import SegTrainConfig, TrainSample, segmenter_foreground_dice, train, train_segmenter
from .volume import Volume3D, resample, stack_channels

logger = logging.getLogger(__name__)

DATA_ROOT_ENV = "BREASTMRI_DATA_ROOT"


def data_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, "."))


@dataclass(frozen=True)
class CaseKey:
    case_id: str
    center_id: str
    label: str


@dataclass
class TrialData:
    """Everything a trial needs after the volumes are digested."""

    keys: list[CaseKey]
    rois_by_case: dict[str, list]
    labels_by_case: dict[str, str]
    splits: list
    lowres_by_case: dict[str, tuple[Volume3D, Volume3D]] = field(default_factory=dict)


def build_channel_volume(case, sources) -> Volume3D:
    """Assemble the model input volume from the configured channel sources."""
    parts = []
    for source in sources:
        if source == "t2_noise":
            parts.append(synthesize_noise_channel(case))
        else:
            parts.append(case.channels.channel(CHANNEL_NAMES.index(source)))
    return stack_channels(parts)


def prepare_trial_data(cfg: dict, keep_lowres: bool | None = None) -> TrialData:
    """Generate the phantom dataset and extract per-case ROIs.

    Full-resolution case volumes are dropped as soon as their ROIs (and,
    when pretraining is enabled, low-resolution copies) are extracted.
    """
    spec = make_phantom_spec(cfg)
    roi_cfg = make_roi_config(cfg)
    sources = tuple(cfg["channels"])
    if keep_lowres is None:
        keep_lowres = bool(cfg["pretrain"]["enabled"])
    keys = []
    rois_by_case = {}
    labels_by_case = {}
    lowres_by_case = {}
    for case in generate_dataset(spec):
        volume = build_channel_volume(case, sources)
        keys.append(CaseKey(case.case_id, case.center_id, case.label))
        rois_by_case[case.case_id] = extract_rois(volume, case.seg_mask, roi_cfg, case_id=case.case_id)
        labels_by_case[case.case_id] = case.label
        if keep_lowres and roi_cfg.low_spacing is not None:
            low_ch = resample(volume, roi_cfg.low_spacing, mode="trilinear")
            low_seg = resample(case.seg_mask, roi_cfg.low_spacing, mode="nearest")
            lowres_by_case[case.case_id] = (low_ch, low_seg)
    splits = make_loco_splits(keys, val_fraction=float(cfg["val_fraction"]))
    return TrialData(
        keys=keys,
        rois_by_case=rois_by_case,
        labels_by_case=labels_by_case,
        splits=splits,
        lowres_by_case=lowres_by_case,
    )


def _samples_for(case_ids, data: TrialData) -> list[TrainSample]:
    samples = []
    for case_id in case_ids:
        for roi in data.rois_by_case[case_id]:
            samples.append(TrainSample(roi=roi, label=data.labels_by_case[case_id]))
    return samples


# ---------------------------------------------------------------------------
# run manifests
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    run_id: str
    name: str
    config_hash: str
    config: dict
    status: str = "running"
    folds: list = field(default_factory=list)
    mean_macro_auroc: float | None = None
    mean_class_auroc: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    started_at: str = ""
    finished_at: str = ""
    error: str = ""

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "name": self.name,
            "config_hash": self.config_hash,
            "config": self.config,
            "status": self.status,
            "folds": list(self.folds),
            "mean_macro_auroc": self.mean_macro_auroc,
            "mean_class_auroc": dict(self.mean_class_auroc),
            "seeds": dict(self.seeds),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RunManifest":
        return cls(**payload)


def save_manifest(manifest: RunManifest, path):
    path = Path(path)
    tmp = path.with_suffix(".json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
    tmp.replace(path)


def load_manifest(path) -> RunManifest:
    with open(path) as fh:
        return RunManifest.from_dict(json.load(fh))


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


# ---------------------------------------------------------------------------
# fold execution
# ---------------------------------------------------------------------------


def _pretrain_for_fold(cfg: dict, data: TrialData, split, fold_seed: int):
    """Pretrain a segmenter on this fold's training centers only."""
    pre = cfg["pretrain"]
    pair_ids = list(split.train_case_ids) + list(split.val_case_ids)
    pairs = [data.lowres_by_case[cid] for cid in pair_ids]
    backbone = make_backbone(cfg, in_channels=len(cfg["channels"]))
    segmenter = build_segmenter(backbone, seg_classes=int(pre["seg_classes"]), seed=derive_seed(fold_seed, "pretrain"))
    train_segmenter(
        segmenter,
        pairs,
        SegTrainConfig(
            epochs=int(pre["epochs"]),
            lr=float(pre["lr"]),
            batch_size=int(pre["batch_size"]),
            seed=derive_seed(fold_seed, "pretrain-loop"),
        ),
    )
    return checkpoint_from_model(segmenter, task="segmentation")


def _run_fold(cfg: dict, cfg_hash: str, data: TrialData, split, fold_dir: Path, resume: bool) -> dict:
    metrics_path = fold_dir / "metrics.json"
    if resume and metrics_path.exists():
        with open(metrics_path) as fh:
            cached = json.load(fh)
        if cached.get("config_hash") == cfg_hash:
            logger.info("fold %s: reusing cached metrics", split.fold_id)
            return cached
        logger.warning("fold %s: cached metrics from a different config; recomputing", split.fold_id)

    t0 = time.monotonic()
    fold_seed = derive_seed(int(cfg["train"]["seed"]), "fold", split.test_center)
    task = make_task(cfg)
    backbone = make_backbone(cfg, in_channels=len(cfg["channels"]))
    head = make_head(cfg, num_classes=task.num_classes)
    model = build_model(backbone, head, seed=fold_seed)
    if cfg["pretrain"]["enabled"]:
        report = transfer_encoder_weights(_pretrain_for_fold(cfg, data, split, fold_seed), model)
        logger.info("fold %s: transferred %d tensors (%d skipped)", split.fold_id, len(report.matched), len(report.skipped))

    train_cfg = make_train_config(cfg, seed=fold_seed)
    train_samples = _samples_for(split.train_case_ids, data)
    val_samples = _samples_for(split.val_case_ids, data)
    model, log = train(model, train_samples, train_cfg, val_samples or None)

    predict = make_predict_fn(model, train_cfg.patch_shape)
    metrics = evaluate_fold(predict, split, data.rois_by_case, data.labels_by_case, task)

    fold_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(checkpoint_from_model(model, task="classification", config_hash=cfg_hash), fold_dir / "checkpoint.pt")
    payload = {
        "config_hash": cfg_hash,
        "fold_seed": fold_seed,
        "seconds": round(time.monotonic() - t0, 3),
        "train_log": log.to_dict(),
        **metrics.to_dict(),
    }
    tmp = metrics_path.with_suffix(".json.tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    tmp.replace(metrics_path)
    return payload


def run_trial(user_cfg: dict | None, workdir=None, resume: bool = True) -> RunManifest:
    """Run one full trial (all folds); returns the stored manifest.

    Deterministic given the config: re-running yields identical metrics.
    Any fold failure is recorded in the manifest (status "failed") before
    :class:`RunFailedError` propagates.
    """
    cfg = resolve_config(user_cfg)
    cfg_hash = config_hash(cfg)
    run_id = f"{cfg['name']}-{cfg_hash[:10]}"
    base = Path(workdir) if workdir is not None else data_root() / "runs"
    run_dir = base / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)

    manifest = RunManifest(
        run_id=run_id,
        name=cfg["name"],
        config_hash=cfg_hash,
        config=cfg,
        started_at=_now(),
        seeds={"train_seed": int(cfg["train"]["seed"]), "master_seed": int(cfg["data"]["master_seed"])},
    )
    data = prepare_trial_data(cfg)
    manifest.seeds["fold_seeds"] = {
        s.fold_id: derive_seed(int(cfg["train"]["seed"]), "fold", s.test_center) for s in data.splits
    }
    for split in data.splits:
        try:
            payload = _run_fold(cfg, cfg_hash, data, split, run_dir / split.fold_id, resume)
        except Exception as exc:
            manifest.status = "failed"
            manifest.error = f"fold {split.fold_id}: {exc}"
            manifest.finished_at = _now()
            save_manifest(manifest, run_dir / "manifest.json")
            raise RunFailedError(manifest.error) from exc
        manifest.folds.append(payload)

    manifest.mean_macro_auroc = float(np.mean([f["macro_auroc"] for f in manifest.folds]))
    classes = manifest.folds[0]["class_auroc"].keys()
    manifest.mean_class_auroc = {
        c: float(np.mean([f["class_auroc"][c] for f in manifest.folds])) for c in classes
    }
    manifest.status = "completed"
    manifest.finished_at = _now()
    save_manifest(manifest, run_dir / "manifest.json")
    return manifest


def untrained_fold_metrics(user_cfg: dict | None = None, data: TrialData | None = None) -> list[FoldMetrics]:
    """Evaluate freshly initialized (untrained) models on every fold.

    The chance-level reference for trained results.
    """
    cfg = resolve_config(user_cfg)
    if data is None:
        data = prepare_trial_data(cfg, keep_lowres=False)
    task = make_task(cfg)
    backbone = make_backbone(cfg, in_channels=len(cfg["channels"]))
    head = make_head(cfg, num_classes=task.num_classes)
    patch = tuple(int(n) for n in cfg["train"]["patch_shape"])
    out = []
    for split in data.splits:
        fold_seed = derive_seed(int(cfg["train"]["seed"]), "fold", split.test_center)
        model = build_model(backbone, head, seed=fold_seed)
        predict = make_predict_fn(model, patch)
        out.append(evaluate_fold(predict, split, data.rois_by_case, data.labels_by_case, task))
    return out


# ---------------------------------------------------------------------------
# segmentation pretraining (standalone)
# ---------------------------------------------------------------------------


def pretrain_segmenter(user_cfg: dict | None = None, out_path=None):
    """Train a low-resolution segmenter on phantom data.

    The last center is held out for the Dice report. Returns
    ``(checkpoint, heldout_dice, train_log)`` and optionally saves the
    checkpoint.
    """
    cfg = resolve_config(user_cfg)
    spec = make_phantom_spec(cfg)
    roi_cfg = make_roi_config(cfg)
    low_spacing = roi_cfg.low_spacing or tuple(float(s) for s in cfg["data"]["base_spacing"])
    sources = tuple(cfg["channels"])
    holdout_center = spec.centers[-1].center_id
    train_pairs = []
    heldout_pairs = []
    for case in generate_dataset(spec):
        volume = build_channel_volume(case, sources)
        pair = (
            resample(volume, low_spacing, mode="trilinear"),
            resample(case.seg_mask, low_spacing, mode="nearest"),
        )
        (heldout_pairs if case.center_id == holdout_center else train_pairs).append(pair)

    pre = cfg["pretrain"]
    backbone = make_backbone(cfg, in_channels=len(sources))
    seed = derive_seed(int(cfg["train"]["seed"]), "pretrain-standalone")
    segmenter = build_segmenter(backbone, seg_classes=int(pre["seg_classes"]), seed=seed)
    log = train_segmenter(
        segmenter,
        train_pairs,
        SegTrainConfig(
            epochs=int(pre["epochs"]),
            lr=float(pre["lr"]),
            batch_size=int(pre["batch_size"]),
            seed=seed,
        ),
    )
    dice = segmenter_foreground_dice(segmenter, heldout_pairs)
    if dice < 0.5:
        logger.warning("held-out foreground Dice %.3f < 0.5; transfer value is doubtful", dice)
    ckpt = checkpoint_from_model(segmenter, task="segmentation", config_hash=config_hash(cfg))
    if out_path is not None:
        save_checkpoint(ckpt, out_path)
    return ckpt, dice, log


# ---------------------------------------------------------------------------
# grids and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentGrid:
    """Cross-product of config overrides. ``axes`` maps an axis name to
    an ordered mapping of cell label -> config override."""

    base: dict
    axes: dict
    replicates: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not self.axes:
            raise ValueError("grid needs at least one axis")


def _deep_update(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(out.get(key), dict) and isinstance(value, dict):
            out[key] = _deep_update(out[key], value)
        else:
            out[key] = value
    return out


def grid_cells(grid: ExperimentGrid):
    """Yield (label, config) per cell x replicate."""
    axis_items = [list(cells.items()) for cells in grid.axes.values()]
    base_seed = int(grid.base.get("train", {}).get("seed", 0))
    for combo in itertools.product(*axis_items):
        label = "+".join(cell_label for cell_label, _ in combo)
        cfg = dict(grid.base)
        for _, override in combo:
            cfg = _deep_update(cfg, override)
        cfg = _deep_update(cfg, {"name": label})
        for r in range(grid.replicates):
            seed = base_seed if grid.replicates == 1 else derive_seed(base_seed, "replicate", r) % (2**31)
            yield label, _deep_update(cfg, {"train": {"seed": seed}})


def run_grid(grid: ExperimentGrid, workdir=None, baseline: str | None = None):
    """Run every cell; returns (manifests, table rows).

    Failed cells are reported and skipped; completed cells are retained.
    Rows carry the mean macro AUROC per cell (over replicates) and, when a
    baseline label is given, the delta and direction against it.
    """
    manifests = []
    by_label: dict[str, list[float]] = {}
    order: list[str] = []
    for label, cfg in grid_cells(grid):
        if label not in order:
            order.append(label)
        try:
            manifest = run_trial(cfg, workdir=workdir)
        except RunFailedError as exc:
            logger.error("grid cell %s failed: %s", label, exc)
            continue
        manifests.append(manifest)
        by_label.setdefault(label, []).append(manifest.mean_macro_auroc)
    rows = build_table(by_label, order, baseline)
    return manifests, rows


def build_table(by_label: dict, order: list[str], baseline: str | None = None) -> list[dict]:
    rows = []
    base_value = None
    if baseline is not None and by_label.get(baseline):
        base_value = float(np.mean(by_label[baseline]))
    for label in order:
        values = by_label.get(label, [])
        if not values:
            rows.append({"label": label, "n_runs": 0, "mean_macro_auroc": None, "delta": None, "direction": "failed"})
            continue
        mean = float(np.mean(values))
        row = {"label": label, "n_runs": len(values), "mean_macro_auroc": mean, "delta": None, "direction": ""}
        if base_value is not None:
            row["delta"] = mean - base_value
            if label == baseline:
                row["direction"] = "baseline"
            else:
                row["direction"] = "+" if mean > base_value else ("-" if mean < base_value else "=")
        rows.append(row)
    return rows


def write_table(rows: list[dict], out_dir, stem: str = "grid_report"):
    """Emit a comparison table as CSV (machine) and Markdown (human)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["label", "n_runs", "mean_macro_auroc", "delta", "direction"])
        writer.writeheader()
        writer.writerows(rows)
    md_path = out_dir / f"{stem}.md"
    with open(md_path, "w") as fh:
        fh.write("| Config | Runs | Mean AUROC | Delta | |\n")
        fh.write("|---|---|---|---|---|\n")
        for row in rows:
            mean = "" if row["mean_macro_auroc"] is None else f"{row['mean_macro_auroc']:.3f}"
            delta = "" if row["delta"] is None else f"{row['delta']:+.3f}"
            fh.write(f"| {row['label']} | {row['n_runs']} | {mean} | {delta} | {row['direction']} |\n")
    return csv_path, md_path


def collect_manifests(workdir) -> list[RunManifest]:
    """All run manifests below a directory, ordered by run id."""
    out = []
    for path in sorted(Path(workdir).glob("*/manifest.json")):
        try:
            out.append(load_manifest(path))
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            logger.warning("skipping unreadable manifest %s: %s", path, exc)
    return out


def report_from_manifests(manifests: list[RunManifest], baseline: str | None = None) -> list[dict]:
    """Rebuild a comparison table from stored manifests (completed only)."""
    by_label: dict[str, list[float]] = {}
    order = []
    for manifest in manifests:
        if manifest.status != "completed" or manifest.mean_macro_auroc is None:
            continue
        if manifest.name not in order:
            order.append(manifest.name)
        by_label.setdefault(manifest.name, []).append(manifest.mean_macro_auroc)
    return build_table(by_label, order, baseline)


# ---------------------------------------------------------------------------
# predefined ablation axes
# ---------------------------------------------------------------------------


def ablation_axes(axis: str) -> tuple[dict, str]:
    """Overrides for one named ablation study; returns (axes, baseline label)."""
    if axis == "backbone":
        cells = {kind: {"backbone": {"kind": kind}} for kind in ("resnet18_3d", "res_enc_se", "res_enc")}
        return {"backbone": cells}, "res_enc"
    if axis == "strategy":
        cells = {
            "from_scratch": {"strategy": {"kind": "from_scratch"}, "pretrain": {"enabled": False}},
            "linear_probe": {"strategy": {"kind": "linear_probe"}, "pretrain": {"enabled": True}},
            "full_finetune": {"strategy": {"kind": "full_finetune"}, "pretrain": {"enabled": True}},
            "warmup_1e-4_1e-2": {
                "strategy": {"kind": "warmup_finetune", "lr_start": 1e-4, "lr_peak": 1e-2, "warmup_epochs": 5},
                "pretrain": {"enabled": True},
            },
            "warmup_1e-5_1e-3": {
                "strategy": {"kind": "warmup_finetune", "lr_start": 1e-5, "lr_peak": 1e-3, "warmup_epochs": 5},
                "pretrain": {"enabled": True},
            },
        }
        return {"strategy": cells}, "from_scratch"
    if axis == "augmentation":
        cells = {"no_aug": {"augmentation": {"preset": "none"}}}
        for kind in ALL_KINDS:
            cells[kind] = {"augmentation": {"preset": kind}}
        return {"augmentation": cells}, "no_aug"
    if axis == "batch_size":
        cells = {f"bs{b}": {"train": {"batch_size": b}} for b in (4, 2, 1)}
        return {"batch_size": cells}, "bs1"
    if axis == "channels":
        cells = {
            "pre_post1_post2_t2": {"channels": ["pre", "post1", "post2", "t2_noise"]},
            "pre_post1_post2": {"channels": ["pre", "post1", "post2"]},
        }
        return {"channels": cells}, "pre_post1_post2"
    if axis == "task":
        cells = {
            "three_class": {"task": "three_class"},
            "binary_lesion": {"task": "binary_lesion"},
        }
        return {"task": cells}, "three_class"
    if axis == "masking":
        cells = {
            "masked": {"roi": {"apply_background_mask": True}},
            "unmasked": {"roi": {"apply_background_mask": False}},
        }
        return {"masking": cells}, "unmasked"
    raise ValueError(
        f"unknown ablation axis {axis!r}; choose from backbone, strategy, augmentation, "
        f"batch_size, channels, task, masking"
    )
