"""Command-line entry points.

Subcommands cover the full workflow: synthetic data generation, ROI
extraction, segmenter pretraining, training, evaluation, ablation grids,
and table regeneration from stored run manifests.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 run failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment
from .config import (
    config_hash,
    load_config,
    make_backbone,
    make_head,
    make_phantom_spec,
    make_roi_config,
    make_task,
    resolve_config,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateROIError,
    NoForegroundError,
    RunFailedError,
    TrainingDivergedError,
    TransferError,
)
from .evaluation import evaluate_fold
from .models import build_model, load_checkpoint, make_predict_fn
from .phantom import generate_dataset, load_case, load_manifest, save_dataset
from .roi import RoiConfig, extract_rois
from .io import save_volume

logger = logging.getLogger(__name__)


def _set_seed(user_cfg: dict, section: str, key: str, seed: int | None) -> dict:
    if seed is None:
        return user_cfg
    out = dict(user_cfg)
    out[section] = dict(out.get(section, {}))
    out[section][key] = int(seed)
    return out


def _user_config(args) -> dict:
    return load_config(args.config) if args.config else {}


def cmd_generate_data(args) -> int:
    cfg = resolve_config(_set_seed(_user_config(args), "data", "master_seed", args.seed))
    cases = generate_dataset(make_phantom_spec(cfg))
    manifest = save_dataset(cases, args.out)
    print(f"wrote {len(cases)} cases to {manifest}")
    return 0


def cmd_extract_rois(args) -> int:
    cfg = resolve_config(_user_config(args))
    base = make_roi_config(cfg)
    roi_cfg = RoiConfig(
        low_spacing=tuple(args.low_spacing) if args.low_spacing else base.low_spacing,
        margin_mm=args.margin_mm if args.margin_mm is not None else base.margin_mm,
        apply_background_mask=(
            args.mask_background if args.mask_background is not None else base.apply_background_mask
        ),
    )
    rows = load_manifest(args.manifest)
    root = Path(args.manifest).parent
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    for row in rows:
        case = load_case(row, root)
        for roi in extract_rois(case.channels, case.seg_mask, roi_cfg, case_id=case.case_id):
            path = f"{case.case_id}_{roi.side}.bvol"
            save_volume(roi.volume, out_dir / path)
            index.append(
                {
                    "case_id": case.case_id,
                    "side": roi.side,
                    "label": case.label,
                    "start": list(roi.box_highres.start),
                    "stop": list(roi.box_highres.stop),
                    "path": path,
                }
            )
    with open(out_dir / "rois.json", "w") as fh:
        json.dump(index, fh, indent=2)
    print(f"wrote {len(index)} ROIs to {out_dir}")
    return 0


def cmd_pretrain_seg(args) -> int:
    user = _set_seed(_user_config(args), "train", "seed", args.seed)
    out = args.out or "segmenter.pt"
    _, dice, _ = experiment.pretrain_segmenter(user, out_path=out)
    print(f"held-out foreground dice: {dice:.4f}; checkpoint: {out}")
    return 0


def cmd_train(args) -> int:
    user = _set_seed(_user_config(args), "train", "seed", args.seed)
    manifest = experiment.run_trial(user, workdir=args.workdir, resume=not args.no_resume)
    print(f"run {manifest.run_id}: mean macro AUROC {manifest.mean_macro_auroc:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(_set_seed(_user_config(args), "train", "seed", args.seed))
    data = experiment.prepare_trial_data(cfg, keep_lowres=False)
    split = next((s for s in data.splits if s.test_center == args.center), None)
    if split is None:
        centers = [s.test_center for s in data.splits]
        raise DataError(f"center {args.center!r} not in dataset (have {centers})")
    task = make_task(cfg)
    ckpt = load_checkpoint(args.checkpoint)
    model = build_model(
        make_backbone(cfg, in_channels=len(cfg["channels"])),
        make_head(cfg, num_classes=task.num_classes),
    )
    try:
        model.load_state_dict(ckpt.tensors)
    except RuntimeError as exc:
        raise DataError(f"checkpoint does not fit the configured model: {exc}") from exc
    predict = make_predict_fn(model, tuple(int(n) for n in cfg["train"]["patch_shape"]))
    metrics = evaluate_fold(predict, split, data.rois_by_case, data.labels_by_case, task)
    payload = {"config_hash": config_hash(cfg), **metrics.to_dict()}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _run_ablation(args, axis: str) -> int:
    user = _set_seed(_user_config(args), "train", "seed", args.seed)
    try:
        axes, baseline = experiment.ablation_axes(axis)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    grid = experiment.ExperimentGrid(base=user, axes=axes, replicates=args.replicates)
    workdir = args.workdir or "runs"
    _, rows = experiment.run_grid(grid, workdir=workdir, baseline=baseline)
    csv_path, md_path = experiment.write_table(rows, workdir, stem=f"ablate_{axis}")
    for row in rows:
        mean = "failed" if row["mean_macro_auroc"] is None else f"{row['mean_macro_auroc']:.4f}"
        print(f"{row['label']:>24}  {mean}  {row['direction']}")
    print(f"tables: {csv_path}, {md_path}")
    return 0


def cmd_ablate(args) -> int:
    return _run_ablation(args, args.axis)


def cmd_ablate_da(args) -> int:
    return _run_ablation(args, "augmentation")


def cmd_report(args) -> int:
    manifests = experiment.collect_manifests(args.workdir)
    if not manifests:
        raise DataError(f"no run manifests found under {args.workdir}")
    rows = experiment.report_from_manifests(manifests, baseline=args.baseline)
    out = args.out or args.workdir
    csv_path, md_path = experiment.write_table(rows, out, stem="report")
    print(f"{len(manifests)} runs -> {csv_path}, {md_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="breastmri",
        description="Two-stage breast MRI classification pipeline on synthetic phantom data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML/JSON config file (defaults apply to missing keys)")
        p.add_argument("--seed", type=int, default=None, help="override the command's primary seed")

    p = sub.add_parser("generate-data", help="generate a phantom dataset to disk")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("extract-rois", help="extract per-breast ROIs from a dataset manifest")
    common(p)
    p.add_argument("--manifest", required=True, help="dataset manifest file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--low-spacing", type=float, nargs=3, metavar=("Z", "Y", "X"))
    p.add_argument("--margin-mm", type=float, default=None)
    p.add_argument("--mask-background", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_extract_rois)

    p = sub.add_parser("pretrain-seg", help="pretrain the low-resolution segmenter on phantoms")
    common(p)
    p.add_argument("--out", help="checkpoint output path (default segmenter.pt)")
    p.set_defaults(func=cmd_pretrain_seg)

    p = sub.add_parser("train", help="run a full trial (all leave-one-center-out folds)")
    common(p)
    p.add_argument("--workdir", help="run directory root (default <data root>/runs)")
    p.add_argument("--no-resume", action="store_true", help="recompute folds even if cached")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on one held-out center")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--center", required=True, help="held-out center id")
    p.add_argument("--out", help="metrics JSON output path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run a predefined ablation grid")
    common(p)
    p.add_argument("--axis", required=True, help="backbone | strategy | augmentation | batch_size | channels | task | masking")
    p.add_argument("--workdir", help="run directory root")
    p.add_argument("--replicates", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("ablate-da", help="augmentation isolation study (one transform at a time)")
    common(p)
    p.add_argument("--workdir", help="run directory root")
    p.add_argument("--replicates", type=int, default=1)
    p.set_defaults(func=cmd_ablate_da)

    p = sub.add_parser("report", help="regenerate comparison tables from stored manifests")
    common(p)
    p.add_argument("--workdir", required=True)
    p.add_argument("--baseline", help="row label to mark as baseline")
    p.add_argument("--out", help="output directory (default workdir)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, NoForegroundError, DegenerateROIError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (RunFailedError, TrainingDivergedError, TransferError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
