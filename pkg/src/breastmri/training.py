"""Training loops: classification fine-tuning strategies with warmup and
polynomial decay, class-balanced sampling, binary task relabeling, and
low-resolution segmenter pretraining.

Runs are deterministic given the config seed: sampling indices and
augmentation seeds derive from it, and torch runs single-threaded.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .augment import AugPipeline, apply_pipeline
from .errors import TrainingDivergedError, UndefinedMetricError
from .evaluation import CLASS_NAMES, macro_auroc_ovr, map_binary_to_three_class
from .models import _init_weights, zscore_channels
from .roi import BreastRoi
from .seeding import derive_seed, rng_from
from .volume import Volume3D, resample_to_shape

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ("from_scratch", "linear_probe", "full_finetune", "warmup_finetune")
BINARY_CLASS_NAMES = ("healthy", "lesion_present")


@dataclass(frozen=True)
class FinetuneStrategy:
    """How to adapt a (possibly pretrained) model.

    ``warmup_finetune`` ramps linearly from ``lr_start`` to ``lr_peak``
    over ``warmup_epochs``; the other kinds use the run's base learning
    rate from the start. ``linear_probe`` trains only the head.
    """

    kind: str = "from_scratch"
    lr_start: float | None = None
    lr_peak: float | None = None
    warmup_epochs: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}, expected one of {STRATEGY_KINDS}")
        if self.kind == "warmup_finetune":
            if self.lr_start is None or self.lr_peak is None:
                raise ValueError("warmup_finetune requires lr_start and lr_peak")
            if not 0 < self.lr_start < self.lr_peak:
                raise ValueError(f"warmup needs 0 < lr_start < lr_peak, got {self.lr_start} vs {self.lr_peak}")
            if self.warmup_epochs < 1:
                raise ValueError("warmup_epochs must be at least 1")
        elif self.lr_start is not None or self.lr_peak is not None or self.warmup_epochs:
            raise ValueError(f"{self.kind} does not take warmup parameters")


def warmup_high(warmup_epochs: int = 10) -> FinetuneStrategy:
    return FinetuneStrategy("warmup_finetune", lr_start=1e-4, lr_peak=1e-2, warmup_epochs=warmup_epochs)


def warmup_low(warmup_epochs: int = 10) -> FinetuneStrategy:
    return FinetuneStrategy("warmup_finetune", lr_start=1e-5, lr_peak=1e-3, warmup_epochs=warmup_epochs)


@dataclass(frozen=True)
class TaskFormulation:
    kind: str = "three_class"

    def __post_init__(self):
        if self.kind not in ("three_class", "binary_lesion"):
            raise ValueError(f"unknown task formulation {self.kind!r}")

    @property
    def class_names(self) -> tuple[str, ...]:
        return CLASS_NAMES if self.kind == "three_class" else BINARY_CLASS_NAMES

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


THREE_CLASS = TaskFormulation("three_class")
BINARY_LESION = TaskFormulation("binary_lesion")


def relabel_for_binary(label: str) -> str:
    """healthy stays healthy; benign and malignant become lesion_present."""
    if label == "healthy":
        return "healthy"
    if label in ("benign", "malignant"):
        return "lesion_present"
    raise ValueError(f"unknown label {label!r}")


def lr_at(strategy: FinetuneStrategy, epoch: int, total_epochs: int, base_lr: float = 0.01) -> float:
    """Learning rate for one epoch.

    Warmup kinds interpolate lr_start -> lr_peak over warmup_epochs, then
    decay polynomially: lr_peak * (1 - (epoch - W) / (total - W)) ** 0.9.
    Other kinds apply the same polynomial decay to ``base_lr`` from epoch
    0. Both formulas agree at the junction, so the schedule is continuous.
    """
    if total_epochs < 1:
        raise ValueError(f"total_epochs must be at least 1, got {total_epochs}")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if strategy.kind == "warmup_finetune":
        w = strategy.warmup_epochs
        if w >= total_epochs:
            raise ValueError(f"warmup_epochs {w} must be below total_epochs {total_epochs}")
        if epoch < w:
            return strategy.lr_start + (strategy.lr_peak - strategy.lr_start) * (epoch / w)
        return strategy.lr_peak * (1.0 - (epoch - w) / (total_epochs - w)) ** 0.9
    if base_lr <= 0:
        raise ValueError(f"base_lr must be positive, got {base_lr}")
    return base_lr * (1.0 - epoch / total_epochs) ** 0.9


def trainable_parameters(strategy: FinetuneStrategy, model: nn.Module) -> set[str]:
    """Names of the parameters the strategy trains."""
    all_names = {name for name, _ in model.named_parameters()}
    if strategy.kind != "linear_probe":
        return all_names
    head_names = {name for name in all_names if name.startswith("head.")}
    if not head_names:
        raise ValueError("model has no head.* parameters to linear-probe")
    return head_names


# ---------------------------------------------------------------------------
# classification training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainSample:
    """One training unit: a breast ROI with its case's three-class label."""

    roi: BreastRoi
    label: str

    def __post_init__(self):
        if self.label not in CLASS_NAMES:
            raise ValueError(f"unknown label {self.label!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 1
    base_lr: float = 0.01
    weight_decay: float = 3e-5
    momentum: float = 0.99
    strategy: FinetuneStrategy = FinetuneStrategy()
    task: TaskFormulation = THREE_CLASS
    augmentation: AugPipeline = AugPipeline()
    class_weights: tuple[float, ...] | None = None
    iters_per_epoch: int = 50
    patch_shape: tuple[int, int, int] = (16, 24, 24)
    seed: int = 0
    # With momentum 0.99 some initializations never leave the
    # uniform-prediction plateau within any reasonable budget. When
    # enabled, a run whose loss is still at that plateau halfway
    # through is deterministically reinitialized from a derived seed
    # and the schedule restarts over the remaining epochs.
    plateau_restart: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.iters_per_epoch < 1:
            raise ValueError("iters_per_epoch must be at least 1")
        if any(n < 1 for n in self.patch_shape):
            raise ValueError(f"bad patch_shape {self.patch_shape}")
        if self.class_weights is not None and len(self.class_weights) != self.task.num_classes:
            raise ValueError(
                f"class_weights length {len(self.class_weights)} does not match "
                f"{self.task.num_classes}-class task"
            )
        # fail at construction, not mid-run, when the schedule cannot
        # cover the epoch budget (e.g. warmup longer than the whole run)
        lr_at(self.strategy, 0, self.epochs, base_lr=self.base_lr)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_metric: float | None = None


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int | None = None
    best_val: float | None = None
    restarts: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "epochs": [vars(e).copy() for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_val": self.best_val,
            "restarts": list(self.restarts),
        }


def _target_index(label: str, task: TaskFormulation) -> int:
    if task.kind == "binary_lesion":
        return BINARY_CLASS_NAMES.index(relabel_for_binary(label))
    return CLASS_NAMES.index(label)


def _sample_array(sample: TrainSample, config: TrainConfig, aug_seed: int | None) -> np.ndarray:
    vol = resample_to_shape(sample.roi.volume, config.patch_shape, mode="trilinear")
    if aug_seed is not None and config.augmentation.transforms:
        vol = apply_pipeline(config.augmentation, vol, aug_seed)
    return zscore_channels(vol.data)


def _roi_probs(model: nn.Module, samples: list[TrainSample], config: TrainConfig) -> np.ndarray:
    model.eval()
    rows = []
    with torch.no_grad():
        for sample in samples:
            arr = _sample_array(sample, config, aug_seed=None)
            logits = model(torch.from_numpy(arr[np.newaxis]))
            rows.append(torch.softmax(logits, dim=1).numpy()[0])
    return np.stack(rows).astype(np.float64)


def _val_macro_auroc(model: nn.Module, val_samples: list[TrainSample], config: TrainConfig) -> float | None:
    probs = _roi_probs(model, val_samples, config)
    if config.task.kind == "binary_lesion":
        probs = np.stack([map_binary_to_three_class(float(p)).as_array() for p in probs[:, 1]])
    # Score at case level where ROIs carry case ids, mirroring the test
    # protocol (per-class max over a case's ROIs). Case labels are exact
    # while ROI labels are not: the case label describes at most one of
    # the two breasts, so a per-ROI metric tops out well below 1 even
    # for a perfect model.
    by_case: dict[str, list[int]] = {}
    for i, sample in enumerate(val_samples):
        by_case.setdefault(sample.roi.source_case or f"roi-{i}", []).append(i)
    case_probs = np.stack([probs[idx].max(axis=0) for idx in by_case.values()])
    case_labels = [val_samples[idx[0]].label for idx in by_case.values()]
    try:
        return macro_auroc_ovr(case_probs, case_labels)
    except UndefinedMetricError as exc:
        logger.warning("validation metric unavailable: %s", exc)
        return None


def train(
    model: nn.Module,
    samples: list[TrainSample],
    config: TrainConfig,
    val_samples: list[TrainSample] | None = None,
) -> tuple[nn.Module, TrainLog]:
    """Train a classifier on breast ROIs.

    Each epoch runs a fixed number of iterations; batches are drawn
    class-balanced with replacement. With a validation set, the weights
    with the best validation macro AUROC are restored at the end.
    Non-finite loss aborts with :class:`TrainingDivergedError`.
    """
    if not samples:
        raise ValueError("no training samples")
    torch.set_num_threads(1)
    torch.manual_seed(derive_seed(config.seed, "train-loop"))

    by_class: dict[str, list[int]] = {}
    for i, sample in enumerate(samples):
        by_class.setdefault(sample.label, []).append(i)
    class_pool = sorted(by_class)

    train_names = trainable_parameters(config.strategy, model)
    params = []
    for name, p in model.named_parameters():
        p.requires_grad_(name in train_names)
        if name in train_names:
            params.append(p)

    def make_optimizer() -> torch.optim.SGD:
        return torch.optim.SGD(
            params,
            lr=config.base_lr,
            momentum=config.momentum,
            nesterov=True,
            weight_decay=config.weight_decay,
        )

    optimizer = make_optimizer()
    weights = None
    if config.class_weights is not None:
        weights = torch.tensor(config.class_weights, dtype=torch.float32)
    criterion = nn.CrossEntropyLoss(weight=weights)

    log = TrainLog()
    best_state = None
    sched_start = 0
    for epoch in range(config.epochs):
        lr = lr_at(
            config.strategy, epoch - sched_start, config.epochs - sched_start, base_lr=config.base_lr
        )
        for group in optimizer.param_groups:
            group["lr"] = lr
        sampler = rng_from(config.seed, "sampler", epoch)
        model.train()
        losses = []
        for it in range(config.iters_per_epoch):
            arrays = []
            targets = []
            for slot in range(config.batch_size):
                label = class_pool[int(sampler.integers(len(class_pool)))]
                idx = by_class[label][int(sampler.integers(len(by_class[label])))]
                aug_seed = derive_seed(config.seed, "aug", epoch, it, slot)
                arrays.append(_sample_array(samples[idx], config, aug_seed))
                targets.append(_target_index(samples[idx].label, config.task))
            batch = torch.from_numpy(np.stack(arrays))
            target = torch.tensor(targets, dtype=torch.int64)
            optimizer.zero_grad()
            logits = model(batch)
            loss = criterion(logits, target)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"loss non-finite at epoch {epoch} iteration {it} "
                    f"(lr {lr:.3g}, batch mean {float(batch.mean()):.3g}, std {float(batch.std()):.3g})"
                )
            loss.backward()
            optimizer.step()
            losses.append(value)

        val_metric = None
        if val_samples:
            val_metric = _val_macro_auroc(model, val_samples, config)
            if val_metric is not None and (log.best_val is None or val_metric > log.best_val):
                log.best_val = val_metric
                log.best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())
        log.epochs.append(EpochStats(epoch=epoch, lr=lr, train_loss=float(np.mean(losses)), val_metric=val_metric))

        if (
            config.plateau_restart
            and not log.restarts
            and epoch == config.epochs // 2
            and _stuck_at_uniform_loss(log, config.task.num_classes)
            and config.epochs - (epoch + 1) > config.strategy.warmup_epochs + 10
        ):
            logger.warning(
                "train loss still at the uniform-prediction level at epoch %d; "
                "reinitializing weights and restarting the schedule",
                epoch,
            )
            frozen = {
                name: tensor.clone()
                for name, tensor in model.state_dict().items()
                if name not in train_names
            }
            torch.manual_seed(derive_seed(config.seed, "plateau-restart"))
            _init_weights(model)
            if frozen:
                model.load_state_dict({**model.state_dict(), **frozen})
            optimizer = make_optimizer()
            sched_start = epoch + 1
            log.restarts.append(epoch + 1)

    if best_state is not None:
        model.load_state_dict(best_state)
    return model, log


def _stuck_at_uniform_loss(log: TrainLog, num_classes: int) -> bool:
    """True when recent train losses sit at the uniform-prediction cross entropy.

    A model that predicts the class prior for every input scores ln(K) on a
    class-balanced stream; staying within a few percent of that level for many
    epochs means optimization never left the saddle around that solution.
    """
    recent = [stats.train_loss for stats in log.epochs[-10:]]
    return bool(recent) and float(np.mean(recent)) > 0.97 * math.log(num_classes)


# ---------------------------------------------------------------------------
# segmentation pretraining
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SegTrainConfig:
    epochs: int = 30
    lr: float = 0.01
    weight_decay: float = 3e-5
    momentum: float = 0.99
    batch_size: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def dice_score(pred: np.ndarray, truth: np.ndarray) -> float:
    """Dice overlap of two boolean masks; two empty masks count as 1."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    denom = int(pred.sum()) + int(truth.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((pred & truth).sum()) / denom


def _seg_pair_tensors(channels: Volume3D, seg: Volume3D) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(zscore_channels(channels.data))
    y = torch.from_numpy(np.rint(seg.data[0]).astype(np.int64))
    return x, y


def train_segmenter(
    model: nn.Module,
    pairs: list[tuple[Volume3D, Volume3D]],
    config: SegTrainConfig = SegTrainConfig(),
) -> TrainLog:
    """Train a segmenter on (channels, label-mask) volume pairs with
    voxelwise cross-entropy and polynomial learning-rate decay."""
    if not pairs:
        raise ValueError("no training pairs")
    torch.set_num_threads(1)
    torch.manual_seed(derive_seed(config.seed, "seg-train"))
    tensors = [_seg_pair_tensors(ch, seg) for ch, seg in pairs]
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=config.lr,
        momentum=config.momentum,
        nesterov=True,
        weight_decay=config.weight_decay,
    )
    criterion = nn.CrossEntropyLoss()
    log = TrainLog()
    for epoch in range(config.epochs):
        lr = lr_at(FinetuneStrategy(), epoch, config.epochs, base_lr=config.lr)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = rng_from(config.seed, "seg-order", epoch).permutation(len(tensors))
        model.train()
        losses = []
        for lo in range(0, len(order), config.batch_size):
            chunk = order[lo : lo + config.batch_size]
            x = torch.stack([tensors[i][0] for i in chunk])
            y = torch.stack([tensors[i][1] for i in chunk])
            optimizer.zero_grad()
            loss = criterion(model(x), y)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(f"segmentation loss non-finite at epoch {epoch} (lr {lr:.3g})")
            loss.backward()
            optimizer.step()
            losses.append(value)
        log.epochs.append(EpochStats(epoch=epoch, lr=lr, train_loss=float(np.mean(losses))))
    return log


def predict_segmentation(model: nn.Module, channels: Volume3D) -> Volume3D:
    """Argmax label mask (float {0, 1, 2, ...}) on the input grid."""
    model.eval()
    x = torch.from_numpy(zscore_channels(channels.data))
    with torch.no_grad():
        logits = model(x.unsqueeze(0))
        labels = logits.argmax(dim=1)[0].numpy().astype(np.float32)
    return Volume3D(labels[np.newaxis], channels.spacing, channels.origin)


def segmenter_foreground_dice(model: nn.Module, pairs: list[tuple[Volume3D, Volume3D]]) -> float:
    """Mean foreground Dice of predictions against label masks."""
    scores = []
    for channels, seg in pairs:
        pred = predict_segmentation(model, channels)
        scores.append(dice_score(pred.data[0] > 0.5, seg.data[0] > 0.5))
    return float(np.mean(scores))
