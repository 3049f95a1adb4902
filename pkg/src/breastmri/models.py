"""3D classification backbones, segmentation pretraining network, and
checkpoint/weight-transfer utilities.

Three backbone kinds share one encoder skeleton: ``resnet18_3d`` (two
basic residual blocks per stage), ``res_enc`` (strided downsampling conv
followed by a residual block per stage), and ``res_enc_se`` (same plus a
squeeze-and-excitation gate after every block). All normalization is
instance norm with affine parameters, so forward passes are deterministic
and batch-size independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import TransferError
from .volume import Volume3D, resample_to_shape

BACKBONE_KINDS = ("resnet18_3d", "res_enc", "res_enc_se")


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "res_enc"
    in_channels: int = 3
    stage_channels: tuple[int, ...] = (16, 32, 64, 128)
    strides: tuple[int, ...] = (2, 2, 2, 2)
    se_reduction: int = 4

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if self.kind not in BACKBONE_KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}, expected one of {BACKBONE_KINDS}")
        if self.in_channels < 1:
            raise ValueError("in_channels must be positive")
        if len(self.stage_channels) != len(self.strides):
            raise ValueError("stage_channels and strides must have equal length")
        if not self.stage_channels:
            raise ValueError("need at least one stage")
        if any(c < 1 for c in self.stage_channels) or any(s < 1 for s in self.strides):
            raise ValueError("stage channels and strides must be positive")
        if self.kind == "res_enc_se" and not 1 <= self.se_reduction <= min(self.stage_channels):
            raise ValueError(
                f"se_reduction must be in [1, {min(self.stage_channels)}], got {self.se_reduction}"
            )

    @property
    def total_stride(self) -> int:
        out = 1
        for s in self.strides:
            out *= s
        return out


@dataclass(frozen=True)
class HeadConfig:
    num_classes: int = 3
    pooling: str = "global_average"
    dropout: float = 0.0

    def __post_init__(self):
        if self.num_classes not in (2, 3):
            raise ValueError(f"num_classes must be 2 or 3, got {self.num_classes}")
        if self.pooling != "global_average":
            raise ValueError(f"unsupported pooling {self.pooling!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


def _conv_norm_act(in_ch: int, out_ch: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1, bias=False),
        nn.InstanceNorm3d(out_ch, affine=True),
        nn.LeakyReLU(0.01),
    )


class SEBlock3d(nn.Module):
    """Squeeze-and-excitation: gate channels by globally pooled features.

    ``gate_override`` is a testing hook; when set, it replaces the
    computed per-channel gate values.
    """

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        self.act = nn.LeakyReLU(0.01)
        self.gate_override: torch.Tensor | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeezed = x.mean(dim=(2, 3, 4))
        gate = torch.sigmoid(self.fc2(self.act(self.fc1(squeezed))))
        if self.gate_override is not None:
            gate = self.gate_override.to(x.dtype).expand_as(gate)
        return x * gate[:, :, None, None, None]


class ResidualBlock3d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, se_reduction: int | None = None):
        super().__init__()
        self.conv1 = nn.Conv3d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1, bias=False)
        self.norm1 = nn.InstanceNorm3d(out_ch, affine=True)
        self.conv2 = nn.Conv3d(out_ch, out_ch, kernel_size=3, padding=1, bias=False)
        self.norm2 = nn.InstanceNorm3d(out_ch, affine=True)
        self.act = nn.LeakyReLU(0.01)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv3d(in_ch, out_ch, kernel_size=1, stride=stride, bias=False),
                nn.InstanceNorm3d(out_ch, affine=True),
            )
        else:
            self.shortcut = nn.Identity()
        self.se = SEBlock3d(out_ch, se_reduction) if se_reduction else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.act(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        if self.se is not None:
            out = self.se(out)
        return self.act(out + self.shortcut(x))


class Encoder3d(nn.Module):
    """Shared staged encoder; exposes per-stage features for decoders."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        se = config.se_reduction if config.kind == "res_enc_se" else None
        stages = []
        in_ch = config.in_channels
        for out_ch, stride in zip(config.stage_channels, config.strides):
            if config.kind == "resnet18_3d":
                stage = nn.Sequential(
                    ResidualBlock3d(in_ch, out_ch, stride=stride),
                    ResidualBlock3d(out_ch, out_ch),
                )
            else:
                stage = nn.Sequential(
                    _conv_norm_act(in_ch, out_ch, stride=stride),
                    ResidualBlock3d(out_ch, out_ch, se_reduction=se),
                )
            stages.append(stage)
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)

    @property
    def out_channels(self) -> int:
        return self.config.stage_channels[-1]

    def _check_input(self, x: torch.Tensor):
        if x.ndim != 5:
            raise ValueError(f"expected input [batch, channel, z, y, x], got shape {tuple(x.shape)}")
        if x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {x.shape[1]}")
        total = self.config.total_stride
        bad = [int(n) for n in x.shape[2:] if n % total]
        if bad:
            raise ValueError(
                f"spatial shape {tuple(int(n) for n in x.shape[2:])} is not divisible by the "
                f"total downsampling factor {total} (strides {self.config.strides})"
            )

    def forward_features(self, x: torch.Tensor) -> list[torch.Tensor]:
        self._check_input(x)
        feats = []
        out = x
        for stage in self.stages:
            out = stage(out)
            feats.append(out)
        return feats

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_features(x)[-1]


class Classifier3d(nn.Module):
    """Encoder + global-average-pooled linear head emitting class logits."""

    def __init__(self, backbone: BackboneConfig, head: HeadConfig):
        super().__init__()
        self.backbone_config = backbone
        self.head_config = head
        self.encoder = Encoder3d(backbone)
        self.dropout = nn.Dropout(head.dropout)
        self.head = nn.Linear(self.encoder.out_channels, head.num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.encoder(x)
        pooled = feats.mean(dim=(2, 3, 4))
        return self.head(self.dropout(pooled))

    def head_parameter_names(self) -> set[str]:
        return {f"head.{name}" for name, _ in self.head.named_parameters()}


class Segmenter3d(nn.Module):
    """Encoder plus a light upsampling decoder for voxelwise mask logits.

    The decoder exists only for pretraining; downstream classification
    reuses the encoder weights and drops the rest.
    """

    def __init__(self, backbone: BackboneConfig, seg_classes: int = 3):
        super().__init__()
        if seg_classes < 2:
            raise ValueError("seg_classes must be at least 2")
        self.backbone_config = backbone
        self.seg_classes = seg_classes
        self.encoder = Encoder3d(backbone)
        chans = backbone.stage_channels
        ups = []
        for i in range(len(chans) - 1, 0, -1):
            ups.append(_conv_norm_act(chans[i] + chans[i - 1], chans[i - 1]))
        self.decoder = nn.ModuleList(ups)
        self.seg_head = nn.Conv3d(chans[0], seg_classes, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.encoder.forward_features(x)
        out = feats[-1]
        for i, block in enumerate(self.decoder):
            skip = feats[len(feats) - 2 - i]
            out = nn.functional.interpolate(out, size=skip.shape[2:], mode="trilinear", align_corners=False)
            out = block(torch.cat([out, skip], dim=1))
        logits = self.seg_head(out)
        if logits.shape[2:] != x.shape[2:]:
            logits = nn.functional.interpolate(logits, size=x.shape[2:], mode="trilinear", align_corners=False)
        return logits


def _init_weights(model: nn.Module):
    for module in model.modules():
        if isinstance(module, (nn.Conv3d, nn.Linear)):
            nn.init.kaiming_normal_(module.weight, a=0.01, mode="fan_in", nonlinearity="leaky_relu")
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.InstanceNorm3d):
            if module.weight is not None:
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)


def build_model(backbone: BackboneConfig, head: HeadConfig, seed: int = 0) -> Classifier3d:
    """Deterministically initialized classifier."""
    torch.manual_seed(seed)
    model = Classifier3d(backbone, head)
    _init_weights(model)
    return model


def build_segmenter(backbone: BackboneConfig, seg_classes: int = 3, seed: int = 0) -> Segmenter3d:
    torch.manual_seed(seed)
    model = Segmenter3d(backbone, seg_classes)
    _init_weights(model)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# ---------------------------------------------------------------------------
# model input preparation
# ---------------------------------------------------------------------------


def zscore_channels(data: np.ndarray) -> np.ndarray:
    """Per-channel z-score of a [C, Z, Y, X] array; constant channels
    normalize to zero instead of dividing by ~0."""
    data = np.asarray(data, dtype=np.float32)
    out = np.empty_like(data)
    for c in range(data.shape[0]):
        mean = float(data[c].mean())
        std = float(data[c].std())
        # the floor scales with the mean so float32 rounding noise on a
        # constant channel is not mistaken for real variation
        if std < 1e-6 * max(1.0, abs(mean)):
            out[c] = 0.0
        else:
            out[c] = (data[c] - mean) / std
    return out


def prepare_input(vol: Volume3D, patch_shape: tuple[int, int, int]) -> np.ndarray:
    """Resize an ROI to the model patch size and z-score it per channel."""
    resized = resample_to_shape(vol, patch_shape, mode="trilinear")
    return zscore_channels(resized.data)


def make_predict_fn(model: nn.Module, patch_shape: tuple[int, int, int]):
    """Wrap a classifier as ROIs -> (n_rois, n_classes) softmax probabilities."""

    def predict(rois):
        model.eval()
        batch = np.stack([prepare_input(r.volume, patch_shape) for r in rois])
        with torch.no_grad():
            logits = model(torch.from_numpy(batch))
            probs = torch.softmax(logits, dim=1)
        return probs.numpy().astype(np.float64)

    return predict


# ---------------------------------------------------------------------------
# checkpoints and weight transfer
# ---------------------------------------------------------------------------


@dataclass
class CheckpointManifest:
    """Named tensors plus provenance (which task trained them)."""

    tensors: dict[str, torch.Tensor]
    task: str
    config_hash: str = ""

    def __post_init__(self):
        if self.task not in ("segmentation", "classification"):
            raise ValueError(f"unknown provenance task {self.task!r}")

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: tuple(t.shape) for name, t in self.tensors.items()}


def checkpoint_from_model(model: nn.Module, task: str, config_hash: str = "") -> CheckpointManifest:
    tensors = {name: t.detach().clone() for name, t in model.state_dict().items()}
    return CheckpointManifest(tensors=tensors, task=task, config_hash=config_hash)


def save_checkpoint(manifest: CheckpointManifest, path):
    payload = {
        "tensors": manifest.tensors,
        "task": manifest.task,
        "config_hash": manifest.config_hash,
        "shapes": manifest.shapes,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> CheckpointManifest:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    return CheckpointManifest(
        tensors=payload["tensors"],
        task=payload["task"],
        config_hash=payload.get("config_hash", ""),
    )


@dataclass(frozen=True)
class TransferReport:
    matched: tuple[str, ...]
    skipped: tuple[str, ...]


def transfer_encoder_weights(source: CheckpointManifest, target: nn.Module) -> TransferReport:
    """Copy every source tensor whose name and shape match the target.

    Decoder and head tensors fall out naturally (their names differ
    between tasks). Raises :class:`TransferError` when nothing matches,
    which would otherwise be a silent no-op initialization.
    """
    state = target.state_dict()
    matched = []
    skipped = []
    for name, tensor in source.tensors.items():
        if name in state and tuple(state[name].shape) == tuple(tensor.shape):
            state[name] = tensor.detach().clone()
            matched.append(name)
        else:
            skipped.append(name)
    if not matched:
        raise TransferError(
            f"no tensors transferred: 0 of {len(source.tensors)} source names matched the target"
        )
    target.load_state_dict(state)
    return TransferReport(matched=tuple(matched), skipped=tuple(skipped))
