"""Branched encoder-decoder network for joint scene understanding.

The trunk is built from efficient bottleneck units (projection, main
convolution, expansion, residual add) around an initial downsampling block.
Stages 1 and 2 form the shared encoder working at 1/4 and 1/8 resolution;
each of the three task branches then owns a stage-3 refinement at 1/8 plus
two unpooling decoder stages and a learned full-resolution head. Sharing
ends after stage 2 because the decoder stages mostly upscale and fine-tune,
so giving each task its own stage 3 is what keeps per-task accuracy while
the expensive early stages are computed once.

Heads emit ``num_classes`` semantic logits, ``embedding_dim`` embedding
channels and one depth channel (made positive with softplus).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import torch
from torch import nn

CHECKPOINT_FORMAT_VERSION = 1

TASKS = ("semantic", "instance", "depth")

# Mixed bottleneck pattern of the 1/8-resolution stages; cycled to length.
_STAGE2_PATTERN = (
    ("regular", 1), ("dilated", 2), ("asymmetric", 1), ("dilated", 4),
    ("regular", 1), ("dilated", 8), ("asymmetric", 1), ("dilated", 16),
)


@dataclass(frozen=True)
class NetworkConfig:
    num_classes: int
    embedding_dim: int = 8
    initial_channels: int = 16
    # Output channels of stages 1..5.
    stage_channels: tuple[int, int, int, int, int] = (64, 128, 128, 64, 16)
    # Bottlenecks per stage, excluding the down/upsampling unit of stages
    # 1, 2, 4 and 5 (stage 3 has no resampling unit).
    stage_units: tuple[int, int, int, int, int] = (4, 8, 8, 2, 1)
    dropout: tuple[float, float, float, float, float] = (0.01, 0.1, 0.1, 0.1, 0.1)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if self.initial_channels < 4 or any(c < 4 for c in self.stage_channels):
            raise ValueError("channel counts must be >= 4")
        s = self.stage_channels
        # Unpooling reuses the encoder's pooling indices, which ties decoder
        # widths to the matching encoder inputs.
        if s[2] != s[1]:
            raise ValueError("stage 3 width must equal stage 2 width")
        if s[3] != s[0]:
            raise ValueError("stage 4 width must equal stage 1 width")
        if s[4] != self.initial_channels:
            raise ValueError("stage 5 width must equal the initial width")
        if any(u < 1 for u in self.stage_units):
            raise ValueError("every stage needs at least one unit")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        for key in ("stage_channels", "stage_units", "dropout"):
            d[key] = tuple(d[key])
        return cls(**d)


def full_config(num_classes: int, embedding_dim: int = 8) -> NetworkConfig:
    return NetworkConfig(num_classes=num_classes, embedding_dim=embedding_dim)


def toy_config(num_classes: int, embedding_dim: int = 4) -> NetworkConfig:
    """Half-width, half-depth variant for CPU-scale experiments.

    Stage structure and the share point are unchanged, so branch-topology
    properties carry over. Dropout is disabled: at toy scale it only adds
    noise to a few hundred optimization steps.
    """
    return NetworkConfig(
        num_classes=num_classes,
        embedding_dim=embedding_dim,
        initial_channels=8,
        stage_channels=(32, 64, 64, 32, 8),
        stage_units=(2, 4, 4, 1, 1),
        dropout=(0.0, 0.0, 0.0, 0.0, 0.0),
    )


class InitialBlock(nn.Module):
    """Strided 3x3 conv concatenated with a max-pool of the input."""

    def __init__(self, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(3, out_channels - 3, 3, stride=2, padding=1,
                              bias=False)
        self.pool = nn.MaxPool2d(2, stride=2)
        self.bn = nn.BatchNorm2d(out_channels)
        self.act = nn.PReLU(out_channels)

    def forward(self, x):
        out = torch.cat([self.conv(x), self.pool(x)], dim=1)
        return self.act(self.bn(out))


class Bottleneck(nn.Module):
    """Residual unit: 1x1 projection, main conv, 1x1 expansion.

    ``kind`` selects the main convolution: "regular" 3x3, "dilated" 3x3 with
    the given dilation, or "asymmetric" 5x1 followed by 1x5.
    """

    def __init__(self, channels: int, kind: str = "regular", dilation: int = 1,
                 dropout: float = 0.0):
        super().__init__()
        internal = channels // 4
        layers: list[nn.Module] = [
            nn.Conv2d(channels, internal, 1, bias=False),
            nn.BatchNorm2d(internal),
            nn.PReLU(internal),
        ]
        if kind == "regular":
            layers.append(nn.Conv2d(internal, internal, 3, padding=1, bias=False))
        elif kind == "dilated":
            layers.append(nn.Conv2d(internal, internal, 3, padding=dilation,
                                    dilation=dilation, bias=False))
        elif kind == "asymmetric":
            layers += [
                nn.Conv2d(internal, internal, (5, 1), padding=(2, 0), bias=False),
                nn.BatchNorm2d(internal),
                nn.PReLU(internal),
                nn.Conv2d(internal, internal, (1, 5), padding=(0, 2), bias=False),
            ]
        else:
            raise ValueError(f"unknown bottleneck kind {kind!r}")
        layers += [
            nn.BatchNorm2d(internal),
            nn.PReLU(internal),
            nn.Conv2d(internal, channels, 1, bias=False),
            nn.BatchNorm2d(channels),
            nn.Dropout2d(dropout),
        ]
        self.ext = nn.Sequential(*layers)
        self.act = nn.PReLU(channels)

    def forward(self, x):
        return self.act(x + self.ext(x))


class DownsampleBottleneck(nn.Module):
    """Halves resolution; max-pool main path (indices kept for unpooling)
    zero-padded to the wider channel count."""

    def __init__(self, in_channels: int, out_channels: int, dropout: float = 0.0):
        super().__init__()
        internal = in_channels // 4
        self.pool = nn.MaxPool2d(2, stride=2, return_indices=True)
        self.ext = nn.Sequential(
            nn.Conv2d(in_channels, internal, 2, stride=2, bias=False),
            nn.BatchNorm2d(internal),
            nn.PReLU(internal),
            nn.Conv2d(internal, internal, 3, padding=1, bias=False),
            nn.BatchNorm2d(internal),
            nn.PReLU(internal),
            nn.Conv2d(internal, out_channels, 1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.Dropout2d(dropout),
        )
        self.act = nn.PReLU(out_channels)

    def forward(self, x):
        main, indices = self.pool(x)
        ext = self.ext(x)
        pad = ext.new_zeros(
            (main.shape[0], ext.shape[1] - main.shape[1]) + main.shape[2:])
        out = torch.cat([main, pad], dim=1) + ext
        return self.act(out), indices


class UpsampleBottleneck(nn.Module):
    """Doubles resolution by max-unpooling the main path with encoder indices
    and a strided transposed conv on the extension path."""

    def __init__(self, in_channels: int, out_channels: int, dropout: float = 0.0):
        super().__init__()
        internal = in_channels // 4
        self.main = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 1, bias=False),
            nn.BatchNorm2d(out_channels),
        )
        self.unpool = nn.MaxUnpool2d(2, stride=2)
        self.ext = nn.Sequential(
            nn.Conv2d(in_channels, internal, 1, bias=False),
            nn.BatchNorm2d(internal),
            nn.PReLU(internal),
            nn.ConvTranspose2d(internal, internal, 3, stride=2, padding=1,
                               output_padding=1, bias=False),
            nn.BatchNorm2d(internal),
            nn.PReLU(internal),
            nn.Conv2d(internal, out_channels, 1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.Dropout2d(dropout),
        )
        self.act = nn.PReLU(out_channels)

    def forward(self, x, indices):
        main = self.unpool(self.main(x), indices)
        return self.act(main + self.ext(x))


def _mixed_stage(channels: int, units: int, dropout: float) -> nn.Sequential:
    blocks = []
    for i in range(units):
        kind, dilation = _STAGE2_PATTERN[i % len(_STAGE2_PATTERN)]
        blocks.append(Bottleneck(channels, kind, dilation, dropout))
    return nn.Sequential(*blocks)


class _DownStage(nn.Module):
    def __init__(self, in_channels, out_channels, units, dropout, mixed):
        super().__init__()
        self.down = DownsampleBottleneck(in_channels, out_channels, dropout)
        if mixed:
            self.blocks = _mixed_stage(out_channels, units, dropout)
        else:
            self.blocks = nn.Sequential(
                *[Bottleneck(out_channels, dropout=dropout) for _ in range(units)])

    def forward(self, x):
        x, indices = self.down(x)
        return self.blocks(x), indices


class _UpStage(nn.Module):
    def __init__(self, in_channels, out_channels, units, dropout):
        super().__init__()
        self.up = UpsampleBottleneck(in_channels, out_channels, dropout)
        self.blocks = nn.Sequential(
            *[Bottleneck(out_channels, dropout=dropout) for _ in range(units)])

    def forward(self, x, indices):
        return self.blocks(self.up(x, indices))


class SharedEncoder(nn.Module):
    """Initial block plus stages 1 and 2, computed once for all branches."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        c = config
        self.initial = InitialBlock(c.initial_channels)
        self.stage1 = _DownStage(c.initial_channels, c.stage_channels[0],
                                 c.stage_units[0], c.dropout[0], mixed=False)
        self.stage2 = _DownStage(c.stage_channels[0], c.stage_channels[1],
                                 c.stage_units[1], c.dropout[1], mixed=True)

    def forward(self, x):
        x = self.initial(x)
        x, indices1 = self.stage1(x)
        x, indices2 = self.stage2(x)
        return x, indices1, indices2


class TaskBranch(nn.Module):
    """Stage 3 refinement, two decoder stages and the full-resolution head."""

    def __init__(self, config: NetworkConfig, out_channels: int):
        super().__init__()
        c = config
        self.stage3 = _mixed_stage(c.stage_channels[2], c.stage_units[2],
                                   c.dropout[2])
        self.stage4 = _UpStage(c.stage_channels[2], c.stage_channels[3],
                               c.stage_units[3], c.dropout[3])
        self.stage5 = _UpStage(c.stage_channels[3], c.stage_channels[4],
                               c.stage_units[4], c.dropout[4])
        self.head = nn.ConvTranspose2d(c.stage_channels[4], out_channels, 3,
                                       stride=2, padding=1, output_padding=1,
                                       bias=True)

    def forward(self, x, indices1, indices2):
        x = self.stage3(x)
        x = self.stage4(x, indices2)
        x = self.stage5(x, indices1)
        return self.head(x)


class ModelOutputs(NamedTuple):
    semantic_logits: torch.Tensor   # (B, K, H, W)
    embeddings: torch.Tensor        # (B, E, H, W)
    depth: torch.Tensor             # (B, H, W), strictly positive


def _check_input(images: torch.Tensor) -> None:
    if images.dim() != 4 or images.shape[1] != 3:
        raise ValueError(f"expected (B, 3, H, W) input, got {tuple(images.shape)}")
    if images.shape[2] % 8 or images.shape[3] % 8:
        raise ValueError("input spatial size must be a multiple of 8")
    if not bool(torch.isfinite(images).all()):
        raise ValueError("non-finite input image")


class BranchedModel(nn.Module):
    """Shared encoder feeding the three task branches."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        self.encoder = SharedEncoder(config)
        self.branches = nn.ModuleDict({
            "semantic": TaskBranch(config, config.num_classes),
            "instance": TaskBranch(config, config.embedding_dim),
            "depth": TaskBranch(config, 1),
        })

    def forward(self, images: torch.Tensor) -> ModelOutputs:
        _check_input(images)
        feats, indices1, indices2 = self.encoder(images)
        sem = self.branches["semantic"](feats, indices1, indices2)
        emb = self.branches["instance"](feats, indices1, indices2)
        dep = self.branches["depth"](feats, indices1, indices2)
        return ModelOutputs(semantic_logits=sem, embeddings=emb,
                            depth=nn.functional.softplus(dep).squeeze(1))


class SingleTaskModel(nn.Module):
    """One encoder plus one branch; the separately-trained baseline."""

    def __init__(self, config: NetworkConfig, task: str):
        super().__init__()
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        out_channels = {"semantic": config.num_classes,
                        "instance": config.embedding_dim,
                        "depth": 1}[task]
        self.config = config
        self.task = task
        self.encoder = SharedEncoder(config)
        self.branch = TaskBranch(config, out_channels)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        _check_input(images)
        feats, indices1, indices2 = self.encoder(images)
        out = self.branch(feats, indices1, indices2)
        if self.task == "depth":
            out = nn.functional.softplus(out).squeeze(1)
        return out


def build_model(config: NetworkConfig) -> BranchedModel:
    return BranchedModel(config)


def build_single_task_model(config: NetworkConfig, task: str) -> SingleTaskModel:
    return SingleTaskModel(config, task)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(path: str | Path, model: nn.Module,
                    extra: dict | None = None) -> None:
    """Write named parameter groups, the network config and a format version.

    Serialization uses the torch zip container, which is
    endianness-independent and portable across machines.
    """
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": ("single:" + model.task if isinstance(model, SingleTaskModel)
                 else "branched"),
        "config": model.config.to_dict(),
        "state": model.state_dict(),
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not payload or "state" not in payload or not payload["state"]:
        raise ValueError(f"checkpoint {path} is empty")
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    config = NetworkConfig.from_dict(payload["config"])
    kind = payload.get("kind", "branched")
    if kind.startswith("single:"):
        model: nn.Module = SingleTaskModel(config, kind.split(":", 1)[1])
    else:
        model = BranchedModel(config)
    model.load_state_dict(payload["state"])
    model.eval()
    return model, payload


@dataclass(frozen=True)
class EncoderLoadReport:
    """What a pretrained-encoder load actually did."""

    loaded_groups: tuple[str, ...]
    unmatched_groups: tuple[str, ...]
    stage3_applied_to: tuple[str, ...]


def _group_of(key: str) -> str:
    parts = key.split(".")
    if parts[0] == "encoder":
        return ".".join(parts[:2])
    if parts[0] == "branches":
        return ".".join(parts[:3])
    if parts[0] == "branch":
        return ".".join(parts[:2])
    return parts[0]


def load_pretrained_encoder(model: BranchedModel, checkpoint_path: str | Path,
                            include_stage3: bool = False) -> EncoderLoadReport:
    """Copy shared-encoder groups from any checkpoint with matching names.

    Groups are ``encoder.initial``, ``encoder.stage1`` and ``encoder.stage2``;
    when ``include_stage3`` is set, a source stage-3 group (from a single- or
    multi-task checkpoint) initializes every branch's stage 3. Any source
    group that is not consumed is reported, never silently dropped. A shape
    mismatch in a matched group is an error.
    """
    payload = torch.load(checkpoint_path, map_location="cpu", weights_only=False)
    state = payload.get("state") if isinstance(payload, dict) else None
    if state is None and isinstance(payload, dict) and payload:
        state = payload   # tolerate a bare state dict
    if not state:
        raise ValueError(f"checkpoint {checkpoint_path} is empty")

    own_state = model.state_dict()
    loaded_groups: set[str] = set()
    unmatched: set[str] = set()
    stage3_applied: set[str] = set()

    stage3_source_prefix = None
    if include_stage3:
        for prefix in ("branch.stage3.", "branches.semantic.stage3."):
            if any(k.startswith(prefix) for k in state):
                stage3_source_prefix = prefix
                break

    new_state = dict(own_state)
    for key, value in state.items():
        consumed = False
        if key.startswith("encoder."):
            if key not in own_state:
                raise ValueError(f"encoder key {key} missing in target model")
            if own_state[key].shape != value.shape:
                raise ValueError(
                    f"shape mismatch for {key}: checkpoint {tuple(value.shape)} "
                    f"vs model {tuple(own_state[key].shape)}")
            new_state[key] = value
            loaded_groups.add(_group_of(key))
            consumed = True
        elif stage3_source_prefix and key.startswith(stage3_source_prefix):
            suffix = key[len(stage3_source_prefix):]
            for task in TASKS:
                target = f"branches.{task}.stage3.{suffix}"
                if own_state[target].shape != value.shape:
                    raise ValueError(f"shape mismatch for {target}")
                new_state[target] = value
                stage3_applied.add(task)
            loaded_groups.add(_group_of(key))
            consumed = True
        if not consumed:
            unmatched.add(_group_of(key))

    model.load_state_dict(new_state)
    return EncoderLoadReport(
        loaded_groups=tuple(sorted(loaded_groups)),
        unmatched_groups=tuple(sorted(unmatched)),
        stage3_applied_to=tuple(sorted(stage3_applied)),
    )
