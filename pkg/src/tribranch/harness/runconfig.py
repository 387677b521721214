"""Run configuration: one flat key = value file drives a whole run."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from ..configio import parse_bool, parse_floats, read_kv
from ..losses import BerHuParams, DiscriminativeParams
from ..network import NetworkConfig, full_config, toy_config

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class RunConfig:
    dataset: Path
    out_dir: Path
    network: str = "full"               # "full" or "toy"
    embedding_dim: int | None = None    # None = preset default
    optimizer: str = "adam"
    learning_rate: float = 5e-4
    batch_size: int = 10
    iterations: int = 500
    val_interval: int = 100
    seed: int = 0
    task_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    freeze_batchnorm: bool = True
    delta_v: float = 0.5
    delta_d: float = 1.5
    c_fraction: float = 0.2
    resolution: tuple[int, int] | None = None    # informative (H, W)
    pretrained_encoder: Path | None = None
    pretrained_include_stage3: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if len(self.task_weights) != 3:
            raise ValueError("task_weights needs exactly three values")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        kv = read_kv(path)
        if "dataset" not in kv:
            raise ValueError(f"{path}: missing 'dataset'")
        base = Path(path).parent
        out: dict = {
            "dataset": _resolve(base, kv.pop("dataset")),
            "out_dir": _resolve(base, kv.pop("out_dir", "runs/default")),
        }
        converters = {
            "network": str,
            "embedding_dim": int,
            "optimizer": str,
            "learning_rate": float,
            "batch_size": int,
            "iterations": int,
            "val_interval": int,
            "seed": int,
            "task_weights": parse_floats,
            "freeze_batchnorm": parse_bool,
            "delta_v": float,
            "delta_d": float,
            "c_fraction": float,
            "pretrained_include_stage3": parse_bool,
        }
        for key, conv in converters.items():
            if key in kv:
                out[key] = conv(kv.pop(key))
        if "resolution" in kv:
            h, w = kv.pop("resolution").lower().split("x")
            out["resolution"] = (int(h), int(w))
        if "pretrained_encoder" in kv:
            out["pretrained_encoder"] = _resolve(base, kv.pop("pretrained_encoder"))
        if kv:
            raise ValueError(f"{path}: unknown keys {sorted(kv)}")
        return cls(**out)

    def network_config(self, num_classes: int) -> NetworkConfig:
        if self.network == "full":
            cfg = full_config(num_classes)
        elif self.network == "toy":
            cfg = toy_config(num_classes)
        else:
            raise ValueError(f"unknown network preset {self.network!r}")
        if self.embedding_dim is not None:
            cfg = NetworkConfig.from_dict(
                {**cfg.to_dict(), "embedding_dim": self.embedding_dim})
        return cfg

    def discriminative_params(self) -> DiscriminativeParams:
        return DiscriminativeParams(delta_v=self.delta_v, delta_d=self.delta_d)

    def berhu_params(self) -> BerHuParams:
        return BerHuParams(c_fraction=self.c_fraction)

    def to_kv(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if f.name == "resolution":
                value = f"{value[0]}x{value[1]}"
            elif isinstance(value, tuple):
                value = " ".join(str(v) for v in value)
            out[f.name] = value
        return out


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p)
