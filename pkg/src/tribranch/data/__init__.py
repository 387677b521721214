"""Dataset ingestion, synthetic scene generation and batching."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..configio import parse_bool, read_kv
from ..core import Sample
from .batching import Batch, iterate_batches, stack_samples
from .cityscapes import (CameraParams, CityscapesPaths, ClassMapping,
                         cityscapes_mapping, decode_instance_value,
                         depth_to_disparity, disparity_to_depth, get_mapping,
                         load_cityscapes_sample, scan_cityscapes_layout,
                         scan_flat_layout, synthetic_mapping)
from .synthetic import (SceneGenerationError, SyntheticSceneConfig,
                        export_synthetic_dataset, make_synthetic_scene)
from .weights import (cached_class_frequencies, class_frequencies,
                      compute_class_weights)

__all__ = [
    "Batch", "CameraParams", "CityscapesPaths", "ClassMapping",
    "DatasetConfig", "SceneGenerationError", "SyntheticSceneConfig",
    "cached_class_frequencies", "cityscapes_mapping", "class_frequencies",
    "compute_class_weights", "decode_instance_value", "depth_to_disparity",
    "disparity_to_depth", "export_synthetic_dataset", "get_mapping",
    "iterate_batches", "load_cityscapes_sample", "load_split",
    "make_synthetic_scene", "stack_samples", "synthetic_mapping",
]


@dataclass(frozen=True)
class DatasetConfig:
    """Parsed dataset config file: where the data lives and how to read it."""

    root: Path
    layout: str                       # "cityscapes" or "flat"
    mapping: ClassMapping
    camera: CameraParams
    c_hyper: float = 1.02
    resize: tuple[int, int] | None = None   # (H, W)
    flip: bool = False                # optional horizontal-flip augmentation

    @classmethod
    def from_file(cls, path: str | Path) -> "DatasetConfig":
        kv = read_kv(path)
        missing = {"root", "layout", "mapping", "focal", "baseline"} - kv.keys()
        if missing:
            raise ValueError(f"{path}: missing keys {sorted(missing)}")
        mapping = get_mapping(kv["mapping"], int(kv.get("num_classes", 3)))
        resize = None
        if "resize" in kv:
            h, w = kv["resize"].lower().split("x")
            resize = (int(h), int(w))
        return cls(
            root=Path(kv["root"]),
            layout=kv["layout"],
            mapping=mapping,
            camera=CameraParams(float(kv["focal"]), float(kv["baseline"])),
            c_hyper=float(kv.get("c_hyper", 1.02)),
            resize=resize,
            flip=parse_bool(kv.get("flip", "false")),
        )


def load_split(config: DatasetConfig, split: str) -> list[Sample]:
    """Load every sample of a split into memory."""
    if config.layout == "cityscapes":
        entries = scan_cityscapes_layout(config.root, split, config.camera)
    elif config.layout == "flat":
        entries = scan_flat_layout(config.root, split, config.camera)
    else:
        raise ValueError(f"unknown layout {config.layout!r}")
    if not entries:
        raise ValueError(f"split {split!r} under {config.root} is empty")
    return [load_cityscapes_sample(paths, config.mapping, sample_id=sid,
                                   resize=config.resize)
            for sid, paths in entries]
