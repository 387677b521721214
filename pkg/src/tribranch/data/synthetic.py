"""Deterministic synthetic scenes for desk-scale training and verification.

A scene is a sky/ground background split into horizontal stuff bands with a
smooth vertical depth gradient, plus a number of non-overlapping rectangular
objects ("cars"), each with its own instance id, the thing class, a distinct
color and a constant depth. Everything is a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..core import Sample
from .cityscapes import CameraParams, depth_to_disparity, disparity_to_raw

SYNTHETIC_FOCAL = 500.0      # pixels
SYNTHETIC_BASELINE = 0.2     # meters

_PLACEMENT_RETRIES = 200


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyntheticSceneConfig:
    size: int = 64
    num_objects: int = 3
    num_classes: int = 3
    depth_range: tuple[float, float] = (2.0, 10.0)
    rng_seed: int = 0

    def __post_init__(self):
        if self.size % 8:
            raise ValueError(f"size {self.size} not a multiple of 8")
        if self.num_objects < 0:
            raise ValueError("num_objects must be >= 0")
        # Two stuff bands plus the reserved object class.
        if self.num_classes < 3:
            raise ValueError("num_classes must be >= 3")
        lo, hi = self.depth_range
        if lo <= 0 or hi <= lo:
            raise ValueError(f"bad depth range ({lo}, {hi})")


def make_synthetic_scene(config: SyntheticSceneConfig) -> Sample:
    """Generate one scene; identical seeds give identical samples."""
    rng = np.random.default_rng(config.rng_seed)
    s = config.size
    lo, hi = config.depth_range
    thing_class = config.num_classes - 1
    n_bands = config.num_classes - 1

    semantic = np.zeros((s, s), dtype=np.int64)
    edges = np.linspace(0, s, n_bands + 1).astype(int)
    for band in range(n_bands):
        semantic[edges[band]:edges[band + 1], :] = band

    # Far at the top of the frame, near at the bottom.
    rows = np.linspace(hi, lo, s, dtype=np.float64)
    depth = np.tile(rows[:, None], (1, s))

    band_colors = rng.uniform(0.1, 0.9, size=(n_bands, 3))
    image = band_colors[semantic]

    boxes: list[tuple[int, int, int, int]] = []   # (y0, x0, y1, x1)
    depths: list[float] = []
    min_side, max_side = max(4, s // 8), max(6, s // 4)
    for _ in range(config.num_objects):
        for attempt in range(_PLACEMENT_RETRIES):
            h = int(rng.integers(min_side, max_side + 1))
            w = int(rng.integers(min_side, max_side + 1))
            y0 = int(rng.integers(0, s - h + 1))
            x0 = int(rng.integers(0, s - w + 1))
            box = (y0, x0, y0 + h, x0 + w)
            if not any(_overlaps(box, other) for other in boxes):
                boxes.append(box)
                depths.append(float(rng.uniform(lo, hi)))
                break
        else:
            raise SceneGenerationError(
                f"could not place {config.num_objects} objects without overlap "
                f"(seed {config.rng_seed})")

    instances = np.zeros((s, s), dtype=np.int32)
    object_colors = rng.uniform(0.1, 0.9, size=(len(boxes), 3))
    # Paint far-to-near so nearer objects end up on top.
    order = sorted(range(len(boxes)), key=lambda i: -depths[i])
    for instance_id, i in enumerate(order, start=1):
        y0, x0, y1, x1 = boxes[i]
        semantic[y0:y1, x0:x1] = thing_class
        instances[y0:y1, x0:x1] = instance_id
        depth[y0:y1, x0:x1] = depths[i]
        image[y0:y1, x0:x1] = object_colors[i]

    return Sample(id=f"synthetic_{config.rng_seed:06d}",
                  image=image.astype(np.float32),
                  semantic=semantic,
                  instances=instances,
                  depth=depth.astype(np.float32),
                  depth_valid=np.ones((s, s), dtype=bool))


def _overlaps(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> bool:
    return not (a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1])


def export_synthetic_dataset(out_dir: str | Path, count: int, seed: int,
                             config: SyntheticSceneConfig | None = None,
                             split: str = "train") -> Path:
    """Write ``count`` scenes in the flat four-file layout plus a dataset config.

    Scene ``i`` uses seed ``seed + i``, so the export is reproducible and
    extendable. Returns the dataset config path the CLI can point at.
    """
    base = config or SyntheticSceneConfig()
    out_dir = Path(out_dir)
    camera = CameraParams(SYNTHETIC_FOCAL, SYNTHETIC_BASELINE)
    for i in range(count):
        scene_cfg = SyntheticSceneConfig(
            size=base.size, num_objects=base.num_objects,
            num_classes=base.num_classes, depth_range=base.depth_range,
            rng_seed=seed + i)
        sample = make_synthetic_scene(scene_cfg)
        write_sample_dir(out_dir / split / sample.id, sample, base.num_classes,
                         camera)

    cfg_path = out_dir / "dataset.cfg"
    from ..configio import write_kv
    write_kv(cfg_path, {
        "root": out_dir.resolve(),
        "layout": "flat",
        "mapping": "synthetic",
        "num_classes": base.num_classes,
        "focal": camera.focal,
        "baseline": camera.baseline,
        "c_hyper": 1.02,
    })
    return cfg_path


def write_sample_dir(sample_dir: Path, sample: Sample, num_classes: int,
                     camera: CameraParams) -> None:
    """Write one sample as the four Cityscapes-style files."""
    sample_dir.mkdir(parents=True, exist_ok=True)
    thing_class = num_classes - 1

    img8 = np.clip(np.rint(sample.image * 255), 0, 255).astype(np.uint8)
    Image.fromarray(img8).save(sample_dir / "image.png")

    Image.fromarray(sample.semantic.astype(np.uint8)).save(
        sample_dir / "labelIds.png")

    inst = sample.instances.astype(np.int64)
    encoded = np.where(inst > 0, thing_class * 1000 + inst,
                       sample.semantic).astype(np.uint16)
    Image.fromarray(encoded).save(sample_dir / "instanceIds.png")

    disparity, valid = depth_to_disparity(
        sample.depth, camera.focal, camera.baseline, sample.depth_valid)
    raw = disparity_to_raw(disparity, valid)
    Image.fromarray(raw).save(sample_dir / "disparity.png")
