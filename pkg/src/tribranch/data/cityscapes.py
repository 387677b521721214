"""Cityscapes-format ingestion: label mapping, disparity conversion, loading.

Two directory layouts flow through the same loader:

* ``cityscapes``: the standard ``leftImg8bit/ gtFine/ disparity/`` tree with
  ``_leftImg8bit.png``, ``_gtFine_labelIds.png``, ``_gtFine_instanceIds.png``
  and ``_disparity.png`` suffixes.
* ``flat``: one directory per sample holding ``image.png``, ``labelIds.png``,
  ``instanceIds.png`` and ``disparity.png`` (what the synthetic exporter
  writes).

Disparity files store ``p = disparity * 256 + 1`` as 16-bit integers with
``p = 0`` marking invalid pixels. Instance-id files store
``class_id * 1000 + instance_index`` for thing pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..core import IGNORE_ID, Sample

# Cityscapes 19-class training set: (raw label id, name, category, color).
_CITYSCAPES_TRAIN_CLASSES = [
    (7, "road", "flat", (128, 64, 128)),
    (8, "sidewalk", "flat", (244, 35, 232)),
    (11, "building", "construction", (70, 70, 70)),
    (12, "wall", "construction", (102, 102, 156)),
    (13, "fence", "construction", (190, 153, 153)),
    (17, "pole", "object", (153, 153, 153)),
    (19, "traffic light", "object", (250, 170, 30)),
    (20, "traffic sign", "object", (220, 220, 0)),
    (21, "vegetation", "nature", (107, 142, 35)),
    (22, "terrain", "nature", (152, 251, 152)),
    (23, "sky", "sky", (70, 130, 180)),
    (24, "person", "human", (220, 20, 60)),
    (25, "rider", "human", (255, 0, 0)),
    (26, "car", "vehicle", (0, 0, 142)),
    (27, "truck", "vehicle", (0, 0, 70)),
    (28, "bus", "vehicle", (0, 60, 100)),
    (31, "train", "vehicle", (0, 80, 100)),
    (32, "motorcycle", "vehicle", (0, 0, 230)),
    (33, "bicycle", "vehicle", (119, 11, 32)),
]
_CITYSCAPES_THING_NAMES = {"person", "rider", "car", "truck", "bus", "train",
                           "motorcycle", "bicycle"}


@dataclass(frozen=True)
class ClassMapping:
    """Training-class set: raw-id remapping plus per-class metadata."""

    name: str
    num_classes: int
    raw_to_train: np.ndarray        # lookup table over raw ids, IGNORE_ID for unmapped
    train_to_raw: tuple[int, ...]
    class_names: tuple[str, ...]
    thing_ids: tuple[int, ...]      # train ids that have instances
    drivable_ids: tuple[int, ...]   # train ids counted as free space
    category_names: tuple[str, ...]
    category_of: tuple[int, ...]    # train id -> category index
    palette: tuple[tuple[int, int, int], ...]


def cityscapes_mapping() -> ClassMapping:
    """The standard 19-class / 7-category Cityscapes training set."""
    lut = np.full(256, IGNORE_ID, dtype=np.uint8)
    categories: list[str] = []
    cat_of = []
    for train_id, (raw, _, cat, _) in enumerate(_CITYSCAPES_TRAIN_CLASSES):
        lut[raw] = train_id
        if cat not in categories:
            categories.append(cat)
        cat_of.append(categories.index(cat))
    names = tuple(c[1] for c in _CITYSCAPES_TRAIN_CLASSES)
    return ClassMapping(
        name="cityscapes19",
        num_classes=len(names),
        raw_to_train=lut,
        train_to_raw=tuple(c[0] for c in _CITYSCAPES_TRAIN_CLASSES),
        class_names=names,
        thing_ids=tuple(i for i, n in enumerate(names)
                        if n in _CITYSCAPES_THING_NAMES),
        drivable_ids=(0,),
        category_names=tuple(categories),
        category_of=tuple(cat_of),
        palette=tuple(c[3] for c in _CITYSCAPES_TRAIN_CLASSES),
    )


def synthetic_mapping(num_classes: int = 3) -> ClassMapping:
    """Identity mapping for generated scenes.

    Classes ``0..num_classes-2`` are stuff bands (band 1 counts as drivable),
    the last class is the only thing class. Categories map 1:1 to classes.
    """
    if num_classes < 3:
        raise ValueError("synthetic mapping needs >= 3 classes "
                         "(two stuff bands plus the object class)")
    lut = np.full(256, IGNORE_ID, dtype=np.uint8)
    lut[:num_classes] = np.arange(num_classes, dtype=np.uint8)
    names = tuple(["sky"] + [f"ground{i}" for i in range(1, num_classes - 1)]
                  + ["object"])
    rng = np.random.default_rng(12)
    palette = tuple(tuple(int(v) for v in rng.integers(40, 250, size=3))
                    for _ in names)
    return ClassMapping(
        name="synthetic",
        num_classes=num_classes,
        raw_to_train=lut,
        train_to_raw=tuple(range(num_classes)),
        class_names=names,
        thing_ids=(num_classes - 1,),
        drivable_ids=(1,),
        category_names=names,
        category_of=tuple(range(num_classes)),
        palette=palette,
    )


def get_mapping(name: str, num_classes: int = 3) -> ClassMapping:
    if name == "cityscapes19":
        return cityscapes_mapping()
    if name == "synthetic":
        return synthetic_mapping(num_classes)
    raise ValueError(f"unknown class mapping {name!r}")


@dataclass(frozen=True)
class CameraParams:
    """Stereo rig geometry needed to turn disparity into metric depth."""

    focal: float      # pixels
    baseline: float   # meters

    def __post_init__(self):
        if self.focal <= 0 or self.baseline <= 0:
            raise ValueError("focal and baseline must be positive")


@dataclass(frozen=True)
class CityscapesPaths:
    """The four files plus camera geometry that make up one sample."""

    image_path: Path
    semantic_label_path: Path
    instance_label_path: Path
    disparity_path: Path
    camera: CameraParams

    def check_exists(self) -> None:
        for p in (self.image_path, self.semantic_label_path,
                  self.instance_label_path, self.disparity_path):
            if not Path(p).is_file():
                raise FileNotFoundError(f"missing sample file: {p}")


def decode_instance_value(value: int) -> tuple[int, int]:
    """Split a raw thing-pixel value into (class id, instance index)."""
    return divmod(int(value), 1000)


def raw_to_disparity(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decode stored 16-bit values: disparity = (p - 1) / 256, p = 0 invalid."""
    raw = raw.astype(np.float64)
    valid = raw > 0
    disparity = np.where(valid, (raw - 1.0) / 256.0, 0.0)
    return disparity, valid


def disparity_to_raw(disparity: np.ndarray, valid: np.ndarray) -> np.ndarray:
    raw = np.where(valid, np.rint(disparity * 256.0 + 1.0), 0.0)
    return np.clip(raw, 0, np.iinfo(np.uint16).max).astype(np.uint16)


def disparity_to_depth(disparity: np.ndarray, focal: float, baseline: float,
                       valid: np.ndarray | None = None,
                       ) -> tuple[np.ndarray, np.ndarray]:
    """depth = focal * baseline / disparity at valid, positive disparities.

    Returns (depth in meters, validity mask); pixels with non-positive or
    already-invalid disparity come back invalid with depth 0.
    """
    if focal <= 0 or baseline <= 0:
        raise ValueError("focal and baseline must be positive")
    disparity = np.asarray(disparity, dtype=np.float64)
    ok = disparity > 0
    if valid is not None:
        ok = ok & valid.astype(bool)
    depth = np.zeros_like(disparity)
    np.divide(focal * baseline, disparity, out=depth, where=ok)
    return depth, ok


def depth_to_disparity(depth: np.ndarray, focal: float, baseline: float,
                       valid: np.ndarray | None = None,
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`disparity_to_depth` for export and round-trip checks."""
    depth = np.asarray(depth, dtype=np.float64)
    ok = depth > 0
    if valid is not None:
        ok = ok & valid.astype(bool)
    disparity = np.zeros_like(depth)
    np.divide(focal * baseline, depth, out=disparity, where=ok)
    return disparity, ok


def _read_png(path: Path, dtype) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im).astype(dtype)
    except Exception as exc:
        raise ValueError(f"cannot decode {path}: {exc}") from exc


def _resize_nearest(grid: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    ys = (np.arange(hw[0]) * grid.shape[0] / hw[0]).astype(np.int64)
    xs = (np.arange(hw[1]) * grid.shape[1] / hw[1]).astype(np.int64)
    return grid[ys][:, xs]


def load_cityscapes_sample(paths: CityscapesPaths,
                           mapping: ClassMapping,
                           sample_id: str | None = None,
                           resize: tuple[int, int] | None = None) -> Sample:
    """Load and normalize one sample.

    Semantic ids are remapped to the training set (unmapped raw ids become
    the ignore sentinel), instance ids are renumbered ``1..C`` in raw-id
    order, and disparity is converted to metric depth before any resizing
    (depth is scale invariant, raw disparity is not).
    """
    paths.check_exists()
    sample_id = sample_id or Path(paths.image_path).stem

    with Image.open(paths.image_path) as im:
        image = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0

    raw_sem = _read_png(paths.semantic_label_path, np.int64)
    raw_inst = _read_png(paths.instance_label_path, np.int64)
    raw_disp = _read_png(paths.disparity_path, np.int64)

    shapes = {a.shape[:2] for a in (image, raw_sem, raw_inst, raw_disp)}
    if len(shapes) != 1:
        raise ValueError(f"{sample_id}: map shapes differ: {sorted(shapes)}")

    semantic = mapping.raw_to_train[np.clip(raw_sem, 0, 255)].astype(np.int64)

    instances = np.zeros_like(raw_inst)
    thing_ids = np.unique(raw_inst[raw_inst >= 1000])
    for new_id, raw_id in enumerate(thing_ids, start=1):
        instances[raw_inst == raw_id] = new_id

    disparity, disp_valid = raw_to_disparity(raw_disp)
    depth, depth_valid = disparity_to_depth(
        disparity, paths.camera.focal, paths.camera.baseline, disp_valid)

    if resize is not None:
        h, w = resize
        if h % 8 or w % 8:
            raise ValueError(f"resize target {h}x{w} not a multiple of 8")
        pil = Image.fromarray((image * 255).astype(np.uint8))
        image = np.asarray(pil.resize((w, h), Image.BILINEAR),
                           dtype=np.float32) / 255.0
        semantic = _resize_nearest(semantic, (h, w))
        instances = _resize_nearest(instances, (h, w))
        depth = _resize_nearest(depth, (h, w))
        depth_valid = _resize_nearest(depth_valid, (h, w))
        # Nearest resize can drop a whole instance; renumber to close gaps.
        instances = renumber_instances(instances)

    return Sample(id=sample_id,
                  image=image,
                  semantic=semantic,
                  instances=instances.astype(np.int32),
                  depth=depth.astype(np.float32),
                  depth_valid=depth_valid)


def renumber_instances(instances: np.ndarray) -> np.ndarray:
    """Relabel positive ids to contiguous 1..C preserving order."""
    out = np.zeros_like(instances)
    for new_id, old_id in enumerate(np.unique(instances[instances > 0]), start=1):
        out[instances == old_id] = new_id
    return out


def scan_cityscapes_layout(root: Path, split: str,
                           camera: CameraParams) -> list[tuple[str, CityscapesPaths]]:
    image_dir = root / "leftImg8bit" / split
    if not image_dir.is_dir():
        raise FileNotFoundError(f"no such split directory: {image_dir}")
    found = []
    for img in sorted(image_dir.rglob("*_leftImg8bit.png")):
        base = img.name[: -len("_leftImg8bit.png")]
        city = img.parent.name
        gt = root / "gtFine" / split / city
        found.append((base, CityscapesPaths(
            image_path=img,
            semantic_label_path=gt / f"{base}_gtFine_labelIds.png",
            instance_label_path=gt / f"{base}_gtFine_instanceIds.png",
            disparity_path=root / "disparity" / split / city / f"{base}_disparity.png",
            camera=camera)))
    return found


def scan_flat_layout(root: Path, split: str,
                     camera: CameraParams) -> list[tuple[str, CityscapesPaths]]:
    split_dir = root / split
    if not split_dir.is_dir():
        raise FileNotFoundError(f"no such split directory: {split_dir}")
    found = []
    for d in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        found.append((d.name, CityscapesPaths(
            image_path=d / "image.png",
            semantic_label_path=d / "labelIds.png",
            instance_label_path=d / "instanceIds.png",
            disparity_path=d / "disparity.png",
            camera=camera)))
    return found
