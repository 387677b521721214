"""Single-image inference: PNG artifacts plus submission-format files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..core import Sample
from ..network import BranchedModel, load_checkpoint
from ..postprocess import (ClusteringParams, assign_instance_classes,
                           export_submission, foreground_mask,
                           mean_shift_cluster)
from .evaluation import forward_numpy

DEPTH_PNG_UNIT = 0.001   # one PNG level = 1 mm


def _default_palette(num_classes: int) -> np.ndarray:
    rng = np.random.default_rng(7)
    palette = rng.integers(30, 255, size=(num_classes, 3))
    return palette.astype(np.uint8)


def colorize_semantic(class_map: np.ndarray,
                      palette: np.ndarray) -> np.ndarray:
    return palette[np.clip(class_map, 0, len(palette) - 1)]


def encode_depth_png(depth_m: np.ndarray) -> np.ndarray:
    """Depth in meters to 16-bit millimeter counts (clipped at ~65.5 m)."""
    mm = np.rint(depth_m / DEPTH_PNG_UNIT)
    return np.clip(mm, 0, np.iinfo(np.uint16).max).astype(np.uint16)


def decode_depth_png(levels: np.ndarray) -> np.ndarray:
    return levels.astype(np.float64) * DEPTH_PNG_UNIT


def infer(checkpoint_path: str | Path, image_path: str | Path,
          out_dir: str | Path, resize: bool = False,
          thing_class_ids: tuple[int, ...] | None = None,
          palette: np.ndarray | None = None,
          clustering: ClusteringParams | None = None) -> dict[str, Path]:
    """Run one image through the model and write all prediction artifacts.

    Writes a color-coded semantic PNG, an id-coded 16-bit instance PNG, a
    16-bit millimeter depth PNG and Cityscapes submission files. The input
    size must be a multiple of 8 unless ``resize`` allows snapping it.
    """
    model, _ = load_checkpoint(checkpoint_path)
    if not isinstance(model, BranchedModel):
        raise ValueError("inference needs a branched (joint) checkpoint")
    num_classes = model.config.num_classes
    things = thing_class_ids or tuple(range(num_classes))
    palette = palette if palette is not None else _default_palette(num_classes)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_path = Path(image_path)
    try:
        with Image.open(image_path) as im:
            pil = im.convert("RGB")
    except Exception as exc:
        raise ValueError(f"cannot read image {image_path}: {exc}") from exc

    w, h = pil.size
    if h % 8 or w % 8:
        if not resize:
            raise ValueError(
                f"image size {h}x{w} is not a multiple of 8; pass resize=True")
        h, w = max(8, round(h / 8) * 8), max(8, round(w / 8) * 8)
        pil = pil.resize((w, h), Image.BILINEAR)
    image = np.asarray(pil, dtype=np.float32) / 255.0

    dummy = Sample(id=image_path.stem, image=image,
                   semantic=np.zeros((h, w), dtype=np.int64),
                   instances=np.zeros((h, w), dtype=np.int32),
                   depth=np.ones((h, w), dtype=np.float32),
                   depth_valid=np.ones((h, w), dtype=bool))
    logits, embeddings, depth = forward_numpy(model, dummy)

    fg = foreground_mask(logits, things)
    instance_map, masks = mean_shift_cluster(
        embeddings, fg, clustering or ClusteringParams())
    detections = assign_instance_classes(masks, logits, things)

    paths = {
        "semantic": out_dir / f"{image_path.stem}_semantic.png",
        "instances": out_dir / f"{image_path.stem}_instances.png",
        "depth": out_dir / f"{image_path.stem}_depth.png",
    }
    Image.fromarray(colorize_semantic(logits.argmax(axis=-1), palette)).save(
        paths["semantic"])
    Image.fromarray(instance_map.astype(np.uint16)).save(paths["instances"])
    Image.fromarray(encode_depth_png(depth)).save(paths["depth"])
    paths["submission"] = export_submission(out_dir, image_path.stem, detections)
    return paths
