"""From raw network outputs to discrete predictions.

The instance decoder is a claim-and-remove mean shift: pick an unclaimed
foreground pixel, iterate it to a local density peak of the embedding cloud,
then claim everything within the bandwidth of the converged center as one
instance. With a converged discriminative loss every embedding sits within
``delta_v`` of its cluster center, so thresholding at ``b = delta_v`` around
the peak recovers the cluster while ignoring stray outliers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .core import InstanceDetection

logger = logging.getLogger(__name__)

# min_cluster_pixels is calibrated at this resolution and rescaled by area.
_REFERENCE_PIXELS = 512 * 1024


@dataclass(frozen=True)
class ClusteringParams:
    bandwidth: float = 0.5          # defaults to delta_v
    max_iterations: int = 100
    convergence_tol: float = 1e-3   # in embedding units
    min_cluster_pixels: int = 100   # at 512x1024; scaled by actual area
    seed: int = 0

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.min_cluster_pixels < 1:
            raise ValueError("min_cluster_pixels must be >= 1")


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def foreground_mask(semantic_logits: np.ndarray,
                    thing_class_ids: Sequence[int]) -> np.ndarray:
    """Pixels whose argmax class is a thing class; these are clusterable."""
    if len(thing_class_ids) == 0:
        raise ValueError("thing_class_ids must be non-empty")
    pred = semantic_logits.argmax(axis=-1)
    return np.isin(pred, np.asarray(thing_class_ids))


def free_space_mask(semantic_logits: np.ndarray,
                    drivable_class_ids: Sequence[int]) -> np.ndarray:
    """Pixels whose argmax class counts as drivable."""
    if len(drivable_class_ids) == 0:
        raise ValueError("drivable_class_ids must be non-empty")
    pred = semantic_logits.argmax(axis=-1)
    return np.isin(pred, np.asarray(drivable_class_ids))


def scaled_min_cluster_pixels(min_cluster_pixels: int,
                              shape: tuple[int, int]) -> int:
    area = shape[0] * shape[1]
    return max(1, round(min_cluster_pixels * area / _REFERENCE_PIXELS))


def mean_shift_cluster(embeddings: np.ndarray, fg: np.ndarray,
                       params: ClusteringParams,
                       ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Partition foreground pixels into instances by iterative mode seeking.

    Until no unclaimed foreground pixel remains: take the earliest unclaimed
    pixel in a seed-keyed pseudo-random pixel order, repeatedly move its
    embedding to the mean of all unclaimed embeddings within the bandwidth
    until the shift drops below the tolerance (or the iteration cap), then
    claim every unclaimed embedding within the bandwidth of the converged
    center. Claims smaller than the (area-scaled) minimum size are dropped,
    their pixels staying background. Returns the instance map (ids ``1..K``
    in claim order) and the kept masks in the same order.
    """
    h, w = fg.shape
    if embeddings.shape[:2] != (h, w):
        raise ValueError("embeddings and foreground mask shapes disagree")
    min_pixels = scaled_min_cluster_pixels(params.min_cluster_pixels, (h, w))

    flat_emb = embeddings.reshape(-1, embeddings.shape[-1]).astype(np.float64)
    unclaimed = fg.reshape(-1).copy()
    instance_map = np.zeros(h * w, dtype=np.int32)
    masks: list[np.ndarray] = []

    visit_order = np.random.default_rng(params.seed).permutation(h * w)
    cursor = 0
    bandwidth = float(params.bandwidth)

    while True:
        while cursor < visit_order.size and not unclaimed[visit_order[cursor]]:
            cursor += 1
        if cursor >= visit_order.size:
            break
        seed_idx = visit_order[cursor]

        pool = np.nonzero(unclaimed)[0]
        pool_emb = flat_emb[pool]
        center = flat_emb[seed_idx]
        for _ in range(params.max_iterations):
            in_range = np.linalg.norm(pool_emb - center, axis=1) <= bandwidth
            if not in_range.any():   # float-rounding corner; keep last center
                break
            new_center = pool_emb[in_range].mean(axis=0)
            shift = np.linalg.norm(new_center - center)
            center = new_center
            if shift < params.convergence_tol:
                break

        claim = pool[np.linalg.norm(pool_emb - center, axis=1) <= bandwidth]
        if claim.size == 0:
            claim = np.array([seed_idx])
        unclaimed[claim] = False
        if claim.size >= min_pixels:
            mask = np.zeros(h * w, dtype=bool)
            mask[claim] = True
            instance_map[claim] = len(masks) + 1
            masks.append(mask.reshape(h, w))

    return instance_map.reshape(h, w), masks


def assign_instance_classes(masks: Sequence[np.ndarray],
                            semantic_logits: np.ndarray,
                            thing_class_ids: Sequence[int],
                            ) -> list[InstanceDetection]:
    """Label each mask with the majority thing class under the prediction.

    Confidence is the mean softmax probability of the assigned class over the
    whole mask. Masks without a single thing-class pixel are dropped (logged),
    mirroring how an unclassifiable blob cannot be scored.
    """
    pred = semantic_logits.argmax(axis=-1)
    probs = softmax(semantic_logits)
    things = np.asarray(thing_class_ids)
    detections: list[InstanceDetection] = []
    for i, mask in enumerate(masks):
        classes = pred[mask]
        classes = classes[np.isin(classes, things)]
        if classes.size == 0:
            logger.info("dropping instance %d: no thing-class pixels", i + 1)
            continue
        counts = np.bincount(classes)
        class_id = int(counts.argmax())   # ties break to the lowest id
        confidence = float(probs[..., class_id][mask].mean())
        detections.append(InstanceDetection(mask=mask, class_id=class_id,
                                            confidence=confidence))
    return detections


def export_submission(out_dir: str | Path, image_id: str,
                      detections: Sequence[InstanceDetection],
                      class_id_to_raw: Sequence[int] | None = None) -> Path:
    """Write one image's predictions in Cityscapes submission format.

    ``<image_id>.txt`` lists ``<relative mask path> <class id> <confidence>``
    per detection; masks are 8-bit binary PNGs (255 = instance). Class ids
    are translated back to raw dataset ids when a table is given.
    """
    out_dir = Path(out_dir)
    mask_dir = out_dir / "masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, det in enumerate(detections):
        mask_name = f"{image_id}_{k}.png"
        Image.fromarray(det.mask.astype(np.uint8) * 255).save(mask_dir / mask_name)
        class_id = det.class_id
        if class_id_to_raw is not None:
            class_id = class_id_to_raw[class_id]
        lines.append(f"masks/{mask_name} {class_id} {det.confidence:.6f}")
    txt_path = out_dir / f"{image_id}.txt"
    txt_path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return txt_path
