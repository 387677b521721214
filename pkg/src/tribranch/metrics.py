"""Evaluation metrics: IoU, instance AP, and depth error statistics.

Instance AP follows the Cityscapes protocol: greedy mask-IoU matching by
descending confidence at overlap thresholds 0.50:0.05:0.95, averaged per
class and then over classes. Depth errors are reported both per pixel and
per car, the latter by average-pooling the predicted depth map over the
ground-truth instance masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import IGNORE_ID, InstanceDetection

AP_OVERLAP_THRESHOLDS = tuple(np.arange(50, 100, 5) / 100.0)


class ConfusionMatrix:
    """K x K counts of (true class, predicted class) over non-ignored pixels."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, true: np.ndarray, pred: np.ndarray) -> None:
        keep = true != IGNORE_ID
        t = true[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        if ((t < 0) | (t >= self.num_classes)).any():
            raise ValueError("true class id out of range")
        if ((p < 0) | (p >= self.num_classes)).any():
            raise ValueError("predicted class id out of range")
        flat = t * self.num_classes + p
        self.counts += np.bincount(
            flat, minlength=self.num_classes ** 2).reshape(self.counts.shape)

    def merge(self, other: "ConfusionMatrix") -> None:
        self.counts += other.counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def collapse(self, group_of: Sequence[int]) -> "ConfusionMatrix":
        """Sum rows and columns by group (e.g. class -> category)."""
        groups = np.asarray(group_of)
        n = int(groups.max()) + 1
        out = ConfusionMatrix(n)
        for t in range(self.num_classes):
            for p in range(self.num_classes):
                out.counts[groups[t], groups[p]] += self.counts[t, p]
        return out


@dataclass(frozen=True)
class IoUReport:
    per_class: np.ndarray          # NaN where the union is empty
    mean_class: float
    per_category: np.ndarray
    mean_category: float


def _iou_from_counts(counts: np.ndarray) -> np.ndarray:
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    union = tp + fp + fn
    iou = np.full(len(tp), np.nan)
    nz = union > 0
    iou[nz] = tp[nz] / union[nz]
    return iou


def iou_scores(cm: ConfusionMatrix,
               category_map: Sequence[int] | None = None) -> IoUReport:
    """Per-class and category-collapsed IoU; empty-union classes are
    excluded from the means."""
    per_class = _iou_from_counts(cm.counts)
    if np.isnan(per_class).all():
        raise ValueError("every class has an empty union; IoU undefined")
    if category_map is None:
        category_map = list(range(cm.num_classes))
    per_category = _iou_from_counts(cm.collapse(category_map).counts)
    return IoUReport(
        per_class=per_class,
        mean_class=float(np.nanmean(per_class)),
        per_category=per_category,
        mean_category=float(np.nanmean(per_category)),
    )


@dataclass(frozen=True)
class GroundTruthInstances:
    """Ground-truth side of AP evaluation for one image."""

    instance_map: np.ndarray
    class_by_id: Mapping[int, int]


@dataclass(frozen=True)
class APReport:
    ap: float                      # mean over thresholds and classes
    ap50: float                    # at overlap 0.5
    per_threshold: dict[float, float] = field(default_factory=dict)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter) / float(union) if union else 0.0


def _average_precision(flags: np.ndarray, num_gt: int) -> float:
    """All-point interpolated AP from ordered TP/FP flags."""
    if num_gt == 0:
        raise ValueError("no ground truth")
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    precision = tp / (tp + fp)
    recall = tp / num_gt
    # Precision envelope, integrated over recall.
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for p, r in zip(precision, recall):
        ap += p * (r - prev_r)
        prev_r = r
    return float(ap)


def instance_ap(detections_per_image: Sequence[Sequence[InstanceDetection]],
                gt_per_image: Sequence[GroundTruthInstances],
                overlap_thresholds: Sequence[float] = AP_OVERLAP_THRESHOLDS,
                ) -> APReport:
    """Cityscapes-style mask AP.

    Detections are matched greedily in order of descending confidence (ties
    broken by larger mask, then detection order) against unmatched
    ground-truth instances of the same class. Classes without any ground
    truth are excluded; with no evaluatable class at all this raises.
    """
    if len(detections_per_image) != len(gt_per_image):
        raise ValueError("detections and ground truth cover different images")

    class_ids = sorted({c for gt in gt_per_image for c in gt.class_by_id.values()})
    if not class_ids:
        raise ValueError("no ground-truth instances in any image")

    per_threshold: dict[float, float] = {}
    per_class_at_50: list[float] = []
    for threshold in overlap_thresholds:
        per_class = []
        for class_id in class_ids:
            per_class.append(_class_ap(detections_per_image, gt_per_image,
                                       class_id, threshold))
        per_threshold[float(threshold)] = float(np.mean(per_class))
        if abs(threshold - 0.5) < 1e-9:
            per_class_at_50 = per_class
    ap = float(np.mean(list(per_threshold.values())))
    ap50 = (float(np.mean(per_class_at_50)) if per_class_at_50
            else per_threshold.get(0.5, float("nan")))
    return APReport(ap=ap, ap50=ap50, per_threshold=per_threshold)


def _class_ap(detections_per_image, gt_per_image, class_id: int,
              threshold: float) -> float:
    # (confidence, -area, image index, detection) ordered for greedy matching.
    ordered: list[tuple[float, int, int, InstanceDetection]] = []
    num_gt = 0
    gt_masks_per_image: list[dict[int, np.ndarray]] = []
    for img_idx, gt in enumerate(gt_per_image):
        masks = {iid: gt.instance_map == iid
                 for iid, cid in gt.class_by_id.items() if cid == class_id}
        gt_masks_per_image.append(masks)
        num_gt += len(masks)
        for det in detections_per_image[img_idx]:
            if det.class_id == class_id:
                ordered.append((det.confidence, int(det.mask.sum()), img_idx, det))
    if num_gt == 0:
        raise ValueError(f"class {class_id} has no ground truth")

    ordered.sort(key=lambda item: (-item[0], -item[1]))
    matched: list[set[int]] = [set() for _ in gt_per_image]
    flags = np.zeros(len(ordered), dtype=bool)
    for k, (_, _, img_idx, det) in enumerate(ordered):
        best_iou, best_id = 0.0, None
        for iid, gt_mask in gt_masks_per_image[img_idx].items():
            if iid in matched[img_idx]:
                continue
            iou = mask_iou(det.mask, gt_mask)
            if iou > best_iou:
                best_iou, best_id = iou, iid
        if best_id is not None and best_iou >= threshold:
            matched[img_idx].add(best_id)
            flags[k] = True
    return _average_precision(flags, num_gt)


@dataclass(frozen=True)
class DepthErrors:
    mae: float
    rmse: float
    ard: float
    count: int


def depth_errors(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray,
                 cap: float | None = None) -> DepthErrors:
    """MAE, RMSE and absolute relative error over valid pixels with
    ``gt <= cap`` (no cap when None)."""
    keep = valid.astype(bool)
    if cap is not None:
        keep = keep & (gt <= cap)
    if not keep.any():
        raise ValueError(f"no valid pixels under cap {cap}")
    d = pred[keep].astype(np.float64) - gt[keep].astype(np.float64)
    g = gt[keep].astype(np.float64)
    return DepthErrors(
        mae=float(np.abs(d).mean()),
        rmse=float(np.sqrt((d * d).mean())),
        ard=float((np.abs(d) / g).mean()),
        count=int(keep.sum()),
    )


@dataclass(frozen=True)
class CarDepthPair:
    """Ground-truth vs predicted depth for one instance, pooled over its
    ground-truth mask."""

    instance_id: int
    gt_depth: float
    pred_depth: float
    pixel_count: int


def per_car_depth_table(pred_depth: np.ndarray, gt_instances: np.ndarray,
                        gt_depth: np.ndarray, gt_valid: np.ndarray,
                        ) -> tuple[list[CarDepthPair], int]:
    """Average-pool both depth maps over each ground-truth instance mask.

    Pooling uses the mask's valid-depth pixels on both maps so the pair is
    computed over one pixel set. Instances without any valid depth pixel are
    skipped; the second return value counts them.
    """
    pairs: list[CarDepthPair] = []
    skipped = 0
    for iid in np.unique(gt_instances[gt_instances > 0]):
        mask = (gt_instances == iid) & gt_valid.astype(bool)
        n = int(mask.sum())
        if n == 0:
            skipped += 1
            continue
        pairs.append(CarDepthPair(
            instance_id=int(iid),
            gt_depth=float(gt_depth[mask].mean()),
            pred_depth=float(pred_depth[mask].mean()),
            pixel_count=n,
        ))
    return pairs, skipped


def per_car_summary(pairs: Iterable[CarDepthPair],
                    cap: float | None = None) -> DepthErrors:
    """Depth errors over per-car pooled values with ``gt_depth <= cap``."""
    kept = [p for p in pairs if cap is None or p.gt_depth <= cap]
    if not kept:
        raise ValueError(f"no instances under cap {cap}")
    d = np.array([p.pred_depth - p.gt_depth for p in kept])
    g = np.array([p.gt_depth for p in kept])
    return DepthErrors(
        mae=float(np.abs(d).mean()),
        rmse=float(np.sqrt((d * d).mean())),
        ard=float((np.abs(d) / g).mean()),
        count=len(kept),
    )
