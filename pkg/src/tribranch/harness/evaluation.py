"""Evaluation driver: forward, decode instances, accumulate all metrics.

The report mirrors the benchmark tables: class/category IoU for semantics,
AP and AP0.5 for instances, and MAE/RMSE/ARD for depth at 100 m, 50 m and
25 m caps, both per pixel and per car. Per-car depth is pooled over
ground-truth instance masks by default (the protocol that decouples depth
quality from detection quality); ``pred_mask_depth`` switches to pooling
over matched predicted masks for comparison with that convention.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..configio import write_kv
from ..core import IGNORE_ID, InstanceDetection, Sample
from ..data import DatasetConfig, load_split
from ..metrics import (APReport, CarDepthPair, ConfusionMatrix, DepthErrors,
                       GroundTruthInstances, IoUReport, instance_ap,
                       iou_scores, mask_iou, per_car_depth_table,
                       per_car_summary)
from ..network import BranchedModel, load_checkpoint
from ..postprocess import (ClusteringParams, assign_instance_classes,
                           foreground_mask, mean_shift_cluster)

logger = logging.getLogger(__name__)

DEPTH_CAPS = (100.0, 50.0, 25.0)


@dataclass(frozen=True)
class EvalReport:
    split: str
    num_images: int
    class_names: tuple[str, ...]
    category_names: tuple[str, ...]
    iou: IoUReport
    ap: APReport | None
    pixel_depth: dict[float, DepthErrors | None]
    car_depth: dict[float, DepthErrors | None]
    car_pairs: list[tuple[str, CarDepthPair]]
    skipped_instances: int
    pred_mask_depth: bool = False


class _DepthAccumulator:
    """Streaming MAE/RMSE/ARD over pixels, one accumulator per cap."""

    def __init__(self, cap: float | None):
        self.cap = cap
        self.abs_sum = 0.0
        self.sq_sum = 0.0
        self.rel_sum = 0.0
        self.count = 0

    def update(self, pred: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> None:
        keep = valid.astype(bool)
        if self.cap is not None:
            keep = keep & (gt <= self.cap)
        if not keep.any():
            return
        d = pred[keep].astype(np.float64) - gt[keep].astype(np.float64)
        g = gt[keep].astype(np.float64)
        self.abs_sum += float(np.abs(d).sum())
        self.sq_sum += float((d * d).sum())
        self.rel_sum += float((np.abs(d) / g).sum())
        self.count += int(keep.sum())

    def result(self) -> DepthErrors | None:
        if self.count == 0:
            return None
        return DepthErrors(mae=self.abs_sum / self.count,
                           rmse=float(np.sqrt(self.sq_sum / self.count)),
                           ard=self.rel_sum / self.count,
                           count=self.count)


def forward_numpy(model: BranchedModel, sample: Sample):
    """Eval-mode forward of one sample; channels-last numpy outputs."""
    model.eval()
    with torch.no_grad():
        images = torch.from_numpy(
            np.ascontiguousarray(sample.image.transpose(2, 0, 1))[None]).float()
        out = model(images)
    return (out.semantic_logits[0].permute(1, 2, 0).numpy(),
            out.embeddings[0].permute(1, 2, 0).numpy(),
            out.depth[0].numpy())


def gt_instance_classes(sample: Sample) -> GroundTruthInstances:
    """Majority semantic class per ground-truth instance mask."""
    class_by_id: dict[int, int] = {}
    for iid in np.unique(sample.instances[sample.instances > 0]):
        classes = sample.semantic[sample.instances == iid]
        classes = classes[classes != IGNORE_ID]
        if classes.size == 0:
            continue
        class_by_id[int(iid)] = int(np.bincount(classes).argmax())
    return GroundTruthInstances(instance_map=sample.instances,
                                class_by_id=class_by_id)


def _matched_pred_pairs(detections: Sequence[InstanceDetection],
                        pred_depth: np.ndarray,
                        sample: Sample) -> tuple[list[CarDepthPair], int]:
    """Comparison-protocol pairs: pool predicted depth over predicted masks
    matched to ground truth at IoU >= 0.5; unmatched ground truth is skipped,
    so these numbers depend on detection quality."""
    pairs: list[CarDepthPair] = []
    skipped = 0
    used: set[int] = set()
    for iid in np.unique(sample.instances[sample.instances > 0]):
        gt_mask = sample.instances == iid
        best_iou, best_det = 0.0, None
        for k, det in enumerate(detections):
            if k in used:
                continue
            iou = mask_iou(det.mask, gt_mask)
            if iou > best_iou:
                best_iou, best_det = iou, k
        valid_gt = gt_mask & sample.depth_valid.astype(bool)
        if best_det is None or best_iou < 0.5 or not valid_gt.any():
            skipped += 1
            continue
        used.add(best_det)
        pred_mask = detections[best_det].mask
        pairs.append(CarDepthPair(
            instance_id=int(iid),
            gt_depth=float(sample.depth[valid_gt].mean()),
            pred_depth=float(pred_depth[pred_mask].mean()),
            pixel_count=int(valid_gt.sum()),
        ))
    return pairs, skipped


def evaluate(checkpoint_path: str | Path, dataset_config: DatasetConfig,
             split: str, clustering: ClusteringParams | None = None,
             pred_mask_depth: bool = False) -> EvalReport:
    """Evaluate a checkpoint on a dataset split."""
    model, _ = load_checkpoint(checkpoint_path)
    if not isinstance(model, BranchedModel):
        raise ValueError("evaluation needs a branched (joint) checkpoint")
    samples = load_split(dataset_config, split)
    mapping = dataset_config.mapping
    clustering = clustering or ClusteringParams()

    cm = ConfusionMatrix(mapping.num_classes)
    detections_per_image: list[list[InstanceDetection]] = []
    gt_per_image: list[GroundTruthInstances] = []
    pixel_acc = {cap: _DepthAccumulator(cap) for cap in DEPTH_CAPS}
    car_pairs: list[tuple[str, CarDepthPair]] = []
    skipped = 0

    for sample in samples:
        logits, embeddings, depth = forward_numpy(model, sample)

        cm.update(sample.semantic, logits.argmax(axis=-1))

        fg = foreground_mask(logits, mapping.thing_ids)
        _, masks = mean_shift_cluster(embeddings, fg, clustering)
        detections = assign_instance_classes(masks, logits, mapping.thing_ids)
        detections_per_image.append(detections)
        gt_per_image.append(gt_instance_classes(sample))

        for acc in pixel_acc.values():
            acc.update(depth, sample.depth, sample.depth_valid)

        if pred_mask_depth:
            pairs, n_skipped = _matched_pred_pairs(detections, depth, sample)
        else:
            pairs, n_skipped = per_car_depth_table(
                depth, sample.instances, sample.depth, sample.depth_valid)
        skipped += n_skipped
        car_pairs.extend((sample.id, p) for p in pairs)

    iou = iou_scores(cm, mapping.category_of)

    ap: APReport | None
    try:
        ap = instance_ap(detections_per_image, gt_per_image)
    except ValueError as exc:
        logger.info("instance AP unavailable: %s", exc)
        ap = None

    car_depth: dict[float, DepthErrors | None] = {}
    for cap in DEPTH_CAPS:
        try:
            car_depth[cap] = per_car_summary([p for _, p in car_pairs], cap)
        except ValueError:
            car_depth[cap] = None

    return EvalReport(
        split=split,
        num_images=len(samples),
        class_names=mapping.class_names,
        category_names=mapping.category_names,
        iou=iou,
        ap=ap,
        pixel_depth={cap: acc.result() for cap, acc in pixel_acc.items()},
        car_depth=car_depth,
        car_pairs=car_pairs,
        skipped_instances=skipped,
        pred_mask_depth=pred_mask_depth,
    )


def _fmt(value, pattern="{:.4f}"):
    return pattern.format(value) if value is not None else "n/a"


def report_kv(report: EvalReport) -> dict:
    """Flatten a report into machine-readable key-value pairs."""
    kv: dict[str, object] = {
        "split": report.split,
        "num_images": report.num_images,
        "semantic.iou_class": report.iou.mean_class,
        "semantic.iou_category": report.iou.mean_category,
    }
    for name, value in zip(report.class_names, report.iou.per_class):
        kv[f"semantic.class.{name.replace(' ', '_')}"] = (
            float(value) if np.isfinite(value) else "nan")
    if report.ap is not None:
        kv["instance.ap"] = report.ap.ap
        kv["instance.ap_percent"] = report.ap.ap * 100.0
        kv["instance.ap50"] = report.ap.ap50
        kv["instance.ap50_percent"] = report.ap.ap50 * 100.0
    for cap in DEPTH_CAPS:
        for label, table in (("pixel", report.pixel_depth),
                             ("car", report.car_depth)):
            err = table.get(cap)
            if err is None:
                continue
            kv[f"depth.{label}.cap{cap:g}.mae_m"] = err.mae
            kv[f"depth.{label}.cap{cap:g}.rmse_m"] = err.rmse
            kv[f"depth.{label}.cap{cap:g}.ard"] = err.ard
            kv[f"depth.{label}.cap{cap:g}.count"] = err.count
    kv["depth.car.protocol"] = ("pred_mask" if report.pred_mask_depth
                                else "gt_mask")
    kv["depth.car.skipped_instances"] = report.skipped_instances
    return kv


def format_report(report: EvalReport) -> str:
    """Human-readable tables in the shapes of the benchmark tables."""
    lines = [f"evaluation of split '{report.split}' "
             f"({report.num_images} images)", ""]

    lines.append("semantic segmentation")
    lines.append(f"  {'':24s} IoU class   IoU category")
    lines.append(f"  {'ours':24s} {report.iou.mean_class:9.4f}   "
                 f"{report.iou.mean_category:12.4f}")
    for name, value in zip(report.class_names, report.iou.per_class):
        lines.append(f"    {name:22s} {_fmt(float(value) if np.isfinite(value) else None, '{:9.4f}')}")
    lines.append("")

    lines.append("instance segmentation")
    lines.append(f"  {'':24s} AP          AP0.5")
    if report.ap is not None:
        lines.append(f"  {'ours':24s} {report.ap.ap:9.4f}   {report.ap.ap50:9.4f}")
        lines.append(f"  {'ours (percent)':24s} {report.ap.ap * 100:9.1f}   "
                     f"{report.ap.ap50 * 100:9.1f}")
    else:
        lines.append(f"  {'ours':24s} {'n/a':>9s}   {'n/a':>9s}")
    lines.append("")

    protocol = "predicted masks" if report.pred_mask_depth else "ground-truth masks"
    lines.append(f"depth (per car, pooled over {protocol}; "
                 f"{report.skipped_instances} skipped)")
    lines.append(f"  {'':16s} MAE         RMSE        ARD")
    for cap in DEPTH_CAPS:
        err = report.car_depth.get(cap)
        if err is None:
            lines.append(f"  ours (< {cap:g}m)    {'n/a':>8s}    {'n/a':>8s}    {'n/a':>8s}")
        else:
            lines.append(f"  ours (< {cap:g}m)    {err.mae:7.3f}m    "
                         f"{err.rmse:7.3f}m    {err.ard * 100:6.1f}%")
    lines.append("")
    lines.append("depth (per pixel)")
    lines.append(f"  {'':16s} MAE         RMSE        ARD")
    for cap in DEPTH_CAPS:
        err = report.pixel_depth.get(cap)
        if err is None:
            lines.append(f"  ours (< {cap:g}m)    {'n/a':>8s}    {'n/a':>8s}    {'n/a':>8s}")
        else:
            lines.append(f"  ours (< {cap:g}m)    {err.mae:7.3f}m    "
                         f"{err.rmse:7.3f}m    {err.ard * 100:6.1f}%")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir: str | Path,
                 emit_plot: bool = True) -> dict[str, Path]:
    """Write the key-value report, the table view, the per-car CSV and the
    scatter figure next to each other."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "kv": out_dir / "report.kv",
        "txt": out_dir / "report.txt",
        "csv": out_dir / "car_depth.csv",
    }
    write_kv(paths["kv"], report_kv(report))
    paths["txt"].write_text(format_report(report))

    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "instance_id", "gt_depth_m",
                         "pred_depth_m", "pixels"])
        for image_id, pair in report.car_pairs:
            writer.writerow([image_id, pair.instance_id,
                             f"{pair.gt_depth:.6f}", f"{pair.pred_depth:.6f}",
                             pair.pixel_count])

    if emit_plot and report.car_pairs:
        from .plots import emit_scatter
        paths["scatter"] = out_dir / "car_depth_scatter.png"
        emit_scatter(paths["csv"], paths["scatter"])
    return paths
