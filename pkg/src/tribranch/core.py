"""Shared data model for scenes, predictions and loss bookkeeping.

Grids are plain numpy arrays with fixed conventions:

* image: ``(H, W, 3)`` float, values in ``[0, 1]``
* semantic map: ``(H, W)`` integer class ids, ``IGNORE_ID`` marks ignored pixels
* instance map: ``(H, W)`` integer ids, ``0`` is background, instances are
  numbered ``1..C`` without gaps
* depth map: ``(H, W)`` float meters plus a boolean validity mask

All spatial sizes must be multiples of 8 because the deepest network stage
runs at 1/8 resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IGNORE_ID = 255

DOWNSAMPLE_FACTOR = 8


@dataclass(frozen=True)
class Sample:
    """One scene: image plus semantic, instance and depth ground truth."""

    id: str
    image: np.ndarray
    semantic: np.ndarray
    instances: np.ndarray
    depth: np.ndarray
    depth_valid: np.ndarray


@dataclass(frozen=True)
class PredictionBundle:
    """Raw per-pixel network outputs for one image.

    ``semantic_logits`` is ``(H, W, K)``, ``embeddings`` is ``(H, W, E)`` and
    ``depth`` is ``(H, W)`` with every pixel valid and strictly positive.
    """

    semantic_logits: np.ndarray
    embeddings: np.ndarray
    depth: np.ndarray


@dataclass(frozen=True)
class InstanceDetection:
    """One predicted instance: binary mask, class id and confidence."""

    mask: np.ndarray
    class_id: int
    confidence: float


@dataclass(frozen=True)
class LossBreakdown:
    """Per-task loss values and their sum.

    ``total`` is always computed from the stored components in a fixed
    evaluation order so the identity ``total == l_sem + (l_var + l_dist +
    l_reg) + l_dep`` holds bitwise.
    """

    l_sem: float
    l_var: float
    l_dist: float
    l_reg: float
    l_dep: float
    total: float

    @classmethod
    def from_components(cls, l_sem: float, l_var: float, l_dist: float,
                        l_reg: float, l_dep: float) -> "LossBreakdown":
        total = l_sem + (l_var + l_dist + l_reg) + l_dep
        return cls(l_sem=l_sem, l_var=l_var, l_dist=l_dist, l_reg=l_reg,
                   l_dep=l_dep, total=total)


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by :func:`validate_sample`."""

    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


def validate_sample(sample: Sample, num_classes: int) -> list[Violation]:
    """Check every type invariant of ``sample`` against ``num_classes``.

    Returns one :class:`Violation` per broken invariant; an empty list means
    the sample is valid. Violations are data, not exceptions, so callers can
    report all problems at once.
    """
    out: list[Violation] = []

    img = sample.image
    if img.ndim != 3 or img.shape[2] != 3:
        out.append(Violation("image", f"expected (H, W, 3), got {img.shape}"))
        return out
    h, w = img.shape[:2]
    if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
        out.append(Violation(
            "image", f"spatial size {h}x{w} not a multiple of {DOWNSAMPLE_FACTOR}"))
    if not np.isfinite(img).all():
        out.append(Violation("image", "non-finite values"))
    elif img.min() < 0.0 or img.max() > 1.0:
        out.append(Violation("image", "values outside [0, 1]"))

    for name, grid in (("semantic", sample.semantic),
                       ("instances", sample.instances),
                       ("depth", sample.depth),
                       ("depth_valid", sample.depth_valid)):
        if grid.shape != (h, w):
            out.append(Violation(name, f"shape {grid.shape} != image {h}x{w}"))
    if any(v.message.startswith("shape") for v in out):
        return out

    sem = sample.semantic
    bad = (sem != IGNORE_ID) & ((sem < 0) | (sem >= num_classes))
    if bad.any():
        ys, xs = np.nonzero(bad)
        out.append(Violation(
            "semantic",
            f"id {int(sem[ys[0], xs[0]])} at pixel ({int(ys[0])}, {int(xs[0])}) "
            f"outside [0, {num_classes}) and not {IGNORE_ID}"))

    inst = sample.instances
    if (inst < 0).any():
        out.append(Violation("instances", "negative instance id"))
    else:
        # Instances are numbered 1..C; a gap means an id labels no pixels.
        present = np.unique(inst)
        top = int(inst.max())
        missing = sorted(set(range(1, top + 1)) - set(int(i) for i in present))
        for gap in missing:
            out.append(Violation("instances", f"id {gap} labels no pixels"))

    valid = sample.depth_valid.astype(bool)
    d = sample.depth
    if valid.any():
        dv = d[valid]
        if not np.isfinite(dv).all():
            out.append(Violation("depth", "non-finite values at valid pixels"))
        elif (dv <= 0).any():
            out.append(Violation("depth", "non-positive depth at valid pixels"))

    return out
