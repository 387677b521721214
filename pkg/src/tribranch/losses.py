"""The three task losses and their equally-weighted combination.

All operations are pure functions over torch tensors and preserve the input
dtype, so the same code path serves float32 training and float64 oracle
tests. Hinge boundaries take the inactive branch, and L2 norms go through a
clamped sqrt so exact-zero distances (identical embeddings) do not poison
gradients with NaNs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch

from .core import LossBreakdown

# Squared-norm floor: keeps sqrt gradients finite at zero distance while
# perturbing norm values by at most 1e-12.
_NORM_FLOOR = 1e-24


@dataclass(frozen=True)
class DiscriminativeParams:
    """Margins of the pull/push embedding loss.

    ``delta_d > 2 * delta_v`` is required: it guarantees that, at zero loss,
    every embedding is closer to all members of its own cluster than to any
    member of another, which is what makes bandwidth thresholding at
    inference valid.
    """

    delta_v: float = 0.5
    delta_d: float = 1.5
    embedding_dim: int | None = None

    def __post_init__(self):
        if self.delta_v <= 0 or self.delta_d <= 0:
            raise ValueError("margins must be positive")
        if not self.delta_d > 2 * self.delta_v:
            raise ValueError(
                f"delta_d={self.delta_d} must exceed 2*delta_v={2 * self.delta_v}")


@dataclass(frozen=True)
class BerHuParams:
    """Reverse-Huber switch point as a fraction of the largest residual."""

    c_fraction: float = 0.2

    def __post_init__(self):
        if not 0 < self.c_fraction <= 1:
            raise ValueError("c_fraction must lie in (0, 1]")


def _l2_norm(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    sq = (x * x).sum(dim=dim)
    return torch.sqrt(torch.clamp(sq, min=_NORM_FLOOR))


def weighted_cross_entropy(logits: torch.Tensor, target: torch.Tensor,
                           weights: torch.Tensor,
                           ignore_index: int = 255) -> torch.Tensor:
    """Class-weighted pixel cross-entropy.

    ``logits`` is ``(..., K)`` channels-last, ``target`` the matching integer
    grid. The result is the mean over non-ignored pixels of
    ``weights[target] * -log softmax[target]`` (a plain mean over pixels, not
    a weight-normalized one, so doubling a weight doubles that class's
    contribution).
    """
    k = logits.shape[-1]
    weights = torch.as_tensor(weights, dtype=logits.dtype, device=logits.device)
    if weights.shape != (k,):
        raise ValueError(f"need {k} class weights, got {tuple(weights.shape)}")
    flat_logits = logits.reshape(-1, k)
    flat_target = target.reshape(-1)
    keep = flat_target != ignore_index
    if not bool(keep.any()):
        raise ValueError("all pixels ignored; cross-entropy undefined")
    kept_target = flat_target[keep].long()
    log_probs = torch.log_softmax(flat_logits[keep], dim=-1)
    nll = -log_probs.gather(1, kept_target.unsqueeze(1)).squeeze(1)
    return (weights[kept_target] * nll).mean()


def discriminative_loss(embeddings: torch.Tensor, instances: torch.Tensor,
                        params: DiscriminativeParams,
                        ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pull/push/regularize loss over ground-truth instance clusters.

    ``embeddings`` is ``(H, W, E)`` or ``(B, H, W, E)`` with matching integer
    instance grids (0 = background, only positive ids participate). Per
    image with clusters ``c = 1..C`` and means ``mu_c``:

    * variance: ``(1/C) sum_c (1/N_c) sum_i hinge(|mu_c - x_i| - delta_v)^2``
    * distance: mean over cluster pairs of ``hinge(2*delta_d - |mu_a - mu_b|)^2``
      (zero when ``C == 1``)
    * regularizer: ``(1/C) sum_c |mu_c|``

    The batch value of each term is the mean over images; an image without
    instances contributes zero. Returns ``(l_var, l_dist, l_reg, l_inst)``
    with ``l_inst`` their sum.
    """
    if params.embedding_dim is not None and embeddings.shape[-1] != params.embedding_dim:
        raise ValueError(
            f"embedding dim {embeddings.shape[-1]} != configured {params.embedding_dim}")
    if embeddings.dim() == 3:
        embeddings = embeddings.unsqueeze(0)
        instances = instances.unsqueeze(0)
    if embeddings.shape[:-1] != instances.shape:
        raise ValueError("embeddings and instance map shapes disagree")

    batch = embeddings.shape[0]
    zero = embeddings.new_zeros(())
    l_var = zero.clone()
    l_dist = zero.clone()
    l_reg = zero.clone()
    any_clusters = False

    for b in range(batch):
        emb = embeddings[b].reshape(-1, embeddings.shape[-1])
        ids = instances[b].reshape(-1)
        cluster_ids = torch.unique(ids[ids > 0])
        c = int(cluster_ids.numel())
        if c == 0:
            continue
        any_clusters = True

        means = torch.stack([emb[ids == cid].mean(dim=0) for cid in cluster_ids])

        var_terms = []
        for row, cid in enumerate(cluster_ids):
            members = emb[ids == cid]
            dist = _l2_norm(members - means[row])
            var_terms.append(
                torch.clamp(dist - params.delta_v, min=0).pow(2).mean())
        l_var = l_var + torch.stack(var_terms).mean()

        if c > 1:
            diffs = means.unsqueeze(0) - means.unsqueeze(1)
            pair_dist = _l2_norm(diffs)
            iu, ju = torch.triu_indices(c, c, offset=1)
            hinged = torch.clamp(2 * params.delta_d - pair_dist[iu, ju],
                                 min=0).pow(2)
            l_dist = l_dist + hinged.mean()

        l_reg = l_reg + _l2_norm(means).mean()

    if not any_clusters:
        raise ValueError("no instance pixels in any image of the batch")

    l_var = l_var / batch
    l_dist = l_dist / batch
    l_reg = l_reg / batch
    return l_var, l_dist, l_reg, l_var + l_dist + l_reg


def berhu_loss(pred: torch.Tensor, target: torch.Tensor,
               valid: torch.Tensor, params: BerHuParams) -> torch.Tensor:
    """Reverse Huber depth loss over valid pixels.

    With residual ``d = pred - target`` and ``c = c_fraction * max|d|``:
    ``|d|`` when ``|d| <= c``, else ``(d^2 + c^2) / (2c)``. The switch point
    ``c`` stays inside the autograd graph (it is a function of the residuals,
    and the analytic gradient must match finite differences of the stated
    objective). Zero residuals everywhere give a zero loss.
    """
    valid = valid.bool()
    if not bool(valid.any()):
        raise ValueError("no valid depth pixels")
    d = (pred - target)[valid]
    abs_d = d.abs()
    c = params.c_fraction * abs_d.max()
    denom = torch.clamp(2 * c, min=torch.finfo(d.dtype).tiny)
    quadratic = (d * d + c * c) / denom
    return torch.where(abs_d <= c, abs_d, quadratic).mean()


def weighted_sum(l_sem, l_var, l_dist, l_reg, l_dep,
                 task_weights: Sequence[float] = (1.0, 1.0, 1.0)):
    """Equally-weighted (by default) task sum, in the fixed evaluation order
    ``sem + (var + dist + reg) + dep`` shared with :class:`LossBreakdown`.

    Works on torch scalars (for backward) and on floats alike.
    """
    w_sem, w_inst, w_dep = task_weights
    return (w_sem * l_sem
            + (w_inst * l_var + w_inst * l_dist + w_inst * l_reg)
            + w_dep * l_dep)


def total_loss(l_sem: float, l_var: float, l_dist: float, l_reg: float,
               l_dep: float,
               task_weights: Sequence[float] = (1.0, 1.0, 1.0)) -> LossBreakdown:
    """Combine per-task scalars into a :class:`LossBreakdown`.

    Components are stored after task weighting so the breakdown's exact-sum
    invariant holds for any weights.
    """
    values = (l_sem, l_var, l_dist, l_reg, l_dep)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"non-finite loss component: {values}")
    w_sem, w_inst, w_dep = task_weights
    return LossBreakdown.from_components(
        w_sem * l_sem, w_inst * l_var, w_inst * l_dist, w_inst * l_reg,
        w_dep * l_dep)
