"""Training loop: summed equally-weighted task losses under Adam.

Every step runs forward, builds the loss breakdown, backpropagates the
weighted total and applies one Adam update. Batch-norm layers can be frozen
entirely (affine parameters out of the optimizer, modules kept in eval mode
so running statistics never move); a hash audit verifies after the run that
nothing outside the trainable groups changed. All randomness derives from
the run seed, so identical configs reproduce identical loss logs.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from torch import nn

from ..configio import write_kv
from ..core import LossBreakdown, Sample
from ..data import (DatasetConfig, cached_class_frequencies,
                    compute_class_weights, iterate_batches, load_split)
from ..data.batching import Batch
from ..losses import (berhu_loss, discriminative_loss, total_loss,
                      weighted_cross_entropy, weighted_sum)
from ..network import BranchedModel, build_model, load_pretrained_encoder, save_checkpoint
from .runconfig import ADAM_BETAS, ADAM_EPS, RunConfig

logger = logging.getLogger(__name__)

LOG_HEADER = "step,l_sem,l_var,l_dist,l_reg,l_dep,total,lr,wall_ms"


class TrainingAbort(RuntimeError):
    """Raised on a non-finite loss; the offending batch is saved for repro."""

    def __init__(self, message: str, repro_path: Path):
        super().__init__(message)
        self.repro_path = repro_path


@dataclass
class TrainState:
    """Mutable bookkeeping of one run."""

    iteration: int = 0
    best_val_loss: float = float("inf")
    best_iteration: int = -1
    running_total: float = 0.0
    running_count: int = 0


@dataclass(frozen=True)
class TrainResult:
    final_checkpoint: Path
    best_checkpoint: Path | None
    log_path: Path
    last_breakdown: LossBreakdown


def set_train_mode(model: nn.Module, training: bool, freeze_batchnorm: bool) -> None:
    """Switch train/eval, keeping batch-norm in eval mode when frozen."""
    model.train(training)
    if freeze_batchnorm:
        for module in model.modules():
            if isinstance(module, nn.modules.batchnorm._BatchNorm):
                module.eval()


def batchnorm_state_hash(model: nn.Module) -> str:
    """Digest of all batch-norm parameters and running statistics."""
    digest = hashlib.sha256()
    for name, module in sorted(model.named_modules()):
        if isinstance(module, nn.modules.batchnorm._BatchNorm):
            digest.update(name.encode())
            for tensor in (module.weight, module.bias, module.running_mean,
                           module.running_var):
                if tensor is not None:
                    digest.update(tensor.detach().numpy().tobytes())
    return digest.hexdigest()


def batch_to_tensors(batch: Batch) -> dict[str, torch.Tensor]:
    return {
        "images": torch.from_numpy(
            np.ascontiguousarray(batch.images.transpose(0, 3, 1, 2))).float(),
        "semantic": torch.from_numpy(batch.semantic).long(),
        "instances": torch.from_numpy(batch.instances).long(),
        "depth": torch.from_numpy(batch.depth).float(),
        "depth_valid": torch.from_numpy(batch.depth_valid).bool(),
    }


def compute_batch_losses(model: BranchedModel, tensors: dict[str, torch.Tensor],
                         class_weights: torch.Tensor, config: RunConfig,
                         ) -> tuple[torch.Tensor, tuple[float, ...]]:
    """Forward one batch; returns the torch total for backward plus the raw
    component values (sem, var, dist, reg, dep) as floats.

    A batch without any instance pixels, or without any valid depth pixel,
    contributes zero for the corresponding task rather than failing; that
    only happens on degenerate data where the task has nothing to learn from.
    """
    out = model(tensors["images"])

    l_sem = weighted_cross_entropy(
        out.semantic_logits.permute(0, 2, 3, 1), tensors["semantic"],
        class_weights)

    zero = out.semantic_logits.sum() * 0
    if int(tensors["instances"].max()) > 0:
        l_var, l_dist, l_reg, _ = discriminative_loss(
            out.embeddings.permute(0, 2, 3, 1), tensors["instances"],
            config.discriminative_params())
    else:
        l_var = l_dist = l_reg = zero

    if bool(tensors["depth_valid"].any()):
        l_dep = berhu_loss(out.depth, tensors["depth"], tensors["depth_valid"],
                           config.berhu_params())
    else:
        l_dep = zero

    torch_total = weighted_sum(l_sem, l_var, l_dist, l_reg, l_dep,
                               config.task_weights)
    components = tuple(float(v.detach())
                       for v in (l_sem, l_var, l_dist, l_reg, l_dep))
    return torch_total, components


def _endless_batches(samples: Sequence[Sample], batch_size: int,
                     base_seed: int) -> Iterator[Batch]:
    epoch = 0
    while True:
        yield from iterate_batches(samples, batch_size, base_seed + epoch)
        epoch += 1


def _flip_batch(batch: Batch, rng: np.random.Generator) -> Batch:
    flip = rng.random(len(batch)) < 0.5
    if not flip.any():
        return batch
    def f(arr):
        out = arr.copy()
        out[flip] = out[flip, :, ::-1]
        return out
    return Batch(ids=batch.ids, images=f(batch.images), semantic=f(batch.semantic),
                 instances=f(batch.instances), depth=f(batch.depth),
                 depth_valid=f(batch.depth_valid))


def validation_loss(model: BranchedModel, samples: Sequence[Sample],
                    class_weights: torch.Tensor, config: RunConfig) -> float:
    """Mean total loss over the validation split in eval mode."""
    set_train_mode(model, False, config.freeze_batchnorm)
    totals = []
    with torch.no_grad():
        for batch in iterate_batches(samples, config.batch_size, shuffle_seed=0):
            _, components = compute_batch_losses(
                model, batch_to_tensors(batch), class_weights, config)
            totals.append(total_loss(*components, config.task_weights).total)
    return float(np.mean(totals))


def train(config: RunConfig) -> TrainResult:
    """Run the full training loop and write checkpoints plus the loss log."""
    torch.manual_seed(config.seed)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    ds_config = DatasetConfig.from_file(config.dataset)
    train_samples = load_split(ds_config, "train")
    try:
        val_samples = load_split(ds_config, "val")
    except (FileNotFoundError, ValueError):
        logger.info("no val split; validating on the training split")
        val_samples = train_samples

    mapping = ds_config.mapping
    freq = cached_class_frequencies(train_samples, mapping.num_classes,
                                    out_dir / "class_frequencies.txt")
    class_weights = torch.from_numpy(
        compute_class_weights(freq, ds_config.c_hyper)).float()

    model = build_model(config.network_config(mapping.num_classes))
    if config.pretrained_encoder is not None:
        report = load_pretrained_encoder(model, config.pretrained_encoder,
                                         config.pretrained_include_stage3)
        logger.info("pretrained encoder: loaded %s, unmatched %s",
                    report.loaded_groups, report.unmatched_groups)

    if config.freeze_batchnorm:
        for module in model.modules():
            if isinstance(module, nn.modules.batchnorm._BatchNorm):
                for p in module.parameters():
                    p.requires_grad_(False)
    bn_hash_before = batchnorm_state_hash(model)

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=config.learning_rate,
                                 betas=ADAM_BETAS, eps=ADAM_EPS)

    write_kv(out_dir / "run.cfg", config.to_kv())
    log_path = out_dir / "train_log.csv"
    log_lines = [LOG_HEADER,
                 f"# adam betas={ADAM_BETAS} eps={ADAM_EPS}"]

    flip_rng = np.random.default_rng(config.seed + 17)
    batches = _endless_batches(train_samples, config.batch_size,
                               base_seed=config.seed * 1009)
    state = TrainState()
    best_path = out_dir / "best.ckpt"
    breakdown = None

    for step in range(1, config.iterations + 1):
        batch = next(batches)
        if ds_config.flip:
            batch = _flip_batch(batch, flip_rng)
        tensors = batch_to_tensors(batch)

        set_train_mode(model, True, config.freeze_batchnorm)
        started = time.perf_counter()
        torch_total, components = compute_batch_losses(
            model, tensors, class_weights, config)

        if not all(np.isfinite(v) for v in components):
            repro = out_dir / f"abort_step{step}.npz"
            np.savez(repro, images=batch.images, semantic=batch.semantic,
                     instances=batch.instances, depth=batch.depth,
                     depth_valid=batch.depth_valid)
            log_path.write_text("\n".join(log_lines) + "\n")
            raise TrainingAbort(
                f"non-finite loss at step {step}: "
                f"(sem, var, dist, reg, dep) = {components}", repro)
        breakdown = total_loss(*components, config.task_weights)

        optimizer.zero_grad()
        torch_total.backward()
        optimizer.step()

        wall_ms = (time.perf_counter() - started) * 1000.0
        state.iteration = step
        state.running_total += breakdown.total
        state.running_count += 1
        log_lines.append(
            f"{step},{breakdown.l_sem!r},{breakdown.l_var!r},{breakdown.l_dist!r},"
            f"{breakdown.l_reg!r},{breakdown.l_dep!r},{breakdown.total!r},"
            f"{config.learning_rate!r},{wall_ms:.2f}")

        if step % config.val_interval == 0 or step == config.iterations:
            val_total = validation_loss(model, val_samples, class_weights, config)
            logger.info("step %d: train total (avg %d) %.4f, val total %.4f",
                        step, state.running_count,
                        state.running_total / max(1, state.running_count),
                        val_total)
            state.running_total = 0.0
            state.running_count = 0
            if val_total < state.best_val_loss:
                state.best_val_loss = val_total
                state.best_iteration = step
                save_checkpoint(best_path, model,
                                extra={"iteration": step,
                                       "val_loss": val_total,
                                       "dataset": str(config.dataset)})

    bn_hash_after = batchnorm_state_hash(model)
    if config.freeze_batchnorm and bn_hash_before != bn_hash_after:
        raise RuntimeError("frozen batch-norm state changed during training")

    final_path = out_dir / "final.ckpt"
    save_checkpoint(final_path, model,
                    extra={"iteration": state.iteration,
                           "optimizer": optimizer.state_dict(),
                           "dataset": str(config.dataset)})
    log_path.write_text("\n".join(log_lines) + "\n")
    return TrainResult(
        final_checkpoint=final_path,
        best_checkpoint=best_path if state.best_iteration >= 0 else None,
        log_path=log_path,
        last_breakdown=breakdown,
    )
