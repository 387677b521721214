"""Deterministic batch iteration over in-memory samples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from ..core import Sample


@dataclass(frozen=True)
class Batch:
    """Samples stacked along a leading batch axis."""

    ids: tuple[str, ...]
    images: np.ndarray        # (B, H, W, 3)
    semantic: np.ndarray      # (B, H, W)
    instances: np.ndarray     # (B, H, W)
    depth: np.ndarray         # (B, H, W)
    depth_valid: np.ndarray   # (B, H, W)

    def __len__(self) -> int:
        return len(self.ids)


def stack_samples(samples: Sequence[Sample]) -> Batch:
    return Batch(
        ids=tuple(s.id for s in samples),
        images=np.stack([s.image for s in samples]),
        semantic=np.stack([s.semantic for s in samples]),
        instances=np.stack([s.instances for s in samples]),
        depth=np.stack([s.depth for s in samples]),
        depth_valid=np.stack([s.depth_valid for s in samples]),
    )


def iterate_batches(samples: Sequence[Sample], batch_size: int,
                    shuffle_seed: int) -> Iterator[Batch]:
    """Yield stacked batches in a shuffle order fixed by ``shuffle_seed``.

    The final partial batch is kept. All samples must share one spatial
    shape; an empty sample set is an error.
    """
    if not samples:
        raise ValueError("no samples to batch")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise ValueError(f"samples have mixed shapes: {sorted(shapes)}")
    order = np.random.default_rng(shuffle_seed).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        yield stack_samples(chunk)
