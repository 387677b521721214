"""Inverse-log class weighting for the semantic cross-entropy loss.

Rare classes get large weights via ``w_k = 1 / ln(c + p_k)`` where ``p_k`` is
the class's pixel probability over the training split and ``c`` is a
hyperparameter (1.02 by default). Frequencies are computed once per dataset
and cached to a small text file keyed by a hash of the sample ids.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..core import IGNORE_ID, Sample


def compute_class_weights(label_frequency: np.ndarray,
                          c_hyper: float = 1.02) -> np.ndarray:
    """w_k = 1 / ln(c_hyper + p_k) per class.

    Rejects configurations where any ``c_hyper + p_k <= 1``, which would make
    the logarithm argument non-positive-log and the weight undefined or
    non-positive.
    """
    p = np.asarray(label_frequency, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("label_frequency must be a 1-D per-class vector")
    if (p < 0).any() or (p > 1).any():
        raise ValueError("frequencies must lie in [0, 1]")
    if c_hyper <= 0:
        raise ValueError("c_hyper must be positive")
    if (c_hyper + p <= 1.0).any():
        bad = int(np.argmax(c_hyper + p <= 1.0))
        raise ValueError(
            f"c_hyper={c_hyper} with p[{bad}]={p[bad]} makes ln argument <= 1; "
            "increase c_hyper")
    return 1.0 / np.log(c_hyper + p)


def class_frequencies(samples: Iterable[Sample], num_classes: int) -> np.ndarray:
    """Per-class pixel probability over all non-ignored pixels."""
    counts = np.zeros(num_classes, dtype=np.int64)
    for sample in samples:
        sem = sample.semantic
        kept = sem[sem != IGNORE_ID]
        counts += np.bincount(kept, minlength=num_classes)[:num_classes]
    total = counts.sum()
    if total == 0:
        raise ValueError("no labeled pixels in any sample")
    return counts / total


def dataset_key(sample_ids: Sequence[str], num_classes: int) -> str:
    digest = hashlib.sha256()
    digest.update(str(num_classes).encode())
    for sid in sorted(sample_ids):
        digest.update(sid.encode())
        digest.update(b"\0")
    return digest.hexdigest()[:16]


def cached_class_frequencies(samples: Sequence[Sample], num_classes: int,
                             cache_path: str | Path) -> np.ndarray:
    """Load frequencies from the cache file if its key matches, else compute
    them and rewrite the cache."""
    cache_path = Path(cache_path)
    key = dataset_key([s.id for s in samples], num_classes)
    if cache_path.is_file():
        lines = cache_path.read_text().splitlines()
        if lines and lines[0].strip() == key:
            return np.array([float(v) for v in lines[1:]], dtype=np.float64)
    freq = class_frequencies(samples, num_classes)
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    cache_path.write_text("\n".join([key] + [repr(float(v)) for v in freq]) + "\n")
    return freq
