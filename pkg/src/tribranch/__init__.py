"""Real-time joint semantic, instance and depth estimation.

A shared efficient encoder feeds three task branches (semantic labels, pixel
embeddings for instance clustering, metric depth) trained with an equally
weighted sum of a class-weighted cross-entropy, a discriminative embedding
loss and the reverse Huber depth loss. The package covers data ingestion,
the network, losses, mean-shift instance extraction, evaluation metrics and
a training/evaluation/benchmark CLI.
"""

__version__ = "0.1.0"
