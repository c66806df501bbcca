"""Shared training-loop machinery: batch streams, restricted-class loss,
and accuracy evaluation."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, cross_entropy, no_grad, take_columns
from .data import normalize
from .nets import MaskedNetwork, masked_forward

__all__ = ["batch_stream", "classification_loss", "evaluate"]


def batch_stream(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches; reshuffles every epoch, drops the
    ragged tail (or yields everything when the dataset is smaller than a batch)."""
    if n <= 0:
        raise ValueError("empty dataset")
    while True:
        order = rng.permutation(n)
        if n <= batch_size:
            yield order
            continue
        for s in range(0, n - batch_size + 1, batch_size):
            yield order[s : s + batch_size]


def classification_loss(logits: Tensor, classes, labels_local) -> Tensor:
    """Cross-entropy over the logit columns of the task's classes."""
    return cross_entropy(take_columns(logits, np.asarray(classes)), labels_local)


def evaluate(net: MaskedNetwork, images_u8, labels_local, classes, batch_size: int = 512) -> float:
    """Accuracy in percent, argmax over the task's logit columns."""
    cols = np.asarray(classes)
    correct = 0
    with no_grad():
        for s in range(0, len(labels_local), batch_size):
            chunk = normalize(images_u8[s : s + batch_size])
            logits = masked_forward(net, chunk)
            pred = logits.data[:, cols].argmax(axis=1)
            correct += int((pred == labels_local[s : s + batch_size]).sum())
    return 100.0 * correct / len(labels_local)
