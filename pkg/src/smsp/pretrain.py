"""Backbone pre-training on the full base dataset."""

from __future__ import annotations

import hashlib

import numpy as np

from .autograd import NonFiniteError, backward, cross_entropy
from .data import Dataset, normalize
from .nets import Architecture, init_network, masked_forward, save_network
from .optim import LrSchedule, cosine_lr, sgd_step
from .train import batch_stream, evaluate
from .util import config_hash

__all__ = ["pretrain_backbone", "save_backbone"]


def pretrain_backbone(
    dataset: Dataset,
    arch: Architecture,
    epochs: int,
    batch_size: int = 32,
    lr: float = 0.01,
    seed: int = 0,
    verbose: bool = False,
):
    """Train an all-class classifier with SGD and cosine annealing.

    Returns (net, history, test_accuracy); epochs=0 returns the seeded
    random initialisation unevaluated against training.
    """
    net = init_network(arch, seed)
    all_classes = np.arange(dataset.num_classes)
    train_x = dataset.images[dataset.train_idx]
    train_y = dataset.labels[dataset.train_idx]
    test_x = dataset.images[dataset.test_idx]
    test_y = dataset.labels[dataset.test_idx]
    history = []
    if epochs > 0:
        steps_per_epoch = max(len(train_y) // batch_size, 1)
        total = epochs * steps_per_epoch
        sched = LrSchedule(lr, total)
        rng = np.random.default_rng(seed)
        stream = batch_stream(len(train_y), batch_size, rng)
        params = net.all_parameters()
        step = 0
        for epoch in range(epochs):
            for _ in range(steps_per_epoch):
                idx = next(stream)
                try:
                    loss = cross_entropy(masked_forward(net, normalize(train_x[idx])), train_y[idx])
                except NonFiniteError as e:
                    raise NonFiniteError(
                        f"pretraining diverged at step {step} (epoch {epoch}, lr {cosine_lr(sched, step):.5f}): {e}"
                    ) from e
                backward(loss)
                sgd_step(params, cosine_lr(sched, step))
                step += 1
            acc = evaluate(net, test_x, test_y, all_classes)
            history.append({"epoch": epoch + 1, "test_accuracy": acc})
            if verbose:
                print(f"[pretrain] epoch {epoch + 1}/{epochs} test accuracy {acc:.2f}%")
    test_accuracy = evaluate(net, test_x, test_y, all_classes)
    return net, history, test_accuracy


def save_backbone(path, net, dataset: Dataset, settings: dict, test_accuracy: float) -> None:
    data_digest = hashlib.blake2b(dataset.images.tobytes(), digest_size=8).hexdigest()
    meta = {
        "settings": settings,
        "config_hash": config_hash(settings),
        "test_accuracy": test_accuracy,
        "dataset_digest": data_digest,
    }
    save_network(path, net, meta)
