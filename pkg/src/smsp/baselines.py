"""Random-mask baseline: a uniformly random retained set of the same size
as a selected mask, fine-tuned with the identical budget."""

from __future__ import annotations

import math

import numpy as np

from .data import TaskData
from .nets import MaskedNetwork, clone_network, count_flops, extract_subnetwork
from .optim import LrSchedule
from .selection import FineTuneResult, fine_tune, prune_order_walk

__all__ = ["random_retained", "random_subnetwork", "run_random_mask_baseline", "RandomMaskRun"]


def random_retained(backbone: MaskedNetwork, ratio: float, seed: int) -> np.ndarray:
    """Retained mask of size n - ceil(n * ratio), uniform over the walk order,
    keeping at least one unit per layer."""
    n = backbone.n_prunable
    if not 0.0 <= ratio < 1.0:
        raise ValueError("ratio must lie in [0, 1)")
    k = math.ceil(n * ratio)
    slices = backbone.arch.unit_slices()
    if k > n - len(slices):
        raise ValueError(f"ratio {ratio} infeasible: pruning {k} of {n} would empty a layer")
    layer_of = np.empty(n, np.int64)
    for li, (start, stop) in enumerate(slices):
        layer_of[start:stop] = li
    order = np.random.default_rng(seed).permutation(n)
    return prune_order_walk([stop - start for start, stop in slices], layer_of, order, k)


def random_subnetwork(backbone: MaskedNetwork, ratio: float, seed: int):
    retained = random_retained(backbone, ratio, seed)
    masked = clone_network(backbone)
    masked.set_mask(retained.astype(np.float32))
    return extract_subnetwork(masked), retained


class RandomMaskRun:
    def __init__(self, task_id, retained, result: FineTuneResult, subnet_flops):
        self.task_id = task_id
        self.retained = retained
        self.accuracy = result.accuracy
        self.accuracy_at = result.accuracy_at
        self.ledger = result.ledger
        self.subnet_flops = subnet_flops


def run_random_mask_baseline(
    backbone: MaskedNetwork,
    task: TaskData,
    ratio: float,
    iterations: int,
    batch_size: int = 32,
    schedule: LrSchedule | None = None,
    seed: int = 0,
    eval_at=(),
) -> RandomMaskRun:
    subnet, retained = random_subnetwork(backbone, ratio, seed)
    result = fine_tune(subnet, task, iterations, schedule, batch_size, seed, eval_at)
    return RandomMaskRun(task.task_id, retained, result, count_flops(subnet))
