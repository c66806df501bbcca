"""Automatic mask pruning: jointly optimise mask scores (and optionally
weights) under an L1-regularised objective, pruning units whose scores
fall below a threshold until the target ratio is reached.

Each iteration first prunes every retained unit whose score sits below
the threshold (never emptying a layer), stops pruning once the target
ratio is met, and then applies one optimizer step on a mini-batch.
Optimisation keeps running after pruning stops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import absolute, backward, scale, tsum
from .data import TaskData, normalize
from .nets import (
    FlopsLedger,
    MaskedNetwork,
    clone_network,
    masked_forward,
    track_training_flops,
)
from .optim import LrSchedule, cosine_lr, sgd_step
from .pool import PrunedRecord, compute_record_id
from .train import batch_stream, classification_loss, evaluate
from .util import now_iso

__all__ = ["AmpConfig", "AmpResult", "amp_objective", "amp_prune", "build_pool_entry",
           "DEFAULT_THRESHOLD", "DEFAULT_L1_WEIGHT"]

DEFAULT_THRESHOLD = 0.01
# Default picked by the small grid in scripts/tune_lambda.py: the smallest
# weight that reliably reaches 90% pruning within ~250 frozen iterations.
DEFAULT_L1_WEIGHT = 1.0


@dataclass(frozen=True)
class AmpConfig:
    iterations: int
    target_ratio: float
    threshold: float = DEFAULT_THRESHOLD
    l1_weight: float = DEFAULT_L1_WEIGHT
    batch_size: int = 32
    schedule: LrSchedule | None = None
    frozen_weights: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if not 0.0 <= self.target_ratio < 1.0:
            raise ValueError("target_ratio must lie in [0, 1)")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.l1_weight < 0:
            raise ValueError("l1_weight must be non-negative")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")

    def lr_schedule(self) -> LrSchedule:
        return self.schedule or LrSchedule(0.01, self.iterations)


@dataclass
class AmpResult:
    net: MaskedNetwork
    record: PrunedRecord
    iterations_used: int
    final_accuracy: float
    ledger: FlopsLedger
    converged: bool
    target_reached_at: int | None


def amp_objective(net: MaskedNetwork, batch, labels_local, classes, l1_weight: float):
    """Restricted-class cross-entropy plus l1_weight * sum |score| over
    retained units (pruned scores are exactly 0, so they contribute nothing)."""
    loss = classification_loss(masked_forward(net, batch), classes, labels_local)
    if l1_weight != 0.0:
        l1 = None
        for s in net.scores:
            term = tsum(absolute(s))
            l1 = term if l1 is None else l1 + term
        loss = loss + scale(l1, l1_weight)
    return loss


def _prune_below_threshold(net: MaskedNetwork, threshold: float) -> None:
    """Prune retained units scoring below threshold; a layer about to empty
    keeps its highest-score unit regardless."""
    for li in range(len(net.arch.layers)):
        retained = net.gates[li] > 0
        if not retained.any():
            continue
        cand = retained & (net.scores[li].data < threshold)
        if cand.sum() == retained.sum():
            scores = np.where(retained, net.scores[li].data, -np.inf)
            cand[int(np.argmax(scores))] = False
        if cand.any():
            net.prune_units(li, cand)


def amp_prune(net: MaskedNetwork, task: TaskData, cfg: AmpConfig) -> AmpResult:
    """Run the prune-then-optimise loop for cfg.iterations mini-batch steps."""
    if not net.masked:
        raise ValueError("amp_prune needs a masked network")
    n = net.n_prunable
    max_ratio = 1.0 - len(net.arch.layers) / n
    if cfg.target_ratio >= max_ratio:
        raise ValueError(
            f"target ratio {cfg.target_ratio} is infeasible with one unit kept per layer"
            f" (max {max_ratio:.4f})"
        )
    if cfg.frozen_weights:
        net.set_weights_trainable(False)
    params = net.all_parameters()
    sched = cfg.lr_schedule()
    rng = np.random.default_rng(cfg.seed)
    stream = batch_stream(task.n_train, cfg.batch_size, rng)
    ledger = FlopsLedger()
    stopped = net.pruning_ratio() >= cfg.target_ratio
    reached_at = 0 if stopped else None
    for j in range(cfg.iterations):
        if not stopped:
            _prune_below_threshold(net, cfg.threshold)
            if net.pruning_ratio() >= cfg.target_ratio:
                stopped = True
                reached_at = j + 1
        idx = next(stream)
        loss = amp_objective(net, normalize(task.train_x[idx]), task.train_y[idx], task.classes, cfg.l1_weight)
        backward(loss)
        sgd_step(params, cosine_lr(sched, j))
        track_training_flops(ledger, net, len(idx))
    achieved = net.pruning_ratio()
    converged = achieved >= cfg.target_ratio
    accuracy = evaluate(net, task.test_x, task.test_y, task.classes)
    metadata = {
        "threshold": cfg.threshold,
        "l1_weight": cfg.l1_weight,
        "iterations": cfg.iterations,
        "seed": cfg.seed,
        "achieved_ratio": achieved,
        "created_at": now_iso(),
        "task_id": task.task_id,
        "frozen_weights": cfg.frozen_weights,
        "converged": converged,
    }
    scores = net.score_vector()
    record = PrunedRecord(
        record_id=compute_record_id(net.arch.arch_id, sorted(task.classes), cfg.target_ratio, scores, metadata),
        arch_id=net.arch.arch_id,
        class_labels=tuple(sorted(task.classes)),
        scores=scores,
        pruning_ratio=cfg.target_ratio,
        metadata=metadata,
    )
    return AmpResult(net, record, cfg.iterations, accuracy, ledger, converged, reached_at)


def build_pool_entry(pretrained: MaskedNetwork, task: TaskData, cfg: AmpConfig) -> AmpResult:
    """Frozen-weight AMP on a clone of the backbone; only scores move."""
    if not cfg.frozen_weights:
        raise ValueError("pool entries are built with frozen weights")
    net = clone_network(pretrained)
    if not net.masked:
        raise ValueError("backbone must carry a mask")
    net.set_mask(np.ones(net.n_prunable, np.float32))
    for s in net.scores:
        s.set_trainable(True)
    return amp_prune(net, task, cfg)
