"""One-shot selection pruning: pick the most similar pool records, sum
their mask scores, prune the backbone once at the k-th smallest summed
score, and briefly fine-tune the extracted sub-network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import backward
from .data import TaskData, normalize
from .nets import (
    FlopsLedger,
    MaskedNetwork,
    clone_network,
    count_flops,
    extract_subnetwork,
    masked_forward,
    track_training_flops,
)
from .optim import LrSchedule, cosine_lr, sgd_step
from .pool import Pool, PrunedRecord
from .tasksim import SimilarityTable, build_similarity_table
from .train import batch_stream, classification_loss, evaluate

__all__ = [
    "SmspConfig",
    "FineTuneResult",
    "SmspRun",
    "select_neighbors",
    "pick_neighbors",
    "sum_masks",
    "prune_order_walk",
    "one_shot_prune",
    "fine_tune",
    "smsp_pipeline",
]


@dataclass(frozen=True)
class SmspConfig:
    pruning_ratio: float
    neighbor_count: int = 8
    fine_tune_iterations: int = 100
    batch_size: int = 32
    lr: float = 0.01
    min_lr: float = 0.0
    class_disjoint_neighbors: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.pruning_ratio < 1.0:
            raise ValueError("pruning_ratio must lie in [0, 1)")
        if self.neighbor_count < 1:
            raise ValueError("neighbor_count must be positive")
        if self.fine_tune_iterations < 0:
            raise ValueError("fine_tune_iterations must be non-negative")

    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, max(self.fine_tune_iterations, 1), self.min_lr)


@dataclass
class FineTuneResult:
    accuracy: float
    accuracy_at: dict
    ledger: FlopsLedger


@dataclass
class SmspRun:
    task_id: str
    neighbor_ids: list
    achieved_ratio: float
    accuracy: float
    accuracy_at: dict
    ledger: FlopsLedger
    retained: np.ndarray
    subnet_flops: int


def pick_neighbors(rows, m: int, class_disjoint: bool, target_classes, pool: Pool) -> list:
    """Walk rows in similarity order, skipping records that share a class
    with the target when the disjoint constraint is on."""
    target = set(int(c) for c in target_classes)
    chosen = []
    for rid, _ in rows:
        if class_disjoint and target & set(pool.load_record(rid).class_labels):
            continue
        chosen.append(rid)
        if len(chosen) == m:
            return chosen
    raise ValueError(f"only {len(chosen)} eligible records for {m} requested neighbors")


def select_neighbors(
    table: SimilarityTable, m: int, class_disjoint: bool, target_classes, pool: Pool
) -> list:
    """The m most similar records, honouring the class-disjoint constraint."""
    return pick_neighbors(table.rows, m, class_disjoint, target_classes, pool)


def sum_masks(records: list) -> np.ndarray:
    """Elementwise sum of the records' score vectors (float64).

    Records are summed in record-id order so the result cannot depend on
    the caller's neighbor ordering.
    """
    if not records:
        raise ValueError("cannot sum an empty record list")
    arch_ids = {r.arch_id for r in records}
    if len(arch_ids) != 1:
        raise ValueError(f"records span architectures {sorted(arch_ids)}")
    ordered = sorted(records, key=lambda r: r.record_id)
    stacked = np.stack([r.scores.astype(np.float64) for r in ordered])
    return stacked.sum(axis=0)


def prune_order_walk(layer_sizes, layer_of_unit, order, k: int, floor: int = 1) -> np.ndarray:
    """Prune units in the given order until k are gone, skipping any unit
    whose layer is already down to the floor. Returns a retained bool mask."""
    remaining = list(layer_sizes)
    retained = np.ones(len(layer_of_unit), bool)
    pruned = 0
    for u in order:
        if pruned == k:
            break
        layer = layer_of_unit[u]
        if remaining[layer] <= floor:
            continue
        remaining[layer] -= 1
        retained[u] = False
        pruned += 1
    return retained


def _layer_of_unit(net: MaskedNetwork) -> np.ndarray:
    out = np.empty(net.n_prunable, np.int64)
    for li, (start, stop) in enumerate(net.arch.unit_slices()):
        out[start:stop] = li
    return out


def one_shot_prune(
    backbone: MaskedNetwork, summed_scores: np.ndarray, ratio: float
) -> tuple[MaskedNetwork, np.ndarray, int]:
    """Prune ceil(n * ratio) units in ascending summed-score order (ties by
    ascending unit index, floor demand spilling to the next-lowest scores)
    and extract the dense sub-network with inherited weights."""
    n = backbone.n_prunable
    summed = np.asarray(summed_scores, np.float64)
    if summed.shape != (n,):
        raise ValueError(f"expected {n} summed scores, got {summed.shape}")
    if not 0.0 <= ratio < 1.0:
        raise ValueError("ratio must lie in [0, 1)")
    k = math.ceil(n * ratio)
    layers = len(backbone.arch.layers)
    if k > n - layers:
        raise ValueError(f"ratio {ratio} infeasible: pruning {k} of {n} would empty a layer")
    order = np.lexsort((np.arange(n), summed))
    retained = prune_order_walk(
        [stop - start for start, stop in backbone.arch.unit_slices()],
        _layer_of_unit(backbone),
        order,
        k,
    )
    masked = clone_network(backbone)
    masked.set_mask(retained.astype(np.float32))
    subnet = extract_subnetwork(masked)
    return subnet, retained, k


def fine_tune(
    subnet: MaskedNetwork,
    task: TaskData,
    iterations: int,
    schedule: LrSchedule | None = None,
    batch_size: int = 32,
    seed: int = 0,
    eval_at=(),
) -> FineTuneResult:
    """Plain restricted-class cross-entropy on the sub-network's weights;
    no mask variables and no sparsity term. iterations=0 just evaluates."""
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    sched = schedule or LrSchedule(0.01, max(iterations, 1))
    rng = np.random.default_rng(seed)
    stream = batch_stream(task.n_train, batch_size, rng)
    params = subnet.all_parameters()
    ledger = FlopsLedger()
    accuracy_at = {}
    for j in range(iterations):
        idx = next(stream)
        loss = classification_loss(
            masked_forward(subnet, normalize(task.train_x[idx])), task.classes, task.train_y[idx]
        )
        backward(loss)
        sgd_step(params, cosine_lr(sched, j))
        track_training_flops(ledger, subnet, len(idx))
        if (j + 1) in eval_at and (j + 1) != iterations:
            accuracy_at[j + 1] = evaluate(subnet, task.test_x, task.test_y, task.classes)
    accuracy = evaluate(subnet, task.test_x, task.test_y, task.classes)
    accuracy_at[iterations] = accuracy
    return FineTuneResult(accuracy, accuracy_at, ledger)


def smsp_pipeline(
    backbone: MaskedNetwork, pool: Pool, task: TaskData, cfg: SmspConfig,
    record_ids=None, table: SimilarityTable | None = None, eval_at=(),
) -> SmspRun:
    """Similarity table -> neighbor choice -> score summation -> one-shot
    prune -> short fine-tune, with the training-FLOPs ledger attached."""
    if table is None:
        table = build_similarity_table(
            backbone, pool, task.task_id, task.train_x, task.train_y, record_ids
        )
    neighbors = select_neighbors(table, cfg.neighbor_count, cfg.class_disjoint_neighbors, task.classes, pool)
    summed = sum_masks(pool.load_many(neighbors))
    subnet, retained, k = one_shot_prune(backbone, summed, cfg.pruning_ratio)
    result = fine_tune(
        subnet, task, cfg.fine_tune_iterations, cfg.lr_schedule(), cfg.batch_size, cfg.seed, eval_at
    )
    return SmspRun(
        task_id=task.task_id,
        neighbor_ids=neighbors,
        achieved_ratio=k / backbone.n_prunable,
        accuracy=result.accuracy,
        accuracy_at=result.accuracy_at,
        ledger=result.ledger,
        retained=retained,
        subnet_flops=count_flops(subnet),
    )
