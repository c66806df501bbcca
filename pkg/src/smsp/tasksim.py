"""Task-to-task similarity and mask-overlap analysis.

Similarity is the log expected empirical prediction: run the target
task's data once through a source model (the shared backbone masked by
a pool record, its logits restricted to the record's classes), build
the empirical joint of target labels and source predictions, and score
the expected label likelihood. Values are <= 0; closer to 0 means more
transferable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import no_grad, stable_softmax
from .data import normalize
from .nets import MaskedNetwork, clone_network, masked_forward
from .pool import Pool, PrunedRecord

__all__ = [
    "LeepScore",
    "SimilarityTable",
    "leep_from_predictions",
    "source_predictions",
    "leep_score",
    "top_k_units",
    "overlap_ratio",
    "build_similarity_table",
]


@dataclass(frozen=True)
class LeepScore:
    value: float
    source_record_id: str
    target_task_id: str
    sample_count: int


@dataclass
class SimilarityTable:
    """Pool records scored against one target task, most similar first.

    groups[0] holds the rows in the top third of the value range,
    groups[2] the bottom third; -inf rows always land in groups[2].
    """

    target_task_id: str
    rows: list  # (record_id, LeepScore), sorted by descending value
    groups: tuple  # three lists partitioning rows


def leep_from_predictions(theta: np.ndarray, labels) -> float:
    """Expected log-likelihood of target labels under the empirical
    label-given-prediction model; -inf when a sample has zero likelihood."""
    theta = np.asarray(theta, np.float64)
    labels = np.asarray(labels)
    if theta.ndim != 2 or len(theta) == 0:
        raise ValueError("theta must be a non-empty (samples, source_classes) matrix")
    if labels.shape != (len(theta),):
        raise ValueError("one label per theta row required")
    if (theta < 0).any():
        raise ValueError("theta must be non-negative")
    _, yidx = np.unique(labels, return_inverse=True)
    n, _ = theta.shape
    joint = np.zeros((yidx.max() + 1, theta.shape[1]))
    np.add.at(joint, yidx, theta)
    joint /= n
    pz = joint.sum(axis=0)
    cond = np.divide(joint, pz, out=np.zeros_like(joint), where=pz > 0)
    s = (cond[yidx] * theta).sum(axis=1)
    if (s <= 0).any():
        return float("-inf")
    return float(np.log(np.minimum(s, 1.0)).mean())


def source_predictions(
    backbone: MaskedNetwork, record: PrunedRecord, images_u8, batch_size: int = 512
) -> np.ndarray:
    """One inference pass: backbone masked by the record's retained set,
    logits restricted to the record's classes, softmaxed row-wise.

    The source model gates units at 1 on the retained set rather than
    using the trained score values: by the time the target ratio is
    reached, absolute scores have been shrunk so far by the sparsity
    term that score-scaled logits are near zero and every prediction
    collapses to uniform. The retained set is what identifies the
    record's sub-network, and the gated sub-network keeps its
    predictive power.
    """
    if record.arch_id != backbone.arch.arch_id:
        raise ValueError(f"record arch {record.arch_id} does not match backbone {backbone.arch.arch_id}")
    net = clone_network(backbone)
    net.set_mask((record.scores != 0).astype(np.float32))
    cols = np.asarray(record.class_labels)
    out = []
    with no_grad():
        for s in range(0, len(images_u8), batch_size):
            logits = masked_forward(net, normalize(images_u8[s : s + batch_size]))
            out.append(stable_softmax(logits.data[:, cols]))
    return np.concatenate(out, axis=0)


def leep_score(
    backbone: MaskedNetwork,
    record: PrunedRecord,
    target_images_u8,
    target_labels,
    target_task_id: str,
) -> LeepScore:
    if len(target_images_u8) == 0:
        raise ValueError("target data is empty")
    theta = source_predictions(backbone, record, target_images_u8)
    value = leep_from_predictions(theta, target_labels)
    return LeepScore(value, record.record_id, target_task_id, len(target_images_u8))


def top_k_units(record: PrunedRecord, k: int) -> np.ndarray:
    """The k units with the highest scores; ties break toward lower index."""
    positive = int((record.scores > 0).sum())
    if not 1 <= k <= positive:
        raise ValueError(f"k must lie in [1, {positive}], got {k}")
    order = np.argsort(-record.scores, kind="stable")
    return order[:k]


def overlap_ratio(rec_m: PrunedRecord, rec_n: PrunedRecord, k: int) -> float:
    """|top-k(m) intersect top-k(n)| / k."""
    if rec_m.arch_id != rec_n.arch_id:
        raise ValueError("overlap requires records of the same architecture")
    top_m = set(top_k_units(rec_m, k).tolist())
    top_n = set(top_k_units(rec_n, k).tolist())
    return len(top_m & top_n) / k


def _assign_groups(rows: list) -> tuple:
    groups = ([], [], [])
    finite = [v for _, sc in rows if np.isfinite(v := sc.value)]
    if not finite:
        for row in rows:
            groups[2].append(row)
        return groups
    top, bottom = max(finite), min(finite)
    width = (top - bottom) / 3.0
    for row in rows:
        v = row[1].value
        if not np.isfinite(v):
            groups[2].append(row)
        elif width == 0.0 or v >= top - width:
            groups[0].append(row)
        elif v >= top - 2.0 * width:
            groups[1].append(row)
        else:
            groups[2].append(row)
    return groups


def build_similarity_table(
    backbone: MaskedNetwork,
    pool: Pool,
    target_task_id: str,
    target_images_u8,
    target_labels,
    record_ids=None,
) -> SimilarityTable:
    """Score every pool record against the target and bucket the scores into
    three equal-width intervals of the value range (empty buckets allowed)."""
    ids = list(record_ids) if record_ids is not None else pool.query(arch_id=backbone.arch.arch_id)
    if not ids:
        raise ValueError("pool holds no records for this architecture")
    rows = []
    for rid in ids:
        rec = pool.load_record(rid)
        rows.append((rid, leep_score(backbone, rec, target_images_u8, target_labels, target_task_id)))
    rows.sort(key=lambda row: (-row[1].value, row[0]))
    return SimilarityTable(target_task_id, rows, _assign_groups(rows))
