"""Named experiment scenarios and their report emission.

Each scenario reads its settings (common section overlaid with its own),
runs deterministically from the seeds in the config, and emits three
files into the output directory: `<name>.csv` (aggregate),
`<name>_tasks.csv` (per-task or per-pair detail), and `<name>.md`
(a markdown rendering of the aggregate table).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .amp import AmpConfig, amp_prune, build_pool_entry
from .baselines import run_random_mask_baseline
from .config import ConfigError, as_bool, as_float, as_int, as_list, scenario_settings
from .data import load_dataset, sample_tasks, task_data, TaskSpec
from .nets import clone_network, load_network
from .optim import LrSchedule
from .pool import Pool
from .report import write_csv, write_markdown
from .selection import (
    SmspConfig,
    fine_tune,
    one_shot_prune,
    pick_neighbors,
    smsp_pipeline,
    sum_masks,
)
from .stats import mean_std, permutation_pvalue
from .tasksim import build_similarity_table, overlap_ratio
from .util import config_hash, derive_seed

__all__ = ["ScenarioResult", "run_scenario", "run_experiment", "SCENARIOS"]


@dataclass
class ScenarioResult:
    name: str
    aggregate_columns: list
    aggregate_rows: list
    detail_columns: list
    detail_rows: list
    notes: str = ""
    files: list = field(default_factory=list)


def _require(settings: dict, key: str) -> str:
    value = settings.get(key, "").strip()
    if not value:
        raise ConfigError(f"scenario requires the {key!r} path")
    return value


def _load_data(settings, key="data"):
    return load_dataset(_require(settings, key))


def _load_backbone(settings):
    net, _meta = load_network(_require(settings, "backbone"))
    return net


def _open_pool(settings, key="pool") -> Pool:
    return Pool(_require(settings, key), create=False)


def _tasks(dataset, size, count, seed):
    return [(spec, task_data(dataset, spec)) for spec in sample_tasks(dataset, size, count, seed)]


def _fmt_classes(classes) -> str:
    return "|".join(str(c) for c in classes)


# ------------------------------------------------------------- scenarios


def scenario_pool_build(settings) -> ScenarioResult:
    data = _load_data(settings)
    backbone = _load_backbone(settings)
    pool = Pool(_require(settings, "pool"))
    pool.register_architecture(backbone.arch)
    chash = config_hash(settings)
    iterations = as_int(settings, "iterations")
    detail = []
    for spec, td in _tasks(data, as_int(settings, "task_size"), as_int(settings, "count"), as_int(settings, "task_seed")):
        cfg = AmpConfig(
            iterations=iterations,
            target_ratio=as_float(settings, "ratio"),
            threshold=as_float(settings, "threshold"),
            l1_weight=as_float(settings, "l1_weight"),
            batch_size=as_int(settings, "batch_size"),
            schedule=LrSchedule(as_float(settings, "lr"), iterations),
            frozen_weights=True,
            seed=spec.seed,
        )
        result = build_pool_entry(backbone, td, cfg)
        rid = pool.save_record(result.record)
        detail.append(
            {
                "task_id": spec.task_id,
                "record_id": rid,
                "classes": _fmt_classes(spec.classes),
                "achieved_ratio": result.record.metadata["achieved_ratio"],
                "converged": result.converged,
                "target_reached_at": result.target_reached_at,
                "accuracy": result.final_accuracy,
                "seed": spec.seed,
                "config_hash": chash,
            }
        )
    achieved = [r["achieved_ratio"] for r in detail]
    accs = [r["accuracy"] for r in detail]
    aggregate = [
        {
            "records": len(detail),
            "mean_achieved_ratio": mean_std(achieved)[0],
            "min_achieved_ratio": min(achieved),
            "mean_accuracy": mean_std(accs)[0],
            "converged": sum(r["converged"] for r in detail),
            "config_hash": chash,
        }
    ]
    return ScenarioResult(
        "pool-build",
        ["records", "mean_achieved_ratio", "min_achieved_ratio", "mean_accuracy", "converged", "config_hash"],
        aggregate,
        ["task_id", "record_id", "classes", "achieved_ratio", "converged", "target_reached_at", "accuracy", "seed", "config_hash"],
        detail,
        notes="Frozen-weight mask training per task; records land in the pool directory.",
    )


def scenario_main_comparison(settings) -> ScenarioResult:
    data = _load_data(settings)
    backbone = _load_backbone(settings)
    pool = _open_pool(settings)
    chash = config_hash(settings)
    seed = as_int(settings, "seed")
    ratio = as_float(settings, "ratio")
    smsp_iters = as_int(settings, "smsp_iterations")
    amp_iters = as_int(settings, "amp_iterations")
    batch = as_int(settings, "batch_size")
    lr = as_float(settings, "lr")
    detail = []
    for spec, td in _tasks(data, as_int(settings, "task_size"), as_int(settings, "test_count"), as_int(settings, "task_seed")):
        table = build_similarity_table(backbone, pool, spec.task_id, td.train_x, td.train_y)
        smsp_cfg = SmspConfig(
            pruning_ratio=ratio,
            neighbor_count=as_int(settings, "neighbors"),
            fine_tune_iterations=smsp_iters,
            batch_size=batch,
            lr=lr,
            class_disjoint_neighbors=as_bool(settings, "class_disjoint"),
            seed=derive_seed(seed, spec.task_id, "smsp"),
        )
        run = smsp_pipeline(backbone, pool, td, smsp_cfg, table=table)
        detail.append(
            {
                "task_id": spec.task_id, "method": "smsp",
                "accuracy": run.accuracy, "flops": run.ledger.cumulative_training_flops,
                "prune_iterations": 0, "train_iterations": smsp_iters,
                "achieved_ratio": run.achieved_ratio,
                "neighbors": _fmt_classes(run.neighbor_ids), "config_hash": chash,
            }
        )
        rnd = run_random_mask_baseline(
            backbone, td, ratio, smsp_iters, batch, LrSchedule(lr, max(smsp_iters, 1)),
            seed=derive_seed(seed, spec.task_id, "random"),
        )
        detail.append(
            {
                "task_id": spec.task_id, "method": "random-mask",
                "accuracy": rnd.accuracy, "flops": rnd.ledger.cumulative_training_flops,
                "prune_iterations": 0, "train_iterations": smsp_iters,
                "achieved_ratio": 1.0 - rnd.retained.mean(),
                "neighbors": "", "config_hash": chash,
            }
        )
        amp_cfg = AmpConfig(
            iterations=amp_iters,
            target_ratio=ratio,
            threshold=as_float(settings, "threshold"),
            l1_weight=as_float(settings, "l1_weight"),
            batch_size=batch,
            schedule=LrSchedule(lr, amp_iters),
            frozen_weights=False,
            seed=derive_seed(seed, spec.task_id, "amp"),
        )
        amp_run = amp_prune(clone_network(backbone), td, amp_cfg)
        detail.append(
            {
                "task_id": spec.task_id, "method": "amp",
                "accuracy": amp_run.final_accuracy, "flops": amp_run.ledger.cumulative_training_flops,
                "prune_iterations": amp_iters, "train_iterations": 0,
                "achieved_ratio": amp_run.record.metadata["achieved_ratio"],
                "neighbors": "", "config_hash": chash,
            }
        )
    aggregate = []
    for method in ("smsp", "amp", "random-mask"):
        rows = [r for r in detail if r["method"] == method]
        acc_mean, acc_std = mean_std([r["accuracy"] for r in rows])
        aggregate.append(
            {
                "method": method, "tasks": len(rows),
                "accuracy_mean": acc_mean, "accuracy_std": acc_std,
                "flops_mean": mean_std([r["flops"] for r in rows])[0],
                "prune_iterations": rows[0]["prune_iterations"],
                "train_iterations": rows[0]["train_iterations"],
                "config_hash": chash,
            }
        )
    return ScenarioResult(
        "main-comparison",
        ["method", "tasks", "accuracy_mean", "accuracy_std", "flops_mean", "prune_iterations", "train_iterations", "config_hash"],
        aggregate,
        ["task_id", "method", "accuracy", "flops", "prune_iterations", "train_iterations", "achieved_ratio", "neighbors", "config_hash"],
        detail,
        notes="Pruning and fine-tuning iteration budgets are reported separately.",
    )


def scenario_size_transfer(settings) -> ScenarioResult:
    data = _load_data(settings)
    backbone = _load_backbone(settings)
    chash = config_hash(settings)
    seed = as_int(settings, "seed")
    pools = {3: Pool(_require(settings, "pool_3"), create=False), 5: Pool(_require(settings, "pool_5"), create=False)}
    detail = []
    for test_size in as_list(settings, "test_sizes", int):
        tasks = _tasks(data, test_size, as_int(settings, "test_count"), derive_seed(as_int(settings, "task_seed"), test_size))
        for pool_size, pool in sorted(pools.items()):
            for spec, td in tasks:
                cfg = SmspConfig(
                    pruning_ratio=as_float(settings, "ratio"),
                    neighbor_count=as_int(settings, "neighbors"),
                    fine_tune_iterations=as_int(settings, "smsp_iterations"),
                    batch_size=as_int(settings, "batch_size"),
                    lr=as_float(settings, "lr"),
                    class_disjoint_neighbors=as_bool(settings, "class_disjoint"),
                    seed=derive_seed(seed, spec.task_id, "smsp", pool_size),
                )
                run = smsp_pipeline(backbone, pool, td, cfg)
                detail.append(
                    {
                        "pool_task_size": pool_size, "test_task_size": test_size,
                        "task_id": spec.task_id, "accuracy": run.accuracy, "config_hash": chash,
                    }
                )
    aggregate = []
    for pool_size in sorted(pools):
        for test_size in as_list(settings, "test_sizes", int):
            rows = [
                r for r in detail
                if r["pool_task_size"] == pool_size and r["test_task_size"] == test_size
            ]
            acc_mean, acc_std = mean_std([r["accuracy"] for r in rows])
            aggregate.append(
                {
                    "pool_task_size": pool_size, "test_task_size": test_size,
                    "tasks": len(rows), "accuracy_mean": acc_mean, "accuracy_std": acc_std,
                    "config_hash": chash,
                }
            )
    return ScenarioResult(
        "size-transfer",
        ["pool_task_size", "test_task_size", "tasks", "accuracy_mean", "accuracy_std", "config_hash"],
        aggregate,
        ["pool_task_size", "test_task_size", "task_id", "accuracy", "config_hash"],
        detail,
    )


def scenario_ratio_transfer(settings) -> ScenarioResult:
    data = _load_data(settings)
    backbone = _load_backbone(settings)
    pool = _open_pool(settings)
    chash = config_hash(settings)
    seed = as_int(settings, "seed")
    ratios = sorted(as_list(settings, "ratios", float))
    iters = as_int(settings, "smsp_iterations")
    batch = as_int(settings, "batch_size")
    lr = as_float(settings, "lr")
    detail = []
    for spec, td in _tasks(data, as_int(settings, "task_size"), as_int(settings, "test_count"), as_int(settings, "task_seed")):
        table = build_similarity_table(backbone, pool, spec.task_id, td.train_x, td.train_y)
        neighbors = pick_neighbors(
            table.rows, as_int(settings, "neighbors"), as_bool(settings, "class_disjoint"), spec.classes, pool
        )
        summed = sum_masks(pool.load_many(neighbors))
        retained_by_ratio = {}
        for ratio in ratios:
            subnet, retained, k = one_shot_prune(backbone, summed, ratio)
            retained_by_ratio[ratio] = retained
            result = fine_tune(
                subnet, td, iters, LrSchedule(lr, max(iters, 1)), batch,
                derive_seed(seed, spec.task_id, "smsp", ratio),
            )
            rnd = run_random_mask_baseline(
                backbone, td, ratio, iters, batch, LrSchedule(lr, max(iters, 1)),
                seed=derive_seed(seed, spec.task_id, "random", ratio),
            )
            detail.append(
                {
                    "ratio": ratio, "method": "smsp", "task_id": spec.task_id,
                    "accuracy": result.accuracy, "achieved_ratio": k / backbone.n_prunable,
                    "nested_ok": None, "config_hash": chash,
                }
            )
            detail.append(
                {
                    "ratio": ratio, "method": "random-mask", "task_id": spec.task_id,
                    "accuracy": rnd.accuracy, "achieved_ratio": 1.0 - rnd.retained.mean(),
                    "nested_ok": None, "config_hash": chash,
                }
            )
        # a single summed-score vector must give nested retention across ratios
        nested = all(
            bool(np.all(retained_by_ratio[hi] <= retained_by_ratio[lo]))
            for lo, hi in zip(ratios, ratios[1:])
        )
        for row in detail:
            if row["task_id"] == spec.task_id and row["method"] == "smsp":
                row["nested_ok"] = nested
    aggregate = []
    for ratio in ratios:
        for method in ("smsp", "random-mask"):
            rows = [r for r in detail if r["ratio"] == ratio and r["method"] == method]
            acc_mean, acc_std = mean_std([r["accuracy"] for r in rows])
            agg = {
                "ratio": ratio, "method": method, "tasks": len(rows),
                "accuracy_mean": acc_mean, "accuracy_std": acc_std, "config_hash": chash,
            }
            if method == "smsp":
                agg["nested_all"] = all(r["nested_ok"] for r in rows)
            else:
                agg["nested_all"] = None
            aggregate.append(agg)
    return ScenarioResult(
        "ratio-transfer",
        ["ratio", "method", "tasks", "accuracy_mean", "accuracy_std", "nested_all", "config_hash"],
        aggregate,
        ["ratio", "method", "task_id", "accuracy", "achieved_ratio", "nested_ok", "config_hash"],
        detail,
        notes="The pool keeps its build-time ratio; only the one-shot cut moves.",
    )


def scenario_unseen_distribution(settings) -> ScenarioResult:
    shifted = _load_data(settings, "shifted_data")
    backbone = _load_backbone(settings)
    pool = _open_pool(settings)
    chash = config_hash(settings)
    seed = as_int(settings, "seed")
    ratio = as_float(settings, "ratio")
    iters = as_int(settings, "smsp_iterations")
    batch = as_int(settings, "batch_size")
    lr = as_float(settings, "lr")
    detail = []
    for spec, td in _tasks(shifted, as_int(settings, "task_size"), as_int(settings, "test_count"), as_int(settings, "task_seed")):
        cfg = SmspConfig(
            pruning_ratio=ratio,
            neighbor_count=as_int(settings, "neighbors"),
            fine_tune_iterations=iters,
            batch_size=batch,
            lr=lr,
            class_disjoint_neighbors=False,  # shifted class ids are a new label space
            seed=derive_seed(seed, spec.task_id, "smsp"),
        )
        run = smsp_pipeline(backbone, pool, td, cfg)
        rnd = run_random_mask_baseline(
            backbone, td, ratio, iters, batch, LrSchedule(lr, max(iters, 1)),
            seed=derive_seed(seed, spec.task_id, "random"),
        )
        detail.append({"task_id": spec.task_id, "method": "smsp", "accuracy": run.accuracy, "config_hash": chash})
        detail.append({"task_id": spec.task_id, "method": "random-mask", "accuracy": rnd.accuracy, "config_hash": chash})
    aggregate = []
    for method in ("smsp", "random-mask"):
        rows = [r for r in detail if r["method"] == method]
        acc_mean, acc_std = mean_std([r["accuracy"] for r in rows])
        aggregate.append(
            {"method": method, "tasks": len(rows), "accuracy_mean": acc_mean, "accuracy_std": acc_std, "config_hash": chash}
        )
    return ScenarioResult(
        "unseen-distribution",
        ["method", "tasks", "accuracy_mean", "accuracy_std", "config_hash"],
        aggregate,
        ["task_id", "method", "accuracy", "config_hash"],
        detail,
        notes="Tasks come from the shifted dataset, which neither the backbone nor the pool ever saw.",
    )


def scenario_neighbor_ablation(settings) -> ScenarioResult:
    data = _load_data(settings)
    backbone = _load_backbone(settings)
    pool = _open_pool(settings)
    chash = config_hash(settings)
    seed = as_int(settings, "seed")
    counts = as_list(settings, "neighbor_counts", int)
    detail = []
    for spec, td in _tasks(data, as_int(settings, "task_size"), as_int(settings, "test_count"), as_int(settings, "task_seed")):
        table = build_similarity_table(backbone, pool, spec.task_id, td.train_x, td.train_y)
        for m in counts:
            cfg = SmspConfig(
                pruning_ratio=as_float(settings, "ratio"),
                neighbor_count=m,
                fine_tune_iterations=as_int(settings, "smsp_iterations"),
                batch_size=as_int(settings, "batch_size"),
                lr=as_float(settings, "lr"),
                class_disjoint_neighbors=as_bool(settings, "class_disjoint"),
                seed=derive_seed(seed, spec.task_id, "smsp", m),
            )
            run = smsp_pipeline(backbone, pool, td, cfg, table=table)
            detail.append(
                {"neighbor_count": m, "task_id": spec.task_id, "accuracy": run.accuracy, "config_hash": chash}
            )
    aggregate = []
    for m in counts:
        rows = [r for r in detail if r["neighbor_count"] == m]
        acc_mean, acc_std = mean_std([r["accuracy"] for r in rows])
        aggregate.append(
            {"neighbor_count": m, "tasks": len(rows), "accuracy_mean": acc_mean, "accuracy_std": acc_std, "config_hash": chash}
        )
    return ScenarioResult(
        "neighbor-ablation",
        ["neighbor_count", "tasks", "accuracy_mean", "accuracy_std", "config_hash"],
        aggregate,
        ["neighbor_count", "task_id", "accuracy", "config_hash"],
        detail,
    )


def scenario_similarity_ablation(settings) -> ScenarioResult:
    data = _load_data(settings)
    backbone = _load_backbone(settings)
    pool = _open_pool(settings)
    chash = config_hash(settings)
    seed = as_int(settings, "seed")
    marks = sorted(as_list(settings, "iteration_marks", int))
    neighbors = as_int(settings, "neighbors")
    disjoint = as_bool(settings, "class_disjoint")
    detail = []
    for spec, td in _tasks(data, as_int(settings, "task_size"), as_int(settings, "test_count"), as_int(settings, "task_seed")):
        table = build_similarity_table(backbone, pool, spec.task_id, td.train_x, td.train_y)
        for group in (1, 3):
            rows = table.groups[group - 1]
            eligible = []
            for rid, _score in rows:
                if disjoint and set(spec.classes) & set(pool.load_record(rid).class_labels):
                    continue
                eligible.append(rid)
            if not eligible:
                raise ValueError(f"similarity group {group} has no eligible records for {spec.task_id}")
            m_used = min(neighbors, len(eligible))
            chosen = pick_neighbors(rows, m_used, disjoint, spec.classes, pool)
            summed = sum_masks(pool.load_many(chosen))
            subnet, _retained, _k = one_shot_prune(backbone, summed, as_float(settings, "ratio"))
            result = fine_tune(
                subnet, td, max(marks),
                LrSchedule(as_float(settings, "lr"), max(marks)),
                as_int(settings, "batch_size"),
                derive_seed(seed, spec.task_id, "group", group),
                eval_at=set(marks),
            )
            for j in marks:
                detail.append(
                    {
                        "similarity_group": group, "iterations": j, "task_id": spec.task_id,
                        "accuracy": result.accuracy_at[j], "neighbors_used": m_used, "config_hash": chash,
                    }
                )
    aggregate = []
    for group in (1, 3):
        for j in marks:
            rows = [r for r in detail if r["similarity_group"] == group and r["iterations"] == j]
            acc_mean, acc_std = mean_std([r["accuracy"] for r in rows])
            aggregate.append(
                {
                    "similarity_group": group, "iterations": j, "tasks": len(rows),
                    "accuracy_mean": acc_mean, "accuracy_std": acc_std, "config_hash": chash,
                }
            )
    return ScenarioResult(
        "similarity-ablation",
        ["similarity_group", "iterations", "tasks", "accuracy_mean", "accuracy_std", "config_hash"],
        aggregate,
        ["similarity_group", "iterations", "task_id", "accuracy", "neighbors_used", "config_hash"],
        detail,
        notes="Group 1 holds the most similar pool records, group 3 the least similar.",
    )


def scenario_overlap_analysis(settings) -> ScenarioResult:
    data = _load_data(settings)
    backbone = _load_backbone(settings)
    pool_key = "analysis_pool" if settings.get("analysis_pool", "").strip() else "pool"
    pool = _open_pool(settings, pool_key)
    chash = config_hash(settings)
    seed = as_int(settings, "seed")
    ids = pool.query(arch_id=backbone.arch.arch_id)
    if len(ids) < 2:
        raise ConfigError("overlap analysis needs at least two pool records")
    ids = ids[: as_int(settings, "max_targets")]
    n = backbone.n_prunable
    ks = sorted({max(1, round(frac * n)) for frac in as_list(settings, "k_fractions", float)})
    min_positive = min(int((pool.load_record(rid).scores > 0).sum()) for rid in ids)
    if max(ks) > min_positive:
        raise ConfigError(
            f"top-{max(ks)} is invalid: some record keeps only {min_positive} positive scores;"
            " build the analysis pool at a lower pruning ratio"
        )
    detail = []
    for rid in ids:
        rec_m = pool.load_record(rid)
        spec = TaskSpec(f"rec-{rid[:8]}", rec_m.class_labels, 0)
        td = task_data(data, spec)
        others = [other for other in ids if other != rid]
        table = build_similarity_table(backbone, pool, spec.task_id, td.train_x, td.train_y, record_ids=others)
        for gi, rows in enumerate(table.groups):
            for other_id, score in rows:
                rec_n = pool.load_record(other_id)
                for k in ks:
                    detail.append(
                        {
                            "target_record": rid, "source_record": other_id,
                            "similarity_group": gi + 1, "k": k,
                            "overlap": overlap_ratio(rec_m, rec_n, k),
                            "leep": score.value, "config_hash": chash,
                        }
                    )
    aggregate = []
    for k in ks:
        values = {
            g: [r["overlap"] for r in detail if r["k"] == k and r["similarity_group"] == g]
            for g in (1, 2, 3)
        }
        pval = permutation_pvalue(
            values[1], values[3], as_int(settings, "permutations"), derive_seed(seed, "perm", k)
        ) if values[1] and values[3] else None
        for g in (1, 2, 3):
            if not values[g]:
                continue
            aggregate.append(
                {
                    "k": k, "similarity_group": g, "pairs": len(values[g]),
                    "mean_overlap": mean_std(values[g])[0],
                    "pvalue_group1_gt_group3": pval if g == 1 else None,
                    "config_hash": chash,
                }
            )
    return ScenarioResult(
        "overlap-analysis",
        ["k", "similarity_group", "pairs", "mean_overlap", "pvalue_group1_gt_group3", "config_hash"],
        aggregate,
        ["target_record", "source_record", "similarity_group", "k", "overlap", "leep", "config_hash"],
        detail,
        notes="Each pool record in turn is the target; its task data scores the remaining records.",
    )


SCENARIOS = {
    "pool-build": scenario_pool_build,
    "main-comparison": scenario_main_comparison,
    "size-transfer": scenario_size_transfer,
    "ratio-transfer": scenario_ratio_transfer,
    "unseen-distribution": scenario_unseen_distribution,
    "neighbor-ablation": scenario_neighbor_ablation,
    "similarity-ablation": scenario_similarity_ablation,
    "overlap-analysis": scenario_overlap_analysis,
}


def run_scenario(name: str, cfg: dict, out_dir) -> ScenarioResult:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; known: {', '.join(sorted(SCENARIOS))}")
    settings = scenario_settings(cfg, name)
    result = SCENARIOS[name](settings)
    out = Path(out_dir)
    result.files.append(write_csv(out / f"{name}.csv", result.aggregate_columns, result.aggregate_rows))
    result.files.append(write_csv(out / f"{name}_tasks.csv", result.detail_columns, result.detail_rows))
    result.files.append(
        write_markdown(out / f"{name}.md", name, result.aggregate_columns, result.aggregate_rows, result.notes)
    )
    return result


def run_experiment(config_path, name: str, out_dir, seed=None) -> ScenarioResult:
    from .config import load_config

    cfg = load_config(config_path)
    if seed is not None:
        cfg["common"]["seed"] = str(seed)
    return run_scenario(name, cfg, out_dir)
