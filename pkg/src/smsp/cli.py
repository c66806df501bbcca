"""Command-line front end.

Exit code 0 on success; on failure a single machine-readable JSON line
goes to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .amp import AmpConfig, amp_prune, build_pool_entry
from .autograd import NonFiniteError
from .baselines import run_random_mask_baseline
from .config import ConfigError, load_config, SCENARIO_NAMES
from .data import (
    DataFormatError,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    sample_tasks,
    save_dataset,
    task_data,
)
from .nets import clone_network, desk_cnn, desk_mlp, load_network
from .optim import LrSchedule
from .pool import Pool, PoolError
from .pretrain import pretrain_backbone, save_backbone
from .report import read_csv, write_markdown
from .scenarios import run_scenario
from .selection import SmspConfig, smsp_pipeline
from .util import derive_seed

_HANDLED = (ConfigError, DataFormatError, PoolError, NonFiniteError, ValueError, KeyError, OSError)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smsp-bench", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--classes", type=int, default=20)
    g.add_argument("--per-class", type=int, default=200)
    g.add_argument("--size", type=int, default=16, help="image height and width")
    g.add_argument("--channels", type=int, default=1)
    g.add_argument("--families", type=int, default=5)
    g.add_argument("--archetype-scale", type=float, default=0.24)
    g.add_argument("--class-scale", type=float, default=0.10)
    g.add_argument("--noise", type=float, default=0.12)
    g.add_argument("--shifted", action="store_true", help="remix the same archetypes into new classes")
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("pretrain", help="train the backbone on every base class")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--arch", choices=("cnn", "mlp"), default="cnn")
    t.add_argument("--epochs", type=int, default=12)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--seed", type=int, default=7)
    t.set_defaults(func=_cmd_pretrain)

    b = sub.add_parser("build-pool", help="fill a pool with frozen-weight mask records")
    b.add_argument("--data", required=True)
    b.add_argument("--backbone", required=True)
    b.add_argument("--pool", required=True)
    b.add_argument("--count", type=int, default=60)
    b.add_argument("--task-size", type=int, default=3)
    b.add_argument("--ratio", type=float, default=0.9)
    b.add_argument("--iterations", type=int, default=250)
    b.add_argument("--threshold", type=float, default=0.01)
    b.add_argument("--l1", type=float, default=1.0)
    b.add_argument("--batch-size", type=int, default=32)
    b.add_argument("--lr", type=float, default=0.01)
    b.add_argument("--seed", type=int, default=101)
    b.set_defaults(func=_cmd_build_pool)

    a = sub.add_parser("amp", help="mask-prune one task from scratch")
    _task_flags(a)
    a.add_argument("--ratio", type=float, default=0.9)
    a.add_argument("--iterations", type=int, default=1000)
    a.add_argument("--threshold", type=float, default=0.01)
    a.add_argument("--l1", type=float, default=1.0)
    a.add_argument("--frozen", action="store_true", help="optimise mask scores only")
    a.set_defaults(func=_cmd_amp)

    s = sub.add_parser("smsp", help="one-shot prune one task from pool neighbors")
    _task_flags(s)
    s.add_argument("--pool", required=True)
    s.add_argument("--ratio", type=float, default=0.9)
    s.add_argument("--neighbors", type=int, default=8)
    s.add_argument("--iterations", type=int, default=100)
    s.add_argument("--allow-shared-classes", action="store_true")
    s.set_defaults(func=_cmd_smsp)

    r = sub.add_parser("baseline-random", help="random mask of the same size, same budget")
    _task_flags(r)
    r.add_argument("--ratio", type=float, default=0.9)
    r.add_argument("--iterations", type=int, default=100)
    r.set_defaults(func=_cmd_baseline_random)

    o = sub.add_parser("overlap", help="top-k mask overlap by similarity group")
    o.add_argument("--data", required=True)
    o.add_argument("--backbone", required=True)
    o.add_argument("--pool", required=True)
    o.add_argument("--out", required=True)
    o.add_argument("--k-fracs", default="0.1,0.3")
    o.add_argument("--permutations", type=int, default=5000)
    o.add_argument("--max-targets", type=int, default=60)
    o.add_argument("--seed", type=int, default=7)
    o.set_defaults(func=_cmd_overlap)

    m = sub.add_parser("report", help="re-render markdown tables from scenario CSVs")
    m.add_argument("--runs", required=True, help="directory holding <scenario>.csv files")
    m.add_argument("--scenario", default=None, help="render just one scenario")
    m.set_defaults(func=_cmd_report)

    x = sub.add_parser("run", help="run a named scenario from a config file")
    x.add_argument("scenario", choices=SCENARIO_NAMES)
    x.add_argument("--config", default=None)
    x.add_argument("--out", default="runs")
    x.add_argument("--seed", type=int, default=None)
    x.set_defaults(func=_cmd_run)
    return p


def _task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True)
    p.add_argument("--backbone", required=True)
    p.add_argument("--task-size", type=int, default=3)
    p.add_argument("--task-seed", type=int, default=1)
    p.add_argument("--task-index", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=7)


def _one_task(args):
    dataset = load_dataset(args.data)
    backbone, _ = load_network(args.backbone)
    spec = sample_tasks(dataset, args.task_size, args.task_index + 1, args.task_seed)[args.task_index]
    return dataset, backbone, spec, task_data(dataset, spec)


def _emit(row: dict) -> None:
    print(json.dumps(row, sort_keys=True))


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        num_classes=args.classes,
        samples_per_class=args.per_class,
        height=args.size,
        width=args.size,
        channels=args.channels,
        families=args.families,
        archetype_scale=args.archetype_scale,
        class_scale=args.class_scale,
        noise_scale=args.noise,
        shifted=args.shifted,
    )
    ds = generate_synthetic(spec, args.seed)
    save_dataset(args.out, ds)
    _emit({"written": str(args.out), "samples": int(len(ds.labels)), "classes": ds.num_classes,
           "shifted": args.shifted, "seed": args.seed})
    return 0


def _cmd_pretrain(args) -> int:
    dataset = load_dataset(args.data)
    if args.arch == "cnn":
        arch = desk_cnn(dataset.num_classes, dataset.input_shape)
    else:
        arch = desk_mlp(dataset.num_classes, int(np.prod(dataset.input_shape)))
    net, _history, acc = pretrain_backbone(
        dataset, arch, args.epochs, args.batch_size, args.lr, args.seed, verbose=True
    )
    settings = {
        "arch": args.arch, "epochs": args.epochs, "batch_size": args.batch_size,
        "lr": args.lr, "seed": args.seed, "data": str(args.data),
    }
    save_backbone(args.out, net, dataset, settings, acc)
    _emit({"written": str(args.out), "test_accuracy": acc, "arch_id": arch.arch_id})
    return 0


def _cmd_build_pool(args) -> int:
    dataset = load_dataset(args.data)
    backbone, _ = load_network(args.backbone)
    pool = Pool(args.pool)
    pool.register_architecture(backbone.arch)
    saved = []
    for spec in sample_tasks(dataset, args.task_size, args.count, args.seed):
        td = task_data(dataset, spec)
        cfg = AmpConfig(
            iterations=args.iterations, target_ratio=args.ratio, threshold=args.threshold,
            l1_weight=args.l1, batch_size=args.batch_size,
            schedule=LrSchedule(args.lr, args.iterations), frozen_weights=True, seed=spec.seed,
        )
        result = build_pool_entry(backbone, td, cfg)
        saved.append(pool.save_record(result.record))
    _emit({"pool": str(args.pool), "records": len(saved), "task_size": args.task_size, "ratio": args.ratio})
    return 0


def _cmd_amp(args) -> int:
    _dataset, backbone, spec, td = _one_task(args)
    cfg = AmpConfig(
        iterations=args.iterations, target_ratio=args.ratio, threshold=args.threshold,
        l1_weight=args.l1, batch_size=args.batch_size,
        schedule=LrSchedule(args.lr, args.iterations),
        frozen_weights=args.frozen, seed=derive_seed(args.seed, spec.task_id, "amp"),
    )
    if args.frozen:
        result = build_pool_entry(backbone, td, cfg)
    else:
        result = amp_prune(clone_network(backbone), td, cfg)
    _emit({
        "task_id": spec.task_id, "method": "amp", "accuracy": result.final_accuracy,
        "achieved_ratio": result.record.metadata["achieved_ratio"], "converged": result.converged,
        "flops": result.ledger.cumulative_training_flops, "iterations": result.iterations_used,
    })
    return 0


def _cmd_smsp(args) -> int:
    _dataset, backbone, spec, td = _one_task(args)
    pool = Pool(args.pool, create=False)
    cfg = SmspConfig(
        pruning_ratio=args.ratio, neighbor_count=args.neighbors,
        fine_tune_iterations=args.iterations, batch_size=args.batch_size, lr=args.lr,
        class_disjoint_neighbors=not args.allow_shared_classes,
        seed=derive_seed(args.seed, spec.task_id, "smsp"),
    )
    run = smsp_pipeline(backbone, pool, td, cfg)
    _emit({
        "task_id": spec.task_id, "method": "smsp", "accuracy": run.accuracy,
        "achieved_ratio": run.achieved_ratio, "neighbors": run.neighbor_ids,
        "flops": run.ledger.cumulative_training_flops, "iterations": cfg.fine_tune_iterations,
    })
    return 0


def _cmd_baseline_random(args) -> int:
    _dataset, backbone, spec, td = _one_task(args)
    run = run_random_mask_baseline(
        backbone, td, args.ratio, args.iterations, args.batch_size,
        LrSchedule(args.lr, max(args.iterations, 1)),
        seed=derive_seed(args.seed, spec.task_id, "random"),
    )
    _emit({
        "task_id": spec.task_id, "method": "random-mask", "accuracy": run.accuracy,
        "flops": run.ledger.cumulative_training_flops, "iterations": args.iterations,
    })
    return 0


def _cmd_overlap(args) -> int:
    cfg = load_config(None)
    cfg["common"]["data"] = args.data
    cfg["common"]["backbone"] = args.backbone
    cfg["common"]["pool"] = args.pool
    cfg["common"]["seed"] = str(args.seed)
    cfg["overlap-analysis"]["k_fractions"] = args.k_fracs
    cfg["overlap-analysis"]["permutations"] = str(args.permutations)
    cfg["overlap-analysis"]["max_targets"] = str(args.max_targets)
    result = run_scenario("overlap-analysis", cfg, args.out)
    _emit({"scenario": "overlap-analysis", "files": [str(f) for f in result.files]})
    return 0


def _cmd_report(args) -> int:
    runs = Path(args.runs)
    names = [args.scenario] if args.scenario else sorted(SCENARIO_NAMES)
    written = []
    for name in names:
        csv_path = runs / f"{name}.csv"
        if not csv_path.exists():
            if args.scenario:
                raise ConfigError(f"no CSV for scenario {name!r} under {runs}")
            continue
        rows = read_csv(csv_path)
        columns = list(rows[0].keys()) if rows else []
        written.append(str(write_markdown(runs / f"{name}.md", name, columns, rows)))
    _emit({"rendered": written})
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["common"]["seed"] = str(args.seed)
    result = run_scenario(args.scenario, cfg, args.out)
    _emit({"scenario": args.scenario, "files": [str(f) for f in result.files]})
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except _HANDLED as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
