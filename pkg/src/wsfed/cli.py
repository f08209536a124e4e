"""Command-line entry point (``wsfed``).

Exit status: 0 on success, 1 on a runtime failure (e.g. client divergence),
2 on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import arch as A
from .checkpoint import CheckpointError
from .client import ClientDivergence, evaluate
from .config import ConfigError, ExperimentConfig, load_config
from .costs import REPORT_COLUMNS, CostLedger, cost_report, write_rows
from .data import class_distribution_report, dirichlet_partition, write_report
from .nas import NasConfig, evolve
from .distribution import TrackingState
from .orchestrator import (
    METRIC_COLUMNS,
    STREAM_NAS,
    STREAM_PARTITION,
    STREAM_VALSET,
    Simulation,
    build_dataset,
    compare_ablation,
    derived_rng,
    load_checkpoint,
    lr_grid,
    plan_round,
    save_checkpoint,
    write_metrics,
)

log = logging.getLogger("wsfed")

# depth patterns of a nine-member family, smallest to largest, with a uniform
# ratio index per member that grows alongside the depth
_FAMILY_DEPTHS = [
    (0, 0, 0, 0), (0, 0, 0, 1), (0, 1, 0, 1), (0, 1, 1, 1), (1, 1, 1, 1),
    (1, 1, 1, 2), (1, 2, 1, 2), (1, 2, 2, 2), (2, 2, 2, 2),
]


class UsageError(Exception):
    pass


def reference_family(space: A.SpaceConfig, size: int = 9) -> List[A.ArchDescriptor]:
    """Nine nested subnetworks from smallest to largest, scaled to ``space``."""
    R = len(space.ratio_choices)
    fam = []
    for i in range(size):
        frac = i / (size - 1) if size > 1 else 1.0
        base = _FAMILY_DEPTHS[round(frac * (len(_FAMILY_DEPTHS) - 1))]
        depths = [round(d / 2 * space.max_extra_depth) for d in (base * space.stages)[: space.stages]]
        ratio = round(frac * (R - 1))
        fam.append(A.make_arch(space, depths, [ratio] * space.num_blocks))
    return fam


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, type=Path, help="TOML experiment config")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsfed", description="Weight-shared federated learning simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the federated training loop")
    _common(p)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.add_argument("--stop-after", type=int, help="stop after this round (checkpoint is still written)")

    p = sub.add_parser("eval", help="evaluate subnetworks of a checkpoint")
    _common(p, config_required=False)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--arch", action="append", default=[], help="descriptor (repeatable)")

    p = sub.add_parser("nas", help="evolutionary search under a FLOPs budget")
    _common(p, config_required=False)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--budget", action="append", type=float, required=True, help="FLOPs bound (repeatable)")

    p = sub.add_parser("cost", help="cost comparison CSV for family sizes 1..9")
    _common(p)

    p = sub.add_parser("partition-report", help="client x class counts CSV")
    _common(p)

    p = sub.add_parser("lr-grid", help="FedAvg learning-rate grid on the largest subnetwork")
    _common(p)
    p.add_argument("--lr", action="append", type=float, required=True, help="learning rate (repeatable)")

    p = sub.add_parser("compare-ablation", help="run the four distribution/aggregation heuristics")
    _common(p)
    p.add_argument("--seeds", default=None, help="comma-separated seeds (default: the config seed)")
    return parser


def _config(args) -> ExperimentConfig:
    return load_config(args.config, args.overrides, args.seed)


def _parse_seeds(text: Optional[str], default: int) -> List[int]:
    if text is None:
        return [default]
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds: expected comma-separated integers, got {text!r}") from None


def cmd_train(args) -> None:
    cfg = _config(args)
    resume = None
    if args.resume is not None:
        cfg, resume = load_checkpoint(args.resume, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    sim = Simulation(cfg, resume)
    res = sim.run(args.stop_after)
    write_metrics(args.out / "metrics.csv", res.metrics)
    save_checkpoint(args.out / "checkpoint.ckpt", cfg, res.state)
    log.info("trained to round %d; wrote %s", res.state.round, args.out)


def _checkpoint_config(args):
    cfg = _config(args) if args.config is not None else None
    return load_checkpoint(args.checkpoint, cfg)


def cmd_eval(args) -> None:
    cfg, state = _checkpoint_config(args)
    texts = args.arch or list(cfg.eval_archs)
    try:
        archs = [A.parse_arch(cfg.space, t) for t in texts]
    except ValueError as e:
        raise UsageError(f"--arch: {e}") from None
    test = build_dataset(cfg).test()
    rows = [
        {"round": state.round, "arch": A.format_arch(cfg.space, a), "test_accuracy": evaluate(cfg.space, state.params, a, test),
         "flops": A.flops(cfg.space, a), "params": A.param_count(cfg.space, a)}
        for a in archs
    ]
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows(args.out / "eval.csv", ["round", "arch", "test_accuracy", "flops", "params"], rows)


def cmd_nas(args) -> None:
    cfg, state = _checkpoint_config(args)
    test = build_dataset(cfg).test()
    n = cfg.nas
    val_size = n.eval_subset_size or len(test)
    perm = derived_rng(cfg.seed, 0, STREAM_VALSET).permutation(len(test))
    valset = test.subset(np.sort(perm[:val_size]))
    min_flops = A.flops(cfg.space, A.smallest(cfg.space))
    for b in args.budget:
        if b < min_flops:
            raise UsageError(f"--budget {b}: below the smallest subnetwork's FLOPs ({min_flops})")
    rows = []
    for b in args.budget:
        nc = NasConfig(b, n.population, n.generations, n.parent_fraction, n.mutation_prob)
        res = evolve(cfg.space, state.params, valset, nc, derived_rng(cfg.seed, 0, STREAM_NAS))
        rows.append(
            {
                "constraint": b,
                "accuracy": evaluate(cfg.space, state.params, res.best_arch, test),
                "flops": A.flops(cfg.space, res.best_arch),
                "descriptor": A.format_arch(cfg.space, res.best_arch),
            }
        )
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows(args.out / "nas.csv", ["constraint", "accuracy", "flops", "descriptor"], rows)
    meta = {
        "checkpoint": str(args.checkpoint),
        "round": state.round,
        "fitness": f"accuracy on {val_size} seeded test-split samples",
        "reported_accuracy": f"accuracy on the full test split ({len(test)} samples)",
        "flops_unit": "per-sample forward FLOPs (2 x multiply-accumulates)",
        "seed": cfg.seed,
    }
    (args.out / "nas_meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def cmd_cost(args) -> None:
    cfg = _config(args)
    ledger = CostLedger(cfg.clients)
    tracking = TrackingState.fresh(cfg.clients)
    for t in range(1, cfg.rounds + 1):
        plan, tracking = plan_round(cfg, t, tracking)
        ledger.record_round(cfg.space, plan)
    fam = reference_family(cfg.space)
    rows = cost_report(
        [A.flops(cfg.space, a) for a in fam],
        [8 * A.param_count(cfg.space, a) for a in fam],
        cfg.participants,
        ledger,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows(args.out / "cost.csv", REPORT_COLUMNS, rows)


def cmd_partition_report(args) -> None:
    cfg = _config(args)
    train = build_dataset(cfg).train()
    parts = dirichlet_partition(train.labels, cfg.clients, cfg.alpha, derived_rng(cfg.seed, 0, STREAM_PARTITION))
    args.out.mkdir(parents=True, exist_ok=True)
    write_report(args.out / "partition.csv", class_distribution_report(parts, train.labels, cfg.space.num_classes))


def cmd_lr_grid(args) -> None:
    cfg = _config(args)
    rows = lr_grid(cfg, args.lr)
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows(args.out / "lr_grid.csv", ["learning_rate", "round0_accuracy", "final_accuracy"], rows)


def cmd_compare_ablation(args) -> None:
    cfg = _config(args)
    seeds = _parse_seeds(args.seeds, cfg.seed)
    rows = compare_ablation(cfg, seeds)
    args.out.mkdir(parents=True, exist_ok=True)
    with (args.out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["heuristic", "seed", *METRIC_COLUMNS])
        for label, seed, m in rows:
            w.writerow([label, seed, *m.as_csv()])


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "nas": cmd_nas,
    "cost": cmd_cost,
    "partition-report": cmd_partition_report,
    "lr-grid": cmd_lr_grid,
    "compare-ablation": cmd_compare_ablation,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, UsageError) as e:
        print(f"wsfed: error: {e}", file=sys.stderr)
        return 2
    except (ClientDivergence, CheckpointError, OSError, ValueError) as e:
        print(f"wsfed: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
