"""Round-synchronous server loop, checkpoint/resume, and experiment drivers.

Every source of randomness inside a round is derived from
``SeedSequence([seed, round, stream, client])``, so a round's outcome depends
only on the configuration, the round index and the state at the start of the
round. That is what makes resume-from-checkpoint reproduce an uninterrupted
run exactly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .aggregation import ClientUpdate, aggregate_maxnet, aggregate_overlap, beta_at
from .arch import ArchDescriptor, format_arch, largest, parse_arch
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .client import client_update, evaluate
from .config import ExperimentConfig, config_from_dict
from .costs import CostLedger
from .data import ClientPartition, Dataset, dirichlet_partition, load_csv, synth_blobs
from .distribution import (
    RoundPlan,
    TrackingState,
    plan_fedavg,
    plan_random,
    plan_sandwich,
    plan_tracking_sandwich,
    sample_clients,
)
from .supernet import ParamSet, extract, init_supernet

log = logging.getLogger(__name__)

STREAM_SAMPLE = 1
STREAM_PLAN = 2
STREAM_CLIENT = 3
STREAM_PARTITION = 4
STREAM_VALSET = 5
STREAM_NAS = 6

METRIC_COLUMNS = ("round", "arch", "test_accuracy", "beta_t", "comm_bytes_cum", "comp_flops_cum")

ABLATION = {
    "overlap + R": ("random", "overlap"),
    "overlap + S": ("sandwich", "overlap"),
    "overlap + TS": ("tracking_sandwich", "overlap"),
    "Wt β-decay + TS": ("tracking_sandwich", "maxnet"),
}


def derived_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


@dataclass(frozen=True)
class MetricsRow:
    round: int
    arch: str
    test_accuracy: float
    beta_t: Optional[float]
    comm_bytes_cum: int
    comp_flops_cum: int

    def as_csv(self) -> List[str]:
        return [
            str(self.round),
            self.arch,
            repr(self.test_accuracy),
            "" if self.beta_t is None else repr(self.beta_t),
            str(self.comm_bytes_cum),
            str(self.comp_flops_cum),
        ]

    @classmethod
    def from_list(cls, row: Sequence) -> "MetricsRow":
        r, arch, acc, beta, comm, comp = row
        return cls(int(r), arch, float(acc), None if beta in (None, "") else float(beta), int(comm), int(comp))


@dataclass
class RunState:
    round: int
    params: ParamSet
    tracking: TrackingState
    ledger: CostLedger
    metrics: List[MetricsRow] = field(default_factory=list)


@dataclass
class RunResult:
    params: ParamSet
    metrics: List[MetricsRow]
    ledger: CostLedger
    state: RunState


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.data
    if d.kind == "blobs":
        data = synth_blobs(d.classes, d.input_dim, d.per_class, d.spread, cfg.data_seed)
    else:
        data = load_csv(d.path, seed=cfg.data_seed)
    if data.input_dim != cfg.space.input_dim:
        raise ValueError(f"dataset has {data.input_dim} features, space expects {cfg.space.input_dim}")
    if data.num_classes > cfg.space.num_classes:
        raise ValueError(f"dataset has {data.num_classes} classes, space expects {cfg.space.num_classes}")
    return data


def plan_round(cfg: ExperimentConfig, t: int, tracking: TrackingState):
    """Sample round ``t``'s participants and assign subnetworks; returns (plan, tracking)."""
    space = cfg.space
    participants = sample_clients(cfg.clients, cfg.participation, derived_rng(cfg.seed, t, STREAM_SAMPLE))
    rng = derived_rng(cfg.seed, t, STREAM_PLAN)
    if cfg.distribution == "random":
        return plan_random(space, participants, rng, t), tracking
    if cfg.distribution == "sandwich":
        return plan_sandwich(space, participants, rng, t), tracking
    if cfg.distribution == "fedavg":
        return plan_fedavg(space, participants, t), tracking
    return plan_tracking_sandwich(space, participants, tracking, rng, t)


class Simulation:
    """Server state plus the per-round loop for one experiment configuration."""

    def __init__(self, cfg: ExperimentConfig, state: Optional[RunState] = None, data: Optional[Dataset] = None):
        self.cfg = cfg
        self.space = cfg.space
        self.data = build_dataset(cfg) if data is None else data
        self.train = self.data.train()
        self.test = self.data.test()
        if len(self.test) == 0:
            raise ValueError("dataset has no test split")
        self.partitions: List[ClientPartition] = dirichlet_partition(
            self.train.labels, cfg.clients, cfg.alpha, derived_rng(cfg.seed, 0, STREAM_PARTITION)
        )
        self.eval_archs: List[ArchDescriptor] = [parse_arch(self.space, a) for a in cfg.eval_archs]
        self.schedule = cfg.beta_schedule() if cfg.aggregator == "maxnet" else None
        if state is None:
            state = RunState(0, init_supernet(self.space, cfg.seed), TrackingState.fresh(cfg.clients), CostLedger(cfg.clients))
            state.metrics.extend(self._evaluate(state, None))
        elif len(state.tracking.largest_count) != cfg.clients:
            raise ValueError("checkpoint tracking state does not match the client count")
        self.state = state

    def _evaluate(self, state: RunState, beta: Optional[float]) -> List[MetricsRow]:
        return [
            MetricsRow(
                state.round,
                format_arch(self.space, a),
                evaluate(self.space, state.params, a, self.test),
                beta,
                state.ledger.total_bytes,
                state.ledger.total_flops,
            )
            for a in self.eval_archs
        ]

    def plan(self, t: int, tracking: TrackingState):
        return plan_round(self.cfg, t, tracking)

    def step(self) -> RoundPlan:
        cfg, space, st = self.cfg, self.space, self.state
        t = st.round + 1
        plan, tracking = self.plan(t, st.tracking)
        plan.validate(space)

        updates = []
        for k in plan.participants:
            arch = plan.assignment[k]
            part = self.partitions[k]
            w = client_update(
                space, part, self.train, extract(space, st.params, arch), cfg.local,
                derived_rng(cfg.seed, t, STREAM_CLIENT, k), round_=t,
            )
            updates.append(ClientUpdate(k, arch, w, part.n_k))

        beta = None
        if cfg.aggregator == "maxnet":
            beta = beta_at(self.schedule, t)
            params = aggregate_maxnet(space, st.params, updates, plan.largest_holder, beta)
        else:
            params = aggregate_overlap(space, st.params, updates)

        ledger = st.ledger
        ledger.record_round(space, plan, {k: cfg.local.local_epochs * self.partitions[k].n_k for k in plan.participants})
        self.state = RunState(t, params, tracking, ledger, st.metrics)
        if t % cfg.eval_every == 0 or t == cfg.rounds:
            self.state.metrics.extend(self._evaluate(self.state, beta))
        log.debug("round %d done: holder=%d", t, plan.largest_holder)
        return plan

    def run(self, until: Optional[int] = None) -> RunResult:
        stop = self.cfg.rounds if until is None else min(until, self.cfg.rounds)
        while self.state.round < stop:
            self.step()
        st = self.state
        return RunResult(st.params, list(st.metrics), st.ledger, st)


def run(cfg: ExperimentConfig, resume: Optional[RunState] = None, until: Optional[int] = None) -> RunResult:
    return Simulation(cfg, resume).run(until)


def save_checkpoint(path: Union[str, Path], cfg: ExperimentConfig, state: RunState) -> None:
    meta = {
        "round": state.round,
        "config": cfg.to_dict(),
        "rng": {
            "master_seed": cfg.seed,
            "derivation": "SeedSequence([seed, round, stream, client])",
            "next_round": state.round + 1,
        },
        "tracking": state.tracking.to_dict(),
        "ledger": state.ledger.to_dict(),
        "metrics": [m.as_csv() for m in state.metrics],
    }
    write_checkpoint(path, cfg.space, state.params, meta)


def load_checkpoint(path: Union[str, Path], cfg: Optional[ExperimentConfig] = None):
    """Return ``(config, state)``. With ``cfg`` given, its space and seed must match."""
    space, params, manifest = read_checkpoint(path, None if cfg is None else cfg.space)
    try:
        stored_cfg = config_from_dict(manifest["config"])
        state = RunState(
            int(manifest["round"]),
            params,
            TrackingState.from_dict(manifest["tracking"]),
            CostLedger.from_dict(manifest["ledger"]),
            [MetricsRow.from_list(r) for r in manifest["metrics"]],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: corrupt manifest ({e})") from None
    if cfg is not None and cfg.seed != manifest["rng"]["master_seed"]:
        raise CheckpointError(f"{path}: checkpoint seed {manifest['rng']['master_seed']} != configured seed {cfg.seed}")
    return (stored_cfg if cfg is None else cfg), state


def write_metrics(path: Union[str, Path], rows: Sequence[MetricsRow], extra: Optional[Dict[str, str]] = None) -> None:
    extra = extra or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(extra) + list(METRIC_COLUMNS))
        for r in rows:
            w.writerow(list(extra.values()) + r.as_csv())


def final_accuracy(metrics: Sequence[MetricsRow], arch_text: str) -> float:
    last = max(m.round for m in metrics)
    return next(m.test_accuracy for m in metrics if m.round == last and m.arch == arch_text)


def lr_grid(cfg: ExperimentConfig, lr_values: Sequence[float]) -> List[dict]:
    """FedAvg on the largest subnetwork once per learning rate."""
    if not lr_values:
        raise ValueError("no learning rates given")
    big = format_arch(cfg.space, largest(cfg.space))
    rows = []
    for lr in lr_values:
        c = replace(
            cfg,
            distribution="fedavg",
            aggregator="overlap",
            eval_archs=(big,),
            local=replace(cfg.local, learning_rate=float(lr)),
        )
        res = run(c)
        rows.append(
            {
                "learning_rate": float(lr),
                "round0_accuracy": res.metrics[0].test_accuracy,
                "final_accuracy": final_accuracy(res.metrics, big),
            }
        )
    return rows


def compare_ablation(cfg: ExperimentConfig, seeds: Sequence[int]) -> List[tuple]:
    """Run the four distribution/aggregation combinations; rows are (label, seed, MetricsRow)."""
    out = []
    for label, (dist, agg) in ABLATION.items():
        for s in seeds:
            res = run(replace(cfg, distribution=dist, aggregator=agg, seed=int(s)))
            out.extend((label, int(s), m) for m in res.metrics)
    return out
