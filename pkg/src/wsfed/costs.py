"""Computational and communication cost accounting.

Bytes are raw float64 payload (8 per parameter) per direction, no framing.
Training FLOPs per client are ``TRAIN_FLOPS_FACTOR * flops(arch) * samples``:
one forward plus a backward pass costing twice the forward.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Union

from .arch import SpaceConfig, flops, format_arch, param_count
from .distribution import RoundPlan

BYTES_PER_PARAM = 8
TRAIN_FLOPS_FACTOR = 3


@dataclass(frozen=True)
class CostEntry:
    round: int
    client_id: int
    arch: str
    flops: int
    bytes_down: int
    bytes_up: int


@dataclass
class CostLedger:
    clients: int
    entries: List[CostEntry] = field(default_factory=list)
    rounds: int = 0

    def record_round(
        self,
        space: SpaceConfig,
        plan: RoundPlan,
        samples: Optional[Mapping[int, int]] = None,
    ) -> None:
        """Append one entry per participant; ``samples`` defaults to 1 per client."""
        self.rounds += 1
        for k in plan.participants:
            arch = plan.assignment[k]
            size = BYTES_PER_PARAM * param_count(space, arch)
            n = 1 if samples is None else samples[k]
            self.entries.append(
                CostEntry(
                    plan.round,
                    k,
                    format_arch(space, arch),
                    TRAIN_FLOPS_FACTOR * flops(space, arch) * n,
                    size,
                    size,
                )
            )

    @property
    def total_flops(self) -> int:
        return sum(e.flops for e in self.entries)

    @property
    def total_bytes(self) -> int:
        return sum(e.bytes_down + e.bytes_up for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "clients": self.clients,
            "rounds": self.rounds,
            "entries": [[e.round, e.client_id, e.arch, e.flops, e.bytes_down, e.bytes_up] for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostLedger":
        return cls(d["clients"], [CostEntry(*row) for row in d["entries"]], d["rounds"])


def superfed_avg_comp(ledger: CostLedger) -> float:
    """Total training FLOPs averaged over clients and rounds."""
    if ledger.rounds < 1:
        raise ValueError("ledger has no rounds")
    return ledger.total_flops / (ledger.clients * ledger.rounds)


def superfed_avg_comm(ledger: CostLedger) -> float:
    """Bytes moved per round (download plus upload), averaged over rounds."""
    if ledger.rounds < 1:
        raise ValueError("ledger has no rounds")
    return ledger.total_bytes / ledger.rounds


def ifedavg_comm(family_sizes: Sequence[float], participants: int) -> float:
    """Per-round communication of training each family member with its own FedAvg."""
    if not family_sizes:
        raise ValueError("empty family")
    return 2 * participants * sum(family_sizes)


def ifedavg_comp(family_flops: Sequence[float], samples: int = 1) -> float:
    """Per-round computation of independent FedAvg: the sum over the family."""
    if not family_flops:
        raise ValueError("empty family")
    return TRAIN_FLOPS_FACTOR * samples * sum(family_flops)


REPORT_COLUMNS = ("family_size", "ifedavg_comp", "ifedavg_comm", "superfed_comp", "superfed_comm")


def cost_report(
    family_flops: Sequence[float],
    family_bytes: Sequence[float],
    participants: int,
    ledger: CostLedger,
    samples: int = 1,
) -> List[dict]:
    """One row per prefix of the family (size 1..len); SuperFed columns are constant."""
    sf_comp = superfed_avg_comp(ledger)
    sf_comm = superfed_avg_comm(ledger)
    rows = []
    for size in range(1, len(family_flops) + 1):
        rows.append(
            {
                "family_size": size,
                "ifedavg_comp": ifedavg_comp(family_flops[:size], samples),
                "ifedavg_comm": ifedavg_comm(family_bytes[:size], participants),
                "superfed_comp": sf_comp,
                "superfed_comm": sf_comm,
            }
        )
    return rows


def write_rows(path: Union[str, Path], columns: Iterable[str], rows: Iterable[Mapping]) -> None:
    columns = list(columns)
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in columns})
