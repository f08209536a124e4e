"""Client sampling and per-round subnetwork assignment.

Every planner designates one participant as the largest-subnetwork holder, so
each round trains every supernetwork parameter at least once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .arch import ArchDescriptor, SpaceConfig, largest, random_arch, smallest

DISTRIBUTIONS = ("random", "sandwich", "tracking_sandwich", "fedavg")


@dataclass(frozen=True)
class RoundPlan:
    round: int
    participants: Tuple[int, ...]
    assignment: Dict[int, ArchDescriptor]
    largest_holder: int

    def validate(self, space: SpaceConfig) -> None:
        if self.largest_holder not in self.participants:
            raise ValueError("largest holder is not a participant")
        if set(self.assignment) != set(self.participants):
            raise ValueError("assignment does not match participants")
        if self.assignment[self.largest_holder] != largest(space):
            raise ValueError("largest holder was not assigned the largest subnetwork")


@dataclass
class TrackingState:
    smallest_count: np.ndarray
    largest_count: np.ndarray

    @classmethod
    def fresh(cls, clients: int) -> "TrackingState":
        return cls(np.zeros(clients, dtype=np.int64), np.zeros(clients, dtype=np.int64))

    def copy(self) -> "TrackingState":
        return TrackingState(self.smallest_count.copy(), self.largest_count.copy())

    def to_dict(self) -> dict:
        return {"smallest": self.smallest_count.tolist(), "largest": self.largest_count.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrackingState":
        return cls(np.asarray(d["smallest"], dtype=np.int64), np.asarray(d["largest"], dtype=np.int64))


def participants_per_round(clients: int, participation: float) -> int:
    # small epsilon: 0.29 * 100 evaluates to 28.999999999999996
    return max(int(math.floor(participation * clients + 1e-9)), 1)


def sample_clients(K: int, C: float, rng: np.random.Generator) -> List[int]:
    if K < 1:
        raise ValueError("need at least one client")
    if not 0.0 < C <= 1.0:
        raise ValueError("participation must lie in (0, 1]")
    size = participants_per_round(K, C)
    return sorted(int(k) for k in rng.choice(K, size=size, replace=False))


def _fill(space, participants, fixed: Dict[int, ArchDescriptor], rng) -> Dict[int, ArchDescriptor]:
    return {k: fixed[k] if k in fixed else random_arch(space, rng) for k in participants}


def plan_random(space: SpaceConfig, participants: Sequence[int], rng: np.random.Generator, t: int = 0) -> RoundPlan:
    participants = tuple(participants)
    if not participants:
        raise ValueError("no participants")
    holder = participants[int(rng.integers(len(participants)))]
    assignment = _fill(space, participants, {holder: largest(space)}, rng)
    return RoundPlan(t, participants, assignment, holder)


def plan_sandwich(space: SpaceConfig, participants: Sequence[int], rng: np.random.Generator, t: int = 0) -> RoundPlan:
    participants = tuple(participants)
    if not participants:
        raise ValueError("no participants")
    if len(participants) == 1:
        holder = participants[0]
        return RoundPlan(t, participants, {holder: largest(space)}, holder)
    i, j = rng.choice(len(participants), size=2, replace=False)
    holder, low = participants[int(i)], participants[int(j)]
    assignment = _fill(space, participants, {holder: largest(space), low: smallest(space)}, rng)
    return RoundPlan(t, participants, assignment, holder)


def plan_tracking_sandwich(
    space: SpaceConfig,
    participants: Sequence[int],
    state: TrackingState,
    rng: np.random.Generator,
    t: int = 0,
) -> Tuple[RoundPlan, TrackingState]:
    """Sandwich plan where the bounds go to the participants that saw them least.

    Ties go to the lowest client id. Returns the plan and an updated copy of
    ``state``.
    """
    participants = tuple(participants)
    if not participants:
        raise ValueError("no participants")
    holder = min(participants, key=lambda k: (state.largest_count[k], k))
    fixed = {holder: largest(space)}
    others = [k for k in participants if k != holder]
    low = None
    if others:
        low = min(others, key=lambda k: (state.smallest_count[k], k))
        fixed[low] = smallest(space)
    assignment = _fill(space, participants, fixed, rng)
    new = state.copy()
    new.largest_count[holder] += 1
    if low is not None:
        new.smallest_count[low] += 1
    return RoundPlan(t, participants, assignment, holder), new


def plan_fedavg(space: SpaceConfig, participants: Sequence[int], t: int = 0) -> RoundPlan:
    """Every participant trains the largest subnetwork (plain FedAvg)."""
    participants = tuple(participants)
    if not participants:
        raise ValueError("no participants")
    big = largest(space)
    return RoundPlan(t, participants, {k: big for k in participants}, participants[0])
