"""Server-side merging of overlapping subnetwork updates.

Both aggregators compute, per parameter index ``i``::

    W_next[i] = sum_k lam_k n_k w_k[i] / sum_k lam_k n_k      (k covering i)

and keep ``W_t[i]`` where no client covers ``i``. Coverage is tracked with an
integer hit count rather than by testing the weighted sum against zero, so a
covered parameter whose average is exactly 0.0 is not reverted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .arch import ArchDescriptor, SpaceConfig, largest, mask
from .distribution import participants_per_round
from .supernet import ParamSet, SubnetWeights, copy_params, superimpose


@dataclass
class ClientUpdate:
    client_id: int
    arch: ArchDescriptor
    weights: SubnetWeights
    n_k: int

    def __post_init__(self):
        if self.n_k < 1:
            raise ValueError(f"client {self.client_id}: n_k must be >= 1")
        if self.weights.arch != self.arch:
            raise ValueError(f"client {self.client_id}: weights do not match arch")


DECAY_KINDS = ("constant", "linear", "cosine")


@dataclass(frozen=True)
class BetaSchedule:
    beta0: float = 0.9
    beta_end: float = 0.125
    decay_kind: str = "cosine"
    decay_rounds: int = 1

    def __post_init__(self):
        if self.decay_kind not in DECAY_KINDS:
            raise ValueError(f"decay_kind must be one of {DECAY_KINDS}")
        if not (0.0 < self.beta_end <= self.beta0 <= 1.0):
            raise ValueError("need 0 < beta_end <= beta0 <= 1")
        if self.decay_rounds < 1:
            raise ValueError("decay_rounds must be >= 1")

    @classmethod
    def default(cls, clients: int, participation: float, rounds: int, **overrides) -> "BetaSchedule":
        """beta0=0.9, cosine decay over 80% of ``rounds`` down to ``1/|S_t|``."""
        kw = dict(
            beta0=0.9,
            beta_end=1.0 / participants_per_round(clients, participation),
            decay_kind="cosine",
            decay_rounds=max(1, int(round(0.8 * rounds))),
        )
        kw.update(overrides)
        return cls(**kw)


def beta_at(schedule: BetaSchedule, t: int) -> float:
    if t < 1:
        raise ValueError("rounds are numbered from 1")
    b0, be, D = schedule.beta0, schedule.beta_end, schedule.decay_rounds
    if schedule.decay_kind == "constant":
        return b0
    frac = min((t - 1) / (D - 1), 1.0) if D > 1 else 1.0
    if frac == 0.0:
        return b0
    if frac == 1.0:
        return be
    if schedule.decay_kind == "linear":
        return b0 - (b0 - be) * frac
    return be + (b0 - be) * 0.5 * (1.0 + math.cos(math.pi * frac))


def coverage(
    space: SpaceConfig,
    updates: Sequence[ClientUpdate],
    lambdas: Optional[Sequence[float]] = None,
) -> Tuple[ParamSet, Dict[str, np.ndarray]]:
    """Per index, ``sum lam_k n_k`` over covering clients and the integer hit count."""
    if not updates:
        raise ValueError("no updates")
    lambdas = [1.0] * len(updates) if lambdas is None else list(lambdas)
    shapes = space.tensor_shapes()
    weight = {k: np.zeros(s) for k, s in shapes.items()}
    hits = {k: np.zeros(s, dtype=np.int64) for k, s in shapes.items()}
    for u, lam in zip(updates, lambdas):
        for name, sl in mask(space, u.arch).covered():
            weight[name][sl] += lam * u.n_k
            hits[name][sl] += 1
    return weight, hits


def _weighted_merge(
    space: SpaceConfig,
    W_t: Mapping[str, np.ndarray],
    updates: Sequence[ClientUpdate],
    lambdas: Sequence[float],
) -> ParamSet:
    for u in updates:
        for name, v in u.weights.tensors.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"client {u.client_id}: non-finite values in {name}")
    shapes = space.tensor_shapes()
    total = {k: np.zeros(s) for k, s in shapes.items()}
    for u, lam in zip(updates, lambdas):
        scale = lam * u.n_k
        for name, sl in mask(space, u.arch).covered():
            total[name][sl] += scale * u.weights.tensors[name]
    count, hits = coverage(space, updates, lambdas)
    out = copy_params(W_t)
    for name in shapes:
        hit = hits[name] > 0
        out[name][hit] = total[name][hit] / count[name][hit]
    return out


def aggregate_overlap(space: SpaceConfig, W_t: Mapping[str, np.ndarray], updates: Sequence[ClientUpdate]) -> ParamSet:
    """Average by overlap cardinality, weighting each client by its sample count."""
    if not updates:
        raise ValueError("no updates")
    big = largest(space)
    if not any(u.arch == big for u in updates):
        raise ValueError("round has no client training the largest subnetwork")
    return _weighted_merge(space, W_t, updates, [1.0] * len(updates))


def aggregate_maxnet(
    space: SpaceConfig,
    W_t: Mapping[str, np.ndarray],
    updates: Sequence[ClientUpdate],
    holder: int,
    beta_t: float,
) -> ParamSet:
    """Weighted shared-parameter averaging favouring the largest-subnetwork holder.

    The holder gets weight ``beta_t``; every other participant gets
    ``(1 - beta_t) / (|S_t| - 1)``. Other clients that happen to hold the
    largest architecture are treated as ordinary participants.
    """
    if not updates:
        raise ValueError("no updates")
    if not 0.0 < beta_t <= 1.0:
        raise ValueError("beta_t must lie in (0, 1]")
    pos = [i for i, u in enumerate(updates) if u.client_id == holder]
    if len(pos) != 1:
        raise ValueError(f"holder {holder} must appear exactly once among the updates")
    j = pos[0]
    if updates[j].arch != largest(space):
        raise ValueError(f"holder {holder} did not train the largest subnetwork")
    if len(updates) == 1:
        u = updates[0]
        return superimpose(space, W_t, u.arch, u.weights)
    rest = (1.0 - beta_t) / (len(updates) - 1)
    lambdas = [beta_t if i == j else rest for i in range(len(updates))]
    return _weighted_merge(space, W_t, updates, lambdas)
