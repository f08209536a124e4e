"""Evolutionary search for the most accurate subnetwork under a FLOPs budget.

Candidates are scored on a validation set with weights taken straight from
the trained supernetwork (no retraining). Selection is elitist truncation:
the top ``parent_fraction`` survive and the rest of the population is refilled
with mutated crossovers of random parent pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .arch import (
    ArchDescriptor,
    SpaceConfig,
    enumerate_family,
    family_size,
    flops,
    make_arch,
    random_arch,
    smallest,
)
from .client import evaluate
from .data import Dataset

MAX_RESAMPLE = 100


@dataclass(frozen=True)
class NasConfig:
    flops_budget: float
    population: int = 64
    generations: int = 20
    parent_fraction: float = 0.25
    mutation_prob: float = 0.1
    eval_subset_size: Optional[int] = None

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if not 0.0 < self.parent_fraction < 1.0:
            raise ValueError("parent_fraction must lie in (0, 1)")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")


def mutate(space: SpaceConfig, arch: ArchDescriptor, p: float, rng: np.random.Generator) -> ArchDescriptor:
    depths = list(arch.depths)
    ratios = list(arch.ratios)
    for i in range(len(depths)):
        if rng.random() < p:
            depths[i] = int(rng.integers(space.max_extra_depth + 1))
    for i in range(len(ratios)):
        if rng.random() < p:
            ratios[i] = int(rng.integers(len(space.ratio_choices)))
    return make_arch(space, depths, ratios)


def crossover(space: SpaceConfig, a: ArchDescriptor, b: ArchDescriptor, rng: np.random.Generator) -> ArchDescriptor:
    pick_d = rng.random(len(a.depths)) < 0.5
    pick_r = rng.random(len(a.ratios)) < 0.5
    depths = [x if t else y for x, y, t in zip(a.depths, b.depths, pick_d)]
    ratios = [x if t else y for x, y, t in zip(a.ratios, b.ratios, pick_r)]
    return make_arch(space, depths, ratios)


def rank_key(space: SpaceConfig, arch: ArchDescriptor, acc: float):
    """Sort key, best first: higher accuracy, then fewer FLOPs, then descriptor order."""
    return (-acc, flops(space, arch), arch.depths, arch.ratios)


@dataclass
class SearchResult:
    best_arch: ArchDescriptor
    best_accuracy: float
    history: List[float] = field(default_factory=list)
    scores: Dict[ArchDescriptor, float] = field(default_factory=dict)


def _initial_population(space: SpaceConfig, cfg: NasConfig, feasible, rng) -> List[ArchDescriptor]:
    if family_size(space) <= cfg.population:
        return [a for a in enumerate_family(space) if feasible(a)]
    seen: Dict[ArchDescriptor, None] = {}
    tries = 0
    limit = cfg.population * MAX_RESAMPLE
    while len(seen) < cfg.population and tries < limit:
        tries += 1
        a = random_arch(space, rng)
        if feasible(a):
            seen.setdefault(a)
    if not seen:
        seen[smallest(space)] = None
    return list(seen)


def evolve(
    space: SpaceConfig,
    params: Mapping[str, np.ndarray],
    valset: Dataset,
    cfg: NasConfig,
    rng: np.random.Generator,
    fitness: Optional[Callable[[ArchDescriptor], float]] = None,
) -> SearchResult:
    """Search for the best architecture with ``flops <= cfg.flops_budget``.

    ``fitness`` overrides validation accuracy (used by tests).
    """
    if flops(space, smallest(space)) > cfg.flops_budget:
        raise ValueError(f"budget {cfg.flops_budget} is below the smallest subnetwork's FLOPs")
    if fitness is None:
        if len(valset) == 0:
            raise ValueError("empty validation set")
        val = valset
        if cfg.eval_subset_size is not None and cfg.eval_subset_size < len(valset):
            val = valset.subset(np.arange(cfg.eval_subset_size))

        def fitness(a: ArchDescriptor) -> float:
            return evaluate(space, params, a, val)

    def feasible(a: ArchDescriptor) -> bool:
        return flops(space, a) <= cfg.flops_budget

    scores: Dict[ArchDescriptor, float] = {}

    def score(a: ArchDescriptor) -> float:
        if a not in scores:
            scores[a] = fitness(a)
        return scores[a]

    population = _initial_population(space, cfg, feasible, rng)
    n_parents = max(1, int(cfg.parent_fraction * cfg.population))
    history: List[float] = []
    for gen in range(cfg.generations):
        ranked = sorted(population, key=lambda a: rank_key(space, a, score(a)))
        history.append(score(ranked[0]))
        if gen == cfg.generations - 1:
            break
        parents = ranked[:n_parents]
        children: List[ArchDescriptor] = []
        while len(parents) + len(children) < cfg.population:
            for _ in range(MAX_RESAMPLE):
                i, j = rng.integers(len(parents), size=2)
                child = mutate(space, crossover(space, parents[i], parents[j], rng), cfg.mutation_prob, rng)
                if feasible(child):
                    break
            else:
                child = parents[int(rng.integers(len(parents)))]
            children.append(child)
        population = parents + children

    best = min(scores, key=lambda a: rank_key(space, a, scores[a]))
    return SearchResult(best, scores[best], history, scores)


def random_search(
    space: SpaceConfig,
    budget: float,
    evaluations: int,
    fitness: Callable[[ArchDescriptor], float],
    rng: np.random.Generator,
) -> Tuple[ArchDescriptor, float]:
    """Baseline: best of ``evaluations`` distinct feasible random archs."""
    seen: Dict[ArchDescriptor, float] = {}
    tries = 0
    while len(seen) < evaluations and tries < evaluations * MAX_RESAMPLE:
        tries += 1
        a = random_arch(space, rng)
        if flops(space, a) <= budget and a not in seen:
            seen[a] = fitness(a)
    best = min(seen, key=lambda a: rank_key(space, a, seen[a]))
    return best, seen[best]
