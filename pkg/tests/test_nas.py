import hashlib
from collections import Counter

import numpy as np
import pytest

from wsfed.arch import SpaceConfig, enumerate_family, flops, largest, make_arch, random_arch, smallest
from wsfed.nas import NasConfig, crossover, evolve, mutate, random_search, rank_key

TINY = SpaceConfig(stages=2, base_depth=1, max_extra_depth=1, ratio_choices=(0.5, 1.0),
                   hidden_width=8, max_mid_width=6, input_dim=5, num_classes=3)
SPACE = SpaceConfig()


def hashed_fitness(a):
    # arbitrary but deterministic score in [0, 1)
    h = hashlib.sha256(repr((a.depths, a.ratios)).encode()).digest()
    return int.from_bytes(h[:6], "big") / 2**48


def smooth_fitness(space):
    # rewards capacity with diminishing returns plus a small arch-specific jitter
    def f(a):
        return np.log(flops(space, a)) + 0.05 * hashed_fitness(a)
    return f


class TestOperators:
    def test_mutate_p0_identity(self, rng):
        for _ in range(30):
            a = random_arch(SPACE, rng)
            assert mutate(SPACE, a, 0.0, rng) == a

    def test_mutate_p1_resamples(self):
        rng = np.random.default_rng(0)
        a = largest(SPACE)
        draws = [mutate(SPACE, a, 1.0, rng) for _ in range(1000)]
        depth0 = Counter(d.depths[0] for d in draws)
        # uniform over {0,1,2}: each about 333, far from the input's constant 2
        assert all(250 < depth0[v] < 420 for v in range(3))
        r0 = Counter(d.ratios[0] for d in draws)
        assert all(180 < r0[v] < 320 for v in range(4))
        b = smallest(SPACE)
        other = [mutate(SPACE, b, 1.0, np.random.default_rng(0)) for _ in range(1)]
        assert other[0] == draws[0]  # same rng stream, different input, same output

    def test_crossover_idempotent(self, rng):
        for _ in range(30):
            a = random_arch(SPACE, rng)
            assert crossover(SPACE, a, a, rng) == a

    def test_crossover_takes_genes_from_parents(self, rng):
        a, b = smallest(SPACE), largest(SPACE)
        for _ in range(20):
            c = crossover(SPACE, a, b, rng)
            assert all(d in (0, 2) for d in c.depths)


class TestEvolve:
    def test_exhaustive_agreement(self):
        fam = list(enumerate_family(TINY))
        assert len(fam) == 36
        budget = flops(TINY, largest(TINY))
        cfg = NasConfig(budget, population=36, generations=1)
        res = evolve(TINY, {}, None, cfg, np.random.default_rng(0), fitness=hashed_fitness)
        best = min(fam, key=lambda a: rank_key(TINY, a, hashed_fitness(a)))
        assert res.best_arch == best
        assert len(res.scores) == 36

    def test_exhaustive_under_budget(self):
        fam = list(enumerate_family(TINY))
        budget = sorted(flops(TINY, a) for a in fam)[17]
        res = evolve(TINY, {}, None, NasConfig(budget, population=36, generations=1),
                     np.random.default_rng(0), fitness=hashed_fitness)
        feasible = [a for a in fam if flops(TINY, a) <= budget]
        assert res.best_arch == min(feasible, key=lambda a: rank_key(TINY, a, hashed_fitness(a)))
        assert all(flops(TINY, a) <= budget for a in res.scores)

    @pytest.mark.parametrize("seed", range(5))
    def test_feasibility_and_elitism(self, seed):
        budget = 0.5 * flops(SPACE, largest(SPACE))
        res = evolve(SPACE, {}, None, NasConfig(budget, population=20, generations=8),
                     np.random.default_rng(seed), fitness=smooth_fitness(SPACE))
        assert flops(SPACE, res.best_arch) <= budget
        assert all(flops(SPACE, a) <= budget for a in res.scores)
        assert all(b >= a for a, b in zip(res.history, res.history[1:]))
        assert res.best_accuracy == res.history[-1]

    def test_budget_below_smallest(self):
        with pytest.raises(ValueError):
            evolve(SPACE, {}, None, NasConfig(1.0), np.random.default_rng(0), fitness=hashed_fitness)

    def test_tight_budget_returns_smallest(self):
        budget = flops(SPACE, smallest(SPACE))
        res = evolve(SPACE, {}, None, NasConfig(budget, population=8, generations=3),
                     np.random.default_rng(0), fitness=hashed_fitness)
        assert res.best_arch == smallest(SPACE)

    def test_deterministic(self):
        budget = 0.6 * flops(SPACE, largest(SPACE))
        cfg = NasConfig(budget, population=12, generations=4)
        a = evolve(SPACE, {}, None, cfg, np.random.default_rng(3), fitness=smooth_fitness(SPACE))
        b = evolve(SPACE, {}, None, cfg, np.random.default_rng(3), fitness=smooth_fitness(SPACE))
        assert a.best_arch == b.best_arch and a.history == b.history

    def test_beats_random_search_on_smooth_fitness(self):
        budget = 0.5 * flops(SPACE, largest(SPACE))
        f = smooth_fitness(SPACE)
        evo, rnd = [], []
        for seed in range(3):
            res = evolve(SPACE, {}, None, NasConfig(budget, population=16, generations=10),
                         np.random.default_rng(seed), fitness=f)
            evo.append(res.best_accuracy)
            rnd.append(random_search(SPACE, budget, len(res.scores), f, np.random.default_rng(seed))[1])
        assert np.mean(evo) >= np.mean(rnd)

    def test_rank_key_prefers_cheaper_on_tie(self):
        a = smallest(SPACE)
        b = make_arch(SPACE, [1, 0, 0, 0], [0] * 16)
        assert rank_key(SPACE, a, 0.5) < rank_key(SPACE, b, 0.5)
        assert rank_key(SPACE, b, 0.6) < rank_key(SPACE, a, 0.5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            NasConfig(1e6, population=1)
        with pytest.raises(ValueError):
            NasConfig(1e6, parent_fraction=1.0)
        with pytest.raises(ValueError):
            NasConfig(1e6, mutation_prob=1.5)
