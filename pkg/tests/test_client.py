import math

import numpy as np
import pytest

import wsfed.client as client_mod
from wsfed.arch import SpaceConfig, largest, random_arch, smallest
from wsfed.client import ClientDivergence, LocalTrainConfig, client_update, evaluate
from wsfed.data import ClientPartition, Dataset, synth_blobs
from wsfed.supernet import extract, forward, init_supernet, params_equal, subnet_loss_and_grad, superimpose

# scalar network: every tensor holds one or two numbers
TOY = SpaceConfig(stages=1, base_depth=1, max_extra_depth=0, ratio_choices=(1.0,),
                  hidden_width=1, max_mid_width=1, input_dim=1, num_classes=2)
SMALL = SpaceConfig(stages=2, base_depth=1, max_extra_depth=1, ratio_choices=(0.5, 1.0),
                    hidden_width=8, max_mid_width=6, input_dim=5, num_classes=3)


def small_data(n=40, seed=0):
    d = synth_blobs(3, 5, n, 0.5, seed)
    return d.train()


def numeric_grad(space, w, x, y, eps=1e-6):
    g = {}
    for name, t in w.tensors.items():
        g[name] = np.zeros_like(t)
        for idx in np.ndindex(t.shape):
            orig = t[idx]
            t[idx] = orig + eps
            lp, _ = subnet_loss_and_grad(space, w, x, y)
            t[idx] = orig - eps
            lm, _ = subnet_loss_and_grad(space, w, x, y)
            t[idx] = orig
            g[name][idx] = (lp - lm) / (2 * eps)
    return g


class TestClientUpdate:
    def test_zero_lr_identity(self):
        train = small_data()
        W = init_supernet(SMALL, 0)
        a = random_arch(SMALL, np.random.default_rng(1))
        w = extract(SMALL, W, a)
        part = ClientPartition(0, np.arange(20))
        out = client_update(SMALL, part, train, w, LocalTrainConfig(3, 4, 0.0), np.random.default_rng(0))
        assert params_equal(out.tensors, w.tensors)
        assert out.tensors is not w.tensors

    def test_single_full_batch_step(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, 1))
        y = np.array([0, 1, 1, 0, 1, 0])
        train = Dataset(x, y, np.ones(6, dtype=bool))
        W = {k: v + 0.3 for k, v in init_supernet(TOY, 5).items()}
        w = extract(TOY, W, largest(TOY))
        lr = 0.05
        g = numeric_grad(TOY, w.copy(), x, y)
        out = client_update(TOY, ClientPartition(0, np.arange(6)), train, w, LocalTrainConfig(1, 32, lr),
                            np.random.default_rng(0))
        for k in w.tensors:
            assert np.allclose(out.tensors[k], w.tensors[k] - lr * g[k], atol=1e-9, rtol=0)

    def test_step_count(self, monkeypatch):
        calls = []
        real = client_mod.subnet_loss_and_grad

        def counting(*a, **k):
            calls.append(a[2].shape[0])
            return real(*a, **k)

        monkeypatch.setattr(client_mod, "subnet_loss_and_grad", counting)
        train = small_data()
        cfg = LocalTrainConfig(3, 7, 0.01)
        part = ClientPartition(0, np.arange(23))
        client_update(SMALL, part, train, extract(SMALL, init_supernet(SMALL, 0), smallest(SMALL)), cfg,
                      np.random.default_rng(0))
        assert len(calls) == cfg.steps(23) == 3 * math.ceil(23 / 7)
        assert sum(calls) == 3 * 23  # partial batch kept

    def test_deterministic(self):
        train = small_data()
        w = extract(SMALL, init_supernet(SMALL, 0), largest(SMALL))
        part = ClientPartition(2, np.arange(5, 30))
        cfg = LocalTrainConfig(2, 8, 0.05)
        a = client_update(SMALL, part, train, w, cfg, np.random.default_rng(9))
        b = client_update(SMALL, part, train, w, cfg, np.random.default_rng(9))
        assert params_equal(a.tensors, b.tensors)

    def test_only_masked_positions_change(self):
        train = small_data()
        W = init_supernet(SMALL, 0)
        a = smallest(SMALL)
        out = client_update(SMALL, ClientPartition(0, np.arange(30)), train, extract(SMALL, W, a),
                            LocalTrainConfig(1, 8, 0.1), np.random.default_rng(0))
        merged = superimpose(SMALL, W, a, out)
        assert params_equal({k: merged[k] for k in W if k.startswith("s0.b1")},
                            {k: W[k] for k in W if k.startswith("s0.b1")})

    def test_divergence_reported(self):
        train = small_data()
        W = {k: v * 1e150 for k, v in init_supernet(SMALL, 0).items()}
        with pytest.raises(ClientDivergence) as ei:
            client_update(SMALL, ClientPartition(4, np.arange(10)), train, extract(SMALL, W, largest(SMALL)),
                          LocalTrainConfig(1, 8, 1.0), np.random.default_rng(0), round_=7)
        assert ei.value.client_id == 4 and ei.value.round == 7
        assert "round 7" in str(ei.value) and "client 4" in str(ei.value)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LocalTrainConfig(0, 1, 0.1)
        with pytest.raises(ValueError):
            LocalTrainConfig(1, 1, -0.1)


class TestEvaluate:
    def test_labels_from_argmax(self):
        W = init_supernet(SMALL, 0)
        x = np.random.default_rng(0).normal(size=(50, 5))
        a = largest(SMALL)
        y = np.argmax(forward(SMALL, W, a, x), axis=1)
        assert evaluate(SMALL, W, a, Dataset(x, y, np.zeros(50, dtype=bool))) == 1.0

    def test_random_labels_near_chance(self):
        sp = SpaceConfig()
        rng = np.random.default_rng(0)
        data = Dataset(rng.normal(size=(200, 32)), rng.integers(0, 10, 200), np.zeros(200, dtype=bool))
        acc = evaluate(sp, init_supernet(sp, 0), largest(sp), data)
        assert 0.0 <= acc <= 0.35

    def test_pure(self):
        d = small_data()
        W = init_supernet(SMALL, 1)
        assert evaluate(SMALL, W, smallest(SMALL), d) == evaluate(SMALL, W, smallest(SMALL), d)

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(SMALL, init_supernet(SMALL, 0), smallest(SMALL), Dataset(np.zeros((0, 5)), [], []))
