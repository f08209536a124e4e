import csv

import pytest

from wsfed.arch import parse_arch
from wsfed.cli import main
from wsfed.config import load_config

SMALL = """\
seed = 1
rounds = 4
clients = 6
participation = 0.5
alpha = 1.0
eval_every = 2

[space]
stages = 2
base_depth = 1
max_extra_depth = 1
ratio_choices = [0.5, 1.0]
hidden_width = 8
max_mid_width = 6

[dataset]
classes = 3
input_dim = 5
per_class = 30
spread = 0.5

[local]
epochs = 1
batch_size = 8
learning_rate = 0.05

[nas]
population = 6
generations = 2
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def train(cfg_path, out, *extra):
    assert main(["train", "--config", str(cfg_path), "--out", str(out), *extra]) == 0


def test_train_is_reproducible(cfg_path, tmp_path):
    train(cfg_path, tmp_path / "a")
    train(cfg_path, tmp_path / "b")
    a, b = tmp_path / "a" / "metrics.csv", tmp_path / "b" / "metrics.csv"
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a" / "checkpoint.ckpt").read_bytes() == (tmp_path / "b" / "checkpoint.ckpt").read_bytes()
    assert {r["round"] for r in rows(a)} == {"0", "2", "4"}


def test_stop_and_resume(cfg_path, tmp_path):
    train(cfg_path, tmp_path / "full")
    train(cfg_path, tmp_path / "half", "--stop-after", "2")
    train(cfg_path, tmp_path / "rest", "--resume", str(tmp_path / "half" / "checkpoint.ckpt"))
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (tmp_path / "rest" / "metrics.csv").read_bytes()


def test_seed_flag_changes_run(cfg_path, tmp_path):
    train(cfg_path, tmp_path / "a")
    train(cfg_path, tmp_path / "b", "--seed", "2")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()


def test_eval(cfg_path, tmp_path):
    train(cfg_path, tmp_path / "t")
    ck = str(tmp_path / "t" / "checkpoint.ckpt")
    assert main(["eval", "--checkpoint", ck, "--arch", "smallest", "--out", str(tmp_path / "e")]) == 0
    r = rows(tmp_path / "e" / "eval.csv")
    assert len(r) == 1 and 0.0 <= float(r[0]["test_accuracy"]) <= 1.0 and r[0]["round"] == "4"
    # defaults to the configured eval archs, which match the last training metrics
    assert main(["eval", "--checkpoint", ck, "--out", str(tmp_path / "e2")]) == 0
    last = {m["arch"]: m["test_accuracy"] for m in rows(tmp_path / "t" / "metrics.csv") if m["round"] == "4"}
    for r in rows(tmp_path / "e2" / "eval.csv"):
        assert float(r["test_accuracy"]) == float(last[r["arch"]])


def test_eval_bad_arch_is_usage_error(cfg_path, tmp_path):
    train(cfg_path, tmp_path / "t")
    code = main(["eval", "--checkpoint", str(tmp_path / "t" / "checkpoint.ckpt"), "--arch", "d5", "--out",
                 str(tmp_path / "e")])
    assert code == 2 and not (tmp_path / "e").exists()


def test_nas_respects_budget(cfg_path, tmp_path):
    train(cfg_path, tmp_path / "t")
    cfg = load_config(cfg_path)
    from wsfed.arch import flops, largest, smallest
    lo, hi = flops(cfg.space, smallest(cfg.space)), flops(cfg.space, largest(cfg.space))
    budgets = [lo, (lo + hi) / 2, hi]
    argv = ["nas", "--checkpoint", str(tmp_path / "t" / "checkpoint.ckpt"), "--out", str(tmp_path / "n")]
    for b in budgets:
        argv += ["--budget", str(b)]
    assert main(argv) == 0
    out = rows(tmp_path / "n" / "nas.csv")
    assert len(out) == 3
    for r, b in zip(out, budgets):
        a = parse_arch(cfg.space, r["descriptor"])
        assert flops(cfg.space, a) == float(r["flops"]) <= b
    assert (tmp_path / "n" / "nas_meta.json").exists()


def test_nas_budget_too_small(cfg_path, tmp_path):
    train(cfg_path, tmp_path / "t")
    code = main(["nas", "--checkpoint", str(tmp_path / "t" / "checkpoint.ckpt"), "--budget", "1",
                 "--out", str(tmp_path / "n")])
    assert code == 2 and not (tmp_path / "n").exists()


def test_cost(cfg_path, tmp_path):
    assert main(["cost", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
    r = rows(tmp_path / "cost.csv")
    assert [int(x["family_size"]) for x in r] == list(range(1, 10))
    comm = [float(x["ifedavg_comm"]) for x in r]
    assert all(b > a for a, b in zip(comm, comm[1:]))


def test_partition_report(cfg_path, tmp_path):
    assert main(["partition-report", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
    r = rows(tmp_path / "partition.csv")
    assert len(r) == 6 * 3
    assert sum(int(x["count"]) for x in r) == 3 * 24


def test_lr_grid(cfg_path, tmp_path):
    assert main(["lr-grid", "--config", str(cfg_path), "--lr", "0", "--lr", "0.05", "--out", str(tmp_path)]) == 0
    r = rows(tmp_path / "lr_grid.csv")
    assert [float(x["learning_rate"]) for x in r] == [0.0, 0.05]
    assert r[0]["final_accuracy"] == r[0]["round0_accuracy"]


def test_compare_ablation(cfg_path, tmp_path):
    assert main(["compare-ablation", "--config", str(cfg_path), "--seeds", "0,1", "--out", str(tmp_path)]) == 0
    r = rows(tmp_path / "ablation.csv")
    assert {x["heuristic"] for x in r} == {"overlap + R", "overlap + S", "overlap + TS", "Wt β-decay + TS"}
    assert {x["seed"] for x in r} == {"0", "1"}


@pytest.mark.parametrize("extra", [["--set", "rounds=0"], ["--set", "nope=1"], ["--set", "alpha"]])
def test_config_error_exit_2(cfg_path, tmp_path, capsys, extra):
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfg_path), "--out", str(out), *extra]) == 2
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["train", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_bad_seeds(cfg_path, tmp_path):
    assert main(["compare-ablation", "--config", str(cfg_path), "--seeds", "a,b", "--out", str(tmp_path / "o")]) == 2


def test_usage_errors():
    assert main([]) == 2
    assert main(["train"]) == 2


def test_corrupt_checkpoint_exit_1(cfg_path, tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"garbage")
    assert main(["eval", "--checkpoint", str(p), "--out", str(tmp_path / "o")]) == 1
