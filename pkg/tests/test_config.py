from pathlib import Path

import pytest

from wsfed.arch import family_size
from wsfed.config import ConfigError, config_from_dict, load_config

DEFAULT = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


def test_default_parses():
    cfg = load_config(DEFAULT)
    assert cfg.rounds == 200 and cfg.clients == 20 and cfg.participants == 8
    assert family_size(cfg.space) == 4**8 * 21**4
    assert cfg.distribution == "tracking_sandwich" and cfg.aggregator == "maxnet"
    sched = cfg.beta_schedule()
    assert sched.beta0 == 0.9 and sched.beta_end == 1 / 8 and sched.decay_rounds == 160


def test_missing_rounds_names_key():
    with pytest.raises(ConfigError) as ei:
        config_from_dict({"clients": 4})
    assert ei.value.key == "rounds"
    assert "rounds" in str(ei.value)


def test_override_alpha_and_nested():
    cfg = load_config(DEFAULT, ["alpha=0.1", "local.learning_rate=0.02", "space.ratio_choices=[0.5, 1.0]"])
    assert cfg.alpha == 0.1
    assert cfg.local.learning_rate == 0.02
    assert cfg.space.ratio_choices == (0.5, 1.0)


def test_seed_flag_wins():
    assert load_config(DEFAULT, ["seed=4"], seed=9).seed == 9


@pytest.mark.parametrize("override,key", [
    ("bogus=1", "bogus"),
    ("space.bogus=1", "space.bogus"),
    ("a.b.c=1", "a.b.c"),
])
def test_unknown_override(override, key):
    with pytest.raises(ConfigError) as ei:
        load_config(DEFAULT, [override])
    assert ei.value.key == key


def test_unknown_key_in_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("rounds = 3\nclients = 4\n[local]\nmomentum = 0.9\n")
    with pytest.raises(ConfigError) as ei:
        load_config(p)
    assert ei.value.key == "local.momentum"


@pytest.mark.parametrize("raw,key", [
    ({"rounds": 0}, "rounds"),
    ({"rounds": 2, "participation": 0.0}, "participation"),
    ({"rounds": 2, "alpha": -1.0}, "alpha"),
    ({"rounds": 2, "distribution": "greedy"}, "distribution"),
    ({"rounds": 2, "rounds_": 1}, "rounds_"),
    ({"rounds": "ten"}, "rounds"),
    ({"rounds": 2, "beta": {"beta0": 1.5}}, "beta.beta0"),
    ({"rounds": 2, "eval_archs": ["d9"]}, "eval_archs"),
    ({"rounds": 2, "clients": 10**6}, "clients"),
    ({"rounds": 2, "dataset": {"kind": "csv"}}, "dataset.path"),
])
def test_validation_names_key(raw, key):
    with pytest.raises(ConfigError) as ei:
        config_from_dict(raw)
    assert ei.value.key == key


def test_bad_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    p = tmp_path / "bad.toml"
    p.write_text("rounds = [\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_to_dict_round_trip():
    cfg = load_config(DEFAULT, ["alpha=0.5", "beta.beta_end=0.2"])
    assert config_from_dict(cfg.to_dict()) == cfg


def test_csv_dataset_infers_dims(tmp_path):
    (tmp_path / "d.csv").write_text("f0,f1,f2,label\n" + "".join(f"{i},{i+1},{i+2},{i % 3}\n" for i in range(30)))
    p = tmp_path / "c.toml"
    p.write_text('rounds = 1\nclients = 2\n[dataset]\nkind = "csv"\npath = "d.csv"\n')
    cfg = load_config(p)
    assert cfg.space.input_dim == 3 and cfg.space.num_classes == 3
