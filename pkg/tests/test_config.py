import json

import pytest

from mimoest.config import ExperimentConfig, TrainConfig, config_from_dict, load_config
from mimoest.errors import ConfigError


def test_defaults_round_trip(tmp_path):
    cfg = ExperimentConfig()
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg
    assert load_config(None) == cfg


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"train": {"nope": 1}},
    {"train": {"regime": "x"}},
    {"train": {"delta2": 0.5}},
    {"train": {"loss_weighting": "x"}},
    {"train": {"lr_decay": 0.0}},
    {"train": {"epochs": -1}},
    {"train": {"mode": "x"}},
    {"scenario": [1]},
])
def test_invalid_documents(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_bad_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{\n  1")
    with pytest.raises(ConfigError, match="c.json:2"):
        load_config(path)
    path.write_text("[]")
    with pytest.raises(ConfigError):
        load_config(path)


def test_partial_override():
    cfg = config_from_dict(json.loads('{"train": {"tau": 2, "delta2": 0.04}, "seed": 3}'))
    assert cfg.train.tau == 2 and cfg.seed == 3
    assert cfg.train.delta == pytest.approx(0.2)
    assert TrainConfig().delta == 0.0
