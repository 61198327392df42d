import json

import pytest

from stfan.config import ConfigError, ExperimentConfig, apply_overrides, load_config, parse_value


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return p


def test_defaults_are_the_toy_setup():
    cfg = load_config(None)
    assert (cfg.model.k, cfg.model.base_channels, cfg.model.num_stages) == (3, 8, 3)
    assert cfg.train.iterations == 2000 and cfg.train.frame_size == (32, 32)
    assert cfg.ablate.seeds == (0, 1, 2)


def test_partial_sections_merge_over_defaults(tmp_path):
    cfg = load_config(write(tmp_path, {"model": {"k": 5}, "train": {"optimizer": {"learning_rate": 1e-3}}}))
    assert cfg.model.k == 5 and cfg.model.base_channels == 8
    assert cfg.train.optimizer.learning_rate == 1e-3 and cfg.train.optimizer.decay_interval == 1000


def test_round_trip_through_dict(tmp_path):
    cfg = load_config(None, {"model.k": 7, "train.frame_size": [64, 64], "train.augment.crop_size": [64, 64]})
    again = load_config(write(tmp_path, cfg.to_dict()))
    assert again.to_dict() == cfg.to_dict()


def test_unknown_key_names_its_path(tmp_path):
    with pytest.raises(ConfigError, match=r"train\.optimizer\.lr") as err:
        load_config(write(tmp_path, {"train": {"optimizer": {"lr": 0.1}}}))
    assert "learning_rate" in str(err.value)


def test_type_errors_name_the_key(tmp_path):
    with pytest.raises(ConfigError, match=r"model\.k"):
        load_config(write(tmp_path, {"model": {"k": "five"}}))
    with pytest.raises(ConfigError, match=r"model\.residual"):
        load_config(None, {"model.residual": 1})
    with pytest.raises(ConfigError, match=r"train\.iterations"):
        load_config(None, {"train.iterations": 2.5})


def test_invariant_violations_surface_as_config_errors():
    with pytest.raises(ConfigError, match="k must be odd"):
        load_config(None, {"model.k": 4})


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.json"):
        load_config(tmp_path / "nope.json")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "{not json"))


def test_overrides():
    assert parse_value("3") == 3 and parse_value("true") is True and parse_value("abc") == "abc"
    assert parse_value("[1, 2]") == [1, 2]
    data = apply_overrides({"a": {"b": 1}}, {"a.b": 2, "a.c.d": 3})
    assert data == {"a": {"b": 2, "c": {"d": 3}}}
    cfg = load_config(None, {"train.iterations": 10, "train.checkpoint_interval": 5})
    assert cfg.train.iterations == 10


def test_experiment_config_defaults_serialise():
    json.dumps(ExperimentConfig().to_dict())
