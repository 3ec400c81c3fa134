import json

import pytest

from trajcube.config import Config, ConfigError, config_from_dict, load_config


def test_empty_file_is_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("")
    assert load_config(p) == Config()
    assert load_config(None) == Config()


def test_yaml_and_json_agree(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("train:\n  lr0: 0.01\n  epochs: 3\npredict:\n  warmup: 10\n  kalman:\n    e1: 0.9\n")
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"train": {"lr0": 0.01, "epochs": 3}, "predict": {"warmup": 10, "kalman": {"e1": 0.9}}}))
    a, b = load_config(y), load_config(j)
    assert a == b
    assert a.train.lr0 == 0.01 and a.predict.kalman.e1 == 0.9 and a.predict.kalman.e2 == 0.3


def test_round_trip():
    c = config_from_dict({"model": {"conv": [[8, 6, 2], [8, 3, 1], [8, 3, 1]], "mu_residual": True}})
    assert config_from_dict(c.to_json()) == c
    assert c.model.conv == ((8, 6, 2), (8, 3, 1), (8, 3, 1))


@pytest.mark.parametrize("doc,where", [
    ({"train": {"bogus": 1}}, "train"),
    ({"nope": {}}, "<root>"),
    ({"train": {"epochs": "ten"}}, "train/epochs"),
    ({"predict": {"kalman": {"e1": "x"}}}, "predict/kalman/e1"),
])
def test_schema_errors_name_the_path(doc, where):
    with pytest.raises(ConfigError, match=f"at {where}"):
        config_from_dict(doc)


def test_value_errors():
    with pytest.raises(ConfigError):
        config_from_dict({"predict": {"kalman": {"e1": 0.1, "e2": 0.3}}})
    with pytest.raises(ConfigError, match="cube_shape"):
        config_from_dict({"match": {"nx": 10}})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "none.yaml")
