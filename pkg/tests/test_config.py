import hashlib
import json

import pytest

from labelfree.config import (ConfigError, PipelineConfig, config_from_dict, derive_seed, load_config,
                              parse_value, set_dotted)


def base(**kw):
    d = {"synthetic": {"n_nodes": 100, "n_classes": 3}}
    d.update(kw)
    return d


def test_defaults_validate():
    cfg = config_from_dict(base()).validate()
    assert cfg.train.epochs == 30 and cfg.backend == "sim"


def test_exactly_one_graph_source():
    with pytest.raises(ConfigError):
        PipelineConfig().validate()
    with pytest.raises(ConfigError):
        config_from_dict(base(bundle="x")).validate(check_paths=False)
    with pytest.raises(ConfigError, match="does not exist"):
        config_from_dict({"bundle": "/no/such/dir"}).validate()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="colour"):
        config_from_dict(base(colour="red"))
    with pytest.raises(ConfigError, match="selection"):
        config_from_dict(base(selection={"budgett": 3}))
    with pytest.raises(ConfigError):
        config_from_dict(base(selection=5))


def test_section_errors_become_config_errors():
    with pytest.raises(ConfigError):
        config_from_dict(base(strategy={"kind": "nope"}))
    with pytest.raises(ConfigError):
        config_from_dict(base(train={"loss_kind": "focal"})).validate()
    with pytest.raises(ConfigError):
        config_from_dict(base(simulator={"transition": "weird"})).validate()


def test_live_needs_spend_flag_and_cap():
    with pytest.raises(ConfigError, match="allow-spend"):
        config_from_dict(base(backend="live")).validate()
    with pytest.raises(ConfigError, match="max-dollars"):
        config_from_dict(base(backend="live", annotation={"allow_spend": True})).validate()
    config_from_dict(base(backend="live", annotation={"allow_spend": True, "max_dollars": 1.0})).validate()


def test_dotted_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(base(selection={"method": "degree"})))
    cfg = load_config(p, {"selection.budget": 12, "train.adam_betas": [0.8, 0.9], "seed": 4})
    assert (cfg.selection.method, cfg.selection.budget, cfg.seed) == ("degree", 12, 4)
    assert cfg.train.adam_betas == (0.8, 0.9)
    with pytest.raises(ConfigError):
        set_dotted({"seed": 1}, "seed.x", 2)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)


def test_parse_value():
    assert parse_value("3") == 3 and parse_value("0.5") == 0.5 and parse_value("true") is True
    assert parse_value("null") is None and parse_value("[1, 2]") == [1, 2]
    assert parse_value("weighted_ce") == "weighted_ce"


def test_derive_seed_definition():
    want = int.from_bytes(hashlib.sha256(b"7:train").digest()[:4], "little")
    assert derive_seed(7, "train") == want
    assert derive_seed(7, "train") != derive_seed(7, "selection") != derive_seed(8, "selection")


def test_hash_ignores_output_and_spend_fields():
    a = config_from_dict(base())
    b = config_from_dict(base(out="elsewhere", annotation={"concurrency_limit": 9, "max_dollars": 3.0}))
    c = config_from_dict(base(seed=1))
    assert a.config_hash() == b.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 16


def test_round_trip_through_dict():
    cfg = config_from_dict(base(selection={"method": "age", "budget": 9}, train={"adam_betas": [0.5, 0.6]}))
    again = config_from_dict(cfg.to_dict())
    assert again.config_hash() == cfg.config_hash()
