import json

import pytest

from mmgcn.config import ConfigError, RunConfig, canonical_modalities, load_config_file, merge_config


def test_defaults():
    cfg = RunConfig()
    assert (cfg.num_layers, cfg.alpha, cfg.eta, cfg.gamma) == (4, 0.1, 0.5, 0.7)
    assert (cfg.dropout, cfg.lr, cfg.l2) == (0.4, 3e-4, 3e-5)
    assert cfg.validate() is cfg


def test_all_problems_listed():
    with pytest.raises(ConfigError) as err:
        RunConfig(alpha=1.5, d_h=5, lr=-1.0, modalities="xz").validate()
    assert len(err.value.problems) >= 4


def test_canonical_modalities():
    assert canonical_modalities("ta") == "at"
    assert canonical_modalities("vta") == "avt"


def test_fingerprint_ignores_paths():
    a = RunConfig(corpus="x.jsonl", report_dir="r")
    b = RunConfig(corpus="y.jsonl")
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != RunConfig(num_layers=8).fingerprint()


def test_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"num_layers": 8, "lr": 0.01}))
    cfg = merge_config(load_config_file(path), {"num_layers": 2, "lr": None})
    assert cfg.num_layers == 2 and cfg.lr == 0.01 and cfg.alpha == 0.1


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"layers": 3})
    assert RunConfig.from_dict(RunConfig(seed=4).to_dict()) == RunConfig(seed=4)
