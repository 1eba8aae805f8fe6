import json

import pytest

from kmtpe import config
from kmtpe.errors import ConfigurationError


def test_defaults_fill_in():
    cfg = config.normalize({"schema_version": 1})
    assert cfg["tpe"]["n0"] == 20 and cfg["tpe"]["c0"] == 0.25 and cfg["tpe"]["alpha"] == 0.98
    assert cfg["optimizer"] == "kmeans-tpe"
    assert cfg["output"]["include_timing"] is False


@pytest.mark.parametrize("raw", [
    {"schema_version": 2},
    {"schema_version": 1, "colour": "red"},
    {"schema_version": 1, "tpe": {"n0": 5, "n": 4}},
    {"schema_version": 1, "tpe": {"alpha": 1.5}},
    {"schema_version": 1, "tpe": {"unknown": 1}},
    {"schema_version": 1, "optimizer": "grid"},
    {"schema_version": 1, "space": {"pruning": {"enabled": True, "k": 3, "subsets": [[8], [4]]}}},
])
def test_invalid_configs_rejected(raw):
    with pytest.raises(ConfigurationError):
        config.normalize(raw)


def test_schema_version_optional():
    assert config.normalize({})["schema_version"] == 1


def test_default_subsets_cover_all_bits():
    for k in range(2, 5):
        subsets = config._default_subsets(k)
        assert len(subsets) == k
        assert set().union(*map(set, subsets)) == {8, 6, 4, 3, 2}


def test_relative_paths_resolve_against_config_dir(tmp_path):
    sub = tmp_path / "cfgs"
    sub.mkdir()
    (sub / "run.json").write_text(json.dumps({
        "schema_version": 1, "net": {"checkpoint": "net.json"},
        "space": {"pruning": {"enabled": True, "report": "sens.json"}},
        "output": {"dir": "out"}}))
    cfg = config.load(sub / "run.json")
    assert cfg["net"]["checkpoint"] == str(sub / "net.json")
    assert cfg["space"]["pruning"]["report"] == str(sub / "sens.json")
    assert cfg["output"]["dir"] == str(sub / "out")


def test_load_rejects_bad_json(tmp_path):
    (tmp_path / "c.json").write_text("{oops")
    with pytest.raises(ConfigurationError):
        config.load(tmp_path / "c.json")
