import json

import pytest
from pydantic import ValidationError

from scan_config import (
    DEFAULT_TAIL_WINDOWS,
    WORKERS_ENV,
    RunManifest,
    ScanConfig,
    merge,
    point_key,
)


def test_defaults():
    cfg = ScanConfig()
    assert cfg.n_values == [8, 10, 12]
    assert cfg.hz_values == [0.0, 0.5]
    assert cfg.pite.m0 == 0.999
    assert cfg.pite.eps == 1e-6
    assert cfg.dmrg.chi_for(10) == 10
    assert cfg.encoder.lmax == "auto"
    assert cfg.encoder.tail_window(12) == DEFAULT_TAIL_WINDOWS[12]
    assert cfg.encoder.tail_window(9) is None
    assert len(cfg.points()) == 6


def test_json_round_trip(tmp_path):
    cfg = ScanConfig(n_values=[10, 8, 8], hz_values=[0.5], initializers=["exact"], seed=7)
    assert cfg.n_values == [8, 10]
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    assert ScanConfig.load(path) == cfg
    assert ScanConfig.from_json(cfg.to_json()) == cfg


@pytest.mark.parametrize("raw", [
    {"n_values": [1]},
    {"n_values": [22]},
    {"hz_values": [-0.1]},
    {"initializers": ["random"]},
    {"backends": []},
    {"pite": {"m0": 1.0}},
    {"dmrg": {"chi": 0}},
    {"encoder": {"tail_windows": {"8": [100, 20]}}},
    {"unknown": 1},
])
def test_validation_errors(raw):
    with pytest.raises(ValidationError):
        ScanConfig.model_validate(raw)


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert ScanConfig().workers == 3
    monkeypatch.setenv(WORKERS_ENV, "bogus")
    assert ScanConfig().workers == 1


def test_overrides_merge_into_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"n_values": [8], "pite": {"m0": 0.99, "eps": 1e-4}}))
    cfg = ScanConfig.load(path, {"pite": {"eps": 1e-5, "r_cap": None}, "seed": None})
    assert cfg.pite.m0 == 0.99
    assert cfg.pite.eps == 1e-5
    assert cfg.pite.r_cap == 1024
    assert cfg.seed == 1234
    assert merge({"a": {"b": 1}}, {"a": {"c": 2}}) == {"a": {"b": 1, "c": 2}}


def test_point_key_is_stable():
    assert point_key(8, 0.0) == "N8_hz0.0"
    assert point_key(12, 0.5) == "N12_hz0.5"


def test_manifest_records_config_and_defaults(tmp_path):
    manifest = RunManifest.create(ScanConfig(n_values=[4]))
    assert manifest.config["n_values"] == [4]
    assert manifest.decided_defaults["depth_convention"] == "convention-D1"
    assert "numpy" in manifest.versions
    path = manifest.with_points({"N4_hz0.0": "done"}).write(tmp_path / "manifest.json")
    assert json.loads(path.read_text())["points"] == {"N4_hz0.0": "done"}


def test_nested_none_overrides_are_dropped_without_config_file():
    over = {"dmrg": {"chi": None, "sweeps": None}, "encoder": {"lmax": None},
            "pite": {"m0": None, "r_cap": 64}, "seed": None}
    assert merge({}, over) == {"dmrg": {}, "encoder": {}, "pite": {"r_cap": 64}}
    cfg = ScanConfig.load(None, over)
    assert cfg.dmrg == ScanConfig().dmrg
    assert cfg.pite.r_cap == 64
