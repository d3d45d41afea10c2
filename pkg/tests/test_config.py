from __future__ import annotations

import json

import pytest

from srampuf.config import (
    CALIBRATED_SIGMA_INIT,
    CALIBRATED_SIGMA_VTH,
    CONFIG_ENV,
    RunConfig,
    config_from_dict,
    load_config,
    write_config,
)
from srampuf.errors import MalformedError


def test_defaults():
    cfg = RunConfig()
    assert (cfg.rows, cfg.cols, cfg.n_cells) == (256, 64, 16384)
    assert cfg.n_trials == 1000 and cfg.device.vdd == 1.2
    assert cfg.mismatch.sigma_vth_n == CALIBRATED_SIGMA_VTH
    assert cfg.noise.sigma_init == CALIBRATED_SIGMA_INIT
    assert (cfg.region_low, cfg.region_high) == (0.09, 0.91)


def test_round_trip(tmp_path):
    cfg = config_from_dict({"seed": 9, "rows": 4, "cols": 2, "noise": {"sigma_init": 0.003},
                            "fit": {"objective": "histogram"}})
    back = load_config(write_config(cfg, tmp_path / "c.json"))
    assert back == cfg


@pytest.mark.parametrize("data", [
    {"colour": 1},
    {"noise": {"sigma": 1.0}},
    {"noise": {"sigma_init": -1.0}},
    {"rows": 0},
    {"rows": 2.5},
    {"seed": True},
    {"fit": {"objective": "magic"}},
    {"device": {"vdd": -1.0}},
    {"device": {"nonsense": 3}},
    {"region_low": 0.95},
    [],
])
def test_rejects_invalid(data):
    with pytest.raises(MalformedError):
        config_from_dict(data)


def test_bad_json_reports_line(tmp_path):
    f = tmp_path / "c.json"
    f.write_text('{\n "seed": 1,\n oops\n}\n')
    with pytest.raises(MalformedError) as info:
        load_config(f)
    assert info.value.line == 3


def test_env_var_default(tmp_path, monkeypatch):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"seed": 42}))
    monkeypatch.setenv(CONFIG_ENV, str(f))
    assert load_config().seed == 42
    monkeypatch.delenv(CONFIG_ENV)
    assert load_config().seed == 0
