import json

import pytest

from leoalloc.config import (
    ConfigError,
    ConstellationConfig,
    GridSpec,
    LinkConfig,
    ScenarioConfig,
    SolverConfig,
    TimingConfig,
    config_from_dict,
    db_to_linear,
    linear_to_db,
    load_config,
)


def test_db_round_trip():
    assert db_to_linear(30.0) == pytest.approx(1000.0)
    assert linear_to_db(db_to_linear(-122.2)) == pytest.approx(-122.2)


def test_default_timing_budget():
    t = TimingConfig()
    assert t.frames_per_slot == 1000
    assert t.satellite_budget == 10000


def test_timing_rejects_non_integer_frames():
    with pytest.raises(ConfigError):
        TimingConfig(slot_duration=10.0, frame_duration=3e-3)


@pytest.mark.parametrize("kw", [
    {"total_satellites": 100, "orbital_planes": 7},
    {"altitude": -1.0},
    {"inclination": 200.0},
])
def test_constellation_validation(kw):
    with pytest.raises(ConfigError):
        ConstellationConfig(**kw)


def test_grid_validation():
    with pytest.raises(ConfigError):
        GridSpec(lat_min=50, lat_max=40)
    with pytest.raises(ConfigError):
        GridSpec(resolution=0)


def test_link_must_be_positive():
    with pytest.raises(ConfigError):
        LinkConfig(bandwidth=0.0)


def test_solver_validation():
    with pytest.raises(ConfigError):
        SolverConfig(n_iter=0)
    with pytest.raises(ConfigError):
        SolverConfig(tau=0.0)
    with pytest.raises(ConfigError):
        SolverConfig(beta=-1.0)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        ScenarioConfig(handover_cost=1.0)
    with pytest.raises(ConfigError):
        ScenarioConfig(algorithm="greedy")


def test_overrides_and_fingerprint():
    base = ScenarioConfig()
    changed = base.with_overrides(handover_cost=0.3, **{"solver.n_iter": 2})
    assert changed.handover_cost == 0.3 and changed.solver.n_iter == 2
    assert base.fingerprint() != changed.fingerprint()
    assert base.fingerprint() == ScenarioConfig().fingerprint()
    # output location does not change what is simulated
    assert base.fingerprint() == base.with_overrides(output_dir="elsewhere").fingerprint()


def test_load_config_units(tmp_path):
    d = {
        "constellation": {"altitude_km": 600, "inclination_deg": 60},
        "timing": {"frame_duration_ms": 5},
        "elevation_mask_deg": 25,
        "population": {"model": "uniform", "n": 7},
    }
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    cfg = load_config(p)
    assert cfg.constellation.altitude == pytest.approx(600e3)
    assert cfg.timing.frame_duration == pytest.approx(5e-3)
    assert cfg.timing.frames_per_slot == 2000
    assert cfg.elevation_mask == 25
    assert cfg.population.params == {"n": 7}


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"timing": {"slot_s": 1}})


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
