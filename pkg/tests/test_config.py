import numpy as np
import pytest

from diracip.config import DEFAULTS, EXPERIMENTS, ConfigError, load_config, resolve


def test_defaults_resolve_for_every_experiment():
    assert len(EXPERIMENTS) == 9
    for name in EXPERIMENTS:
        cfg = resolve(None, name)
        assert cfg.experiment == name and cfg.seed == 0
        assert len(cfg.hash) == 64


def test_default_values():
    cfg = resolve(None, "phase-check")
    assert cfg.alpha == 0.05 and cfg.C0 == 20.0
    assert cfg.h_grid == [2.0**-k for k in range(2, 7)]
    assert np.array_equal(cfg.x0, np.zeros(3)) and np.array_equal(cfg.omega, [1.0, 0, 0])
    assert cfg.domain().n == 17
    # per-experiment overrides replace shared settings
    assert resolve(None, "decay-scan").domain().n == 33


def test_hash_is_stable_and_sensitive():
    a, b = resolve(None, "phase-check"), resolve(None, "phase-check")
    assert a.hash == b.hash
    assert resolve(None, "phase-check", seed=1).hash != a.hash
    assert resolve({"weights": {"C0": 21.0}}, "phase-check").hash != a.hash
    assert resolve(None, "cauchy-check").hash != a.hash
    # key order in the input does not matter
    c = resolve({"phase": {"omega": [1.0, 0.0, 0.0], "x0": [0.0, 0.0, 0.0]}}, "phase-check")
    assert c.hash == a.hash


def test_override_merge_is_deep():
    cfg = resolve({"domain": {"n": 9}, "experiments": {"algebra-selftest": {"samples": 10}}}, "algebra-selftest")
    assert cfg.domain_spec["size"] == 1.0 and cfg.domain_spec["n"] == 9
    assert cfg["samples"] == 10 and cfg["tolerance"] == 1e-12
    assert DEFAULTS["domain"]["n"] == 17


def test_explicit_h_list():
    assert resolve({"h_grid": {"h": [0.5, 0.25]}}, "carleman-probe").h_grid == [0.5, 0.25]


@pytest.mark.parametrize("data", [
    {"weights": {"alpha": 1.5}},
    {"weights": {"C0": -1.0}},
    {"h_grid": {"h": [0.5]}},
    {"h_grid": {"h": [0.5, 2.0]}},
    {"phase": {"omega": [0, 0, 0]}},
    {"domain": {"center": [0, 0, 0.1]}},
    {"coefficients": {"base": {"A": ["0", "0"], "q_plus": "1", "q_minus": "1"}}},
    {"coefficients": {"bad": {"A": ["0", "0", "0"], "q_plus": "foo(x1)", "q_minus": "1"}}},
    {"coefficients": {"bad": {"A": ["0", "0", "0"], "q_plus": "1"}}},
    {"experiments": {"no-such-run": {}}},
])
def test_invalid_configs_raise(data):
    with pytest.raises(ConfigError):
        resolve(data, "phase-check")


def test_unknown_experiment_and_scenario():
    with pytest.raises(ConfigError):
        resolve(None, "solve-everything")
    with pytest.raises(ConfigError):
        resolve(None, "phase-check").coefficients("missing")


def test_toml_load(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 7\n[domain]\nn = 9\n[experiments.algebra-selftest]\nsamples = 5\n')
    cfg = load_config(p, "algebra-selftest")
    assert cfg.seed == 7 and cfg["samples"] == 5 and cfg.domain().n == 9
    assert load_config(p, "algebra-selftest", seed=3).seed == 3
    bad = tmp_path / "bad.toml"
    bad.write_text("[domain\n")
    with pytest.raises(ConfigError):
        load_config(bad, "algebra-selftest")
    assert load_config(None, "algebra-selftest").hash == resolve(None, "algebra-selftest").hash
