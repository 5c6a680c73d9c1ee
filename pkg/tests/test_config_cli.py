import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modalsim import scenarios
from modalsim.cli import main
from modalsim.config import SCENARIOS, config_from_dict, load_config, parse_config
from modalsim.errors import ConfigError, NumericalError
from modalsim.scenarios import compute_scenario, config_hash, run_scenario, verify_manifest

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = {"scenario": "localization", "parameters": {"epsilon": 0.1, "n_sites": 50, "psi": "gaussian", "sigma": 1.0, "ells": [0.5]}}


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def test_minimal_config_fills_defaults():
    cfg = config_from_dict(MINIMAL)
    assert cfg.seed == 0 and cfg.output_format == "csv"
    assert cfg.parameters["n_top"] == 5 and cfg.parameters["center"] is None


def test_decay_bound_message():
    data = {"scenario": "decay_geiger", "parameters": {"gamma": 0.5, "eta": 1.0, "n_steps": 10}}
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert "parameters.gamma*eta = 0.5 violates the bound gamma*eta < 0.1" in err.value.violations


def test_all_violations_are_reported():
    data = {
        "scenario": "decay_geiger",
        "seed": -1,
        "colour": "red",
        "output_format": "xml",
        "parameters": {"gamma": "fast", "n_steps": 2.5, "bogus": 1},
    }
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    text = "\n".join(err.value.violations)
    for fragment in ("'colour'", "seed", "output_format", "parameters.gamma", "parameters.eta", "parameters.n_steps", "parameters.bogus"):
        assert fragment in text
    assert len(err.value.violations) >= 7


def test_malformed_json_and_unknown_scenario():
    with pytest.raises(ConfigError, match="malformed JSON"):
        parse_config("{not json")
    with pytest.raises(ConfigError, match="unknown scenario"):
        config_from_dict({"scenario": "teleport"})


def test_crossover_reach_check():
    data = {"scenario": "crossover", "parameters": {"p0": 0.3, "a": 1.0, "delta": 0.01, "t_span": 2.0, "etas": [0.01]}}
    with pytest.raises(ConfigError, match="t_span"):
        config_from_dict(data)


def test_sample_configs_are_valid():
    names = sorted(p.name for p in CONFIG_DIR.glob("*.json"))
    assert len(names) == len(SCENARIOS)
    for path in CONFIG_DIR.glob("*.json"):
        assert load_config(path).scenario in SCENARIOS


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 2**64 - 1),
    st.floats(0.01, 10),
    st.integers(2, 400),
    st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=5),
    finite,
    st.sampled_from(["csv", "json"]),
)
def test_config_round_trip(seed, eps, n_sites, ells, center, fmt):
    data = {
        "scenario": "localization",
        "seed": seed,
        "output_format": fmt,
        "parameters": {"epsilon": eps, "n_sites": n_sites, "psi": "gaussian", "center": center, "sigma": 1.0, "ells": ells},
    }
    cfg = config_from_dict(data)
    again = parse_config(cfg.to_json())
    assert again.to_json() == cfg.to_json()
    assert config_hash(again) == config_hash(cfg)


def test_hash_ignores_output_dir():
    a = config_from_dict(MINIMAL)
    assert config_hash(a) == config_hash(a.with_overrides(output_dir="elsewhere"))
    assert config_hash(a) != config_hash(a.with_overrides(seed=3))


# -- scenarios ---------------------------------------------------------------

SMALL = {
    "localization": MINIMAL["parameters"],
    "measurement_collapse": {"probabilities": [0.5, 0.3, 0.2], "positions": [0.0, 1.0, 2.0], "n_constituents": 100,
                             "epsilon": 1.0, "t_rise": 1.0, "times": [0.0, 0.5, 2.0]},
    "crossover": {"p0": 0.3, "a": 1.0, "delta": 0.001, "t_span": 0.02, "n_times": 11, "etas": [1e-4, 0.01]},
    "degeneracy_split": {"outer_probs": [0.6, 0.4], "block_sizes": [2, 2], "times": [0.0, 0.5]},
    "imperfect_device": {"probabilities": [0.5, 0.3, 0.2], "leak": 0.05, "copies": 2},
    "decay_geiger": {"gamma": 0.01, "eta": 1.0, "n_steps": 20},
}


@pytest.mark.parametrize("scenario", sorted(SMALL))
def test_scenarios_run_and_are_byte_deterministic(scenario, tmp_path):
    cfg = config_from_dict({"scenario": scenario, "seed": 5, "n_trajectories": 200, "parameters": SMALL[scenario]})
    _, m1 = run_scenario(cfg, tmp_path / "a")
    result, m2 = run_scenario(cfg, tmp_path / "b")
    assert result.passed
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert verify_manifest(m1) == []


def test_manifest_detects_tampering(tmp_path):
    cfg = config_from_dict({"scenario": "imperfect_device", "parameters": SMALL["imperfect_device"]})
    _, manifest = run_scenario(cfg, tmp_path)
    data = json.loads(manifest.read_text())
    assert data["config_sha256"] == config_hash(cfg)
    assert "output_dir" not in data["config"]
    target = tmp_path / "imperfect.csv"
    target.write_bytes(target.read_bytes() + b"\n")
    assert verify_manifest(manifest) == ["imperfect.csv"]


def test_json_output_format(tmp_path):
    cfg = config_from_dict({"scenario": "imperfect_device", "output_format": "json", "parameters": SMALL["imperfect_device"]})
    run_scenario(cfg, tmp_path)
    table = json.loads((tmp_path / "imperfect.json").read_text())
    assert table["columns"][0] == "outcome"


def test_crossover_matching_table():
    cfg = config_from_dict({"scenario": "crossover", "parameters": SMALL["crossover"]})
    res = compute_scenario(cfg)
    matching = next(t for t in res.tables if t.name == "matching")
    swapped = [row[matching.columns.index("swapped")] for row in matching.rows]
    assert swapped == [False, True]


# -- CLI ---------------------------------------------------------------------


def test_cli_validate_prints_canonical_json(tmp_path, capsys):
    assert main(["validate", str(write(tmp_path, MINIMAL))]) == 0
    assert json.loads(capsys.readouterr().out)["parameters"]["n_top"] == 5


def test_cli_run_success(tmp_path, capsys):
    path = write(tmp_path, MINIMAL)
    assert main(["run", str(path), "--out", str(tmp_path / "out"), "--seed", "9"]) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 9


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = {"scenario": "decay_geiger", "parameters": {"gamma": 0.5, "eta": 1.0, "n_steps": 10}}
    assert main(["run", str(write(tmp_path, bad))]) == 2
    assert "gamma*eta < 0.1" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.json")]) == 2


def test_cli_acceptance_failure_exit_code(tmp_path, monkeypatch, capsys):
    def failing(cfg):
        return scenarios.ScenarioResult([scenarios.Table("t", ["x"], [[1]])], False, {})

    monkeypatch.setitem(scenarios.RUNNERS, "localization", failing)
    assert main(["run", str(write(tmp_path, MINIMAL)), "--out", str(tmp_path / "o")]) == 1


def test_cli_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    def broken(cfg):
        raise NumericalError("eigensolver diverged")

    monkeypatch.setitem(scenarios.RUNNERS, "localization", broken)
    assert main(["run", str(write(tmp_path, MINIMAL)), "--out", str(tmp_path / "o")]) == 3
    assert "eigensolver diverged" in capsys.readouterr().err
