"""Scenario configuration: strict JSON parsing with exhaustive error reporting.

A config document looks like::

    {
      "scenario": "decay_geiger",
      "seed": 42,
      "n_trajectories": 100000,
      "output_dir": "out/decay",
      "output_format": "csv",
      "parameters": {"gamma": 0.01, "eta": 1.0, "n_steps": 200}
    }

Unknown keys are errors.  Every problem found is reported, not just the first.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import ConfigError

SCENARIOS = (
    "localization",
    "measurement_collapse",
    "crossover",
    "degeneracy_split",
    "imperfect_device",
    "decay_geiger",
    "oracle_check",
)
FORMATS = ("csv", "json")
TOP_LEVEL = ("scenario", "seed", "n_trajectories", "output_dir", "output_format", "parameters")
MAX_SEED = (1 << 64) - 1

REQUIRED = object()


@dataclass(frozen=True)
class Param:
    kind: str  # float, int, str, bool, floats
    default: Any = REQUIRED
    check: Callable[[Any], str | None] | None = None
    choices: tuple | None = None


def positive(v):
    return None if v > 0 else "must be positive"


def non_negative(v):
    return None if v >= 0 else "must be non-negative"


def probability_open(v):
    return None if 0 < v < 1 else "must lie in (0, 1)"


def unit_interval(v):
    return None if 0 <= v < 1 else "must lie in [0, 1)"


def at_least(n):
    return lambda v: None if v >= n else f"must be at least {n}"


def all_positive(vs):
    return None if vs and all(v > 0 for v in vs) else "must be a non-empty list of positive numbers"


def all_non_negative(vs):
    return None if vs and all(v >= 0 for v in vs) else "must be a non-empty list of non-negative numbers"


def distribution(vs):
    if not vs or any(v < 0 for v in vs):
        return "must be a non-empty list of non-negative numbers"
    if abs(sum(vs) - 1.0) > 1e-10:
        return f"must sum to 1 (sums to {sum(vs)!r})"
    return None


SCHEMAS: dict[str, dict[str, Param]] = {
    "localization": {
        "epsilon": Param("float", check=positive),
        "n_sites": Param("int", check=at_least(2)),
        "psi": Param("str", "gaussian", choices=("gaussian", "uniform")),
        "center": Param("float", None),
        "sigma": Param("float", None, check=positive),
        "ells": Param("floats", check=all_positive),
        "n_top": Param("int", 5, check=at_least(1)),
        "ell_min": Param("float", 0.0, check=non_negative),
    },
    "measurement_collapse": {
        "probabilities": Param("floats", check=distribution),
        "positions": Param("floats", None),
        "n_constituents": Param("int", check=at_least(1)),
        "epsilon": Param("float", check=positive),
        "t_rise": Param("float", check=positive),
        "times": Param("floats", check=all_non_negative),
    },
    "crossover": {
        "p0": Param("float", check=probability_open),
        "a": Param("float"),
        "delta": Param("float", check=non_negative),
        "delta_phase": Param("float", 0.0),
        "t0": Param("float", 0.0),
        "t_span": Param("float", check=positive),
        "n_times": Param("int", 201, check=at_least(2)),
        "etas": Param("floats", None, check=all_positive),
    },
    "degeneracy_split": {
        "outer_probs": Param("floats", check=distribution),
        "block_sizes": Param("floats"),
        "pointer_overlap": Param("float", 0.3, check=unit_interval),
        "times": Param("floats", check=all_non_negative),
    },
    "imperfect_device": {
        "probabilities": Param("floats", check=distribution),
        "leak": Param("float", check=unit_interval),
        "copies": Param("int", 1, check=at_least(1)),
        "env_overlap": Param("float", 0.0, check=unit_interval),
    },
    "decay_geiger": {
        "gamma": Param("float", check=non_negative),
        "eta": Param("float", check=positive),
        "n_steps": Param("int", check=at_least(1)),
        "tau": Param("float", None, check=positive),
        "e0": Param("float", 0.0),
        "rate": Param("str", "exact", choices=("exact", "linear")),
        "write_trajectories": Param("bool", False),
    },
    "oracle_check": {
        "gaussian_ratios": Param("floats", [0.1, 1.0, 4.0, 100.0], check=all_non_negative),
        "b": Param("float", 1.0, check=positive),
        "gaussian_sites": Param("int", 600, check=at_least(10)),
        "gaussian_levels": Param("int", 11, check=at_least(1)),
        "square_well_a": Param("float", 50.0, check=positive),
        "square_well_L": Param("float", 1.0, check=positive),
        "square_well_sites": Param("int", 400, check=at_least(10)),
        "square_well_levels": Param("int", 20, check=at_least(1)),
        "tolerance": Param("float", 1e-6, check=positive),
    },
}


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    parameters: dict = field(hash=False)
    seed: int = 0
    n_trajectories: int = 0
    output_dir: str = "out"
    output_format: str = "csv"

    def canonical(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "n_trajectories": self.n_trajectories,
            "output_dir": self.output_dir,
            "output_format": self.output_format,
            "parameters": dict(sorted(self.parameters.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.canonical(), sort_keys=True, indent=2) + "\n"

    def with_overrides(self, **changes) -> "ScenarioConfig":
        data = self.canonical()
        data.update({k: v for k, v in changes.items() if v is not None})
        return config_from_dict(data)


def _coerce(kind: str, value, where: str, errors: list[str]):
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{where}: expected a number, got {value!r}")
            return None
        value = float(value)
        if not math.isfinite(value):
            errors.append(f"{where}: must be finite")
            return None
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            errors.append(f"{where}: expected an integer, got {value!r}")
            return None
        return value
    if kind == "str":
        if not isinstance(value, str):
            errors.append(f"{where}: expected a string, got {value!r}")
            return None
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            errors.append(f"{where}: expected true or false, got {value!r}")
            return None
        return value
    if kind == "floats":
        if not isinstance(value, list):
            errors.append(f"{where}: expected a list of numbers, got {value!r}")
            return None
        out = []
        for k, v in enumerate(value):
            c = _coerce("float", v, f"{where}[{k}]", errors)
            if c is None:
                return None
            out.append(c)
        return out
    raise AssertionError(kind)


def _cross_checks(scenario: str, p: dict, errors: list[str]) -> None:
    """Constraints that involve several parameters or module preconditions."""
    where = "parameters"
    if scenario == "decay_geiger" and None not in (p.get("gamma"), p.get("eta")):
        ge = p["gamma"] * p["eta"]
        if ge >= 0.1:
            errors.append(f"{where}.gamma*eta = {ge:g} violates the bound gamma*eta < 0.1")
        tau = p.get("tau") if p.get("tau") is not None else p["eta"] / 100
        if p["gamma"] * tau >= 0.01:
            errors.append(f"{where}.gamma*tau = {p['gamma'] * tau:g} violates the bound gamma*tau < 0.01")
        if tau > p["eta"]:
            errors.append(f"{where}.tau must not exceed eta")
    if scenario == "measurement_collapse" and p.get("probabilities") is not None:
        if p.get("positions") is not None and len(p["positions"]) != len(p["probabilities"]):
            errors.append(f"{where}.positions must have one entry per probability")
    if scenario == "degeneracy_split" and p.get("block_sizes") is not None:
        sizes = p["block_sizes"]
        if any(s < 1 or not float(s).is_integer() for s in sizes):
            errors.append(f"{where}.block_sizes must be positive integers")
        elif p.get("outer_probs") is not None and len(sizes) != len(p["outer_probs"]):
            errors.append(f"{where}.block_sizes must have one entry per outer probability")
        else:
            p["block_sizes"] = [int(s) for s in sizes]
    if scenario == "crossover" and None not in (p.get("p0"), p.get("delta")):
        if p["p0"] > 0.5:
            errors.append(f"{where}.p0 must be at most 0.5 so the spectator level stays positive")
        if p["delta"] >= 1:
            errors.append(f"{where}.delta must be below 1")
        if p.get("a") == 0:
            errors.append(f"{where}.a must be nonzero")
        if p.get("a"):
            limit = p["p0"] * math.sqrt(max(1 - p["delta"] ** 2, 0.0))
            spans = [("t_span", p.get("t_span"))] + [(f"etas[{k}]", e) for k, e in enumerate(p.get("etas") or [])]
            for name, span in spans:
                if span is not None and abs(p["a"]) * span / 2 > limit:
                    errors.append(f"{where}.{name}: |a| * {span:g} / 2 exceeds p0 sqrt(1 - delta^2) = {limit:g}")
    if scenario == "imperfect_device" and p.get("probabilities") is not None:
        if len(p["probabilities"]) < 2:
            errors.append(f"{where}.probabilities needs at least two outcomes")
        if p.get("env_overlap") and p.get("copies") and p["env_overlap"] * p["copies"] > 1:
            errors.append(f"{where}.env_overlap * copies must not exceed 1")


def config_from_dict(data) -> ScenarioConfig:
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["config must be a JSON object"])
    for key in sorted(set(data) - set(TOP_LEVEL)):
        errors.append(f"unknown key {key!r}")
    scenario = data.get("scenario")
    if scenario is None:
        errors.append("missing required key 'scenario'")
    elif scenario not in SCENARIOS:
        errors.append(f"scenario: unknown scenario {scenario!r} (expected one of {', '.join(SCENARIOS)})")
        scenario = None

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= MAX_SEED:
        errors.append(f"seed: must be an integer in [0, 2^64), got {seed!r}")
    n_traj = data.get("n_trajectories", 0)
    if isinstance(n_traj, bool) or not isinstance(n_traj, int) or n_traj < 0:
        errors.append(f"n_trajectories: must be a non-negative integer, got {n_traj!r}")
    out_dir = data.get("output_dir", "out")
    if not isinstance(out_dir, str) or not out_dir:
        errors.append(f"output_dir: must be a non-empty string, got {out_dir!r}")
    fmt = data.get("output_format", "csv")
    if fmt not in FORMATS:
        errors.append(f"output_format: must be one of {', '.join(FORMATS)}, got {fmt!r}")

    raw = data.get("parameters", {})
    params: dict = {}
    if not isinstance(raw, dict):
        errors.append("parameters: must be an object")
    elif scenario is not None:
        schema = SCHEMAS[scenario]
        for key in sorted(set(raw) - set(schema)):
            errors.append(f"parameters.{key}: unknown parameter for scenario {scenario!r}")
        for key, spec in schema.items():
            where = f"parameters.{key}"
            if key not in raw or raw[key] is None:
                if spec.default is REQUIRED:
                    errors.append(f"{where}: missing required parameter")
                    params[key] = None
                else:
                    params[key] = list(spec.default) if isinstance(spec.default, list) else spec.default
                continue
            value = _coerce(spec.kind, raw[key], where, errors)
            if value is not None:
                if spec.choices is not None and value not in spec.choices:
                    errors.append(f"{where}: must be one of {', '.join(map(str, spec.choices))}, got {value!r}")
                elif spec.check is not None and (msg := spec.check(value)):
                    errors.append(f"{where}: {msg}")
            params[key] = value
        _cross_checks(scenario, params, errors)
    if errors:
        raise ConfigError(errors)
    return ScenarioConfig(scenario, params, seed, n_traj, out_dir, fmt)


def parse_config(text: str) -> ScenarioConfig:
    """Parse and fully validate a JSON config document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"malformed JSON: {exc}"]) from exc
    return config_from_dict(data)


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    return parse_config(text)
