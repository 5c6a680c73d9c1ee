"""Run a validated :class:`ScenarioConfig` and write deterministic output files.

Numbers are written with ``repr``, the shortest decimal string that
round-trips to the same double, so identical inputs give identical bytes.
Every run ends with ``manifest.json`` listing the config hash, the package
version and a sha256 per emitted file.  Nothing time-dependent is recorded.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .config import ScenarioConfig
from .decay import DecayParams, decay_weights, simulate_geiger
from .errors import ModalSimError
from .lattice import LatticeGrid, LatticeWaveFunction, gaussian_decohered_rho, localization_length
from .linalg import eigen_decompose, reduced_density_matrix
from .oracles import (
    GaussianOracle,
    SquareWellOracle,
    gaussian_lattice_spectrum,
    gaussian_spectrum,
    select_square_well_reading,
    square_well_lattice_spectrum,
    square_well_spectrum,
)
from .pointer import (
    BlockModel,
    CrossoverParams,
    PointerFamily,
    cross_block_weight,
    crossover_spectrum,
    crossover_state,
    imperfect_full_state,
    imperfect_measurement_blocks,
    measurement_rho,
    split_block_rho,
)
from .stochastic import BranchFrame, match_branches, worker_count

Row = Sequence[object]


class ScenarioError(ModalSimError):
    """A module error annotated with the scenario step that raised it."""

    def __init__(self, step: str, cause: Exception):
        super().__init__(f"{step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass
class Table:
    name: str
    columns: tuple[str, ...]
    rows: list[Row] = field(default_factory=list)


@dataclass
class ScenarioResult:
    tables: list[Table]
    passed: bool = True
    summary: dict = field(default_factory=dict)


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _json_value(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    return value


def render_table(table: Table, fmt: str) -> bytes:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([_cell(v) for v in row])
        return buf.getvalue().encode()
    doc = {"columns": list(table.columns), "rows": [[_json_value(v) for v in row] for row in table.rows]}
    return (json.dumps(doc, separators=(",", ":")) + "\n").encode()


def _hashed_config(config: ScenarioConfig) -> dict:
    # the output location does not affect results, so it stays out of the hash
    data = config.canonical()
    del data["output_dir"]
    return data


def config_hash(config: ScenarioConfig) -> str:
    text = json.dumps(_hashed_config(config), sort_keys=True, indent=2) + "\n"
    return hashlib.sha256(text.encode()).hexdigest()


# -- scenarios --------------------------------------------------------------


def run_localization(cfg: ScenarioConfig) -> ScenarioResult:
    p = cfg.parameters
    eps, n = p["epsilon"], p["n_sites"]
    grid = LatticeGrid(eps, n, -eps * (n - 1) / 2)
    if p["psi"] == "uniform":
        psi = LatticeWaveFunction.uniform(grid)
    else:
        center = 0.0 if p["center"] is None else p["center"]
        sigma = grid.span / 8 if p["sigma"] is None else p["sigma"]
        psi = LatticeWaveFunction.gaussian(grid, center, sigma)
    table = Table("localization", ("ell", "eigen_index", "probability", "localization_length"))
    for ell in p["ells"]:
        spec = eigen_decompose(gaussian_decohered_rho(psi, ell, p["ell_min"]))
        for k in range(min(p["n_top"], n)):
            table.rows.append((ell, k, spec.probabilities[k], localization_length(spec.vectors[:, k], eps)))
    return ScenarioResult([table])


def run_measurement_collapse(cfg: ScenarioConfig) -> ScenarioResult:
    p = cfg.parameters
    probs = np.asarray(p["probabilities"])
    positions = p["positions"] if p["positions"] is not None else list(map(float, range(len(probs))))
    family = PointerFamily.gaussian_schedule(positions, p["n_constituents"], p["epsilon"], p["t_rise"])
    table = Table("collapse", ("t", "outcome", "probability"))
    for t in p["times"]:
        rho, _ = measurement_rho(family, probs, t)
        spec = eigen_decompose(rho)
        for k, value in enumerate(spec.probabilities):
            table.rows.append((t, k, value))
    return ScenarioResult([table])


@dataclass(frozen=True)
class CrossoverMatch:
    """Branch matching across a step of length ``eta`` centred on the crossing."""

    eta: float
    swapped: bool
    same_score: float
    swap_score: float


def crossover_matching(params: CrossoverParams, eta: float) -> CrossoverMatch:
    """Match branches between ``t0 - eta/2`` and ``t0 + eta/2``.

    The step unitary is the identity, so the scores are the squared overlaps
    of the device eigenvectors.  ``swapped`` reports whether the upper level
    before the step is matched to the lower level after it.
    """
    t_a, t_b = params.t0 - eta / 2, params.t0 + eta / 2
    prev = BranchFrame.from_state(crossover_state(params, t_a), t_a)
    nxt = BranchFrame.from_state(crossover_state(params, t_b), t_b)
    matching = match_branches(prev, nxt, np.eye(prev.schmidt.left_vectors.shape[0] * prev.schmidt.right_vectors.shape[0]))

    def label(frame: BranchFrame, value: float) -> int:
        return int(np.argmin(np.abs(frame.probabilities - value)))

    sa, sb = crossover_spectrum(params, t_a), crossover_spectrum(params, t_b)
    up_a, up_b, lo_b = label(prev, sa.p_plus), label(nxt, sb.p_plus), label(nxt, sb.p_minus)
    swapped = int(matching.permutation[up_a]) == lo_b
    return CrossoverMatch(eta, swapped, float(matching.scores[up_b, up_a]), float(matching.scores[lo_b, up_a]))


def run_crossover(cfg: ScenarioConfig) -> ScenarioResult:
    p = cfg.parameters
    delta = p["delta"] * complex(math.cos(p["delta_phase"]), math.sin(p["delta_phase"]))
    params = CrossoverParams(p["p0"], p["a"], delta, p["t0"])
    curve = Table("crossover", ("t", "p_plus", "p_minus", "theta"))
    half = p["t_span"] / 2
    gap = math.inf
    for t in np.linspace(p["t0"] - half, p["t0"] + half, p["n_times"]):
        s = crossover_spectrum(params, float(t))
        gap = min(gap, s.p_plus - s.p_minus)
        curve.rows.append((float(t), s.p_plus, s.p_minus, s.theta))
    tables = [curve]
    if p["etas"]:
        sweep = Table("matching", ("eta", "eta_over_switch_time", "swapped", "same_score", "swap_score"))
        for eta in p["etas"]:
            m = crossover_matching(params, eta)
            sweep.rows.append((eta, eta / params.switch_time if params.switch_time else math.inf,
                               m.swapped, m.same_score, m.swap_score))
        tables.append(sweep)
    return ScenarioResult(tables, summary={"min_gap": gap, "switch_time": params.switch_time})


def _degeneracy_model(p: dict, seed: int) -> BlockModel:
    rng = np.random.default_rng(seed)
    s = p["pointer_overlap"]
    weights, grams = [], []
    for m in p["block_sizes"]:
        gram = (1 - s) * np.eye(m) + s * np.ones((m, m))
        z0 = rng.normal(size=m) + 1j * rng.normal(size=m)
        z1 = rng.normal(size=m) + 1j * rng.normal(size=m)

        def z_at(t, z0=z0, z1=z1):
            # environment states are orthonormal, so the block norm is |z|
            z = z0 + t * z1
            return z / np.linalg.norm(z)

        weights.append(z_at)
        grams.append(gram)
    return BlockModel(np.asarray(p["outer_probs"]), tuple(weights), tuple(grams),
                      tuple(np.eye(m) for m in p["block_sizes"]))


def run_degeneracy_split(cfg: ScenarioConfig) -> ScenarioResult:
    model = _degeneracy_model(cfg.parameters, cfg.seed)
    table = Table("degeneracy", ("t", "eigen_index", "probability", "block", "cross_block_weight"))
    worst = 0.0
    for t in cfg.parameters["times"]:
        split = split_block_rho(model, t)
        spec = eigen_decompose(split.rho)
        labels = split.block_of_coordinate
        leak = cross_block_weight(spec.vectors, labels)
        for k, value in enumerate(spec.probabilities):
            if value <= 0:
                continue
            weights = [np.sum(np.abs(spec.vectors[labels == b, k]) ** 2) for b in range(model.n_blocks)]
            table.rows.append((t, k, value, int(np.argmax(weights)), leak[k]))
            worst = max(worst, leak[k])
    return ScenarioResult([table], summary={"max_cross_block_weight": worst})


def imperfect_device_inputs(probabilities, leak: float, copies: int, env_overlap: float):
    """Weights ``Z[a, i, j]`` and environment Grams for a leaky ``n``-outcome device.

    Outcome ``j`` registers as ``j`` with amplitude ``sqrt(1 - leak)`` and
    spreads ``leak`` evenly over the other outcomes; each branch is copied
    into ``copies`` orthogonal device sub-states.  Environment states of
    different outcomes overlap by ``env_overlap``.
    """
    n = len(probabilities)
    m = copies
    base = np.full((n, n), math.sqrt(leak / (n - 1)))
    np.fill_diagonal(base, math.sqrt(1 - leak))
    Z = np.repeat(base[None, :, :], m, axis=0) / math.sqrt(m)
    block = np.kron(np.eye(n), np.ones((m, m)))
    gram = np.eye(n * m) + env_overlap * (np.ones((n * m, n * m)) - block)
    return Z, np.repeat(gram[None], n, axis=0)


def run_imperfect_device(cfg: ScenarioConfig) -> ScenarioResult:
    p = cfg.parameters
    probs = np.asarray(p["probabilities"])
    Z, env = imperfect_device_inputs(probs, p["leak"], p["copies"], p["env_overlap"])
    formula = imperfect_measurement_blocks(probs, Z, env)
    state, labels = imperfect_full_state(probs, Z, env)
    rho = reduced_density_matrix(state, "A")
    brute = np.array([np.trace(rho.entries[np.ix_(labels == i, labels == i)]).real for i in range(len(probs))])
    spec = eigen_decompose(rho)
    leak = cross_block_weight(spec.vectors, labels)
    table = Table("imperfect", ("outcome", "formula_probability", "brute_force_probability", "abs_difference"))
    for i in range(len(probs)):
        table.rows.append((i, formula[i], brute[i], abs(formula[i] - brute[i])))
    spectrum = Table("imperfect_spectrum", ("eigen_index", "probability", "cross_block_weight"))
    for k, value in enumerate(spec.probabilities):
        spectrum.rows.append((k, value, leak[k]))
    return ScenarioResult([table, spectrum], summary={"max_difference": float(np.max(np.abs(formula - brute)))})


def run_decay_geiger(cfg: ScenarioConfig) -> ScenarioResult:
    p = cfg.parameters
    params = DecayParams(p["gamma"], p["eta"], p["n_steps"], e0=p["e0"], tau=p["tau"])
    keep = p["write_trajectories"]
    result = simulate_geiger(params, cfg.n_trajectories, cfg.seed, rate=p["rate"], keep_paths=keep,
                             workers=worker_count())
    hist = Table("histogram", ("window_index", "expected_p", "observed_count"))
    for j, (e, c) in enumerate(zip(result.expected_p, result.window_counts), start=1):
        hist.rows.append((j, e, c))
    curves = Table("curves", ("step", "branch", "probability"))
    for n in range(params.n_steps + 1):
        w = decay_weights(params, n).weights
        for b in range(n + 1):
            curves.rows.append((n, b, w[b]))
    occ = Table("occupancy", ("step", "branch", "count"))
    for n, row in enumerate(result.ensemble.occupancy):
        for b in range(n + 1):
            occ.rows.append((n, b, row[b]))
    tables = [hist, curves, occ]
    if keep:
        traj = Table("trajectories", ("trajectory_id", "step", "time", "branch_label"))
        for k, path in enumerate(result.ensemble.paths):
            for n, b in enumerate(path):
                traj.rows.append((k, n, n * params.eta, b))
        tables.append(traj)
    summary = {
        "survivors": result.survivors,
        "reverse_transitions": result.reverse_transitions,
        "decayed_hops": result.decayed_hops,
    }
    return ScenarioResult(tables, summary=summary)


def run_oracle_check(cfg: ScenarioConfig) -> ScenarioResult:
    """Lattice spectra against the closed forms.

    Gaussian levels pass on relative error; square-well levels pass on
    absolute error because the far tail sits at the 1e-9 scale where a
    relative comparison measures only lattice aliasing.
    """
    p = cfg.parameters
    tol = p["tolerance"]
    table = Table("oracle_check", ("oracle", "parameter", "level", "expected", "numeric",
                                   "abs_error", "rel_error", "passed"))
    passed = True
    for ratio in p["gaussian_ratios"]:
        oracle = GaussianOracle(ratio * p["b"], p["b"])
        n_levels = p["gaussian_levels"]
        expected = gaussian_spectrum(oracle, n_levels - 1).probabilities[:n_levels]
        numeric = gaussian_lattice_spectrum(oracle, n_levels, p["gaussian_sites"])
        for n in range(n_levels):
            err = abs(numeric[n] - expected[n])
            rel = err / expected[n] if expected[n] > 0 else (0.0 if err == 0 else math.inf)
            ok = bool(rel <= tol) if expected[n] > 0 else bool(err <= tol)
            passed &= ok
            table.rows.append(("gaussian", ratio, n, expected[n], numeric[n], err, rel, ok))
    well = SquareWellOracle(p["square_well_a"], p["square_well_L"])
    reading, _ = select_square_well_reading(well, p["square_well_sites"], p["square_well_levels"])
    expected = square_well_spectrum(well, reading).probabilities
    numeric = square_well_lattice_spectrum(well, p["square_well_sites"])
    for n in range(p["square_well_levels"]):
        e = expected[n] if n < len(expected) else 0.0
        err = abs(numeric[n] - e)
        rel = err / e if e > 0 else math.inf
        ok = bool(err <= tol)
        passed &= ok
        table.rows.append(("square_well", p["square_well_a"], n + 1, e, numeric[n], err, rel, ok))
    return ScenarioResult([table], passed=passed, summary={"square_well_reading": reading})


RUNNERS: dict[str, Callable[[ScenarioConfig], ScenarioResult]] = {
    "localization": run_localization,
    "measurement_collapse": run_measurement_collapse,
    "crossover": run_crossover,
    "degeneracy_split": run_degeneracy_split,
    "imperfect_device": run_imperfect_device,
    "decay_geiger": run_decay_geiger,
    "oracle_check": run_oracle_check,
}


def compute_scenario(config: ScenarioConfig) -> ScenarioResult:
    try:
        return RUNNERS[config.scenario](config)
    except ModalSimError as exc:
        raise ScenarioError(config.scenario, exc) from exc


def write_outputs(config: ScenarioConfig, result: ScenarioResult, out_dir: str | Path | None = None) -> Path:
    """Write every table plus ``manifest.json``; returns the manifest path."""
    out = Path(config.output_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = config.output_format
    files = {}
    for table in result.tables:
        data = render_table(table, ext)
        name = f"{table.name}.{ext}"
        (out / name).write_bytes(data)
        files[name] = hashlib.sha256(data).hexdigest()
    manifest = {
        "tool": "modalsim",
        "version": __version__,
        "scenario": config.scenario,
        "config_sha256": config_hash(config),
        "config": _hashed_config(config),
        "passed": result.passed,
        "files": dict(sorted(files.items())),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def run_scenario(config: ScenarioConfig, out_dir: str | Path | None = None) -> tuple[ScenarioResult, Path]:
    """Compute a scenario and write its outputs."""
    result = compute_scenario(config)
    return result, write_outputs(config, result, out_dir)


def verify_manifest(manifest_path: str | Path) -> list[str]:
    """Names of files whose checksum no longer matches the manifest."""
    path = Path(manifest_path)
    manifest = json.loads(path.read_text())
    bad = []
    for name, digest in manifest["files"].items():
        f = path.parent / name
        if not f.exists() or hashlib.sha256(f.read_bytes()).hexdigest() != digest:
            bad.append(name)
    return bad


__all__ = [
    "CrossoverMatch",
    "ScenarioError",
    "ScenarioResult",
    "Table",
    "compute_scenario",
    "config_hash",
    "crossover_matching",
    "imperfect_device_inputs",
    "render_table",
    "run_scenario",
    "verify_manifest",
    "write_outputs",
]
