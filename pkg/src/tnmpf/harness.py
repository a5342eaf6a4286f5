"""Experiment drivers: time-grid sweeps producing CSV tables and JSON summaries.

Every sweep evaluates grid points independently (optionally in a process pool)
and collects rows in grid order, so output is identical for any worker count.
Two independent paths are run side by side: the MPO path, which never stores a
time-evolved state, and a check path that does (dense vectors up to the dense
cap, explicit MPS states above it).
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__, dense
from .aqc import (
    AQCWindow,
    aqc_interleave_plan,
    build_ansatz,
    composite_state,
    cost_trace_rows,
    optimize,
    save_theta,
    smart_init,
)
from .config import ExperimentConfig
from .estimator import EstimateResult, estimate, mpf_combine
from .mpf import (
    MPFProblem,
    _finish,
    dynamic_coefficients,
    fit_scaling,
    mpf_test,
    quadratic_error,
)
from .mpo import build_F, exact_plan, pair_plan, sandwich
from .mps import MatrixProductState, ObservableSpec, apply_circuit, expectation, overlap, product_state
from .spinchain import HamiltonianSpec, build_hamiltonian, trotter_circuit
from .tensor import TruncationPolicy

# largest order-4 step used for the incrementally evolved MPS reference
REFERENCE_MPS_DT = 0.05


class FidelityTooLow(RuntimeError):
    def __init__(self, fidelity: float, floor: float):
        self.fidelity = fidelity
        self.floor = floor
        super().__init__(f"compiled fidelity {fidelity:.6f} is below the floor {floor}")


# output ----------------------------------------------------------------------------


def _fmt(v: Any) -> Any:
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return v


def write_table(path: Path, rows: Sequence[dict], columns: Sequence[str], cfg: ExperimentConfig, command: str) -> Path:
    """CSV with a header row plus a JSON sidecar holding the resolved config."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])
    sidecar = {
        "schema_version": 1,
        "version": __version__,
        "command": command,
        "file": path.name,
        "columns": list(columns),
        "config": cfg.resolved(),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def write_summary(path: Path, summary: dict, cfg: ExperimentConfig, command: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": 1, "version": __version__, "command": command, "config": cfg.resolved()}
    doc.update(_jsonable(summary))
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def pmap(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map, optionally over a bounded process pool."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# shared pieces ------------------------------------------------------------------------


def hamiltonian(cfg: ExperimentConfig) -> HamiltonianSpec:
    return build_hamiltonian(cfg.hamiltonian.kind, cfg.n_sites, cfg.hamiltonian.seed)


def policy(cfg: ExperimentConfig, role: str) -> TruncationPolicy:
    tc = cfg.truncation[role]
    if role == "mpo":
        return TruncationPolicy.for_operator(tc.lambda0, tc.chi_max)
    return TruncationPolicy.for_state(tc.lambda0, tc.chi_max)


def all_ks(cfg: ExperimentConfig) -> tuple[int, ...]:
    return tuple(sorted(set(cfg.k_list) | {cfg.comparison_k}))


@dataclass(frozen=True)
class PathResult:
    """Overlap data for one time and one path; ``L`` covers :func:`all_ks`."""

    t: float
    path: str
    M: np.ndarray
    L: dict[int, float]
    max_bond: int = 1
    trunc_history: float = 0.0


def evolve_reference(
    h: HamiltonianSpec,
    start: MatrixProductState,
    times: Sequence[float],
    pol: TruncationPolicy,
    t_start: float = 0.0,
    dt_max: float = REFERENCE_MPS_DT,
) -> list[MatrixProductState]:
    """Fine order-4 MPS evolution visiting each time in ``times`` in turn."""
    out, psi, now = [], start.copy(), t_start
    for t in times:
        span = t - now
        if span < -1e-12:
            raise ValueError("times must be non-decreasing")
        if span > 1e-12:
            psi = apply_circuit(psi, trotter_circuit(h, span, max(1, math.ceil(span / dt_max - 1e-9)), order=4), pol)
            now = t
        out.append(psi.copy())
    return out


def _problem(res: PathResult, k_list: Sequence[int]) -> MPFProblem:
    return _finish(k_list, res.t, res.M.copy(), np.array([res.L[k] for k in k_list]), 2, {"source": res.path}, res.trunc_history, res.max_bond)


def _mpo_point(args) -> PathResult:
    cfg, t, t1 = args
    h = hamiltonian(cfg)
    pol = policy(cfg, "mpo")
    psi0 = product_state(cfg.bits)
    k0 = cfg.reference_k0
    order = cfg.reference.order
    if t1 > 0:
        window = AQCWindow(t1, t - t1)

        def pplan(ki, kj):
            return aqc_interleave_plan(window, h, ki, kj, k0, order)

        def eplan(kj):
            return aqc_interleave_plan(window, h, None, kj, k0, order)
    else:

        def pplan(ki, kj):
            return pair_plan(h, t, ki, kj)

        def eplan(kj):
            return exact_plan(h, t, kj, k0, order)

    chi, hist = 1, 0.0

    def value(plan) -> float:
        nonlocal chi, hist
        F = build_F(plan, pol)
        chi, hist = max(chi, F.max_bond), max(hist, F.trunc_history)
        return abs(sandwich(psi0, F)) ** 2

    ks = cfg.k_list
    M = np.eye(len(ks))
    for a in range(len(ks)):
        for b in range(a + 1, len(ks)):
            M[a, b] = value(pplan(ks[a], ks[b]))
    L = {k: value(eplan(k)) for k in all_ks(cfg)}
    return PathResult(t, "mpo", M, L, chi, hist)


def _dense_point(args) -> PathResult:
    cfg, t, t1 = args
    h = hamiltonian(cfg)
    v0 = dense.basis_state(cfg.bits)
    start = dense.evolve_exact(h, v0, t1) if t1 > 0 else v0
    t2 = t - t1
    states = {k: dense.apply_circuit(start, trotter_circuit(h, t2, k)) for k in all_ks(cfg)}
    if cfg.reference.dense_kind == "exact":
        ref = dense.evolve_exact(h, start, t2)
    else:
        ref = dense.apply_circuit(start, trotter_circuit(h, t2, cfg.reference_k0, cfg.reference.order))
    ks = cfg.k_list
    M = np.array([[abs(np.vdot(states[a], states[b])) ** 2 for b in ks] for a in ks])
    L = {k: abs(np.vdot(s, ref)) ** 2 for k, s in states.items()}
    return PathResult(t, "dense", M, L)


def _mps_point(args) -> PathResult:
    cfg, t, t1, start, ref = args
    h = hamiltonian(cfg)
    pol = policy(cfg, "state")
    states = {k: apply_circuit(start, trotter_circuit(h, t - t1, k), pol) for k in all_ks(cfg)}
    ks = cfg.k_list
    M = np.eye(len(ks))
    for a in range(len(ks)):
        for b in range(a + 1, len(ks)):
            M[a, b] = abs(overlap(states[ks[a]], states[ks[b]])) ** 2
    L = {k: abs(overlap(s, ref)) ** 2 for k, s in states.items()}
    chi = max([ref.max_bond, *(s.max_bond for s in states.values())])
    hist = max([ref.trunc_history, *(s.trunc_history for s in states.values())])
    return PathResult(t, "mps", M, L, chi, hist)


def check_path_name(cfg: ExperimentConfig) -> str:
    return "dense" if cfg.use_dense else "mps"


def run_paths(cfg: ExperimentConfig, times: Sequence[float], workers: int = 1, t1: float = 0.0) -> dict[str, list[PathResult]]:
    """MPO-path and check-path overlap data for every time in ``times`` (all ``>= t1``)."""
    times = [float(t) for t in times]
    out = {"mpo": pmap(_mpo_point, [(cfg, t, t1) for t in times], workers)}
    if cfg.use_dense:
        out["dense"] = pmap(_dense_point, [(cfg, t, t1) for t in times], workers)
    else:
        h = hamiltonian(cfg)
        ref_pol = policy(cfg, "reference")
        psi0 = product_state(cfg.bits)
        start = evolve_reference(h, psi0, [t1], ref_pol)[0] if t1 > 0 else psi0
        refs = evolve_reference(h, start, times, ref_pol, t_start=t1)
        out["mps"] = pmap(_mps_point, [(cfg, t, t1, start, r) for t, r in zip(times, refs)], workers)
    return out


# tests ------------------------------------------------------------------------------------


def _k_columns(prefix: str, ks: Sequence[int]) -> list[str]:
    return [f"{prefix}{k}" for k in ks]


def tests_columns(cfg: ExperimentConfig) -> list[str]:
    return [
        "t",
        "path",
        "E_F_D",
        *_k_columns("E_F_k", all_ks(cfg)),
        *_k_columns("c_k", cfg.k_list),
        "one_norm",
        "mpf_test_pass",
        "trotter_test_pass",
        "max_bond",
        "trunc_history",
    ]


def tests_from_paths(cfg: ExperimentConfig, paths: dict[str, list[PathResult]]) -> tuple[list[dict], dict]:
    """Rows (time-major, path-minor) and per-path crossover summary."""
    r = len(cfg.k_list)
    per_path: dict[str, list[dict]] = {}
    summary: dict[str, Any] = {}
    for name, results in paths.items():
        rows = []
        for res in results:
            coeffs = dynamic_coefficients(_problem(res, cfg.k_list), ridge=cfg.ridge)
            row = {"t": res.t, "path": name, "E_F_D": coeffs.E_F_D, "one_norm": coeffs.one_norm}
            row.update({f"E_F_k{k}": max(0.0, 2.0 - 2.0 * res.L[k]) for k in all_ks(cfg)})
            row.update({f"c_k{k}": c for k, c in zip(cfg.k_list, coeffs.c)})
            row.update({"max_bond": res.max_bond, "trunc_history": res.trunc_history})
            rows.append(row)
        times = [row["t"] for row in rows]
        ed = [row["E_F_D"] for row in rows]
        deep = [row[f"E_F_k{cfg.comparison_k}"] for row in rows]
        if cfg.mpf_test_against == "deep":
            against = [deep]
        else:
            against = [[row[f"E_F_k{k}"] for row in rows] for k in cfg.k_list]
        test = mpf_test(times, ed, against, r, deep_E_F_k=deep, atol=cfg.test_atol)
        for row, mp, tp in zip(rows, test.mpf_pass, test.trotter_pass):
            row["mpf_test_pass"] = bool(mp)
            row["trotter_test_pass"] = bool(tp)
        per_path[name] = rows
        summary[name] = {
            "mpf_last_pass": test.mpf_last_pass,
            "mpf_cutoff": test.mpf_cutoff,
            "trotter_last_pass": test.trotter_last_pass,
            "trotter_crossover": test.trotter_crossover,
            "max_one_norm": max((row["one_norm"] for row in rows), default=None),
            "max_bond": max((row["max_bond"] for row in rows), default=None),
        }
    n = len(next(iter(per_path.values()))) if per_path else 0
    rows = [per_path[name][i] for i in range(n) for name in per_path]
    return rows, summary


def run_tests(cfg: ExperimentConfig, out: Path | None = None, workers: int = 1) -> dict:
    out = Path(out or cfg.output)
    times = cfg.t_grid.times()
    paths = run_paths(cfg, times, workers)
    rows, summary = tests_from_paths(cfg, paths)
    write_table(out / "tests.csv", rows, tests_columns(cfg), cfg, "tests")
    write_summary(out / "tests_summary.json", {"paths": summary, "grid_step": cfg.t_grid.step}, cfg, "tests")
    return {"rows": rows, "summary": summary}


# compare ------------------------------------------------------------------------------------


COMPARE_COLUMNS = [
    "t",
    "E_F_kmax",
    "E_F_mps",
    "E_F_mpo_mpf",
    "one_norm",
    "chi_mps",
    "chi_mpo",
    "mem_mps",
    "mem_mpo",
]


def memory_entries(n_sites: int, chi: int, phys: int) -> int:
    """Complex entries of a chain with uniform bond ``chi``: ``phys * L * chi^2``."""
    return phys * n_sites * chi * chi


def run_compare(cfg: ExperimentConfig, out: Path | None = None, workers: int = 1) -> dict:
    """Trotter, direct-MPS and MPO-MPF errors against the best available reference."""
    out = Path(out or cfg.output)
    times = [float(t) for t in cfg.t_grid.times()]
    h = hamiltonian(cfg)
    psi0 = product_state(cfg.bits)
    kmax = max(cfg.k_list)
    mpo = pmap(_mpo_point, [(cfg, t, 0.0) for t in times], workers)
    ref_paths = paths_for_reference(cfg, times, workers)
    mps_states = evolve_reference(h, psi0, times, policy(cfg, "state"))
    rows = []
    for t, m, exact, mps in zip(times, mpo, ref_paths, mps_states):
        coeffs = dynamic_coefficients(_problem(m, cfg.k_list), ridge=cfg.ridge)
        exact_problem = _problem(exact["path"], cfg.k_list)
        e_mps = max(0.0, 2.0 - 2.0 * exact["overlap"](mps))
        rows.append(
            {
                "t": t,
                "E_F_kmax": max(0.0, 2.0 - 2.0 * exact["path"].L[kmax]),
                "E_F_mps": e_mps,
                "E_F_mpo_mpf": max(0.0, quadratic_error(coeffs.c, exact_problem.M, exact_problem.L)),
                "one_norm": coeffs.one_norm,
                "chi_mps": mps.max_bond,
                "chi_mpo": m.max_bond,
                "mem_mps": memory_entries(cfg.n_sites, mps.max_bond, 2),
                "mem_mpo": memory_entries(cfg.n_sites, m.max_bond, 4),
            }
        )
    write_table(out / "compare.csv", rows, COMPARE_COLUMNS, cfg, "compare")
    return {"rows": rows}


def paths_for_reference(cfg: ExperimentConfig, times: Sequence[float], workers: int = 1) -> list[dict]:
    """Check-path data plus an overlap-with-reference function per time."""
    if cfg.use_dense:
        results = pmap(_dense_point, [(cfg, t, 0.0) for t in times], workers)
        h = hamiltonian(cfg)
        v0 = dense.basis_state(cfg.bits)
        out = []
        for t, res in zip(times, results):
            ref = dense.evolve_exact(h, v0, t)
            out.append({"path": res, "overlap": lambda psi, ref=ref: abs(np.vdot(ref, psi.to_dense())) ** 2})
        return out
    paths = run_paths(cfg.with_updates(dense_check=False), times, workers)
    h = hamiltonian(cfg)
    refs = evolve_reference(h, product_state(cfg.bits), times, policy(cfg, "reference"))
    return [{"path": res, "overlap": lambda psi, ref=ref: abs(overlap(ref, psi)) ** 2} for res, ref in zip(paths["mps"], refs)]


# observables --------------------------------------------------------------------------------


OBSERVABLE_COLUMNS = ["t", "observable", "series", "value", "std_error", "shots", "amplification", "mpf_test_pass"]


def estimate_seed(cfg: ExperimentConfig, ti: int, series: int, oi: int) -> int:
    """Independent reproducible stream per (time, series, observable)."""
    return int(np.random.SeedSequence([cfg.seed, ti, series, oi]).generate_state(1)[0])


def _observable_rows(
    cfg: ExperimentConfig,
    t: float,
    ti: int,
    states: dict[int, MatrixProductState],
    coeffs,
    reference_value: Callable[[ObservableSpec], float] | None,
    mpf_pass: bool | None,
) -> list[dict]:
    rows = []
    for oi, label in enumerate(cfg.observables):
        obs = ObservableSpec.from_labels(label, base=1)
        ests: list[EstimateResult] = []
        for si, k in enumerate(all_ks(cfg)):
            est = estimate(states[k], obs, cfg.shots, estimate_seed(cfg, ti, si, oi))
            if k in cfg.k_list:
                ests.append(est)
            rows.append(_obs_row(t, label, f"k{k}", est, mpf_pass))
        if coeffs is not None:
            rows.append(_obs_row(t, label, "MPF", mpf_combine(coeffs, ests), mpf_pass))
        if reference_value is not None:
            rows.append({"t": t, "observable": label, "series": "reference", "value": reference_value(obs), "std_error": 0.0, "shots": None, "amplification": 1.0, "mpf_test_pass": mpf_pass})
    return rows


def _obs_row(t, label, series, est: EstimateResult, mpf_pass) -> dict:
    return {
        "t": t,
        "observable": label,
        "series": series,
        "value": est.value,
        "std_error": est.std_error,
        "shots": est.shots,
        "amplification": est.amplification,
        "mpf_test_pass": mpf_pass,
    }


def _reference_values(cfg: ExperimentConfig, times: Sequence[float]) -> list[Callable[[ObservableSpec], float]]:
    h = hamiltonian(cfg)
    if cfg.use_dense:
        v0 = dense.basis_state(cfg.bits)
        vecs = [dense.evolve_exact(h, v0, t) for t in times]
        return [lambda obs, v=v: dense.expectation(v, obs.factors, cfg.n_sites) for v in vecs]
    refs = evolve_reference(h, product_state(cfg.bits), times, policy(cfg, "reference"))
    return [lambda obs, r=r: expectation(r, obs) for r in refs]


def run_observables(cfg: ExperimentConfig, out: Path | None = None, workers: int = 1) -> dict:
    """Single-k, MPF-combined and reference expectation values over the grid."""
    out = Path(out or cfg.output)
    if not cfg.observables:
        raise ValueError("observables: at least one observable is required for this command")
    times = [float(t) for t in cfg.t_grid.times()]
    h = hamiltonian(cfg)
    psi0 = product_state(cfg.bits)
    spol = policy(cfg, "state")
    mpo = pmap(_mpo_point, [(cfg, t, 0.0) for t in times], workers)
    tests_rows, summary = tests_from_paths(cfg, {"mpo": mpo})
    refs = _reference_values(cfg, times)
    rows = []
    for ti, (t, res, test_row, ref) in enumerate(zip(times, mpo, tests_rows, refs)):
        coeffs = dynamic_coefficients(_problem(res, cfg.k_list), ridge=cfg.ridge)
        states = {k: apply_circuit(psi0, trotter_circuit(h, t, k), spol) for k in all_ks(cfg)}
        rows.extend(_observable_rows(cfg, t, ti, states, coeffs, ref, test_row["mpf_test_pass"]))
    write_table(out / "observables.csv", rows, OBSERVABLE_COLUMNS, cfg, "observables")
    write_summary(out / "observables_summary.json", {"paths": summary}, cfg, "observables")
    return {"rows": rows, "summary": summary}


# aqc ------------------------------------------------------------------------------------------


def compile_window(cfg: ExperimentConfig):
    """Optimise the ansatz against the order-4 fine MPS reference at ``t1``."""
    h = hamiltonian(cfg)
    a = cfg.aqc
    psi0 = product_state(cfg.bits)
    ansatz = build_ansatz(h, a.k_layers)
    theta0 = smart_init(ansatz, h, a.t1)
    target = evolve_reference(h, psi0, [a.t1], TruncationPolicy.for_state(1e-10))[0]
    result = optimize(ansatz, theta0, target, psi0, tol=a.tol, max_iters=a.max_iters)
    return ansatz, result


def run_aqc(cfg: ExperimentConfig, out: Path | None = None, workers: int = 1) -> dict:
    """Compile the ``t1`` window, then run the tests (and observables) on the composite circuits."""
    out = Path(out or cfg.output)
    a = cfg.aqc
    if not a.enabled:
        raise ValueError("aqc.enabled: must be true for the aqc command")
    ansatz, result = compile_window(cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_theta(out / "theta.json", result.theta, hamiltonian_seed=cfg.hamiltonian.seed, t1=a.t1, k_layers=a.k_layers, status=result.status)
    write_table(out / "cost_trace.csv", cost_trace_rows(result.cost_trace), ["iteration", "cost"], cfg, "aqc")
    if result.fidelity < a.fidelity_floor:
        raise FidelityTooLow(result.fidelity, a.fidelity_floor)
    if a.suffix_ks and tuple(a.suffix_ks) != tuple(cfg.k_list):
        cfg = cfg.with_updates(k_list=tuple(a.suffix_ks))
    grid = [float(t) for t in cfg.t_grid.times()]
    times = [t for t in grid if t > a.t1 or (a.t1 == 0 and t >= 0)]
    paths = run_paths(cfg, times, workers, t1=a.t1)
    rows, summary = tests_from_paths(cfg, paths)
    write_table(out / "tests.csv", rows, tests_columns(cfg), cfg, "aqc")
    obs_rows = []
    if cfg.observables:
        h = hamiltonian(cfg)
        psi0 = product_state(cfg.bits)
        spol = policy(cfg, "state")
        refs = _reference_values(cfg, grid)
        mpo_rows = {row["t"]: row for row in rows if row["path"] == "mpo"}
        mpo_res = {res.t: res for res in paths["mpo"]}
        for ti, (t, ref) in enumerate(zip(grid, refs)):
            if t not in mpo_res:
                # before the window ends only the classical reference is reported
                obs_rows.extend(_reference_only(cfg, t, ref))
                continue
            coeffs = dynamic_coefficients(_problem(mpo_res[t], cfg.k_list), ridge=cfg.ridge)
            states = {k: composite_state(ansatz, result.theta, psi0, trotter_circuit(h, t - a.t1, k), spol) for k in all_ks(cfg)}
            obs_rows.extend(_observable_rows(cfg, t, ti, states, coeffs, ref, mpo_rows[t]["mpf_test_pass"]))
        write_table(out / "observables.csv", obs_rows, OBSERVABLE_COLUMNS, cfg, "aqc")
    summary_doc = {
        "paths": summary,
        "fidelity": result.fidelity,
        "optimizer_status": result.status,
        "t1": a.t1,
        "mpf_last_pass": summary["mpo"]["mpf_last_pass"],
    }
    write_summary(out / "aqc_summary.json", summary_doc, cfg, "aqc")
    return {"rows": rows, "summary": summary, "fidelity": result.fidelity, "observables": obs_rows}


def _reference_only(cfg: ExperimentConfig, t: float, ref) -> list[dict]:
    return [
        {"t": t, "observable": label, "series": "reference", "value": ref(ObservableSpec.from_labels(label, base=1)), "std_error": 0.0, "shots": None, "amplification": 1.0, "mpf_test_pass": None}
        for label in cfg.observables
    ]


# scaling ----------------------------------------------------------------------------------------


SCALING_COLUMNS = ["sweep", "lambda0", "t", "k", "chi"]


def _f_chi(args) -> int:
    cfg, t, k, lam = args
    h = hamiltonian(cfg)
    k0 = cfg.reference.k0_multiplier * max(cfg.scaling.f_ks)
    plan = exact_plan(h, t, k, k0, cfg.reference.order)
    return build_F(plan, TruncationPolicy.for_operator(lam, cfg.truncation["mpo"].chi_max)).max_bond


def f_vs_k_sweep(cfg: ExperimentConfig, workers: int = 1) -> tuple[list[tuple[int, int]], dict]:
    """Bond dimension of ``F_ex`` at fixed time for each ``k``, with the ``log log chi`` vs ``log k`` fit.

    Samples with ``chi = 1`` carry no information for the fit and are skipped.
    """
    sc = cfg.scaling
    chis = pmap(_f_chi, [(cfg, sc.f_time, k, sc.f_lambda0) for k in sc.f_ks], workers)
    samples = list(zip(sc.f_ks, chis))
    try:
        fit = fit_scaling([(k, c) for k, c in samples if c > 1], "power_in_k", t=sc.f_time)
        return samples, {"slope": fit.slope, "alpha": fit.alpha, "v1": fit.rate, "residual": fit.residual}
    except ValueError as exc:
        return samples, {"error": str(exc)}


def run_scaling(cfg: ExperimentConfig, out: Path | None = None, workers: int = 1) -> dict:
    """Bond-dimension growth of states and F operators, with scaling-law fits."""
    out = Path(out or cfg.output)
    sc = cfg.scaling
    h = hamiltonian(cfg)
    psi0 = product_state(cfg.bits)
    rows, fits = [], {"state": [], "f_vs_k": None, "f_fixed_dt": None}
    chi_cap = cfg.truncation["state"].chi_max
    for lam in sc.state_lambdas:
        states = evolve_reference(h, psi0, sc.state_times, TruncationPolicy.for_state(lam, chi_cap), dt_max=0.1)
        samples = [(t, s.max_bond) for t, s in zip(sc.state_times, states)]
        rows.extend({"sweep": "state", "lambda0": lam, "t": t, "k": None, "chi": c} for t, c in samples)
        try:
            fit = fit_scaling(samples, "exp_in_t")
            fits["state"].append({"lambda0": lam, "f": fit.prefactor, "v0": fit.rate, "residual": fit.residual})
        except ValueError as exc:
            fits["state"].append({"lambda0": lam, "error": str(exc)})
    samples, fits["f_vs_k"] = f_vs_k_sweep(cfg, workers)
    rows.extend({"sweep": "f_vs_k", "lambda0": sc.f_lambda0, "t": sc.f_time, "k": k, "chi": c} for k, c in samples)
    dt_items = [(cfg, t, max(1, round(t / sc.f_dt)), sc.f_lambda0) for t in sc.f_times]
    chis_dt = pmap(_f_chi, dt_items, workers)
    rows.extend({"sweep": "f_fixed_dt", "lambda0": sc.f_lambda0, "t": t, "k": k, "chi": c} for (_, t, k, _), c in zip(dt_items, chis_dt))
    samples = [(t, c) for t, c in zip(sc.f_times, chis_dt)]
    try:
        fit = fit_scaling(samples, "exp_in_t")
        logs = np.log(np.array(chis_dt, dtype=float))
        fits["f_fixed_dt"] = {"prefactor": fit.prefactor, "rate": fit.rate, "residual": fit.residual, "max_second_difference": float(np.max(np.diff(logs, 2))) if len(logs) > 2 else None}
    except ValueError as exc:
        fits["f_fixed_dt"] = {"error": str(exc)}
    write_table(out / "scaling.csv", rows, SCALING_COLUMNS, cfg, "scaling")
    write_summary(out / "scaling_fits.json", {"fits": fits}, cfg, "scaling")
    return {"rows": rows, "fits": fits}


COMMANDS = {
    "compare": run_compare,
    "tests": run_tests,
    "observables": run_observables,
    "aqc": run_aqc,
    "scaling": run_scaling,
}
