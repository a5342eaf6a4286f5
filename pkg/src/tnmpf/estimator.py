"""Expectation-value estimators standing in for a quantum processor.

Exact mode returns the MPS expectation. Sampled mode measures every factor of
the Pauli string in its own eigenbasis, drawing outcomes site by site from the
conditional marginals of the MPS; shots sharing a prefix are handled together
through binomial splits, so cost scales with the number of distinct prefixes
rather than with the shot count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mpf import CoefficientSet
from .mps import MatrixProductState, ObservableSpec, expectation

_HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_S_DAG = np.diag([1.0, -1j])
# unitaries U with U P U^dagger = Z
_TO_Z = {"x": _HADAMARD, "y": _HADAMARD @ _S_DAG, "z": np.eye(2, dtype=complex)}


@dataclass(frozen=True)
class EstimateResult:
    value: float
    std_error: float
    shots: int | None
    seed: int | None = None
    amplification: float = 1.0

    def __post_init__(self) -> None:
        if self.std_error < 0:
            raise ValueError("std_error must be non-negative")
        if self.shots is None and self.std_error != 0:
            raise ValueError("exact estimates carry no standard error")

    @property
    def exact(self) -> bool:
        return self.shots is None


def _pauli_label(op: np.ndarray) -> str:
    for name in ("x", "y", "z"):
        ref = {"x": np.array([[0, 1], [1, 0]]), "y": np.array([[0, -1j], [1j, 0]]), "z": np.diag([1, -1])}[name]
        if np.allclose(op, ref):
            return name
    if np.allclose(op, np.eye(2)):
        return "i"
    raise ValueError("sampled estimation supports Pauli factors only")


def _rotated(psi: MatrixProductState, obs: ObservableSpec) -> tuple[MatrixProductState, list[int]]:
    phi = psi.copy()
    phi.canonicalize(0)
    sites = []
    for site, op in obs.factors:
        label = _pauli_label(op)
        if label == "i":
            continue
        phi.tensors[site] = np.einsum("ab,lbr->lar", _TO_Z[label], phi.tensors[site])
        sites.append(site)
    return phi, sorted(set(sites))


def sample_outcomes(phi: MatrixProductState, sites: Sequence[int], shots: int, rng: np.random.Generator) -> dict[tuple[int, ...], int]:
    """Counts of computational-basis outcomes on ``sites`` (center must be site 0)."""
    measured = set(sites)
    last = max(sites) if sites else -1
    counts: dict[tuple[int, ...], int] = {}

    def recurse(i: int, env: np.ndarray, prefix: tuple[int, ...], n: int) -> None:
        if n == 0:
            return
        if i > last:
            counts[prefix] = counts.get(prefix, 0) + n
            return
        a = phi.tensors[i]
        if i not in measured:
            recurse(i + 1, np.einsum("ab,asc,bsd->cd", env, a.conj(), a), prefix, n)
            return
        branches = [np.einsum("ab,ac,bd->cd", env, a[:, s, :].conj(), a[:, s, :]) for s in (0, 1)]
        probs = np.array([max(float(np.real(np.trace(b))), 0.0) for b in branches])
        total = probs.sum()
        n1 = int(rng.binomial(n, min(1.0, probs[1] / total))) if total > 0 else 0
        for s, ns in ((0, n - n1), (1, n1)):
            if ns:
                recurse(i + 1, branches[s] / probs[s], prefix + (s,), ns)

    recurse(0, np.ones((1, 1), dtype=complex), (), shots)
    return counts


def estimate(
    psi: MatrixProductState,
    obs: ObservableSpec,
    shots: int | None = None,
    seed: int | None = None,
) -> EstimateResult:
    """Exact (``shots=None``) or shot-sampled expectation of a Pauli string."""
    if shots is None:
        return EstimateResult(expectation(psi, obs), 0.0, None, seed)
    if int(shots) != shots or shots < 1:
        raise ValueError("shots must be a positive integer or None for exact mode")
    shots = int(shots)
    phi, sites = _rotated(psi, obs)
    if not sites:
        return EstimateResult(1.0, 0.0, shots, seed)
    rng = np.random.default_rng(seed)
    counts = sample_outcomes(phi, sites, shots, rng)
    values = np.array([(-1.0) ** sum(k) for k in counts])
    weights = np.array(list(counts.values()), dtype=float)
    mean = float(weights @ values / shots)
    if shots == 1:
        return EstimateResult(mean, 0.0, shots, seed)
    var = float(weights @ (values - mean) ** 2) / (shots - 1)
    return EstimateResult(mean, float(np.sqrt(var / shots)), shots, seed)


def mpf_combine(coeffs: CoefficientSet | Sequence[float], estimates: Sequence[EstimateResult]) -> EstimateResult:
    """Linear combination of independent estimates with propagated standard error."""
    c = np.asarray(coeffs.c if isinstance(coeffs, CoefficientSet) else coeffs, dtype=float)
    if c.size != len(estimates):
        raise ValueError(f"{c.size} coefficients for {len(estimates)} estimates")
    values = np.array([e.value for e in estimates])
    errs = np.array([e.std_error for e in estimates])
    shot_list = [e.shots for e in estimates]
    shots = None if all(s is None for s in shot_list) else int(sum(s or 0 for s in shot_list))
    std = float(np.sqrt(np.sum(c**2 * errs**2)))
    if shots is None:
        std = 0.0
    return EstimateResult(float(c @ values), std, shots, estimates[0].seed if estimates else None, float(np.abs(c).sum()))
