"""Compact approximate compilation of an early time window.

The ansatz is a brickwork of two-site blocks laid out exactly like a
second-order Trotter circuit. Every block is

    exp(-i [a (XX + YY) + b ZZ])

with its own pair of angles ``(a, b)``, which is precisely the family spanned by
the chain's bond terms, so a Trotter circuit is a point of the parameter space
("smart" initialisation) and optimisation can only improve on it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .mpo import InterleavePlan
from .mps import MatrixProductState, apply_layers, overlap
from .spinchain import XX_YY, ZZ, GateLayer, HamiltonianSpec, TimedCircuit, trotter_circuit
from .tensor import TruncationPolicy

ANGLES_PER_BLOCK = 2


def block_unitary(a: float, b: float) -> np.ndarray:
    """Closed form of exp(-i [a (XX+YY) + b ZZ]); exactly unitary for all angles."""
    u = np.zeros((4, 4), dtype=complex)
    u[0, 0] = u[3, 3] = np.exp(-1j * b)
    phase = np.exp(1j * b)
    u[1, 1] = u[2, 2] = phase * math.cos(2 * a)
    u[1, 2] = u[2, 1] = -1j * phase * math.sin(2 * a)
    return u


@dataclass(frozen=True)
class ParamCircuit:
    """Brickwork ansatz with ``k_layers`` odd/even/odd step skeletons."""

    n_sites: int
    k_layers: int
    layout: tuple[tuple[int, ...], ...]
    parities: tuple[str, ...]

    @property
    def n_blocks(self) -> int:
        return sum(len(bonds) for bonds in self.layout)

    @property
    def n_params(self) -> int:
        return ANGLES_PER_BLOCK * self.n_blocks

    def layers(self, theta: np.ndarray) -> list[GateLayer]:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} angles, got {theta.size}")
        out, pos = [], 0
        for bonds, parity in zip(self.layout, self.parities):
            gates = []
            for b in bonds:
                gates.append((b, block_unitary(theta[pos], theta[pos + 1])))
                pos += 2
            out.append(GateLayer(tuple(gates), parity))
        return out

    def apply(self, theta: np.ndarray, psi0: MatrixProductState, policy: TruncationPolicy) -> MatrixProductState:
        psi = psi0.copy()
        apply_layers(psi, self.layers(theta), policy)
        return psi


def build_ansatz(h: HamiltonianSpec, k_layers: int) -> ParamCircuit:
    if k_layers < 1:
        raise ValueError("k_layers must be >= 1")
    odd = tuple(range(0, h.n_sites - 1, 2))
    even = tuple(range(1, h.n_sites - 1, 2))
    step = (odd, even, odd) if even else (odd, odd)
    parities = ("odd", "even", "odd") if even else ("odd", "odd")
    return ParamCircuit(h.n_sites, k_layers, step * k_layers, parities * k_layers)


def _bond_angles(h: HamiltonianSpec, bond: int) -> tuple[float, float]:
    """Coefficients ``(alpha, beta)`` with ``h_bond = alpha (XX+YY) + beta ZZ``."""
    m = h.bond_matrix(bond)
    alpha = float(np.real(np.trace(XX_YY.conj().T @ m)) / 8.0)
    beta = float(np.real(np.trace(ZZ.conj().T @ m)) / 4.0)
    if not np.allclose(alpha * XX_YY + beta * ZZ, m, atol=1e-12):
        raise ValueError(f"bond {bond} term is outside the ansatz block family")
    return alpha, beta


def smart_init(ansatz: ParamCircuit, h: HamiltonianSpec, t1: float) -> np.ndarray:
    """Angles reproducing ``k_layers`` second-order Trotter steps of total time ``t1``."""
    if ansatz.n_sites != h.n_sites:
        raise ValueError("ansatz and Hamiltonian sizes differ")
    dt = t1 / ansatz.k_layers
    theta = []
    for bonds, parity in zip(ansatz.layout, ansatz.parities):
        tau = dt if parity == "even" else dt / 2
        for b in bonds:
            alpha, beta = _bond_angles(h, b)
            theta.extend((alpha * tau, beta * tau))
    return np.array(theta)


DEFAULT_POLICY = TruncationPolicy.for_state(1e-12)


def cost(
    theta: np.ndarray,
    ansatz: ParamCircuit,
    target: MatrixProductState,
    psi0: MatrixProductState,
    policy: TruncationPolicy = DEFAULT_POLICY,
) -> float:
    """1 - |<target|V(theta)|psi0>|^2."""
    return 1.0 - abs(overlap(target, ansatz.apply(theta, psi0, policy))) ** 2


@dataclass
class OptimizeResult:
    theta: np.ndarray
    cost_trace: list[float] = field(default_factory=list)
    status: str = "max_iters"
    n_evals: int = 0

    @property
    def cost(self) -> float:
        return self.cost_trace[-1]

    @property
    def fidelity(self) -> float:
        return 1.0 - self.cost_trace[-1]


def fd_gradient(f, theta: np.ndarray, step: float) -> np.ndarray:
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        grad[i] = (f(theta + e) - f(theta - e)) / (2 * step)
    return grad


def optimize(
    ansatz: ParamCircuit,
    theta0: np.ndarray,
    target: MatrixProductState,
    psi0: MatrixProductState,
    tol: float = 1e-8,
    max_iters: int = 200,
    fd_step: float = 1e-5,
    policy: TruncationPolicy = DEFAULT_POLICY,
    stall_iters: int = 5,
    stall_rtol: float = 1e-10,
    method: str = "bfgs",
) -> OptimizeResult:
    """Finite-difference gradient descent with a backtracking (Armijo) line search.

    ``method="gd"`` steps along the negative gradient. ``method="bfgs"``
    (default) preconditions it with a BFGS inverse-Hessian estimate built from
    the same gradients, which converges far faster on the narrow valleys of
    this landscape. Only improving iterates are accepted, so ``cost_trace`` is
    non-increasing.
    Stops when the cost drops below ``tol``, after ``max_iters`` iterations, or
    when the relative improvement stays below ``stall_rtol`` for ``stall_iters``
    consecutive iterations (or no descent step can be found).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if method not in ("gd", "bfgs"):
        raise ValueError(f"unknown method {method!r}")
    evals = 0

    def f(th):
        nonlocal evals
        evals += 1
        return cost(th, ansatz, target, psi0, policy)

    theta = np.array(theta0, dtype=float)
    c = f(theta)
    res = OptimizeResult(theta.copy(), [c])
    H = np.eye(theta.size)
    step = 1.0
    flat = 0
    g = None
    for _ in range(max_iters):
        if c < tol:
            res.status = "converged"
            break
        if g is None:
            g = fd_gradient(f, theta, fd_step)
        d = -(H @ g) if method == "bfgs" else -g
        slope = float(g @ d)
        if slope >= 0:
            # lost descent; restart from the plain gradient
            H = np.eye(theta.size)
            d, slope = -g, -float(g @ g)
        if slope == 0.0:
            res.status = "stall"
            break
        accepted = False
        for _ in range(40):
            trial = theta + step * d
            ct = f(trial)
            if ct <= c + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            res.status = "stall"
            break
        improvement = (c - ct) / max(c, 1e-300)
        g_new = fd_gradient(f, trial, fd_step)
        if method == "bfgs":
            s_vec, y_vec = trial - theta, g_new - g
            sy = float(s_vec @ y_vec)
            if sy > 1e-16 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
                rho = 1.0 / sy
                V = np.eye(theta.size) - rho * np.outer(s_vec, y_vec)
                H = V @ H @ V.T + rho * np.outer(s_vec, s_vec)
        theta, c, g = trial, ct, g_new
        res.theta = theta.copy()
        res.cost_trace.append(c)
        step = 1.0 if method == "bfgs" else 2.0 * step
        flat = flat + 1 if improvement < stall_rtol else 0
        if flat >= stall_iters:
            res.status = "stall"
            break
    else:
        res.status = "converged" if c < tol else "max_iters"
    res.n_evals = evals
    return res


@dataclass(frozen=True)
class AQCWindow:
    t1: float
    t2: float
    theta_opt: np.ndarray | None = None
    suffix_ks: tuple[int, ...] = (1, 2)

    def __post_init__(self) -> None:
        if self.t1 < 0 or self.t2 < 0:
            raise ValueError("window times must be non-negative")


def aqc_interleave_plan(
    window: AQCWindow,
    h: HamiltonianSpec,
    k_i: int | None,
    k_j: int,
    reference_k0: int,
    reference_order: int = 2,
) -> InterleavePlan:
    """Plan for ``exp(iH t1) S_i^-k_i S_j^k_j exp(-iH t1)`` over the ``t2`` window.

    ``k_i=None`` selects the exact-evolution variant, whose left side is the
    fine reference over ``t2`` (so the full left factor is ``exp(iH(t1+t2))``).
    Each reference window is split into ``reference_k0`` steps.
    """
    t1, t2 = window.t1, window.t2
    right = trotter_circuit(h, t2, k_j)
    if k_i is None:
        left = trotter_circuit(h, t2, reference_k0, reference_order)
    else:
        left = trotter_circuit(h, t2, k_i)
    if t1 == 0:
        return InterleavePlan(left, right)
    conj = trotter_circuit(h, t1, reference_k0, reference_order)
    return InterleavePlan(left, right, prefix=conj, suffix=conj)


def composite_state(
    ansatz: ParamCircuit,
    theta: np.ndarray,
    psi0: MatrixProductState,
    suffix: TimedCircuit,
    policy: TruncationPolicy,
) -> MatrixProductState:
    """``suffix V(theta) |psi0>``."""
    psi = ansatz.apply(theta, psi0, policy)
    for step in suffix.steps:
        apply_layers(psi, step.layers, policy)
    return psi


def save_theta(path: str | Path, theta: np.ndarray, **metadata) -> None:
    Path(path).write_text(json.dumps({"theta": [float(x) for x in theta], "metadata": metadata}, indent=2))


def load_theta(path: str | Path) -> tuple[np.ndarray, dict]:
    data = json.loads(Path(path).read_text())
    return np.array(data["theta"], dtype=float), data.get("metadata", {})


def cost_trace_rows(trace: Sequence[float]) -> list[dict]:
    return [{"iteration": i, "cost": c} for i, c in enumerate(trace)]
