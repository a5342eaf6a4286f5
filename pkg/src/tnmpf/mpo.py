"""Matrix product operators for the interleaved forward/backward products.

An MPO site tensor has index order ``(left, out, in, right)``; internally it is
stored flattened as ``(left, 4, right)`` so the canonical-form machinery of
:class:`~tnmpf.mps.TensorChain` applies unchanged. Truncation there is optimal
in the Frobenius (vectorized-operator) norm.

The central routine is :func:`build_F`, which forms ``U_left^dagger U_right``
one product-formula step at a time, always absorbing whichever side is behind
in accumulated physical time. Because the two sides nearly cancel, the bond
dimension stays far below that of either circuit alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mps import BondDimensionExceeded, MatrixProductState, TensorChain, apply_layer
from .spinchain import HamiltonianSpec, Step, TimedCircuit, trotter_circuit
from .tensor import TruncationPolicy

TIME_TOL = 1e-12


class MatrixProductOperator(TensorChain):
    phys_dim = 4

    def site_tensor(self, i: int) -> np.ndarray:
        t = self.tensors[i]
        return t.reshape(t.shape[0], 2, 2, t.shape[2])

    def to_dense(self) -> np.ndarray:
        n = self.n_sites
        op = self.site_tensor(0)[0]
        for i in range(1, n):
            op = np.tensordot(op, self.site_tensor(i), axes=(op.ndim - 1, 0))
        op = op.reshape((2, 2) * n)
        perm = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
        return op.transpose(perm).reshape(2**n, 2**n) * math.exp(self.norm_log)


def identity_mpo(n_sites: int) -> MatrixProductOperator:
    if n_sites < 2:
        raise ValueError("identity_mpo needs at least two sites")
    site = (np.eye(2, dtype=complex) / math.sqrt(2)).reshape(1, 4, 1)
    return MatrixProductOperator([site] * n_sites, center=0, norm_log=0.5 * n_sites * math.log(2))


def _left_op(gate: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    g = gate.reshape(2, 2, 2, 2)

    def op(theta: np.ndarray) -> np.ndarray:
        l, r = theta.shape[0], theta.shape[-1]
        t6 = theta.reshape(l, 2, 2, 2, 2, r)
        return np.einsum("abcd,lcxdyr->laxbyr", g, t6).reshape(l, 4, 4, r)

    return op


def _right_op(gate: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    g = gate.reshape(2, 2, 2, 2)

    def op(theta: np.ndarray) -> np.ndarray:
        l, r = theta.shape[0], theta.shape[-1]
        t6 = theta.reshape(l, 2, 2, 2, 2, r)
        return np.einsum("lxcydr,cdab->lxaybr", t6, g).reshape(l, 4, 4, r)

    return op


def absorb_step(F: MatrixProductOperator, step: Step, side: str, policy: TruncationPolicy) -> None:
    """``F <- F S`` (side="right") or ``F <- S^dagger F`` (side="left")."""
    for layer in reversed(step.layers):
        if side == "right":
            apply_layer(F, layer, policy, op_factory=_right_op)
        else:
            apply_layer(F, layer, policy, op_factory=_left_op, dagger=True)


@dataclass(frozen=True)
class InterleavePlan:
    """Operator ``P^dagger [L^dagger R] Q`` with ``L``/``R`` the left/right circuits.

    ``prefix`` (``P``) and ``suffix`` (``Q``) are forward circuits for a window
    that is conjugated around the middle product; they come together or not at all.
    """

    left_circuit: TimedCircuit
    right_circuit: TimedCircuit
    prefix: TimedCircuit | None = None
    suffix: TimedCircuit | None = None

    def __post_init__(self) -> None:
        _check_times(self.left_circuit, self.right_circuit)
        if (self.prefix is None) != (self.suffix is None):
            raise ValueError("prefix and suffix must be given together")
        if self.prefix is not None:
            _check_times(self.prefix, self.suffix)

    @property
    def n_sites(self) -> int:
        return self.left_circuit.n_sites


def _check_times(a: TimedCircuit, b: TimedCircuit) -> None:
    if a.n_sites != b.n_sites:
        raise ValueError("circuits act on different numbers of sites")
    if abs(a.total_time - b.total_time) > TIME_TOL * max(1.0, abs(a.total_time)):
        raise ValueError(f"time mismatch between sides: {a.total_time} vs {b.total_time}")


def interleave(
    F: MatrixProductOperator,
    left: TimedCircuit,
    right: TimedCircuit,
    policy: TruncationPolicy,
) -> int:
    """Sandwich ``F`` as ``left^dagger F right`` step by step; returns the step count.

    A right-side step is absorbed whenever its accumulated time is <= the left
    side's; once one side is exhausted the other is drained.
    """
    lsteps = left.steps[::-1]
    rsteps = right.steps[::-1]
    il = ir = 0
    t_left = t_right = 0.0
    tol = TIME_TOL * max(1.0, left.total_time)
    n = 0
    while il < len(lsteps) or ir < len(rsteps):
        take_right = ir < len(rsteps) and (il >= len(lsteps) or t_right <= t_left + tol)
        try:
            if take_right:
                absorb_step(F, rsteps[ir], "right", policy)
                t_right += rsteps[ir].advanced_time
                ir += 1
            else:
                absorb_step(F, lsteps[il], "left", policy)
                t_left += lsteps[il].advanced_time
                il += 1
        except BondDimensionExceeded as exc:
            raise BondDimensionExceeded(exc.entries, exc.cap, step=n) from None
        n += 1
    return n


def build_F(plan: InterleavePlan, policy: TruncationPolicy, memory_cap: int | None = None) -> MatrixProductOperator:
    """MPO of the plan's operator.

    The middle product is formed first; a conjugating window is then wrapped
    around it with the same interleaving rule, so every intermediate operator
    stays close to the identity.
    """
    F = identity_mpo(plan.n_sites)
    F.memory_cap = memory_cap
    interleave(F, plan.left_circuit, plan.right_circuit, policy)
    if plan.prefix is not None:
        interleave(F, plan.prefix, plan.suffix, policy)
    return F


def pair_plan(h: HamiltonianSpec, t: float, k_i: int, k_j: int, order: int = 2) -> InterleavePlan:
    """Plan for ``S(t/k_i)^{-k_i} S(t/k_j)^{k_j}``."""
    return InterleavePlan(trotter_circuit(h, t, k_i, order), trotter_circuit(h, t, k_j, order))


def exact_plan(h: HamiltonianSpec, t: float, k_j: int, k0: int, reference_order: int = 2) -> InterleavePlan:
    """Plan for ``exp(iHt) S(t/k_j)^{k_j}`` with a ``k0``-step reference."""
    ref = trotter_circuit(h, t, k0, reference_order)
    return InterleavePlan(ref, trotter_circuit(h, t, k_j))


def default_k0(k_list, reference_order: int = 2, multiplier: int | None = None) -> int:
    if multiplier is None:
        multiplier = 8 if reference_order == 2 else 4
    return multiplier * max(k_list)


def sandwich(psi0: MatrixProductState, F: MatrixProductOperator) -> complex:
    """<psi0|F|psi0> including the scale factors of both networks."""
    if psi0.n_sites != F.n_sites:
        raise ValueError("site-count mismatch")
    env = np.ones((1, 1, 1), dtype=complex)
    for i, a in enumerate(psi0.tensors):
        w = F.site_tensor(i)
        env = np.einsum("amb,aoc,moin,bid->cnd", env, a.conj(), w, a, optimize=True)
    return complex(env[0, 0, 0]) * math.exp(F.norm_log + 2 * psi0.norm_log)


def apply_mpo(F: MatrixProductOperator, psi: MatrixProductState) -> MatrixProductState:
    """Exact ``F|psi>``; bond dimensions multiply."""
    out = []
    for i, a in enumerate(psi.tensors):
        w = F.site_tensor(i)
        t = np.einsum("moin,lir->lmonr", w, a)
        l, m, o, n, r = t.shape
        out.append(t.reshape(l * m, o, n * r))
    res = MatrixProductState(out)
    res.norm_log += F.norm_log + psi.norm_log
    return res


@dataclass(frozen=True)
class MPODiagnostics:
    max_bond: int
    trunc_history: float
    unitarity_deficit: float

    def row(self, t: float, k_i, k_j, rel_threshold: float) -> dict:
        return {
            "t": t,
            "k_i": k_i,
            "k_j": k_j,
            "lambda0": rel_threshold,
            "max_bond": self.max_bond,
            "trunc_history": self.trunc_history,
            "unitarity_deficit": self.unitarity_deficit,
        }


def frobenius_log_norm2(F: MatrixProductOperator) -> float:
    """log ||F||_F^2 from a scaled transfer contraction (no canonical-form assumption)."""
    env = np.ones((1, 1), dtype=complex)
    acc = 0.0
    for t in F.tensors:
        env = np.einsum("ab,asc,bsd->cd", env, t.conj(), t)
        s = float(np.abs(env).max())
        env /= s
        acc += math.log(s)
    return acc + math.log(abs(env[0, 0])) + 2 * F.norm_log


def mpo_diagnostics(F: MatrixProductOperator) -> MPODiagnostics:
    log_ratio = frobenius_log_norm2(F) - F.n_sites * math.log(2)
    return MPODiagnostics(F.max_bond, F.trunc_history, abs(math.expm1(log_ratio)))
