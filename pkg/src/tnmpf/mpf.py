"""Dynamic and static multiproduct-formula coefficients and their error tests.

The dynamic coefficients minimise the squared Frobenius distance

    E(c) = 1 + c^T M c - 2 L^T c     subject to  sum(c) = 1,

where ``M_ij = |<psi0|S_i^-k_i S_j^k_j|psi0>|^2`` and
``L_j = |<psi0|S_j^-k_j exp(-iHt)|psi0>|^2``. ``M`` and ``L`` come from one of
three sources: interleaved MPOs (scalable), stored MPS states, or dense vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import dense
from .mpo import InterleavePlan, build_F, default_k0, exact_plan, mpo_diagnostics, pair_plan, sandwich
from .mps import MatrixProductState, apply_circuit, overlap, product_state
from .spinchain import HamiltonianSpec, trotter_circuit
from .tensor import TruncationPolicy


class MPFError(RuntimeError):
    pass


class BuildFailure(MPFError):
    """An MPO build failed; ``pair`` identifies the (i, j) entry (``i = 0`` is the reference)."""

    def __init__(self, pair: tuple[int, int], cause: Exception):
        super().__init__(f"building F for pair {pair} failed: {cause}")
        self.pair = pair


@dataclass
class MPFProblem:
    k_list: tuple[int, ...]
    t: float
    M: np.ndarray
    L: np.ndarray
    order: int = 2
    provenance: dict = field(default_factory=dict)
    trunc_history: float = 0.0
    max_bond: int = 1

    def __post_init__(self) -> None:
        self.k_list = tuple(int(k) for k in self.k_list)
        if any(b <= a for a, b in zip(self.k_list, self.k_list[1:])) or self.k_list[0] < 1:
            raise ValueError("k_list must be strictly increasing positive integers")
        self.M = np.asarray(self.M, dtype=float)
        self.L = np.asarray(self.L, dtype=float)
        r = len(self.k_list)
        if self.M.shape != (r, r) or self.L.shape != (r,):
            raise ValueError("M must be r x r and L length r")

    @property
    def r(self) -> int:
        return len(self.k_list)

    def check(self, trunc_tolerance: float = 0.0) -> list[str]:
        """Violated invariants, empty when the problem is valid."""
        issues = []
        if not np.allclose(self.M, self.M.T, atol=1e-10):
            issues.append("M is not symmetric")
        if not np.allclose(np.diag(self.M), 1.0, atol=1e-10):
            issues.append("M diagonal is not 1")
        hi = 1.0 + 10.0 * trunc_tolerance + 1e-12
        if self.M.min() < -1e-12 or self.M.max() > hi or self.L.min() < -1e-12 or self.L.max() > hi:
            issues.append("entries outside [0, 1]")
        if np.linalg.eigvalsh(self.M).min() < -1e-10:
            issues.append("M is not positive semidefinite")
        return issues


@dataclass(frozen=True)
class CoefficientSet:
    c: np.ndarray
    mu: float = float("nan")
    E_F_D: float = float("nan")

    @property
    def one_norm(self) -> float:
        return float(np.sum(np.abs(self.c)))


def _finish(k_list, t, M, L, order, provenance, hist=0.0, chi=1) -> MPFProblem:
    M = np.triu(M, 1)
    M = M + M.T + np.eye(M.shape[0])
    return MPFProblem(tuple(k_list), t, M, L, order, provenance, hist, chi)


def assemble_from_plans(
    psi0: MatrixProductState,
    k_list: Sequence[int],
    t: float,
    pair_plans: Callable[[int, int], InterleavePlan],
    ex_plans: Callable[[int], InterleavePlan],
    policy: TruncationPolicy,
    memory_cap: int | None = None,
    provenance: dict | None = None,
    diagnostics: list | None = None,
) -> MPFProblem:
    """Gram matrix and overlap vector from MPO builds (upper triangle only)."""
    r = len(k_list)
    M = np.eye(r)
    L = np.zeros(r)
    hist = 0.0
    chi = 1

    def run(pair, plan):
        nonlocal hist, chi
        try:
            F = build_F(plan, policy, memory_cap)
        except Exception as exc:  # noqa: BLE001 - re-raised with the pair attached
            raise BuildFailure(pair, exc) from exc
        hist = max(hist, F.trunc_history)
        chi = max(chi, F.max_bond)
        if diagnostics is not None:
            diagnostics.append((pair, mpo_diagnostics(F)))
        return abs(sandwich(psi0, F)) ** 2

    for a in range(r):
        for b in range(a + 1, r):
            M[a, b] = run((a + 1, b + 1), pair_plans(k_list[a], k_list[b]))
    for b in range(r):
        L[b] = run((0, b + 1), ex_plans(k_list[b]))
    prov = {"source": "mpo", "lambda0": policy.rel_threshold, "chi_max": policy.max_bond}
    prov.update(provenance or {})
    return _finish(k_list, t, M, L, 2, prov, hist, chi)


def assemble_problem(
    h: HamiltonianSpec,
    psi0: MatrixProductState,
    k_list: Sequence[int],
    t: float,
    reference_k0: int | None = None,
    policy: TruncationPolicy | None = None,
    reference_order: int = 2,
    memory_cap: int | None = None,
    diagnostics: list | None = None,
) -> MPFProblem:
    """MPO path: ``M_ij = |<psi0|F_ij|psi0>|^2`` and ``L_j = |<psi0|F_ex,j|psi0>|^2``."""
    if not k_list:
        raise ValueError("k_list must be nonempty")
    if t < 0:
        raise ValueError("t must be non-negative")
    policy = policy or TruncationPolicy.for_operator()
    k0 = reference_k0 or default_k0(k_list, reference_order)
    return assemble_from_plans(
        psi0,
        k_list,
        t,
        lambda ki, kj: pair_plan(h, t, ki, kj),
        lambda kj: exact_plan(h, t, kj, k0, reference_order),
        policy,
        memory_cap,
        {"k0": k0, "reference_order": reference_order},
        diagnostics,
    )


def assemble_problem_dense(
    h: HamiltonianSpec,
    bits: str,
    k_list: Sequence[int],
    t: float,
    reference: str = "circuit",
    reference_k0: int | None = None,
    reference_order: int = 2,
    exact_state: np.ndarray | None = None,
) -> MPFProblem:
    """Dense-vector path; ``reference`` is ``"circuit"`` (same fine Trotter as the MPO path) or ``"exact"``."""
    if h.n_sites > dense.DENSE_CAP:
        raise ValueError(f"dense path limited to {dense.DENSE_CAP} sites")
    v0 = dense.basis_state(bits)
    states = [dense.apply_circuit(v0, trotter_circuit(h, t, k)) for k in k_list]
    if exact_state is not None:
        ref = exact_state
    elif reference == "exact":
        ref = dense.evolve_exact(h, v0, t)
    else:
        k0 = reference_k0 or default_k0(k_list, reference_order)
        ref = dense.apply_circuit(v0, trotter_circuit(h, t, k0, reference_order))
    r = len(k_list)
    M = np.array([[abs(np.vdot(states[a], states[b])) ** 2 for b in range(r)] for a in range(r)])
    L = np.array([abs(np.vdot(s, ref)) ** 2 for s in states])
    return _finish(k_list, t, M, L, 2, {"source": "dense", "reference": reference})


def assemble_problem_mps(
    trotter_states: Sequence[MatrixProductState],
    reference_state: MatrixProductState,
    k_list: Sequence[int],
    t: float,
    provenance: dict | None = None,
) -> MPFProblem:
    """Overlaps of explicitly stored states."""
    r = len(k_list)
    M = np.eye(r)
    for a in range(r):
        for b in range(a + 1, r):
            M[a, b] = abs(overlap(trotter_states[a], trotter_states[b])) ** 2
    L = np.array([abs(overlap(s, reference_state)) ** 2 for s in trotter_states])
    prov = {"source": "mps"}
    prov.update(provenance or {})
    chi = max(s.max_bond for s in [*trotter_states, reference_state])
    hist = max(s.trunc_history for s in [*trotter_states, reference_state])
    return _finish(k_list, t, M, L, 2, prov, hist, chi)


def trotter_states_mps(h: HamiltonianSpec, bits: str, k_list, t: float, policy: TruncationPolicy) -> list[MatrixProductState]:
    psi0 = product_state(bits)
    return [apply_circuit(psi0, trotter_circuit(h, t, k), policy) for k in k_list]


# coefficients -----------------------------------------------------------------


def static_coefficients(
    k_list: Sequence[int],
    p: int = 2,
    symmetric: bool = True,
    exponents: Sequence[int] | None = None,
) -> CoefficientSet:
    """Time-independent coefficients cancelling the leading Trotter error orders.

    Solves ``sum c = 1`` and ``sum c_j / k_j^q = 0``. By default ``q`` runs over
    the ``r - 1`` leading error orders of the formula: ``p, p+2, ...`` for
    symmetric formulas and ``p, p+1, ...`` otherwise. Explicit ``exponents``
    override this; an overdetermined system is solved in the least-squares sense.
    """
    k = np.asarray(k_list, dtype=float)
    r = k.size
    if r == 0:
        raise ValueError("k_list must be nonempty")
    if exponents is None:
        stride = 2 if symmetric else 1
        exponents = [p + stride * m for m in range(r - 1)]
    A = np.vstack([np.ones(r)] + [k ** (-float(q)) for q in exponents])
    b = np.zeros(A.shape[0])
    b[0] = 1.0
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise MPFError(f"Vandermonde system is ill-conditioned (condition number {cond:.3e})")
    if A.shape[0] == r:
        c = np.linalg.solve(A, b)
    else:
        c = np.linalg.lstsq(A, b, rcond=None)[0]
    return CoefficientSet(c)


def quadratic_error(c: np.ndarray, M: np.ndarray, L: np.ndarray) -> float:
    """1 + c^T M c - 2 L^T c."""
    c = np.asarray(c, dtype=float)
    return float(1.0 + c @ M @ c - 2.0 * L @ c)


def kkt_solve(M: np.ndarray, L: np.ndarray, ridge: float = 0.0) -> tuple[np.ndarray, float]:
    """Solve ``[[M + ridge I, 1], [1^T, 0]] [c; -mu] = [L; 1]``."""
    r = L.size
    K = np.zeros((r + 1, r + 1))
    K[:r, :r] = M + ridge * np.eye(r)
    K[:r, r] = 1.0
    K[r, :r] = 1.0
    rhs = np.append(L, 1.0)
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise MPFError("KKT system is singular; increase the ridge or use fewer step counts") from exc
    cond = np.linalg.cond(K)
    if not np.all(np.isfinite(sol)) or not np.isfinite(cond) or cond > 1e15:
        raise MPFError(f"KKT system is singular (condition {cond:.3e}); increase the ridge or use fewer step counts")
    # one step of iterative refinement; M is often close to the all-ones matrix
    sol = sol + np.linalg.solve(K, rhs - K @ sol)
    return sol[:r], -sol[r]


def dynamic_coefficients(problem: MPFProblem, ridge: float = 1e-12) -> CoefficientSet:
    """Minimiser of the Frobenius error subject to ``sum c = 1``.

    ``ridge`` is relative to ``||M||_2`` and only regularises the solve; the
    reported error is evaluated with the stored ``M`` and ``L``.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    M, L = problem.M, problem.L
    c, mu = kkt_solve(M, L, ridge * np.linalg.norm(M, 2))
    return CoefficientSet(c, mu, quadratic_error(c, M, L))


def trotter_error(problem: MPFProblem, j: int) -> float:
    """2 - 2 L_j, clipped at zero."""
    return max(0.0, 2.0 - 2.0 * float(problem.L[j]))


def state_truncation_error(psi: MatrixProductState, ref: MatrixProductState) -> float:
    return 2.0 - 2.0 * abs(overlap(psi, ref)) ** 2


def cross_validated_error(c_mpo: CoefficientSet, exact_problem: MPFProblem) -> float:
    """Error of coefficients from one problem measured with another problem's ``M``, ``L``."""
    if c_mpo.c.size != exact_problem.r:
        raise ValueError("coefficient length does not match the problem rank")
    return quadratic_error(c_mpo.c, exact_problem.M, exact_problem.L)


# tests ------------------------------------------------------------------------


@dataclass(frozen=True)
class MPFTestResult:
    times: np.ndarray
    mpf_pass: np.ndarray
    trotter_pass: np.ndarray
    mpf_last_pass: float | None
    mpf_cutoff: float | None
    trotter_last_pass: float | None
    trotter_crossover: float | None


def _crossing(times, margin) -> tuple[float | None, float | None]:
    """Last passing grid time and the interpolated start of the final failing run.

    ``margin <= 0`` means the inequality holds. Returns ``(None, None)`` if it
    holds at every grid point; the cutoff is ``None`` when nothing passes.
    """
    ok = margin <= 0
    if ok.all():
        return float(times[-1]), None
    if not ok.any():
        return None, float(times[0])
    last = int(np.nonzero(ok)[0].max())
    if last == len(times) - 1:
        return float(times[-1]), None
    t0, t1 = times[last], times[last + 1]
    m0, m1 = margin[last], margin[last + 1]
    frac = 0.0 if m1 == m0 else float(-m0 / (m1 - m0))
    return float(t0), float(t0 + frac * (t1 - t0))


def mpf_test(
    times: Sequence[float],
    E_F_D: Sequence[float],
    E_F_k_values: Sequence[Sequence[float]],
    r: int,
    deep_E_F_k: Sequence[float] | None = None,
    atol: float = 0.0,
) -> MPFTestResult:
    """Frobenius-norm MPF test and Trotter test on a time grid.

    The MPF test passes when ``(r + 1) E_F_D <= min_j E_F^{k_j}``; the Trotter
    test when ``E_F_D <= E_F^k`` for the deeper single formula. ``E_F_k_values``
    is indexed ``[j][time]``. Times are located by linear interpolation on the
    grid, after the last grid point at which the inequality still holds.
    Both inequalities are relaxed by ``atol`` so noise-level errors tie.
    """
    times = np.asarray(times, dtype=float)
    ed = np.asarray(E_F_D, dtype=float)
    ek = np.min(np.atleast_2d(np.asarray(E_F_k_values, dtype=float)), axis=0)
    mpf_margin = (r + 1) * ed - ek - atol
    mpf_last, mpf_cut = _crossing(times, mpf_margin)
    if deep_E_F_k is None:
        tr_margin = np.full_like(ed, -1.0)
    else:
        tr_margin = ed - np.asarray(deep_E_F_k, dtype=float) - atol
    tr_last, tr_cross = _crossing(times, tr_margin)
    return MPFTestResult(times, mpf_margin <= 0, tr_margin <= 0, mpf_last, mpf_cut, tr_last, tr_cross)


def mpf_test_single(E_F_D: float, E_F_k_values: Sequence[float], r: int) -> bool:
    return (r + 1) * E_F_D <= min(E_F_k_values)


# perturbation bound -------------------------------------------------------------


@dataclass(frozen=True)
class LemmaCheck:
    applicable: bool
    epsilon: float
    lhs: float = float("nan")
    rhs: float = float("nan")
    obs_lhs: float = float("nan")
    obs_rhs: float = float("nan")
    trotter_error_vec: np.ndarray | None = None
    reason: str = ""

    @property
    def coefficient_bound_holds(self) -> bool:
        return self.applicable and self.lhs <= self.rhs

    @property
    def observable_bound_holds(self) -> bool:
        return self.applicable and self.obs_lhs <= self.obs_rhs


def lemma_bound_check(
    exact: MPFProblem,
    perturbed: MPFProblem,
    observables: Sequence[float],
    exact_observable: float,
) -> LemmaCheck:
    """Evaluate both sides of the coefficient and observable perturbation bounds.

    Coefficients are the exact constrained minimisers (no ridge). ``||M^-1||`` is
    the spectral norm from the eigendecomposition of the exact ``M``.
    """
    eps = max(
        float(np.linalg.norm(exact.L - perturbed.L)),
        float(np.linalg.norm(exact.M - perturbed.M, 2)),
    )
    if eps >= 1.0:
        return LemmaCheck(False, eps, reason="epsilon >= 1")
    w = np.linalg.eigvalsh(exact.M)
    if w.min() <= 1e-14 * max(1.0, w.max()):
        return LemmaCheck(False, eps, reason="exact M is singular")
    try:
        c_star, _ = kkt_solve(exact.M, exact.L)
        c_pert, _ = kkt_solve(perturbed.M, perturbed.L)
    except MPFError as exc:
        return LemmaCheck(False, eps, reason=str(exc))
    minv = 1.0 / w.min()
    lhs = float(np.linalg.norm(c_star - c_pert))
    rhs = eps * (minv + float(np.linalg.norm(c_star))) / (1.0 - eps)
    O = np.asarray(observables, dtype=float)
    err_vec = exact_observable - O
    obs_lhs = abs(float(c_pert @ O) - exact_observable)
    obs_rhs = abs(float(c_star @ err_vec)) + rhs * float(np.linalg.norm(err_vec))
    return LemmaCheck(True, eps, lhs, rhs, obs_lhs, obs_rhs, err_vec)


# scaling fits ---------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingFit:
    """``exp_in_t``: chi = f exp(v0 t). ``power_in_k``: chi = g exp(v1 t^alpha / k^(alpha-1))."""

    model: str
    prefactor: float
    rate: float
    alpha: float
    slope: float
    residual: float


def fit_scaling(
    samples: Sequence[tuple[float, float]],
    model: str,
    t: float | None = None,
    prefactor: float = 1.0,
) -> ScalingFit:
    """Linear least squares in the model's linearising coordinates.

    ``exp_in_t`` fits ``log chi`` against ``t``. ``power_in_k`` fits
    ``log(log chi - log g)`` against ``log k`` at fixed ``t`` (``g`` given by
    ``prefactor``); the slope is ``1 - alpha``.
    """
    if len(samples) < 3:
        raise ValueError("need at least three samples")
    x = np.array([s[0] for s in samples], dtype=float)
    chi = np.array([s[1] for s in samples], dtype=float)
    if np.ptp(chi) == 0:
        raise ValueError("degenerate samples: chi is constant")
    if model == "exp_in_t":
        y = np.log(chi)
        slope, intercept = np.polyfit(x, y, 1)
        resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
        return ScalingFit(model, math.exp(intercept), float(slope), float("nan"), float(slope), resid)
    if model == "power_in_k":
        if t is None:
            raise ValueError("power_in_k needs the fixed time t")
        inner = np.log(chi) - math.log(prefactor)
        if np.any(inner <= 0):
            raise ValueError("log(chi / g) must be positive for every sample")
        lx, y = np.log(x), np.log(inner)
        slope, intercept = np.polyfit(lx, y, 1)
        resid = float(np.sqrt(np.mean((y - (slope * lx + intercept)) ** 2)))
        alpha = 1.0 - float(slope)
        rate = math.exp(intercept) / t**alpha
        return ScalingFit(model, prefactor, rate, alpha, float(slope), resid)
    raise ValueError(f"unknown model {model!r}")
