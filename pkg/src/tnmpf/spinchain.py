"""Nearest-neighbour spin-1/2 chains and their Trotter circuits.

Conventions used throughout the package:

* sites are 0-based; site 0 is the most significant qubit of a dense vector;
* ``|0>`` is the +1 eigenvector of sigma^z;
* a two-site gate is a 4x4 matrix in the basis ``|s_i s_{i+1}>`` with index
  ``2 * s_i + s_{i+1}``;
* the "odd" sublattice holds bonds (1,2), (3,4), ... in 1-based labels, i.e.
  0-based bond indices 0, 2, 4, ...
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np

X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)

XX_YY = np.kron(X, X) + np.kron(Y, Y)
ZZ = np.kron(Z, Z)

HamiltonianKind = Literal["uniform_heisenberg", "disordered_xxz"]

# p = 1 / (4 - 4^(1/3)) for the fourth-order Suzuki fractal
SUZUKI_P = 1.0 / (4.0 - 4.0 ** (1.0 / 3.0))


@dataclass(frozen=True)
class HamiltonianSpec:
    """H = -sum_i [J_i (S^x S^x + S^y S^y) + Delta_i S^z S^z] on bonds (i, i+1), S = sigma/2."""

    n_sites: int
    couplings: tuple[tuple[float, float], ...]
    kind: HamiltonianKind = "uniform_heisenberg"
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_sites < 2:
            raise ValueError(f"n_sites must be >= 2, got {self.n_sites}")
        if len(self.couplings) != self.n_sites - 1:
            raise ValueError("need exactly n_sites - 1 bond couplings")
        if self.kind == "disordered_xxz":
            for j, d in self.couplings:
                if not (0.25 <= j <= 0.75) or d != 2.0 * j:
                    raise ValueError(f"invalid disordered coupling (J={j}, Delta={d})")

    def bond_matrix(self, bond: int) -> np.ndarray:
        j, d = self.couplings[bond]
        return bond_hamiltonian(j, d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_sites": self.n_sites, "seed": self.rng_seed}


def build_hamiltonian(kind: HamiltonianKind, n_sites: int, rng_seed: int = 0) -> HamiltonianSpec:
    """Uniform Heisenberg (J = Delta = 1) or the disordered XXZ chain with Delta_i = 2 J_i."""
    if n_sites < 2:
        raise ValueError(f"n_sites must be >= 2, got {n_sites}")
    if kind == "uniform_heisenberg":
        couplings = tuple((1.0, 1.0) for _ in range(n_sites - 1))
    elif kind == "disordered_xxz":
        rng = np.random.default_rng(rng_seed)
        js = rng.uniform(0.25, 0.75, size=n_sites - 1)
        couplings = tuple((float(j), 2.0 * float(j)) for j in js)
    else:
        raise ValueError(f"unknown Hamiltonian kind {kind!r}")
    return HamiltonianSpec(n_sites, couplings, kind, rng_seed)


def hamiltonian_from_dict(d: dict) -> HamiltonianSpec:
    return build_hamiltonian(d["kind"], int(d["n_sites"]), int(d.get("seed", 0)))


def bond_hamiltonian(j: float, delta: float) -> np.ndarray:
    return -0.25 * (j * XX_YY + delta * ZZ)


@lru_cache(maxsize=4096)
def _bond_gate_cached(j: float, delta: float, dt: float) -> np.ndarray:
    w, v = np.linalg.eigh(bond_hamiltonian(j, delta))
    gate = (v * np.exp(-1j * w * dt)) @ v.conj().T
    gate.setflags(write=False)
    return gate


def bond_gate(term: tuple[float, float], dt: float) -> np.ndarray:
    """exp(-i h_bond dt) for a bond with couplings ``term = (J, Delta)``."""
    return _bond_gate_cached(float(term[0]), float(term[1]), float(dt))


@dataclass(frozen=True)
class GateLayer:
    gates: tuple[tuple[int, np.ndarray], ...]
    parity: Literal["odd", "even"]

    def __post_init__(self) -> None:
        sites = [s for s, _ in self.gates]
        touched = set()
        for s in sites:
            if s in touched or s + 1 in touched:
                raise ValueError("overlapping gates in a layer")
            touched.update((s, s + 1))


@dataclass(frozen=True)
class Step:
    """One layer-group (a full product-formula step) and the time it advances."""

    layers: tuple[GateLayer, ...]
    advanced_time: float


@dataclass(frozen=True)
class TimedCircuit:
    n_sites: int
    steps: tuple[Step, ...]
    total_time: float
    label: str = ""

    def __post_init__(self) -> None:
        acc = sum(s.advanced_time for s in self.steps)
        if abs(acc - self.total_time) > 1e-12 * max(1.0, abs(self.total_time)):
            raise ValueError("step times do not add up to total_time")
        if any(s.advanced_time <= 0 for s in self.steps):
            raise ValueError("every step must advance a positive time")

    @property
    def n_gates(self) -> int:
        return sum(len(layer.gates) for s in self.steps for layer in s.layers)

    def layers(self):
        for s in self.steps:
            yield from s.layers


def _parity_layer(h: HamiltonianSpec, parity: str, dt: float) -> GateLayer:
    first = 0 if parity == "odd" else 1
    gates = tuple((b, bond_gate(h.couplings[b], dt)) for b in range(first, h.n_sites - 1, 2))
    return GateLayer(gates, parity)


def second_order_step(h: HamiltonianSpec, dt: float) -> tuple[GateLayer, ...]:
    """Symmetric odd(dt/2) even(dt) odd(dt/2) layer sequence, in application order."""
    half = _parity_layer(h, "odd", dt / 2)
    layers = [half]
    if h.n_sites > 2:
        layers.append(_parity_layer(h, "even", dt))
    layers.append(half)
    return tuple(layers)


def fourth_order_step(h: HamiltonianSpec, dt: float) -> tuple[GateLayer, ...]:
    """Suzuki recursion S4(dt) = S2(p dt)^2 S2((1-4p) dt) S2(p dt)^2.

    Adjacent odd half-layers of consecutive sub-steps act on the same commuting
    bonds, so they are fused into one layer: 11 layers instead of 15.
    """
    p = SUZUKI_P
    subs = (p, p, 1.0 - 4.0 * p, p, p)
    if h.n_sites == 2:
        return (_parity_layer(h, "odd", dt),)
    odd_times = [subs[0] / 2] + [(a + b) / 2 for a, b in zip(subs, subs[1:])] + [subs[-1] / 2]
    layers = [_parity_layer(h, "odd", odd_times[0] * dt)]
    for s, tail in zip(subs, odd_times[1:]):
        layers.append(_parity_layer(h, "even", s * dt))
        layers.append(_parity_layer(h, "odd", tail * dt))
    return tuple(layers)


def trotter_circuit(h: HamiltonianSpec, t: float, k: int, order: int = 2) -> TimedCircuit:
    """``k`` product-formula steps of size ``t / k``.

    At ``t == 0`` the circuit has no steps (it is the identity).
    """
    if k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    if t < 0:
        raise ValueError("t must be non-negative")
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    label = f"S{order}(t={t:g}, k={k})"
    if t == 0:
        return TimedCircuit(h.n_sites, (), 0.0, label)
    dt = t / k
    layers = second_order_step(h, dt) if order == 2 else fourth_order_step(h, dt)
    steps = tuple(Step(layers, dt) for _ in range(k))
    return TimedCircuit(h.n_sites, steps, t, label)


def reference_circuit(h: HamiltonianSpec, t: float, k_max: int, order: int = 2, multiplier: int | None = None) -> TimedCircuit:
    """Fine Trotter surrogate for exp(-iHt).

    Default step counts: ``8 * k_max`` for order 2 and ``4 * k_max`` for order 4.
    """
    if multiplier is None:
        multiplier = 8 if order == 2 else 4
    return trotter_circuit(h, t, multiplier * k_max, order)

