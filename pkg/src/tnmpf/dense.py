"""Dense statevector simulation for small chains.

Used as the independent reference for the tensor-network code paths and as
the harness' dense path (L <= 12). Site 0 is the most significant qubit.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .spinchain import XX_YY, ZZ, GateLayer, HamiltonianSpec, TimedCircuit

DENSE_CAP = 12


def basis_state(bits: str) -> np.ndarray:
    vec = np.zeros(2 ** len(bits), dtype=complex)
    vec[int(bits, 2)] = 1.0
    return vec


def apply_gate(vec: np.ndarray, site: int, gate: np.ndarray, n: int) -> np.ndarray:
    psi = vec.reshape(2**site, 4, 2 ** (n - site - 2))
    return np.einsum("ab,lbr->lar", gate, psi).reshape(-1)


def apply_single(vec: np.ndarray, site: int, op: np.ndarray, n: int) -> np.ndarray:
    psi = vec.reshape(2**site, 2, 2 ** (n - site - 1))
    return np.einsum("ab,lbr->lar", op, psi).reshape(-1)


def apply_layers(vec: np.ndarray, layers: Iterable[GateLayer], n: int, adjoint: bool = False) -> np.ndarray:
    layers = list(layers)
    if adjoint:
        layers = layers[::-1]
    for layer in layers:
        for site, gate in layer.gates:
            vec = apply_gate(vec, site, gate.conj().T if adjoint else gate, n)
    return vec


def apply_circuit(vec: np.ndarray, circuit: TimedCircuit, adjoint: bool = False) -> np.ndarray:
    steps = circuit.steps[::-1] if adjoint else circuit.steps
    for step in steps:
        vec = apply_layers(vec, step.layers, circuit.n_sites, adjoint=adjoint)
    return vec


def circuit_unitary(circuit: TimedCircuit) -> np.ndarray:
    n = circuit.n_sites
    cols = [apply_circuit(np.eye(2**n, dtype=complex)[:, c], circuit) for c in range(2**n)]
    return np.stack(cols, axis=1)


def _embed_bond(op4: np.ndarray, bond: int, n: int) -> sp.csr_matrix:
    left = sp.identity(2**bond, format="csr")
    right = sp.identity(2 ** (n - bond - 2), format="csr")
    return sp.kron(sp.kron(left, sp.csr_matrix(op4)), right, format="csr")


def hamiltonian_matrix(h: HamiltonianSpec) -> sp.csr_matrix:
    n = h.n_sites
    out = sp.csr_matrix((2**n, 2**n), dtype=complex)
    for b, (j, d) in enumerate(h.couplings):
        out = out + _embed_bond(-0.25 * (j * XX_YY + d * ZZ), b, n)
    return out


def evolve_exact(h: HamiltonianSpec, vec: np.ndarray, t: float) -> np.ndarray:
    """exp(-iHt) vec via Krylov/Taylor action of the sparse Hamiltonian."""
    if t == 0:
        return vec.copy()
    return expm_multiply(-1j * t * hamiltonian_matrix(h), vec)


def expectation(vec: np.ndarray, factors, n: int) -> float:
    phi = vec
    for site, op in factors:
        phi = apply_single(phi, site, op, n)
    return float(np.real(np.vdot(vec, phi)) / np.real(np.vdot(vec, vec)))
