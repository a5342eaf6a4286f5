"""Matrix product states and TEBD-style gate application.

Site tensors are stored with index order ``(left bond, physical, right bond)``.
A chain is kept in mixed-canonical form around ``center``; the center tensor has
unit Frobenius norm and the overall scale lives in ``norm_log`` (natural log),
so the represented object is ``exp(norm_log) * contraction(tensors)``.
"""

from __future__ import annotations

import copy
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .spinchain import I2, X, Y, Z, GateLayer, TimedCircuit
from .tensor import TruncationPolicy, TruncationReport, truncated_svd

PAULIS = {"i": I2, "x": X, "y": Y, "z": Z}


class BondDimensionExceeded(RuntimeError):
    """Raised when a chain outgrows its memory cap."""

    def __init__(self, entries: int, cap: int, step: int | None = None):
        where = f" at time step {step}" if step is not None else ""
        super().__init__(f"chain needs {entries} complex entries, above the cap of {cap}{where}")
        self.entries = entries
        self.cap = cap
        self.step = step


class TensorChain:
    """Open-boundary chain of 3-index tensors with a tracked orthogonality center."""

    phys_dim = 2

    def __init__(
        self,
        tensors: Sequence[np.ndarray],
        center: int | None = None,
        norm_log: float = 0.0,
        trunc_history: float = 0.0,
        memory_cap: int | None = None,
    ):
        self.tensors = [np.asarray(t, dtype=complex) for t in tensors]
        if not self.tensors:
            raise ValueError("a chain needs at least one site")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise ValueError("boundary bonds must have extent 1")
        for a, b in zip(self.tensors, self.tensors[1:]):
            if a.shape[2] != b.shape[0]:
                raise ValueError("adjacent bond extents do not match")
        self.center = center
        self.norm_log = float(norm_log)
        self.trunc_history = float(trunc_history)
        self.memory_cap = memory_cap
        if center is None:
            self.canonicalize(0)

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    @property
    def max_bond(self) -> int:
        return max([1, *self.bond_dims])

    @property
    def n_entries(self) -> int:
        return sum(t.size for t in self.tensors)

    def copy(self):
        new = copy.copy(self)
        new.tensors = list(self.tensors)
        return new

    # canonical form -----------------------------------------------------

    def _qr_right(self, i: int) -> None:
        a = self.tensors[i]
        l, d, r = a.shape
        q, rr = np.linalg.qr(a.reshape(l * d, r))
        self.tensors[i] = q.reshape(l, d, -1)
        self.tensors[i + 1] = np.tensordot(rr, self.tensors[i + 1], axes=(1, 0))

    def _qr_left(self, i: int) -> None:
        a = self.tensors[i]
        l, d, r = a.shape
        q, rr = np.linalg.qr(a.reshape(l, d * r).T)
        self.tensors[i] = q.T.reshape(-1, d, r)
        self.tensors[i - 1] = np.tensordot(self.tensors[i - 1], rr.T, axes=(2, 0))

    def _normalize_center(self) -> None:
        c = self.center
        nrm = float(np.linalg.norm(self.tensors[c]))
        if nrm == 0.0:
            raise ZeroDivisionError("chain has zero norm")
        self.tensors[c] = self.tensors[c] / nrm
        self.norm_log += math.log(nrm)

    def canonicalize(self, center: int = 0) -> None:
        for i in range(center):
            self._qr_right(i)
        for i in range(self.n_sites - 1, center, -1):
            self._qr_left(i)
        self.center = center
        self._normalize_center()

    def move_center(self, site: int) -> None:
        if self.center is None:
            self.canonicalize(site)
            return
        while self.center < site:
            self._qr_right(self.center)
            self.center += 1
        while self.center > site:
            self._qr_left(self.center)
            self.center -= 1

    # two-site update ------------------------------------------------------

    def apply_two_site(
        self,
        i: int,
        op: Callable[[np.ndarray], np.ndarray],
        policy: TruncationPolicy,
        absorb: str = "right",
    ) -> TruncationReport:
        """Replace sites ``(i, i+1)`` by ``op(theta)`` and split with a truncated SVD.

        ``theta`` has shape ``(l, d, d, r)``. ``trunc_history`` accumulates the
        discarded weight relative to the squared norm of the updated center.
        """
        if self.center < i:
            self.move_center(i)
        elif self.center > i + 1:
            self.move_center(i + 1)
        a, b = self.tensors[i], self.tensors[i + 1]
        l, d, _ = a.shape
        r = b.shape[2]
        theta = op(np.tensordot(a, b, axes=(2, 0)))
        u, s, v, rep = truncated_svd(
            theta.reshape(l * d, d * r),
            TruncationPolicy(policy.rel_threshold, policy.max_bond, renormalize=False),
        )
        kept = float(np.linalg.norm(s))
        full = math.sqrt(kept**2 + rep.discarded_weight)
        if full == 0.0:
            raise ZeroDivisionError("two-site update produced a zero tensor")
        self.trunc_history += rep.discarded_weight / full**2
        s = s / kept
        self.norm_log += math.log(full if policy.renormalize else kept)
        chi = s.size
        if absorb == "right":
            self.tensors[i] = u.reshape(l, d, chi)
            self.tensors[i + 1] = (s[:, None] * v).reshape(chi, d, r)
            self.center = i + 1
        else:
            self.tensors[i] = (u * s[None, :]).reshape(l, d, chi)
            self.tensors[i + 1] = v.reshape(chi, d, r)
            self.center = i
        if self.memory_cap is not None and self.n_entries > self.memory_cap:
            raise BondDimensionExceeded(self.n_entries, self.memory_cap)
        return rep

    def schmidt_values(self) -> list[np.ndarray]:
        """Normalized singular values across every internal bond."""
        work = self.copy()
        work.move_center(0)
        out = []
        for i in range(self.n_sites - 1):
            a = work.tensors[i]
            l, d, r = a.shape
            u, s, v = np.linalg.svd(a.reshape(l * d, r), full_matrices=False)
            out.append(s / np.linalg.norm(s))
            work.tensors[i] = u.reshape(l, d, -1)
            work.tensors[i + 1] = np.tensordot(s[:, None] * v, work.tensors[i + 1], axes=(1, 0))
            work.center = i + 1
        return out


class MatrixProductState(TensorChain):
    phys_dim = 2

    def to_dense(self) -> np.ndarray:
        psi = self.tensors[0][0]
        for t in self.tensors[1:]:
            psi = np.tensordot(psi, t, axes=(psi.ndim - 1, 0))
        return psi.reshape(-1) * math.exp(self.norm_log)

    @classmethod
    def from_dense(cls, vec: np.ndarray, policy: TruncationPolicy | None = None) -> MatrixProductState:
        """Exact (or truncated) MPS of a dense vector of length ``2**n``."""
        n = int(round(math.log2(vec.size)))
        policy = policy or TruncationPolicy()
        tensors = []
        rest = np.asarray(vec, dtype=complex).reshape(1, -1)
        for _ in range(n - 1):
            l = rest.shape[0]
            u, s, v, _ = truncated_svd(rest.reshape(l * 2, -1), policy)
            tensors.append(u.reshape(l, 2, -1))
            rest = s[:, None] * v
        tensors.append(rest.reshape(rest.shape[0], 2, 1))
        return cls(tensors)

    def norm(self) -> float:
        return math.exp(self.norm_log)


def product_state(bits: str) -> MatrixProductState:
    """Computational-basis product state; '0' is sigma^z = +1, '1' is sigma^z = -1."""
    if not bits or set(bits) - {"0", "1"}:
        raise ValueError(f"bits must be a nonempty 0/1 string, got {bits!r}")
    tensors = []
    for b in bits:
        t = np.zeros((1, 2, 1), dtype=complex)
        t[0, int(b), 0] = 1.0
        tensors.append(t)
    return MatrixProductState(tensors, center=0)


def neel_bits(n_sites: int) -> str:
    return ("10" * n_sites)[:n_sites]


def random_mps(n_sites: int, bond: int, rng: np.random.Generator) -> MatrixProductState:
    dims = [1] + [min(bond, 2 ** min(i, n_sites - i)) for i in range(1, n_sites)] + [1]
    tensors = [
        rng.normal(size=(dims[i], 2, dims[i + 1])) + 1j * rng.normal(size=(dims[i], 2, dims[i + 1]))
        for i in range(n_sites)
    ]
    psi = MatrixProductState(tensors)
    psi.norm_log = 0.0
    return psi


def _gate_op(gate: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    g = gate.reshape(2, 2, 2, 2)

    def op(theta: np.ndarray) -> np.ndarray:
        return np.einsum("abcd,lcdr->labr", g, theta)

    return op


def apply_layer(chain: TensorChain, layer: GateLayer, policy: TruncationPolicy, op_factory=_gate_op, dagger: bool = False) -> None:
    """Apply all gates of a layer; they act on disjoint bonds so any order is exact."""
    gates = layer.gates
    if not gates:
        return
    mid = (gates[0][0] + gates[-1][0]) / 2
    ascending = chain.center <= mid
    ordered = gates if ascending else tuple(reversed(gates))
    for site, gate in ordered:
        g = gate.conj().T if dagger else gate
        chain.apply_two_site(site, op_factory(g), policy, absorb="right" if ascending else "left")


def apply_layers(
    chain: TensorChain,
    layers: Iterable[GateLayer],
    policy: TruncationPolicy,
    adjoint: bool = False,
) -> None:
    """In-place application of a layer sequence (or of its adjoint)."""
    layers = list(layers)
    if adjoint:
        layers = layers[::-1]
    for layer in layers:
        apply_layer(chain, layer, policy, dagger=adjoint)


def apply_circuit(
    psi: MatrixProductState,
    circuit: TimedCircuit,
    policy: TruncationPolicy,
    adjoint: bool = False,
) -> MatrixProductState:
    """Return ``circuit|psi>`` (or ``circuit^dagger|psi>``) as a new MPS."""
    if circuit.n_sites != psi.n_sites:
        raise ValueError(f"circuit acts on {circuit.n_sites} sites, state has {psi.n_sites}")
    out = psi.copy()
    steps = circuit.steps[::-1] if adjoint else circuit.steps
    for n, step in enumerate(steps):
        try:
            apply_layers(out, step.layers, policy, adjoint=adjoint)
        except BondDimensionExceeded as exc:
            raise BondDimensionExceeded(exc.entries, exc.cap, step=n) from None
    return out


def default_state_cap(n_sites: int, chi: int) -> int:
    """2 L chi^2 complex entries."""
    return 2 * n_sites * chi * chi


def overlap(psi: MatrixProductState, phi: MatrixProductState) -> complex:
    """<psi|phi> by left-to-right transfer contraction."""
    if psi.n_sites != phi.n_sites:
        raise ValueError("site-count mismatch")
    env = np.ones((1, 1), dtype=complex)
    for a, b in zip(psi.tensors, phi.tensors):
        env = np.einsum("ab,asc,bsd->cd", env, a.conj(), b)
    return complex(env[0, 0]) * math.exp(psi.norm_log + phi.norm_log)


@dataclass(frozen=True)
class ObservableSpec:
    """Product of single-site operators; ``factors`` holds ``(site, 2x2 matrix)`` pairs."""

    factors: tuple[tuple[int, np.ndarray], ...]
    name: str = ""

    def __post_init__(self) -> None:
        sites = [s for s, _ in self.factors]
        if any(b <= a for a, b in zip(sites, sites[1:])):
            raise ValueError("observable sites must be strictly increasing")
        for _, m in self.factors:
            if np.shape(m) != (2, 2):
                raise ValueError("each factor must be a 2x2 matrix")

    @classmethod
    def from_labels(cls, spec: str, base: int = 0) -> ObservableSpec:
        """Parse e.g. ``"z3"`` or ``"z3 z4"``; ``base`` is the index of the first site."""
        factors = []
        for tok in spec.split():
            label, site = tok[0].lower(), int(tok[1:]) - base
            if site < 0:
                raise ValueError(f"site index in {tok!r} is below {base}")
            factors.append((site, PAULIS[label]))
        return cls(tuple(factors), name=spec)

    @property
    def sites(self) -> list[int]:
        return [s for s, _ in self.factors]

    def is_hermitian(self) -> bool:
        return all(np.allclose(m, m.conj().T, atol=1e-12) for _, m in self.factors)


def expectation(psi: MatrixProductState, obs: ObservableSpec) -> float:
    """<psi|O|psi> / <psi|psi> for a Hermitian product observable."""
    if not obs.is_hermitian():
        raise ValueError("observable factors must be Hermitian")
    if any(s < 0 or s >= psi.n_sites for s in obs.sites):
        raise ValueError("observable site out of range")
    ops = dict(obs.factors)
    env = np.ones((1, 1), dtype=complex)
    norm_env = np.ones((1, 1), dtype=complex)
    for i, a in enumerate(psi.tensors):
        b = a if i not in ops else np.einsum("st,ltr->lsr", ops[i], a)
        env = np.einsum("ab,asc,bsd->cd", env, a.conj(), b)
        norm_env = np.einsum("ab,asc,bsd->cd", norm_env, a.conj(), a)
    val = complex(env[0, 0] / norm_env[0, 0])
    if abs(val.imag) > 1e-10:
        raise ArithmeticError(f"expectation of Hermitian observable has imaginary part {val.imag}")
    return val.real


def max_bond(psi: TensorChain) -> int:
    return psi.max_bond


def entanglement_profile(psi: MatrixProductState) -> list[float]:
    """Von Neumann entropy (natural log) across every internal bond."""
    out = []
    for s in psi.schmidt_values():
        p = s**2
        p = p[p > 1e-300]
        out.append(float(-np.sum(p * np.log(p))))
    return out


# checkpoints ------------------------------------------------------------------

_MAGIC = b"TNMPS"
_VERSION = 1


def save_checkpoint(psi: TensorChain, path: str | Path) -> None:
    """Binary dump: magic, version, header, then per-site shape + raw complex128."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HIIdd", _VERSION, psi.phys_dim, psi.n_sites, psi.norm_log, psi.trunc_history))
        fh.write(struct.pack("<i", -1 if psi.center is None else psi.center))
        for t in psi.tensors:
            fh.write(struct.pack("<3q", *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<c16").tobytes())


def load_checkpoint(path: str | Path) -> MatrixProductState:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a state checkpoint")
        version, phys, n, norm_log, hist = struct.unpack("<HIIdd", fh.read(struct.calcsize("<HIIdd")))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if phys != 2:
            raise ValueError("checkpoint does not hold a state")
        (center,) = struct.unpack("<i", fh.read(4))
        tensors = []
        for _ in range(n):
            shape = struct.unpack("<3q", fh.read(24))
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(16 * count), dtype="<c16").reshape(shape)
            tensors.append(data.astype(complex))
    return MatrixProductState(tensors, center=None if center < 0 else center, norm_log=norm_log, trunc_history=hist)
