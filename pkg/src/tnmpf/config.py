"""Experiment configuration: YAML in, validated dataclasses out.

Validation collects every problem before raising, so a bad file is fixed in
one round trip. :meth:`ExperimentConfig.resolved` returns the full config with
all defaults filled in; it is written next to every output file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .dense import DENSE_CAP
from .mps import neel_bits

SCHEMA_VERSION = 1
ROLES = ("state", "mpo", "reference")
KINDS = ("uniform_heisenberg", "disordered_xxz")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration: " + "; ".join(self.errors))


@dataclass(frozen=True)
class HamiltonianConfig:
    kind: str = "disordered_xxz"
    n_sites: int = 12
    seed: int = 1


@dataclass(frozen=True)
class GridConfig:
    start: float = 0.1
    stop: float = 2.0
    step: float = 0.1

    def times(self) -> np.ndarray:
        n = int(np.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return np.round(self.start + self.step * np.arange(max(n, 0)), 12)


@dataclass(frozen=True)
class ReferenceConfig:
    order: int = 4
    k0_multiplier: int = 4
    # "exact" uses Krylov evolution on the dense path; MPS/MPO paths always use the fine circuit
    dense_kind: str = "exact"


@dataclass(frozen=True)
class TruncationConfig:
    lambda0: float = 1e-10
    chi_max: int | None = None


@dataclass(frozen=True)
class AQCConfig:
    enabled: bool = False
    t1: float = 1.0
    k_layers: int = 2
    suffix_ks: tuple[int, ...] = ()
    fidelity_floor: float = 0.99
    max_iters: int = 100
    tol: float = 1e-8


@dataclass(frozen=True)
class ScalingConfig:
    state_lambdas: tuple[float, ...] = (1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
    state_times: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    f_time: float = 4.0
    f_ks: tuple[int, ...] = (8, 10, 12, 16, 20, 24)
    f_dt: float = 0.25
    f_times: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    f_lambda0: float = 1e-6


@dataclass(frozen=True)
class ExperimentConfig:
    hamiltonian: HamiltonianConfig = field(default_factory=HamiltonianConfig)
    initial_state: str = "neel"
    t_grid: GridConfig = field(default_factory=GridConfig)
    k_list: tuple[int, ...] = (2, 3, 4)
    deep_k: int | None = None
    mpf_test_against: str = "deep"
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    truncation: dict[str, TruncationConfig] = field(
        default_factory=lambda: {
            "state": TruncationConfig(1e-10, 256),
            "mpo": TruncationConfig(1e-8, 64),
            "reference": TruncationConfig(1e-10, 512),
        }
    )
    shots: int | None = None
    aqc: AQCConfig = field(default_factory=AQCConfig)
    # Pauli strings with 1-based sites, e.g. "z6" or "z6 z7"
    observables: tuple[str, ...] = ()
    scaling: ScalingConfig = field(default_factory=ScalingConfig)
    dense_check: bool | None = None
    ridge: float = 1e-12
    # error differences below this are round-off or truncation noise in M, L and count as ties
    test_atol: float = 1e-10
    seed: int = 0
    output: str = "out"

    @property
    def n_sites(self) -> int:
        return self.hamiltonian.n_sites

    @property
    def bits(self) -> str:
        return neel_bits(self.n_sites) if self.initial_state == "neel" else self.initial_state

    @property
    def use_dense(self) -> bool:
        if self.dense_check is None:
            return self.n_sites <= DENSE_CAP
        return self.dense_check

    @property
    def comparison_k(self) -> int:
        return self.deep_k if self.deep_k is not None else max(self.k_list)

    @property
    def reference_k0(self) -> int:
        return self.reference.k0_multiplier * max((*self.k_list, self.comparison_k))

    def resolved(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["initial_state_bits"] = self.bits
        d["dense_check_resolved"] = self.use_dense
        d["reference_k0_resolved"] = self.reference_k0
        d["schema_version"] = SCHEMA_VERSION
        return _plain(d)

    def with_updates(self, **kw) -> ExperimentConfig:
        return dataclasses.replace(self, **kw)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _section(cls, raw, name: str, errors: list[str]):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        errors.append(f"{name}: expected a mapping")
        return cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in raw.items():
        if key not in known:
            errors.append(f"{name}.{key}: unknown field")
            continue
        default = getattr(cls(), key)
        if isinstance(default, tuple) and isinstance(val, list):
            val = tuple(val)
        kwargs[key] = val
    return cls(**kwargs)


def _num(errors, name, val, kind=float, positive=False, nonneg=False, allow_none=False):
    if val is None and allow_none:
        return
    if isinstance(val, bool) or not isinstance(val, (int, float)) or (kind is int and not float(val).is_integer()):
        errors.append(f"{name}: expected {'an integer' if kind is int else 'a number'}, got {val!r}")
        return
    if positive and not val > 0:
        errors.append(f"{name}: must be > 0, got {val!r}")
    if nonneg and val < 0:
        errors.append(f"{name}: must be >= 0, got {val!r}")


def from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    """Build and validate a config; raises :class:`ConfigError` listing every violation."""
    errors: list[str] = []
    raw = dict(raw or {})
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in raw:
        if key not in top:
            errors.append(f"{key}: unknown field")
    ham = _section(HamiltonianConfig, raw.get("hamiltonian"), "hamiltonian", errors)
    grid = _section(GridConfig, raw.get("t_grid"), "t_grid", errors)
    ref = _section(ReferenceConfig, raw.get("reference"), "reference", errors)
    aqc = _section(AQCConfig, raw.get("aqc"), "aqc", errors)
    scaling = _section(ScalingConfig, raw.get("scaling"), "scaling", errors)
    trunc = dict(ExperimentConfig().truncation)
    rt = raw.get("truncation") or {}
    if not isinstance(rt, dict):
        errors.append("truncation: expected a mapping")
        rt = {}
    for role, val in rt.items():
        if role not in ROLES:
            errors.append(f"truncation.{role}: unknown role (expected one of {', '.join(ROLES)})")
            continue
        trunc[role] = _section(TruncationConfig, val, f"truncation.{role}", errors)

    if ham.kind not in KINDS:
        errors.append(f"hamiltonian.kind: must be one of {', '.join(KINDS)}, got {ham.kind!r}")
    _num(errors, "hamiltonian.n_sites", ham.n_sites, int)
    if isinstance(ham.n_sites, int) and ham.n_sites < 2:
        errors.append("hamiltonian.n_sites: must be >= 2")
    _num(errors, "hamiltonian.seed", ham.seed, int)
    _num(errors, "t_grid.start", grid.start, nonneg=True)
    _num(errors, "t_grid.stop", grid.stop, nonneg=True)
    _num(errors, "t_grid.step", grid.step, positive=True)
    if all(isinstance(v, (int, float)) for v in (grid.start, grid.stop)) and grid.stop < grid.start:
        errors.append("t_grid.stop: must be >= t_grid.start")

    k_list = raw.get("k_list", list(ExperimentConfig().k_list))
    if not isinstance(k_list, (list, tuple)) or not k_list or not all(isinstance(k, int) and not isinstance(k, bool) and k >= 1 for k in k_list):
        errors.append(f"k_list: expected a nonempty list of positive integers, got {k_list!r}")
        k_list = ExperimentConfig().k_list
    elif any(b <= a for a, b in zip(k_list, k_list[1:])):
        errors.append(f"k_list: must be strictly increasing, got {list(k_list)}")
    deep_k = raw.get("deep_k")
    _num(errors, "deep_k", deep_k, int, positive=True, allow_none=True)
    against = raw.get("mpf_test_against", "deep")
    if against not in ("deep", "constituents"):
        errors.append("mpf_test_against: must be 'deep' or 'constituents'")

    if ref.order not in (2, 4):
        errors.append(f"reference.order: must be 2 or 4, got {ref.order!r}")
    _num(errors, "reference.k0_multiplier", ref.k0_multiplier, int, positive=True)
    if ref.dense_kind not in ("exact", "circuit"):
        errors.append("reference.dense_kind: must be 'exact' or 'circuit'")
    for role, tc in trunc.items():
        _num(errors, f"truncation.{role}.lambda0", tc.lambda0, nonneg=True)
        if isinstance(tc.lambda0, (int, float)) and tc.lambda0 >= 1:
            errors.append(f"truncation.{role}.lambda0: must be < 1")
        _num(errors, f"truncation.{role}.chi_max", tc.chi_max, int, positive=True, allow_none=True)

    init = raw.get("initial_state", "neel")
    n = ham.n_sites if isinstance(ham.n_sites, int) else 0
    if init != "neel" and (not isinstance(init, str) or set(init) - {"0", "1"} or len(init) != n):
        errors.append(f"initial_state: expected 'neel' or a {n}-character bitstring, got {init!r}")

    shots = raw.get("shots")
    if shots == "exact":
        shots = None
    _num(errors, "shots", shots, int, positive=True, allow_none=True)

    _num(errors, "aqc.t1", aqc.t1, nonneg=True)
    _num(errors, "aqc.k_layers", aqc.k_layers, int, positive=True)
    _num(errors, "aqc.max_iters", aqc.max_iters, int, positive=True)
    _num(errors, "aqc.tol", aqc.tol, positive=True)
    if not (isinstance(aqc.fidelity_floor, (int, float)) and 0 <= aqc.fidelity_floor <= 1):
        errors.append("aqc.fidelity_floor: must lie in [0, 1]")

    obs = raw.get("observables", [])
    if isinstance(obs, str):
        obs = [obs]
    from .mps import ObservableSpec

    for o in obs:
        try:
            spec = ObservableSpec.from_labels(o, base=1)
            if n and any(s >= n for s in spec.sites):
                errors.append(f"observables: {o!r} addresses a site beyond n_sites={n}")
        except (ValueError, KeyError, IndexError):
            errors.append(f"observables: cannot parse {o!r}")

    _num(errors, "ridge", raw.get("ridge", 1e-12), nonneg=True)
    _num(errors, "test_atol", raw.get("test_atol", 1e-10), nonneg=True)
    _num(errors, "seed", raw.get("seed", 0), int)
    dc = raw.get("dense_check")
    if dc is not None and not isinstance(dc, bool):
        errors.append("dense_check: must be true, false or omitted")
    elif dc and n > DENSE_CAP:
        errors.append(f"dense_check: dense path is limited to n_sites <= {DENSE_CAP}")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        hamiltonian=ham,
        initial_state=init,
        t_grid=grid,
        k_list=tuple(k_list),
        deep_k=deep_k,
        mpf_test_against=against,
        reference=ref,
        truncation=trunc,
        shots=shots,
        aqc=dataclasses.replace(aqc, suffix_ks=tuple(aqc.suffix_ks)),
        observables=tuple(obs),
        scaling=scaling,
        dense_check=dc,
        ridge=float(raw.get("ridge", 1e-12)),
        test_atol=float(raw.get("test_atol", 1e-10)),
        seed=int(raw.get("seed", 0)),
        output=str(raw.get("output", "out")),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return from_dict(raw or {})
