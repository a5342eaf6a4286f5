"""Dense complex tensor primitives: contraction and truncated SVD.

Tensors are plain ``numpy.ndarray`` objects (row-major, complex128). Everything
built on top of this module (MPS, MPO) goes through :func:`truncated_svd` so that
truncation bookkeeping lives in one place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

# Singular values below this fraction of the largest one are numerical noise and
# are always dropped, even at rel_threshold == 0.
NUMERICAL_FLOOR = 1e-15


class SVDFailure(RuntimeError):
    """Raised when no LAPACK driver can decompose the input."""


@dataclass(frozen=True)
class TruncationPolicy:
    """Bond truncation rule.

    Attributes:
        rel_threshold: singular values with ``s / s_max < rel_threshold`` are dropped.
        max_bond: hard cap on the kept rank (``None`` means unbounded).
        renormalize: rescale kept singular values so the norm of ``S`` is preserved.
    """

    rel_threshold: float = 0.0
    max_bond: int | None = None
    renormalize: bool = False

    def __post_init__(self) -> None:
        if not (0.0 <= self.rel_threshold < 1.0):
            raise ValueError(f"rel_threshold must lie in [0, 1), got {self.rel_threshold}")
        if self.max_bond is not None and self.max_bond < 1:
            raise ValueError(f"max_bond must be >= 1, got {self.max_bond}")

    @classmethod
    def for_state(cls, rel_threshold: float = 0.0, max_bond: int | None = None) -> TruncationPolicy:
        return cls(rel_threshold, max_bond, renormalize=True)

    @classmethod
    def for_operator(cls, rel_threshold: float = 0.0, max_bond: int | None = None) -> TruncationPolicy:
        return cls(rel_threshold, max_bond, renormalize=False)


@dataclass(frozen=True)
class TruncationReport:
    kept_rank: int
    discarded_weight: float
    cumulative_weight: float

    def __post_init__(self) -> None:
        if self.discarded_weight < 0:
            raise ValueError("discarded_weight must be non-negative")


def _svd(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        pass
    try:
        # gesvd is slower but converges on inputs where gesdd gives up
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SVDFailure(f"SVD did not converge for matrix of shape {m.shape}") from exc


def keep_rank(s: np.ndarray, policy: TruncationPolicy) -> int:
    """Number of leading singular values that survive ``policy``."""
    if s.size == 0 or s[0] == 0.0:
        return min(1, s.size)
    cut = max(policy.rel_threshold, NUMERICAL_FLOOR) * s[0]
    rank = int(np.count_nonzero(s >= cut))
    if policy.max_bond is not None:
        rank = min(rank, policy.max_bond)
    return max(rank, 1)


def truncated_svd(
    m: np.ndarray,
    policy: TruncationPolicy,
    cumulative_weight: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, TruncationReport]:
    """Truncated singular value decomposition ``m ~ U @ diag(S) @ V``.

    Args:
        m: 2-index array with finite entries.
        policy: truncation rule; the relative threshold and the rank cap are both
            applied and the more restrictive one wins.
        cumulative_weight: running total carried into the returned report.

    Returns:
        ``(U, S, V, report)`` where ``report.discarded_weight`` is the sum of the
        squared dropped singular values, i.e. the squared Frobenius error of the
        un-renormalized reconstruction.
    """
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"truncated_svd expects a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise SVDFailure("input matrix has non-finite entries")
    u, s, v = _svd(m)
    rank = keep_rank(s, policy)
    discarded = float(np.sum(s[rank:] ** 2))
    u, s, v = u[:, :rank], s[:rank], v[:rank, :]
    if policy.renormalize and discarded > 0.0:
        kept = float(np.sum(s**2))
        s = s * math.sqrt((kept + discarded) / kept)
    report = TruncationReport(rank, discarded, cumulative_weight + discarded)
    return u, s, v, report


def contract(a: np.ndarray, b: np.ndarray, axis_pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    """Contract ``a`` and ``b`` over the given ``(axis_of_a, axis_of_b)`` pairs.

    The result carries the uncontracted axes of ``a`` followed by those of ``b``.
    """
    a_axes = [p[0] for p in axis_pairs]
    b_axes = [p[1] for p in axis_pairs]
    for ia, ib in zip(a_axes, b_axes):
        if a.shape[ia] != b.shape[ib]:
            raise ValueError(
                f"extent mismatch: axis {ia} of a has {a.shape[ia]}, axis {ib} of b has {b.shape[ib]}"
            )
    return np.tensordot(a, b, axes=(a_axes, b_axes))
