from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnmpf.tensor import (
    SVDFailure,
    TruncationPolicy,
    TruncationReport,
    contract,
    keep_rank,
    truncated_svd,
)


def random_matrix(rng, m, n):
    return rng.normal(size=(m, n)) + 1j * rng.normal(size=(m, n))


def reconstruct(u, s, v):
    return (u * s) @ v


class TestPolicy:
    @pytest.mark.parametrize("lam", [-0.1, 1.0, 2.0])
    def test_threshold_range(self, lam):
        with pytest.raises(ValueError):
            TruncationPolicy(lam)

    def test_bond_cap_positive(self):
        with pytest.raises(ValueError):
            TruncationPolicy(0.0, 0)

    def test_role_defaults(self):
        assert TruncationPolicy.for_state().renormalize
        assert not TruncationPolicy.for_operator().renormalize

    def test_report_rejects_negative_weight(self):
        with pytest.raises(ValueError):
            TruncationReport(1, -1.0, 0.0)


class TestTruncatedSVD:
    def test_identity(self):
        u, s, v, rep = truncated_svd(np.eye(2), TruncationPolicy(1e-12))
        np.testing.assert_allclose(s, [1, 1])
        assert rep.discarded_weight == 0
        assert rep.kept_rank == 2

    def test_threshold_drops_small_value(self):
        _, s, _, rep = truncated_svd(np.diag([1.0, 1e-3]), TruncationPolicy(1e-2))
        assert rep.kept_rank == 1
        assert rep.discarded_weight == pytest.approx(1e-6, rel=1e-12)

    def test_cap_matches_dense_oracle(self):
        rng = np.random.default_rng(3)
        m = random_matrix(rng, 16, 16)
        u, s, v, rep = truncated_svd(m, TruncationPolicy(0.0, 5))
        full = np.linalg.svd(m, compute_uv=False)
        expected = np.sum(full[5:] ** 2)
        err2 = np.linalg.norm(m - reconstruct(u, s, v)) ** 2
        assert rep.kept_rank == 5
        assert err2 == pytest.approx(expected, rel=1e-10)
        assert rep.discarded_weight == pytest.approx(expected, rel=1e-10)

    def test_more_restrictive_rule_wins(self):
        s = np.array([1.0, 0.5, 0.1, 1e-4])
        assert keep_rank(s, TruncationPolicy(1e-3, 3)) == 3
        assert keep_rank(s, TruncationPolicy(1e-3, 2)) == 2
        assert keep_rank(s, TruncationPolicy(0.2, 4)) == 2

    def test_renormalize_preserves_norm(self):
        rng = np.random.default_rng(0)
        m = random_matrix(rng, 8, 6)
        _, s, _, rep = truncated_svd(m, TruncationPolicy(0.0, 2, renormalize=True))
        assert np.sum(s**2) == pytest.approx(np.linalg.norm(m) ** 2, rel=1e-12)
        assert rep.discarded_weight > 0

    def test_cumulative_weight_accumulates(self):
        _, _, _, rep = truncated_svd(np.diag([1.0, 0.1]), TruncationPolicy(0.5), cumulative_weight=0.25)
        assert rep.cumulative_weight == pytest.approx(0.26)

    def test_zero_matrix_keeps_one(self):
        u, s, v, rep = truncated_svd(np.zeros((3, 3)), TruncationPolicy())
        assert rep.kept_rank == 1

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite_input_fails_loudly(self, bad):
        m = np.eye(3)
        m[1, 1] = bad
        with pytest.raises(SVDFailure):
            truncated_svd(m, TruncationPolicy())

    def test_rejects_non_matrix(self):
        with pytest.raises(ValueError):
            truncated_svd(np.zeros((2, 2, 2)), TruncationPolicy())

    @settings(max_examples=40, deadline=None)
    @given(
        m=st.integers(1, 9),
        n=st.integers(1, 9),
        seed=st.integers(0, 2**31 - 1),
        chi=st.one_of(st.none(), st.integers(1, 9)),
        lam=st.sampled_from([0.0, 1e-3, 0.1, 0.5]),
    )
    def test_discarded_weight_is_reconstruction_error(self, m, n, seed, chi, lam):
        mat = random_matrix(np.random.default_rng(seed), m, n)
        u, s, v, rep = truncated_svd(mat, TruncationPolicy(lam, chi))
        err2 = np.linalg.norm(mat - reconstruct(u, s, v)) ** 2
        assert err2 == pytest.approx(rep.discarded_weight, rel=1e-10, abs=1e-12 * np.linalg.norm(mat) ** 2)
        assert rep.kept_rank <= min(m, n)
        np.testing.assert_allclose(u.conj().T @ u, np.eye(rep.kept_rank), atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(m=st.integers(1, 8), n=st.integers(1, 8), seed=st.integers(0, 2**31 - 1))
    def test_exact_reconstruction_without_truncation(self, m, n, seed):
        mat = random_matrix(np.random.default_rng(seed), m, n)
        u, s, v, _ = truncated_svd(mat, TruncationPolicy())
        assert np.linalg.norm(mat - reconstruct(u, s, v)) <= 1e-10 * np.linalg.norm(mat)


def loop_contract(a, b, pairs):
    """Reference contraction by explicit index loops."""
    a_free = [i for i in range(a.ndim) if i not in [p[0] for p in pairs]]
    b_free = [i for i in range(b.ndim) if i not in [p[1] for p in pairs]]
    out = np.zeros([a.shape[i] for i in a_free] + [b.shape[i] for i in b_free], dtype=complex)
    summed = [a.shape[p[0]] for p in pairs]
    for idx in itertools.product(*[range(e) for e in out.shape]):
        ia, ib = idx[: len(a_free)], idx[len(a_free) :]
        total = 0j
        for k in itertools.product(*[range(e) for e in summed]):
            ai = [0] * a.ndim
            bi = [0] * b.ndim
            for pos, ax in enumerate(a_free):
                ai[ax] = ia[pos]
            for pos, ax in enumerate(b_free):
                bi[ax] = ib[pos]
            for (pa, pb), kk in zip(pairs, k):
                ai[pa] = kk
                bi[pb] = kk
            total += a[tuple(ai)] * b[tuple(bi)]
        out[idx] = total
    return out


class TestContract:
    def test_identity_times_vector(self):
        v = np.arange(4.0)
        np.testing.assert_array_equal(contract(np.eye(4), v, [(1, 0)]), v)

    def test_frobenius_norm(self):
        rng = np.random.default_rng(1)
        m = random_matrix(rng, 3, 5)
        val = contract(m, m.conj(), [(0, 0), (1, 1)])
        assert val == pytest.approx(np.sum(np.abs(m) ** 2), rel=1e-12)

    @pytest.mark.parametrize("pairs", [[(1, 0)], [(0, 2), (2, 1)], [(0, 0), (1, 1), (2, 2)]])
    def test_matches_loop_oracle(self, pairs):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(2, 3, 4)) + 1j * rng.normal(size=(2, 3, 4))
        shape_b = [0, 0, 0]
        for pa, pb in pairs:
            shape_b[pb] = a.shape[pa]
        shape_b = [e or 3 for e in shape_b]
        b = rng.normal(size=shape_b) + 1j * rng.normal(size=shape_b)
        np.testing.assert_allclose(contract(a, b, pairs), loop_contract(a, b, pairs), atol=1e-12)

    def test_extent_mismatch(self):
        with pytest.raises(ValueError, match="extent mismatch"):
            contract(np.zeros((2, 3)), np.zeros((4, 2)), [(1, 0)])

    @settings(max_examples=20, deadline=None)
    @given(alpha=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False), seed=st.integers(0, 1000))
    def test_bilinear(self, alpha, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        np.testing.assert_allclose(contract(alpha * a, b, [(1, 0)]), alpha * contract(a, b, [(1, 0)]), atol=1e-12 * (1 + abs(alpha)) * 10)
