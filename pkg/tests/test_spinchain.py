from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from tnmpf import dense
from tnmpf.spinchain import (
    XX_YY,
    ZZ,
    GateLayer,
    Step,
    TimedCircuit,
    bond_gate,
    bond_hamiltonian,
    build_hamiltonian,
    hamiltonian_from_dict,
    reference_circuit,
    second_order_step,
    trotter_circuit,
)


def unitary_deficit(u):
    return np.abs(u @ u.conj().T - np.eye(u.shape[0])).max()


class TestHamiltonian:
    def test_uniform_two_sites(self):
        h = build_hamiltonian("uniform_heisenberg", 2)
        assert h.couplings == ((1.0, 1.0),)

    def test_disordered_deterministic(self):
        a = build_hamiltonian("disordered_xxz", 50, 11)
        b = build_hamiltonian("disordered_xxz", 50, 11)
        assert a.couplings == b.couplings
        assert a.couplings != build_hamiltonian("disordered_xxz", 50, 12).couplings

    def test_disordered_ranges(self):
        h = build_hamiltonian("disordered_xxz", 50, 4)
        js = np.array([j for j, _ in h.couplings])
        assert js.min() >= 0.25 and js.max() <= 0.75
        assert all(d / j == 2.0 for j, d in h.couplings)

    @pytest.mark.parametrize("n", [0, 1])
    def test_too_small(self, n):
        with pytest.raises(ValueError):
            build_hamiltonian("uniform_heisenberg", n)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_hamiltonian("ising", 4)

    def test_dict_round_trip(self):
        h = build_hamiltonian("disordered_xxz", 6, 3)
        assert hamiltonian_from_dict(h.to_dict()) == h

    def test_sign_convention(self):
        # h = -(1/4)(XX + YY + ZZ): the singlet has energy +3/4, the triplet -1/4
        w = np.linalg.eigvalsh(bond_hamiltonian(1.0, 1.0))
        np.testing.assert_allclose(sorted(w), [-0.25, -0.25, -0.25, 0.75], atol=1e-14)
        np.testing.assert_allclose(bond_hamiltonian(0.3, 0.6), -0.25 * (0.3 * XX_YY + 0.6 * ZZ))


class TestBondGate:
    def test_zero_time(self):
        np.testing.assert_allclose(bond_gate((1.0, 1.0), 0.0), np.eye(4), atol=1e-15)

    @pytest.mark.parametrize("dt", [0.1, 0.37, 1.0, 2.5])
    def test_eigenphases_match_expm_oracle(self, dt):
        g = bond_gate((1.0, 1.0), dt)
        oracle = scipy.linalg.expm(-1j * dt * bond_hamiltonian(1.0, 1.0))
        np.testing.assert_allclose(g, oracle, atol=1e-13)
        # singlet e^{-i 3dt/4}, triplet e^{+i dt/4} (x3)
        w = np.linalg.eigvals(g)
        assert np.sum(np.abs(w - np.exp(1j * dt / 4)) < 1e-10) == 3
        assert np.sum(np.abs(w - np.exp(-3j * dt / 4)) < 1e-10) == 1

    @settings(max_examples=30, deadline=None)
    @given(j=st.floats(-2, 2), d=st.floats(-2, 2), dt=st.floats(-5, 5))
    def test_unitary(self, j, d, dt):
        assert unitary_deficit(bond_gate((j, d), dt)) < 1e-12


class TestCircuits:
    def test_layer_overlap_rejected(self):
        g = np.eye(4)
        with pytest.raises(ValueError):
            GateLayer(((0, g), (1, g)), "odd")

    def test_time_sum_checked(self):
        h = build_hamiltonian("uniform_heisenberg", 4)
        step = Step(second_order_step(h, 0.1), 0.1)
        with pytest.raises(ValueError):
            TimedCircuit(4, (step, step), 0.3, "")

    def test_zero_steps_rejected(self):
        with pytest.raises(ValueError):
            trotter_circuit(build_hamiltonian("uniform_heisenberg", 4), 1.0, 0)

    def test_zero_time_is_identity(self):
        c = trotter_circuit(build_hamiltonian("uniform_heisenberg", 4), 0.0, 3)
        assert c.total_time == 0 and not c.steps

    @pytest.mark.parametrize("order", [2, 4])
    def test_step_bookkeeping(self, order):
        c = trotter_circuit(build_hamiltonian("disordered_xxz", 6, 1), 0.9, 7, order)
        assert len(c.steps) == 7
        assert all(s.advanced_time == pytest.approx(0.9 / 7) for s in c.steps)
        assert sum(s.advanced_time for s in c.steps) == pytest.approx(0.9, abs=1e-12)

    def test_layer_structure(self):
        layers = second_order_step(build_hamiltonian("uniform_heisenberg", 6), 0.2)
        assert [layer.parity for layer in layers] == ["odd", "even", "odd"]
        assert [len(layer.gates) for layer in layers] == [3, 2, 3]

    def test_zero_dt_layers_identity(self):
        for layer in second_order_step(build_hamiltonian("disordered_xxz", 5, 2), 0.0):
            for _, g in layer.gates:
                np.testing.assert_allclose(g, np.eye(4), atol=1e-15)

    def test_second_order_local_error(self):
        h = build_hamiltonian("disordered_xxz", 6, 5)
        H = dense.hamiltonian_matrix(h).toarray()
        errs = []
        for dt in (0.2, 0.1):
            u = dense.circuit_unitary(trotter_circuit(h, dt, 1))
            errs.append(np.linalg.norm(u - scipy.linalg.expm(-1j * dt * H), 2))
        assert errs[0] / errs[1] == pytest.approx(8.0, rel=0.1)

    def test_magnetization_conserved(self):
        h = build_hamiltonian("disordered_xxz", 6, 5)
        vec = dense.apply_circuit(dense.basis_state("101100"), trotter_circuit(h, 0.7, 2))
        z = sum(dense.expectation(vec, [(i, np.diag([1.0, -1.0]))], 6) for i in range(6))
        assert z == pytest.approx(0.0, abs=1e-10)

    def test_order_four_beats_order_two(self):
        h = build_hamiltonian("uniform_heisenberg", 8)
        v0 = dense.basis_state("10101010")
        exact = dense.evolve_exact(h, v0, 0.5)
        deficit = {o: 1 - abs(np.vdot(exact, dense.apply_circuit(v0, trotter_circuit(h, 0.5, 4, o)))) ** 2 for o in (2, 4)}
        assert deficit[4] * 100 <= deficit[2]

    def test_reversal_identity(self):
        h = build_hamiltonian("disordered_xxz", 6, 9)
        c = trotter_circuit(h, 1.3, 5)
        v0 = dense.basis_state("100110")
        back = dense.apply_circuit(dense.apply_circuit(v0, c), c, adjoint=True)
        assert abs(np.vdot(v0, back)) ** 2 == pytest.approx(1.0, abs=1e-10)

    def test_reference_defaults(self):
        h = build_hamiltonian("uniform_heisenberg", 4)
        assert len(reference_circuit(h, 1.0, 3).steps) == 24
        assert len(reference_circuit(h, 1.0, 3, order=4).steps) == 12

    @pytest.mark.parametrize("n", [2, 3, 6])
    def test_fused_fourth_order_matches_suzuki_product(self, n):
        from tnmpf.spinchain import SUZUKI_P

        h = build_hamiltonian("disordered_xxz", n, 3)
        layers = []
        for x in (SUZUKI_P, SUZUKI_P, 1 - 4 * SUZUKI_P, SUZUKI_P, SUZUKI_P):
            layers += list(second_order_step(h, 0.35 * x))
        eye = np.eye(2**n, dtype=complex)
        oracle = np.stack([dense.apply_layers(eye[:, i], layers, n) for i in range(2**n)], axis=1)
        np.testing.assert_allclose(dense.circuit_unitary(trotter_circuit(h, 0.35, 1, 4)), oracle, atol=1e-13)

    def test_norm_preserved(self):
        h = build_hamiltonian("disordered_xxz", 7, 2)
        vec = dense.apply_circuit(dense.basis_state("1010101"), trotter_circuit(h, 2.0, 3, 4))
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-10)

    def test_fidelity_deficit_slope(self):
        h = build_hamiltonian("uniform_heisenberg", 8)
        v0 = dense.basis_state("10101010")
        exact = dense.evolve_exact(h, v0, 0.5)
        ks = np.array([2, 4, 8, 16])
        e = [2 - 2 * abs(np.vdot(exact, dense.apply_circuit(v0, trotter_circuit(h, 0.5, k)))) ** 2 for k in ks]
        slope = np.polyfit(np.log(ks), np.log(e), 1)[0]
        assert slope == pytest.approx(-4.0, abs=0.3)
