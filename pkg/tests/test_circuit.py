import math

import numpy as np
import pytest
import scipy.linalg as la

from circuit import (
    DEPTH_CONVENTION,
    Circuit,
    Gate,
    PiteStepParams,
    apply_circuit,
    build_pite_step,
    build_trotter_slice,
    dag_depth,
    dense_unitary,
    dump_circuit,
    gate_matrix,
    lower,
    lower_controlled,
    merge_1q,
    native_depth,
    rzz_count,
    two_qubit_count,
)
from hamiltonian import HamiltonianSpec, build_hamiltonian, pauli_dense, split_terms
from pite import make_schedule, trotter_filter_apply


def _random_unitary(rng, dim):
    X = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    Q, R = np.linalg.qr(X)
    return Q * (np.diag(R) / np.abs(np.diag(R)))


# -----------------------------
# Gate IR
# -----------------------------

def test_gate_validation():
    with pytest.raises(ValueError):
        Gate("CNOT", (0, 1))
    with pytest.raises(ValueError):
        Gate("RZZ", (0,), 0.1)
    with pytest.raises(ValueError):
        Gate("RZZ", (1, 1), 0.1)
    with pytest.raises(ValueError):
        Gate("U2q", (0, 1))
    with pytest.raises(ValueError):
        Circuit(2, (Gate("RZ", (2,), 0.1),))


def test_rzz_convention():
    U = gate_matrix(Gate("RZZ", (0, 1), 0.4))
    np.testing.assert_allclose(U, la.expm(-0.2j * pauli_dense("ZZ")), atol=1e-14)


def test_wire_zero_is_most_significant():
    c = Circuit(2, (Gate("RX", (0,), math.pi),))
    out = apply_circuit(c, np.array([1, 0, 0, 0], dtype=complex))
    assert np.flatnonzero(np.abs(out) > 1e-12).tolist() == [2]


# -----------------------------
# Controlled gates
# -----------------------------

def test_ctrl_rz_zero_angle_lowers_to_nothing():
    assert lower_controlled(Gate("CTRL-RZ", (0, 1), 0.0)) == []


def test_ctrl_rz_pi_matches_conditioned_rotation(random_state):
    g = Gate("CTRL-RZ", (0, 1), math.pi)
    expected = la.expm(-0.5j * math.pi * pauli_dense("ZZ"))
    low = Circuit(2, tuple(lower_controlled(g)))
    psi = random_state(2)
    np.testing.assert_allclose(apply_circuit(low, psi), expected @ psi, atol=1e-12)


def test_ctrl_rzz_lowering_is_exact():
    g = Gate("CTRL-RZZ", (0, 1, 2), 0.3)
    expected = la.expm(-0.15j * pauli_dense("ZZZ"))
    np.testing.assert_allclose(dense_unitary(Circuit(3, (g,))), expected, atol=1e-12)
    np.testing.assert_allclose(dense_unitary(lower(Circuit(3, (g,)))), expected, atol=1e-12)


def test_ctrl_rzz_branches_run_opposite_directions():
    g = Gate("CTRL-RZZ", (0, 1, 2), 0.3)
    U = dense_unitary(lower(Circuit(3, (g,))))
    rzz = gate_matrix(Gate("RZZ", (0, 1), 0.3))
    np.testing.assert_allclose(U[:4, :4], rzz, atol=1e-12)
    np.testing.assert_allclose(U[4:, 4:], rzz.conj().T, atol=1e-12)


# -----------------------------
# Single-qubit merging
# -----------------------------

def test_merge_rz_runs_into_one_rotation():
    c = merge_1q(Circuit(1, (Gate("RZ", (0,), 0.2), Gate("RZ", (0,), 0.5))))
    assert len(c) == 1
    assert c.gates[0].kind == "RZ"
    assert c.gates[0].angle == pytest.approx(0.7)


def test_merge_removes_hh():
    assert len(merge_1q(Circuit(1, (Gate("H", (0,)), Gate("H", (0,)))))) == 0


def test_merge_preserves_random_circuit(rng):
    kinds = ["H", "S", "Sdg", "RZ", "RX"]
    gates = []
    for _ in range(40):
        if rng.random() < 0.4:
            a, b = rng.choice(4, size=2, replace=False)
            gates.append(Gate("RZZ", (int(a), int(b)), float(rng.uniform(-2, 2))))
        else:
            gates.append(Gate(str(rng.choice(kinds)), (int(rng.integers(4)),), float(rng.uniform(-2, 2))))
    gates.append(Gate("U2q", (1, 3), matrix=_random_unitary(rng, 4)))
    c = Circuit(4, tuple(gates))
    np.testing.assert_allclose(dense_unitary(merge_1q(c)), dense_unitary(c), atol=1e-10)


# -----------------------------
# Depth and counts
# -----------------------------

def test_empty_circuit_depth():
    assert dag_depth(Circuit(3)) == 0


def test_parallel_gates_share_a_layer():
    c = Circuit(5, (Gate("RZZ", (1, 2), 0.1), Gate("RZZ", (3, 4), 0.1)))
    assert dag_depth(c) == 1
    assert rzz_count(c) == 2
    assert two_qubit_count(c) == 2


def test_staircase_depth():
    eye = np.eye(4)
    gates = tuple(Gate("U2q", (q, q + 1), matrix=eye) for q in range(5)) + (Gate("U1q", (5,), matrix=np.eye(2)),)
    assert dag_depth(Circuit(6, gates)) == 6


def test_dump_circuit_format():
    c = Circuit(2, (Gate("RZZ", (0, 1), 0.25),))
    text = dump_circuit(c)
    assert text.splitlines()[0].startswith("# circuit v1 qubits=2")
    assert "RZZ 0,1 0.25" in text


# -----------------------------
# Trotter slices
# -----------------------------

def test_zero_time_slice_is_identity():
    c = build_trotter_slice(split_terms(HamiltonianSpec(n=4, hz=0.5)), 0.0)
    np.testing.assert_allclose(dense_unitary(c), np.eye(16), atol=1e-14)


def test_two_site_slice_is_exact():
    spec = HamiltonianSpec(n=2)
    U = dense_unitary(build_trotter_slice(split_terms(spec), 0.1))
    np.testing.assert_allclose(U, la.expm(-0.1j * build_hamiltonian(spec).to_dense()), atol=1e-12)


def test_strang_error_is_third_order():
    spec = HamiltonianSpec(n=4, hz=0.5)
    split = split_terms(spec)
    H = build_hamiltonian(spec).to_dense()
    dts = [0.1, 0.05, 0.025]
    errs = [np.linalg.norm(dense_unitary(build_trotter_slice(split, dt)) - la.expm(-1j * dt * H), 2) for dt in dts]
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope == pytest.approx(3.0, abs=0.2)


# -----------------------------
# PITE step circuit
# -----------------------------

def _post_selected(circuit, psi):
    full = np.kron(np.array([1, 0], dtype=complex), psi)
    out = apply_circuit(circuit, full)
    half = out.size // 2
    return out[:half], out[half:]


@pytest.mark.parametrize("n, hz", [(2, 0.0), (3, 0.5), (4, 0.5), (5, 0.25), (6, 0.5)])
def test_pite_step_matches_trotter_filter(n, hz):
    spec = HamiltonianSpec(n=n, hz=hz)
    split = split_terms(spec)
    e0 = la.eigvalsh(build_hamiltonian(spec).to_dense())[0]
    schedule = make_schedule(e0 + 0.01, 1.0, 0.9, m0=0.999)
    rng = np.random.default_rng(100 + n)
    psi = rng.standard_normal(2 ** n) + 1j * rng.standard_normal(2 ** n)
    psi /= np.linalg.norm(psi)
    for _ in range(20):
        dtau, r = float(rng.uniform(0.005, 0.1)), int(rng.integers(1, 5))
        expected, p_expected = trotter_filter_apply(psi, dtau, r, schedule, split)
        step = build_pite_step(split, PiteStepParams(0.999, dtau, schedule.e_shift), r)
        for circuit in (step, merge_1q(lower(step))):
            good, bad = _post_selected(circuit, psi)
            p = np.vdot(good, good).real
            assert p == pytest.approx(p_expected, abs=1e-11)
            assert abs(np.vdot(good / np.sqrt(p), expected)) ** 2 == pytest.approx(1.0, abs=1e-10)
            assert p + np.vdot(bad, bad).real == pytest.approx(1.0, abs=1e-12)


def test_pite_step_zero_time_gives_m0_on_every_eigenstate():
    spec = HamiltonianSpec(n=2, hz=0.3)
    params = PiteStepParams(0.9, 0.0, 0.0)
    c = build_pite_step(split_terms(spec), params, 1)
    _, vecs = la.eigh(build_hamiltonian(spec).to_dense())
    for v in vecs.T:
        good, _ = _post_selected(c, v.astype(complex))
        np.testing.assert_allclose(good, 0.9 * v, atol=1e-12)


def test_pite_step_native_depth_is_positive_and_grows_with_reps():
    split = split_terms(HamiltonianSpec(n=4, hz=0.5))
    params = PiteStepParams(0.999, 0.05, -1.0)
    d1 = native_depth(build_pite_step(split, params, 1))
    d2 = native_depth(build_pite_step(split, params, 2))
    assert 0 < d1 < d2
    assert DEPTH_CONVENTION == "convention-D1"


def test_pite_step_rejects_zero_reps():
    with pytest.raises(ValueError):
        build_pite_step(split_terms(HamiltonianSpec(n=2)), PiteStepParams(0.9, 0.1, 0.0), 0)
