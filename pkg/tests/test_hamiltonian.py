import numpy as np
import pytest
from pydantic import ValidationError

from hamiltonian import (
    CHEMICAL_ACCURACY,
    HamiltonianSpec,
    build_hamiltonian,
    commutator_prefactor,
    commutator_prefactor_terms,
    dense_spectrum,
    neel_state,
    pauli_dense,
    pauli_string,
    reference_spectrum,
    split_terms,
    subspace_fidelity,
    terms_to_sparse,
)


# -----------------------------
# HamiltonianSpec validation
# -----------------------------

def test_spec_rejects_short_chain_and_negative_field():
    with pytest.raises(ValidationError):
        HamiltonianSpec(n=1)
    with pytest.raises(ValidationError):
        HamiltonianSpec(n=4, hz=-0.1)
    with pytest.raises(ValidationError):
        HamiltonianSpec(n=4, bogus=1)


def test_chemical_accuracy_constant():
    assert CHEMICAL_ACCURACY == pytest.approx(1.5936e-3)


# -----------------------------
# Operator construction
# -----------------------------

@pytest.mark.parametrize("label", ["XY", "ZI", "YZX", "IYY"])
def test_sparse_pauli_string_matches_kron(label):
    n = len(label)
    dense = terms_to_sparse([(label, 0.7)], n).toarray()
    np.testing.assert_allclose(dense, 0.7 * pauli_dense(label), atol=1e-14)


def test_two_site_singlet_triplet_spectrum():
    w, _ = dense_spectrum(HamiltonianSpec(n=2))
    np.testing.assert_allclose(w, [-0.75, 0.25, 0.25, 0.25], atol=1e-12)


def test_two_site_with_field():
    hz = 0.5
    w, _ = dense_spectrum(HamiltonianSpec(n=2, hz=hz))
    assert w[0] == pytest.approx(-0.25 - np.sqrt(0.25 + hz ** 2), abs=1e-12)


def test_hamiltonian_is_hermitian_and_real():
    H = build_hamiltonian(HamiltonianSpec(n=5, hz=0.3)).to_dense()
    np.testing.assert_allclose(H, H.conj().T, atol=1e-14)
    assert np.isrealobj(H)


def test_split_terms_alternate_bonds_and_fields():
    s4 = split_terms(HamiltonianSpec(n=4))
    assert {lab for lab, _ in s4.even_bonds} == {"XXII", "YYII", "ZZII", "IIXX", "IIYY", "IIZZ"}
    assert {lab for lab, _ in s4.odd_bonds} == {"IXXI", "IYYI", "IZZI"}

    assert split_terms(HamiltonianSpec(n=2)).odd_bonds == ()

    fields = split_terms(HamiltonianSpec(n=6, hz=0.5)).field_terms
    assert len(fields) == 6
    assert [c for _, c in fields] == [-0.25, 0.25, -0.25, 0.25, -0.25, 0.25]


def test_split_terms_sum_to_hamiltonian():
    spec = HamiltonianSpec(n=5, hz=0.4)
    split = split_terms(spec)
    total = terms_to_sparse(split.all_terms(), 5).toarray()
    np.testing.assert_allclose(total, build_hamiltonian(spec).to_dense(), atol=1e-14)


# -----------------------------
# Reference spectrum
# -----------------------------

def test_reference_spectrum_two_sites_gap():
    ref = reference_spectrum(HamiltonianSpec(n=2))
    assert ref.gap == pytest.approx(1.0, abs=1e-9)
    assert not ref.degenerate


def test_reference_matches_dense_oracle_n4():
    spec = HamiltonianSpec(n=4)
    w, _ = dense_spectrum(spec)
    assert reference_spectrum(spec).e0 == pytest.approx(w[0], abs=1e-12)


def test_reference_matches_dense_oracle_n8_with_field():
    spec = HamiltonianSpec(n=8, hz=0.5)
    w, _ = dense_spectrum(spec)
    ref = reference_spectrum(spec)
    assert ref.e0 == pytest.approx(w[0], abs=1e-9)
    assert ref.e1 == pytest.approx(w[1], abs=1e-9)
    assert subspace_fidelity(ref.ground_space, ref.ground) == pytest.approx(1.0, abs=1e-12)


def test_field_opens_the_gap():
    gapless = reference_spectrum(HamiltonianSpec(n=8, hz=0.0))
    gapped = reference_spectrum(HamiltonianSpec(n=8, hz=0.5))
    assert gapped.gap > gapless.gap


@pytest.mark.parametrize("n, hz", [(4, 0.0), (5, 0.3), (6, 0.5), (8, 1.0)])
def test_hamiltonian_conserves_total_sz(n, hz):
    H = build_hamiltonian(HamiltonianSpec(n=n, hz=hz)).to_dense()
    sz = sum(pauli_dense(pauli_string(n, {q: "Z"})) for q in range(n)) / 2
    assert np.max(np.abs(H @ sz - sz @ H)) < 1e-12


def test_ground_energy_decreases_with_field():
    e0 = [dense_spectrum(HamiltonianSpec(n=6, hz=hz))[0][0] for hz in (0.0, 0.1, 0.25, 0.5, 1.0)]
    assert all(b < a for a, b in zip(e0, e0[1:]))


def test_degenerate_ground_space_is_closed():
    # Odd chain without field: the ground level is a spin-1/2 doublet.
    spec = HamiltonianSpec(n=3)
    ref = reference_spectrum(spec)
    w, _ = dense_spectrum(spec)
    assert ref.degenerate
    assert len(ref.ground_space) == 2
    assert ref.e1 == pytest.approx(w[2], abs=1e-9)


# -----------------------------
# Commutator prefactor
# -----------------------------

def test_commutator_prefactor_single_term_vanishes():
    assert commutator_prefactor_terms([("XX", 1.0)], 2) == 0.0


def test_commutator_prefactor_pruned_equals_brute_force():
    spec = HamiltonianSpec(n=2)
    assert commutator_prefactor(spec, prune=True) == pytest.approx(commutator_prefactor(spec, prune=False))
    spec = HamiltonianSpec(n=4, hz=0.5)
    assert commutator_prefactor(spec, prune=True) == pytest.approx(commutator_prefactor(spec, prune=False))


def test_commutator_prefactor_is_extensive():
    ns = np.array([4, 5, 6, 7, 8])
    vals = np.array([commutator_prefactor(HamiltonianSpec(n=int(n))) for n in ns])
    slope, intercept = np.polyfit(ns, vals, 1)
    assert slope > 0
    np.testing.assert_allclose(vals, slope * ns + intercept, rtol=0.15)


def test_commutator_prefactor_caps_chain_length():
    with pytest.raises(ValueError):
        commutator_prefactor(HamiltonianSpec(n=11))


# -----------------------------
# Neel state
# -----------------------------

@pytest.mark.parametrize("n, index", [(2, 1), (4, 5), (5, 10)])
def test_neel_state_index(n, index):
    psi = neel_state(n)
    assert np.linalg.norm(psi) == pytest.approx(1.0)
    assert np.flatnonzero(psi).tolist() == [index]
