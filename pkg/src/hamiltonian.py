"""
Staggered-field Heisenberg chain with open boundaries.

    H = (J/4) sum_i (X_i X_{i+1} + Y_i Y_{i+1} + Z_i Z_{i+1}) + sum_i (-1)^i (h_z/2) Z_i

Sites are labelled 1..N; site 1 is the most significant bit of a basis
index (bit convention "site1=MSB", shared by every module and file format).
Terms are (Pauli string, coefficient) pairs, the string holding one letter
per site.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field

from numerics import (
    LANCZOS_TOL,
    SparseHermitianOperator,
    dense_eig_hermitian,
    lanczos_extremal,
)

log = logging.getLogger(__name__)

BIT_CONVENTION = "site1=MSB"

# Energy-error target for crossing metrics, in units of J.
CHEMICAL_ACCURACY = 1.5936e-3

# Largest chain handled by state-vector routines.
MAX_SITES = 20

# Levels closer than this to E0 span the ground space used for fidelities.
GROUND_SPACE_TOL = 1e-8

PAULI = {
    "I": np.eye(2),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]]),
    "Y": np.array([[0.0, -1j], [1j, 0.0]]),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]]),
}


class HamiltonianSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n: int = Field(ge=2, description="number of spins")
    j: float = Field(default=1.0, gt=0, description="exchange coupling")
    hz: float = Field(default=0.0, ge=0, description="staggered field amplitude")
    boundary: Literal["open"] = "open"


@dataclass(frozen=True)
class TermSplit:
    n: int
    even_bonds: tuple
    odd_bonds: tuple
    field_terms: tuple

    def all_terms(self) -> tuple:
        return self.even_bonds + self.odd_bonds + self.field_terms


@dataclass(frozen=True, eq=False)
class ReferenceSpectrum:
    e0: float
    e1: float
    ground: np.ndarray
    ground_space: tuple
    degenerate: bool

    @property
    def gap(self) -> float:
        return self.e1 - self.e0


# -------------------------------
# Pauli strings
# -------------------------------

def pauli_string(n: int, ops: dict) -> str:
    """Pauli string of length n with ops[site] (0-based) and identity elsewhere."""
    return "".join(ops.get(q, "I") for q in range(n))


def support(label: str) -> tuple:
    return tuple(q for q, ch in enumerate(label) if ch != "I")


def pauli_dense(label: str) -> np.ndarray:
    out = np.ones((1, 1))
    for ch in label:
        out = np.kron(out, PAULI[ch])
    return out


def terms_to_sparse(terms, n: int) -> sp.csr_matrix:
    """
    Sum of coefficient * Pauli string as a sparse matrix.

    A Pauli string maps |x> to phase(x) |x ^ flip>; rows/cols are filled in
    one vectorized pass per term.
    """
    dim = 1 << n
    idx = np.arange(dim, dtype=np.int64)
    rows, cols, vals = [], [], []
    for label, coeff in terms:
        if coeff == 0:
            continue
        flip = 0
        sign_mask = 0
        n_y = 0
        for q, ch in enumerate(label):
            bit = 1 << (n - 1 - q)
            if ch in "XY":
                flip |= bit
            if ch in "YZ":
                sign_mask |= bit
            n_y += ch == "Y"
        parity = np.zeros(dim, dtype=np.int64)
        masked = idx & sign_mask
        while np.any(masked):
            parity ^= masked & 1
            masked >>= 1
        phase = (1j ** n_y) * (1 - 2 * parity)
        rows.append(idx ^ flip)
        cols.append(idx)
        vals.append(coeff * phase)
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=np.float64)
    data = np.concatenate(vals)
    if np.all(np.abs(data.imag) == 0):
        data = data.real
    mat = sp.coo_matrix((data, (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim))
    return mat.tocsr()


# -------------------------------
# Hamiltonian construction
# -------------------------------

def bond_terms(spec: HamiltonianSpec, bond: int) -> tuple:
    """XX, YY, ZZ terms on sites (bond, bond+1), 0-based."""
    c = spec.j / 4.0
    return tuple(
        (pauli_string(spec.n, {bond: p, bond + 1: p}), c) for p in "XYZ"
    )


def field_coefficient(spec: HamiltonianSpec, site: int) -> float:
    """(-1)^i h_z/2 for the 0-based site index (i = site + 1)."""
    return 0.0 + (-1) ** (site + 1) * spec.hz / 2.0


def hamiltonian_terms(spec: HamiltonianSpec) -> tuple:
    terms = []
    for b in range(spec.n - 1):
        terms.extend(bond_terms(spec, b))
    for q in range(spec.n):
        terms.append((pauli_string(spec.n, {q: "Z"}), field_coefficient(spec, q)))
    return tuple(terms)


def build_hamiltonian(spec: HamiltonianSpec) -> SparseHermitianOperator:
    if spec.n > MAX_SITES:
        raise ValueError(f"N={spec.n} exceeds the state-vector cap of {MAX_SITES}")
    terms = hamiltonian_terms(spec)
    mat = terms_to_sparse(terms, spec.n)
    return SparseHermitianOperator(1 << spec.n, matrix=mat, terms=terms, dtype=mat.dtype.type)


def split_terms(spec: HamiltonianSpec) -> TermSplit:
    """Even bonds (1,2),(3,4),..., odd bonds (2,3),(4,5),... and field terms."""
    even, odd = [], []
    for b in range(spec.n - 1):
        (even if b % 2 == 0 else odd).extend(bond_terms(spec, b))
    fields = tuple(
        (pauli_string(spec.n, {q: "Z"}), field_coefficient(spec, q)) for q in range(spec.n)
    )
    return TermSplit(spec.n, tuple(even), tuple(odd), fields)


# -------------------------------
# Reference spectrum
# -------------------------------

def reference_spectrum(spec: HamiltonianSpec, tol: float = LANCZOS_TOL, *, seed: int = 0) -> ReferenceSpectrum:
    """
    E0, E1 and the ground space by Lanczos.

    When the two lowest levels are closer than GROUND_SPACE_TOL more pairs
    are requested until the ground manifold is closed.
    """
    if spec.n > MAX_SITES:
        raise ValueError(f"N={spec.n} exceeds the desk-scale cap of {MAX_SITES}")
    H = build_hamiltonian(spec)
    k = 2
    while True:
        pairs = lanczos_extremal(H, k=min(k, H.dimension), tol=tol, seed=seed)
        e0 = pairs[0][0]
        if pairs[-1][0] - e0 >= GROUND_SPACE_TOL or len(pairs) == H.dimension or k >= 8:
            break
        k += 1
    ground_space = tuple(v for lam, v in pairs if lam - e0 < GROUND_SPACE_TOL)
    # E1 is the first level above the ground manifold.
    e1 = next((lam for lam, _ in pairs if lam - e0 >= GROUND_SPACE_TOL), pairs[-1][0])
    degenerate = len(ground_space) > 1
    if degenerate:
        log.warning("N=%d h_z=%g: ground level is %d-fold degenerate; fidelities use the subspace projector",
                    spec.n, spec.hz, len(ground_space))
    return ReferenceSpectrum(e0=e0, e1=e1, ground=pairs[0][1], ground_space=ground_space,
                             degenerate=degenerate)


def subspace_fidelity(ground_space, psi) -> float:
    """||P psi||^2 for the projector onto span(ground_space)."""
    return float(sum(abs(np.vdot(g, psi)) ** 2 for g in ground_space))


# -------------------------------
# Commutator prefactor
# -------------------------------

def _restricted(label: str, sites) -> np.ndarray:
    return pauli_dense("".join(label[q] for q in sites))


def commutator_prefactor_terms(terms, n: int, prune: bool = True) -> float:
    """sum_{a,b,c} || [h_c, [h_b, h_a]] || over a Pauli term list."""
    terms = [(lab, c) for lab, c in terms if c != 0]
    if not prune:
        mats = [c * pauli_dense(lab) for lab, c in terms]
        total = 0.0
        for ha, hb, hc in itertools.product(mats, repeat=3):
            inner = hb @ ha - ha @ hb
            total += np.linalg.norm(hc @ inner - inner @ hc, 2)
        return float(total)

    supports = [set(support(lab)) for lab, _ in terms]
    total = 0.0
    for a, b in itertools.product(range(len(terms)), repeat=2):
        if not supports[a] & supports[b]:
            continue
        ab = supports[a] | supports[b]
        for c in range(len(terms)):
            if not supports[c] & ab:
                continue
            sites = sorted(ab | supports[c])
            ha, hb, hc = (terms[x][1] * _restricted(terms[x][0], sites) for x in (a, b, c))
            inner = hb @ ha - ha @ hb
            total += np.linalg.norm(hc @ inner - inner @ hc, 2)
    return float(total)


def commutator_prefactor(spec: HamiltonianSpec, prune: bool = True) -> float:
    if spec.n > 10:
        raise ValueError(f"commutator prefactor brute force is limited to N <= 10, got {spec.n}")
    return commutator_prefactor_terms(hamiltonian_terms(spec), spec.n, prune=prune)


# -------------------------------
# Reference states
# -------------------------------

def neel_state(n: int) -> np.ndarray:
    """|0101...> with site 1 as the most significant bit."""
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")
    index = sum(1 << (n - 1 - q) for q in range(1, n, 2))
    psi = np.zeros(1 << n, dtype=np.complex128)
    psi[index] = 1.0
    return psi


def dense_spectrum(spec: HamiltonianSpec):
    """Full dense eigendecomposition (oracle, small N only)."""
    return dense_eig_hermitian(build_hamiltonian(spec).to_dense())
