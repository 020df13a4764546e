"""
Matrix product states and a two-site DMRG ground-state solver.

Tensors have shape (D_left, 2, D_right). "left" canonical form here means
the orthogonality center sits on site 1: every other tensor, reshaped to
(D_left, 2*D_right), has orthonormal rows (identity on the left bond).
This is the form the sequential encoder consumes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as la
from tqdm import tqdm

from artifacts import load_arrays, save_arrays
from hamiltonian import BIT_CONVENTION, MAX_SITES, HamiltonianSpec, field_coefficient
from numerics import SparseHermitianOperator, lanczos_extremal, svd

log = logging.getLogger(__name__)

DMRG_SWEEPS = 30
DMRG_E_TOL = 1e-10
DMRG_LANCZOS_DIM = 32
DMRG_SEED = 1234
SCHMIDT_THRESHOLD = 1e-10


@dataclass(frozen=True, eq=False)
class MPS:
    tensors: tuple
    canonical_form: str = "none"          # none | left | mixed
    center: Optional[int] = None
    truncation: tuple = ()                # discarded weight per cut of the last compress

    def __post_init__(self):
        if not self.tensors:
            raise ValueError("MPS needs at least one site")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise ValueError("boundary bond dimensions must be 1")
        for a, b in zip(self.tensors, self.tensors[1:]):
            if a.shape[2] != b.shape[0]:
                raise ValueError(f"bond mismatch {a.shape} -> {b.shape}")

    @property
    def n(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list:
        return [1] + [t.shape[2] for t in self.tensors]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims)


@dataclass(frozen=True, eq=False)
class MPO:
    tensors: tuple    # per site (w_left, w_right, d_out, d_in)

    @property
    def n(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list:
        return [1] + [w.shape[1] for w in self.tensors]


@dataclass(frozen=True, eq=False)
class SchmidtSpectrum:
    cut: int
    values: np.ndarray
    threshold: float = SCHMIDT_THRESHOLD

    def rank_at(self, threshold: float) -> int:
        if self.values.size == 0 or self.values[0] == 0:
            return 0
        return int(np.count_nonzero(self.values > threshold * self.values[0]))

    @property
    def rank(self) -> int:
        return self.rank_at(self.threshold)


@dataclass(frozen=True, eq=False)
class DmrgResult:
    mps: MPS
    energy: float
    sweep_energies: tuple
    converged_by: str        # "e_tol" | "sweep_cap"
    energy_rise: bool
    chi_max: int
    seed: int


def chi_max(n: int) -> int:
    """Largest Schmidt rank at the central cut."""
    return 2 ** (n // 2)


# -------------------------------
# Constructors and conversions
# -------------------------------

def product_mps(bits) -> MPS:
    tensors = []
    for b in bits:
        t = np.zeros((1, 2, 1))
        t[0, int(b), 0] = 1.0
        tensors.append(t)
    return MPS(tuple(tensors), canonical_form="left", center=0)


def random_mps(n: int, chi: int, seed: int = 0, complex_: bool = False) -> MPS:
    """Random normalized MPS in left form with bonds min(chi, 2^n, 2^(N-n))."""
    rng = np.random.default_rng(seed)
    dims = [min(chi, 2 ** k, 2 ** (n - k)) for k in range(n + 1)]
    tensors = []
    for k in range(n):
        shape = (dims[k], 2, dims[k + 1])
        t = rng.standard_normal(shape)
        if complex_:
            t = t + 1j * rng.standard_normal(shape)
        tensors.append(t)
    return left_canonicalize(MPS(tuple(tensors)))


def statevector_to_mps(psi, max_bond: Optional[int] = None) -> MPS:
    """Sequential SVD from the right; exact unless max_bond truncates."""
    psi = np.asarray(psi)
    n = int(round(np.log2(psi.size)))
    if 2 ** n != psi.size:
        raise ValueError(f"state length {psi.size} is not a power of two")
    tensors = [None] * n
    rest = psi.reshape(-1, 2)
    right = 1
    for site in range(n - 1, 0, -1):
        rest = rest.reshape(-1, 2 * right)
        U, S, Vh = svd(rest)
        keep = S.size if max_bond is None else min(max_bond, S.size)
        tensors[site] = Vh[:keep].reshape(keep, 2, right)
        rest = U[:, :keep] * S[:keep]
        right = keep
    tensors[0] = rest.reshape(1, 2, right)
    mps = MPS(tuple(tensors), canonical_form="left", center=0)
    return _normalize_center(mps)


def mps_to_statevector(mps: MPS) -> np.ndarray:
    if mps.n > MAX_SITES:
        raise ValueError(f"N={mps.n} is too large for a state vector (cap {MAX_SITES})")
    vec = np.ones((1, 1))
    for t in mps.tensors:
        vec = np.tensordot(vec, t, axes=(1, 0)).reshape(-1, t.shape[2])
    vec = vec.reshape(-1).astype(np.complex128)
    nrm = np.linalg.norm(vec)
    if nrm == 0:
        raise ValueError("MPS represents the zero vector")
    return vec / nrm


def mps_overlap(a: MPS, b: MPS) -> complex:
    """<a|b> by transfer-matrix contraction."""
    env = np.ones((1, 1))
    for ta, tb in zip(a.tensors, b.tensors):
        env = np.einsum("xy,xsa,ysb->ab", env, ta.conj(), tb)
    return complex(env[0, 0])


def w0_ref(psi_dmrg, psi_init) -> float:
    """Reference ground-state weight |<psi_DMRG|psi_init>|^2."""
    return float(abs(np.vdot(psi_dmrg, psi_init)) ** 2)


# -------------------------------
# Canonical forms and truncation
# -------------------------------

def _normalize_center(mps: MPS) -> MPS:
    tensors = list(mps.tensors)
    c = mps.center or 0
    nrm = np.linalg.norm(tensors[c])
    if nrm == 0:
        raise ValueError("cannot normalize a zero-norm MPS")
    tensors[c] = tensors[c] / nrm
    return replace(mps, tensors=tuple(tensors))


def _positive_qr(M):
    """Economic QR with a nonnegative real diagonal of R."""
    Q, R = la.qr(M, mode="economic")
    d = np.diag(R)
    phase = np.where(np.abs(d) > 0, d / np.where(np.abs(d) > 0, np.abs(d), 1), 1)
    return Q * phase, R * phase.conj()[:, None]


def left_canonicalize(mps: MPS) -> MPS:
    """Right-to-left LQ sweep leaving the center (and the norm) on site 1."""
    tensors = list(mps.tensors)
    for site in range(len(tensors) - 1, 0, -1):
        t = tensors[site]
        dl, _, dr = t.shape
        Q, R = _positive_qr(t.reshape(dl, 2 * dr).T)
        k = Q.shape[1]
        tensors[site] = Q.T.reshape(k, 2, dr)
        tensors[site - 1] = np.tensordot(tensors[site - 1], R.T, axes=(2, 0))
    nrm = np.linalg.norm(tensors[0])
    if nrm < 1e-300:
        raise ValueError("cannot canonicalize a zero-norm MPS")
    tensors[0] = tensors[0] / nrm
    return MPS(tuple(tensors), canonical_form="left", center=0)


def _right_center(mps: MPS) -> list:
    """Left-to-right QR sweep; orthogonality center ends on the last site."""
    tensors = list(mps.tensors)
    for site in range(len(tensors) - 1):
        t = tensors[site]
        dl, _, dr = t.shape
        Q, R = _positive_qr(t.reshape(dl * 2, dr))
        k = Q.shape[1]
        tensors[site] = Q.reshape(dl, 2, k)
        tensors[site + 1] = np.tensordot(R, tensors[site + 1], axes=(1, 0))
    return tensors


def compress(mps: MPS, chi: int) -> MPS:
    """
    Sequential SVD truncation to bond dimension chi, result in left form.

    The discarded weight (sum of dropped squared singular values of the
    normalized state) is reported per cut in `truncation`, cut n between
    sites n and n+1 listed from n = 1.
    """
    if chi < 1:
        raise ValueError(f"chi must be >= 1, got {chi}")
    tensors = _right_center(mps)
    nrm = np.linalg.norm(tensors[-1])
    if nrm == 0:
        raise ValueError("cannot compress a zero-norm MPS")
    tensors[-1] = tensors[-1] / nrm
    discarded = [0.0] * (len(tensors) - 1)
    for site in range(len(tensors) - 1, 0, -1):
        t = tensors[site]
        dl, _, dr = t.shape
        U, S, Vh = svd(t.reshape(dl, 2 * dr))
        keep = min(chi, S.size)
        discarded[site - 1] = float(np.sum(S[keep:] ** 2))
        S_kept = S[:keep] / np.linalg.norm(S[:keep])
        tensors[site] = Vh[:keep].reshape(keep, 2, dr)
        tensors[site - 1] = np.tensordot(tensors[site - 1], U[:, :keep] * S_kept, axes=(2, 0))
    out = MPS(tuple(tensors), canonical_form="left", center=0, truncation=tuple(discarded))
    return _normalize_center(out)


def isometry_residual(mps: MPS) -> float:
    """max over sites 2..N of || M M^dag - I || for the (D_left, 2 D_right) reshape."""
    worst = 0.0
    for t in mps.tensors[1:]:
        dl, _, dr = t.shape
        M = t.reshape(dl, 2 * dr)
        worst = max(worst, float(np.max(np.abs(M @ M.conj().T - np.eye(dl)))))
    return worst


def schmidt_spectrum(state, cut: int, threshold: float = SCHMIDT_THRESHOLD) -> SchmidtSpectrum:
    state = np.asarray(state)
    n = int(round(np.log2(state.size)))
    if not 1 <= cut <= n - 1:
        raise ValueError(f"cut must lie in [1, {n - 1}], got {cut}")
    values = la.svdvals(state.reshape(2 ** cut, 2 ** (n - cut)))
    return SchmidtSpectrum(cut=cut, values=values, threshold=threshold)


# -------------------------------
# MPO
# -------------------------------

_SP = np.array([[0.0, 1.0], [0.0, 0.0]])   # |0><1|
_SM = _SP.T
_Z = np.diag([1.0, -1.0])
_I = np.eye(2)


def build_mpo(spec: HamiltonianSpec) -> MPO:
    """Bond-dimension-5 MPO, lower-triangular convention (left boundary = last row)."""
    tensors = []
    for site in range(spec.n):
        W = np.zeros((5, 5, 2, 2))
        W[0, 0] = _I
        W[1, 0] = _SP
        W[2, 0] = _SM
        W[3, 0] = _Z
        W[4, 0] = field_coefficient(spec, site) * _Z
        W[4, 1] = (spec.j / 2) * _SM
        W[4, 2] = (spec.j / 2) * _SP
        W[4, 3] = (spec.j / 4) * _Z
        W[4, 4] = _I
        if site == 0:
            W = W[4:5]
        if site == spec.n - 1:
            W = W[:, 0:1]
        tensors.append(W)
    return MPO(tuple(tensors))


def mpo_to_dense(mpo: MPO) -> np.ndarray:
    M = mpo.tensors[0][0]                       # (w, out, in)
    for W in mpo.tensors[1:]:
        M = np.einsum("woi,wvpq->vopiq", M, W)
        v, o, p, i, q = M.shape
        M = M.reshape(v, o * p, i * q)
    return M[0]


# -------------------------------
# Two-site DMRG
# -------------------------------

def _grow_left(L, A, W):
    return np.einsum("bwa,bpc,wvps,asd->cvd", L, A.conj(), W, A, optimize=True)


def _grow_right(R, B, W):
    return np.einsum("bpc,wvps,asd,cvd->bwa", B.conj(), W, B, R, optimize=True)


def _local_operator(L, W1, W2, R, shape, dtype):
    def matvec(x):
        theta = x.reshape(shape)
        out = np.einsum("bwa,wups,uvqt,cvd,astd->bpqc", L, W1, W2, R, theta, optimize=True)
        return out.reshape(-1)
    return SparseHermitianOperator.from_matvec(int(np.prod(shape)), matvec, dtype=dtype)


def _split(theta, chi, absorb):
    dl, _, _, dr = theta.shape
    U, S, Vh = svd(theta.reshape(dl * 2, 2 * dr))
    keep = int(min(chi, max(1, np.count_nonzero(S > 1e-14 * S[0]))))
    S = S[:keep] / np.linalg.norm(S[:keep])
    U, Vh = U[:, :keep], Vh[:keep]
    if absorb == "right":
        return U.reshape(dl, 2, keep), (S[:, None] * Vh).reshape(keep, 2, dr)
    return (U * S).reshape(dl, 2, keep), Vh.reshape(keep, 2, dr)


def dmrg_ground(mpo: MPO, chi_max: int, sweeps: int = DMRG_SWEEPS, e_tol: float = DMRG_E_TOL, *,
                seed: int = DMRG_SEED, lanczos_dim: int = DMRG_LANCZOS_DIM,
                progress: bool = False) -> DmrgResult:
    """
    Two-site DMRG, sweeping left-right-left from a random chi=2 MPS.

    The returned MPS is normalized and in left form. One sweep energy is
    recorded per full left-right-left pass.
    """
    if chi_max < 2:
        raise ValueError(f"chi_max must be >= 2, got {chi_max}")
    if sweeps < 1:
        raise ValueError(f"sweeps must be >= 1, got {sweeps}")
    n = mpo.n
    tensors = list(random_mps(n, 2, seed).tensors)
    W = mpo.tensors
    dtype = np.result_type(*[t.dtype for t in tensors], *[w.dtype for w in W]).type

    L = [None] * (n + 1)
    R = [None] * (n + 1)
    L[0] = np.ones((1, 1, 1))
    R[n] = np.ones((1, 1, 1))
    for site in range(n - 1, 0, -1):
        R[site] = _grow_right(R[site + 1], tensors[site], W[site])

    def solve(i):
        theta = np.einsum("asb,btc->astc", tensors[i], tensors[i + 1])
        op = _local_operator(L[i], W[i], W[i + 1], R[i + 2], theta.shape, dtype)
        (energy, vec), = lanczos_extremal(op, k=1, tol=1e-10, v0=theta.reshape(-1),
                                          krylov_dim=lanczos_dim, seed=seed)
        return energy, vec.reshape(theta.shape)

    energies = []
    converged_by = "sweep_cap"
    energy_rise = False
    bar = tqdm(range(sweeps), desc=f"dmrg N={n}", disable=not progress, leave=False)
    for sweep in bar:
        energy = None
        for i in range(n - 1):
            energy, theta = solve(i)
            tensors[i], tensors[i + 1] = _split(theta, chi_max, absorb="right")
            L[i + 1] = _grow_left(L[i], tensors[i], W[i])
        for i in range(n - 2, -1, -1):
            energy, theta = solve(i)
            tensors[i], tensors[i + 1] = _split(theta, chi_max, absorb="left")
            R[i + 1] = _grow_right(R[i + 2], tensors[i + 1], W[i + 1])
        if energies and energy > energies[-1] + 1e-10 * max(1.0, abs(energy)):
            energy_rise = True
            log.warning("DMRG N=%d sweep %d: energy rose from %.12f to %.12f",
                        n, sweep + 1, energies[-1], energy)
        energies.append(energy)
        log.debug("DMRG N=%d sweep %d: E=%.12f", n, sweep + 1, energy)
        if len(energies) > 1 and abs(energies[-1] - energies[-2]) < e_tol:
            converged_by = "e_tol"
            break

    mps = _normalize_center(MPS(tuple(tensors), canonical_form="left", center=0))
    return DmrgResult(mps=mps, energy=float(energies[-1]), sweep_energies=tuple(energies),
                      converged_by=converged_by, energy_rise=energy_rise,
                      chi_max=chi_max, seed=seed)


# -------------------------------
# Files
# -------------------------------

def save_mps(path: Path, mps: MPS, **header) -> Path:
    meta = {
        "kind": "mps",
        "n": mps.n,
        "bond_dims": mps.bond_dims,
        "canonical_form": mps.canonical_form,
        "bit_convention": BIT_CONVENTION,
        **header,
    }
    arrays = {f"site{k:03d}": t for k, t in enumerate(mps.tensors)}
    return save_arrays(path, meta, arrays)


def load_mps(path: Path) -> tuple[MPS, dict]:
    header, arrays = load_arrays(path)
    if header.get("kind") != "mps":
        raise ValueError(f"{path} is not an MPS file")
    if header.get("bit_convention") != BIT_CONVENTION:
        raise ValueError(f"{path}: unsupported bit convention {header.get('bit_convention')}")
    tensors = tuple(arrays[f"site{k:03d}"] for k in range(header["n"]))
    center = 0 if header["canonical_form"] == "left" else None
    return MPS(tensors, canonical_form=header["canonical_form"], center=center), header
