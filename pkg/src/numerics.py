"""
Dense/sparse linear-algebra kernels shared by every stage of the pipeline.

    svd                  thin SVD with a gesdd -> gesvd fallback
    dense_eig_hermitian  small dense Hermitian eigensolve (oracle backend)
    lanczos_extremal     lowest k eigenpairs, full reorthogonalization + locking
    krylov_expmv         exp(-i t A) v in a Lanczos subspace with substepping

All routines are pure; scratch buffers live inside each call.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

log = logging.getLogger(__name__)

# Defaults recorded in every result file (see scan_config.decided_defaults).
LANCZOS_TOL = 1e-10
KRYLOV_TOL = 1e-12
KRYLOV_DIM = 64
LANCZOS_MAX_RESTARTS = 300
KRYLOV_MAX_SUBSTEPS = 4096
# per-substep error floor; the leak estimate never drops below rounding
KRYLOV_ROUNDOFF = 10 * np.finfo(float).eps


class ConvergenceError(RuntimeError):
    """An iterative kernel did not reach its tolerance."""

    def __init__(self, message: str, *, dimension=None, residual=None):
        super().__init__(message)
        self.dimension = dimension
        self.residual = residual


# -------------------------------
# Operator container
# -------------------------------

@dataclass(frozen=True, eq=False)
class SparseHermitianOperator:
    """
    Hermitian operator given by a sparse matrix or a bare matvec.

    `terms` keeps the (Pauli string, coefficient) list the operator was
    built from; it is empty for operators that never had one (effective
    DMRG Hamiltonians, test matrices).
    """

    dimension: int
    matrix: Optional[sp.csr_matrix] = None
    terms: tuple = ()
    apply: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    dtype: type = np.float64

    def __post_init__(self):
        if self.matrix is None and self.apply is None:
            raise ValueError("operator needs a matrix or a matvec")
        if self.dimension < 1:
            raise ValueError(f"dimension must be positive, got {self.dimension}")

    @classmethod
    def from_dense(cls, M, terms=()) -> "SparseHermitianOperator":
        M = np.asarray(M)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {M.shape}")
        dtype = np.float64 if np.isrealobj(M) else np.complex128
        return cls(M.shape[0], matrix=sp.csr_matrix(M.astype(dtype)), terms=tuple(terms), dtype=dtype)

    @classmethod
    def from_matvec(cls, dimension: int, fn, dtype=np.float64) -> "SparseHermitianOperator":
        return cls(dimension, apply=fn, dtype=dtype)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix @ v
        return self.apply(v)

    def expectation(self, v: np.ndarray) -> float:
        return float(np.real(np.vdot(v, self.matvec(v))))

    def norm_bound(self) -> float:
        """Cheap upper bound on the spectral norm."""
        if self.terms:
            return float(sum(abs(c) for _, c in self.terms))
        if self.matrix is not None:
            return float(abs(self.matrix).sum(axis=1).max())
        return 1.0

    def to_dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix.toarray()
        eye = np.eye(self.dimension, dtype=self.dtype)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.dimension)])


# -------------------------------
# Dense kernels
# -------------------------------

def svd(M):
    """Thin SVD (U, S, Vh) with S descending."""
    M = np.asarray(M)
    if not np.all(np.isfinite(M)):
        raise ValueError(f"svd input of shape {M.shape} has non-finite entries")
    try:
        return la.svd(M, full_matrices=False, lapack_driver="gesdd")
    except la.LinAlgError:
        log.debug("gesdd failed on %s, retrying with gesvd", M.shape)
    try:
        return la.svd(M, full_matrices=False, lapack_driver="gesvd")
    except la.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge for a {M.shape[0]}x{M.shape[1]} matrix",
                               dimension=M.shape) from exc


def dense_eig_hermitian(M):
    """Eigenvalues ascending and column eigenvectors of a Hermitian matrix."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.conj().T), initial=0.0) > 1e-12 * scale:
        raise ValueError("matrix is not Hermitian to 1e-12")
    return la.eigh(M)


# -------------------------------
# Lanczos
# -------------------------------

def _random_start(dim, dtype, rng):
    v = rng.standard_normal(dim)
    if np.issubdtype(dtype, np.complexfloating):
        v = v + 1j * rng.standard_normal(dim)
    return v


def _project_out(v, basis):
    # Two passes of classical Gram-Schmidt keep the basis orthogonal to 1e-15.
    for _ in range(2):
        for q in basis:
            v = v - q * np.vdot(q, v)
    return v


def _lanczos_pass(A, v, locked, m, breakdown):
    """One Lanczos run of at most m steps; returns the lowest Ritz pair."""
    v = _project_out(v, locked)
    nrm = np.linalg.norm(v)
    if nrm < breakdown:
        return None
    Q = [v / nrm]
    alpha, beta = [], []
    for j in range(m):
        w = A.matvec(Q[j])
        a = float(np.real(np.vdot(Q[j], w)))
        alpha.append(a)
        w = _project_out(w, locked + Q)
        b = np.linalg.norm(w)
        if j == m - 1 or b < breakdown:
            break
        beta.append(b)
        Q.append(w / b)
    if len(alpha) == 1:
        theta, y = np.array([alpha[0]]), np.ones((1, 1))
    else:
        theta, y = la.eigh_tridiagonal(np.array(alpha), np.array(beta))
    vec = np.tensordot(y[:, 0], np.array(Q), axes=(0, 0))
    return float(theta[0]), vec / np.linalg.norm(vec)


def lanczos_extremal(A: SparseHermitianOperator, k: int = 1, tol: float = LANCZOS_TOL, *,
                     v0=None, krylov_dim: int = KRYLOV_DIM,
                     max_restarts: int = LANCZOS_MAX_RESTARTS, seed: int = 0):
    """
    Lowest `k` eigenpairs of a Hermitian operator.

    Each pair is found by restarted Lanczos in the orthogonal complement of
    the pairs already locked, so degenerate levels come back with their
    multiplicity.

    Returns
    -------
    list of (eigenvalue, eigenvector), eigenvalues ascending.
    """
    dim = A.dimension
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if dim < k:
        raise ValueError(f"operator dimension {dim} is smaller than k={k}")

    rng = np.random.default_rng(seed)
    scale = A.norm_bound() or 1.0
    breakdown = 1e-13 * scale
    m = min(krylov_dim, dim)
    dtype = np.result_type(A.dtype, np.asarray(v0).dtype) if v0 is not None else A.dtype

    locked_vals, locked_vecs = [], []
    for target in range(k):
        v = np.asarray(v0, dtype=dtype) if (target == 0 and v0 is not None) else _random_start(dim, dtype, rng)
        residual = np.inf
        for _ in range(max_restarts):
            ritz = _lanczos_pass(A, v, locked_vecs, m, breakdown)
            if ritz is None:
                v = _random_start(dim, dtype, rng)
                continue
            theta, y = ritz
            residual = np.linalg.norm(A.matvec(y) - theta * y)
            if residual <= tol * scale:
                break
            v = y
        else:
            raise ConvergenceError(
                f"Lanczos pair {target} not converged after {max_restarts} restarts "
                f"(dim={dim}, residual={residual:.3e})",
                dimension=dim, residual=residual)
        locked_vals.append(theta)
        locked_vecs.append(y)

    order = np.argsort(locked_vals, kind="stable")
    return [(locked_vals[i], locked_vecs[i]) for i in order]


# -------------------------------
# Krylov propagator
# -------------------------------

def _krylov_step(A, t, v, m, breakdown):
    """exp(-i t A) v from one Lanczos basis; returns (w, error estimate)."""
    nrm = np.linalg.norm(v)
    Q = [v / nrm]
    alpha, beta = [], []
    b = 0.0
    for j in range(m):
        w = A.matvec(Q[j])
        alpha.append(float(np.real(np.vdot(Q[j], w))))
        w = _project_out(w, Q)
        b = np.linalg.norm(w)
        if b < breakdown:
            b = 0.0
            break
        if j < m - 1:
            beta.append(b)
            Q.append(w / b)
    if len(alpha) == 1:
        evals, evecs = np.array(alpha), np.ones((1, 1))
    else:
        evals, evecs = la.eigh_tridiagonal(np.array(alpha), np.array(beta))
    c = evecs @ (np.exp(-1j * t * evals) * evecs[0, :])
    w = nrm * np.tensordot(c, np.array(Q, dtype=np.complex128), axes=(0, 0))
    # Standard a posteriori estimate: weight leaking out of the subspace.
    err = b * abs(c[-1]) * abs(t)
    return w, err


def krylov_expmv(A: SparseHermitianOperator, t: float, v, tol: float = KRYLOV_TOL, *,
                 krylov_dim: int = KRYLOV_DIM, max_substeps: int = KRYLOV_MAX_SUBSTEPS):
    """Return exp(-i t A) v; time is split into equal substeps until `tol` holds."""
    v = np.asarray(v, dtype=np.complex128)
    if t == 0:
        return v.copy()
    m = min(krylov_dim, A.dimension)
    breakdown = 1e-14 * (A.norm_bound() or 1.0)

    n_sub = 1
    while n_sub <= max_substeps:
        dt = t / n_sub
        w, ok = v, True
        for _ in range(n_sub):
            w, err = _krylov_step(A, dt, w, m, breakdown)
            if err > max(tol / n_sub, KRYLOV_ROUNDOFF):
                ok = False
                break
        if ok:
            return w
        n_sub *= 2
    raise ConvergenceError(
        f"Krylov propagation to tol={tol:g} needs more than {max_substeps} substeps "
        f"(dim={A.dimension}, t={t:g})", dimension=A.dimension)
