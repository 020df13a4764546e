"""
Sequential (staircase) MPS encoder.

Each layer is built from a bond-2 MPS in left form. Site tensor A^[n]
becomes the encoding unitary M_n on qubits (n, n+1) whose columns at input
(j, 0) hold A^[n]_{j, :, :} (qubit n carries the incoming bond, qubit n+1
starts in |0>); the last site gives a single-qubit M_N. Encoding applies
M_1 first and M_N last. A layer stores its gates in disentangling order
[M_N, M_{N-1}, ..., M_1] and the disentangler applies their adjoints.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from tqdm import tqdm

from artifacts import load_arrays, save_arrays
from circuit import Circuit, Gate, apply_matrix
from fits import FitError, LogisticFit, fit_logistic
from hamiltonian import BIT_CONVENTION
from mps_dmrg import (
    MPS,
    SCHMIDT_THRESHOLD,
    chi_max,
    compress,
    left_canonicalize,
    schmidt_spectrum,
    statevector_to_mps,
)

log = logging.getLogger(__name__)

ISOMETRY_TOL = 1e-8
SENSITIVITY_THRESHOLDS = (1e-8, 1e-10, 1e-12)
MIN_AUTO_LAYERS = 6


@dataclass(frozen=True, eq=False)
class TwoQubitGate:
    """Encoding unitary on `sites` (two neighbours, or the last site alone)."""

    matrix: np.ndarray
    sites: tuple


@dataclass(frozen=True, eq=False)
class MPDLayer:
    index: int
    gates: tuple      # disentangling order


@dataclass(frozen=True, eq=False)
class LayerRecord:
    l: int
    chi_cut: int
    singular_values: np.ndarray
    fidelity: float
    if_per_site: float
    discarded_weight: float


@dataclass(frozen=True, eq=False)
class EncodingDiagnostics:
    n: int
    threshold: float
    records: tuple

    @property
    def chi_max(self) -> int:
        return chi_max(self.n)

    def layers(self) -> np.ndarray:
        return np.array([r.l for r in self.records])

    def ratios(self, threshold: Optional[float] = None) -> np.ndarray:
        if threshold is None:
            chis = [r.chi_cut for r in self.records]
        else:
            chis = [_rank(r.singular_values, threshold) for r in self.records]
        return np.array(chis, dtype=float) / self.chi_max

    def rows(self):
        for r in self.records:
            yield (r.l, r.chi_cut, r.chi_cut / self.chi_max, r.fidelity, r.if_per_site, r.discarded_weight)


DIAGNOSTIC_COLUMNS = ("l", "chi_cut", "chi_ratio", "F", "IF_per_site", "discarded_weight")


def _rank(values, threshold) -> int:
    if values.size == 0 or values[0] == 0:
        return 0
    return int(np.count_nonzero(values > threshold * values[0]))


# -------------------------------
# Kernel completion
# -------------------------------

def _complete_columns(M, filled):
    """Fill the unfilled columns of M with an orthonormal completion, pivoting on basis vectors."""
    dim = M.shape[0]
    basis = [M[:, c] for c in filled]
    extra = []
    free = [c for c in range(dim) if c not in filled]
    for _ in free:
        best, best_norm = None, -1.0
        for e in np.eye(dim, dtype=np.complex128):
            v = e.copy()
            for _ in range(2):
                for q in basis + extra:
                    v = v - q * np.vdot(q, v)
            nv = np.linalg.norm(v)
            if nv > best_norm + 1e-12:
                best, best_norm = v, nv
        best = best / best_norm
        lead = best[np.argmax(np.abs(best) > 1e-12)]
        best = best * (abs(lead) / lead)
        extra.append(best)
    for c, v in zip(free, extra):
        M[:, c] = v
    return M


def complete_isometry(A, last: bool = False) -> TwoQubitGate:
    """
    Complete a left-form site tensor (D_left, 2, D_right), bonds <= 2, to a unitary.

    Column (j, 0) of the returned 4x4 matrix equals A[j] flattened over
    (sigma, right bond), zero-padded to bond 2. For the last site the
    result is the 2x2 matrix with columns A[j, :, 0].
    """
    A = np.asarray(A)
    dl, d, dr = A.shape
    if d != 2 or dl > 2 or dr > 2:
        raise ValueError(f"site tensor must have shape (<=2, 2, <=2), got {A.shape}")
    rows = A.reshape(dl, 2 * dr)
    gram = rows @ rows.conj().T
    if np.max(np.abs(gram - np.eye(dl))) > ISOMETRY_TOL:
        raise ValueError("site tensor is not a left isometry to 1e-8")

    if last:
        if dr != 1:
            raise ValueError("last site must have right bond 1")
        M = np.zeros((2, 2), dtype=np.complex128)
        for j in range(dl):
            M[:, j] = A[j, :, 0]
        M = _complete_columns(M, list(range(dl)))
        return TwoQubitGate(M, ())

    padded = np.zeros((dl, 2, 2), dtype=np.complex128)
    padded[:, :, :dr] = A
    M = np.zeros((4, 4), dtype=np.complex128)
    filled = []
    for j in range(dl):
        M[:, 2 * j] = padded[j].reshape(4)
        filled.append(2 * j)
    M = _complete_columns(M, filled)
    return TwoQubitGate(M, ())


# -------------------------------
# Layers
# -------------------------------

def build_mpd_layer(mps2: MPS, index: int = 1) -> MPDLayer:
    """Staircase layer that maps the state of a bond-2 MPS to |0...0>."""
    if mps2.max_bond > 2:
        raise ValueError(f"layer construction needs bond dims <= 2, got {mps2.bond_dims}")
    if mps2.canonical_form != "left":
        mps2 = left_canonicalize(mps2)
    n = mps2.n
    encoding = []
    for site in range(n - 1):
        g = complete_isometry(mps2.tensors[site])
        encoding.append(TwoQubitGate(g.matrix, (site, site + 1)))
    g = complete_isometry(mps2.tensors[-1], last=True)
    encoding.append(TwoQubitGate(g.matrix, (n - 1,)))
    return MPDLayer(index=index, gates=tuple(reversed(encoding)))


def disentangle_layer(layer: MPDLayer, psi, n: int):
    for g in layer.gates:
        psi = apply_matrix(psi, g.matrix.conj().T, g.sites, n)
    return psi


def encode_layer(layer: MPDLayer, psi, n: int):
    for g in reversed(layer.gates):
        psi = apply_matrix(psi, g.matrix, g.sites, n)
    return psi


def zero_state(n: int) -> np.ndarray:
    psi = np.zeros(2 ** n, dtype=np.complex128)
    psi[0] = 1.0
    return psi


def encode_state(layers, L: int, n: Optional[int] = None) -> np.ndarray:
    """U_1^dag ... U_L^dag |0...0>."""
    if not 0 <= L <= len(layers):
        raise ValueError(f"L={L} out of range for {len(layers)} layers")
    if n is None:
        if not layers:
            raise ValueError("n is required when no layers are given")
        n = 1 + max(max(g.sites) for g in layers[0].gates)
    psi = zero_state(n)
    for layer in reversed(layers[:L]):
        psi = encode_layer(layer, psi, n)
    return psi


def encoder_circuit(layers, L: int, n: int) -> Circuit:
    """The L-layer encoding circuit as abstract 1q/2q unitaries."""
    gates = []
    for layer in reversed(layers[:L]):
        for g in reversed(layer.gates):
            kind = "U2q" if len(g.sites) == 2 else "U1q"
            gates.append(Gate(kind, g.sites, matrix=g.matrix))
    return Circuit(n, tuple(gates))


# -------------------------------
# Disentangling loop
# -------------------------------

def _as_space(exact_reference):
    ref = np.asarray(exact_reference)
    return [ref] if ref.ndim == 1 else list(ref)


def auto_lmax(n: int, records, min_layers: int = MIN_AUTO_LAYERS) -> Optional[int]:
    """
    Default layer count: min(4N, 3 * first layer reaching chi_max/2), floored
    at `min_layers`. None while the half-rank crossing has not been seen.
    """
    half = chi_max(n) / 2
    crossing = next((r.l for r in records if r.chi_cut >= half), None)
    if crossing is None:
        return None
    return min(4 * n, max(min_layers, 3 * crossing))


def auto_stop(n: int, min_layers: int = MIN_AUTO_LAYERS) -> Callable:
    def stop(records) -> bool:
        target = auto_lmax(n, records, min_layers)
        return target is not None and records[-1].l >= target

    return stop


def run_disentangler(psi0, L_max: int, exact_reference, *, threshold: float = SCHMIDT_THRESHOLD,
                     stop: Optional[Callable] = None, progress: bool = False):
    """
    Peel rank-2 layers off psi0.

    Per layer: exact MPS of the current state, compression to bond 2, layer
    construction, application to the untruncated state, then the central
    Schmidt rank of the result and the fidelity of the l-layer encoding
    with `exact_reference` (a vector, or rows spanning a degenerate ground
    space).

    Returns (layers, EncodingDiagnostics).
    """
    if L_max < 1:
        raise ValueError(f"L_max must be >= 1, got {L_max}")
    current = np.asarray(psi0, dtype=np.complex128)
    n = int(round(math.log2(current.size)))
    if n < 2:
        raise ValueError("need at least two sites for a central cut")
    if abs(np.linalg.norm(current) - 1.0) > 1e-10:
        raise ValueError("psi0 must be normalized")
    # phi_g = U_l ... U_1 g, so F(l) = sum_g |<0|phi_g>|^2.
    phis = _as_space(exact_reference)
    cut = n // 2

    layers, records = [], []
    bar = tqdm(range(1, L_max + 1), desc=f"encode N={n}", disable=not progress, leave=False)
    for l in bar:
        mps2 = compress(statevector_to_mps(current), 2)
        layer = build_mpd_layer(mps2, index=l)
        current = disentangle_layer(layer, current, n)
        phis = [disentangle_layer(layer, phi, n) for phi in phis]
        spectrum = schmidt_spectrum(current, cut, threshold)
        fidelity = float(min(1.0, sum(abs(phi[0]) ** 2 for phi in phis)))
        records.append(LayerRecord(l=l, chi_cut=spectrum.rank, singular_values=spectrum.values,
                                   fidelity=fidelity, if_per_site=(1.0 - fidelity) / n,
                                   discarded_weight=float(sum(mps2.truncation))))
        layers.append(layer)
        if stop is not None and stop(records):
            log.info("disentangler stopped at l=%d (auto L_max rule)", l)
            break

    return layers, EncodingDiagnostics(n=n, threshold=threshold, records=tuple(records))


# -------------------------------
# Rank-growth analysis
# -------------------------------

def find_lstar(diag: EncodingDiagnostics, threshold: Optional[float] = None) -> tuple[float, LogisticFit]:
    """Inflection point of the logistic fit to chi_cut(l)/chi_max."""
    if len(diag.records) < 5:
        raise FitError(f"need >= 5 layer records for the logistic fit, got {len(diag.records)}")
    fit = fit_logistic(diag.layers(), diag.ratios(threshold))
    return fit.lstar, fit


def half_rank_crossing(diag: EncodingDiagnostics) -> Optional[int]:
    """First layer whose central rank reaches chi_max/2."""
    half = diag.chi_max / 2
    return next((r.l for r in diag.records if r.chi_cut >= half), None)


def lstar_sensitivity(diag: EncodingDiagnostics, thresholds=SENSITIVITY_THRESHOLDS) -> dict:
    """L* refitted with other Schmidt-rank floors; None where the fit fails."""
    out = {}
    for thr in thresholds:
        try:
            out[repr(thr)] = find_lstar(diag, thr)[0]
        except FitError as exc:
            log.info("L* at threshold %g unavailable: %s", thr, exc)
            out[repr(thr)] = None
    return out


# -------------------------------
# Files
# -------------------------------

def save_layers(path: Path, layers, n: int, **header) -> Path:
    meta = {
        "kind": "mpd_layers",
        "n": n,
        "layers": len(layers),
        "bit_convention": BIT_CONVENTION,
        "gate_order": "disentangling",
        "matrices": "encoding",
        "sites": [[list(g.sites) for g in layer.gates] for layer in layers],
        **header,
    }
    arrays = {
        f"l{layer.index:05d}_g{k:03d}": g.matrix
        for layer in layers for k, g in enumerate(layer.gates)
    }
    return save_arrays(path, meta, arrays)


def load_layers(path: Path) -> tuple[list, dict]:
    header, arrays = load_arrays(path)
    if header.get("kind") != "mpd_layers":
        raise ValueError(f"{path} is not a layer-stack file")
    layers = []
    for idx, sites in enumerate(header["sites"], start=1):
        gates = tuple(
            TwoQubitGate(arrays[f"l{idx:05d}_g{k:03d}"], tuple(s)) for k, s in enumerate(sites)
        )
        layers.append(MPDLayer(index=idx, gates=gates))
    return layers, header
