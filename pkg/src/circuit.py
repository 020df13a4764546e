"""
Gate-level circuit IR, builders for Trotter slices and the one-ancilla
PITE step, a single-qubit merge pass and depth/gate-count metrics.

Conventions
-----------
    RZZ(t)       exp(-i t/2 Z(x)Z)
    RZ(p), RX(p) exp(-i p/2 Z), exp(-i p/2 X)
    CTRL-RZZ(p)  exp(-i p/2 Z_a Z_i Z_j)   ancilla-conditioned RZZ on (a, i, j)
    CTRL-RZ(p)   exp(-i p/2 Z_a Z_i)       ancilla-conditioned RZ on (a, i)

The controlled gates carry the Z_a (x) H form of the controlled real-time
evolution: ancilla |0> sees exp(-i t h), ancilla |1> sees exp(+i t h).
Wire 0 is the most significant qubit. In PITE circuits wire 0 is the
ancilla and system site q sits on wire q + 1.

Depths are "convention-D1": longest path of the wire-dependency DAG over
the lowered and merged circuit, every gate costing 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from hamiltonian import TermSplit, support

DEPTH_CONVENTION = "convention-D1"
DUMP_VERSION = "v1"

_ARITY = {
    "RZZ": 2, "RZ": 1, "RX": 1, "H": 1, "S": 1, "Sdg": 1,
    "U1q": 1, "U2q": 2, "CTRL-RZZ": 3, "CTRL-RZ": 2,
}
_ROTATIONS = {"RZZ", "RZ", "RX", "CTRL-RZZ", "CTRL-RZ"}

_H = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)
_S = np.diag([1.0, 1j])
_X = np.array([[0.0, 1.0], [1.0, 0.0]])

# Ancilla rotation of the PITE step.
W_GATE = np.array([[1.0, -1j], [1.0, 1j]]) / math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class Gate:
    kind: str
    wires: tuple
    angle: float = 0.0
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in _ARITY:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if len(self.wires) != _ARITY[self.kind]:
            raise ValueError(f"{self.kind} acts on {_ARITY[self.kind]} wires, got {self.wires}")
        if len(set(self.wires)) != len(self.wires):
            raise ValueError(f"repeated wire in {self.kind}{self.wires}")
        if not math.isfinite(self.angle):
            raise ValueError(f"non-finite angle on {self.kind}")
        if self.kind in ("U1q", "U2q") and self.matrix is None:
            raise ValueError(f"{self.kind} needs a matrix")


@dataclass(frozen=True, eq=False)
class Circuit:
    n_qubits: int
    gates: tuple = ()
    ancilla: bool = False

    def __post_init__(self):
        for g in self.gates:
            if max(g.wires) >= self.n_qubits:
                raise ValueError(f"{g.kind}{g.wires} out of range for {self.n_qubits} qubits")

    def __len__(self):
        return len(self.gates)

    def then(self, other: "Circuit") -> "Circuit":
        if other.n_qubits != self.n_qubits:
            raise ValueError("cannot concatenate circuits of different width")
        return Circuit(self.n_qubits, self.gates + other.gates, self.ancilla)


@dataclass(frozen=True)
class PiteStepParams:
    """Angles of one PITE step; see `theta_eff` for the ancilla phase."""

    m0: float
    dtau: float
    e_shift: float

    def __post_init__(self):
        if not 0.0 < self.m0 < 1.0:
            raise ValueError(f"m0 must lie in (0, 1), got {self.m0}")

    @property
    def s(self) -> float:
        return self.m0 / math.sqrt(1.0 - self.m0 ** 2)

    @property
    def big_theta(self) -> float:
        return math.acos((self.m0 + math.sqrt(1.0 - self.m0 ** 2)) / math.sqrt(2.0))

    @property
    def kappa(self) -> int:
        return 1 if self.m0 >= 1.0 / math.sqrt(2.0) else -1

    @property
    def alpha(self) -> float:
        """Real-time length s * dtau of the forward/backward evolutions."""
        return self.s * self.dtau

    @property
    def theta_eff(self) -> float:
        # kappa*Theta = pi/4 - arccos(m0); with W and RZ as defined here this
        # leaves m0 * [cos(H~ a) - sin(H~ a)/s] on the |0> branch.
        return self.kappa * self.big_theta + self.alpha * self.e_shift


# -------------------------------
# Dense semantics
# -------------------------------

def gate_matrix(g: Gate) -> np.ndarray:
    k, a = g.kind, g.angle
    if k == "RZ":
        return np.diag([np.exp(-0.5j * a), np.exp(0.5j * a)])
    if k == "RX":
        return math.cos(a / 2) * np.eye(2) - 1j * math.sin(a / 2) * _X
    if k == "H":
        return _H
    if k == "S":
        return _S
    if k == "Sdg":
        return _S.conj()
    if k in ("U1q", "U2q"):
        return np.asarray(g.matrix)
    # Diagonal Z-string rotations.
    n = len(g.wires)
    parity = np.array([bin(x).count("1") % 2 for x in range(2 ** n)])
    return np.diag(np.exp(-0.5j * a * (1 - 2 * parity)))


def apply_matrix(psi, U, wires, n_qubits):
    """Apply U on `wires` to a state (or a batch with trailing columns)."""
    psi = np.asarray(psi)
    batch = psi.shape[1:]
    k = len(wires)
    t = psi.reshape((2,) * n_qubits + batch)
    U = np.asarray(U).reshape((2,) * (2 * k))
    out = np.tensordot(U, t, axes=(list(range(k, 2 * k)), list(wires)))
    out = np.moveaxis(out, list(range(k)), list(wires))
    return out.reshape(psi.shape)


def apply_circuit(c: Circuit, psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.complex128)
    for g in c.gates:
        psi = apply_matrix(psi, gate_matrix(g), g.wires, c.n_qubits)
    return psi


def dense_unitary(c: Circuit) -> np.ndarray:
    return apply_circuit(c, np.eye(2 ** c.n_qubits, dtype=np.complex128))


# -------------------------------
# Lowering and merging
# -------------------------------

def _cnot_block(control, target, sign):
    """CNOT(control -> target) times exp(-sign*i*pi/4), from RZZ(pi/2) and dressings."""
    q = sign * math.pi / 2
    return [
        Gate("H", (target,)),
        Gate("RZZ", (control, target), -q),
        Gate("RZ", (control,), q),
        Gate("RZ", (target,), q),
        Gate("H", (target,)),
    ]


def lower_controlled(g: Gate) -> list:
    """
    Native sequence for an ancilla-conditioned rotation.

    CTRL-RZ(p) on (a, i) is RZZ(p) on (a, i). CTRL-RZZ(p) on (a, i, j)
    conjugates RZZ(p) on (a, i) with CNOT(j -> i); the two CNOT blocks
    carry opposite global phases so the product is exact.
    """
    if g.kind == "CTRL-RZ":
        return [] if g.angle == 0 else [Gate("RZZ", g.wires, g.angle)]
    if g.kind == "CTRL-RZZ":
        if g.angle == 0:
            return []
        a, i, j = g.wires
        return _cnot_block(j, i, +1) + [Gate("RZZ", (a, i), g.angle)] + _cnot_block(j, i, -1)
    return [g]


def lower(c: Circuit) -> Circuit:
    gates = []
    for g in c.gates:
        gates.extend(lower_controlled(g))
    return Circuit(c.n_qubits, tuple(gates), c.ancilla)


def _fuse(run):
    if all(g.kind == "RZ" for g in run):
        total = sum(g.angle for g in run)
        return [] if abs(total) < 1e-14 else [Gate("RZ", run[0].wires, total)]
    M = np.eye(2, dtype=np.complex128)
    for g in run:
        M = gate_matrix(g) @ M
    if np.max(np.abs(M - np.eye(2))) < 1e-12:
        return []
    if len(run) == 1:
        return list(run)
    return [Gate("U1q", run[0].wires, matrix=M)]


def merge_1q(c: Circuit) -> Circuit:
    """Fuse runs of single-qubit gates on a wire between multi-qubit gates."""
    pending = {}
    out = []

    def flush(w):
        run = pending.pop(w, None)
        if run:
            out.extend(_fuse(run))

    for g in c.gates:
        if len(g.wires) == 1:
            pending.setdefault(g.wires[0], []).append(g)
            continue
        for w in g.wires:
            flush(w)
        out.append(g)
    for w in sorted(pending):
        flush(w)
    return Circuit(c.n_qubits, tuple(out), c.ancilla)


# -------------------------------
# Metrics
# -------------------------------

def dag_depth(c: Circuit) -> int:
    front = [0] * c.n_qubits
    depth = 0
    for g in c.gates:
        d = 1 + max(front[w] for w in g.wires)
        for w in g.wires:
            front[w] = d
        depth = max(depth, d)
    return depth


def rzz_count(c: Circuit) -> int:
    return sum(1 for g in c.gates if g.kind == "RZZ")


def two_qubit_count(c: Circuit) -> int:
    return sum(1 for g in c.gates if len(g.wires) == 2)


def dump_circuit(c: Circuit) -> str:
    lines = [f"# circuit {DUMP_VERSION} qubits={c.n_qubits} ancilla={int(c.ancilla)}"]
    for g in c.gates:
        wires = ",".join(str(w) for w in g.wires)
        if g.matrix is not None:
            entries = " ".join(f"{z.real!r}:{z.imag!r}" for z in np.asarray(g.matrix).ravel())
            lines.append(f"{g.kind} {wires} {entries}")
        else:
            lines.append(f"{g.kind} {wires} {g.angle!r}")
    return "\n".join(lines) + "\n"


# -------------------------------
# Builders
# -------------------------------

def _term_gates(label: str, angle: float, offset: int, ancilla: Optional[int]) -> list:
    """exp(-i angle/2 P) for a ZZ/XX/YY bond or Z field term, optionally Z_a-conditioned."""
    sites = tuple(q + offset for q in support(label))
    pauli = label[support(label)[0]]
    if len(sites) == 1:
        if ancilla is None:
            return [Gate("RZ", sites, angle)]
        return [Gate("CTRL-RZ", (ancilla,) + sites, angle)]
    core = Gate("RZZ", sites, angle) if ancilla is None else Gate("CTRL-RZZ", (ancilla,) + sites, angle)
    if pauli == "Z":
        return [core]
    if pauli == "X":
        pre = [Gate("H", (q,)) for q in sites]
        return pre + [core] + [Gate("H", (q,)) for q in sites]
    # Y -> Z via H.Sdg on each site
    pre = [Gate(k, (q,)) for q in sites for k in ("Sdg", "H")]
    post = [Gate(k, (q,)) for q in sites for k in ("H", "S")]
    return pre + [core] + post


def _block(terms, tau, offset, ancilla):
    gates = []
    for label, coeff in terms:
        angle = 2.0 * coeff * tau
        if angle == 0:
            continue
        gates.extend(_term_gates(label, angle, offset, ancilla))
    return gates


def _strang_gates(split: TermSplit, dt: float, offset=0, ancilla=None) -> list:
    half = dt / 2.0
    return (
        _block(split.even_bonds, half, offset, ancilla)
        + _block(split.odd_bonds, half, offset, ancilla)
        + _block(split.field_terms, dt, offset, ancilla)
        + _block(split.odd_bonds, half, offset, ancilla)
        + _block(split.even_bonds, half, offset, ancilla)
    )


def build_trotter_slice(split: TermSplit, dt: float) -> Circuit:
    """S2(dt) = E(dt/2) O(dt/2) F(dt) O(dt/2) E(dt/2) on the system register."""
    if not math.isfinite(dt):
        raise ValueError("dt must be finite")
    return Circuit(split.n, tuple(_strang_gates(split, dt)))


def build_pite_step(split: TermSplit, params: PiteStepParams, r_k: int) -> Circuit:
    """
    One PITE step on N+1 qubits (ancilla on wire 0).

    H, W on the ancilla; r_k ancilla-conditioned Strang slices of length
    alpha/r_k; RZ(-2 theta_eff) and W^dag on the ancilla. The |0> outcome
    applies m0 [cos(H~ alpha) - sin(H~ alpha)/s] with the Trotterized
    propagator in place of exp(-i H~ alpha).
    """
    if r_k < 1:
        raise ValueError(f"r_k must be >= 1, got {r_k}")
    slice_gates = _strang_gates(split, params.alpha / r_k, offset=1, ancilla=0)
    gates = [Gate("H", (0,)), Gate("U1q", (0,), matrix=W_GATE)]
    for _ in range(r_k):
        gates.extend(slice_gates)
    gates.append(Gate("RZ", (0,), -2.0 * params.theta_eff))
    gates.append(Gate("U1q", (0,), matrix=W_GATE.conj().T))
    return Circuit(split.n + 1, tuple(gates), ancilla=True)


def native_depth(c: Circuit) -> int:
    """dag_depth after lowering and single-qubit merging."""
    return dag_depth(merge_1q(lower(c)))
