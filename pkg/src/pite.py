"""
Deterministically scheduled probabilistic imaginary-time evolution.

One step applies, on the post-selected branch,

    f(H~) = m0 [cos(H~ s dtau) - sin(H~ s dtau) / s],   H~ = H - E_shift,
    s = m0 / sqrt(1 - m0^2),

written as cos(H~ t + beta) with t = s dtau and beta = arccos(m0), i.e. half
the sum of e^{-i beta} e^{-i H~ t} and e^{+i beta} e^{+i H~ t}. The exact
backend evaluates both propagators with Krylov; the Trotter backend uses
Strang-slice powers, with E_shift applied as an analytic phase.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as la
from tqdm import tqdm

from circuit import DEPTH_CONVENTION, PiteStepParams, apply_matrix, build_pite_step, native_depth
from hamiltonian import CHEMICAL_ACCURACY, ReferenceSpectrum, TermSplit, pauli_dense, subspace_fidelity, support
from numerics import KRYLOV_TOL, SparseHermitianOperator, krylov_expmv

log = logging.getLogger(__name__)

M0 = 0.999
EPS = 1e-6
DTAU_MIN_RATIO = 1.0 / 50.0
R_CAP = 1024
SUPPRESSION_ANGLE = 0.62 * math.pi
MIN_GAP = 1e-8
BACKENDS = ("trotter", "exact-filter")
TROTTER_METRICS = ("norm", "infidelity")


@dataclass(frozen=True)
class Schedule:
    m0: float
    s: float
    e_shift: float
    delta_eff: float
    w0_ref: float
    eps: float
    eps_alg: float
    eps_trot: float
    eps_tilde: float
    k_safe: int
    k_safe_clamped: bool
    dtau_min: float
    dtau_max: float
    dtaus: tuple
    budgets: tuple
    reps: tuple = ()
    r_cap: int = R_CAP

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class StepRecord:
    k: int
    dtau: float
    r: int
    cap_hit: bool
    p: float
    p_cum: float
    infidelity: float
    delta_e: float
    depth: int
    depth_cum: int


@dataclass(frozen=True)
class Trajectory:
    initializer: str
    backend: str
    records: tuple
    schedule: Schedule
    depth_convention: str = DEPTH_CONVENTION

    @property
    def final(self) -> StepRecord:
        return self.records[-1]


@dataclass(frozen=True)
class Crossing:
    reached: bool
    k_chem: float
    d_raw: float
    d_post: float
    p_cum: float
    target: float


# -------------------------------
# Schedule
# -------------------------------

def filter_s(m0: float) -> float:
    return m0 / math.sqrt(1.0 - m0 ** 2)


def filter_amplitude(x, m0: float):
    """m0 [cos x - sin x / s] at x = (E - E_shift) s dtau."""
    return m0 * (np.cos(x) - np.sin(x) / filter_s(m0))


def make_schedule(e0_dmrg: float, delta_eff: float, w0_ref: float, eps: float = EPS,
                  m0: float = M0, dtau_min_ratio: float = DTAU_MIN_RATIO,
                  r_cap: int = R_CAP) -> Schedule:
    """
    Linear dtau ramp of K_safe steps from dtau_max * dtau_min_ratio to dtau_max.

    The infidelity target is split equally between the algorithmic and the
    Trotter budget; the Trotter budget is shared out in proportion to dtau^3.
    """
    if not delta_eff > 0:
        raise ValueError(f"effective gap must be positive, got {delta_eff}")
    if delta_eff < MIN_GAP:
        raise ValueError(f"effective gap {delta_eff:g} is below {MIN_GAP:g}; dtau_max would diverge")
    if not 0.0 < w0_ref < 1.0:
        raise ValueError(f"w0_ref must lie in (0, 1), got {w0_ref}")
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if not 0.0 < m0 < 1.0:
        raise ValueError(f"m0 must lie in (0, 1), got {m0}")

    s = filter_s(m0)
    dtau_max = SUPPRESSION_ANGLE / (s * delta_eff)
    dtau_min = dtau_max * dtau_min_ratio
    eps_alg = eps_trot = eps / 2.0
    eps_tilde = eps_alg * (4.0 - eps_alg) / (2.0 - eps_alg) ** 2

    raw = math.ceil(3.0 / (2.0 * math.log(2.0)) * math.log((1.0 - w0_ref) / (eps_tilde * w0_ref)))
    clamped = raw < 1
    k_safe = max(1, raw)
    if clamped:
        log.warning("K_safe formula gave %d for w0_ref=%.6f; clamped to 1", raw, w0_ref)

    if k_safe == 1:
        dtaus = (dtau_max,)
    else:
        dtaus = tuple(dtau_min + (k / (k_safe - 1)) * (dtau_max - dtau_min) for k in range(k_safe))
    cubes = np.array(dtaus) ** 3
    budgets = tuple(float(b) for b in eps_trot * cubes / cubes.sum())

    return Schedule(m0=m0, s=s, e_shift=e0_dmrg, delta_eff=delta_eff, w0_ref=w0_ref,
                    eps=eps, eps_alg=eps_alg, eps_trot=eps_trot, eps_tilde=eps_tilde,
                    k_safe=k_safe, k_safe_clamped=clamped, dtau_min=dtau_min,
                    dtau_max=dtau_max, dtaus=dtaus, budgets=budgets, r_cap=r_cap)


def filter_product(delta: float, schedule: Schedule) -> tuple[float, float]:
    """
    Relative weight change of an eigencomponent at gap `delta` after the
    whole schedule: (prod_k [f_k(delta)/f_k(0)]^2, prod_k cos^2(delta s dtau_k)).
    """
    x = delta * schedule.s * np.array(schedule.dtaus)
    exact = np.prod((filter_amplitude(x, schedule.m0) / schedule.m0) ** 2)
    return float(exact), float(np.prod(np.cos(x) ** 2))


# -------------------------------
# Filter application
# -------------------------------

def _combine(fwd, bwd, t, schedule: Schedule):
    """(e^{-i beta} e^{-i H~ t} + e^{i beta} e^{i H~ t}) psi / 2 from e^{-iHt} psi and e^{iHt} psi."""
    beta = math.acos(schedule.m0)
    phase = np.exp(1j * (schedule.e_shift * t - beta))
    return 0.5 * (phase * fwd + np.conj(phase) * bwd)


def _normalized(vec):
    p = float(np.vdot(vec, vec).real)
    if p <= 0.0:
        raise ValueError("filter annihilated the state")
    return vec / math.sqrt(p), p


def exact_filter_vector(state, dtau: float, schedule: Schedule, hamiltonian: SparseHermitianOperator,
                        tol: float = KRYLOV_TOL):
    t = schedule.s * dtau
    fwd = krylov_expmv(hamiltonian, t, state, tol)
    bwd = krylov_expmv(hamiltonian, -t, state, tol)
    return _combine(fwd, bwd, t, schedule)


def exact_filter_apply(state, dtau: float, schedule: Schedule, hamiltonian: SparseHermitianOperator,
                       tol: float = KRYLOV_TOL):
    """One exact filter step; returns (normalized state, success probability)."""
    return _normalized(exact_filter_vector(state, dtau, schedule, hamiltonian, tol))


class StrangPropagator:
    """[S2(dt)]^r on state vectors, S2(dt) = E(dt/2) O(dt/2) F(dt) O(dt/2) E(dt/2)."""

    def __init__(self, split: TermSplit, dt: float):
        self.n = split.n
        half = dt / 2.0
        even = self._local_gates(split.even_bonds, half)
        odd = self._local_gates(split.odd_bonds, half)
        fld = self._local_gates(split.field_terms, dt)
        self.sequence = even + odd + fld + odd + even

    def _local_gates(self, terms, tau):
        groups = {}
        for label, coeff in terms:
            if coeff == 0:
                continue
            sites = support(label)
            local = "".join(label[q] for q in sites)
            groups.setdefault(sites, 0)
            groups[sites] = groups[sites] + coeff * pauli_dense(local)
        return [(sites, la.expm(-1j * tau * M)) for sites, M in groups.items()]

    def apply(self, psi, reps: int = 1):
        psi = np.asarray(psi, dtype=np.complex128)
        for _ in range(reps):
            for sites, U in self.sequence:
                psi = apply_matrix(psi, U, sites, self.n)
        return psi


def trotter_filter_vector(state, dtau: float, r_k: int, schedule: Schedule, split: TermSplit):
    if r_k < 1:
        raise ValueError(f"r_k must be >= 1, got {r_k}")
    t = schedule.s * dtau
    fwd = StrangPropagator(split, t / r_k).apply(state, r_k)
    bwd = StrangPropagator(split, -t / r_k).apply(state, r_k)
    return _combine(fwd, bwd, t, schedule)


def trotter_filter_apply(state, dtau: float, r_k: int, schedule: Schedule, split: TermSplit):
    """Filter step with Strang-slice powers in place of the exact propagators."""
    return _normalized(trotter_filter_vector(state, dtau, r_k, schedule, split))


def _distance(a, b, metric: str) -> float:
    if metric == "norm":
        return float(np.linalg.norm(a - b))
    return float(1.0 - abs(np.vdot(a, b)) ** 2)


def calibrate_reps(state, dtau: float, budget: float, schedule: Schedule,
                   hamiltonian: SparseHermitianOperator, split: TermSplit, *,
                   r_cap: Optional[int] = None, metric: str = "norm",
                   tol: float = KRYLOV_TOL) -> tuple[int, bool]:
    """
    Smallest r with distance(exact step, Trotter step) <= budget, by doubling
    then bisection. Returns (r, cap_hit); at the cap r = r_cap is returned.
    """
    if budget <= 0:
        raise ValueError(f"budget must be positive, got {budget}")
    if metric not in TROTTER_METRICS:
        raise ValueError(f"unknown Trotter metric {metric!r}")
    r_cap = r_cap or schedule.r_cap
    if dtau == 0:
        return 1, False

    exact, _ = exact_filter_apply(state, dtau, schedule, hamiltonian, tol)
    seen = {}

    def passes(r):
        if r not in seen:
            trot, _ = trotter_filter_apply(state, dtau, r, schedule, split)
            seen[r] = _distance(exact, trot, metric) <= budget
        return seen[r]

    r, lo = 1, None
    while not passes(r):
        if r >= r_cap:
            log.warning("r_k hit the cap %d at dtau=%.6g (budget %.3g)", r_cap, dtau, budget)
            return r_cap, True
        lo, r = r, min(2 * r, r_cap)
    if lo is not None:
        while r - lo > 1:
            mid = (lo + r) // 2
            if passes(mid):
                r = mid
            else:
                lo = mid
    return r, False


# -------------------------------
# Trajectories
# -------------------------------

def run_trajectory(init, schedule: Schedule, backend: str, reference: ReferenceSpectrum,
                   hamiltonian: SparseHermitianOperator, split: TermSplit, *,
                   initializer: str = "mps", metric: str = "norm",
                   stop_energy: float = CHEMICAL_ACCURACY / 10.0,
                   tol: float = KRYLOV_TOL, progress: bool = False) -> Trajectory:
    """
    Run the schedule from `init`, stopping early once the energy error
    drops below `stop_energy`. Record k = 0 is the initial state.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    state = np.asarray(init, dtype=np.complex128)
    nrm = np.linalg.norm(state)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError(f"initial state must be normalized, norm={nrm}")

    def observe(psi):
        return (1.0 - subspace_fidelity(reference.ground_space, psi),
                hamiltonian.expectation(psi) - reference.e0)

    depth_memo = {}

    def step_depth(dtau, r):
        if r not in depth_memo:
            params = PiteStepParams(schedule.m0, dtau, schedule.e_shift)
            depth_memo[r] = native_depth(build_pite_step(split, params, r))
        return depth_memo[r]

    inf0, de0 = observe(state)
    records = [StepRecord(0, 0.0, 0, False, 1.0, 1.0, inf0, de0, 0, 0)]
    reps = []
    p_cum, depth_cum = 1.0, 0
    steps = list(zip(schedule.dtaus, schedule.budgets))
    bar = tqdm(steps, desc=f"pite {initializer}/{backend}", disable=not progress, leave=False)
    for k, (dtau, budget) in enumerate(bar, start=1):
        if backend == "trotter":
            r, cap_hit = calibrate_reps(state, dtau, budget, schedule, hamiltonian, split,
                                        metric=metric, tol=tol)
            state, p = trotter_filter_apply(state, dtau, r, schedule, split)
        else:
            r, cap_hit = 1, False
            state, p = exact_filter_apply(state, dtau, schedule, hamiltonian, tol)
        reps.append(r)
        d = step_depth(dtau, r)
        p_cum *= p
        depth_cum += d
        inf_k, de_k = observe(state)
        records.append(StepRecord(k, dtau, r, cap_hit, p, p_cum, inf_k, de_k, d, depth_cum))
        log.debug("step %d: dtau=%.5g r=%d p=%.6f dE=%.3e", k, dtau, r, p, de_k)
        if de_k < stop_energy:
            break

    return Trajectory(initializer=initializer, backend=backend, records=tuple(records),
                      schedule=replace(schedule, reps=tuple(reps)))


def crossing_metrics(traj: Trajectory, target: float = CHEMICAL_ACCURACY) -> Crossing:
    """
    Locate where the energy error crosses `target`: log10(dE) is interpolated
    linearly in cumulative depth between the bracketing steps, P_cum linearly
    with the same weight. D_post = D_raw / P_cum.
    """
    recs = traj.records
    for m, rec in enumerate(recs):
        if rec.delta_e > target:
            continue
        if m == 0 or rec.delta_e == target:
            return Crossing(True, float(rec.k), float(rec.depth_cum),
                            rec.depth_cum / rec.p_cum, rec.p_cum, target)
        prev = recs[m - 1]
        hi = math.log10(prev.delta_e)
        lo = math.log10(max(rec.delta_e, 1e-300))
        x = (hi - math.log10(target)) / (hi - lo)
        d_raw = prev.depth_cum + x * (rec.depth_cum - prev.depth_cum)
        p_cum = prev.p_cum + x * (rec.p_cum - prev.p_cum)
        return Crossing(True, prev.k + x, d_raw, d_raw / p_cum, p_cum, target)
    last = recs[-1]
    return Crossing(False, float(last.k), float(last.depth_cum),
                    last.depth_cum / last.p_cum, last.p_cum, target)
