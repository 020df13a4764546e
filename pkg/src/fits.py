"""
Curve fits for the encoder and resource scaling.

- logistic rank growth  r(l) = 1 / (1 + (1/r0 - 1) e^{-gamma l})
- exponential tail      y(l) = C + A e^{-k l},   C, A, k >= 0
- power law             y(N) = alpha N^beta      (OLS on logs)

All fitters are deterministic: multi-starts come from fixed grids.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize, stats
from scipy.special import expit, logit

log = logging.getLogger(__name__)

MAX_NFEV = 200
STEP_TOL = 1e-12
MIN_LOGISTIC_POINTS = 5
MIN_TAIL_POINTS = 6
LOGISTIC_R0_GRID = (1e-3, 1e-2, 0.05, 0.2, 0.5)
LOGISTIC_GAMMA_GRID = (0.01, 0.05, 0.2, 1.0)
LOG_GAMMA_MAX = 30.0
TAIL_K_GRID = tuple(np.geomspace(1e-6, 1.0, 91))
PIN_RTOL = 1e-6
K_SCALING_REFERENCE = -5.0


class FitError(RuntimeError):
    """Degenerate data, an empty window, or every start diverged."""

    def __init__(self, message: str, window=None):
        super().__init__(message)
        self.window = window


@dataclass(frozen=True)
class LogisticFit:
    r0: float
    gamma: float
    residual: float
    converged: bool
    lstar: float
    starts: int = 0

    def to_dict(self) -> dict:
        return {"model": "logistic", "r0": self.r0, "gamma": self.gamma, "residual": self.residual,
                "converged": self.converged, "lstar": self.lstar, "starts": self.starts}


@dataclass(frozen=True)
class TailFit:
    C: float
    A: float
    k: float
    window: tuple
    residual: float
    active: tuple = ()
    singular: bool = False
    source: str = "table"

    def to_dict(self) -> dict:
        return {"model": "tail", "C": self.C, "A": self.A, "k": self.k,
                "window": list(self.window), "residual": self.residual,
                "active": list(self.active), "singular": self.singular, "source": self.source}


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    beta: float
    stderr: float
    r2_log: float
    n_points: int
    underdetermined: bool = False

    def to_dict(self) -> dict:
        return {"model": "powerlaw", "alpha": self.alpha, "beta": self.beta, "stderr": self.stderr,
                "r2_log": self.r2_log, "n_points": self.n_points, "underdetermined": self.underdetermined}


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float


# -------------------------------
# Models
# -------------------------------

def logistic_model(l, r0: float, gamma: float):
    return expit(logit(r0) + gamma * np.asarray(l, dtype=float))


def tail_model(l, C: float, A: float, k: float):
    return C + A * np.exp(-k * np.asarray(l, dtype=float))


def powerlaw_model(n, alpha: float, beta: float):
    return alpha * np.asarray(n, dtype=float) ** beta


# -------------------------------
# Logistic
# -------------------------------

def fit_logistic(l, r) -> LogisticFit:
    """
    Least-squares logistic fit, parametrized as sigmoid(u + e^v l) so that
    r0 = sigmoid(u) stays in (0, 1) and gamma = e^v stays positive.
    Levenberg-Marquardt from every point of the (r0, gamma) grid; the best
    residual wins. L* = -u / gamma is where the curve crosses 1/2.
    """
    l = np.asarray(l, dtype=float)
    r = np.asarray(r, dtype=float)
    if l.shape != r.shape or l.size < MIN_LOGISTIC_POINTS:
        raise FitError(f"logistic fit needs >= {MIN_LOGISTIC_POINTS} aligned points, got {l.size}",
                       window=(l.min(initial=np.nan), l.max(initial=np.nan)))
    if np.ptp(r) == 0:
        raise FitError("logistic fit on constant data", window=(l.min(), l.max()))

    # saturated so LM trial steps cannot overflow
    def rate(v):
        return math.exp(min(v, LOG_GAMMA_MAX))

    def residuals(p):
        return expit(p[0] + rate(p[1]) * l) - r

    def jacobian(p):
        gamma = rate(p[1])
        s = expit(p[0] + gamma * l)
        ds = s * (1.0 - s)
        return np.column_stack([ds, ds * gamma * l])

    best = None
    for r0 in LOGISTIC_R0_GRID:
        for gamma in LOGISTIC_GAMMA_GRID:
            p0 = np.array([logit(r0), math.log(gamma)])
            try:
                res = optimize.least_squares(residuals, p0, jac=jacobian, method="lm",
                                             xtol=STEP_TOL, ftol=STEP_TOL, gtol=STEP_TOL,
                                             max_nfev=MAX_NFEV)
            except (ValueError, FloatingPointError, OverflowError) as exc:
                log.debug("logistic start r0=%g gamma=%g failed: %s", r0, gamma, exc)
                continue
            if not np.all(np.isfinite(res.x)) or not np.isfinite(res.cost):
                continue
            if best is None or res.cost < best.cost:
                best = res
    if best is None:
        raise FitError("every logistic start diverged", window=(l.min(), l.max()))

    u, v = best.x
    gamma = rate(v)
    return LogisticFit(
        r0=float(expit(u)),
        gamma=gamma,
        residual=float(np.linalg.norm(best.fun)),
        converged=bool(best.success),
        lstar=float(-u / gamma),
        starts=len(LOGISTIC_R0_GRID) * len(LOGISTIC_GAMMA_GRID),
    )


# -------------------------------
# Exponential tail
# -------------------------------

def _window_mask(l, window):
    lo, hi = window
    return (l >= lo) & (l <= hi)


def auto_tail_window(l, lstar: Optional[float], window=None) -> tuple[tuple, str]:
    """
    The configured window when it holds enough records, otherwise
    (ceil(L*) + 1, last layer). Returns (window, source).
    """
    l = np.asarray(l, dtype=float)
    if window is not None and np.count_nonzero(_window_mask(l, window)) >= MIN_TAIL_POINTS:
        return tuple(window), "table"
    if lstar is not None and np.isfinite(lstar) and l.size:
        fallback = (int(math.ceil(lstar)) + 1, int(l.max()))
        if np.count_nonzero(_window_mask(l, fallback)) >= MIN_TAIL_POINTS:
            if window is not None:
                log.warning("tail window %s holds < %d layers; using %s", window, MIN_TAIL_POINTS, fallback)
            return fallback, "auto"
    raise FitError(f"no tail window with >= {MIN_TAIL_POINTS} layers (configured {window})", window=window)


def _tail_start(l, y):
    """Variable projection: for each k on a grid solve (C, A) by NNLS on relative residuals."""
    best = None
    w = 1.0 / y
    for k in TAIL_K_GRID:
        design = np.column_stack([w, np.exp(-k * l) * w])
        coef, rnorm = optimize.nnls(design, np.ones_like(y))
        if best is None or rnorm < best[0]:
            best = (rnorm, coef[0], coef[1], k)
    return np.array(best[1:])


def _solve_tail(l, y, x0, free):
    def model(p):
        full = np.zeros(3)
        full[free] = p
        return full

    def residuals(p):
        C, A, k = model(p)
        return (C + A * np.exp(-k * l)) / y - 1.0

    def jacobian(p):
        C, A, k = model(p)
        e = np.exp(-k * l)
        cols = np.column_stack([np.ones_like(l), e, -A * l * e]) / y[:, None]
        return cols[:, free]

    start = np.maximum(x0[free], 0.0)
    res = optimize.least_squares(residuals, start, jac=jacobian, method="trf",
                                 bounds=(0.0, np.inf), x_scale="jac",
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20 * MAX_NFEV)
    return model(res.x), res


def fit_tail(l, y, window, *, source: str = "table") -> TailFit:
    """
    Bounded fit of y = IF/N to C + A e^{-kl} inside `window` (inclusive),
    on relative residuals. Parameters that sit on their zero bound are
    pinned to exactly 0 when refitting without them costs nothing.
    """
    l = np.asarray(l, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = _window_mask(l, window)
    if not np.any(mask):
        raise FitError(f"tail window {window} is empty", window=window)
    if np.count_nonzero(mask) < MIN_TAIL_POINTS:
        raise FitError(f"tail window {window} holds {np.count_nonzero(mask)} < {MIN_TAIL_POINTS} points",
                       window=window)
    lw, yw = l[mask], y[mask]
    if np.any(yw <= 0):
        raise FitError("tail data must be positive", window=window)

    x0 = _tail_start(lw, yw)
    params, res = _solve_tail(lw, yw, x0, np.array([True, True, True]))
    cost = res.cost
    scale = np.array([yw.min(), yw.max(), 1.0 / max(np.ptp(lw), 1.0)])

    active = []
    free = np.array([True, True, True])
    for idx, name in enumerate(("C", "A", "k")):
        near_bound = params[idx] <= PIN_RTOL * scale[idx] or res.active_mask[int(np.sum(free[:idx]))] != 0
        if not near_bound:
            continue
        trial_free = free.copy()
        trial_free[idx] = False
        trial, trial_res = _solve_tail(lw, yw, params, trial_free)
        if trial_res.cost <= cost * (1.0 + 1e-8) + 1e-30:
            params, res, cost, free = trial, trial_res, trial_res.cost, trial_free
            active.append(name)

    jac = res.jac
    singular = bool(jac.size and np.linalg.matrix_rank(jac) < jac.shape[1])
    if singular:
        log.warning("tail fit in window %s has a rank-deficient Jacobian", window)
    C, A, k = (float(max(p, 0.0)) for p in params)
    return TailFit(C=C, A=A, k=k, window=tuple(window), residual=float(np.linalg.norm(res.fun)),
                   active=tuple(active), singular=singular, source=source)


def predict_delta_L(tail: TailFit, n: int, eps: float) -> float:
    """
    Extra layers to bring IF/N down to eps/N: (1/k) ln(A / (eps/N - C)).
    Infinite when the floor C is at or above eps/N; 0 when already below.
    """
    if tail.k <= 0:
        raise ValueError(f"tail rate k must be positive, got {tail.k}")
    gap = eps / n - tail.C
    if gap <= 0:
        return math.inf
    if tail.A == 0:
        return 0.0
    return max(0.0, math.log(tail.A / gap) / tail.k)


# -------------------------------
# Log-log and linear fits
# -------------------------------

def fit_powerlaw(n_values, y_values) -> PowerLawFit:
    """OLS of ln y on ln N; stderr is NaN for two points."""
    x = np.asarray(n_values, dtype=float)
    y = np.asarray(y_values, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise FitError(f"power-law fit needs >= 2 aligned points, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive N and y")
    if np.ptp(x) == 0:
        raise FitError("power-law fit needs at least two distinct N")
    res = stats.linregress(np.log(x), np.log(y))
    underdetermined = x.size == 2
    return PowerLawFit(
        alpha=float(math.exp(res.intercept)),
        beta=float(res.slope),
        stderr=math.nan if underdetermined else float(res.stderr),
        r2_log=float(res.rvalue ** 2),
        n_points=int(x.size),
        underdetermined=underdetermined,
    )


def fit_linear(x, y) -> LinearFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0:
        raise FitError("linear fit needs at least two distinct x")
    res = stats.linregress(x, y)
    return LinearFit(slope=float(res.slope), intercept=float(res.intercept), r2=float(res.rvalue ** 2))


def k_scaling(n_values, k_values) -> dict:
    """log-log slope of the tail rate k(N), reported beside the -5 reference."""
    pairs = [(n, k) for n, k in zip(n_values, k_values) if k is not None and k > 0]
    if len(pairs) < 2:
        return {"slope": None, "reference": K_SCALING_REFERENCE, "n_points": len(pairs)}
    fit = fit_powerlaw(*zip(*pairs))
    return {"slope": fit.beta, "stderr": fit.stderr, "reference": K_SCALING_REFERENCE,
            "n_points": fit.n_points}
