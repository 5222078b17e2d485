"""Equivalence between the penalized-weights estimator and a redescending
M-estimator with concomitant scale.

The M side minimizes sum_i rho((y_i - x_i' beta) / sigma, lam) + 2 c n log(sigma)
where rho is quadratic inside |t| <= sqrt(lam/2) and logarithmic outside.  The
weights side carries the same scale through the penalized objective.  Both
share the stationarity system

    w_i = sqrt(lam/2) sigma / |r_i|        when |r_i| > sigma sqrt(lam/2), else 1
    sigma^2 = ||r_kept||^2 / (c n - (lam/2) #flagged)
    c n sigma^2 = sum_i w_i^2 r_i^2

so converged fits from the two routes should agree.  theorem1_check runs both
and reports the coefficient and scale gaps.

Caution: the stationarity system admits no solution with a positive kept set
unless lam > 2c, whatever the data: kept observations satisfy t_i^2 <= lam/2,
so sum over kept of t_i^2 <= (lam/2)(n - m), while the scale identity demands
that sum equal c n - (lam/2) m.  Both fit routines refuse lam <= 2c up front
("scale collapses for lam <= 2 c") rather than iterate toward the inevitable
degenerate scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Dataset, PwlsError, ols_solve

# scale below this fraction of its starting value is treated as collapsed
COLLAPSE_RTOL = 1e-12


@dataclass
class MConfig:
    lam: float
    c: float = 1.0
    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        if not self.lam > 0:
            raise PwlsError("lambda must be positive")
        if not self.c > 0:
            raise PwlsError("c must be positive")
        if not self.tol > 0:
            raise PwlsError("tol must be positive")


@dataclass
class MFit:
    beta: np.ndarray
    sigma: float
    flagged: np.ndarray
    objective: float
    iterations: int
    converged: bool


@dataclass
class ScaledFit:
    """Weights-route counterpart of MFit; carries the weight vector too."""

    beta: np.ndarray
    w: np.ndarray
    residuals: np.ndarray
    flagged: np.ndarray
    sigma: float
    objective: float
    lam: float
    iterations: int
    converged: bool


@dataclass
class Theorem1Report:
    beta_gap: float
    sigma_gap: float
    passed: bool


def rho(t, lam: float):
    """Loss: t^2 inside |t| <= sqrt(lam/2), lam log(|t| sqrt(2/lam)) + lam/2 outside."""
    if not lam > 0:
        raise PwlsError("lambda must be positive")
    t = np.asarray(t, dtype=float)
    knot = np.sqrt(lam / 2.0)
    inside = np.abs(t) <= knot
    out = np.empty_like(t)
    out[inside] = t[inside] ** 2
    a = np.abs(t[~inside])
    out[~inside] = lam * np.log(a * np.sqrt(2.0 / lam)) + lam / 2.0
    return out if out.ndim else float(out)


def psi(t, lam: float):
    """Score: 2t inside the knot, lam / t outside (redescending)."""
    if not lam > 0:
        raise PwlsError("lambda must be positive")
    t = np.asarray(t, dtype=float)
    knot = np.sqrt(lam / 2.0)
    inside = np.abs(t) <= knot
    out = np.empty_like(t)
    out[inside] = 2.0 * t[inside]
    out[~inside] = lam / t[~inside]
    return out if out.ndim else float(out)


def _irls_weights(absr: np.ndarray, sigma: float, lam: float) -> np.ndarray:
    thr = np.sqrt(lam / 2.0) * sigma
    w = np.ones_like(absr)
    mask = absr > thr
    w[mask] = thr / absr[mask]
    return w


def _require_feasible(lam: float, c: float):
    # see the module docstring: below 2c no stationary scale exists and the
    # iteration can only collapse or stall at a degenerate fixed point
    if lam <= 2.0 * c:
        raise PwlsError("scale collapses for lam <= 2 c")


def fit_concomitant_m(data: Dataset, config: MConfig) -> MFit:
    """Alternating minimization of the M objective with concomitant scale.

    Each sweep runs one reweighted least-squares coefficient step (weights
    min(1, sqrt(lam/2) sigma / |r|) squared) and one closed-form scale step
        sigma^2 = ||r_kept||^2 / (c n - (lam/2) #flagged),
    flagging |r_i| > sigma sqrt(lam/2).  Stops when both blocks move less
    than config.tol.

    Raises "scale collapses for lam <= 2 c" up front in the provably
    infeasible regime, "scale denominator nonpositive" when
    c n <= (lam/2) #flagged, and "scale collapsed" when sigma underflows.
    """
    lam, c = config.lam, config.c
    _require_feasible(lam, c)
    n = data.n
    X, y = data.X, data.y
    beta = ols_solve(data)
    r = y - X @ beta
    sigma = float(np.sqrt(np.sum(r * r) / (c * n)))
    if sigma <= 0:
        raise PwlsError("scale collapsed")
    sigma_floor = COLLAPSE_RTOL * sigma
    iterations = 0
    converged = False
    for _ in range(config.max_iter):
        w = _irls_weights(np.abs(r), sigma, lam)
        try:
            beta_new = ols_solve(data, row_weights=w * w)
        except PwlsError as exc:
            raise PwlsError("degenerate weighting") from exc
        r = y - X @ beta_new
        sigma_new = _scale_step(np.abs(r), sigma, lam, c, n)
        moved = max(float(np.max(np.abs(beta_new - beta))), abs(sigma_new - sigma))
        beta, sigma = beta_new, sigma_new
        iterations += 1
        if sigma < sigma_floor:
            raise PwlsError("scale collapsed")
        if moved < config.tol:
            converged = True
            break
    # settle the scale exactly for the final residuals; membership is a step
    # function of sigma so this lands on the consistent value in a few moves
    for _ in range(200):
        sigma_new = _scale_step(np.abs(r), sigma, lam, c, n)
        if sigma_new < sigma_floor:
            raise PwlsError("scale collapsed")
        done = abs(sigma_new - sigma) < 1e-15 * max(sigma, 1.0)
        sigma = sigma_new
        if done:
            break
    flag = np.abs(r) > np.sqrt(lam / 2.0) * sigma
    obj = float(np.sum(rho(r / sigma, lam)) + 2.0 * c * n * np.log(sigma))
    return MFit(beta=beta, sigma=sigma, flagged=np.flatnonzero(flag),
                objective=obj, iterations=iterations, converged=converged)


def _scale_step(absr: np.ndarray, sigma: float, lam: float, c: float, n: int) -> float:
    flag = absr > np.sqrt(lam / 2.0) * sigma
    m = int(flag.sum())
    denom = c * n - 0.5 * lam * m
    if denom <= 0:
        raise PwlsError("scale denominator nonpositive")
    kept = absr[~flag]
    s2 = float(np.sum(kept * kept)) / denom
    if s2 <= 0.0:
        raise PwlsError("scale collapsed")
    return float(np.sqrt(s2))


def fit_pwls_with_scale(data: Dataset, config: MConfig) -> ScaledFit:
    """Penalized-weights route to the same stationary system.

    Alternates the closed-form weight update with threshold sigma sqrt(lam/2),
    a weighted least-squares coefficient update, and the scale identity
    c n sigma^2 = sum_i w_i^2 r_i^2.  Stops when coefficients, weights, and
    scale all move less than config.tol.  Refuses lam <= 2 c like
    fit_concomitant_m.
    """
    lam, c = config.lam, config.c
    _require_feasible(lam, c)
    n = data.n
    X, y = data.X, data.y
    beta = ols_solve(data)
    r = y - X @ beta
    sigma = float(np.sqrt(np.sum(r * r) / (c * n)))
    if sigma <= 0:
        raise PwlsError("scale collapsed")
    sigma_floor = COLLAPSE_RTOL * sigma
    w = np.ones(n)
    iterations = 0
    converged = False
    for _ in range(config.max_iter):
        w_new = _irls_weights(np.abs(r), sigma, lam)
        try:
            beta_new = ols_solve(data, row_weights=w_new * w_new)
        except PwlsError as exc:
            raise PwlsError("degenerate weighting") from exc
        r = y - X @ beta_new
        sigma_new = float(np.sqrt(np.sum((w_new * r) ** 2) / (c * n)))
        moved = max(float(np.max(np.abs(beta_new - beta))),
                    float(np.max(np.abs(w_new - w))),
                    abs(sigma_new - sigma))
        beta, w, sigma = beta_new, w_new, sigma_new
        iterations += 1
        if sigma < sigma_floor:
            raise PwlsError("scale collapsed")
        if moved < config.tol:
            converged = True
            break
    # polish: alternate the weight rule and the scale identity at fixed beta
    # until self-consistent, so the returned triple satisfies the stationarity
    # displays to machine precision
    for _ in range(200):
        w = _irls_weights(np.abs(r), sigma, lam)
        sigma_new = float(np.sqrt(np.sum((w * r) ** 2) / (c * n)))
        if sigma_new < sigma_floor:
            raise PwlsError("scale collapsed")
        done = abs(sigma_new - sigma) < 1e-15 * max(sigma, 1.0)
        sigma = sigma_new
        if done:
            break
    w = _irls_weights(np.abs(r), sigma, lam)
    pen = lam * float(np.sum(np.abs(np.log(w))))
    obj = float(np.sum((w * r) ** 2) / sigma**2 + pen + 2.0 * c * n * np.log(sigma))
    return ScaledFit(beta=beta, w=w, residuals=r, flagged=np.flatnonzero(w < 1.0),
                     sigma=sigma, objective=obj, lam=lam,
                     iterations=iterations, converged=converged)


def theorem1_check(data: Dataset, config: MConfig) -> Theorem1Report:
    """Run both routes and compare the estimates.

    Passes when the sup-norm coefficient gap and the absolute scale gap are
    both below 1e-6.  Fit errors propagate.
    """
    fm = fit_concomitant_m(data, config)
    fp = fit_pwls_with_scale(data, config)
    beta_gap = float(np.max(np.abs(fm.beta - fp.beta)))
    sigma_gap = abs(fm.sigma - fp.sigma)
    ok = bool(fm.converged and fp.converged
              and beta_gap < 1e-6 and sigma_gap < 1e-6)
    return Theorem1Report(beta_gap=beta_gap, sigma_gap=sigma_gap, passed=ok)
