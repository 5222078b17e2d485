"""Heteroscedastic extension: estimate a variance-scale function from
absolute residuals, then run the penalized-weights solver on rescaled data.

Three steps: (1) a homogeneous fit ignoring the variance pattern, (2) a
damped Gauss-Newton fit of theta in R_i ~ g(z_i' theta) where R_i are the
absolute step-1 residuals, (3) the penalized-weights solver with each row
scaled by the fitted g, so observation i is flagged when
|r_i| / g(z_i' theta_hat) exceeds sqrt(lam varpi_i / 2).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import solver, tuning
from .numerics import Dataset, PwlsError

log = logging.getLogger(__name__)

# fitted scale values are floored here before any division
DELTA_FLOOR = 1e-6

GN_MAX_ITER = 200
GN_MAX_HALVINGS = 30
GN_GRAD_TOL = 1e-10
GN_MULTISTARTS = 5
GN_PERTURB_SCALE = 0.5

G_KINDS = ("absolute", "exp-absolute", "sqrt-absolute", "identity")


@dataclass(frozen=True)
class ZSpec:
    """Rule building the variance covariate z_i from the design row x_i."""

    columns: tuple = ()
    intercept: bool = True

    def matrix(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        parts = []
        if self.intercept:
            parts.append(np.ones((n, 1)))
        for c in self.columns:
            if not (-X.shape[1] <= c < X.shape[1]):
                raise PwlsError(f"z column {c} out of range")
            parts.append(X[:, [c]])
        if not parts:
            raise PwlsError("empty variance covariate")
        return np.hstack(parts)

    @property
    def q(self) -> int:
        return len(self.columns) + (1 if self.intercept else 0)


@dataclass
class VarianceModel:
    g_kind: str
    theta: np.ndarray
    z_spec: ZSpec


@dataclass
class HpwlsFit:
    """Step-3 fit plus the variance model and the step-1 coefficients."""

    beta: np.ndarray
    w: np.ndarray
    residuals: np.ndarray  # on the original (unscaled) response
    flagged: np.ndarray
    objective: float  # objective of the variance-rescaled problem
    lam: float
    sigma2: float
    iterations: int
    converged: bool
    variance: VarianceModel
    beta_homo: np.ndarray


def g_eval(kind: str, v):
    v = np.asarray(v, dtype=float)
    if kind == "absolute":
        return np.abs(v)
    if kind == "exp-absolute":
        return np.exp(np.abs(v))
    if kind == "sqrt-absolute":
        return np.sqrt(np.abs(v))
    if kind == "identity":
        return v.copy()
    raise PwlsError(f"unknown g kind: {kind}")


def _g_grad(kind: str, v: np.ndarray) -> np.ndarray:
    s = np.sign(v)
    if kind == "absolute":
        return s
    if kind == "exp-absolute":
        return s * np.exp(np.abs(v))
    if kind == "sqrt-absolute":
        a = np.abs(v)
        out = np.zeros_like(v)
        pos = a > 1e-12
        out[pos] = s[pos] / (2.0 * np.sqrt(a[pos]))
        return out
    if kind == "identity":
        return np.ones_like(v)
    raise PwlsError(f"unknown g kind: {kind}")


def _gn_descend(z, R, kind, theta0):
    """Damped Gauss-Newton from one start; returns (theta, objective)."""
    theta = np.asarray(theta0, dtype=float).copy()
    resid = R - g_eval(kind, z @ theta)
    fval = float(resid @ resid)
    for _ in range(GN_MAX_ITER):
        v = z @ theta
        jac = -_g_grad(kind, v)[:, None] * z
        grad = 2.0 * jac.T @ resid
        if float(np.max(np.abs(grad))) < GN_GRAD_TOL:
            break
        step, *_ = np.linalg.lstsq(jac, -resid, rcond=None)
        if not np.isfinite(step).all():
            break
        t = 1.0
        improved = False
        for _ in range(GN_MAX_HALVINGS):
            cand = theta + t * step
            res_c = R - g_eval(kind, z @ cand)
            f_c = float(res_c @ res_c)
            if np.isfinite(f_c) and f_c < fval:
                theta, resid, fval = cand, res_c, f_c
                improved = True
                break
            t /= 2.0
        if not improved:
            break
    return theta, fval


def variance_fit(z: np.ndarray, R: np.ndarray, g_kind: str,
                 init_theta: np.ndarray) -> np.ndarray:
    """Least-squares fit of theta in R_i ~ g(z_i' theta).

    Damped Gauss-Newton with sign subgradients for the absolute-value kinds,
    restarted from the given initial point plus five random perturbations at
    half its norm; the best final objective wins.  The returned objective
    never exceeds the objective of the given start.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    R = np.asarray(R, dtype=float).reshape(-1)
    if g_kind not in G_KINDS:
        raise PwlsError(f"unknown g kind: {g_kind}")
    if z.shape[0] != R.shape[0]:
        raise PwlsError("z and R length mismatch")
    if not (np.isfinite(z).all() and np.isfinite(R).all()):
        raise PwlsError("variance fit failed")
    init = np.asarray(init_theta, dtype=float).reshape(-1)
    if init.shape[0] != z.shape[1]:
        raise PwlsError("init_theta length mismatch")
    rng = np.random.default_rng(0)
    spread = GN_PERTURB_SCALE * max(float(np.linalg.norm(init)), 1.0)
    starts = [init] + [init + spread * rng.standard_normal(init.size)
                       for _ in range(GN_MULTISTARTS)]
    best_theta, best_f = None, np.inf
    for s in starts:
        theta, fval = _gn_descend(z, R, g_kind, s)
        if np.isfinite(fval) and fval < best_f:
            best_theta, best_f = theta, fval
    if best_theta is None:
        raise PwlsError("variance fit failed")
    return best_theta


def _scale_values(g_kind, z, theta):
    g = g_eval(g_kind, z @ theta)
    return np.maximum(np.abs(g), DELTA_FLOOR)


def _rescaled(data: Dataset, s: np.ndarray) -> Dataset:
    return Dataset(X=data.X / s[:, None], y=data.y / s)


def hpwls_fit(data: Dataset, z_spec: ZSpec, g_kind: str, scales,
              lam: float, config=None, theta: np.ndarray | None = None) -> HpwlsFit:
    """Single-penalty heteroscedastic fit.

    Step 1 runs the plain solver at the same penalty; step 2 fits the scale
    function to the absolute step-1 residuals (skipped when theta is given);
    step 3 reruns the solver on rows divided by the fitted scale.  With the
    scale identically one this reduces to solver.fit on the original data.
    """
    config = config or solver.SolverConfig()
    beta0, w0 = solver.initial_estimates(data, config)
    step1 = solver.fit(data, lam, scales, beta0, w0, config)
    z = z_spec.matrix(data.X)
    if theta is None:
        R = np.abs(data.y - data.X @ step1.beta)
        theta = variance_fit(z, R, g_kind, _default_theta(z_spec))
    theta = np.asarray(theta, dtype=float).reshape(-1)
    s = _scale_values(g_kind, z, theta)
    scaled = _rescaled(data, s)
    b0s, w0s = solver.initial_estimates(scaled, config)
    core = solver.fit(scaled, lam, scales, b0s, w0s, config)
    return HpwlsFit(
        beta=core.beta,
        w=core.w,
        residuals=data.y - data.X @ core.beta,
        flagged=core.flagged,
        objective=core.objective,
        lam=core.lam,
        sigma2=core.sigma2,
        iterations=core.iterations,
        converged=core.converged,
        variance=VarianceModel(g_kind=g_kind, theta=theta, z_spec=z_spec),
        beta_homo=step1.beta,
    )


def _default_theta(z_spec: ZSpec) -> np.ndarray:
    theta = np.zeros(z_spec.q)
    theta[0] = 1.0
    return theta


def hpwls_path(data: Dataset, z_spec: ZSpec, g_kind: str, scales=None,
               config=None, theta: np.ndarray | None = None) -> solver.SolutionPath:
    """Heteroscedastic solution path.

    Steps 1 and 2 run once: the homogeneous stage is a full adaptive pipeline
    (pilot, adaptive scales, path, BIC selection) whose selected coefficients
    feed the variance fit.  Step 3 is a warm-started path on the rescaled
    data, with the grid anchor recomputed on the rescaled residuals.  When
    scales is None the step-3 penalty scales are rebuilt adaptively from a
    pilot on the rescaled data.
    """
    config = config or solver.SolverConfig()
    if theta is None:
        beta0, w0 = solver.initial_estimates(data, config)
        hom_path = solver.solution_path(data, solver.adaptive_scales(w0), config)
        hom_pick = tuning.select_bic(hom_path, data)
        beta_homo = hom_path.fits[hom_pick.argmin].beta
        z = z_spec.matrix(data.X)
        R = np.abs(data.y - data.X @ beta_homo)
        theta = variance_fit(z, R, g_kind, _default_theta(z_spec))
    else:
        z = z_spec.matrix(data.X)
        theta = np.asarray(theta, dtype=float).reshape(-1)
    s = _scale_values(g_kind, z, theta)
    scaled = _rescaled(data, s)
    if scales is None:
        _, w0s = solver.initial_estimates(scaled, config)
        scales = solver.adaptive_scales(w0s)
    log.debug("hetero path: theta=%s", np.array2string(np.asarray(theta), precision=4))
    return solver.solution_path(scaled, scales, config)
