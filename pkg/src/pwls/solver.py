"""Alternating minimization of the penalized weighted least squares objective

    sum_i w_i^2 (y_i - x_i' beta)^2  +  lam * sum_i varpi_i * |log w_i|

over coefficients beta and per-observation weights w in (0, 1].  Observations
whose fitted weight drops below one are flagged as outliers.  Includes the
closed-form weight update, data-driven penalty scales, a robust initializer,
and a warm-started solution path over a log-spaced penalty grid.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import Dataset, PwlsError, lambda_max, ols_solve

log = logging.getLogger(__name__)

# weight-move threshold below which extra polishing sweeps stop; tightens the
# returned iterate to a numerical fixed point without changing convergence
# accounting, which is still governed by SolverConfig.epsilon
POLISH_TOL = 1e-13

# largest penalty scale assigned when a pilot weight gives |log w| ~ 0
SCALE_CAP = 999.0

# normal-consistency constant for the median absolute deviation
MAD_TO_SIGMA = 0.6744897501960817

MAX_HALVINGS = 100

# elemental starts for the trimmed-squares pilot search, and the fixed seed
# that keeps the pilot deterministic for a given dataset
PILOT_STARTS = 80
PILOT_SEED = 0


@dataclass
class SolverConfig:
    """Knobs for the alternating solver and its solution path."""

    epsilon: float = 1e-6
    max_iter: int = 500
    grid_size: int = 100
    lambda_min_rule: float = 0.5

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise PwlsError("epsilon must be positive")
        if self.max_iter < 1:
            raise PwlsError("max_iter must be at least 1")
        if self.grid_size < 2:
            raise PwlsError("grid_size must be at least 2")
        if not (0 < self.lambda_min_rule <= 1):
            raise PwlsError("lambda_min_rule must lie in (0, 1]")


@dataclass
class PenaltyScales:
    """Per-observation penalty multipliers varpi, each in (0, cap]."""

    varpi: np.ndarray
    cap: float = SCALE_CAP

    def __post_init__(self):
        v = np.asarray(self.varpi, dtype=float).reshape(-1)
        if not np.isfinite(v).all():
            raise PwlsError("penalty scales must be finite")
        if (v <= 0).any() or (v > self.cap).any():
            raise PwlsError("penalty scales must lie in (0, cap]")
        self.varpi = v

    @classmethod
    def unit(cls, n: int) -> "PenaltyScales":
        return cls(varpi=np.ones(n))


@dataclass
class PwlsFit:
    """A converged (or iteration-capped) fit at one penalty level."""

    beta: np.ndarray
    w: np.ndarray
    residuals: np.ndarray
    flagged: np.ndarray
    objective: float
    lam: float
    sigma2: float
    iterations: int
    converged: bool


@dataclass
class SolutionPath:
    """Warm-started fits over a strictly decreasing penalty grid."""

    lambdas: np.ndarray
    fits: list[PwlsFit] = field(default_factory=list)
    scales: PenaltyScales | None = None


def w_update(residual: float, lambda_i: float) -> float:
    """Exact minimizer of w^2 r^2 + lambda_i |log w| over w in (0, 1].

    Returns sqrt(lambda_i / 2) / |r| when |r| exceeds that threshold and 1
    otherwise; the tie at the threshold resolves to 1.
    """
    if not lambda_i > 0:
        raise PwlsError("lambda must be positive")
    t = np.sqrt(0.5 * lambda_i)
    r = abs(float(residual))
    if r > t:
        return float(t / r)
    return 1.0


def objective(w, residuals, lam, varpi, loss_weights=None) -> float:
    """Value of the penalized objective at (w, residuals).

    loss_weights, when given, multiply each squared-loss term (used by the
    randomly perturbed fits in the tuning module).
    """
    w = np.asarray(w, dtype=float)
    r = np.asarray(residuals, dtype=float)
    v = np.asarray(varpi, dtype=float)
    sq = w * w * r * r
    if loss_weights is not None:
        sq = np.asarray(loss_weights, dtype=float) * sq
    return float(np.sum(sq) + lam * np.sum(v * np.abs(np.log(w))))


def _alternate(data, lam, varpi, omega, beta0, w0, config):
    """Core block-coordinate loop shared by plain and perturbed fits.

    Minimizes sum_i omega_i w_i^2 r_i^2 + lam sum_i varpi_i |log w_i|.
    Returns (beta, w, residuals, iterations, converged); the returned w is the
    exact weight update at the returned residuals.
    """
    X, y = data.X, data.y
    thr = np.sqrt(0.5 * lam * varpi / omega)
    w = np.array(w0, dtype=float, copy=True)
    beta = np.asarray(beta0, dtype=float)
    iterations = 0
    converged = False
    r = y - X @ beta
    for _ in range(config.max_iter):
        try:
            beta = ols_solve(data, row_weights=omega * w * w)
        except PwlsError as exc:
            raise PwlsError("degenerate weighting") from exc
        r = y - X @ beta
        absr = np.abs(r)
        w_new = np.ones_like(w)
        mask = absr > thr
        w_new[mask] = thr[mask] / absr[mask]
        delta = float(np.max(np.abs(w_new - w))) if w.size else 0.0
        w = w_new
        iterations += 1
        converged = delta < config.epsilon
        if delta < POLISH_TOL:
            break
    return beta, w, r, iterations, converged


def fit(data: Dataset, lam: float, scales: PenaltyScales,
        init_beta: np.ndarray, init_w: np.ndarray,
        config: SolverConfig | None = None) -> PwlsFit:
    """Alternating fit at a single penalty level.

    Starts from (init_beta, init_w), alternates a weighted least-squares
    coefficient update with the closed-form weight update, and stops when the
    sup-norm weight move falls below config.epsilon.
    """
    config = config or SolverConfig()
    if not lam > 0:
        raise PwlsError("lambda must be positive")
    varpi = scales.varpi
    if varpi.shape[0] != data.n:
        raise PwlsError("penalty scales length mismatch")
    w0 = np.asarray(init_w, dtype=float).reshape(-1)
    if w0.shape[0] != data.n or (w0 <= 0).any() or (w0 > 1).any():
        raise PwlsError("init_w must lie in (0, 1]")
    omega = np.ones(data.n)
    beta, w, r, iterations, converged = _alternate(
        data, lam, varpi, omega, init_beta, w0, config)
    wr2 = float(np.sum((w * r) ** 2))
    return PwlsFit(
        beta=beta,
        w=w,
        residuals=r,
        flagged=np.flatnonzero(w < 1.0),
        objective=objective(w, r, lam, varpi),
        lam=float(lam),
        sigma2=wr2 / (data.n - data.p),
        iterations=iterations,
        converged=converged,
    )


def fit_restarts(data: Dataset, lam: float, scales: PenaltyScales,
                 config: SolverConfig | None = None,
                 max_n: int = 16) -> PwlsFit:
    """Best alternating fit over exhaustive subset-least-squares restarts.

    The objective is multimodal; block-coordinate descent from a single
    start can land in a local basin.  On small instances every basin is
    anchored near the least-squares fit of some observation subset, so this
    runs fit() once per subset of size >= p, seeding the weights with the
    closed-form update at that subset's residuals, and keeps the lowest
    objective.  Cost grows as 2^n; refuse n > max_n.
    """
    n, p = data.n, data.p
    if n > max_n:
        raise PwlsError("restart search is exponential in n; raise max_n "
                        "only for small instances")
    thr = np.sqrt(0.5 * lam * scales.varpi)
    starts = [initial_estimates(data), (ols_solve(data), np.ones(n))]
    for size in range(p, n):
        for keep in itertools.combinations(range(n), size):
            rows = list(keep)
            b, _, rank, _ = np.linalg.lstsq(data.X[rows], data.y[rows],
                                            rcond=None)
            if rank < p:
                continue
            absr = np.abs(data.y - data.X @ b)
            w0 = np.where(absr > thr, thr / np.maximum(absr, 1e-300), 1.0)
            starts.append((b, w0))
    best = None
    for b, w in starts:
        f = fit(data, lam, scales, b, w, config)
        if best is None or f.objective < best.objective:
            best = f
    return best


def _trimmed_pilot(data: Dataset) -> np.ndarray:
    """High-breakdown pilot coefficients by trimmed-squares concentration.

    Elemental least-squares fits (size-p row subsets) are improved by
    concentration steps: refit on the h rows with the smallest absolute
    residuals, h = (n + p + 1) // 2, until the kept set stops moving.  The
    candidate with the smallest trimmed sum of squares wins.  A monotone
    reweighted pilot gets dragged by a cluster of shifted high-leverage
    rows; a trimmed fit simply drops them, whatever their leverage.
    """
    X, y = data.X, data.y
    n, p = data.n, data.p
    h = min(n, max(p + 1, (n + p + 1) // 2))
    if h >= n:
        return ols_solve(data)

    def concentrate(beta, sweeps):
        kept_prev = None
        loss = np.inf
        for _ in range(sweeps):
            r = y - X @ beta
            order = np.argpartition(np.abs(r), h - 1)[:h]
            kept = np.sort(order)
            b, _, rank, _ = np.linalg.lstsq(X[kept], y[kept], rcond=None)
            if rank < p:
                break
            beta = b
            r = y - X @ beta
            loss = float(np.sum(np.sort(r * r)[:h]))
            if kept_prev is not None and np.array_equal(kept, kept_prev):
                break
            kept_prev = kept
        return beta, loss

    if math.comb(n, p) <= PILOT_STARTS:
        subsets = itertools.combinations(range(n), p)
    else:
        rng = np.random.default_rng(PILOT_SEED)
        subsets = (rng.choice(n, size=p, replace=False)
                   for _ in range(PILOT_STARTS))
    candidates = [concentrate(ols_solve(data), 2)]
    for rows in subsets:
        rows = np.asarray(rows)
        b, _, rank, _ = np.linalg.lstsq(X[rows], y[rows], rcond=None)
        if rank < p:
            continue
        candidates.append(concentrate(b, 2))
    candidates.sort(key=lambda c: c[1])
    best_beta, best_loss = candidates[0]
    for b, _ in candidates[:8]:
        bb, ll = concentrate(b, 30)
        if ll < best_loss:
            best_beta, best_loss = bb, ll
    return best_beta


def initial_estimates(data: Dataset, config: SolverConfig | None = None):
    """Pilot coefficients and pilot weights for the adaptive penalty.

    The pilot slope comes from a trimmed-squares concentration search
    (high breakdown, see _trimmed_pilot) followed by one hard-rejection
    refit on the rows within 3 MAD-rescaled spreads, which restores
    efficiency on clean data.  With r the pilot residuals and
    lam0 = ||r||^2 / (n - p), the pilot weights are
    w0_i = min(1, lam0 / r_i^2), taking w0_i = 1 when r_i = 0.

    Returns (beta0, w0).
    """
    del config  # initializer constants are fixed
    beta = _trimmed_pilot(data)
    X, y = data.X, data.y
    yscale = max(1.0, float(np.median(np.abs(y))))
    r = y - X @ beta
    mad = float(np.median(np.abs(r - np.median(r))))
    scale = mad / MAD_TO_SIGMA
    if scale > 1e-12 * yscale:
        kept = np.abs(r) <= 3.0 * scale
        if int(kept.sum()) > data.p:
            b, _, rank, _ = np.linalg.lstsq(X[kept], y[kept], rcond=None)
            if rank == data.p:
                beta = b
                r = y - X @ beta
    if float(np.max(np.abs(r))) <= 1e-12 * yscale:
        # numerically perfect fit: every observation is maximal evidence
        # against being an outlier
        return beta, np.ones(data.n)
    lam0 = float(np.sum(r * r)) / (data.n - data.p)
    w0 = np.ones(data.n)
    mask = r * r > lam0
    if mask.any():
        w0[mask] = lam0 / (r[mask] * r[mask])
    return beta, w0


def adaptive_scales(w0: np.ndarray) -> PenaltyScales:
    """Penalty scales varpi_i = 1 / |log w0_i| capped at 999.

    Pilot weights at exactly 1 (zero log) get the cap.
    """
    w0 = np.asarray(w0, dtype=float).reshape(-1)
    if (w0 <= 0).any() or (w0 > 1).any():
        raise PwlsError("pilot weights must lie in (0, 1]")
    with np.errstate(divide="ignore"):
        raw = 1.0 / np.abs(np.log(w0))
    return PenaltyScales(varpi=np.minimum(raw, SCALE_CAP), cap=SCALE_CAP)


def solution_path(data: Dataset, scales: PenaltyScales,
                  config: SolverConfig | None = None) -> SolutionPath:
    """Warm-started fits over a log-spaced penalty grid.

    The grid runs from lambda_max (see numerics.lambda_max) down to a
    lambda_min found by repeated halving until the flagged fraction first
    reaches config.lambda_min_rule, or until further halving provably cannot
    flag more rows (exactly interpolated data); config.grid_size points are
    laid out log-uniformly between the endpoints.  Each fit warm-starts from
    its predecessor; the first fit starts from the least-squares coefficients
    with all weights at one.
    """
    config = config or SolverConfig()
    lam_hi = lambda_max(data)
    if not lam_hi > 1e-12 * max(1.0, float(np.max(np.abs(data.y)))):
        raise PwlsError("lambda_max is zero; residuals vanish")
    beta0 = ols_solve(data)
    w_ones = np.ones(data.n)

    def _fit(lam, b, w):
        try:
            return fit(data, lam, scales, b, w, config)
        except PwlsError as exc:
            raise PwlsError(f"{exc} (lambda={lam:.6g})") from exc

    top = _fit(lam_hi, beta0, w_ones)
    lam_lo, probe = lam_hi, top
    halvings = 0
    receding = 0
    headroom_prev = None
    while probe.flagged.size < config.lambda_min_rule * data.n:
        if halvings >= MAX_HALVINGS:
            raise PwlsError("lambda_min search failed")
        lam_lo /= 2.0
        probe = _fit(lam_lo, probe.beta, probe.w)
        halvings += 1
        kept = probe.w >= 1.0
        if not kept.any():
            continue
        # At a converged fit every kept row sits at or below its threshold,
        # so this ratio lives in (0, 1].  When the kept rows are fit exactly,
        # their residuals shrink like lambda while the thresholds shrink like
        # sqrt(lambda), so the ratio decays geometrically (factor 1/sqrt(2)
        # per halving) toward zero and the target fraction is unreachable.
        # Noisy data shows only shallow dips that rebound well above this
        # level (the kept maximum stays pinned near its threshold), so
        # demand sustained strong decay down to a tiny level before giving
        # up on the rule.
        headroom = float(np.max(
            np.abs(probe.residuals[kept])
            / np.sqrt(0.5 * lam_lo * scales.varpi[kept])))
        if headroom_prev is not None and headroom <= 0.8 * headroom_prev:
            receding += 1
            if receding >= 2 and headroom < 0.05:
                log.info("path: flagged fraction stuck below the rule at "
                         "lambda=%.4g; accepting the endpoint", lam_lo)
                break
        else:
            receding = 0
        headroom_prev = headroom
    if lam_lo >= lam_hi:
        lam_lo = lam_hi / 2.0  # degenerate: the top of the grid already flags enough
    grid = np.geomspace(lam_hi, lam_lo, config.grid_size)
    fits = []
    beta, w = beta0, w_ones
    for lam in grid:
        f = _fit(float(lam), beta, w)
        fits.append(f)
        beta, w = f.beta, f.w
    log.debug("path: lambda in [%.4g, %.4g], %d halvings", lam_lo, lam_hi, halvings)
    return SolutionPath(lambdas=grid, fits=fits, scales=scales)
