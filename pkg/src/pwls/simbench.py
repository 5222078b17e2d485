"""Synthetic benchmarks for outlier detection: mean-shift contamination on a
homogeneous design, and a heteroscedastic variant where both the noise and
the planted shifts ride on a variance-scale function.

Metrics per repetition: masking (fraction of planted outliers missed),
swamping (fraction of clean observations flagged), and joint detection
(indicator that no planted outlier is missed).  Aggregates are reported in
percent across repetitions.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import hetero, solver, tuning
from .numerics import Dataset, PwlsError

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.05

METHODS = ("pwls", "hpwls")


@dataclass
class HomoSimConfig:
    """Equicorrelated uniform design with k mean-shifted observations.

    Rows of the design are u' S where u has i.i.d. Uniform(-15, 15) entries
    and S is the symmetric square root of the equicorrelation matrix
    (unit diagonal, 0.5 off-diagonal).  When leverage is set, the first k
    rows are overwritten by that constant after the construction.  The
    response is y = X 1 + gamma + eps with gamma_i = r for i < k and
    standard normal eps.  Draw order: design first, then noise.
    """

    n: int = 1000
    p: int = 15
    k: int = 100
    r: float = 5.0
    leverage: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.k <= self.n):
            raise PwlsError("need 0 <= k <= n")
        if self.n <= self.p:
            raise PwlsError("need n > p")


@dataclass
class HeteroSimConfig:
    """AR(1)-correlated normal design with scale-riding shifts.

    x_i ~ N(0, Sigma) with Sigma_ij = 0.5^|i-j|; the variance covariate is
    z_i = (1, x_ip)' with true theta.  Case 1 uses g(v) = |v| both to
    generate and to fit; case 2 generates with g(v) = exp(|v|) and fits
    g(v) = sqrt(|v|).  Noise e_i ~ N(0, pi/2), so E|e_i| = 1, and
    y = X 1 + (gamma + e) * g(z' theta) with gamma_i = r for i < k.
    """

    n: int = 1000
    p: int = 15
    k: int = 10
    r: float = 20.0
    case: int = 1
    theta_true: tuple = (1.0, 0.7)
    seed: int = 0

    def __post_init__(self):
        if self.case not in (1, 2):
            raise PwlsError("case must be 1 or 2")
        if not (0 <= self.k <= self.n):
            raise PwlsError("need 0 <= k <= n")
        if self.n <= self.p:
            raise PwlsError("need n > p")


@dataclass
class MetricsReport:
    jd: float  # percent of repetitions with zero masking
    masking: float  # mean percent of planted outliers missed
    swamping: float  # mean percent of clean observations flagged
    reps: int
    failures: int


def equicorrelation_sqrt(p: int, off: float = 0.5) -> np.ndarray:
    """Symmetric square root of the unit-diagonal equicorrelation matrix."""
    sigma = np.full((p, p), off)
    np.fill_diagonal(sigma, 1.0)
    vals, vecs = np.linalg.eigh(sigma)
    return (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T


def gen_homo(cfg: HomoSimConfig):
    """Draw one homogeneous-benchmark dataset; returns (Dataset, truth set)."""
    rng = np.random.default_rng(cfg.seed)
    u = rng.uniform(-15.0, 15.0, size=(cfg.n, cfg.p))
    X = u @ equicorrelation_sqrt(cfg.p)
    if cfg.leverage is not None:
        X[:cfg.k, :] = cfg.leverage
    eps = rng.standard_normal(cfg.n)
    gamma = np.zeros(cfg.n)
    gamma[:cfg.k] = cfg.r
    y = X @ np.ones(cfg.p) + gamma + eps
    return Dataset(X=X, y=y), frozenset(range(cfg.k))


def gen_hetero(cfg: HeteroSimConfig):
    """Draw one heteroscedastic-benchmark dataset.

    Returns (Dataset, truth set, true VarianceModel).  Draw order: design,
    then noise.
    """
    rng = np.random.default_rng(cfg.seed)
    idx = np.arange(cfg.p)
    sigma = 0.5 ** np.abs(idx[:, None] - idx[None, :])
    chol = np.linalg.cholesky(sigma)
    X = rng.standard_normal((cfg.n, cfg.p)) @ chol.T
    zspec = hetero.ZSpec(columns=(cfg.p - 1,), intercept=True)
    theta = np.asarray(cfg.theta_true, dtype=float)
    v = zspec.matrix(X) @ theta
    g = g_true(cfg.case, v)
    e = rng.standard_normal(cfg.n) * np.sqrt(np.pi / 2.0)
    gamma = np.zeros(cfg.n)
    gamma[:cfg.k] = cfg.r
    y = X @ np.ones(cfg.p) + (gamma + e) * g
    truth = frozenset(range(cfg.k))
    model = hetero.VarianceModel(g_kind=true_g_kind(cfg.case), theta=theta,
                                 z_spec=zspec)
    return Dataset(X=X, y=y), truth, model


def g_true(case: int, v):
    return np.abs(v) if case == 1 else np.exp(np.abs(v))


def true_g_kind(case: int) -> str:
    return "absolute" if case == 1 else "exp-absolute"


def fitted_g_kind(case: int) -> str:
    # case 2 deliberately fits a misspecified scale shape
    return "absolute" if case == 1 else "sqrt-absolute"


def score(truth, flagged, n: int):
    """(masking, swamping, joint) as fractions for one repetition."""
    t = frozenset(int(i) for i in truth)
    f = frozenset(int(i) for i in flagged)
    if len(t) > n or len(f) > n:
        raise PwlsError("flag set larger than n")
    masking = len(t - f) / len(t) if t else 0.0
    swamping = len(f - t) / (n - len(t)) if n > len(t) else 0.0
    return masking, swamping, masking == 0.0


def pwls_flagged(data: Dataset, config: solver.SolverConfig | None = None):
    """Full adaptive pipeline: pilot, scales, path, BIC; returns flagged set."""
    config = config or solver.SolverConfig()
    _, w0 = solver.initial_estimates(data, config)
    path = solver.solution_path(data, solver.adaptive_scales(w0), config)
    pick = tuning.select_bic(path, data)
    return frozenset(int(i) for i in path.fits[pick.argmin].flagged)


def hpwls_flagged(data: Dataset, z_spec, g_kind: str,
                  config: solver.SolverConfig | None = None):
    """Heteroscedastic pipeline: three steps, path, BIC; returns flagged set."""
    config = config or solver.SolverConfig()
    path = hetero.hpwls_path(data, z_spec, g_kind, None, config)
    pick = tuning.select_bic(path, data)
    return frozenset(int(i) for i in path.fits[pick.argmin].flagged)


def _one_rep(method: str, cfg, rep_seed: int):
    if isinstance(cfg, HomoSimConfig):
        data, truth = gen_homo(
            HomoSimConfig(n=cfg.n, p=cfg.p, k=cfg.k, r=cfg.r,
                          leverage=cfg.leverage, seed=rep_seed))
        if method == "hpwls":
            raise PwlsError("hpwls needs a heteroscedastic scenario")
        flagged = pwls_flagged(data)
    else:
        data, truth, _ = gen_hetero(
            HeteroSimConfig(n=cfg.n, p=cfg.p, k=cfg.k, r=cfg.r, case=cfg.case,
                            theta_true=cfg.theta_true, seed=rep_seed))
        if method == "pwls":
            flagged = pwls_flagged(data)
        else:
            zspec = hetero.ZSpec(columns=(cfg.p - 1,), intercept=True)
            flagged = hpwls_flagged(data, zspec, fitted_g_kind(cfg.case))
    return score(truth, flagged, data.n)


def run_benchmark(method: str, cfg, reps: int, base_seed: int,
                  workers: int = 1) -> MetricsReport:
    """Run the pipeline over reps datasets seeded base_seed + index.

    Repetitions are independent; with workers > 1 they run in a process
    pool.  Results reduce in repetition order either way.  A repetition
    whose pipeline raises is recorded as a failure; more than 5% failures
    is an error.
    """
    if method not in METHODS:
        raise PwlsError(f"unknown method: {method}")
    if reps < 1:
        raise PwlsError("reps must be at least 1")
    seeds = [base_seed + i for i in range(reps)]
    outcomes = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_one_rep, method, cfg, s) for s in seeds]
            for i, fut in enumerate(futures):
                try:
                    outcomes.append(fut.result())
                except PwlsError as exc:
                    log.warning("rep %d failed: %s", i, exc)
                    outcomes.append(None)
    else:
        for i, s in enumerate(seeds):
            try:
                outcomes.append(_one_rep(method, cfg, s))
            except PwlsError as exc:
                log.warning("rep %d failed: %s", i, exc)
                outcomes.append(None)
    good = [o for o in outcomes if o is not None]
    failures = reps - len(good)
    if failures > MAX_FAILURE_FRACTION * reps:
        raise PwlsError(f"{failures} of {reps} repetitions failed")
    if not good:
        raise PwlsError("no successful repetitions")
    masking = 100.0 * float(np.mean([o[0] for o in good]))
    swamping = 100.0 * float(np.mean([o[1] for o in good]))
    jd = 100.0 * float(np.mean([1.0 if o[2] else 0.0 for o in good]))
    return MetricsReport(jd=jd, masking=masking, swamping=swamping,
                         reps=reps, failures=failures)


def format_row(method: str, cfg, report: MetricsReport) -> str:
    """One CSV row: method,k,p,scenario,JD,M,S,reps,failures."""
    if isinstance(cfg, HomoSimConfig):
        scenario = f"homo-r{cfg.r:g}" + (
            f"-L{cfg.leverage:g}" if cfg.leverage is not None else "-noL")
    else:
        scenario = f"hetero-case{cfg.case}-r{cfg.r:g}"
    return (f"{method},{cfg.k},{cfg.p},{scenario},"
            f"{report.jd:.10g},{report.masking:.10g},{report.swamping:.10g},"
            f"{report.reps},{report.failures}")
