"""Penalty-level selection: BIC over a solution path, and stability selection
under random reweighting of the loss terms.

Stability selection draws B pairs of i.i.d. standard-exponential loss weights
(mean one, variance one), refits the whole path under each draw, and scores
each penalty level by the average Cohen's kappa agreement between the flagged
sets of paired fits.  Per-observation flagging frequencies across all 2B
perturbed fits estimate outlyingness probabilities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .numerics import Dataset, PwlsError, ols_solve
from .solver import PenaltyScales, PwlsFit, SolutionPath, SolverConfig, _alternate, objective

log = logging.getLogger(__name__)

# a pair is usable at a penalty level only if both of its fits succeeded;
# more than this fraction of unusable pairs at any level is an error
MAX_FAILED_PAIR_FRACTION = 0.2


@dataclass
class BicReport:
    values: np.ndarray
    argmin: int
    lambda_hat: float


@dataclass
class RandomWeights:
    omega: np.ndarray
    seed: int


@dataclass
class StabilityReport:
    lambdas: np.ndarray
    s_curve: np.ndarray
    outlier_prob: np.ndarray  # n x len(lambdas) flagging frequencies
    lambda_hat: float
    B: int
    seed: int
    failed_pairs: np.ndarray  # per-lambda count of skipped pairs


def bic(fit: PwlsFit, n: int, p: int) -> float:
    """(n-p) log(||w*r||^2 / ||w||^2) + k_hat (log(n-p) + 1).

    k_hat counts flagged observations.  A zero weighted residual sum returns
    -inf so a perfectly interpolating fit always wins.
    """
    wr2 = float(np.sum((fit.w * fit.residuals) ** 2))
    if wr2 <= 0.0:
        return float("-inf")
    w2 = float(np.sum(fit.w * fit.w))
    return (n - p) * math.log(wr2 / w2) + fit.flagged.size * (math.log(n - p) + 1.0)


def select_bic(path: SolutionPath, data: Dataset) -> BicReport:
    """Minimize BIC over the path; ties resolve toward the larger penalty."""
    if not path.fits:
        raise PwlsError("empty solution path")
    values = np.array([bic(f, data.n, data.p) for f in path.fits])
    best = 0
    for i in range(1, len(values)):
        if values[i] < values[best]:  # strict: earlier (larger lambda) wins ties
            best = i
    return BicReport(values=values, argmin=best, lambda_hat=float(path.lambdas[best]))


def draw_weights(n: int, seed: int) -> RandomWeights:
    """n i.i.d. standard exponential loss weights (mean 1, variance 1)."""
    omega = np.random.default_rng(seed).standard_exponential(n)
    return RandomWeights(omega=np.maximum(omega, 1e-300), seed=seed)


def perturbed_fit(data: Dataset, lam: float, scales: PenaltyScales,
                  weights: RandomWeights, config: SolverConfig | None = None,
                  init_beta=None, init_w=None) -> PwlsFit:
    """Alternating fit of the randomly reweighted objective

        sum_i omega_i w_i^2 r_i^2 + lam sum_i varpi_i |log w_i|

    whose weight update flags observation i when
    |r_i| > sqrt(lam varpi_i / (2 omega_i)).  With omega identically one this
    reproduces solver.fit exactly.
    """
    config = config or SolverConfig()
    if not lam > 0:
        raise PwlsError("lambda must be positive")
    omega = np.asarray(weights.omega, dtype=float).reshape(-1)
    if omega.shape[0] != data.n or (omega <= 0).any():
        raise PwlsError("loss weights must be positive")
    beta0 = ols_solve(data) if init_beta is None else init_beta
    w0 = np.ones(data.n) if init_w is None else np.asarray(init_w, dtype=float)
    beta, w, r, iterations, converged = _alternate(
        data, lam, scales.varpi, omega, beta0, w0, config)
    wr2 = float(np.sum(omega * (w * r) ** 2))
    return PwlsFit(
        beta=beta,
        w=w,
        residuals=r,
        flagged=np.flatnonzero(w < 1.0),
        objective=objective(w, r, lam, scales.varpi, loss_weights=omega),
        lam=float(lam),
        sigma2=wr2 / (data.n - data.p),
        iterations=iterations,
        converged=converged,
    )


def kappa(set_a, set_b, n: int) -> float:
    """Cohen's kappa agreement between two flag sets over n observations.

    kappa = (p_o - p_e) / (1 - p_e) with observed agreement p_o and chance
    agreement p_e = q_a q_b + (1 - q_a)(1 - q_b).  Two empty or two full sets
    agree perfectly by convention (kappa = 1).
    """
    a = frozenset(int(i) for i in set_a)
    b = frozenset(int(i) for i in set_b)
    if n < 1:
        raise PwlsError("n must be positive")
    if len(a) > n or len(b) > n:
        raise PwlsError("flag set larger than n")
    po = (n - len(a ^ b)) / n
    qa, qb = len(a) / n, len(b) / n
    pe = qa * qb + (1.0 - qa) * (1.0 - qb)
    if pe >= 1.0:
        return 1.0
    return (po - pe) / (1.0 - pe)


def stability_curve(data: Dataset, path_lambdas, scales: PenaltyScales,
                    B: int, seed: int, config: SolverConfig | None = None,
                    draws: np.ndarray | None = None) -> StabilityReport:
    """Random-weighting stability selection over an existing penalty grid.

    Draws B pairs of exponential loss-weight vectors (2B draws total) from
    the given seed, runs a warm-started perturbed path per draw, and returns
    the per-lambda mean-kappa curve, the n x G flagging-frequency matrix
    (denominator 2B), and the argmax penalty with ties toward larger lambda.

    draws, when given, overrides the random pairs (shape (B, 2, n)); this is
    a testing hook.

    A perturbed fit that fails is recorded and its pair skipped at that
    lambda; more than 20% skipped pairs at any lambda is an error.
    """
    config = config or SolverConfig()
    lambdas = np.asarray(path_lambdas, dtype=float).reshape(-1)
    if lambdas.size == 0 or (lambdas <= 0).any():
        raise PwlsError("invalid penalty grid")
    if B < 1:
        raise PwlsError("B must be at least 1")
    G, n = lambdas.size, data.n
    if draws is None:
        omega_all = np.maximum(
            np.random.default_rng(seed).standard_exponential((B, 2, n)), 1e-300)
    else:
        omega_all = np.asarray(draws, dtype=float)
        if omega_all.shape != (B, 2, n):
            raise PwlsError("draws must have shape (B, 2, n)")

    beta_anchor = ols_solve(data)
    flags = np.zeros((B, 2, G, n), dtype=bool)
    ok = np.zeros((B, 2, G), dtype=bool)
    for b in range(B):
        for k in (0, 1):
            rw = RandomWeights(omega=omega_all[b, k], seed=seed)
            beta, w = beta_anchor, np.ones(n)
            for gi, lam in enumerate(lambdas):
                try:
                    f = perturbed_fit(data, float(lam), scales, rw, config,
                                      init_beta=beta, init_w=w)
                except PwlsError:
                    log.warning("perturbed fit failed: pair %d member %d lambda %.4g",
                                b, k, lam)
                    beta, w = beta_anchor, np.ones(n)
                    continue
                flags[b, k, gi, f.flagged] = True
                ok[b, k, gi] = True
                beta, w = f.beta, f.w

    pair_ok = ok[:, 0, :] & ok[:, 1, :]
    failed = B - pair_ok.sum(axis=0)
    if (failed > MAX_FAILED_PAIR_FRACTION * B).any():
        bad = lambdas[np.argmax(failed)]
        raise PwlsError(f"too many perturbed pairs failed (lambda={bad:.6g})")

    s_curve = np.empty(G)
    for gi in range(G):
        vals = [kappa(np.flatnonzero(flags[b, 0, gi]),
                      np.flatnonzero(flags[b, 1, gi]), n)
                for b in range(B) if pair_ok[b, gi]]
        s_curve[gi] = float(np.mean(vals))
    outlier_prob = flags.sum(axis=(0, 1)).T / (2.0 * B)  # n x G

    best = 0
    for gi in range(1, G):
        if s_curve[gi] > s_curve[best]:  # strict: larger lambda wins ties
            best = gi
    return StabilityReport(
        lambdas=lambdas,
        s_curve=s_curve,
        outlier_prob=outlier_prob,
        lambda_hat=float(lambdas[best]),
        B=B,
        seed=seed,
        failed_pairs=failed,
    )
