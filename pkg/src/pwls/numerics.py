"""Dense least-squares primitives shared by every estimator in the package.

All solves go through orthogonal factorizations (SVD / QR), never through
explicitly formed normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# relative singular-value cutoff below which a design is declared rank deficient
RANK_RTOL = 1e-12

# leverages closer to 1 than this break studentization
LEVERAGE_TOL = 1e-12


class PwlsError(RuntimeError):
    """Raised when an estimation routine cannot produce a valid result."""


@dataclass
class Dataset:
    """A dense regression problem.

    X is n x p with n > p >= 1 and full column rank, y has length n.
    Both arrays are coerced to float64 and validated on construction.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise PwlsError("X must be a 2-d array")
        n, p = X.shape
        if p < 1 or n <= p:
            raise PwlsError(f"need n > p >= 1, got n={n}, p={p}")
        if y.shape[0] != n:
            raise PwlsError(f"y has length {y.shape[0]}, expected {n}")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise PwlsError("non-finite entries in data")
        s = np.linalg.svd(X, compute_uv=False)
        if s[-1] <= RANK_RTOL * s[0]:
            raise PwlsError("rank-deficient design")
        self.X = X
        self.y = y

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def ols_solve(data: Dataset, row_weights: np.ndarray | None = None) -> np.ndarray:
    """Minimize sum_i row_weights_i * (y_i - x_i' beta)^2.

    row_weights multiply the squared residuals; omitted means ordinary least
    squares.  The solve row-scales by sqrt(weight) and uses an SVD-backed
    least-squares routine.

    Raises PwlsError("singular design") when the (weighted) design loses rank.
    """
    X, y = data.X, data.y
    if row_weights is not None:
        w = np.asarray(row_weights, dtype=float).reshape(-1)
        if w.shape[0] != data.n:
            raise PwlsError("row_weights length mismatch")
        if not np.isfinite(w).all() or (w < 0).any():
            raise PwlsError("row_weights must be finite and nonnegative")
        if int((w > 0).sum()) < data.p:
            raise PwlsError("singular design")
        sw = np.sqrt(w)
        X = X * sw[:, None]
        y = y * sw
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=RANK_RTOL)
    if rank < data.p:
        raise PwlsError("singular design")
    return beta


def hat_diag(data: Dataset) -> np.ndarray:
    """Diagonal of the projection matrix X (X'X)^{-1} X', via a thin QR."""
    q, r = np.linalg.qr(data.X, mode="reduced")
    d = np.abs(np.diag(r))
    if d.min() <= RANK_RTOL * max(d.max(), np.finfo(float).tiny):
        raise PwlsError("singular design")
    return np.einsum("ij,ij->i", q, q)


def lambda_max(data: Dataset) -> float:
    """Largest useful penalty level for a solution path.

    Computed as the sup-norm of the studentized least-squares residual
    vector, (y_i - x_i' beta_ols) / sqrt(1 - h_ii).
    """
    beta = ols_solve(data)
    r = data.y - data.X @ beta
    d = 1.0 - hat_diag(data)
    if d.min() <= LEVERAGE_TOL:
        raise PwlsError("degenerate leverage")
    return float(np.max(np.abs(r) / np.sqrt(d)))
