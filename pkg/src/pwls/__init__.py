"""Penalized weighted least squares: robust regression that jointly fits
coefficients and per-observation weights, flagging outliers where the
fitted weight drops below one."""

from .numerics import Dataset, PwlsError

__all__ = ["Dataset", "PwlsError"]
__version__ = "0.1.0"
