"""Kernel and likelihood-ratio functions of the (sparse) linear Gaussian model.

The kernel centred at ``x0`` is the correlation of likelihood ratios,
``R(x1, x2) = E_x0{rho(y, x1) rho(y, x2)}``, which for the linear Gaussian
model has the closed form ``exp((x2 - x0)^T H^T H (x1 - x0) / sigma2)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, OverflowWarning
from .model import GaussianLinearModel, support

_LOG_MAX = math.log(np.finfo(float).max)


def _exp_saturating(log_value):
    log_value = np.asarray(log_value, dtype=float)
    if np.any(log_value > _LOG_MAX):
        warnings.warn("exponent exceeds the float range; saturating to +inf", OverflowWarning, stacklevel=3)
    with np.errstate(over="ignore"):
        out = np.exp(log_value)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class KernelEval:
    """Kernel and likelihood ratio of `model` centred at `x0`.

    When `S` is given, parameter arguments must be S-sparse.
    """

    model: GaussianLinearModel
    x0: np.ndarray
    S: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "x0", self._param(self.x0))

    def _param(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.model.N,):
            raise InvalidInput(f"parameter must have length {self.model.N}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInput("parameter has non-finite entries")
        if self.S is not None and support(x).size > self.S:
            raise InvalidInput(f"parameter is not {self.S}-sparse")
        return x

    def log_kernel(self, x1, x2) -> float:
        H = self.model.H
        d1 = H @ (self._param(x1) - self.x0)
        d2 = H @ (self._param(x2) - self.x0)
        return float(d2 @ d1) / self.model.sigma2

    def kernel(self, x1, x2) -> float:
        return _exp_saturating(self.log_kernel(x1, x2))

    def gram(self, points) -> np.ndarray:
        """Kernel matrix ``[R(p_i, p_j)]`` over a list of parameter points."""
        P = np.array([self._param(p) for p in points]) - self.x0
        D = P @ self.model.H.T
        return _exp_saturating(D @ D.T / self.model.sigma2)

    def log_likelihood_ratio(self, y, x):
        """``log f(y; x) - log f(y; x0)``; `y` may be a batch of rows."""
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.model.M:
            raise InvalidInput(f"observation must have length {self.model.M}")
        if not np.all(np.isfinite(y)):
            raise InvalidInput("observation has non-finite entries")
        H = self.model.H
        x = self._param(x)
        Hx, Hx0 = H @ x, H @ self.x0
        quad = 2.0 * (y @ (Hx0 - Hx)) + Hx @ Hx - Hx0 @ Hx0
        return -quad / (2.0 * self.model.sigma2)

    def likelihood_ratio(self, y, x):
        return _exp_saturating(self.log_likelihood_ratio(y, x))

