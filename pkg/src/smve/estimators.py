"""Reference estimators: least squares, hard thresholding, ML (for H = I)
and orthogonal matching pursuit.

Vector estimators take a batch of observations ``Y`` of shape ``(n, M)``
and return estimates of shape ``(n, N)``; a single observation of shape
``(M,)`` is also accepted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .errors import InvalidEstimator, InvalidInput, SingularSubmatrix, WrongModel
from .model import SparseProblem, rank_tolerance

__all__ = [
    "DiagonalEstimator",
    "VectorEstimator",
    "constant",
    "hard_threshold",
    "ht_mean_derivative",
    "ht_moments",
    "least_squares",
    "ls",
    "ls_variance",
    "ml",
    "omp",
    "omp_batch",
    "omp_estimator",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _npdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(z))


@dataclass(frozen=True, eq=False)
class DiagonalEstimator:
    """Estimator of ``x_k`` that looks only at ``y_k``.

    `map` must be vectorised. `breakpoints` lists the discontinuities of
    `map` so that quadrature can split there. `exact_moments(x, sigma2)`
    and `mean_derivative(x, sigma2)` are optional closed forms.
    """

    map: Callable[[np.ndarray], np.ndarray]
    label: str
    breakpoints: tuple = ()
    exact_moments: Callable | None = None
    mean_derivative: Callable | None = None

    def __call__(self, yk):
        return self.map(np.asarray(yk, dtype=float))

    def moments(self, x, sigma2):
        """Mean and variance of ``map(y)`` for ``y ~ N(x, sigma2)``."""
        if self.exact_moments is not None:
            mean, var = self.exact_moments(x, sigma2)
        else:
            mean, var = self._quadrature_moments(x, sigma2)
        if not (np.isfinite(mean) and np.isfinite(var)):
            raise InvalidEstimator(f"{self.label}: non-finite moments at x={x}")
        return float(mean), float(var)

    def _quadrature_moments(self, x, sigma2):
        sigma = math.sqrt(sigma2)
        lo, hi = x - 12 * sigma, x + 12 * sigma
        pts = sorted(b for b in self.breakpoints if lo < b < hi)

        def f(y):
            v = float(self.map(np.asarray(y)))
            w = _npdf((y - x) / sigma) / sigma
            return np.array([v * w, v * v * w])

        val, err = integrate.quad_vec(f, lo, hi, epsabs=1e-13, epsrel=1e-12, points=pts or None)
        m1, m2 = val
        return m1, max(m2 - m1 * m1, 0.0)

    def as_vector(self, problem: SparseProblem) -> VectorEstimator:
        """Apply the diagonal map to every entry of ``y`` (requires H = I)."""
        if not problem.model.is_identity:
            raise WrongModel("diagonal estimators are defined for H = I")
        return VectorEstimator(lambda Y: self.map(Y), self.label, diagonal=self)


@dataclass(frozen=True, eq=False)
class VectorEstimator:
    estimate: Callable[[np.ndarray], np.ndarray]
    label: str
    diagonal: DiagonalEstimator | None = None

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return self.estimate(y[None, :])[0]
        return self.estimate(y)


def ht_moments(T, x, sigma2):
    """Mean and variance of the hard-thresholding estimator.

    ``y ~ N(x, sigma2)`` and the estimate is ``y`` if ``|y| >= T`` else 0.
    Truncated-normal identities over ``R \\ [-T, T]`` with
    ``alpha = (-T - x)/sigma``, ``beta = (T - x)/sigma``. Broadcasts over
    `T` and `x`.
    """
    T = np.asarray(T, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(T < 0):
        raise InvalidInput("threshold must be nonnegative")
    sigma = math.sqrt(sigma2)
    a = (-T - x) / sigma
    b = (T - x) / sigma
    pa, pb = _npdf(a), _npdf(b)
    outside = ndtr(a) + ndtr(-b)
    dens = pb - pa
    u2 = b * pb - a * pa + outside
    mean = x * outside + sigma * dens
    second = x * x * outside + 2.0 * x * sigma * dens + sigma2 * u2
    var = np.maximum(second - mean * mean, 0.0)
    if mean.ndim == 0:
        return float(mean), float(var)
    return mean, var


def ht_mean_derivative(T, x, sigma2):
    """Derivative of the hard-thresholding mean with respect to ``x``."""
    sigma = math.sqrt(sigma2)
    a = (-T - x) / sigma
    b = (T - x) / sigma
    pa, pb = _npdf(a), _npdf(b)
    d = ndtr(a) + ndtr(-b) + x * (pb - pa) / sigma + b * pb - a * pa
    return float(d) if np.ndim(d) == 0 else d


def hard_threshold(T) -> DiagonalEstimator:
    """``y -> y * 1[|y| >= T]``; ``T = 0`` gives least squares."""
    T = float(T)
    if not (T >= 0 and math.isfinite(T)):
        raise InvalidInput(f"threshold must be finite and nonnegative, got {T}")
    return DiagonalEstimator(
        map=lambda y: np.where(np.abs(y) >= T, y, 0.0),
        label=f"HT(T={T:g})",
        breakpoints=(-T, T) if T > 0 else (),
        exact_moments=lambda x, s2: ht_moments(T, x, s2),
        mean_derivative=lambda x, s2: ht_mean_derivative(T, x, s2),
    )


def least_squares() -> DiagonalEstimator:
    """``y -> y``, the LS estimator for H = I."""
    return DiagonalEstimator(
        map=lambda y: np.array(y, dtype=float, copy=True),
        label="LS",
        exact_moments=lambda x, s2: (x, s2),
        mean_derivative=lambda x, s2: 1.0,
    )


def constant(c0) -> DiagonalEstimator:
    c0 = float(c0)
    return DiagonalEstimator(
        map=lambda y: np.full(np.shape(y), c0),
        label=f"const({c0:g})",
        exact_moments=lambda x, s2: (c0, 0.0),
        mean_derivative=lambda x, s2: 0.0,
    )


def ls(problem: SparseProblem) -> VectorEstimator:
    """``x_hat = H^+ y``."""
    if problem.model.is_identity:
        return VectorEstimator(lambda Y: np.array(Y, dtype=float, copy=True), "LS", diagonal=least_squares())
    Hp = problem.model.pinv()
    return VectorEstimator(lambda Y: Y @ Hp.T, "LS")


def ls_variance(problem: SparseProblem, k) -> float:
    """``sigma2 * e_k^T (H^T H)^+ e_k``."""
    model = problem.model
    return model.sigma2 * float(model.gram_pinv()[k, k])


def ml(problem: SparseProblem) -> VectorEstimator:
    """Keep the S largest-magnitude entries of ``y`` (H = I only).

    Magnitude ties go to the smaller index.
    """
    if not problem.model.is_identity:
        raise WrongModel("the ML estimator is implemented for H = I only")
    S = problem.S

    def estimate(Y):
        Y = np.asarray(Y, dtype=float)
        keep = np.argsort(-np.abs(Y), axis=1, kind="stable")[:, :S]
        out = np.zeros_like(Y)
        rows = np.arange(Y.shape[0])[:, None]
        out[rows, keep] = Y[rows, keep]
        return out

    return VectorEstimator(estimate, "ML")


def omp_batch(H, Y, iterations, on_singular="raise"):
    """Orthogonal matching pursuit applied to each row of `Y`.

    Each iteration picks the unselected column maximising ``|h_j^T r|``
    (ties to the smaller index) and refits all selected coefficients by
    least squares. With ``on_singular="nan"`` rows whose selected
    submatrix is rank deficient come back as NaN instead of raising.
    """
    H = np.asarray(H, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, N = Y.shape[0], H.shape[1]
    rows = np.arange(n)
    sel = np.empty((n, iterations), dtype=np.intp)
    taken = np.zeros((n, N), dtype=bool)
    R = Y.copy()
    z = np.zeros((n, 0))
    bad = np.zeros(n, dtype=bool)
    for t in range(iterations):
        C = np.abs(R @ H)
        C[taken] = -np.inf
        j = np.argmax(C, axis=1)
        sel[:, t] = j
        taken[rows, j] = True
        Hs = np.moveaxis(H[:, sel[:, : t + 1]], 0, 1)  # (n, M, t+1)
        Q, Rm = np.linalg.qr(Hs)
        diag = np.abs(np.diagonal(Rm, axis1=1, axis2=2))
        singular = diag.min(axis=1) <= rank_tolerance(np.linalg.norm(Hs, axis=(1, 2)), t + 1)
        if np.any(singular):
            if on_singular == "raise":
                raise SingularSubmatrix(f"selected columns {sel[np.argmax(singular), : t + 1].tolist()} are rank deficient")
            bad |= singular
            Rm[singular] = np.eye(t + 1)
        qty = np.einsum("nmt,nm->nt", Q, Y)
        z = np.linalg.solve(Rm, qty[..., None])[..., 0]
        R = Y - np.einsum("nmt,nt->nm", Hs, z)
    out = np.zeros((n, N))
    if iterations:
        out[rows[:, None], sel] = z
    out[bad] = np.nan
    return out


def omp_estimator(problem: SparseProblem, iterations=None) -> VectorEstimator:
    """OMP with a fixed number of iterations (default: S)."""
    it = problem.S if iterations is None else int(iterations)
    if not 0 <= it <= problem.S:
        raise InvalidInput(f"iterations must lie in [0, S={problem.S}]")
    H = problem.model.H
    if np.any(np.linalg.norm(H, axis=0) == 0):
        raise InvalidInput("OMP needs nonzero columns")
    return VectorEstimator(lambda Y: omp_batch(H, Y, it, on_singular="nan"), f"OMP({it})")


def omp(problem: SparseProblem, y, iterations=None):
    """Run OMP on a single observation and return the length-N estimate."""
    it = problem.S if iterations is None else int(iterations)
    if not 0 <= it <= problem.S:
        raise InvalidInput(f"iterations must lie in [0, S={problem.S}]")
    return omp_batch(problem.model.H, np.asarray(y, dtype=float)[None, :], it)[0]
