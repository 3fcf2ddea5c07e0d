"""Exact Barankin bound and LMV estimator for diagonal bias functions in the
sparse signal in noise model (H = I).

Support ordering convention for phi/psi: descending magnitude of the
entries of x0, ties broken by the smaller index. The sum-product defining
phi telescopes to ``1 - prod(1 - p_i)``, so the value does not actually
depend on the ordering; the literal sum is kept for traceability.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .errors import (
    InvalidBias,
    InvalidInput,
    OrderTooLarge,
    QuadratureFailure,
    TruncationWarning,
)
from .estimators import DiagonalEstimator
from .model import support

__all__ = [
    "BarankinResult",
    "DiagonalBiasSpec",
    "barankin_diag",
    "barankin_from_estimator",
    "hermite",
    "hermite_orthonormal",
    "is_first_case",
    "lmv_estimate",
    "ml_coefficients",
    "phi_factor",
    "psi_factor",
    "support_order",
]

HERMITE_MAX_ORDER = 500
DEFAULT_L_MAX = 64
L_MAX_CAP = 256
TAIL_RTOL = 1e-12
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def hermite(l, x):
    """Probabilists' Hermite polynomial ``He_l(x)`` by the three-term recurrence."""
    l = int(l)
    if l < 0:
        raise InvalidInput("Hermite order must be nonnegative")
    if l > HERMITE_MAX_ORDER:
        raise OrderTooLarge(f"order {l} exceeds the guard {HERMITE_MAX_ORDER}")
    x = np.asarray(x, dtype=float)
    h_prev, h = np.ones_like(x), x.copy()
    if l == 0:
        h = h_prev
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            for j in range(1, l):
                h_prev, h = h, x * h - j * h_prev
    return float(h) if h.ndim == 0 else h


def hermite_orthonormal(L, u):
    """``h_l(u) = He_l(u)/sqrt(l!)`` for ``l = 0..L``, stacked on the first axis.

    Uses the normalised recurrence, which stays in range far beyond the
    point where ``He_l`` or ``l!`` overflow.
    """
    if L > HERMITE_MAX_ORDER:
        raise OrderTooLarge(f"order {L} exceeds the guard {HERMITE_MAX_ORDER}")
    u = np.asarray(u, dtype=float)
    out = np.empty((L + 1,) + u.shape)
    out[0] = 1.0
    if L >= 1:
        out[1] = u
    for l in range(1, L):
        out[l + 1] = (u * out[l] - math.sqrt(l) * out[l - 1]) / math.sqrt(l + 1)
    return out


def _check_x0(x0, k, S):
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1 or not np.all(np.isfinite(x0)):
        raise InvalidInput("x0 must be a finite vector")
    if not 0 <= k < x0.size:
        raise InvalidInput(f"k must lie in [0, {x0.size - 1}]")
    if not 1 <= S <= x0.size:
        raise InvalidInput(f"S must lie in [1, {x0.size}]")
    if support(x0).size > S:
        raise InvalidInput(f"x0 is not {S}-sparse")
    return x0


def is_first_case(x0, k, S) -> bool:
    """True iff ``|supp(x0) U {k}| <= S``."""
    supp = support(x0)
    return supp.size + (0 if k in supp else 1) <= S


def support_order(x0):
    """Support indices sorted by descending magnitude, ties to the smaller index."""
    x0 = np.asarray(x0, dtype=float)
    supp = support(x0)
    return supp[np.argsort(-np.abs(x0[supp]), kind="stable")]


def _sum_product(p):
    """``sum_i p_i prod_{j<i} (1 - p_j)`` along the last axis."""
    total = np.zeros(p.shape[:-1])
    carry = np.ones(p.shape[:-1])
    for i in range(p.shape[-1]):
        total = total + p[..., i] * carry
        carry = carry * (1.0 - p[..., i])
    return total


def phi_factor(x0, k, S, sigma2) -> float:
    x0 = _check_x0(x0, k, S)
    if is_first_case(x0, k, S):
        return 1.0
    xs = x0[support_order(x0)]
    return float(_sum_product(np.exp(-xs**2 / sigma2)))


def psi_factor(y, x0, k, S, sigma2):
    """Data-dependent correction factor; `y` may be a batch of rows.

    The result does not depend on ``y_k``.
    """
    x0 = _check_x0(x0, k, S)
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != x0.size:
        raise InvalidInput(f"observation must have length {x0.size}")
    if is_first_case(x0, k, S):
        return 1.0 if y.ndim == 1 else np.ones(y.shape[0])
    idx = support_order(x0)
    xs = x0[idx]
    with np.errstate(over="ignore"):
        q = np.exp(-(xs**2 + 2.0 * y[..., idx] * xs) / (2.0 * sigma2))
    out = _sum_product(q)
    return float(out) if out.ndim == 0 else out


def _log_terms(m, sigma2):
    """``log(m_l^2 sigma^{2l} / l!)`` (``-inf`` where ``m_l = 0``)."""
    m = np.asarray(m, dtype=float)
    l = np.arange(m.size)
    with np.errstate(divide="ignore"):
        return 2.0 * np.log(np.abs(m)) + l * math.log(sigma2) - gammaln(l + 1.0)


@dataclass(frozen=True, eq=False)
class DiagonalBiasSpec:
    """Power-series coefficients ``m_l`` of the prescribed mean ``gamma``
    around ``x0_k`` (``m_0 = gamma(x0)``)."""

    m: np.ndarray
    source: str = "explicit"
    converged: bool = field(default=True, compare=False)

    def __post_init__(self):
        m = np.array(self.m, dtype=float).ravel()
        if m.size == 0 or not np.all(np.isfinite(m)):
            raise InvalidBias("coefficients must be a nonempty finite sequence")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @property
    def L_max(self) -> int:
        return self.m.size - 1

    @property
    def gamma_x0(self) -> float:
        return float(self.m[0])

    def terms(self, sigma2):
        """``m_l^2 sigma^{2l} / l!`` for every stored ``l``."""
        return np.exp(_log_terms(self.m, sigma2))

    def B_c(self, sigma2) -> float:
        return float(math.fsum(self.terms(sigma2)))

    def tail_estimate(self, sigma2) -> float:
        """Ratio-test estimate of the truncated tail of ``B_c``.

        Returns ``inf`` when the last terms do not decay.
        """
        return _tail_estimate(self.terms(sigma2))

    def check(self, sigma2):
        """Raise on growing terms; warn when coefficients computed from an
        estimator leave a non-negligible truncation tail."""
        t = self.terms(sigma2)
        if t.size >= 8:
            tail = t[-8:]
            if np.all(np.diff(tail) >= 0) and tail[-1] > 0 and tail[-1] >= t.max():
                raise InvalidBias("B_c terms grow with l; the bias function is not valid here")
        # explicit coefficients describe a polynomial mean, which has no tail
        if self.source != "explicit" and not _tail_ok(t):
            warnings.warn(
                f"B_c truncated at L_max={self.L_max} with a non-negligible tail",
                TruncationWarning,
                stacklevel=3,
            )


@dataclass(frozen=True)
class BarankinResult:
    """Minimum achievable variance at x0 with its ingredients.

    `value` is ``phi * (B_c - gamma_x0^2)``, the variance of the
    mean-preserving LMV estimator. `naive_value` is ``B_c * phi - gamma_x0^2``,
    which scales the whole second moment by phi; it agrees with `value`
    whenever ``phi = 1`` or ``gamma_x0 = 0`` and can be negative otherwise.
    """

    value: float
    phi: float
    B_c: float
    gamma_x0: float
    naive_value: float


def _result(phi, centred, gamma0):
    B_c = centred + gamma0 * gamma0
    return BarankinResult(
        value=max(phi * centred, 0.0),
        phi=phi,
        B_c=B_c,
        gamma_x0=gamma0,
        naive_value=B_c * phi - gamma0 * gamma0,
    )


def barankin_diag(bias: DiagonalBiasSpec, x0, k, S, sigma2) -> BarankinResult:
    """Barankin bound for a diagonal prescribed mean given by its coefficients."""
    x0 = _check_x0(x0, k, S)
    bias.check(sigma2)
    phi = phi_factor(x0, k, S, sigma2)
    centred = float(math.fsum(bias.terms(sigma2)[1:]))
    return _result(phi, centred, bias.gamma_x0)


def barankin_from_estimator(est: DiagonalEstimator, x0, k, S, sigma2) -> BarankinResult:
    """Barankin bound for the bias of a diagonal estimator, from its moments."""
    x0 = _check_x0(x0, k, S)
    mean, var = est.moments(float(x0[k]), sigma2)
    phi = phi_factor(x0, k, S, sigma2)
    return _result(phi, var, mean)


def lmv_estimate(est: DiagonalEstimator, y, x0, k, S, sigma2):
    """LMV estimator at x0 for the bias of `est`; `y` may be a batch of rows.

    ``gamma0 + (est(y_k) - gamma0) * psi(y, x0)`` with ``gamma0`` the mean
    of `est` at x0. For odd estimators (``gamma0 = 0`` off the support)
    this is ``est(y_k) * psi``.
    """
    x0 = _check_x0(x0, k, S)
    y = np.asarray(y, dtype=float)
    xk = est(y[..., k])
    if is_first_case(x0, k, S):
        return xk
    gamma0, _ = est.moments(float(x0[k]), sigma2)
    psi = psi_factor(y, x0, k, S, sigma2)
    if gamma0 == 0.0:
        return xk * psi
    return gamma0 + (xk - gamma0) * psi


def _tail_estimate(t):
    """Geometric envelope of the series tail from its last four terms."""
    last = np.asarray(t, dtype=float)[-4:]
    if not np.any(last):
        return 0.0
    if last.size < 2:
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(last[:-1] > 0, last[1:] / last[:-1], np.where(last[1:] == 0, 0.0, np.inf))
    r = float(ratios.max())
    if r >= 1.0:
        return math.inf
    return float(last.max() * r / (1.0 - r))


def _tail_ok(t):
    total = max(float(np.sum(t)), np.finfo(float).tiny)
    # terms at the quadrature noise floor (|c_l| ~ 1e-12) count as converged
    if np.max(np.asarray(t)[-4:]) <= 1e-24 * max(total, 1.0):
        return True
    return _tail_estimate(t) <= TAIL_RTOL * total


def _projections(est, x0k, sigma, L):
    """``c_l = <x_hat, h_l>`` for ``l = 0..L`` by adaptive quadrature."""
    pts = sorted({(b - x0k) / sigma for b in est.breakpoints if abs(b - x0k) < 12 * sigma})

    def f(u):
        v = float(est.map(np.asarray(x0k + sigma * u)))
        return v * math.exp(-0.5 * u * u) / _SQRT_2PI * hermite_orthonormal(L, u)

    res, err, info = integrate.quad_vec(
        f, -12.0, 12.0, epsabs=1e-12, epsrel=1e-12, points=pts or None, full_output=True, limit=4000
    )
    if not np.all(np.isfinite(res)) or (not info.success and err > 1e-10 * max(1.0, float(np.linalg.norm(res)))):
        raise QuadratureFailure(f"{est.label}: quadrature did not converge (error estimate {err:.3g})")
    return res


def ml_coefficients(est: DiagonalEstimator, x0k, sigma2, L_max=None) -> DiagonalBiasSpec:
    """Power-series coefficients ``m_l`` of the mean of `est` around ``x0k``.

    ``m_l = sqrt(l!)/sigma^l * <x_hat, h_l>`` with the orthonormal Hermite
    basis ``h_l``. With ``L_max=None`` the order starts at 64 and doubles up
    to 256 until the ratio test on the ``B_c`` tail passes; a
    :class:`TruncationWarning` is issued if it never does. An explicit
    `L_max` is used as given.
    """
    sigma = math.sqrt(sigma2)
    x0k = float(x0k)
    if L_max is not None:
        c = _projections(est, x0k, sigma, int(L_max))
        converged = _tail_ok(c * c)
    else:
        L = DEFAULT_L_MAX
        while True:
            c = _projections(est, x0k, sigma, L)
            converged = _tail_ok(c * c)
            if converged or L >= L_MAX_CAP:
                break
            L = min(2 * L, L_MAX_CAP)
        if not converged:
            warnings.warn(
                f"{est.label}: coefficient tail not negligible at L_max={L}",
                TruncationWarning,
                stacklevel=2,
            )
    l = np.arange(c.size)
    m = c * np.exp(0.5 * gammaln(l + 1.0) - l * math.log(sigma))
    return DiagonalBiasSpec(m, source="estimator", converged=bool(converged))
