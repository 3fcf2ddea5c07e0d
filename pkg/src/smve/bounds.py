"""Lower bounds on the variance of estimators of ``x_k`` in the sparse
linear Gaussian model with a prescribed bias function.

Index sets are 0-based. ``b`` denotes the vector with entries
``delta_{k,l} + dc/dx_l``.
"""
from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import GradientUnavailable, InvalidInput, InvalidRip, SingularSubmatrix, WrongModel
from .model import SparseProblem, check_unit_columns, coherence, support, thin_svd

__all__ = [
    "BiasSpec",
    "BoundKind",
    "BoundReport",
    "KSelector",
    "Provenance",
    "coherence_bound",
    "hcrb_ssnm",
    "k_selector_default",
    "lgm_crb",
    "oracle_crb",
    "projection_bound_1",
    "projection_bound_2",
    "rip_bound",
    "scalar_bound",
    "sparse_crb",
    "vector_bound",
    "vector_bound_components",
]


class Provenance(enum.Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite-difference"
    MONTE_CARLO = "monte-carlo"


class BoundKind(enum.Enum):
    SPARSE_CRB = "sparse-crb"
    PROJECTION_1 = "projection-1"
    PROJECTION_2 = "projection-2"
    RIP = "rip"
    COHERENCE = "coherence"
    HCRB = "hcrb"
    LGM_CRB = "lgm-crb"


class KSelector(enum.Enum):
    """How the index set K_k is chosen per component.

    SUPPORT: ``supp(x0)`` if ``k`` is in it, else ``{k}``.
    SWAP_SMALLEST: ``supp(x0)`` if ``k`` is in it, else ``{k}`` plus the
    support without the index of the S-largest entry.
    GREEDY: indices of the S-1 largest nonzero entries plus ``k``.
    """

    SUPPORT = "support"
    SWAP_SMALLEST = "swap-smallest"
    GREEDY = "greedy"


# flags attached to reports
CLAMPED_TO_ZERO = "ClampedToZero"
NON_INFORMATIVE = "NonInformative"
SCALE_UNDERFLOW = "ScaleUnderflow"


@dataclass(frozen=True, eq=False)
class BiasSpec:
    """Prescribed bias ``c(x)`` of the estimator of ``x_k``.

    `grad(x, idx)` returns ``dc/dx_l`` at `x` for the indices in `idx`.
    `c_se` and `grad_se` optionally give standard errors of the same
    quantities (when they come from simulation).
    """

    c: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    provenance: Provenance = Provenance.ANALYTIC
    c_se: Callable | None = None
    grad_se: Callable | None = None

    def value(self, x):
        v = float(self.c(x))
        se = float(self.c_se(x)) if self.c_se is not None else 0.0
        if not math.isfinite(v):
            raise GradientUnavailable(f"bias is not finite at {x}")
        return v, se

    def gradient(self, x, idx):
        idx = np.asarray(idx, dtype=np.intp)
        try:
            g = np.asarray(self.grad(x, idx), dtype=float).reshape(idx.shape)
            se = (
                np.asarray(self.grad_se(x, idx), dtype=float).reshape(idx.shape)
                if self.grad_se is not None
                else np.zeros(idx.shape)
            )
        except GradientUnavailable:
            raise
        except (LookupError, ValueError, ArithmeticError) as exc:
            raise GradientUnavailable(str(exc)) from exc
        if not np.all(np.isfinite(g)):
            raise GradientUnavailable(f"non-finite bias gradient at indices {idx.tolist()}")
        return g, se

    @classmethod
    def zero(cls) -> BiasSpec:
        """Unbiased estimation, ``c = 0``."""
        return cls(c=lambda x: 0.0, grad=lambda x, idx: np.zeros(len(idx)))

    @classmethod
    def analytic(cls, c, grad) -> BiasSpec:
        return cls(c=c, grad=grad)

    @classmethod
    def from_diagonal(cls, est, k, sigma2, step=1e-6) -> BiasSpec:
        """Bias of a diagonal estimator of ``x_k`` in the H = I model.

        The gradient uses the estimator's closed-form mean derivative when
        present and a forward difference of its exact mean otherwise.
        """

        def c(x):
            return est.moments(float(x[k]), sigma2)[0] - float(x[k])

        def dmean(xk):
            if est.mean_derivative is not None:
                return float(est.mean_derivative(xk, sigma2))
            return (est.moments(xk + step, sigma2)[0] - est.moments(xk, sigma2)[0]) / step

        def grad(x, idx):
            return np.array([dmean(float(x[k])) - 1.0 if l == k else 0.0 for l in idx])

        prov = Provenance.ANALYTIC if est.mean_derivative is not None else Provenance.FINITE_DIFFERENCE
        return cls(c=c, grad=grad, provenance=prov)

    @classmethod
    def tabulated(cls, entries, provenance=Provenance.MONTE_CARLO) -> BiasSpec:
        """Bias known only at a finite set of points.

        `entries` is a sequence of ``(x, c, c_se, grad, grad_se)`` with
        full length-N gradient vectors. A query matches an entry when it is
        within ``1e-9 * max(1, ||x||)`` of it (projections reproduce x0 only
        up to rounding); other points raise :class:`GradientUnavailable`.
        """
        table = [
            (np.asarray(x, dtype=float), float(cv), float(cs), np.asarray(g, dtype=float), np.asarray(gs, dtype=float))
            for x, cv, cs, g, gs in entries
        ]

        def find(x):
            x = np.asarray(x, dtype=float)
            for row in table:
                if row[0].shape == x.shape and np.linalg.norm(row[0] - x) <= 1e-9 * max(1.0, np.linalg.norm(x)):
                    return row
            raise GradientUnavailable("bias not tabulated at the requested point")

        return cls(
            c=lambda x: find(x)[1],
            grad=lambda x, idx: find(x)[3][idx],
            provenance=provenance,
            c_se=lambda x: find(x)[2],
            grad_se=lambda x, idx: find(x)[4][idx],
        )


@dataclass(frozen=True)
class BoundReport:
    value: float
    kind: BoundKind
    k: int
    index_set: tuple | None = None
    scale_factor: float = 1.0
    grad_error: float | None = None
    flags: frozenset = field(default_factory=frozenset)
    raw_value: float | None = None


def _require_k(problem):
    if problem.k is None:
        raise InvalidInput("a target index k is required; use vector_bound for vector mode")
    return problem.k


def _b_vector(bias, x, k, idx):
    g, se = bias.gradient(x, idx)
    return g + (np.asarray(idx) == k), se


def _quad_form(problem, U_s_V, b, b_se):
    """``sigma2 * b^T (H_K^T H_K)^{-1} b`` and its first-order standard error."""
    _, s, V = U_s_V
    w = (V.T @ b) / s
    value = problem.sigma2 * float(w @ w)
    dvalue = 2.0 * problem.sigma2 * (V @ (w / s))
    se = float(np.sqrt(np.sum((dvalue * b_se) ** 2)))
    return value, se


def _index_set(problem, K):
    K = np.unique(np.asarray(list(K), dtype=np.intp))
    if K.size == 0:
        raise InvalidInput("index set K must be nonempty")
    if K[0] < 0 or K[-1] >= problem.N:
        raise InvalidInput(f"index set {K.tolist()} out of range [0, {problem.N - 1}]")
    if K.size > problem.S:
        raise InvalidInput(f"|K| = {K.size} exceeds S = {problem.S}")
    return K


def _submatrix_svd(H, K):
    U, s, V = thin_svd(H[:, K])
    if s.size < K.size:
        raise SingularSubmatrix(f"H restricted to {K.tolist()} has rank {s.size} < {K.size}")
    return U, s, V


def _scale(log_scale, flags):
    scale = math.exp(log_scale)
    if scale == 0.0:
        flags.add(SCALE_UNDERFLOW)
    return scale


def sparse_crb(problem: SparseProblem, bias: BiasSpec, x0) -> BoundReport:
    """CRB restricted to the sparse parameter set.

    Uses all N entries of ``b`` when ``||x0||_0 < S`` and only the support
    entries when ``||x0||_0 = S``.
    """
    k = _require_k(problem)
    problem.ensure_spark()
    x0 = problem.check_x(x0)
    supp = support(x0)
    if supp.size < problem.S:
        idx = np.arange(problem.N)
        svd = (problem.model.U, problem.model.s, problem.model.V)
    else:
        idx = supp
        svd = thin_svd(problem.model.H[:, supp])
    b, b_se = _b_vector(bias, x0, k, idx)
    value, se = _quad_form(problem, svd, b, b_se)
    return BoundReport(value, BoundKind.SPARSE_CRB, k, tuple(idx.tolist()), 1.0, se, raw_value=value)


def lgm_crb(problem: SparseProblem, bias: BiasSpec, x0) -> BoundReport:
    """CRB of the non-sparse linear Gaussian model, ``sigma2 b^T (H^T H)^+ b``."""
    k = _require_k(problem)
    x0 = np.asarray(x0, dtype=float)
    idx = np.arange(problem.N)
    b, b_se = _b_vector(bias, x0, k, idx)
    value, se = _quad_form(problem, (problem.model.U, problem.model.s, problem.model.V), b, b_se)
    return BoundReport(value, BoundKind.LGM_CRB, k, None, 1.0, se, raw_value=value)


def oracle_crb(problem: SparseProblem, supp) -> float:
    """``sigma2 * trace((H_s^T H_s)^{-1})``: the vector CRB with known support."""
    supp = np.asarray(list(supp), dtype=np.intp)
    _, s, _ = _submatrix_svd(problem.model.H, supp)
    return problem.sigma2 * float(np.sum(1.0 / s**2))


def _projection(problem, x0, K):
    """Projection residual, ``x0_tilde`` and the SVD of ``H_K``."""
    H = problem.model.H
    svd = _submatrix_svd(H, K)
    U, s, V = svd
    Hx0 = H @ x0
    coef = U.T @ Hx0
    resid = Hx0 - U @ coef
    x_tilde = np.zeros(problem.N)
    x_tilde[K] = V @ (coef / s)
    return float(resid @ resid), x_tilde, svd


def _projection_parts(problem, bias, x0, K):
    k = _require_k(problem)
    problem.ensure_spark()
    x0 = problem.check_x(x0)
    K = _index_set(problem, K)
    r2, x_tilde, svd = _projection(problem, x0, K)
    flags = set()
    scale = _scale(-r2 / problem.sigma2, flags)
    b, b_se = _b_vector(bias, x_tilde, k, K)
    quad, quad_se = _quad_form(problem, svd, b, b_se)
    return k, x0, K, x_tilde, scale, quad, quad_se, flags


def projection_bound_1(problem: SparseProblem, bias: BiasSpec, x0, K) -> BoundReport:
    """``scale * [sigma2 b^T (H_K^T H_K)^{-1} b + gamma^2(x0_tilde)] - gamma^2(x0)``.

    ``b`` is evaluated at ``x0_tilde``, the vector supported on K with
    ``H x0_tilde = P H x0``. Negative values are clamped to 0 and flagged.
    """
    k, x0, K, x_tilde, scale, quad, quad_se, flags = _projection_parts(problem, bias, x0, K)
    c_t, c_t_se = bias.value(x_tilde)
    c_0, c_0_se = bias.value(x0)
    g_t = c_t + x_tilde[k]
    g_0 = c_0 + x0[k]
    raw = scale * (quad + g_t * g_t) - g_0 * g_0
    if np.linalg.norm(x_tilde - x0) <= 1e-9 * max(1.0, float(np.linalg.norm(x0))):
        # the same bias estimate enters both gamma terms
        se_gamma = abs(2 * (scale * g_t - g_0)) * c_0_se
    else:
        se_gamma = math.hypot(2 * scale * g_t * c_t_se, 2 * g_0 * c_0_se)
    se = math.hypot(scale * quad_se, se_gamma)
    value = raw
    if raw < 0:
        flags.add(CLAMPED_TO_ZERO)
        value = 0.0
    return BoundReport(value, BoundKind.PROJECTION_1, k, tuple(K.tolist()), scale, se, frozenset(flags), raw)


def projection_bound_2(problem: SparseProblem, bias: BiasSpec, x0, K) -> BoundReport:
    """``scale * sigma2 * b^T (H_K^T H_K)^{-1} b`` with ``b`` at ``x0_tilde``."""
    k, x0, K, x_tilde, scale, quad, quad_se, flags = _projection_parts(problem, bias, x0, K)
    value = scale * quad
    return BoundReport(value, BoundKind.PROJECTION_2, k, tuple(K.tolist()), scale, scale * quad_se, frozenset(flags), value)


def _rip_like(problem, bias, x0, K, delta, kind, flags):
    k = _require_k(problem)
    problem.ensure_spark()
    x0 = problem.check_x(x0)
    K = _index_set(problem, K)
    check_unit_columns(problem.model.H)
    outside = np.setdiff1d(support(x0), K)
    energy = float(np.sum(x0[outside] ** 2))
    scale = _scale(-(1.0 + delta) * energy / problem.sigma2, flags)
    _, x_tilde, svd = _projection(problem, x0, K)
    b, b_se = _b_vector(bias, x_tilde, k, K)
    quad, quad_se = _quad_form(problem, svd, b, b_se)
    value = scale * quad
    return BoundReport(value, kind, k, tuple(K.tolist()), scale, scale * quad_se, frozenset(flags), value)


def rip_bound(problem: SparseProblem, bias: BiasSpec, x0, K, delta_S) -> BoundReport:
    """Projection bound with the residual energy replaced by its RIP upper
    bound ``(1 + delta_S) ||x0 outside K||^2``."""
    delta_S = float(delta_S)
    if not 0.0 <= delta_S < 1.0:
        raise InvalidRip(f"delta_S must lie in [0, 1), got {delta_S}")
    return _rip_like(problem, bias, x0, K, delta_S, BoundKind.RIP, set())


def coherence_bound(problem: SparseProblem, bias: BiasSpec, x0, K) -> BoundReport:
    """RIP bound with ``delta_S`` replaced by ``(S - 1) * mu(H)``.

    If that exceeds 1 the bound is still evaluated and flagged NonInformative.
    """
    delta = (problem.S - 1) * coherence(problem.model.H)
    flags = {NON_INFORMATIVE} if delta >= 1.0 else set()
    return _rip_like(problem, bias, x0, K, delta, BoundKind.COHERENCE, flags)


def hcrb_ssnm(problem: SparseProblem, x0) -> BoundReport:
    """HCRB-type bound for unbiased estimation in the H = I model."""
    k = _require_k(problem)
    if not problem.model.is_identity:
        raise WrongModel("hcrb_ssnm requires H = I")
    x0 = problem.check_x(x0)
    supp = support(x0)
    s2, N, S = problem.sigma2, problem.N, problem.S
    if supp.size + (0 if k in supp else 1) <= S:
        return BoundReport(s2, BoundKind.HCRB, k, raw_value=s2)
    xi0 = float(np.sort(np.abs(x0))[::-1][S - 1])
    flags = set()
    value = s2 * (N - S - 1) / (N - S) * _scale(-xi0 * xi0 / s2, flags)
    return BoundReport(value, BoundKind.HCRB, k, flags=frozenset(flags), raw_value=value)


def k_selector_default(x0, k, S, mode=KSelector.SUPPORT):
    """Index set K_k for component `k` (sorted tuple). Magnitude ties go to
    the smaller index."""
    mode = KSelector(mode)
    x0 = np.asarray(x0, dtype=float)
    supp = support(x0)
    if supp.size > S:
        raise InvalidInput(f"x0 is not {S}-sparse")
    if mode is KSelector.SUPPORT:
        K = set(supp.tolist()) if k in supp else {k}
    elif mode is KSelector.SWAP_SMALLEST:
        if k in supp:
            K = set(supp.tolist())
        else:
            j_S = int(np.argsort(-np.abs(x0), kind="stable")[S - 1])
            K = (set(supp.tolist()) - {j_S}) | {k}
    else:
        order = supp[np.argsort(-np.abs(x0[supp]), kind="stable")]
        K = set(order[: S - 1].tolist()) | {k}
    return tuple(sorted(int(i) for i in K))


def scalar_bound(kind, problem: SparseProblem, bias: BiasSpec, x0, K=None, delta_S=None) -> BoundReport:
    kind = BoundKind(kind)
    if kind is BoundKind.SPARSE_CRB:
        return sparse_crb(problem, bias, x0)
    if kind is BoundKind.LGM_CRB:
        return lgm_crb(problem, bias, x0)
    if kind is BoundKind.HCRB:
        return hcrb_ssnm(problem, x0)
    if K is None:
        raise InvalidInput(f"{kind.value} needs an index set K")
    if kind is BoundKind.PROJECTION_1:
        return projection_bound_1(problem, bias, x0, K)
    if kind is BoundKind.PROJECTION_2:
        return projection_bound_2(problem, bias, x0, K)
    if kind is BoundKind.RIP:
        if delta_S is None:
            raise InvalidInput("rip bound needs delta_S")
        return rip_bound(problem, bias, x0, K, delta_S)
    return coherence_bound(problem, bias, x0, K)


def _workers():
    try:
        return max(1, int(os.environ.get("SMVE_WORKERS", "") or os.cpu_count() or 1))
    except ValueError:
        return 1


def vector_bound_components(
    problem: SparseProblem,
    bias,
    x0,
    kind,
    selector=KSelector.SUPPORT,
    delta_S=None,
) -> list:
    """Scalar bound reports for every ``k`` in ``0..N-1`` (in order).

    `bias` is a single BiasSpec shared by all components, a sequence of N
    BiasSpecs, or a callable ``k -> BiasSpec``.
    """
    x0 = problem.check_x(x0)
    problem.ensure_spark()
    if isinstance(bias, BiasSpec):
        bias_for = lambda k: bias
    elif callable(bias):
        bias_for = bias
    else:
        seq = list(bias)
        if len(seq) != problem.N:
            raise InvalidInput(f"need {problem.N} bias specs, got {len(seq)}")
        bias_for = seq.__getitem__

    def one(k):
        K = k_selector_default(x0, k, problem.S, selector)
        return scalar_bound(kind, problem.with_k(k), bias_for(k), x0, K, delta_S)

    with ThreadPoolExecutor(max_workers=min(_workers(), problem.N)) as pool:
        return list(pool.map(one, range(problem.N)))


def vector_bound(problem: SparseProblem, bias, x0, kind, selector=KSelector.SUPPORT, delta_S=None) -> float:
    """Sum over all components of the chosen scalar bound (fixed summation order)."""
    reports = vector_bound_components(problem, bias, x0, kind, selector, delta_S)
    return math.fsum(r.value for r in reports)
