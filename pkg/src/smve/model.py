"""Sparse linear Gaussian model: problem definition, decompositions and
combinatorial matrix diagnostics (spark, RIP constant, coherence).

Indices are 0-based throughout the package.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import BudgetExceeded, InvalidCovariance, InvalidInput, InvalidModel

__all__ = [
    "GaussianLinearModel",
    "SparseProblem",
    "build_model",
    "coherence",
    "check_unit_columns",
    "normalize_columns",
    "rank_tolerance",
    "rip_constant",
    "spark",
    "spark_exceeds",
    "support",
    "thin_svd",
    "whiten",
]

UNIT_NORM_TOL = 1e-8
_CHUNK = 4096


def rank_tolerance(s_max, n):
    """Singular values at or below this are treated as zero."""
    return s_max * n * np.finfo(float).eps * 64


def thin_svd(A):
    """Thin SVD of `A` truncated at the numerical rank.

    Returns ``(U, s, V)`` with ``A ~= U @ diag(s) @ V.T``, ``U`` of shape
    (M, D), ``V`` of shape (N, D) and all ``s > 0``.
    """
    A = np.asarray(A, dtype=float)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        D = 0
    else:
        D = int(np.sum(s > rank_tolerance(s[0], A.shape[1])))
    return U[:, :D], s[:D], Vt[:D].T


def support(x, tol=0.0):
    """Sorted indices of the nonzero entries of `x`."""
    x = np.asarray(x, dtype=float)
    return np.flatnonzero(np.abs(x) > tol)


@dataclass(frozen=True, eq=False)
class GaussianLinearModel:
    """``y = H x + n`` with ``n ~ N(0, sigma2 I)``.

    Build with :func:`build_model`; the thin SVD is computed once and
    shared by every pseudoinverse in the package.
    """

    H: np.ndarray
    sigma2: float
    U: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.H.shape[0]

    @property
    def N(self) -> int:
        return self.H.shape[1]

    @property
    def rank(self) -> int:
        return self.s.size

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def pinv(self):
        """Moore-Penrose pseudoinverse ``H^+`` (N x M)."""
        return (self.V / self.s) @ self.U.T

    def gram_pinv(self):
        """``(H^T H)^+`` (N x N)."""
        return (self.V / self.s**2) @ self.V.T

    @cached_property
    def is_identity(self) -> bool:
        return self.M == self.N and bool(np.array_equal(self.H, np.eye(self.N)))

    def has_unit_columns(self, tol=UNIT_NORM_TOL) -> bool:
        return bool(np.all(np.abs(np.linalg.norm(self.H, axis=0) - 1.0) <= tol))


def build_model(H, sigma2=1.0) -> GaussianLinearModel:
    """Validate `H` and `sigma2` and cache the thin SVD of `H`."""
    H = np.array(H, dtype=float)
    if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 1:
        raise InvalidModel(f"H must be a nonempty 2-D matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise InvalidModel("H has non-finite entries")
    if not np.any(H):
        raise InvalidModel("H is the zero matrix")
    sigma2 = float(sigma2)
    if not (math.isfinite(sigma2) and sigma2 > 0):
        raise InvalidModel(f"sigma2 must be positive and finite, got {sigma2}")
    H.setflags(write=False)
    U, s, V = thin_svd(H)
    return GaussianLinearModel(H=H, sigma2=sigma2, U=U, s=s, V=V)


def whiten(H, C):
    """Map a model with noise covariance `C` to an equivalent white model.

    Returns ``(C^{-1/2} H, 1.0)``; the inverse square root is taken through
    the eigendecomposition of `C`.
    """
    H = np.asarray(H, dtype=float)
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] != H.shape[0]:
        raise InvalidCovariance(f"C must be {H.shape[0]}x{H.shape[0]}, got {C.shape}")
    if not np.allclose(C, C.T, rtol=1e-12, atol=1e-12 * np.abs(C).max()):
        raise InvalidCovariance("C is not symmetric")
    lam, Q = np.linalg.eigh(C)
    if lam[0] <= rank_tolerance(lam[-1], C.shape[0]):
        raise InvalidCovariance("C is not positive definite")
    C_isqrt = (Q / np.sqrt(lam)) @ Q.T
    return C_isqrt @ H, 1.0


def _subset_ranks(H, subsets):
    """Numerical rank of ``H[:, subset]`` for each row of `subsets`."""
    sub = np.moveaxis(H[:, subsets], 0, 1)  # (C, M, p)
    s = np.linalg.svd(sub, compute_uv=False)
    p = subsets.shape[1]
    tol = rank_tolerance(s[:, :1], p)
    return np.sum((s > tol) & (s > 0), axis=1)


def _combinations(n, p):
    it = itertools.combinations(range(n), p)
    while True:
        chunk = list(itertools.islice(it, _CHUNK))
        if not chunk:
            return
        yield np.array(chunk, dtype=np.intp)


def spark(H, max_n=20):
    """Smallest number of linearly dependent columns of `H`.

    Returns ``N + 1`` when every column subset is independent and ``None``
    (unknown) when ``N > max_n``; the search is exhaustive.
    """
    H = np.asarray(H, dtype=float)
    N = H.shape[1]
    if N > max_n:
        return None
    _, s, _ = thin_svd(H)
    r = s.size
    for p in range(1, r + 1):
        for subsets in _combinations(N, p):
            if np.any(_subset_ranks(H, subsets) < p):
                return p
    return r + 1 if r < N else N + 1


def spark_exceeds(H, S, budget=10**6):
    """True iff ``spark(H) > S``, i.e. every S-column submatrix has full rank."""
    H = np.asarray(H, dtype=float)
    N = H.shape[1]
    if S > N:
        raise InvalidInput(f"S={S} exceeds N={N}")
    _, s, _ = thin_svd(H)
    if s.size == N:
        return True
    if s.size < S:
        return False
    if math.comb(N, S) > budget:
        raise BudgetExceeded(f"C({N},{S}) subsets exceed the budget {budget}; attest spark(H) > S instead")
    return all(np.all(_subset_ranks(H, sub) == S) for sub in _combinations(N, S))


def check_unit_columns(H, tol=UNIT_NORM_TOL):
    norms = np.linalg.norm(np.asarray(H, dtype=float), axis=0)
    bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
    if bad.size:
        raise InvalidModel(f"columns {bad.tolist()} are not unit norm (norms {norms[bad].tolist()})")


def normalize_columns(H):
    """Return a copy of `H` with unit-norm columns."""
    H = np.asarray(H, dtype=float)
    norms = np.linalg.norm(H, axis=0)
    if np.any(norms == 0):
        raise InvalidModel("cannot normalize a zero column")
    return H / norms


def coherence(H):
    """Largest absolute inner product between two distinct columns."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[1] < 2:
        raise InvalidModel("coherence needs at least two columns")
    check_unit_columns(H)
    G = np.abs(H.T @ H)
    np.fill_diagonal(G, 0.0)
    return float(G.max())


def rip_constant(H, K, budget=10**6):
    """Restricted isometry constant of order `K` by exhaustive enumeration.

    ``delta_K = max over |I| = K of max(lambda_max - 1, 1 - lambda_min)`` of
    the Gram matrix ``H_I^T H_I``.
    """
    H = np.asarray(H, dtype=float)
    N = H.shape[1]
    if not 1 <= K <= N:
        raise InvalidInput(f"K must lie in [1, {N}], got {K}")
    check_unit_columns(H)
    if math.comb(N, K) > budget:
        raise BudgetExceeded(f"C({N},{K}) = {math.comb(N, K)} subsets exceed the budget {budget}")
    G = H.T @ H
    delta = 0.0
    for subsets in _combinations(N, K):
        sub = G[subsets[:, :, None], subsets[:, None, :]]
        lam = np.linalg.eigvalsh(sub)
        delta = max(delta, float(np.max(np.maximum(lam[:, -1] - 1.0, 1.0 - lam[:, 0]))))
    return delta


@dataclass(frozen=True, eq=False)
class SparseProblem:
    """A model together with the sparsity degree `S` and target index `k`.

    ``k=None`` selects vector mode. Set ``attest_spark=True`` to assert
    ``spark(H) > S`` without the exhaustive check.
    """

    model: GaussianLinearModel
    S: int
    k: int | None = None
    attest_spark: bool = False

    def __post_init__(self):
        N = self.model.N
        if not 1 <= self.S <= N:
            raise InvalidInput(f"S must lie in [1, {N}], got {self.S}")
        if self.k is not None and not 0 <= self.k < N:
            raise InvalidInput(f"k must lie in [0, {N - 1}], got {self.k}")

    @property
    def N(self) -> int:
        return self.model.N

    @property
    def sigma2(self) -> float:
        return self.model.sigma2

    def with_k(self, k) -> SparseProblem:
        return SparseProblem(self.model, self.S, k, self.attest_spark)

    @cached_property
    def spark_ok(self) -> bool:
        if self.attest_spark or self.model.is_identity:
            return True
        return spark_exceeds(self.model.H, self.S)

    def ensure_spark(self):
        if not self.spark_ok:
            raise InvalidModel(f"spark(H) <= S={self.S}: some {self.S}-column submatrix is rank deficient")

    def check_x(self, x0):
        """Validate a parameter vector and return it as a float array."""
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (self.N,):
            raise InvalidInput(f"x0 must have length {self.N}, got shape {x0.shape}")
        if not np.all(np.isfinite(x0)):
            raise InvalidInput("x0 has non-finite entries")
        if support(x0).size > self.S:
            raise InvalidInput(f"x0 has {support(x0).size} nonzeros, more than S={self.S}")
        return x0
