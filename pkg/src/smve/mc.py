"""Seeded, parallel Monte Carlo engine for estimator moments and bias gradients.

Trials are split into fixed blocks of ``BLOCK`` trials. Block ``b`` draws its
noise from a Philox generator keyed by ``SeedSequence(seed, spawn_key=(b,))``,
so a trial's noise depends only on ``(seed, trial index)`` and never on the
number of workers. Per-block moments are merged with the pairwise update
formulas in a fixed binary tree, which makes results bit-identical for any
worker count.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, McFailure, SmveError
from .model import SparseProblem

__all__ = [
    "BLOCK",
    "McConfig",
    "McMoments",
    "SAMPLER",
    "bias_gradient_fd",
    "bias_gradient_mc",
    "effective_workers",
    "fd_jacobian",
    "fd_jacobian_mc",
    "mc_mean_function",
    "simulate",
]

BLOCK = 1024
MAX_FAILURE_RATE = 1e-3
SAMPLER = "numpy Philox keyed by (seed, block); standard_normal (ziggurat)"


def effective_workers(requested=None) -> int:
    """Worker count: the request (default: CPU count) capped by SMVE_WORKERS."""
    n = int(requested) if requested else (os.cpu_count() or 1)
    cap = os.environ.get("SMVE_WORKERS", "").strip()
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise InvalidInput(f"SMVE_WORKERS must be an integer, got {cap!r}") from None
    return max(1, n)


@dataclass(frozen=True)
class McConfig:
    seed: int = 0
    trials: int = 10_000
    workers: int | None = None

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise InvalidInput(f"seed must be an integer in [0, 2^64), got {self.seed!r}")
        if self.trials < 2:
            raise InvalidInput(f"trials must be at least 2, got {self.trials}")
        if self.workers is not None and self.workers < 1:
            raise InvalidInput("workers must be positive")


@dataclass(frozen=True, eq=False)
class McMoments:
    mean: np.ndarray
    variance: np.ndarray
    se_mean: np.ndarray
    se_variance: np.ndarray
    trials: int
    failures: int = 0
    total_variance: float = 0.0
    se_total_variance: float = 0.0
    grad: np.ndarray | None = None
    grad_se: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)


class _Acc:
    """Count, mean and central power sums (orders 2..4) of a set of columns,
    plus the co-moment matrix of the leading `ncross` columns."""

    __slots__ = ("n", "mean", "m2", "m3", "m4", "cross")

    def __init__(self, n, mean, m2, m3, m4, cross):
        self.n, self.mean, self.m2, self.m3, self.m4, self.cross = n, mean, m2, m3, m4, cross

    @classmethod
    def from_block(cls, V, ncross):
        n = V.shape[0]
        mean = V.mean(axis=0)
        D = V - mean
        D2 = D * D
        C = D[:, :ncross]
        return cls(n, mean, D2.sum(axis=0), (D2 * D).sum(axis=0), (D2 * D2).sum(axis=0), C.T @ C)

    @staticmethod
    def merge(a, b):
        if a.n == 0:
            return b
        if b.n == 0:
            return a
        na, nb = a.n, b.n
        n = na + nb
        d = b.mean - a.mean
        d2 = d * d
        mean = a.mean + d * (nb / n)
        m2 = a.m2 + b.m2 + d2 * (na * nb / n)
        m3 = a.m3 + b.m3 + d2 * d * (na * nb * (na - nb) / n**2) + 3.0 * d * (na * b.m2 - nb * a.m2) / n
        m4 = (
            a.m4
            + b.m4
            + d2 * d2 * (na * nb * (na * na - na * nb + nb * nb) / n**3)
            + 6.0 * d2 * (na * na * b.m2 + nb * nb * a.m2) / n**2
            + 4.0 * d * (na * b.m3 - nb * a.m3) / n
        )
        dc = d[: a.cross.shape[0]]
        cross = a.cross + b.cross + np.outer(dc, dc) * (na * nb / n)
        return _Acc(n, mean, m2, m3, m4, cross)


def _tree_merge(accs):
    accs = [a for a in accs if a is not None]
    while len(accs) > 1:
        nxt = [_Acc.merge(accs[i], accs[i + 1]) for i in range(0, len(accs) - 1, 2)]
        if len(accs) % 2:
            nxt.append(accs[-1])
        accs = nxt
    return accs[0] if accs else None


def _block_noise(seed, block, size, M):
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    return np.random.Generator(np.random.Philox(ss)).standard_normal((size, M))


def _as_estimate_fn(est):
    return est.estimate if hasattr(est, "estimate") else est


def _evaluate(fn, Y):
    """Estimates for a batch; failing or non-finite rows come back as NaN."""
    try:
        X = np.asarray(fn(Y), dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return X
    except (SmveError, ArithmeticError, ValueError, np.linalg.LinAlgError):
        pass
    rows = []
    for y in Y:
        try:
            rows.append(np.asarray(fn(y[None, :]), dtype=float).reshape(-1))
        except (SmveError, ArithmeticError, ValueError, np.linalg.LinAlgError):
            rows.append(None)
    width = next((r.size for r in rows if r is not None), 1)
    return np.array([r if r is not None else np.full(width, np.nan) for r in rows])


def simulate(est, problem: SparseProblem, x0, cfg: McConfig, gradient=False, total=True) -> McMoments:
    """Moments of ``est(y)`` for ``y = H x0 + n``, ``n ~ N(0, sigma2 I)``.

    `est` is a VectorEstimator or any callable mapping a batch ``(n, M)`` to
    ``(n, P)`` outputs. With ``gradient=True`` the bias gradient matrix
    ``dc_k/dx_l = Cov(x_hat_k, n^T H e_l) / sigma2 - delta_{kl}`` is also
    estimated (``P`` must equal ``N``). ``total=False`` skips the standard
    error of the total variance, whose cost is quadratic in ``P``.
    """
    H = problem.model.H
    M, N = H.shape
    sigma = problem.model.sigma
    # the mean function is defined off the sparse set too (used by finite differences)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (N,) or not np.all(np.isfinite(x0)):
        raise InvalidInput(f"x0 must be a finite vector of length {N}")
    fn = _as_estimate_fn(est)
    mu_y = H @ x0
    shift = _evaluate(fn, mu_y[None, :])[0]
    if not np.all(np.isfinite(shift)):
        shift = np.zeros_like(shift)
    P = shift.size
    if gradient and P != N:
        raise InvalidInput("gradient estimation needs an estimator with N outputs")

    nblocks = -(-cfg.trials // BLOCK)
    ncross = P + 1 if total else 0

    def run(b):
        size = min(BLOCK, cfg.trials - b * BLOCK)
        noise = sigma * _block_noise(cfg.seed, b, size, M)
        X = _evaluate(fn, mu_y + noise)
        ok = np.all(np.isfinite(X), axis=1)
        D = X[ok] - shift
        cols = [D, np.sum(D * D, axis=1, keepdims=True)]
        if gradient:
            W = noise[ok] @ H
            cols.append(W)
            cols.append((D[:, :, None] * W[:, None, :]).reshape(D.shape[0], -1))
        V = np.concatenate(cols, axis=1)
        acc = _Acc.from_block(V, ncross) if V.shape[0] else None
        return acc, int(size - ok.sum())

    workers = min(effective_workers(cfg.workers), nblocks)
    if workers == 1:
        results = [run(b) for b in range(nblocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(nblocks)))
    failures = sum(f for _, f in results)
    if failures > MAX_FAILURE_RATE * cfg.trials:
        raise McFailure(f"{failures} of {cfg.trials} trials failed")
    acc = _tree_merge([a for a, _ in results])
    n = acc.n if acc is not None else 0
    if n < 2:
        raise McFailure("fewer than two successful trials")

    mean_d = acc.mean[:P]
    var = acc.m2[:P] / (n - 1)
    m4 = acc.m4[:P] / n
    se_var = np.sqrt(np.maximum(m4 - (n - 3) / (n - 1) * var * var, 0.0) / n)

    # total variance: E||d - m||^2 with Var(W - 2 m^T d) for its error
    total_var = float(np.sum(var))
    se_total = math.nan
    if total:
        cov = acc.cross / (n - 1)
        var_z = cov[P, P] - 4.0 * mean_d @ cov[:P, P] + 4.0 * mean_d @ cov[:P, :P] @ mean_d
        se_total = math.sqrt(max(var_z, 0.0) / n)

    grad = grad_se = None
    if gradient:
        off = P + 1
        mean_w = acc.mean[off : off + N]
        mean_p = acc.mean[off + N :].reshape(P, N)
        var_p = (acc.m2[off + N :] / (n - 1)).reshape(P, N)
        covdw = (mean_p - np.outer(mean_d, mean_w)) * (n / (n - 1))
        grad = covdw / problem.sigma2 - np.eye(P, N)
        grad_se = np.sqrt(var_p / n) / problem.sigma2

    return McMoments(
        mean=shift + mean_d,
        variance=var,
        se_mean=np.sqrt(var / n),
        se_variance=se_var,
        trials=n,
        failures=failures,
        total_variance=total_var,
        se_total_variance=se_total,
        grad=grad,
        grad_se=grad_se,
        metadata={"sampler": SAMPLER, "block": BLOCK, "seed": cfg.seed, "trials": cfg.trials},
    )


def bias_gradient_mc(est, problem: SparseProblem, x0, l, cfg: McConfig):
    """``dc/dx_l`` at x0 for the estimator of ``x_k`` (``k = problem.k``),
    with its standard error."""
    if problem.k is None:
        raise InvalidInput("bias_gradient_mc needs a target index k")
    if not 0 <= l < problem.N:
        raise InvalidInput(f"l must lie in [0, {problem.N - 1}]")
    mom = simulate(est, problem, x0, cfg, gradient=True)
    return float(mom.grad[problem.k, l]), float(mom.grad_se[problem.k, l])


def bias_gradient_fd(mean_fn, x0, l, step, k=None) -> float:
    """Forward-difference ``dc/dx_l`` from the mean function of ``x_hat_k``.

    ``(mean_fn(x0 + step e_l) - mean_fn(x0)) / step - delta_{k,l}``.
    """
    if not step > 0:
        raise InvalidInput("step must be positive")
    x0 = np.asarray(x0, dtype=float)
    x1 = x0.copy()
    x1[l] += step
    return (float(mean_fn(x1)) - float(mean_fn(x0))) / step - (1.0 if k == l else 0.0)


def fd_jacobian(mean_vec_fn, x0, idx, step):
    """Forward-difference bias Jacobian ``J[k, j] = dc_k/dx_{idx[j]}`` of a
    vector mean function (all N components)."""
    x0 = np.asarray(x0, dtype=float)
    base = np.asarray(mean_vec_fn(x0), dtype=float)
    J = np.empty((base.size, len(idx)))
    for j, l in enumerate(idx):
        x1 = x0.copy()
        x1[l] += step
        J[:, j] = (np.asarray(mean_vec_fn(x1), dtype=float) - base) / step
        J[l, j] -= 1.0
    return J


def fd_jacobian_mc(est, problem: SparseProblem, x0, idx, step, cfg: McConfig):
    """Forward-difference bias Jacobian under common random numbers.

    Each trial evaluates ``(est(y + step H e_l) - est(y)) / step`` with the
    same noise for both terms, so the Monte Carlo error of the difference
    is estimated directly. Returns ``(J, se)`` of shape ``(N, len(idx))``
    with ``J[k, j] = dc_k/dx_{idx[j]}``.
    """
    if not step > 0:
        raise InvalidInput("step must be positive")
    idx = np.asarray(idx, dtype=np.intp)
    H = problem.model.H
    fn = _as_estimate_fn(est)

    def diff(Y):
        base = fn(Y)
        out = [(fn(Y + step * H[:, l]) - base) / step for l in idx]
        return np.concatenate(out, axis=1)

    mom = simulate(diff, problem, x0, cfg, total=False)
    P = mom.mean.size // idx.size
    J = mom.mean.reshape(idx.size, P).T.copy()
    se = mom.se_mean.reshape(idx.size, P).T.copy()
    J[idx, np.arange(idx.size)] -= 1.0
    return J, se


def mc_mean_function(est, problem: SparseProblem, cfg: McConfig, k=None):
    """``x -> MC mean of est(y)`` under common random numbers (same seed
    for every x). Returns component `k` or the full vector."""

    def mean(x):
        m = simulate(est, problem, x, cfg).mean
        return float(m[k]) if k is not None else m

    return mean
