"""The two reference experiments: OMP on a sinusoidal dictionary and HT/ML
in the sparse signal in noise model. Both sweep an SNR grid with
``x0 = sqrt(SNR) * x0_tilde`` and ``sigma2 = 1``, and return CSV rows.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import bounds as bd
from .estimators import hard_threshold, ml, omp_estimator
from .mc import BLOCK, SAMPLER, McConfig, fd_jacobian_mc, simulate
from .model import SparseProblem, build_model, support
from .ssnm_exact import barankin_from_estimator

CSV_HEADER = "snr_db,quantity,label,value,se,seed,trials"

FOURIER_SUPPORT = (2, 5, 10, 13)
FD_STEP = 1e-2


def default_grid(lo, hi, n=25):
    return [float(v) for v in np.linspace(lo, hi, n)]


def fourier_matrix(M=128, L=8, theta0=0.2, dtheta=3.9e-3, cycles=True, normalize=True):
    """``M x 2L`` matrix of cosines (first L columns) and sines (last L)
    sampled at ``m = 0..M-1`` with frequencies ``theta0 + (l mod L) dtheta``.

    With ``cycles=True`` the frequencies are in cycles per sample (the
    argument is ``2 pi theta m``), matching a DFT resolution of ``1/M``;
    ``normalize=True`` scales every column to unit norm. Both defaults are
    needed to obtain the oracle CRB of about 4.19 for the default support.
    """
    m = np.arange(M)[:, None]
    l = np.arange(2 * L)
    theta = theta0 + (l % L) * dtheta
    if cycles:
        theta = 2.0 * np.pi * theta
    arg = m * theta[None, :]
    H = np.where(l < L, np.cos(arg), np.sin(arg))
    return H / np.linalg.norm(H, axis=0) if normalize else H


def snr_amplitude(snr_db):
    return math.sqrt(10.0 ** (snr_db / 10.0))


@dataclass
class ExperimentConfig:
    experiment: str
    snr_db: list
    trials: int = 10_000
    seed: int = 0
    thresholds: list = field(default_factory=lambda: [0.0, 2.0, 3.0, 4.0])
    workers: int | None = None
    attest_spark: bool = False
    out: str | None = None

    def __post_init__(self):
        from .errors import InvalidInput

        if not self.snr_db or not all(math.isfinite(v) for v in self.snr_db):
            raise InvalidInput("the SNR grid must be nonempty and finite")
        if any(t < 0 or not math.isfinite(t) for t in self.thresholds):
            raise InvalidInput("thresholds must be finite and nonnegative")

    @property
    def mc(self):
        return McConfig(seed=self.seed, trials=self.trials, workers=self.workers)


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v))


class _Rows:
    def __init__(self, cfg):
        self.cfg = cfg
        self.rows = []

    def add(self, snr_db, quantity, label, value, se=None, trials=None):
        self.rows.append((snr_db, quantity, label, value, se, trials))

    def csv(self, meta):
        buf = io.StringIO()
        for key, val in meta:
            buf.write(f"# {key}: {val}\n")
        buf.write(CSV_HEADER + "\n")
        for snr, q, lab, v, se, tr in self.rows:
            buf.write(
                ",".join([_fmt(snr), q, lab, _fmt(v), _fmt(se), str(self.cfg.seed), "" if tr is None else str(tr)])
                + "\n"
            )
        return buf.getvalue()


def _meta(cfg, name, extra=()):
    return [
        ("experiment", name),
        ("sampler", SAMPLER),
        ("block", BLOCK),
        ("seed", cfg.seed),
        ("trials", cfg.trials),
        *extra,
    ]


def _bias_for(k, entries):
    """Tabulated bias of component k from gradient runs at several points."""
    rows = []
    for x, mom in entries:
        c = mom.mean[k] - x[k]
        rows.append((x, c, mom.se_mean[k], mom.grad[k], mom.grad_se[k]))
    return bd.BiasSpec.tabulated(rows)


def run_fourier(cfg: ExperimentConfig) -> str:
    """OMP variance, the three bound sums and the oracle CRB per SNR."""
    H = fourier_matrix()
    problem = SparseProblem(build_model(H, 1.0), S=4, attest_spark=cfg.attest_spark)
    problem.ensure_spark()
    N = problem.N
    supp = np.array(FOURIER_SUPPORT)
    x_unit = np.zeros(N)
    x_unit[supp] = 1.0
    est = omp_estimator(problem)
    oracle = bd.oracle_crb(problem, supp)
    out = _Rows(cfg)
    mc = cfg.mc
    for snr_db in cfg.snr_db:
        x0 = snr_amplitude(snr_db) * x_unit
        mom0 = simulate(est, problem, x0, mc, gradient=True)
        out.add(snr_db, "variance", "OMP", mom0.total_variance, mom0.se_total_variance, mom0.trials)
        entries = {k: [(x0, mom0)] for k in range(N)}
        Hx0 = H @ x0
        for k in range(N):
            if k in supp:
                continue
            K = bd.k_selector_default(x0, k, problem.S, bd.KSelector.SUPPORT)
            xt = np.zeros(N)
            xt[list(K)] = np.linalg.lstsq(H[:, list(K)], Hx0, rcond=None)[0]
            entries[k].append((xt, simulate(est, problem, xt, mc, gradient=True)))
        biases = [_bias_for(k, entries[k]) for k in range(N)]
        values = {}
        for label, kind in (("B1", bd.BoundKind.SPARSE_CRB), ("B2", bd.BoundKind.PROJECTION_1), ("B3", bd.BoundKind.PROJECTION_2)):
            reps = bd.vector_bound_components(problem, biases, x0, kind, bd.KSelector.SUPPORT)
            values[label] = math.fsum(r.value for r in reps)
            se = math.sqrt(math.fsum((r.grad_error or 0.0) ** 2 for r in reps))
            out.add(snr_db, "bound", label, values[label], se, mom0.trials)
        out.add(snr_db, "oracle_crb", "oracle", oracle)
        out.add(snr_db, "check", "B3>=B2", 1.0 if values["B3"] >= values["B2"] - 1e-9 * abs(values["B2"]) else 0.0)
    meta = _meta(cfg, "fourier", [("M", 128), ("N", N), ("S", 4), ("support", list(FOURIER_SUPPORT)), ("index_sets", "support"), ("gradient", "score covariance")])
    return out.csv(meta)


def _ssnm_x0(snr_db, N, S):
    x0 = np.zeros(N)
    x0[:S] = snr_amplitude(snr_db)
    return x0


def run_ssnm(cfg: ExperimentConfig, N=50, S=5) -> str:
    """HT exact variances, ML simulated variance, bound sums and the
    diagonal Barankin bound per SNR."""
    problem = SparseProblem(build_model(np.eye(N), 1.0), S=S)
    s2 = problem.sigma2
    out = _Rows(cfg)
    mc = cfg.mc
    ml_est = ml(problem)
    sel = bd.KSelector.SWAP_SMALLEST
    for snr_db in cfg.snr_db:
        x0 = _ssnm_x0(snr_db, N, S)
        for T in cfg.thresholds:
            ht = hard_threshold(T)
            lab = ht.label
            var = math.fsum(ht.moments(float(x0[k]), s2)[1] for k in range(N))
            out.add(snr_db, "variance", lab, var)
            biases = [bd.BiasSpec.from_diagonal(ht, k, s2) for k in range(N)]
            for blabel, kind in (("B2", bd.BoundKind.PROJECTION_1), ("B3", bd.BoundKind.PROJECTION_2)):
                out.add(snr_db, "bound", f"{blabel}:{lab}", bd.vector_bound(problem, biases, x0, kind, sel))
            bar = math.fsum(barankin_from_estimator(ht, x0, k, S, s2).value for k in range(N))
            out.add(snr_db, "barankin", lab, bar)

        mom = simulate(ml_est, problem, x0, mc)
        out.add(snr_db, "variance", "ML", mom.total_variance, mom.se_total_variance, mom.trials)
        # x0 with the S-largest entry removed: the anchor of every off-support K
        j_S = int(np.argsort(-np.abs(x0), kind="stable")[S - 1])
        xt = x0.copy()
        xt[j_S] = 0.0
        supp = support(x0)
        entries = []
        for x, idx in ((x0, supp), (xt, np.setdiff1d(np.arange(N), [j_S]))):
            mean = simulate(ml_est, problem, x, mc, total=False)
            J, Jse = fd_jacobian_mc(ml_est, problem, x, idx, FD_STEP * problem.model.sigma, mc)
            grad = np.full((N, N), np.nan)
            grad_se = np.full((N, N), np.nan)
            grad[:, idx] = J
            grad_se[:, idx] = Jse
            entries.append((x, mean, grad, grad_se))
        biases = [
            bd.BiasSpec.tabulated(
                [(x, m.mean[k] - x[k], m.se_mean[k], g[k], gs[k]) for x, m, g, gs in entries],
                provenance=bd.Provenance.FINITE_DIFFERENCE,
            )
            for k in range(N)
        ]
        for blabel, kind in (("B2", bd.BoundKind.PROJECTION_1), ("B3", bd.BoundKind.PROJECTION_2)):
            reps = bd.vector_bound_components(problem, biases, x0, kind, sel)
            se = math.sqrt(math.fsum((r.grad_error or 0.0) ** 2 for r in reps))
            out.add(snr_db, "bound", f"{blabel}:ML", math.fsum(r.value for r in reps), se, mom.trials)
        out.add(snr_db, "oracle_crb", "oracle", S * s2)
    meta = _meta(
        cfg,
        "ssnm",
        [("N", N), ("S", S), ("thresholds", list(cfg.thresholds)), ("index_sets", "swap-smallest"), ("gradient", "HT closed form; ML common-noise difference"), ("fd_step", FD_STEP)],
    )
    return out.csv(meta)
