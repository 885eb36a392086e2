"""Experiment harness: strong-error curves, Wasserstein distances, bias
scans, Monte Carlo inference studies and normality diagnostics."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .likelihoods import EstimatorKind, ObservationSet
from .models import Unsupported, as_params, get_model
from .optimize import FitResult, NmConfig, NonFinite, fit
from .rng import Purpose, StreamKey, coarsen_matrix, generator, make_noise_matrix, standard_normal
from .schemes import PathAborted, SchemeKind, simulate_paths, step

__all__ = [
    "ConvergenceReport",
    "strong_error_curve",
    "strong_error_curves",
    "fit_order",
    "wasserstein1",
    "one_step_wasserstein",
    "BiasScan",
    "bias_order_scan",
    "state_space_sweep",
    "StudyRow",
    "StudyTable",
    "inference_study",
    "NormalityDiagnostic",
    "normality_diagnostic",
]


# strong error --------------------------------------------------------------

@dataclass
class ConvergenceReport:
    model: str
    params: tuple
    scheme: str
    T: float
    M: int
    reference: str
    h_fine: float
    rows: list  # (h, S_N)
    slope: float = math.nan
    intercept: float = math.nan
    r2: float = math.nan
    checksums: np.ndarray | None = field(default=None, repr=False)


def _ratio(a, b, what):
    r = a / b
    k = int(round(r))
    if k < 1 or abs(r - k) > 1e-9 * max(1.0, r):
        raise ValueError(f"{what}: {a} is not an integer multiple of {b}")
    return k


def strong_error_curves(schemes: Sequence, model, p, x0: float, T: float,
                        h_list: Sequence[float], h_fine: float, M: int, seed: int = 0,
                        reference: str = "LT") -> dict:
    """Root-mean-square endpoint error at ``T`` for several schemes.

    All schemes and step sizes run on coarsenings of the same per-path fine
    noise grid; the reference is ``reference`` run on the fine grid itself.
    """
    model = get_model(model)
    p = as_params(model, p)
    if str(reference).lower() == "exact":
        raise Unsupported("exact pathwise reference is not available; use a fine-grid scheme")
    ref = SchemeKind.parse(reference)
    n_fine = _ratio(T, h_fine, "T")
    factors = [_ratio(h, h_fine, "h") for h in h_list]
    for k in factors:
        if n_fine % k:
            raise ValueError(f"h = {k * h_fine} does not divide T = {T}")
    W = make_noise_matrix(seed, M, h_fine, n_fine)
    x_ref = simulate_paths(ref, model, p, x0, W, h_fine, keep="last")
    coarse = {k: coarsen_matrix(W, k) for k in factors}
    sums = np.array([coarse[k].sum(axis=1) for k in factors])
    out = {}
    for sch in schemes:
        sch = SchemeKind.parse(sch)
        rows = []
        for h, k in zip(h_list, factors):
            try:
                x = simulate_paths(sch, model, p, x0, coarse[k], k * h_fine,
                                   keep="last")
                s_n = float(np.sqrt(np.mean((x - x_ref) ** 2)))
            except PathAborted:
                s_n = math.nan
            rows.append((float(h), s_n))
        rep = ConvergenceReport(model.name, p, sch.value, T, M, f"{ref.value}@h_fine",
                                h_fine, rows, checksums=sums)
        try:
            rep.slope, rep.intercept, rep.r2 = fit_order(rep)
        except ValueError:
            pass
        out[sch.value] = rep
    return out


def strong_error_curve(scheme, model, p, x0, T, h_list, h_fine, M, reference="LT",
                       seed: int = 0) -> ConvergenceReport:
    return strong_error_curves([scheme], model, p, x0, T, h_list, h_fine, M, seed,
                               reference)[SchemeKind.parse(scheme).value]


def fit_order(report) -> tuple:
    """OLS of log2 S_N on log2 h; returns ``(slope, intercept, r2)``."""
    rows = report.rows if isinstance(report, ConvergenceReport) else report
    pts = np.array([(h, s) for h, s in rows if s > 0 and math.isfinite(s)], dtype=float)
    if len(pts) < 3:
        raise ValueError("need at least 3 rows with positive S_N")
    lx, ly = np.log2(pts[:, 0]), np.log2(pts[:, 1])
    dx, dy = lx - lx.mean(), ly - ly.mean()
    slope = np.dot(dx, dy) / np.dot(dx, dx)
    intercept = ly.mean() - slope * lx.mean()
    resid = ly - (slope * lx + intercept)
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    return float(slope), float(intercept), float(r2)


# Wasserstein ----------------------------------------------------------------

def wasserstein1(a, b, grid_size: int = 10_000) -> float:
    """Empirical W1 distance between two samples.

    Equal sizes use the sorted-sample formula; otherwise quantile functions
    are compared on a midpoint probability grid of ``grid_size`` points.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be non-empty")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    u = (np.arange(grid_size) + 0.5) / grid_size

    def q(x):
        pos = (np.arange(x.size) + 0.5) / x.size
        return np.interp(u, pos, x)

    return float(np.mean(np.abs(q(a) - q(b))))


def one_step_wasserstein(model, p, scheme, h: float, x0: float, M: int, seed: int = 0) -> float:
    """W1 between ``M`` one-step scheme draws and ``M`` exact draws from ``x0``."""
    model = get_model(model)
    p = as_params(model, p)
    if not model.has_exact:
        raise Unsupported(f"{model.name} has no exact sampler")
    xi = math.sqrt(h) * standard_normal(StreamKey(seed, 0, Purpose.PATH_NOISE), M)
    if SchemeKind.parse(scheme) is SchemeKind.EXACT:
        xs = model.exact_sample(h, x0, p, generator(StreamKey(seed, 1, Purpose.EXACT_SAMPLE)), M)
    else:
        xs = step(scheme, model, p, h, np.full(M, float(x0)), xi)
    ex = model.exact_sample(h, x0, p, generator(StreamKey(seed, 0, Purpose.EXACT_SAMPLE)), M)
    return wasserstein1(xs, ex)


# one-step bias ---------------------------------------------------------------

@dataclass
class BiasScan:
    slope: float
    rows: list  # (h, |bias|)
    degenerate_zero: bool


def bias_order_scan(model, p, scheme, x: float, h_list: Sequence[float],
                    zero_tol: float = 1e-13) -> BiasScan:
    """Order of the one-step mean error, from closed forms only."""
    model = get_model(model)
    p = as_params(model, p)
    kind = SchemeKind.parse(scheme)
    if kind not in (SchemeKind.LT, SchemeKind.STRANG):
        raise Unsupported(f"no closed-form one-step mean for scheme {kind.value}")
    sch = "LT" if kind is SchemeKind.LT else "S"
    rows = []
    for h in h_list:
        b = abs(float(model.step_mean(sch, h, x, p)) - float(model.exact_mean(h, x, p)))
        rows.append((float(h), b))
    scale = max(1.0, abs(x))
    if all(b <= zero_tol * scale for _, b in rows):
        return BiasScan(math.nan, rows, True)
    slope, _, _ = fit_order(rows)
    return BiasScan(slope, rows, False)


def state_space_sweep(scheme, model, p, x0: float, h: float, n_steps: int, M: int,
                      seed: int = 0, open_interval: bool = True) -> dict:
    """Simulate ``M`` paths and count values outside the state space."""
    model = get_model(model)
    p = as_params(model, p)
    W = make_noise_matrix(seed, M, h, n_steps)
    X = simulate_paths(scheme, model, p, x0, W, h)
    ss = model.state_space(p)
    inside = ss.interior(X) if open_interval else ss.contains(X)
    return {"violations": int(np.sum(~inside)), "min": float(np.min(X)),
            "max": float(np.max(X)), "values": X.size}


# inference studies -----------------------------------------------------------

@dataclass
class StudyRow:
    replicate: int
    estimator: str
    h_obs: float
    n: int
    fit: FitResult | None
    failure: str | None = None


@dataclass
class StudyTable:
    model: str
    true_params: tuple
    free_params: tuple
    rows: list

    def cell(self, estimator, h_obs, n) -> list:
        est = EstimatorKind.parse(estimator).value
        return [r for r in self.rows
                if r.estimator == est and math.isclose(r.h_obs, h_obs) and r.n == n]

    def estimates(self, estimator, h_obs, n, param: str, converged_only: bool = True) -> np.ndarray:
        idx = get_model(self.model).param_names.index(param)
        vals = [r.fit.values[idx] for r in self.cell(estimator, h_obs, n)
                if r.fit is not None and (r.fit.converged or not converged_only)]
        return np.array(vals, dtype=float)

    def failures(self, estimator, h_obs, n) -> dict:
        out = {}
        for r in self.cell(estimator, h_obs, n):
            reason = r.failure
            if reason is None and r.fit is not None and not r.fit.converged:
                reason = r.fit.invalid_reason or r.fit.termination
            if reason is not None:
                out[reason] = out.get(reason, 0) + 1
        return out

    def summary(self) -> list:
        """Median and IQR of each free parameter per cell (converged fits)."""
        cells = sorted({(r.estimator, r.h_obs, r.n) for r in self.rows})
        out = []
        for est, h, n in cells:
            for name in self.free_params:
                v = self.estimates(est, h, n, name)
                q25, med, q75 = (np.percentile(v, [25, 50, 75]) if v.size else (math.nan,) * 3)
                out.append({"estimator": est, "h_obs": h, "n": n, "param": name,
                            "median": float(med), "iqr": float(q75 - q25),
                            "converged": int(v.size),
                            "failed": sum(self.failures(est, h, n).values())})
        return out

    def csv_rows(self):
        """Rows of ``estimates.csv`` (one per replicate, estimator, cell, free parameter)."""
        names = get_model(self.model).param_names
        for r in sorted(self.rows, key=lambda r: (r.h_obs, r.n, r.estimator, r.replicate)):
            for name in self.free_params:
                if r.fit is None:
                    yield (r.replicate, r.estimator, r.h_obs, r.n, name, math.nan, math.inf,
                           False, math.nan)
                else:
                    yield (r.replicate, r.estimator, r.h_obs, r.n, name,
                           r.fit.values[names.index(name)], r.fit.nll, r.fit.converged,
                           r.fit.runtime_ms)


def simulate_observations(model, p, x0, h_obs: float, n: int, replicate: int, seed: int,
                          h_fine: float | None = None) -> np.ndarray:
    """One data path of ``n`` steps at ``h_obs``.

    Models with an exact sampler are sampled exactly at ``h_obs`` (equal in law
    to sampling finely and subsampling); the others use LT on ``h_fine``.
    """
    model = get_model(model)
    p = as_params(model, p)
    if model.has_exact:
        rng = generator(StreamKey(seed, replicate, Purpose.EXACT_SAMPLE))
        x = np.empty(n + 1)
        x[0] = x0
        for k in range(n):
            x[k + 1] = model.exact_sample(h_obs, x[k], p, rng)
        return x
    if h_fine is None:
        raise ValueError(f"{model.name} has no exact sampler; give h_fine")
    factor = _ratio(h_obs, h_fine, "h_obs")
    W = make_noise_matrix(seed, 1, h_fine, n * factor, first_path=replicate)
    return simulate_paths("LT", model, p, x0, W, h_fine)[0, ::factor]


def _study_replicate(args):
    (model, p0, x0, estimators, h_obs_list, n_list, r, seed, fixed, init, cfg, h_fine,
     kessler_exact) = args
    rows = []
    for h in h_obs_list:
        x = simulate_observations(model, p0, x0, h, max(n_list), r, seed, h_fine)
        for n in n_list:
            obs = ObservationSet(model, x[: n + 1], h, fixed=fixed)
            for est in estimators:
                est = EstimatorKind.parse(est).value
                try:
                    fr = fit(est, model, obs, init, cfg, kessler_exact=kessler_exact)
                    rows.append(StudyRow(r, est, h, n, fr))
                except NonFinite:
                    rows.append(StudyRow(r, est, h, n, None, "nonfinite-start"))
                except Unsupported:
                    rows.append(StudyRow(r, est, h, n, None, "unsupported"))
    return rows


def inference_study(model, p0, x0: float, estimators: Sequence, h_obs_list: Sequence[float],
                    M: int, n_list: Sequence[int] | None = None, T: float | None = None,
                    fixed: dict | None = None, init=None, seed: int = 0,
                    h_fine: float | None = None, cfg: NmConfig = NmConfig(),
                    kessler_exact: bool = True, workers: int = 1) -> StudyTable:
    """Fit every estimator to ``M`` simulated replicates per (h_obs, N) cell.

    Give either ``n_list`` or a horizon ``T`` (then ``N = T / h_obs``; a
    single N is used per h_obs).  Within one replicate and h_obs, the shorter
    datasets are prefixes of the longest one.  Failed fits are kept as rows.
    """
    model = get_model(model)
    p0 = as_params(model, p0)
    fixed = dict(fixed or {})
    init = as_params(model, init) if init is not None else tuple(1.0 for _ in p0)
    if n_list is None and T is None:
        raise ValueError("give n_list or T")
    jobs = []
    for r in range(M):
        if n_list is not None:
            jobs.append((model.name, p0, x0, list(estimators), list(h_obs_list), list(n_list),
                         r, seed, fixed, init, cfg, h_fine, kessler_exact))
        else:
            for h in h_obs_list:
                jobs.append((model.name, p0, x0, list(estimators), [h], [_ratio(T, h, "T")],
                             r, seed, fixed, init, cfg, h_fine, kessler_exact))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_study_replicate, jobs))
    else:
        parts = [_study_replicate(j) for j in jobs]
    rows = sorted((row for part in parts for row in part),
                  key=lambda r: (r.h_obs, r.n, r.estimator, r.replicate))
    free = tuple(n for n in model.param_names if n not in fixed)
    return StudyTable(model.name, p0, free, rows)


# asymptotic normality -------------------------------------------------------

@dataclass
class NormalityDiagnostic:
    param: str
    scale: str
    errors: np.ndarray = field(repr=False)
    skewness: float
    excess_kurtosis: float
    coverage: float
    n_converged: int
    n_failed: int


def normality_diagnostic(study: StudyTable, estimator, h_obs: float, n: int,
                         min_converged: int = 50) -> list:
    """Standardised errors per free parameter.

    Parameters entering the diffusion coefficient are scaled by ``sqrt(N)``,
    drift-only ones by ``sqrt(N h)``.  Coverage is the fraction of replicates
    whose interval ``estimate +- 1.96 sd`` contains the true value, with
    ``sd`` the sample standard deviation of the estimates.
    """
    model = get_model(study.model)
    out = []
    n_failed = sum(study.failures(estimator, h_obs, n).values())
    for name in study.free_params:
        v = study.estimates(estimator, h_obs, n, name)
        if v.size < min_converged:
            raise ValueError(f"only {v.size} converged fits for {name}; need {min_converged}")
        truth = study.true_params[model.param_names.index(name)]
        diffusion = name in model.diffusion_params
        scale = math.sqrt(n) if diffusion else math.sqrt(n * h_obs)
        e = scale * (v - truth)
        sd = np.std(e, ddof=1)
        cover = float(np.mean(np.abs(e) <= 1.959963984540054 * sd))
        out.append(NormalityDiagnostic(
            name, "sqrt(N)" if diffusion else "sqrt(N h)", e,
            float(stats.skew(e)), float(stats.kurtosis(e)), cover, int(v.size), n_failed))
    return out
