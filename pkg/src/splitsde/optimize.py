"""Nelder-Mead minimisation of pseudo-NLLs.

The objective may return ``+inf`` (invalid parameters, domain failures); such
points are never accepted by reflection or expansion, so the simplex contracts
away from them.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from .likelihoods import EstimatorKind, InvalidReason, ObservationSet, nll
from .models import ParamVector, as_params, get_model

__all__ = ["NmConfig", "NmResult", "FitResult", "NonFinite", "Termination",
           "nelder_mead", "fit"]


class NonFinite(RuntimeError):
    """The initial simplex is +inf everywhere even after rescaling."""


class Termination(str, enum.Enum):
    TOLERANCE = "tolerance"
    MAX_ITER = "max-iterations"


@dataclass(frozen=True)
class NmConfig:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    max_iterations: int | None = None  # default 500 * dimension
    x_tolerance: float = 1e-8
    f_tolerance: float = 1e-10
    initial_scale: float = 0.05
    initial_floor: float = 0.05

    def __post_init__(self):
        if not (self.reflection > 0 and self.expansion > 1
                and 0 < self.contraction < 1 and 0 < self.shrink < 1):
            raise ValueError("Nelder-Mead coefficients outside their admissible ranges")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")

    def iterations_for(self, dim: int) -> int:
        return self.max_iterations if self.max_iterations is not None else 500 * dim


@dataclass
class NmResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool
    termination: Termination
    history: list = field(default_factory=list, repr=False)


def _initial_simplex(x0, cfg, scale=1.0):
    d = x0.size
    pts = np.tile(x0, (d + 1, 1))
    for i in range(d):
        pts[i + 1, i] += scale * max(cfg.initial_scale * abs(x0[i]), cfg.initial_floor)
    return pts


def nelder_mead(objective: Callable[[np.ndarray], float], x0: Sequence[float],
                cfg: NmConfig = NmConfig(), track: bool = False) -> NmResult:
    x0 = np.asarray(x0, dtype=float).ravel()
    d = x0.size
    if d < 1:
        raise ValueError("dimension must be >= 1")
    nev = 0

    def F(x):
        nonlocal nev
        nev += 1
        v = float(objective(x))
        return v if v == v else math.inf  # NaN counts as +inf

    scale = 1.0
    for _ in range(11):
        sim = _initial_simplex(x0, cfg, scale)
        fs = np.array([F(x) for x in sim])
        if np.any(np.isfinite(fs)):
            break
        scale *= 0.5
    else:
        raise NonFinite("objective is +inf on the whole initial simplex after 10 rescalings")

    a, g, c, s = cfg.reflection, cfg.expansion, cfg.contraction, cfg.shrink
    max_it = cfg.iterations_for(d)
    history = []
    it = 0
    reason = Termination.MAX_ITER
    converged = False
    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        if track:
            history.append(fs[0])
        diam = float(np.max(np.abs(sim[1:] - sim[0])))
        spread = fs[-1] - fs[0] if np.isfinite(fs[-1]) else math.inf
        # both tolerances must hold; either alone stops too early on flat valleys
        if diam <= cfg.x_tolerance and spread <= cfg.f_tolerance:
            converged, reason = True, Termination.TOLERANCE
            break
        if it >= max_it:
            break
        it += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + a * (centroid - sim[-1])
        fr = F(xr)
        if fr < fs[0]:
            xe = centroid + g * (xr - centroid)
            fe = F(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + c * (xr - centroid)
            fc = F(xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + c * (sim[-1] - centroid)
            fc = F(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        # shrink towards the best vertex
        for i in range(1, d + 1):
            sim[i] = sim[0] + s * (sim[i] - sim[0])
            fs[i] = F(sim[i])
    return NmResult(sim[0].copy(), float(fs[0]), it, nev, converged, reason, history)


@dataclass
class FitResult:
    estimator: str
    params: ParamVector
    nll: float
    iterations: int
    converged: bool
    termination: str
    runtime_ms: float
    invalid_reason: str | None = None
    config: dict = field(default_factory=dict, repr=False)

    @property
    def values(self) -> tuple:
        return self.params.values


def fit(estimator, model, obs: ObservationSet, init, cfg: NmConfig = NmConfig(),
        fixed: dict | None = None, kessler_exact: bool = True) -> FitResult:
    """Minimise the estimator's NLL over the free parameters.

    ``fixed`` (default: ``obs.fixed``) maps names to held values; only the
    remaining parameters enter the simplex.  ``converged`` is also false when
    the optimum is +inf.
    """
    est = EstimatorKind.parse(estimator)
    model = get_model(model)
    init = as_params(model, init)
    fixed = dict(obs.fixed if fixed is None else fixed)
    names = model.param_names
    free = [i for i, n in enumerate(names) if n not in fixed]
    full = np.array([fixed.get(n, v) for n, v in zip(names, init)], dtype=float)

    def assemble(z):
        p = full.copy()
        p[free] = z
        return p

    reasons = {}

    def objective(z):
        r = nll(est, model, assemble(z), obs, kessler_exact=kessler_exact)
        if r.invalid_reason is not None:
            reasons[r.invalid_reason] = reasons.get(r.invalid_reason, 0) + 1
        return r.value

    t = time.perf_counter()
    if free:
        res = nelder_mead(objective, full[free], cfg)
        best = assemble(res.x)
        val, iters, conv, term = res.fun, res.iterations, res.converged, res.termination.value
    else:
        best = full
        val, iters, conv, term = objective(np.array([])), 0, True, Termination.TOLERANCE.value
    runtime = 1e3 * (time.perf_counter() - t)
    reason = None
    if not math.isfinite(val):
        conv = False
        reason = max(reasons, key=reasons.get).value if reasons else None
    return FitResult(est.value, ParamVector(model.name, tuple(best)), val, iters, conv,
                     term, runtime, reason, asdict(cfg))
