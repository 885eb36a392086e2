"""Invariant suite run by the ``check`` subcommand."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .likelihoods import (EstimatorKind, ObservationSet, log_transition_density, nll,
                          nll_constant)
from .models import DEFAULT_PARAMS, MODELS, Boundary, get_model
from .rng import StreamKey, coarsen_matrix, make_noise_grid, make_noise_matrix, standard_normal
from .schemes import simulate_path, simulate_paths, strang_step

__all__ = ["CheckResult", "interior_grid", "run_checks"]


#: starting points inside the bulk of each model's stationary law
TYPICAL_X0 = {"ou": 1.0, "cir": 6.0, "student": 10.0, "igbm": 1.0, "fdiff": 10.0,
              "wf": 0.5, "ahngao": 2.0, "gl": 1.0, "verhulst": 1.0}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


def interior_grid(model, p, n: int = 1000) -> np.ndarray:
    """``n`` points spread over the interior of the state space."""
    ss = get_model(model).state_space(p)
    if math.isinf(ss.lower) and math.isinf(ss.upper):
        return np.linspace(-10.0, 10.0, n)
    if math.isinf(ss.upper):
        return np.geomspace(ss.lower + 0.02, ss.lower + 20.0, n)
    return np.linspace(ss.lower, ss.upper, n + 2)[1:-1]


def _rel(a, b):
    return np.abs(a - b) / (1.0 + np.abs(b))


def _fd(fn, x, eps=1e-6):
    d = eps * np.maximum(1.0, np.abs(x))
    return (fn(x + d) - fn(x - d)) / (2.0 * d)


def check_decomposition():
    worst = {}
    for name, m in MODELS.items():
        p = DEFAULT_PARAMS[name]
        x = interior_grid(m, p)
        gg = m.g(x, p) * m.g_x(x, p)
        err = np.max(np.abs(m.f1(x, p) + m.shift(p) * m.g(x, p) + 0.5 * gg - m.f(x, p)))
        worst[name] = err
    bad = {k: v for k, v in worst.items() if not v < 1e-10}
    return not bad, f"max |f1 + f2 - f| = {max(worst.values()):.2e}" + (f"; failing {bad}" if bad else "")


def check_lamperti_pair():
    bad = {}
    for name, m in MODELS.items():
        p = DEFAULT_PARAMS[name]
        x = interior_grid(m, p)
        err = np.max(np.abs(m.v_inv(m.v(x, p), p) - x) / (1.0 + np.abs(x)))
        if not err < 1e-9:
            bad[name] = err
    return not bad, "v_inv(v(x)) == x" + (f"; failing {bad}" if bad else "")


def check_v_increasing():
    bad = [n for n, m in MODELS.items()
           if not np.all(np.diff(m.v(interior_grid(m, DEFAULT_PARAMS[n]), DEFAULT_PARAMS[n])) > 0)]
    return not bad, "v strictly increasing" + (f"; failing {bad}" if bad else "")


def check_semigroup():
    bad = {}
    for name, m in MODELS.items():
        p = DEFAULT_PARAMS[name]
        x = interior_grid(m, p)
        for h in (0.01, 0.1, 0.5):
            err = np.max(_rel(m.phi1(h, m.phi1(h, x, p), p), m.phi1(2 * h, x, p)))
            if not err < 1e-9:
                bad[(name, h)] = err
    return not bad, "phi1_h o phi1_h == phi1_2h" + (f"; failing {bad}" if bad else "")


def check_inverse_flow():
    bad = {}
    for name, m in MODELS.items():
        p = DEFAULT_PARAMS[name]
        x = interior_grid(m, p)
        for h in (0.01, 0.1, 0.5):
            y = m.phi1(h, x, p)
            err = np.max(_rel(m.phi1_inv(h, y, p), x))
            d_fd = _fd(lambda u: m.phi1_inv(h, u, p), y)
            derr = np.max(np.abs(m.phi1_inv_dx(h, y, p) - d_fd) / np.abs(d_fd))
            if not (err < 1e-9 and derr < 1e-6):
                bad[(name, h)] = (err, derr)
    return not bad, "inverse flow pair and derivative" + (f"; failing {bad}" if bad else "")


def check_g_derivative():
    bad = {}
    for name, m in MODELS.items():
        p = DEFAULT_PARAMS[name]
        x = interior_grid(m, p)
        d_fd = _fd(lambda u: m.g(u, p), x)
        err = np.max(np.abs(m.g_x(x, p) - d_fd) / np.maximum(np.abs(d_fd), 1e-8))
        if not err < 1e-6:
            bad[name] = err
    return not bad, "g' matches finite differences" + (f"; failing {bad}" if bad else "")


def check_boundaries():
    m = MODELS["wf"]
    ok = True
    for mu in (0.35, 0.5, 0.65):
        for a in (-0.1, -0.3):
            if min(mu, 1 - mu) >= -a:
                ss = m.state_space((1.0, mu, a))
                ok &= ss.lower_boundary is Boundary.ENTRANCE and ss.upper_boundary is Boundary.ENTRANCE
    cir = MODELS["cir"]
    ok &= cir.state_space((2, 6, 0.2)).lower_boundary is Boundary.ENTRANCE
    ok &= cir.state_space((2, 0.1, 0.2)).lower_boundary is Boundary.ATTAINABLE
    return ok, "boundary classification (WF entrance, CIR mu >= b)"


def check_coarsen_sum():
    g = make_noise_grid(StreamKey(7), 2.0 ** -12, 4096)
    W = g.increments[None, :]
    total = np.sum(W)
    ok = all(np.sum(coarsen_matrix(W, k)) == total and
             coarsen_matrix(W, k).sum(axis=-1)[0] == W.sum(axis=-1)[0]
             for k in (1, 2, 4, 16, 256, 4096))
    return ok, "sum of coarsened increments is exact"


def check_rng():
    a = standard_normal(StreamKey(1), 100_000)
    b = standard_normal(StreamKey(1), 100_000)
    c = standard_normal(StreamKey(1, 1), 100_000)
    ks = stats.kstest(a, "norm").statistic
    rho = abs(np.corrcoef(a, c)[0, 1])
    ok = np.array_equal(a, b) and ks < 0.006 and rho < 0.02
    return ok, f"determinism, KS = {ks:.4f}, cross-correlation = {rho:.4f}"


def check_determinism():
    g = make_noise_grid(StreamKey(3, 2), 0.01, 500)
    t1 = simulate_path("Strang", "cir", (2, 6, 0.2), 1.0, g)
    t2 = simulate_path("Strang", "cir", (2, 6, 0.2), 1.0, make_noise_grid(StreamKey(3, 2), 0.01, 500))
    W = make_noise_matrix(3, 4, 0.01, 500, first_path=2)
    batch = simulate_paths("Strang", "cir", (2, 6, 0.2), 1.0, W, 0.01)
    ok = np.array_equal(t1.values, t2.values) and np.array_equal(batch[0], t1.values)
    return ok, "identical grids give identical paths (single and batch)"


def check_strang_reduction():
    bad = {}
    for name, m in MODELS.items():
        p = DEFAULT_PARAMS[name]
        x = interior_grid(m, p, 200)
        for h in (0.01, 0.1):
            # zero displacement in Lamperti space (GL's SDE part carries a drift)
            xi = -m.shift(p) * h
            err = np.max(_rel(strang_step(m, p, h, x, xi), m.phi1(h, x, p)))
            if not err < 1e-12:
                bad[(name, h)] = err
    return not bad, "strang_step(xi=0) == phi1_h" + (f"; failing {bad}" if bad else "")


def check_nll_density():
    bad = {}
    for name, m in MODELS.items():
        p = DEFAULT_PARAMS[name]
        for est in EstimatorKind:
            if est is EstimatorKind.HERMITE or (est is EstimatorKind.TRUE_MLE and not m.has_exact):
                continue
            # small h keeps F-diffusion data inside the Strang image
            h = 0.01
            W = make_noise_matrix(5, 1, h, 50)
            x = simulate_paths("LT", m, p, TYPICAL_X0[name], W, h)[0]
            obs = ObservationSet(name, x, h)
            v = nll(est, m, p, obs)
            if not v.finite:
                bad[(name, est.value)] = v.invalid_reason
                continue
            dens = sum(log_transition_density(m, p, est, h, x[k], x[k + 1]) for k in range(obs.n))
            ref = -dens + obs.n * nll_constant(est, m, h)
            if not abs(v.value - ref) <= 1e-9 * max(1.0, abs(ref)):
                bad[(name, est.value)] = v.value - ref
    return not bad, "nll == sum(-log density) + N c(h)" + (f"; failing {bad}" if bad else "")


def check_nll_invalid():
    obs = ObservationSet("student", [0.0, 0.5, 1.0], 0.1)
    cases = [("student", (2.0, 10.0, -1.0)), ("cir", (2.0, -1.0, 0.2)), ("ou", (-1.0, 0.0))]
    ok = True
    for name, p in cases:
        o = ObservationSet(name, [1.0, 1.2, 1.1], 0.1)
        for est in ("LT", "Strang", "Kessler", "EuM", "LampertiEuM"):
            r = nll(est, name, p, o)
            ok &= r.value == math.inf and r.invalid_reason is not None
    ok &= nll("LT", "student", (2, 10, 5), obs).finite
    return ok, "invalid parameters give +inf"


def check_state_space_preservation():
    rng = np.random.default_rng(0)
    bad = {}
    cases = {"cir": (2, 6, 0.2), "wf": (1, 0.5, -0.3), "igbm": (2, 1, 0.5), "fdiff": (2, 10, 2)}
    from .schemes import lt_step
    for name, p in cases.items():
        m = MODELS[name]
        ss = m.state_space(p)
        x = interior_grid(m, p, 10_000)[rng.integers(0, 10_000, 100_000)]
        for h in (0.01, 0.1):
            xi = math.sqrt(h) * rng.standard_normal(x.size)
            for fn in (lt_step, strang_step):
                y = fn(m, p, h, x, xi)
                if not np.all(ss.contains(y)):
                    bad[(name, h, fn.__name__)] = int(np.sum(~ss.contains(y)))
    return not bad, "LT/Strang one-step values stay in the state space" + (f"; failing {bad}" if bad else "")


CHECKS: dict[str, Callable] = {
    "decomposition": check_decomposition,
    "lamperti-pair": check_lamperti_pair,
    "v-increasing": check_v_increasing,
    "semigroup": check_semigroup,
    "inverse-flow": check_inverse_flow,
    "g-derivative": check_g_derivative,
    "boundaries": check_boundaries,
    "coarsen-sum": check_coarsen_sum,
    "rng": check_rng,
    "determinism": check_determinism,
    "strang-reduction": check_strang_reduction,
    "nll-density": check_nll_density,
    "nll-invalid": check_nll_invalid,
    "state-space": check_state_space_preservation,
}


def run_checks(names=None) -> list[CheckResult]:
    out = []
    for name, fn in CHECKS.items():
        if names and name not in names:
            continue
        t = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as e:  # a crashing check is a failed check
            ok, detail = False, f"{type(e).__name__}: {e}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t))
    return out
