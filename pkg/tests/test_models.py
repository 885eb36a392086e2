import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from splitsde.models import (DEFAULT_PARAMS, MODELS, Boundary, DomainError, ParamVector,
                             Unsupported, get_model)
from splitsde.checks import interior_grid
from splitsde.rng import StreamKey
from splitsde.schemes import exact_transition_sample, lt_step

CIR = (2.0, 6.0, 0.2)


def cir_phi1_oracle(h, x):
    mt = 6.0 - 0.1
    return mt + math.exp(-2.0 * h) * (x - mt)


@pytest.mark.parametrize("name", list(MODELS))
def test_decomposition_identity(name):
    m, p = MODELS[name], DEFAULT_PARAMS[name]
    x = interior_grid(m, p)
    lhs = m.f1(x, p) + m.shift(p) * m.g(x, p) + 0.5 * m.g(x, p) * m.g_x(x, p)
    assert np.max(np.abs(lhs - m.f(x, p))) < 1e-10 * max(1.0, np.max(np.abs(m.f(x, p))))


@pytest.mark.parametrize("name", list(MODELS))
def test_lamperti_pair_and_semigroup(name):
    m, p = MODELS[name], DEFAULT_PARAMS[name]
    x = interior_grid(m, p)
    assert np.all(np.abs(m.v_inv(m.v(x, p), p) - x) < 1e-9 * (1 + np.abs(x)))
    assert np.all(np.diff(m.v(x, p)) > 0)
    for h in (0.01, 0.1, 0.5):
        assert np.all(np.abs(m.phi1(h, m.phi1(h, x, p), p) - m.phi1(2 * h, x, p)) < 1e-9 * (1 + np.abs(x)))


@pytest.mark.parametrize("name", list(MODELS))
def test_phi1_solves_ode(name):
    m, p = MODELS[name], DEFAULT_PARAMS[name]
    x0 = float(interior_grid(m, p, 7)[3])
    sol = solve_ivp(lambda t, y: m.f1(y, p), (0, 0.3), [x0], rtol=1e-11, atol=1e-12)
    assert m.phi1(0.3, x0, p) == pytest.approx(sol.y[0, -1], rel=1e-7)
    assert m.phi1(0.0, x0, p) == pytest.approx(x0)


def test_cir_phi1_value():
    assert MODELS["cir"].phi1(0.1, 1.0, CIR) == pytest.approx(cir_phi1_oracle(0.1, 1.0), rel=1e-14)
    assert MODELS["cir"].phi1(0.1, 1.0, CIR) == pytest.approx(1.888219, abs=1e-6)


def test_cir_phi2_value():
    oracle = (1.0 + math.sqrt(2 * 2 * 0.2) / 2 * 0.5) ** 2
    assert MODELS["cir"].phi2(0.1, 1.0, 0.5, CIR) == pytest.approx(oracle, rel=1e-13)
    assert oracle == pytest.approx(1.497214, abs=1e-6)
    assert MODELS["cir"].phi2(0.1, 1.3, 0.0, CIR) == pytest.approx(1.3)


def test_wf_phi2_range():
    rng = np.random.default_rng(1)
    m, p = MODELS["wf"], DEFAULT_PARAMS["wf"]
    y = m.phi2(0.1, rng.uniform(0, 1, 10_000), 3 * rng.standard_normal(10_000), p)
    assert np.all((y >= 0) & (y <= 1))


def test_verhulst_fixed_point():
    assert MODELS["verhulst"].phi1(50.0, 0.3, (1.0, 1.0, 0.5)) == pytest.approx(1.0)


def test_lamperti_drift():
    ou = MODELS["ou"]
    y = np.linspace(-2, 2, 9)
    x = ou.v_inv(y, (2.0, 1.0))
    assert np.allclose(ou.lamperti_drift(y, (2.0, 1.0)), -2.0 * (x - 1.0) / 2.0)
    cir = MODELS["cir"]
    y = cir.v(1.0, CIR)
    eps = 1e-6
    gx_fd = (cir.g(1 + eps, CIR) - cir.g(1 - eps, CIR)) / (2 * eps)
    alt = cir.f(1.0, CIR) / cir.g(1.0, CIR) - gx_fd / 2
    assert cir.lamperti_drift(y, CIR) == pytest.approx(alt, abs=1e-8)
    assert math.isfinite(MODELS["student"].lamperti_drift(0.0, DEFAULT_PARAMS["student"]))


def test_step_mean_values():
    cir = MODELS["cir"]
    assert cir.step_mean("LT", 0.1, 1.0, CIR) == pytest.approx(cir_phi1_oracle(0.1, 1.0) + 0.02, rel=1e-13)
    for name in ("ou", "cir", "student", "igbm", "wf"):
        p = DEFAULT_PARAMS[name]
        for s in ("LT", "S"):
            assert MODELS[name].step_mean(s, 0.0, 0.7, p) == pytest.approx(0.7)


@pytest.mark.parametrize("name,x", [("ou", 1.5), ("cir", 1.0), ("student", 3.0), ("igbm", 1.5), ("wf", 0.3), ("fdiff", 8.0)])
@pytest.mark.parametrize("scheme", ["LT", "S"])
def test_step_mean_matches_monte_carlo(name, x, scheme):
    from splitsde.schemes import strang_step
    m, p, h = MODELS[name], DEFAULT_PARAMS[name], 0.1
    rng = np.random.default_rng(7)
    xi = math.sqrt(h) * rng.standard_normal(1_000_000)
    fn = lt_step if scheme == "LT" else strang_step
    y = fn(m, p, h, np.full(xi.size, x), xi)
    se = y.std() / math.sqrt(y.size)
    assert abs(y.mean() - m.step_mean(scheme, h, x, p)) < 3 * se + 1e-12


def test_step_mean_unsupported_for_verhulst_strang():
    with pytest.raises(Unsupported):
        MODELS["verhulst"].step_mean("S", 0.1, 1.0, DEFAULT_PARAMS["verhulst"])


def test_cir_exact_law():
    cir = MODELS["cir"]
    c, df, nc = cir.ncx2_params(0.5, 1.0, CIR)
    assert df == pytest.approx(60.0)
    x = exact_transition_sample("cir", CIR, 0.5, 1.0, StreamKey(3), 100_000)
    mean = 1.0 * math.exp(-1.0) + 6.0 * (1 - math.exp(-1.0))
    assert abs(x.mean() - mean) < 3 * x.std() / math.sqrt(x.size)
    assert cir.exact_mean(0.5, 1.0, CIR) == pytest.approx(mean)


def test_ou_stationary_sample():
    x = exact_transition_sample("ou", (2.0, 1.0), 50.0, 4.0, StreamKey(4), 100_000)
    assert abs(x.mean() - 1.0) < 3 * x.std() / math.sqrt(x.size)


def test_exact_sampler_unsupported():
    with pytest.raises(Unsupported):
        exact_transition_sample("student", DEFAULT_PARAMS["student"], 0.1, 1.0, StreamKey(0))


def test_ahngao_exact_is_reciprocal_cir():
    x = exact_transition_sample("ahngao", (0.2, 2.0, 0.5), 0.1, 1.0, StreamKey(5), 50_000)
    assert np.all(x > 0)


def test_adaptive_step():
    cir = MODELS["cir"]
    assert cir.adaptive_step("LT", 0.3, 1.0, CIR) == 0.3
    # mu < b/2 makes the ODE fixed point negative
    p = (2.0, 0.05, 0.2)
    hs = cir.adaptive_step("LT", 1.0, 0.05, p)
    assert hs < 1.0
    assert cir.phi1(hs, 0.05, p) >= 0
    mt = 0.05 - 0.1
    assert mt + math.exp(-2.0 * (hs + 1e-6)) * (0.05 - mt) < 0
    with pytest.raises(DomainError):
        cir.phi1(hs + 1e-6, 0.05, p)
    assert cir.adaptive_step("LT", 0.01, 0.05, p) == 0.01
    hs2 = cir.adaptive_step("S", 1.0, 0.05, p)
    assert cir.phi1(hs2 / 2, 0.05, p) >= 0
    with pytest.raises(DomainError):
        cir.adaptive_step("LT", 1.0, -0.1, p)


def test_phi1_domain_error():
    with pytest.raises(DomainError):
        MODELS["cir"].phi1(0.1, -1.0, CIR)


def test_boundaries():
    wf = MODELS["wf"]
    ss = wf.state_space((1.0, 0.5, -0.3))
    assert ss.lower_boundary is Boundary.ENTRANCE and ss.upper_boundary is Boundary.ENTRANCE
    cir = MODELS["cir"]
    assert cir.state_space((2, 6, 0.2)).lower_boundary is Boundary.ENTRANCE
    assert cir.state_space((2, 0.1, 0.2)).lower_boundary is Boundary.ATTAINABLE
    flags = MODELS["fdiff"].state_space((2.0, 1.5, 2.0)).flags
    assert flags["zero_entrance"] and not flags["ergodic"]


def test_param_vector():
    pv = ParamVector.from_dict("cir", {"theta": 2, "mu": 6, "b": 0.2})
    assert pv.values == (2.0, 6.0, 0.2)
    assert pv.as_dict()["mu"] == 6.0
    with pytest.raises(KeyError, match="theta, mu, b"):
        ParamVector.from_dict("cir", {"gamma": 1})
    assert not MODELS["student"].is_valid((2.0, 10.0, -1.0))
    assert not MODELS["cir"].is_valid((2.0, -6.0, 0.2))


def test_unknown_model():
    with pytest.raises(KeyError):
        get_model("nope")
