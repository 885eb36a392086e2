import math

import numpy as np
import pytest

from splitsde.analysis import (StudyRow, StudyTable, bias_order_scan, fit_order, inference_study,
                               normality_diagnostic, one_step_wasserstein, state_space_sweep,
                               strong_error_curve, strong_error_curves, wasserstein1)
from splitsde.models import ParamVector, Unsupported
from splitsde.optimize import FitResult

CIR = (2.0, 6.0, 0.2)


def test_fit_order_exact_power_laws():
    assert fit_order([(2.0 ** -3, 2.0 ** -3), (2.0 ** -4, 2.0 ** -4), (2.0 ** -5, 2.0 ** -5)])[0] == 1.0
    hs = 2.0 ** -np.arange(3, 9)
    s, i, r2 = fit_order([(h, 0.7 * h) for h in hs])
    assert s == pytest.approx(1.0, abs=1e-12) and i == pytest.approx(math.log2(0.7), abs=1e-12)
    assert fit_order([(h, 3 * h ** 0.5) for h in hs])[0] == pytest.approx(0.5, abs=1e-12)
    assert r2 == pytest.approx(1.0)


def test_fit_order_drops_zero_rows():
    with pytest.raises(ValueError):
        fit_order([(0.1, 0.0), (0.05, 0.0), (0.02, 0.01), (0.01, 0.005)])
    assert fit_order([(0.1, 0.0), (0.04, 0.04), (0.02, 0.02), (0.01, 0.01)])[0] == pytest.approx(1.0)


def test_scheme_against_itself_is_zero():
    r = strong_error_curve("LT", "cir", CIR, 1.0, 1.0, [2.0 ** -6, 2.0 ** -5], 2.0 ** -6, 20)
    assert r.rows[0][1] == 0.0 and r.rows[1][1] > 0


def test_coupling_checksums_and_shape():
    reps = strong_error_curves(["LT", "Strang"], "cir", CIR, 1.0, 1.0, [2.0 ** -k for k in range(3, 7)],
                               2.0 ** -8, 50, seed=4)
    r = reps["LT"]
    # every coarsening sums to the same per-path Brownian increment
    assert np.all(r.checksums == r.checksums[0])
    assert len(r.rows) == 4 and r.M == 50
    assert all(a[1] > b[1] for a, b in zip(r.rows, r.rows[1:]))


def test_strong_error_validation():
    with pytest.raises(ValueError):
        strong_error_curve("LT", "cir", CIR, 1.0, 1.0, [0.3], 2.0 ** -6, 5)
    with pytest.raises(Unsupported):
        strong_error_curve("LT", "cir", CIR, 1.0, 1.0, [0.25], 2.0 ** -6, 5, reference="exact")


def test_wasserstein1():
    a = np.random.default_rng(0).standard_normal(1000)
    assert wasserstein1(a, a) == 0.0
    assert wasserstein1([0, 1], [1, 2]) == 1.0
    rng = np.random.default_rng(1)
    w = wasserstein1(rng.standard_normal(100_000), 0.5 + rng.standard_normal(100_000))
    assert w == pytest.approx(0.5, abs=0.02)
    w = wasserstein1(rng.standard_normal(50_000), 0.5 + rng.standard_normal(80_000))
    assert w == pytest.approx(0.5, abs=0.02)
    from scipy.stats import wasserstein_distance
    x, y = rng.standard_normal(3000), rng.exponential(size=3000)
    assert wasserstein1(x, y) == pytest.approx(wasserstein_distance(x, y), rel=1e-10)
    with pytest.raises(ValueError):
        wasserstein1([], [1.0])


def test_one_step_wasserstein():
    assert one_step_wasserstein("cir", CIR, "Exact", 0.1, 1.0, 100_000, seed=2) < 0.01
    w = [one_step_wasserstein("cir", CIR, "LT", h, 1.0, 100_000, seed=2) for h in (0.2, 0.1, 0.05)]
    assert w[0] > w[1] > w[2]
    with pytest.raises(Unsupported):
        one_step_wasserstein("student", (2, 10, 5), "LT", 0.1, 1.0, 10)


def test_bias_scan():
    hs = [2.0 ** -k for k in range(4, 11)]
    assert bias_order_scan("ou", (2.0, 1.0), "LT", 3.0, hs).degenerate_zero
    lt = bias_order_scan("cir", CIR, "LT", 1.0, hs)
    assert lt.slope == pytest.approx(2.0, abs=0.2)
    # leading LT coefficient b theta^2 / 4
    h, bias = lt.rows[-1]
    assert bias / h ** 2 == pytest.approx(0.2 * 4 / 4, rel=0.05)
    assert bias_order_scan("cir", CIR, "Strang", 1.0, hs).slope == pytest.approx(3.0, abs=0.3)
    with pytest.raises(Unsupported):
        bias_order_scan("cir", CIR, "EuM", 1.0, hs)


def test_state_space_sweep():
    r = state_space_sweep("LT", "wf", (1.0, 0.5, -0.3), 0.5, 0.01, 50, 100)
    assert r["violations"] == 0 and r["values"] == 100 * 51
    r = state_space_sweep("EuM", "wf", (1.0, 0.5, -0.3), 0.05, 0.05, 50, 200)
    assert r["violations"] > 0


def test_study_completeness_and_prefixes():
    st = inference_study("cir", CIR, 6.0, ["LT", "Kessler"], [0.1], 4, n_list=[50, 100],
                         fixed={"theta": 2.0}, seed=9)
    assert len(st.rows) == 4 * 2 * 2
    assert st.free_params == ("mu", "b")
    rows = list(st.csv_rows())
    assert len(rows) == 4 * 2 * 2 * 2 and len(rows[0]) == 9
    again = inference_study("cir", CIR, 6.0, ["LT", "Kessler"], [0.1], 4, n_list=[50, 100],
                            fixed={"theta": 2.0}, seed=9)
    assert [r.fit.values for r in st.rows] == [r.fit.values for r in again.rows]


def test_study_failures_are_typed():
    # Kessler's expansion variance is negative at the all-ones start for large steps
    st = inference_study("cir", CIR, 6.0, ["Kessler"], [0.5], 3, n_list=[100], seed=3,
                         kessler_exact=False, fixed={"theta": 2.0})
    assert len(st.rows) == 3
    fails = st.failures("Kessler", 0.5, 100)
    assert sum(fails.values()) == 3 and set(fails) <= {"nonfinite-start", "domain-violation",
                                                        "params-invalid", "max-iterations"}


def test_study_needs_n_or_T():
    with pytest.raises(ValueError):
        inference_study("cir", CIR, 6.0, ["LT"], [0.1], 1)
    st = inference_study("ou", (2.0, 1.0), 1.0, ["LT"], [0.1], 2, T=5.0, seed=1)
    assert {r.n for r in st.rows} == {50}


def test_non_exact_model_uses_fine_lt():
    st = inference_study("student", (2.0, 10.0, 5.0), 10.0, ["LT"], [0.1], 2, n_list=[50],
                         h_fine=0.01, seed=1, init=(2.0, 10.0, 5.0))
    assert all(r.fit is not None for r in st.rows)


def test_true_mle_self_consistency():
    st = inference_study("cir", CIR, 6.0, ["TrueMLE"], [0.01], 20, n_list=[5000], seed=6,
                         fixed={"theta": 2.0})
    for name, truth in (("mu", 6.0), ("b", 0.2)):
        assert np.median(st.estimates("TrueMLE", 0.01, 5000, name)) == pytest.approx(truth, rel=0.05)


def _synthetic_table(errors_mu, errors_b, n, h):
    rows = []
    for i, (em, eb) in enumerate(zip(errors_mu, errors_b)):
        vals = (2.0, 6.0 + em / math.sqrt(n * h), 0.2 + eb / math.sqrt(n))
        fr = FitResult("LT", ParamVector("cir", vals), 0.0, 10, True, "tolerance", 1.0)
        rows.append(StudyRow(i, "LT", h, n, fr))
    return StudyTable("cir", CIR, ("mu", "b"), rows)


def test_normality_diagnostic_calibration():
    rng = np.random.default_rng(3)
    st = _synthetic_table(rng.standard_normal(5000), rng.standard_normal(5000), 1000, 0.01)
    diag = {d.param: d for d in normality_diagnostic(st, "LT", 0.01, 1000)}
    assert diag["mu"].scale == "sqrt(N h)" and diag["b"].scale == "sqrt(N)"
    for d in diag.values():
        assert abs(d.skewness) < 0.1 and abs(d.excess_kurtosis) < 0.2
        assert d.coverage == pytest.approx(0.95, abs=0.01)
        assert d.n_converged == 5000 and d.n_failed == 0


def test_normality_needs_enough_fits():
    st = _synthetic_table(np.zeros(10), np.zeros(10), 100, 0.01)
    with pytest.raises(ValueError):
        normality_diagnostic(st, "LT", 0.01, 100)
