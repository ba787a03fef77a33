import json
import math

import numpy as np
import pytest

from conftest import dataset, rich_data
from crashvol.estimation import (
    EstimationResult,
    FitOptions,
    NotNestedError,
    aic,
    bfgs_maximize,
    bic,
    coefficient_table,
    comparison_table,
    constants_closed_form,
    fit,
    fit_statistics,
    likelihood_ratio,
    mcfadden_r2,
    null_loglik,
    numerical_hessian,
    standard_errors,
)
from crashvol.likelihood import ModelSpec, Term
from crashvol.synth import GroundTruth, bernoulli, normal, simulate_events


def shares_dataset(counts):
    outcomes = [o for o, c in zip(("TS", "MC", "PRC", "SC"), counts) for _ in range(c)]
    return dataset(outcomes)


def test_constants_only_closed_form():
    data = shares_dataset((404, 375, 132, 87))
    spec = ModelSpec()
    res = fit(data, spec)
    expected = [math.log(375 / 404), math.log(132 / 404), math.log(87 / 404)]
    assert res.estimates == pytest.approx(expected, abs=1e-8)
    # quoted four-decimal values carry hand-rounding error of up to 2e-4
    assert res.estimates == pytest.approx([-0.0745, -1.1185, -1.5357], abs=2e-4)
    assert constants_closed_form(data, spec) == pytest.approx(expected, abs=1e-15)
    assert res.loglik == pytest.approx(null_loglik(data, spec), abs=1e-9)
    assert res.converged


def test_logistic_standard_error_matches_information():
    rng = np.random.default_rng(0)
    x = rng.normal(size=400)
    p = 1 / (1 + np.exp(-0.7 * x))
    y = np.where(rng.random(400) < p, "MC", "TS")
    spec = ModelSpec((Term("x", "MC"),), outcomes=("TS", "MC"), constants=False)
    res = fit(dataset(list(y), x=x), spec)
    b = res.estimates[0]
    ph = 1 / (1 + np.exp(-b * x))
    info = float(np.sum(x ** 2 * ph * (1 - ph)))
    assert res.se[0] == pytest.approx(1 / math.sqrt(info), abs=1e-3)


def test_standard_errors_edge_cases():
    cov, se, t, ok = standard_errors(np.array([[-4.0]]), [0.0])
    assert se[0] == 0.5 and t[0] == 0.0 and ok
    H = -np.array([[2.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 3.0]])
    cov, se, t, ok = standard_errors(H, [1, 2, 3])
    assert np.max(np.abs(cov - cov.T)) < 1e-10
    _, _, _, ok = standard_errors(np.array([[1.0, 0], [0, -1.0]]), [0, 0])
    assert not ok


def test_numerical_hessian_of_quadratic():
    A = np.array([[-3.0, 1.0], [1.0, -2.0]])
    H = numerical_hessian(lambda x: A @ x, np.array([0.5, -1.0]))
    assert H == pytest.approx(A, abs=1e-8)


def test_bfgs_on_concave_quadratic():
    A = np.array([[-3.0, 1.0], [1.0, -2.0]])
    b = np.array([1.0, 2.0])
    out = bfgs_maximize(lambda x: (0.5 * x @ A @ x + b @ x, A @ x + b), np.zeros(2), 500, 1e-10, 1e-14)
    assert out.converged
    assert out.x == pytest.approx(np.linalg.solve(-A, b), abs=1e-8)
    fs = [h[1] for h in out.history]
    assert all(b >= a - 1e-12 for a, b in zip(fs, fs[1:]))


def test_fit_statistic_formulas():
    assert aic(-596.6, 31) == pytest.approx(1255.2, abs=1e-9)
    assert aic(-563.35, 37) == pytest.approx(1200.7, abs=1e-9)
    assert aic(0.0, 0) == 0.0 and bic(0.0, 0, 100) == 0.0
    assert bic(-596.6, 31, 648) == pytest.approx(31 * math.log(648) + 1193.2, abs=1e-9)
    assert mcfadden_r2(-600.0, -800.0) == pytest.approx(0.25)
    lr, p = likelihood_ratio(-592.064, -596.6, 2)
    assert lr == pytest.approx(9.072) and p == pytest.approx(math.exp(-9.072 / 2), rel=1e-12)
    assert likelihood_ratio(-10.0, -10.0, 0) == (0.0, 1.0)


@pytest.fixture(scope="module")
def nested_pair():
    spec = ModelSpec((Term("x", "MC"), Term("d", "SC")))
    small = ModelSpec((Term("x", "MC"),))
    truth = GroundTruth(spec, [0.2, -0.4, -0.9, 0.8, 0.7], {"x": normal(0, 1), "d": bernoulli(0.5)}, 800, 4)
    data = simulate_events(truth)
    return data, fit(data, spec), fit(data, small)


def test_fit_converges_with_small_gradient(nested_pair):
    _, big, _ = nested_pair
    assert big.converged
    assert np.max(np.abs(big.gradient)) < big.options.gradient_tolerance
    assert big.history[-1][2] < big.options.gradient_tolerance
    fs = [h[1] for h in big.history]
    assert all(b >= a - 1e-12 for a, b in zip(fs, fs[1:]))


def test_nested_lr_and_statistics(nested_pair):
    _, big, small = nested_pair
    assert big.loglik >= small.loglik - 1e-8
    s = fit_statistics(big, small)
    assert s.lr_df == 1
    assert s.lr == pytest.approx(2 * (big.loglik - small.loglik))
    assert s.aic == aic(big.loglik, big.n_params)
    assert s.bic == bic(big.loglik, big.n_params, big.n_obs)
    assert s.mcfadden_r2 == mcfadden_r2(big.loglik, big.loglik_null)
    with pytest.raises(NotNestedError, match="not nested"):
        fit_statistics(small, big)


def test_result_roundtrip(nested_pair):
    _, big, _ = nested_pair
    d = json.loads(json.dumps(big.to_dict()))
    back = EstimationResult.from_dict(d)
    assert back.estimates == pytest.approx(big.estimates, abs=0)
    assert back.loglik == big.loglik
    assert back.to_dict() == d
    text = coefficient_table([big], ["m"])
    assert "x[MC]" in text and "t-stat" in text


def test_fit_deterministic_mixed(rich_spec, rich_theta):
    data = rich_data(rich_spec, rich_theta, 150, seed=21)
    opts = FitOptions(n_draws=25, seed=3)
    a, b = fit(data, rich_spec, opts), fit(data, rich_spec, opts)
    assert np.max(np.abs(a.theta - b.theta)) <= 1e-10
    assert a.loglik == b.loglik


def test_reported_sigma_is_absolute(rich_spec, rich_theta):
    data = rich_data(rich_spec, rich_theta, 150, seed=22)
    res = fit(data, rich_spec, FitOptions(n_draws=25, initial_sigma=-0.1))
    idx = [res.names.index(f"sd {t.label}") for t in rich_spec.random_terms]
    assert np.all(res.estimates[idx] >= 0)
    assert np.all(np.abs(res.theta[idx]) == res.estimates[idx])


def test_sigma_zero_truth_gives_insignificant_lr():
    spec = ModelSpec((Term("x", "MC", True), Term("w", "PRC")))
    truth = GroundTruth(spec, [0.1, -0.3, -0.5, 0.8, 0.6, 0.0], {"x": normal(0, 1), "w": normal(0, 1)}, 1500, 5)
    data = simulate_events(truth)
    mixed = fit(data, spec, FitOptions(n_draws=100))
    fixed = fit(data, spec.fixed_counterpart())
    s = fit_statistics(mixed, fixed)
    assert mixed.estimate("sd x[MC]") < 0.3
    assert s.lr_pvalue > 0.05


def test_listwise_deletion_reported():
    spec = ModelSpec((Term("x", "MC"),))
    data = dataset(["TS", "MC", "SC", "PRC", "MC", "TS"] * 10, x=[1.0, np.nan, 0.5, -1, 2, 0] * 10)
    res = fit(data, spec)
    assert res.n_obs == 50 and len(res.dropped) == 10


def test_fit_rejects_empty():
    spec = ModelSpec((Term("x", "MC"),))
    with pytest.raises(ValueError):
        fit(dataset(["TS"], x=[np.nan]), spec)


class _Stub:
    """EstimationResult with chosen (p, LL, N)."""

    @staticmethod
    def make(p, ll, n=648, terms=None):
        terms = terms if terms is not None else tuple(Term(f"v{i}", "MC") for i in range(p - 3))
        spec = ModelSpec(terms)
        z = np.zeros(spec.n_params)
        return EstimationResult(spec, spec.parameter_names(), z, z, None, z, z, ll, -786.82, n, True, "", 0, [], z)


def test_comparison_table_layout_and_lr():
    a = _Stub.make(31, -596.6)
    b = _Stub.make(33, -592.064)
    text, lr = comparison_table([a, b], ["A", "B"])
    assert "1255.200" in text and "1250.128" in text
    assert len(lr) == 1 and lr[0]["df"] == 2 and lr[0]["unrestricted"] == "B"

    text, lr = comparison_table([a, a], ["A", "A2"])
    assert len(lr) == 1 and lr[0]["lr"] == 0.0 and lr[0]["df"] == 0

    c = _Stub.make(4, -700.0, terms=(Term("other", "SC"),))
    text, lr = comparison_table([a, c], ["A", "C"])
    assert lr == [] and "not nested" in text

    d = _Stub.make(31, -590.0, n=629)
    _, lr = comparison_table([a, d], ["A", "D"])
    assert lr[0]["lr"] is None and "not applicable" in lr[0]["note"]
