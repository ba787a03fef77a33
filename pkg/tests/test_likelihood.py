import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dataset, rich_data
from oracles import brute_simulated_loglik, central_difference
from crashvol import _kernels
from crashvol.likelihood import (
    EventDataset,
    EventObservation,
    LikelihoodProblem,
    ModelSpec,
    ParameterVector,
    Term,
    compile_design,
    gradient,
    loglik_fixed,
    make_draws,
    probabilities,
    realize_beta,
    simulated_loglik,
    standardized_draws,
    utilities,
)
from crashvol.quasirandom import norm_ppf


def test_utilities_examples():
    spec = ModelSpec((Term("x", "MC"),))
    obs = EventObservation("e", "TS", {"x": 2.0})
    assert utilities(obs, spec, [0.0]).tolist() == [0, 0, 0, 0]
    assert utilities(obs, spec, [0.5]).tolist() == [0, 1.0, 0, 0]
    zero = EventObservation("e", "TS", {"x": 0.0})
    u = utilities(zero, spec, [0.7], constants=[-3.102, -6.968, -11.629])
    assert u.tolist() == [0, -3.102, -6.968, -11.629]


def test_probability_examples():
    assert probabilities([0, 0, 0, 0]).tolist() == [0.25] * 4
    p = probabilities([0, 1, 0, 0])
    e = math.e
    assert p.tolist() == pytest.approx([1 / (3 + e), e / (3 + e), 1 / (3 + e), 1 / (3 + e)], abs=1e-15)
    assert p.round(4).tolist() == [0.1749, 0.4754, 0.1749, 0.1749]
    assert np.array_equal(probabilities(np.array([0, 1, 0, 0]) + 1000.0), p)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=4, max_size=4), st.floats(-1e4, 1e4))
def test_probabilities_simplex_and_shift(u, c):
    p = probabilities(u)
    assert np.all(p >= 0) and np.all(p <= 1)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert probabilities(np.asarray(u) + c) == pytest.approx(p, abs=1e-12)


def test_loglik_fixed_examples():
    spec = ModelSpec()
    data = dataset(["TS", "MC", "SC", "PRC", "MC"])
    assert loglik_fixed(data, spec, ParameterVector.zeros(spec)) == pytest.approx(-5 * math.log(4), abs=1e-12)
    one = ModelSpec((Term("x", "MC"),), constants=False)
    d1 = dataset(["MC"], x=[1.0])
    ll = loglik_fixed(d1, one, ParameterVector(one, [1.0]))
    assert ll == pytest.approx(math.log(math.e / (3 + math.e)), abs=1e-14)
    assert ll == pytest.approx(-0.7436, abs=1e-4)


def test_loglik_additive_over_partitions(rich_spec, rich_theta):
    spec = rich_spec.fixed_counterpart()
    data = rich_data(rich_spec, rich_theta, 40, seed=3)
    theta = ParameterVector(spec, rich_theta[:spec.n_params])
    total = loglik_fixed(data, spec, theta)
    parts = sum(loglik_fixed(data.subset(idx), spec, theta) for idx in np.array_split(np.arange(40), 5))
    assert total == pytest.approx(parts, abs=1e-10)


def test_realize_beta_examples():
    spec = ModelSpec((Term("speed", "PRC", True, "normal", ("fault",)),))
    theta = ParameterVector.from_parts(spec, [0, 0, 0], [0.064], [0.094], [-0.171])
    obs = EventObservation("e", "TS", {"speed": 1.0, "fault": 1.0})
    assert realize_beta(spec.terms[0], theta, obs, 1.0) == pytest.approx(-0.013, abs=1e-12)
    assert realize_beta(spec.terms[0], theta, EventObservation("e", "TS", {"speed": 1, "fault": 0}), 0.0) == 0.064

    spec2 = ModelSpec((Term("x", "MC", True, "normal", (), ("b",)),))
    theta2 = ParameterVector.from_parts(spec2, [0, 0, 0], [0.3], [0.1], [], [1.0])
    obs2 = EventObservation("e", "TS", {"x": 1.0, "b": math.log(2)})
    assert realize_beta(spec2.terms[0], theta2, obs2, 1.0) == pytest.approx(0.3 + 0.2, abs=1e-14)


def test_sigma_zero_equals_fixed(rich_spec, rich_theta):
    data = rich_data(rich_spec, rich_theta, 60, seed=5)
    theta = rich_theta.copy()
    theta[7:] = 0.0  # sigma, xi, gamma
    _, u = make_draws(rich_spec, 60, 50)
    sll = simulated_loglik(data, rich_spec, ParameterVector(rich_spec, theta), u)
    fixed = rich_spec.fixed_counterpart()
    ll = loglik_fixed(data, fixed, ParameterVector(fixed, theta[:7]))
    assert sll == pytest.approx(ll, abs=1e-10)


def _brute_events(spec, data):
    """Pure-Python utilities for an event given theta and a draw vector."""
    rows = [data.observation(i) for i in range(len(data))]
    names = spec.parameter_names()
    rand = spec.random_terms

    def make(obs):
        def util(theta, v):
            p = dict(zip(names, theta))
            u = [0.0] * spec.n_outcomes
            for k, o in enumerate(spec.outcomes[1:], start=1):
                u[k] += p[f"constant[{o}]"]
            for t in spec.terms:
                if t.random:
                    j = rand.index(t)
                    b = p[f"mean {t.label}"] + sum(p[f"het_mean {t.label}: {z}"] * obs.x[z] for z in t.het_mean)
                    s = p[f"sd {t.label}"] * math.exp(sum(p[f"het_var {t.label}: {h}"] * obs.x[h] for h in t.het_var))
                    b += s * v[j]
                else:
                    b = p[t.label]
                u[spec.outcomes.index(t.outcome)] += b * obs.x[t.variable]
            return u
        return util

    return [(spec.outcomes.index(o.chosen), make(o)) for o in rows]


def test_simulated_matches_brute_force(rich_spec, rich_theta):
    data = rich_data(rich_spec, rich_theta, 3, seed=11)
    rng = np.random.default_rng(0)
    V = rng.standard_normal((3, 4, 2))
    prob = LikelihoodProblem(data, rich_spec, V, standardized=True)
    ref = brute_simulated_loglik(_brute_events(rich_spec, data), V.tolist(), rich_theta.tolist())
    assert prob.loglik(rich_theta) == pytest.approx(ref, abs=1e-12)


def test_single_draw_is_plug_in(rich_spec, rich_theta):
    data = rich_data(rich_spec, rich_theta, 8, seed=2)
    V = np.random.default_rng(1).standard_normal((8, 1, 2))
    sll = LikelihoodProblem(data, rich_spec, V, standardized=True).loglik(rich_theta)
    plug = 0.0
    for i, (chosen, util) in enumerate(_brute_events(rich_spec, data)):
        plug += math.log(probabilities(util(rich_theta.tolist(), V[i, 0]))[chosen])
    assert sll == pytest.approx(plug, abs=1e-12)


def test_fixed_gradient_matches_finite_differences(rich_spec, rich_theta, ten_events):
    spec = rich_spec.fixed_counterpart()
    x = rich_theta[:spec.n_params]
    f = lambda v: loglik_fixed(ten_events, spec, ParameterVector(spec, v))  # noqa: E731
    g = gradient(ten_events, spec, ParameterVector(spec, x))
    fd = central_difference(f, x.tolist())
    assert g == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_simulated_gradient_matches_finite_differences(rich_spec, rich_theta, ten_events):
    _, u = make_draws(rich_spec, 10, 30)
    prob = LikelihoodProblem(ten_events, rich_spec, u)
    g = prob.gradient(rich_theta)
    fd = central_difference(prob.loglik, rich_theta.tolist())
    assert g == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_constant_gradient_at_uniform_point():
    spec = ModelSpec()
    outcomes = ["TS"] * 40 + ["MC"] * 30 + ["PRC"] * 20 + ["SC"] * 10
    data = dataset(outcomes)
    g = gradient(data, spec, ParameterVector.zeros(spec))
    N = len(outcomes)
    assert g == pytest.approx([N * (0.3 - 0.25), N * (0.2 - 0.25), N * (0.1 - 0.25)], abs=1e-12)


def _antithetic(N, R, J, seed=0):
    """Draw sets closed under flipping the sign of any single coordinate."""
    base = np.random.default_rng(seed).standard_normal((N, R // 2 ** J, J))
    blocks = []
    for mask in range(2 ** J):
        signs = np.array([-1.0 if mask >> j & 1 else 1.0 for j in range(J)])
        blocks.append(base * signs)
    return np.concatenate(blocks, axis=1)


def test_sigma_gradient_zero_at_zero_with_symmetric_draws(rich_spec, rich_theta, ten_events):
    theta = rich_theta.copy()
    theta[7:9] = 0.0
    prob = LikelihoodProblem(ten_events, rich_spec, _antithetic(10, 40, 2), standardized=True)
    g = prob.gradient(theta)
    assert np.max(np.abs(g[7:9])) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_sll_even_in_sigma(s1, s2):
    spec = ModelSpec((Term("x1", "MC", True), Term("x2", "PRC", True, "uniform")))
    rng = np.random.default_rng(4)
    data = dataset(list(rng.choice(["TS", "MC", "PRC", "SC"], 12)), x1=rng.normal(size=12), x2=rng.normal(size=12))
    prob = LikelihoodProblem(data, spec, _antithetic(12, 20, 2, seed=1), standardized=True)
    base = [0.1, -0.2, -0.5, 0.4, -0.3]
    a = prob.loglik(base + [s1, s2])
    assert prob.loglik(base + [-s1, s2]) == pytest.approx(a, abs=1e-10)
    assert prob.loglik(base + [-s1, -s2]) == pytest.approx(a, abs=1e-10)


def test_more_draws_stabilize(rich_spec, rich_theta):
    data = rich_data(rich_spec, rich_theta, 50, seed=8)
    vals = []
    for R in (50, 100, 200, 400):
        _, u = make_draws(rich_spec, 50, R)
        vals.append(simulated_loglik(data, rich_spec, ParameterVector(rich_spec, rich_theta), u))
    diffs = np.abs(np.diff(vals)) / 50
    assert np.all(diffs < 1e-2)


def test_standardized_draws_apply_each_distribution():
    spec = ModelSpec((Term("a", "MC", True, "normal"), Term("b", "PRC", True, "uniform")))
    u = np.full((2, 3, 2), 0.975)
    v = standardized_draws(spec, u)
    assert v[..., 0] == pytest.approx(float(norm_ppf(0.975)))
    assert v[..., 1] == pytest.approx(0.95)
    with pytest.raises(ValueError):
        standardized_draws(spec, np.full((2, 3, 1), 0.5))


def test_backends_agree(rich_spec, rich_theta):
    if _kernels.simulated_loglik_terms_numba is None:
        pytest.skip("numba unavailable")
    data = rich_data(rich_spec, rich_theta, 30, seed=9)
    _, u = make_draws(rich_spec, 30, 25)
    prob = LikelihoodProblem(data, rich_spec, u)
    d = prob.design
    theta = ParameterVector(rich_spec, rich_theta)
    args = (d.chosen, d.weights, d.X, d.term_out, d.term_rand, d.const_out, d.rand_term, d.Z, d.z_owner,
            d.B, d.b_owner, prob.V, d.n_out, *map(np.ascontiguousarray, theta.parts()), True)
    ll_a, s_a = _kernels.simulated_loglik_terms_numpy(*args)
    ll_b, s_b = _kernels.simulated_loglik_terms_numba(*args)
    assert np.allclose(ll_a, ll_b, rtol=0, atol=1e-12)
    assert np.allclose(s_a, s_b, rtol=0, atol=1e-12)


def test_weights_scale_contributions():
    spec = ModelSpec((Term("x", "MC"),))
    base = dataset(["MC", "TS"], x=[1.0, 2.0])
    w = EventDataset(base.event_ids, base.outcome, base.columns, [2.0, 1.0])
    dup = dataset(["MC", "MC", "TS"], x=[1.0, 1.0, 2.0])
    theta = ParameterVector(spec, [0.1, 0.2, 0.3, 0.4])
    assert loglik_fixed(w, spec, theta) == pytest.approx(loglik_fixed(dup, spec, theta), abs=1e-14)


def test_spec_validation_and_roundtrip(rich_spec):
    with pytest.raises(ValueError, match="duplicate"):
        ModelSpec((Term("x", "MC"), Term("x", "MC", True)))
    with pytest.raises(ValueError, match="base"):
        ModelSpec((Term("x", "TS"),))
    with pytest.raises(ValueError):
        Term("x", "MC", het_mean=("z",))
    assert ModelSpec.from_dict(rich_spec.to_dict()) == rich_spec
    assert rich_spec.parameter_names()[3] == "mean x1[MC]"
    assert rich_spec.n_params == 11


def test_complete_cases_and_design_errors(rich_spec):
    data = dataset(["TS", "MC", "SC"], x1=[1, np.nan, 2], x2=[0, 1, 2], x3=[1, 1, 1], z=[0, 1, 0], h=[1, 0, 1])
    ok, dropped = data.complete_cases(rich_spec)
    assert len(ok) == 2 and dropped == ["E1"]
    with pytest.raises(ValueError):
        compile_design(data, rich_spec)
    with pytest.raises(KeyError, match="x3"):
        dataset(["TS"], x1=[1], x2=[1], z=[1], h=[1]).complete_cases(rich_spec)
