import numpy as np
import pytest
from hypothesis import given, strategies as st

from xtrial.data import EstimandSpec, StackedDataset
from xtrial.nuisance import (
    EstimationError,
    evaluate,
    fit_nuisances,
    fit_treatment,
    fit_trial_membership,
    resolve_sampling,
    truncate,
)
from xtrial.sim import generate, load_preset

WS = ("W1", "W2")


def bayes_p_trial1(spec, w1, w2):
    """Exact P(T = 1 | W) under the scenario's design."""
    f = []
    for td in spec.trials:
        pw = (td.p_w1 if w1 else 1 - td.p_w1) * (td.p_w2 if w2 else 1 - td.p_w2)
        f.append(spec.trial_size(td) * pw)
    return f[0] / sum(f)


def test_all_trials_referent_is_constant(s1_data):
    model, marginal = fit_trial_membership(s1_data, EstimandSpec.for_dataset(s1_data, 1, {1, 2}))
    assert marginal == 1.0 and model.fit is None
    np.testing.assert_array_equal(model.predict(s1_data), 1.0)


def test_marginal_from_sample_sizes(s1_data):
    _, marginal = fit_trial_membership(s1_data, EstimandSpec.for_dataset(s1_data, 1, {1}))
    assert marginal == pytest.approx(200 / 350, abs=1e-15)


def test_empty_ws_collapses_to_marginal(s1_data):
    spec = EstimandSpec.for_dataset(s1_data, 1, {1})
    model, marginal = fit_trial_membership(s1_data, spec)
    np.testing.assert_allclose(model.predict(s1_data), marginal, atol=1e-10)


def test_treatment_pooled_over_trials(scenario1, s1_data):
    spec = EstimandSpec.for_dataset(s1_data, 1, {1}, w_s=WS)
    g_a = fit_treatment(s1_data, spec).predict(s1_data)
    # logistic score equation for the intercept: mean fitted = observed fraction
    assert g_a.mean() == pytest.approx(np.mean(s1_data.arm == 1), abs=1e-10)
    # pooled assignment is half the trial-1 membership probability
    for w1 in (0, 1):
        for w2 in (0, 1):
            rows = (s1_data.covariates["W1"] == w1) & (s1_data.covariates["W2"] == w2)
            truth = 0.5 * bayes_p_trial1(scenario1, w1, w2)
            assert abs(g_a[rows][0] - truth) < 0.08


def test_treatment_requires_recipients(s1_data):
    with pytest.raises(EstimationError):
        fit_treatment(s1_data, EstimandSpec(8, frozenset({1}), frozenset({1})))


@pytest.mark.parametrize("w", [(1, 0), (0, 1), (1, 1), (0, 0)])
def test_membership_matches_bayes(w):
    spec = load_preset("scenario1")
    ests = []
    for rep in range(20):
        ds = generate(spec, rep)
        model, _ = fit_trial_membership(ds, EstimandSpec.for_dataset(ds, 1, {1}, w_s=WS))
        rows = (ds.covariates["W1"] == w[0]) & (ds.covariates["W2"] == w[1])
        ests.append(model.predict(ds)[rows][0])
    # main-terms logistic is close to, not exactly, the saturated Bayes rule
    assert abs(np.mean(ests) - bayes_p_trial1(spec, *w)) < 0.03


def test_evaluate_single_trial_all_sampled(s1_data):
    ds = s1_data.take(np.flatnonzero(s1_data.trial == 1))
    spec = EstimandSpec.for_dataset(ds, 1, {1}, w_s=WS)
    g = evaluate(fit_nuisances(ds, spec), ds, spec)
    np.testing.assert_array_equal(g["g_t"], 1.0)
    np.testing.assert_array_equal(g["g_delta"], 1.0)
    assert np.all((g["g_a"] > 0.3) & (g["g_a"] < 0.7))


def test_truncation_engages():
    np.testing.assert_array_equal(truncate(np.array([0.001, 0.5, 0.999]), (0.005, 0.995)),
                                  [0.005, 0.5, 0.995])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_truncation_idempotent_monotone(ps):
    p = np.sort(np.array(ps))
    t = truncate(p, (0.005, 0.995))
    np.testing.assert_array_equal(truncate(t, (0.005, 0.995)), t)
    assert np.all(np.diff(t) >= 0)


def test_known_design_weights(s2_data):
    spec = EstimandSpec.for_dataset(s2_data, 1, {1}, w_s=WS)
    g = resolve_sampling(s2_data, spec)
    t1 = s2_data.trial == 1
    assert set(np.unique(g[t1])) == {0.05, 0.1}
    np.testing.assert_array_equal(g[~t1], 1.0)


def test_all_sampled_gives_exact_ones(s1_data):
    for mode in ("known", "estimate"):
        spec = EstimandSpec.for_dataset(s1_data, 1, {1}, gdelta=mode)
        np.testing.assert_array_equal(resolve_sampling(s1_data, spec), 1.0)


def test_estimated_sampling_recovers_design(s3_data):
    spec = EstimandSpec.for_dataset(s3_data, 1, {1}, w_s=WS, gdelta="estimate")
    est = resolve_sampling(s3_data, spec)
    known = resolve_sampling(s3_data, EstimandSpec.for_dataset(s3_data, 1, {1}, w_s=WS))
    for t in (1, 2):
        for p in (0.05, 0.1):
            rows = (s3_data.trial == t) & (known == p)
            assert abs(est[rows].mean() - p) < 0.02


def test_unknown_weights_single_class_errors(s2_data):
    # strip weights and sampling from trial 1: two-phase registry but Delta has one class
    ds = StackedDataset(s2_data.trial, s2_data.arm, s2_data.covariates,
                        np.where(s2_data.trial == 1, 0, s2_data.delta), s2_data.s, s2_data.y,
                        np.full(s2_data.n, np.nan), s2_data.registry)
    with pytest.raises(EstimationError, match="one class"):
        resolve_sampling(ds, EstimandSpec.for_dataset(ds, 2, {2}))


def test_degenerate_referent_clever_covariates(s2_data):
    spec = EstimandSpec.for_dataset(s2_data, 1, {1, 2}, w_s=WS)
    fn = fit_nuisances(s2_data, spec)
    g = evaluate(fn, s2_data, spec)
    h1 = g["g_t"] / (g["g_a"] * fn.g_t_marginal)
    h2 = h1 / g["g_delta"]
    np.testing.assert_array_equal(h1, 1 / g["g_a"])
    np.testing.assert_array_equal(h2, 1 / (g["g_delta"] * g["g_a"]))


def test_evaluated_probabilities_within_bounds(s3_data):
    spec = EstimandSpec.for_dataset(s3_data, 2, {1}, w_s=WS, prob_truncation=(0.2, 0.8))
    g = evaluate(fit_nuisances(s3_data, spec), s3_data, spec)
    for k in ("g_t", "g_a"):
        assert g[k].min() >= 0.2 and g[k].max() <= 0.8
