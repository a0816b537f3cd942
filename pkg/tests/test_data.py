import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from xtrial.data import (
    ALL_SAMPLED,
    TWO_PHASE,
    DomainError,
    Encoder,
    EstimandSpec,
    ObservedUnit,
    ParseError,
    Schema,
    SchemaError,
    StackedDataset,
    load_stacked_csv,
    validate,
    write_stacked_csv,
)

SUPP_TABLE = """trial,arm,age,bmi,delta,s,y,weight
1,1,23,22.5,1,0.61,,
1,0,31,27.1,1,0.12,,
2,2,29,24.0,1,0.44,0,0.1
2,2,35,30.2,0,,0,0.1
2,0,41,26.3,0,9.9,1,1
2,0,19,21.8,1,0.08,1,1
"""


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_supplementary_layout(tmp_path):
    ds = load_stacked_csv(write(tmp_path, SUPP_TABLE))
    assert ds.n == 6 and ds.trials == (1, 2)
    assert ds.registry[1].design == ALL_SAMPLED and ds.registry[2].design == TWO_PHASE
    assert ds.covariate_names == ("age", "bmi")
    # delta = 0 drops whatever sits in the s cell
    assert np.isnan(ds.s[4]) and np.isnan(ds.s[3])
    assert list(ds.y_levels()[:2]) == ["missing", "missing"]
    assert list(ds.y_levels()[2:]) == ["0", "0", "1", "1"]


def test_early_phase_delta_zero_fails_validation(tmp_path):
    text = SUPP_TABLE.replace("1,0,31,27.1,1,0.12,,", "1,0,31,27.1,0,,,")
    reg = {"1": {"design": "all-sampled"}, "2": {"design": "two-phase"}}
    cfg = write(tmp_path, json.dumps(reg), "registry.json")
    ds = load_stacked_csv(write(tmp_path, text), registry=cfg)
    rep = validate(ds, EstimandSpec.for_dataset(ds, 1, {1}))
    assert not rep.ok and any("all-sampled" in f for f in rep.failures)


@pytest.mark.parametrize("text, err, fragment", [
    ("trial,arm,delta,delta\n1,1,1,1\n", SchemaError, "duplicate"),
    ("trial,arm,delta,s\n1,1,x,0.3\n", ParseError, "row 2"),
    ("trial,arm,delta,s\n1,1,1,0.3\n1,1,1,abc\n", ParseError, "'s'"),
    ("trial,arm,delta,s\n1,1,2,0.3\n", DomainError, "delta"),
    ("trial,arm,delta,s,y\n1,1,1,0.3,7\n", DomainError, "y"),
    ("trial,arm,s\n1,1,0.3\n", SchemaError, "delta"),
])
def test_load_errors(tmp_path, text, err, fragment):
    with pytest.raises(err, match=fragment):
        load_stacked_csv(write(tmp_path, text))


def test_round_trip(tmp_path, s2_data):
    p = tmp_path / "rt.csv"
    write_stacked_csv(s2_data, p)
    back = load_stacked_csv(p)
    assert back.equals(s2_data)


def test_round_trip_categorical(tmp_path):
    ds = load_stacked_csv(write(tmp_path, "trial,arm,region,delta,s\n1,1,B,1,0.5\n1,2,,1,0.7\n"
                                          "2,1,A,1,0.1\n"), Schema(categorical=("region",)))
    p = tmp_path / "rt.csv"
    write_stacked_csv(ds, p)
    assert load_stacked_csv(p, Schema(categorical=("region",))).equals(ds)


@given(st.lists(st.tuples(st.integers(1, 3), st.integers(0, 2), st.booleans(),
                          st.floats(-1e6, 1e6, allow_nan=False), st.sampled_from([0, 1, None])),
                min_size=1, max_size=25))
def test_round_trip_property(tmp_path_factory, rows):
    units = [ObservedUnit(t, a, {"w": float(t * a)}, int(d), s if d else None, y)
             for t, a, d, s, y in rows]
    ds = StackedDataset.from_units(units)
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_stacked_csv(ds, p)
    assert load_stacked_csv(p).equals(ds)


def test_observed_unit_invariants():
    with pytest.raises(DomainError):
        ObservedUnit(1, 1, {}, 0, 0.4, None)
    with pytest.raises(DomainError):
        ObservedUnit(1, 1, {}, 1, 0.4, None, weight_known=1.5)
    with pytest.raises(DomainError):
        ObservedUnit(1, 1, {}, 2, None, None)


def test_dataset_is_immutable(s1_data):
    with pytest.raises(ValueError):
        s1_data.s[0] = 3.0


# ---------------------------------------------------------------- validate

def test_validate_all_pass(s1_data):
    rep = validate(s1_data, EstimandSpec.for_dataset(s1_data, 1, {1, 2}, w_s=("W1", "W2")))
    assert rep.ok and not rep.warnings
    assert set(rep.covariate_availability) == {(c, t) for c in ("W1", "W2") for t in (1, 2)}
    assert all(rep.covariate_availability.values())
    assert rep.sampling_diagnostics == {1: (1.0, 1.0), 2: (1.0, 1.0)}


def test_validate_uncollected_covariate(s1_data):
    cov = dict(s1_data.covariates)
    cov["age"] = np.where(s1_data.trial == 1, 30.0, np.nan)
    ds = StackedDataset.from_arrays(s1_data.trial, s1_data.arm, cov, s1_data.delta,
                                    s1_data.s, s1_data.y)
    rep = validate(ds, EstimandSpec.for_dataset(ds, 1, {1, 2}, w_s=("W1", "age")))
    assert not rep.ok
    assert rep.covariate_availability[("age", 2)] is False
    assert rep.covariate_availability[("age", 1)] is True
    assert "covariate 'age' not collected in trial 2" in rep.failures


def test_validate_positivity_warning(s1_data):
    w1, w2 = s1_data.covariates["W1"], s1_data.covariates["W2"]
    drop = (s1_data.arm == 1) & (w1 == 1) & (w2 == 1)
    ds = s1_data.take(np.flatnonzero(~drop))
    rep = validate(ds, EstimandSpec.for_dataset(ds, 1, {1}, w_s=("W1", "W2")))
    assert rep.ok
    hits = [w for w in rep.warnings if "positivity" in w]
    assert len(hits) == 1 and "'W1': '1.0', 'W2': '1.0'" in hits[0]
    entry = next(e for e in rep.positivity_diagnostics if e["n_vaccine"] == 0)
    assert entry["n_ref"] > 0


def test_validate_unknown_vaccine_names_labels(s1_data):
    rep = validate(s1_data, EstimandSpec(7, frozenset({1}), frozenset({1})))
    assert not rep.ok and "valid: [1, 2, 3]" in rep.failures[0]


def test_validate_is_pure(s2_data):
    spec = EstimandSpec.for_dataset(s2_data, 1, {1}, w_s=("W1", "W2"))
    before = s2_data.s.copy()
    a, b = validate(s2_data, spec), validate(s2_data, spec)
    assert a == b
    np.testing.assert_array_equal(before, s2_data.s)


def test_validate_disjoint_referent_warns(s1_data):
    rep = validate(s1_data, EstimandSpec.for_dataset(s1_data, 2, {1}, w_s=("W1",)))
    assert any("disjoint" in w for w in rep.warnings)


def test_weight_design_conflict_is_a_warning(s1_data):
    ds = s1_data.with_weight(np.where(s1_data.trial == 1, 0.5, np.nan))
    rep = validate(ds, EstimandSpec.for_dataset(ds, 1, {1}))
    assert rep.ok and any("known weights" in w for w in rep.warnings)


# ---------------------------------------------------------------- encoder

def test_encoder_reference_level_and_y_levels(tmp_path):
    ds = load_stacked_csv(write(tmp_path, SUPP_TABLE))
    enc = Encoder.fit(ds, ["Y", "age"])
    # levels 0 < 1 < missing; the first is the reference
    assert enc.columns == ("(intercept)", "Y=1", "Y=missing", "age")
    x = enc.design(ds).values
    np.testing.assert_array_equal(x[:, 2], [1, 1, 0, 0, 0, 0])
    np.testing.assert_array_equal(x[:, 1], [0, 0, 0, 0, 1, 1])


def test_estimand_spec_checks():
    with pytest.raises(ValueError):
        EstimandSpec(1, frozenset(), frozenset({1}))
    with pytest.raises(ValueError):
        EstimandSpec(1, {1}, {1}, prob_truncation=(0.5, 0.2))
    with pytest.raises(ValueError):
        EstimandSpec(1, {1}, {1}, scale="logit")
