import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from boostlss.design import ColumnSchema, Schema
from boostlss.distributions import DomainError
from boostlss.pipeline import (WEATHER_COLUMNS, PipelineError, SyntheticSpec, allocate_faults,
                               extrapolation_check, generate_synthetic, read_overlap_csv, read_weather_csv,
                               simulate_weather, split, training_ranges, weather_schema, write_weather_csv)


@pytest.fixture(scope="module")
def weather():
    return simulate_weather(n_days=30, n_regions=4, seed=0)


# -- allocation -------------------------------------------------------------------------------


def overlap(rows):
    return pd.DataFrame(rows, columns=["forecast_region", "admin_region", "weight"])


def test_identity_overlap_returns_counts():
    w = overlap([("a", "a", 1.0), ("b", "b", 1.0)])
    out = allocate_faults({"a": 3.0, "b": 0.0}, w)
    assert out.to_dict() == {"a": 3.0, "b": 0.0}


def test_even_split():
    w = overlap([("f1", "a", 0.5), ("f2", "a", 0.5)])
    assert allocate_faults({"a": 10.0}, w).to_dict() == {"f1": 5.0, "f2": 5.0}


def test_doubly_stochastic_weights_conserve_mass():
    rng = np.random.default_rng(0)
    # Sinkhorn balancing gives a doubly stochastic 3x3 matrix
    W = rng.uniform(0.1, 1.0, (3, 3))
    for _ in range(500):
        W /= W.sum(axis=0, keepdims=True)
        W /= W.sum(axis=1, keepdims=True)
    W /= W.sum(axis=0, keepdims=True)
    w = overlap([(f"f{i}", f"a{j}", W[i, j]) for i in range(3) for j in range(3)])
    counts = {"a0": 4.0, "a1": 11.0, "a2": 7.0}
    out = allocate_faults(counts, w)
    assert abs(out.sum() - sum(counts.values())) < 1e-9
    expected = {f"f{i}": sum(W[i, j] * counts[f"a{j}"] for j in range(3)) for i in range(3)}
    for k, v in expected.items():
        assert out[k] == pytest.approx(v, abs=1e-12)


def test_unknown_admin_region_rejected():
    w = overlap([("f1", "a", 1.0), ("f1", "zz", 1.0)])
    with pytest.raises(PipelineError, match="unknown admin region 'zz'"):
        allocate_faults({"a": 1.0}, w)


def test_uncovered_admin_region_rejected():
    with pytest.raises(PipelineError, match="no overlap weights"):
        allocate_faults({"a": 1.0, "b": 2.0}, overlap([("f1", "a", 1.0)]))


@given(st.lists(st.floats(0, 100), min_size=3, max_size=3), st.lists(st.floats(0, 100), min_size=3, max_size=3),
       st.floats(0, 5))
def test_allocation_is_linear(c1, c2, alpha):
    w = overlap([("f1", "a", 0.3), ("f2", "a", 0.7), ("f1", "b", 1.0), ("f2", "c", 0.25), ("f3", "c", 0.75)])
    d1, d2 = dict(zip("abc", c1)), dict(zip("abc", c2))
    mix = {k: alpha * d1[k] + d2[k] for k in "abc"}
    lhs = allocate_faults(mix, w)
    rhs = alpha * allocate_faults(d1, w) + allocate_faults(d2, w)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-9)
    assert (allocate_faults(dict.fromkeys("abc", 0.0), w) == 0).all()


def test_overlap_weights_must_sum_to_one(tmp_path):
    p = tmp_path / "o.csv"
    overlap([("f1", "a", 0.6), ("f2", "a", 0.3)]).to_csv(p, index=False)
    with pytest.raises(PipelineError, match="'a' sum to"):
        read_overlap_csv(p)


# -- splitting ---------------------------------------------------------------------------------


def test_all_rows_to_train(weather):
    df = weather[0]
    tr, ho, te = split(df, (1.0, 0.0, 0.0))
    assert len(tr) == len(df) and len(ho) == len(te) == 0


def test_split_is_seeded_disjoint_and_exhaustive(weather):
    df = weather[0]
    a = split(df, seed=4)
    b = split(df, seed=4)
    c = split(df, seed=5)
    assert all(x.index.equals(y.index) for x, y in zip(a, b))
    assert not a[0].index.equals(c[0].index)
    idx = np.concatenate([p.index for p in a])
    assert len(idx) == len(set(idx)) == len(df)


def test_split_is_blocked_by_date(weather):
    parts = split(weather[0], seed=1)
    dates = [set(p["date"]) for p in parts]
    assert not (dates[0] & dates[1]) and not (dates[0] & dates[2]) and not (dates[1] & dates[2])


def test_split_rejects_empty_partition():
    df = pd.DataFrame({"date": ["2020-01-01", "2020-01-02"], "v": [1, 2]})
    with pytest.raises(PipelineError, match="empty"):
        split(df, (0.8, 0.1, 0.1))


def test_split_rejects_bad_fractions(weather):
    with pytest.raises(PipelineError):
        split(weather[0], (0.5, 0.2, 0.2))


# -- extrapolation guard -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def guarded(weather):
    df = weather[0]
    schema = weather_schema()
    names = ["temp_max", "gust_max", "region", "wind_dir8"]
    schema.fit(df, names)
    ranges = training_ranges(df, schema, names, [["region", "wind_dir8", "gust_max"]])
    return df, schema, ranges


def test_training_rows_raise_no_warnings(guarded):
    df, schema, ranges = guarded
    assert all(w == [] for w in extrapolation_check(ranges, schema, df))


def test_hot_row_warns_once_naming_bound(guarded):
    df, schema, ranges = guarded
    row = df.iloc[:1].copy()
    row["temp_max"] = ranges.numeric["temp_max"][1] + 5.0
    (w,) = extrapolation_check(ranges, schema, row)
    assert len(w) == 1
    assert w[0].startswith("temp_max=") and "above training max" in w[0]


def test_unseen_interaction_cell_warns():
    df = pd.DataFrame({"r": ["a", "a", "b"], "d": ["u", "u", "v"], "x": [1.0, 2.0, 3.0]})
    schema = Schema([ColumnSchema("r", "categorical"), ColumnSchema("d", "categorical"),
                     ColumnSchema("x", "numeric")])
    schema.fit(df, ["r", "d", "x"])
    ranges = training_ranges(df, schema, ["r", "d", "x"], [["r", "d", "x"]])
    (w,) = extrapolation_check(ranges, schema, pd.DataFrame({"r": ["a"], "d": ["v"], "x": [1.5]}))
    assert w == ["r:d:x at a|v: no comparable training data"]


def test_empty_cell_message_is_exact():
    df = pd.DataFrame({"r": ["a", "a", "b"], "x": [1.0, 2.0, 3.0]})
    schema = Schema([ColumnSchema("r", "categorical"), ColumnSchema("x", "numeric")])
    schema.fit(df, ["r", "x"])
    ranges = training_ranges(df, schema, ["r", "x"], [["r", "x"]])
    new = pd.DataFrame({"r": ["b", "a"], "x": [1.5, 1.5]})
    w = extrapolation_check(ranges, schema, new)
    assert w[0] == ["r:x at b: x outside training range [3, 3]"]
    assert w[1] == []


# -- synthetic data ---------------------------------------------------------------------------


def test_certain_zero_gives_all_zero_responses():
    d = generate_synthetic(SyntheticSpec(n=500, xi0_constant=1.0), seed=0)
    assert np.all(d.y == 0)


def test_gamma_mean_converges():
    d = generate_synthetic(SyntheticSpec(n=100_000, n_covariates=1, xi0_constant=0.0,
                                         effects={"mu": {"intercept": 0.0}, "sigma": {"intercept": 0.0}}), seed=3)
    se = 1.0 / np.sqrt(len(d.y))  # GA(mu=1, sigma=1) has variance 1
    assert abs(d.y.mean() - 1.0) < 3 * se


def test_synthetic_is_seed_deterministic():
    spec = SyntheticSpec(n=300, regions=["a", "b"], effects={"mu": {"intercept": 0.2, "x1": 0.5,
                                                                    "region": {"a": 0.3}}})
    a, b = generate_synthetic(spec, 9), generate_synthetic(spec, 9)
    pd.testing.assert_frame_equal(a.frame, b.frame)
    assert np.array_equal(a.y, b.y)


def test_inadmissible_truth_rejected():
    spec = SyntheticSpec(n=10, effects={"mu": {"intercept": 800.0}})
    with pytest.raises(DomainError, match="inadmissible"):
        generate_synthetic(spec)


def test_unknown_parameter_rejected():
    with pytest.raises(DomainError, match="unknown parameter"):
        generate_synthetic(SyntheticSpec(effects={"kappa": {"intercept": 1.0}}))


def test_true_model_scores_its_own_data():
    d = generate_synthetic(SyntheticSpec(n=1000, effects={"xi0": {"intercept": 0.0}, "mu": {"x1": 0.5}}), 1)
    total, avg = d.truth.log_score(d.frame, d.y)
    assert total == pytest.approx(1000 * avg)
    assert np.isfinite(total)


# -- weather tables -------------------------------------------------------------------------------


def test_csv_round_trip_is_exact(weather, tmp_path):
    df = weather[0]
    p = tmp_path / "w.csv"
    write_weather_csv(df, p)
    back = read_weather_csv(p)
    pd.testing.assert_frame_equal(back, df, check_exact=True, check_dtype=False)


def test_full_precision_values_survive(weather, tmp_path):
    df = weather[0].copy()
    df["temp_max"] = df["temp_max"] + 1.0 / 3.0
    p = tmp_path / "w.csv"
    write_weather_csv(df, p)
    assert np.array_equal(read_weather_csv(p)["temp_max"].to_numpy(), df["temp_max"].to_numpy())


@pytest.mark.parametrize("mutate,message", [
    (lambda d: d.drop(columns="wind_gust_q2"), "missing column 'wind_gust_q2'"),
    (lambda d: d.assign(horizon=3), "horizon"),
    (lambda d: d.assign(risk="purple"), "risk"),
    (lambda d: d.assign(temp_min=d.temp_max + 1), "temp_min exceeds temp_max"),
    (lambda d: d.assign(rain_min_h2=d.rain_max_h2 + 1), "rain_min_h2 exceeds rain_max_h2"),
    (lambda d: d.assign(lightning_h1=6), "lightning_h1"),
    (lambda d: d.assign(icing_h2=2), "icing_h2"),
    (lambda d: d.assign(faults=-1.0), "faults"),
    (lambda d: d.assign(date="not a date"), "ISO"),
])
def test_invalid_weather_rejected(weather, mutate, message, tmp_path):
    bad = mutate(weather[0].copy())
    p = tmp_path / "bad.csv"
    bad.to_csv(p, index=False)
    with pytest.raises(PipelineError, match=message):
        read_weather_csv(p)


def test_simulator_shapes(weather):
    df, graph, ov = weather
    assert list(df.columns) == WEATHER_COLUMNS
    assert len(df) == 30 * 4 * 2
    assert graph.n_components() == 1
    assert (df.faults == 0).mean() > 0.2 and (df.faults > 0).mean() > 0.2
    assert sorted(ov.forecast_region) == sorted(df.region.unique())
