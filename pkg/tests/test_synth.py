import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairtrim.errors import ConfigError
from fairtrim.metrics import spearman
from fairtrim.synth import (
    BIAS_VARIABLES,
    RACE_COLUMNS,
    RedundancyGroup,
    SynthConfig,
    engineer_census_features,
    generate_block_stats,
    generate_city,
    median_impute,
    near_zero_variance,
    write_city,
    zscore,
)


def test_zscore_examples():
    assert np.allclose(zscore([1, 2, 3]), [-1, 0, 1], atol=1e-15)
    with pytest.raises(ValueError):
        zscore([4, 4, 4])


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=50), st.floats(-100, 100))
def test_zscore_properties(values, shift):
    x = np.asarray(values)
    if x.std() < 1e-3:
        return
    z = zscore(x)
    assert abs(z.mean()) < 1e-12
    assert abs(z.std(ddof=1) - 1) < 1e-12
    assert np.allclose(zscore(z), z, atol=1e-12)
    assert np.allclose(zscore(x + shift), z, atol=1e-9)


def test_median_impute():
    assert list(median_impute([1, np.nan, 3])) == [1, 2, 3]
    assert list(median_impute([1.0, 2.0])) == [1, 2]
    assert list(median_impute([np.nan, 5])) == [5, 5]
    with pytest.raises(ValueError):
        median_impute([np.nan, np.nan])


def test_near_zero_variance():
    assert near_zero_variance(np.zeros(50))
    assert near_zero_variance(np.r_[np.zeros(980), np.ones(20)])
    assert not near_zero_variance(np.arange(50.0))


def block_frame(**overrides):
    base = {"population": [100, 120, 80], "houses": [40, 50, 30], "occupied": [99, 45, 28],
            "vacant": [1, 5, 2], "rented": [50, 10, 3], "laborforce": [50, 60, 40],
            "unemployed": [5, 6, 4], "poverty": [10, 12, 8], "hhnoincome": [2, 3, 1],
            "belowhs": [20, 22, 10], "vehicles": [60, 70, 40], "hispanic": [10, 20, 5],
            "median_age": [30.0, 40, 50], "median_income": [5e4, 6e4, 7e4],
            "median_rent": [1e3, 1.1e3, 1.2e3], "area": [62500.0, 62500, 60000]}
    races = {c: [0, 0, 0] for c in RACE_COLUMNS}
    races["white"] = [100, 60, 0]
    races["black"] = [0, 60, 80]
    base.update(races)
    base.update(overrides)
    return pd.DataFrame(base)


def test_census_features_raw_values():
    # undo the z-scoring with the raw column's own mean/sd to check formulas
    s = block_frame()
    out = engineer_census_features(s)
    raw = s["rented"] / (s["occupied"] + 1)
    assert raw[0] == 0.5
    assert np.allclose(out["rentedhouses.percent"], zscore(raw))
    white = s["white"] / s[list(RACE_COLUMNS)].sum(axis=1)
    assert white[0] == 1.0
    assert np.allclose(out["whitealone.percentage"], zscore(white))


def test_census_features_standardized_and_nzv_dropped():
    s = block_frame(median_age=[35.0, 35.0, 35.0])
    out = engineer_census_features(s)
    assert "age.median" not in out
    for col in out:
        assert abs(out[col].mean()) < 1e-9
        assert abs(out[col].std(ddof=1) - 1) < 1e-9


def test_census_zero_race_total_imputed():
    s = block_frame(white=[100, 0, 0], black=[0, 0, 80])
    out = engineer_census_features(s)
    assert not out.isna().any().any()


def test_census_rejects_zero_area():
    with pytest.raises(ValueError):
        engineer_census_features(block_frame(area=[1.0, 0.0, 1.0]))


def test_block_stats_invariants():
    rng = np.random.default_rng(0)
    bias = rng.normal(size=300)
    latents = [rng.normal(size=300) for _ in range(3)]
    s = generate_block_stats(bias, latents, rng)
    counts = s.drop(columns=["median_age", "median_income", "median_rent", "area"])
    assert (counts >= 0).all().all()
    assert np.array_equal(s[list(RACE_COLUMNS)].sum(axis=1), s["population"])
    assert (s["laborforce"] >= s["unemployed"]).all()


def test_degenerate_config():
    with pytest.raises(ConfigError):
        SynthConfig(grid_rows=0, grid_cols=0)
    with pytest.raises(ConfigError):
        SynthConfig(crime_base_rate=1.5)
    with pytest.raises(ConfigError):
        SynthConfig(n_features=1)
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"unknown": 1})


def test_city_shape_and_determinism():
    cfg = SynthConfig(seed=11)
    t1, truth = generate_city(cfg)
    t2, _ = generate_city(cfg)
    assert len(t1) == 40 * 25 * 10
    assert np.array_equal(t1.features, t2.features)
    assert np.array_equal(t1.count, t2.count)
    n_model = sum(1 for f in t1.feature_names if f not in BIAS_VARIABLES)
    assert n_model == cfg.n_features
    assert set(BIAS_VARIABLES) <= set(t1.feature_names)
    assert {"shift", "dow", "dow0"} <= set(truth["exempt_features"])


@pytest.mark.parametrize("seed", range(4))
def test_prevalence_near_base_rate(seed):
    table, _ = generate_city(SynthConfig(seed=seed))
    assert abs(table.presence.mean() - 0.1) <= 0.02


def test_zero_base_rate_means_no_crime():
    table, _ = generate_city(SynthConfig(crime_base_rate=0.0, seed=2))
    assert table.count.sum() == 0


@pytest.mark.parametrize("seed", range(5))
def test_mixing_controls_bias_correlation(seed):
    groups = (RedundancyGroup(0, (0.0, 1.0), (0.5, 0.0)),)
    cfg = SynthConfig(grid_rows=100, grid_cols=100, n_shifts=1, seed=seed,
                      redundancy_groups=groups)
    table, truth = generate_city(cfg)
    bias = np.asarray(truth["bias_field"])
    assert abs(spearman(table.column("group0.member0"), bias)) < 0.15
    assert abs(spearman(table.column("group0.member1"), bias)) > 0.95


def test_latent_fields_are_smooth():
    _, truth = generate_city(SynthConfig(seed=3))
    field = np.asarray(truth["latent_fields"][0]).reshape(40, 25)
    neighbour = np.corrcoef(field[:, :-1].ravel(), field[:, 1:].ravel())[0, 1]
    assert neighbour > 0.5


def test_write_city(tmp_path):
    table, truth = generate_city(SynthConfig(grid_rows=5, grid_cols=4, n_shifts=3,
                                             n_features=20))
    paths = write_city(table, truth, tmp_path)
    assert sorted(p.name for p in paths) == ["features.csv", "labels.csv", "truth.json",
                                             "weights.csv"]
    doc = json.loads((tmp_path / "truth.json").read_text())
    assert doc["features"]["group0.member1"]["mixing"] == 0.85
