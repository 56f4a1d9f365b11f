import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discourse_hedonics import visualindex
from discourse_hedonics.visualindex import (
    HUE_COLUMN,
    PCA_INPUT_COLUMNS,
    TRAIT_COLUMNS,
    build_visual_index,
    encode_hue,
    pca_first_component,
    within_group_standardize,
)


class TestEncodeHue:
    def test_degrees(self):
        s, c = encode_hue(180.0)
        assert s == pytest.approx(0.0, abs=1e-12)
        assert c == pytest.approx(-1.0)

    def test_normalized(self):
        s, c = encode_hue(0.25)
        assert s == pytest.approx(1.0)
        assert c == pytest.approx(0.0, abs=1e-12)

    def test_radians(self):
        s, c = encode_hue(3.0)
        assert (s, c) == (math.sin(3.0), math.cos(3.0))

    def test_missing(self):
        s, c = encode_hue(float("nan"))
        assert math.isnan(s) and math.isnan(c)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(min_value=0.0, max_value=720.0, allow_nan=False))
    def test_unit_circle(self, hue):
        s, c = encode_hue(hue)
        assert s * s + c * c == pytest.approx(1.0, abs=1e-12)


class TestWithinGroupStandardize:
    def test_basic_z(self):
        frame = pd.DataFrame({"g": ["a"] * 3, "x": [1.0, 2.0, 3.0]})
        z = within_group_standardize(frame, "g", ["x"])
        np.testing.assert_allclose(z["x"], [-1.0, 0.0, 1.0])

    def test_constant_column_zeroed(self):
        frame = pd.DataFrame({"g": ["a"] * 4, "x": [7.0] * 4})
        z = within_group_standardize(frame, "g", ["x"])
        assert (z["x"] == 0.0).all()

    def test_missing_cell_zeroed(self):
        frame = pd.DataFrame({"g": ["a"] * 3, "x": [1.0, np.nan, 3.0]})
        z = within_group_standardize(frame, "g", ["x"])
        assert z["x"].iloc[1] == 0.0

    def test_single_row_group_zeroed(self):
        frame = pd.DataFrame({"g": ["a", "b", "b"], "x": [4.0, 1.0, 2.0]})
        z = within_group_standardize(frame, "g", ["x"])
        assert z["x"].iloc[0] == 0.0


def power_iteration_top_eigen(cov, iterations=5000, tol=1e-14):
    """Independent eigensolver: plain power iteration on the covariance."""
    vec = np.ones(cov.shape[0]) / np.sqrt(cov.shape[0])
    value = 0.0
    for _ in range(iterations):
        nxt = cov @ vec
        nxt_norm = np.linalg.norm(nxt)
        nxt /= nxt_norm
        if np.linalg.norm(nxt - vec) < tol or np.linalg.norm(nxt + vec) < tol:
            vec = nxt
            value = nxt_norm
            break
        vec = nxt
        value = nxt_norm
    return value, vec


class TestPcaFirstComponent:
    def test_perfectly_correlated_pair(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=200)
        scores, loadings = pca_first_component(np.column_stack([x, x]))
        np.testing.assert_allclose(np.abs(loadings), [1 / np.sqrt(2)] * 2, rtol=1e-12)
        total_var = np.var(x) * 2
        assert np.var(scores) == pytest.approx(total_var, rel=1e-10)

    def test_single_axis_data(self):
        rng = np.random.default_rng(1)
        z = np.zeros((50, 3))
        z[:, 1] = rng.normal(size=50)
        _, loadings = pca_first_component(z)
        np.testing.assert_allclose(loadings, [0.0, 1.0, 0.0], atol=1e-12)

    def test_pc1_variance_matches_power_iteration(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(50, 13)) @ rng.normal(size=(13, 13))
        scores, loadings = pca_first_component(z)
        cov = np.cov(z, rowvar=False, ddof=1)
        top_value, top_vec = power_iteration_top_eigen(cov)
        assert np.var(scores, ddof=1) == pytest.approx(top_value, rel=1e-10)
        assert abs(abs(loadings @ top_vec) - 1.0) < 1e-8

    def test_variance_dominates_random_projections(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(80, 6)) * np.array([3.0, 1.0, 1.0, 0.5, 0.5, 0.1])
        scores, _ = pca_first_component(z)
        centered = z - z.mean(axis=0)
        for _ in range(50):
            probe = rng.normal(size=6)
            probe /= np.linalg.norm(probe)
            assert np.var(scores) >= np.var(centered @ probe) - 1e-12

    def test_sign_convention_deterministic(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(40, 5))
        _, first = pca_first_component(z)
        _, second = pca_first_component(z.copy())
        np.testing.assert_array_equal(first, second)
        assert first[np.argmax(np.abs(first))] > 0

    def test_rank_zero_warns(self):
        with pytest.warns(UserWarning):
            scores, loadings = pca_first_component(np.ones((5, 3)))
        assert not scores.any() and not loadings.any()


def feature_fixture(seed=0, n_collections=3, per_collection=40):
    rng = np.random.default_rng(seed)
    rows = []
    for c in range(n_collections):
        style = rng.normal(size=len(TRAIT_COLUMNS))
        for i in range(per_collection):
            row = {
                "nft_id": f"C{c}-N{i:03d}",
                "collection_code": f"C{c}",
                HUE_COLUMN: rng.uniform(0, 360),
            }
            latent = rng.normal()
            for k, name in enumerate(TRAIT_COLUMNS):
                row[name] = style[k] + latent * (k + 1) / 6.0 + rng.normal(0, 0.3)
            rows.append(row)
    return pd.DataFrame(rows)


def straight_line_oracle(features: pd.DataFrame) -> pd.DataFrame:
    """Independent re-implementation: loops, explicit eigendecomposition."""
    frame = features.drop_duplicates("nft_id", keep="first").reset_index(drop=True)
    hue_sin, hue_cos = [], []
    for value in frame[HUE_COLUMN]:
        if pd.isna(value):
            hue_sin.append(np.nan)
            hue_cos.append(np.nan)
            continue
        if value > 2 * math.pi + 1e-9:
            rad = value * math.pi / 180
        elif value <= 1.0:
            rad = value * 2 * math.pi
        else:
            rad = value
        hue_sin.append(math.sin(rad))
        hue_cos.append(math.cos(rad))
    frame = frame.assign(hue_sin=hue_sin, hue_cos=hue_cos)
    z = np.zeros((len(frame), len(PCA_INPUT_COLUMNS)))
    for j, col in enumerate(PCA_INPUT_COLUMNS):
        column = frame[col].to_numpy(dtype=float)
        for code in frame["collection_code"].unique():
            idx = np.flatnonzero((frame["collection_code"] == code).to_numpy())
            finite = column[idx][np.isfinite(column[idx])]
            mean = finite.mean() if finite.size else 0.0
            sd = finite.std(ddof=1) if finite.size > 1 else 0.0
            for i in idx:
                if not np.isfinite(column[i]) or sd == 0:
                    z[i, j] = 0.0
                else:
                    z[i, j] = (column[i] - mean) / sd
    centered = z - z.mean(axis=0)
    eigvals, eigvecs = np.linalg.eigh(np.cov(z, rowvar=False, ddof=1))
    loading = eigvecs[:, -1]
    if loading[np.argmax(np.abs(loading))] < 0:
        loading = -loading
    pc1 = centered @ loading
    out = frame[["nft_id", "collection_code"]].copy()
    out["visual_index_explicit"] = pc1
    z_final = np.empty(len(out))
    for code in out["collection_code"].unique():
        idx = np.flatnonzero((out["collection_code"] == code).to_numpy())
        vals = pc1[idx]
        sd = vals.std()
        z_final[idx] = 0.0 if sd == 0 else (vals - vals.mean()) / sd
    out["visual_index_explicit_z"] = z_final
    return out


class TestBuildVisualIndex:
    def test_duplicates_collapse_to_first(self):
        features = feature_fixture()
        doubled = pd.concat([features, features.assign(**{TRAIT_COLUMNS[0]: -99.0})])
        result = build_visual_index(doubled.reset_index(drop=True))
        assert len(result.scores) == len(features)

    def test_within_collection_moments(self):
        result = build_visual_index(feature_fixture())
        grouped = result.scores.groupby("collection_code")["visual_index_explicit_z"]
        for _, values in grouped:
            assert values.mean() == pytest.approx(0.0, abs=1e-10)
            assert values.std(ddof=0) == pytest.approx(1.0, abs=1e-10)

    def test_single_nft_collection_zero(self):
        features = feature_fixture()
        extra = features.iloc[[0]].assign(nft_id="LONE-1", collection_code="LONE")
        result = build_visual_index(pd.concat([features, extra], ignore_index=True))
        lone = result.scores[result.scores["collection_code"] == "LONE"]
        assert lone["visual_index_explicit_z"].iloc[0] == 0.0

    def test_matches_straight_line_oracle(self):
        features = feature_fixture(seed=5)
        features.loc[3, HUE_COLUMN] = np.nan
        result = build_visual_index(features)
        oracle = straight_line_oracle(features)
        sign = np.sign(
            np.dot(result.scores["visual_index_explicit"], oracle["visual_index_explicit"])
        )
        np.testing.assert_allclose(
            result.scores["visual_index_explicit"],
            sign * oracle["visual_index_explicit"],
            atol=1e-10,
        )
        np.testing.assert_allclose(
            result.scores["visual_index_explicit_z"],
            sign * oracle["visual_index_explicit_z"],
            atol=1e-10,
        )

    def test_affine_rescaling_invariance(self):
        features = feature_fixture(seed=6)
        result = build_visual_index(features)
        rescaled = features.copy()
        rescaled[TRAIT_COLUMNS[2]] = rescaled[TRAIT_COLUMNS[2]] * 40.0 - 7.0
        result2 = build_visual_index(rescaled)
        dot = np.dot(
            result.scores["visual_index_explicit_z"], result2.scores["visual_index_explicit_z"]
        )
        np.testing.assert_allclose(
            result.scores["visual_index_explicit_z"],
            np.sign(dot) * result2.scores["visual_index_explicit_z"],
            atol=1e-8,
        )

    def test_loadings_exported_per_input(self):
        result = build_visual_index(feature_fixture())
        assert result.loadings["feature"].tolist() == list(PCA_INPUT_COLUMNS)
        assert np.linalg.norm(result.loadings["loading"]) == pytest.approx(1.0)

    def test_missing_columns_rejected(self):
        with pytest.raises(ValueError):
            build_visual_index(pd.DataFrame({"nft_id": ["a"], "collection_code": ["c"]}))
