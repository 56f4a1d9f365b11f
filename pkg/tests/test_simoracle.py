import numpy as np
import pandas as pd
import pytest

from discourse_hedonics import clusterols, mixedmodel, simoracle
from discourse_hedonics.simoracle import (
    SimConfig,
    gls_oracle,
    recovery_check,
    rng_for,
    sim_design,
    sim_structure,
    simulate_panel,
    small_config,
)


class TestSimulatePanel:
    def test_seed_determinism(self):
        a = simulate_panel(small_config(seed=5)).table
        b = simulate_panel(small_config(seed=5)).table
        pd.testing.assert_frame_equal(a, b)

    def test_streams_differ(self):
        a = simulate_panel(small_config(seed=5), stream=0).table
        b = simulate_panel(small_config(seed=5), stream=1).table
        assert not a["y"].equals(b["y"])

    def test_zero_variance_exact_linear_recovery(self):
        config = small_config(
            var_nft=0.0,
            var_collection=0.0,
            var_collection_bin=0.0,
            var_polarity_slope=0.0,
            var_residual=0.0,
        )
        dataset = simulate_panel(config)
        design = sim_design(dataset)
        beta = np.linalg.lstsq(design.X, design.y, rcond=None)[0]
        truth = np.array([config.beta[c] for c in design.columns])
        np.testing.assert_allclose(beta, truth, atol=1e-8)

    def test_variance_decomposition_matches_targets(self):
        # Sample-moment oracle: the drawn random effects, pooled over 50
        # replicates, must reproduce the configured variances within 10%.
        config = SimConfig()
        targets = {
            "nft": config.var_nft,
            "collection": config.var_collection,
            "collection_bin": config.var_collection_bin,
            "polarity_slope": config.var_polarity_slope,
        }
        draws = {name: [] for name in targets}
        residual_draws = []
        for rep in range(50):
            dataset = simulate_panel(config, stream=rep)
            for name in targets:
                draws[name].append(dataset.effects[name])
            design = sim_design(dataset)
            truth = np.array([config.beta[c] for c in design.columns])
            latent = (
                dataset.effects["nft"][_nft_index(dataset)]
                + dataset.effects["collection"][_coll_index(dataset)]
                + dataset.effects["collection_bin"].reshape(
                    config.n_collections, config.bins_per_collection
                )[_coll_index(dataset), dataset.table["trade_bin"].to_numpy()]
                + dataset.effects["polarity_slope"][_coll_index(dataset)]
                * dataset.table["polarity_rw_lag1_within"].to_numpy()
            )
            residual_draws.append(design.y - design.X @ truth - latent)
        for name, target in targets.items():
            pooled = np.concatenate(draws[name])
            assert np.var(pooled) == pytest.approx(target, rel=0.10)
        assert np.var(np.concatenate(residual_draws)) == pytest.approx(
            config.var_residual, rel=0.10
        )

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            SimConfig(n_collections=0)
        with pytest.raises(ValueError):
            SimConfig(var_nft=-1.0)


def _coll_index(dataset):
    codes = dataset.table["collection_code"].str.slice(1).astype(int) - 1
    return codes.to_numpy()


def _nft_index(dataset):
    n = dataset.config.nfts_per_collection
    within = dataset.table["nft_id"].str.split("-N").str[1].astype(int).to_numpy()
    return _coll_index(dataset) * n + within


class TestGlsOracle:
    def test_identity_covariance_is_ols(self):
        rng = rng_for(1)
        X = np.column_stack([np.ones(40), rng.normal(size=(40, 2))])
        y = rng.normal(size=40)
        beta, _ = gls_oracle(X, y, [], [], 1.0)
        np.testing.assert_allclose(beta, np.linalg.pinv(X) @ y, atol=1e-10)

    def test_hand_computed_two_groups_of_two(self):
        # V = I + 0.5 * block(ones(2)) per group; hand-inverted 4x4 system.
        X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]])
        y = np.array([1.0, 2.0, 2.5, 4.0])
        labels = np.array(["a", "a", "b", "b"])
        var = 0.5
        V = np.eye(4)
        V[0, 1] = V[1, 0] = var
        V[2, 3] = V[3, 2] = var
        V[0, 0] = V[1, 1] = V[2, 2] = V[3, 3] = 1.0 + var
        Vinv = np.linalg.inv(V)
        expected = np.linalg.solve(X.T @ Vinv @ X, X.T @ Vinv @ y)
        beta, _ = gls_oracle(X, y, [(labels, None)], [var], 1.0)
        np.testing.assert_allclose(beta, expected, atol=1e-12)

    def test_matches_profile_loglik_beta(self):
        config = small_config(seed=3)
        dataset = simulate_panel(config)
        design = sim_design(dataset)
        theta = np.array([0.5, 1.0, 0.25, 0.75])
        _, beta, _ = mixedmodel.profile_loglik(design, sim_structure(), theta)
        table = dataset.table
        terms = [
            (table["nft_id"].to_numpy(), None),
            (table["collection_code"].to_numpy(), None),
            (table["collection_bin"].to_numpy(), None),
            (
                table["collection_code"].to_numpy(),
                table["polarity_rw_lag1_within"].to_numpy(),
            ),
        ]
        beta_oracle, _ = gls_oracle(design.X, design.y, terms, list(theta), 1.0)
        np.testing.assert_allclose(beta, beta_oracle, rtol=1e-6)

    def test_zero_ratios_match_clusterols_solver(self):
        config = small_config(seed=4)
        design = sim_design(simulate_panel(config))
        beta, _ = gls_oracle(design.X, design.y, [], [], 1.0)
        sol = clusterols.fit_fe_ols(design.X, design.y)
        np.testing.assert_allclose(beta, sol.beta, atol=1e-10)

    def test_refuses_large_n(self):
        X = np.ones((2001, 1))
        with pytest.raises(ValueError):
            gls_oracle(X, np.zeros(2001), [], [], 1.0)


class TestMisspecificationDiagnostics:
    def test_omitted_between_term_biases_level_coefficient(self):
        # Diagnostic, not a pass/fail recovery criterion: regressing on raw
        # levels (no within-between split) blends the two slopes, so when the
        # between truth dwarfs the within truth the level estimate is pulled
        # far from the within effect.
        config = small_config(seed=31, n_collections=12, bins_per_collection=8)
        estimates = []
        for rep in range(10):
            dataset = simulate_panel(config, stream=rep)
            table = dataset.table.copy()
            table["attn_level"] = table["attn_lag1_within"] + table["attn_lag1_bar"]
            from discourse_hedonics.design import RandomStructure, design_from_columns

            dm = design_from_columns(
                table,
                "y",
                ["attn_level", "negshare_rw_lag1_within", "negshare_rw_lag1_bar",
                 "polarity_rw_lag1_within", "polarity_rw_lag1_bar"],
                {"nft_id": "nft_id", "collection_code": "collection_code", "collection_bin": "collection_bin"},
            )
            fit = mixedmodel.fit_ml(
                dm,
                RandomStructure(intercepts=("nft_id", "collection_code", "collection_bin")),
                mixedmodel.FitOptions(n_restarts=0),
            )
            estimates.append(fit.beta[dm.column_index("attn_level")])
        within_truth = config.beta["attn_lag1_within"]   # -0.009
        between_truth = config.beta["attn_lag1_bar"]     # 0.332
        mean_estimate = float(np.mean(estimates))
        assert mean_estimate > within_truth + 0.05
        assert within_truth < mean_estimate < between_truth + 0.2

    def test_zero_variance_dgp_piles_at_boundary(self):
        config = small_config(
            seed=0,
            var_nft=0.0,
            var_collection=0.0,
            var_collection_bin=0.0,
            var_polarity_slope=0.0,
            var_residual=0.11,
        )
        dataset = simulate_panel(config)
        fit = mixedmodel.fit_ml(
            sim_design(dataset), sim_structure(), mixedmodel.FitOptions(n_restarts=0)
        )
        for name, value in fit.varcomps.items():
            if name != "residual":
                assert value < 0.02, (name, value)
        assert fit.varcomps["residual"] == pytest.approx(0.11, rel=0.35)


class TestRecoveryCheck:
    def test_smoke_report_shape(self):
        config = small_config(seed=8)
        report = recovery_check(config, n_replicates=3, fit_options=mixedmodel.FitOptions(n_restarts=0))
        assert list(report.frame.columns) == [
            "coefficient",
            "true",
            "mean_estimate",
            "bias",
            "empirical_se",
            "coverage",
        ]
        assert len(report.frame) == len(config.beta)
        assert report.n_failed == 0
        assert (report.frame["coverage"] <= 1.0).all()

    def test_requires_replicates(self):
        with pytest.raises(ValueError):
            recovery_check(small_config(), n_replicates=0)
