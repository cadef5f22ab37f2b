"""Scenario generators, covariance structures, metrics, and the study runner."""

import numpy as np
import pytest

from deboost import (
    DataError,
    Method,
    ScenarioSpec,
    auc,
    covariance,
    evaluate,
    generate,
    run_study,
    sample_mvn,
)
from deboost.simulation import scenario_a_noise_sd


class TestCovariance:
    def test_toeplitz_2x2(self):
        np.testing.assert_allclose(covariance("toeplitz", 2, 0.5),
                                   [[1.0, 0.5], [0.5, 1.0]])

    def test_toeplitz_decay(self):
        sigma = covariance("toeplitz", 3, 0.5)
        assert sigma[0, 2] == 0.25

    def test_unit_diagonal(self):
        for kind in ("toeplitz", "block"):
            sigma = covariance(kind, 25, 0.7)
            np.testing.assert_array_equal(np.diag(sigma), np.ones(25))

    def test_block_structure(self):
        sigma = covariance("block", 25, 0.4, block_size=10)
        assert sigma[0, 9] == 0.4
        assert sigma[0, 10] == 0.0
        assert sigma[20, 24] == 0.4

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            covariance("toeplitz", 5, 1.5)
        with pytest.raises(ValueError):
            covariance("circulant", 5, 0.5)


class TestSampleMvn:
    def test_seeded_bit_identical(self):
        sigma = covariance("toeplitz", 4, 0.5)
        np.testing.assert_array_equal(sample_mvn(50, sigma, 123),
                                      sample_mvn(50, sigma, 123))

    def test_identity_covariance_large_sample(self):
        X = sample_mvn(10000, np.eye(5), 0)
        s = np.cov(X, rowvar=False)
        off = s - np.diag(np.diag(s))
        assert np.max(np.abs(off)) < 0.1
        np.testing.assert_allclose(np.diag(s), 1.0, atol=0.1)

    def test_toeplitz_neighbor_correlation(self):
        sigma = covariance("toeplitz", 3, 0.9)
        X = sample_mvn(10000, sigma, 1)
        r = np.corrcoef(X[:, 0], X[:, 1])[0, 1]
        assert abs(r - 0.9) < 0.02

    def test_non_positive_definite_rejected(self):
        with pytest.raises(ValueError, match="positive definite"):
            sample_mvn(10, np.array([[1.0, 2.0], [2.0, 1.0]]), 0)


class TestGenerate:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ScenarioSpec("E")
        with pytest.raises(ValueError):
            ScenarioSpec("A", p=4)
        with pytest.raises(ValueError):
            ScenarioSpec("B", snr=5.0)

    def test_shapes_and_truth(self):
        for scenario in "ABCD":
            spec = ScenarioSpec(scenario, n=80, p=10, rho=0.3, n_test=40, seed=2)
            train, test, truth = generate(spec)
            assert train.X.shape == (80, 10)
            assert test.X.shape == (40, 10)
            assert truth.scenario == scenario
            if scenario == "D":
                assert truth.informative == {"mu": ("x1", "x2", "x3"),
                                             "sigma": ("x4", "x5", "x6")}
            else:
                assert truth.informative == {"mu": tuple(f"x{j}" for j in range(1, 7))}

    def test_scenario_a_coefficients(self):
        _, _, truth = generate(ScenarioSpec("A", n=10, p=8, rho=0.2, n_test=5))
        np.testing.assert_array_equal(truth.coef["mu"], [-2, -1.5, -1, 1, 1.5, 2])

    def test_scenario_d_coefficients(self):
        _, _, truth = generate(ScenarioSpec("D", n=10, p=8, rho=0.2, n_test=5))
        np.testing.assert_array_equal(truth.coef["mu"], [-2, 1.25, 1])
        np.testing.assert_array_equal(truth.coef["sigma"], [0.5, -0.5, 0.5])

    def test_scenario_a_residuals_behave(self):
        spec = ScenarioSpec("A", n=5000, p=8, rho=0.5, n_test=10, seed=3)
        train, _, truth = generate(spec)
        eps = train.y - train.X[:, :6] @ truth.coef["mu"]
        assert abs(eps.mean()) < 0.05
        assert abs(eps.std() - 1.0) < 0.05

    def test_scenario_c_binary(self):
        train, _, _ = generate(ScenarioSpec("C", n=200, p=8, rho=0.2, n_test=10))
        assert set(np.unique(train.y)) <= {0.0, 1.0}

    def test_snr_convention(self):
        # empirical Var(x'beta) / noise variance tracks the requested SNR
        spec = ScenarioSpec("A", n=10000, p=10, rho=0.5, snr=6.0, n_test=10, seed=4)
        train, _, truth = generate(spec)
        signal = train.X[:, :6] @ truth.coef["mu"]
        eps = train.y - signal
        realized = signal.var() / eps.var()
        assert abs(realized - 6.0) / 6.0 < 0.05

    def test_snr_noise_sd_analytic(self):
        # beta' Sigma beta = 14.64336 at rho = 0.8, p = 20; requesting that
        # SNR must give unit noise under the analytic convention
        spec = ScenarioSpec("A", p=20, rho=0.8, snr=14.64336)
        np.testing.assert_allclose(scenario_a_noise_sd(spec), 1.0, rtol=1e-6)

    def test_block_covariance_generates(self):
        train, _, _ = generate(ScenarioSpec("A", n=50, p=20, rho=0.5, cov="block",
                                            n_test=10))
        assert train.X.shape == (50, 20)

    def test_seeded_reproducibility(self):
        a_train, a_test, _ = generate(ScenarioSpec("D", n=40, p=8, rho=0.4, seed=9,
                                                   n_test=20))
        b_train, b_test, _ = generate(ScenarioSpec("D", n=40, p=8, rho=0.4, seed=9,
                                                   n_test=20))
        np.testing.assert_array_equal(a_train.X, b_train.X)
        np.testing.assert_array_equal(a_test.y, b_test.y)


class TestAuc:
    def test_worked_example(self):
        # pairs: (0.1 vs 0.35)+, (0.1 vs 0.8)+, (0.4 vs 0.35)-, (0.4 vs 0.8)+
        assert auc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75

    def test_constant_score_is_half(self):
        assert auc([0, 1, 0, 1], [0.5, 0.5, 0.5, 0.5]) == 0.5

    def test_perfect_separation(self):
        assert auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            auc([1, 1], [0.2, 0.4])


class TestEvaluate:
    def test_perfect_predictions_scenario_a(self):
        spec = ScenarioSpec("A", n=30, p=8, rho=0.2, n_test=20, seed=5)
        _, test, truth = generate(spec)
        result = evaluate(test.y[None, :], test, truth, {"mu": ["x1", "x2"]})
        assert result.metrics == {"msep": 0.0}
        assert result.tp == 2 and result.fp == 0

    def test_half_probabilities_on_balanced_labels(self):
        spec = ScenarioSpec("C", n=30, p=8, rho=0.2, n_test=4, seed=6)
        _, test, truth = generate(spec)
        test.y[:] = [0.0, 1.0, 0.0, 1.0]
        result = evaluate(np.full((1, 4), 0.5), test, truth, {"mu": []})
        assert result.metrics["brier"] == 0.25
        assert result.metrics["auc"] == 0.5

    def test_scenario_d_counts_per_parameter(self):
        spec = ScenarioSpec("D", n=30, p=8, rho=0.2, n_test=10, seed=7)
        _, test, truth = generate(spec)
        pred = np.vstack([np.zeros(10), np.ones(10)])
        selected = {"mu": ["x1", "x2", "x7"], "sigma": ["x4"]}
        result = evaluate(pred, test, truth, selected)
        assert result.per_param["mu"] == (2, 1)
        assert result.per_param["sigma"] == (1, 0)
        assert (result.tp, result.fp) == (3, 1)
        # direct negative log-likelihood of the standard normal prediction
        expected = np.sum(0.5 * np.log(2 * np.pi) + test.y**2 / 2.0)
        np.testing.assert_allclose(result.metrics["neg_log_lik"], expected)

    def test_length_mismatch(self):
        spec = ScenarioSpec("A", n=30, p=8, rho=0.2, n_test=10, seed=8)
        _, test, truth = generate(spec)
        with pytest.raises(ValueError):
            evaluate(np.zeros((1, 7)), test, truth, {"mu": []})


class TestMethodParsing:
    def test_plain_kinds(self):
        assert Method.parse("classical").kind == "classical"
        assert Method.parse("ose").label() == "ose"
        assert Method.parse("probing").kind == "probing"

    def test_deselect_arguments(self):
        m = Method.parse("deselect(0.05,cumulative)")
        assert (m.tau, m.variant) == (0.05, "cumulative")
        assert m.label() == "deselect-cumulative"
        assert Method.parse("deselect").tau == 0.01

    def test_robustc_argument(self):
        m = Method.parse("robustc(1.3)")
        assert m.c == 1.3
        assert m.label() == "robustc(1.3)"
        assert Method.parse("robustc").c is None

    def test_invalid(self):
        with pytest.raises(ValueError):
            Method.parse("twin")
        with pytest.raises(ValueError):
            Method.parse("classical(3)")
        with pytest.raises(ValueError):
            Method.parse("deselect(0.01")


class TestRunStudy:
    def test_single_replication_reproducible(self):
        spec = ScenarioSpec("A", n=120, p=8, rho=0.3, n_test=60)
        a = run_study(spec, ["classical"], 1, seed=5, n_folds=4, m_max=60)
        b = run_study(spec, ["classical"], 1, seed=5, n_folds=4, m_max=60)
        assert len(a) == 1
        assert a.equals(b)

    def test_row_count_contract(self):
        spec = ScenarioSpec("A", n=120, p=8, rho=0.3, n_test=60)
        table = run_study(spec, ["classical", "deselect(0.01)"], 2, seed=6,
                          n_folds=4, m_max=60)
        assert len(table) == 4

    def test_scenario_c_emits_two_metric_rows(self):
        spec = ScenarioSpec("C", n=150, p=8, rho=0.3, n_test=80)
        table = run_study(spec, ["classical"], 1, seed=7, n_folds=4, m_max=60)
        assert sorted(table["metric_name"]) == ["auc", "brier"]

    def test_deselect_dominated_by_classical_per_row(self):
        spec = ScenarioSpec("A", n=200, p=10, rho=0.5, n_test=100)
        table = run_study(spec, ["classical", "deselect(0.01)"], 3, seed=8,
                          n_folds=4, m_max=150)
        wide = table.pivot(index="replication", columns="method", values=["tp", "fp"])
        assert (wide[("fp", "deselect")] <= wide[("fp", "classical")]).all()
        assert (wide[("tp", "deselect")] <= wide[("tp", "classical")]).all()

    def test_stopping_rules_never_exceed_optimum(self):
        spec = ScenarioSpec("A", n=200, p=10, rho=0.5, n_test=100)
        table = run_study(spec, ["classical", "ose", "robustc(1.05)"], 3, seed=9,
                          n_folds=4, m_max=150)
        wide = table.pivot(index="replication", columns="method", values="mstop_used")
        assert (wide["ose"] <= wide["classical"]).all()
        assert (wide["robustc(1.05)"] <= wide["classical"]).all()

    def test_parallel_matches_sequential(self):
        spec = ScenarioSpec("A", n=120, p=8, rho=0.3, n_test=60)
        a = run_study(spec, ["classical", "ose"], 2, seed=10, n_folds=4, m_max=60)
        b = run_study(spec, ["classical", "ose"], 2, seed=10, n_folds=4, m_max=60,
                      n_jobs=2)
        assert a.equals(b)

    def test_scenario_d_study_fills_per_parameter_columns(self):
        spec = ScenarioSpec("D", n=150, p=8, rho=0.3, n_test=60)
        table = run_study(spec, ["classical", "deselect(0.01)"], 1, seed=11,
                          n_folds=4, m_max=200)
        assert table[["tp_mu", "fp_mu", "tp_sigma", "fp_sigma"]].notna().all().all()
        total = table["tp_mu"] + table["tp_sigma"]
        np.testing.assert_array_equal(total, table["tp"])

    def test_invalid_arguments(self):
        spec = ScenarioSpec("A", n=60, p=8, rho=0.3, n_test=30)
        with pytest.raises(ValueError):
            run_study(spec, ["classical"], 0)
        with pytest.raises(ValueError):
            run_study(spec, [], 1)
