import math

import numpy as np
import pytest

from conftest import small_truth
from unbiased_implicit.core import SQUARED, GroundTruthModel
from unbiased_implicit.estimators import EstimatorSpec
from unbiased_implicit.oracle import (
    MIN_TRIALS,
    OracleReport,
    bias_variance_sweep,
    estimate_moments,
    sample_estimates,
)


def single_pair(gamma=0.5, theta=0.5, r=0.0):
    # squared loss at r=0: d1 = 1, d0 = 0
    return GroundTruthModel(np.array([[gamma]]), np.array([[theta]])), np.array([[r]])


class TestSinglePair:
    def test_unbiased_variance_value(self):
        truth, r = single_pair()
        rep = estimate_moments(truth, r, EstimatorSpec("unbiased"), trials=20_000, seed=0)
        # Var(Y/theta) with P(Y=1)=0.25, theta=0.5
        assert rep.analytic_variance == pytest.approx(0.75)
        assert rep.exact_variance == pytest.approx(0.75)
        assert rep.passed

    def test_naive_unbiased_when_fully_exposed(self):
        truth, r = single_pair(theta=1.0)
        rep = estimate_moments(truth, r, EstimatorSpec("wmf", c=1.0), trials=MIN_TRIALS)
        assert rep.analytic_bias == 0.0
        assert rep.pass_mean


class TestEstimateMoments:
    def test_too_few_trials(self, truth, predictions):
        with pytest.raises(ValueError):
            estimate_moments(truth, predictions, EstimatorSpec("unbiased"), trials=MIN_TRIALS - 1)

    def test_deterministic(self, truth, predictions):
        spec = EstimatorSpec("clipped", clip=0.3)
        a = estimate_moments(truth, predictions, spec, trials=2000, seed=5)
        b = estimate_moments(truth, predictions, spec, trials=2000, seed=5)
        assert a == b

    def test_clip_zero_matches_unbiased(self, truth, predictions):
        a = sample_estimates(EstimatorSpec("clipped", clip=0.0), truth, predictions, 1200, seed=2)
        b = sample_estimates(EstimatorSpec("unbiased"), truth, predictions, 1200, seed=2)
        np.testing.assert_array_equal(a, b)

    def test_worker_count_irrelevant(self, truth, predictions):
        spec = EstimatorSpec("unbiased")
        a = sample_estimates(spec, truth, predictions, 1700, seed=3, workers=1)
        b = sample_estimates(spec, truth, predictions, 1700, seed=3, workers=2)
        np.testing.assert_array_equal(a, b)

    def test_ideal_is_degenerate(self, truth, predictions):
        rep = estimate_moments(truth, predictions, EstimatorSpec("ideal"), trials=MIN_TRIALS)
        assert rep.z_score == 0.0
        assert rep.passed

    def test_misspecified_propensities_fail(self, truth, predictions):
        rep = estimate_moments(
            truth, predictions, EstimatorSpec("unbiased"), trials=5000, propensities=np.clip(2 * truth.theta, 0, 1)
        )
        assert not rep.pass_mean

    def test_row_keys(self, truth, predictions):
        row = estimate_moments(truth, predictions, EstimatorSpec("unbiased"), trials=MIN_TRIALS).as_row()
        assert {"estimator", "z_score", "pass_mean", "pass_var", "pass_exact_var"} <= set(row)


class TestOracleReport:
    def make(self, **kw):
        base = dict(
            variant="unbiased", label="unbiased", trials=100, empirical_mean=1.0, empirical_variance=4.0,
            ideal_loss=1.0, analytic_bias=0.0, analytic_variance=4.0, exact_variance=4.0,
        )
        base.update(kw)
        return OracleReport(**base)

    def test_z_score(self):
        rep = self.make(empirical_mean=1.5)
        assert rep.standard_error == pytest.approx(0.2)
        assert rep.z_score == pytest.approx(2.5)

    def test_variance_tolerance(self):
        assert self.make(empirical_variance=4.19).pass_var
        assert not self.make(empirical_variance=4.21).pass_var

    def test_zero_variance_mismatch(self):
        rep = self.make(analytic_variance=0.0, exact_variance=0.0, empirical_variance=0.1)
        assert math.isinf(rep.variance_ratio)


class TestSweep:
    def test_empty(self, truth, predictions):
        with pytest.raises(ValueError):
            bias_variance_sweep(truth, predictions, [], trials=MIN_TRIALS)

    def test_endpoints(self, truth, predictions):
        rows = bias_variance_sweep(truth, predictions, [0.0, 1.0], local=SQUARED, trials=2000)
        assert rows[0].analytic_bias == 0.0
        assert rows[0].analytic_mse == pytest.approx(rows[0].analytic_variance)
        assert rows[1].analytic_variance < rows[0].analytic_variance
        for row in rows:
            assert row.empirical_mse == pytest.approx(row.empirical_bias**2 + row.empirical_variance)

    def test_bias_grows_with_clip(self):
        truth = small_truth(3)
        # r < 0.5 keeps d1 - d0 positive, so per-pair biases cannot cancel
        r = np.random.default_rng(0).uniform(0.05, 0.45, truth.shape)
        rows = bias_variance_sweep(truth, r, [0.0, 0.3, 0.6, 1.0], trials=MIN_TRIALS)
        biases = [abs(row.analytic_bias) for row in rows]
        assert biases == sorted(biases)
