"""Monte-Carlo checks of the closed-form estimator moments.

Click matrices are resampled from the ground truth, the estimator is
evaluated on each draw and the empirical mean and variance are compared with
``ideal loss + signed analytic bias`` and the analytic variance.

Two variance targets are reported.  ``analytic_variance`` is the closed
form from :mod:`estimators`; for the clipped estimator it plugs
``max(theta, M)`` into the unbiased formula, which overstates the spread of
pairs with ``theta < M``.  ``exact_variance`` is the exact variance under the
click model (see :func:`estimators.click_moments`).

Trials are drawn in fixed-size blocks.  Block ``b`` uses the random stream
``SeedSequence([seed, b])``, so results do not depend on how many workers
process the blocks.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import SQUARED, GroundTruthModel, LocalLoss, check_predictions
from .estimators import EstimatorSpec, analytic_bias, analytic_variance, click_moments, evaluate, ideal_loss
from .synth import sample_click_matrices

MIN_TRIALS = 1000
DEFAULT_TRIALS = 50_000
Z_MAX = 4.0
VAR_TOL = 0.05
BLOCK_SIZE = 500


@dataclass(frozen=True)
class OracleReport:
    """Empirical versus analytic moments of one estimator."""

    variant: str
    label: str
    trials: int
    empirical_mean: float
    empirical_variance: float
    ideal_loss: float
    analytic_bias: float
    analytic_variance: float
    exact_variance: float
    z_max: float = Z_MAX
    var_tol: float = VAR_TOL

    @property
    def analytic_expectation(self) -> float:
        return self.ideal_loss + self.analytic_bias

    @property
    def standard_error(self) -> float:
        return math.sqrt(self.empirical_variance / self.trials)

    @property
    def _rounding(self) -> float:
        return 1e-12 * max(1.0, abs(self.analytic_expectation))

    @property
    def z_score(self) -> float:
        diff = self.empirical_mean - self.analytic_expectation
        if abs(diff) <= self._rounding:
            return 0.0
        if self.standard_error == 0:
            return math.copysign(math.inf, diff)
        return diff / self.standard_error

    @property
    def empirical_bias(self) -> float:
        return self.empirical_mean - self.ideal_loss

    @property
    def pass_mean(self) -> bool:
        # a degenerate estimator has zero spread; allow rounding noise
        tol = max(self.z_max * self.standard_error, self._rounding)
        return abs(self.empirical_mean - self.analytic_expectation) <= tol

    def _ratio(self, target: float) -> float:
        if target == 0:
            # identical trials can still differ in the last bit
            noise = (1e-12 * max(1.0, abs(self.empirical_mean))) ** 2
            return 1.0 if self.empirical_variance <= noise else math.inf
        return self.empirical_variance / target

    @property
    def variance_ratio(self) -> float:
        """Empirical over closed-form variance."""
        return self._ratio(self.analytic_variance)

    @property
    def exact_variance_ratio(self) -> float:
        """Empirical over exact click-model variance."""
        return self._ratio(self.exact_variance)

    @property
    def pass_var(self) -> bool:
        return abs(self.variance_ratio - 1.0) <= self.var_tol

    @property
    def pass_exact_var(self) -> bool:
        return abs(self.exact_variance_ratio - 1.0) <= self.var_tol

    @property
    def passed(self) -> bool:
        return self.pass_mean and self.pass_var

    def as_row(self) -> dict:
        return {
            "estimator": self.label,
            "trials": self.trials,
            "empirical_mean": self.empirical_mean,
            "analytic_expectation": self.analytic_expectation,
            "standard_error": self.standard_error,
            "z_score": self.z_score,
            "empirical_variance": self.empirical_variance,
            "analytic_variance": self.analytic_variance,
            "exact_variance": self.exact_variance,
            "pass_mean": self.pass_mean,
            "pass_var": self.pass_var,
            "pass_exact_var": self.pass_exact_var,
        }


def _block_sizes(trials: int, block: int) -> list[int]:
    full, rest = divmod(trials, block)
    return [block] * full + ([rest] if rest else [])


def _run_block(args) -> np.ndarray:
    spec, truth, predictions, propensities, seed, index, size = args
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
    clicks = sample_click_matrices(truth, rng, size)
    return np.atleast_1d(evaluate(spec, clicks, predictions, propensities, truth.gamma))


def sample_estimates(
    spec: EstimatorSpec,
    truth: GroundTruthModel,
    predictions,
    trials: int,
    seed: int = 0,
    workers: int = 1,
    propensities=None,
    block_size: int = BLOCK_SIZE,
) -> np.ndarray:
    """Estimator values on ``trials`` independent click draws."""
    if trials < 1:
        raise ValueError("trials must be positive")
    if workers < 1:
        raise ValueError("workers must be positive")
    if propensities is None and spec.needs_propensities:
        propensities = truth.theta
    jobs = [
        (spec, truth, predictions, propensities, seed, b, size)
        for b, size in enumerate(_block_sizes(trials, block_size))
    ]
    if workers == 1 or len(jobs) == 1:
        parts = [_run_block(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, jobs))
    return np.concatenate(parts)


def _check_inputs(truth: GroundTruthModel, predictions, trials: int) -> np.ndarray:
    if trials < MIN_TRIALS:
        raise ValueError(f"at least {MIN_TRIALS} trials are required, got {trials}")
    return check_predictions(predictions, truth.shape)


def estimate_moments(
    truth: GroundTruthModel,
    predictions,
    spec: EstimatorSpec,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    z_max: float = Z_MAX,
    var_tol: float = VAR_TOL,
    workers: int = 1,
    propensities=None,
) -> OracleReport:
    """Resample clicks ``trials`` times and compare moments with the closed forms.

    Unbiased and clipped estimators use ``propensities`` (default: the true
    ``theta``); the analytic targets always assume the true ``theta``, so
    misspecified propensities show up as failed checks.  The ExpoMF
    posteriors carried by ``spec`` are held fixed across trials.
    """
    r = _check_inputs(truth, predictions, trials)
    values = sample_estimates(spec, truth, r, trials, seed, workers, propensities)
    return _report(spec, truth, r, values, z_max, var_tol)


def _report(spec, truth, r, values, z_max, var_tol) -> OracleReport:
    return OracleReport(
        variant=spec.variant,
        label=spec.describe(),
        trials=int(values.size),
        empirical_mean=float(np.mean(values)),
        empirical_variance=float(np.var(values, ddof=1)),
        ideal_loss=ideal_loss(truth.gamma, r, spec.local),
        analytic_bias=analytic_bias(spec, truth, r, signed=True),
        analytic_variance=analytic_variance(spec, truth, r),
        exact_variance=click_moments(spec, truth, r)[1],
        z_max=z_max,
        var_tol=var_tol,
    )


@dataclass(frozen=True)
class SweepRow:
    """One clipping constant of a bias-variance sweep."""

    clip: float
    analytic_bias: float
    analytic_variance: float
    empirical_bias: float
    empirical_variance: float
    empirical_mse: float
    report: OracleReport

    @property
    def analytic_mse(self) -> float:
        return self.analytic_bias**2 + self.analytic_variance


def bias_variance_sweep(
    truth: GroundTruthModel,
    predictions,
    clip_values: Sequence[float],
    local: LocalLoss = SQUARED,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    z_max: float = Z_MAX,
    var_tol: float = VAR_TOL,
    workers: int = 1,
) -> list[SweepRow]:
    """Clipped estimator moments over clipping constants ``M``.

    ``M = 0`` is the unbiased estimator and ``M = 1`` the naive one.  Every
    ``M`` reuses the same click draws.
    """
    clip_values = [float(m) for m in clip_values]
    if not clip_values:
        raise ValueError("clip_values must not be empty")
    r = _check_inputs(truth, predictions, trials)
    ideal = ideal_loss(truth.gamma, r, local)
    rows = []
    for m in clip_values:
        spec = EstimatorSpec("clipped", clip=m, local=local)
        values = sample_estimates(spec, truth, r, trials, seed, workers)
        rep = _report(spec, truth, r, values, z_max, var_tol)
        rows.append(
            SweepRow(
                clip=m,
                analytic_bias=rep.analytic_bias,
                analytic_variance=rep.analytic_variance,
                empirical_bias=rep.empirical_bias,
                empirical_variance=float(np.var(values)),
                empirical_mse=float(np.mean((values - ideal) ** 2)),
                report=rep,
            )
        )
    return rows
