"""Propensity-weighted loss estimators for implicit-feedback recommendation."""
from .core import LOG, SQUARED, ClickDataset, GroundTruthModel, LocalLoss, ValidationError, local_loss, validate_dataset
from .estimators import (
    EstimatorReport,
    EstimatorSpec,
    analytic_bias,
    analytic_variance,
    click_moments,
    clipped_bias,
    clipped_loss,
    clipped_variance,
    evaluate,
    expomf_bias,
    expomf_loss,
    expomf_posteriors,
    ideal_loss,
    unbiased_loss,
    unbiased_variance,
    wmf_bias,
    wmf_loss,
)
from .mf import FactorModel, TrainConfig, TrainResult, grid_search, train
from .oracle import OracleReport, bias_variance_sweep, estimate_moments
from .propensity import PropensityScores, clip, estimate_popularity_propensity, rare_items
from .synth import SynthConfig, make_ground_truth, sample_clicks, sweep_exposure_bias

__version__ = "0.1.0"
