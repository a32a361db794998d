"""Semi-synthetic ground truth and click sampling.

The relevance/exposure construction is ``gamma = sigmoid(rating - epsilon)``
and ``theta = observation ** p``.  Clicks follow ``Y = O * R`` with
independent ``O ~ Bern(theta)`` and ``R ~ Bern(gamma)``.

The rating and observation bases would normally come from matrix
factorizations fitted to a real rating log.  :func:`generate_base_matrices`
draws random low-rank stand-ins with the same codomains; externally fitted
matrices can be passed to :func:`make_ground_truth` instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import ClickDataset, GroundTruthModel

OBS_LOW, OBS_HIGH = 0.01, 0.99
DEFAULT_P_VALUES = (0.5, 1.0, 2.0, 3.0, 4.0)

# independent random streams derived from the user seed
_BASE_STREAM, _CLICK_STREAM, _VALIDATION_STREAM = 0, 1, 3


@dataclass(frozen=True)
class SynthConfig:
    """Shape and skew of a semi-synthetic instance.

    The rating base maps the ``rating_trim`` and ``1 - rating_trim``
    quantiles of a low-rank matrix onto 1 and 5 (entries beyond are clipped);
    ``rating_trim=0`` uses the min and max.  ``obs_logit_mean`` and
    ``obs_logit_scale`` set the location and spread of the observation base
    on the logit scale.
    """

    num_users: int = 200
    num_items: int = 300
    base_rank: int = 5
    epsilon: float = 5.0
    p: float = 1.0
    seed: int = 0
    rating_trim: float = 0.1
    obs_logit_mean: float = 1.0
    obs_logit_scale: float = 0.75

    def __post_init__(self):
        if self.num_users <= 0 or self.num_items <= 0:
            raise ValueError("num_users and num_items must be positive")
        if self.base_rank <= 0:
            raise ValueError("base_rank must be positive")
        if not self.p > 0:
            raise ValueError("p must be positive")
        if not 0 <= self.rating_trim < 0.5:
            raise ValueError("rating_trim must lie in [0, 0.5)")
        if not self.obs_logit_scale > 0:
            raise ValueError("obs_logit_scale must be positive")


@dataclass(frozen=True, eq=False)
class Sample:
    """One click draw together with the latent exposure and relevance draws."""

    dataset: ClickDataset
    exposure: np.ndarray = field(repr=False)
    relevance: np.ndarray = field(repr=False)

    def __iter__(self):
        return iter((self.dataset, self.exposure, self.relevance))


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def _low_rank(rng: np.random.Generator, m: int, n: int, rank: int) -> np.ndarray:
    return rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))


def low_rank_scores(config: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """The raw rank-``base_rank`` matrices behind both bases (before rescaling)."""
    rng = _rng(config.seed, _BASE_STREAM)
    m, n, k = config.num_users, config.num_items, config.base_rank
    return _low_rank(rng, m, n, k), _low_rank(rng, m, n, k)


def generate_base_matrices(config: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Random stand-ins for the fitted rating base (in [1, 5]) and observation base (in (0.01, 0.99))."""
    ratings, observations = low_rank_scores(config)
    q = config.rating_trim
    lo, hi = np.quantile(ratings, [q, 1.0 - q]) if q > 0 else (ratings.min(), ratings.max())
    span = hi - lo if hi > lo else 1.0
    rating_base = 1.0 + 4.0 * (ratings - lo) / span
    np.clip(rating_base, 1.0, 5.0, out=rating_base)

    sd = observations.std()
    z = (observations - observations.mean()) / (sd if sd > 0 else 1.0)
    observation_base = expit(config.obs_logit_mean + config.obs_logit_scale * z)
    # keep strictly inside the open interval
    tiny = 1e-6
    np.clip(observation_base, OBS_LOW + tiny, OBS_HIGH - tiny, out=observation_base)
    return rating_base, observation_base


def make_ground_truth(rating_base, observation_base, epsilon: float = 5.0, p: float = 1.0) -> GroundTruthModel:
    rating_base = np.asarray(rating_base, dtype=np.float64)
    observation_base = np.asarray(observation_base, dtype=np.float64)
    if not p > 0:
        raise ValueError("p must be positive")
    if rating_base.shape != observation_base.shape:
        raise ValueError("rating and observation bases must have equal shape")
    if not np.all((observation_base > 0) & (observation_base <= 1)):
        raise ValueError("observation base must lie in (0, 1]")
    return GroundTruthModel(expit(rating_base - epsilon), observation_base**p)


def draw_latents(truth: GroundTruthModel, rng: np.random.Generator, size: int | None = None):
    """Boolean exposure and relevance draws, optionally with a leading batch axis."""
    shape = truth.shape if size is None else (size, *truth.shape)
    exposure = rng.random(shape) < truth.theta
    relevance = rng.random(shape) < truth.gamma
    return exposure, relevance


def sample_clicks(truth: GroundTruthModel, seed: int | np.random.Generator) -> Sample:
    rng = seed if isinstance(seed, np.random.Generator) else _rng(seed, _CLICK_STREAM)
    exposure, relevance = draw_latents(truth, rng)
    clicks = exposure & relevance
    return Sample(ClickDataset.from_dense(clicks.astype(np.int8)), exposure, relevance)


def sample_validation(truth: GroundTruthModel, seed: int) -> Sample:
    """An independent draw from the same model, used for early stopping."""
    return sample_clicks(truth, _rng(seed, _VALIDATION_STREAM))


def sample_click_matrices(truth: GroundTruthModel, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` independent dense click matrices, shape ``(count, m, n)``."""
    exposure, relevance = draw_latents(truth, rng, count)
    return (exposure & relevance).astype(np.float64)


def sweep_exposure_bias(config: SynthConfig, p_values: Sequence[float] = DEFAULT_P_VALUES):
    """One instance per ``p`` sharing the base matrices and the click random numbers.

    Sharing the uniforms couples the draws: with a smaller ``theta`` the set
    of exposed pairs can only shrink.
    """
    p_values = list(p_values)
    if not p_values:
        raise ValueError("p_values must not be empty")
    rating_base, observation_base = generate_base_matrices(config)
    out = []
    for p in p_values:
        truth = make_ground_truth(rating_base, observation_base, config.epsilon, p)
        out.append((p, truth, sample_clicks(truth, config.seed).dataset))
    return out
