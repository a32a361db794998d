"""Matrix-factorization model trained by mini-batch SGD on any loss estimator."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from scipy.special import expit

from .core import ClickDataset, GroundTruthModel, LocalLoss
from .estimators import EstimatorSpec, evaluate, ideal_loss, pair_weights
from .metrics import ValidationSet, order_items, snips_dcg, RankingResult

logger = logging.getLogger(__name__)

Link = Literal["sigmoid", "identity"]
FORMAT_VERSION = 1


class ConfigurationError(ValueError):
    pass


def link_forward(scores, link: Link):
    if link == "sigmoid":
        return expit(scores)
    return np.clip(scores, 0.0, 1.0)


def link_derivative(scores, predictions, link: Link):
    if link == "sigmoid":
        return predictions * (1.0 - predictions)
    return ((scores > 0.0) & (scores < 1.0)).astype(np.float64)


def default_link(local: LocalLoss) -> Link:
    return "sigmoid" if local.kind == "log" else "identity"


@dataclass(frozen=True, eq=False)
class FactorModel:
    """User and item factor matrices; predictions are ``link(U_u . V_i)``.

    ``identity`` clamps the inner product to [0, 1].
    """

    user_factors: np.ndarray
    item_factors: np.ndarray
    link: Link = "sigmoid"

    def __post_init__(self):
        u = np.array(self.user_factors, dtype=np.float64)
        v = np.array(self.item_factors, dtype=np.float64)
        if u.ndim != 2 or v.ndim != 2 or u.shape[1] != v.shape[1]:
            raise ValueError("factor matrices must be 2-D with a common latent dimension")
        if self.link not in ("sigmoid", "identity"):
            raise ValueError(f"unknown link {self.link!r}")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "user_factors", u)
        object.__setattr__(self, "item_factors", v)

    @property
    def num_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_factors.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.user_factors.shape[1]

    def _check(self, user, item):
        if not (0 <= user < self.num_users and 0 <= item < self.num_items):
            raise IndexError(f"pair ({user}, {item}) outside {self.num_users}x{self.num_items}")

    def predict(self, user: int, item: int) -> float:
        self._check(user, item)
        return float(link_forward(self.user_factors[user] @ self.item_factors[item], self.link))

    def score_items(self, user: int, items) -> np.ndarray:
        items = np.asarray(items, dtype=np.int64)
        return link_forward(self.item_factors[items] @ self.user_factors[user], self.link)

    def predict_matrix(self) -> np.ndarray:
        return link_forward(self.user_factors @ self.item_factors.T, self.link)

    def __eq__(self, other):
        if not isinstance(other, FactorModel):
            return NotImplemented
        return (
            self.link == other.link
            and np.array_equal(self.user_factors, other.user_factors)
            and np.array_equal(self.item_factors, other.item_factors)
        )


def init_factors(num_users: int, num_items: int, latent_dim: int, seed: int = 0, link: Link = "sigmoid") -> FactorModel:
    """Gaussian factors with standard deviation ``1 / sqrt(latent_dim)``."""
    if min(num_users, num_items, latent_dim) <= 0:
        raise ValueError("num_users, num_items and latent_dim must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    sd = 1.0 / np.sqrt(latent_dim)
    u = rng.normal(0.0, sd, size=(num_users, latent_dim))
    v = rng.normal(0.0, sd, size=(num_items, latent_dim))
    return FactorModel(u, v, link)


def _score_gradient(scores, w1, w0, local: LocalLoss, link: Link):
    r = link_forward(scores, link)
    g = w1 * local.positive_grad(r) + w0 * local.negative_grad(r)
    return g * link_derivative(scores, r, link)


def pair_gradient(model: FactorModel, user: int, item: int, w1: float, w0: float, local: LocalLoss, l2_reg: float = 0.0):
    """Gradient of ``w1 d1(r) + w0 d0(r) + l2/2 (|U_u|^2 + |V_i|^2)`` w.r.t. ``U_u`` and ``V_i``.

    The estimator enters only through the weights; see
    :func:`unbiased_implicit.estimators.pair_weights`.
    """
    model._check(user, item)
    u, v = model.user_factors[user], model.item_factors[item]
    g = float(_score_gradient(u @ v, w1, w0, local, model.link))
    return g * v + l2_reg * u, g * u + l2_reg * v


def pair_objective(model: FactorModel, user: int, item: int, w1: float, w0: float, local: LocalLoss, l2_reg: float = 0.0) -> float:
    u, v = model.user_factors[user], model.item_factors[item]
    r = link_forward(u @ v, model.link)
    return float(w1 * local.positive(r) + w0 * local.negative(r) + 0.5 * l2_reg * (u @ u + v @ v))


@dataclass(frozen=True)
class TrainConfig:
    estimator: EstimatorSpec
    latent_dim: int = 5
    learning_rate: float = 0.05
    l2_reg: float = 0.01
    batch_size: int = 1024
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    link: Optional[Link] = None
    negative_rate: float = 1.0

    def __post_init__(self):
        if self.latent_dim <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("latent_dim, batch_size and max_epochs must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.l2_reg < 0 or self.patience < 0:
            raise ValueError("l2_reg and patience must be non-negative")
        if not 0 < self.negative_rate <= 1:
            raise ValueError("negative_rate must lie in (0, 1]")

    @property
    def resolved_link(self) -> Link:
        return self.link or default_link(self.estimator.local)


@dataclass
class TrainResult:
    model: FactorModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = float("nan")


Objective = Callable[[FactorModel], float]


def ideal_objective(truth: GroundTruthModel, local: LocalLoss) -> Objective:
    """Ideal loss of the model's predictions (simulation only; lower is better)."""
    return lambda model: ideal_loss(truth.gamma, model.predict_matrix(), local)


def estimator_objective(spec: EstimatorSpec, validation: ValidationSet, propensities=None) -> Objective:
    """The configured estimator averaged over the validation pairs (lower is better)."""
    users, items, y = validation.pairs()
    w1, w0 = _pair_weights_flat(spec, y, users, items, propensities)

    def objective(model: FactorModel) -> float:
        s = np.einsum("ij,ij->i", model.user_factors[users], model.item_factors[items])
        r = link_forward(s, model.link)
        return float(np.sum(w1 * spec.local.positive(r) + w0 * spec.local.negative(r)) / max(y.size, 1))

    return objective


def click_objective(spec: EstimatorSpec, clicks, propensities=None, ground_truth: GroundTruthModel | None = None) -> Objective:
    """The configured estimator on a held-out click matrix over all pairs (lower is better)."""
    gamma = ground_truth.gamma if ground_truth is not None else None
    y = clicks.to_dense() if isinstance(clicks, ClickDataset) else np.asarray(clicks, dtype=np.float64)
    return lambda model: evaluate(spec, y, model.predict_matrix(), propensities, gamma)


def snips_objective(validation: ValidationSet, propensities, k: int = 5) -> Objective:
    """SNIPS DCG@K on the validation candidates (higher is better)."""

    def objective(model: FactorModel) -> float:
        orders = {u: order_items(model.score_items(u, validation.items[u]), validation.items[u]) for u in validation.users}
        return snips_dcg(RankingResult(orders), validation, propensities, k)

    return objective


def _pair_weights_flat(spec, y, users, items, propensities=None, gamma=None):
    """Estimator weights for an explicit list of pairs."""
    y = y.reshape(1, -1)
    theta = g = None
    if propensities is not None:
        theta = _gather(getattr(propensities, "theta", propensities), users, items).reshape(1, -1)
    if gamma is not None:
        g = _gather(gamma, users, items).reshape(1, -1)
    if spec.variant == "expomf":
        spec = replace(spec, posteriors=_gather(spec.posteriors, users, items).reshape(1, -1))
    w1, w0 = pair_weights(spec, y, theta, g)
    return np.asarray(w1).ravel(), np.asarray(w0).ravel()


def _gather(values, users, items):
    a = np.asarray(values, dtype=np.float64)
    return a[items] if a.ndim == 1 else a[users, items]


def _required_inputs(config: TrainConfig, propensities, ground_truth):
    spec = config.estimator
    if spec.needs_propensities and propensities is None:
        raise ConfigurationError(f"the {spec.variant} estimator needs propensity scores")
    if spec.variant == "ideal" and ground_truth is None:
        raise ConfigurationError("training on the ideal loss needs ground truth")


def train(
    dataset: ClickDataset,
    config: TrainConfig,
    propensities=None,
    ground_truth: GroundTruthModel | None = None,
    objective: Objective | None = None,
    maximize: bool = False,
) -> TrainResult:
    """Fit a :class:`FactorModel` by SGD on the configured estimator.

    Every epoch visits all ``m * n`` pairs in shuffled mini-batches; each pair
    contributes its own gradient step and a batch's steps are applied
    together.  After each epoch ``objective`` is evaluated (default: ideal
    loss if ``ground_truth`` is given, else the training loss) and the best
    model is returned, stopping after ``patience`` epochs without improvement.
    """
    _required_inputs(config, propensities, ground_truth)
    spec, local, link = config.estimator, config.estimator.local, config.resolved_link
    m, n = dataset.shape
    gamma = ground_truth.gamma if ground_truth is not None else None
    y = dataset.to_dense()
    w1, w0 = pair_weights(spec, y, getattr(propensities, "theta", propensities), gamma)
    w1 = np.ascontiguousarray(np.broadcast_to(w1, (m, n))).ravel()
    w0 = np.ascontiguousarray(np.broadcast_to(w0, (m, n))).ravel()
    clicked = y.ravel() > 0

    def training_loss(model: FactorModel) -> float:
        return evaluate(spec, y, model.predict_matrix(), propensities, gamma)

    if objective is None:
        if ground_truth is not None:
            objective = ideal_objective(ground_truth, local)
        else:
            objective = training_loss
    sign = -1.0 if maximize else 1.0

    init = init_factors(m, n, config.latent_dim, config.seed, link)
    U, V = init.user_factors.copy(), init.item_factors.copy()
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 1]))
    lr, l2, bs = config.learning_rate, config.l2_reg, config.batch_size

    best = TrainResult(init)
    best_key = np.inf
    history = []
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        if config.negative_rate < 1.0:
            keep = clicked | (rng.random(m * n) < config.negative_rate)
            pool = np.flatnonzero(keep)
            scale = np.where(clicked[pool], 1.0, 1.0 / config.negative_rate)
        else:
            pool, scale = np.arange(m * n), None
        perm = rng.permutation(pool.size)
        for start in range(0, perm.size, bs):
            sel = perm[start:start + bs]
            idx = pool[sel]
            u, i = np.divmod(idx, n)
            a1, a0 = w1[idx], w0[idx]
            if scale is not None:
                a1, a0 = a1 * scale[sel], a0 * scale[sel]
            Uu, Vi = U[u], V[i]
            g = _score_gradient(np.einsum("ij,ij->i", Uu, Vi), a1, a0, local, link)[:, None]
            np.add.at(U, u, -lr * (g * Vi + l2 * Uu))
            np.add.at(V, i, -lr * (g * Uu + l2 * Vi))
        model = FactorModel(U, V, link)
        score = float(objective(model))
        entry = {"epoch": epoch, "train_loss": training_loss(model), "validation": score}
        history.append(entry)
        logger.debug("epoch %d train=%.6f validation=%.6f", epoch, entry["train_loss"], score)
        if not np.isfinite(score):
            logger.warning("non-finite validation objective at epoch %d; stopping", epoch)
            break
        if sign * score < best_key:
            best_key = sign * score
            best = TrainResult(model, best_epoch=epoch, best_score=score)
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break
    best.history = history
    return best


@dataclass
class GridResult:
    best_config: TrainConfig
    best_model: FactorModel
    scores: list[tuple[TrainConfig, float]]


def grid_search(
    train_set: ClickDataset,
    validation_set: ValidationSet | None,
    grid: Sequence[TrainConfig],
    tuning: Literal["snips_dcg", "ideal_loss"] = "snips_dcg",
    propensities=None,
    ground_truth: GroundTruthModel | None = None,
    tuning_propensities=None,
    k: int = 5,
) -> GridResult:
    """Train every config and keep the best by validation score.

    ``snips_dcg`` is maximized on ``validation_set`` using
    ``tuning_propensities`` (default: ``propensities``); ``ideal_loss`` is
    minimized against ``ground_truth``.  Ties go to the earliest config.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("grid must not be empty")
    if tuning == "snips_dcg":
        if validation_set is None:
            raise ConfigurationError("SNIPS tuning needs a validation set")
        tp = tuning_propensities if tuning_propensities is not None else propensities
        if tp is None:
            raise ConfigurationError("SNIPS tuning needs propensities")
        objective, maximize = snips_objective(validation_set, tp, k), True
    elif tuning == "ideal_loss":
        if ground_truth is None:
            raise ConfigurationError("ideal-loss tuning needs ground truth")
        objective, maximize = None, False
    else:
        raise ValueError(f"unknown tuning metric {tuning!r}")

    scores = []
    best = None
    for config in grid:
        result = train(train_set, config, propensities, ground_truth, objective, maximize)
        scores.append((config, result.best_score))
        better = best is None or (
            result.best_score > best[1] if maximize else result.best_score < best[1]
        )
        if better:
            best = (config, result.best_score, result.model)
    return GridResult(best[0], best[2], scores)
