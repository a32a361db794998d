"""Loss estimators for the ideal relevance loss and their closed-form bias/variance.

Every estimator here averages a per-pair term over *all* ``m * n`` pairs::

    term = w1 * positive(r) + w0 * negative(r)

and differs only in the weights ``(w1, w0)``:

========  ======================  ==========================
variant   w1                      w0
========  ======================  ==========================
ideal     gamma                   1 - gamma
wmf       c * Y                   1 - Y
expomf    post * Y                post * (1 - Y)
unbiased  Y / theta               1 - Y / theta
clipped   Y / max(theta, M)       1 - Y / max(theta, M)
========  ======================  ==========================

Because all variants go through the same weighted reduction, the special
cases (``clip=1`` vs ``c=1``, ``clip <= min(theta)`` vs unbiased) agree to the
last bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .core import SQUARED, ClickDataset, GroundTruthModel, LocalLoss, check_predictions

Variant = Literal["ideal", "wmf", "expomf", "unbiased", "clipped"]
VARIANTS: tuple[str, ...] = ("ideal", "wmf", "expomf", "unbiased", "clipped")


@dataclass(frozen=True, eq=False)
class EstimatorSpec:
    """Which estimator to evaluate, with exactly the parameters it needs.

    ``c`` belongs to ``wmf``, ``posteriors`` to ``expomf`` and ``clip`` to
    ``clipped``; supplying one to another variant is an error.
    """

    variant: Variant
    c: Optional[float] = None
    posteriors: Optional[np.ndarray] = None
    clip: Optional[float] = None
    local: LocalLoss = SQUARED

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown estimator variant {self.variant!r}")
        required = {"wmf": "c", "expomf": "posteriors", "clipped": "clip"}.get(self.variant)
        for name in ("c", "posteriors", "clip"):
            present = getattr(self, name) is not None
            if name == required and not present:
                raise ValueError(f"{self.variant} estimator requires {name}")
            if name != required and present:
                raise ValueError(f"{name} is not a parameter of the {self.variant} estimator")
        if self.c is not None and not self.c >= 1.0:
            raise ValueError("wmf weight c must be >= 1")
        if self.clip is not None:
            _check_clip(self.clip)
        if self.posteriors is not None:
            post = np.array(self.posteriors, dtype=np.float64)
            if not np.all((post > 0) & (post <= 1)):
                raise ValueError("posterior exposure probabilities must lie in (0, 1]")
            post.setflags(write=False)
            object.__setattr__(self, "posteriors", post)

    @property
    def needs_propensities(self) -> bool:
        return self.variant in ("unbiased", "clipped")

    def describe(self) -> str:
        if self.variant == "wmf":
            extra = f"c={self.c:g}"
        elif self.variant == "clipped":
            extra = f"M={self.clip:g}"
        else:
            extra = ""
        return f"{self.variant}({extra}, {self.local.kind})" if extra else f"{self.variant}({self.local.kind})"


@dataclass(frozen=True)
class EstimatorReport:
    loss_value: float
    analytic_bias: Optional[float] = None
    analytic_variance: Optional[float] = None


def _check_clip(clip: float) -> float:
    if not 0.0 <= clip <= 1.0:
        raise ValueError(f"clipping constant {clip} outside [0, 1]")
    return float(clip)


def _matrix(values, shape: tuple[int, int], name: str) -> np.ndarray:
    """Broadcast a per-item vector or full matrix to ``shape``."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 1 and a.shape[0] == shape[1]:
        a = np.broadcast_to(a, shape)
    if a.shape != shape:
        raise ValueError(f"{name} shape {a.shape} does not match {shape}")
    return a


def _propensities(values, shape) -> np.ndarray:
    theta = _matrix(getattr(values, "theta", values), shape, "propensities")
    if not np.all(theta > 0):
        raise ValueError("propensities must be strictly positive")
    return theta


def _clicks(clicks, shape) -> np.ndarray:
    """Dense click array; leading batch axes are allowed for Monte-Carlo use."""
    if isinstance(clicks, ClickDataset):
        if clicks.shape != shape:
            raise ValueError(f"dataset shape {clicks.shape} does not match {shape}")
        return clicks.to_dense()
    y = np.asarray(clicks, dtype=np.float64)
    if y.shape[-2:] != shape:
        raise ValueError(f"click matrix shape {y.shape} does not match {shape}")
    return y


def clipped_propensities(theta, clip: float) -> np.ndarray:
    return np.maximum(np.asarray(theta, dtype=np.float64), _check_clip(clip))


def pair_weights(spec: EstimatorSpec, clicks, propensities=None, gamma=None):
    """Per-pair weights ``(w1, w0)`` on the positive and negative local losses.

    ``clicks`` is a dense array (possibly with leading batch axes); the
    returned arrays broadcast against it.
    """
    y = np.asarray(clicks, dtype=np.float64)
    shape = y.shape[-2:]
    if spec.variant == "ideal":
        if gamma is None:
            raise ValueError("the ideal loss needs the relevance levels gamma")
        g = _matrix(gamma, shape, "gamma")
        return np.broadcast_to(g, y.shape), np.broadcast_to(1.0 - g, y.shape)
    if spec.variant == "wmf":
        return spec.c * y, 1.0 - y
    if spec.variant == "expomf":
        post = _matrix(spec.posteriors, shape, "posteriors")
        return post * y, post * (1.0 - y)
    if propensities is None:
        raise ValueError(f"the {spec.variant} estimator needs propensity scores")
    theta = _propensities(propensities, shape)
    if spec.variant == "clipped":
        theta = clipped_propensities(theta, spec.clip)
    ratio = y / theta
    return ratio, 1.0 - ratio


def _pair_mean(terms: np.ndarray) -> np.ndarray | float:
    # contiguous last axis -> numpy's pairwise summation
    flat = np.ascontiguousarray(terms).reshape(*terms.shape[:-2], -1)
    out = flat.sum(axis=-1) / flat.shape[-1]
    return float(out) if out.ndim == 0 else out


def weighted_loss(w1, w0, predictions: np.ndarray, local: LocalLoss):
    r = np.asarray(predictions, dtype=np.float64)
    return _pair_mean(w1 * local.positive(r) + w0 * local.negative(r))


def evaluate(spec: EstimatorSpec, clicks, predictions, propensities=None, gamma=None):
    """Value of the estimator described by ``spec``.

    Returns a float, or an array over the leading axes of a batched ``clicks``.
    """
    r = check_predictions(predictions)
    if r.ndim != 2:
        raise ValueError("predictions must be an m x n matrix")
    if clicks is None and spec.variant != "ideal":
        raise ValueError(f"the {spec.variant} estimator needs clicks")
    # the ideal loss ignores clicks but keeps any batch axes they carry
    y = np.zeros(r.shape) if clicks is None else _clicks(clicks, r.shape)
    w1, w0 = pair_weights(spec, y, propensities, gamma)
    return weighted_loss(w1, w0, r, spec.local)


def ideal_loss(gamma, predictions, local: LocalLoss = SQUARED) -> float:
    r = check_predictions(predictions)
    return evaluate(EstimatorSpec("ideal", local=local), None, r, gamma=_matrix(gamma, r.shape, "gamma"))


def wmf_loss(dataset, predictions, c: float = 1.0, local: LocalLoss = SQUARED):
    return evaluate(EstimatorSpec("wmf", c=c, local=local), dataset, predictions)


def expomf_loss(dataset, predictions, posteriors, local: LocalLoss = SQUARED):
    return evaluate(EstimatorSpec("expomf", posteriors=posteriors, local=local), dataset, predictions)


def unbiased_loss(dataset, predictions, propensities, local: LocalLoss = SQUARED):
    return evaluate(EstimatorSpec("unbiased", local=local), dataset, predictions, propensities)


def clipped_loss(dataset, predictions, propensities, clip: float, local: LocalLoss = SQUARED):
    return evaluate(EstimatorSpec("clipped", clip=clip, local=local), dataset, predictions, propensities)


def expomf_posteriors(truth: GroundTruthModel, clicks) -> np.ndarray:
    """Exact posterior exposure E[O | Y] under the click model.

    1 for clicked pairs and ``theta (1 - gamma) / (1 - theta gamma)`` otherwise.
    Where ``theta * gamma == 1`` an unclicked pair is impossible; those
    entries are set to 1.
    """
    y = _clicks(clicks, truth.shape)
    g, t = truth.gamma, truth.theta
    denom = 1.0 - t * g
    with np.errstate(divide="ignore", invalid="ignore"):
        unclicked = np.where(denom > 0, t * (1.0 - g) / denom, 1.0)
    post = np.where(y == 1, 1.0, unclicked)
    # theta(1 - gamma) == 0 when gamma == 1; keep strictly positive
    return np.where(post > 0, post, np.finfo(float).tiny)


# closed-form analytics -----------------------------------------------------


def _deltas(predictions, local, shape=None):
    r = check_predictions(predictions, shape)
    return np.asarray(local.positive(r)), np.asarray(local.negative(r))


def _finish_bias(total: float, signed: bool) -> float:
    return total if signed else abs(total)


def wmf_bias(gamma, theta, c: float, predictions, local: LocalLoss = SQUARED, signed: bool = False) -> float:
    """Bias of the WMF estimator: mean of (c theta - 1) gamma d1 + gamma (1 - theta) d0."""
    d1, d0 = _deltas(predictions, local)
    g, t = _matrix(gamma, d1.shape, "gamma"), _matrix(theta, d1.shape, "theta")
    return _finish_bias(_pair_mean((c * t - 1.0) * g * d1 + g * (1.0 - t) * d0), signed)


def expomf_bias(gamma, theta, posteriors, predictions, local: LocalLoss = SQUARED, signed: bool = False) -> float:
    d1, d0 = _deltas(predictions, local)
    g, t = _matrix(gamma, d1.shape, "gamma"), _matrix(theta, d1.shape, "theta")
    q = _matrix(posteriors, d1.shape, "posteriors")
    terms = g * (q * t - 1.0) * d1 + (q - 1.0 - g * (t * q - 1.0)) * d0
    return _finish_bias(_pair_mean(terms), signed)


def clipped_bias(gamma, theta, clip: float, predictions, local: LocalLoss = SQUARED, signed: bool = False) -> float:
    """Bias from clipping: only pairs with theta <= M contribute gamma (theta/M - 1)(d1 - d0)."""
    clip = _check_clip(clip)
    d1, d0 = _deltas(predictions, local)
    g, t = _matrix(gamma, d1.shape, "gamma"), _matrix(theta, d1.shape, "theta")
    clipped = t <= clip
    ratio = np.divide(t, clip, out=np.ones_like(t), where=clipped)
    return _finish_bias(_pair_mean(np.where(clipped, g * (ratio - 1.0) * (d1 - d0), 0.0)), signed)


def unbiased_variance(gamma, theta, predictions, local: LocalLoss = SQUARED) -> float:
    d1, d0 = _deltas(predictions, local)
    g = _matrix(gamma, d1.shape, "gamma")
    t = _propensities(theta, d1.shape)
    flat = np.ascontiguousarray(g * (1.0 / t - g) * (d1 - d0) ** 2).ravel()
    return float(flat.sum() / flat.size**2)


def clipped_variance(gamma, theta, clip: float, predictions, local: LocalLoss = SQUARED) -> float:
    """The unbiased variance formula with ``theta`` replaced by ``max(theta, M)``.

    This is the textbook closed form.  For pairs with ``theta < M`` the true
    per-pair variance is ``theta gamma (1 - theta gamma) / M**2``, which is
    smaller; :func:`click_moments` gives the exact value.
    """
    return unbiased_variance(gamma, clipped_propensities(theta, clip), predictions, local)


def click_moments(spec: EstimatorSpec, truth: GroundTruthModel, predictions, propensities=None):
    """Exact mean and variance of the estimator when Y ~ Bernoulli(theta gamma).

    Each per-pair term is affine in the click, ``b + a Y``, so the moments
    follow directly.  This is a generic route that does not use the
    closed-form bias and variance algebra, which makes it a useful cross-check.
    """
    r = check_predictions(predictions, truth.shape)
    shape = truth.shape
    if propensities is None and spec.needs_propensities:
        propensities = truth.theta
    pos = pair_weights(spec, np.ones(shape), propensities, truth.gamma)
    neg = pair_weights(spec, np.zeros(shape), propensities, truth.gamma)
    d1, d0 = spec.local.positive(r), spec.local.negative(r)
    at_one = pos[0] * d1 + pos[1] * d0
    at_zero = neg[0] * d1 + neg[1] * d0
    q = truth.click_probability()
    if spec.variant == "ideal":
        return _pair_mean(at_zero), 0.0
    slope = at_one - at_zero
    mean = _pair_mean(at_zero + slope * q)
    n = r.size
    var = float(np.ascontiguousarray(slope**2 * q * (1.0 - q)).ravel().sum() / n**2)
    return mean, var


def analytic_bias(spec: EstimatorSpec, truth: GroundTruthModel, predictions, signed: bool = False) -> float:
    """Bias of ``spec`` against the ideal loss from the closed-form expressions.

    Assumes the propensities handed to unbiased/clipped estimators are the
    true exposure probabilities.
    """
    g, t = truth.gamma, truth.theta
    if spec.variant == "ideal" or spec.variant == "unbiased":
        return 0.0
    if spec.variant == "wmf":
        return wmf_bias(g, t, spec.c, predictions, spec.local, signed)
    if spec.variant == "expomf":
        return expomf_bias(g, t, spec.posteriors, predictions, spec.local, signed)
    return clipped_bias(g, t, spec.clip, predictions, spec.local, signed)


def analytic_variance(spec: EstimatorSpec, truth: GroundTruthModel, predictions) -> float:
    """Variance under the click model; unbiased/clipped use the closed forms."""
    if spec.variant == "unbiased":
        return unbiased_variance(truth.gamma, truth.theta, predictions, spec.local)
    if spec.variant == "clipped":
        return clipped_variance(truth.gamma, truth.theta, spec.clip, predictions, spec.local)
    return click_moments(spec, truth, predictions)[1]


def report(spec: EstimatorSpec, dataset, predictions, propensities=None, truth: GroundTruthModel | None = None) -> EstimatorReport:
    gamma = truth.gamma if truth is not None else None
    value = evaluate(spec, dataset, predictions, propensities, gamma)
    if truth is None:
        return EstimatorReport(value)
    return EstimatorReport(value, analytic_bias(spec, truth, predictions), analytic_variance(spec, truth, predictions))
