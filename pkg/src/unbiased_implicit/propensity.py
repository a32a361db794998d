"""Item-popularity propensity estimates and propensity clipping."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ClickDataset

DEFAULT_ETA = 0.5


@dataclass(frozen=True, eq=False)
class PropensityScores:
    """User-independent exposure propensities, one per item."""

    theta: np.ndarray
    eta: float = DEFAULT_ETA
    clip: Optional[float] = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).ravel()
        if not np.all((theta > 0) & (theta <= 1)):
            raise ValueError("propensities must lie in (0, 1]")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def __len__(self):
        return self.theta.size

    def as_matrix(self, num_users: int) -> np.ndarray:
        return np.broadcast_to(self.theta, (num_users, self.theta.size))

    def __eq__(self, other):
        if not isinstance(other, PropensityScores):
            return NotImplemented
        return np.array_equal(self.theta, other.theta) and (self.eta, self.clip) == (other.eta, other.clip)


def relative_popularity(counts, eta: float = DEFAULT_ETA) -> np.ndarray:
    """``(count / max count) ** eta`` with zero-count items floored at one click."""
    counts = np.asarray(counts, dtype=np.float64)
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    top = counts.max() if counts.size else 0.0
    if top <= 0:
        raise ValueError("no clicks: popularity propensities are undefined")
    return (np.maximum(counts, 1.0) / top) ** eta


def estimate_popularity_propensity(dataset: ClickDataset, eta: float = DEFAULT_ETA) -> PropensityScores:
    if dataset.num_clicks == 0:
        raise ValueError("dataset has no clicks: popularity propensities are undefined")
    return PropensityScores(relative_popularity(dataset.item_counts(), eta), eta)


def clip(scores: PropensityScores, clip_constant: float) -> PropensityScores:
    """Replace every propensity below ``clip_constant`` by the constant."""
    if not 0.0 <= clip_constant <= 1.0:
        raise ValueError(f"clipping constant {clip_constant} outside [0, 1]")
    theta = np.maximum(scores.theta, clip_constant)
    applied = clip_constant if scores.clip is None else max(scores.clip, clip_constant)
    return PropensityScores(theta, scores.eta, applied)


def rare_items(scores: PropensityScores, fraction: float = 0.5) -> np.ndarray:
    """Indices of the least popular ``fraction`` of items (ties broken by item id)."""
    n_rare = int(np.floor(len(scores) * fraction))
    order = np.argsort(scores.theta, kind="stable")
    return np.sort(order[:n_rare])
