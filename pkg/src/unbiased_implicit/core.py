"""Domain types, pointwise local losses and dataset validation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

LOG_EPS = 1e-8


class ValidationError(ValueError):
    """Raised when user-supplied data violates a structural invariant."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ClickDataset:
    """Binary click matrix stored as the sorted set of clicked (user, item) pairs.

    Every unclicked pair of the ``num_users x num_items`` grid is an implicit
    zero, so estimators always average over all ``m * n`` pairs.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray

    def __post_init__(self):
        if self.num_users <= 0 or self.num_items <= 0:
            raise ValidationError("num_users and num_items must be positive")
        users = np.asarray(self.users, dtype=np.int64).ravel()
        items = np.asarray(self.items, dtype=np.int64).ravel()
        if users.shape != items.shape:
            raise ValidationError("users and items must have the same length")
        if users.size:
            if users.min() < 0 or users.max() >= self.num_users:
                raise ValidationError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise ValidationError("item index out of range")
        flat = users * self.num_items + items
        order = np.argsort(flat, kind="stable")
        flat = flat[order]
        if flat.size > 1 and np.any(flat[1:] == flat[:-1]):
            raise ValidationError("duplicate (user, item) pairs")
        object.__setattr__(self, "users", _frozen(users[order].copy()))
        object.__setattr__(self, "items", _frozen(items[order].copy()))

    @property
    def shape(self) -> tuple[int, int]:
        return self.num_users, self.num_items

    @property
    def num_pairs(self) -> int:
        return self.num_users * self.num_items

    @property
    def num_clicks(self) -> int:
        return int(self.users.size)

    def to_dense(self) -> np.ndarray:
        y = np.zeros(self.shape, dtype=np.float64)
        y[self.users, self.items] = 1.0
        return y

    def triples(self) -> list[tuple[int, int, int]]:
        return [(int(u), int(i), 1) for u, i in zip(self.users, self.items)]

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items).astype(np.int64)

    def user_items(self, user: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.users, [user, user + 1])
        return self.items[lo:hi]

    @classmethod
    def from_dense(cls, clicks: np.ndarray) -> "ClickDataset":
        clicks = np.asarray(clicks)
        if clicks.ndim != 2:
            raise ValidationError("click matrix must be two-dimensional")
        if not np.all((clicks == 0) | (clicks == 1)):
            raise ValidationError("click matrix must be binary")
        users, items = np.nonzero(clicks)
        return cls(clicks.shape[0], clicks.shape[1], users, items)

    def __eq__(self, other):
        if not isinstance(other, ClickDataset):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
        )

    def __hash__(self):
        return hash((self.shape, self.users.tobytes(), self.items.tobytes()))

    def __repr__(self):
        return f"ClickDataset(num_users={self.num_users}, num_items={self.num_items}, clicks={self.num_clicks})"


@dataclass(frozen=True, eq=False)
class GroundTruthModel:
    """Relevance levels ``gamma`` and exposure probabilities ``theta`` per pair."""

    gamma: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=np.float64)
        theta = np.array(self.theta, dtype=np.float64)
        if gamma.ndim != 2 or gamma.shape != theta.shape:
            raise ValidationError("gamma and theta must be matrices of equal shape")
        for name, a in (("gamma", gamma), ("theta", theta)):
            if not np.all((a > 0) & (a <= 1)):
                raise ValidationError(f"{name} entries must lie in (0, 1]")
        object.__setattr__(self, "gamma", _frozen(gamma))
        object.__setattr__(self, "theta", _frozen(theta))

    @property
    def shape(self) -> tuple[int, int]:
        return self.gamma.shape

    def click_probability(self) -> np.ndarray:
        return self.theta * self.gamma


@dataclass(frozen=True)
class LocalLoss:
    """Pointwise loss pair: ``positive`` applies when R=1, ``negative`` when R=0.

    ``squared``: (1 - r)^2 and r^2.  ``log``: -ln(r) and -ln(1 - r) with r
    clamped to [eps, 1 - eps] so both stay finite at the endpoints.
    """

    kind: Literal["squared", "log"] = "squared"
    eps: float = LOG_EPS

    def __post_init__(self):
        if self.kind not in ("squared", "log"):
            raise ValueError(f"unknown local loss kind {self.kind!r}")
        if not 0.0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 0.5)")

    def _clamp(self, r):
        return np.clip(r, self.eps, 1.0 - self.eps)

    def positive(self, r):
        if self.kind == "squared":
            return (1.0 - r) ** 2
        return -np.log(self._clamp(r))

    def negative(self, r):
        if self.kind == "squared":
            return np.square(r)
        return -np.log1p(-self._clamp(r))

    def positive_grad(self, r):
        """Derivative of ``positive`` with respect to the prediction."""
        if self.kind == "squared":
            return -2.0 * (1.0 - r)
        inside = (r >= self.eps) & (r <= 1.0 - self.eps)
        return np.where(inside, -1.0 / self._clamp(r), 0.0)

    def negative_grad(self, r):
        if self.kind == "squared":
            return 2.0 * r
        inside = (r >= self.eps) & (r <= 1.0 - self.eps)
        return np.where(inside, 1.0 / (1.0 - self._clamp(r)), 0.0)


SQUARED = LocalLoss("squared")
LOG = LocalLoss("log")


def local_loss(prediction: float, label: int, kind: LocalLoss = SQUARED) -> float:
    """Loss of a single prediction in [0, 1] against a binary label."""
    prediction = float(prediction)
    if not 0.0 <= prediction <= 1.0:
        raise ValueError(f"prediction {prediction} outside [0, 1]")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    if label == 1:
        return float(kind.positive(prediction))
    return float(kind.negative(prediction))


def check_predictions(values, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Return ``values`` as a float64 array after checking shape and the [0, 1] codomain."""
    r = np.asarray(values, dtype=np.float64)
    if shape is not None and r.shape != tuple(shape):
        raise ValueError(f"prediction shape {r.shape} does not match {tuple(shape)}")
    if not np.all((r >= 0.0) & (r <= 1.0)):
        raise ValueError("predictions must lie in [0, 1]")
    return r


def validate_dataset(raw: Iterable[tuple[int, int, int]], num_users: int, num_items: int) -> ClickDataset:
    """Build a :class:`ClickDataset` from ``(user, item, click)`` triples.

    Rows with ``click == 0`` are accepted and contribute nothing. Repeated
    pairs collapse when their click values agree.
    """
    if num_users <= 0 or num_items <= 0:
        raise ValidationError("num_users and num_items must be positive")
    seen: dict[tuple[int, int], int] = {}
    for row in raw:
        u, i, y = (int(v) for v in row)
        if not (0 <= u < num_users and 0 <= i < num_items):
            raise ValidationError(f"pair {(u, i, y)} outside {num_users}x{num_items}")
        if y not in (0, 1):
            raise ValidationError(f"pair {(u, i, y)} has a non-binary click")
        prev = seen.setdefault((u, i), y)
        if prev != y:
            raise ValidationError(f"conflicting click values for pair {(u, i)}")
    clicked = [k for k, y in seen.items() if y == 1]
    users = np.array([u for u, _ in clicked], dtype=np.int64)
    items = np.array([i for _, i in clicked], dtype=np.int64)
    return ClickDataset(num_users, num_items, users, items)
