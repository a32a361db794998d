"""Top-N ranking metrics and the self-normalized IPS estimate of DCG.

Ranks are 1-based.  Items are ordered by descending score with ties broken
by ascending item id.  DCG discounts use ``log_base(rank + 1)`` (base 2 by
default).

MAP@K follows the sum-over-cutoffs form
``sum_{relevant i} sum_{k=1..K} 1{rank_i <= k} / k`` without the usual
normalization by the number of relevant items.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import ClickDataset

LOG_BASE = 2.0


def _discount(ranks, k: int, base: float = LOG_BASE) -> np.ndarray:
    ranks = np.asarray(ranks, dtype=np.float64)
    denom = np.log2(ranks + 1.0) if base == 2.0 else np.log(ranks + 1.0) / np.log(base)
    return np.where(ranks <= k, 1.0 / denom, 0.0)


def _check_k(k: int) -> int:
    if int(k) != k or k < 1:
        raise ValueError(f"cutoff K must be a positive integer, got {k!r}")
    return int(k)


def order_items(scores, items) -> np.ndarray:
    """``items`` sorted by (-score, item id)."""
    scores = np.asarray(scores, dtype=np.float64)
    items = np.asarray(items, dtype=np.int64)
    return items[np.lexsort((items, -scores))]


@dataclass(frozen=True)
class RankingResult:
    """Per-user item orderings; ``orders[u][0]`` is the top-ranked item."""

    orders: Mapping[int, np.ndarray] = field(default_factory=dict)

    def rank_map(self, user: int) -> dict[int, int]:
        return {int(i): r for r, i in enumerate(self.orders[user], start=1)}

    def ranks(self, user: int, items) -> np.ndarray:
        lookup = self.rank_map(user)
        try:
            return np.array([lookup[int(i)] for i in items], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"item {exc.args[0]} is not ranked for user {user}") from None

    def merge(self, other: "RankingResult") -> "RankingResult":
        return RankingResult({**self.orders, **other.orders})


@dataclass(frozen=True)
class RelevanceLabels:
    """Per-user labeled test items and their binary relevance."""

    items: Mapping[int, np.ndarray]
    relevance: Mapping[int, np.ndarray]

    @property
    def users(self) -> list[int]:
        return sorted(self.items)

    @classmethod
    def from_triples(cls, rows) -> "RelevanceLabels":
        items: dict[int, list[int]] = {}
        rel: dict[int, list[int]] = {}
        for u, i, r in rows:
            items.setdefault(int(u), []).append(int(i))
            rel.setdefault(int(u), []).append(int(r))
        return cls(
            {u: np.array(v, dtype=np.int64) for u, v in items.items()},
            {u: np.array(v, dtype=np.int64) for u, v in rel.items()},
        )

    def restrict(self, keep_items) -> "RelevanceLabels":
        keep = np.asarray(keep_items, dtype=np.int64)
        items, rel = {}, {}
        for u in self.users:
            mask = np.isin(self.items[u], keep)
            if mask.any():
                items[u], rel[u] = self.items[u][mask], self.relevance[u][mask]
        return RelevanceLabels(items, rel)


def _scores(model, user: int, items: np.ndarray) -> np.ndarray:
    if hasattr(model, "score_items"):
        return model.score_items(user, items)
    return np.asarray(model, dtype=np.float64)[user, items]


def rank_items(model, user: int, candidates) -> RankingResult:
    """Rank ``candidates`` for one user; ``model`` is a FactorModel or a score matrix."""
    candidates = np.unique(np.asarray(candidates, dtype=np.int64))
    if candidates.size == 0:
        raise ValueError("candidate set must not be empty")
    return RankingResult({int(user): order_items(_scores(model, user, candidates), candidates)})


def rank_labeled(model, labels: RelevanceLabels) -> RankingResult:
    """Rank each user's labeled items, the candidate set for test metrics."""
    orders = {}
    for u in labels.users:
        orders.update(rank_items(model, u, labels.items[u]).orders)
    return RankingResult(orders)


def _relevant_ranks(ranking: RankingResult, labels: RelevanceLabels, user: int) -> np.ndarray:
    rel_items = labels.items[user][labels.relevance[user] == 1]
    return ranking.ranks(user, rel_items)


def dcg_at_k(ranking: RankingResult, labels: RelevanceLabels, k: int, base: float = LOG_BASE) -> float:
    k = _check_k(k)
    users = labels.users
    if not users:
        return 0.0
    return float(sum(_discount(_relevant_ranks(ranking, labels, u), k, base).sum() for u in users) / len(users))


def recall_at_k(ranking: RankingResult, labels: RelevanceLabels, k: int) -> float:
    """Recall@K averaged over users that have at least one relevant labeled item."""
    k = _check_k(k)
    values = []
    for u in labels.users:
        ranks = _relevant_ranks(ranking, labels, u)
        if ranks.size:
            values.append(np.count_nonzero(ranks <= k) / ranks.size)
    return float(np.mean(values)) if values else 0.0


def map_at_k(ranking: RankingResult, labels: RelevanceLabels, k: int) -> float:
    k = _check_k(k)
    users = labels.users
    if not users:
        return 0.0
    # tail[r - 1] = sum_{j=r}^{K} 1/j
    tail = np.cumsum(1.0 / np.arange(k, 0, -1))[::-1]
    total = 0.0
    for u in users:
        ranks = _relevant_ranks(ranking, labels, u)
        ranks = ranks[ranks <= k]
        total += float(np.sum(tail[ranks - 1]))
    return total / len(users)


def ideal_relevance_metric(ranking: RankingResult, gamma, k: int, base: float = LOG_BASE) -> float:
    """Relevance-weighted DCG@K: mean over ranked users of sum_i gamma_ui c(rank_ui)."""
    k = _check_k(k)
    if gamma is None:
        raise ValueError("relevance levels gamma are required")
    gamma = np.asarray(gamma, dtype=np.float64)
    users = sorted(ranking.orders)
    if not users:
        return 0.0
    total = 0.0
    for u in users:
        order = np.asarray(ranking.orders[u])
        total += float(np.sum(gamma[u, order] * _discount(np.arange(1, order.size + 1), k, base)))
    return total / len(users)


def full_rankings(scores) -> np.ndarray:
    """Row-wise item orderings of a score matrix (ties by ascending item id)."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.argsort(-scores, axis=1, kind="stable")


def ideal_dcg(scores, gamma, k: int, base: float = LOG_BASE) -> float:
    """Vectorized :func:`ideal_relevance_metric` for rankings over all items."""
    k = _check_k(k)
    gamma = np.asarray(gamma, dtype=np.float64)
    order = full_rankings(scores)[:, :k]
    disc = _discount(np.arange(1, order.shape[1] + 1), k, base)
    return float(np.mean(np.take_along_axis(gamma, order, axis=1) @ disc))


# validation split and SNIPS -------------------------------------------------


@dataclass(frozen=True)
class ValidationSet:
    """Per-user validation candidates with their (binary) validation clicks."""

    items: Mapping[int, np.ndarray]
    clicks: Mapping[int, np.ndarray]

    @property
    def users(self) -> list[int]:
        return sorted(self.items)

    def pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        users = self.users
        if not users:
            return (np.empty(0, np.int64),) * 2 + (np.empty(0),)
        u = np.concatenate([np.full(self.items[x].size, x, dtype=np.int64) for x in users])
        i = np.concatenate([self.items[x] for x in users])
        y = np.concatenate([self.clicks[x] for x in users]).astype(np.float64)
        return u, i, y


def split_validation(dataset: ClickDataset, fraction: float = 0.1, n_unlabeled: int = 100, seed: int = 0):
    """Move a random ``fraction`` of clicks to a validation set.

    Each user's validation candidates are their held-out clicks plus up to
    ``n_unlabeled`` items drawn uniformly from the items they never clicked.
    Returns ``(train_dataset, validation_set)``.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    n_val = int(round(fraction * dataset.num_clicks))
    held = np.zeros(dataset.num_clicks, dtype=bool)
    held[rng.choice(dataset.num_clicks, size=n_val, replace=False)] = True
    train = ClickDataset(dataset.num_users, dataset.num_items, dataset.users[~held], dataset.items[~held])
    clicked = dataset.to_dense().astype(bool)

    items, clicks = {}, {}
    for u in range(dataset.num_users):
        pos = np.sort(dataset.items[held & (dataset.users == u)])
        pool = np.flatnonzero(~clicked[u])
        neg = np.sort(rng.choice(pool, size=min(n_unlabeled, pool.size), replace=False))
        if pos.size + neg.size == 0:
            continue
        items[u] = np.concatenate([pos, neg])
        clicks[u] = np.concatenate([np.ones(pos.size, np.int64), np.zeros(neg.size, np.int64)])
    return train, ValidationSet(items, clicks)


def snips_dcg(ranking: RankingResult, validation: ValidationSet, propensities, k: int = 5, base: float = LOG_BASE) -> float:
    """Self-normalized IPS estimate of DCG@K on validation clicks.

    ``propensities`` is a per-item vector, a user-by-item matrix, or
    anything with a ``theta`` attribute.  Users without validation clicks
    are skipped.
    """
    k = _check_k(k)
    theta = np.asarray(getattr(propensities, "theta", propensities), dtype=np.float64)
    values = []
    for u in validation.users:
        items, y = validation.items[u], validation.clicks[u].astype(np.float64)
        th = theta[u, items] if theta.ndim == 2 else theta[items]
        if np.any(th <= 0):
            raise ValueError(f"zero propensity on a validation item of user {u}")
        w = y / th
        norm = w.sum()
        if norm <= 0:
            continue
        values.append(float(np.sum(w * _discount(ranking.ranks(u, items), k, base)) / norm))
    return float(np.mean(values)) if values else 0.0


def metric_report(ranking: RankingResult, labels: RelevanceLabels, ks=(1, 3, 5), group: str = "all"):
    """Rows ``(metric, K, item_group, value)`` for DCG, Recall and MAP."""
    rows = []
    for name, fn in (("DCG", dcg_at_k), ("Recall", recall_at_k), ("MAP", map_at_k)):
        for k in ks:
            rows.append((name, int(k), group, fn(ranking, labels, k)))
    return rows
