"""Exposure-bias sweep on semi-synthetic data.

For every seed and every skew ``p`` three models are trained on the same
base matrices:

* ``naive``: the click matrix taken at face value (WMF with ``c = 1``);
* ``unbiased``: inverse-propensity weighting with the true ``theta``;
* ``oracle``: the realized relevance draws ``R`` as labels.

Each model early-stops on its own estimator evaluated on an independent
draw from the same ground truth (the oracle on an independent ``R`` draw).
Test metrics are measured against ``gamma``: the ideal log-loss and the
relevance-weighted DCG@K.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import LOG, ClickDataset, LocalLoss
from .estimators import EstimatorSpec, ideal_loss
from .metrics import ideal_dcg
from .mf import Link, TrainConfig, click_objective, train
from .synth import DEFAULT_P_VALUES, SynthConfig, sample_clicks, sample_validation, sweep_exposure_bias

MODELS = ("naive", "unbiased", "oracle")


@dataclass(frozen=True)
class SweepConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    p_values: tuple[float, ...] = DEFAULT_P_VALUES
    seeds: tuple[int, ...] = tuple(range(10))
    local: LocalLoss = field(default_factory=LocalLoss)
    link: Link = "sigmoid"
    latent_dim: int = 5
    learning_rate: float = 0.05
    l2_reg: float = 0.01
    batch_size: int = 1024
    max_epochs: int = 100
    patience: int = 5
    max_k: int = 10

    def __post_init__(self):
        if not self.p_values:
            raise ValueError("p_values must not be empty")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if self.max_k < 1:
            raise ValueError("max_k must be positive")
        self.train_config(EstimatorSpec("unbiased", local=self.local), 0)

    def train_config(self, spec: EstimatorSpec, seed: int) -> TrainConfig:
        return TrainConfig(
            spec,
            latent_dim=self.latent_dim,
            learning_rate=self.learning_rate,
            l2_reg=self.l2_reg,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=seed,
            link=self.link,
        )


@dataclass(frozen=True)
class SweepRecord:
    seed: int
    p: float
    model: str
    metric: str
    k: int | None
    value: float


def _run_seed(args) -> list[SweepRecord]:
    config, seed = args
    synth = replace(config.synth, seed=seed)
    naive = EstimatorSpec("wmf", c=1.0, local=config.local)
    unbiased = EstimatorSpec("unbiased", local=config.local)
    records = []
    for p, truth, dataset in sweep_exposure_bias(synth, config.p_values):
        train_draw = sample_clicks(truth, seed)
        held_out = sample_validation(truth, seed)
        relevance = ClickDataset.from_dense(train_draw.relevance.astype(np.int8))
        runs = {
            "naive": (naive, dataset, None, held_out.dataset),
            "unbiased": (unbiased, dataset, truth.theta, held_out.dataset),
            "oracle": (naive, relevance, None, held_out.relevance.astype(np.float64)),
        }
        for name in MODELS:
            spec, data, theta, validation = runs[name]
            result = train(data, config.train_config(spec, seed), theta, objective=click_objective(spec, validation, theta))
            pred = result.model.predict_matrix()
            records.append(SweepRecord(seed, p, name, "log_loss", None, ideal_loss(truth.gamma, pred, LOG)))
            for k in range(1, config.max_k + 1):
                records.append(SweepRecord(seed, p, name, "dcg", k, ideal_dcg(pred, truth.gamma, k)))
    return records


def run_sweep(config: SweepConfig, workers: int = 1) -> list[SweepRecord]:
    """Per-seed records; the order does not depend on ``workers``."""
    jobs = [(config, int(s)) for s in config.seeds]
    if workers <= 1 or len(jobs) == 1:
        parts = [_run_seed(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_seed, jobs))
    return [r for part in parts for r in part]


def summarize(records: Sequence[SweepRecord]) -> list[SweepRecord]:
    """Seed-averaged records (``seed`` set to -1), in first-appearance order."""
    groups: dict[tuple, list[float]] = {}
    for r in records:
        groups.setdefault((r.p, r.model, r.metric, r.k), []).append(r.value)
    return [SweepRecord(-1, p, model, metric, k, float(np.mean(v))) for (p, model, metric, k), v in groups.items()]


def lookup(summary: Sequence[SweepRecord], model: str, metric: str, k: int | None = None) -> dict[float, float]:
    """``{p: value}`` for one model and metric from a summary."""
    return {r.p: r.value for r in summary if r.model == model and r.metric == metric and r.k == k}


def trend_slope(xs, ys) -> float:
    """Least-squares slope of ``ys`` on ``xs``."""
    return float(np.polyfit(np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64), 1)[0])
