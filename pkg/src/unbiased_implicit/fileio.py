"""Readers and writers for click logs, propensities, dense matrices and checkpoints.

Click logs are TSV with header ``user_id  item_id  click``.  The writer lists
every clicked pair and, when the last cell of the grid is unclicked, one
``click = 0`` row for it so the matrix shape survives a round trip.

Dense matrices are TSV with one row per user, written with 17 significant
digits so float64 values reload exactly.
"""
from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ClickDataset, ValidationError, validate_dataset
from .mf import FORMAT_VERSION, FactorModel
from .metrics import RelevanceLabels
from .propensity import PropensityScores

CLICK_HEADER = ("user_id", "item_id", "click")
PROPENSITY_HEADER = ("item_id", "propensity")
FLOAT_FORMAT = "%.17g"

PathLike = str | os.PathLike


def _read_rows(path: PathLike, header: Sequence[str]) -> list[list[str]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter="\t") if r]
    if not rows or tuple(c.strip() for c in rows[0]) != tuple(header):
        raise ValidationError(f"{path}: expected header {' '.join(header)!r}")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValidationError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
    return rows[1:]


def _int(value: str, where: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ValidationError(f"{where}: {value!r} is not an integer") from None


def write_clicks(path: PathLike, dataset: ClickDataset) -> None:
    last = (dataset.num_users - 1, dataset.num_items - 1)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(CLICK_HEADER)
        for u, i in zip(dataset.users.tolist(), dataset.items.tolist()):
            w.writerow((u, i, 1))
        clicked_last = dataset.num_clicks and (int(dataset.users[-1]), int(dataset.items[-1])) == last
        if not clicked_last:
            w.writerow((*last, 0))


def read_clicks(path: PathLike, num_users: int | None = None, num_items: int | None = None) -> ClickDataset:
    """Load a click log; the shape defaults to the largest ids plus one."""
    rows = _read_rows(path, CLICK_HEADER)
    triples = [tuple(_int(v, f"{path}:{n}") for v in row) for n, row in enumerate(rows, start=2)]
    if not triples and (num_users is None or num_items is None):
        raise ValidationError(f"{path}: empty click log and no shape given")
    if any(u < 0 or i < 0 for u, i, _ in triples):
        raise ValidationError(f"{path}: negative id")
    m = num_users if num_users is not None else max(u for u, _, _ in triples) + 1
    n = num_items if num_items is not None else max(i for _, i, _ in triples) + 1
    return validate_dataset(triples, m, n)


def read_labels(path: PathLike) -> RelevanceLabels:
    """Test labels in the click-log layout; here ``click = 0`` rows are labeled negatives."""
    rows = _read_rows(path, CLICK_HEADER)
    triples = [tuple(_int(v, f"{path}:{n}") for v in row) for n, row in enumerate(rows, start=2)]
    if any(u < 0 or i < 0 or y not in (0, 1) for u, i, y in triples):
        raise ValidationError(f"{path}: ids must be non-negative and labels binary")
    if len({(u, i) for u, i, _ in triples}) != len(triples):
        raise ValidationError(f"{path}: duplicate (user, item) label")
    return RelevanceLabels.from_triples(triples)


def write_propensities(path: PathLike, scores: PropensityScores | np.ndarray) -> None:
    theta = np.asarray(getattr(scores, "theta", scores), dtype=np.float64)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(PROPENSITY_HEADER)
        for i, t in enumerate(theta.tolist()):
            w.writerow((i, FLOAT_FORMAT % t))


def read_propensities(path: PathLike, num_items: int | None = None) -> PropensityScores:
    rows = _read_rows(path, PROPENSITY_HEADER)
    ids = np.array([_int(r[0], str(path)) for r in rows], dtype=np.int64)
    try:
        values = np.array([float(r[1]) for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    n = num_items if num_items is not None else ids.size
    if ids.size != n or not np.array_equal(np.sort(ids), np.arange(n)):
        raise ValidationError(f"{path}: item ids must be exactly 0..{n - 1}")
    theta = np.empty(n)
    theta[ids] = values
    return PropensityScores(theta)


def write_matrix(path: PathLike, matrix) -> None:
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("only matrices can be written")
    np.savetxt(path, a, fmt=FLOAT_FORMAT, delimiter="\t")


def read_matrix(path: PathLike) -> np.ndarray:
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        a = np.loadtxt(path, delimiter="\t", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if a.size == 0:
        raise ValidationError(f"{path}: empty matrix")
    return a


def save_model(path: PathLike, model: FactorModel) -> None:
    with Path(path).open("wb") as fh:
        np.savez(
            fh,
            format_version=np.int64(FORMAT_VERSION),
            num_users=np.int64(model.num_users),
            num_items=np.int64(model.num_items),
            latent_dim=np.int64(model.latent_dim),
            link=np.array(model.link),
            user_factors=model.user_factors,
            item_factors=model.item_factors,
        )


def load_model(path: PathLike) -> FactorModel:
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {version}")
        model = FactorModel(data["user_factors"], data["item_factors"], str(data["link"]))
        dims = (int(data["num_users"]), int(data["num_items"]), int(data["latent_dim"]))
    if dims != (model.num_users, model.num_items, model.latent_dim):
        raise ValidationError(f"{path}: stored shape does not match the factor matrices")
    return model


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def read_csv(path: PathLike) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
