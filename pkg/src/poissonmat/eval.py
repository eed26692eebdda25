"""Accuracy and Matthew-effect metrics, learning-rate sweeps."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .algorithms import RecommenderKind, TrainedRecommender, train
from .core import TrainConfig
from .ingest import Dataset, DatasetError

DEFAULT_GRID = (1e-6, 2e-6, 4e-6, 8e-6, 1.6e-5, 3.2e-5)
DEFAULT_PROBE_USERS = 1000


@dataclass(frozen=True)
class LearningRateGrid:
    values: tuple[float, ...] = DEFAULT_GRID

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValueError("learning-rate grid is empty")
        if any(not (v > 0 and math.isfinite(v)) for v in values):
            raise ValueError("learning rates must be finite and > 0")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("learning rates must be strictly ascending")
        object.__setattr__(self, "values", values)

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


def _pair(predicted, actual) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape or p.ndim != 1:
        raise ValueError(f"length mismatch: {p.shape} vs {a.shape}")
    if p.size == 0:
        raise ValueError("empty rating lists")
    return p, a


def mae(predicted: Sequence[float], actual: Sequence[float]) -> float:
    p, a = _pair(predicted, actual)
    return float(np.mean(np.abs(p - a)))


def rmse(predicted: Sequence[float], actual: Sequence[float]) -> float:
    p, a = _pair(predicted, actual)
    return float(np.sqrt(np.mean((p - a) ** 2)))


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation, defined as 0 when either side is constant."""
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    y = np.asarray(y, dtype=np.float64) - np.mean(y)
    sxx = float(x @ x)
    syy = float(y @ y)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    # separate roots: sxx * syy can underflow for tiny spreads
    denom = math.sqrt(sxx) * math.sqrt(syy)
    if denom == 0.0:
        return 0.0
    r = float(x @ y) / denom
    # rounding guard: |r| can exceed 1 by an ulp
    return max(-1.0, min(1.0, r))


def fairness_matthew(rec: TrainedRecommender, train_set: Dataset,
                     probe_users: int = DEFAULT_PROBE_USERS, seed: int = 0) -> float:
    """Correlation between item popularity and the item's mean predicted score.

    Popularity is the item's rating count in ``train_set``; the mean score
    is taken over ``probe_users`` users drawn (with replacement) from the
    users present in ``train_set``.  Near 0 means popularity does not drive
    scores; near 1 is a strong Matthew effect.
    """
    if len(train_set) == 0:
        raise DatasetError("empty dataset")
    if probe_users < 2:
        raise ValueError("probe_users must be >= 2")
    if train_set.n_items < 2:
        raise ValueError("degenerate fairness input")
    active = np.unique(train_set.user_indices)
    probes = np.random.default_rng(seed).choice(active, size=probe_users, replace=True)
    scores = rec.item_mean_scores(probes)
    return pearson(train_set.item_counts(), scores)


class SplitEval(NamedTuple):
    mae: float
    rmse: float
    predicted: np.ndarray
    actual: np.ndarray


def evaluate_on_split(rec: TrainedRecommender, test: Dataset) -> SplitEval:
    """Score every test triple by external id (cold entities are cold-mapped)."""
    if len(test) == 0:
        raise DatasetError("empty dataset")
    predicted = rec.predict_ids([t.user_id for t in test.triples],
                                [t.item_id for t in test.triples])
    actual = test.ratings
    return SplitEval(mae(predicted, actual), rmse(predicted, actual), predicted, actual)


@dataclass
class EvalRow:
    algorithm: str
    learning_rate: Optional[float]
    mae: Optional[float]
    rmse: Optional[float]
    fairness: Optional[float]
    train_seconds: Optional[float]
    seed: int
    status: str = "ok"
    best: bool = False

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def best_rows(self) -> dict[str, EvalRow]:
        return {r.algorithm: r for r in self.rows if r.best}

    def rows_for(self, algorithm: str) -> list[EvalRow]:
        return [r for r in self.rows if r.algorithm == algorithm]


def _mark_best(rows: list[EvalRow]) -> None:
    by_alg: dict[str, list[EvalRow]] = {}
    for r in rows:
        by_alg.setdefault(r.algorithm, []).append(r)
    for group in by_alg.values():
        ok = [r for r in group if r.ok]
        if ok:
            # sampler rows have no rate; they are alone in their group anyway
            winner = min(ok, key=lambda r: (r.mae, r.learning_rate or 0.0))
            winner.best = True


def grid_search(kinds: Sequence[RecommenderKind | str], grid: LearningRateGrid,
                train_set: Dataset, test: Dataset, base_config: TrainConfig,
                probe_users: int = DEFAULT_PROBE_USERS, record_timings: bool = False,
                zipf_s: float = 1.0) -> EvalReport:
    """Train and score every (kind, learning rate) cell.

    Every cell starts from ``base_config.seed``.  Placement baselines ignore
    the rate and get one row each.  A cell that raises or produces a
    non-finite error becomes a failure row instead of aborting the sweep.
    Wall-clock times are only recorded with ``record_timings`` because they
    would make otherwise identical reports differ.
    """
    kinds = [RecommenderKind.parse(k) if isinstance(k, str) else k for k in kinds]
    if not kinds:
        raise ValueError("no recommenders to evaluate")
    if not isinstance(grid, LearningRateGrid):
        grid = LearningRateGrid(tuple(grid))
    rows = []
    for kind in kinds:
        rates: Sequence[Optional[float]] = [None] if kind.is_sampler else list(grid)
        for lr in rates:
            config = base_config if lr is None else replace(base_config, learning_rate=lr)
            rows.append(_run_cell(kind, lr, config, train_set, test, probe_users,
                                  record_timings, zipf_s))
    _mark_best(rows)
    return EvalReport(rows)


def _run_cell(kind, lr, config, train_set, test, probe_users, record_timings, zipf_s) -> EvalRow:
    seed = config.seed
    try:
        start = time.perf_counter()
        rec = train(kind, train_set, config, zipf_s=zipf_s)
        elapsed = time.perf_counter() - start
        if rec.model is not None and not rec.model.is_finite():
            raise FloatingPointError("non-finite factors")
        result = evaluate_on_split(rec, test)
        if not (math.isfinite(result.mae) and math.isfinite(result.rmse)):
            raise FloatingPointError("non-finite error metric")
        fair = fairness_matthew(rec, train_set, probe_users, seed)
    except Exception as exc:  # one bad cell must not void the sweep
        return EvalRow(str(kind), lr, None, None, None, None, seed,
                       status=f"failed: {type(exc).__name__}: {exc}")
    return EvalRow(str(kind), lr, result.mae, result.rmse, fair,
                   elapsed if record_timings else None, seed)
