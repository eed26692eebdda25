"""Recommenders: PoissonMat, ZeroMat, DotMat, classic MF, hybrids and two
cold-start placement baselines.

The factor trainers share one sampling schedule: users are visited in a
seeded random order, each visits a seeded subset of its rated items, and
every sampled (user, item) pair gets ``max_iteration_number`` SGD steps.
The schedule and the initial factors depend only on the seed and on which
(user, item) pairs exist, never on rating values.  PoissonMat and ZeroMat
therefore ignore ratings entirely.

All step rules update the user and item vector simultaneously from the
pre-step values.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from ._backend import kernels
from .core import FactorModel, TrainConfig, cold_embedding, dot, embedding_streams, init_embeddings
from .ingest import Dataset, DatasetError

FACTOR_TAGS = ("classic_mf", "zeromat", "dotmat", "poissonmat")
SAMPLER_TAGS = ("random", "zipf")
PRETRAINERS = ("zeromat", "dotmat", "poissonmat")


@dataclass(frozen=True, order=True)
class RecommenderKind:
    tag: str
    pretrainer: Optional[str] = None

    def __post_init__(self):
        if self.tag == "hybrid":
            if self.pretrainer not in PRETRAINERS:
                raise ValueError(f"hybrid pretrainer must be one of {PRETRAINERS}, got {self.pretrainer!r}")
        elif self.tag in FACTOR_TAGS or self.tag in SAMPLER_TAGS:
            if self.pretrainer is not None:
                raise ValueError(f"{self.tag} takes no pretrainer")
        else:
            raise ValueError(f"unknown recommender {self.tag!r}")

    @classmethod
    def parse(cls, text: str) -> "RecommenderKind":
        """Accepts ``poissonmat``, ``poissonmat_hybrid`` or ``hybrid(poissonmat)``."""
        text = text.strip().lower()
        if text.endswith("_hybrid"):
            return cls("hybrid", text[: -len("_hybrid")])
        if text.startswith("hybrid(") and text.endswith(")"):
            return cls("hybrid", text[len("hybrid("):-1].strip())
        return cls(text)

    @property
    def is_sampler(self) -> bool:
        return self.tag in SAMPLER_TAGS

    def __str__(self) -> str:
        return f"{self.pretrainer}_hybrid" if self.tag == "hybrid" else self.tag


ALL_KINDS = tuple(RecommenderKind.parse(t) for t in (
    "random", "zipf", "classic_mf", "zeromat", "zeromat_hybrid",
    "dotmat", "dotmat_hybrid", "poissonmat", "poissonmat_hybrid"))


# -- scalar pieces of the update rules ----------------------------------------

def poissonmat_loss(x: float) -> float:
    """Per-pair Poisson log-likelihood (x+1) ln x - x of the dot product x."""
    return (x + 1.0) * math.log(x) - x


def poissonmat_grad_coeff(x: float) -> float:
    """d/dx of ``poissonmat_loss``: (x+1)/x + ln x - 1."""
    return (x + 1.0) / x + math.log(x) - 1.0


def dotmat_loss(x: float, r: float, r_max: float) -> float:
    return abs(math.exp(x * math.log(x)) - r / r_max)


def dotmat_coeff(x: float, r: float, r_max: float) -> float:
    """Scalar multiplying the partner vector in a DotMat descent step."""
    xx = math.exp(x * math.log(x))
    diff = xx - r / r_max
    sgn = 1.0 if diff > 0.0 else (-1.0 if diff < 0.0 else 0.0)
    return (xx * sgn - x) * (1.0 + math.log(x))


_KERNEL_SWEEPS = {
    "poissonmat": lambda U, V, u, i, t, lr, eps, n, tr: kernels.sgd_poissonmat(U, V, u, i, lr, eps, n, tr),
    "zeromat": lambda U, V, u, i, t, lr, eps, n, tr: kernels.sgd_zeromat(U, V, u, i, lr, eps, n, tr),
    "dotmat": lambda U, V, u, i, t, lr, eps, n, tr: kernels.sgd_dotmat(U, V, u, i, t, lr, eps, n, tr),
    "classic_mf": lambda U, V, u, i, t, lr, eps, n, tr: kernels.sgd_classic_mf(U, V, u, i, t, lr, n) or 0.0,
}


def _sweep(rule, U, V, users, items, targets, lr, eps, n_iter, track):
    # a zero rate takes no steps; renormalizing unit rows would still move
    # them by an ulp
    if lr == 0.0:
        return 0.0
    return _KERNEL_SWEEPS[rule](U, V, users, items, targets, lr, eps, n_iter, track)


def sgd_step(rule: str, u, v, lr: float, target: float = 0.0,
             eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """One step of ``rule`` on a single (user, item) pair; returns new (u, v).

    ``target`` is the rating scaled by R_max, used by dotmat and classic_mf.
    """
    U = np.array([u], dtype=np.float64)
    V = np.array([v], dtype=np.float64)
    idx = np.zeros(1, dtype=np.int64)
    _sweep(rule, U, V, idx, idx, np.array([target], dtype=np.float64), lr, eps, 1, False)
    return U[0], V[0]


# -- sampling schedule ----------------------------------------------------------

def interaction_map(dataset: Dataset) -> dict[int, np.ndarray]:
    """Dense user index -> positions of that user's triples, in file order."""
    users = dataset.user_indices
    order = np.argsort(users, kind="stable")
    bounds = np.flatnonzero(np.diff(users[order])) + 1
    return {int(users[g[0]]): g for g in np.split(order, bounds) if len(g)}


def sample_schedule(lengths: Mapping[int, int], config: TrainConfig,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (user, position-in-user-list) pairs.

    Users with nothing rated are never sampled.
    """
    active = np.array(sorted(u for u, n in lengths.items() if n > 0), dtype=np.int64)
    if active.size == 0:
        raise DatasetError("no interactions")
    visit = rng.permutation(active)
    if config.user_sample_count is not None:
        visit = visit[: config.user_sample_count]
    users, positions = [], []
    for u in visit.tolist():
        n = lengths[u]
        k = min(config.items_per_user_sample, n)
        users.append(np.full(k, u, dtype=np.int64))
        positions.append(rng.choice(n, size=k, replace=False).astype(np.int64))
    return np.concatenate(users), np.concatenate(positions)


def _start(n_users: int, n_items: int, config: TrainConfig, init: Optional[FactorModel]):
    model = init.copy() if init is not None else init_embeddings(n_users, n_items, config.latent_dim, config.seed)
    if model.n_users != n_users or model.n_items != n_items:
        raise ValueError("initial model shape does not match the data")
    _, sched_rng = embedding_streams(config.seed)
    return model, sched_rng


def _structure_only_train(rule: str, n_users: int, n_items: int,
                          rated_items_per_user: Mapping[int, Sequence[int]],
                          config: TrainConfig, init: Optional[FactorModel], track: bool):
    if not rated_items_per_user or not any(len(v) for v in rated_items_per_user.values()):
        raise DatasetError("no interactions")
    model, rng = _start(n_users, n_items, config, init)
    rated = {int(u): np.asarray(v, dtype=np.int64) for u, v in rated_items_per_user.items()}
    users, pos = sample_schedule({u: len(v) for u, v in rated.items()}, config, rng)
    items = np.fromiter((rated[u][p] for u, p in zip(users.tolist(), pos.tolist())),
                        dtype=np.int64, count=len(users))
    worst = _sweep(rule, model.user_factors, model.item_factors, users, items, None,
                   config.learning_rate, config.clamp_epsilon,
                   config.max_iteration_number, track)
    return (model, worst) if track else model


def poissonmat_train(n_users: int, n_items: int, rated_items_per_user: Mapping[int, Sequence[int]],
                     config: TrainConfig, init: Optional[FactorModel] = None,
                     track_norms: bool = False):
    """Train PoissonMat from interaction structure alone.

    Gradient ascent on the per-pair Poisson log-likelihood, each vector
    renormalized right after its update.  With ``track_norms`` the largest
    row-norm deviation observed after any step is returned alongside the
    model.
    """
    return _structure_only_train("poissonmat", n_users, n_items, rated_items_per_user,
                                 config, init, track_norms)


def zeromat_train(n_users: int, n_items: int, rated_items_per_user: Mapping[int, Sequence[int]],
                  config: TrainConfig, init: Optional[FactorModel] = None,
                  track_norms: bool = False):
    return _structure_only_train("zeromat", n_users, n_items, rated_items_per_user,
                                 config, init, track_norms)


def _rating_train(rule: str, dataset: Dataset, config: TrainConfig,
                  init: Optional[FactorModel], track: bool, lr: Optional[float] = None):
    if len(dataset) == 0:
        raise DatasetError("empty dataset")
    model, rng = _start(dataset.n_users, dataset.n_items, config, init)
    groups = interaction_map(dataset)
    users, pos = sample_schedule({u: len(g) for u, g in groups.items()}, config, rng)
    rows = np.fromiter((groups[u][p] for u, p in zip(users.tolist(), pos.tolist())),
                       dtype=np.int64, count=len(users))
    items = dataset.item_indices[rows]
    targets = dataset.ratings[rows] / dataset.r_max
    worst = _sweep(rule, model.user_factors, model.item_factors, users, items, targets,
                   config.learning_rate if lr is None else lr,
                   config.clamp_epsilon, config.max_iteration_number, track)
    return (model, worst) if track else model


def dotmat_train(dataset: Dataset, config: TrainConfig, init: Optional[FactorModel] = None,
                 track_norms: bool = False):
    """DotMat: descent on |x**x - r/R_max| with renormalized factors."""
    return _rating_train("dotmat", dataset, config, init, track_norms)


def classic_mf_train(dataset: Dataset, config: TrainConfig,
                     init: Optional[FactorModel] = None, lr: Optional[float] = None) -> FactorModel:
    """Plain squared-error SGD on r/R_max targets, no normalization."""
    return _rating_train("classic_mf", dataset, config, init, False, lr)


def structure_train(rule: str, dataset: Dataset, config: TrainConfig,
                    init: Optional[FactorModel] = None, track_norms: bool = False):
    """Run PoissonMat or ZeroMat on the (user, item) pairs of ``dataset``."""
    if len(dataset) == 0:
        raise DatasetError("no interactions")
    items = dataset.item_indices
    rated = {u: items[g] for u, g in interaction_map(dataset).items()}
    trainer = poissonmat_train if rule == "poissonmat" else zeromat_train
    return trainer(dataset.n_users, dataset.n_items, rated, config, init, track_norms)


def hybrid_train(pretrainer: str | RecommenderKind, dataset: Dataset,
                 config: TrainConfig) -> FactorModel:
    """Pretrain with a cold-start trainer, then fine-tune with classic MF.

    The MF stage starts from the pretrained factors and uses the same
    schedule a standalone classic MF run would, at
    ``config.finetune_learning_rate`` if set, else ``config.learning_rate``.
    """
    name = str(pretrainer)
    if name not in PRETRAINERS:
        raise ValueError(f"pretrainer must be one of {PRETRAINERS}, got {name!r}")
    if name == "dotmat":
        pre = dotmat_train(dataset, config)
    else:
        pre = structure_train(name, dataset, config)
    lr = config.finetune_learning_rate if config.finetune_learning_rate is not None else config.learning_rate
    return classic_mf_train(dataset, config, init=pre, lr=lr)


# -- placement baselines ------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def hashed_uniform(seed: int, i, j) -> np.ndarray:
    """Uniform [0, 1) value that is a pure function of (seed, i, j)."""
    i = np.atleast_1d(np.asarray(i)).astype(np.uint64)
    j = np.atleast_1d(np.asarray(j)).astype(np.uint64)
    h = _splitmix(_splitmix(_splitmix(np.full(1, seed, dtype=np.uint64)) ^ i) ^ j)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def popularity_ranks(dataset: Dataset) -> np.ndarray:
    """Rank (1 = most rated) of every dense item index.

    Ties go to the item that appeared first.
    """
    counts = dataset.item_counts()
    order = np.lexsort((np.arange(len(counts)), -counts))
    ranks = np.empty(len(counts), dtype=np.int64)
    ranks[order] = np.arange(1, len(counts) + 1)
    return ranks


def _cold_key(text: str) -> int:
    # outside the dense index range of any realistic dataset
    return 2**40 + zlib.crc32(text.encode("utf-8"))


@dataclass
class TrainedRecommender:
    """A trained model plus what is needed to score (user, item) pairs."""

    kind: RecommenderKind
    r_max: float
    n_users: int
    n_items: int
    model: Optional[FactorModel] = None
    item_rank: Optional[np.ndarray] = None
    zipf_s: float = 1.0
    seed: int = 0
    user_index: Mapping[str, int] = field(default_factory=dict, repr=False)
    item_index: Mapping[str, int] = field(default_factory=dict, repr=False)

    def _check(self, i: int, j: int):
        if not (0 <= i < self.n_users and 0 <= j < self.n_items):
            raise IndexError(f"index ({i}, {j}) outside {self.n_users} users x {self.n_items} items")

    def predict(self, i: int, j: int) -> float:
        self._check(i, j)
        if self.model is not None:
            x = dot(self.model.user_factors[i], self.model.item_factors[j])
            return self.r_max * min(max(x, 0.0), 1.0)
        if self.kind.tag == "random":
            return float(self.r_max * hashed_uniform(self.seed, i, j)[0])
        return float(self.r_max * float(self.item_rank[j]) ** -self.zipf_s)

    def predict_many(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= self.n_users
                           or items.min() < 0 or items.max() >= self.n_items):
            raise IndexError("index out of range")
        if self.model is not None:
            x = np.einsum("ij,ij->i", self.model.user_factors[users], self.model.item_factors[items])
            return self.r_max * np.clip(x, 0.0, 1.0)
        if self.kind.tag == "random":
            return self.r_max * hashed_uniform(self.seed, users, items)
        return self.r_max * self.item_rank[items].astype(np.float64) ** -self.zipf_s

    def predict_ids(self, user_ids: Sequence[str], item_ids: Sequence[str]) -> np.ndarray:
        """Score external ids; entities unseen in training are cold-mapped.

        Factor models give a cold entity a freshly seeded unit embedding,
        random placement hashes its id, and Zipf placement ranks a cold
        item last.
        """
        n = len(user_ids)
        ui = np.array([self.user_index.get(u, -1) for u in user_ids], dtype=np.int64)
        ii = np.array([self.item_index.get(v, -1) for v in item_ids], dtype=np.int64)
        warm = (ui >= 0) & (ii >= 0)
        out = np.empty(n, dtype=np.float64)
        if warm.any():
            out[warm] = self.predict_many(ui[warm], ii[warm])
        for t in np.flatnonzero(~warm).tolist():
            out[t] = self._cold_score(user_ids[t], item_ids[t], int(ui[t]), int(ii[t]))
        return out

    def _cold_score(self, uid: str, iid: str, i: int, j: int) -> float:
        if self.model is not None:
            d = self.model.latent_dim
            u = self.model.user_factors[i] if i >= 0 else cold_embedding(d, self.seed, "user:" + uid)
            v = self.model.item_factors[j] if j >= 0 else cold_embedding(d, self.seed, "item:" + iid)
            return self.r_max * min(max(dot(u, v), 0.0), 1.0)
        if self.kind.tag == "random":
            ki = i if i >= 0 else _cold_key("user:" + uid)
            kj = j if j >= 0 else _cold_key("item:" + iid)
            return float(self.r_max * hashed_uniform(self.seed, ki, kj)[0])
        rank = self.item_rank[j] if j >= 0 else self.n_items + 1
        return float(self.r_max * float(rank) ** -self.zipf_s)

    def item_mean_scores(self, probe_users: np.ndarray, chunk: int = 512) -> np.ndarray:
        """Mean predicted score of every item over ``probe_users``."""
        probe_users = np.asarray(probe_users, dtype=np.int64)
        total = np.zeros(self.n_items)
        if self.kind.tag == "zipf":
            return self.r_max * self.item_rank.astype(np.float64) ** -self.zipf_s
        items = np.arange(self.n_items, dtype=np.int64)
        for start in range(0, len(probe_users), chunk):
            block = probe_users[start:start + chunk]
            if self.model is not None:
                x = self.model.user_factors[block] @ self.model.item_factors.T
                total += (self.r_max * np.clip(x, 0.0, 1.0)).sum(axis=0)
            else:
                uu = np.repeat(block, self.n_items)
                jj = np.tile(items, len(block))
                total += (self.r_max * hashed_uniform(self.seed, uu, jj)).reshape(len(block), -1).sum(axis=0)
        return total / len(probe_users)

    def sample_items(self, size: int, seed: int) -> np.ndarray:
        """Draw item indices: uniformly for random placement, by 1/rank**s for Zipf."""
        rng = np.random.default_rng(seed)
        if self.kind.tag == "random":
            return rng.integers(0, self.n_items, size=size)
        if self.kind.tag != "zipf":
            raise TypeError("only placement recommenders sample items")
        w = self.item_rank.astype(np.float64) ** -self.zipf_s
        return rng.choice(self.n_items, size=size, p=w / w.sum())


def random_placement_train(n_items: int, seed: int, r_max: float = 5.0,
                           n_users: int = 0) -> TrainedRecommender:
    """Uniform scores in [0, r_max), fixed per (seed, user, item)."""
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    return TrainedRecommender(RecommenderKind("random"), r_max, n_users, n_items, seed=seed)


def zipf_placement_train(item_popularity_rank, s: float = 1.0, seed: int = 0,
                         r_max: float = 5.0, n_users: int = 0) -> TrainedRecommender:
    """Score the item of popularity rank k as r_max * k**-s, for every user."""
    if isinstance(item_popularity_rank, Mapping):
        ranks = np.array([item_popularity_rank[j] for j in range(len(item_popularity_rank))],
                         dtype=np.int64)
    else:
        ranks = np.asarray(item_popularity_rank, dtype=np.int64)
    m = len(ranks)
    if m < 1 or not np.array_equal(np.sort(ranks), np.arange(1, m + 1)):
        raise ValueError("item ranks must be a permutation of 1..m")
    if not s > 0:
        raise ValueError("zipf exponent must be > 0")
    return TrainedRecommender(RecommenderKind("zipf"), r_max, n_users, m, item_rank=ranks,
                              zipf_s=s, seed=seed)


def train(kind: RecommenderKind | str, dataset: Dataset, config: TrainConfig,
          zipf_s: float = 1.0) -> TrainedRecommender:
    """Train any recommender on ``dataset`` and wrap it for prediction."""
    if isinstance(kind, str):
        kind = RecommenderKind.parse(kind)
    if len(dataset) == 0:
        raise DatasetError("empty dataset")
    common = dict(n_users=dataset.n_users, r_max=dataset.r_max)
    if kind.tag == "random":
        rec = random_placement_train(dataset.n_items, config.seed, **common)
    elif kind.tag == "zipf":
        rec = zipf_placement_train(popularity_ranks(dataset), zipf_s, config.seed, **common)
    else:
        if kind.tag == "hybrid":
            model = hybrid_train(kind.pretrainer, dataset, config)
        elif kind.tag == "classic_mf":
            model = classic_mf_train(dataset, config)
        elif kind.tag == "dotmat":
            model = dotmat_train(dataset, config)
        else:
            model = structure_train(kind.tag, dataset, config)
        rec = TrainedRecommender(kind, dataset.r_max, dataset.n_users, dataset.n_items,
                                 model=model, seed=config.seed)
    rec.kind = kind
    rec.user_index = dataset.user_index
    rec.item_index = dataset.item_index
    return rec


def predict(rec: TrainedRecommender, i: int, j: int) -> float:
    return rec.predict(i, j)


def poissonmat_predict(model: FactorModel, i: int, j: int, r_max: float) -> float:
    """r_max times the user-item dot product, clamped to [0, r_max]."""
    if not (0 <= i < model.n_users and 0 <= j < model.n_items):
        raise IndexError(f"index ({i}, {j}) out of range")
    x = dot(model.user_factors[i], model.item_factors[j])
    return r_max * min(max(x, 0.0), 1.0)


def with_learning_rate(config: TrainConfig, lr: float) -> TrainConfig:
    return replace(config, learning_rate=lr)
