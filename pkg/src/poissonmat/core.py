"""Shared numeric primitives and model state.

Everything here is a pure function except ``FactorModel``, which a single
trainer mutates in place while it owns it.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEFAULT_CLAMP_EPSILON = 1e-8


@dataclass
class FactorModel:
    """User (n x d) and item (m x d) latent factor matrices."""

    user_factors: np.ndarray
    item_factors: np.ndarray

    def __post_init__(self):
        self.user_factors = np.ascontiguousarray(self.user_factors, dtype=np.float64)
        self.item_factors = np.ascontiguousarray(self.item_factors, dtype=np.float64)
        if self.user_factors.ndim != 2 or self.item_factors.ndim != 2:
            raise ValueError("factor matrices must be 2-D")
        if self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise ValueError(
                f"latent dims differ: {self.user_factors.shape[1]} vs {self.item_factors.shape[1]}"
            )

    @property
    def latent_dim(self) -> int:
        return self.user_factors.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    def copy(self) -> "FactorModel":
        return FactorModel(self.user_factors.copy(), self.item_factors.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.user_factors).all() and np.isfinite(self.item_factors).all())

    def max_norm_deviation(self) -> float:
        """Largest | ||row|| - 1 | over all user and item rows."""
        dev_u = np.abs(np.linalg.norm(self.user_factors, axis=1) - 1.0)
        dev_v = np.abs(np.linalg.norm(self.item_factors, axis=1) - 1.0)
        return float(max(dev_u.max(initial=0.0), dev_v.max(initial=0.0)))

    def identical_to(self, other: "FactorModel") -> bool:
        """Bitwise comparison of both factor matrices."""
        return (
            self.user_factors.shape == other.user_factors.shape
            and self.item_factors.shape == other.item_factors.shape
            and self.user_factors.tobytes() == other.user_factors.tobytes()
            and self.item_factors.tobytes() == other.item_factors.tobytes()
        )


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters shared by every factor trainer.

    ``user_sample_count=None`` samples every user that has at least one
    rated item.  Each sampled user contributes ``min(items_per_user_sample,
    number of rated items)`` items, and every sampled (user, item) pair is
    stepped ``max_iteration_number`` times.

    ``finetune_learning_rate`` only matters for hybrid trainers: when set it
    replaces ``learning_rate`` in the classic MF stage.  A rate of 0 is
    accepted everywhere so "no step" runs can be expressed.
    """

    learning_rate: float = 1e-6
    latent_dim: int = 10
    max_iteration_number: int = 3
    user_sample_count: Optional[int] = None
    items_per_user_sample: int = 10
    clamp_epsilon: float = DEFAULT_CLAMP_EPSILON
    seed: int = 0
    finetune_learning_rate: Optional[float] = None

    def __post_init__(self):
        if not self.learning_rate >= 0.0 or not math.isfinite(self.learning_rate):
            raise ValueError(f"learning_rate must be a finite value >= 0, got {self.learning_rate}")
        if self.latent_dim < 1:
            raise ValueError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.max_iteration_number < 1:
            raise ValueError("max_iteration_number must be >= 1")
        if self.user_sample_count is not None and self.user_sample_count < 1:
            raise ValueError("user_sample_count must be >= 1")
        if self.items_per_user_sample < 1:
            raise ValueError("items_per_user_sample must be >= 1")
        if not self.clamp_epsilon > 0.0:
            raise ValueError("clamp_epsilon must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.finetune_learning_rate is not None and not self.finetune_learning_rate >= 0.0:
            raise ValueError("finetune_learning_rate must be >= 0")


@dataclass(frozen=True)
class PoissonParams:
    """Rate of the rating event and the dot-product stand-in for rank."""

    lambda_rate: float
    rank_proxy: float
    clamp_epsilon: float = field(default=DEFAULT_CLAMP_EPSILON, repr=False)

    def __post_init__(self):
        if not self.lambda_rate >= 0.0:
            raise ValueError("lambda_rate must be >= 0")
        if not self.rank_proxy >= self.clamp_epsilon:
            raise ValueError("rank_proxy must be >= clamp_epsilon")

    @classmethod
    def from_user_row(cls, ratings: Sequence[float], n_users: int, rank_proxy: float) -> "PoissonParams":
        """Estimate the rate as a user's rating sum divided by the user count."""
        if n_users < 1:
            raise ValueError("n_users must be >= 1")
        return cls(math.fsum(ratings) / n_users, rank_proxy)


def dot(u: Sequence[float], v: Sequence[float]) -> float:
    """Plain index-order sum of products."""
    if len(u) != len(v):
        raise ValueError(f"length mismatch: {len(u)} vs {len(v)}")
    s = 0.0
    for a, b in zip(u, v):
        s += float(a) * float(b)
    return s


def l2_normalize(v: Sequence[float], eps: float = DEFAULT_CLAMP_EPSILON) -> np.ndarray:
    """Scale ``v`` to unit length.

    Vectors whose norm is at most ``eps`` map to the uniform unit vector
    so a collapsed embedding never stops training.
    """
    arr = np.asarray(v, dtype=np.float64)
    d = arr.shape[0]
    if d == 0:
        raise ValueError("cannot normalize an empty vector")
    ss = 0.0
    for x in arr.tolist():
        ss += x * x
    norm = math.sqrt(ss)
    if norm > eps:
        return np.array([x / norm for x in arr.tolist()])
    return np.full(d, 1.0 / math.sqrt(d))


def clamp_low(x: float, eps: float) -> float:
    if not eps > 0.0:
        raise ValueError("eps must be > 0")
    return x if x > eps else eps


def embedding_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (init, schedule) generators derived from one seed."""
    init_ss, sched_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(sched_ss)


def _normalize_rows(a: np.ndarray) -> np.ndarray:
    # uniform(0,1) rows are never near zero norm, but keep the fallback anyway
    out = np.empty_like(a)
    for r in range(a.shape[0]):
        out[r] = l2_normalize(a[r])
    return out


def init_embeddings(n: int, m: int, d: int, seed: int) -> FactorModel:
    """Uniform(0,1) rows, each L2-normalized; deterministic for a given seed."""
    if n < 1 or m < 1 or d < 1:
        raise ValueError("n, m and d must all be >= 1")
    rng, _ = embedding_streams(seed)
    u = rng.random((n, d))
    v = rng.random((m, d))
    # random() is [0, 1); an exact 0.0 is astronomically rare but would break
    # the strictly-positive guarantee
    u[u == 0.0] = np.finfo(np.float64).tiny
    v[v == 0.0] = np.finfo(np.float64).tiny
    return FactorModel(_normalize_rows(u), _normalize_rows(v))


def cold_embedding(d: int, seed: int, key: str) -> np.ndarray:
    """Freshly initialized unit embedding for an entity unseen in training."""
    ss = np.random.SeedSequence([seed, zlib.crc32(key.encode("utf-8"))])
    row = np.random.default_rng(ss).random(d)
    row[row == 0.0] = np.finfo(np.float64).tiny
    return l2_normalize(row)


def poisson_pmf(k: int, lam: float) -> float:
    """P(K = k) for a Poisson(lam) variable, evaluated in log space."""
    if k < 0 or lam < 0:
        raise ValueError("k and lam must be nonnegative")
    if lam == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(lam) - lam - math.lgamma(k + 1))
