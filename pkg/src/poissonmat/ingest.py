"""Rating-file parsers, a synthetic Zipf-popularity generator and splits.

External ids are kept as opaque strings.  Dense indices are handed out in
order of first appearance, so the same file always maps the same way.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import BinaryIO, Iterable, NamedTuple, Optional, TextIO

import numpy as np


class DatasetError(ValueError):
    """Base class for ingest failures."""


class ParseError(DatasetError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(DatasetError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"missing required column {column!r}")


class RatingTriple(NamedTuple):
    user_id: str
    item_id: str
    rating: float


@dataclass(frozen=True)
class Dataset:
    triples: list[RatingTriple]
    user_index: dict[str, int]
    item_index: dict[str, int]
    r_max: float
    r_min: float
    skipped_count: int = field(default=0, compare=False)

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_items(self) -> int:
        return len(self.item_index)

    def __len__(self) -> int:
        return len(self.triples)

    @cached_property
    def user_indices(self) -> np.ndarray:
        return np.fromiter((self.user_index[t.user_id] for t in self.triples),
                           dtype=np.int64, count=len(self.triples))

    @cached_property
    def item_indices(self) -> np.ndarray:
        return np.fromiter((self.item_index[t.item_id] for t in self.triples),
                           dtype=np.int64, count=len(self.triples))

    @cached_property
    def ratings(self) -> np.ndarray:
        return np.fromiter((t.rating for t in self.triples), dtype=np.float64,
                           count=len(self.triples))

    def item_counts(self) -> np.ndarray:
        """Number of ratings per dense item index (zero for absent items)."""
        return np.bincount(self.item_indices, minlength=self.n_items)

    def with_triples(self, triples: list[RatingTriple]) -> "Dataset":
        """Same index maps and rating scale, different triples."""
        return Dataset(list(triples), self.user_index, self.item_index, self.r_max, self.r_min)


def build_dataset(triples: Iterable[RatingTriple], r_max: Optional[float] = None,
                  r_min: Optional[float] = None, skipped_count: int = 0,
                  allow_empty: bool = False) -> Dataset:
    """Index ``triples`` in first-appearance order.

    ``r_max``/``r_min`` default to the observed extremes.  An empty result
    is only accepted with ``allow_empty`` and an explicit scale.
    """
    triples = list(triples)
    if not triples:
        if not allow_empty or r_max is None or r_min is None:
            raise DatasetError("empty dataset")
        return Dataset([], {}, {}, float(r_max), float(r_min), skipped_count)
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    for t in triples:
        users.setdefault(t.user_id, len(users))
        items.setdefault(t.item_id, len(items))
    observed_max = max(t.rating for t in triples)
    observed_min = min(t.rating for t in triples)
    if r_max is None:
        r_max = observed_max
    if r_min is None:
        r_min = observed_min
    if not r_max > 0:
        raise DatasetError(f"r_max must be positive, got {r_max}")
    if observed_max > r_max or observed_min < r_min:
        raise DatasetError(f"ratings outside declared range [{r_min}, {r_max}]")
    return Dataset(triples, users, items, float(r_max), float(r_min), skipped_count)


def _text(stream: BinaryIO | bytes) -> TextIO:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    # newline="" keeps CRLF handling to the csv module / splitlines
    return io.TextIOWrapper(stream, encoding="utf-8", newline="")


def parse_movielens_1m(stream: BinaryIO | bytes) -> Dataset:
    """Parse ``UserID::MovieID::Rating::Timestamp`` lines (ratings.dat)."""
    triples = []
    for lineno, raw in enumerate(_text(stream), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("::")
        if len(parts) != 4:
            raise ParseError(f"expected 4 '::'-separated fields, got {len(parts)}", lineno)
        user, item, rating, _ts = (p.strip() for p in parts)
        if not user or not item:
            raise ParseError("empty user or item id", lineno)
        try:
            value = int(rating)
        except ValueError:
            raise ParseError(f"non-integer rating {rating!r}", lineno) from None
        if not 1 <= value <= 5:
            raise ParseError(f"rating {value} outside 1..5", lineno)
        triples.append(RatingTriple(user, item, float(value)))
    return build_dataset(triples, r_max=5.0, r_min=1.0)


def _read_header(reader, required: tuple[str, ...]) -> dict[str, int]:
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError("empty dataset") from None
    names = [h.strip().lstrip("\ufeff") for h in header]
    columns = {}
    for col in required:
        if col not in names:
            raise SchemaError(col)
        columns[col] = names.index(col)
    return columns


def parse_comoda(stream: BinaryIO | bytes) -> Dataset:
    """Parse LDOS-CoMoDa CSV; rows with a rating outside 1..5 are skipped.

    Context columns are read past.  The number of skipped rows is kept in
    ``Dataset.skipped_count``.
    """
    reader = csv.reader(_text(stream))
    cols = _read_header(reader, ("userID", "itemID", "rating"))
    ui, ii, ri = cols["userID"], cols["itemID"], cols["rating"]
    width = max(ui, ii, ri) + 1
    triples = []
    skipped = 0
    for row in reader:
        if not row or not any(f.strip() for f in row):
            continue
        if len(row) < width:
            skipped += 1
            continue
        user, item = row[ui].strip(), row[ii].strip()
        try:
            value = float(row[ri])
        except ValueError:
            skipped += 1
            continue
        if not user or not item or not 1.0 <= value <= 5.0:
            skipped += 1
            continue
        triples.append(RatingTriple(user, item, value))
    # all-sentinel input yields an empty dataset; trainers reject it later
    return build_dataset(triples, r_max=5.0, r_min=1.0, skipped_count=skipped,
                         allow_empty=True)


def parse_generic_csv(stream: BinaryIO | bytes) -> Dataset:
    """Parse a ``user,item,rating`` CSV; the rating scale is inferred."""
    reader = csv.reader(_text(stream))
    cols = _read_header(reader, ("user", "item", "rating"))
    ui, ii, ri = cols["user"], cols["item"], cols["rating"]
    triples = []
    # header is line 1
    for lineno, row in enumerate(reader, start=2):
        if not row or not any(f.strip() for f in row):
            continue
        try:
            user, item, rating = row[ui].strip(), row[ii].strip(), row[ri].strip()
        except IndexError:
            raise ParseError("too few fields", lineno) from None
        try:
            value = float(rating)
        except ValueError:
            raise ParseError(f"non-numeric rating {rating!r}", lineno) from None
        if not math.isfinite(value):
            raise ParseError(f"non-finite rating {rating!r}", lineno)
        triples.append(RatingTriple(user, item, value))
    return build_dataset(triples)


def write_generic_csv(dataset: Dataset, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["user", "item", "rating"])
    for t in dataset.triples:
        writer.writerow([t.user_id, t.item_id, repr(t.rating)])


PARSERS = {
    "movielens1m": parse_movielens_1m,
    "comoda": parse_comoda,
    "csv": parse_generic_csv,
}


def load_dataset(path: str, fmt: str) -> Dataset:
    try:
        parser = PARSERS[fmt]
    except KeyError:
        raise ValueError(f"unknown format {fmt!r}; expected one of {sorted(PARSERS)}") from None
    with open(path, "rb") as fh:
        return parser(fh)


def zipf_probabilities(m: int, s: float = 1.0) -> np.ndarray:
    """P(rank k) proportional to k**-s for k = 1..m."""
    weights = np.arange(1, m + 1, dtype=np.float64) ** -s
    return weights / weights.sum()


def synth_rating(rank: int) -> float:
    """Noise-free synthetic rating for popularity rank ``rank``."""
    return float(min(5, max(1, math.floor(1.0 + 4.0 / rank + 0.5))))


def synth_zipf_dataset(n_users: int, n_items: int, ratings_per_user: int, seed: int,
                       noise_prob: float = 0.2) -> Dataset:
    """Synthetic ratings with Zipf(s=1) item popularity.

    Each user rates ``ratings_per_user`` distinct items drawn without
    replacement proportionally to 1/rank.  Popular items get high ratings
    (rank 1 rates 5) and a rating moves by +-1 with probability
    ``noise_prob`` before clipping to 1..5.
    """
    if n_users < 1 or n_items < 1 or ratings_per_user < 1:
        raise ValueError("all counts must be >= 1")
    if ratings_per_user > n_items:
        raise ValueError("ratings_per_user cannot exceed n_items")
    rng = np.random.default_rng(seed)
    log_p = np.log(zipf_probabilities(n_items))
    base = np.array([synth_rating(k) for k in range(1, n_items + 1)])
    triples = []
    chunk = max(1, 2_000_000 // n_items)
    for start in range(0, n_users, chunk):
        rows = min(chunk, n_users - start)
        # Gumbel top-k: a weighted draw without replacement, vectorized
        keys = log_p + rng.gumbel(size=(rows, n_items))
        if ratings_per_user < n_items:
            top = np.argpartition(-keys, ratings_per_user - 1, axis=1)[:, :ratings_per_user]
        else:
            top = np.broadcast_to(np.arange(n_items), (rows, n_items)).copy()
        order = np.argsort(-np.take_along_axis(keys, top, axis=1), axis=1, kind="stable")
        picked = np.take_along_axis(top, order, axis=1)
        noisy = rng.random((rows, ratings_per_user)) < noise_prob
        sign = np.where(rng.random((rows, ratings_per_user)) < 0.5, -1.0, 1.0)
        values = np.clip(base[picked] + noisy * sign, 1.0, 5.0)
        for r in range(rows):
            uid = f"u{start + r + 1}"
            for rank0, value in zip(picked[r].tolist(), values[r].tolist()):
                triples.append(RatingTriple(uid, f"i{rank0 + 1}", value))
    return build_dataset(triples, r_max=5.0, r_min=1.0)


def synth_item_rank(item_id: str) -> int:
    """Popularity rank encoded in a synthetic item id (``i<rank>``)."""
    return int(item_id[1:])


def train_test_split(dataset: Dataset, test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[Dataset, Dataset]:
    """Assign each triple to the test side independently with probability ``test_fraction``.

    Both halves keep the parent's index maps and rating scale.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in the open interval (0, 1)")
    if not dataset.triples:
        raise DatasetError("empty dataset")
    to_test = np.random.default_rng(seed).random(len(dataset)) < test_fraction
    train = [t for t, flag in zip(dataset.triples, to_test) if not flag]
    test = [t for t, flag in zip(dataset.triples, to_test) if flag]
    if not train or not test:
        raise DatasetError("degenerate split")
    return dataset.with_triples(train), dataset.with_triples(test)
