"""Datasets: two-moons generator, stratified splitting, confidence channels, CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ContractError, CSVParseError

DEFAULT_SIZES = (1050, 400, 450)
DEFAULT_NOISE = 0.25


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ContractError(f"features must be 2-d, got shape {self.features.shape}")
        if len(self.labels) != len(self.features):
            raise ContractError(
                f"{len(self.features)} feature rows but {len(self.labels)} labels"
            )
        if np.any(np.isnan(self.features)):
            raise ContractError("features contain NaN")
        if len(self.labels) and self.labels.min() < 0:
            raise ContractError("labels must be nonnegative")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.n else 0

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], name or self.name)


@dataclass(frozen=True)
class ConfidenceChannel:
    """Discrete true-confidence source with Bernoulli outcomes per level."""

    levels: np.ndarray
    weights: np.ndarray
    level_index: np.ndarray
    outcomes: np.ndarray

    @property
    def k(self) -> int:
        return len(self.levels)

    def empirical_rates(self) -> np.ndarray:
        rates = np.full(self.k, np.nan)
        for i in range(self.k):
            hit = self.level_index == i
            if hit.any():
                rates[i] = self.outcomes[hit].mean()
        return rates


def make_two_moons(n: int = 1900, noise: float = DEFAULT_NOISE, seed: int = 42) -> Dataset:
    """Two interleaving half circles; class 0 on the upper unit arc, class 1 offset by (1, -0.5)."""
    if n < 2:
        raise ContractError(f"make_two_moons: n must be >= 2, got {n}")
    if noise < 0:
        raise ContractError(f"make_two_moons: noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    X = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise > 0:
        X = X + rng.normal(0.0, noise, size=X.shape)
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], name="two_moons")


def split(ds: Dataset, sizes=DEFAULT_SIZES, seed: int = 42) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified seeded shuffle followed by contiguous slicing into (train, val, test).

    Each class is permuted independently and the classes are interleaved by
    within-class rank, so every contiguous slice keeps class proportions to
    within one sample per class.
    """
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or min(sizes) < 0:
        raise ContractError(f"split: sizes must be three nonnegative ints, got {sizes}")
    if sum(sizes) > ds.n:
        raise ContractError(f"split: sizes {sizes} oversubscribe {ds.n} samples")
    rng = np.random.default_rng(seed)
    keys = np.empty(ds.n)
    for c in np.unique(ds.labels):
        members = np.flatnonzero(ds.labels == c)
        members = rng.permutation(members)
        keys[members] = (np.arange(len(members)) + rng.random()) / len(members)
    order = np.argsort(keys, kind="stable")
    out, start = [], 0
    for size, tag in zip(sizes, ("train", "val", "test")):
        idx = rng.permutation(order[start:start + size])
        out.append(ds.subset(idx, f"{ds.name}:{tag}"))
        start += size
    return out[0], out[1], out[2]


def make_channel(k: int, n: int, spacing="uniform", seed: int = 0, weights=None) -> ConfidenceChannel:
    """Sample ``n`` (level, outcome) pairs; level by weight, outcome ~ Bernoulli(level)."""
    if k < 1 or n < 1:
        raise ContractError(f"make_channel: need k >= 1 and n >= 1, got k={k}, n={n}")
    if isinstance(spacing, str):
        if spacing != "uniform":
            raise ContractError(f"make_channel: unknown spacing {spacing!r}")
        levels = (np.arange(k) + 0.5) / k
    else:
        levels = np.asarray(spacing, dtype=np.float64)
        if len(levels) != k:
            raise ContractError(f"make_channel: {len(levels)} custom levels for k={k}")
        if np.any(levels <= 0) or np.any(levels >= 1) or np.any(np.diff(levels) <= 0):
            raise ContractError("make_channel: custom levels must be strictly increasing inside (0, 1)")
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(w) != k or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ContractError("make_channel: weights must be a probability vector over the levels")
    rng = np.random.default_rng(seed)
    idx = rng.choice(k, size=n, p=w)
    outcomes = rng.random(n) < levels[idx]
    return ConfidenceChannel(levels, w, idx, outcomes)


def load_csv(path, label_column="label", name: str | None = None) -> Dataset:
    """Read a headered, comma-delimited numeric CSV; the label column may be a name or index."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractError(f"{path}: empty file, header required")
    header = [h.strip() for h in rows[0]]
    if isinstance(label_column, int):
        if not -len(header) <= label_column < len(header):
            raise ContractError(f"{path}: label column index {label_column} out of range")
        li = label_column % len(header)
    else:
        if label_column not in header:
            raise ContractError(f"{path}: no column named {label_column!r}")
        li = header.index(label_column)

    feats, labels = [], []
    for r, row in enumerate(rows[1:], start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise CSVParseError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}", r, "")
        values = []
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise CSVParseError(
                    f"{path}: row {r}, column {header[j]!r}: cannot parse {cell!r} as a number",
                    r,
                    header[j],
                ) from None
            if j == li:
                if not v.is_integer():
                    raise CSVParseError(f"{path}: row {r}: label {cell!r} is not an integer", r, header[j])
                labels.append(int(v))
            else:
                values.append(v)
        feats.append(values)

    y = np.asarray(labels, dtype=np.int64)
    present = np.unique(y)
    if len(y) and not np.array_equal(present, np.arange(present.max() + 1)):
        raise ContractError(f"{path}: labels must cover 0..K-1 without gaps, found {present.tolist()}")
    X = np.asarray(feats, dtype=np.float64).reshape(len(y), len(header) - 1)
    return Dataset(X, y, name or path.stem)


def save_csv(ds: Dataset, path) -> None:
    """Write ``ds`` in the same schema :func:`load_csv` reads (features f0.., then ``label``)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(ds.d)] + ["label"])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
