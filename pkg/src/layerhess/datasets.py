"""Deterministic synthetic datasets for classification and regression.

Randomness comes from numpy's PCG64 bit generator seeded with a 64-bit
integer; uniforms are PCG64 doubles and normals are drawn with the
Box-Muller transform so a given ``(name, n, params, seed)`` reproduces the
same bytes on any platform.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CLASSIFICATION = "classification"
REGRESSION = "regression"

# median of the chi-squared distribution with 10 degrees of freedom
CHI2_10_MEDIAN = 9.341817765591966


class DatasetError(ValueError):
    pass


class Rng:
    """PCG64 uniforms with Box-Muller normals."""

    def __init__(self, seed: int):
        self._gen = np.random.Generator(np.random.PCG64(int(seed) & (2 ** 64 - 1)))

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return low + (high - low) * self._gen.random(size)

    def normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # (0, 1]
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, k: int) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=False)


@dataclass
class Dataset:
    name: str
    task: str
    features: np.ndarray
    targets: np.ndarray
    n_classes: int = 0
    seed: int = 0
    params: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def output_dim(self) -> int:
        return self.n_classes if self.task == CLASSIFICATION else 1


def _shuffle(rng: Rng, x: np.ndarray, y: np.ndarray):
    idx = rng.permutation(x.shape[0])
    return x[idx], y[idx]


def _moons(n, rng, noise=0.0):
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0, np.pi, n_out)
    t_in = np.linspace(0, np.pi, n_in)
    x = np.vstack([
        np.column_stack([np.cos(t_out), np.sin(t_out)]),
        np.column_stack([1 - np.cos(t_in), 1 - np.sin(t_in) - 0.5]),
    ])
    y = np.concatenate([np.zeros(n_out, int), np.ones(n_in, int)])
    if noise:
        x = x + noise * rng.normal(x.shape)
    return (*_shuffle(rng, x, y), 2)


def _circles(n, rng, noise=0.0, factor=0.8):
    if not 0 < factor < 1:
        raise DatasetError("circles factor must lie in (0, 1)")
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0, 2 * np.pi, n_out, endpoint=False)
    t_in = np.linspace(0, 2 * np.pi, n_in, endpoint=False)
    x = np.vstack([
        np.column_stack([np.cos(t_out), np.sin(t_out)]),
        factor * np.column_stack([np.cos(t_in), np.sin(t_in)]),
    ])
    y = np.concatenate([np.zeros(n_out, int), np.ones(n_in, int)])
    if noise:
        x = x + noise * rng.normal(x.shape)
    return (*_shuffle(rng, x, y), 2)


def _blobs(n, rng, centers=3, n_features=2, noise=1.0, center_box=(-10.0, 10.0)):
    centers = int(centers)
    if centers < 2:
        raise DatasetError("blobs needs at least 2 centers")
    lo, hi = center_box
    c = rng.uniform(lo, hi, size=(centers, int(n_features)))
    per = np.full(centers, n // centers)
    per[: n % centers] += 1
    x = np.vstack([c[i] + noise * rng.normal((per[i], int(n_features))) for i in range(centers)])
    y = np.repeat(np.arange(centers), per)
    return (*_shuffle(rng, x, y), centers)


def _classification(n, rng, n_features=4, n_informative=2, n_redundant=0, n_classes=2,
                    class_sep=1.0, flip_y=0.0):
    n_features, n_informative = int(n_features), int(n_informative)
    n_redundant, n_classes = int(n_redundant), int(n_classes)
    if n_informative + n_redundant > n_features:
        raise DatasetError("n_informative + n_redundant exceeds n_features")
    if n_classes > 2 ** n_informative:
        raise DatasetError("n_classes must not exceed 2**n_informative")
    # class centroids on distinct hypercube vertices
    vertices = rng.choice(2 ** n_informative, n_classes)
    bits = (vertices[:, None] >> np.arange(n_informative)) & 1
    centroids = (2.0 * bits - 1.0) * class_sep
    per = np.full(n_classes, n // n_classes)
    per[: n % n_classes] += 1
    y = np.repeat(np.arange(n_classes), per)
    x_inf = rng.normal((n, n_informative))
    for k in range(n_classes):
        rows = y == k
        a = 2.0 * rng.random((n_informative, n_informative)) - 1.0
        x_inf[rows] = x_inf[rows] @ a + centroids[k]
    parts = [x_inf]
    if n_redundant:
        b = 2.0 * rng.random((n_informative, n_redundant)) - 1.0
        parts.append(x_inf @ b)
    rest = n_features - n_informative - n_redundant
    if rest:
        parts.append(rng.normal((n, rest)))
    x = np.hstack(parts)
    if flip_y > 0:
        flip = rng.random(n) < flip_y
        y = y.copy()
        y[flip] = (rng.random(int(flip.sum())) * n_classes).astype(int)
    return (*_shuffle(rng, x, y), n_classes)


def _hastie(n, rng):
    x = rng.normal((n, 10))
    y = (np.sum(x * x, axis=1) > CHI2_10_MEDIAN).astype(int)
    return x, y, 2


def friedman1_target(x: np.ndarray) -> np.ndarray:
    return (10 * np.sin(np.pi * x[:, 0] * x[:, 1]) + 20 * (x[:, 2] - 0.5) ** 2
            + 10 * x[:, 3] + 5 * x[:, 4])


def friedman2_target(x: np.ndarray) -> np.ndarray:
    return np.sqrt(x[:, 0] ** 2 + (x[:, 1] * x[:, 2] - 1 / (x[:, 1] * x[:, 3])) ** 2)


def friedman3_target(x: np.ndarray) -> np.ndarray:
    return np.arctan((x[:, 1] * x[:, 2] - 1 / (x[:, 1] * x[:, 3])) / x[:, 0])


def _friedman1(n, rng, n_features=10, noise=0.0):
    if n_features < 5:
        raise DatasetError("friedman1 needs at least 5 features")
    x = rng.random((n, int(n_features)))
    return x, friedman1_target(x) + noise * rng.normal(n), 0


def _friedman_box(n, rng):
    x = np.empty((n, 4))
    x[:, 0] = rng.uniform(0, 100, n)
    x[:, 1] = rng.uniform(40 * np.pi, 560 * np.pi, n)
    x[:, 2] = rng.uniform(0, 1, n)
    x[:, 3] = rng.uniform(1, 11, n)
    return x


def _friedman2(n, rng, noise=0.0):
    x = _friedman_box(n, rng)
    return x, friedman2_target(x) + noise * rng.normal(n), 0


def _friedman3(n, rng, noise=0.0):
    x = _friedman_box(n, rng)
    return x, friedman3_target(x) + noise * rng.normal(n), 0


def _linear_regression(n, rng, n_features=5, n_informative=None, noise=0.0, bias=0.0):
    n_features = int(n_features)
    k = n_features if n_informative is None else int(n_informative)
    if not 1 <= k <= n_features:
        raise DatasetError("n_informative must lie in [1, n_features]")
    x = rng.normal((n, n_features))
    coef = np.zeros(n_features)
    coef[:k] = 100.0 * rng.random(k)
    y = x @ coef + bias + noise * rng.normal(n)
    return x, y, 0, coef


GENERATORS = {
    "moons": (CLASSIFICATION, _moons),
    "circles": (CLASSIFICATION, _circles),
    "blobs": (CLASSIFICATION, _blobs),
    "classification": (CLASSIFICATION, _classification),
    "hastie": (CLASSIFICATION, _hastie),
    "friedman1": (REGRESSION, _friedman1),
    "friedman2": (REGRESSION, _friedman2),
    "friedman3": (REGRESSION, _friedman3),
    "linear_regression": (REGRESSION, _linear_regression),
}


def task_of(name: str) -> str:
    if name not in GENERATORS:
        raise DatasetError(f"unknown dataset {name!r}; choose from {', '.join(GENERATORS)}")
    return GENERATORS[name][0]


def generate(name: str, n: int, params: dict | None = None, seed: int = 0) -> Dataset:
    task = task_of(name)
    params = dict(params or {})
    if n < 8:
        raise DatasetError(f"n must be >= 8, got {n}")
    if float(params.get("noise", 0.0)) < 0:
        raise DatasetError("noise must be non-negative")
    rng = Rng(seed)
    try:
        out = GENERATORS[name][1](int(n), rng, **params)
    except TypeError as exc:
        raise DatasetError(f"bad parameters for {name}: {exc}") from None
    x, y, n_classes = out[:3]
    if len(out) > 3:
        params["coef"] = out[3].tolist()
    if task == CLASSIFICATION:
        y = np.asarray(y, dtype=np.int64)
    else:
        y = np.asarray(y, dtype=np.float64)
    return Dataset(name, task, np.asarray(x, dtype=np.float64), y, int(n_classes), int(seed), params)


def standardize(ds: Dataset) -> Dataset:
    """Zero-mean, unit population-std feature columns; constant columns become 0."""
    if ds.n_samples == 0:
        raise DatasetError("cannot standardize an empty dataset")
    x = ds.features
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    const = std == 0
    if np.any(const):
        log.warning("%s: constant feature column(s) %s left at zero",
                    ds.name, np.flatnonzero(const).tolist())
    z = (x - mean) / np.where(const, 1.0, std)
    z[:, const] = 0.0
    return replace(ds, features=z)


def train_test_split(ds: Dataset, train_fraction: float = 0.8) -> tuple[Dataset, Dataset]:
    """Deterministic head/tail split; generators already shuffle their rows."""
    cut = int(math.floor(train_fraction * ds.n_samples))
    if not 0 < cut < ds.n_samples:
        raise DatasetError("split leaves an empty part")
    head = replace(ds, features=ds.features[:cut], targets=ds.targets[:cut])
    tail = replace(ds, features=ds.features[cut:], targets=ds.targets[cut:])
    return head, tail


def write_csv(ds: Dataset, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(ds.n_features)] + ["target"])
        for row, t in zip(ds.features, ds.targets):
            tval = str(int(t)) if ds.task == CLASSIFICATION else repr(float(t))
            w.writerow([repr(float(v)) for v in row] + [tval])
    return path


def read_csv(path: str | Path, task: str = CLASSIFICATION) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    y = data[:, -1]
    return data[:, :-1], (y.astype(np.int64) if task == CLASSIFICATION else y)
