"""Dataset generation, k-means labelling, CSV ingestion and train/test sampling."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import LabeledDataset, as_generator, declared_ranges, minmax_normalize, unit_ranges

logger = logging.getLogger(__name__)

SYNTHETIC_K_VALUES = (2, 5, 10, 20, 50, 100, 200)
TRANSACTION_K_VALUES = (2, 10, 20, 50, 100)

_CHUNK = 16384


class CsvParseError(ValueError):
    """Base class for malformed CSV input."""


class RaggedRowError(CsvParseError):
    pass


class NonNumericCellError(CsvParseError):
    pass


def generate_synthetic(n: int, p: int, seed) -> np.ndarray:
    """n x p matrix of independent U[0, 1] entries."""
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    return as_generator(seed).random((n, p))


@dataclass(frozen=True)
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    iterations_run: int
    inertia_trace: tuple = ()

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _sq_distances(X, C):
    """Squared Euclidean distances, (n, k), computed in row chunks."""
    c2 = np.einsum("ij,ij->i", C, C)
    out = np.empty((X.shape[0], C.shape[0]))
    for start in range(0, X.shape[0], _CHUNK):
        xb = X[start:start + _CHUNK]
        d = np.einsum("ij,ij->i", xb, xb)[:, None] - 2.0 * xb @ C.T + c2[None, :]
        np.maximum(d, 0.0, out=d)
        out[start:start + _CHUNK] = d
    return out


def _assign(X, C):
    d = _sq_distances(X, C)
    labels = d.argmin(axis=1)
    dist = d[np.arange(X.shape[0]), labels]
    return labels, dist


def _kmeans_plusplus(X, k, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_distances(X, X[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # every remaining point coincides with a centroid
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(free))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_distances(X, X[idx][None, :])[:, 0])
    return X[chosen].copy()


def _lloyd(X, C, max_iter, tol):
    k = C.shape[0]
    labels, dist = _assign(X, C)
    inertia = float(dist.sum())
    trace = [inertia]
    it = 0
    for it in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        newC = C.copy()
        filled = counts > 0
        newC[filled] = sums[filled] / counts[filled, None]
        # empty clusters move to the points farthest from their centroid
        far = dist.copy()
        for j in np.flatnonzero(~filled):
            f = int(far.argmax())
            newC[j] = X[f]
            far[f] = -1.0
        new_labels, dist = _assign(X, newC)
        new_inertia = float(dist.sum())
        if new_inertia > inertia * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"Lloyd inertia increased: {inertia} -> {new_inertia}")
        trace.append(new_inertia)
        converged = np.array_equal(new_labels, labels) or inertia - new_inertia <= tol
        C, labels, inertia = newC, new_labels, new_inertia
        if converged and np.all(np.bincount(labels, minlength=k) > 0):
            break
    return C, labels, inertia, it, trace


def kmeans_label(X, k: int, seed, n_init: int = 10, max_iter: int = 100,
                 tol: float = 1e-6) -> tuple[np.ndarray, KMeansModel]:
    """Label rows by k-means (k-means++ seeding, Lloyd iterations, restarts).

    The restart with the lowest inertia wins; ties go to the earlier restart.
    Every one of the k classes is guaranteed nonempty.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points n={n}")
    root = np.random.SeedSequence(int(seed) % 2**64)
    best = None
    for restart, child in enumerate(root.spawn(n_init)):
        rng = np.random.Generator(np.random.PCG64(child))
        C0 = _kmeans_plusplus(X, k, rng)
        C, labels, inertia, iters, trace = _lloyd(X, C0, max_iter, tol)
        if best is None or inertia < best[2]:
            best = (C, labels, inertia, iters, trace)
    C, labels, inertia, iters, trace = best
    if np.any(np.bincount(labels, minlength=k) == 0):
        raise ValueError(f"could not populate all {k} clusters (duplicate points?)")
    return labels, KMeansModel(C, inertia, iters, tuple(trace))


def synthetic_family(n: int, p: int, k_values, seed, name: str = "synthetic") -> dict[int, LabeledDataset]:
    """Datasets sharing the same uniform vectors, labelled for each k."""
    X = generate_synthetic(n, p, seed)
    ranges = unit_ranges(p)
    out = {}
    for k in k_values:
        labels, _ = kmeans_label(X, k, seed)
        out[k] = LabeledDataset(X, labels, ranges, k, name=f"{name}_k{k}")
    return out


def relabel_transactions(X, k_values, seed, name: str = "transactions") -> dict[int, LabeledDataset]:
    """One dataset per k over the same normalized matrix, labelled by k-means.

    This is the purchaser/viewer-group recipe: load a binary or ordinal
    user-by-item matrix, normalize it, then cluster users into k groups.
    """
    X = np.asarray(X, dtype=np.float64)
    lo, hi = X.min(axis=0), X.max(axis=0)
    if lo.min() < 0 or hi.max() > 1:
        raise ValueError("transaction matrix must be normalized to [0, 1] first")
    ranges = unit_ranges(X.shape[1])
    const = lo == hi
    ranges[const] = lo[const, None]
    out = {}
    for k in k_values:
        labels, _ = kmeans_label(X, k, seed)
        out[k] = LabeledDataset(X, labels, ranges, k, name=f"{name}_k{k}")
    return out


def ratings_recipe(ratings, top_m: int) -> np.ndarray:
    """Ratings preprocessing: keep the ``top_m`` most-rated items, zero-fill
    unrated entries (NaN or 0), drop users with no remaining ratings, and
    min-max normalize. Feed the result to :func:`relabel_transactions`.
    """
    R = np.asarray(ratings, dtype=np.float64)
    rated = np.isfinite(R) & (R != 0)
    order = np.argsort(-rated.sum(axis=0), kind="stable")[:top_m]
    sub = np.where(rated[:, order], R[:, order], 0.0)
    sub = sub[(sub != 0).any(axis=1)]
    normalized, _ = minmax_normalize(sub)
    return normalized


def load_csv(path, has_header: bool = False, label_column: int | None = None):
    """Parse a rectangular numeric CSV.

    Returns ``(features, labels)``; ``labels`` is None unless ``label_column``
    (negative indices allowed) is given.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such CSV file: {path}")
    rows = []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise RaggedRowError(
                    f"{path}:{lineno}: expected {width} columns, found {len(row)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(i for i, c in enumerate(row) if not _is_float(c))
                raise NonNumericCellError(
                    f"{path}:{lineno}: column {bad + 1} is not numeric: {row[bad]!r}"
                ) from None
    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    M = np.array(rows, dtype=np.float64)
    if label_column is None:
        return M, None
    col = label_column % M.shape[1]
    raw_labels = M[:, col]
    if not np.all(raw_labels == np.round(raw_labels)):
        raise NonNumericCellError(f"{path}: label column {col + 1} holds non-integer values")
    return np.delete(M, col, axis=1), raw_labels.astype(np.int64)


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_dataset_csv(path, has_header: bool = False, label_column: int | None = -1,
                     name: str | None = None) -> LabeledDataset:
    """Load a labelled CSV and min-max normalize its features."""
    X, y = load_csv(path, has_header=has_header, label_column=label_column)
    if y is None:
        raise ValueError("a label column is required to build a labelled dataset")
    Xn, raw = minmax_normalize(X)
    k = max(int(y.max()) + 1, 2)
    return LabeledDataset(Xn, y, declared_ranges(raw), k, name=name or Path(path).stem)


def write_dataset_csv(ds: LabeledDataset, path) -> Path:
    """Write features with the label as the final column, no header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
    return path


def write_family(family: dict[int, LabeledDataset], out_dir, name: str) -> list[Path]:
    return [write_dataset_csv(ds, Path(out_dir) / f"{name}_k{k}.csv") for k, ds in sorted(family.items())]


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_test: int
    seed: int

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("split sizes must be non-negative")


def sample_split(ds: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset | None, LabeledDataset | None]:
    """Disjoint uniform samples of sizes n_train and n_test.

    An empty side is returned as None since a dataset needs at least one row.
    """
    if spec.n_train + spec.n_test > ds.n:
        raise ValueError(
            f"need {spec.n_train + spec.n_test} rows but the dataset has {ds.n}"
        )
    perm = as_generator(spec.seed).permutation(ds.n)
    tr = perm[:spec.n_train]
    te = perm[spec.n_train:spec.n_train + spec.n_test]
    train = ds.subset(tr) if len(tr) else None
    test = ds.subset(te) if len(te) else None
    return train, test
