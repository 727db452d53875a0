"""Shared domain types, metric formulas and the seeded randomness contract."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np


class Stage(str, enum.Enum):
    """Pipeline position where DP noise is injected."""

    S1 = "S1"  # input data
    S2 = "S2"  # per-batch training updates
    S3 = "S3"  # learned parameters
    NONE = "None"  # non-private baseline (epsilon = inf)

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class PrivacyBudget:
    """A strictly positive epsilon and the stage it is spent at.

    ``stage=Stage.NONE`` with ``epsilon=None`` encodes the non-private
    baseline; no IEEE infinity ever enters a noise scale.
    """

    epsilon: float | None
    stage: Stage = Stage.NONE

    def __post_init__(self):
        stage = Stage(self.stage)
        object.__setattr__(self, "stage", stage)
        if stage is Stage.NONE:
            if self.epsilon is not None:
                raise ValueError("baseline budget must not carry an epsilon")
            return
        if self.epsilon is None or not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon!r}")

    @classmethod
    def baseline(cls) -> PrivacyBudget:
        return cls(None, Stage.NONE)

    @property
    def is_private(self) -> bool:
        return self.stage is not Stage.NONE

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "stage": self.stage.value}

    @classmethod
    def from_dict(cls, d: dict) -> PrivacyBudget:
        return cls(d["epsilon"], Stage(d["stage"]))


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix in a normalized space plus integer class labels.

    Attributes:
        features: (n, p) float array.
        labels: (n,) int array with values in ``[0, n_classes)``.
        feature_ranges: (p, 2) array of declared (min, max) per feature. These
            are treated as public and drive every sensitivity computation.
        n_classes: number of classes k (labels need not cover all of them).
        indices: optional row ids into the parent dataset, used to assert
            disjointness between attack calibration and evaluation sets.
        noised: True once input perturbation has been applied. Noised values
            are allowed to leave their declared range.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_ranges: np.ndarray
    n_classes: int
    indices: np.ndarray | None = None
    noised: bool = False
    name: str = "dataset"

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        ranges = np.asarray(self.feature_ranges, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        n, p = X.shape
        if n < 1 or p < 1:
            raise ValueError(f"need n >= 1 and p >= 1, got {X.shape}")
        if self.n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.n_classes}")
        if y.shape != (n,):
            raise ValueError(f"labels shape {y.shape} does not match n={n}")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if ranges.shape != (p, 2):
            raise ValueError(f"feature_ranges must have shape ({p}, 2)")
        if np.any(ranges[:, 1] < ranges[:, 0]):
            raise ValueError("feature range max below min")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite values")
        if not self.noised:
            tol = 1e-12
            if np.any(X < ranges[:, 0] - tol) or np.any(X > ranges[:, 1] + tol):
                raise ValueError("feature value outside its declared range")
        idx = None if self.indices is None else np.asarray(self.indices, dtype=np.int64)
        if idx is not None and idx.shape != (n,):
            raise ValueError("indices must have one entry per row")
        for arr in (X, y, ranges) + ((idx,) if idx is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_ranges", ranges)
        object.__setattr__(self, "indices", idx)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def range_widths(self) -> np.ndarray:
        return self.feature_ranges[:, 1] - self.feature_ranges[:, 0]

    def subset(self, rows) -> LabeledDataset:
        rows = np.asarray(rows, dtype=np.int64)
        parent = self.indices if self.indices is not None else np.arange(self.n)
        return LabeledDataset(
            self.features[rows],
            self.labels[rows],
            self.feature_ranges,
            self.n_classes,
            indices=parent[rows],
            noised=self.noised,
            name=self.name,
        )

    def with_features(self, features, noised: bool = True) -> LabeledDataset:
        return LabeledDataset(
            features,
            self.labels,
            self.feature_ranges,
            self.n_classes,
            indices=self.indices,
            noised=noised,
            name=self.name,
        )


@dataclass(frozen=True)
class AttackResult:
    """Outcome of one attack run; ``advantage`` is always ``tpr - fpr``."""

    tpr: float
    fpr: float
    n_members: int
    n_nonmembers: int
    advantage: float = field(init=False)

    def __post_init__(self):
        if self.n_members <= 0 or self.n_nonmembers <= 0:
            raise ValueError("attack needs at least one member and one non-member")
        object.__setattr__(self, "advantage", advantage(self.tpr, self.fpr))


def _check_unit(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


def advantage(tpr: float, fpr: float) -> float:
    """Adversary advantage, TPR - FPR."""
    _check_unit("tpr", tpr)
    _check_unit("fpr", fpr)
    return float(tpr) - float(fpr)


def accuracy_loss(acc: float, acc_baseline: float) -> float:
    """Relative accuracy lost against the non-private baseline.

    ``1 - acc / acc_baseline``. Negative values mean the private model beat
    the baseline and are returned as is.
    """
    _check_unit("acc", acc)
    if not (0.0 < acc_baseline <= 1.0):
        raise ValueError(f"baseline accuracy must lie in (0, 1], got {acc_baseline!r}")
    return 1.0 - float(acc) / float(acc_baseline)


def minmax_normalize(raw) -> tuple[np.ndarray, np.ndarray]:
    """Map each column affinely onto [0, 1].

    Constant columns map to 0.5. Returns the normalized matrix and the raw
    per-column (min, max) ranges, shape (p, 2).
    """
    X = np.asarray(raw, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix contains non-finite entries")
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    width = hi - lo
    const = width == 0
    out = np.empty_like(X)
    out[:, ~const] = (X[:, ~const] - lo[~const]) / width[~const]
    out[:, const] = 0.5
    # keep exact endpoints despite rounding in the division
    np.clip(out, 0.0, 1.0, out=out)
    return out, np.column_stack([lo, hi])


def declared_ranges(raw_ranges) -> np.ndarray:
    """Public ranges of normalized features: (0, 1), or (0.5, 0.5) if constant."""
    raw_ranges = np.asarray(raw_ranges, dtype=np.float64)
    const = raw_ranges[:, 1] == raw_ranges[:, 0]
    out = np.tile([0.0, 1.0], (raw_ranges.shape[0], 1))
    out[const] = 0.5
    return out


def unit_ranges(p: int) -> np.ndarray:
    return np.tile([0.0, 1.0], (p, 1))


def stable_hash64(*parts) -> int:
    """Deterministic 64-bit hash of a tuple of str/int parts (not Python's hash)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class SeededRng:
    """A reproducible random stream identified by (seed, stream_id).

    Streams with different ids are spawned from the same seed sequence
    entropy with distinct spawn keys, which numpy guarantees to be
    independent for practical purposes.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed % 2**64, spawn_key=(self.stream_id % 2**64,))
        return np.random.Generator(np.random.PCG64(ss))

    @classmethod
    def derive(cls, master_seed: int, *keys) -> SeededRng:
        """Stream for ``hash(master_seed, *keys)``, e.g. (trial, purpose)."""
        return cls(master_seed, stable_hash64(*keys))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, a SeededRng, or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, SeededRng):
        return rng.generator()
    if rng is None:
        raise ValueError("an explicit seed or generator is required")
    return SeededRng(int(rng)).generator()
