"""Sweep orchestration: configuration, trials, sweeps and result persistence.

A trial samples train/test/reference sets for one repetition, applies the
method's noise at its stage, trains, measures test accuracy and runs the
membership and attribute inference attacks. Every repetition shares one
split seed across all epsilons and the paired non-private baseline, so
accuracy loss carries no split variance.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import ai_advantages, calibrate_salem_threshold, salem_mi, yeom_mi
from .core import LabeledDataset, SeededRng, Stage, accuracy_loss, stable_hash64
from .data import (SYNTHETIC_K_VALUES, SplitSpec, load_csv, relabel_transactions,
                   sample_split, synthetic_family)
from .core import declared_ranges, minmax_normalize
from .mechanisms import perturb_dataset_s1
from .models import MlpHyper, fit_gnb, fit_gnb_dp, fit_mlp, fit_mlp_dp

logger = logging.getLogger(__name__)

EPSILON_GRID = (0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0)

METHODS = {
    "S1-GNB": (Stage.S1, "gnb"),
    "S1-MLP": (Stage.S1, "mlp"),
    "S2-MLP": (Stage.S2, "mlp"),
    "S3-GNB": (Stage.S3, "gnb"),
}

RESULTS_HEADER = (
    "dataset", "n_classes", "method", "stage", "epsilon", "rep", "accuracy",
    "baseline_accuracy", "acl", "salem_mi_adv", "yeom_mi_adv", "yeom_ai_mean_adv",
    "yeom_ai_std", "salem_ai_mean_adv", "wall_time_s", "seed",
)


class ConfigError(ValueError):
    pass


class TrialError(RuntimeError):
    pass


class ResultsSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic family parameters or a CSV source.

    For ``kind="csv"`` with non-empty ``k_values`` the features are min-max
    normalized and relabelled by k-means once per k; with empty ``k_values``
    the labels in ``label_column`` are used as is.
    """

    kind: str = "synthetic"
    n: int = 10_000
    p: int = 50
    k_values: tuple = (10,)
    path: str | None = None
    has_header: bool = False
    label_column: int | None = None
    name: str = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        if self.kind not in ("synthetic", "csv"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("csv dataset needs a path")
        if self.kind == "synthetic" and not self.k_values:
            raise ConfigError("synthetic dataset needs at least one k")
        if self.kind == "csv" and not self.k_values and self.label_column is None:
            raise ConfigError("csv dataset needs k_values or a label_column")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    methods: tuple = tuple(METHODS)
    epsilon_grid: tuple = EPSILON_GRID
    n_train: int = 2000
    n_test: int = 2000
    n_reference: int | None = None  # defaults to n_train
    n_repetitions: int = 5
    n_protected_attributes: int = 20
    master_seed: int = 0
    mlp: MlpHyper = field(default_factory=lambda: MlpHyper(epochs=20, lr=0.1))
    clip_norm: float = 100.0
    nb_std_mechanism: str = "variance"
    record_wall_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "epsilon_grid", tuple(float(e) for e in self.epsilon_grid))
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate methods")
        grid = self.epsilon_grid
        if not grid or any(not (e > 0 and math.isfinite(e)) for e in grid):
            raise ConfigError("epsilon grid must hold positive finite values")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("epsilon grid must be strictly ascending")
        if self.n_train < 1 or self.n_test < 1 or self.reference_size < 1:
            raise ConfigError("train, test and reference sizes must be positive")
        if self.n_repetitions < 1:
            raise ConfigError("n_repetitions must be >= 1")
        if self.n_protected_attributes < 1:
            raise ConfigError("n_protected_attributes must be >= 1")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.nb_std_mechanism not in ("variance", "vaidya"):
            raise ConfigError(f"unknown nb_std_mechanism {self.nb_std_mechanism!r}")

    @property
    def reference_size(self) -> int:
        """Rows in each of the shadow member and non-member sets."""
        return self.n_train if self.n_reference is None else self.n_reference


PROFILES = {
    "desk": {},
    "paper": {
        "dataset": {"n": 100_000, "k_values": list(SYNTHETIC_K_VALUES)},
        "n_train": 10_000,
        "n_test": 10_000,
        "mlp": {"epochs": 50},
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _build(cls, d: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")
    return cls(**d)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(d: dict, profile: str = "desk") -> ExperimentConfig:
    """Build a config from a mapping layered over a named profile.

    Keys mirror :class:`ExperimentConfig` field for field; ``dataset`` and
    ``mlp`` are nested mappings. Unknown keys raise :class:`ConfigError`.
    A CSV dataset defaults to 10 repetitions unless stated.
    """
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    d = dict(d)
    explicit_reps = "n_repetitions" in d
    defaults = config_to_dict(ExperimentConfig())
    merged = _merge(_merge(defaults, PROFILES[profile]), d)
    if merged["dataset"].get("kind") == "csv" and "name" not in d.get("dataset", {}):
        merged["dataset"]["name"] = Path(merged["dataset"]["path"]).stem
    if merged["dataset"].get("kind") == "csv" and not explicit_reps:
        merged["n_repetitions"] = 10
    merged["dataset"] = _build(DatasetSpec, merged["dataset"], "dataset")
    merged["mlp"] = _build(MlpHyper, merged["mlp"], "mlp")
    return _build(ExperimentConfig, merged, "config")


def load_config(path, profile: str = "desk", **overrides) -> ExperimentConfig:
    """Read a JSON or YAML config file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        d = yaml.safe_load(text) or {}
    else:
        d = json.loads(text)
    if not isinstance(d, dict):
        raise ConfigError("config file must hold a mapping")
    d.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(d, profile)


# --------------------------------------------------------------------------
# datasets


_DATASET_CACHE: dict = {}


def prepare_datasets(cfg: ExperimentConfig) -> dict[str, LabeledDataset]:
    """All labelled datasets of a config, keyed by name in ascending k."""
    spec = cfg.dataset
    key = (spec, cfg.master_seed)
    if key in _DATASET_CACHE:
        return _DATASET_CACHE[key]
    data_seed = SeededRng.derive(cfg.master_seed, "data", spec.name).generator().integers(2**63)
    if spec.kind == "synthetic":
        family = synthetic_family(spec.n, spec.p, spec.k_values, int(data_seed), name=spec.name)
    else:
        X, y = load_csv(spec.path, has_header=spec.has_header, label_column=spec.label_column)
        Xn, raw = minmax_normalize(X)
        if spec.k_values:
            family = relabel_transactions(Xn, spec.k_values, int(data_seed), name=spec.name)
        else:
            k = max(int(y.max()) + 1, 2)
            family = {k: LabeledDataset(Xn, y, declared_ranges(raw), k, name=spec.name)}
    out = {ds.name: ds for _, ds in sorted(family.items())}
    _DATASET_CACHE[key] = out
    return out


# --------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class TrialRecord:
    dataset: str
    n_classes: int
    method: str
    stage: str
    epsilon: float | None
    rep: int
    accuracy: float
    baseline_accuracy: float
    acl: float
    salem_mi_adv: float
    yeom_mi_adv: float
    yeom_ai_mean_adv: float
    yeom_ai_std: float
    salem_ai_mean_adv: float
    wall_time_s: float
    seed: int

    @property
    def sort_key(self):
        eps = math.inf if self.epsilon is None else self.epsilon
        return (self.n_classes, self.dataset, self.method, eps, self.rep)


@dataclass(frozen=True)
class _Splits:
    train: LabeledDataset
    test: LabeledDataset
    ref_members: LabeledDataset
    ref_nonmembers: LabeledDataset
    seed: int


def split_seed(cfg: ExperimentConfig, dataset: str, rep: int) -> int:
    return stable_hash64(cfg.master_seed, dataset, rep, "split") >> 1


def _splits(cfg: ExperimentConfig, ds: LabeledDataset, rep: int) -> _Splits:
    seed = split_seed(cfg, ds.name, rep)
    n_rest = cfg.n_test + 2 * cfg.reference_size
    train, rest = sample_split(ds, SplitSpec(cfg.n_train, n_rest, seed))
    # rest is already a uniformly permuted sample, so contiguous blocks are too
    a, b = cfg.n_test, cfg.n_test + cfg.reference_size
    pos = np.arange(rest.n)
    return _Splits(train, rest.subset(pos[:a]), rest.subset(pos[a:b]), rest.subset(pos[b:]), seed)


def _stream(cfg, ds_name, method, rep, purpose) -> np.random.Generator:
    # epsilon is deliberately not part of the key: every grid point of a
    # repetition reuses the same uniforms, only the noise scale differs
    return SeededRng.derive(cfg.master_seed, ds_name, method, rep, purpose).generator()


def _train(cfg: ExperimentConfig, method: str, epsilon: float | None, train: LabeledDataset,
           rep: int, role: str):
    stage, family = METHODS[method]
    name = train.name
    fit_rng = _stream(cfg, name, method, rep, f"{role}-fit")
    data = train
    if epsilon is not None and stage is Stage.S1:
        data = perturb_dataset_s1(train, epsilon, _stream(cfg, name, method, rep, f"{role}-s1"))
    if family == "gnb":
        if epsilon is not None and stage is Stage.S3:
            return fit_gnb_dp(data, epsilon, fit_rng, std_mechanism=cfg.nb_std_mechanism)
        return fit_gnb(data)
    if epsilon is not None and stage is Stage.S2:
        return fit_mlp_dp(data, cfg.mlp, epsilon, cfg.clip_norm, fit_rng)
    return fit_mlp(data, cfg.mlp, fit_rng)


def _default_dataset(cfg: ExperimentConfig) -> LabeledDataset:
    return next(iter(prepare_datasets(cfg).values()))


def baseline_accuracy(cfg: ExperimentConfig, method: str, rep: int,
                      dataset: LabeledDataset | None = None) -> float:
    """Test accuracy of the non-private model on the repetition's split."""
    ds = dataset or _default_dataset(cfg)
    sp = _splits(cfg, ds, rep)
    return _train(cfg, method, None, sp.train, rep, "target").accuracy(sp.test)


def run_trial(cfg: ExperimentConfig, method: str, epsilon: float | None, rep_index: int,
              dataset: LabeledDataset | None = None,
              baseline: float | None = None) -> TrialRecord:
    """One (dataset, method, epsilon, repetition) outcome.

    ``epsilon=None`` runs the non-private baseline. For a private trial the
    baseline accuracy is recomputed on the same split unless passed in.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    ds = dataset or _default_dataset(cfg)
    eps_txt = "inf" if epsilon is None else repr(epsilon)
    try:
        start = time.perf_counter()
        stage = METHODS[method][0] if epsilon is not None else Stage.NONE
        sp = _splits(cfg, ds, rep_index)
        model = _train(cfg, method, epsilon, sp.train, rep_index, "target")
        acc = model.accuracy(sp.test)
        if epsilon is None:
            base = acc
        elif baseline is None:
            base = baseline_accuracy(cfg, method, rep_index, ds)
        else:
            base = baseline

        shadow = _train(cfg, method, epsilon, sp.ref_members, rep_index, "shadow")
        threshold = calibrate_salem_threshold(shadow, sp.ref_members, sp.ref_nonmembers)
        salem = salem_mi(model, sp.train, sp.test, threshold)
        yeom = yeom_mi(model, sp.train, sp.test)
        ai = ai_advantages(model, sp.train, sp.test, cfg.n_protected_attributes,
                           _stream(cfg, ds.name, method, rep_index, "ai-attributes"))
        elapsed = time.perf_counter() - start if cfg.record_wall_time else 0.0
        return TrialRecord(
            dataset=ds.name,
            n_classes=ds.n_classes,
            method=method,
            stage=stage.value,
            epsilon=epsilon,
            rep=rep_index,
            accuracy=acc,
            baseline_accuracy=base,
            acl=accuracy_loss(acc, base),
            salem_mi_adv=salem.advantage,
            yeom_mi_adv=yeom.advantage,
            yeom_ai_mean_adv=ai["yeom"].mean_advantage,
            yeom_ai_std=ai["yeom"].std,
            salem_ai_mean_adv=ai["salem"].mean_advantage,
            wall_time_s=elapsed,
            seed=sp.seed,
        )
    except Exception as exc:
        raise TrialError(
            f"trial failed: dataset={ds.name} method={method} epsilon={eps_txt} rep={rep_index}: {exc}"
        ) from exc


# --------------------------------------------------------------------------
# sweeps

_WORKER: dict = {}


def _init_worker(cfg, datasets):
    _WORKER["cfg"] = cfg
    _WORKER["datasets"] = datasets


def _run_task(task):
    name, method, epsilon, rep, base = task
    cfg = _WORKER["cfg"]
    return run_trial(cfg, method, epsilon, rep, _WORKER["datasets"][name], base)


def _execute(tasks, cfg, datasets, jobs):
    if jobs <= 1:
        _init_worker(cfg, datasets)
        for task in tasks:
            yield _run_task(task)
        return
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                             initargs=(cfg, datasets)) as pool:
        yield from pool.map(_run_task, tasks)


def run_sweep(cfg: ExperimentConfig, jobs: int = 1, sink=None) -> list[TrialRecord]:
    """Every dataset x method x epsilon x repetition, plus paired baselines.

    Baselines (one per dataset, method and repetition) run first and feed
    their accuracy to the private trials. Records come back sorted by
    (n_classes, dataset, method, epsilon, rep), independent of ``jobs``. If
    ``sink`` is given, results are written there, including the partial set
    when a trial fails.
    """
    datasets = prepare_datasets(cfg)
    records: list[TrialRecord] = []
    try:
        base_tasks = [(name, m, None, r, None) for name in datasets for m in cfg.methods
                      for r in range(cfg.n_repetitions)]
        records.extend(_execute(base_tasks, cfg, datasets, jobs))
        base = {(rec.dataset, rec.method, rec.rep): rec.accuracy for rec in records}
        tasks = [(name, m, e, r, base[(name, m, r)]) for name in datasets for m in cfg.methods
                 for e in cfg.epsilon_grid for r in range(cfg.n_repetitions)]
        records.extend(_execute(tasks, cfg, datasets, jobs))
    except Exception:
        if sink is not None:
            write_results(sorted(records, key=lambda r: r.sort_key), sink)
        raise
    records.sort(key=lambda r: r.sort_key)
    check_pairing(records)
    if sink is not None:
        write_results(records, sink)
    return records


def check_pairing(records) -> None:
    """Each private record needs a baseline row with the same split seed."""
    seeds = {(r.dataset, r.method, r.rep): r.seed for r in records if r.epsilon is None}
    for r in records:
        key = (r.dataset, r.method, r.rep)
        if key not in seeds:
            raise AssertionError(f"no baseline record for {key}")
        if seeds[key] != r.seed:
            raise AssertionError(f"baseline split seed differs for {key}")


# --------------------------------------------------------------------------
# persistence


def _fmt(value) -> str:
    if value is None:
        return "inf"
    if isinstance(value, (bool, np.bool_)):
        raise TypeError("unexpected boolean")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_results(records, path) -> Path:
    """Write records as CSV with the fixed header; floats keep 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for rec in records:
            w.writerow([_fmt(getattr(rec, name)) for name in RESULTS_HEADER])
    return path


_PARSERS = {
    "dataset": str, "method": str, "stage": str,
    "n_classes": int, "rep": int, "seed": int,
    "epsilon": lambda s: None if s == "inf" else float(s),
}


def read_results(path) -> list[TrialRecord]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ResultsSchemaError(f"{path}: empty file")
        if tuple(header) != RESULTS_HEADER:
            for i, expected in enumerate(RESULTS_HEADER):
                got = header[i] if i < len(header) else "<missing>"
                if got != expected:
                    raise ResultsSchemaError(
                        f"{path}: column {i + 1} should be {expected!r}, found {got!r}"
                    )
            raise ResultsSchemaError(f"{path}: unexpected extra column {header[len(RESULTS_HEADER)]!r}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RESULTS_HEADER):
                raise ResultsSchemaError(f"{path}:{lineno}: expected {len(RESULTS_HEADER)} fields")
            values = {}
            for name, cell in zip(RESULTS_HEADER, row):
                try:
                    values[name] = _PARSERS.get(name, float)(cell)
                except ValueError:
                    raise ResultsSchemaError(
                        f"{path}:{lineno}: column {name!r} has bad value {cell!r}"
                    ) from None
            records.append(TrialRecord(**values))
    return records
