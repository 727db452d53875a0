"""Aggregated curves, inflection points and budget recommendations."""

from __future__ import annotations

import csv
import math
import re
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

METRICS = {
    "ACL": "acl",
    "SalemMI": "salem_mi_adv",
    "YeomMI": "yeom_mi_adv",
    "YeomAI": "yeom_ai_mean_adv",
    "SalemAI": "salem_ai_mean_adv",
}

FLAT_THRESHOLD = 0.01
PLOT_HEADER = ("epsilon", "mean", "std", "n")
SUMMARY_HEADER = ("metric", "stage", "epsilon", "mean", "n_curves")


def metric_tag(name: str) -> str:
    """Canonical tag for a case-insensitive metric name, e.g. ``acl`` -> ``ACL``."""
    for tag in METRICS:
        if tag.lower() == name.lower():
            return tag
    raise ValueError(f"unknown metric {name!r}; choose from {', '.join(METRICS)}")


@dataclass(frozen=True)
class MetricCurve:
    dataset: str
    method: str
    stage: str
    metric: str
    points: tuple  # (epsilon, mean, std, n), epsilon strictly increasing

    def __post_init__(self):
        pts = tuple(tuple(p) for p in self.points)
        object.__setattr__(self, "points", pts)
        eps = [p[0] for p in pts]
        if any(b <= a for a, b in zip(eps, eps[1:])):
            raise ValueError("curve epsilons must be strictly increasing")
        if any(p[3] < 1 for p in pts):
            raise ValueError("every point needs n >= 1")

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=np.float64)

    @property
    def means(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=np.float64)


def aggregate(records, metrics=tuple(METRICS)) -> list[MetricCurve]:
    """Mean and sample std over repetitions, one curve per dataset, method and metric.

    Non-private baseline rows are not part of any curve.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    groups = defaultdict(lambda: defaultdict(list))
    stages = {}
    for r in records:
        if r.epsilon is None:
            continue
        key = (r.dataset, r.method)
        stages[key] = r.stage
        groups[key][r.epsilon].append(r)
    curves = []
    for (dataset, method), by_eps in sorted(groups.items()):
        for tag in metrics:
            field = METRICS[tag]
            pts = []
            for eps in sorted(by_eps):
                vals = np.array([getattr(r, field) for r in by_eps[eps]], dtype=np.float64)
                std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
                pts.append((eps, float(vals.mean()), std, int(vals.size)))
            curves.append(MetricCurve(dataset, method, stages[(dataset, method)], tag, tuple(pts)))
    return curves


def select(curves, dataset=None, method=None, metric=None, stage=None) -> list[MetricCurve]:
    out = []
    for c in curves:
        if dataset is not None and c.dataset != dataset:
            continue
        if method is not None and c.method != method:
            continue
        if metric is not None and c.metric != metric_tag(metric):
            continue
        if stage is not None and c.stage != stage:
            continue
        out.append(c)
    return out


def find_inflection(curve: MetricCurve) -> float | None:
    """Epsilon where the mean changes fastest per decade of epsilon.

    Returns the geometric midpoint of the steepest segment (ties go to the
    smaller epsilon), or None when no neighbouring means differ by 0.01 or more.
    """
    if len(curve.points) < 3:
        raise ValueError("need at least 3 points to locate an inflection")
    eps, means = curve.epsilons, curve.means
    delta = np.diff(means)
    if np.all(np.abs(delta) < FLAT_THRESHOLD):
        return None
    slope = np.abs(delta / np.diff(np.log10(eps)))
    i = int(np.argmax(slope))
    return math.sqrt(eps[i] * eps[i + 1])


@dataclass(frozen=True)
class Recommendation:
    kind: str  # "ACL-bounded" or "eps-bounded"
    constraint: float
    method: str | None
    achieved: float | None
    feasible: bool
    per_method: tuple = ()  # (method, achieved or None)


def _by_method(curves) -> dict[str, MetricCurve]:
    out = {}
    for c in curves:
        if c.metric != "ACL":
            raise ValueError(f"recommendations need ACL curves, got {c.metric}")
        if c.method in out:
            raise ValueError(f"several {c.method} curves; select a single dataset first")
        if not c.points:
            raise ValueError(f"{c.method} curve is empty")
        out[c.method] = c
    if not out:
        raise ValueError("no curves given")
    return dict(sorted(out.items()))


def smallest_eps_for_acl(curve: MetricCurve, acl_bound: float) -> float | None:
    """Smallest epsilon whose log-linearly interpolated mean ACL is <= the bound."""
    eps, means = curve.epsilons, curve.means
    if means[0] <= acl_bound:
        return float(eps[0])
    for i in range(len(eps) - 1):
        lo, hi = means[i], means[i + 1]
        if hi <= acl_bound < lo:
            t = (lo - acl_bound) / (lo - hi)
            a, b = math.log10(eps[i]), math.log10(eps[i + 1])
            return float(10.0 ** (a + t * (b - a)))
    return None


def interpolate_acl(curve: MetricCurve, epsilon: float) -> float:
    """Mean ACL at ``epsilon`` by linear interpolation in log10(epsilon).

    Grid points return the stored mean exactly; values outside the grid
    clamp to the nearest end with a warning.
    """
    eps, means = curve.epsilons, curve.means
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    hit = np.flatnonzero(eps == epsilon)
    if hit.size:
        return float(means[hit[0]])
    if epsilon < eps[0] or epsilon > eps[-1]:
        end = 0 if epsilon < eps[0] else -1
        warnings.warn(f"epsilon {epsilon} outside grid [{eps[0]}, {eps[-1]}]; "
                      f"using {eps[end]}", stacklevel=2)
        return float(means[end])
    return float(np.interp(math.log10(epsilon), np.log10(eps), means))


def recommend_for_acl(curves, acl_bound: float) -> Recommendation:
    """Method reaching the ACL bound at the smallest epsilon (strongest privacy)."""
    per = [(m, smallest_eps_for_acl(c, acl_bound)) for m, c in _by_method(curves).items()]
    ok = [(e, m) for m, e in per if e is not None]
    if not ok:
        return Recommendation("ACL-bounded", acl_bound, None, None, False, tuple(per))
    e, m = min(ok, key=lambda t: t[0])
    return Recommendation("ACL-bounded", acl_bound, m, e, True, tuple(per))


def recommend_for_eps(curves, eps_bound: float) -> Recommendation:
    """Method with the smallest interpolated ACL at the epsilon bound."""
    per = [(m, interpolate_acl(c, eps_bound)) for m, c in _by_method(curves).items()]
    a, m = min(((a, m) for m, a in per), key=lambda t: t[0])
    return Recommendation("eps-bounded", eps_bound, m, a, True, tuple(per))


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text)


def plot_filename(curve: MetricCurve) -> str:
    return f"{_slug(curve.dataset)}__{_slug(curve.metric)}__{_slug(curve.method)}.csv"


def _g(x) -> str:
    return format(float(x), ".17g")


def emit_plot_data(curves, out_dir) -> list[Path]:
    """One ``epsilon,mean,std,n`` CSV per curve plus ``summary.csv``.

    The summary averages curve means over all curves of the same stage and
    metric, per epsilon.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    pooled = defaultdict(list)
    for c in curves:
        path = out_dir / plot_filename(c)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PLOT_HEADER)
            for eps, mean, std, n in c.points:
                w.writerow([_g(eps), _g(mean), _g(std), int(n)])
                pooled[(c.metric, c.stage, eps)].append(mean)
        paths.append(path)
    summary = out_dir / "summary.csv"
    with summary.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for (metric, stage, eps), vals in sorted(pooled.items()):
            w.writerow([metric, stage, _g(eps), _g(np.mean(vals)), len(vals)])
    paths.append(summary)
    return paths


def read_plot_csv(path) -> list[tuple]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != PLOT_HEADER:
            raise ValueError(f"{path}: expected header {','.join(PLOT_HEADER)}")
        return [(float(e), float(m), float(s), int(n)) for e, m, s, n in reader]
