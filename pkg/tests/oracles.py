"""Independent reference computations shared by unit and acceptance tests."""

import itertools

import numpy as np

from dptradeoff.core import LabeledDataset
from dptradeoff.mechanisms import laplace_cdf, perturb_dataset_s1


def ks_statistic(samples, cdf) -> float:
    x = np.sort(np.asarray(samples))
    n = x.size
    F = cdf(x)
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def laplace_ks(samples, beta=1.0) -> float:
    return ks_statistic(samples, lambda x: laplace_cdf(x, beta))


def s1_outputs(values, epsilon, runs, seed, row=-1):
    """Release ``runs`` independent S1 perturbations of a scalar dataset and
    return the noisy value of ``row`` from each."""
    values = np.asarray(values, dtype=float)
    stacked = np.tile(values, runs)[:, None]
    ds = LabeledDataset(stacked, np.zeros(stacked.shape[0], dtype=int),
                        np.array([[0.0, 1.0]]), 2)
    out = perturb_dataset_s1(ds, epsilon, np.random.default_rng(seed)).features[:, 0]
    return out.reshape(runs, values.size)[:, row]


def max_density_ratio(a, b, bins=20, lo=None, hi=None) -> float:
    """Largest ratio of histogram densities in either direction over shared bins."""
    lo = min(np.quantile(a, 0.05), np.quantile(b, 0.05)) if lo is None else lo
    hi = max(np.quantile(a, 0.95), np.quantile(b, 0.95)) if hi is None else hi
    edges = np.linspace(lo, hi, bins + 1)
    ha, _ = np.histogram(a, edges)
    hb, _ = np.histogram(b, edges)
    ok = (ha > 0) & (hb > 0)
    r = ha[ok] / hb[ok]
    return float(max(r.max(), (1 / r).max()))


def dp_histogram_check(epsilon, runs=100_000, seed=0) -> float:
    """Ratio bound observed on neighbouring 5-record datasets differing in one entry."""
    d1 = [0.1, 0.3, 0.5, 0.7, 0.0]
    d2 = [0.1, 0.3, 0.5, 0.7, 1.0]
    a = s1_outputs(d1, epsilon, runs, seed)
    b = s1_outputs(d2, epsilon, runs, seed + 1)
    return max_density_ratio(a, b)


def finite_difference_grad(f, theta, h=1e-5):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def brute_force_two_partition(x):
    """Lowest-SSE split of 1-D points into two nonempty groups."""
    x = np.asarray(x, dtype=float)
    best = None
    for mask in itertools.product([0, 1], repeat=len(x)):
        m = np.array(mask, dtype=bool)
        if m.all() or not m.any():
            continue
        sse = ((x[m] - x[m].mean()) ** 2).sum() + ((x[~m] - x[~m].mean()) ** 2).sum()
        if best is None or sse < best[0] - 1e-15:
            best = (sse, m)
    return best


def same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.array_equal(a[:, None] == a[None, :], b[:, None] == b[None, :])
