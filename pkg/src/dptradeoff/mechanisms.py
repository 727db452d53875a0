"""Laplace noise mechanisms for the three injection stages.

Stage 1 perturbs every training feature value, stage 2 noises clipped
minibatch gradient sums, stage 3 supplies the sensitivities used to noise
Gaussian Naive Bayes parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LabeledDataset, as_generator

BETA_FLOOR = 1e-12
SENSITIVITY_FLOOR = 1e-12


def _positive(name, value):
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class LaplaceScale:
    beta: float

    def __post_init__(self):
        _positive("beta", self.beta)


def laplace_inverse_cdf(u):
    """Quantile function of the standard Laplace distribution, u in (0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    c = u - 0.5
    return -np.sign(c) * np.log1p(-2.0 * np.abs(c))


def _open_uniform(rng: np.random.Generator, size):
    # Generator.random samples [0, 1); 0 would map to -inf
    u = rng.random(size)
    return np.where(u == 0.0, np.nextafter(0.0, 1.0), u)


def laplace_noise(beta, rng, size=None) -> np.ndarray:
    """Zero-mean Laplace draws with scale ``beta`` (broadcast against ``size``).

    Sampling goes through the inverse CDF of one uniform per draw, so the
    same generator state gives noise that scales linearly with ``beta``.
    """
    rng = as_generator(rng)
    beta = np.asarray(beta, dtype=np.float64)
    if size is None:
        size = beta.shape
    return beta * laplace_inverse_cdf(_open_uniform(rng, size))


def laplace_sample(scale: LaplaceScale, rng) -> float:
    return float(laplace_noise(scale.beta, rng, size=()))


def laplace_cdf(x, beta: float = 1.0):
    x = np.asarray(x, dtype=np.float64) / beta
    return np.where(x < 0, 0.5 * np.exp(x), 1.0 - 0.5 * np.exp(-x))


def s1_scale(feature_range: float, epsilon: float, p: int) -> LaplaceScale:
    """Per-feature input-noise scale ``range * p / epsilon``.

    A zero range (constant feature) gets the floor scale instead.
    """
    _positive("epsilon", epsilon)
    if p < 1:
        raise ValueError("p must be >= 1")
    if feature_range < 0:
        raise ValueError("feature range must be non-negative")
    return LaplaceScale(max(feature_range * p / epsilon, BETA_FLOOR))


def s1_scales(ranges, epsilon: float) -> np.ndarray:
    widths = np.asarray(ranges, dtype=np.float64)
    p = widths.shape[0]
    return np.array([s1_scale(float(w), epsilon, p).beta for w in widths])


def perturb_dataset_s1(train: LabeledDataset, epsilon: float, rng) -> LabeledDataset:
    """Add independent Laplace noise to every feature of every training row.

    Labels are kept, values are not clipped back into their range, and binary
    features stay continuous.
    """
    betas = s1_scales(train.range_widths, epsilon)
    noise = laplace_noise(betas, rng, size=train.features.shape)
    return train.with_features(train.features + noise, noised=True)


@dataclass(frozen=True)
class SgdNoiseConfig:
    """Pure-epsilon DP-SGD settings.

    ``epsilon_total`` is spent over ``n_batches_total`` steps by sequential
    composition. ``epsilon_total=None`` disables noise (non-private run).
    """

    clip_norm: float
    epsilon_total: float | None
    n_batches_total: int
    batch_size: int

    def __post_init__(self):
        _positive("clip_norm", self.clip_norm)
        if self.epsilon_total is not None:
            _positive("epsilon_total", self.epsilon_total)
        if self.n_batches_total < 1 or self.batch_size < 1:
            raise ValueError("batch counts must be positive")


def per_batch_epsilon(cfg: SgdNoiseConfig) -> float:
    if cfg.epsilon_total is None:
        raise ValueError("non-private configuration has no per-batch budget")
    return cfg.epsilon_total / cfg.n_batches_total


def l1_clip(grads: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale each row of a (batch, d) gradient matrix to L1 norm <= clip_norm."""
    norms = np.abs(grads).sum(axis=1)
    factor = np.minimum(1.0, clip_norm / np.maximum(norms, 1e-300))
    return grads * factor[:, None]


def dp_sgd_update(params, summed_clipped_grad, cfg: SgdNoiseConfig, rng,
                  lr: float, batch_size: int | None = None,
                  max_example_norm: float | None = None) -> np.ndarray:
    """One noisy step on a flat parameter vector.

    ``params - lr * (sum_of_clipped_grads + Lap(clip_norm / eps_batch)) / B``.
    Adding or removing one example moves the clipped sum by at most
    ``clip_norm`` in L1, hence the noise scale. Pass ``max_example_norm`` to
    have the clipping contract checked.
    """
    if max_example_norm is not None and max_example_norm > cfg.clip_norm + 1e-9:
        raise ValueError(
            f"per-example gradient L1 norm {max_example_norm} exceeds clip norm {cfg.clip_norm}"
        )
    B = cfg.batch_size if batch_size is None else batch_size
    g = np.asarray(summed_clipped_grad, dtype=np.float64)
    if cfg.epsilon_total is not None:
        beta = cfg.clip_norm / per_batch_epsilon(cfg)
        g = g + laplace_noise(beta, rng, size=g.shape)
    return np.asarray(params, dtype=np.float64) - lr * g / B


@dataclass(frozen=True)
class NbSensitivity:
    s_mu: float
    s_sigma: float
    epsilon_share: float

    @property
    def mu_scale(self) -> float:
        return self.s_mu / self.epsilon_share

    @property
    def sigma_scale(self) -> float:
        return self.s_sigma / self.epsilon_share


def nb_sensitivities(n_class: int, feature_range: float, epsilon: float, p: int) -> NbSensitivity:
    """Sensitivities of a class-conditional feature mean and std.

    Mean: ``range / (n + 1)``; std: ``sqrt(n) * range / (n + 1)``. Epsilon is
    split evenly over the 2p statistics of one class; classes hold disjoint
    records and compose in parallel.
    """
    if n_class < 2:
        raise ValueError(f"class needs at least 2 samples, got {n_class}")
    _positive("epsilon", epsilon)
    if feature_range < 0:
        raise ValueError("feature range must be non-negative")
    s_mu = max(feature_range / (n_class + 1), SENSITIVITY_FLOOR)
    s_sigma = max(math.sqrt(n_class) * feature_range / (n_class + 1), SENSITIVITY_FLOOR)
    return NbSensitivity(s_mu, s_sigma, epsilon / (2 * p))


def nb_variance_sensitivity(n_class: int, lower: float, upper: float, center) -> np.ndarray:
    """Sensitivity of the mean squared deviation from a released centre.

    Every value lies in [lower, upper], so one record moves
    ``sum((x - center)**2) / n`` by at most ``max(center - lower, upper - center)**2 / n``.
    The centre is the already-noised mean, so the scale depends on it.
    """
    if n_class < 2:
        raise ValueError(f"class needs at least 2 samples, got {n_class}")
    center = np.asarray(center, dtype=np.float64)
    reach = np.maximum(center - lower, upper - center)
    return np.maximum(reach * reach / n_class, SENSITIVITY_FLOOR)
