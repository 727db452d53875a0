"""Gaussian Naive Bayes and multilayer perceptron classifiers, plain and DP."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import LabeledDataset, PrivacyBudget, Stage, as_generator
from .mechanisms import (SgdNoiseConfig, dp_sgd_update, laplace_noise, nb_sensitivities,
                         nb_variance_sensitivity)

STD_FLOOR = 1e-6
PROB_FLOOR = 1e-12

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda a: (a > 0).astype(a.dtype)),
}


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


def _softmax_from_log(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class PredictiveModel:
    """Common prediction surface used by the attacks."""

    n_features: int
    n_classes: int
    training_loss: float | None
    privacy: PrivacyBudget

    def predict_proba(self, X) -> np.ndarray:
        raise NotImplementedError

    def _check_width(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def accuracy(self, ds: LabeledDataset) -> float:
        return float(np.mean(self.predict(ds.features) == ds.labels))


def predict_proba(model: PredictiveModel, X) -> np.ndarray:
    return model.predict_proba(X)


def per_example_loss(model: PredictiveModel, x, true_label) -> np.ndarray | float:
    """Cross-entropy ``-log p(true_label | x)`` with probabilities floored at 1e-12.

    Scalar in, scalar out; a matrix of rows with a label vector gives a vector.
    """
    scalar = np.ndim(x) == 1
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(true_label))
    if y.shape[0] != X.shape[0]:
        raise ValueError("one label per row required")
    if np.any(y < 0) or np.any(y >= model.n_classes) or not np.all(y == np.round(y)):
        raise ValueError("invalid class label")
    probs = model.predict_proba(X)
    picked = probs[np.arange(X.shape[0]), y.astype(np.int64)]
    loss = -np.log(np.maximum(picked, PROB_FLOOR))
    return float(loss[0]) if scalar else loss


def mean_loss(model: PredictiveModel, ds: LabeledDataset) -> float:
    return float(np.mean(per_example_loss(model, ds.features, ds.labels)))


# --------------------------------------------------------------------------
# Gaussian Naive Bayes


@dataclass(frozen=True, eq=False)
class GnbModel(PredictiveModel):
    class_priors: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    privacy: PrivacyBudget = field(default_factory=PrivacyBudget.baseline)
    training_loss: float | None = None

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    def log_scores(self, X) -> np.ndarray:
        """Unnormalized log posteriors, (n, k)."""
        X = self._check_width(X)
        var = np.maximum(self.stds, STD_FLOOR) ** 2
        const = -0.5 * np.log(2 * np.pi * var).sum(axis=1)  # (k,)
        inv = 1.0 / var
        # sum_j (x_j - mu_cj)^2 / var_cj expanded to use matrix products
        quad = (X * X) @ inv.T - 2.0 * X @ (self.means * inv).T + (self.means ** 2 * inv).sum(axis=1)
        with np.errstate(divide="ignore"):
            logp = np.log(self.class_priors)
        return logp + const - 0.5 * quad

    def predict_proba(self, X) -> np.ndarray:
        return _softmax_from_log(self.log_scores(X))

    def to_dict(self) -> dict:
        return {
            "kind": "gnb",
            "class_priors": self.class_priors.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "privacy": self.privacy.to_dict(),
            "training_loss": self.training_loss,
        }


def _class_stats(train: LabeledDataset):
    k = train.n_classes
    counts = np.bincount(train.labels, minlength=k)
    if np.any(counts < 2):
        bad = np.flatnonzero(counts < 2).tolist()
        raise ValueError(f"classes {bad} have fewer than 2 training samples")
    means = np.empty((k, train.p))
    stds = np.empty((k, train.p))
    for c in range(k):
        Xc = train.features[train.labels == c]
        means[c] = Xc.mean(axis=0)
        stds[c] = Xc.std(axis=0)  # population std
    return counts, means, stds


def _finish_gnb(train, counts, means, stds, privacy) -> GnbModel:
    priors = counts / counts.sum()
    model = GnbModel(priors, means, np.maximum(stds, STD_FLOOR), privacy)
    object.__setattr__(model, "training_loss", mean_loss(model, train))
    return model


def fit_gnb(train: LabeledDataset) -> GnbModel:
    counts, means, stds = _class_stats(train)
    return _finish_gnb(train, counts, means, stds, PrivacyBudget.baseline())


STD_MECHANISMS = ("variance", "vaidya")


def fit_gnb_dp(train: LabeledDataset, epsilon: float | None, rng=None,
               std_mechanism: str = "variance") -> GnbModel:
    """GNB with Laplace noise on every class-conditional mean and spread.

    Means get noise of scale ``range / (n_c + 1)`` per epsilon share, with the
    budget split evenly over the 2p statistics of a class. The spread is
    released one of two ways:

    ``"variance"``
        The noised mean is clamped into the feature range and used as a
        public centre; the mean squared deviation around it gets Laplace noise
        scaled by :func:`~dptradeoff.mechanisms.nb_variance_sensitivity`, is
        clamped to ``[STD_FLOOR**2, (range/2)**2]`` and square-rooted.
    ``"vaidya"``
        The std gets noise scaled by ``sqrt(n_c) * range / (n_c + 1)`` and is
        floored at ``STD_FLOOR``.

    Priors keep the exact class frequencies. ``epsilon=None`` is the
    non-private fit and touches no randomness.
    """
    if epsilon is None:
        return fit_gnb(train)
    if std_mechanism not in STD_MECHANISMS:
        raise ValueError(f"unknown std mechanism {std_mechanism!r}")
    budget = PrivacyBudget(epsilon, Stage.S3)
    rng = as_generator(rng)
    counts, means, stds = _class_stats(train)
    widths = train.range_widths
    lower, upper = train.feature_ranges[:, 0], train.feature_ranges[:, 1]
    k, p = means.shape
    sens = [[nb_sensitivities(int(counts[c]), float(widths[i]), epsilon, p) for i in range(p)]
            for c in range(k)]
    mu_scale = np.array([[s.mu_scale for s in row] for row in sens])
    noisy_means = means + laplace_noise(mu_scale, rng)
    if std_mechanism == "vaidya":
        sigma_scale = np.array([[s.sigma_scale for s in row] for row in sens])
        noisy_stds = stds + laplace_noise(sigma_scale, rng)
        return _finish_gnb(train, counts, noisy_means, noisy_stds, budget)

    share = sens[0][0].epsilon_share
    centers = np.clip(noisy_means, lower, upper)
    var = np.empty((k, p))
    var_scale = np.empty((k, p))
    for c in range(k):
        Xc = train.features[train.labels == c]
        var[c] = ((Xc - centers[c]) ** 2).mean(axis=0)
        var_scale[c] = nb_variance_sensitivity(int(counts[c]), lower, upper, centers[c]) / share
    noisy_var = np.clip(var + laplace_noise(var_scale, rng), STD_FLOOR ** 2,
                        np.maximum((widths / 2) ** 2, STD_FLOOR ** 2))
    return _finish_gnb(train, counts, centers, np.sqrt(noisy_var), budget)


# --------------------------------------------------------------------------
# Multilayer perceptron


@dataclass(frozen=True)
class MlpHyper:
    hidden: tuple = (128,)
    activation: str = "tanh"
    lr: float = 0.1
    epochs: int = 50
    batch_size: int = 200

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.lr <= 0 or self.epochs < 0 or self.batch_size < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"invalid MLP hyperparameters: {self}")


@dataclass(frozen=True, eq=False)
class MlpModel(PredictiveModel):
    weights: tuple
    biases: tuple
    activation: str = "tanh"
    privacy: PrivacyBudget = field(default_factory=PrivacyBudget.baseline)
    training_loss: float | None = None

    @property
    def layer_sizes(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights)

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    def predict_proba(self, X) -> np.ndarray:
        X = self._check_width(X)
        return _softmax_from_log(_forward(self.weights, self.biases, self.activation, X)[-1])

    def flat_params(self) -> np.ndarray:
        return _flatten(self.weights, self.biases)

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "privacy": self.privacy.to_dict(),
            "training_loss": self.training_loss,
        }


def _flatten(weights, biases) -> np.ndarray:
    parts = []
    for W, b in zip(weights, biases):
        parts.append(W.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def _unflatten(flat, sizes):
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out))
        pos += fan_in * fan_out
        biases.append(flat[pos:pos + fan_out])
        pos += fan_out
    return weights, biases


def init_mlp_params(sizes, rng) -> tuple[list, list]:
    """Scaled-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = as_generator(rng)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward(weights, biases, activation, X):
    """Activations per layer; the last entry holds the output logits."""
    act = _ACTIVATIONS[activation][0]
    outs = [X]
    a = X
    for l, (W, b) in enumerate(zip(weights, biases)):
        z = a @ W + b
        a = z if l == len(weights) - 1 else act(z)
        outs.append(a)
    return outs


def _output_deltas(weights, activation, outs, y):
    """Backpropagated errors of the summed cross-entropy, one per layer."""
    dact = _ACTIVATIONS[activation][1]
    probs = _softmax_from_log(outs[-1])
    delta = probs
    delta[np.arange(len(y)), y] -= 1.0
    deltas = [delta]
    for l in range(len(weights) - 1, 0, -1):
        delta = (delta @ weights[l].T) * dact(outs[l])
        deltas.append(delta)
    return deltas[::-1]


def mlp_loss_and_grad(weights, biases, activation, X, y) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient as a flat vector."""
    outs = _forward(weights, biases, activation, X)
    logits = outs[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(len(y)), y]))
    deltas = _output_deltas(weights, activation, outs, y)
    B = X.shape[0]
    parts = []
    for a_prev, d in zip(outs[:-1], deltas):
        parts.append((a_prev.T @ d).ravel() / B)
        parts.append(d.sum(axis=0) / B)
    return loss, np.concatenate(parts)


def per_example_grads(weights, biases, activation, X, y) -> np.ndarray:
    """Per-example cross-entropy gradients, shape (batch, n_params)."""
    outs = _forward(weights, biases, activation, X)
    deltas = _output_deltas(weights, activation, outs, y)
    B = X.shape[0]
    parts = []
    for a_prev, d in zip(outs[:-1], deltas):
        parts.append(np.einsum("bi,bo->bio", a_prev, d).reshape(B, -1))
        parts.append(d)
    return np.concatenate(parts, axis=1)


def clipped_grad_sum(weights, biases, activation, X, y, clip_norm) -> tuple[np.ndarray, float]:
    """Sum of per-example gradients, each scaled to L1 norm <= clip_norm.

    A weight gradient is the outer product ``a ⊗ d`` whose L1 norm factors as
    ``|a|_1 * |d|_1``, so per-example norms and the clipped sum come out of
    two matrix products without materializing (batch, n_params). Returns the
    flat sum and the largest clipped per-example norm.
    """
    outs = _forward(weights, biases, activation, X)
    deltas = _output_deltas(weights, activation, outs, y)
    norms = np.zeros(X.shape[0])
    for a_prev, d in zip(outs[:-1], deltas):
        dn = np.abs(d).sum(axis=1)
        norms += np.abs(a_prev).sum(axis=1) * dn + dn
    factor = np.minimum(1.0, clip_norm / np.maximum(norms, 1e-300))
    parts = []
    for a_prev, d in zip(outs[:-1], deltas):
        fd = d * factor[:, None]
        parts.append((a_prev.T @ fd).ravel())
        parts.append(fd.sum(axis=0))
    return np.concatenate(parts), float((norms * factor).max())


def _batches(n, batch_size, epochs, rng):
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start:start + batch_size]


def n_steps(n: int, hyper: MlpHyper) -> int:
    return hyper.epochs * math.ceil(n / hyper.batch_size)


def _fit(train, hyper, rng, noise_cfg: SgdNoiseConfig | None, privacy: PrivacyBudget) -> MlpModel:
    gen = as_generator(rng)
    init_rng, shuffle_rng, noise_rng = gen.spawn(3)
    sizes = (train.p,) + hyper.hidden + (train.n_classes,)
    weights, biases = init_mlp_params(sizes, init_rng)
    X, y = train.features, train.labels
    flat = _flatten(weights, biases)
    for idx in _batches(train.n, hyper.batch_size, hyper.epochs, shuffle_rng):
        Xb, yb = X[idx], y[idx]
        if noise_cfg is None:
            loss, grad = mlp_loss_and_grad(weights, biases, hyper.activation, Xb, yb)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite training loss {loss}")
            flat = flat - hyper.lr * grad
        else:
            gsum, max_norm = clipped_grad_sum(weights, biases, hyper.activation, Xb, yb,
                                              noise_cfg.clip_norm)
            flat = dp_sgd_update(flat, gsum, noise_cfg, noise_rng, lr=hyper.lr,
                                 batch_size=len(idx), max_example_norm=max_norm)
            if not np.all(np.isfinite(flat)):
                raise DivergenceError("non-finite parameters after a DP-SGD step")
        weights, biases = _unflatten(flat, sizes)
    model = MlpModel(tuple(weights), tuple(biases), hyper.activation, privacy)
    loss = mean_loss(model, train)
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite training loss {loss}")
    object.__setattr__(model, "training_loss", loss)
    return model


def fit_mlp(train: LabeledDataset, hyper: MlpHyper, rng) -> MlpModel:
    """Minibatch SGD on mean softmax cross-entropy."""
    return _fit(train, hyper, rng, None, PrivacyBudget.baseline())


def fit_mlp_dp(train: LabeledDataset, hyper: MlpHyper, epsilon: float | None,
               clip_norm: float, rng) -> MlpModel:
    """DP-SGD: per-example L1 clipping plus Laplace noise on each batch sum.

    The whole budget is spent over every batch of every epoch. Initial
    weights and batch order match :func:`fit_mlp` for the same ``rng``.
    """
    cfg = SgdNoiseConfig(clip_norm, epsilon, n_steps(train.n, hyper), hyper.batch_size)
    budget = PrivacyBudget(epsilon, Stage.S2) if epsilon is not None else PrivacyBudget.baseline()
    return _fit(train, hyper, rng, cfg, budget)


# --------------------------------------------------------------------------
# persistence


def model_from_dict(d: dict) -> PredictiveModel:
    privacy = PrivacyBudget.from_dict(d["privacy"])
    if d["kind"] == "gnb":
        return GnbModel(np.array(d["class_priors"]), np.array(d["means"]),
                        np.array(d["stds"]), privacy, d["training_loss"])
    if d["kind"] == "mlp":
        weights = tuple(np.array(W, dtype=np.float64) for W in d["weights"])
        biases = tuple(np.array(b, dtype=np.float64) for b in d["biases"])
        sizes = tuple(d["layer_sizes"])
        if sizes != (weights[0].shape[0],) + tuple(W.shape[1] for W in weights):
            raise ValueError("layer_sizes disagree with weight shapes")
        return MlpModel(weights, biases, d["activation"], privacy, d["training_loss"])
    raise ValueError(f"unknown model kind {d['kind']!r}")


def save_model(model: PredictiveModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()), encoding="utf-8")


def load_model(path) -> PredictiveModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
