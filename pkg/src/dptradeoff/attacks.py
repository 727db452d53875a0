"""Black-box membership and attribute inference attacks.

Membership inference flags a record as a training member when the model is
confident on it (confidence threshold) or when its loss is no larger than the
model's training loss (loss threshold). Attribute inference masks one
feature, tries every candidate value and keeps the one whose loss is closest
to the training loss, or whose top-class confidence is highest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AttackResult, LabeledDataset, as_generator
from .models import PROB_FLOOR, PredictiveModel, per_example_loss

MAX_BINS = 10


@dataclass(frozen=True)
class MiThreshold:
    threshold: float
    calibration_size: int
    calibration_indices: frozenset | None = None


def _check_disjoint(threshold: MiThreshold, *sets: LabeledDataset) -> None:
    if threshold.calibration_indices is None:
        return
    for ds in sets:
        if ds.indices is None:
            continue
        overlap = threshold.calibration_indices.intersection(ds.indices.tolist())
        if overlap:
            raise ValueError(
                f"calibration and evaluation sets share {len(overlap)} records"
            )


def confidences(model: PredictiveModel, X) -> np.ndarray:
    """Top-class probability per row."""
    return model.predict_proba(X).max(axis=1)


def threshold_from_scores(member_scores, nonmember_scores) -> float:
    """Score threshold maximizing TPR - FPR for the rule ``score >= t``.

    Candidates are the observed scores; ties go to the larger threshold.
    """
    m = np.sort(np.asarray(member_scores, dtype=np.float64))
    nm = np.sort(np.asarray(nonmember_scores, dtype=np.float64))
    if m.size == 0 or nm.size == 0:
        raise ValueError("reference member and non-member sets must be nonempty")
    cands = np.unique(np.concatenate([m, nm]))
    tpr = 1.0 - np.searchsorted(m, cands, side="left") / m.size
    fpr = 1.0 - np.searchsorted(nm, cands, side="left") / nm.size
    adv = tpr - fpr
    best = np.flatnonzero(adv == adv.max())
    return float(cands[best[-1]])


def calibrate_salem_threshold(model: PredictiveModel, ref_members: LabeledDataset,
                              ref_nonmembers: LabeledDataset) -> MiThreshold:
    """Fit the confidence threshold on reference data the attack will not score."""
    t = threshold_from_scores(confidences(model, ref_members.features),
                              confidences(model, ref_nonmembers.features))
    ids = None
    if ref_members.indices is not None and ref_nonmembers.indices is not None:
        ids = frozenset(ref_members.indices.tolist()) | frozenset(ref_nonmembers.indices.tolist())
    return MiThreshold(t, ref_members.n + ref_nonmembers.n, ids)


def _score(member_flags, nonmember_flags) -> AttackResult:
    return AttackResult(float(np.mean(member_flags)), float(np.mean(nonmember_flags)),
                        len(member_flags), len(nonmember_flags))


def salem_mi(model: PredictiveModel, members: LabeledDataset, nonmembers: LabeledDataset,
             threshold: MiThreshold) -> AttackResult:
    """Predict "member" iff the top-class probability is >= the threshold.

    Labels are never looked at.
    """
    _check_disjoint(threshold, members, nonmembers)
    t = threshold.threshold
    return _score(confidences(model, members.features) >= t,
                  confidences(model, nonmembers.features) >= t)


def yeom_mi(model: PredictiveModel, members: LabeledDataset, nonmembers: LabeledDataset) -> AttackResult:
    """Predict "member" iff the per-example loss is <= the model's training loss."""
    if model.training_loss is None:
        raise ValueError("model does not expose a training loss")
    t = model.training_loss
    return _score(per_example_loss(model, members.features, members.labels) <= t,
                  per_example_loss(model, nonmembers.features, nonmembers.labels) <= t)


@dataclass(frozen=True)
class AttributeBinning:
    """Candidate values for one masked attribute.

    ``bin_edges`` are the interior boundaries between neighbouring candidates,
    so ``n_bins == len(bin_edges) + 1``. A constant column degenerates to a
    single candidate.
    """

    attribute_index: int
    bin_edges: np.ndarray
    candidate_values: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n_bins <= MAX_BINS:
            raise ValueError(f"number of bins must lie in [1, {MAX_BINS}], got {self.n_bins}")
        if len(self.candidate_values) != self.n_bins:
            raise ValueError("one candidate per bin required")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return len(self.bin_edges) + 1

    def bin_of(self, values) -> np.ndarray:
        return np.searchsorted(self.bin_edges, np.asarray(values, dtype=np.float64), side="right")


def make_binning(train_features, attribute_index: int, feature_range=(0.0, 1.0)) -> AttributeBinning:
    """Exact values when the column has at most 10 distinct ones, otherwise
    10 equal-width bins over the declared range with their centres as
    candidates."""
    col = np.asarray(train_features, dtype=np.float64)[:, attribute_index]
    uniq = np.unique(col)
    if uniq.size <= MAX_BINS:
        edges = (uniq[:-1] + uniq[1:]) / 2.0
        return AttributeBinning(attribute_index, edges, uniq)
    lo, hi = float(feature_range[0]), float(feature_range[1])
    if hi <= lo:
        lo, hi = float(uniq[0]), float(uniq[-1])
    full = np.linspace(lo, hi, MAX_BINS + 1)
    return AttributeBinning(attribute_index, full[1:-1], (full[:-1] + full[1:]) / 2.0)


def _candidate_probs(model: PredictiveModel, X, binning: AttributeBinning) -> np.ndarray:
    """Class probabilities for every row with every candidate substituted,
    shape (n_candidates, n, k)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, c = X.shape[0], binning.n_bins
    stacked = np.repeat(X[None, :, :], c, axis=0)
    stacked[:, :, binning.attribute_index] = binning.candidate_values[:, None]
    probs = model.predict_proba(stacked.reshape(c * n, -1))
    return probs.reshape(c, n, -1)


def _yeom_pick(probs, labels, training_loss) -> np.ndarray:
    n = probs.shape[1]
    p_true = probs[:, np.arange(n), labels]
    losses = -np.log(np.maximum(p_true, PROB_FLOOR))
    # argmin returns the first (smallest) candidate on ties
    return np.abs(losses - training_loss).argmin(axis=0)


def _salem_pick(probs) -> np.ndarray:
    return probs.max(axis=2).argmax(axis=0)


def yeom_ai_guess(model: PredictiveModel, x_without_attr, true_label: int,
                  binning: AttributeBinning) -> float:
    """Candidate whose loss is closest to the training loss.

    The masked position of ``x_without_attr`` is overwritten, so any
    placeholder value works there.
    """
    if model.training_loss is None:
        raise ValueError("model does not expose a training loss")
    probs = _candidate_probs(model, x_without_attr, binning)
    i = _yeom_pick(probs, np.atleast_1d(np.asarray(true_label, dtype=np.int64)), model.training_loss)
    return float(binning.candidate_values[i[0]])


def salem_ai_guess(model: PredictiveModel, x_without_attr, binning: AttributeBinning) -> float:
    """Candidate giving the highest top-class confidence."""
    probs = _candidate_probs(model, x_without_attr, binning)
    return float(binning.candidate_values[_salem_pick(probs)[0]])


def _success_rates(model, ds: LabeledDataset, binning, attacks) -> dict:
    probs = _candidate_probs(model, ds.features, binning)
    truth = binning.bin_of(ds.features[:, binning.attribute_index])
    out = {}
    for name in attacks:
        if name == "yeom":
            guess = _yeom_pick(probs, ds.labels, model.training_loss)
        else:
            guess = _salem_pick(probs)
        out[name] = float(np.mean(guess == truth))
    return out


@dataclass(frozen=True)
class AiResult:
    mean_advantage: float
    per_attribute: tuple
    attributes: tuple

    @property
    def std(self) -> float:
        return float(np.std(self.per_attribute, ddof=1)) if len(self.per_attribute) > 1 else 0.0


def ai_advantages(model: PredictiveModel, members: LabeledDataset, nonmembers: LabeledDataset,
                  n_attributes: int, rng, attacks=("yeom", "salem"),
                  binning_source: LabeledDataset | None = None) -> dict[str, AiResult]:
    """Attribute inference advantage for several guessers on shared queries.

    ``n_attributes`` columns are drawn without replacement and processed in
    ascending index order. For each, the advantage is the rate of guessing the
    true bin on members minus that on non-members. Bins come from
    ``binning_source`` (default: the members) and the declared feature range.
    """
    if n_attributes > members.p:
        raise ValueError(f"cannot protect {n_attributes} of {members.p} attributes")
    if "yeom" in attacks and model.training_loss is None:
        raise ValueError("model does not expose a training loss")
    source = members if binning_source is None else binning_source
    cols = np.sort(as_generator(rng).choice(members.p, size=n_attributes, replace=False))
    per = {name: [] for name in attacks}
    for j in cols:
        binning = make_binning(source.features, int(j), source.feature_ranges[j])
        on_members = _success_rates(model, members, binning, attacks)
        on_nonmembers = _success_rates(model, nonmembers, binning, attacks)
        for name in attacks:
            per[name].append(on_members[name] - on_nonmembers[name])
    return {
        name: AiResult(float(np.mean(v)), tuple(v), tuple(int(c) for c in cols))
        for name, v in per.items()
    }


def ai_advantage(model: PredictiveModel, members: LabeledDataset, nonmembers: LabeledDataset,
                 n_attributes: int, rng, attack: str = "yeom") -> tuple[float, list]:
    """Mean and per-attribute attribute-inference advantage for one guesser."""
    if attack not in ("yeom", "salem"):
        raise ValueError(f"unknown attack {attack!r}")
    res = ai_advantages(model, members, nonmembers, n_attributes, rng, attacks=(attack,))[attack]
    return res.mean_advantage, list(res.per_attribute)
