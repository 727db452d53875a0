import numpy as np
import pytest
from hypothesis import given, strategies as st

from dptradeoff.core import (AttackResult, LabeledDataset, PrivacyBudget, SeededRng, Stage,
                             accuracy_loss, advantage, as_generator, declared_ranges,
                             minmax_normalize, stable_hash64, unit_ranges)

unit = st.floats(0.0, 1.0, allow_nan=False)


@pytest.mark.parametrize("tpr,fpr,expected", [(0.7, 0.2, 0.5), (0.5, 0.5, 0.0), (0.0, 1.0, -1.0)])
def test_advantage_examples(tpr, fpr, expected):
    assert advantage(tpr, fpr) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("acc,base,expected", [(0.4, 0.8, 0.5), (0.8, 0.8, 0.0), (0.9, 0.8, -0.125)])
def test_accuracy_loss_examples(acc, base, expected):
    assert accuracy_loss(acc, base) == pytest.approx(expected, abs=1e-12)


def test_accuracy_loss_rejects_zero_baseline():
    with pytest.raises(ValueError):
        accuracy_loss(0.5, 0.0)


@pytest.mark.parametrize("tpr,fpr", [(-0.1, 0.5), (0.5, 1.1), (float("nan"), 0.2)])
def test_advantage_rejects_out_of_range(tpr, fpr):
    with pytest.raises(ValueError):
        advantage(tpr, fpr)


@given(unit, unit)
def test_advantage_antisymmetric(a, b):
    assert advantage(a, b) == -advantage(b, a)


@given(st.floats(1e-6, 1.0))
def test_accuracy_loss_identity(x):
    assert accuracy_loss(x, x) == 0.0


def test_minmax_examples():
    out, ranges = minmax_normalize(np.array([[2.0], [4.0], [6.0]]))
    np.testing.assert_allclose(out[:, 0], [0, 0.5, 1])
    np.testing.assert_allclose(ranges[0], [2, 6])

    out, ranges = minmax_normalize(np.array([[5.0], [5.0], [5.0]]))
    np.testing.assert_allclose(out[:, 0], [0.5, 0.5, 0.5])
    np.testing.assert_allclose(ranges[0], [5, 5])

    out, _ = minmax_normalize(np.array([[0.0, 10.0], [1.0, 20.0]]))
    np.testing.assert_allclose(out, [[0, 0], [1, 1]])


def test_minmax_rejects_non_finite():
    with pytest.raises(ValueError):
        minmax_normalize(np.array([[1.0], [np.inf]]))


@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3), min_size=2, max_size=20))
def test_minmax_idempotent(rows):
    once, _ = minmax_normalize(np.array(rows))
    twice, _ = minmax_normalize(once)
    varying = np.ptp(once, axis=0) > 0
    np.testing.assert_allclose(twice[:, varying], once[:, varying], atol=1e-12)
    assert np.all((once >= 0) & (once <= 1))


def test_declared_ranges_constant_column():
    r = declared_ranges(np.array([[0.0, 3.0], [2.0, 2.0]]))
    np.testing.assert_array_equal(r, [[0, 1], [0.5, 0.5]])


def test_privacy_budget():
    assert not PrivacyBudget.baseline().is_private
    b = PrivacyBudget(1.0, Stage.S1)
    assert b.is_private and PrivacyBudget.from_dict(b.to_dict()) == b
    for bad in (0.0, -1.0, float("inf"), None):
        with pytest.raises(ValueError):
            PrivacyBudget(bad, Stage.S2)
    with pytest.raises(ValueError):
        PrivacyBudget(1.0, Stage.NONE)


def test_attack_result_invariants():
    r = AttackResult(0.75, 0.25, 4, 4)
    assert r.advantage == 0.5
    with pytest.raises(ValueError):
        AttackResult(0.5, 0.5, 0, 3)


def _ds(**kw):
    args = dict(features=np.array([[0.1, 0.2], [0.3, 0.9]]), labels=np.array([0, 1]),
                feature_ranges=unit_ranges(2), n_classes=2)
    args.update(kw)
    return LabeledDataset(**args)


def test_dataset_invariants():
    ds = _ds()
    assert (ds.n, ds.p) == (2, 2)
    with pytest.raises(ValueError):
        _ds(labels=np.array([0, 2]))
    with pytest.raises(ValueError):
        _ds(features=np.array([[0.1, 1.5], [0.3, 0.9]]))
    with pytest.raises(ValueError):
        _ds(n_classes=1, labels=np.array([0, 0]))
    # noised data may leave its declared range
    assert _ds(features=np.array([[0.1, 1.5], [0.3, 0.9]]), noised=True).n == 2
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


def test_subset_tracks_parent_indices():
    ds = _ds(features=np.linspace(0, 1, 10).reshape(5, 2), labels=np.array([0, 1, 0, 1, 0]))
    sub = ds.subset([4, 1, 2]).subset([0, 2])
    np.testing.assert_array_equal(sub.indices, [4, 2])


def test_seeded_rng_streams():
    a = SeededRng(7, 1).generator().random(5)
    b = SeededRng(7, 1).generator().random(5)
    c = SeededRng(7, 2).generator().random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert SeededRng.derive(7, "x", 1) == SeededRng.derive(7, "x", 1)
    assert stable_hash64("a", 1) != stable_hash64("a", 2)


def test_seeded_streams_uncorrelated():
    a = SeededRng(3, 10).generator().random(50_000)
    b = SeededRng(3, 11).generator().random(50_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.02


def test_as_generator_requires_seed():
    with pytest.raises(ValueError):
        as_generator(None)
    assert isinstance(as_generator(3), np.random.Generator)
