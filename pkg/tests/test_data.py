import numpy as np
import pytest

from dptradeoff.core import unit_ranges
from dptradeoff.data import (SplitSpec, NonNumericCellError, RaggedRowError, generate_synthetic,
                             kmeans_label, load_csv, load_dataset_csv, ratings_recipe,
                             relabel_transactions, sample_split, synthetic_family,
                             write_dataset_csv, write_family)
from dptradeoff.core import LabeledDataset

from oracles import brute_force_two_partition, same_partition


def test_generate_synthetic_shape_and_range():
    X = generate_synthetic(1, 1, 3)
    assert X.shape == (1, 1) and 0 <= X[0, 0] <= 1
    X = generate_synthetic(10_000, 50, 5)
    assert X.shape == (10_000, 50)
    assert np.all((X >= 0) & (X <= 1))
    assert np.all(np.abs(X.mean(axis=0) - 0.5) < 0.02)


def test_kmeans_six_point_matches_brute_force():
    x = np.array([0, 0.01, 0.02, 0.98, 0.99, 1.0])
    labels, model = kmeans_label(x[:, None], 2, seed=0)
    sse, mask = brute_force_two_partition(x)
    assert same_partition(labels, mask)
    assert model.inertia == pytest.approx(sse, abs=1e-12)
    again, _ = kmeans_label(x[:, None], 2, seed=0)
    np.testing.assert_array_equal(labels, again)


def is_lloyd_fixed_point(x, labels):
    means = np.array([x[labels == c].mean() for c in (0, 1)])
    nearest = np.abs(x[:, None] - means[None, :]).argmin(axis=1)
    return np.array_equal(nearest, labels)


def test_kmeans_small_instances_optimal_or_local_optimum():
    hits = 0
    for seed in range(30):
        rng = np.random.default_rng(seed)
        x = rng.random(int(rng.integers(3, 9)))
        labels, model = kmeans_label(x[:, None], 2, seed=seed)
        optimum = brute_force_two_partition(x)[0]
        assert model.inertia >= optimum - 1e-12
        if model.inertia == pytest.approx(optimum, abs=1e-9):
            hits += 1
        else:
            assert is_lloyd_fixed_point(x, labels)
    assert hits >= 25


def test_kmeans_k_equals_n():
    X = np.random.default_rng(0).random((6, 3))
    labels, model = kmeans_label(X, 6, seed=1)
    assert sorted(labels) == list(range(6))
    assert model.inertia == pytest.approx(0.0, abs=1e-12)


def test_kmeans_rejects_k_above_n():
    with pytest.raises(ValueError):
        kmeans_label(np.zeros((3, 1)) + np.arange(3)[:, None], 4, seed=0)


def test_kmeans_inertia_non_increasing_and_classes_nonempty():
    X = np.random.default_rng(2).random((400, 5))
    labels, model = kmeans_label(X, 20, seed=3)
    assert np.all(np.bincount(labels, minlength=20) > 0)
    trace = np.array(model.inertia_trace)
    assert np.all(np.diff(trace) <= 1e-9)


def test_kmeans_duplicate_points_still_fill_classes():
    X = np.array([[0.0], [0.0], [0.0], [1.0], [1.0], [0.5]])
    labels, _ = kmeans_label(X, 3, seed=0)
    assert np.all(np.bincount(labels, minlength=3) > 0)


def test_synthetic_family_shares_vectors():
    fam = synthetic_family(300, 4, (2, 5), seed=9)
    assert set(fam) == {2, 5}
    np.testing.assert_array_equal(fam[2].features, fam[5].features)
    assert fam[5].n_classes == 5 and fam[5].name == "synthetic_k5"


def test_relabel_transactions():
    X = np.array([[0, 0], [0, 0.1], [1, 1], [1, 0.9]], dtype=float)
    fam = relabel_transactions(X, [2], seed=0)
    assert np.bincount(fam[2].labels).tolist() == [2, 2]
    assert same_partition(fam[2].labels, [0, 0, 1, 1])
    assert relabel_transactions(X, [], seed=0) == {}
    with pytest.raises(ValueError):
        relabel_transactions(X * 2, [2], seed=0)


def test_relabel_transactions_five_ks():
    X = (np.random.default_rng(0).random((300, 8)) > 0.7).astype(float)
    fam = relabel_transactions(X, (2, 10, 20, 50, 100), seed=1)
    assert sorted(fam) == [2, 10, 20, 50, 100]


def test_ratings_recipe():
    R = np.array([[5, 0, np.nan, 1], [0, 0, 0, 2], [3, 4, 0, 0], [0, 0, 0, 0]], dtype=float)
    out = ratings_recipe(R, top_m=2)
    # columns 0 and 3 are rated twice each; user 3 has nothing left
    assert out.shape == (3, 2)
    assert out.min() == 0 and out.max() == 1


def test_load_csv_examples(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2\n3,4\n5,6\n")
    M, y = load_csv(p)
    assert M.shape == (3, 2) and y is None

    p.write_text("0.1,0.2,1\n")
    X, y = load_csv(p, label_column=-1)
    np.testing.assert_allclose(X, [[0.1, 0.2]])
    assert y.tolist() == [1]

    p.write_text("a,b\n1,2\n")
    M, _ = load_csv(p, has_header=True)
    assert M.shape == (1, 2)


def test_load_csv_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "missing.csv")
    p = tmp_path / "ragged.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises(RaggedRowError, match=":2:"):
        load_csv(p)
    p.write_text("1,2\n3,x\n")
    with pytest.raises(NonNumericCellError, match="column 2"):
        load_csv(p)


def test_dataset_csv_round_trip(tmp_path):
    fam = synthetic_family(60, 3, (2, 4), seed=1)
    paths = write_family(fam, tmp_path, "syn")
    assert [p.name for p in paths] == ["syn_k2.csv", "syn_k4.csv"]
    X, y = load_csv(paths[1], label_column=-1)
    np.testing.assert_array_equal(X, fam[4].features)
    np.testing.assert_array_equal(y, fam[4].labels)
    ds = load_dataset_csv(paths[1])
    assert ds.p == 3 and ds.n == 60


def test_sample_split_disjoint_and_sized():
    fam = synthetic_family(500, 2, (2,), seed=0)
    ds = fam[2]
    tr, te = sample_split(ds, SplitSpec(200, 250, 1))
    assert tr.n == 200 and te.n == 250
    assert not set(tr.indices) & set(te.indices)
    tr2, _ = sample_split(ds, SplitSpec(200, 250, 2))
    assert set(tr.indices) != set(tr2.indices)


def test_sample_split_full_train():
    ds = LabeledDataset(np.linspace(0, 1, 10)[:, None], np.arange(10) % 2, unit_ranges(1), 2)
    tr, te = sample_split(ds, SplitSpec(10, 0, 3))
    assert te is None and sorted(tr.indices) == list(range(10))
    with pytest.raises(ValueError):
        sample_split(ds, SplitSpec(8, 3, 0))


def test_write_dataset_csv_has_label_last(tmp_path):
    ds = LabeledDataset(np.array([[0.25, 0.5]]), np.array([1]), unit_ranges(2), 2)
    text = write_dataset_csv(ds, tmp_path / "x.csv").read_text().strip()
    assert text == "0.25,0.5,1"
