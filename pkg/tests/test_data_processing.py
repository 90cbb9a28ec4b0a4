import numpy as np
import pytest

from podn.errors import DatasetFormatError, InfeasiblePackingError, ShapeError, SplitError
from podn.model import ModelConfig
from podn.prototypes import LossWeights, TrainConfig, train_initial
from utils.data_processing import (
    Dataset,
    generate_synthetic,
    load_dataset,
    open_split,
    sample_stream_prefix,
    save_dataset,
)


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_dataset_well_formed(tmp_path):
    path = write(tmp_path, "label,f0,f1\ncat,1.5,-2\n007,0.1,3e2\ncat,4,5\n")
    data = load_dataset(path)
    assert len(data) == 3 and data.feature_dim == 2
    np.testing.assert_array_equal(data.ids, [0, 1, 2])
    assert data.labels.tolist() == ["cat", "007", "cat"]
    assert data.features.dtype == np.float64
    np.testing.assert_array_equal(data.features, [[1.5, -2.0], [0.1, 300.0], [4.0, 5.0]])
    assert data.label_registry == ["007", "cat"]


def test_load_dataset_short_row_names_the_line(tmp_path):
    path = write(tmp_path, "label,f0,f1\na,1,2\nb,3\na,4,5\n")
    with pytest.raises(DatasetFormatError, match="line 3"):
        load_dataset(path)


def test_load_dataset_non_numeric_cell(tmp_path):
    path = write(tmp_path, "label,f0\na,1\nb,zz\n")
    with pytest.raises(DatasetFormatError, match="line 3"):
        load_dataset(path)


def test_load_dataset_skips_blank_lines_but_counts_them(tmp_path):
    data = load_dataset(write(tmp_path, "label,f0,f1\na,1,2\n\nb,3,4\n"))
    assert data.labels.tolist() == ["a", "b"]
    np.testing.assert_array_equal(data.ids, [0, 1])
    with pytest.raises(DatasetFormatError, match="line 5"):
        load_dataset(write(tmp_path, "label,f0,f1\na,1,2\n\nb,3,4\nc,,6\n"))


@pytest.mark.parametrize("cell", ["inf", "-inf"])
def test_load_dataset_rejects_infinite_features(tmp_path, cell):
    path = write(tmp_path, f"label,f0,f1\na,1,2\nb,3,{cell}\n")
    with pytest.raises(DatasetFormatError, match="line 3: features must be finite"):
        load_dataset(path)


@pytest.mark.parametrize("text", ["label,x0,x1\na,1,2\n", "f0,label\n1,a\n", "label,f1\na,1\n", "label\na\n"])
def test_load_dataset_bad_header(tmp_path, text):
    with pytest.raises(DatasetFormatError, match="header"):
        load_dataset(write(tmp_path, text))


def test_load_dataset_empty_file(tmp_path):
    with pytest.raises(DatasetFormatError):
        load_dataset(write(tmp_path, ""))


def test_load_dataset_warns_on_extension(tmp_path, caplog):
    path = write(tmp_path, "label,f0\na,1\n", name="data.txt")
    with caplog.at_level("WARNING"):
        assert len(load_dataset(path)) == 1
    assert "does not end in .csv" in caplog.text


def test_save_then_load_is_exact(tmp_path, rng):
    data = Dataset(np.arange(6), ["x", "y", "x", "z", "y", "x"], rng.normal(size=(6, 3)) * 1e3)
    restored = load_dataset(save_dataset(data, tmp_path / "round.csv"))
    np.testing.assert_array_equal(restored.features, data.features)
    np.testing.assert_array_equal(restored.labels, data.labels)


def test_dataset_validation():
    with pytest.raises(ShapeError):
        Dataset([0, 1], ["a"], np.zeros((2, 2)))
    with pytest.raises(DatasetFormatError):
        Dataset([0, 0], ["a", "b"], np.zeros((2, 2)))


def test_generate_two_clusters_are_separated():
    data = generate_synthetic(n_clusters=2, dim=2, per_cluster=2000, separation=10.0, sigma=1.0, seed=0)
    means = [data.features[data.labels == label].mean(axis=0) for label in ("c00", "c01")]
    assert np.linalg.norm(means[0] - means[1]) >= 9.8
    assert data.label_registry == ["c00", "c01"]


def test_generate_is_deterministic_per_seed():
    a = generate_synthetic(n_clusters=3, dim=4, per_cluster=10, seed=5)
    b = generate_synthetic(n_clusters=3, dim=4, per_cluster=10, seed=5)
    c = generate_synthetic(n_clusters=3, dim=4, per_cluster=10, seed=6)
    np.testing.assert_array_equal(a.features, b.features)
    assert not np.array_equal(a.features, c.features)


def test_generate_infeasible_packing():
    with pytest.raises(InfeasiblePackingError):
        generate_synthetic(n_clusters=3, dim=1, per_cluster=5)


def test_generate_rejects_bad_arguments():
    with pytest.raises(ValueError):
        generate_synthetic(n_clusters=1)
    with pytest.raises(ValueError):
        generate_synthetic(separation=0.0)


@pytest.mark.slow
def test_reference_clusters_are_separable():
    data = generate_synthetic(n_clusters=11, dim=16, per_cluster=100, separation=6.0, sigma=1.0, seed=0)
    closed = TrainConfig(epochs=30, weights=LossWeights(1.0, 0.0, 0.0), seed=1)
    _, _, log = train_initial(data, ModelConfig(input_dim=16, hidden_dims=(32,), seed=2), closed)
    assert log[-1]["train_accuracy"] >= 0.99


@pytest.fixture(scope="module")
def reference_data():
    return generate_synthetic(n_clusters=11, dim=16, per_cluster=100, separation=6.0, sigma=1.0, seed=0)


def test_open_split_reference_protocol(reference_data):
    split = open_split(reference_data, known_count=6, min_incremental=10, test_fraction=0.3, seed=1)
    assert len(split.known_labels) == 6 and len(split.unknown_labels) == 5
    assert set(split.known_labels).isdisjoint(split.unknown_labels)

    counts = {label: int((split.incremental.labels == label).sum()) for label in reference_data.label_registry}
    assert min(counts.values()) >= 10
    assert set(split.initial.labels.tolist()) == set(split.known_labels)
    assert set(split.test.labels.tolist()) == set(reference_data.label_registry)
    assert split.sizes["c00"][1:] == (10, 30)
    assert split.discarded == 5 * 60

    used = np.concatenate([split.initial.ids, split.incremental.ids, split.test.ids])
    assert len(np.unique(used)) == used.size


def test_open_split_never_leaks_unknowns_into_initial(reference_data):
    for seed in range(10):
        split = open_split(reference_data, 6, seed=seed)
        assert not np.isin(split.initial.labels, split.unknown_labels).any()


def test_open_split_stream_hides_labels(reference_data):
    split = open_split(reference_data, 6, seed=2)
    ids, X = split.stream()
    assert all(isinstance(i, int) for i in ids)
    assert X.shape == (len(ids), 16)
    oracle = split.oracle_labels()
    assert sorted(oracle) == sorted(ids)
    assert split.test_unknown_mask().sum() == 5 * 30


def test_open_split_is_deterministic(reference_data):
    a, b = open_split(reference_data, 6, seed=3), open_split(reference_data, 6, seed=3)
    assert a.known_labels == b.known_labels
    for part in ("initial", "incremental", "test"):
        np.testing.assert_array_equal(getattr(a, part).ids, getattr(b, part).ids)


def test_open_split_small_category():
    data = generate_synthetic(n_clusters=3, dim=4, per_cluster=8, seed=0)
    with pytest.raises(SplitError, match="needs at least"):
        open_split(data, known_count=2, min_incremental=10)


@pytest.mark.parametrize("known_count", [0, 11])
def test_open_split_known_count_range(reference_data, known_count):
    with pytest.raises(SplitError):
        open_split(reference_data, known_count)


def test_sample_stream_prefix(reference_data):
    split = open_split(reference_data, 6, seed=4)
    prefix = sample_stream_prefix(split, 7)
    assert len(prefix) == len(split.initial) + 7
    np.testing.assert_array_equal(prefix.ids[-7:], split.incremental.ids[:7])
    assert len(sample_stream_prefix(split, 10_000)) == len(split.initial) + len(split.incremental)
