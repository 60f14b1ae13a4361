import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waumkit.data import (
    CrowdDataset,
    DatasetFormatError,
    DimensionError,
    ValidationError,
    annotator_sets,
    dump_votes,
    load_dataset,
    save_dataset,
    tasks_sets,
)

from conftest import random_dataset


def test_structural_reading():
    d = CrowdDataset.from_votes({0: {0: 1, 2: 1}, 1: {1: 0}}, np.zeros((2, 1)), 2)
    assert annotator_sets(d) == {0: [0, 2], 1: [1]}
    assert tasks_sets(d)[1] == [1]
    assert d.n_worker == 3 and d.n_task == 2 and d.n_vote == 3


def test_empty_votes_rejected():
    with pytest.raises(ValidationError, match="no tasks"):
        CrowdDataset.from_votes({}, np.zeros((0, 1)), 2)


def test_class_out_of_range_named():
    with pytest.raises(ValidationError, match="5"):
        CrowdDataset.from_votes({0: {0: 5}}, np.zeros((1, 1)), 3)


def test_negative_worker_rejected():
    with pytest.raises(ValidationError):
        CrowdDataset.from_votes({0: {-1: 0}}, np.zeros((1, 1)), 2)


def test_too_few_feature_rows():
    with pytest.raises(DimensionError):
        CrowdDataset.from_votes({0: {0: 0}, 3: {0: 1}}, np.zeros((2, 1)), 2)


def test_task_without_votes_rejected():
    with pytest.raises(ValidationError):
        CrowdDataset.from_votes({0: {0: 0}, 2: {0: 1}}, np.zeros((3, 1)), 2)


def test_small_figure_structure():
    # worker 3 labels tasks 1 and 3; task 3 is labeled by workers 1, 3 and 4
    votes = {0: {0: 0, 2: 1}, 1: {3: 1, 4: 0}, 2: {2: 2}, 3: {1: 1, 3: 2, 4: 1}}
    d = CrowdDataset.from_votes(votes, np.zeros((4, 2)), 3)
    assert tasks_sets(d)[3] == [1, 3]
    assert annotator_sets(d)[3] == [1, 3, 4]


def test_single_vote_sets():
    d = CrowdDataset.from_votes({0: {0: 0}}, np.zeros((1, 1)), 2)
    assert annotator_sets(d) == {0: [0]}
    assert tasks_sets(d) == {0: [0]}


def test_full_annotation_sets():
    d = CrowdDataset.from_votes({i: {0: 0, 1: 1} for i in range(3)}, np.zeros((3, 1)), 2)
    assert all(len(a) == 2 for a in annotator_sets(d).values())
    assert all(len(t) == 3 for t in tasks_sets(d).values())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_sets_are_inverse(seed):
    d = random_dataset(seed)
    A, T = annotator_sets(d), tasks_sets(d)
    pairs_a = {(i, j) for i, ws in A.items() for j in ws}
    pairs_t = {(i, j) for j, ts in T.items() for i in ts}
    assert pairs_a == pairs_t
    assert sum(map(len, A.values())) == sum(map(len, T.values())) == d.n_vote


def test_vote_arrays_sorted_and_readonly(small_dataset):
    d = small_dataset
    key = d.vote_task * d.n_worker + d.vote_worker
    assert np.all(np.diff(key) > 0)
    with pytest.raises(ValueError):
        d.vote_label[0] = 1


def test_subset_renumbers_tasks(small_dataset):
    sub = small_dataset.subset([2, 5])
    assert sub.n_task == 2 and sub.n_worker == small_dataset.n_worker
    assert sub.votes[0] == small_dataset.votes[2]
    assert np.array_equal(sub.features[1], small_dataset.features[5])


def test_round_trip_byte_identical(tmp_path):
    d = random_dataset(3)
    save_dataset(d, tmp_path / "v.json", tmp_path / "f.csv")
    d2 = load_dataset(tmp_path / "v.json", tmp_path / "f.csv", d.n_class)
    save_dataset(d2, tmp_path / "v2.json", tmp_path / "f2.csv")
    assert (tmp_path / "v.json").read_bytes() == (tmp_path / "v2.json").read_bytes()
    assert (tmp_path / "f.csv").read_bytes() == (tmp_path / "f2.csv").read_bytes()
    assert np.array_equal(d.features, d2.features)


def test_dump_is_canonical():
    d = CrowdDataset.from_votes({1: {0: 1}, 0: {2: 0, 1: 1}}, np.zeros((2, 1)), 2)
    assert dump_votes(d) == '{"0":{"1":1,"2":0},"1":{"0":1}}'


def test_ground_truth_kept_apart(tmp_path):
    d = random_dataset(4)
    d = CrowdDataset.from_votes(d.votes, d.features, d.n_class,
                                ground_truth=np.zeros(d.n_task, dtype=int))
    assert d.without_ground_truth().ground_truth is None
    save_dataset(d, tmp_path / "v.json", ground_truth_path=tmp_path / "gt.csv")
    assert "ground" not in (tmp_path / "v.json").read_text()


def test_malformed_json_has_line_context(tmp_path):
    (tmp_path / "v.json").write_text('{"0": {"0": 1},\n "1": {"0": }}')
    np.savetxt(tmp_path / "f.csv", np.zeros((2, 1)), delimiter=",")
    with pytest.raises(DatasetFormatError, match=r"v\.json:2:"):
        load_dataset(tmp_path / "v.json", tmp_path / "f.csv", 2)


def test_duplicate_vote_rejected(tmp_path):
    (tmp_path / "v.json").write_text('{"0": {"0": 1, "0": 0}}')
    np.savetxt(tmp_path / "f.csv", np.zeros((1, 1)), delimiter=",")
    with pytest.raises(DatasetFormatError, match="duplicate"):
        load_dataset(tmp_path / "v.json", tmp_path / "f.csv", 2)


def test_non_integer_class_rejected(tmp_path):
    (tmp_path / "v.json").write_text(json.dumps({"0": {"0": 1.5}}))
    np.savetxt(tmp_path / "f.csv", np.zeros((1, 1)), delimiter=",")
    with pytest.raises(ValidationError):
        load_dataset(tmp_path / "v.json", tmp_path / "f.csv", 2)
