import numpy as np
import pytest
from mvfusion.errors import CorruptMessage, InvalidCount
from mvfusion.internal.data.dataset_io import (
    HEADER,
    attach_ground_truth,
    dataset_from_bytes,
    dataset_to_bytes,
    load_dataset,
    load_delimited,
    save_dataset,
    save_delimited,
    save_ground_truth,
)
from mvfusion.internal.data.synth import MultiViewDataset
from tests.helpers import get_dataset


def assert_same_views(a, b):
    assert a.class_count == b.class_count
    assert a.agent_count == b.agent_count
    for x, y in zip(a.views, b.views):
        assert x.samples.tobytes() == y.samples.tobytes()
        assert np.array_equal(x.labels, y.labels)
        assert np.array_equal(x.object_ids, y.object_ids)


@pytest.mark.data
class TestDatasetFile:
    def test_save_and_load(self, tmp_path):
        dataset = get_dataset(seed=1, identity_views=False, view_dim=5)
        path = str(tmp_path / "dataset.mvds")
        save_dataset(dataset, path)
        loaded = load_dataset(path)

        assert_same_views(dataset, loaded)
        assert loaded.ground_truth is None
        assert not loaded.identity_views

    def test_truncated(self):
        data = dataset_to_bytes(get_dataset())
        for cut in (4, HEADER.size + 4, len(data) - 1):
            with pytest.raises(CorruptMessage):
                dataset_from_bytes(data[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(CorruptMessage):
            dataset_from_bytes(dataset_to_bytes(get_dataset()) + b"\x00")

    def test_bad_magic(self):
        data = dataset_to_bytes(get_dataset())
        with pytest.raises(CorruptMessage):
            dataset_from_bytes(b"NOPE" + data[4:])

    def test_empty_agent_list(self):
        loaded = dataset_from_bytes(dataset_to_bytes(MultiViewDataset(3, ())))
        assert loaded.class_count == 3
        assert loaded.agent_count == 0


@pytest.mark.data
class TestGroundTruthSidecar:
    def test_attach(self, tmp_path):
        dataset = get_dataset(seed=2)
        path = str(tmp_path / "dataset.npz")
        save_ground_truth(dataset, path)
        restored = attach_ground_truth(dataset_from_bytes(dataset_to_bytes(dataset)), path)

        gt, original = restored.ground_truth, dataset.ground_truth
        assert np.array_equal(gt.global_basis.matrix, original.global_basis.matrix)
        assert gt.class_dims == original.class_dims
        assert gt.beta == original.beta
        assert all(np.array_equal(a, b) for a, b in zip(gt.coverage, original.coverage))
        assert restored.identity_views

    def test_missing_ground_truth(self, tmp_path):
        dataset = dataset_from_bytes(dataset_to_bytes(get_dataset()))
        with pytest.raises(InvalidCount):
            save_ground_truth(dataset, str(tmp_path / "none.npz"))


@pytest.mark.data
class TestDelimitedText:
    def test_round_trip(self, tmp_path):
        dataset = get_dataset(seed=4, agents=3)
        paths = [str(tmp_path / "agent_{}.csv".format(i)) for i in range(3)]
        save_delimited(dataset, paths)
        loaded = load_delimited(paths)

        assert loaded.class_count == 2
        assert_same_views(dataset, loaded)

    def test_explicit_class_count(self, tmp_path):
        path = str(tmp_path / "agent.csv")
        np.savetxt(path, [[0.5, 1.5, 0, 10], [2.5, 3.5, 1, 11]], delimiter=",")
        loaded = load_delimited([path], class_count=4)

        assert loaded.class_count == 4
        assert loaded.views[0].samples.shape == (2, 2)
        assert loaded.views[0].object_ids.tolist() == [10, 11]

    def test_non_integer_label(self, tmp_path):
        path = str(tmp_path / "agent.csv")
        np.savetxt(path, [[0.5, 1.5, 0.5, 10]], delimiter=",")
        with pytest.raises(InvalidCount):
            load_delimited([path])

    def test_too_few_columns(self, tmp_path):
        path = str(tmp_path / "agent.csv")
        np.savetxt(path, [[0, 1]], delimiter=",")
        with pytest.raises(InvalidCount):
            load_delimited([path])
