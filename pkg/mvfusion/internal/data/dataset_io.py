"""
Dataset persistence.

Columnar binary file, little endian:

    magic "MVDS", version u16, class_count u32, agent_count u32
    per agent: view_dim u32, m u32, samples (view_dim*m f64, column major),
               labels (m i64), object_ids (m i64)

Ground truth and view maps are not stored in this file; a dataset read back from disk
carries only what an external data source would provide unless the .npz sidecar
written by save_ground_truth is attached.

Small real datasets can be imported from delimited text, one file per agent and one
sample per row: view features, then the integer label, then the integer object id.
"""
import struct

import numpy as np

from mvfusion.constants import DATASET_MAGIC, DATASET_VERSION
from mvfusion.errors import CorruptMessage, InvalidCount
from mvfusion.internal.data.synth import AgentView, GroundTruth, MultiViewDataset
from mvfusion.types import OrthonormalBasis

HEADER = struct.Struct("<4sHII")
BLOCK = struct.Struct("<II")
FLOAT = np.dtype("<f8")
INT = np.dtype("<i8")


def dataset_to_bytes(dataset):
    parts = [HEADER.pack(DATASET_MAGIC, DATASET_VERSION, dataset.class_count, dataset.agent_count)]
    for view in dataset.views:
        parts.append(BLOCK.pack(view.view_dim, view.sample_count))
        parts.append(np.asarray(view.samples, dtype=FLOAT).tobytes(order="F"))
        parts.append(np.asarray(view.labels, dtype=INT).tobytes())
        parts.append(np.asarray(view.object_ids, dtype=INT).tobytes())
    return b"".join(parts)


def _take(buf, offset, dtype, count):
    size = count * dtype.itemsize
    if offset + size > len(buf):
        raise CorruptMessage("dataset file truncated at byte {}".format(offset))
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset).copy(), offset + size


def dataset_from_bytes(data):
    buf = bytes(data)
    if len(buf) < HEADER.size:
        raise CorruptMessage("dataset file shorter than its header")
    magic, version, class_count, agent_count = HEADER.unpack_from(buf, 0)
    if magic != DATASET_MAGIC or version != DATASET_VERSION:
        raise CorruptMessage("not a version {} dataset file".format(DATASET_VERSION))

    offset = HEADER.size
    views = []
    for _ in range(agent_count):
        if offset + BLOCK.size > len(buf):
            raise CorruptMessage("dataset file truncated at byte {}".format(offset))
        view_dim, m = BLOCK.unpack_from(buf, offset)
        offset += BLOCK.size
        samples, offset = _take(buf, offset, FLOAT, view_dim * m)
        labels, offset = _take(buf, offset, INT, m)
        object_ids, offset = _take(buf, offset, INT, m)
        views.append(AgentView(samples.reshape((view_dim, m), order="F"), labels, object_ids))
    if offset != len(buf):
        raise CorruptMessage("{} trailing bytes in dataset file".format(len(buf) - offset))
    return MultiViewDataset(class_count, tuple(views))


def save_dataset(dataset, path):
    with open(path, "wb") as f:
        f.write(dataset_to_bytes(dataset))


def load_dataset(path):
    with open(path, "rb") as f:
        return dataset_from_bytes(f.read())


def load_delimited(paths, class_count=None, delimiter=","):
    views = []
    for path in paths:
        rows = np.loadtxt(path, delimiter=delimiter, ndmin=2)
        if rows.shape[1] < 3:
            raise InvalidCount("{}: need features, label and object id per row".format(path))
        labels = rows[:, -2].astype(np.int64)
        object_ids = rows[:, -1].astype(np.int64)
        if not (np.array_equal(labels, rows[:, -2]) and np.array_equal(object_ids, rows[:, -1])):
            raise InvalidCount("{}: label and object id columns must be integers".format(path))
        views.append(AgentView(rows[:, :-2].T.copy(), labels, object_ids))
    if class_count is None:
        class_count = int(max(v.labels.max() for v in views if v.labels.size)) + 1
    return MultiViewDataset(class_count, tuple(views))


def save_delimited(dataset, paths, delimiter=","):
    for view, path in zip(dataset.views, paths):
        rows = np.hstack([view.samples.T, view.labels[:, None], view.object_ids[:, None]])
        np.savetxt(path, rows, delimiter=delimiter, fmt="%.17g")


def save_ground_truth(dataset, path):
    """Ground truth and view maps go to a separate .npz next to the dataset file."""
    gt = dataset.ground_truth
    if gt is None:
        raise InvalidCount("dataset carries no ground truth")
    arrays = {
        "global_basis": gt.global_basis.matrix,
        "class_dims": np.asarray(gt.class_dims, dtype=np.int64),
        "beta": np.asarray(gt.beta),
    }
    for i, o in enumerate(gt.coverage):
        arrays["coverage_{}".format(i)] = o
    for i, a in enumerate(dataset.view_maps):
        arrays["view_map_{}".format(i)] = a
    np.savez(path, **arrays)


def attach_ground_truth(dataset, path):
    with np.load(path) as data:
        coverage = tuple(data["coverage_{}".format(i)] for i in range(dataset.agent_count))
        maps = tuple(
            data["view_map_{}".format(i)]
            for i in range(dataset.agent_count)
            if "view_map_{}".format(i) in data
        )
        gt = GroundTruth(
            OrthonormalBasis(data["global_basis"]),
            tuple(int(c) for c in data["class_dims"]),
            coverage,
            float(data["beta"]),
        )
    return MultiViewDataset(dataset.class_count, dataset.views, gt, maps)
