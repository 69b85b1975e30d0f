"""Evaluation metrics for learned features."""
from dataclasses import dataclass, field

import numpy as np

from mvfusion.constants import UNIT_NORM_TOL
from mvfusion.errors import DimensionMismatch, InvalidCount, InvalidMatrix, MetricUnavailable
from mvfusion.internal.rate.coding_rate import projector_matrix
from mvfusion.types import feature_array


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    values: np.ndarray
    labels: np.ndarray
    object_ids: np.ndarray
    agents: np.ndarray

    @property
    def size(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class EvalSummary:
    acc: float
    sis: float
    dis: float
    fisher_ratio: float
    # {class_id: {"containment": ..., "rank": ...}}
    class_diagnostics: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "acc": self.acc,
            "sis": self.sis,
            "dis": self.dis,
            "fisher_ratio": self.fisher_ratio,
            "class_diagnostics": {str(k): v for k, v in self.class_diagnostics.items()},
        }


def _pool(features, labels, object_ids):
    if not (len(features) == len(labels) == len(object_ids)):
        raise InvalidCount("features, labels and object ids must have one entry per agent")
    columns, lab, obj, agent = [], [], [], []
    for i, (z, y, o) in enumerate(zip(features, labels, object_ids)):
        z = feature_array(z)
        columns.append(z)
        lab.append(np.asarray(y, dtype=np.int64))
        obj.append(np.asarray(o, dtype=np.int64))
        agent.append(np.full(z.shape[1], i, dtype=np.int64))
    return np.hstack(columns), np.concatenate(lab), np.concatenate(obj), np.concatenate(agent)


def cosine_similarity_matrix(features, labels, object_ids):
    """
    Gram matrix of the pooled unit-norm feature columns of all agents, ordered by
    (class, object id, agent).
    """
    z, lab, obj, agent = _pool(features, labels, object_ids)
    order = np.lexsort((agent, obj, lab))
    z = z[:, order]
    gram = z.T @ z
    gram = 0.5 * (gram + gram.T)
    worst = float(np.max(np.abs(np.sqrt(np.diag(gram)) - 1.0), initial=0.0))
    if worst > UNIT_NORM_TOL:
        raise InvalidMatrix("feature columns must have unit norm (off by {:.3e})".format(worst))
    return SimilarityMatrix(gram, lab[order], obj[order], agent[order])


def block_means(sim):
    """Mean |cosine| over same-class and over different-class off-diagonal entries."""
    same = sim.labels[:, None] == sim.labels[None, :]
    off_diag = ~np.eye(sim.size, dtype=bool)
    magnitude = np.abs(sim.values)
    within = magnitude[same & off_diag]
    across = magnitude[~same]
    return (
        float(within.mean()) if within.size else 0.0,
        float(across.mean()) if across.size else 0.0,
    )


def nearest_subspace_classify(z, projectors, labels=None):
    """argmax_k |P_k z|^2 per column, ties to the lowest class index."""
    z = feature_array(z)
    scores = np.stack([np.sum(z * (projector_matrix(p) @ z), axis=0) for p in projectors])
    predicted = np.argmax(scores, axis=0)
    if labels is None:
        return predicted, None
    labels = np.asarray(labels)
    if labels.size != predicted.size:
        raise DimensionMismatch("{} labels for {} samples".format(labels.size, predicted.size))
    acc = float(np.mean(predicted == labels)) if labels.size else 0.0
    return predicted, acc


def same_object_similarity(features, object_ids):
    """Mean cosine over pairs of views of the same object held by different agents."""
    if object_ids is None or any(o is None for o in object_ids):
        raise MetricUnavailable("SIS needs the object alignment index")
    lookups = []
    for z, ids in zip(features, object_ids):
        z = feature_array(z)
        lookups.append({obj: z[:, j] for j, obj in enumerate(np.asarray(ids).tolist())})
    total, pairs = 0.0, 0
    for a in range(len(lookups)):
        for b in range(a + 1, len(lookups)):
            for obj in sorted(set(lookups[a]) & set(lookups[b])):
                total += float(lookups[a][obj] @ lookups[b][obj])
                pairs += 1
    if pairs == 0:
        raise MetricUnavailable("no object is seen by two agents")
    return total / pairs


def different_object_similarity(features, labels):
    """Per agent: mean cosine over same-class pairs of distinct samples; then averaged."""
    per_agent = []
    for z, y in zip(features, labels):
        z = feature_array(z)
        y = np.asarray(y)
        total, pairs = 0.0, 0
        for k in np.unique(y):
            zk = z[:, y == k]
            n = zk.shape[1]
            if n < 2:
                continue
            gram = zk.T @ zk
            total += float(gram.sum() - np.trace(gram))
            pairs += n * (n - 1)
        if pairs:
            per_agent.append(total / pairs)
    return float(np.mean(per_agent)) if per_agent else 0.0


def fisher_ratio(features, labels):
    """tr(S_between) / tr(S_within) over all pooled features; +inf when S_within vanishes."""
    z = np.hstack([feature_array(f) for f in features])
    y = np.concatenate([np.asarray(l) for l in labels])
    mean = z.mean(axis=1, keepdims=True)
    between, within = 0.0, 0.0
    for k in np.unique(y):
        zk = z[:, y == k]
        mk = zk.mean(axis=1, keepdims=True)
        between += zk.shape[1] * float(np.sum((mk - mean) ** 2))
        within += float(np.sum((zk - mk) ** 2))
    if within <= 1e-15:
        return float("inf")
    return between / within


def sis_dis_fisher(features, object_ids, labels):
    """(SIS, DIS, FR). Raises MetricUnavailable when the alignment index is missing."""
    return (
        same_object_similarity(features, object_ids),
        different_object_similarity(features, labels),
        fisher_ratio(features, labels),
    )


def summarize(features, object_ids, labels, projectors, class_diagnostics=None):
    """
    EvalSummary over all agents: accuracy of the nearest-subspace rule on the pooled
    features, SIS (nan when the data carries no alignment), DIS and FR.
    """
    pooled = np.hstack([feature_array(f) for f in features])
    pooled_labels = np.concatenate([np.asarray(y) for y in labels])
    _, acc = nearest_subspace_classify(pooled, projectors, pooled_labels)
    try:
        sis = same_object_similarity(features, object_ids)
    except MetricUnavailable:
        sis = float("nan")
    return EvalSummary(
        acc=acc,
        sis=sis,
        dis=different_object_similarity(features, labels),
        fisher_ratio=fisher_ratio(features, labels),
        class_diagnostics=dict(class_diagnostics or {}),
    )
