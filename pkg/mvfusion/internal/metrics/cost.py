"""
Extra computation caused by basis exchange. Per class k, every agent's truncated SVD
of its d x m_i features costs about m_i d p_k and the fusion SVD of the d x N p_k
concatenation about N d p_k P_k, so one round costs

    sum_k (M d p_k + N d p_k P_k),    M = sum_i m_i
"""
import time
from dataclasses import dataclass

from mvfusion.errors import InvalidCount
from mvfusion.internal.fusion.basis_fusion import extract_local_basis, fuse_round


@dataclass(frozen=True)
class CostEstimate:
    sample_count: int
    feature_dim: int
    agent_count: int
    per_class: tuple
    measured_seconds: float = None

    @property
    def predicted(self):
        return sum(self.per_class)

    def as_dict(self):
        return {
            "sample_count": self.sample_count,
            "feature_dim": self.feature_dim,
            "agent_count": self.agent_count,
            "per_class": list(self.per_class),
            "predicted_flops": self.predicted,
            "measured_seconds": self.measured_seconds,
        }


def predicted_cost(sample_count, feature_dim, agent_count, local_ranks, fused_ranks):
    if len(local_ranks) != len(fused_ranks):
        raise InvalidCount("need one fused rank per local rank")
    for value in (sample_count, feature_dim, agent_count):
        if int(value) != value or value < 0:
            raise InvalidCount("cost inputs must be non-negative integers, got {}".format(value))
    m, d, n = int(sample_count), int(feature_dim), int(agent_count)
    return tuple(m * d * int(p) + n * d * int(p) * int(q) for p, q in zip(local_ranks, fused_ranks))


def fusion_cost_estimate(cfg, dataset):
    """`cfg` is a FusionConfig; the dataset provides N, K and M."""
    classes = range(dataset.class_count)
    m = sum(view.sample_count for view in dataset.views)
    per_class = predicted_cost(
        m,
        cfg.feature_dim,
        dataset.agent_count,
        [cfg.local_rank_for(c) for c in classes],
        [cfg.fused_rank_for(c) for c in classes],
    )
    return CostEstimate(m, cfg.feature_dim, dataset.agent_count, per_class)


def measure_fusion_time(features, partitions, cfg, previous, repeats=3):
    """
    Best wall time over `repeats` of one round of local extraction and fusion on the
    given per-agent features.
    """
    best = float("inf")
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        messages = []
        for i, (z, part) in enumerate(zip(features, partitions)):
            for c in range(part.class_count):
                idx = part.indices(c)
                if idx.size == 0:
                    continue
                p = min(cfg.local_rank_for(c), idx.size, z.shape[0])
                messages.append(extract_local_basis(z[:, idx], p, agent_id=i, class_id=c))
        fuse_round(messages, cfg, len(features), previous)
        best = min(best, time.perf_counter() - start)
    return best
