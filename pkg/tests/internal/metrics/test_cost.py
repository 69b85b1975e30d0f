import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from mvfusion.errors import InvalidCount
from mvfusion.internal.data.synth import membership_from_labels
from mvfusion.internal.fusion.basis_fusion import FusionConfig, identity_projectors
from mvfusion.internal.metrics.cost import (
    CostEstimate,
    fusion_cost_estimate,
    measure_fusion_time,
    predicted_cost,
)
from tests.constants import COST_EXAMPLE
from tests.helpers import get_dataset, unit_features


@pytest.mark.metrics
class TestPredictedCost:
    def test_reference_configuration(self):
        per_class = predicted_cost(
            COST_EXAMPLE["sample_count"],
            COST_EXAMPLE["feature_dim"],
            COST_EXAMPLE["agent_count"],
            COST_EXAMPLE["local_ranks"],
            COST_EXAMPLE["fused_ranks"],
        )
        assert len(per_class) == 10
        assert sum(per_class) == COST_EXAMPLE["predicted"]
        assert all(isinstance(c, int) for c in per_class)

    def test_unit_ranks(self):
        # single agent, single class, p = P = 1
        assert predicted_cost(50, 7, 1, [1], [1]) == (50 * 7 + 7,)

    @given(
        m=st.integers(min_value=0, max_value=10 ** 6),
        extra=st.integers(min_value=1, max_value=10 ** 6),
        d=st.integers(min_value=1, max_value=512),
    )
    @settings(max_examples=100)
    def test_linear_in_sample_count(self, m, extra, d):
        base = sum(predicted_cost(m, d, 3, [2, 4], [3, 8]))
        grown = sum(predicted_cost(m + extra, d, 3, [2, 4], [3, 8]))
        assert grown - base == extra * d * (2 + 4)

    def test_mismatched_ranks(self):
        with pytest.raises(InvalidCount):
            predicted_cost(10, 4, 2, [1, 2], [2])

    @pytest.mark.parametrize("args", [(-1, 4, 2), (10, 4.5, 2), (10, 4, -2)])
    def test_invalid_inputs(self, args):
        with pytest.raises(InvalidCount):
            predicted_cost(*args, [1], [1])


@pytest.mark.metrics
class TestFusionCostEstimate:
    def test_from_dataset(self):
        dataset = get_dataset(seed=0, agents=3, objects_per_class=5)
        cfg = FusionConfig(8, local_rank=2, fused_rank=3, class_overrides={1: {"fused_rank": 4}})
        estimate = fusion_cost_estimate(cfg, dataset)

        assert estimate.sample_count == 30
        assert estimate.per_class == (30 * 8 * 2 + 3 * 8 * 2 * 3, 30 * 8 * 2 + 3 * 8 * 2 * 4)
        assert estimate.predicted == sum(estimate.per_class)
        assert estimate.as_dict()["measured_seconds"] is None

    def test_as_dict(self):
        estimate = CostEstimate(4, 2, 1, (3, 5), measured_seconds=0.5)
        assert estimate.as_dict() == {
            "sample_count": 4,
            "feature_dim": 2,
            "agent_count": 1,
            "per_class": [3, 5],
            "predicted_flops": 8,
            "measured_seconds": 0.5,
        }


@pytest.mark.metrics
class TestMeasureFusionTime:
    def test_positive(self):
        rng = np.random.default_rng(0)
        features = [unit_features(rng, 8, 12).matrix for _ in range(2)]
        partitions = [membership_from_labels(np.arange(12) % 2, 2)] * 2
        cfg = FusionConfig(8, local_rank=2, fused_rank=3)
        seconds = measure_fusion_time(features, partitions, cfg, identity_projectors(8, 2), 2)
        assert 0.0 < seconds < float("inf")
