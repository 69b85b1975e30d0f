import json

import numpy as np
from mvfusion.internal.data.synth import membership_from_labels
from mvfusion.internal.fusion.basis_fusion import FusionConfig, identity_projectors
from mvfusion.internal.metrics.cost import measure_fusion_time, predicted_cost
from mvfusion.types import FeatureMatrix

CLASSES = 4
SAMPLES_PER_AGENT = 400

costLog = {
    "agents.2.d.32.p.4.P.8": None,
    "agents.4.d.32.p.4.P.8": None,
    "agents.8.d.32.p.4.P.8": None,
    "agents.4.d.64.p.4.P.8": None,
    "agents.4.d.128.p.4.P.8": None,
    "agents.4.d.64.p.8.P.16": None,
    "agents.4.d.64.p.16.P.32": None,
}


def random_agents(rng, agents, d):
    features, partitions = [], []
    for _ in range(agents):
        z = rng.standard_normal((d, SAMPLES_PER_AGENT))
        features.append(FeatureMatrix.normalized(z).matrix)
        labels = rng.integers(0, CLASSES, size=SAMPLES_PER_AGENT)
        partitions.append(membership_from_labels(labels, CLASSES))
    return features, partitions


def log_cost(key, rng):
    _, agents, _, d, _, p, _, fused = key.split(".")
    agents, d, p, fused = int(agents), int(d), int(p), int(fused)
    cfg = FusionConfig(d, p, fused)
    features, partitions = random_agents(rng, agents, d)
    per_class = predicted_cost(
        agents * SAMPLES_PER_AGENT, d, agents, [p] * CLASSES, [fused] * CLASSES
    )
    costLog[key] = {
        "predicted_flops": sum(per_class),
        "measured_seconds": measure_fusion_time(
            features, partitions, cfg, identity_projectors(d, CLASSES)
        ),
    }


def main(path="docs/cost_stats.json", seed=0):
    rng = np.random.default_rng(seed)
    for key in costLog:
        log_cost(key, rng)

    with open(path, "w") as f:
        json.dump(costLog, f, sort_keys=True, indent=4)


if __name__ == "__main__":
    main()
