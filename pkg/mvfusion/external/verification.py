"""Certification suites behind `mvfusion verify`."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mvfusion.constants import CONSISTENCY_SLOPE_RANGE, MONOTONICITY_TOL, TRACE_BOUND_REL_TOL
from mvfusion.errors import DimensionMismatch, InvalidCount
from mvfusion.internal.data.synth import generate_ground_truth
from mvfusion.internal.fusion.basis_fusion import fuse_bases
from mvfusion.internal.rate.coding_rate import (
    RateConfig,
    coding_rate,
    mcr2_objective,
    projector_matrix,
    split_by_class,
)
from mvfusion.math.linalg import (
    grassmann_distance,
    orthonormal_complement,
    projector_from_basis,
    random_orthonormal,
)
from mvfusion.types import FeatureMatrix, MembershipPartition, OrthonormalBasis, feature_array

logger = logging.getLogger(__name__)


def residual_energy(z, projector):
    """|(I - P) Z|_F^2"""
    z = feature_array(z)
    p = projector_matrix(projector)
    if p.shape != (z.shape[0], z.shape[0]):
        raise DimensionMismatch(
            "projector {} does not act on {}-dim features".format(p.shape, z.shape[0])
        )
    residual = z - p @ z
    return float(np.sum(residual * residual))


def residual_energy_per_class(z, part, projectors):
    """Per-class residual energies; their sum is the residual under the block projector."""
    if len(projectors) != part.class_count:
        raise DimensionMismatch(
            "{} classes but {} projectors".format(part.class_count, len(projectors))
        )
    return [residual_energy(zk, pk) for zk, pk in zip(split_by_class(z, part), projectors)]


def project_by_class(z, part, projectors):
    """Applies P_k to the columns of class k."""
    z = feature_array(z)
    projected = np.array(z)
    for k, pk in enumerate(projectors):
        idx = part.indices(k)
        projected[:, idx] = projector_matrix(pk) @ z[:, idx]
    return projected


@dataclass(frozen=True)
class TraceBoundReport:
    objective: float
    projected_objective: float
    difference: float
    residual: float
    class_residuals: tuple
    bound: float
    slack: float

    @property
    def holds(self):
        return self.slack >= -TRACE_BOUND_REL_TOL * max(1.0, self.bound)

    def as_dict(self):
        return {
            "objective": self.objective,
            "projected_objective": self.projected_objective,
            "difference": self.difference,
            "residual": self.residual,
            "class_residuals": list(self.class_residuals),
            "bound": self.bound,
            "slack": self.slack,
            "holds": self.holds,
        }


def check_trace_bound(z, part, projectors, cfg):
    z = feature_array(z)
    d, m = z.shape
    class_residuals = residual_energy_per_class(z, part, projectors)
    residual = float(sum(class_residuals))

    objective = mcr2_objective(z, part, cfg)
    projected = mcr2_objective(project_by_class(z, part, projectors), part, cfg)
    difference = abs(objective - projected)

    alpha = d / (m * cfg.epsilon_sq)
    bound = alpha * residual + sum(alpha * e for e in class_residuals)
    return TraceBoundReport(
        objective=objective,
        projected_objective=projected,
        difference=difference,
        residual=residual,
        class_residuals=tuple(class_residuals),
        bound=bound,
        slack=bound - difference,
    )


@dataclass(frozen=True)
class MonotonicityReport:
    rate: float
    projected_rate: float
    # (rate, projected rate) per class when a partition was given
    class_rates: tuple = ()

    @property
    def holds(self):
        if self.projected_rate > self.rate + MONOTONICITY_TOL:
            return False
        return all(after <= before + MONOTONICITY_TOL for before, after in self.class_rates)

    def as_dict(self):
        return {
            "rate": self.rate,
            "projected_rate": self.projected_rate,
            "class_rates": [list(pair) for pair in self.class_rates],
            "holds": self.holds,
        }


def check_rate_monotonicity(z, projector, cfg, part=None):
    """
    R(P Z) <= R(Z). With a partition, also R(P Z_k) <= R(Z_k) for every non-empty class
    with the class sample count in the scaling.
    """
    z = feature_array(z)
    p = projector_matrix(projector)
    rate = coding_rate(z, cfg)
    projected_rate = coding_rate(p @ z, cfg)
    class_rates = ()
    if part is not None:
        pairs = []
        for zk in split_by_class(z, part):
            if zk.shape[1] == 0:
                continue
            pairs.append((coding_rate(zk, cfg), coding_rate(p @ zk, cfg)))
        class_rates = tuple(pairs)
    return MonotonicityReport(rate, projected_rate, class_rates)


@dataclass(frozen=True)
class TraceInstance:
    z: FeatureMatrix
    part: MembershipPartition
    projectors: tuple


def random_trace_instance(rng, cfg=None, max_dim=16, max_samples=64, max_classes=4):
    """
    Random unit-norm features with random labels and low-rank class projectors. Instances
    are drawn with total residual energy of at least m eps^2, where the bound is
    guaranteed; the cross term of the whole-space rate is otherwise unbounded by the
    residual.
    """
    cfg = cfg or RateConfig()
    d = int(rng.integers(8, max_dim + 1))
    m = int(rng.integers(16, max_samples + 1))
    k = int(rng.integers(1, max_classes + 1))
    labels = rng.integers(0, k, size=m)
    part = MembershipPartition(labels, k)
    projectors = tuple(
        projector_from_basis(OrthonormalBasis(random_orthonormal(rng, d, int(r))))
        for r in rng.integers(1, d // 4 + 1, size=k)
    )
    while True:
        z = FeatureMatrix.normalized(rng.standard_normal((d, m)))
        if sum(residual_energy_per_class(z, part, projectors)) >= m * cfg.epsilon_sq:
            return TraceInstance(z, part, projectors)


@dataclass(frozen=True)
class ConsistencyReport:
    noise_levels: tuple
    # levels x trials
    distances: np.ndarray
    max_deltas: np.ndarray
    # per level
    betas: tuple
    eigengaps: tuple
    constants: tuple
    lipschitz: float
    slope: float
    agent_count: int
    violations: int = 0
    trial_records: list = field(default_factory=list)

    @property
    def beta(self):
        return float(min(self.betas))

    @property
    def constant(self):
        return float(max(self.constants))

    @property
    def slope_ok(self):
        low, high = CONSISTENCY_SLOPE_RANGE
        return bool(np.isnan(self.slope) or low <= self.slope <= high)

    @property
    def holds(self):
        return self.violations == 0 and self.slope_ok

    def summary(self):
        return {
            "agent_count": self.agent_count,
            "noise_levels": list(self.noise_levels),
            "median_distances": [float(np.median(row)) for row in self.distances],
            "betas": list(self.betas),
            "eigengaps": list(self.eigengaps),
            "constants": list(self.constants),
            "lipschitz": self.lipschitz,
            "slope": self.slope,
            "violations": self.violations,
        }


def perturb_basis(u, delta, rng, avoid=None):
    """
    Rotates every direction of `u` by the angle arcsin(delta) towards random directions
    orthogonal to `avoid` (or to u), so that all principal angles to u equal that angle.
    """
    if delta == 0:
        return u
    avoid = avoid if avoid is not None else u
    d, r = u.matrix.shape
    if d - avoid.dim_subspace < r:
        avoid = u
    q = orthonormal_complement(avoid, rng, r)
    theta = np.arcsin(delta)
    return OrthonormalBasis.from_columns(u.matrix * np.cos(theta) + q * np.sin(theta))


def _consistency_trial(gt, rng, delta):
    truth = gt.global_basis
    perturbed, deltas, ratios = [], [], []
    for i in range(gt.agent_count):
        local_delta = float(rng.uniform(delta / 2, delta)) if delta > 0 else 0.0
        u_star = gt.agent_basis(i)
        u_hat = perturb_basis(u_star, local_delta, rng, avoid=truth)
        perturbed.append(u_hat.matrix)
        deltas.append(local_delta)
        if local_delta > 0:
            ratios.append(grassmann_distance(u_hat, u_star) / local_delta)
    fused = fuse_bases(np.hstack(perturbed), gt.rank)
    return grassmann_distance(fused, truth), max(deltas), max(ratios) if ratios else 1.0


def _log_slope(levels, medians):
    keep = [(x, y) for x, y in zip(levels, medians) if x > 0 and y > 0]
    if len(keep) < 2:
        return float("nan")
    x, y = np.log(np.array(keep)).T
    return float(np.polyfit(x, y, 1)[0])


def fusion_consistency_experiment(
    agent_count, d, rank, agent_ranks, noise_grid, trials, seed, beta_min=None, threads=1
):
    if trials < 1:
        raise InvalidCount("need at least one trial")
    noise_grid = tuple(float(x) for x in noise_grid)
    level_seeds = np.random.SeedSequence(seed).spawn(len(noise_grid))

    distances = np.zeros((len(noise_grid), trials))
    max_deltas = np.zeros((len(noise_grid), trials))
    ratios = np.ones((len(noise_grid), trials))
    betas, gaps = [], []
    for j, (delta, level_seed) in enumerate(zip(noise_grid, level_seeds)):
        gt_seed, *trial_seeds = level_seed.spawn(trials + 1)
        gt = generate_ground_truth(
            d, 1, (rank,), agent_count, agent_ranks, np.random.default_rng(gt_seed), beta_min
        )
        betas.append(gt.beta)
        population = np.hstack([gt.agent_basis(i).matrix for i in range(agent_count)])
        s = np.linalg.svd(population, compute_uv=False)
        gaps.append(float(s[rank - 1] - (s[rank] if s.size > rank else 0.0)))

        def trial(trial_seed, gt=gt, delta=delta):
            return _consistency_trial(gt, np.random.default_rng(trial_seed), delta)

        # map() keeps trial order, so results do not depend on the worker count
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            results = list(pool.map(trial, trial_seeds))
        for t, (dist, max_delta, ratio) in enumerate(results):
            distances[j, t], max_deltas[j, t], ratios[j, t] = dist, max_delta, ratio

    lipschitz = float(ratios.max())
    constants = tuple(np.sqrt(2 * agent_count) * lipschitz / b for b in betas)
    records, violations = [], 0
    for j, delta in enumerate(noise_grid):
        for t in range(trials):
            limit = constants[j] * max_deltas[j, t]
            holds = bool(distances[j, t] <= limit + TRACE_BOUND_REL_TOL * max(1.0, limit))
            violations += not holds
            records.append(
                {
                    "noise": delta,
                    "trial": t,
                    "distance": float(distances[j, t]),
                    "max_delta": float(max_deltas[j, t]),
                    "bound": float(limit),
                    "holds": holds,
                }
            )
    if violations:
        logger.warning("%d consistency trials exceeded the fusion error bound", violations)

    medians = [float(np.median(row)) for row in distances]
    return ConsistencyReport(
        noise_levels=noise_grid,
        distances=distances,
        max_deltas=max_deltas,
        betas=tuple(betas),
        eigengaps=tuple(gaps),
        constants=constants,
        lipschitz=lipschitz,
        slope=_log_slope(noise_grid, medians),
        agent_count=agent_count,
        violations=violations,
        trial_records=records,
    )


@dataclass
class VerificationSummary:
    trace_reports: list = field(default_factory=list)
    monotonicity_reports: list = field(default_factory=list)
    consistency: ConsistencyReport = None

    @property
    def trace_violations(self):
        return sum(not r.holds for r in self.trace_reports)

    @property
    def monotonicity_violations(self):
        return sum(not r.holds for r in self.monotonicity_reports)

    @property
    def passed(self):
        consistent = self.consistency is None or self.consistency.holds
        return self.trace_violations == 0 and self.monotonicity_violations == 0 and consistent

    def as_dict(self):
        return {
            "trace_instances": len(self.trace_reports),
            "trace_violations": self.trace_violations,
            "min_trace_slack": min((r.slack for r in self.trace_reports), default=None),
            "monotonicity_instances": len(self.monotonicity_reports),
            "monotonicity_violations": self.monotonicity_violations,
            "consistency": self.consistency.summary() if self.consistency else None,
            "passed": self.passed,
        }


def run_verification_suite(settings, seed, rate_cfg=None, threads=1):
    """
    `settings` is the `verify` config section. Trace bound and rate monotonicity share
    one randomized instance set; the rate monotonicity check uses every class projector
    of the instance.
    """
    rate_cfg = rate_cfg or RateConfig()
    summary = VerificationSummary()
    rng = np.random.default_rng(seed)
    for _ in range(settings["instances"]):
        instance = random_trace_instance(rng, rate_cfg)
        summary.trace_reports.append(
            check_trace_bound(instance.z, instance.part, instance.projectors, rate_cfg)
        )
        for p in instance.projectors:
            summary.monotonicity_reports.append(
                check_rate_monotonicity(instance.z, p, rate_cfg, part=instance.part)
            )
    logger.info(
        "trace bound: %d violations in %d instances; rate monotonicity: %d violations",
        summary.trace_violations,
        len(summary.trace_reports),
        summary.monotonicity_violations,
    )

    agents = settings["agents"]
    summary.consistency = fusion_consistency_experiment(
        agents,
        settings["ambient_dim"],
        settings["rank"],
        [settings["agent_rank"]] * agents,
        settings["noise_grid"],
        settings["trials"],
        seed,
        threads=threads,
    )
    logger.info(
        "fusion consistency: slope %.3f, %d bound violations",
        summary.consistency.slope,
        summary.consistency.violations,
    )
    return summary
