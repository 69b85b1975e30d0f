"""Rounds of local training and per-class basis fusion."""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mvfusion.config import load_config
from mvfusion.constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPSILON_SQ,
    DEFAULT_FUSED_RANK,
    DEFAULT_LOCAL_RANK,
    EARLY_STOP_REL_CHANGE,
    EARLY_STOP_WINDOW,
    TRUTH_SAMPLE_COUNT,
)
from mvfusion.errors import ConfigError, MetricUnavailable
from mvfusion.external.verification import check_trace_bound
from mvfusion.internal.encoder.mlp import (
    ACTIVATIONS,
    backward,
    forward,
    forward_with_cache,
    init_params,
)
from mvfusion.internal.encoder.optimizer import (
    METHODS,
    direct_feature_step,
    init_optimizer,
    optimizer_step,
)
from mvfusion.internal.fusion.basis_fusion import (
    FusionConfig,
    extract_local_basis,
    fuse_round,
    identity_projectors,
)
from mvfusion.internal.metrics.evaluation import summarize
from mvfusion.internal.rate.coding_rate import RateConfig, local_loss, local_loss_gradient
from mvfusion.math.linalg import containment_distance, thin_svd, truncate_basis
from mvfusion.types import FeatureMatrix

logger = logging.getLogger(__name__)

MODES = ("encoder", "direct")
OVERRIDE_KEYS = ("local_rank", "fused_rank")


def default_lambda_schedule(rounds):
    return ((0, 1.0), (max(1, math.ceil(2 * rounds / 3)), 100.0))


@dataclass(frozen=True)
class RunConfig:
    agents: int
    classes: int
    feature_dim: int
    rounds: int
    local_rank: int = DEFAULT_LOCAL_RANK
    fused_rank: int = DEFAULT_FUSED_RANK
    class_overrides: dict = field(default_factory=dict)
    epsilon_sq: float = DEFAULT_EPSILON_SQ
    # ((first_round, lambda), ...), thresholds increasing
    lambda_schedule: tuple = None
    inner_steps: int = None
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    optimizer: str = "adam"
    seed: int = 0
    mode: str = "encoder"
    # hidden widths shared by all agents, or one tuple per agent
    hidden_layers: tuple = (64, 64)
    activation: str = "relu"
    # direct mode step size of the rate terms; the penalty is applied in closed form
    feature_step: float = 0.05
    early_stop: bool = True
    threads: int = 1
    checkpoint_every: int = 1

    def __post_init__(self):
        for name in ("agents", "classes", "feature_dim", "batch_size", "threads"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("{} must be positive, got {}".format(name, getattr(self, name)))
        if self.rounds < 0:
            raise ConfigError("rounds must be non-negative, got {}".format(self.rounds))
        if self.inner_steps is not None and self.inner_steps < 0:
            raise ConfigError("inner_steps must be non-negative, got {}".format(self.inner_steps))
        if self.mode not in MODES:
            raise ConfigError("mode must be one of {}, got {}".format(MODES, self.mode))
        if self.optimizer not in METHODS:
            raise ConfigError("optimizer must be one of {}, got {}".format(METHODS, self.optimizer))
        if self.activation not in ACTIVATIONS:
            raise ConfigError("unknown activation {}".format(self.activation))
        if self.feature_step <= 0:
            raise ConfigError("feature_step must be positive")
        for k, override in self.class_overrides.items():
            unknown = set(override) - set(OVERRIDE_KEYS)
            if unknown:
                raise ConfigError(
                    "class {} override has unknown keys {}".format(k, sorted(unknown))
                )

        schedule = self.lambda_schedule
        if schedule is None:
            schedule = default_lambda_schedule(self.rounds)
        schedule = tuple((int(t), float(lam)) for t, lam in schedule)
        if not schedule:
            raise ConfigError("lambda schedule is empty")
        thresholds = [t for t, _ in schedule]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])) or thresholds[0] < 0:
            raise ConfigError("lambda schedule thresholds must increase: {}".format(thresholds))
        if any(lam < 0 for _, lam in schedule):
            raise ConfigError("lambda values must be non-negative")
        object.__setattr__(self, "lambda_schedule", schedule)

        layers = list(self.hidden_layers)
        if layers and all(isinstance(h, (list, tuple)) for h in layers):
            if len(layers) != self.agents:
                raise ConfigError(
                    "{} hidden layer specs for {} agents".format(len(layers), self.agents)
                )
            per_agent = tuple(tuple(int(w) for w in h) for h in layers)
        else:
            per_agent = (tuple(int(w) for w in layers),) * self.agents
        if any(w < 1 for h in per_agent for w in h):
            raise ConfigError("hidden layer widths must be positive")
        object.__setattr__(self, "hidden_layers", per_agent)

    @classmethod
    def from_dict(cls, config):
        """Builds the run configuration from merged config sections (see mvfusion.config)."""
        data, fusion, run = config["data"], config["fusion"], config["run"]
        feature_dim = run["feature_dim"]
        if feature_dim is None:
            feature_dim = data["view_dim"] if run["mode"] == "direct" else data["ambient_dim"]
        overrides = {int(k): dict(v) for k, v in (fusion["class_overrides"] or {}).items()}
        schedule = run["lambda_schedule"]
        return cls(
            agents=data["agents"],
            classes=data["classes"],
            feature_dim=feature_dim,
            rounds=run["rounds"],
            local_rank=fusion["local_rank"],
            fused_rank=fusion["fused_rank"],
            class_overrides=overrides,
            epsilon_sq=config["rate"]["epsilon_sq"],
            lambda_schedule=None if schedule is None else tuple(tuple(s) for s in schedule),
            inner_steps=run["inner_steps"],
            batch_size=run["batch_size"],
            learning_rate=run["learning_rate"],
            weight_decay=run["weight_decay"],
            optimizer=run["optimizer"],
            seed=run["seed"],
            mode=run["mode"],
            hidden_layers=tuple(run["hidden_layers"]),
            activation=run["activation"],
            feature_step=run["feature_step"],
            early_stop=run["early_stop"],
            threads=run["threads"],
            checkpoint_every=run["checkpoint_every"],
        )

    @classmethod
    def from_yaml(cls, path, overrides=None):
        return cls.from_dict(load_config(path, overrides))

    def lambda_at(self, round_index):
        lam = 0.0
        for threshold, value in self.lambda_schedule:
            if threshold <= round_index:
                lam = value
        return lam

    def rate_config(self):
        return RateConfig(self.epsilon_sq, self.feature_dim)

    def fusion_config(self):
        return FusionConfig(
            self.feature_dim, self.local_rank, self.fused_rank, dict(self.class_overrides)
        )

    def layer_sizes(self, agent_id, view_dim):
        return [view_dim] + list(self.hidden_layers[agent_id]) + [self.feature_dim]

    def inner_steps_for(self, sample_count):
        if self.inner_steps is not None:
            return self.inner_steps
        return math.ceil(sample_count / self.batch_size)


@dataclass(eq=False)
class AgentState:
    agent_id: int
    samples: np.ndarray
    partition: object
    object_ids: np.ndarray
    rng: np.random.Generator
    features: np.ndarray
    params: object = None
    optimizer: object = None


@dataclass(frozen=True)
class RoundRecord:
    round: int
    lam: float
    losses: tuple
    residuals: tuple
    class_residuals: tuple
    bound_slack: tuple
    truth_distances: tuple = None
    fused_ranks: tuple = ()
    rank_deficient: tuple = ()
    wall_time: float = 0.0

    @property
    def mean_loss(self):
        return float(np.mean([loss.total for loss in self.losses]))

    @property
    def bound_violations(self):
        return sum(s < 0 for s in self.bound_slack)

    def as_dict(self):
        """Everything except the wall time, which differs between identical runs."""
        return {
            "round": self.round,
            "lambda": self.lam,
            "losses": [loss.as_dict() for loss in self.losses],
            "residuals": list(self.residuals),
            "class_residuals": [list(r) for r in self.class_residuals],
            "bound_slack": list(self.bound_slack),
            "truth_distances": None if self.truth_distances is None else list(self.truth_distances),
            "fused_ranks": list(self.fused_ranks),
            "rank_deficient": list(self.rank_deficient),
        }


@dataclass(eq=False)
class RunState:
    cfg: RunConfig
    dataset: object
    agents: list
    projectors: list
    fused: list
    messages: list
    round: int = 0
    lam: float = None
    bound_violations: int = 0
    # per class, noise-free latents drawn from the true class block (encoder mode)
    truth_latents: list = None


@dataclass(eq=False)
class RunResult:
    state: RunState
    records: list
    stopped_early: bool = False

    @property
    def bound_violations(self):
        return self.state.bound_violations


def _map_agents(fn, agents, threads):
    if threads <= 1 or len(agents) <= 1:
        return [fn(agent) for agent in agents]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, agents))


def _extract_messages(agent, cfg, round_index):
    fusion = cfg.fusion_config()
    d = agent.features.shape[0]
    messages = []
    for k in range(cfg.classes):
        idx = agent.partition.indices(k)
        if idx.size == 0:
            logger.debug("agent %d has no samples of class %d", agent.agent_id, k)
            continue
        p = min(fusion.local_rank_for(k), idx.size, d)
        if p < fusion.local_rank_for(k):
            logger.debug("agent %d class %d: local rank clamped to %d", agent.agent_id, k, p)
        messages.append(
            extract_local_basis(agent.features[:, idx], p, agent.agent_id, k, round_index)
        )
    return messages


def _minibatches(rng, sample_count, batch_size, steps):
    if sample_count == 0:
        return []
    batches = []
    while len(batches) < steps:
        order = rng.permutation(sample_count)
        batches.extend(order[s : s + batch_size] for s in range(0, sample_count, batch_size))
    return batches[:steps]


def _train_agent(agent, cfg, projectors, lam, rate_cfg):
    steps = cfg.inner_steps_for(agent.samples.shape[1])
    for idx in _minibatches(agent.rng, agent.samples.shape[1], cfg.batch_size, steps):
        part = agent.partition.subset(idx)
        if cfg.mode == "direct":
            z = agent.features[:, idx]
            grad = local_loss_gradient(z, part, projectors, 0.0, rate_cfg)
            stepped = direct_feature_step(z, grad, cfg.feature_step, part, projectors, lam)
            agent.features[:, idx] = stepped.matrix
            continue
        x = agent.samples[:, idx]
        z, cache = forward_with_cache(agent.params, x)
        grad = local_loss_gradient(z, part, projectors, lam, rate_cfg)
        grads = backward(agent.params, x, grad, cache)
        arrays = optimizer_step(agent.optimizer, agent.params.arrays(), grads)
        agent.params = agent.params.with_arrays(arrays)
    if cfg.mode == "encoder":
        agent.features = np.array(forward(agent.params, agent.samples).matrix)


def initialize_run(cfg, dataset):
    if dataset.agent_count != cfg.agents:
        raise ConfigError(
            "dataset has {} agents, config expects {}".format(dataset.agent_count, cfg.agents)
        )
    if dataset.class_count != cfg.classes:
        raise ConfigError(
            "dataset has {} classes, config expects {}".format(dataset.class_count, cfg.classes)
        )
    cfg.fusion_config().validate(cfg.agents, cfg.classes)

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.agents + 1)
    agents = []
    for i, (view, seed) in enumerate(zip(dataset.views, seeds[: cfg.agents])):
        rng = np.random.default_rng(seed)
        agent = AgentState(i, view.samples, dataset.partition(i), view.object_ids, rng, None)
        if cfg.mode == "direct":
            if view.view_dim != cfg.feature_dim:
                raise ConfigError(
                    "direct mode optimizes the samples themselves: agent {} has view_dim {} "
                    "but feature_dim is {}".format(i, view.view_dim, cfg.feature_dim)
                )
            agent.features = np.array(FeatureMatrix.normalized(view.samples).matrix)
        else:
            agent.params = init_params(cfg.layer_sizes(i, view.view_dim), rng, cfg.activation)
            agent.optimizer = init_optimizer(
                agent.params.arrays(), cfg.optimizer, cfg.learning_rate, cfg.weight_decay
            )
            agent.features = np.array(forward(agent.params, view.samples).matrix)
        agents.append(agent)

    messages = []
    for agent in agents:
        messages.extend(_extract_messages(agent, cfg, 0))
    logger.info(
        "initialized %d agents in %s mode, %d initial bases", cfg.agents, cfg.mode, len(messages)
    )
    return RunState(
        cfg=cfg,
        dataset=dataset,
        agents=agents,
        projectors=identity_projectors(cfg.feature_dim, cfg.classes),
        fused=[None] * cfg.classes,
        messages=messages,
        truth_latents=_truth_latents(cfg, dataset, np.random.default_rng(seeds[-1])),
    )


def _truth_latents(cfg, dataset, rng):
    gt = dataset.ground_truth
    if cfg.mode != "encoder" or gt is None or len(dataset.view_maps) != cfg.agents:
        return None
    return [
        gt.class_basis(k).matrix @ rng.standard_normal((gt.class_dims[k], TRUTH_SAMPLE_COUNT))
        for k in range(gt.class_count)
    ]


def _image_distance(images, k, rank, fused):
    cols = slice(k * TRUTH_SAMPLE_COUNT, (k + 1) * TRUTH_SAMPLE_COUNT)
    rank = min(rank, fused.basis.dim_subspace)
    return max(
        containment_distance(truncate_basis(thin_svd(z[:, cols]), rank), fused.basis)
        for z in images
    )


def _truth_distances(state):
    """
    Per class, the distance between the fused subspace and the true class block. Direct
    mode on identity views compares them in the latent coordinates. Encoder mode maps
    noise-free latents of the block through every agent's view and encoder and takes the
    worst agent.
    """
    cfg, dataset = state.cfg, state.dataset
    gt = dataset.ground_truth
    if gt is None:
        return None
    if cfg.mode == "direct":
        if not dataset.identity_views or gt.ambient_dim != cfg.feature_dim:
            return None
        return tuple(
            None if f is None else containment_distance(gt.class_basis(k), f.basis)
            for k, f in enumerate(state.fused)
        )
    if state.truth_latents is None:
        return None
    latents = np.hstack(state.truth_latents)
    images = [
        forward(agent.params, view_map @ latents).matrix
        for agent, view_map in zip(state.agents, dataset.view_maps)
    ]
    return tuple(
        None if f is None else _image_distance(images, k, gt.class_dims[k], f)
        for k, f in enumerate(state.fused)
    )


def run_round(state):
    cfg = state.cfg
    rate_cfg = cfg.rate_config()
    start = time.perf_counter()
    t = state.round

    state.projectors, fused = fuse_round(
        state.messages, cfg.fusion_config(), cfg.agents, state.projectors
    )
    for k, f in enumerate(fused):
        if f is not None:
            state.fused[k] = f

    lam = cfg.lambda_at(t)
    if lam != state.lam:
        logger.info("round %d: lambda set to %g", t, lam)
        state.lam = lam
    projectors = state.projectors

    def step(agent):
        _train_agent(agent, cfg, projectors, lam, rate_cfg)
        loss = local_loss(agent.features, agent.partition, projectors, lam, rate_cfg)
        bound = check_trace_bound(agent.features, agent.partition, projectors, rate_cfg)
        return _extract_messages(agent, cfg, t + 1), loss, bound

    results = _map_agents(step, state.agents, cfg.threads)
    state.messages = [msg for messages, _, _ in results for msg in messages]
    bounds = [bound for _, _, bound in results]

    violations = sum(not b.holds for b in bounds)
    if violations:
        log = logger.warning if state.bound_violations == 0 else logger.debug
        log("round %d: trace bound violated for %d agents", t, violations)
        state.bound_violations += violations

    record = RoundRecord(
        round=t,
        lam=lam,
        losses=tuple(loss for _, loss, _ in results),
        residuals=tuple(b.residual for b in bounds),
        class_residuals=tuple(b.class_residuals for b in bounds),
        bound_slack=tuple(b.slack for b in bounds),
        truth_distances=_truth_distances(state),
        fused_ranks=tuple(0 if f is None else f.basis.dim_subspace for f in state.fused),
        rank_deficient=tuple(bool(f is not None and f.rank_deficient) for f in state.fused),
        wall_time=time.perf_counter() - start,
    )
    state.round = t + 1
    logger.debug("round %d: mean loss %.6f", t, record.mean_loss)
    return state, record


def _converged(history):
    if len(history) <= EARLY_STOP_WINDOW:
        return False
    then, now = history[-1 - EARLY_STOP_WINDOW], history[-1]
    return abs(now - then) < EARLY_STOP_REL_CHANGE * max(abs(then), 1e-12)


def run(cfg, dataset, on_round=None):
    """
    Runs up to cfg.rounds rounds. `on_round(state, record)` is called after every round,
    in round order, from the calling thread.
    """
    state = initialize_run(cfg, dataset)
    records, history = [], []
    stopped_early = False
    for _ in range(cfg.rounds):
        state, record = run_round(state)
        records.append(record)
        if on_round is not None:
            on_round(state, record)
        history.append(record.mean_loss)
        # never stop before the last lambda switch has taken effect
        if cfg.early_stop and state.round > cfg.lambda_schedule[-1][0] and _converged(history):
            logger.info("converged after %d rounds", state.round)
            stopped_early = True
            break
    if state.bound_violations:
        logger.warning("trace bound violated %d times during the run", state.bound_violations)
    return RunResult(state, records, stopped_early)


def encode(state, samples, agent_id):
    """Features of unseen samples for one agent; direct mode has no encoder to apply."""
    if state.cfg.mode == "direct":
        raise MetricUnavailable("direct-feature mode cannot encode unseen samples")
    return forward(state.agents[agent_id].params, samples)


def class_diagnostics(state):
    truth = _truth_distances(state)
    out = {}
    for k, f in enumerate(state.fused):
        out[k] = {
            "fused_rank": 0 if f is None else f.basis.dim_subspace,
            "rank_deficient": bool(f is not None and f.rank_deficient),
            "truth_distance": None if truth is None else truth[k],
        }
    return out


def evaluate(state, dataset=None):
    """
    EvalSummary with the current projectors, on the training features or, when a
    dataset is given, on its samples passed through the trained encoders.
    """
    if dataset is None:
        features = [agent.features for agent in state.agents]
        labels = [agent.partition.labels for agent in state.agents]
        object_ids = [agent.object_ids for agent in state.agents]
    else:
        features = [encode(state, v.samples, i).matrix for i, v in enumerate(dataset.views)]
        labels = [v.labels for v in dataset.views]
        object_ids = [v.object_ids for v in dataset.views]
    return summarize(features, object_ids, labels, state.projectors, class_diagnostics(state))
