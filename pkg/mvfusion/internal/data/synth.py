"""Synthetic multi-view data with a known discriminative subspace."""
import logging
from dataclasses import dataclass, field

import numpy as np

from mvfusion.constants import DEFAULT_BETA_MIN, MAX_COVERAGE_ATTEMPTS
from mvfusion.errors import CoverageInfeasible, InvalidCount, InvalidPartition
from mvfusion.math.linalg import random_orthonormal
from mvfusion.types import MembershipPartition, OrthonormalBasis

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    global_basis: OrthonormalBasis
    class_dims: tuple
    coverage: tuple
    beta: float

    @property
    def ambient_dim(self):
        return self.global_basis.dim_ambient

    @property
    def rank(self):
        return self.global_basis.dim_subspace

    @property
    def class_count(self):
        return len(self.class_dims)

    @property
    def agent_count(self):
        return len(self.coverage)

    def class_basis(self, k):
        start = int(sum(self.class_dims[:k]))
        return OrthonormalBasis(self.global_basis.matrix[:, start : start + self.class_dims[k]])

    def agent_basis(self, i):
        return OrthonormalBasis(self.global_basis.matrix @ self.coverage[i])

    def coverage_matrix(self):
        return np.hstack(self.coverage)


@dataclass(frozen=True, eq=False)
class AgentView:
    samples: np.ndarray
    labels: np.ndarray
    object_ids: np.ndarray

    @property
    def sample_count(self):
        return self.samples.shape[1]

    @property
    def view_dim(self):
        return self.samples.shape[0]


@dataclass(frozen=True, eq=False)
class MultiViewDataset:
    class_count: int
    views: tuple
    ground_truth: GroundTruth = None
    # view_maps[i] is A_i (view_dim x d); empty for imported datasets
    view_maps: tuple = field(default_factory=tuple)

    def __post_init__(self):
        reference = None
        for i, view in enumerate(self.views):
            if not (view.labels.size == view.object_ids.size == view.sample_count):
                raise InvalidCount("agent {}: samples, labels and ids disagree".format(i))
            mapping = dict(zip(view.object_ids.tolist(), view.labels.tolist()))
            if len(mapping) != view.object_ids.size:
                raise InvalidCount("agent {}: duplicate object ids".format(i))
            if reference is None:
                reference = mapping
                continue
            for obj, label in mapping.items():
                if obj in reference and reference[obj] != label:
                    raise InvalidPartition(
                        "object {} labelled {} by agent {} but {} elsewhere".format(
                            obj, label, i, reference[obj]
                        )
                    )

    @property
    def agent_count(self):
        return len(self.views)

    @property
    def identity_views(self):
        """True when every agent observes the ambient coordinates of S* directly."""
        if self.ground_truth is None or len(self.view_maps) != self.agent_count:
            return False
        eye = np.eye(self.ground_truth.ambient_dim)
        return all(a.shape == eye.shape and np.array_equal(a, eye) for a in self.view_maps)

    def partition(self, i):
        return membership_from_labels(self.views[i].labels, self.class_count)


def _coverage_sigma(coverage, rank):
    s = np.linalg.svd(np.hstack(coverage), compute_uv=False)
    return float(s[rank - 1]) if s.size >= rank else 0.0


def generate_ground_truth(
    d, class_count, class_dims, agent_count, agent_ranks, seed, beta_min=None
):
    if beta_min is None:
        beta_min = DEFAULT_BETA_MIN
    class_dims = tuple(int(c) for c in class_dims)
    agent_ranks = tuple(int(r) for r in agent_ranks)
    if len(class_dims) != class_count or any(c < 1 for c in class_dims):
        raise InvalidCount(
            "need {} positive class dimensions, got {}".format(class_count, class_dims)
        )
    rank = sum(class_dims)
    if rank > d:
        raise InvalidCount("class dimensions sum to {} > d = {}".format(rank, d))
    if len(agent_ranks) != agent_count or any(r < 1 or r > rank for r in agent_ranks):
        raise InvalidCount(
            "need {} agent ranks in [1, {}], got {}".format(agent_count, rank, agent_ranks)
        )
    if sum(agent_ranks) < rank:
        raise CoverageInfeasible(
            "agent ranks sum to {} but S* has dimension {}".format(sum(agent_ranks), rank)
        )

    rng = np.random.default_rng(seed)
    global_basis = OrthonormalBasis(random_orthonormal(rng, d, rank))

    best = 0.0
    for attempt in range(MAX_COVERAGE_ATTEMPTS):
        # An agent seeing all of S* needs no rotation, only the range matters
        coverage = tuple(
            np.eye(rank) if r == rank else random_orthonormal(rng, rank, r) for r in agent_ranks
        )
        beta = _coverage_sigma(coverage, rank)
        best = max(best, beta)
        if beta >= beta_min:
            logger.debug("coverage beta %.4f after %d attempts", beta, attempt + 1)
            return GroundTruth(global_basis, class_dims, coverage, beta)

    raise CoverageInfeasible(
        "sigma_R of the coverage matrix stayed below {} in {} attempts (best {:.4f})".format(
            beta_min, MAX_COVERAGE_ATTEMPTS, best
        )
    )


def generate_dataset(
    gt,
    objects_per_class,
    view_dim,
    noise_sigma,
    seed,
    identity_views=False,
    class_view_rank=None,
):
    if objects_per_class < 1:
        raise InvalidCount("objects_per_class must be positive, got {}".format(objects_per_class))
    if view_dim < 1:
        raise InvalidCount("view_dim must be positive, got {}".format(view_dim))
    if noise_sigma < 0:
        raise InvalidCount("noise_sigma must be non-negative, got {}".format(noise_sigma))
    d, K = gt.ambient_dim, gt.class_count
    if identity_views and view_dim != d:
        raise InvalidCount("identity views need view_dim == d ({} != {})".format(view_dim, d))

    rng = np.random.default_rng(seed)

    latents, labels = [], []
    for k in range(K):
        block = gt.class_basis(k).matrix
        coeffs = rng.standard_normal((gt.class_dims[k], objects_per_class))
        latents.append(block @ coeffs)
        labels.append(np.full(objects_per_class, k, dtype=np.int64))
    latents = np.hstack(latents)
    labels = np.concatenate(labels)
    object_ids = np.arange(labels.size, dtype=np.int64)

    views, maps = [], []
    for i in range(gt.agent_count):
        if identity_views:
            view_map = np.eye(d)
        else:
            view_map = rng.standard_normal((view_dim, d)) / np.sqrt(d)
        seen = latents
        if class_view_rank is not None:
            seen = _partial_view(gt, latents, labels, class_view_rank, rng)
        samples = view_map @ seen + noise_sigma * rng.standard_normal((view_dim, labels.size))
        order = rng.permutation(labels.size)
        views.append(AgentView(samples[:, order], labels[order], object_ids[order]))
        maps.append(view_map)

    return MultiViewDataset(K, tuple(views), gt, tuple(maps))


def _partial_view(gt, latents, labels, view_rank, rng):
    """Keeps, per class, a random `view_rank`-dimensional part of the class block."""
    seen = np.zeros_like(latents)
    for k in range(gt.class_count):
        block = gt.class_basis(k).matrix
        r = min(view_rank, gt.class_dims[k])
        part = block @ random_orthonormal(rng, gt.class_dims[k], r)
        idx = labels == k
        seen[:, idx] = part @ (part.T @ latents[:, idx])
    return seen


def membership_from_labels(labels, class_count):
    return MembershipPartition(np.asarray(labels), class_count)


def split_dataset(dataset, test_fraction, seed):
    """
    Splits by object id, stratified by class, so that every agent holds out the same
    objects.
    """
    if not 0 < test_fraction < 1:
        raise InvalidCount("test_fraction must lie in (0, 1), got {}".format(test_fraction))
    rng = np.random.default_rng(seed)
    labels_by_object = {}
    for view in dataset.views:
        labels_by_object.update(zip(view.object_ids.tolist(), view.labels.tolist()))

    held_out = set()
    for k in range(dataset.class_count):
        objects = sorted(obj for obj, label in labels_by_object.items() if label == k)
        if len(objects) < 2:
            continue
        count = min(len(objects) - 1, max(1, int(round(test_fraction * len(objects)))))
        held_out.update(rng.choice(objects, size=count, replace=False).tolist())

    train, test = [], []
    for view in dataset.views:
        mask = np.array([obj in held_out for obj in view.object_ids.tolist()], dtype=bool)
        for target, keep in ((train, ~mask), (test, mask)):
            target.append(
                AgentView(view.samples[:, keep], view.labels[keep], view.object_ids[keep])
            )
    gt, maps = dataset.ground_truth, dataset.view_maps
    return (
        MultiViewDataset(dataset.class_count, tuple(train), gt, maps),
        MultiViewDataset(dataset.class_count, tuple(test), gt, maps),
    )
