"""Per-class subspace fusion."""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from mvfusion.constants import DEFAULT_FUSED_RANK, DEFAULT_LOCAL_RANK, MAX_MESSAGE_ID, RANK_TOL
from mvfusion.errors import (
    ConfigError,
    EmptyClass,
    FusedRankDeficient,
    InconsistentMessages,
    InvalidCount,
    InvalidTruncation,
)
from mvfusion.math.linalg import projector_from_basis, thin_svd, truncate_basis
from mvfusion.types import OrthonormalBasis, ProjectionOperator, as_matrix, feature_array

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BasisMessage:
    agent_id: int
    class_id: int
    round: int
    basis: OrthonormalBasis
    singular_values: np.ndarray

    def __post_init__(self):
        for name in ("agent_id", "class_id", "round"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise InvalidCount("{} must be an integer, got {!r}".format(name, value))
            if not 0 <= value <= MAX_MESSAGE_ID:
                raise InvalidCount("{} {} outside [0, {}]".format(name, value, MAX_MESSAGE_ID))
            object.__setattr__(self, name, int(value))
        s = np.array(self.singular_values, dtype=np.float64).reshape(-1)
        if s.size != self.basis.dim_subspace:
            raise InconsistentMessages(
                "{} singular values for a rank {} basis".format(s.size, self.basis.dim_subspace)
            )
        s.setflags(write=False)
        object.__setattr__(self, "singular_values", s)

    @property
    def dim_ambient(self):
        return self.basis.dim_ambient

    @property
    def rank(self):
        return self.basis.dim_subspace

    def same_as(self, other):
        return (
            self.agent_id == other.agent_id
            and self.class_id == other.class_id
            and self.round == other.round
            and np.array_equal(self.basis.matrix, other.basis.matrix)
            and np.array_equal(self.singular_values, other.singular_values)
        )


@dataclass(frozen=True)
class FusionConfig:
    feature_dim: int
    local_rank: int = DEFAULT_LOCAL_RANK
    fused_rank: int = DEFAULT_FUSED_RANK
    # {class_id: {"local_rank": p, "fused_rank": P}}
    class_overrides: dict = field(default_factory=dict)

    def local_rank_for(self, k):
        return self.class_overrides.get(k, {}).get("local_rank", self.local_rank)

    def fused_rank_for(self, k):
        return self.class_overrides.get(k, {}).get("fused_rank", self.fused_rank)

    def validate(self, agent_count, class_count):
        d = self.feature_dim
        for k in range(class_count):
            p, fused = self.local_rank_for(k), self.fused_rank_for(k)
            if not 1 <= p <= d:
                raise ConfigError("class {}: local rank {} outside [1, {}]".format(k, p, d))
            if not 1 <= fused <= min(agent_count * p, d):
                raise ConfigError(
                    "class {}: fused rank {} outside [1, min({} * {}, {})]".format(
                        k, fused, agent_count, p, d
                    )
                )


@dataclass(frozen=True, eq=False)
class FusedBasis:
    class_id: int
    basis: OrthonormalBasis
    singular_values: np.ndarray
    rank_deficient: bool


def extract_local_basis(z_k, p_k, agent_id=0, class_id=0, round=0):
    z = feature_array(z_k, "class features")
    d, m = z.shape
    if m == 0:
        raise EmptyClass("agent {} has no samples of class {}".format(agent_id, class_id))
    if p_k < 1 or p_k > min(d, m):
        raise InvalidTruncation(
            "local rank {} not in [1, min(d={}, m_k={})]".format(p_k, d, m)
        )
    svd = thin_svd(z)
    return BasisMessage(
        agent_id=agent_id,
        class_id=class_id,
        round=round,
        basis=truncate_basis(svd, p_k),
        singular_values=svd.singular_values[:p_k],
    )


def concatenate_bases(messages):
    if not messages:
        raise InconsistentMessages("nothing to concatenate")
    first = messages[0]
    for msg in messages[1:]:
        if msg.class_id != first.class_id:
            raise InconsistentMessages(
                "mixed classes {} and {}".format(first.class_id, msg.class_id)
            )
        if msg.round != first.round:
            raise InconsistentMessages("mixed rounds {} and {}".format(first.round, msg.round))
        if msg.dim_ambient != first.dim_ambient:
            raise InconsistentMessages(
                "mixed dimensions {} and {}".format(first.dim_ambient, msg.dim_ambient)
            )
    agent_ids = [msg.agent_id for msg in messages]
    if len(set(agent_ids)) != len(agent_ids):
        raise InconsistentMessages("duplicate agent ids {}".format(sorted(agent_ids)))

    ordered = sorted(messages, key=lambda msg: msg.agent_id)
    return np.hstack([msg.basis.matrix for msg in ordered])


def _fuse(concat, fused_rank):
    concat = as_matrix(concat, "concatenated bases")
    limit = min(concat.shape)
    if fused_rank < 1 or fused_rank > limit:
        raise InvalidTruncation(
            "fused rank {} not in [1, {}] for a {} concatenation".format(
                fused_rank, limit, concat.shape
            )
        )
    svd = thin_svd(concat)
    s = svd.singular_values
    deficient = bool(s[fused_rank - 1] <= RANK_TOL * max(s[0], 1.0))
    if deficient:
        numeric_rank = int(np.sum(s > RANK_TOL * max(s[0], 1.0)))
        logger.warning(
            "fused rank %d requested but concatenation has numerical rank %d",
            fused_rank,
            numeric_rank,
        )
        warnings.warn(
            "concatenated bases have rank {} < {}; padding with trailing singular "
            "vectors".format(numeric_rank, fused_rank),
            FusedRankDeficient,
            stacklevel=3,
        )
    return truncate_basis(svd, fused_rank), s[:fused_rank], deficient


def fuse_bases(concat, fused_rank):
    basis, _, _ = _fuse(concat, fused_rank)
    return basis


def fuse_class(messages, fused_rank):
    basis, s, deficient = _fuse(concatenate_bases(messages), fused_rank)
    return FusedBasis(messages[0].class_id, basis, s, deficient)


def build_projectors(fused):
    return [projector_from_basis(f.basis if isinstance(f, FusedBasis) else f) for f in fused]


def fuse_round(messages, cfg, agent_count, previous):
    """
    Fuses every class that received a message from all agents. A class missing any
    message keeps its previous projector (identity before the first fusion).

    Returns (projectors, fused) where fused[k] is None for classes that were skipped.
    """
    projectors = list(previous)
    fused = [None] * len(previous)
    by_class = {}
    for msg in messages:
        by_class.setdefault(msg.class_id, []).append(msg)

    for k in range(len(previous)):
        received = by_class.get(k, [])
        if len(received) < agent_count:
            logger.info(
                "class %d: %d of %d bases received, keeping previous projector",
                k,
                len(received),
                agent_count,
            )
            continue
        fused_rank = min(cfg.fused_rank_for(k), sum(msg.rank for msg in received))
        fused[k] = fuse_class(received, fused_rank)
        projectors[k] = projector_from_basis(fused[k].basis)
    return projectors, fused


def identity_projectors(d, class_count):
    return [ProjectionOperator.identity(d) for _ in range(class_count)]
