"""
Coding rate functionals on d x m feature matrices.

    R(Z)      = 1/2 logdet(I + d/(m eps^2) Z Z^T)
    R^c(Z|Pi) = sum_k tr(Pi_k)/(2m) logdet(I + d/(tr(Pi_k) eps^2) Z Pi_k Z^T)
    M(Z)      = R - R^c                               (maximized)
    loss      = R^c - R + lambda sum_k |Z_k - P_k Z_k|_F^2   (minimized)

Every logdet goes through a Cholesky factor of an SPD matrix of size min(d, m).
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from mvfusion.constants import DEFAULT_EPSILON_SQ
from mvfusion.errors import (
    ConfigError,
    DimensionMismatch,
    InvalidCount,
    InvalidPartition,
    NumericalFailure,
)
from mvfusion.types import ProjectionOperator, feature_array


@dataclass(frozen=True)
class RateConfig:
    epsilon_sq: float = DEFAULT_EPSILON_SQ
    feature_dim: int = None

    def __post_init__(self):
        if not self.epsilon_sq > 0:
            raise ConfigError("epsilon_sq must be positive, got {}".format(self.epsilon_sq))

    def check(self, z):
        if self.feature_dim is not None and z.shape[0] != self.feature_dim:
            raise DimensionMismatch(
                "features have dimension {}, config expects {}".format(z.shape[0], self.feature_dim)
            )


@dataclass(frozen=True)
class LocalLossValue:
    rate_expand: float
    rate_compress: float
    projection_penalty: float
    lam: float
    total: float

    @classmethod
    def assemble(cls, rate_expand, rate_compress, penalty, lam):
        total = rate_compress - rate_expand + lam * penalty
        return cls(float(rate_expand), float(rate_compress), float(penalty), float(lam), total)

    def as_dict(self):
        return {
            "rate_expand": self.rate_expand,
            "rate_compress": self.rate_compress,
            "projection_penalty": self.projection_penalty,
            "lambda": self.lam,
            "total": self.total,
        }


def _cholesky(a):
    try:
        return scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise NumericalFailure(
            "Cholesky of I + alpha Z Z^T failed", condition=float(np.linalg.cond(a))
        )


def _gram_system(z, alpha):
    d, m = z.shape
    if m < d:
        return np.eye(m) + alpha * (z.T @ z), True
    return np.eye(d) + alpha * (z @ z.T), False


def _half_logdet(z, alpha):
    if z.shape[1] == 0:
        return 0.0
    a, _ = _gram_system(z, alpha)
    c, _ = _cholesky(a)
    return float(np.sum(np.log(np.diag(c))))


def _half_logdet_gradient(z, alpha):
    """alpha (I + alpha Z Z^T)^{-1} Z, solved in whichever Gram size is smaller."""
    if z.shape[1] == 0:
        return np.zeros_like(z)
    a, commuted = _gram_system(z, alpha)
    factor = _cholesky(a)
    if commuted:
        # (I + a ZZ^T)^{-1} Z = Z (I + a Z^T Z)^{-1}
        return alpha * scipy.linalg.cho_solve(factor, z.T, check_finite=False).T
    return alpha * scipy.linalg.cho_solve(factor, z, check_finite=False)


def _check_partition(z, part):
    if part.sample_count != z.shape[1]:
        raise InvalidPartition(
            "partition covers {} samples, features have {}".format(part.sample_count, z.shape[1])
        )


def projector_matrix(p):
    if isinstance(p, ProjectionOperator):
        return p.matrix
    return np.asarray(p, dtype=np.float64)


def split_by_class(z, part):
    z = feature_array(z)
    _check_partition(z, part)
    return [z[:, part.indices(k)] for k in range(part.class_count)]


def coding_rate(z, cfg):
    z = feature_array(z)
    cfg.check(z)
    d, m = z.shape
    if m < 1:
        raise InvalidCount("coding rate needs at least one sample")
    return _half_logdet(z, d / (m * cfg.epsilon_sq))


def class_coding_rate(z, part, cfg):
    z = feature_array(z)
    cfg.check(z)
    _check_partition(z, part)
    d, m = z.shape
    if m < 1:
        raise InvalidCount("coding rate needs at least one sample")
    total = 0.0
    for k, count in enumerate(part.counts):
        if count == 0:
            continue
        zk = z[:, part.indices(k)]
        total += (count / m) * _half_logdet(zk, d / (count * cfg.epsilon_sq))
    return total


def mcr2_objective(z, part, cfg):
    return coding_rate(z, cfg) - class_coding_rate(z, part, cfg)


def projection_penalty(z_by_class, projectors):
    if len(z_by_class) != len(projectors):
        raise DimensionMismatch(
            "{} class blocks but {} projectors".format(len(z_by_class), len(projectors))
        )
    total = 0.0
    for zk, pk in zip(z_by_class, projectors):
        zk = feature_array(zk)
        pk = projector_matrix(pk)
        if pk.shape != (zk.shape[0], zk.shape[0]):
            raise DimensionMismatch(
                "projector {} does not act on {}-dim features".format(pk.shape, zk.shape[0])
            )
        residual = zk - pk @ zk
        total += float(np.sum(residual * residual))
    return total


def local_loss(z, part, projectors, lam, cfg):
    z = feature_array(z)
    penalty = projection_penalty(split_by_class(z, part), projectors)
    return LocalLossValue.assemble(
        coding_rate(z, cfg), class_coding_rate(z, part, cfg), penalty, lam
    )


def local_loss_gradient(z, part, projectors, lam, cfg):
    """d/dZ of R^c - R + lam * penalty, same shape as z."""
    z = feature_array(z)
    cfg.check(z)
    _check_partition(z, part)
    if len(projectors) != part.class_count:
        raise DimensionMismatch(
            "{} classes but {} projectors".format(part.class_count, len(projectors))
        )
    d, m = z.shape
    eps_sq = cfg.epsilon_sq

    grad = -_half_logdet_gradient(z, d / (m * eps_sq))
    for k, count in enumerate(part.counts):
        if count == 0:
            continue
        idx = part.indices(k)
        zk = z[:, idx]
        block = (count / m) * _half_logdet_gradient(zk, d / (count * eps_sq))
        if lam != 0:
            pk = projector_matrix(projectors[k])
            block = block + 2.0 * lam * (zk - pk @ zk)
        grad[:, idx] += block

    if not np.all(np.isfinite(grad)):
        raise NumericalFailure("non-finite local loss gradient")
    return grad
