from dataclasses import dataclass

import numpy as np

from mvfusion.constants import ORTHONORMAL_TOL, UNIT_NORM_TOL
from mvfusion.errors import (
    DimensionMismatch,
    InvalidMatrix,
    InvalidPartition,
    NotOrthonormal,
    ShapeMismatch,
)


def as_matrix(a, name="matrix"):
    """Returns a read-only float64 2-D copy of `a`, rejecting NaN/Inf entries."""
    m = np.array(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise InvalidMatrix("{} must be 2-dimensional, got {} dims".format(name, m.ndim))
    if not np.all(np.isfinite(m)):
        raise InvalidMatrix("{} has non-finite entries".format(name))
    m.setflags(write=False)
    return m


def canonical_signs(u):
    """
    Sign per column that makes the entry of largest magnitude positive. np.argmax returns
    the lowest row index among ties.
    """
    if u.shape[1] == 0:
        return np.ones(0)
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def orthonormality_error(u):
    if u.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(u.T @ u - np.eye(u.shape[1]))))


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    matrix: np.ndarray

    def __post_init__(self):
        m = as_matrix(self.matrix, "basis")
        if m.shape[1] > m.shape[0]:
            raise NotOrthonormal(
                "basis has {} columns in a {}-dimensional space".format(m.shape[1], m.shape[0])
            )
        err = orthonormality_error(m)
        if err > ORTHONORMAL_TOL:
            raise NotOrthonormal("max |U^T U - I| = {:.3e}".format(err))
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_columns(cls, columns, canonical=True):
        m = np.array(columns, dtype=np.float64)
        if m.ndim == 1:
            m = m.reshape(-1, 1)
        if canonical:
            m = m * canonical_signs(m)
        return cls(m)

    @property
    def dim_ambient(self):
        return self.matrix.shape[0]

    @property
    def dim_subspace(self):
        return self.matrix.shape[1]

    def leading(self, p):
        return OrthonormalBasis(self.matrix[:, :p])


@dataclass(frozen=True, eq=False)
class SingularTriple:
    u_basis: OrthonormalBasis
    singular_values: np.ndarray
    v_basis: OrthonormalBasis

    def __post_init__(self):
        s = np.array(self.singular_values, dtype=np.float64)
        s.setflags(write=False)
        object.__setattr__(self, "singular_values", s)

    @property
    def rank(self):
        return len(self.singular_values)

    def reconstruct(self):
        return (self.u_basis.matrix * self.singular_values) @ self.v_basis.matrix.T


@dataclass(frozen=True, eq=False)
class ProjectionOperator:
    matrix: np.ndarray

    def __post_init__(self):
        m = as_matrix(self.matrix, "projector")
        if m.shape[0] != m.shape[1]:
            raise ShapeMismatch("projector must be square, got {}".format(m.shape))
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d))

    @classmethod
    def zero(cls, d):
        return cls(np.zeros((d, d)))

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def rank(self):
        return int(round(float(np.trace(self.matrix))))

    def complement(self):
        return np.eye(self.dim) - self.matrix


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        m = as_matrix(self.matrix, "features")
        if m.shape[1] > 0:
            norms = np.linalg.norm(m, axis=0)
            worst = float(np.max(np.abs(norms - 1.0)))
            if worst > UNIT_NORM_TOL:
                raise InvalidMatrix(
                    "feature columns must have unit norm (off by {:.3e})".format(worst)
                )
        object.__setattr__(self, "matrix", m)

    @classmethod
    def normalized(cls, matrix):
        m = np.array(matrix, dtype=np.float64)
        norms = np.linalg.norm(m, axis=0)
        norms[norms == 0] = 1.0
        return cls(m / norms)

    @property
    def feature_dim(self):
        return self.matrix.shape[0]

    @property
    def sample_count(self):
        return self.matrix.shape[1]

    def columns(self, index):
        return FeatureMatrix(self.matrix[:, index])


def feature_array(z, name="features"):
    """Accepts a FeatureMatrix or a raw d x m array; raw arrays skip the unit-norm check."""
    if isinstance(z, FeatureMatrix):
        return z.matrix
    return as_matrix(z, name)


@dataclass(frozen=True, eq=False)
class MembershipPartition:
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if self.class_count < 1:
            raise InvalidPartition("class_count must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise InvalidPartition(
                "labels must lie in [0, {}), got range [{}, {}]".format(
                    self.class_count, labels.min(), labels.max()
                )
            )
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def sample_count(self):
        return self.labels.size

    @property
    def counts(self):
        return np.bincount(self.labels, minlength=self.class_count)

    def indices(self, k):
        return np.flatnonzero(self.labels == k)

    def subset(self, index):
        return MembershipPartition(self.labels[index], self.class_count)


def check_same_ambient(d1, d2, what="subspaces"):
    if d1 != d2:
        raise DimensionMismatch(
            "{} live in different ambient dimensions: {} vs {}".format(what, d1, d2)
        )
