"""Thin SVD with a fixed sign convention, projectors and principal angles."""
import logging

import numpy as np
import scipy.linalg

from mvfusion.constants import PROJECTOR_TOL, TRACE_TOL
from mvfusion.errors import DimensionMismatch, InvalidTruncation, NotOrthonormal, NumericalFailure
from mvfusion.types import (
    OrthonormalBasis,
    ProjectionOperator,
    SingularTriple,
    as_matrix,
    canonical_signs,
    check_same_ambient,
)

logger = logging.getLogger(__name__)


def _condition_estimate(a):
    try:
        s = np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError:
        return float("inf")
    if s.size == 0 or s[-1] == 0:
        return float("inf")
    return float(s[0] / s[-1])


def thin_svd(a):
    a = as_matrix(a, "svd input")
    if min(a.shape) < 1:
        raise DimensionMismatch("svd input must have at least one row and column")

    try:
        u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge where the slower QR-iteration driver succeeds
        logger.debug("gesdd did not converge on %s input, retrying with gesvd", a.shape)
        try:
            u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError:
            raise NumericalFailure(
                "SVD did not converge on {} matrix".format(a.shape),
                condition=_condition_estimate(a),
            )

    # LAPACK already sorts descending; a stable sort pins the documented tie rule
    order = np.argsort(-s, kind="stable")
    u, s, v = u[:, order], s[order], vt[order, :].T

    signs = canonical_signs(u)
    u = u * signs
    v = v * signs
    return SingularTriple(OrthonormalBasis(u), s, OrthonormalBasis(v))


def truncate_basis(svd, p):
    available = svd.u_basis.dim_subspace
    if p < 1 or p > available:
        raise InvalidTruncation("cannot keep {} of {} singular vectors".format(p, available))
    return svd.u_basis.leading(p)


def projector_from_basis(u):
    if not isinstance(u, OrthonormalBasis):
        u = OrthonormalBasis(u)
    m = u.matrix
    p = m @ m.T
    # Symmetrize to remove rounding asymmetry in the product
    p = 0.5 * (p + p.T)

    idempotence = float(np.linalg.norm(p @ p - p))
    if idempotence > PROJECTOR_TOL or abs(np.trace(p) - u.dim_subspace) > TRACE_TOL:
        raise NotOrthonormal(
            "projector check failed: |P^2 - P|_F = {:.3e}, trace = {}".format(
                idempotence, np.trace(p)
            )
        )
    return ProjectionOperator(p)


def principal_angles(u1, u2):
    """Sorted principal angles in [0, pi/2]; min(r1, r2) of them when the ranks differ."""
    check_same_ambient(u1.dim_ambient, u2.dim_ambient)
    if u1.dim_subspace == 0 or u2.dim_subspace == 0:
        return np.zeros(0)
    cosines = scipy.linalg.svd(u1.matrix.T @ u2.matrix, compute_uv=False)
    cosines = np.clip(cosines, 0.0, 1.0)
    return np.sort(np.arccos(cosines))


def grassmann_distance(u1, u2):
    """Spectral norm of the projector difference, i.e. |sin Theta|_2, for equal ranks."""
    check_same_ambient(u1.dim_ambient, u2.dim_ambient)
    if u1.dim_subspace != u2.dim_subspace:
        raise DimensionMismatch(
            "Grassmann distance needs equal ranks, got {} and {}".format(
                u1.dim_subspace, u2.dim_subspace
            )
        )
    diff = u1.matrix @ u1.matrix.T - u2.matrix @ u2.matrix.T
    return float(min(1.0, np.linalg.norm(diff, 2)))


def containment_distance(truth, estimate):
    """
    Sine of the largest of the min(r1, r2) principal angles. Zero when the lower rank
    subspace is contained in the other one; used where ranks legitimately differ.
    """
    angles = principal_angles(truth, estimate)
    if angles.size == 0:
        return 0.0
    return float(np.sin(angles[-1]))


def orthonormal_complement(u, rng, count):
    """`count` random orthonormal directions orthogonal to range(u)."""
    d, r = u.matrix.shape
    if count > d - r:
        raise InvalidTruncation(
            "complement of a rank {} subspace in R^{} has no {} directions".format(r, d, count)
        )
    g = rng.standard_normal((d, count))
    g = g - u.matrix @ (u.matrix.T @ g)
    q, _ = scipy.linalg.qr(g, mode="economic")
    # Second projection keeps q orthogonal to u at machine precision
    q = q - u.matrix @ (u.matrix.T @ q)
    q, _ = scipy.linalg.qr(q, mode="economic")
    return q


def random_orthonormal(rng, d, r):
    q, rr = scipy.linalg.qr(rng.standard_normal((d, r)), mode="economic")
    return q * np.sign(np.where(np.diag(rr) == 0, 1.0, np.diag(rr)))
