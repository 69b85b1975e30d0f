import numpy as np
from mvfusion.external.orchestrator import RunConfig
from mvfusion.internal.data.synth import generate_dataset, generate_ground_truth
from mvfusion.internal.fusion.basis_fusion import BasisMessage
from mvfusion.math.linalg import random_orthonormal
from mvfusion.types import FeatureMatrix, MembershipPartition, OrthonormalBasis


def unit_features(rng, d, m):
    return FeatureMatrix.normalized(rng.standard_normal((d, m)))


def subspace_features(rng, basis, m, noise=0.0):
    """Unit-norm columns drawn from range(basis), plus optional isotropic noise."""
    basis = np.asarray(basis)
    z = basis @ rng.standard_normal((basis.shape[1], m))
    if noise:
        z = z + noise * rng.standard_normal(z.shape)
    return FeatureMatrix.normalized(z)


def balanced_partition(m, k):
    return MembershipPartition(np.arange(m) % k, k)


def axis_basis(d, *axes):
    return OrthonormalBasis(np.eye(d)[:, list(axes)])


def random_basis(rng, d, r):
    return OrthonormalBasis(random_orthonormal(rng, d, r))


def get_message(basis, agent_id=0, class_id=0, round=0, singular_values=None):
    if not isinstance(basis, OrthonormalBasis):
        basis = OrthonormalBasis(basis)
    if singular_values is None:
        singular_values = np.arange(basis.dim_subspace, 0, -1, dtype=np.float64)
    return BasisMessage(agent_id, class_id, round, basis, singular_values)


def get_dataset(seed=0, **kwargs):
    agents = kwargs.get("agents", 2)
    classes = kwargs.get("classes", 2)
    d = kwargs.get("ambient_dim", 8)
    class_dims = kwargs.get("class_dims", [2] * classes)
    agent_ranks = kwargs.get("agent_ranks", [sum(class_dims)] * agents)
    identity = kwargs.get("identity_views", True)
    gt = generate_ground_truth(d, classes, class_dims, agents, agent_ranks, seed)
    return generate_dataset(
        gt,
        kwargs.get("objects_per_class", 8),
        d if identity else kwargs.get("view_dim", 12),
        kwargs.get("noise_sigma", 0.01),
        seed + 1,
        identity_views=identity,
        class_view_rank=kwargs.get("class_view_rank"),
    )


def get_run_config(**kwargs):
    defaults = {
        "agents": 2,
        "classes": 2,
        "feature_dim": 8,
        "rounds": 3,
        "local_rank": 2,
        "fused_rank": 2,
        "inner_steps": 2,
        "batch_size": 16,
        "learning_rate": 0.01,
        "hidden_layers": (8,),
        "early_stop": False,
    }
    defaults.update(kwargs)
    return RunConfig(**defaults)


def finite_difference(fn, x, h=1e-5):
    """Central differences of a scalar function over every entry of x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + h
        up = fn(x)
        x[index] = original - h
        down = fn(x)
        x[index] = original
        grad[index] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    scale = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(np.asarray(analytic) - numeric))) / scale
