from dataclasses import dataclass, field

import numpy as np

from mvfusion.constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from mvfusion.errors import ConfigError, ShapeMismatch
from mvfusion.types import FeatureMatrix, feature_array

METHODS = ("adam", "sgd")


@dataclass(eq=False)
class OptimizerState:
    method: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    first: list = field(default_factory=list)
    second: list = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError("optimizer must be one of {}, got {}".format(METHODS, self.method))
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning rate must be positive and weight decay non-negative")


def init_optimizer(arrays, method="adam", learning_rate=1e-3, weight_decay=0.0):
    return OptimizerState(
        method=method,
        learning_rate=learning_rate,
        weight_decay=weight_decay,
        first=[np.zeros_like(a) for a in arrays],
        second=[np.zeros_like(a) for a in arrays],
    )


def optimizer_step(state, arrays, grads):
    """
    One Adam or SGD step with decoupled weight decay. Returns new arrays; the moment
    accumulators in `state` advance in place.
    """
    if len(arrays) != len(grads) or len(arrays) != len(state.first):
        raise ShapeMismatch("optimizer state, parameters and gradients disagree in length")
    state.step += 1
    lr, wd = state.learning_rate, state.weight_decay
    updated = []
    for i, (p, g) in enumerate(zip(arrays, grads)):
        if p.shape != g.shape:
            raise ShapeMismatch(
                "parameter {} has shape {}, gradient {}".format(i, p.shape, g.shape)
            )
        if state.method == "adam":
            state.first[i] = state.beta1 * state.first[i] + (1 - state.beta1) * g
            state.second[i] = state.beta2 * state.second[i] + (1 - state.beta2) * g * g
            m_hat = state.first[i] / (1 - state.beta1 ** state.step)
            v_hat = state.second[i] / (1 - state.beta2 ** state.step)
            direction = m_hat / (np.sqrt(v_hat) + state.eps)
        else:
            direction = g
        updated.append(p - lr * direction - lr * wd * p)
    return updated


def direct_feature_step(z, grad, step_size, part=None, projectors=None, lam=0.0):
    """
    Gradient step on the features themselves followed by projection onto the sphere.

    With a partition and projectors, the projection penalty lam * |(I - P_k) Z_k|^2 is
    taken as a proximal step after the gradient step: the residual of class k shrinks by
    1 / (1 + 2 lam step_size). `grad` then carries the rate terms only.
    """
    z = feature_array(z)
    stepped = z - step_size * np.asarray(grad, dtype=np.float64)
    if part is not None and projectors is not None and lam > 0:
        if len(projectors) != part.class_count:
            raise ShapeMismatch(
                "{} projectors for {} classes".format(len(projectors), part.class_count)
            )
        shrink = 1.0 / (1.0 + 2.0 * lam * step_size)
        for k, projector in enumerate(projectors):
            idx = part.indices(k)
            inside = projector.matrix @ stepped[:, idx]
            stepped[:, idx] = inside + shrink * (stepped[:, idx] - inside)
    return FeatureMatrix.normalized(stepped)
