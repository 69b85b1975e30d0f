import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from mvfusion.errors import CorruptMessage, NumericalFailure, ShapeMismatch
from mvfusion.internal.encoder.mlp import (
    EncoderParams,
    backward,
    forward,
    init_params,
    load_params,
    params_from_bytes,
    params_to_bytes,
    save_params,
)
from mvfusion.internal.rate.coding_rate import RateConfig, local_loss, local_loss_gradient
from mvfusion.math.linalg import projector_from_basis
from tests.constants import EPSILON_SQ, PARAM_GRAD_TOL
from tests.helpers import balanced_partition, finite_difference, random_basis, relative_error


def parameter_gradient_error(params, x, loss_of_output, upstream_of_output, h=1e-6):
    analytic = backward(params, x, upstream_of_output(forward(params, x).matrix))
    arrays = params.arrays()
    worst = 0.0
    for i, array in enumerate(arrays):

        def loss(value, i=i):
            trial = list(arrays)
            trial[i] = value
            return loss_of_output(forward(params.with_arrays(trial), x).matrix)

        numeric = finite_difference(loss, array, h)
        worst = max(worst, relative_error(analytic[i], numeric))
    return worst


@pytest.mark.encoder
class TestForward:
    def test_bias_only_output(self):
        rng = np.random.default_rng(0)
        params = init_params([4, 5, 3], rng)
        params.weights[-1] = np.zeros((3, 5))
        params.biases[-1] = np.array([1.0, 0.0, 0.0])
        z = forward(params, rng.standard_normal((4, 6)))
        assert np.allclose(z.matrix, np.tile([[1.0], [0.0], [0.0]], (1, 6)))

    @given(seed=st.integers(min_value=0, max_value=10000))
    @settings(max_examples=30, deadline=None)
    def test_unit_norm_output(self, seed):
        rng = np.random.default_rng(seed)
        params = init_params([6, 8, 8, 4], rng, activation="tanh")
        z = forward(params, rng.standard_normal((6, 10)))
        assert np.allclose(np.linalg.norm(z.matrix, axis=0), 1.0, atol=1e-8)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        params = init_params([5, 7, 3], rng)
        x = rng.standard_normal((5, 9))
        assert np.array_equal(forward(params, x).matrix, forward(params, x).matrix)

    def test_input_dimension(self):
        params = init_params([5, 3], np.random.default_rng(0))
        with pytest.raises(ShapeMismatch):
            forward(params, np.ones((4, 2)))

    def test_collapsed_output(self):
        params = init_params([3, 2], np.random.default_rng(0))
        params.weights[0] = np.zeros((2, 3))
        with pytest.raises(NumericalFailure):
            forward(params, np.ones((3, 2)))

    def test_layer_chain_checked(self):
        with pytest.raises(ShapeMismatch):
            EncoderParams([np.ones((4, 3)), np.ones((2, 5))], [np.zeros(4), np.zeros(2)])
        with pytest.raises(ShapeMismatch):
            EncoderParams([np.ones((4, 3))], [np.zeros(3)])
        with pytest.raises(ShapeMismatch):
            EncoderParams([np.ones((4, 3))], [np.zeros(4)], activation="sigmoid")

    def test_non_finite_parameters(self):
        with pytest.raises(NumericalFailure):
            EncoderParams([np.full((2, 2), np.nan)], [np.zeros(2)])


@pytest.mark.encoder
class TestBackward:
    def test_radial_upstream_is_annihilated(self):
        rng = np.random.default_rng(2)
        params = init_params([4, 6, 3], rng)
        x = rng.standard_normal((4, 5))
        z = forward(params, x).matrix
        grads = backward(params, x, z * rng.uniform(0.5, 2.0, size=5))
        assert all(np.allclose(g, 0.0, atol=1e-12) for g in grads)

    def test_zero_upstream(self):
        rng = np.random.default_rng(3)
        params = init_params([4, 6, 3], rng)
        x = rng.standard_normal((4, 5))
        grads = backward(params, x, np.zeros((3, 5)))
        assert all(not np.any(g) for g in grads)
        assert [g.shape for g in grads] == [a.shape for a in params.arrays()]

    def test_upstream_shape(self):
        params = init_params([4, 3], np.random.default_rng(0))
        with pytest.raises(ShapeMismatch):
            backward(params, np.ones((4, 5)), np.ones((3, 4)))

    def test_two_layer_finite_differences(self):
        rng = np.random.default_rng(17)
        params = init_params([5, 6, 3], rng)
        x = rng.standard_normal((5, 4))
        upstream = rng.standard_normal((3, 4))
        error = parameter_gradient_error(
            params, x, lambda z: float(np.sum(upstream * z)), lambda z: upstream
        )
        assert error <= PARAM_GRAD_TOL

    @given(seed=st.integers(min_value=0, max_value=10000))
    @settings(max_examples=10, deadline=None)
    def test_local_loss_through_encoder(self, seed):
        rng = np.random.default_rng(seed)
        params = init_params([4, 5, 3], rng, activation="tanh")
        x = rng.standard_normal((4, 6))
        part = balanced_partition(6, 2)
        projectors = [projector_from_basis(random_basis(rng, 3, 2)) for _ in range(2)]
        cfg = RateConfig(EPSILON_SQ)

        error = parameter_gradient_error(
            params,
            x,
            lambda z: local_loss(z, part, projectors, 1.0, cfg).total,
            lambda z: local_loss_gradient(z, part, projectors, 1.0, cfg),
        )
        assert error <= PARAM_GRAD_TOL


@pytest.mark.encoder
class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = init_params([6, 4, 3], np.random.default_rng(0), activation="tanh")
        path = str(tmp_path / "agent_0.mvfe")
        save_params(params, path)
        loaded = load_params(path)

        assert loaded.activation == "tanh"
        assert loaded.layer_sizes == [6, 4, 3]
        for a, b in zip(params.arrays(), loaded.arrays()):
            assert a.tobytes() == b.tobytes()

    def test_bad_header(self):
        data = params_to_bytes(init_params([3, 2], np.random.default_rng(0)))
        with pytest.raises(CorruptMessage):
            params_from_bytes(b"XXXX" + data[4:])
        with pytest.raises(CorruptMessage):
            params_from_bytes(data[:6])

    def test_truncated(self):
        data = params_to_bytes(init_params([3, 4, 2], np.random.default_rng(0)))
        with pytest.raises(CorruptMessage):
            params_from_bytes(data[:-1])

    def test_copy_is_independent(self):
        params = init_params([3, 2], np.random.default_rng(0))
        clone = params.copy()
        clone.weights[0][0, 0] += 1.0
        assert clone.weights[0][0, 0] != params.weights[0][0, 0]
