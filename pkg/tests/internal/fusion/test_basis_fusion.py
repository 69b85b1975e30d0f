import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from mvfusion.errors import (
    ConfigError,
    EmptyClass,
    FusedRankDeficient,
    InconsistentMessages,
    InvalidCount,
    InvalidTruncation,
    NotOrthonormal,
)
from mvfusion.constants import MAX_MESSAGE_ID
from mvfusion.internal.fusion.basis_fusion import (
    BasisMessage,
    FusionConfig,
    build_projectors,
    concatenate_bases,
    extract_local_basis,
    fuse_bases,
    fuse_class,
    fuse_round,
    identity_projectors,
)
from mvfusion.math.linalg import grassmann_distance, projector_from_basis
from mvfusion.types import OrthonormalBasis, orthonormality_error
from tests.constants import ORTHO_TOL
from tests.helpers import axis_basis, get_message, random_basis


@pytest.mark.fusion
class TestExtractLocalBasis:
    def test_exact_rank(self):
        rng = np.random.default_rng(0)
        truth = random_basis(rng, 6, 2)
        z = truth.matrix @ rng.standard_normal((2, 10))
        msg = extract_local_basis(z, 2, agent_id=1, class_id=3, round=4)

        assert grassmann_distance(msg.basis, truth) <= 1e-8
        assert (msg.agent_id, msg.class_id, msg.round) == (1, 3, 4)
        assert msg.singular_values.size == 2

    def test_noisy_rank_five(self):
        rng = np.random.default_rng(1)
        truth = random_basis(rng, 12, 5)
        z = truth.matrix @ rng.standard_normal((5, 40)) + 1e-6 * rng.standard_normal((12, 40))
        assert grassmann_distance(extract_local_basis(z, 5).basis, truth) <= 1e-4

    def test_rank_above_sample_count(self):
        z = np.random.default_rng(2).standard_normal((6, 3))
        with pytest.raises(InvalidTruncation):
            extract_local_basis(z, 4)
        with pytest.raises(InvalidTruncation):
            extract_local_basis(z, 0)

    def test_empty_class(self):
        with pytest.raises(EmptyClass):
            extract_local_basis(np.zeros((6, 0)), 1)


@pytest.mark.fusion
class TestConcatenateBases:
    def test_single_agent(self):
        basis = random_basis(np.random.default_rng(0), 5, 2)
        assert np.array_equal(concatenate_bases([get_message(basis)]), basis.matrix)

    def test_duplicated_bases(self):
        basis = random_basis(np.random.default_rng(1), 5, 2)
        concat = concatenate_bases([get_message(basis, 0), get_message(basis, 1)])
        assert concat.shape == (5, 4)
        assert np.linalg.matrix_rank(concat) == 2

    def test_agent_order(self):
        rng = np.random.default_rng(9)
        bases = [random_basis(rng, 8, 3) for _ in range(3)]
        messages = [get_message(b, agent_id=i) for i, b in enumerate(bases)]
        concat = concatenate_bases(messages[::-1])

        assert concat.shape == (8, 9)
        assert np.array_equal(concat, np.hstack([b.matrix for b in bases]))

    def test_mixed_classes(self):
        basis = axis_basis(4, 0)
        with pytest.raises(InconsistentMessages):
            concatenate_bases([get_message(basis, 0, 0), get_message(basis, 1, 1)])

    def test_mixed_rounds(self):
        basis = axis_basis(4, 0)
        with pytest.raises(InconsistentMessages):
            concatenate_bases([get_message(basis, 0, round=0), get_message(basis, 1, round=1)])

    def test_mixed_dimensions(self):
        with pytest.raises(InconsistentMessages):
            concatenate_bases([get_message(axis_basis(4, 0), 0), get_message(axis_basis(5, 0), 1)])

    def test_duplicate_agents(self):
        basis = axis_basis(4, 0)
        with pytest.raises(InconsistentMessages):
            concatenate_bases([get_message(basis, 2), get_message(basis, 2)])

    def test_nothing_to_concatenate(self):
        with pytest.raises(InconsistentMessages):
            concatenate_bases([])


@pytest.mark.fusion
class TestFuseBases:
    def test_redundancy_removed(self):
        concat = np.hstack([axis_basis(5, 0, 1).matrix] * 3)
        fused = fuse_bases(concat, 2)
        assert grassmann_distance(fused, axis_basis(5, 0, 1)) <= 1e-12

    def test_complementary_union(self):
        concat = np.hstack([axis_basis(5, 0).matrix, axis_basis(5, 1).matrix])
        assert grassmann_distance(fuse_bases(concat, 2), axis_basis(5, 0, 1)) <= 1e-12

    def test_rank_deficient(self):
        messages = [get_message(axis_basis(5, 0), i) for i in range(2)]
        with pytest.warns(FusedRankDeficient):
            fused = fuse_class(messages, 2)
        assert fused.rank_deficient
        assert orthonormality_error(fused.basis.matrix) <= ORTHO_TOL
        assert abs(fused.basis.matrix[:, 0] @ np.eye(5)[:, 0]) == pytest.approx(1.0)

    def test_full_rank_is_not_flagged(self):
        messages = [get_message(axis_basis(5, i), i) for i in range(2)]
        with warnings.catch_warnings():
            warnings.simplefilter("error", FusedRankDeficient)
            fused = fuse_class(messages, 2)
        assert not fused.rank_deficient
        assert fused.class_id == 0

    @pytest.mark.parametrize("rank", [0, 7])
    def test_rank_out_of_range(self, rank):
        with pytest.raises(InvalidTruncation):
            fuse_bases(np.hstack([axis_basis(6, 0, 1).matrix] * 3), rank)

    @given(seed=st.integers(min_value=0, max_value=10000), fused_rank=st.integers(1, 6))
    @settings(max_examples=50, deadline=None)
    def test_fused_basis_properties(self, seed, fused_rank):
        rng = np.random.default_rng(seed)
        blocks = [random_basis(rng, 16, 3).matrix for _ in range(3)]
        concat = np.hstack(blocks)
        fused = fuse_bases(concat, fused_rank)

        assert orthonormality_error(fused.matrix) <= ORTHO_TOL
        # range(fused) inside range(concat)
        q, _ = np.linalg.qr(concat)
        assert np.linalg.norm(fused.matrix - q @ (q.T @ fused.matrix)) <= 1e-8

        permuted = fuse_bases(np.hstack(blocks[::-1]), fused_rank)
        assert grassmann_distance(fused, permuted) <= 1e-8

        refused = fuse_bases(np.hstack([fused.matrix, fused.matrix]), fused_rank)
        assert grassmann_distance(fused, refused) <= 1e-8


@pytest.mark.fusion
class TestFuseRound:
    def test_builds_projectors(self):
        projectors = build_projectors([axis_basis(4, 0, 1), axis_basis(4, 2)])
        assert np.allclose(projectors[0].matrix, np.diag([1.0, 1.0, 0.0, 0.0]))
        assert np.allclose(projectors[1].matrix, np.diag([0.0, 0.0, 1.0, 0.0]))

    def test_every_class_fused(self):
        cfg = FusionConfig(4, local_rank=1, fused_rank=2)
        messages = [
            get_message(axis_basis(4, 0), 0, 0),
            get_message(axis_basis(4, 1), 1, 0),
            get_message(axis_basis(4, 2), 0, 1),
            get_message(axis_basis(4, 3), 1, 1),
        ]
        projectors, fused = fuse_round(messages, cfg, 2, identity_projectors(4, 2))
        assert np.allclose(projectors[0].matrix, np.diag([1.0, 1.0, 0.0, 0.0]))
        assert np.allclose(projectors[1].matrix, np.diag([0.0, 0.0, 1.0, 1.0]))
        assert all(f is not None for f in fused)

    def test_missing_class_keeps_previous(self):
        cfg = FusionConfig(4, local_rank=1, fused_rank=2)
        previous = identity_projectors(4, 2)
        messages = [get_message(axis_basis(4, 0), 0, 0), get_message(axis_basis(4, 1), 1, 0)]
        projectors, fused = fuse_round(messages, cfg, 2, previous)

        assert projectors[1] is previous[1]
        assert fused[1] is None
        assert fused[0] is not None

    def test_partial_class_keeps_previous(self):
        cfg = FusionConfig(4, local_rank=1, fused_rank=1)
        previous = [projector_from_basis(axis_basis(4, 3))]
        projectors, fused = fuse_round([get_message(axis_basis(4, 0), 0, 0)], cfg, 2, previous)
        assert projectors[0] is previous[0]
        assert fused == [None]

    def test_fused_rank_clamped_to_received(self):
        cfg = FusionConfig(6, local_rank=3, fused_rank=5)
        messages = [get_message(axis_basis(6, i), i, 0) for i in range(2)]
        _, fused = fuse_round(messages, cfg, 2, identity_projectors(6, 1))
        assert fused[0].basis.dim_subspace == 2


@pytest.mark.fusion
class TestFusionConfig:
    def test_class_overrides(self):
        cfg = FusionConfig(16, 4, 6, {2: {"local_rank": 2, "fused_rank": 3}})
        assert (cfg.local_rank_for(0), cfg.fused_rank_for(0)) == (4, 6)
        assert (cfg.local_rank_for(2), cfg.fused_rank_for(2)) == (2, 3)
        cfg.validate(3, 4)

    @pytest.mark.parametrize(
        "local_rank,fused_rank", [(0, 1), (17, 16), (4, 0), (4, 13), (16, 17)]
    )
    def test_invalid_ranks(self, local_rank, fused_rank):
        with pytest.raises(ConfigError):
            FusionConfig(16, local_rank, fused_rank).validate(3, 2)

    def test_basis_requires_orthonormal_columns(self):
        with pytest.raises(NotOrthonormal):
            get_message(OrthonormalBasis(np.ones((3, 2))))


@pytest.mark.fusion
class TestBasisMessage:
    @pytest.mark.parametrize("field", ["agent_id", "class_id", "round"])
    @pytest.mark.parametrize("value", [-1, MAX_MESSAGE_ID + 1, 2**40, True, 1.0, "3", None])
    def test_invalid_identifier(self, field, value):
        ids = {"agent_id": 0, "class_id": 0, "round": 0}
        ids[field] = value
        with pytest.raises(InvalidCount):
            BasisMessage(basis=axis_basis(4, 0), singular_values=[1.0], **ids)

    @given(st.integers(min_value=0, max_value=MAX_MESSAGE_ID))
    def test_identifier_range(self, value):
        msg = get_message(axis_basis(4, 0), agent_id=value, class_id=value, round=value)
        assert (msg.agent_id, msg.class_id, msg.round) == (value, value, value)

    def test_numpy_identifiers_become_int(self):
        msg = get_message(axis_basis(4, 0), agent_id=np.int64(3), class_id=np.uint32(1))
        assert type(msg.agent_id) is int and type(msg.class_id) is int
