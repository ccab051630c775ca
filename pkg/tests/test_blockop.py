import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jaffardkit.blockop import (
    BlockMatrix,
    BlockVector,
    WeightSpec,
    apply,
    block_norm,
    column_pnorm_bound,
    entry_sup,
    involve,
    load_matrix,
    multiply,
    operator_norm_l2,
    save_matrix,
    vector_pnorm,
)
from jaffardkit.errors import ConvergenceError, ParameterError, ShapeError
from jaffardkit.jaffard import jaffard_norm, random_jaffard
from jaffardkit.pointset import PointSet, make_jittered, make_lattice


def random_matrix(n, m, seed, d=1):
    X = make_lattice(d, n) if d == 1 else make_jittered(d, n, 1.0, 0.2, seed)
    rng = np.random.default_rng(seed)
    shape = (len(X), len(X), m, m)
    return BlockMatrix(X, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def random_vector(X, m, rng):
    return BlockVector(X, rng.standard_normal((len(X), m)) + 1j * rng.standard_normal((len(X), m)))


def assert_blocks_close(A, B, rtol):
    scale = max(np.max(np.abs(A.blocks)), np.max(np.abs(B.blocks)), 1e-300)
    assert np.max(np.abs(A.blocks - B.blocks)) <= rtol * scale


class TestMultiply:
    def test_identity_is_neutral(self):
        A = random_matrix(6, 3, 0)
        assert np.array_equal(multiply(A, BlockMatrix.identity(A.index_set, 3)).blocks, A.blocks)

    def test_scalar_two_by_two(self):
        X = PointSet([0.0, 1.0])
        A = BlockMatrix(X, np.array([[1, 2], [3, 4]]).reshape(2, 2, 1, 1))
        B = BlockMatrix(X, np.array([[5, 6], [7, 8]]).reshape(2, 2, 1, 1))
        assert multiply(A, B).blocks[..., 0, 0].real.tolist() == [[19, 22], [43, 50]]

    def test_matches_dense_product(self):
        A, B = random_matrix(8, 2, 1), random_matrix(8, 2, 2)
        dense = A.to_dense() @ B.to_dense()
        assert np.allclose(multiply(A, B).to_dense(), dense, rtol=0, atol=1e-12 * np.abs(dense).max())

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            multiply(random_matrix(4, 2, 0), random_matrix(4, 3, 0))
        with pytest.raises(ShapeError):
            multiply(random_matrix(4, 2, 0), random_matrix(5, 2, 0))

    def test_associative(self):
        A, B, C = (random_matrix(8, 2, s) for s in (3, 4, 5))
        assert_blocks_close(multiply(multiply(A, B), C), multiply(A, multiply(B, C)), 1e-10)

    def test_matmul_operator(self):
        A, B = random_matrix(5, 2, 6), random_matrix(5, 2, 7)
        assert np.array_equal((A @ B).blocks, multiply(A, B).blocks)


class TestInvolve:
    def test_involution(self):
        A = random_matrix(7, 3, 8)
        assert np.array_equal(involve(involve(A)).blocks, A.blocks)

    def test_selfadjoint_diagonal_fixed(self):
        X = make_lattice(1, 4)
        rng = np.random.default_rng(0)
        M = rng.standard_normal((4, 2, 2)) + 1j * rng.standard_normal((4, 2, 2))
        blocks = np.zeros((4, 4, 2, 2), dtype=complex)
        blocks[range(4), range(4)] = M + np.conj(np.transpose(M, (0, 2, 1)))
        A = BlockMatrix(X, blocks)
        assert np.array_equal(involve(A).blocks, A.blocks)

    def test_adjoint_identity(self):
        A = random_matrix(8, 2, 9)
        Astar = involve(A)
        rng = np.random.default_rng(1)
        for _ in range(50):
            g, h = random_vector(A.index_set, 2, rng), random_vector(A.index_set, 2, rng)
            lhs = np.vdot(h.to_dense(), A.to_dense() @ g.to_dense())
            rhs = np.vdot(apply(Astar, h).to_dense(), g.to_dense())
            assert abs(lhs - rhs) <= 1e-12 * abs(lhs)

    def test_anti_homomorphism(self):
        A, B = random_matrix(8, 2, 10), random_matrix(8, 2, 11)
        assert_blocks_close(involve(multiply(A, B)), multiply(involve(B), involve(A)), 1e-12)


class TestApply:
    def test_identity(self):
        X = make_lattice(2, 3)
        g = random_vector(X, 2, np.random.default_rng(0))
        assert np.array_equal(apply(BlockMatrix.identity(X, 2), g).blocks, g.blocks)

    def test_single_block_support(self):
        X = make_lattice(1, 6)
        blocks = np.zeros((6, 6, 2, 2), dtype=complex)
        blocks[2, 4] = [[1, 2], [3, 4]]
        out = apply(BlockMatrix(X, blocks), random_vector(X, 2, np.random.default_rng(3)))
        support = np.flatnonzero(np.linalg.norm(out.blocks, axis=1))
        assert support.tolist() == [2]

    def test_matches_dense(self):
        A = random_matrix(12, 3, 12)
        g = random_vector(A.index_set, 3, np.random.default_rng(4))
        dense = A.to_dense() @ g.to_dense()
        assert np.linalg.norm(apply(A, g).to_dense() - dense) <= 1e-12 * np.linalg.norm(dense)

    @settings(max_examples=30, deadline=None)
    @given(alpha_re=st.floats(-5, 5), alpha_im=st.floats(-5, 5), seed=st.integers(0, 2**32 - 1))
    def test_linear(self, alpha_re, alpha_im, seed):
        rng = np.random.default_rng(seed)
        A = random_matrix(6, 2, seed % 1000)
        g, h = random_vector(A.index_set, 2, rng), random_vector(A.index_set, 2, rng)
        alpha = complex(alpha_re, alpha_im)
        lhs = apply(A, alpha * g + h).to_dense()
        rhs = alpha * apply(A, g).to_dense() + apply(A, h).to_dense()
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(np.linalg.norm(lhs), 1.0)

    def test_shape_error(self):
        A = random_matrix(4, 2, 0)
        with pytest.raises(ShapeError):
            apply(A, BlockVector(A.index_set, np.zeros((4, 3))))


class TestVectorNorm:
    def test_unit_block(self):
        X = make_lattice(1, 5)
        blocks = np.zeros((5, 3))
        blocks[2, 1] = 1.0
        assert vector_pnorm(BlockVector(X, blocks), 2) == 1.0

    def test_weighted_sup(self):
        X = make_lattice(1, 4)
        g = BlockVector(X, np.array([[3.0], [0.0], [1.0], [0.5]]))
        w = WeightSpec("polynomial", 1.0)
        assert vector_pnorm(g, math.inf, w) == max(3.0 * 1, 1.0 * 3, 0.5 * 4)

    def test_quasi_norm_breaks_triangle_inequality(self):
        X = make_lattice(1, 4)
        witness = None
        for i in range(4):
            for j in range(4):
                g = np.zeros((4, 1)); g[i] = 1
                h = np.zeros((4, 1)); h[j] = 1
                G, H = BlockVector(X, g), BlockVector(X, h)
                if vector_pnorm(G + H, 0.5) > vector_pnorm(G, 0.5) + vector_pnorm(H, 0.5):
                    witness = (i, j)
        assert witness is not None

    @pytest.mark.parametrize("p", [0, -1])
    def test_nonpositive_p(self, p):
        with pytest.raises(ParameterError):
            vector_pnorm(BlockVector(make_lattice(1, 2), np.ones((2, 1))), p)

    def test_unit_weight(self):
        assert np.all(WeightSpec()(np.random.default_rng(0).standard_normal((7, 2))) == 1.0)

    def test_negative_exponent_rejected(self):
        with pytest.raises(ParameterError):
            WeightSpec("polynomial", -1.0)


class TestBlockNorm:
    def test_identity(self):
        assert block_norm(np.eye(3)) == pytest.approx(1.0, abs=1e-15)

    def test_rank_one(self):
        u, v = np.array([1.0, 2.0, 2.0]), np.array([0.0, 3.0, 4.0j])
        assert block_norm(np.outer(u, v.conj())) == pytest.approx(3.0 * 5.0, rel=1e-14)

    def test_against_gram_eigenvalue(self):
        rng = np.random.default_rng(5)
        M = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        oracle = math.sqrt(np.linalg.eigvalsh(M.conj().T @ M)[-1])
        assert block_norm(M) == pytest.approx(oracle, rel=1e-8)


class TestOperatorNorm:
    def test_block_diagonal(self):
        X = make_lattice(1, 3)
        blocks = np.zeros((3, 3, 2, 2), dtype=complex)
        blocks[0, 0] = np.diag([1.0, 2.0])
        blocks[1, 1] = [[0, 3.5], [0, 0]]
        blocks[2, 2] = np.eye(2)
        assert operator_norm_l2(BlockMatrix(X, blocks)) == pytest.approx(3.5, rel=1e-10)

    def test_single_off_diagonal_block(self):
        X = make_lattice(1, 5)
        blocks = np.zeros((5, 5, 2, 2), dtype=complex)
        blocks[1, 3] = [[0.0, 1.25j], [0.5, 0.0]]
        assert operator_norm_l2(BlockMatrix(X, blocks)) == pytest.approx(1.25, rel=1e-10)

    def test_zero(self):
        assert operator_norm_l2(BlockMatrix.zeros(make_lattice(1, 3), 2)) == 0.0

    def test_matches_svd(self):
        for seed in range(5):
            A = random_matrix(16, 2, seed)
            oracle = np.linalg.svd(A.to_dense(), compute_uv=False)[0]
            assert operator_norm_l2(A) == pytest.approx(oracle, rel=1e-6)

    def test_roundoff_sized_matrix(self):
        # tiny, nearly degenerate spectra like inverse residuals still converge
        rng = np.random.default_rng(0)
        R = 1e-16 * rng.standard_normal((40, 40))
        A = BlockMatrix.from_dense(make_lattice(1, 40), 1, R)
        assert operator_norm_l2(A) == pytest.approx(np.linalg.norm(R, 2), rel=1e-8)

    def test_cstar_symmetry(self):
        for seed in range(5):
            A = random_matrix(10, 2, 100 + seed)
            assert operator_norm_l2(involve(A)) == pytest.approx(operator_norm_l2(A), rel=1e-8)

    def test_nonconvergence_reports_iterate(self):
        A = random_matrix(16, 2, 3)
        with pytest.raises(ConvergenceError) as info:
            operator_norm_l2(A, max_iter=1)
        assert info.value.last_iterate.shape == (32,)
        assert info.value.last_residual > 0


class TestColumnBound:
    @pytest.mark.parametrize("p", [1, 1.5, 2, 3])
    def test_identity(self, p):
        assert column_pnorm_bound(BlockMatrix.identity(make_lattice(1, 4), 3), p) == pytest.approx(1.0, rel=1e-10)

    def test_single_column_gram(self):
        X = make_lattice(1, 5)
        rng = np.random.default_rng(7)
        blocks = np.zeros((5, 5, 2, 2), dtype=complex)
        blocks[:, 2] = rng.standard_normal((5, 2, 2)) + 1j * rng.standard_normal((5, 2, 2))
        gram = sum(b.conj().T @ b for b in blocks[:, 2])
        expected = math.sqrt(np.linalg.eigvalsh(gram)[-1])
        assert column_pnorm_bound(BlockMatrix(X, blocks), 2) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("p", [1.0, 1.5, 3.0])
    def test_scalar_blocks_exact(self, p):
        # m = 1: the inner supremum is attained by any unit scalar
        A = random_matrix(6, 1, 8)
        expected = max(np.sum(np.abs(A.blocks[:, l, 0, 0]) ** p) ** (1 / p) for l in range(6))
        assert column_pnorm_bound(A, p) == pytest.approx(expected, rel=1e-12)

    def test_ascent_matches_p2_closed_form(self):
        # p = 2 through the ascent path must agree with the Gram eigenvalue
        A = random_matrix(6, 3, 9)
        assert column_pnorm_bound(A, 2.0000001) == pytest.approx(column_pnorm_bound(A, 2), rel=1e-5)

    def test_below_operator_norm(self):
        for seed in range(100):
            A = random_matrix(6, 2, 200 + seed)
            assert column_pnorm_bound(A, 2) <= operator_norm_l2(A) + 1e-8

    @pytest.mark.parametrize("p", [0.5, math.inf])
    def test_range(self, p):
        with pytest.raises(ParameterError):
            column_pnorm_bound(random_matrix(3, 1, 0), p)


class TestEntrySup:
    def test_identity(self):
        assert entry_sup(BlockMatrix.identity(make_lattice(2, 2), 2)) == pytest.approx(1.0)

    def test_equals_unweighted_jaffard_norm(self):
        A = random_matrix(7, 2, 13)
        assert entry_sup(A) == jaffard_norm(A, 0.0)

    def test_chain(self):
        for seed in range(20):
            A = random_jaffard(make_lattice(1, 12), 2, 2.0, 1.0, seed)
            assert entry_sup(A) <= column_pnorm_bound(A, 2) + 1e-12
            assert column_pnorm_bound(A, 2) <= operator_norm_l2(A) + 1e-8


class TestMatrixFiles:
    def test_binary_roundtrip(self, tmp_path):
        A = random_matrix(5, 3, 1, d=2)
        save_matrix(A, tmp_path / "m.json")
        B = load_matrix(tmp_path / "m.json")
        assert B.index_set == A.index_set
        assert np.array_equal(B.blocks, A.blocks)

    def test_binary_layout(self, tmp_path):
        X = make_lattice(1, 2)
        blocks = np.arange(16).reshape(2, 2, 2, 2) * (1 + 0.5j)
        save_matrix(BlockMatrix(X, blocks), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["layout"] == "row-major-complex-interleaved"
        assert doc["dim"] == 1 and doc["block_dim"] == 2
        raw = np.frombuffer((tmp_path / doc["data"]).read_bytes(), dtype="<f8")
        # block (0, 1), entry (1, 0) is the 7th complex value: re at 12, im at 13
        assert raw[12] == 6.0 and raw[13] == 3.0
        assert raw.size == 2 * 16

    def test_json_fallback(self, tmp_path):
        A = random_matrix(4, 2, 2)
        save_matrix(A, tmp_path / "m.json", fmt="json")
        assert "blocks" in json.loads((tmp_path / "m.json").read_text())
        assert np.array_equal(load_matrix(tmp_path / "m.json").blocks, A.blocks)

    def test_json_fallback_size_limit(self, tmp_path):
        with pytest.raises(ParameterError):
            save_matrix(random_matrix(33, 2, 0), tmp_path / "m.json", fmt="json")

    def test_truncated_blob(self, tmp_path):
        A = random_matrix(3, 2, 0)
        save_matrix(A, tmp_path / "m.json")
        blob = tmp_path / "m.blocks.bin"
        blob.write_bytes(blob.read_bytes()[:-16])
        with pytest.raises(ShapeError):
            load_matrix(tmp_path / "m.json")
