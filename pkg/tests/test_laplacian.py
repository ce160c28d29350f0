import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import dense_coboundary, flat, kinds, random_sheaf, seeds
from polynsd.errors import NumericError, ShapeError
from polynsd.laplacian import (
    BlockSparseOperator,
    assemble_laplacian,
    block_inv_sqrt,
    coboundary_adjoint,
    coboundary_apply,
    dump_operator,
    laplacian_matvec,
    load_operator,
    normalize_laplacian,
)
from polynsd.sheaf import SheafStructure, build_graph, identity_sheaf

P2 = build_graph(2, [(0, 1)])
P3 = build_graph(3, [(0, 1), (1, 2)])


def _p2_scaled():
    return SheafStructure.from_arrays(P2, [[2.0]], [[1.0]], kind="diagonal")


class TestCoboundary:
    def test_single_edge_identity(self):
        out = coboundary_apply(identity_sheaf(P2, 1), np.array([[1.0], [3.0]]))
        assert out.ravel().tolist() == [2.0]

    def test_constant_section_is_harmonic(self, rng):
        g = build_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
        x = np.broadcast_to(rng.normal(size=(1, 3, 2)), (5, 3, 2))
        assert np.abs(coboundary_apply(identity_sheaf(g, 3), x)).max() == 0.0

    def test_scaled_maps(self):
        out = coboundary_apply(_p2_scaled(), np.array([[1.0], [1.0]]))
        assert out.ravel().tolist() == [-1.0]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            coboundary_apply(identity_sheaf(P2, 2), np.zeros((2, 3, 1)))

    @settings(max_examples=25)
    @given(seed=seeds, kind=kinds, d=st.integers(1, 4))
    def test_adjoint(self, seed, kind, d):
        rng = np.random.default_rng(seed)
        s = random_sheaf(rng, 9, d, kind, weights=True)
        x = rng.normal(size=(9, d, 2))
        y = rng.normal(size=(s.graph.num_edges, d, 2))
        lhs = np.sum(coboundary_apply(s, x) * y)
        rhs = np.sum(x * coboundary_adjoint(s, y))
        assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))

    def test_matches_dense_coboundary(self, rng):
        s = random_sheaf(rng, 7, 3, "general", weights=True)
        x = rng.normal(size=(7, 3, 2))
        np.testing.assert_allclose(flat(coboundary_apply(s, x)), dense_coboundary(s) @ flat(x),
                                   atol=1e-12)


class TestAssemble:
    def test_p2_identity(self):
        np.testing.assert_array_equal(assemble_laplacian(identity_sheaf(P2, 1)).to_dense(),
                                      [[1, -1], [-1, 1]])

    def test_p3_spectrum(self):
        lam = np.linalg.eigvalsh(assemble_laplacian(identity_sheaf(P3, 1)).to_dense())
        np.testing.assert_allclose(lam, [0.0, 1.0, 3.0], atol=1e-12)

    def test_p2_scaled_blocks(self):
        np.testing.assert_array_equal(assemble_laplacian(_p2_scaled()).to_dense(), [[4, -2], [-2, 1]])

    def test_isolated_node_gets_zero_block(self):
        L = assemble_laplacian(identity_sheaf(build_graph(3, [(0, 1)]), 2))
        np.testing.assert_array_equal(L.diagonal_blocks()[2], np.zeros((2, 2)))

    @settings(max_examples=100)
    @given(seed=seeds, kind=kinds, d=st.integers(1, 4), n=st.integers(2, 20))
    def test_equals_delta_t_delta(self, seed, kind, d, n):
        s = random_sheaf(np.random.default_rng(seed), n, d, kind, weights=True)
        L = assemble_laplacian(s)
        B = dense_coboundary(s)
        np.testing.assert_allclose(L.to_dense(), B.T @ B, atol=1e-12 * max(1.0, np.abs(B).max(initial=0) ** 2 * n))
        assert L.symmetric and L.check_symmetry()

    @settings(max_examples=30)
    @given(seed=seeds, kind=kinds, d=st.integers(1, 4))
    def test_orientation_independence(self, seed, kind, d):
        s = random_sheaf(np.random.default_rng(seed), 10, d, kind, weights=True)
        A = assemble_laplacian(s).to_dense()
        # reversing every edge negates the coboundary, so delta^T delta is unchanged
        B = -dense_coboundary(s)
        np.testing.assert_allclose(B.T @ B, A, atol=1e-12 * max(1.0, np.abs(A).max(initial=0)))

    def test_orientation_of_input_edge_list(self, rng):
        # maps are keyed by endpoint, so listing edges backwards cannot change L
        edges = [(0, 1), (1, 2), (0, 3)]
        fwd = build_graph(4, edges)
        bwd = build_graph(4, [(b, a) for a, b in edges])
        src, dst = rng.normal(size=(2, 3, 2, 2))
        L1 = assemble_laplacian(SheafStructure.from_arrays(fwd, src, dst))
        L2 = assemble_laplacian(SheafStructure.from_arrays(bwd, src, dst))
        np.testing.assert_array_equal(L1.to_dense(), L2.to_dense())

    @settings(max_examples=50)
    @given(seed=seeds, kind=kinds, d=st.integers(1, 4))
    def test_psd(self, seed, kind, d):
        s = random_sheaf(np.random.default_rng(seed), 12, d, kind)
        lam = np.linalg.eigvalsh(assemble_laplacian(s).to_dense())
        assert lam.min() >= -1e-9 * max(1.0, lam.max())

    @settings(max_examples=50)
    @given(seed=seeds, kind=kinds, d=st.integers(1, 4))
    def test_dirichlet_form(self, seed, kind, d):
        rng = np.random.default_rng(seed)
        s = random_sheaf(rng, 10, d, kind, weights=True)
        x = rng.normal(size=(10, d, 1))
        quad = float(np.sum(x * laplacian_matvec(assemble_laplacian(s), x)))
        edge = float(np.sum(coboundary_apply(s, x) ** 2))
        assert abs(quad - edge) <= 1e-10 * max(1.0, edge)

    def test_sparsity_pattern(self, rng):
        s = random_sheaf(rng, 12, 2, "general")
        L = assemble_laplacian(s)
        allowed = s.graph.edge_set()
        for r, c in zip(L.rows, L.cols):
            assert r == c or (min(r, c), max(r, c)) in allowed


class TestNormalize:
    def test_p2_eps_zero(self):
        D = normalize_laplacian(assemble_laplacian(identity_sheaf(P2, 1)), eps=0.0)
        np.testing.assert_allclose(D.to_dense(), [[1, -1], [-1, 1]], atol=1e-15)
        np.testing.assert_allclose(np.linalg.eigvalsh(D.to_dense()), [0, 2], atol=1e-14)
        assert D.normalized

    def test_isolated_node(self):
        D = normalize_laplacian(assemble_laplacian(identity_sheaf(build_graph(3, [(0, 1)]), 2)))
        dense = D.to_dense()
        assert np.isfinite(dense).all()
        np.testing.assert_array_equal(dense[4:], 0.0)
        np.testing.assert_array_equal(dense[:, 4:], 0.0)

    def test_random_d3_enclosure(self, rng):
        s = random_sheaf(rng, 10, 3, "general", p=0.4)
        lam = np.linalg.eigvalsh(normalize_laplacian(assemble_laplacian(s)).to_dense())
        assert lam.max() <= 2 + 1e-8 and lam.min() >= -1e-8

    def test_non_psd_diagonal_rejected(self):
        L = BlockSparseOperator.from_dense(np.array([[-1.0, 0.0], [0.0, 1.0]]), 1)
        with pytest.raises(NumericError):
            normalize_laplacian(L)

    def test_block_inv_sqrt(self, rng):
        A = rng.normal(size=(5, 3, 3))
        A = A @ np.swapaxes(A, 1, 2) + np.eye(3)
        R = block_inv_sqrt(A, eps=0.0)
        np.testing.assert_allclose(R @ A @ R, np.broadcast_to(np.eye(3), A.shape), atol=1e-12)

    @settings(max_examples=60)
    @given(seed=seeds, kind=kinds, d=st.integers(1, 5), n=st.integers(2, 30))
    def test_enclosure_property(self, seed, kind, d, n):
        s = random_sheaf(np.random.default_rng(seed), n, d, kind, weights=True)
        lam = np.linalg.eigvalsh(normalize_laplacian(assemble_laplacian(s)).to_dense())
        assert lam.min() >= -1e-8 and lam.max() <= 2 + 1e-8


class TestMatvec:
    def test_constant_in_kernel(self):
        L = assemble_laplacian(identity_sheaf(P2, 1))
        assert laplacian_matvec(L, np.array([[1.0], [1.0]])).ravel().tolist() == [0.0, 0.0]

    def test_p2(self):
        L = assemble_laplacian(identity_sheaf(P2, 1))
        assert laplacian_matvec(L, np.array([[1.0], [0.0]])).ravel().tolist() == [1.0, -1.0]

    def test_random_20_node(self, rng):
        s = random_sheaf(rng, 20, 2, "general")
        L = assemble_laplacian(s)
        X = rng.normal(size=(20, 2, 3))
        ref = L.to_dense() @ flat(X)
        got = flat(laplacian_matvec(L, X))
        assert np.linalg.norm(got - ref) <= 1e-12 * np.linalg.norm(ref)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            laplacian_matvec(assemble_laplacian(identity_sheaf(P2, 1)), np.zeros((3, 1, 1)))

    def test_from_coo_sums_duplicates(self):
        L = BlockSparseOperator.from_coo(2, 1, [0, 0, 1], [0, 0, 1], np.ones((3, 1, 1)))
        np.testing.assert_array_equal(L.to_dense(), [[2, 0], [0, 1]])

    def test_from_dense_roundtrip(self, rng):
        M = rng.normal(size=(6, 6))
        np.testing.assert_array_equal(BlockSparseOperator.from_dense(M, 2).to_dense(), M)


def test_dump_load_roundtrip(tmp_path, rng):
    L = assemble_laplacian(random_sheaf(rng, 6, 2, "general"))
    dump_operator(L, tmp_path / "op.txt")
    first = (tmp_path / "op.txt").read_text().splitlines()[0]
    assert first == f"6 2 {L.nnz_blocks}"
    M = load_operator(tmp_path / "op.txt")
    np.testing.assert_array_equal(M.to_dense(), L.to_dense())
