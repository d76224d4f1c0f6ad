import numpy as np
import pytest

from brainchannel import (
    InvalidEdgeError,
    InvalidInputError,
    ShapeError,
    complete_graph,
    graph_from_edge_list,
    graph_from_positions,
    load_edge_list,
    preset_graph,
    save_edge_list,
    smoothness_penalty,
    ten_twenty_17_montage,
)


def random_graph(rng, max_nodes=20):
    n = int(rng.integers(1, max_nodes + 1))
    edges = []
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            if rng.random() < 0.3:
                edges.append((i, j))
    return graph_from_edge_list(n, edges)


class TestEdgeList:
    def test_path_laplacian(self):
        g = graph_from_edge_list(3, [(1, 2), (2, 3)])
        expect = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
        assert np.array_equal(g.laplacian_L, expect)

    def test_no_edges_zero_laplacian(self):
        g = graph_from_edge_list(2, [])
        assert np.array_equal(g.laplacian_L, np.zeros((2, 2)))

    def test_cycle_eigenvalues(self):
        g = graph_from_edge_list(4, [(1, 2), (2, 3), (3, 4), (4, 1)])
        # oracle: direct eigendecomposition of the 4x4 matrix
        eig = np.sort(np.linalg.eigvalsh(g.laplacian_float()))
        assert np.allclose(eig, [0.0, 2.0, 2.0, 4.0], atol=1e-12)

    def test_duplicates_deduplicated(self):
        g = graph_from_edge_list(3, [(1, 2), (2, 1), (1, 2)])
        assert g.num_edges == 1
        assert g.degree_D[0, 0] == 1

    def test_out_of_range(self):
        with pytest.raises(InvalidEdgeError):
            graph_from_edge_list(3, [(1, 4)])
        with pytest.raises(InvalidEdgeError):
            graph_from_edge_list(3, [(0, 1)])

    def test_self_loop(self):
        with pytest.raises(InvalidEdgeError):
            graph_from_edge_list(3, [(2, 2)])


class TestPositions:
    def test_2x2_grid(self):
        pos = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0)]
        g = graph_from_positions(pos, 1.0)
        assert g.num_edges == 4  # sides only; diagonal sqrt(2) > 1

    def test_below_min_distance_edgeless(self):
        rng = np.random.default_rng(0)
        pos = rng.standard_normal((6, 3))
        g = graph_from_positions(pos, 1e-9)
        assert g.num_edges == 0

    def test_4x4_grid_5mm_pitch(self):
        pitch = 0.005
        pos = [(i * pitch, j * pitch, 0.0) for i in range(4) for j in range(4)]
        g = graph_from_positions(pos, pitch)
        # oracle: brute-force pair enumeration
        expect = sum(
            1
            for a in range(16)
            for b in range(a + 1, 16)
            if np.linalg.norm(np.subtract(pos[a], pos[b])) <= pitch
        )
        assert expect == 24
        assert g.num_edges == expect

    def test_threshold_inf_complete(self):
        rng = np.random.default_rng(1)
        pos = rng.standard_normal((7, 3))
        g = graph_from_positions(pos, np.inf)
        assert g.num_edges == 7 * 6 // 2
        assert g.edges == complete_graph(7).edges

    def test_invalid_inputs(self):
        with pytest.raises(InvalidInputError):
            graph_from_positions(np.empty((0, 3)), 1.0)
        with pytest.raises(InvalidInputError):
            graph_from_positions([(0, 0, np.nan)], 1.0)
        with pytest.raises(InvalidInputError):
            graph_from_positions([(0, 0, 0)], 0.0)


class TestPenalty:
    def test_identical_rows_zero(self):
        g = graph_from_edge_list(4, [(1, 2), (2, 3), (3, 4)])
        H = np.tile(np.array([1.0 + 2.0j, -3.0j, 0.5]), (4, 1))
        assert smoothness_penalty(H, g) == 0.0

    def test_edgeless_zero(self):
        g = graph_from_edge_list(3, [])
        rng = np.random.default_rng(2)
        H = rng.standard_normal((3, 5))
        assert smoothness_penalty(H, g) == 0.0

    def test_path_hand_computed(self):
        # L @ [1,0,0]^T = [1,-1,0]^T, so 2*||L H||^2 = 2*(1+1) = 4
        g = graph_from_edge_list(3, [(1, 2), (2, 3)])
        H = np.array([[1.0], [0.0], [0.0]])
        assert smoothness_penalty(H, g) == pytest.approx(4.0, abs=1e-14)

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            g = random_graph(rng)
            H = rng.standard_normal((g.node_count, 4)) + 1j * rng.standard_normal((g.node_count, 4))
            Lf = g.laplacian_float()
            oracle = 2.0 * np.trace(H.conj().T @ Lf.T @ Lf @ H).real
            assert smoothness_penalty(H, g) == pytest.approx(oracle, rel=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            g = random_graph(rng)
            n = g.node_count
            H = rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3))
            perm = rng.permutation(n)
            remapped = [(int(perm[i - 1]) + 1, int(perm[j - 1]) + 1) for i, j in g.edges]
            g2 = graph_from_edge_list(n, remapped)
            H2 = np.empty_like(H)
            H2[perm] = H
            assert smoothness_penalty(H2, g2) == pytest.approx(smoothness_penalty(H, g), rel=1e-12)

    def test_shape_mismatch(self):
        g = graph_from_edge_list(3, [(1, 2)])
        with pytest.raises(ShapeError):
            smoothness_penalty(np.zeros((4, 2)), g)


class TestLaplacianAlgebra:
    def test_battery(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            g = random_graph(rng)
            # integer row sums are exactly zero
            assert np.array_equal(g.laplacian_L.sum(axis=1), np.zeros(g.node_count, dtype=np.int64))
            # PSD with zero eigenvalue on the all-ones vector
            eig = np.linalg.eigvalsh(g.laplacian_float())
            assert eig.min() >= -1e-10
            ones = np.ones(g.node_count)
            assert np.linalg.norm(g.laplacian_float() @ ones) < 1e-12
            # penalty is zero iff rows are constant per connected component
            comps = g.connected_components()
            H = np.zeros((g.node_count, 2), dtype=complex)
            for ci, comp in enumerate(comps):
                for node in comp:
                    H[node - 1] = [ci + 1.0, 1.0j * (ci + 1.0)]
            assert smoothness_penalty(H, g) == 0.0
            Hr = rng.standard_normal((g.node_count, 2))
            if np.linalg.norm(g.laplacian_float() @ Hr) > 1e-12:
                assert smoothness_penalty(Hr, g) > 0.0


class TestEdgeListIO:
    def test_roundtrip_with_comments(self, tmp_path):
        g = graph_from_edge_list(5, [(1, 2), (3, 5), (2, 4)])
        path = tmp_path / "edges.txt"
        save_edge_list(g, str(path))
        back = load_edge_list(str(path), node_count=5)
        assert back.edges == g.edges

    def test_parse_comments_and_blanks(self, tmp_path):
        path = tmp_path / "edges.txt"
        path.write_text("# header\n\n1 2  # trailing comment\n2 3\n")
        g = load_edge_list(str(path))
        assert g.node_count == 3
        assert g.edges == ((1, 2), (2, 3))

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "edges.txt"
        path.write_text("1 2 3\n")
        with pytest.raises(InvalidEdgeError):
            load_edge_list(str(path))


class TestPreset:
    def test_montage_shape(self):
        labels, pos = ten_twenty_17_montage()
        assert len(labels) == 17
        assert pos.shape == (17, 3)
        assert "Cz" not in labels and "Pz" not in labels
        # idealized coordinates live on the unit sphere
        assert np.allclose(np.linalg.norm(pos, axis=1), 1.0, atol=1e-3)

    def test_preset_graph_invariants(self):
        g = preset_graph("1020-17")
        assert g.node_count == 17
        assert np.array_equal(g.adjacency_A, g.adjacency_A.T)
        assert np.array_equal(g.laplacian_L.sum(axis=1), np.zeros(17, dtype=np.int64))
        assert g.num_edges > 0
        # a usable smoothness prior needs one connected scalp component
        assert len(g.connected_components()) == 1

    def test_unknown_preset(self):
        with pytest.raises(InvalidInputError):
            preset_graph("nope")
