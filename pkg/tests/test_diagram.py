"""Level graph, ensemble, and cylinder enumeration contracts."""

import numpy as np
import pytest

from adicflow.diagram import (
    Cylinder,
    Diagram,
    DiagramEnsemble,
    LevelGraph,
    WindowError,
    cylinders,
    diagram_from_json,
    diagram_to_json,
    fibonacci_graph,
    graph_from_incidence,
    identity_graph,
    incidence,
    sample_diagram,
    validate_graph,
)


def int_matrix(g):
    return np.asarray(g.incidence(), dtype=object)


class TestValidate:
    def test_minimal_graph_valid(self):
        g = LevelGraph(1, 1, ((0, 0),))
        assert validate_graph(g) == []

    def test_isolated_vertex_reported(self):
        g = LevelGraph(2, 2, ((0, 0), (0, 1)))
        issues = validate_graph(g)
        assert any("top vertex 1 isolated" in msg for msg in issues)
        assert not any("bottom" in msg for msg in issues)

    def test_fibonacci_valid(self):
        assert validate_graph(fibonacci_graph()) == []

    def test_bad_rank_labels_reported(self):
        g = LevelGraph(1, 2, ((0, 0), (0, 1)), up_rank=(0, 0), down_rank=(0, 0))
        issues = validate_graph(g)
        assert any("up_rank" in msg for msg in issues)

    def test_out_of_range_edge_reported(self):
        g = LevelGraph(1, 1, ((0, 3),))
        assert any("outside" in msg for msg in validate_graph(g))


class TestIncidence:
    def test_fibonacci(self):
        A = int_matrix(fibonacci_graph())
        assert A.tolist() == [[1, 1], [1, 0]]

    def test_double_edge_multiplicity(self):
        g = LevelGraph(1, 1, ((0, 0), (0, 0)))
        assert int_matrix(g).tolist() == [[2]]

    def test_total_equals_edge_count(self):
        g = fibonacci_graph()
        assert int(int_matrix(g).sum()) == g.n_edges

    def test_valid_graph_has_no_fully_isolated_vertex(self):
        # validity forces every vertex to touch an edge, so no top vertex has an
        # all-zero row and no bottom vertex an all-zero column
        rng = np.random.default_rng(7)
        for _ in range(25):
            m = int(rng.integers(1, 5))
            edges = [(int(rng.integers(m)), int(rng.integers(m)))
                     for _ in range(int(rng.integers(1, 13)))]
            g = LevelGraph(m, m, tuple(edges))
            if validate_graph(g):
                continue
            A = int_matrix(g)
            assert all(A[i, :].sum() > 0 for i in range(m))
            assert all(A[:, j].sum() > 0 for j in range(m))

    def test_roundtrip_bijection_on_canonical_graphs(self):
        # incidence o graph_from_incidence is the identity on matrices, and
        # graph_from_incidence o incidence is the identity on canonically
        # ranked graphs (random graphs with <= 6 vertices and <= 12 edges)
        rng = np.random.default_rng(11)
        for _ in range(50):
            m_top = int(rng.integers(1, 7))
            m_bot = int(rng.integers(1, 7))
            n_edges = int(rng.integers(1, 13))
            edges = sorted((int(rng.integers(m_top)), int(rng.integers(m_bot)))
                           for _ in range(n_edges))
            g = LevelGraph(m_top, m_bot, tuple(edges))
            M = int_matrix(g)
            g2 = graph_from_incidence(M)
            assert int_matrix(g2).tolist() == M.tolist()
            assert g2 == g


class TestEnsemble:
    def good(self):
        return DiagramEnsemble(
            [graph_from_incidence([[1, 1], [1, 2]]), graph_from_incidence([[2, 1], [1, 1]])],
            [0.5, 0.5])

    def test_witness_autodetected(self):
        assert self.good().positivity_witness in (0, 1)

    def test_rejects_bad_weight_sum(self):
        g = fibonacci_graph()
        with pytest.raises(ValueError, match="sum"):
            DiagramEnsemble([g, g], [0.5, 0.5001])

    def test_rejects_singular_letter(self):
        g = graph_from_incidence([[1, 1], [1, 1]])
        with pytest.raises(ValueError, match="singular"):
            DiagramEnsemble([g], [1.0])

    def test_rejects_missing_witness(self):
        g = fibonacci_graph()  # has a zero entry
        with pytest.raises(ValueError, match="positive"):
            DiagramEnsemble([g], [1.0])

    def test_one_letter_alphabet_constant(self):
        g = graph_from_incidence([[1, 1], [1, 2]])
        ens = DiagramEnsemble([g], [1.0])
        d = sample_diagram(ens, seed=3, window=(1, 30))
        assert all(d.graph_at(n) == g for n in range(1, 31))

    def test_letter_frequencies(self):
        # binomial concentration: with p = 1/2 over 10^4 levels the letter-0
        # frequency lands within 3 sigma of 1/2
        ens = self.good()
        d = sample_diagram(ens, seed=2024, window=(1, 10_000))
        f0 = sum(d.graph_at(n) == ens.alphabet[0] for n in range(1, 10_001)) / 10_000
        assert 0.485 <= f0 <= 0.515

    def test_overlapping_windows_agree(self):
        ens = self.good()
        d1 = sample_diagram(ens, seed=5, window=(-10, 20))
        d2 = sample_diagram(ens, seed=5, window=(5, 40))
        for n in range(5, 21):
            assert d1.graph_at(n) == d2.graph_at(n)

    def test_pure_function_of_seed(self):
        ens = self.good()
        a = sample_diagram(ens, 9, (1, 50))
        b = sample_diagram(ens, 9, (1, 50))
        assert a.graphs == b.graphs
        c = sample_diagram(ens, 10, (1, 50))
        assert a.graphs != c.graphs


class TestCylinders:
    def fib(self, window=(1, 10)):
        return Diagram.stationary(fibonacci_graph(), window)

    def test_depth_one_counts_edges(self):
        assert len(cylinders(self.fib(), 0, 1)) == 3

    def test_depth_two_counts_matrix_square(self):
        # sum of entries of A^2 with A = [[1,1],[1,0]] is 5
        assert len(cylinders(self.fib(), 0, 2)) == 5

    def test_depth_zero_is_vertex_set(self):
        cyls = cylinders(self.fib(), 0, 0)
        assert [c.vertex for c in cyls] == [0, 1]

    def test_counts_match_incidence_products(self):
        # brute-force enumeration count == (i, j)-sum of the incidence product
        for M in ([[1, 1], [1, 0]], [[2, 1], [1, 3]], [[1, 1], [1, 2]]):
            d = Diagram.stationary(graph_from_incidence(M), (1, 9))
            A = np.asarray(M, dtype=object)
            P = np.eye(2, dtype=object)
            for k in range(1, 9):
                P = A @ P
                assert len(cylinders(d, 0, k)) == int(P.sum())

    def test_words_are_chains(self):
        d = self.fib()
        g = fibonacci_graph()
        for c in cylinders(d, 0, 3):
            for a, b in zip(c.edges, c.edges[1:]):
                assert g.tgt(b) == g.src(a)

    def test_window_overflow(self):
        with pytest.raises(WindowError):
            cylinders(self.fib((1, 4)), 0, 5)

    def test_end_vertices(self):
        d = self.fib()
        c = cylinders(d, 0, 2)[0]
        g = fibonacci_graph()
        assert c.bottom_vertex(d) == g.tgt(c.edges[0])
        assert c.top_vertex(d) == g.src(c.edges[1])


class TestDiagram:
    def test_identity_graph(self):
        g = identity_graph(3)
        assert validate_graph(g) == []
        assert int_matrix(g).tolist() == np.eye(3, dtype=int).tolist()

    def test_composability_enforced(self):
        g12 = LevelGraph(1, 2, ((0, 0), (0, 1)))
        with pytest.raises(ValueError, match="composable"):
            Diagram.stationary(g12, (1, 3))

    def test_periodic_extension(self):
        a = graph_from_incidence([[1, 1], [1, 2]])
        b = graph_from_incidence([[2, 1], [1, 1]])
        d = Diagram.periodic([a, b], (0, 7))
        assert d.graph_at(0) == a and d.graph_at(1) == b
        assert d.graph_at(-1) == b and d.graph_at(8) == a

    def test_json_roundtrip(self):
        ens = DiagramEnsemble(
            [graph_from_incidence([[1, 1], [1, 2]]), graph_from_incidence([[2, 1], [1, 1]])],
            [0.25, 0.75])
        d = Diagram.iid(ens, 17, (-3, 12))
        d2 = diagram_from_json(diagram_to_json(d))
        assert d2.graphs == d.graphs
        assert (d2.n_lo, d2.n_hi) == (-3, 12)
        for n in (-9, 20):  # extension survives the round trip
            assert d2.graph_at(n) == d.graph_at(n)

    def test_json_missing_key(self):
        with pytest.raises(ValueError, match="alphabet"):
            diagram_from_json({"window": [1, 2], "extension": {"kind": "stationary"}})
