"""Graph-embedding trainer: scoring, sampling, margin loss, clique oracle, TSV."""

import itertools

import numpy as np
import pytest

from ties.errors import ConfigError, ParseError, ShapeError, UnknownIdError
from ties.graph_embed import (
    EmbeddingTable,
    GraphEmbeddings,
    MultiRelationGraph,
    NegativeSampleConfig,
    export_embeddings,
    import_embeddings,
    margin_loss,
    read_edges,
    read_embedding_table,
    sample_negatives,
    score_edge,
    train_graph,
    write_embedding_table,
)


def two_clique_graph():
    a = ["a0", "a1", "a2", "a3"]
    b = ["b0", "b1", "b2", "b3"]
    edges = []
    for group in (a, b):
        for u, v in itertools.combinations(group, 2):
            edges.append((u, "r", v))
    edges.append(("a0", "r", "b0"))
    return MultiRelationGraph.from_edges(edges), a, b


class TestScoreEdge:

    def test_basic(self):
        assert score_edge([1, 0], [1, 1], [1, 0]) == 1.0

    def test_all_ones_relation_is_dot_product(self):
        rng = np.random.default_rng(0)
        s, d = rng.standard_normal(5), rng.standard_normal(5)
        assert score_edge(s, np.ones(5), d) == pytest.approx(float(s @ d), abs=1e-12)

    def test_orthogonal_vectors_score_zero(self):
        assert score_edge([1.0, 0.0], [1.0, 1.0], [0.0, 1.0]) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            score_edge([1.0], [1.0, 2.0], [1.0, 2.0])

    def test_symmetric_under_endpoint_swap(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            s, r, d = rng.standard_normal((3, 6))
            assert score_edge(s, r, d) == pytest.approx(score_edge(d, r, s), abs=1e-12)


class TestMarginLoss:

    def test_satisfied_margin_is_zero(self):
        assert margin_loss(1.0, [0.2], 0.5) == 0.0

    def test_violated_margin(self):
        assert margin_loss(0.2, [1.0], 0.5) == pytest.approx(1.3)

    def test_tie_at_zero_margin(self):
        assert margin_loss(0.7, [0.7], 0.0) == 0.0

    def test_nonnegative_and_zero_iff_all_satisfied(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            pos = float(rng.standard_normal())
            negs = rng.standard_normal(4).tolist()
            lam = float(rng.uniform(0, 1))
            loss = margin_loss(pos, negs, lam)
            assert loss >= 0.0
            assert (loss == 0.0) == all(n <= pos - lam for n in negs)

    def test_negative_margin_rejected(self):
        with pytest.raises(ConfigError):
            margin_loss(0.0, [0.0], -0.1)

    def test_gradients_match_finite_differences(self):
        # Analytic hinge gradients: d(loss)/d(theta_s) = -theta_r*theta_d per
        # active term, and symmetrically for r and d. Checked at non-kink points.
        rng = np.random.default_rng(3)
        checked = 0
        for _ in range(30):
            s, r, d, ns, nd = rng.standard_normal((5, 4))
            lam = 0.4

            def loss_at(sv, rv, dv):
                pos = score_edge(sv, rv, dv)
                neg = score_edge(ns, rv, nd)
                return margin_loss(pos, [neg], lam)

            base_term = score_edge(ns, r, nd) - score_edge(s, r, d) + lam
            if abs(base_term) < 1e-2:  # skip near the hinge kink
                continue
            checked += 1
            active = base_term > 0
            grad_s = -(r * d) if active else np.zeros(4)
            grad_r = (ns * nd - s * d) if active else np.zeros(4)
            grad_d = -(s * r) if active else np.zeros(4)
            step = 1e-5
            for vec, grad in ((s, grad_s), (r, grad_r), (d, grad_d)):
                for j in range(4):
                    orig = vec[j]
                    vec[j] = orig + step
                    up = loss_at(s, r, d)
                    vec[j] = orig - step
                    down = loss_at(s, r, d)
                    vec[j] = orig
                    num = (up - down) / (2 * step)
                    assert abs(num - grad[j]) <= 1e-5 * max(1.0, abs(num), abs(grad[j]))
        assert checked >= 20


class TestSampleNegatives:

    def setup_method(self):
        self.graph = MultiRelationGraph.from_edges(
            [(f"n{i}", "r", f"n{(i + 1) % 10}") for i in range(10)])

    def test_split_rule_one_of_each_for_two(self):
        negs = sample_negatives(("n0", "r", "n1"), self.graph,
                                NegativeSampleConfig(2, 0))
        assert len(negs) == 2
        assert negs[0][2] == "n1" and negs[0][0] != "n0"  # source-corrupted
        assert negs[1][0] == "n0" and negs[1][2] != "n1"  # dest-corrupted

    def test_odd_count_favors_source(self):
        negs = sample_negatives(("n0", "r", "n1"), self.graph,
                                NegativeSampleConfig(5, 0))
        assert sum(1 for s, _, d in negs if d == "n1") == 3
        assert sum(1 for s, _, d in negs if s == "n0") == 2

    def test_every_negative_differs_in_exactly_one_endpoint(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            negs = sample_negatives(("n3", "r", "n4"), self.graph,
                                    NegativeSampleConfig(4, 0), rng)
            for s, r, d in negs:
                assert (s == "n3") != (d == "n4")
                assert r == "r"

    def test_replacement_frequencies_near_uniform(self):
        rng = np.random.default_rng(5)
        counts: dict[str, int] = {}
        n_trials = 100_000
        for _ in range(n_trials):
            negs = sample_negatives(("n0", "r", "n1"), self.graph,
                                    NegativeSampleConfig(2, 0), rng)
            counts[negs[0][0]] = counts.get(negs[0][0], 0) + 1
        assert "n0" not in counts
        expected = n_trials / 9
        for node, count in counts.items():
            assert abs(count - expected) / expected < 0.05, (node, count)

    def test_tiny_graph_rejected(self):
        graph = MultiRelationGraph(nodes=["x"], relations=["r"], edges=[])
        with pytest.raises(ConfigError):
            sample_negatives(("x", "r", "x"), graph, NegativeSampleConfig(2, 0))


class TestTrainGraph:

    def test_clique_separation_by_full_enumeration(self):
        graph, a, b = two_clique_graph()
        emb = train_graph(graph, dim=8, margin=0.5, lr=0.1, epochs=50,
                          batch_size=8, cfg=NegativeSampleConfig(2, 0))
        rel = emb.relation_table.lookup("r")

        def mean_score(pairs):
            return float(np.mean([
                score_edge(emb.node_table.lookup(u), rel, emb.node_table.lookup(v))
                for u, v in pairs]))

        intra = [(u, v) for grp in (a, b) for u in grp for v in grp if u != v]
        cross = [(u, v) for u in a for v in b] + [(u, v) for u in b for v in a]
        assert mean_score(intra) > mean_score(cross)

    def test_clique_separation_ten_consecutive_seeds(self):
        graph, a, b = two_clique_graph()
        intra = [(u, v) for grp in (a, b) for u in grp for v in grp if u != v]
        cross = [(u, v) for u in a for v in b] + [(u, v) for u in b for v in a]
        for seed in range(10):
            emb = train_graph(graph, dim=8, margin=0.5, lr=0.1, epochs=50,
                              batch_size=8, cfg=NegativeSampleConfig(2, seed))
            rel = emb.relation_table.lookup("r")

            def mean_score(pairs):
                return float(np.mean([
                    score_edge(emb.node_table.lookup(u), rel,
                               emb.node_table.lookup(v)) for u, v in pairs]))

            assert mean_score(intra) > mean_score(cross), f"seed {seed}"

    def test_zero_epochs_keeps_initialization(self):
        graph, _, _ = two_clique_graph()
        emb = train_graph(graph, dim=8, margin=0.5, lr=0.1, epochs=0,
                          batch_size=8, cfg=NegativeSampleConfig(2, 7))
        rng = np.random.default_rng(7)
        bound = 0.5 / np.sqrt(8)
        expected = rng.uniform(-bound, bound, size=(8, 8))
        assert np.array_equal(emb.node_table.vectors, expected)

    def test_loss_non_increasing_over_first_epochs(self):
        graph, _, _ = two_clique_graph()
        for seed in (0, 1, 2):
            curve: list[float] = []
            train_graph(graph, dim=8, margin=0.5, lr=0.1, epochs=5,
                        batch_size=8, cfg=NegativeSampleConfig(2, seed),
                        loss_curve=curve)
            for earlier, later in zip(curve[:-1], curve[1:]):
                assert later <= earlier * 1.05

    def test_deterministic_per_seed(self):
        graph, _, _ = two_clique_graph()
        run = lambda: train_graph(graph, 8, 0.5, 0.1, 5, 8,
                                  NegativeSampleConfig(2, 42))
        e1, e2 = run(), run()
        assert np.array_equal(e1.node_table.vectors, e2.node_table.vectors)
        assert np.array_equal(e1.relation_table.vectors, e2.relation_table.vectors)

    def test_empty_graph_rejected(self):
        graph = MultiRelationGraph(nodes=["x", "y"], relations=["r"], edges=[])
        with pytest.raises(ConfigError):
            train_graph(graph, 4, 0.5, 0.1, 1, 4, NegativeSampleConfig(2, 0))


class TestEmbeddingIO:

    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        emb = GraphEmbeddings(
            node_table=EmbeddingTable([f"n{i}" for i in range(9)],
                                      rng.standard_normal((9, 5)) * 1e3),
            relation_table=EmbeddingTable(["r1", "r2"], rng.standard_normal((2, 5))),
            dim=5)
        path = tmp_path / "emb.tsv"
        export_embeddings(emb, path)
        back = import_embeddings(path)
        assert back.dim == 5
        assert back.node_table.ids == emb.node_table.ids
        assert np.array_equal(back.node_table.vectors, emb.node_table.vectors)
        assert np.array_equal(back.relation_table.vectors, emb.relation_table.vectors)

    def test_wrong_column_count_names_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("#dim 2\na\t1.0\t2.0\nb\t3.0\t4.0\nc\t5.0\n", encoding="utf-8")
        with pytest.raises(ParseError) as exc:
            read_embedding_table(path)
        assert exc.value.line_number == 4
        assert "line 4" in str(exc.value)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "nohdr.tsv"
        path.write_text("a\t1.0\t2.0\n", encoding="utf-8")
        with pytest.raises(ParseError) as exc:
            read_embedding_table(path)
        assert exc.value.line_number == 1

    def test_unknown_id_lookup_raises(self, tmp_path):
        table = EmbeddingTable(["a"], np.ones((1, 2)))
        path = tmp_path / "t.tsv"
        write_embedding_table(table, path)
        back = read_embedding_table(path)
        with pytest.raises(UnknownIdError):
            back.lookup("zz")
        assert back.get("zz") is None

    def test_read_edges_with_comments(self, tmp_path):
        path = tmp_path / "edges.tsv"
        path.write_text("# comment\na\tr\tb\n\nb\tr\tc\n", encoding="utf-8")
        assert read_edges(path) == [("a", "r", "b"), ("b", "r", "c")]

    def test_read_edges_bad_line(self, tmp_path):
        path = tmp_path / "edges.tsv"
        path.write_text("a\tr\tb\na\tb\n", encoding="utf-8")
        with pytest.raises(ParseError) as exc:
            read_edges(path)
        assert exc.value.line_number == 2
