import numpy as np
import pytest

from asymgraph.errors import DataFormatError
from asymgraph.graph import build_graph
from asymgraph.loss import LossBatch, asymmetric_loss, loss_grad
from asymgraph.model import (DualEmbeddings, ModelParams, backward, embed_all,
                             dump_embeddings, forward, load_checkpoint,
                             load_embeddings, save_checkpoint)
from asymgraph.sampler import full_blocks, sample_blocks, sample_negatives
from asymgraph.graph import one_way_mask
from asymgraph.graph import KeyMap
from reference import naive_dual_embeddings


class TestForward:
    def test_single_edge_hand_example(self, single_edge_graph):
        """One co-purchase edge 0 -> 1 with identity weights: the source
        of 0 picks up node 1's feature, the target of 1 node 0's."""
        g, X = single_edge_graph
        params = ModelParams([np.eye(2)])
        emb = forward(full_blocks(g, [0, 1], 1), X, params)
        assert np.allclose(emb.theta_s[0], [1.0, 0.0], atol=1e-12)
        assert np.allclose(emb.theta_t[1], [np.sqrt(0.5), np.sqrt(0.5)],
                           atol=1e-12)
        assert np.array_equal(emb.theta_t[0], [0.0, 0.0])
        assert np.array_equal(emb.theta_s[1], [0.0, 0.0])

    def test_isolated_node_stays_zero(self):
        g = build_graph([(1, 2)], [], 4)
        X = np.ones((4, 3))
        params = ModelParams.init(3, 5, 2, np.random.default_rng(0))
        emb = forward(full_blocks(g, [0], 2), X, params)
        assert np.array_equal(emb.theta_s[0], np.zeros(5))
        assert np.array_equal(emb.theta_t[0], np.zeros(5))

    def test_symmetric_coview_pair(self):
        """A lone symmetric co-view edge with shared features collapses
        all four outputs onto normalize(relu(x))."""
        x = np.array([0.6, -0.2, 1.0])
        g = build_graph([], [(0, 1)], 2)
        X = np.stack([x, x])
        params = ModelParams([np.eye(3)])
        emb = forward(full_blocks(g, [0, 1], 1), X, params)
        expected = np.maximum(x, 0.0)
        expected = expected / np.linalg.norm(expected)
        for row in (emb.theta_s[0], emb.theta_s[1],
                    emb.theta_t[0], emb.theta_t[1]):
            assert np.allclose(row, expected, atol=1e-12)

    def test_matches_naive_reference(self, random_graph):
        g, X = random_graph(num_nodes=18, num_cp=45, num_cv=20, d_in=4, seed=8)
        params = ModelParams.init(4, 6, 3, np.random.default_rng(1))
        emb = forward(full_blocks(g, np.arange(18), 3), X, params)
        ref_s, ref_t = naive_dual_embeddings(
            18, g.cp_edges, g.cv_pairs, X, params.weights)
        assert np.allclose(emb.theta_s, ref_s, atol=1e-10)
        assert np.allclose(emb.theta_t, ref_t, atol=1e-10)

    def test_unit_norm_invariant(self, random_graph):
        g, X = random_graph(num_nodes=30, num_cp=90, num_cv=40, seed=3)
        params = ModelParams.init(5, 8, 2, np.random.default_rng(2))
        emb = forward(full_blocks(g, np.arange(30), 2), X, params)
        for mat in (emb.theta_s, emb.theta_t):
            norms = np.linalg.norm(mat, axis=1)
            nonzero = norms > 0
            assert np.all(np.abs(norms[nonzero] - 1.0) < 1e-6)

    def test_sampled_equals_full_when_fanout_slack(self, random_graph):
        g, X = random_graph(num_nodes=12, num_cp=25, num_cv=10, seed=6)
        params = ModelParams.init(5, 4, 2, np.random.default_rng(3))
        full = forward(full_blocks(g, np.arange(12), 2), X, params)
        sampled = forward(sample_blocks(g, np.arange(12), [100, 100],
                                        rng_seed=5), X, params)
        assert np.allclose(full.theta_s, sampled.theta_s, atol=1e-12)
        assert np.allclose(full.theta_t, sampled.theta_t, atol=1e-12)

    def test_permutation_equivariance(self, random_graph):
        g, X = random_graph(num_nodes=10, num_cp=20, num_cv=8, seed=12)
        params = ModelParams.init(5, 4, 2, np.random.default_rng(4))
        rng = np.random.default_rng(7)
        perm = rng.permutation(10)
        cp_p = perm[g.cp_edges]
        cv_p = perm[g.cv_pairs]
        g_p = build_graph(cp_p, cv_p, 10)
        X_p = np.empty_like(X)
        X_p[perm] = X
        emb = forward(full_blocks(g, np.arange(10), 2), X, params)
        emb_p = forward(full_blocks(g_p, np.arange(10), 2), X_p, params)
        assert np.allclose(emb.theta_s[np.argsort(perm)][perm],
                           emb.theta_s, atol=0)  # sanity on indexing
        assert np.allclose(emb_p.theta_s[perm], emb.theta_s, atol=1e-12)
        assert np.allclose(emb_p.theta_t[perm], emb.theta_t, atol=1e-12)

    def test_deterministic_across_runs(self, random_graph):
        g, X = random_graph(seed=1)
        params = ModelParams.init(5, 4, 2, np.random.default_rng(5))
        a = forward(sample_blocks(g, np.arange(20), [3, 3], 9), X, params)
        b = forward(sample_blocks(g, np.arange(20), [3, 3], 9), X, params)
        assert np.array_equal(a.theta_s, b.theta_s)
        assert np.array_equal(a.theta_t, b.theta_t)

    def test_shape_mismatch_rejected(self, single_edge_graph):
        g, X = single_edge_graph
        params = ModelParams([np.eye(3)])
        with pytest.raises(ValueError, match="dim"):
            forward(full_blocks(g, [0], 1), X, params)


class TestBackward:
    def test_zero_loss_grads_give_zero(self, random_graph):
        g, X = random_graph(seed=2)
        params = ModelParams.init(5, 4, 2, np.random.default_rng(6))
        blocks = full_blocks(g, np.arange(20), 2)
        grads = backward(blocks, X, params,
                         np.zeros((20, 4)), np.zeros((20, 4)))
        for gmat in grads:
            assert np.array_equal(gmat, np.zeros_like(gmat))

    def test_single_edge_closed_form(self, single_edge_graph):
        """For loss = source(0) . target(1) with identity weights the
        only surviving gradient path runs through target(1); the source
        path dies in the normalization tangent and the inactive relu."""
        g, X = single_edge_graph
        params = ModelParams([np.eye(2)])
        blocks = full_blocks(g, [0, 1], 1)
        emb = forward(blocks, X, params)
        gs = np.zeros((2, 2))
        gt = np.zeros((2, 2))
        gs[0] = emb.theta_t[1]
        gt[1] = emb.theta_s[0]
        grads = backward(blocks, X, params, gs, gt)
        expected = np.outer([1.0, 1.0], [0.5, -0.5]) / np.sqrt(2.0)
        assert np.allclose(grads[0], expected, atol=1e-12)

    def test_gradcheck_full_loss(self, random_graph):
        """Central finite differences over every weight entry."""
        g, X = random_graph(num_nodes=20, num_cp=40, num_cv=15, d_in=5, seed=0)
        params = ModelParams.init(5, 4, 2, np.random.default_rng(3))
        edges = g.cp_edges
        negs = sample_negatives(g, edges, 2, rng_seed=5)
        batch = LossBatch(edges, one_way_mask(g, edges), g.cv_pairs, negs)
        blocks = full_blocks(g, np.arange(20), 2)

        emb = forward(blocks, X, params)
        gs, gt = loss_grad(emb, batch)
        analytic = backward(blocks, X, params, gs, gt)

        h = 1e-5
        max_rel = 0.0
        for l, w in enumerate(params.weights):
            for i in range(w.shape[0]):
                for j in range(w.shape[1]):
                    orig = w[i, j]
                    w[i, j] = orig + h
                    lp = asymmetric_loss(forward(blocks, X, params), batch).total
                    w[i, j] = orig - h
                    lm = asymmetric_loss(forward(blocks, X, params), batch).total
                    w[i, j] = orig
                    fd = (lp - lm) / (2 * h)
                    rel = abs(analytic[l][i, j] - fd) / max(abs(fd), 1e-6)
                    max_rel = max(max_rel, rel)
        assert max_rel < 1e-4


class TestEmbedAll:
    def test_row_count(self, random_graph):
        g, X = random_graph(num_nodes=17, seed=5)
        params = ModelParams.init(5, 4, 2, np.random.default_rng(1))
        emb = embed_all(g, X, params, batch_size=4)
        assert emb.theta_s.shape == (17, 4)
        assert emb.theta_t.shape == (17, 4)
        assert np.array_equal(emb.nodes, np.arange(17))

    def test_batch_size_is_a_partition(self, random_graph):
        # BLAS picks shape-dependent blocking, so partitioned batches can
        # differ in the last ulp; anything beyond that is a real bug.
        g, X = random_graph(num_nodes=13, seed=7)
        params = ModelParams.init(5, 4, 2, np.random.default_rng(2))
        one = embed_all(g, X, params, batch_size=1)
        all_at_once = embed_all(g, X, params, batch_size=13)
        assert np.allclose(one.theta_s, all_at_once.theta_s, rtol=0, atol=1e-12)
        assert np.allclose(one.theta_t, all_at_once.theta_t, rtol=0, atol=1e-12)

    def test_matches_per_node_oracle(self, random_graph):
        g, X = random_graph(num_nodes=14, seed=9)
        params = ModelParams.init(5, 4, 3, np.random.default_rng(3))
        emb = embed_all(g, X, params, batch_size=5)
        ref_s, ref_t = naive_dual_embeddings(
            14, g.cp_edges, g.cv_pairs, X, params.weights)
        assert np.allclose(emb.theta_s, ref_s, atol=1e-10)
        assert np.allclose(emb.theta_t, ref_t, atol=1e-10)

    def test_sampled_inference_option(self, random_graph):
        g, X = random_graph(num_nodes=16, num_cp=60, num_cv=25, seed=10)
        params = ModelParams.init(5, 4, 2, np.random.default_rng(4))
        a = embed_all(g, X, params, batch_size=4, fanouts=(2, 2), rng_seed=3)
        b = embed_all(g, X, params, batch_size=4, fanouts=(2, 2), rng_seed=3)
        assert np.array_equal(a.theta_s, b.theta_s)
        full = embed_all(g, X, params, batch_size=4)
        assert not np.allclose(a.theta_s, full.theta_s)


class TestPersistence:
    def test_checkpoint_roundtrip(self, tmp_path):
        params = ModelParams.init(6, 4, 3, np.random.default_rng(0))
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.num_layers == 3
        for a, b in zip(params.weights, loaded.weights):
            assert np.array_equal(a, b)

    def test_checkpoint_bad_magic(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(DataFormatError, match="magic"):
            load_checkpoint(path)

    def test_checkpoint_truncated(self, tmp_path):
        params = ModelParams.init(6, 4, 2, np.random.default_rng(0))
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(DataFormatError, match="truncated"):
            load_checkpoint(path)

    def test_checkpoint_deterministic_bytes(self, tmp_path):
        params = ModelParams.init(5, 3, 2, np.random.default_rng(4))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(params, p1)
        save_checkpoint(params, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_embedding_dump_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        emb = DualEmbeddings(nodes=np.arange(4),
                             theta_s=rng.normal(size=(4, 3)),
                             theta_t=rng.normal(size=(4, 3)))
        km = KeyMap([f"p{i}" for i in range(4)])
        path = tmp_path / "emb.tsv"
        dump_embeddings(emb, km, path)
        loaded, km2 = load_embeddings(path)
        assert np.array_equal(loaded.theta_s, emb.theta_s)
        assert np.array_equal(loaded.theta_t, emb.theta_t)
        assert km2.keys() == km.keys()
