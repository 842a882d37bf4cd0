import numpy as np
import pytest

from fedgsl import (Graph, Hyperparams, InputError, NodeSplit, Tape, build_graph,
                    build_latent_graph, dual_channel_forward, full_model_grad_check,
                    generate_graph, GeneratorConfig, init_dual_params, init_plain_params,
                    pairwise_metric, prepare_operators, smooth_loss,
                    structure_learner_embed, total_loss, train_step)
from fedgsl import autodiff as ad
from fedgsl import model as M
from fedgsl.federated import make_clients
from fedgsl.partition import five_group_split
from fedgsl.validation import derived_rng


def small_graph(seed=7, n=12, classes=3, degree=4, dim=6):
    return generate_graph(GeneratorConfig(num_nodes=n, num_classes=classes,
                                          target_homophily=0.3, mean_degree=degree,
                                          feature_dim=dim, seed=seed))


def hp_small(**kw):
    base = dict(hidden_dim=8, k_neighbors=4, num_heads=4)
    base.update(kw)
    return Hyperparams(**base)


def dense_row_norm(g: Graph) -> np.ndarray:
    n = g.num_nodes
    a = np.zeros((n, n))
    src, dst = g.edge_pairs()
    a[src, dst] = 1.0
    deg = a.sum(axis=1, keepdims=True)
    return np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)


class TestStructureLearner:
    def test_edgeless_graph_embeds_to_zero(self):
        g = build_graph([], np.ones((4, 3)), [0, 0, 1, 1])
        params = init_dual_params(3, 2, hp_small(), seed=0)
        z = structure_learner_embed(params, prepare_operators(g))
        assert np.array_equal(z.values, np.zeros((4, 8)))

    def test_two_node_path_hand_expansion(self):
        g = build_graph([(0, 1)], [[1.0, 2.0], [3.0, -1.0]], [0, 1])
        params = init_dual_params(2, 2, hp_small(), seed=1)
        z = structure_learner_embed(params, prepare_operators(g))
        w = params.blocks["sl_gnn"].values
        np.testing.assert_allclose(z.values[0], np.maximum(g.features[1] @ w, 0), atol=1e-15)
        np.testing.assert_allclose(z.values[1], np.maximum(g.features[0] @ w, 0), atol=1e-15)

    def test_matches_dense_reference(self):
        g = small_graph()
        params = init_dual_params(g.feature_dim, g.num_classes, hp_small(), seed=2)
        z = structure_learner_embed(params, prepare_operators(g))
        ref = np.maximum(dense_row_norm(g) @ (g.features @ params.blocks["sl_gnn"].values), 0)
        np.testing.assert_allclose(z.values, ref, atol=1e-12)


class TestPairwiseMetric:
    def ones_head_params(self, hidden, heads=2):
        hp = hp_small(hidden_dim=hidden, num_heads=heads)
        params = init_dual_params(hidden, 2, hp, seed=0)
        for h in range(heads):
            params.blocks[f"sl_head_src_{h}"].values[:] = 1.0
            params.blocks[f"sl_head_dst_{h}"].values[:] = 1.0
        return params

    def test_identical_vectors_score_one(self):
        params = self.ones_head_params(4)
        z = np.array([[1.0, 2.0, 0.5, -1.0], [1.0, 2.0, 0.5, -1.0]])
        assert pairwise_metric(params, z, 0, 1) == pytest.approx(1.0)

    def test_orthogonal_vectors_score_zero(self):
        params = self.ones_head_params(4)
        z = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
        assert pairwise_metric(params, z, 0, 1) == pytest.approx(0.0)

    def test_hand_computed_half(self):
        # two heads: src weights all-ones; dst weights (1,0) and (0,1)
        params = self.ones_head_params(2, heads=2)
        params.blocks["sl_head_dst_0"].values[:] = [[1.0, 0.0]]
        params.blocks["sl_head_dst_1"].values[:] = [[0.0, 1.0]]
        z = np.array([[1.0, 0.0], [1.0, 1.0]])
        assert pairwise_metric(params, z, 0, 1) == pytest.approx(0.5)

    def test_symmetric_under_pair_and_head_swap(self):
        rng = np.random.default_rng(3)
        hp = hp_small()
        params = init_dual_params(6, 2, hp, seed=4)
        z = rng.standard_normal((5, 8))
        swapped = init_dual_params(6, 2, hp, seed=4)
        for h in range(hp.num_heads):
            swapped.blocks[f"sl_head_src_{h}"].values[:] = params.blocks[f"sl_head_dst_{h}"].values
            swapped.blocks[f"sl_head_dst_{h}"].values[:] = params.blocks[f"sl_head_src_{h}"].values
        for u, v in [(0, 1), (2, 4)]:
            assert pairwise_metric(params, z, u, v) == pytest.approx(
                pairwise_metric(swapped, z, v, u))
            assert abs(pairwise_metric(params, z, u, v)) <= 1.0


class TestLatentGraph:
    def build(self, params, g, hp, rng=None):
        ops = prepare_operators(g)
        with Tape():
            z = structure_learner_embed(params, ops)
        return z, build_latent_graph(params, z, hp, rng=rng)

    def test_k_equals_n_minus_one_complete(self):
        g = small_graph(n=8)
        hp = hp_small(k_neighbors=7)
        params = init_dual_params(g.feature_dim, g.num_classes, hp, seed=5)
        _, lg = self.build(params, g, hp)
        assert np.all(lg.out_degrees() == 7)

    def test_k_too_large_rejected(self):
        g = small_graph(n=8)
        hp = hp_small(k_neighbors=8)
        params = init_dual_params(g.feature_dim, g.num_classes, hp, seed=5)
        with pytest.raises(InputError):
            self.build(params, g, hp)

    def test_argmax_selection(self):
        hp = hp_small(k_neighbors=1, num_heads=1)
        params = init_dual_params(3, 2, hp, seed=0)
        pattern = M.select_latent_pattern(params, np.array([
            [1.0, 0.0, 0.0],
            [0.9, 0.1, 0.0],
            [0.0, 1.0, 0.0],
        ])[:, :3] @ np.eye(3, hp.hidden_dim), hp)
        # node 0's best match is node 1 (nearly parallel), not node 2
        assert pattern.col_indices[pattern.row_ids == 0].tolist() == [1]

    def test_retained_sets_match_bruteforce(self):
        rng = np.random.default_rng(6)
        hp = hp_small(k_neighbors=5)
        params = init_dual_params(4, 2, hp, seed=7)
        z = rng.standard_normal((20, hp.hidden_dim))
        pattern = M.select_latent_pattern(params, z, hp)
        phi = np.array([[pairwise_metric(params, z, u, v) if u != v else -2.0
                         for v in range(20)] for u in range(20)])
        for u in range(20):
            order = sorted(range(20), key=lambda v: (-phi[u, v], v))
            expected = sorted(order[:5])
            got = sorted(pattern.col_indices[pattern.row_ids == u].tolist())
            assert got == expected

    def test_retained_weights_equal_recomputed_metric(self):
        hp = hp_small(k_neighbors=5)
        for seed in range(5):
            g = small_graph(seed=seed, n=15)
            params = init_dual_params(g.feature_dim, g.num_classes, hp, seed=seed)
            z, lg = self.build(params, g, hp)
            assert np.all(lg.out_degrees() <= 5)
            for e in range(lg.pattern.nnz):
                u, v = int(lg.pattern.row_ids[e]), int(lg.pattern.col_indices[e])
                oracle = pairwise_metric(params, z.values, u, v)
                assert abs(lg.scores.values[e, 0] - oracle) < 1e-12

    def test_bernoulli_mode_deterministic(self):
        g = small_graph(n=10)
        hp = hp_small(sparsifier="bernoulli")
        params = init_dual_params(g.feature_dim, g.num_classes, hp, seed=8)
        _, lg_a = self.build(params, g, hp, rng=np.random.default_rng(3))
        _, lg_b = self.build(params, g, hp, rng=np.random.default_rng(3))
        assert np.array_equal(lg_a.pattern.col_indices, lg_b.pattern.col_indices)

    def test_binary_mode_uses_unit_weights(self):
        g = small_graph(n=10)
        hp = hp_small(sparsifier="topk_binary")
        params = init_dual_params(g.feature_dim, g.num_classes, hp, seed=9)
        _, lg = self.build(params, g, hp)
        assert np.array_equal(lg.weights.values, np.ones((lg.pattern.nnz, 1)))
        assert not np.array_equal(lg.scores.values, lg.weights.values)


class TestForward:
    def setup_case(self, alpha, seed=10):
        g = small_graph(seed=seed)
        hp = hp_small(alpha=alpha)
        params = init_dual_params(g.feature_dim, g.num_classes, hp, seed=seed)
        ops = prepare_operators(g)
        with Tape():
            z = structure_learner_embed(params, ops)
        lg = build_latent_graph(params, z, hp)
        return g, hp, params, ops, lg

    def perturbed(self, lg):
        rng = np.random.default_rng(0)
        scrambled = ad.Tensor(rng.standard_normal(lg.weights.values.shape))
        return M.LatentGraph(lg.pattern, scrambled, scrambled, lg.k)

    def test_alpha_one_ignores_latent_bitwise(self):
        g, hp, params, ops, lg = self.setup_case(alpha=1.0)
        _, logits_a = dual_channel_forward(params, ops, lg, hp)
        _, logits_b = dual_channel_forward(params, ops, self.perturbed(lg), hp)
        assert np.array_equal(logits_a.values, logits_b.values)

    def test_alpha_zero_ignores_adjacency_bitwise(self):
        g, hp, params, ops, lg = self.setup_case(alpha=0.0)
        _, logits_a = dual_channel_forward(params, ops, lg, hp)
        other = build_graph([(0, 1), (5, 9), (2, 3)], g.features, g.labels,
                            num_classes=g.num_classes)
        ops_b = prepare_operators(other)
        _, logits_b = dual_channel_forward(params, ops_b, lg, hp)
        assert np.array_equal(logits_a.values, logits_b.values)

    def test_matches_dense_reference(self):
        g, hp, params, ops, lg = self.setup_case(alpha=0.2, seed=11)
        _, logits = dual_channel_forward(params, ops, lg, hp)

        an = dense_row_norm(g)
        n = g.num_nodes
        lat = np.zeros((n, n))
        w = lg.weights.values.ravel()
        lat[lg.pattern.row_ids, lg.pattern.col_indices] = w
        denom = np.abs(lat).sum(axis=1, keepdims=True)
        lat = np.divide(lat, denom, out=np.zeros_like(lat), where=denom > 0)
        z = np.maximum(g.features @ params.blocks["f0"].values, 0)
        zs = [z]
        for layer in range(hp.num_layers):
            e = an @ (z @ params.blocks[f"local_{layer}"].values)
            h = lat @ (z @ params.blocks[f"global_{layer}"].values)
            z = np.maximum(hp.alpha * e + (1 - hp.alpha) * h, 0)
            zs.append(z)
        ref = np.concatenate([g.features] + zs, axis=1) @ params.blocks["classifier"].values
        np.testing.assert_allclose(logits.values, ref, atol=1e-12)


class TestLosses:
    def test_smooth_zero_when_disabled(self):
        g, hp, params, ops, lg = TestForward().setup_case(alpha=0.2)
        assert smooth_loss(lg, g.features, 0.0, 0.0).item() == 0.0

    def test_single_edge_identical_features(self):
        pattern = ad.SparsePattern(2, np.array([0, 1, 1]), np.array([1]))
        lg = M.LatentGraph(pattern, ad.Tensor([[1.0]]), ad.Tensor([[1.0]]), 1)
        feats = np.array([[2.0, 3.0], [2.0, 3.0]])
        assert smooth_loss(lg, feats, 1.0, 1.0).item() == pytest.approx(1.0)

    def test_three_node_hand_case(self):
        # edges 0->1 (w=0.5), 1->2 (w=-0.2); features 0, 1, 3 in one dimension
        pattern = ad.SparsePattern(3, np.array([0, 1, 2, 2]), np.array([1, 2]))
        w = ad.Tensor(np.array([[0.5], [-0.2]]))
        lg = M.LatentGraph(pattern, w, w, 1)
        feats = np.array([[0.0], [1.0], [3.0]])
        lam = mu = 1.0
        # first term: 0.5*(0-1)^2 + (-0.2)*(1-3)^2 = 0.5 - 0.8 = -0.3
        # second term: 0.25 + 0.04 = 0.29
        assert smooth_loss(lg, feats, lam, mu).item() == pytest.approx(-0.01)

    def test_total_loss_composes(self):
        g, hp, params, ops, lg = TestForward().setup_case(alpha=0.2, seed=12)
        _, logits = dual_channel_forward(params, ops, lg, hp)
        mask = np.ones(g.num_nodes, dtype=bool)
        total = total_loss(logits, g.labels, mask, lg, g.features, hp)
        ce = ad.masked_cross_entropy(logits, g.labels, mask)
        sm = smooth_loss(lg, g.features, hp.lambda_smooth, hp.mu_smooth)
        assert total.item() == pytest.approx(ce.item() + sm.item(), abs=1e-12)

    def test_perfect_logits_near_zero_loss(self):
        labels = np.array([0, 1, 2])
        logits = ad.Tensor(np.eye(3) * 50.0)
        mask = np.ones(3, dtype=bool)
        assert ad.masked_cross_entropy(logits, labels, mask).item() < 1e-10

    def test_smooth_non_negative_for_non_negative_weights(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(3, 8))
            cols = rng.integers(0, n, size=2 * n)
            offsets = np.linspace(0, 2 * n, n + 1).astype(np.int64)
            pattern = ad.SparsePattern(n, offsets, cols.astype(np.int64))
            w = ad.Tensor(rng.random((2 * n, 1)))
            lg = M.LatentGraph(pattern, w, w, 2)
            feats = rng.standard_normal((n, 3))
            assert smooth_loss(lg, feats, rng.random(), rng.random()).item() >= 0.0


class TestTrainStep:
    def datasets(self, seed=0):
        g = small_graph(seed=seed, n=30, degree=6)
        return [(g, five_group_split(g.num_nodes, derived_rng(seed, 0)))]

    def test_identical_clients_identical_updates(self):
        hp = hp_small()
        a = make_clients(self.datasets(), hp, variant="dual", init_seed=3)[0]
        b = make_clients(self.datasets(), hp, variant="dual", init_seed=3)[0]
        train_step(a, hp, rng=np.random.default_rng(0))
        train_step(b, hp, rng=np.random.default_rng(0))
        for name in a.params.blocks:
            assert np.array_equal(a.params.blocks[name].values, b.params.blocks[name].values)

    def test_reduced_model_oracle(self):
        # alpha=1, no smoothness: dual's shared-architecture blocks must update
        # exactly like a plain model built from the same block values
        hp = hp_small(alpha=1.0, lambda_smooth=0.0, mu_smooth=0.0)
        dual = make_clients(self.datasets(), hp, variant="dual", init_seed=4)[0]
        plain = make_clients(self.datasets(), hp, variant="plain", init_seed=4)[0]
        for name in plain.params.blocks:
            plain.params.blocks[name].values[:] = dual.params.blocks[name].values
        for step in range(3):
            train_step(dual, hp)
            train_step(plain, hp)
        for name in plain.params.blocks:
            assert np.array_equal(plain.params.blocks[name].values,
                                  dual.params.blocks[name].values), name

    def test_training_progresses(self):
        g = generate_graph(GeneratorConfig(num_nodes=80, num_classes=3,
                                           target_homophily=0.2, mean_degree=8,
                                           feature_dim=6, feature_separation=1.0, seed=5))
        hp = hp_small(k_neighbors=8)
        client = make_clients([(g, five_group_split(80, derived_rng(1, 0)))],
                              hp, variant="dual", init_seed=5)[0]
        first = train_step(client, hp)
        last = None
        for _ in range(49):
            last = train_step(client, hp)
        assert last["total_loss"] < first["total_loss"]


class TestGradCheckFullModel:
    def test_twelve_node_instance_passes(self):
        g = small_graph(seed=7)
        split = five_group_split(12, derived_rng(3, 0))
        hp = hp_small()
        params = init_dual_params(g.feature_dim, g.num_classes, hp, seed=5)
        report = full_model_grad_check(g, split, params, hp)
        assert report["passed"], report


class TestHyperparams:
    def test_defaults_match_experiment_settings(self):
        hp = Hyperparams()
        assert (hp.alpha, hp.lambda_smooth, hp.mu_smooth) == (0.2, 0.1, 0.1)
        assert (hp.k_neighbors, hp.num_heads, hp.num_layers) == (20, 4, 2)
        assert hp.learning_rate == 0.005

    def test_validation(self):
        with pytest.raises(InputError):
            Hyperparams(alpha=1.5).validate()
        with pytest.raises(InputError):
            Hyperparams(sparsifier="magic").validate()

    def test_channel_assignment(self):
        hp = hp_small()
        params = init_dual_params(6, 3, hp, seed=0)
        globals_ = set(params.blocks_in_channel("global"))
        assert "sl_gnn" in globals_
        assert all(f"global_{l}" in globals_ for l in range(hp.num_layers))
        assert params.channel_of["f0"] == "local"
        assert params.channel_of["classifier"] == "local"
        shared_f0 = init_dual_params(6, 3, hp, seed=0, f0_channel="global")
        assert shared_f0.channel_of["f0"] == "global"

    def test_plain_params_have_no_learner(self):
        params = init_plain_params(6, 3, hp_small(), seed=0)
        assert params.structure_learner_blocks() == []
        assert set(params.blocks) == {"f0", "local_0", "local_1", "classifier"}
