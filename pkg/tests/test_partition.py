import numpy as np
import pytest
from sklearn.base import clone

from fedgsl import (BalancedPartitioner, GeneratorConfig, InputError, LouvainPartitioner,
                    balanced_partition, build_graph, edge_homophily, generate_graph,
                    graph_modularity, louvain, make_federated_dataset,
                    merge_small_communities)
from fedgsl.partition import PartitionAssignment, cut_size


def set_partitions(items):
    """All partitions of a small set (Bell-number enumeration)."""
    if not items:
        yield []
        return
    head, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [part[i] + [head]] + part[i + 1:]
        yield [[head]] + part


def best_partition_by_brute_force(g):
    best_q, best = -np.inf, None
    for part in set_partitions(list(range(g.num_nodes))):
        assign = np.zeros(g.num_nodes, dtype=np.int64)
        for cid, block in enumerate(part):
            assign[block] = cid
        q = graph_modularity(g, assign)
        if q > best_q:
            best_q, best = q, assign
    return best, best_q


def two_triangles():
    edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]
    return build_graph(edges, np.zeros((6, 2)), [0] * 6, num_classes=1)


def groups_of(assignment: PartitionAssignment):
    return {frozenset(np.flatnonzero(assignment.client_of == c).tolist())
            for c in range(assignment.num_clients)}


class TestLouvain:
    def test_two_disjoint_triangles(self):
        g = two_triangles()
        pa = louvain(g, seed=0)
        # brute-force modularity oracle: optimum is the two components
        brute, brute_q = best_partition_by_brute_force(g)
        assert groups_of(pa) == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}
        assert graph_modularity(g, pa.client_of) == pytest.approx(brute_q)

    def test_k4_single_community(self):
        edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        g = build_graph(edges, np.zeros((4, 2)), [0] * 4, num_classes=1)
        pa = louvain(g, seed=1)
        _, brute_q = best_partition_by_brute_force(g)
        assert pa.num_clients == 1
        assert brute_q == pytest.approx(0.0)

    def test_empty_edges_rejected(self):
        g = build_graph([], np.zeros((3, 2)), [0, 0, 0], num_classes=1)
        with pytest.raises(InputError):
            louvain(g, seed=0)

    def test_directed_rejected(self):
        g = build_graph([(0, 1)], np.zeros((2, 2)), [0, 0], num_classes=1, undirected=False)
        with pytest.raises(InputError):
            louvain(g, seed=0)

    def test_beats_singleton_modularity(self):
        rng = np.random.default_rng(0)
        for seed in range(5):
            g = generate_graph(GeneratorConfig(num_nodes=120, num_classes=3,
                                               target_homophily=0.6, mean_degree=6,
                                               feature_dim=3, seed=seed))
            pa = louvain(g, seed=int(rng.integers(1000)))
            singleton_q = graph_modularity(g, np.arange(g.num_nodes))
            assert graph_modularity(g, pa.client_of) >= singleton_q

    def test_deterministic(self):
        g = generate_graph(GeneratorConfig(num_nodes=150, num_classes=3,
                                           target_homophily=0.7, mean_degree=6,
                                           feature_dim=3, seed=4))
        assert np.array_equal(louvain(g, seed=7).client_of, louvain(g, seed=7).client_of)


class TestMergeSmallCommunities:
    def test_all_large_unchanged(self):
        g = two_triangles()
        pa = PartitionAssignment(np.array([0, 0, 0, 1, 1, 1]), 2)
        merged = merge_small_communities(g, pa, min_size=3, seed=0)
        assert np.array_equal(merged.client_of, pa.client_of)

    def test_forced_merge(self):
        sizes = [60, 60, 10]
        client_of = np.repeat([0, 1, 2], sizes)
        g = build_graph([], np.zeros((130, 1)), np.zeros(130, dtype=int), num_classes=1)
        merged = merge_small_communities(g, PartitionAssignment(client_of, 3), 50, seed=3)
        assert merged.num_clients == 2
        assert sorted(merged.sizes().tolist()) == [60, 70]

    def test_twenty_communities_five_large(self):
        # 5 communities of 60 nodes, 15 of 10 nodes -> exactly 5 clients
        sizes = [60] * 5 + [10] * 15
        client_of = np.repeat(np.arange(20), sizes)
        n = int(client_of.size)
        g = build_graph([], np.zeros((n, 1)), np.zeros(n, dtype=int), num_classes=1)
        merged = merge_small_communities(g, PartitionAssignment(client_of, 20), 50, seed=1)
        assert merged.num_clients == 5
        assert merged.sizes().sum() == n

    def test_no_large_community_errors(self):
        client_of = np.repeat([0, 1], [4, 4])
        g = build_graph([], np.zeros((8, 1)), np.zeros(8, dtype=int), num_classes=1)
        with pytest.raises(InputError, match="min_size"):
            merge_small_communities(g, PartitionAssignment(client_of, 2), 50, seed=0)


class TestBalancedPartition:
    def test_single_part(self):
        g = two_triangles()
        pa = balanced_partition(g, 1, seed=0)
        assert pa.num_clients == 1
        assert pa.sizes().tolist() == [6]

    def test_singletons(self):
        g = two_triangles()
        pa = balanced_partition(g, 6, seed=0)
        assert sorted(pa.sizes().tolist()) == [1] * 6

    def test_two_triangles_zero_cut(self):
        g = two_triangles()
        pa = balanced_partition(g, 2, seed=0)
        # exhaustive check: 0 is the minimum balanced cut, achieved by components
        assert cut_size(g, pa.client_of) == 0
        assert groups_of(pa) == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}

    def test_balance_bound(self):
        for seed in range(6):
            g = generate_graph(GeneratorConfig(num_nodes=200 + seed * 37, num_classes=4,
                                               target_homophily=0.4, mean_degree=8,
                                               feature_dim=4, seed=seed))
            for m in (2, 4, 8):
                pa = balanced_partition(g, m, seed=seed)
                target = g.num_nodes / m
                tol = int(np.ceil(0.05 * target))
                assert np.all(np.abs(pa.sizes() - target) <= tol)

    def test_cut_no_worse_than_random_assignment(self):
        g = generate_graph(GeneratorConfig(num_nodes=240, num_classes=3,
                                           target_homophily=0.7, mean_degree=8,
                                           feature_dim=3, seed=2))
        pa = balanced_partition(g, 4, seed=5)
        rng = np.random.default_rng(5)
        random_cut = cut_size(g, rng.permutation(np.repeat(np.arange(4), 60)))
        assert cut_size(g, pa.client_of) <= random_cut

    def test_m_too_large(self):
        with pytest.raises(InputError):
            balanced_partition(two_triangles(), 7, seed=0)


class TestMakeFederatedDataset:
    def test_ten_node_split_sizes(self):
        g = build_graph([(i, i + 1) for i in range(9)], np.zeros((10, 2)),
                        np.zeros(10, dtype=int), num_classes=1)
        pa = PartitionAssignment(np.zeros(10, dtype=np.int64), 1)
        [(sub, split)] = make_federated_dataset(g, pa, seed=0)
        assert int(split.train_mask.sum()) == 6
        assert int(split.val_mask.sum()) == 2
        assert int(split.test_mask.sum()) == 2

    def test_clients_cover_all_nodes(self):
        g = generate_graph(GeneratorConfig(num_nodes=160, num_classes=4,
                                           target_homophily=0.5, mean_degree=6,
                                           feature_dim=4, seed=1))
        pa = balanced_partition(g, 4, seed=1)
        datasets = make_federated_dataset(g, pa, seed=1)
        assert sum(sub.num_nodes for sub, _ in datasets) == g.num_nodes
        for sub, split in datasets:
            assert not (split.train_mask & split.val_mask).any()
            assert (split.train_mask | split.val_mask | split.test_mask).all()

    def test_component_partition_preserves_homophily(self):
        g1 = generate_graph(GeneratorConfig(num_nodes=60, num_classes=3,
                                            target_homophily=0.6, mean_degree=5,
                                            feature_dim=3, seed=3))
        src, dst = g1.undirected_pairs()
        edges = (list(zip(src.tolist(), dst.tolist()))
                 + [(u + 60, v + 60) for u, v in zip(src.tolist(), dst.tolist())])
        labels = np.concatenate([g1.labels, g1.labels])
        g = build_graph(edges, np.zeros((120, 3)), labels, num_classes=3)
        pa = PartitionAssignment(np.repeat([0, 1], 60).astype(np.int64), 2)
        datasets = make_federated_dataset(g, pa, seed=0)
        for sub, _ in datasets:
            assert edge_homophily(sub) == pytest.approx(edge_homophily(g1))

    def test_tiny_client_rejected(self):
        g = build_graph([(0, 1)], np.zeros((5, 2)), np.zeros(5, dtype=int), num_classes=1)
        pa = PartitionAssignment(np.array([0, 0, 0, 0, 1]), 2)
        with pytest.raises(InputError):
            make_federated_dataset(g, pa, seed=0)


class TestHomophilyPreservation:
    def test_partitions_keep_whole_graph_homophily(self):
        g = generate_graph(GeneratorConfig(num_nodes=1200, num_classes=5,
                                           target_homophily=0.2, mean_degree=10,
                                           feature_dim=5, seed=0))
        whole = edge_homophily(g)
        for pa in (balanced_partition(g, 4, seed=0),
                   merge_small_communities(g, louvain(g, seed=0), 50, seed=0)):
            homs = []
            for c in range(pa.num_clients):
                from fedgsl import induced_subgraph
                sub, _ = induced_subgraph(g, np.flatnonzero(pa.client_of == c))
                if sub.num_edges:
                    homs.append(edge_homophily(sub))
            assert abs(float(np.mean(homs)) - whole) <= 0.05


class TestEstimators:
    def test_balanced_estimator(self):
        g = generate_graph(GeneratorConfig(num_nodes=160, num_classes=4,
                                           target_homophily=0.5, mean_degree=6,
                                           feature_dim=4, seed=1))
        est = BalancedPartitioner(n_clients=4, random_state=3)
        labels = est.fit_predict(g)
        assert labels.shape == (160,)
        assert est.n_clients_ == 4
        assert clone(est).get_params() == est.get_params()

    def test_louvain_estimator(self):
        g = generate_graph(GeneratorConfig(num_nodes=300, num_classes=3,
                                           target_homophily=0.7, mean_degree=8,
                                           feature_dim=3, seed=2))
        est = LouvainPartitioner(min_size=20, random_state=0)
        labels = est.fit_predict(g)
        assert labels.shape == (300,)
        assert est.n_clients_ >= 1
        assert np.bincount(labels).min() >= 20
