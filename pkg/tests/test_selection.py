import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from stratcover.data import Dataset
from stratcover.graph import Graph
from stratcover.selection import (degree_thresholds, greedy_cover,
                                  greedy_cover_nodes, greedy_cover_nodes_naive,
                                  make_split, per_class_degree_thresholds,
                                  random_split, strat_degree)

from conftest import random_edges
from oracles import greedy_cover_oracle


def make_dataset(n, edges, labels, n_classes=2):
    return Dataset(graph=Graph.from_edges(n, edges),
                   features=sp.csr_matrix(np.ones((n, 1))),
                   labels=np.asarray(labels), n_classes=n_classes, n_features=1)


def random_sel_dataset(rng, n, p, n_classes=2):
    labels = rng.integers(0, n_classes, size=n)
    labels[:n_classes] = np.arange(n_classes)
    return make_dataset(n, random_edges(rng, n, p), labels, n_classes)


class TestRandomSplit:
    def test_counts_unstratified(self):
        rng = np.random.default_rng(0)
        ds = random_sel_dataset(rng, 10, 0.3)
        split = random_split(ds, 0.1, 0.1, seed=1, stratified=False)
        assert (split.train.size, split.val.size, split.test.size) == (1, 1, 8)

    def test_same_seed_reproduces(self):
        rng = np.random.default_rng(1)
        ds = random_sel_dataset(rng, 30, 0.2)
        a = random_split(ds, 0.2, 0.1, seed=7)
        b = random_split(ds, 0.2, 0.1, seed=7)
        assert np.array_equal(a.train, b.train)
        assert np.array_equal(a.val, b.val)
        assert np.array_equal(a.test, b.test)

    def test_stratified_proportions(self):
        labels = [0] * 50 + [1] * 50
        ds = make_dataset(100, [(0, 1)], labels)
        split = random_split(ds, 0.2, 0.1, seed=3)
        for c in (0, 1):
            assert np.sum(ds.labels[split.train] == c) == 10
            assert np.sum(ds.labels[split.val] == c) == 5

    def test_invalid_fracs(self):
        rng = np.random.default_rng(2)
        ds = random_sel_dataset(rng, 10, 0.3)
        with pytest.raises(ValueError):
            random_split(ds, 0.7, 0.4, seed=0)


class TestStratDegree:
    def test_top_degree_single_class(self):
        # class 0 nodes 0..3 with degrees 5,3,3,1 via padding neighbors
        edges = [(0, 4), (0, 5), (0, 6), (0, 7), (0, 1),
                 (1, 4), (1, 5),
                 (2, 4), (2, 5), (2, 6),
                 (3, 4)]
        labels = [0, 0, 0, 0, 1, 1, 1, 1]
        ds = make_dataset(8, edges, labels)
        degs = ds.graph.degrees()
        assert degs[:4].tolist() == [5, 3, 3, 1]
        split = strat_degree(ds, 0.25, 0.25, seed=0)
        class0_train = [n for n in split.train if labels[n] == 0]
        assert class0_train == [0]

    def test_tie_breaks_to_lower_index(self):
        # class 0: degrees 4,4,2 for nodes 0,1,2
        edges = [(0, 3), (0, 4), (0, 5), (0, 6),
                 (1, 3), (1, 4), (1, 5), (1, 7),
                 (2, 3), (2, 4)]
        labels = [0, 0, 0, 1, 1, 1, 1, 1]
        ds = make_dataset(8, edges, labels)
        split = strat_degree(ds, 1 / 3, 0.2, seed=0)
        class0_train = [n for n in split.train if labels[n] == 0]
        assert class0_train == [0]

    def test_one_top_node_per_class(self):
        rng = np.random.default_rng(5)
        labels = [0] * 4 + [1] * 4
        ds = make_dataset(8, random_edges(rng, 8, 0.5), labels)
        split = strat_degree(ds, 0.25, 0.25, seed=1)
        for c in (0, 1):
            assert np.sum(ds.labels[split.train] == c) == 1

    def test_min_train_degree_dominates_rest(self):
        rng = np.random.default_rng(9)
        for trial in range(20):
            ds = random_sel_dataset(rng, 24, 0.3, n_classes=3)
            split = strat_degree(ds, 0.25, 0.1, seed=trial)
            degs = ds.graph.degrees()
            for c in range(3):
                tr = [n for n in split.train if ds.labels[n] == c]
                rest = [n for n in np.concatenate([split.val, split.test])
                        if ds.labels[n] == c]
                if not tr or not rest:
                    continue
                lo_train = min(degs[n] for n in tr)
                hi_rest = max(degs[n] for n in rest)
                if lo_train == hi_rest:  # tie straddles: lowest index must be inside
                    tied_in = [n for n in tr if degs[n] == lo_train]
                    tied_out = [n for n in rest if degs[n] == lo_train]
                    assert min(tied_in) < min(tied_out)
                else:
                    assert lo_train > hi_rest


class TestGreedyCover:
    def test_star_picks_center(self):
        g = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
        assert greedy_cover_nodes(g, 1).tolist() == [0]

    def test_two_disjoint_edges(self):
        g = Graph.from_edges(4, [(0, 1), (2, 3)])
        assert greedy_cover_nodes(g, 2).tolist() == [0, 2]

    def test_isolated_fallback(self):
        g = Graph.empty(4)
        assert greedy_cover_nodes(g, 2).tolist() == [0, 1]
        assert greedy_cover_nodes_naive(g, 2).tolist() == [0, 1]

    def test_training_size_is_ceil(self):
        rng = np.random.default_rng(11)
        ds = random_sel_dataset(rng, 25, 0.2)
        split = greedy_cover(ds, 0.1, 0.1, seed=0)
        assert split.train.size == 3  # ceil(0.1 * 25)

    def test_accelerated_equals_naive(self):
        rng = np.random.default_rng(13)
        for trial in range(40):
            n = int(rng.integers(4, 40))
            g = Graph.from_edges(n, random_edges(rng, n, float(rng.uniform(0.02, 0.5))))
            n_train = int(rng.integers(1, max(2, n // 2)))
            fast = greedy_cover_nodes(g, n_train)
            slow = greedy_cover_nodes_naive(g, n_train)
            assert fast.tolist() == slow.tolist(), f"trial {trial}"

    def test_matches_literal_transcription_with_mark_invariant(self):
        rng = np.random.default_rng(17)
        for trial in range(25):
            n = int(rng.integers(4, 30))
            edges = random_edges(rng, n, 0.25)
            g = Graph.from_edges(n, edges)
            n_train = int(rng.integers(1, n))
            want = greedy_cover_oracle(n, edges.tolist(), n_train, check_marks=True)
            assert greedy_cover_nodes(g, n_train).tolist() == want


class TestDegreeThresholds:
    def test_four_elements(self):
        degs = np.array([2, 3, 4, 5])
        labels = np.zeros(4, dtype=int)
        assert degree_thresholds(degs, labels, 1, 0.25)[0] == 5

    def test_single_element(self):
        assert degree_thresholds(np.array([7]), np.zeros(1, dtype=int), 1, 0.25)[0] == 7

    def test_constant_degrees(self):
        degs = np.ones(4, dtype=int)
        assert degree_thresholds(degs, np.zeros(4, dtype=int), 1, 0.5)[0] == 1

    def test_per_class_wrapper(self):
        ds = make_dataset(4, [(0, 1), (0, 2), (0, 3), (1, 2)], [0, 0, 1, 1])
        thr = per_class_degree_thresholds(ds, 0.5)
        degs = ds.graph.degrees()
        assert thr[0] == sorted([degs[0], degs[1]])[1]
        assert thr[1] == sorted([degs[2], degs[3]])[1]

    def test_empty_class_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            degree_thresholds(np.array([1, 1]), np.zeros(2, dtype=int), 2, 0.5)


class TestSplitProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 5000), st.sampled_from(["random", "strat-degree", "greedy-cover"]))
    def test_partition_and_determinism(self, seed, method):
        rng = np.random.default_rng(seed % 97)
        ds = random_sel_dataset(rng, 20, 0.25, n_classes=2)
        a = make_split(ds, method, 0.2, 0.1, seed=seed)
        b = make_split(ds, method, 0.2, 0.1, seed=seed)
        union = np.sort(np.concatenate([a.train, a.val, a.test]))
        assert np.array_equal(union, np.arange(20))
        for part in ("train", "val", "test"):
            assert np.array_equal(getattr(a, part), getattr(b, part))

    def test_split_json_round_trip(self, tmp_path):
        from stratcover.selection import load_split, save_split
        rng = np.random.default_rng(23)
        ds = random_sel_dataset(rng, 15, 0.3)
        split = make_split(ds, "greedy-cover", 0.2, 0.1, seed=4)
        save_split(split, tmp_path / "s.json")
        back = load_split(tmp_path / "s.json")
        assert np.array_equal(back.train, split.train)
        assert np.array_equal(back.val, split.val)
        assert np.array_equal(back.test, split.test)
        assert back.method == split.method and back.seed == split.seed
