import math

import numpy as np
import pytest
import scipy.sparse as sp

from stratcover.data import generate_sbm, separable_fixture
from stratcover.gcn import (GcnParams, SurrogateParams, TrainConfig,
                            cross_entropy, f1_macro, gcn_backward, gcn_forward,
                            gcn_train, init_params, load_checkpoint, margin,
                            margins_from_probs, predictions_from_probs,
                            save_checkpoint, softmax, surrogate_forward,
                            surrogate_train)
from stratcover.graph import normalized_adjacency
from stratcover.seeds import rng as make_rng
from stratcover.selection import random_split

from conftest import dense_normalized, random_dataset


def random_gcn_fixture(seed, n=8, d=5, hidden=4, n_classes=3, p=0.35):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, n, p, d, n_classes)
    params = GcnParams(W1=rng.normal(0, 0.6, (d, hidden)),
                       W2=rng.normal(0, 0.6, (hidden, n_classes)),
                       b1=rng.normal(0, 0.3, hidden),
                       b2=rng.normal(0, 0.3, n_classes))
    mask = np.sort(rng.choice(n, size=max(2, n // 2), replace=False))
    ahat = normalized_adjacency(ds.graph)
    return ds, params, ahat, mask


class TestGcnForward:
    def test_zero_weights_give_uniform(self):
        ds, params, ahat, _ = random_gcn_fixture(0)
        zero = GcnParams(W1=np.zeros_like(params.W1), W2=np.zeros_like(params.W2),
                         b1=np.zeros_like(params.b1), b2=np.zeros_like(params.b2))
        probs = gcn_forward(zero, ahat, ds.features)
        assert np.allclose(probs, 1.0 / ds.n_classes)

    def test_isolated_node_uniform_with_zero_bias(self):
        from stratcover.graph import Graph
        rng = np.random.default_rng(1)
        g = Graph.from_edges(3, [(0, 1)])
        x = sp.csr_matrix(np.array([[1.0, 0], [0, 1], [1, 1]]))
        params = GcnParams(W1=rng.normal(size=(2, 4)), W2=rng.normal(size=(4, 2)),
                           b1=np.zeros(4), b2=np.zeros(2))
        probs = gcn_forward(params, normalized_adjacency(g), x)
        assert np.allclose(probs[2], 0.5)

    def test_path_fixture_matches_dense_oracle(self, path3):
        rng = np.random.default_rng(2)
        x = sp.csr_matrix(np.array([[1.0, 0], [0, 1], [1, 1]]))
        params = GcnParams(W1=rng.normal(0, 0.5, (2, 3)),
                           W2=rng.normal(0, 0.5, (3, 2)),
                           b1=rng.normal(0, 0.1, 3), b2=rng.normal(0, 0.1, 2))
        got = gcn_forward(params, normalized_adjacency(path3), x)
        ahat = dense_normalized(path3.to_scipy().toarray())
        z1 = ahat @ x.toarray() @ params.W1 + params.b1
        z2 = ahat @ np.maximum(z1, 0) @ params.W2 + params.b2
        ez = np.exp(z2 - z2.max(axis=1, keepdims=True))
        want = ez / ez.sum(axis=1, keepdims=True)
        assert np.max(np.abs(got - want)) < 1e-9

    def test_rows_are_probability_vectors(self):
        for seed in range(5):
            ds, params, ahat, _ = random_gcn_fixture(seed)
            probs = gcn_forward(params, ahat, ds.features)
            assert probs.min() >= 0
            assert np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-9


def finite_difference_grads(params, ahat, features, labels, mask, h=1e-6):
    def loss_of(p):
        return cross_entropy(gcn_forward(p, ahat, features), labels, mask)

    grads = {}
    for name in ("W1", "W2", "b1", "b2"):
        w = getattr(params, name)
        if w is None:
            continue
        g = np.zeros_like(w)
        it = np.nditer(w, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = w[idx]
            w[idx] = orig + h
            up = loss_of(params)
            w[idx] = orig - h
            down = loss_of(params)
            w[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads[name] = g
    return grads


class TestGcnBackward:
    @pytest.mark.parametrize("seed", range(6))
    def test_matches_central_finite_differences(self, seed):
        ds, params, ahat, mask = random_gcn_fixture(seed)
        analytic = gcn_backward(params, ahat, ds.features, ds.labels, mask)
        numeric = finite_difference_grads(params, ahat, ds.features, ds.labels, mask)
        for name, fd in numeric.items():
            err = np.max(np.abs(analytic[name] - fd)) / max(1.0, np.max(np.abs(fd)))
            assert err < 1e-6, f"{name}: relative error {err}"

    def test_zero_weights_w2_gradient_formula(self):
        # with all-zero weights every row is uniform; dW2 has a closed form
        ds, params, ahat, mask = random_gcn_fixture(7)
        zero = GcnParams(W1=np.zeros_like(params.W1), W2=np.zeros_like(params.W2),
                         b1=np.zeros_like(params.b1), b2=np.zeros_like(params.b2))
        analytic = gcn_backward(zero, ahat, ds.features, ds.labels, mask)
        numeric = finite_difference_grads(zero, ahat, ds.features, ds.labels, mask)
        err = np.max(np.abs(analytic["W2"] - numeric["W2"]))
        assert err < 1e-5 * max(1.0, np.max(np.abs(numeric["W2"])))

    def test_dead_rectifier_unit_gets_zero_gradient(self):
        ds, params, ahat, mask = random_gcn_fixture(3)
        params.b1[1] = -100.0  # unit 1 never activates
        grads = gcn_backward(params, ahat, ds.features, ds.labels, mask)
        assert np.all(grads["W1"][:, 1] == 0.0)
        assert grads["b1"][1] == 0.0


class TestSurrogate:
    def test_zero_weights_uniform(self):
        ds, _, ahat, _ = random_gcn_fixture(4)
        probs = surrogate_forward(SurrogateParams(W=np.zeros((ds.n_features, 3))),
                                  ahat, ds.features)
        assert np.allclose(probs, 1 / 3)

    def test_equals_linearized_gcn(self):
        for seed in range(5):
            ds, params, ahat, _ = random_gcn_fixture(seed)
            surrogate = SurrogateParams(W=params.W1 @ params.W2)
            got = surrogate_forward(surrogate, ahat, ds.features)
            a = ahat.matrix.toarray()
            z = a @ (a @ ds.features.toarray() @ params.W1) @ params.W2
            ez = np.exp(z - z.max(axis=1, keepdims=True))
            want = ez / ez.sum(axis=1, keepdims=True)
            assert np.max(np.abs(got - want)) < 1e-9

    def test_four_node_fixture_matches_dense_oracle(self):
        rng = np.random.default_rng(8)
        ds = random_dataset(rng, 4, 0.6, 3, 2)
        w = rng.normal(size=(3, 2))
        got = surrogate_forward(SurrogateParams(W=w),
                                normalized_adjacency(ds.graph), ds.features)
        a = dense_normalized(ds.graph.to_scipy().toarray())
        z = a @ a @ ds.features.toarray() @ w
        ez = np.exp(z - z.max(axis=1, keepdims=True))
        want = ez / ez.sum(axis=1, keepdims=True)
        assert np.max(np.abs(got - want)) < 1e-9


@pytest.fixture(scope="module")
def separable():
    ds = generate_sbm(separable_fixture(seed=0))
    split = random_split(ds, 0.2, 0.2, seed=0)
    return ds, split


class TestTraining:
    def test_separable_fixture_reaches_full_accuracy(self, separable):
        ds, split = separable
        cfg = TrainConfig(seed=1, max_epochs=150, patience=30)
        params = gcn_train(ds, split, cfg)
        ahat = normalized_adjacency(ds.graph, cfg.self_loops)
        preds = predictions_from_probs(gcn_forward(params, ahat, ds.features))
        assert np.mean(preds[split.test] == ds.labels[split.test]) == 1.0

    def test_surrogate_training_separates(self, separable):
        ds, split = separable
        params = surrogate_train(ds, split, TrainConfig(seed=1))
        probs = surrogate_forward(params, normalized_adjacency(ds.graph), ds.features)
        preds = predictions_from_probs(probs)
        assert np.mean(preds[split.test] == ds.labels[split.test]) == 1.0

    def test_loss_descends_from_init(self, separable):
        ds, split = separable
        cfg = TrainConfig(seed=3)
        trained = gcn_train(ds, split, cfg)
        rng = make_rng(cfg.seed, "gcn-train")
        initial = init_params(ds.n_features, cfg.hidden, ds.n_classes, cfg.bias, rng)
        ahat = normalized_adjacency(ds.graph, cfg.self_loops)
        loss0 = cross_entropy(gcn_forward(initial, ahat, ds.features),
                              ds.labels, split.train)
        loss1 = cross_entropy(gcn_forward(trained, ahat, ds.features),
                              ds.labels, split.train)
        assert loss1 <= loss0

    def test_same_seed_bit_identical(self, separable):
        ds, split = separable
        cfg = TrainConfig(seed=5, max_epochs=40, patience=40)
        a = gcn_train(ds, split, cfg)
        b = gcn_train(ds, split, cfg)
        for name in ("W1", "W2", "b1", "b2"):
            assert np.array_equal(getattr(a, name), getattr(b, name)), name

    def test_empty_train_rejected(self, separable):
        ds, split = separable
        bad = type(split)(split.n_nodes, np.empty(0, dtype=np.int64), split.val,
                          np.concatenate([split.train, split.test]),
                          "random", 0.0, 0.1, 0)
        with pytest.raises(ValueError, match="empty train"):
            gcn_train(ds, bad, TrainConfig())


class TestMargin:
    def test_simple_ratio(self):
        assert margin(np.array([0.6, 0.4]), 0) == pytest.approx(math.log(1.5))

    def test_uniform_is_zero(self):
        assert margin(np.ones(4) / 4, 2) == 0.0

    def test_negative_margin(self):
        assert margin(np.array([0.2, 0.5, 0.3]), 0) == pytest.approx(math.log(0.4))

    def test_zero_probability_gives_neg_inf(self):
        assert margin(np.array([0.0, 1.0]), 0) == -math.inf

    def test_invalid_vector_rejected(self):
        with pytest.raises(ValueError):
            margin(np.array([0.9, 0.3]), 0)

    def test_sign_iff_unique_argmax(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = rng.dirichlet(np.ones(4))
            c = int(rng.integers(0, 4))
            m = margin(p, c)
            is_unique_max = p[c] > np.delete(p, c).max()
            assert (m > 0) == is_unique_max

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=5)
        p1 = softmax(z[None, :])[0]
        p2 = softmax(z[None, :] + 13.7)[0]
        assert margin(p1, 2) == pytest.approx(margin(p2, 2), rel=1e-12)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(2)
        probs = rng.dirichlet(np.ones(3), size=8)
        labels = rng.integers(0, 3, size=8)
        vec = margins_from_probs(probs, labels)
        for i in range(8):
            assert vec[i] == pytest.approx(margin(probs[i], labels[i]), rel=1e-12)


class TestF1Macro:
    def test_perfect(self):
        y = np.array([0, 1, 0, 1])
        assert f1_macro(y, y, np.arange(4)) == 1.0

    def test_symmetric_confusion(self):
        # confusion matrix [[2,1],[1,2]]: per-class F1 = 2/3 each
        true = np.array([0, 0, 0, 1, 1, 1])
        pred = np.array([0, 0, 1, 1, 1, 0])
        assert f1_macro(pred, true, np.arange(6)) == pytest.approx(2 / 3)

    def test_degenerate_single_class_prediction(self):
        true = np.array([0, 0, 1, 1])
        pred = np.zeros(4, dtype=int)
        assert f1_macro(pred, true, np.arange(4), n_classes=2) == pytest.approx(1 / 3)

    def test_absent_class_counts_zero(self):
        true = np.array([0, 1])
        pred = np.array([0, 1])
        assert f1_macro(pred, true, np.arange(2), n_classes=4) == pytest.approx(0.5)

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            f1_macro(np.array([0]), np.array([0]), np.array([], dtype=int))


class TestCheckpoints:
    def test_gcn_round_trip(self, tmp_path):
        _, params, _, _ = random_gcn_fixture(5)
        save_checkpoint(params, tmp_path / "m.json")
        back = load_checkpoint(tmp_path / "m.json")
        for name in ("W1", "W2", "b1", "b2"):
            assert np.array_equal(getattr(back, name), getattr(params, name))

    def test_surrogate_round_trip(self, tmp_path):
        w = np.random.default_rng(0).normal(size=(4, 3))
        save_checkpoint(SurrogateParams(W=w), tmp_path / "s.json")
        back = load_checkpoint(tmp_path / "s.json")
        assert np.array_equal(back.W, w)
