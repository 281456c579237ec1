"""Shared fixtures and independent dense oracles used across the suite."""

import numpy as np
import pytest
import scipy.sparse as sp

from stratcover.data import Dataset
from stratcover.graph import Graph


def dense_normalized(adj: np.ndarray, self_loops: bool = False) -> np.ndarray:
    """Independent dense reference for D^{-1/2} A D^{-1/2}."""
    a = adj.astype(float).copy()
    if self_loops:
        a = a + np.eye(a.shape[0])
    d = a.sum(axis=1)
    inv = np.zeros_like(d)
    inv[d > 0] = 1.0 / np.sqrt(d[d > 0])
    return np.outer(inv, inv) * a


def random_edges(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    iu, ju = np.triu_indices(n, k=1)
    hit = rng.random(iu.shape[0]) < p
    return np.column_stack([iu[hit], ju[hit]])


def random_graph(rng: np.random.Generator, n: int, p: float) -> Graph:
    return Graph.from_edges(n, random_edges(rng, n, p))


def random_dataset(rng: np.random.Generator, n: int, p: float, d: int,
                   n_classes: int, feature_p: float = 0.4) -> Dataset:
    """Random graph + random binary features + balanced-ish labels."""
    g = random_graph(rng, n, p)
    x = sp.csr_matrix((rng.random((n, d)) < feature_p).astype(np.float64))
    labels = rng.integers(0, n_classes, size=n)
    # ensure every class appears so per-class operations are well defined
    labels[:n_classes] = np.arange(n_classes)
    return Dataset(graph=g, features=x, labels=labels, n_classes=n_classes,
                   n_features=d, name="random-fixture")


@pytest.fixture
def path3() -> Graph:
    return Graph.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def star5() -> Graph:
    return Graph.from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)])
