"""Sparse undirected graph primitives shared by every pipeline stage."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp


class Graph:
    """Immutable undirected graph in compressed sparse row form.

    Neighbor iteration is O(deg), edge lookup is O(log deg). Instances never
    store self-loops or duplicate edges, every edge is present in both
    directions, and all arrays are frozen, so values are safe to share
    across threads.
    """

    __slots__ = ("n_nodes", "indptr", "indices", "_degrees")

    def __init__(self, n_nodes: int, indptr: np.ndarray, indices: np.ndarray):
        self.n_nodes = int(n_nodes)
        self.indptr = indptr
        self.indices = indices
        self._degrees = np.diff(indptr)
        for arr in (self.indptr, self.indices, self._degrees):
            arr.setflags(write=False)

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Iterable[tuple[int, int]] | np.ndarray) -> "Graph":
        """Build a graph from an edge list.

        The input is symmetrized, duplicate edges are merged and self-loops
        are dropped. Node indices must lie in [0, n_nodes).
        """
        if n_nodes < 0:
            raise ValueError("n_nodes must be nonnegative")
        arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                         dtype=np.int64).reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr.max() >= n_nodes):
            raise ValueError(f"edge endpoint out of range [0, {n_nodes})")
        arr = arr[arr[:, 0] != arr[:, 1]]
        if arr.size:
            both = np.unique(np.vstack([arr, arr[:, ::-1]]), axis=0)
            u, v = both[:, 0], both[:, 1]
        else:
            u = v = np.empty(0, dtype=np.int64)
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(u, minlength=n_nodes), out=indptr[1:])
        return cls(n_nodes, indptr, v.copy())

    @classmethod
    def empty(cls, n_nodes: int) -> "Graph":
        return cls.from_edges(n_nodes, np.empty((0, 2), dtype=np.int64))

    @property
    def n_edges(self) -> int:
        return self.indices.shape[0] // 2

    def degrees(self) -> np.ndarray:
        return self._degrees

    def neighbors(self, u: int) -> np.ndarray:
        """Sorted neighbor indices of ``u`` (read-only view)."""
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors(u)
        pos = np.searchsorted(row, v)
        return pos < row.shape[0] and row[pos] == v

    def edges(self) -> np.ndarray:
        """All edges as an (m, 2) array with u < v, lexicographically sorted."""
        rows = np.repeat(np.arange(self.n_nodes, dtype=np.int64), self._degrees)
        keep = rows < self.indices
        return np.column_stack([rows[keep], self.indices[keep]])

    def to_scipy(self) -> sp.csr_matrix:
        """Adjacency as a scipy CSR matrix with unit float64 entries."""
        data = np.ones(self.indices.shape[0], dtype=np.float64)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()),
                             shape=(self.n_nodes, self.n_nodes))

    def __eq__(self, other) -> bool:
        return (isinstance(other, Graph)
                and self.n_nodes == other.n_nodes
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __hash__(self):  # identity hash; equality is structural but rare
        return id(self)

    def __repr__(self) -> str:
        return f"Graph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetrically normalized adjacency D^{-1/2} A D^{-1/2}.

    ``self_loops`` records whether A was augmented with the identity before
    normalization. Rows and columns of zero-degree nodes are all-zero.
    """

    matrix: sp.csr_matrix
    self_loops: bool


def degree_vector(g: Graph) -> np.ndarray:
    """Per-node integer degrees."""
    return g.degrees()


def inv_sqrt_degrees(degrees: np.ndarray) -> np.ndarray:
    """1/sqrt(d) with the zero-degree convention 1/sqrt(0) := 0."""
    d = np.asarray(degrees, dtype=np.float64)
    out = np.zeros_like(d)
    np.divide(1.0, np.sqrt(d, where=d > 0, out=np.ones_like(d)), out=out, where=d > 0)
    return out


def normalized_adjacency(g: Graph, self_loops: bool = False) -> NormalizedAdjacency:
    """Normalize the adjacency of ``g``; optionally add self-loops first."""
    a = g.to_scipy()
    if self_loops:
        a = (a + sp.identity(g.n_nodes, format="csr", dtype=np.float64)).tocsr()
    a.sort_indices()
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = inv_sqrt_degrees(deg)
    rows = np.repeat(np.arange(g.n_nodes), np.diff(a.indptr))
    a.data *= inv[rows] * inv[a.indices]
    return NormalizedAdjacency(matrix=a, self_loops=self_loops)


def flip_edge(g: Graph, u: int, v: int) -> Graph:
    """Return a copy of ``g`` with edge (u, v) toggled; ``g`` is unchanged."""
    if u == v:
        raise ValueError("self-loops are not allowed")
    if not (0 <= u < g.n_nodes and 0 <= v < g.n_nodes):
        raise ValueError("node index out of range")
    lo, hi = (u, v) if u < v else (v, u)
    edges = g.edges()
    if g.has_edge(lo, hi):
        keep = ~((edges[:, 0] == lo) & (edges[:, 1] == hi))
        edges = edges[keep]
    else:
        edges = np.vstack([edges, [[lo, hi]]])
    return Graph.from_edges(g.n_nodes, edges)


def avg_training_neighbors(g: Graph, train: Iterable[int] | np.ndarray) -> float:
    """Average number of training neighbors per non-training node.

    Computes (1/|V \\ T|) * sum_{i in T} sum_{j not in T} a_ij.
    """
    mask = np.zeros(g.n_nodes, dtype=bool)
    mask[np.asarray(list(train) if not isinstance(train, np.ndarray) else train,
                    dtype=np.int64)] = True
    n_out = g.n_nodes - int(mask.sum())
    if n_out == 0:
        raise ValueError("training set must not contain every node")
    rows = np.repeat(np.arange(g.n_nodes, dtype=np.int64), g.degrees())
    cross = int(np.count_nonzero(mask[rows] & ~mask[g.indices]))
    return cross / n_out
