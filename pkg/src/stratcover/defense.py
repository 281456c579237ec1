"""Published defenses: zero-overlap edge removal and low-rank approximation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .gcn import GcnParams, relu, softmax
from .graph import Graph
from .seeds import rng as make_rng

FACTORS_FORMAT_VERSION = 1


def remove_dissimilar_edges(g: Graph, features) -> Graph:
    """Drop every edge whose endpoints share no common attribute.

    Keeps an edge (u, v) iff <X_u, X_v> > 0. Idempotent; never adds edges.
    """
    edges = g.edges()
    if edges.shape[0] == 0:
        return g
    x = sp.csr_matrix(features)
    overlap = np.asarray(x[edges[:, 0]].multiply(x[edges[:, 1]]).sum(axis=1)).ravel()
    return Graph.from_edges(g.n_nodes, edges[overlap > 0])


@dataclass
class LowRankFactors:
    """Top-r singular triplets of a source matrix (S descending)."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.U @ (self.S[:, None] * self.V.T)


def _orth(m: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(m)
    return q


def truncated_svd(matrix, rank: int, oversample: int = 8, power_iters: int = 4,
                  seed: int = 0, tol: float = 1e-12,
                  max_sweeps: int = 200) -> LowRankFactors:
    """Randomized subspace iteration for the top-``rank`` singular triplets.

    Runs at least ``power_iters`` sweeps and continues until the leading
    singular values stabilize to ``tol`` (relative), so small dense-oracle
    tolerances hold even on slowly decaying spectra.
    """
    n_rows, n_cols = matrix.shape
    if rank < 1 or rank > min(n_rows, n_cols):
        raise ValueError(f"rank must lie in [1, {min(n_rows, n_cols)}]")
    k = min(rank + oversample, min(n_rows, n_cols))
    rng = make_rng(seed, "truncated-svd")
    q = _orth(matrix @ rng.standard_normal((n_cols, k)))
    prev = None
    ub = s = vt = None
    for sweep in range(max_sweeps):
        q = _orth(matrix.T @ q)
        q = _orth(matrix @ q)
        b = (matrix.T @ q).T
        ub, s, vt = np.linalg.svd(np.asarray(b), full_matrices=False)
        head = s[:rank]
        if sweep + 1 >= power_iters and prev is not None:
            scale = max(float(s[0]), np.finfo(float).tiny)
            if np.all(np.abs(head - prev) <= tol * scale):
                break
        prev = head.copy()
    return LowRankFactors(U=q @ ub[:, :rank], S=s[:rank].copy(), V=vt[:rank].T.copy())


def low_rank_gcn_forward(params: GcnParams, a_factors: LowRankFactors,
                         x_factors: LowRankFactors) -> np.ndarray:
    """GCN forward with Ahat and X replaced by their rank-r reconstructions.

    Evaluates in factored order U (SV^T (X_U (X_SV^T W))) for both layers;
    the dense reconstructions are never materialized.
    """
    if a_factors.shape[0] != x_factors.shape[0]:
        raise ValueError("factor row dimensions disagree")
    if x_factors.shape[1] != params.W1.shape[0]:
        raise ValueError("feature factors do not match W1")
    a_svt = a_factors.S[:, None] * a_factors.V.T
    x_svt = x_factors.S[:, None] * x_factors.V.T
    z1 = a_factors.U @ (a_svt @ (x_factors.U @ (x_svt @ params.W1)))
    if params.b1 is not None:
        z1 = z1 + params.b1
    z2 = a_factors.U @ (a_svt @ (relu(z1) @ params.W2))
    if params.b2 is not None:
        z2 = z2 + params.b2
    return softmax(z2)


class LowRankOps:
    """Factored propagation/feature products for training under the defense.

    Feature dropout is disabled on this path; hidden-layer dropout still
    applies in the trainer.
    """

    feature_dropout = False

    def __init__(self, a_factors: LowRankFactors, x_factors: LowRankFactors):
        self.a = a_factors
        self.x = x_factors
        self.n_nodes = a_factors.shape[0]
        self.n_features = x_factors.shape[1]
        self._a_svt = a_factors.S[:, None] * a_factors.V.T
        self._a_vs = a_factors.V * a_factors.S
        self._x_svt = x_factors.S[:, None] * x_factors.V.T

    def prop(self, m: np.ndarray) -> np.ndarray:
        return self.a.U @ (self._a_svt @ m)

    def prop_t(self, m: np.ndarray) -> np.ndarray:
        return self._a_vs @ (self.a.U.T @ m)

    def feat(self, w: np.ndarray) -> np.ndarray:
        return self.x.U @ (self._x_svt @ w)

    def feat_t(self, g: np.ndarray) -> np.ndarray:
        return self._x_svt.T @ (self.x.U.T @ g)


def low_rank_ops(a_factors: LowRankFactors, x_factors: LowRankFactors) -> LowRankOps:
    return LowRankOps(a_factors, x_factors)


def save_factors(factors: LowRankFactors, path: str | Path) -> None:
    payload = {"format_version": FACTORS_FORMAT_VERSION, "kind": "lowrank",
               "shape": list(factors.shape), "rank": factors.rank,
               "U": factors.U.ravel().tolist(), "S": factors.S.tolist(),
               "V": factors.V.ravel().tolist()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_factors(path: str | Path) -> LowRankFactors:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != FACTORS_FORMAT_VERSION:
        raise ValueError("unsupported factors version")
    rank = payload["rank"]
    n, m = payload["shape"]
    return LowRankFactors(U=np.asarray(payload["U"]).reshape(n, rank),
                          S=np.asarray(payload["S"]),
                          V=np.asarray(payload["V"]).reshape(m, rank))
