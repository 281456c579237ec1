"""Greedy poisoning attack: candidates, filters, surrogate scoring, loop.

The attacker repeatedly picks the single edge flip or feature turn-off that
most reduces the target's margin under the linear two-hop surrogate, subject
to a filter chain (singleton protection, degree-distribution
unnoticeability, and optionally the training-set-preserving filter). The
poisoned model is retrained from scratch to measure the real margin.

Scoring is exact: the target's row of softmax(Ahat^2 X W) is recomputed
under each hypothetical perturbation from the current graph state. A
batched implementation of the same recomputation drives the greedy loop;
``score_perturbation`` is the one-candidate reference with identical
values. No incremental state is carried across steps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .data import Dataset
from .gcn import (GcnParams, SurrogateParams, TrainConfig, SparseOps, gcn_forward,
                  gcn_train, margin, surrogate_train, train_seed_for)
from .graph import Graph, flip_edge, inv_sqrt_degrees, normalized_adjacency
from .selection import (GREEDY_COVER, STRAT_DEGREE, Split, degree_thresholds)
from .seeds import derive_seed

DIRECT = "direct"
INFLUENCER = "influencer"
MODES = (DIRECT, INFLUENCER)

STRUCTURE = "structure"
FEATURES = "features"
BOTH = "both"
SURFACES = (STRUCTURE, FEATURES, BOTH)

ADAPTED_NONE = "none"
ADAPTED = (ADAPTED_NONE, STRAT_DEGREE, GREEDY_COVER)


@dataclass(frozen=True)
class EdgeFlip:
    """Toggle of the undirected edge (u, v); stored with u < v."""

    u: int
    v: int

    def __post_init__(self):
        if self.u >= self.v:
            raise ValueError("EdgeFlip endpoints must satisfy u < v")

    def sort_key(self) -> tuple:
        return (0, self.u, self.v)


@dataclass(frozen=True)
class FeatureOff:
    """Turn off one currently-on binary feature entry."""

    node: int
    feature: int

    def sort_key(self) -> tuple:
        return (1, self.node, self.feature)


Perturbation = EdgeFlip | FeatureOff


@dataclass
class AttackConfig:
    mode: str = DIRECT
    surface: str = STRUCTURE
    budget: int = 50
    adapted: str = ADAPTED_NONE
    unnoticeable: bool = True
    eval_stride: int = 1
    seed: int = 0
    degree_dmin: int = 2
    degree_cutoff: float = 0.004

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.surface not in SURFACES:
            raise ValueError(f"unknown surface {self.surface!r}")
        if self.adapted not in ADAPTED:
            raise ValueError(f"unknown adapted filter {self.adapted!r}")
        if self.budget < 1 or self.eval_stride < 1:
            raise ValueError("budget and eval_stride must be >= 1")


@dataclass
class AttackTrace:
    """Margins of one attacked target, indexed by perturbation count."""

    target: int
    true_class: int
    steps: list[int]
    margins: list[float]
    applied: list[Perturbation]
    surrogate_margins: list[float]
    exhausted: bool
    config: dict = field(default_factory=dict)


def perturbation_to_json(p: Perturbation) -> list:
    if isinstance(p, EdgeFlip):
        return ["edge", p.u, p.v]
    return ["feat", p.node, p.feature]


def perturbation_from_json(item: Sequence) -> Perturbation:
    kind, a, b = item
    if kind == "edge":
        return EdgeFlip(int(a), int(b))
    if kind == "feat":
        return FeatureOff(int(a), int(b))
    raise ValueError(f"unknown perturbation kind {kind!r}")


def write_traces(traces: Sequence[AttackTrace], path: str | Path) -> None:
    """One JSON object per line, one line per trace."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in traces:
            payload = {"target": t.target, "true_class": t.true_class,
                       "steps": t.steps, "margins": t.margins,
                       "surrogate_margins": t.surrogate_margins,
                       "applied": [perturbation_to_json(p) for p in t.applied],
                       "exhausted": t.exhausted, "config": t.config}
            fh.write(json.dumps(payload) + "\n")


def read_traces(path: str | Path) -> list[AttackTrace]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            out.append(AttackTrace(
                target=payload["target"], true_class=payload["true_class"],
                steps=payload["steps"], margins=payload["margins"],
                applied=[perturbation_from_json(p) for p in payload["applied"]],
                surrogate_margins=payload.get("surrogate_margins", []),
                exhausted=payload["exhausted"], config=payload.get("config", {})))
    return out


def select_attackers(g: Graph, target: int, mode: str) -> np.ndarray:
    """Direct: the target itself. Influencer: its clean-graph neighbors."""
    if not 0 <= target < g.n_nodes:
        raise ValueError("target out of range")
    if mode == DIRECT:
        return np.asarray([target], dtype=np.int64)
    if mode == INFLUENCER:
        nbrs = g.neighbors(target)
        if nbrs.size == 0:
            raise ValueError(f"influencer attack on isolated target {target}")
        return nbrs.astype(np.int64)
    raise ValueError(f"unknown mode {mode!r}")


def _on_features_of_row(features, node: int) -> np.ndarray:
    lo, hi = features.indptr[node], features.indptr[node + 1]
    cols = features.indices[lo:hi]
    return np.sort(cols[features.data[lo:hi] != 0])


def _edge_candidate_arrays(g: Graph, attackers: np.ndarray, target: int,
                           mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Canonical (u < v) candidate flips and their current-existence flags."""
    n = g.n_nodes
    blocks = []
    for a in attackers:
        w = np.arange(n, dtype=np.int64)
        drop = w == a
        if mode == INFLUENCER:
            drop |= w == target
        w = w[~drop]
        blocks.append(np.column_stack([np.full(w.shape[0], a, dtype=np.int64), w]))
    pairs = np.vstack(blocks) if blocks else np.empty((0, 2), dtype=np.int64)
    lo = pairs.min(axis=1)
    hi = pairs.max(axis=1)
    uv = np.unique(np.column_stack([lo, hi]), axis=0)
    existing = _edges_exist(g, uv)
    return uv, existing


def _edges_exist(g: Graph, uv: np.ndarray) -> np.ndarray:
    if uv.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    n = g.n_nodes
    edge_keys = np.sort(g.edges() @ np.array([n, 1], dtype=np.int64))
    keys = uv[:, 0] * n + uv[:, 1]
    pos = np.searchsorted(edge_keys, keys)
    ok = pos < edge_keys.shape[0]
    out = np.zeros(uv.shape[0], dtype=bool)
    out[ok] = edge_keys[pos[ok]] == keys[ok]
    return out


def _feature_candidate_arrays(features, attackers: np.ndarray) -> np.ndarray:
    blocks = []
    for a in np.sort(attackers):
        cols = _on_features_of_row(features, int(a))
        if cols.size:
            blocks.append(np.column_stack([np.full(cols.shape[0], a, dtype=np.int64),
                                           cols.astype(np.int64)]))
    return np.vstack(blocks) if blocks else np.empty((0, 2), dtype=np.int64)


def candidate_perturbations(g: Graph, features, attackers: np.ndarray, surface: str,
                            target: int, mode: str = DIRECT) -> list[Perturbation]:
    """All legal atomic perturbations, in the tie-breaking order.

    Edge flips come first (sorted by (u, v)), then feature turn-offs (sorted
    by (node, feature)). Influencer mode never proposes target-incident
    flips.
    """
    attackers = np.asarray(attackers, dtype=np.int64)
    if attackers.size == 0:
        raise ValueError("attacker set is empty")
    out: list[Perturbation] = []
    if surface in (STRUCTURE, BOTH):
        uv, _ = _edge_candidate_arrays(g, attackers, target, mode)
        out.extend(EdgeFlip(int(u), int(v)) for u, v in uv)
    if surface in (FEATURES, BOTH):
        for node, feat in _feature_candidate_arrays(features, attackers):
            out.append(FeatureOff(int(node), int(feat)))
    return out


# ---------------------------------------------------------------------------
# Filters. Array cores operate on (m, 2) edge arrays plus existence flags;
# the public list-based wrappers preserve candidate order.


def _singleton_mask(uv: np.ndarray, existing: np.ndarray,
                    degrees: np.ndarray) -> np.ndarray:
    drop = existing & ((degrees[uv[:, 0]] == 1) | (degrees[uv[:, 1]] == 1))
    return ~drop


def filter_singletons(cands: Sequence[Perturbation], g: Graph) -> list[Perturbation]:
    """Drop edge deletions that would leave an endpoint with degree zero."""
    degrees = g.degrees()
    out = []
    for p in cands:
        if isinstance(p, EdgeFlip) and g.has_edge(p.u, p.v):
            if degrees[p.u] == 1 or degrees[p.v] == 1:
                continue
        out.append(p)
    return out


def _powerlaw_stats(degrees: np.ndarray, d_min: int) -> tuple[float, float, float]:
    """Sufficient statistics (n, sum log d, sum log(d/(d_min-1/2))) for d >= d_min."""
    d = degrees[degrees >= d_min].astype(np.float64)
    if d.size == 0:
        return 0.0, 0.0, 0.0
    logs = np.log(d)
    return float(d.size), float(logs.sum()), float(np.sum(logs - math.log(d_min - 0.5)))


def _powerlaw_ll(n, slog, sratio, d_min: int):
    """Log-likelihood of the fitted power law; 0 by convention when n == 0."""
    n = np.asarray(n, dtype=np.float64)
    slog = np.asarray(slog, dtype=np.float64)
    sratio = np.asarray(sratio, dtype=np.float64)
    safe = np.where(sratio > 0, sratio, 1.0)
    alpha = 1.0 + n / safe
    ll = n * np.log(alpha) + n * alpha * math.log(d_min) - (alpha + 1.0) * slog
    return np.where(n > 0, ll, 0.0)


def degree_ratio_statistic(orig_degrees: np.ndarray, pert_degrees: np.ndarray,
                           d_min: int = 2) -> float:
    """Likelihood-ratio statistic between two degree sequences.

    -2 ll(combined) + 2 (ll(original) + ll(perturbed)) under separately or
    jointly fitted power laws with lower cutoff d_min.
    """
    s_o = _powerlaw_stats(np.asarray(orig_degrees), d_min)
    s_p = _powerlaw_stats(np.asarray(pert_degrees), d_min)
    comb = tuple(a + b for a, b in zip(s_o, s_p))
    ll_o = float(_powerlaw_ll(*s_o, d_min))
    ll_p = float(_powerlaw_ll(*s_p, d_min))
    ll_c = float(_powerlaw_ll(*comb, d_min))
    return -2.0 * ll_c + 2.0 * (ll_o + ll_p)


def _stat_terms(d: np.ndarray, d_min: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    counted = d >= d_min
    logs = np.log(np.maximum(d, 1.0))
    return (counted.astype(np.float64),
            np.where(counted, logs, 0.0),
            np.where(counted, logs - math.log(d_min - 0.5), 0.0))


def _unnoticeable_mask(uv: np.ndarray, existing: np.ndarray, cur_degrees: np.ndarray,
                       orig_stats: tuple[float, float, float], d_min: int,
                       cutoff: float) -> np.ndarray:
    if uv.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    n_c, slog_c, sratio_c = _powerlaw_stats(cur_degrees, d_min)
    sign = np.where(existing, -1.0, 1.0)
    n_p = np.full(uv.shape[0], n_c)
    slog_p = np.full(uv.shape[0], slog_c)
    sratio_p = np.full(uv.shape[0], sratio_c)
    for side in (0, 1):
        old = cur_degrees[uv[:, side]].astype(np.float64)
        new = old + sign
        for d, coeff in ((old, -1.0), (new, +1.0)):
            cnt, slog, sratio = _stat_terms(d, d_min)
            n_p += coeff * cnt
            slog_p += coeff * slog
            sratio_p += coeff * sratio
    ll_p = _powerlaw_ll(n_p, slog_p, sratio_p, d_min)
    ll_o = _powerlaw_ll(*orig_stats, d_min)
    comb = (orig_stats[0] + n_p, orig_stats[1] + slog_p, orig_stats[2] + sratio_p)
    ll_c = _powerlaw_ll(*comb, d_min)
    stat = -2.0 * ll_c + 2.0 * (ll_o + ll_p)
    return stat < cutoff


def unnoticeable_structure(cands: Sequence[Perturbation], g_current: Graph,
                           g_original: Graph, d_min: int = 2,
                           cutoff: float = 0.004,
                           enabled: bool = True) -> list[Perturbation]:
    """Keep flips whose perturbed degree sequence stays power-law-plausible.

    Feature perturbations pass through untouched; with ``enabled`` off the
    filter is the identity.
    """
    if not enabled:
        return list(cands)
    edges = [p for p in cands if isinstance(p, EdgeFlip)]
    if edges:
        uv = np.asarray([[p.u, p.v] for p in edges], dtype=np.int64)
        existing = _edges_exist(g_current, uv)
        orig_stats = _powerlaw_stats(g_original.degrees(), d_min)
        keep = _unnoticeable_mask(uv, existing, g_current.degrees().astype(np.float64),
                                  orig_stats, d_min, cutoff)
        keep_set = {edges[i] for i in np.flatnonzero(keep)}
    else:
        keep_set = set()
    return [p for p in cands
            if not isinstance(p, EdgeFlip) or p in keep_set]


def _training_filter_mask(uv: np.ndarray, existing: np.ndarray, g: Graph,
                          labels: np.ndarray, n_classes: int, split: Split,
                          adapted: str) -> np.ndarray:
    if uv.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    degrees = g.degrees()
    if adapted == STRAT_DEGREE:
        thr = degree_thresholds(degrees, labels, n_classes, split.train_frac)
        old = degrees[uv].astype(np.float64)
        new = old + np.where(existing, -1.0, 1.0)[:, None]
        th = thr[labels[uv]]
        breaks = ((old < th) & (new >= th)) | ((old > th) & (new <= th))
        return ~breaks.any(axis=1)
    if adapted == GREEDY_COVER:
        train_mask = np.zeros(g.n_nodes, dtype=bool)
        train_mask[split.train] = True
        non_train = ~train_mask
        if not train_mask.any() or not non_train.any():
            raise ValueError("greedy-cover filter needs nonempty train and non-train sets")
        rows = np.repeat(np.arange(g.n_nodes, dtype=np.int64), degrees)
        n_out = np.bincount(rows[non_train[g.indices]], minlength=g.n_nodes)
        min_train = n_out[train_mask].min()
        max_non = n_out[non_train].max()
        border_train = train_mask & (n_out <= min_train + 1)
        border_non = non_train & (n_out >= max_non - 1)
        e0, e1 = uv[:, 0], uv[:, 1]
        bad_addition = (~existing) & ((border_train[e0] & non_train[e1])
                                      | (border_train[e1] & non_train[e0]))
        bad_removal = existing & ((border_non[e0] & train_mask[e1])
                                  | (border_non[e1] & train_mask[e0]))
        return ~(bad_addition | bad_removal)
    raise ValueError(f"unsupported adapted filter {adapted!r}")


def filter_training(cands: Sequence[Perturbation], g: Graph, ds: Dataset,
                    split: Split, adapted: str) -> list[Perturbation]:
    """Drop flips that would change which nodes the selector trains on.

    StratDegree: drop flips pushing an endpoint across its class degree
    threshold. GreedyCover: drop additions touching a borderline training
    node and deletions touching a borderline non-training node, as seen
    from the current graph. ``adapted='none'`` is the identity. Feature
    perturbations always pass.
    """
    if adapted == ADAPTED_NONE:
        return list(cands)
    edges = [p for p in cands if isinstance(p, EdgeFlip)]
    if edges:
        uv = np.asarray([[p.u, p.v] for p in edges], dtype=np.int64)
        existing = _edges_exist(g, uv)
        keep = _training_filter_mask(uv, existing, g, ds.labels, ds.n_classes,
                                     split, adapted)
        keep_set = {edges[i] for i in np.flatnonzero(keep)}
    else:
        keep_set = set()
    return [p for p in cands
            if not isinstance(p, EdgeFlip) or p in keep_set]


# ---------------------------------------------------------------------------
# Exact surrogate scoring.


def _modified_neighbors(g: Graph, node: int, flip: tuple[int, int, bool] | None
                        ) -> np.ndarray:
    base = g.neighbors(node)
    if flip is None:
        return base
    u, v, existing = flip
    other = v if node == u else (u if node == v else None)
    if other is None:
        return base
    if existing:
        return base[base != other]
    return np.sort(np.append(base, other))


def score_perturbation(surrogate: SurrogateParams, g: Graph, features,
                       pert: Perturbation, target: int, true_class: int) -> float:
    """Surrogate margin of the target after hypothetically applying ``pert``.

    Recomputes the target's row of softmax(Ahat^2 X W) from scratch under
    the modified graph/features.
    """
    w_mat = surrogate.W
    xw = features @ w_mat
    if hasattr(xw, "toarray"):
        xw = np.asarray(xw.todense())
    xw = np.asarray(xw, dtype=np.float64)
    d = g.degrees().astype(np.float64).copy()
    flip = None
    if isinstance(pert, EdgeFlip):
        existing = g.has_edge(pert.u, pert.v)
        sign = -1.0 if existing else 1.0
        d[pert.u] += sign
        d[pert.v] += sign
        flip = (pert.u, pert.v, existing)
    else:
        lo, hi = features.indptr[pert.node], features.indptr[pert.node + 1]
        cols = features.indices[lo:hi]
        pos = np.searchsorted(cols, pert.feature)
        if pos >= cols.size or cols[pos] != pert.feature or features.data[lo + pos] == 0:
            raise ValueError("FeatureOff must target an entry currently equal to 1")
        xw = xw.copy()
        xw[pert.node] -= w_mat[pert.feature]
    invd = inv_sqrt_degrees(d)
    z = np.zeros(w_mat.shape[1])
    for j in _modified_neighbors(g, target, flip):
        nbrs_j = _modified_neighbors(g, int(j), flip)
        s_j = invd[nbrs_j] @ xw[nbrs_j]
        z += (invd[j] ** 2) * s_j
    z *= invd[target]
    zz = z.copy()
    zz[true_class] = -np.inf
    return float(z[true_class] - zz.max())


class _StepScorer:
    """Batched exact rescoring for one greedy step.

    All inputs are recomputed fresh from the current graph and features;
    nothing persists across steps. Values match score_perturbation.
    """

    def __init__(self, g: Graph, features, w_mat: np.ndarray, target: int,
                 true_class: int):
        self.g = g
        self.target = target
        self.true_class = true_class
        self.d = g.degrees().astype(np.float64)
        self.invd = inv_sqrt_degrees(self.d)
        xw = features @ w_mat
        if hasattr(xw, "toarray"):
            xw = np.asarray(xw.todense())
        self.xw = np.asarray(xw, dtype=np.float64)
        self.w_mat = w_mat
        adj = g.to_scipy()
        self.s = adj @ (self.invd[:, None] * self.xw)
        self.nbrs_t = g.neighbors(target)
        self.in_nt = np.zeros(g.n_nodes, dtype=bool)
        self.in_nt[self.nbrs_t] = True
        wj = self.invd[self.nbrs_t] ** 2
        if self.nbrs_t.size:
            self.gvec = np.asarray((adj[self.nbrs_t].T @ wj)).ravel()
            self.base1 = wj @ self.s[self.nbrs_t]
        else:
            self.gvec = np.zeros(g.n_nodes)
            self.base1 = np.zeros(self.xw.shape[1])
        self.sumsq = float(wj.sum())
        self.z0 = self.invd[target] * self.base1
        # row of Ahat^2 for the target: coefficient of each node's features
        self.at2 = self.invd[target] * self.invd * self.gvec

    def _margins(self, z: np.ndarray) -> np.ndarray:
        zz = z.copy()
        zz[:, self.true_class] = -np.inf
        return z[:, self.true_class] - zz.max(axis=1)

    def current_margin(self) -> float:
        z = self.z0.copy()
        zz = z.copy()
        zz[self.true_class] = -np.inf
        return float(z[self.true_class] - zz.max())

    def score_features(self, pairs: np.ndarray) -> np.ndarray:
        if pairs.shape[0] == 0:
            return np.zeros(0)
        z = self.z0[None, :] - self.at2[pairs[:, 0], None] * self.w_mat[pairs[:, 1]]
        return self._margins(z)

    def score_edges(self, uv: np.ndarray, existing: np.ndarray) -> np.ndarray:
        if uv.shape[0] == 0:
            return np.zeros(0)
        touches = (uv[:, 0] == self.target) | (uv[:, 1] == self.target)
        if touches.all():
            return self._score_edges_direct(uv, existing)
        if not touches.any():
            return self._score_edges_nontarget(uv, existing)
        out = np.zeros(uv.shape[0])
        out[touches] = self._score_edges_direct(uv[touches], existing[touches])
        out[~touches] = self._score_edges_nontarget(uv[~touches], existing[~touches])
        return out

    def _score_edges_nontarget(self, uv: np.ndarray, existing: np.ndarray) -> np.ndarray:
        invd, s, xw = self.invd, self.s, self.xw
        u, v = uv[:, 0], uv[:, 1]
        sign = np.where(existing, -1.0, 1.0)
        ex = existing.astype(np.float64)
        du2 = self.d[u] + sign
        dv2 = self.d[v] + sign
        invdu, invdv = invd[u], invd[v]
        invdu2 = inv_sqrt_degrees(du2)
        invdv2 = inv_sqrt_degrees(dv2)
        in_u = self.in_nt[u].astype(np.float64)
        in_v = self.in_nt[v].astype(np.float64)

        term = (self.base1[None, :]
                - (in_u * invdu ** 2)[:, None] * s[u]
                - (in_v * invdv ** 2)[:, None] * s[v])
        cu = self.gvec[u] - in_v * ex * invdv ** 2
        cv = self.gvec[v] - in_u * ex * invdu ** 2
        term += ((invdu2 - invdu) * cu)[:, None] * xw[u]
        term += ((invdv2 - invdv) * cv)[:, None] * xw[v]
        h_v = np.where(existing, invdv, invdv2)
        h_u = np.where(existing, invdu, invdu2)
        term += (in_u * invdu2 ** 2)[:, None] * (s[u] + (sign * h_v)[:, None] * xw[v])
        term += (in_v * invdv2 ** 2)[:, None] * (s[v] + (sign * h_u)[:, None] * xw[u])
        return self._margins(invd[self.target] * term)

    def _score_edges_direct(self, uv: np.ndarray, existing: np.ndarray) -> np.ndarray:
        invd, s, xw = self.invd, self.s, self.xw
        t = self.target
        w = np.where(uv[:, 0] == t, uv[:, 1], uv[:, 0])
        sign = np.where(existing, -1.0, 1.0)
        dt2 = self.d[t] + sign
        dw2 = self.d[w] + sign
        invdt2 = inv_sqrt_degrees(dt2)
        invdw2 = inv_sqrt_degrees(dw2)
        invdw = invd[w]
        in_w = self.in_nt[w].astype(np.float64)

        term = (self.base1[None, :]
                - (in_w * invdw ** 2)[:, None] * s[w]
                + ((invdt2 - invd[t]) * (self.sumsq - in_w * invdw ** 2))[:, None] * xw[t]
                + ((invdw2 - invdw) * self.gvec[w])[:, None] * xw[w])
        add = (~existing).astype(np.float64)
        term += (add * invdw2 ** 2)[:, None] * (s[w] + invdt2[:, None] * xw[t])
        return self._margins(invdt2[:, None] * term)


def _default_evaluator(ds: Dataset, split: Split,
                       train_cfg: TrainConfig) -> Callable:
    """Retrain the full GCN on poisoned data and return its probabilities."""

    def evaluate(graph: Graph, features, seed: int) -> np.ndarray:
        ahat = normalized_adjacency(graph, train_cfg.self_loops).matrix
        ops = SparseOps(ahat, features)
        params = gcn_train(ds, split, replace(train_cfg, seed=seed), ops=ops)
        return gcn_forward(params, ahat, features)

    return evaluate


def attack_target(ds: Dataset, split: Split, target: int, cfg: AttackConfig,
                  train_cfg: TrainConfig | None = None,
                  surrogate: SurrogateParams | None = None,
                  evaluator: Callable | None = None,
                  clean_probs: np.ndarray | None = None) -> AttackTrace:
    """Greedily poison one target and trace its margin per perturbation.

    The full GCN is retrained from a seed derived from (cfg.seed, target,
    step) every ``eval_stride`` steps and at the end. The trace is truncated
    (and flagged exhausted) if the filter chain leaves no candidates.
    """
    train_cfg = train_cfg or TrainConfig()
    evaluator = evaluator or _default_evaluator(ds, split, train_cfg)
    true_class = int(ds.labels[target])

    if clean_probs is None:
        clean_probs = evaluator(ds.graph, ds.features, train_seed_for(cfg.seed, target, 0))
    clean_margin = margin(clean_probs[target], true_class)
    if not clean_margin > 0:
        raise ValueError(f"target {target} is not correctly classified "
                         f"(margin {clean_margin:.4f})")
    if surrogate is None:
        surrogate = surrogate_train(
            ds, split, replace(train_cfg, seed=derive_seed(cfg.seed, "surrogate")))

    attackers = select_attackers(ds.graph, target, cfg.mode)
    g = ds.graph
    features = ds.features.copy()
    orig_degrees = ds.graph.degrees().astype(np.float64)
    orig_stats = _powerlaw_stats(orig_degrees, cfg.degree_dmin)

    steps = [0]
    margins = [clean_margin]
    surrogate_margins: list[float] = []
    applied: list[Perturbation] = []
    exhausted = False

    for step in range(1, cfg.budget + 1):
        uv = np.empty((0, 2), dtype=np.int64)
        existing = np.zeros(0, dtype=bool)
        feats = np.empty((0, 2), dtype=np.int64)
        if cfg.surface in (STRUCTURE, BOTH):
            uv, existing = _edge_candidate_arrays(g, attackers, target, cfg.mode)
            keep = _singleton_mask(uv, existing, g.degrees())
            if cfg.unnoticeable:
                keep &= _unnoticeable_mask(uv, existing, g.degrees().astype(np.float64),
                                           orig_stats, cfg.degree_dmin, cfg.degree_cutoff)
            if cfg.adapted != ADAPTED_NONE:
                keep &= _training_filter_mask(uv, existing, g, ds.labels,
                                              ds.n_classes, split, cfg.adapted)
            uv, existing = uv[keep], existing[keep]
        if cfg.surface in (FEATURES, BOTH):
            feats = _feature_candidate_arrays(features, attackers)
        if uv.shape[0] == 0 and feats.shape[0] == 0:
            exhausted = True
            break

        scorer = _StepScorer(g, features, surrogate.W, target, true_class)
        edge_scores = scorer.score_edges(uv, existing)
        feat_scores = scorer.score_features(feats)
        scores = np.concatenate([edge_scores, feat_scores])
        best = int(np.argmin(scores))
        if best < uv.shape[0]:
            chosen: Perturbation = EdgeFlip(int(uv[best, 0]), int(uv[best, 1]))
            g = flip_edge(g, chosen.u, chosen.v)
        else:
            node, feat = feats[best - uv.shape[0]]
            chosen = FeatureOff(int(node), int(feat))
            lo = features.indptr[chosen.node]
            hi = features.indptr[chosen.node + 1]
            pos = lo + int(np.searchsorted(features.indices[lo:hi], chosen.feature))
            features.data[pos] = 0.0
        applied.append(chosen)
        surrogate_margins.append(float(scores[best]))

        if step % cfg.eval_stride == 0 or step == cfg.budget:
            probs = evaluator(g, features, train_seed_for(cfg.seed, target, step))
            steps.append(step)
            margins.append(margin(probs[target], true_class))

    if exhausted and applied and steps[-1] != len(applied):
        step = len(applied)
        probs = evaluator(g, features, train_seed_for(cfg.seed, target, step))
        steps.append(step)
        margins.append(margin(probs[target], true_class))

    return AttackTrace(target=target, true_class=true_class, steps=steps,
                       margins=margins, applied=applied,
                       surrogate_margins=surrogate_margins, exhausted=exhausted,
                       config=asdict(cfg))


def replay_perturbations(ds: Dataset, applied: Sequence[Perturbation]
                         ) -> tuple[Graph, sp.csr_matrix]:
    """Apply a recorded perturbation sequence to clean data."""
    g = ds.graph
    features = ds.features.copy()
    for p in applied:
        if isinstance(p, EdgeFlip):
            g = flip_edge(g, p.u, p.v)
        else:
            lo, hi = features.indptr[p.node], features.indptr[p.node + 1]
            pos = lo + int(np.searchsorted(features.indices[lo:hi], p.feature))
            if pos >= hi or features.indices[pos] != p.feature:
                raise ValueError(f"replay: feature ({p.node}, {p.feature}) not present")
            features.data[pos] = 0.0
    return g, features
