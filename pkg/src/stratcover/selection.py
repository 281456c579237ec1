"""Training-set selection: stratified random, StratDegree, and GreedyCover."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .graph import Graph
from .seeds import rng as make_rng

SPLIT_FORMAT_VERSION = 1

RANDOM = "random"
STRAT_DEGREE = "strat-degree"
GREEDY_COVER = "greedy-cover"
METHODS = (RANDOM, STRAT_DEGREE, GREEDY_COVER)


@dataclass
class Split:
    """Disjoint train/validation/test node sets plus selection metadata."""

    n_nodes: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    method: str
    train_frac: float
    val_frac: float
    seed: int
    stratified: bool = True

    def __post_init__(self):
        self.train = np.sort(np.asarray(self.train, dtype=np.int64))
        self.val = np.sort(np.asarray(self.val, dtype=np.int64))
        self.test = np.sort(np.asarray(self.test, dtype=np.int64))
        total = self.train.size + self.val.size + self.test.size
        combined = np.concatenate([self.train, self.val, self.test])
        if total != self.n_nodes or np.unique(combined).size != total:
            raise ValueError("train/val/test must partition the node set")

    def masks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        out = []
        for part in (self.train, self.val, self.test):
            mask = np.zeros(self.n_nodes, dtype=bool)
            mask[part] = True
            out.append(mask)
        return tuple(out)

    def to_dict(self) -> dict:
        return {
            "format_version": SPLIT_FORMAT_VERSION,
            "n_nodes": self.n_nodes,
            "method": self.method,
            "train_frac": self.train_frac,
            "val_frac": self.val_frac,
            "seed": self.seed,
            "stratified": self.stratified,
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Split":
        return cls(n_nodes=payload["n_nodes"], train=payload["train"],
                   val=payload["val"], test=payload["test"],
                   method=payload["method"], train_frac=payload["train_frac"],
                   val_frac=payload["val_frac"], seed=payload["seed"],
                   stratified=payload.get("stratified", True))


def save_split(split: Split, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.to_dict(), fh)
        fh.write("\n")


def load_split(path: str | Path) -> Split:
    with open(path, "r", encoding="utf-8") as fh:
        return Split.from_dict(json.load(fh))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _check_fracs(train_frac: float, val_frac: float) -> None:
    if train_frac < 0 or val_frac < 0 or train_frac + val_frac >= 1.0:
        raise ValueError("need train_frac + val_frac < 1")


def _fill_val_test(ds: Dataset, taken: np.ndarray, val_frac: float,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Stratified random val/test assignment of the nodes not in ``taken``.

    Per class the validation share is round-half-up(val_frac * class size),
    capped by what the training selection left over.
    """
    taken_mask = np.zeros(ds.graph.n_nodes, dtype=bool)
    taken_mask[taken] = True
    val_parts, test_parts = [], []
    for c in range(ds.n_classes):
        members = ds.class_members(c)
        remaining = members[~taken_mask[members]]
        n_val = min(round_half_up(val_frac * members.size), remaining.size)
        perm = rng.permutation(remaining)
        val_parts.append(perm[:n_val])
        test_parts.append(perm[n_val:])
    return np.concatenate(val_parts), np.concatenate(test_parts)


def random_split(ds: Dataset, train_frac: float, val_frac: float, seed: int,
                 stratified: bool = True) -> Split:
    """Uniform random split, optionally stratified by class."""
    _check_fracs(train_frac, val_frac)
    rng = make_rng(seed, "random-split")
    if stratified:
        train_parts, val_parts, test_parts = [], [], []
        for c in range(ds.n_classes):
            members = ds.class_members(c)
            n_tr = round_half_up(train_frac * members.size)
            n_val = min(round_half_up(val_frac * members.size), members.size - n_tr)
            perm = rng.permutation(members)
            train_parts.append(perm[:n_tr])
            val_parts.append(perm[n_tr:n_tr + n_val])
            test_parts.append(perm[n_tr + n_val:])
        train = np.concatenate(train_parts)
        val = np.concatenate(val_parts)
        test = np.concatenate(test_parts)
    else:
        n = ds.graph.n_nodes
        n_tr = round_half_up(train_frac * n)
        n_val = min(round_half_up(val_frac * n), n - n_tr)
        perm = rng.permutation(n)
        train, val, test = perm[:n_tr], perm[n_tr:n_tr + n_val], perm[n_tr + n_val:]
    return Split(ds.graph.n_nodes, train, val, test, RANDOM, train_frac,
                 val_frac, seed, stratified)


def strat_degree(ds: Dataset, train_frac: float, val_frac: float, seed: int) -> Split:
    """Per class, train on the top train_frac fraction by degree.

    Degree ties at the boundary go to the lower node index. The remainder is
    split stratified-randomly into validation and test.
    """
    _check_fracs(train_frac, val_frac)
    rng = make_rng(seed, "strat-degree")
    degrees = ds.graph.degrees()
    train_parts = []
    for c in range(ds.n_classes):
        members = ds.class_members(c)
        n_tr = round_half_up(train_frac * members.size)
        order = np.lexsort((members, -degrees[members]))
        train_parts.append(members[order[:n_tr]])
    train = np.concatenate(train_parts)
    val, test = _fill_val_test(ds, train, val_frac, rng)
    return Split(ds.graph.n_nodes, train, val, test, STRAT_DEGREE,
                 train_frac, val_frac, seed)


def _cover_counts(g: Graph, marks: np.ndarray, k: int) -> np.ndarray:
    """For every node, how many of its neighbors carry mark k."""
    rows = np.repeat(np.arange(g.n_nodes, dtype=np.int64), g.degrees())
    hit = marks[g.indices] == k
    return np.bincount(rows[hit], minlength=g.n_nodes)


def greedy_cover_nodes_naive(g: Graph, n_train: int) -> np.ndarray:
    """Reference greedy cover: full recount of candidate scores per pick."""
    n = g.n_nodes
    marks = np.zeros(n, dtype=np.int64)
    in_train = np.zeros(n, dtype=bool)
    chosen: list[int] = []
    k = 0
    max_degree = int(g.degrees().max(initial=0))
    while len(chosen) < n_train:
        counts = _cover_counts(g, marks, k)
        counts[in_train] = -1
        v = int(np.argmax(counts))
        if counts[v] <= 0:
            k += 1
            if k > max_degree:
                for u in range(n):  # deterministic completion on pathological inputs
                    if not in_train[u]:
                        chosen.append(u)
                        in_train[u] = True
                        if len(chosen) >= n_train:
                            break
                break
            continue
        chosen.append(v)
        in_train[v] = True
        marks[v] = -1
        for nbr in g.neighbors(v):
            if not in_train[nbr]:
                marks[nbr] += 1
    return np.asarray(sorted(chosen), dtype=np.int64)


def greedy_cover_nodes(g: Graph, n_train: int) -> np.ndarray:
    """Greedy cover with a lazy max-heap over candidate scores.

    Produces exactly the same training set as the naive recount, including
    the lowest-index tie rule (heap entries order by (-count, node)).
    """
    n = g.n_nodes
    marks = np.zeros(n, dtype=np.int64)
    in_train = np.zeros(n, dtype=bool)
    chosen: list[int] = []
    k = 0
    max_degree = int(g.degrees().max(initial=0))

    counts = _cover_counts(g, marks, k).astype(np.int64)
    heap = [(-counts[u], u) for u in range(n)]
    heapq.heapify(heap)

    def bump(node: int, delta: int) -> None:
        if not in_train[node]:
            counts[node] += delta
            heapq.heappush(heap, (-counts[node], node))

    def fill_rest() -> None:
        for u in range(n):
            if not in_train[u]:
                chosen.append(u)
                in_train[u] = True
                if len(chosen) >= n_train:
                    return

    while len(chosen) < n_train:
        while heap and (in_train[heap[0][1]] or -heap[0][0] != counts[heap[0][1]]):
            heapq.heappop(heap)
        if not heap:
            heap = [(-counts[u], u) for u in range(n) if not in_train[u]]
            heapq.heapify(heap)
            if not heap:
                break
        negc, v = heap[0]
        if -negc <= 0:
            k += 1
            if k > max_degree:
                fill_rest()
                break
            counts = _cover_counts(g, marks, k).astype(np.int64)
            heap = [(-counts[u], u) for u in range(n) if not in_train[u]]
            heapq.heapify(heap)
            continue
        heapq.heappop(heap)
        chosen.append(v)
        in_train[v] = True
        old_mark = marks[v]
        marks[v] = -1
        if old_mark == k:
            for x in g.neighbors(v):
                bump(x, -1)
        for nbr in g.neighbors(v):
            if in_train[nbr]:
                continue
            old = marks[nbr]
            marks[nbr] = old + 1
            if old == k:
                for x in g.neighbors(nbr):
                    bump(x, -1)
            elif old + 1 == k:
                for x in g.neighbors(nbr):
                    bump(x, +1)
    return np.asarray(sorted(chosen), dtype=np.int64)


def greedy_cover(ds: Dataset, train_frac: float, val_frac: float, seed: int,
                 accelerated: bool = True) -> Split:
    """GreedyCover training selection; remainder split stratified-randomly.

    Training selection is deterministic (no class stratification); it stops
    at ceil(train_frac * N) members.
    """
    _check_fracs(train_frac, val_frac)
    rng = make_rng(seed, "greedy-cover")
    n_train = math.ceil(train_frac * ds.graph.n_nodes)
    pick = greedy_cover_nodes if accelerated else greedy_cover_nodes_naive
    train = pick(ds.graph, n_train)
    val, test = _fill_val_test(ds, train, val_frac, rng)
    return Split(ds.graph.n_nodes, train, val, test, GREEDY_COVER,
                 train_frac, val_frac, seed)


def degree_thresholds(degrees: np.ndarray, labels: np.ndarray, n_classes: int,
                      train_frac: float) -> np.ndarray:
    """Per-class degree value at the training cut.

    For class c the threshold is the ascending-sorted class degree sequence
    at index floor(|class c| * (1 - train_frac)).
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie in (0, 1)")
    out = np.zeros(n_classes, dtype=np.float64)
    for c in range(n_classes):
        class_degrees = np.sort(degrees[labels == c])
        if class_degrees.size == 0:
            raise ValueError(f"class {c} is empty")
        out[c] = class_degrees[int(math.floor(class_degrees.size * (1.0 - train_frac)))]
    return out


def per_class_degree_thresholds(ds: Dataset, train_frac: float) -> np.ndarray:
    return degree_thresholds(ds.graph.degrees(), ds.labels, ds.n_classes, train_frac)


def make_split(ds: Dataset, method: str, train_frac: float, val_frac: float,
               seed: int, stratified: bool = True) -> Split:
    """Dispatch by method name (see ``METHODS``)."""
    if method == RANDOM:
        return random_split(ds, train_frac, val_frac, seed, stratified)
    if method == STRAT_DEGREE:
        return strat_degree(ds, train_frac, val_frac, seed)
    if method == GREEDY_COVER:
        return greedy_cover(ds, train_frac, val_frac, seed)
    raise ValueError(f"unknown selection method {method!r}")
