"""Dataset loading, the stochastic blockmodel generator, and results I/O.

On-disk dataset layout (one directory per dataset):
    graph.tsv     one edge per line, "u<TAB>v", 0-based node indices
    features.tsv  "node<TAB>feature" for every 1-entry of the binary matrix
    labels.tsv    "node<TAB>class" for every node, classes in [0, C)
    meta.json     {"n_nodes": N, "n_features": d, "n_classes": C, "name": ...}

If features.tsv is absent the dataset gets an N x 1 all-ones feature matrix
(attribute-free graphs are run through the same pipeline that way).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .graph import Graph
from .seeds import seed_sequence


class DataFormatError(ValueError):
    """Malformed dataset file; message carries file and line context."""


@dataclass
class Dataset:
    """A graph plus binary node features and per-node class labels."""

    graph: Graph
    features: sp.csr_matrix
    labels: np.ndarray
    n_classes: int
    n_features: int
    name: str = ""

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape[0] != self.graph.n_nodes:
            raise ValueError("every node needs a label")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label out of range")
        self.features = sp.csr_matrix(self.features, dtype=np.float64, copy=True)
        self.features.eliminate_zeros()
        if self.features.nnz and not np.all(self.features.data == 1.0):
            raise ValueError("features must be binary")
        if self.features.shape != (self.graph.n_nodes, self.n_features):
            raise ValueError("feature matrix shape mismatch")

    def class_members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)


@dataclass(frozen=True)
class SbmConfig:
    """Stochastic blockmodel parameters.

    Within-block edge probability is inprob + y and between-block
    probability is y, where y = 0.004 - 0.2 * inprob unless ``outprob``
    overrides it. For class c, features [c*k, (c+1)*k) with
    k = per_class_feature_count are on with probability
    ``p_feature_on_class`` and all others with ``p_feature_off_class``.
    """

    block_sizes: tuple[int, ...] = (400, 400, 400, 400, 400)
    inprob: float = 0.0125
    n_features: int = 50
    per_class_feature_count: int = 10
    p_feature_on_class: float = 0.35
    p_feature_off_class: float = 0.1
    seed: int = 0
    outprob: float | None = None

    @property
    def n_classes(self) -> int:
        return len(self.block_sizes)

    @property
    def between_prob(self) -> float:
        return self.outprob if self.outprob is not None else 0.004 - 0.2 * self.inprob

    @property
    def within_prob(self) -> float:
        return self.inprob + self.between_prob

    def validate(self) -> None:
        y = self.between_prob
        if y < 0:
            raise ValueError(f"between-block probability {y} is negative")
        if not 0.0 <= self.within_prob <= 1.0:
            raise ValueError(f"within-block probability {self.within_prob} outside [0, 1]")
        for p in (self.p_feature_on_class, self.p_feature_off_class):
            if not 0.0 <= p <= 1.0:
                raise ValueError("feature probabilities must lie in [0, 1]")
        if len(self.block_sizes) < 2 or min(self.block_sizes) < 1:
            raise ValueError("need at least two nonempty blocks")
        if self.n_classes * self.per_class_feature_count > self.n_features:
            raise ValueError("per-class feature ranges exceed n_features")


def generate_sbm(cfg: SbmConfig) -> Dataset:
    """Draw a blockmodel dataset; bit-identical for equal configs."""
    cfg.validate()
    sizes = np.asarray(cfg.block_sizes, dtype=np.int64)
    n = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    edge_ss, feat_ss = seed_sequence(cfg.seed, "sbm").spawn(2)
    edge_rng = np.random.Generator(np.random.PCG64(edge_ss))
    feat_rng = np.random.Generator(np.random.PCG64(feat_ss))

    p_in, p_out = cfg.within_prob, cfg.between_prob
    chunks = []
    for i in range(len(sizes)):
        for j in range(i, len(sizes)):
            if i == j:
                iu, ju = np.triu_indices(sizes[i], k=1)
                hit = edge_rng.random(iu.shape[0]) < p_in
                if hit.any():
                    chunks.append(np.column_stack([iu[hit] + offsets[i],
                                                   ju[hit] + offsets[i]]))
            else:
                hit = edge_rng.random((sizes[i], sizes[j])) < p_out
                iu, ju = np.nonzero(hit)
                if iu.size:
                    chunks.append(np.column_stack([iu + offsets[i], ju + offsets[j]]))
    edges = np.vstack(chunks) if chunks else np.empty((0, 2), dtype=np.int64)

    k = cfg.per_class_feature_count
    pmat = np.full((n, cfg.n_features), cfg.p_feature_off_class)
    for c, size in enumerate(sizes):
        pmat[offsets[c]:offsets[c + 1], c * k:(c + 1) * k] = cfg.p_feature_on_class
    features = sp.csr_matrix((feat_rng.random((n, cfg.n_features)) < pmat).astype(np.float64))

    labels = np.repeat(np.arange(len(sizes), dtype=np.int64), sizes)
    name = f"sbm-in{cfg.inprob:g}-seed{cfg.seed}"
    return Dataset(graph=Graph.from_edges(n, edges), features=features, labels=labels,
                   n_classes=len(sizes), n_features=cfg.n_features, name=name)


def _read_pairs(path: Path, n_left: int, n_right: int, what: str) -> np.ndarray:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected two tab-separated fields")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-integer field") from exc
            if not 0 <= a < n_left:
                raise DataFormatError(f"{path}:{lineno}: {what} index {a} out of range")
            if not 0 <= b < n_right:
                raise DataFormatError(f"{path}:{lineno}: value {b} out of range")
            pairs.append((a, b))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def load_dataset(directory: str | Path) -> Dataset:
    """Load a dataset directory; see the module docstring for the layout."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise DataFormatError(f"{meta_path}: missing file")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    try:
        n = int(meta["n_nodes"])
        d = int(meta["n_features"])
        c = int(meta["n_classes"])
    except KeyError as exc:
        raise DataFormatError(f"{meta_path}: missing key {exc}") from exc
    name = str(meta.get("name", directory.name))

    graph_path = directory / "graph.tsv"
    if not graph_path.exists():
        raise DataFormatError(f"{graph_path}: missing file")
    edges = _read_pairs(graph_path, n, n, "node")
    graph = Graph.from_edges(n, edges)

    feat_path = directory / "features.tsv"
    if feat_path.exists():
        pairs = _read_pairs(feat_path, n, d, "node")
        features = sp.csr_matrix(
            (np.ones(pairs.shape[0]), (pairs[:, 0], pairs[:, 1])), shape=(n, d))
        features.sum_duplicates()
        features.data[:] = 1.0
    else:
        d = 1
        features = sp.csr_matrix(np.ones((n, 1)))

    label_path = directory / "labels.tsv"
    if not label_path.exists():
        raise DataFormatError(f"{label_path}: missing file")
    pairs = _read_pairs(label_path, n, c, "node")
    labels = np.full(n, -1, dtype=np.int64)
    labels[pairs[:, 0]] = pairs[:, 1]
    if np.any(labels < 0):
        missing = int(np.flatnonzero(labels < 0)[0])
        raise DataFormatError(f"{label_path}: node {missing} has no label")

    return Dataset(graph=graph, features=features, labels=labels,
                   n_classes=c, n_features=d, name=name)


def save_dataset(ds: Dataset, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "graph.tsv", "w", encoding="utf-8") as fh:
        for u, v in ds.graph.edges():
            fh.write(f"{u}\t{v}\n")
    coo = ds.features.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(directory / "features.tsv", "w", encoding="utf-8") as fh:
        for u, f in zip(coo.row[order], coo.col[order]):
            fh.write(f"{u}\t{f}\n")
    with open(directory / "labels.tsv", "w", encoding="utf-8") as fh:
        for u, lab in enumerate(ds.labels):
            fh.write(f"{u}\t{lab}\n")
    meta = {"n_nodes": ds.graph.n_nodes, "n_features": ds.n_features,
            "n_classes": ds.n_classes, "name": ds.name}
    with open(directory / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


# Results tables. Margin rows track quantile curves per trial; budget rows
# aggregate required budgets across trials; metric rows carry per-trial
# clean-model statistics.
MARGIN_COLUMNS = ("trial", "method", "surface", "mode", "quantile", "perturbations", "margin")
BUDGET_COLUMNS = ("method", "success_prob", "budget_mean", "budget_stderr")
METRIC_COLUMNS = ("trial", "method", "avg_training_neighbors", "macro_f1")


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _parse_cell(text: str):
    if text == "":
        return float("nan")
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_results(rows: Sequence[dict], path: str | Path,
                  columns: Sequence[str]) -> None:
    """Write a results table; NaN cells become empty fields."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_format_cell(row[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def read_results(path: str | Path) -> list[dict]:
    """Read a results table back; empty fields become NaN."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataFormatError(f"{path}: empty results file")
            return [dict(zip(header, map(_parse_cell, row))) for row in reader]
    except OSError as exc:
        raise OSError(f"cannot read results from {path}: {exc}") from exc


def separable_fixture(n_per_class: int = 20, seed: int = 0) -> SbmConfig:
    """Linearly separable two-block toy: dense blocks, indicator features."""
    return SbmConfig(block_sizes=(n_per_class, n_per_class), inprob=0.49,
                     outprob=0.01, n_features=2, per_class_feature_count=1,
                     p_feature_on_class=1.0, p_feature_off_class=0.0, seed=seed)
