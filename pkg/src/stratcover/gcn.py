"""One-hidden-layer graph convolutional classifier and its linear surrogate.

Everything is plain numpy/scipy in double precision: forward passes,
analytic backpropagation (checked against finite differences in the test
suite), adaptive-moment updates, and early stopping on validation loss.
Training is bit-deterministic per seed, including dropout masks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import Dataset
from .graph import NormalizedAdjacency, normalized_adjacency
from .selection import Split
from .seeds import rng as make_rng

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    """Hyperparameters for both the GCN and the surrogate trainer."""

    hidden: int = 16
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 200
    patience: int = 30
    dropout: float = 0.5
    bias: bool = True
    self_loops: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_epochs < 1 or self.hidden < 1:
            raise ValueError("learning_rate, max_epochs and hidden must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")


@dataclass
class GcnParams:
    """Weights of the two-layer GCN; biases are None when disabled."""

    W1: np.ndarray
    W2: np.ndarray
    b1: np.ndarray | None = None
    b2: np.ndarray | None = None

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    def copy(self) -> "GcnParams":
        return GcnParams(self.W1.copy(), self.W2.copy(),
                         None if self.b1 is None else self.b1.copy(),
                         None if self.b2 is None else self.b2.copy())

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {"W1": self.W1, "W2": self.W2}
        if self.b1 is not None:
            out["b1"] = self.b1
        if self.b2 is not None:
            out["b2"] = self.b2
        return out


@dataclass
class SurrogateParams:
    """Linear two-hop surrogate weight matrix (features x classes)."""

    W: np.ndarray

    def copy(self) -> "SurrogateParams":
        return SurrogateParams(self.W.copy())


class SparseOps:
    """Propagation and feature products backed by sparse matrices.

    The low-rank defense swaps in a factored implementation with the same
    surface (see defense.low_rank_ops).
    """

    feature_dropout = True

    def __init__(self, ahat: sp.csr_matrix, features: sp.csr_matrix):
        self.ahat = ahat
        self.features = features
        self.n_nodes, self.n_features = features.shape

    def prop(self, m: np.ndarray) -> np.ndarray:
        return self.ahat @ m

    # ahat is exactly symmetric, so the transpose product is the same.
    prop_t = prop

    def feat(self, w: np.ndarray) -> np.ndarray:
        return self.features @ w

    def feat_t(self, g: np.ndarray) -> np.ndarray:
        return self.features.T @ g

    def dropped(self, rng: np.random.Generator, p: float) -> "SparseOps":
        """Copy with inverted dropout applied to the nonzero feature entries."""
        dropped = self.features.copy()
        keep = rng.random(dropped.nnz) >= p
        dropped.data = dropped.data * keep / (1.0 - p)
        clone = SparseOps(self.ahat, dropped)
        return clone


def _as_matrix(ahat: NormalizedAdjacency | sp.spmatrix) -> sp.csr_matrix:
    if isinstance(ahat, NormalizedAdjacency):
        return ahat.matrix
    return sp.csr_matrix(ahat)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting the row maximum."""
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def gcn_forward(params: GcnParams, ahat, features) -> np.ndarray:
    """Class probabilities softmax(Ahat relu(Ahat X W1) W2); dropout is off."""
    a = _as_matrix(ahat)
    z1 = a @ (features @ params.W1)
    if params.b1 is not None:
        z1 = z1 + params.b1
    z2 = a @ (relu(z1) @ params.W2)
    if params.b2 is not None:
        z2 = z2 + params.b2
    return softmax(z2)


def surrogate_forward(params: SurrogateParams, ahat, features) -> np.ndarray:
    """Class probabilities of the linearized model softmax(Ahat^2 X W)."""
    a = _as_matrix(ahat)
    return softmax(a @ (a @ (features @ params.W)))


def cross_entropy(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Mean negative log-likelihood over the masked nodes."""
    idx = np.asarray(mask)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    if idx.size == 0:
        raise ValueError("empty evaluation mask")
    p = probs[idx, labels[idx]]
    with np.errstate(divide="ignore"):
        return float(-np.mean(np.log(p)))


def _masked_ce_from_logits(logits: np.ndarray, labels: np.ndarray,
                           idx: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and dL/dlogits (full-shape, zero off-mask) in one pass."""
    z = logits[idx]
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(sez)
    loss = float(-np.mean(logp[np.arange(idx.size), labels[idx]]))
    grad_rows = ez / sez
    grad_rows[np.arange(idx.size), labels[idx]] -= 1.0
    grad_rows /= idx.size
    grad = np.zeros_like(logits)
    grad[idx] = grad_rows
    return loss, grad


def gcn_backward(params: GcnParams, ahat, features, labels: np.ndarray,
                 mask: np.ndarray) -> dict[str, np.ndarray]:
    """Analytic gradient of the masked cross-entropy w.r.t. all parameters.

    No dropout and no weight decay; this is the contract checked against
    central finite differences.
    """
    a = _as_matrix(ahat)
    ops = SparseOps(a, sp.csr_matrix(features))
    idx = np.asarray(mask)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    _, grads = _forward_backward(params, ops, labels, idx, weight_decay=0.0,
                                 hidden_mask=None)
    return grads


def _forward_backward(params: GcnParams, ops, labels: np.ndarray, idx: np.ndarray,
                      weight_decay: float, hidden_mask: np.ndarray | None
                      ) -> tuple[float, dict[str, np.ndarray]]:
    xw = ops.feat(params.W1)
    z1 = ops.prop(xw)
    if params.b1 is not None:
        z1 = z1 + params.b1
    h = relu(z1)
    h_used = h * hidden_mask if hidden_mask is not None else h
    z2 = ops.prop(h_used @ params.W2)
    if params.b2 is not None:
        z2 = z2 + params.b2

    loss, dz2 = _masked_ce_from_logits(z2, labels, idx)
    back2 = ops.prop_t(dz2)
    grads: dict[str, np.ndarray] = {}
    grads["W2"] = h_used.T @ back2
    if params.b2 is not None:
        grads["b2"] = dz2.sum(axis=0)
    dh = back2 @ params.W2.T
    if hidden_mask is not None:
        dh = dh * hidden_mask
    dz1 = dh * (z1 > 0)
    grads["W1"] = ops.feat_t(ops.prop_t(dz1))
    if params.b1 is not None:
        grads["b1"] = dz1.sum(axis=0)
    if weight_decay:
        loss += 0.5 * weight_decay * float(np.sum(params.W1 * params.W1))
        grads["W1"] = grads["W1"] + weight_decay * params.W1
    return loss, grads


class _Adam:
    def __init__(self, shapes: dict[str, tuple], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, values: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            values[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(n_features: int, hidden: int, n_classes: int, bias: bool,
                rng: np.random.Generator) -> GcnParams:
    w1 = glorot(rng, n_features, hidden)
    w2 = glorot(rng, hidden, n_classes)
    b1 = np.zeros(hidden) if bias else None
    b2 = np.zeros(n_classes) if bias else None
    return GcnParams(W1=w1, W2=w2, b1=b1, b2=b2)


def _val_loss(params: GcnParams, ops, labels, val_idx) -> float:
    z1 = ops.prop(ops.feat(params.W1))
    if params.b1 is not None:
        z1 = z1 + params.b1
    z2 = ops.prop(relu(z1) @ params.W2)
    if params.b2 is not None:
        z2 = z2 + params.b2
    loss, _ = _masked_ce_from_logits(z2, labels, val_idx)
    return loss


def gcn_train(ds: Dataset, split: Split, cfg: TrainConfig, ops=None) -> GcnParams:
    """Train the full GCN with dropout, Adam and early stopping.

    Keeps the parameters from the epoch with the best validation loss.
    Weight decay applies to W1 only. Deterministic per cfg.seed.
    """
    if split.train.size == 0:
        raise ValueError("empty train set")
    if split.val.size == 0:
        raise ValueError("empty validation set")
    if ops is None:
        ahat = normalized_adjacency(ds.graph, cfg.self_loops).matrix
        ops = SparseOps(ahat, ds.features)
    rng = make_rng(cfg.seed, "gcn-train")
    params = init_params(ops.n_features, cfg.hidden, ds.n_classes, cfg.bias, rng)
    values = params.as_dict()
    adam = _Adam({k: v.shape for k, v in values.items()}, cfg.learning_rate)

    best = math.inf
    best_params = params.copy()
    stale = 0
    n = ops.n_nodes
    for _ in range(cfg.max_epochs):
        if cfg.dropout > 0.0:
            epoch_ops = ops.dropped(rng, cfg.dropout) if ops.feature_dropout else ops
            hidden_mask = (rng.random((n, cfg.hidden)) >= cfg.dropout) / (1.0 - cfg.dropout)
        else:
            epoch_ops, hidden_mask = ops, None
        _, grads = _forward_backward(params, epoch_ops, ds.labels, split.train,
                                     cfg.weight_decay, hidden_mask)
        adam.step(values, grads)
        vl = _val_loss(params, ops, ds.labels, split.val)
        if vl < best:
            best = vl
            best_params = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best_params


def surrogate_train(ds: Dataset, split: Split, cfg: TrainConfig) -> SurrogateParams:
    """Train the linear surrogate W on the fixed two-hop propagation."""
    if split.train.size == 0:
        raise ValueError("empty train set")
    if split.val.size == 0:
        raise ValueError("empty validation set")
    ahat = normalized_adjacency(ds.graph, cfg.self_loops).matrix
    two_hop = (ahat @ (ahat @ ds.features)).tocsr()
    rng = make_rng(cfg.seed, "surrogate-train")
    w = glorot(rng, ds.n_features, ds.n_classes)
    values = {"W": w}
    adam = _Adam({"W": w.shape}, cfg.learning_rate)
    best = math.inf
    best_w = w.copy()
    stale = 0
    for _ in range(cfg.max_epochs):
        logits = two_hop @ w
        _, dz = _masked_ce_from_logits(logits, ds.labels, split.train)
        grad = two_hop.T @ dz + cfg.weight_decay * w
        adam.step(values, {"W": grad})
        vloss, _ = _masked_ce_from_logits(two_hop @ w, ds.labels, split.val)
        if vloss < best:
            best = vloss
            best_w = w.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return SurrogateParams(W=best_w)


def margin(prob_row: np.ndarray, true_class: int) -> float:
    """Log probability ratio of the true class against the best other class.

    Positive iff the true class is the unique argmax. Returns -inf when the
    true-class probability is exactly zero.
    """
    p = np.asarray(prob_row, dtype=np.float64)
    if p.ndim != 1 or p.size < 2 or not 0 <= true_class < p.size:
        raise ValueError("need a probability vector and a valid class index")
    if p.min() < -1e-9 or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("not a probability vector")
    pc = p[true_class]
    pm = np.delete(p, true_class).max()
    if pc == 0.0:
        return -math.inf
    if pm == 0.0:
        return math.inf
    return math.log(pc / pm)


def margins_from_probs(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorized margin() over every row."""
    n = probs.shape[0]
    pc = probs[np.arange(n), labels]
    rest = probs.copy()
    rest[np.arange(n), labels] = -np.inf
    pm = rest.max(axis=1)
    with np.errstate(divide="ignore"):
        return np.log(pc) - np.log(pm)


def f1_macro(predictions: np.ndarray, labels: np.ndarray, mask: np.ndarray,
             n_classes: int | None = None) -> float:
    """Unweighted mean of per-class F1 over all classes.

    A class absent from both predictions and truth contributes F1 = 0; pass
    ``n_classes`` when classes may be missing from the masked data entirely.
    """
    idx = np.asarray(mask)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    if idx.size == 0:
        raise ValueError("empty evaluation mask")
    pred = np.asarray(predictions)[idx]
    true = np.asarray(labels)[idx]
    if n_classes is None:
        n_classes = int(max(pred.max(initial=0), true.max(initial=0))) + 1
    scores = []
    for c in range(n_classes):
        tp = int(np.sum((pred == c) & (true == c)))
        fp = int(np.sum((pred == c) & (true != c)))
        fn = int(np.sum((pred != c) & (true == c)))
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def predictions_from_probs(probs: np.ndarray) -> np.ndarray:
    return np.argmax(probs, axis=1)


def save_checkpoint(params: GcnParams | SurrogateParams, path: str | Path) -> None:
    """Versioned JSON checkpoint with row-major weight lists."""
    if isinstance(params, SurrogateParams):
        payload = {"kind": "surrogate", "shape": list(params.W.shape),
                   "W": params.W.ravel().tolist()}
    else:
        payload = {"kind": "gcn",
                   "W1_shape": list(params.W1.shape), "W1": params.W1.ravel().tolist(),
                   "W2_shape": list(params.W2.shape), "W2": params.W2.ravel().tolist(),
                   "b1": None if params.b1 is None else params.b1.tolist(),
                   "b2": None if params.b2 is None else params.b2.tolist()}
    payload["format_version"] = CHECKPOINT_FORMAT_VERSION
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> GcnParams | SurrogateParams:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    if payload["kind"] == "surrogate":
        return SurrogateParams(W=np.asarray(payload["W"]).reshape(payload["shape"]))
    return GcnParams(
        W1=np.asarray(payload["W1"]).reshape(payload["W1_shape"]),
        W2=np.asarray(payload["W2"]).reshape(payload["W2_shape"]),
        b1=None if payload["b1"] is None else np.asarray(payload["b1"]),
        b2=None if payload["b2"] is None else np.asarray(payload["b2"]))


def train_seed_for(base_seed: int, target: int, step: int) -> int:
    """Retraining seed derived from (trial seed, target, perturbation count)."""
    from .seeds import derive_seed

    return derive_seed(base_seed, "retrain", target, step)
