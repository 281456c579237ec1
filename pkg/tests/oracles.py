"""Independent reference implementations the test suite checks against.

These are written straight from first principles (dense linear algebra,
dict/list bookkeeping) and deliberately avoid the library's own data
structures and vectorized paths.
"""

import math

import numpy as np


def greedy_cover_oracle(n: int, edges: list, n_train: int,
                        check_marks: bool = False) -> list:
    """Literal transcription of the greedy cover pseudo-code.

    Starting with an empty training set and threshold k = 0, repeatedly add
    the node with the largest number of neighbors whose mark equals k (ties
    to the lowest index); when that maximum is zero, increment k instead.
    Selected nodes get mark -1 and their non-training neighbors' marks
    increase by one. If k exceeds the maximum degree while the set is still
    short, the lowest-index remaining nodes complete it.
    """
    nbrs = {u: set() for u in range(n)}
    for u, v in edges:
        if u != v:
            nbrs[u].add(v)
            nbrs[v].add(u)
    marks = {u: 0 for u in range(n)}
    train: list = []
    in_train = set()
    k = 0
    max_degree = max((len(nbrs[u]) for u in range(n)), default=0)

    def assert_marks():
        for u in range(n):
            if u in in_train:
                assert marks[u] == -1
            else:
                assert marks[u] == len(nbrs[u] & in_train), (u, marks[u])

    while len(train) < n_train:
        best_u, best_count = -1, -1
        for u in range(n):
            if u in in_train:
                continue
            count = sum(1 for w in nbrs[u] if marks[w] == k)
            if count > best_count:
                best_u, best_count = u, count
        if best_count <= 0:
            k += 1
            if k > max_degree:
                for u in range(n):
                    if u not in in_train:
                        train.append(u)
                        in_train.add(u)
                        if len(train) >= n_train:
                            break
                break
            continue
        train.append(best_u)
        in_train.add(best_u)
        marks[best_u] = -1
        for w in nbrs[best_u]:
            if w not in in_train:
                marks[w] += 1
        if check_marks:
            assert_marks()
    return sorted(train)


def dense_ahat(adj: np.ndarray) -> np.ndarray:
    d = adj.sum(axis=1)
    inv = np.zeros_like(d, dtype=float)
    inv[d > 0] = 1.0 / np.sqrt(d[d > 0])
    return np.outer(inv, inv) * adj


def surrogate_margin_oracle(adj: np.ndarray, x: np.ndarray, w: np.ndarray,
                            target: int, true_class: int) -> float:
    """Margin of softmax((D^-1/2 A D^-1/2)^2 X W) rows via dense algebra."""
    ahat = dense_ahat(adj.astype(float))
    logits = ahat @ ahat @ x @ w
    z = logits[target]
    zmax = z.max()
    p = np.exp(z - zmax)
    p = p / p.sum()
    pc = p[true_class]
    pm = np.delete(p, true_class).max()
    if pc == 0:
        return -math.inf
    if pm == 0:
        return math.inf
    return math.log(pc / pm)


def apply_perturbation_dense(adj: np.ndarray, x: np.ndarray, pert
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Apply an (kind, a, b) perturbation tuple to dense copies."""
    kind, a, b = pert
    adj = adj.copy()
    x = x.copy()
    if kind == "edge":
        adj[a, b] = 1 - adj[a, b]
        adj[b, a] = adj[a, b]
    else:
        assert x[a, b] == 1
        x[a, b] = 0
    return adj, x


def filter_training_oracle(edges, adj: np.ndarray, labels, train_frac: float,
                           train_mask) -> list:
    """Literal transcription of the training-set-preserving filter.

    ``train_mask`` None selects the per-class degree-threshold branch
    (StratDegree); otherwise the borderline-coverage branch (GreedyCover).
    Returns keep flags per edge, True when the flip does not break the rule.
    """
    degs = adj.sum(axis=0)
    keep = []
    for u, v in edges:
        existing = adj[u, v] == 1
        if train_mask is None:
            n_class = int(np.max(labels)) + 1
            thres = np.zeros(n_class)
            for c in range(n_class):
                temp = np.sort(degs[np.asarray(labels) == c])
                thres[c] = temp[int(np.floor(len(temp) * (1 - train_frac)))]
            breaks = False
            for node in (u, v):
                old = degs[node]
                new = old - 1 if existing else old + 1
                thr = thres[labels[node]]
                if (old < thr and new >= thr) or (old > thr and new <= thr):
                    breaks = True
            keep.append(not breaks)
        else:
            non_train = ~train_mask
            n_non = adj @ non_train.astype(float)
            max_non = n_non[non_train].max()
            min_train = n_non[train_mask].min()
            borderline_train = train_mask & (n_non <= min_train + 1)
            borderline_non = non_train & (n_non >= max_non - 1)
            bad_pairing_train = ((borderline_train[u] and non_train[v])
                                 or (borderline_train[v] and non_train[u]))
            bad_pairing_non = ((borderline_non[u] and train_mask[v])
                               or (borderline_non[v] and train_mask[u]))
            bad_addition = bad_pairing_train and not existing
            bad_removal = bad_pairing_non and existing
            keep.append(not (bad_addition or bad_removal))
    return keep


def powerlaw_ll_oracle(degrees, d_min: int) -> float:
    ds = [float(d) for d in degrees if d >= d_min]
    if not ds:
        return 0.0
    n = len(ds)
    alpha = 1.0 + n / sum(math.log(d / (d_min - 0.5)) for d in ds)
    return (n * math.log(alpha) + n * alpha * math.log(d_min)
            - (alpha + 1.0) * sum(math.log(d) for d in ds))


def degree_ratio_oracle(orig_degrees, pert_degrees, d_min: int = 2) -> float:
    combined = list(orig_degrees) + list(pert_degrees)
    return (-2.0 * powerlaw_ll_oracle(combined, d_min)
            + 2.0 * (powerlaw_ll_oracle(orig_degrees, d_min)
                     + powerlaw_ll_oracle(pert_degrees, d_min)))
