"""Multi-output CART trees grown from dense or CSC inputs.

A tree is stored as flat node arrays (root at id 0).  Test nodes route
``x[feature] <= threshold`` to ``left``; leaves have ``feature == -1``.
Every node, internal or not, carries the mean output value of the training
samples that reached it, which is what compression re-weights later.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .datasets import Dataset
from .exceptions import EmptyDataset, EmptyPartition, InvalidSplit, RelabelError, ShapeError
from .matrix import CscMatrix, CsrMatrix, csc_to_csr

FORMAT_VERSION = 1
IMPURITIES = ("gini", "entropy", "variance")
SPLITTERS = ("exhaustive", "random-threshold")

_EMPTY_I = np.zeros(1, dtype=np.int64)
_EMPTY_F = np.zeros(1)
_EMPTY_X = np.zeros((1, 1))


@dataclass(frozen=True)
class GrowthParams:
    """Stopping rules and randomization of a single tree.

    ``k=None`` means all features; ``max_leaves`` switches to best-first
    growth.  ``n_min=1`` behaves as 2 since one sample cannot be split.
    """

    max_depth: Optional[int] = None
    n_min: int = 2
    max_leaves: Optional[int] = None
    k: Optional[int] = None
    splitter: str = "exhaustive"
    impurity: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_min < 1:
            raise ValueError("n_min must be >= 1")
        if self.max_leaves is not None and self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2 when set")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.splitter not in SPLITTERS:
            raise ValueError(f"unknown splitter {self.splitter!r}")
        if self.impurity is not None and self.impurity not in IMPURITIES:
            raise ValueError(f"unknown impurity {self.impurity!r}")

    def replace(self, **kw):
        return GrowthParams(**{**asdict(self), **kw})


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_samples: np.ndarray
    impurity: np.ndarray
    weighted_gain: np.ndarray  # (n_t / n) * impurity decrease at test nodes
    value: np.ndarray  # (n_nodes, d)
    p: int
    task: str = "regression"

    @property
    def d(self):
        return self.value.shape[1]

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def is_leaf(self):
        return self.feature < 0

    @property
    def n_leaves(self):
        return int(np.sum(self.feature < 0))

    def depth(self):
        """Depth of every node (root = 0)."""
        out = np.zeros(self.n_nodes, dtype=np.int64)
        # children always have larger ids than their parent
        for t in range(self.n_nodes):
            if self.feature[t] >= 0:
                out[self.left[t]] = out[self.right[t]] = out[t] + 1
        return out

    def with_values(self, value):
        return Tree(self.feature, self.threshold, self.left, self.right, self.n_samples,
                    self.impurity, self.weighted_gain, np.asarray(value, dtype=np.float64),
                    self.p, self.task)

    def to_dict(self):
        return {
            "format": "treeforge.tree",
            "version": FORMAT_VERSION,
            "p": int(self.p),
            "d": int(self.d),
            "task": self.task,
            "nodes": [
                {
                    "id": t,
                    "kind": "leaf" if self.feature[t] < 0 else "test",
                    "feature": int(self.feature[t]),
                    "threshold": float(self.threshold[t]),
                    "left": int(self.left[t]),
                    "right": int(self.right[t]),
                    "n_samples": int(self.n_samples[t]),
                    "impurity": float(self.impurity[t]),
                    "weighted_gain": float(self.weighted_gain[t]),
                    "value": [float(v) for v in self.value[t]],
                }
                for t in range(self.n_nodes)
            ],
        }

    @classmethod
    def from_dict(cls, obj):
        if obj.get("format") != "treeforge.tree" or obj.get("version") != FORMAT_VERSION:
            raise ValueError("not a treeforge tree record of a supported version")
        nodes = sorted(obj["nodes"], key=lambda r: r["id"])
        col = lambda key, dt: np.array([r[key] for r in nodes], dtype=dt)  # noqa: E731
        value = np.array([r["value"] for r in nodes], dtype=np.float64).reshape(len(nodes), obj["d"])
        return cls(col("feature", np.int64), col("threshold", np.float64), col("left", np.int64),
                   col("right", np.int64), col("n_samples", np.int64), col("impurity", np.float64),
                   col("weighted_gain", np.float64), value, obj["p"], obj.get("task", "regression"))


def save_tree(tree: Tree, path):
    with open(path, "w") as fh:
        json.dump(tree.to_dict(), fh)


def load_tree(path) -> Tree:
    with open(path) as fh:
        return Tree.from_dict(json.load(fh))


# ---------------------------------------------------------------- impurity

def _class_columns(Y):
    """Per-output class frequency arrays."""
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = Y[:, None]
    return [np.unique(Y[:, k], return_counts=True)[1] / len(Y) for k in range(Y.shape[1])]


def impurity(values, kind="variance"):
    """Impurity of the output rows of one node, summed over outputs.

    ``gini`` is sum_l p_l (1 - p_l), ``entropy`` is -sum_l p_l log p_l (natural
    log) and ``variance`` is the mean squared deviation from the node mean.
    """
    Y = np.asarray(values, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(Y) == 0:
        raise EmptyPartition("impurity of an empty node")
    if kind == "variance":
        return float(np.sum(np.mean((Y - Y.mean(axis=0)) ** 2, axis=0)))
    freqs = _class_columns(Y)
    if kind == "gini":
        return float(sum(np.sum(f * (1 - f)) for f in freqs))
    if kind == "entropy":
        return float(-sum(np.sum(f * np.log(f)) for f in freqs))
    raise ValueError(f"unknown impurity {kind!r}")


def impurity_reduction(parent, left, right, kind="variance"):
    """Delta I = I(parent) - |left|/|parent| I(left) - |right|/|parent| I(right)."""
    parent = np.asarray(parent)
    left = np.asarray(left)
    right = np.asarray(right)
    if len(left) == 0 or len(right) == 0:
        raise InvalidSplit("both children must be non-empty")
    if len(left) + len(right) != len(parent):
        raise InvalidSplit("children do not partition the parent")
    n = len(parent)
    return (impurity(parent, kind) - len(left) / n * impurity(left, kind)
            - len(right) / n * impurity(right, kind))


# ---------------------------------------------------------------- targets

def is_classification(task):
    return task in ("binary-classification", "multilabel")


def _default_impurity(task):
    return "gini" if is_classification(task) else "variance"


def _split_targets(Y, kind):
    """Statistics array ``W`` scanned by the splitter and its criterion code."""
    Y = np.asarray(Y, dtype=np.float64)
    if kind == "variance":
        return np.ascontiguousarray(Y), K.SUMSQ
    pos = (Y > 0).astype(np.float64)
    W = np.empty((Y.shape[0], 2 * Y.shape[1]))
    W[:, 0::2] = 1.0 - pos
    W[:, 1::2] = pos
    return W, (K.SUMSQ if kind == "gini" else K.ENTROPY)


def leaf_targets(Y, task):
    """Rows averaged into leaf values: positives indicator for classification."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if is_classification(task):
        return (Y > 0).astype(np.float64)
    return Y


def label_leaf(Y_rows, task="regression"):
    """Per-output mean (regression) or probability of the positive class."""
    rows = leaf_targets(Y_rows, task)
    if len(rows) == 0:
        raise EmptyPartition("cannot label an empty leaf")
    return rows.mean(axis=0)


def hard_labels(scores, task="binary-classification"):
    """Threshold leaf probabilities at 0.5, ties to the positive class."""
    pos = np.asarray(scores) >= 0.5
    if task == "binary-classification":
        return np.where(pos, 1.0, -1.0)
    return pos.astype(np.float64)


# ---------------------------------------------------------------- growth

def _input_arrays(X):
    if isinstance(X, CscMatrix):
        return True, _EMPTY_X, X.indptr, X.indices, X.data, X.n_rows, X.n_cols
    if isinstance(X, CsrMatrix):
        raise ShapeError("grow from a CscMatrix or a dense array, not CSR")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("X must be 2-d")
    if not (X.flags.c_contiguous or X.flags.f_contiguous):
        X = np.ascontiguousarray(X)
    return False, X, _EMPTY_I, _EMPTY_I, _EMPTY_F, X.shape[0], X.shape[1]


def grow_arrays(X, W, V, params: GrowthParams, crit, n_out, p=None, task="regression"):
    """Grow from split statistics ``W`` (scanned) and leaf targets ``V`` (averaged)."""
    sparse, Xd, indptr, indices, data, n, p_x = _input_arrays(X)
    if n == 0:
        raise EmptyDataset("cannot grow a tree on zero samples")
    W = np.ascontiguousarray(W, dtype=np.float64)
    V = np.ascontiguousarray(V, dtype=np.float64)
    if W.shape[0] != n or V.shape[0] != n:
        raise ShapeError("targets and inputs disagree on the number of samples")
    k = p_x if params.k is None else params.k
    if k > p_x:
        raise ValueError(f"k={k} exceeds the {p_x} available features")
    out = K.grow_kernel(
        sparse, Xd, indptr, indices, data, p_x, W, V, crit, n_out, params.n_min,
        -1 if params.max_depth is None else params.max_depth,
        0 if params.max_leaves is None else params.max_leaves,
        max(k, 1), params.splitter == "random-threshold", params.seed,
    )
    return Tree(*out, p=p_x, task=task)


def grow_xy(X, Y, params: GrowthParams = GrowthParams(), task="regression"):
    """Grow a tree on inputs ``X`` (dense or CSC) and outputs ``Y``."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    kind = params.impurity or _default_impurity(task)
    W, crit = _split_targets(Y, kind)
    return grow_arrays(X, W, leaf_targets(Y, task), params, crit, Y.shape[1], task=task)


def grow(dataset: Dataset, params: GrowthParams = GrowthParams()) -> Tree:
    """Grow a decision tree on a :class:`Dataset`."""
    return grow_xy(dataset.X, dataset.Y, params, dataset.task)


# ---------------------------------------------------------------- split search

@dataclass(frozen=True)
class SplitRecord:
    feature: int
    threshold: float
    impurity_decrease: float


@dataclass
class NodePartition:
    """Sample permutation ``L`` and its inverse ``mapping`` (mapping[L[i]] = i)."""

    L: np.ndarray
    mapping: np.ndarray = field(default=None)

    def __post_init__(self):
        self.L = np.ascontiguousarray(self.L, dtype=np.int64)
        if self.mapping is None:
            self.mapping = np.full(max(len(self.L), int(self.L.max(initial=-1)) + 1), -1,
                                   dtype=np.int64)
            self.mapping[self.L] = np.arange(len(self.L))
        self.mapping = np.ascontiguousarray(self.mapping, dtype=np.int64)

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    def invariant_holds(self):
        return bool(np.all(self.mapping[self.L] == np.arange(len(self.L))))


def _extract(fn, X: CscMatrix, j, part: NodePartition, start, end):
    m = end - start
    neg_v, pos_v = np.empty(m), np.empty(m)
    neg_i, pos_i = np.empty(m, dtype=np.int64), np.empty(m, dtype=np.int64)
    n_neg, n_pos = fn(X.indptr, X.indices, X.data, j, part.L, part.mapping, start, end,
                      neg_v, neg_i, pos_v, pos_i)
    return neg_v[:n_neg].copy(), pos_v[:n_pos].copy(), n_neg, n_pos


def extract_nnz_mapping(X: CscMatrix, j, partition: NodePartition, start, end):
    """Non-zeros of column ``j`` inside ``L[start:end]`` by scanning the column.

    ``L`` is reordered: negatives first, zeros in the middle, positives last.
    Values come back in increasing sample-id order.
    """
    return _extract(K.extract_nnz_mapping, X, j, partition, start, end)


def extract_nnz_bsearch(X: CscMatrix, j, partition: NodePartition, start, end):
    """Same contract as :func:`extract_nnz_mapping`, by binary search per sample."""
    return _extract(K.extract_nnz_bsearch, X, j, partition, start, end)


def extract_nnz(X: CscMatrix, j, partition: NodePartition, start, end):
    """Pick the cheaper extraction for this node size and column fill."""
    return _extract(K.extract_nnz, X, j, partition, start, end)


def uses_mapping(node_size, n_nz):
    """Switch rule of :func:`extract_nnz`: binary search iff ``size * ln(n_nz) < 0.1 * n_nz``."""
    return n_nz > 0 and bool(K.use_mapping(node_size, n_nz))


def _find_split(X, Y, partition, start, end, params, node_id, task):
    sparse, Xd, indptr, indices, data, n, p = _input_arrays(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    kind = params.impurity or _default_impurity(task)
    W, crit = _split_targets(Y, kind)
    m = end - start
    if m < max(params.n_min, 2):
        return None
    ids = np.sort(partition.L[start:end])
    # sum in sample-id order, as the grower does
    T = np.zeros(W.shape[1])
    for i in ids:
        T += W[i]
    bufs = [np.empty(m), np.empty(m, dtype=np.int64), np.empty(m), np.empty(m, dtype=np.int64)]
    acc, P = np.empty(W.shape[1]), np.empty(W.shape[1])
    k = p if params.k is None else params.k
    found, f, thr, pr = K.find_split(
        sparse, Xd, indptr, indices, data, p, partition.L, partition.mapping, start, end, ids,
        W, T, crit, Y.shape[1], k, params.splitter == "random-threshold", params.seed, node_id,
        *bufs, acc, P,
    )
    if not found:
        return None
    gain = (pr - K.proxy_base(T, m, crit, Y.shape[1])) / m
    if not gain > 1e-10 * impurity(Y[ids], kind):
        return None
    return SplitRecord(int(f), float(thr), float(gain))


def find_best_split_dense(X, Y, node_samples, params: GrowthParams = GrowthParams(),
                          node_id=0, task="regression") -> Optional[SplitRecord]:
    """Best split of the samples ``node_samples`` of a dense input matrix.

    The feature draws follow the per-node stream of ``(params.seed, node_id)``.
    """
    part = NodePartition(np.asarray(node_samples, dtype=np.int64))
    full = np.full(np.asarray(X).shape[0], -1, dtype=np.int64)
    full[part.L] = np.arange(len(part.L))
    part.mapping = full
    return _find_split(X, Y, part, 0, len(part.L), params, node_id, task)


def find_best_split_sparse(X: CscMatrix, Y, partition: NodePartition, start, end,
                           params: GrowthParams = GrowthParams(), node_id=0,
                           task="regression") -> Optional[SplitRecord]:
    """Best split of ``partition.L[start:end]`` over a CSC matrix (reorders ``L``)."""
    return _find_split(X, Y, partition, start, end, params, node_id, task)


# ---------------------------------------------------------------- prediction

def apply(tree: Tree, X):
    """Leaf id reached by every row of ``X`` (dense, CSC or CSR)."""
    if isinstance(X, CscMatrix):
        X = csc_to_csr(X)
    if isinstance(X, CsrMatrix):
        if X.n_cols != tree.p:
            raise ShapeError(f"X has {X.n_cols} features, the tree expects {tree.p}")
        return K.apply_csr(tree.feature, tree.threshold, tree.left, tree.right,
                           X.indptr, X.indices, X.data, X.n_rows, X.n_cols)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != tree.p:
        raise ShapeError(f"X must have shape (n, {tree.p})")
    return K.apply_dense(tree.feature, tree.threshold, tree.left, tree.right, X)


def predict_dense(tree: Tree, X):
    X = np.asarray(X, dtype=np.float64)
    return tree.value[apply(tree, X)]


def predict_csr(tree: Tree, X: CsrMatrix):
    if not isinstance(X, CsrMatrix):
        raise TypeError("predict_csr expects a CsrMatrix")
    return tree.value[apply(tree, X)]


def predict(tree: Tree, X):
    return tree.value[apply(tree, X)]


# ---------------------------------------------------------------- post-fit

def relabel_leaves(tree: Tree, X, Y_original, task=None) -> Tree:
    """Replace node values by means of ``Y_original`` over the samples reaching them.

    Structure is unchanged.  Internal nodes get the mean over their subtree.
    """
    task = tree.task if task is None else task
    V = leaf_targets(Y_original, task)
    leaves = apply(tree, X)
    if len(leaves) != len(V):
        raise ShapeError("X and Y_original disagree on the number of samples")
    counts = np.bincount(leaves, minlength=tree.n_nodes).astype(np.float64)
    sums = np.zeros((tree.n_nodes, V.shape[1]))
    np.add.at(sums, leaves, V)
    empty = tree.is_leaf & (counts == 0)
    if np.any(empty):
        raise RelabelError(f"{int(empty.sum())} leaves receive no sample")
    for t in range(tree.n_nodes - 1, -1, -1):
        if tree.feature[t] >= 0:
            sums[t] = sums[tree.left[t]] + sums[tree.right[t]]
            counts[t] = counts[tree.left[t]] + counts[tree.right[t]]
    return Tree(tree.feature, tree.threshold, tree.left, tree.right,
                counts.astype(np.int64), tree.impurity, tree.weighted_gain,
                sums / counts[:, None], tree.p, task)


def mdi_importances(tree: Tree):
    """Mean decrease of impurity per feature, normalized to sum 1 when non-zero."""
    imp = np.zeros(tree.p)
    tests = tree.feature >= 0
    np.add.at(imp, tree.feature[tests], tree.weighted_gain[tests])
    total = imp.sum()
    return imp / total if total > 0 else imp


def node_count(tree: Tree):
    """Number of test nodes."""
    return int(np.sum(tree.feature >= 0))
