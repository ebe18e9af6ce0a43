"""L1-based compression of a fitted forest.

Every forest node defines a binary feature, 1 when a sample traverses the
node.  A monotone incremental forward stagewise path over these (lifted,
standardized) features selects a sparse reweighting of the nodes; nodes
whose whole subtree ends with zero weight are pruned away.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from . import _kernels as K
from .datasets import Dataset, kfold_indices
from .exceptions import InvalidFolds, InvalidStep, InvalidT, ShapeError, Unsupported
from .forest import Forest
from .matrix import CscMatrix, CsrMatrix, csc_to_csr, csr_to_csc, densify, sparsify
from .tree import Tree, is_classification

CORR_TOL = 1e-12


# ---------------------------------------------------------------- lifting

@dataclass(frozen=True)
class IndicatorSpace:
    """Flat column numbering of all nodes of a forest (tree-major)."""

    sizes: np.ndarray

    @classmethod
    def of(cls, trees):
        return cls(np.array([t.n_nodes for t in trees], dtype=np.int64))

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)

    @property
    def q(self):
        return int(self.sizes.sum())

    def column(self, m, node):
        return int(self.offsets[m] + node)

    def node(self, j):
        m = int(np.searchsorted(np.cumsum(self.sizes), j, side="right"))
        return m, int(j - self.offsets[m])


def _trees_of(model):
    if isinstance(model, Forest):
        return model.trees
    if isinstance(model, Tree):
        return [model]
    return list(model)


def _dense_inputs(X):
    if isinstance(X, (CscMatrix, CsrMatrix)):
        return densify(X)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("X must be 2-d")
    return X


def lift_csr(model, X) -> CsrMatrix:
    trees = _trees_of(model)
    X = _dense_inputs(X)
    for t in trees:
        if X.shape[1] != t.p:
            raise ShapeError(f"X has {X.shape[1]} features, the trees expect {t.p}")
    n = X.shape[0]
    lengths = np.zeros(n, dtype=np.int64)
    for t in trees:
        lengths += K.path_lengths(t.feature, t.threshold, t.left, t.right, X)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.int64)
    fill = np.zeros(n, dtype=np.int64)
    space = IndicatorSpace.of(trees)
    for t, off in zip(trees, space.offsets):
        K.fill_paths(t.feature, t.threshold, t.left, t.right, X, off, indptr, indices, fill)
    return CsrMatrix(n, space.q, indptr, indices, np.ones(len(indices)))


def lift(model, X) -> CscMatrix:
    """Node-indicator matrix: entry (i, j) = 1 iff sample i traverses node j."""
    return csr_to_csc(lift_csr(model, X))


# ---------------------------------------------------------------- stagewise

@njit(cache=True)
def _stagewise_kernel(c_indptr, c_indices, r_indptr, r_indices, n, active, mean, scale,
                      y, eps, max_steps, monotone):
    q = len(active)
    u = np.zeros(q)  # z_k' r, minus the shift kept in ``shift * count_k``
    count = np.zeros(q)
    for k in range(q):
        count[k] = c_indptr[k + 1] - c_indptr[k]
        for t in range(c_indptr[k], c_indptr[k + 1]):
            u[k] += y[c_indices[t]]
    shift = 0.0
    beta = np.zeros(q)
    cols = np.empty(max_steps, dtype=np.int64)
    signs = np.empty(max_steps, dtype=np.int64)
    rss = np.empty(max_steps + 1)
    r2 = 0.0
    for i in range(n):
        r2 += y[i] * y[i]
    rss[0] = r2
    half = 0.5 * eps * n
    n_steps = 0
    for step in range(max_steps):
        best = -1
        best_abs = 0.0
        best_c = 0.0
        for k in range(q):
            if not active[k]:
                continue
            c = (u[k] + shift * count[k]) / scale[k]
            if monotone and beta[k] != 0.0 and c * beta[k] < 0.0:
                continue
            a = abs(c)
            if a > best_abs:
                best_abs = a
                best = k
                best_c = c
        # a step of size eps changes the RSS by eps^2 n - 2 eps |c|
        if best < 0 or best_abs < CORR_TOL or best_abs <= half:
            break
        j = best
        s = 1 if best_c > 0 else -1
        coef = eps * s / scale[j]
        for t in range(c_indptr[j], c_indptr[j + 1]):
            i = c_indices[t]
            for tt in range(r_indptr[i], r_indptr[i + 1]):
                u[r_indices[tt]] -= coef
        shift += coef * mean[j]
        beta[j] += eps * s
        cols[step] = j
        signs[step] = s
        r2 += eps * eps * n - 2.0 * eps * best_abs
        rss[step + 1] = r2
        n_steps += 1
    return cols[:n_steps].copy(), signs[:n_steps].copy(), rss[:n_steps + 1].copy()


@dataclass(frozen=True, eq=False)
class StagewisePath:
    """Steps of an epsilon-stagewise path in standardized coordinates."""

    epsilon: float
    columns: np.ndarray
    signs: np.ndarray
    rss: np.ndarray  # residual sum of squares after 0, 1, ... steps
    n_features: int
    intercept: float = 0.0

    @property
    def n_steps(self):
        return len(self.columns)

    @property
    def t_max(self):
        return self.n_steps * self.epsilon

    def steps_for(self, t):
        return int(np.floor(t / self.epsilon + 1e-9))

    def beta_at(self, t):
        """Coefficient vector after the steps fitting in an L1 budget ``t``."""
        k = min(self.steps_for(t), self.n_steps)
        beta = np.zeros(self.n_features)
        np.add.at(beta, self.columns[:k], self.epsilon * self.signs[:k])
        return beta


@dataclass(frozen=True)
class ColumnScaling:
    mean: np.ndarray
    scale: np.ndarray
    active: np.ndarray  # non-constant columns
    y_mean: float = 0.0
    y_scale: float = 1.0


def _scaling(Z: CscMatrix, y):
    n = Z.n_rows
    count = np.diff(Z.indptr).astype(np.float64)
    s2 = np.zeros(Z.n_cols)
    np.add.at(s2, np.repeat(np.arange(Z.n_cols), np.diff(Z.indptr)), Z.data**2)
    mean = count * 0.0
    np.add.at(mean, np.repeat(np.arange(Z.n_cols), np.diff(Z.indptr)), Z.data)
    mean /= n
    var = s2 / n - mean**2
    active = var > 1e-12 * np.maximum(s2 / n, 1.0)
    scale = np.where(active, np.sqrt(np.maximum(var, 0.0)), 1.0)
    ym = float(np.mean(y))
    ys = float(np.std(y))
    return ColumnScaling(mean, scale, active, ym, ys if ys > 0 else 1.0)


def _csr_arrays(Z: CscMatrix):
    R = csc_to_csr(Z)
    return R.indptr, R.indices


def forward_stagewise(Z, y, epsilon=0.01, max_steps=10000, monotone=True,
                      standardize=True, scaling: ColumnScaling = None) -> StagewisePath:
    """Incremental forward stagewise regression of ``y`` on the columns of ``Z``.

    Each step adds ``epsilon * sign(c)`` to the coefficient of the column with
    the largest absolute correlation ``c`` to the residual; it stops when no
    step can decrease the residual sum of squares.  Columns are centered and
    scaled to unit variance (constant ones excluded) and ``y`` is centered
    and scaled.  With ``standardize=False`` ``Z`` and ``y`` are taken as given
    (columns must then be centered with variance 1 already).
    """
    if not epsilon > 0:
        raise InvalidStep("epsilon must be positive")
    y = np.asarray(y, dtype=np.float64).ravel()
    if Z.shape[0] != len(y):
        raise ShapeError("Z and y disagree on the number of samples")
    if not standardize:
        Zd = densify(Z) if isinstance(Z, CscMatrix) else np.asarray(Z, dtype=np.float64)
        return _dense_stagewise(Zd, y, epsilon, max_steps, monotone)
    Zc = Z if isinstance(Z, CscMatrix) else sparsify(Z)
    sc = scaling or _scaling(Zc, y)
    ys = (y - sc.y_mean) / sc.y_scale
    mean, scale, active = sc.mean, sc.scale, sc.active
    r_indptr, r_indices = _csr_arrays(Zc)
    cols, signs, rss = _stagewise_kernel(Zc.indptr, Zc.indices, r_indptr, r_indices,
                                         Zc.n_rows, active, mean, scale, ys,
                                         float(epsilon), int(max_steps), bool(monotone))
    return StagewisePath(float(epsilon), cols, signs, rss, Zc.n_cols, 0.0)


def _dense_stagewise(Z, y, epsilon, max_steps, monotone):
    """Plain dense stagewise on already standardized columns."""
    Z = np.asarray(Z, dtype=np.float64)
    r = y.copy()
    beta = np.zeros(Z.shape[1])
    sq = np.sum(Z**2, axis=0)
    cols, signs, rss = [], [], [float(r @ r)]
    for _ in range(max_steps):
        c = Z.T @ r
        allowed = ~(monotone & (beta * c < 0))
        a = np.where(allowed, np.abs(c), -1.0)
        j = int(np.argmax(a))
        if a[j] < CORR_TOL or a[j] <= 0.5 * epsilon * sq[j]:
            break
        s = 1 if c[j] > 0 else -1
        beta[j] += epsilon * s
        r -= epsilon * s * Z[:, j]
        cols.append(j)
        signs.append(s)
        rss.append(float(r @ r))
    return StagewisePath(float(epsilon), np.array(cols, dtype=np.int64),
                         np.array(signs, dtype=np.int64), np.array(rss), Z.shape[1], 0.0)


# ---------------------------------------------------------------- t selection

@njit(cache=True)
def _validation_curve(cols, signs, eps, v_indptr, v_indices, n_val, mean, scale, y_val,
                      y_mean, y_scale, classify, n_grid):
    pred = np.zeros(n_val)
    shift = 0.0
    out = np.empty(n_grid)
    n_steps = len(cols)
    for s in range(n_grid):
        if s > 0 and s <= n_steps:
            j = cols[s - 1]
            coef = eps * signs[s - 1] / scale[j]
            shift -= coef * mean[j]
            for t in range(v_indptr[j], v_indptr[j + 1]):
                pred[v_indices[t]] += coef
        if s > n_steps and s > 0:
            out[s] = out[s - 1]
            continue
        loss = 0.0
        for i in range(n_val):
            f = (pred[i] + shift) * y_scale + y_mean
            if classify:
                lab = 1.0 if f >= 0 else -1.0
                loss += 1.0 if lab != y_val[i] else 0.0
            else:
                loss += (f - y_val[i]) ** 2
        out[s] = loss / n_val
    return out


def validation_curve(path: StagewisePath, scaling: ColumnScaling, Z_val: CscMatrix, y_val,
                     classify=False, n_grid=None):
    """Validation loss at t = 0, eps, 2 eps, ... (constant after the path ends)."""
    n_grid = path.n_steps + 1 if n_grid is None else n_grid
    y_val = np.asarray(y_val, dtype=np.float64).ravel()
    return _validation_curve(path.columns, path.signs, path.epsilon, Z_val.indptr,
                             Z_val.indices, Z_val.n_rows, scaling.mean, scaling.scale, y_val,
                             scaling.y_mean, scaling.y_scale, bool(classify), int(n_grid))


def _target(dataset: Dataset):
    if dataset.d != 1:
        raise Unsupported("compression handles single-output tasks")
    return dataset.Y[:, 0]


@dataclass(frozen=True)
class TSelection:
    t_star: float
    grid: np.ndarray
    mean_loss: np.ndarray


def select_t_cv(forest_builder: Callable[[Dataset], Forest], dataset: Dataset, epsilon=0.01,
                folds=10, max_steps=10000, seed=0, monotone=True) -> TSelection:
    """Pick the L1 budget t by k-fold cross-validation.

    Per fold a forest is grown on the training part, the stagewise path is
    run on its lift and the validation loss (squared error, or 0-1 for
    classification) is read at every t of the epsilon grid.  The smallest
    minimizer of the fold-averaged loss is returned.
    """
    if folds < 2 or folds > dataset.n:
        raise InvalidFolds(f"need 2 <= folds <= n, got folds={folds}, n={dataset.n}")
    classify = is_classification(dataset.task)
    total = np.zeros(max_steps + 1)
    for val_idx in kfold_indices(dataset.n, folds, seed):
        train_idx = np.setdiff1d(np.arange(dataset.n), val_idx)
        tr, va = dataset.subset(train_idx), dataset.subset(val_idx)
        forest = forest_builder(tr)
        Z = lift(forest, tr.X)
        sc = _scaling(Z, _target(tr))
        path = forward_stagewise(Z, _target(tr), epsilon, max_steps, monotone, scaling=sc)
        total += validation_curve(path, sc, lift(forest, va.X), _target(va), classify,
                                  max_steps + 1)
    mean = total / folds
    k = int(np.argmin(mean))
    grid = np.arange(max_steps + 1) * epsilon
    return TSelection(float(grid[k]), grid, mean)


# ---------------------------------------------------------------- compressed model

@dataclass(frozen=True, eq=False)
class CompressedForest:
    """Pruned trees whose node values are the selected weights.

    ``predict = intercept + sum over trees of the weights of the nodes on the
    sample's path``.
    """

    trees: list
    intercept: float
    task: str = "regression"
    scaling: ColumnScaling = None
    t: float = 0.0


def _path_sums(tree: Tree, X):
    """Sum of node weights along each sample's path in ``tree``."""
    Z = lift_csr([tree], X)
    w = tree.value[:, 0]
    sums = np.zeros(Z.n_rows)
    rows = np.repeat(np.arange(Z.n_rows), np.diff(Z.indptr))
    np.add.at(sums, rows, w[Z.indices])
    return sums


def prune_tree(tree: Tree, weights):
    """Turn into leaves the test nodes whose descendants all have zero weight."""
    w = np.asarray(weights, dtype=np.float64)
    live = w != 0
    # children ids exceed their parent's, so one reverse sweep propagates liveness
    below = np.zeros(tree.n_nodes, dtype=bool)
    for t in range(tree.n_nodes - 1, -1, -1):
        if tree.feature[t] >= 0:
            l, r = tree.left[t], tree.right[t]
            below[t] = live[l] | below[l] | live[r] | below[r]
    keep_test = (tree.feature >= 0) & below
    new_id = np.full(tree.n_nodes, -1, dtype=np.int64)
    order = [0]
    new_id[0] = 0
    head = 0
    while head < len(order):
        t = order[head]
        head += 1
        if keep_test[t]:
            for c in (tree.left[t], tree.right[t]):
                new_id[c] = len(order)
                order.append(c)
    order = np.array(order, dtype=np.int64)
    is_test = keep_test[order]
    feature = np.where(is_test, tree.feature[order], -1)
    left = np.where(is_test, new_id[tree.left[order]], -1)
    right = np.where(is_test, new_id[tree.right[order]], -1)
    return Tree(feature, np.where(is_test, tree.threshold[order], 0.0), left, right,
                tree.n_samples[order], tree.impurity[order],
                np.where(is_test, tree.weighted_gain[order], 0.0), w[order][:, None],
                tree.p, "regression")


def from_weights(model, weights, intercept, task="regression", prune=True, scaling=None, t=0.0):
    """Build a :class:`CompressedForest` from flat node weights."""
    trees = _trees_of(model)
    space = IndicatorSpace.of(trees)
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != space.q:
        raise ShapeError(f"expected {space.q} node weights")
    out = []
    for tree, off, size in zip(trees, space.offsets, space.sizes):
        w = weights[off:off + size]
        if prune:
            out.append(prune_tree(tree, w))
        else:
            out.append(Tree(tree.feature, tree.threshold, tree.left, tree.right, tree.n_samples,
                            tree.impurity, tree.weighted_gain, w[:, None].copy(), tree.p))
    return CompressedForest(out, float(intercept), task, scaling, t)


def compress(forest, dataset: Dataset, t_star, epsilon=0.01, monotone=True, strict=True,
             prune=True) -> CompressedForest:
    """Refit the stagewise path on the full lift up to ``t_star`` and prune."""
    if not np.isfinite(t_star) or t_star < 0:
        raise InvalidT(f"t* must be a non-negative number, got {t_star}")
    y = _target(dataset)
    Z = lift(forest, dataset.X)
    sc = _scaling(Z, y)
    k = int(np.floor(t_star / epsilon + 1e-9))
    path = forward_stagewise(Z, y, epsilon, k, monotone, scaling=sc)
    if strict and path.n_steps < k:
        raise InvalidT(f"the path stops at t={path.t_max}, before t*={t_star}")
    beta = path.beta_at(t_star)
    w = np.where(sc.active, sc.y_scale * beta / sc.scale, 0.0)
    intercept = sc.y_mean - float(np.dot(w, sc.mean))
    return from_weights(forest, w, intercept, dataset.task, prune, sc, path.t_max)


def predict_compressed(model: CompressedForest, X):
    """Real-valued score for regression, -1/+1 labels (score >= 0 -> +1) for classification."""
    score = predict_score(model, X)
    if is_classification(model.task):
        return np.where(score >= 0, 1.0, -1.0)
    return score


def predict_score(model: CompressedForest, X):
    X = _dense_inputs(X)
    score = np.full(X.shape[0], model.intercept)
    for tree in model.trees:
        score += _path_sums(tree, X)
    return score


def node_count(model):
    """Number of test nodes of a tree, forest or compressed forest."""
    return int(sum(np.sum(t.feature >= 0) for t in _trees_of(
        model.trees if isinstance(model, CompressedForest) else model)))
