import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from treeforge.exceptions import EmptyDataset, EmptyPartition, InvalidSplit, RelabelError, ShapeError
from treeforge.matrix import csc_from_triplets, csc_to_csr, densify, sparsify
from treeforge.tree import (GrowthParams, NodePartition, Tree, extract_nnz, extract_nnz_bsearch,
                            extract_nnz_mapping, find_best_split_dense, find_best_split_sparse,
                            grow, grow_xy, hard_labels, impurity, impurity_reduction, label_leaf,
                            load_tree, mdi_importances, node_count, predict, predict_csr,
                            predict_dense, relabel_leaves, save_tree, uses_mapping)
from treeforge.datasets import Dataset

from conftest import random_sparse_dense


def classes(pos, neg):
    return np.array([1.0] * pos + [0.0] * neg)


# ---------------------------------------------------------------- impurity

def test_impurity_examples():
    assert impurity(classes(4, 0), "gini") == 0 and impurity(classes(4, 0), "entropy") == 0
    assert impurity(classes(5, 5), "gini") == pytest.approx(0.5)
    assert impurity(classes(5, 5), "entropy") == pytest.approx(math.log(2))
    assert impurity([1.0, 2.0, 3.0], "variance") == pytest.approx(2 / 3)
    with pytest.raises(EmptyPartition):
        impurity(np.zeros((0, 1)))


def test_impurity_reduction_perfect():
    parent = classes(5, 5)
    assert impurity_reduction(parent, classes(5, 0), classes(0, 5), "gini") == pytest.approx(0.5)
    with pytest.raises(InvalidSplit):
        impurity_reduction(parent, parent, [], "gini")


def test_textbook_500_500_example():
    parent = classes(500, 500)
    first = (classes(125, 375), classes(375, 125))
    second = (classes(250, 0), classes(250, 500))
    # entropy values as printed
    assert impurity_reduction(parent, *first, "entropy") == pytest.approx(0.131, abs=5e-4)
    assert impurity_reduction(parent, *second, "entropy") == pytest.approx(0.216, abs=5e-4)
    # printed Gini reductions are half of sum p(1-p): 0.0625 and 0.083
    assert impurity_reduction(parent, *first, "gini") == pytest.approx(2 * 0.0625)
    assert impurity_reduction(parent, *second, "gini") == pytest.approx(2 * 0.0833, abs=1e-3)


# ---------------------------------------------------------------- split search

def brute_force_best(X, Y, kind="variance"):
    best = -np.inf
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (lo + hi)
            mask = X[:, j] <= thr
            best = max(best, impurity_reduction(Y, Y[mask], Y[~mask], kind))
    return best


def test_constant_feature_no_split():
    assert find_best_split_dense(np.ones((3, 1)), [0.0, 1.0, 2.0], [0, 1, 2]) is None


def test_two_point_split():
    rec = find_best_split_dense(np.array([[0.0], [1.0]]), np.array([1.0, -1.0]), [0, 1],
                                task="binary-classification")
    assert rec.threshold == 0.5 and rec.feature == 0
    assert rec.impurity_decrease == pytest.approx(0.5)


@given(st.integers(2, 25), st.integers(1, 5), st.integers(0, 10**6), st.sampled_from(["variance", "gini"]))
def test_best_split_matches_brute_force(n, p, seed, kind):
    rng = np.random.default_rng(seed)
    X = rng.integers(-3, 4, size=(n, p)).astype(float)
    if kind == "gini":
        Y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        task = "binary-classification"
    else:
        Y = rng.standard_normal(n)
        task = "regression"
    rec = find_best_split_dense(X, Y, np.arange(n), GrowthParams(impurity=kind), task=task)
    ref = brute_force_best(X, (Y > 0).astype(float) if kind == "gini" else Y, kind)
    if rec is None:
        assert ref == -np.inf or ref <= 1e-9 * max(impurity(Y if kind == "variance" else Y > 0, kind), 1)
    else:
        assert rec.impurity_decrease == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_sparse_hand_example():
    # column {-1 x2, 0 x3, +2 x1}; +2 is class B, the rest class A
    col = np.array([-1.0, -1.0, 0.0, 0.0, 0.0, 2.0])
    y = np.array([-1.0] * 5 + [1.0])
    X = sparsify(col[:, None])
    rec = find_best_split_sparse(X, y, NodePartition.identity(6), 0, 6, task="binary-classification")
    assert rec.threshold == 1.0
    assert rec.impurity_decrease == pytest.approx(impurity(y > 0, "gini"))
    zero = sparsify(np.zeros((6, 1)))
    assert find_best_split_sparse(zero, y, NodePartition.identity(6), 0, 6,
                                  task="binary-classification") is None


# ---------------------------------------------------------------- extraction

EXTRACTORS = (extract_nnz_mapping, extract_nnz_bsearch, extract_nnz)


@pytest.mark.parametrize("fn", EXTRACTORS)
def test_extract_empty_column(fn):
    X = csc_from_triplets([(0, 1, 1.0)], 4, 2)
    part = NodePartition.identity(4)
    before = part.L.copy()
    neg, pos, n_neg, n_pos = fn(X, 0, part, 0, 4)
    assert (n_neg, n_pos) == (0, 0) and len(neg) == 0 and len(pos) == 0
    assert np.array_equal(part.L, before)


@pytest.mark.parametrize("fn", EXTRACTORS)
def test_extract_hand_trace(fn):
    X = csc_from_triplets([(2, 0, -1.5), (5, 0, 2.0)], 8, 1)
    part = NodePartition(np.array([0, 1, 3, 4, 6, 2, 5, 7]))
    neg, pos, n_neg, n_pos = fn(X, 0, part, 5, 8)
    assert (n_neg, n_pos) == (1, 1)
    assert list(neg) == [-1.5] and list(pos) == [2.0]
    assert list(part.L[5:8]) == [2, 7, 5]
    assert part.invariant_holds()
    assert sorted(part.L[:5]) == [0, 1, 3, 4, 6]


@pytest.mark.parametrize("fn", EXTRACTORS)
def test_extract_matches_dense_partition(fn):
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(1, 30))
        x = random_sparse_dense(rng, n, 1, rng.choice([0.1, 0.5, 0.9]))
        part = NodePartition(rng.permutation(n))
        start = int(rng.integers(0, n))
        end = int(rng.integers(start + 1, n + 1))
        node = set(part.L[start:end].tolist())
        neg, pos, n_neg, n_pos = fn(sparsify(x), 0, part, start, end)
        assert part.invariant_holds()
        assert set(part.L[start:end].tolist()) == node
        L = part.L
        assert np.all(x[L[start:start + n_neg], 0] < 0)
        assert np.all(x[L[start + n_neg:end - n_pos], 0] == 0)
        assert np.all(x[L[end - n_pos:end], 0] > 0)
        ids = sorted(node)
        assert list(neg) == [x[i, 0] for i in ids if x[i, 0] < 0]
        assert list(pos) == [x[i, 0] for i in ids if x[i, 0] > 0]


def test_switch_rule():
    # binary search only when the node is small next to the column's fill
    assert not uses_mapping(2, 10**6)
    assert uses_mapping(10**5, 10)
    assert not uses_mapping(5, 0)


# ---------------------------------------------------------------- growth

def trees_equal(a: Tree, b: Tree):
    return (np.array_equal(a.feature, b.feature) and np.array_equal(a.threshold, b.threshold)
            and np.array_equal(a.left, b.left) and np.array_equal(a.right, b.right)
            and np.array_equal(a.value, b.value))


def test_single_sample_tree():
    t = grow(Dataset(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]])))
    assert t.n_nodes == 1 and np.array_equal(t.value[0], [3.0, 4.0])
    with pytest.raises(EmptyDataset):
        grow_xy(np.zeros((0, 2)), np.zeros(0))


def test_separable_stump():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([-1.0, -1.0, 1.0, 1.0])
    t = grow(Dataset(X, y, "binary-classification"))
    assert t.n_nodes == 3 and t.depth().max() == 1
    assert np.array_equal(hard_labels(predict(t, X)[:, 0]), y)


@given(st.integers(1, 60), st.integers(1, 6), st.integers(0, 10**6))
def test_full_tree_zero_resubstitution(n, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(n, p)).astype(float)
    _, first = np.unique(X, axis=0, return_inverse=True)
    Y = rng.standard_normal((len(np.unique(first)), 2))[first.ravel()]
    t = grow_xy(X, Y, GrowthParams(n_min=1))
    assert np.allclose(predict(t, X), Y, atol=1e-12)


@given(st.integers(2, 80), st.integers(1, 8), st.sampled_from([0.01, 0.1, 0.5, 1.0]),
       st.integers(0, 10**6), st.sampled_from(["exhaustive", "random-threshold"]),
       st.sampled_from([None, 4]), st.sampled_from(["regression", "binary-classification"]))
def test_sparse_dense_equivalence(n, p, dens, seed, splitter, max_leaves, task):
    rng = np.random.default_rng(seed)
    X = random_sparse_dense(rng, n, p, dens)
    Y = rng.standard_normal((n, 2)) if task == "regression" else np.where(rng.random(n) < .5, 1., -1.)
    params = GrowthParams(k=max(1, p // 2), splitter=splitter, max_leaves=max_leaves, seed=seed)
    a = grow_xy(X, Y, params, task)
    b = grow_xy(sparsify(X), Y, params, task)
    c = grow_xy(np.asfortranarray(X), Y, params, task)
    assert trees_equal(a, b) and trees_equal(a, c)


def test_children_after_parents_and_best_first():
    rng = np.random.default_rng(1)
    X, y = rng.standard_normal((200, 4)), rng.standard_normal(200)
    for ml in (2, 4, 8, 16):
        t = grow_xy(X, y, GrowthParams(max_leaves=ml))
        assert t.n_leaves == ml
        internal = np.flatnonzero(t.feature >= 0)
        assert np.all(t.left[internal] > internal) and np.all(t.right[internal] > internal)


def test_nested_leaf_budgets_monotone():
    rng = np.random.default_rng(2)
    X, y = rng.standard_normal((300, 5)), rng.standard_normal(300)
    losses = [np.mean((predict(grow_xy(X, y, GrowthParams(max_leaves=ml)), X)[:, 0] - y) ** 2)
              for ml in (2, 4, 8, 16, 32)]
    assert all(a >= b for a, b in zip(losses, losses[1:]))


def test_max_depth_and_n_min():
    rng = np.random.default_rng(3)
    X, y = rng.standard_normal((100, 3)), rng.standard_normal(100)
    assert grow_xy(X, y, GrowthParams(max_depth=2)).depth().max() <= 2
    t = grow_xy(X, y, GrowthParams(n_min=30))
    internal = t.feature >= 0
    assert np.all(t.n_samples[internal] >= 30)


def test_label_leaf():
    assert np.array_equal(label_leaf(np.array([[1.0, 2.0]])), [1.0, 2.0])
    assert np.array_equal(label_leaf(np.array([[1.0, 2.0], [3.0, 4.0]])), [2.0, 3.0])
    p = label_leaf(np.array([-1.0, 1.0]), "binary-classification")
    assert p[0] == 0.5 and hard_labels(p)[0] == 1.0


# ---------------------------------------------------------------- prediction

def test_stump_trace_and_shape_errors():
    X = np.array([[0.0], [1.0]])
    t = grow_xy(X, np.array([5.0, 7.0]))
    assert t.threshold[0] == 0.5
    assert np.array_equal(predict_dense(t, X)[:, 0], [5.0, 7.0])
    with pytest.raises(ShapeError):
        predict_dense(t, np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        predict_csr(t, csc_to_csr(sparsify(np.zeros((2, 3)))))


def test_csr_prediction_bit_exact():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n, p = int(rng.integers(5, 60)), int(rng.integers(1, 10))
        X = random_sparse_dense(rng, n, p, 0.3)
        t = grow_xy(X, rng.standard_normal(n), GrowthParams(seed=int(rng.integers(1000))))
        Xt = random_sparse_dense(rng, 40, p, 0.3)
        assert np.array_equal(predict_csr(t, sparsify(Xt, "csr")), predict_dense(t, Xt))


# ---------------------------------------------------------------- relabel, MDI, I/O

def test_relabel():
    rng = np.random.default_rng(5)
    X, Y = rng.standard_normal((80, 3)), rng.standard_normal((80, 2))
    t = grow_xy(X, Y, GrowthParams(max_leaves=6))
    assert np.allclose(relabel_leaves(t, X, Y).value, t.value)
    root = grow_xy(X, Y, GrowthParams(max_depth=0))
    Z = rng.standard_normal((80, 4))
    assert np.allclose(relabel_leaves(root, X, Z).value[0], Z.mean(axis=0))
    with pytest.raises(RelabelError):
        relabel_leaves(t, X[:1], Y[:1])


def test_relabel_after_invertible_projection():
    rng = np.random.default_rng(6)
    X, Y = rng.standard_normal((120, 3)), rng.standard_normal((120, 3))
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    t_proj = grow_xy(X, Y @ Q.T, GrowthParams(max_leaves=5))
    t = relabel_leaves(t_proj, X, Y)
    leaves = t.feature < 0
    # original-space means per leaf
    from treeforge.tree import apply
    ids = apply(t, X)
    for leaf in np.flatnonzero(leaves):
        assert np.allclose(t.value[leaf], Y[ids == leaf].mean(axis=0))


def test_mdi():
    rng = np.random.default_rng(7)
    X, y = rng.standard_normal((50, 4)), rng.standard_normal(50)
    assert np.all(mdi_importances(grow_xy(X, y, GrowthParams(max_depth=0))) == 0)
    stump = grow_xy(X, y, GrowthParams(max_depth=1))
    imp = mdi_importances(stump)
    assert imp[stump.feature[0]] == 1.0 and imp.sum() == 1.0
    assert node_count(stump) == 1


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    X, y = rng.standard_normal((50, 4)), rng.standard_normal((50, 2))
    t = grow_xy(X, y)
    save_tree(t, tmp_path / "t.json")
    back = load_tree(tmp_path / "t.json")
    assert trees_equal(t, back)
    assert np.array_equal(predict(back, X), predict(t, X))


def test_params_validation():
    with pytest.raises(ValueError):
        GrowthParams(max_leaves=1)
    with pytest.raises(ValueError):
        GrowthParams(splitter="best")
    with pytest.raises(ValueError):
        grow_xy(np.zeros((3, 2)), np.zeros(3), GrowthParams(k=3))


def test_dense_equals_itertools_brute_on_grid():
    X = np.array(list(itertools.product([0.0, 1.0, 2.0], repeat=2)))
    y = X[:, 0] * 2 + (X[:, 1] > 1)
    rec = find_best_split_dense(X, y, np.arange(9))
    assert rec.impurity_decrease == pytest.approx(brute_force_best(X, y))
