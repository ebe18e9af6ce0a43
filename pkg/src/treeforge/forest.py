"""Averaging ensembles of trees: bagging, random forests, extra-trees.

Optionally each tree is grown on randomly projected outputs ``Phi y``
(one shared ``Phi`` for the whole forest or a fresh one per tree), with
leaves labelled by the original outputs of the samples reaching them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .datasets import Dataset
from .exceptions import EmptyDataset, ShapeError
from .matrix import CscMatrix, csc_to_csr, take_rows
from .projections import ProjectionKind, project, sample_projection
from .tree import (GrowthParams, Tree, _default_impurity, _split_targets, apply, grow_arrays,
                   leaf_targets)
from . import _kernels as K

FORMAT_VERSION = 1
_SHARED_KEY = 1
_TREE_KEY = 0


@dataclass(frozen=True)
class ProjectionSpec:
    kind: ProjectionKind = field(default_factory=ProjectionKind)
    q: int = 1
    shared: bool = False

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("projection q must be >= 1")


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 10
    tree_params: GrowthParams = field(default_factory=GrowthParams)
    bootstrap: bool = True
    projection: Optional[ProjectionSpec] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")


def random_forest(n_trees=100, k=None, seed=0, **tree_kw):
    return ForestParams(n_trees, GrowthParams(k=k, **tree_kw), True, None, seed)


def extra_trees(n_trees=100, k=None, seed=0, **tree_kw):
    return ForestParams(n_trees, GrowthParams(k=k, splitter="random-threshold", **tree_kw),
                        False, None, seed)


@dataclass(frozen=True, eq=False)
class Forest:
    trees: list
    task: str
    params: ForestParams

    @property
    def d(self):
        return self.trees[0].d

    @property
    def p(self):
        return self.trees[0].p

    def oob(self, n):
        return oob_indices(n, self.params.seed, self.params.n_trees, self.params.bootstrap)


def _tree_streams(seed, m):
    """Growth seed and bootstrap / projection generators of tree ``m``."""
    ss = np.random.SeedSequence(seed, spawn_key=(_TREE_KEY, m))
    boot, phi = ss.spawn(2)
    return int(ss.generate_state(1)[0]), np.random.default_rng(boot), np.random.default_rng(phi)


def bootstrap_indices(n, seed, m):
    """The bootstrap replicate (n draws with replacement) used by tree ``m``."""
    return _tree_streams(seed, m)[1].integers(0, n, size=n)


def oob_indices(n, seed, n_trees, bootstrap=True):
    """Per-tree out-of-bag sample ids: the complement of each bag's support."""
    if not bootstrap:
        return [np.zeros(0, dtype=np.int64) for _ in range(n_trees)]
    out = []
    for m in range(n_trees):
        inbag = np.zeros(n, dtype=bool)
        inbag[bootstrap_indices(n, seed, m)] = True
        out.append(np.flatnonzero(~inbag))
    return out


def shared_projection(params: ForestParams, d):
    spec = params.projection
    rng = np.random.default_rng(np.random.SeedSequence(params.seed, spawn_key=(_SHARED_KEY,)))
    return sample_projection(spec.kind, spec.q, d, rng)


def fit_forest(dataset: Dataset, params: ForestParams = ForestParams()) -> Forest:
    """Grow ``params.n_trees`` trees; leaf values always live in the original output space."""
    if dataset.n == 0:
        raise EmptyDataset("cannot fit a forest on zero samples")
    X, Y, task = dataset.X, dataset.Y, dataset.task
    V_all = leaf_targets(Y, task)
    spec = params.projection
    phi_shared = shared_projection(params, dataset.d) if spec is not None and spec.shared else None
    if spec is None:
        kind = params.tree_params.impurity or _default_impurity(task)
        W_all, crit = _split_targets(Y, kind)
    trees = []
    for m in range(params.n_trees):
        tree_seed, boot_rng, phi_rng = _tree_streams(params.seed, m)
        if params.bootstrap:
            rows = boot_rng.integers(0, dataset.n, size=dataset.n)
            Xm, Vm = take_rows(X, rows), V_all[rows]
        else:
            rows, Xm, Vm = None, X, V_all
        if spec is None:
            Wm = W_all if rows is None else W_all[rows]
            n_out = Y.shape[1]
        else:
            phi = phi_shared if spec.shared else sample_projection(spec.kind, spec.q, dataset.d, phi_rng)
            Wm = project(phi, Vm)
            crit, n_out = K.SUMSQ, spec.q
        tp = params.tree_params.replace(seed=tree_seed)
        # growing with V = original outputs labels every node by the original-space mean
        trees.append(grow_arrays(Xm, Wm, Vm, tp, crit, n_out, task=task))
    return Forest(trees, task, params)


def predict_forest(forest: Forest, X):
    """Average of the member trees' predictions (soft voting for classification)."""
    if isinstance(X, CscMatrix):
        X = csc_to_csr(X)
    out = None
    for tree in forest.trees:
        pred = tree.value[apply(tree, X)]
        out = pred.copy() if out is None else out + pred
    return out / len(forest.trees)


def forest_to_dict(forest: Forest):
    params = asdict(forest.params)
    return {
        "format": "treeforge.forest",
        "version": FORMAT_VERSION,
        "task": forest.task,
        "params": params,
        "trees": [t.to_dict() for t in forest.trees],
    }


def _params_from_dict(obj):
    proj = obj.get("projection")
    if proj is not None:
        proj = ProjectionSpec(ProjectionKind(**proj["kind"]), proj["q"], proj["shared"])
    return ForestParams(obj["n_trees"], GrowthParams(**obj["tree_params"]), obj["bootstrap"],
                        proj, obj["seed"])


def forest_from_dict(obj) -> Forest:
    if obj.get("format") != "treeforge.forest" or obj.get("version") != FORMAT_VERSION:
        raise ValueError("not a treeforge forest record of a supported version")
    trees = [Tree.from_dict(t) for t in obj["trees"]]
    if len({(t.p, t.d) for t in trees}) != 1:
        raise ShapeError("member trees disagree on their dimensions")
    return Forest(trees, obj["task"], _params_from_dict(obj["params"]))


def save_forest(forest: Forest, path):
    with open(path, "w") as fh:
        json.dump(forest_to_dict(forest), fh)


def load_forest(path) -> Forest:
    with open(path) as fh:
        return forest_from_dict(json.load(fh))
