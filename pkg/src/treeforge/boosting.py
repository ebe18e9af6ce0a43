"""Gradient boosting of regression trees for single- and multi-output tasks.

Four ways of spending a stage on ``d`` outputs:

* ``single-target``: round-robin over outputs, one tree per stage fitted
  on one output's negative gradient (binary relevance / single target);
* ``mo``: one multi-output tree on the full negative gradient matrix;
* ``rpo``: one single-output tree on a random projection ``phi g`` of the
  gradient, broadcast to every output through a weight vector ``rho``;
* ``relabel-rpo``: a tree grown on ``Phi g`` (q rows) whose leaves are then
  labelled with the mean unprojected gradient vectors.

The model predicts ``rho_0 + sum_m mu * rho_m * g_m(x)`` (Hadamard product
for multi-output trees, broadcast for single-output ones).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from . import _kernels as K
from .datasets import Dataset
from .exceptions import EmptyDataset, InvalidTarget, ShapeError, Unsupported
from .matrix import CscMatrix, csc_to_csr
from .projections import ProjectionKind, project, sample_projection
from .tree import GrowthParams, Tree, apply, grow_arrays

FORMAT_VERSION = 1
MODES = ("single-target", "mo", "rpo", "relabel-rpo")

_LOSS_ALIASES = {
    "square": "square", "l2": "square", "l2-multi": "square",
    "absolute": "absolute", "l1": "absolute", "l1-multi": "absolute",
    "logistic": "logistic", "logistic-multi": "logistic",
}

RHO_CAP = 1e6


def canonical_loss(loss):
    try:
        return _LOSS_ALIASES[loss]
    except KeyError:
        raise Unsupported(f"loss {loss!r} is not a supported decomposable loss") from None


def _check_targets(loss, Y):
    if canonical_loss(loss) == "logistic" and not np.all(np.abs(Y) == 1):
        raise InvalidTarget("logistic losses need targets in {-1, +1}")


def _pointwise(loss, Y, F):
    kind = canonical_loss(loss)
    if kind == "square":
        return 0.5 * (Y - F) ** 2
    if kind == "absolute":
        return np.abs(Y - F)
    return np.logaddexp(0.0, -2.0 * Y * F)


def loss_value(loss, Y, F):
    """Mean over samples of the loss summed over outputs."""
    Y = np.asarray(Y, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    if Y.shape != F.shape:
        raise ShapeError("Y and F must have the same shape")
    _check_targets(loss, Y)
    per = _pointwise(loss, Y, F)
    return float(per.sum() / max(Y.shape[0], 1))


def loss_gradient(loss, Y, F):
    """Derivative of the per-sample loss with respect to the prediction ``F``."""
    Y = np.asarray(Y, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    _check_targets(loss, Y)
    kind = canonical_loss(loss)
    if kind == "square":
        return F - Y
    if kind == "absolute":
        return -np.sign(Y - F)
    return -2.0 * Y * expit(-2.0 * Y * F)


def negative_gradient(loss, Y, F):
    return -loss_gradient(loss, Y, F)


def constant_minimizer(loss, Y):
    """Per-output constant minimizing the summed loss.

    Mean for the square loss, median for the absolute loss and
    ``0.5 * log(n_pos / n_neg)`` for the logistic loss (class counts clamped
    at 0.5 when a class is absent).
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(Y) == 0:
        raise EmptyDataset("no samples")
    _check_targets(loss, Y)
    kind = canonical_loss(loss)
    if kind == "square":
        return Y.mean(axis=0)
    if kind == "absolute":
        return np.median(Y, axis=0)
    n_pos = np.maximum(np.sum(Y > 0, axis=0), 0.5)
    n_neg = np.maximum(np.sum(Y < 0, axis=0), 0.5)
    return 0.5 * np.log(n_pos / n_neg)


def _scalar_step(loss, y, f, h):
    """argmin_rho sum_i l(y_i, f_i + rho h_i) for a convex decomposable loss."""
    if not np.any(h != 0):
        return 0.0

    def obj(r):
        return float(np.sum(_pointwise(loss, y, f + r * h)))

    f0 = obj(0.0)
    b = 1.0
    # convexity: once both ends are no better than 0 the minimum lies inside
    while b < RHO_CAP and (obj(b) < f0 or obj(-b) < f0):
        b *= 2.0
    b = min(b, RHO_CAP)
    res = minimize_scalar(obj, bounds=(-b, b), method="bounded",
                          options={"xatol": 1e-8, "maxiter": 100})
    rho = float(res.x)
    return rho if obj(rho) <= f0 else 0.0


def line_search_rho(loss, Y, F_prev, weak_outputs, mask=None):
    """Per-output optimal step length along the weak model's outputs.

    ``weak_outputs`` is n x d (multi-output weak model) or n x 1 (broadcast
    to every output).  Square loss uses the least-squares closed form
    sum_i r_ij h_ij / sum_i h_ij^2; other losses a bounded Brent search.
    Outputs with ``mask[j] == False`` get rho_j = 0.
    """
    Y = np.asarray(Y, dtype=np.float64)
    F_prev = np.asarray(F_prev, dtype=np.float64)
    H = np.asarray(weak_outputs, dtype=np.float64)
    if H.ndim == 1:
        H = H[:, None]
    kind = canonical_loss(loss)
    _check_targets(loss, Y)
    d = Y.shape[1]
    if H.shape[0] != Y.shape[0] or H.shape[1] not in (1, d):
        raise ShapeError("weak outputs must be n x d or n x 1")
    H = np.broadcast_to(H, Y.shape)
    rho = np.zeros(d)
    for j in range(d):
        if mask is not None and not mask[j]:
            continue
        h = H[:, j]
        if kind == "square":
            den = np.dot(h, h)
            rho[j] = np.dot(Y[:, j] - F_prev[:, j], h) / den if den > 0 else 0.0
        else:
            rho[j] = _scalar_step(kind, Y[:, j], F_prev[:, j], h)
    return rho


# ---------------------------------------------------------------- model

@dataclass(frozen=True)
class BoostParams:
    n_stages: int = 100
    mu: float = 1.0
    loss: str = "square"
    tree_params: GrowthParams = field(default_factory=lambda: GrowthParams(max_leaves=2))
    projection: ProjectionKind = field(default_factory=lambda: ProjectionKind("subsample"))
    q: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_stages < 0:
            raise ValueError("n_stages must be >= 0")
        if not 0 < self.mu <= 1:
            raise ValueError("mu must lie in (0, 1]")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        canonical_loss(self.loss)


@dataclass(frozen=True, eq=False)
class Stage:
    tree: Tree
    rho: np.ndarray
    phi: Optional[np.ndarray] = None  # dense projection used to grow the tree
    output: int = -1  # single-target stages: the output being fitted


@dataclass(frozen=True, eq=False)
class GBModel:
    rho0: np.ndarray
    stages: list
    mu: float
    loss: str
    mode: str
    p: int

    @property
    def d(self):
        return len(self.rho0)


def _stage_streams(seed, m):
    ss = np.random.SeedSequence(seed, spawn_key=(m,))
    return int(ss.generate_state(1)[0]), np.random.default_rng(ss.spawn(1)[0])


def _weak_outputs(stage: Stage, X):
    return stage.tree.value[apply(stage.tree, X)]


def _prepare(dataset: Dataset, params: BoostParams):
    if dataset.n == 0:
        raise EmptyDataset("cannot boost on zero samples")
    Y = dataset.Y
    _check_targets(params.loss, Y)
    X = dataset.X
    return X, Y, constant_minimizer(params.loss, Y)


def _fit(dataset: Dataset, params: BoostParams, mode):
    X, Y, rho0 = _prepare(dataset, params)
    n, d = Y.shape
    kind = canonical_loss(params.loss)
    F = np.tile(rho0, (n, 1))
    stages = []
    for m in range(params.n_stages):
        tree_seed, rng = _stage_streams(params.seed, m)
        tp = params.tree_params.replace(seed=tree_seed, impurity="variance")
        G = negative_gradient(kind, Y, F)
        phi = None
        mask = None
        out = -1
        if mode == "single-target":
            out = m % d
            target = G[:, out:out + 1]
            tree = grow_arrays(X, target, target, tp, K.SUMSQ, 1)
            mask = np.arange(d) == out
        elif mode == "mo":
            tree = grow_arrays(X, G, G, tp, K.SUMSQ, d)
        elif mode == "rpo":
            proj = sample_projection(params.projection, 1, d, rng)
            phi = proj.dense()
            target = project(proj, G)
            tree = grow_arrays(X, target, target, tp, K.SUMSQ, 1)
        elif mode == "relabel-rpo":
            proj = sample_projection(params.projection, params.q, d, rng)
            phi = proj.dense()
            # grown on Phi g, every node labelled by the mean unprojected gradient
            tree = grow_arrays(X, project(proj, G), G, tp, K.SUMSQ, params.q)
        else:
            raise ValueError(f"unknown boosting mode {mode!r}")
        H = tree.value[apply(tree, X)]
        rho = line_search_rho(kind, Y, F, H, mask)
        F = F + params.mu * rho * H
        stages.append(Stage(tree, rho, phi, out))
    return GBModel(rho0, stages, params.mu, kind, mode, dataset.p)


def fit_gb(dataset: Dataset, params: BoostParams = BoostParams()) -> GBModel:
    """Gradient boosting per output; several outputs are visited round-robin."""
    return _fit(dataset, params, "single-target")


def fit_gbmort(dataset: Dataset, params: BoostParams = BoostParams()) -> GBModel:
    """Gradient boosting with multi-output regression trees."""
    return _fit(dataset, params, "mo")


def fit_gbrt_rpo(dataset: Dataset, params: BoostParams = BoostParams()) -> GBModel:
    """Gradient boosting on one random projection of the gradient per stage."""
    return _fit(dataset, params, "rpo")


def fit_gbrt_relabel_rpo(dataset: Dataset, params: BoostParams = BoostParams()) -> GBModel:
    """Gradient boosting on q random projections with leaves relabelled in the gradient space."""
    return _fit(dataset, params, "relabel-rpo")


FITTERS = {"single-target": fit_gb, "mo": fit_gbmort, "rpo": fit_gbrt_rpo,
           "relabel-rpo": fit_gbrt_relabel_rpo}


def staged_predict(model: GBModel, X):
    """Yield the prediction after 0, 1, ..., M stages."""
    if isinstance(X, CscMatrix):
        X = csc_to_csr(X)
    n = X.shape[0]
    F = np.tile(model.rho0, (n, 1))
    yield F.copy()
    for stage in model.stages:
        F = F + model.mu * stage.rho * _weak_outputs(stage, X)
        yield F.copy()


def predict_gb(model: GBModel, X):
    F = None
    for F in staged_predict(model, X):
        pass
    return F


def staged_training_loss(model: GBModel, dataset: Dataset):
    """Loss of the additive expansion after each stage; index 0 is the constant model."""
    return np.array([loss_value(model.loss, dataset.Y, F) for F in staged_predict(model, dataset.X)])


def predict_proba(model: GBModel, X):
    """Positive-class probability of a logistic model, ``1 / (1 + exp(-2F))``."""
    return expit(2.0 * predict_gb(model, X))


# ---------------------------------------------------------------- persistence

def gb_to_dict(model: GBModel):
    return {
        "format": "treeforge.gb",
        "version": FORMAT_VERSION,
        "rho0": model.rho0.tolist(),
        "mu": model.mu,
        "loss": model.loss,
        "mode": model.mode,
        "p": model.p,
        "stages": [
            {
                "tree": s.tree.to_dict(),
                "rho": s.rho.tolist(),
                "phi": None if s.phi is None else s.phi.tolist(),
                "output": s.output,
            }
            for s in model.stages
        ],
    }


def gb_from_dict(obj) -> GBModel:
    if obj.get("format") != "treeforge.gb" or obj.get("version") != FORMAT_VERSION:
        raise ValueError("not a treeforge boosting record of a supported version")
    stages = [Stage(Tree.from_dict(s["tree"]), np.array(s["rho"], dtype=np.float64),
                    None if s["phi"] is None else np.array(s["phi"], dtype=np.float64),
                    s["output"]) for s in obj["stages"]]
    return GBModel(np.array(obj["rho0"], dtype=np.float64), stages, obj["mu"], obj["loss"],
                   obj["mode"], obj["p"])


def save_gb(model: GBModel, path):
    with open(path, "w") as fh:
        json.dump(gb_to_dict(model), fh)


def load_gb(path) -> GBModel:
    with open(path) as fh:
        return gb_from_dict(json.load(fh))
