"""Learning samples: synthetic generators, file readers, splits and scaling.

A :class:`Dataset` pairs an input matrix ``X`` (dense ``ndarray`` or
:class:`~treeforge.matrix.CscMatrix`) with a dense output matrix ``Y`` of
shape ``(n, d)``.  Binary targets are encoded as -1/+1, multilabel targets
as 0/1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyDataset, ParseError, ShapeError, Unsupported
from .matrix import CscMatrix, CsrMatrix, _csc_from_coo, csc_to_csr, take_rows

TASKS = ("regression", "binary-classification", "multilabel")


@dataclass(frozen=True, eq=False)
class Dataset:
    X: object
    Y: np.ndarray
    task: str = "regression"

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.ndim != 2:
            raise ShapeError("Y must be 1-d or 2-d")
        object.__setattr__(self, "Y", Y)
        X = self.X
        if isinstance(X, CsrMatrix):
            raise ShapeError("store sparse inputs as CscMatrix")
        if not isinstance(X, CscMatrix):
            X = np.asarray(X, dtype=np.float64)
            if X.ndim != 2:
                raise ShapeError("X must be 2-d")
            object.__setattr__(self, "X", X)
        if X.shape[0] != Y.shape[0]:
            raise ShapeError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "multilabel" and not np.all((Y == 0) | (Y == 1)):
            raise ValueError("multilabel targets must be 0/1")
        if self.task == "binary-classification" and not np.all(np.abs(Y) == 1):
            raise ValueError("binary targets must be -1/+1")

    @property
    def n(self):
        return self.Y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def d(self):
        return self.Y.shape[1]

    @property
    def is_sparse(self):
        return isinstance(self.X, CscMatrix)

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(take_rows(self.X, rows), self.Y[rows], self.task)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.75
    seed: int = 0
    stratified: bool = False

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")


def _check_n(n):
    if n < 1:
        raise EmptyDataset("n must be at least 1")


# ---------------------------------------------------------------- friedman1

def friedman1_function(X, x5_coef=5.0):
    """Noise-free Friedman #1 response of the first five columns of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    return (10.0 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20.0 * (X[:, 2] - 0.5) ** 2
            + 10.0 * X[:, 3] + x5_coef * X[:, 4])


def _draw_inputs(rng, n, p, input_law):
    if input_law == "uniform":
        return rng.uniform(0.0, 1.0, size=(n, p))
    if input_law == "normal":
        return rng.standard_normal((n, p))
    raise ValueError(f"unknown input law {input_law!r}")


@dataclass(frozen=True)
class Friedman1Problem:
    """Friedman #1 as a data distribution with a known regression function.

    Used by the bias-variance harness, which needs ``f`` itself.
    """

    noise_sd: float = 1.0
    p: int = 10
    input_law: str = "uniform"
    x5_coef: float = 5.0

    @property
    def noise_variance(self):
        return self.noise_sd**2

    def sample_inputs(self, n, rng):
        return _draw_inputs(rng, n, self.p, self.input_law)

    def bayes(self, X):
        return friedman1_function(X, self.x5_coef)[:, None]

    def sample(self, n, rng):
        _check_n(n)
        X = self.sample_inputs(n, rng)
        y = self.bayes(X) + self.noise_sd * rng.standard_normal((n, 1))
        return Dataset(X, y)


def gen_friedman1(n, noise_sd=1.0, seed=0, *, p=10, input_law="uniform", x5_coef=5.0):
    """Friedman #1: ``y = 10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5 + eps``."""
    if p < 5:
        raise ValueError("friedman1 needs p >= 5")
    return Friedman1Problem(noise_sd, p, input_law, x5_coef).sample(n, np.random.default_rng(seed))


def gen_friedman1_chain(n, d, seed=0, *, input_law="normal", x5_coef=5.0):
    """Outputs forming a chain: ``y_1 = f(x) + e_1`` and ``y_j = y_{j-1} + e_j``."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    X = _draw_inputs(rng, n, 5, input_law)
    eps = rng.standard_normal((n, d))
    Y = np.cumsum(eps, axis=1) + friedman1_function(X, x5_coef)[:, None]
    return Dataset(X, Y)


def gen_friedman1_group(n, d, seed=0, *, input_law="normal", x5_coef=5.0):
    """One noise-free response shared by all outputs plus independent noise."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    X = _draw_inputs(rng, n, 5, input_law)
    eps = rng.standard_normal((n, d))
    return Dataset(X, friedman1_function(X, x5_coef)[:, None] + eps)


def gen_friedman1_ind(n, d, seed=0, *, input_law="normal", x5_coef=5.0):
    """``d`` independent Friedman tasks, output ``j`` reading features ``5j..5j+4``."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    X = _draw_inputs(rng, n, 5 * d, input_law)
    eps = rng.standard_normal((n, d))
    F = np.column_stack([friedman1_function(X[:, 5 * j:5 * j + 5], x5_coef) for j in range(d)])
    return Dataset(X, F + eps)


TWONORM_A = 2.0 / np.sqrt(20.0)


def gen_twonorm(n, seed=0):
    """Two Gaussian classes centred at -a and +a on 20 features, labels -1/+1."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) < n // 2, -1.0, 1.0)
    y = y[rng.permutation(n)]
    X = rng.standard_normal((n, 20)) + TWONORM_A * y[:, None]
    return Dataset(X, y[:, None], "binary-classification")


def gen_multilabel(n, d, p=20, seed=0, *, noise_sd=0.5, rank=3):
    """Correlated multilabel task from a low-rank linear latent model.

    Scores ``X A B + noise`` with A (p x rank), B (rank x d) Gaussian; label j
    is on when its score exceeds the column's 70% quantile, so each label is
    positive for about 30% of the samples.
    """
    _check_n(n)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    A = rng.standard_normal((p, rank)) / np.sqrt(p)
    B = rng.standard_normal((rank, d))
    S = X @ A @ B + noise_sd * rng.standard_normal((n, d))
    Y = (S > np.quantile(S, 0.7, axis=0)).astype(np.float64)
    return Dataset(X, Y, "multilabel")


def gen_random_sparse_regression(n, p, density, seed=0):
    """CSC inputs with N(0,1) non-zeros at the given expected density, y ~ U[0,1]."""
    _check_n(n)
    if not 0 <= density <= 1:
        raise ValueError("density must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    size = n * p
    if density >= 1:
        flat = np.arange(size, dtype=np.int64)
    else:
        nnz = rng.binomial(size, density)
        flat = np.sort(rng.choice(size, size=nnz, replace=False)).astype(np.int64)
    cols, rows = np.divmod(flat, n)
    vals = rng.standard_normal(len(flat))
    vals[vals == 0] = 1.0  # keep the sparsity pattern exact
    X = _csc_from_coo(rows, cols, vals, n, p)
    y = rng.uniform(0.0, 1.0, size=(n, 1))
    return Dataset(X, y)


# ---------------------------------------------------------------- file I/O

def _parse_targets(tok, line_no):
    try:
        if "," in tok:
            return [int(t) for t in tok.split(",") if t != ""], True
        return float(tok), False
    except ValueError:
        raise ParseError(line_no, f"bad target {tok!r}") from None


def load_svmlight(path, *, task="auto", n_features=None, n_labels=None):
    """Read an SVMlight / libsvm file into a CSC dataset.

    Feature indices are 1-based on disk and 0-based in memory.  A target
    field with commas (or a line starting directly with ``idx:value``) is a
    multilabel row.  With ``task="auto"`` a file whose targets are all -1/+1
    is read as binary classification and any other numeric file as
    regression.
    """
    rows, cols, vals, targets = [], [], [], []
    multilabel = False
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            if ":" in toks[0]:
                target, is_ml = [], True
            else:
                target, is_ml = _parse_targets(toks[0], line_no)
                toks = toks[1:]
            multilabel |= is_ml
            prev = 0
            i = len(targets)
            for tok in toks:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise ParseError(line_no, f"expected idx:value, got {tok!r}")
                try:
                    j = int(idx)
                    v = float(val)
                except ValueError:
                    raise ParseError(line_no, f"bad feature {tok!r}") from None
                if j < 1:
                    raise ParseError(line_no, "feature indices are 1-based")
                if j <= prev:
                    raise ParseError(line_no, "feature indices must be increasing")
                prev = j
                if v != 0:
                    rows.append(i)
                    cols.append(j - 1)
                    vals.append(v)
            targets.append(target)
    n = len(targets)
    if n == 0:
        raise EmptyDataset(f"{path} holds no samples")
    p = max(cols, default=-1) + 1
    if n_features is not None:
        if n_features < p:
            raise ShapeError(f"file uses {p} features, more than n_features={n_features}")
        p = n_features
    X = _csc_from_coo(rows, cols, vals, n, p)
    if task == "auto":
        task = "multilabel" if multilabel else "regression"
        if not multilabel and all(t in (-1.0, 1.0) for t in targets):
            task = "binary-classification"
    if task == "multilabel":
        labels = [t if isinstance(t, list) else [int(t)] for t in targets]
        d = max((max(t) for t in labels if t), default=-1) + 1
        if n_labels is not None:
            d = n_labels
        Y = np.zeros((n, max(d, 1)))
        for i, t in enumerate(labels):
            Y[i, t] = 1.0
        return Dataset(X, Y, "multilabel")
    if multilabel:
        raise ParseError(0, "label lists found in a non-multilabel file")
    return Dataset(X, np.asarray(targets, dtype=np.float64), task)


def write_svmlight(ds: Dataset, path):
    """Write ``ds`` in the format read by :func:`load_svmlight` (exact float repr)."""
    if ds.task != "multilabel" and ds.d != 1:
        raise Unsupported("SVMlight holds one target per row unless multilabel")
    X = ds.X if ds.is_sparse else None
    csr = csc_to_csr(X) if X is not None else None
    with open(path, "w") as fh:
        for i in range(ds.n):
            if ds.task == "multilabel":
                head = ",".join(str(j) for j in np.flatnonzero(ds.Y[i])) + ","
            else:
                head = repr(float(ds.Y[i, 0]))
            if csr is not None:
                lo, hi = csr.indptr[i], csr.indptr[i + 1]
                pairs = zip(csr.indices[lo:hi], csr.data[lo:hi])
            else:
                nz = np.flatnonzero(ds.X[i])
                pairs = zip(nz, ds.X[i, nz])
            body = " ".join(f"{j + 1}:{float(v)!r}" for j, v in pairs)
            fh.write(f"{head} {body}\n" if body else f"{head}\n")


def load_csv(path, target_columns, task="regression"):
    """Read a headed CSV file; ``target_columns`` names the output columns."""
    if isinstance(target_columns, str):
        target_columns = [target_columns]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        missing = [c for c in target_columns if c not in header]
        if missing:
            raise ParseError(1, f"missing target columns {missing}")
        t_idx = [header.index(c) for c in target_columns]
        x_idx = [k for k in range(len(header)) if k not in t_idx]
        X, Y = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(line_no, f"expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise ParseError(line_no, "non-numeric field") from None
            X.append([vals[k] for k in x_idx])
            Y.append([vals[k] for k in t_idx])
    if not X:
        raise EmptyDataset(f"{path} holds no samples")
    return Dataset(np.array(X).reshape(len(X), len(x_idx)), np.array(Y), task)


# ---------------------------------------------------------------- splits

def _n_train(n, fraction):
    return int(np.floor(fraction * n + 0.5))


def train_test_split(ds: Dataset, spec: SplitSpec = SplitSpec()):
    """Random disjoint train/test partition, optionally stratified on rows of Y."""
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        _, strata = np.unique(ds.Y, axis=0, return_inverse=True)
        strata = strata.ravel()
        train = []
        for s in range(strata.max() + 1):
            members = rng.permutation(np.flatnonzero(strata == s))
            train.append(members[:_n_train(len(members), spec.train_fraction)])
        train = np.sort(np.concatenate(train))
    else:
        perm = rng.permutation(ds.n)
        train = np.sort(perm[:_n_train(ds.n, spec.train_fraction)])
    test = np.setdiff1d(np.arange(ds.n), train)
    return ds.subset(train), ds.subset(test)


def kfold_indices(n, folds, seed=0):
    """Shuffled k-fold partition of ``range(n)`` as a list of validation index arrays."""
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


# ---------------------------------------------------------------- scaling

@dataclass
class Standardizer:
    """Per-column affine maps learnt on one dataset and replayed on others."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray = field(default=None)
    y_scale: np.ndarray = field(default=None)

    def transform_X(self, X):
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_scale

    def transform_Y(self, Y):
        if self.y_mean is None:
            return np.asarray(Y, dtype=np.float64)
        return (np.asarray(Y, dtype=np.float64) - self.y_mean) / self.y_scale

    def inverse_Y(self, Y):
        if self.y_mean is None:
            return np.asarray(Y, dtype=np.float64)
        return np.asarray(Y, dtype=np.float64) * self.y_scale + self.y_mean

    def apply(self, ds: Dataset):
        return Dataset(self.transform_X(ds.X), self.transform_Y(ds.Y), ds.task)


def column_scaling(A):
    """Mean and population standard deviation per column; scale 1 for constant columns."""
    A = np.asarray(A, dtype=np.float64)
    mean = A.mean(axis=0)
    scale = A.std(axis=0)
    const = ~(scale > 0)
    scale[const] = 1.0
    # constant columns map exactly to zero
    mean[const] = A[0, const] if len(A) else 0.0
    return mean, scale


def standardize(ds: Dataset):
    """Zero-mean unit-variance inputs (and outputs, for regression).

    Returns the transformed dataset and the :class:`Standardizer` holding
    the training statistics.
    """
    if ds.is_sparse:
        raise Unsupported("centering would densify a sparse input matrix")
    xm, xs = column_scaling(ds.X)
    rec = Standardizer(xm, xs)
    if ds.task == "regression":
        rec.y_mean, rec.y_scale = column_scaling(ds.Y)
    return rec.apply(ds), rec
