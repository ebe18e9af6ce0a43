"""Classification, multi-label ranking and regression metrics.

Label matrices are n x d arrays in {0, 1}; score matrices are real n x d.
Predicted label sets from scores use ``F > 0.5`` (see :func:`threshold`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .exceptions import ShapeError


def _pair(A, B, name="Y"):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape != B.shape:
        raise ShapeError(f"{name} shapes differ: {A.shape} vs {B.shape}")
    return A, B


def threshold(F, tau=0.5):
    """Hard label sets: 1 where the score is strictly above ``tau``."""
    return (np.asarray(F, dtype=np.float64) > tau).astype(np.int8)


# -- label-set metrics -------------------------------------------------------

def subset_accuracy(Y, Y_hat):
    Y, Y_hat = _pair(Y, Y_hat)
    return float(np.mean(np.all(Y == Y_hat, axis=1)))


def hamming_loss(Y, Y_hat):
    """Fraction of wrong (sample, label) pairs, normalised by n * d."""
    Y, Y_hat = _pair(Y, Y_hat)
    return float(np.mean(Y != Y_hat))


def jaccard(Y, Y_hat):
    """Mean over samples of |y & yhat| / |y | yhat|, with J(empty, empty) = 1."""
    Y, Y_hat = _pair(Y, Y_hat)
    a, b = Y > 0, Y_hat > 0
    inter = np.sum(a & b, axis=1)
    union = np.sum(a | b, axis=1)
    per = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
    return float(per.mean())


# -- ranking metrics ---------------------------------------------------------

def one_error(Y, F):
    """Fraction of samples whose top-scored label is not a true label.

    Ties in the top score go to the lowest label index.
    """
    Y, F = _pair(Y, F)
    top = np.argmax(F, axis=1)
    return float(np.mean(Y[np.arange(len(Y)), top] <= 0))


def coverage_error(Y, F):
    """Average number of labels ranked at or above the worst-ranked true label."""
    Y, F = _pair(Y, F)
    total = 0.0
    for y, f in zip(Y > 0, F):
        if not y.any():
            continue
        worst = f[y].min()
        total += np.sum(f >= worst)
    return float(total / len(Y))


def ranking_loss(Y, F):
    """Average fraction of (true, false) label pairs ordered wrongly.

    A pair counts as wrong when the true label scores strictly lower.
    Samples without a positive or without a negative label are skipped.
    """
    Y, F = _pair(Y, F)
    vals = []
    for y, f in zip(Y > 0, F):
        npos, nneg = y.sum(), (~y).sum()
        if npos == 0 or nneg == 0:
            continue
        wrong = np.sum(f[y][:, None] < f[~y][None, :])
        vals.append(wrong / (npos * nneg))
    return float(np.mean(vals)) if vals else 0.0


def lrap(Y, F, return_skipped=False):
    """Label ranking average precision.

    For each true label j the ratio of true labels scored >= f_j to all
    labels scored >= f_j, averaged over true labels then samples.
    Samples with no true label are left out; ``return_skipped`` also
    returns how many were.
    """
    Y, F = _pair(Y, F)
    vals = []
    skipped = 0
    for y, f in zip(Y > 0, F):
        if not y.any():
            skipped += 1
            continue
        ft = f[y]
        above_all = np.sum(f[None, :] >= ft[:, None], axis=1)
        above_true = np.sum(ft[None, :] >= ft[:, None], axis=1)
        vals.append(np.mean(above_true / above_all))
    score = float(np.mean(vals)) if vals else 0.0
    return (score, skipped) if return_skipped else score


# -- binary classification ---------------------------------------------------

@dataclass(frozen=True)
class Confusion:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n(self):
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, y, y_hat):
        y, y_hat = _pair(y, y_hat)
        a, b = y > 0, y_hat > 0
        return cls(int(np.sum(a & b)), int(np.sum(~a & ~b)), int(np.sum(~a & b)), int(np.sum(a & ~b)))


@dataclass(frozen=True)
class BinaryMetrics:
    error_rate: float
    accuracy: float
    tpr: float
    tnr: float
    fnr: float
    fpr: float
    precision: float
    balanced_accuracy: float
    f1: float
    degenerate: tuple = ()

    @property
    def recall(self):
        return self.tpr

    sensitivity = recall

    @property
    def specificity(self):
        return self.tnr


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def binary_metrics(c: Confusion) -> BinaryMetrics:
    """Standard rates of a confusion table; 0/0 yields 0 and is listed in ``degenerate``."""
    flags = []
    acc = _ratio(c.tp + c.tn, c.n, "accuracy", flags)
    tpr = _ratio(c.tp, c.tp + c.fn, "tpr", flags)
    tnr = _ratio(c.tn, c.tn + c.fp, "tnr", flags)
    fnr = _ratio(c.fn, c.tp + c.fn, "fnr", flags)
    fpr = _ratio(c.fp, c.tn + c.fp, "fpr", flags)
    prec = _ratio(c.tp, c.tp + c.fp, "precision", flags)
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, "f1", flags)
    err = 1.0 - acc if c.n else 0.0
    return BinaryMetrics(err, acc, tpr, tnr, fnr, fpr, prec, 0.5 * (tpr + tnr), f1,
                         tuple(dict.fromkeys(flags)))


def _metric_fn(metric):
    if callable(metric):
        return metric
    return lambda c: getattr(binary_metrics(c), metric)


def averaged_metric(Y, Y_hat, metric="f1", mode="macro"):
    """Binary ``metric`` (a field name or a function of a Confusion) averaged
    over labels (macro), pooled over all pairs (micro) or over rows (samples)."""
    Y, Y_hat = _pair(Y, Y_hat)
    fn = _metric_fn(metric)
    if mode == "micro":
        return float(fn(Confusion.from_labels(Y, Y_hat)))
    if mode == "macro":
        return float(np.mean([fn(Confusion.from_labels(Y[:, j], Y_hat[:, j])) for j in range(Y.shape[1])]))
    if mode == "samples":
        return float(np.mean([fn(Confusion.from_labels(Y[i], Y_hat[i])) for i in range(Y.shape[0])]))
    raise ValueError(f"unknown averaging mode {mode!r}")


def roc_auc(y, scores):
    """Probability that a random positive outscores a random negative; ties count 1/2."""
    y = np.asarray(y).ravel() > 0
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise ShapeError("labels and scores differ in length")
    npos, nneg = int(y.sum()), int((~y).sum())
    if npos == 0 or nneg == 0:
        raise ValueError("roc_auc needs both classes")
    r = rankdata(s)
    return float((r[y].sum() - npos * (npos + 1) / 2.0) / (npos * nneg))


# -- regression ----------------------------------------------------------------

@dataclass(frozen=True)
class RegressionMetrics:
    mse: float
    mae: float
    r2: float | None
    macro_r2: float
    variance_r2: float
    n_constant_outputs: int = 0


def regression_metrics(Y, Y_hat) -> RegressionMetrics:
    """MSE and MAE over all n * d entries plus r2 scores.

    ``r2`` is only set for single-output data. Outputs with zero variance
    are left out of ``macro_r2`` and counted in ``n_constant_outputs``.
    """
    Y, Y_hat = _pair(Y, Y_hat)
    err = Y - Y_hat
    sse = np.sum(err**2, axis=0)
    sst = np.sum((Y - Y.mean(axis=0)) ** 2, axis=0)
    ok = sst > 0
    per = 1.0 - sse[ok] / sst[ok]
    macro = float(per.mean()) if ok.any() else 0.0
    total = sst.sum()
    var_r2 = float(1.0 - sse.sum() / total) if total > 0 else 0.0
    r2 = (float(per[0]) if ok[0] else 0.0) if Y.shape[1] == 1 else None
    return RegressionMetrics(float(np.mean(err**2)), float(np.mean(np.abs(err))), r2, macro, var_r2,
                             int((~ok).sum()))


def macro_r2(Y, Y_hat):
    return regression_metrics(Y, Y_hat).macro_r2
