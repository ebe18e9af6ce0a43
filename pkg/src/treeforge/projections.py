"""Random projections of the output space and Johnson-Lindenstrauss diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidProjection, ShapeError
from .matrix import CscMatrix, csc_to_csr, densify, sparsify


@dataclass(frozen=True)
class ProjectionKind:
    """``gaussian``, ``rademacher`` with density parameter ``s`` or ``subsample``.

    ``rademacher`` with s=1 is the dense Rademacher map, s=3 Achlioptas'
    and s=sqrt(d) the sparse random projection.
    """

    variant: str = "gaussian"
    s: float = 1.0

    def __post_init__(self):
        if self.variant not in ("gaussian", "rademacher", "subsample"):
            raise InvalidProjection(f"unknown projection {self.variant!r}")
        if self.s < 1:
            raise InvalidProjection("rademacher density parameter s must be >= 1")

    @classmethod
    def parse(cls, text, d=None):
        """Build from strings such as ``gaussian``, ``subsample``, ``achlioptas``,
        ``sparse`` or ``rademacher:3``."""
        name, _, arg = str(text).partition(":")
        if name == "achlioptas":
            return cls("rademacher", 3.0)
        if name == "sparse":
            if d is None:
                raise InvalidProjection("sparse projections need the output dimension")
            return cls("rademacher", math.sqrt(d))
        if name == "rademacher":
            return cls("rademacher", float(arg) if arg else 1.0)
        return cls(name)


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """A q x d map; ``matrix`` is a dense array or a :class:`CscMatrix`."""

    matrix: object
    kind: ProjectionKind
    seed: object = None

    @property
    def q(self):
        return self.matrix.shape[0]

    @property
    def d(self):
        return self.matrix.shape[1]

    def dense(self):
        if isinstance(self.matrix, CscMatrix):
            return densify(self.matrix)
        return self.matrix


def _rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_projection(kind: ProjectionKind, q, d, rng=None) -> ProjectionMatrix:
    """Draw a random q x d projection matrix.

    Gaussian entries are N(0, 1/q); Rademacher(s) entries are
    +-sqrt(s/q) with probability 1/(2s) each and 0 otherwise; subsample
    picks q distinct rows of the d x d identity.
    """
    if q < 1 or d < 1:
        raise InvalidProjection("q and d must be positive")
    gen = _rng(rng)
    if kind.variant == "gaussian":
        return ProjectionMatrix(gen.normal(0.0, 1.0 / math.sqrt(q), size=(q, d)), kind, rng)
    if kind.variant == "rademacher":
        u = gen.random((q, d))
        scale = math.sqrt(kind.s / q)
        M = np.where(u < 0.5 / kind.s, -scale, np.where(u < 1.0 / kind.s, scale, 0.0))
        return ProjectionMatrix(sparsify(M) if kind.s > 1 else M, kind, rng)
    if q > d:
        raise InvalidProjection(f"cannot subsample {q} of {d} outputs")
    rows = gen.choice(d, size=q, replace=False)
    return ProjectionMatrix(CscMatrix(q, d, *_selector(rows, d)), kind, rng)


def _selector(rows, d):
    """CSC arrays of the matrix whose r-th row is e_{rows[r]}."""
    q = len(rows)
    col_of = np.full(d, -1, dtype=np.int64)
    col_of[rows] = np.arange(q)
    indptr = np.zeros(d + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(col_of >= 0)
    return indptr, col_of[col_of >= 0], np.ones(q)


def project(phi: ProjectionMatrix, Y):
    """Rows ``Phi y_i`` of the projected output matrix (n x q)."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != phi.d:
        raise ShapeError(f"Y must have {phi.d} columns")
    if not isinstance(phi.matrix, CscMatrix):
        return Y @ phi.matrix.T
    csr = csc_to_csr(phi.matrix)
    out = np.zeros((Y.shape[0], phi.q))
    for r in range(phi.q):
        lo, hi = csr.indptr[r], csr.indptr[r + 1]
        out[:, r] = Y[:, csr.indices[lo:hi]] @ csr.data[lo:hi]
    return out


def jl_min_dimension(epsilon, n):
    """Smallest q with q >= 8 ln(n) / epsilon^2, at least 1."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return max(1, math.ceil(8.0 * math.log(n) / epsilon**2))


def jl_epsilon(q, n):
    """Distortion epsilon guaranteed by q dimensions for n points."""
    return math.sqrt(8.0 * math.log(n) / q)


@dataclass(frozen=True)
class DistortionStats:
    mean: float
    max: float
    n_pairs: int


def random_pairs(n, n_pairs, rng=None):
    """``n_pairs`` pairs (i, j) with i != j drawn uniformly."""
    gen = _rng(rng)
    i = gen.integers(0, n, size=n_pairs)
    j = (i + gen.integers(1, n, size=n_pairs)) % n
    return np.column_stack([i, j])


def distortion_stats(Y, phi: ProjectionMatrix, sample_pairs) -> DistortionStats:
    """Relative distortion |‖Phi(y_i - y_j)‖² / ‖y_i - y_j‖² - 1| over pairs.

    Pairs at distance zero are skipped.
    """
    Y = np.asarray(Y, dtype=np.float64)
    pairs = np.asarray(sample_pairs, dtype=np.int64).reshape(-1, 2)
    diff = Y[pairs[:, 0]] - Y[pairs[:, 1]]
    orig = np.sum(diff**2, axis=1)
    keep = orig > 0
    proj = np.sum(project(phi, diff[keep]) ** 2, axis=1)
    dist = np.abs(proj / orig[keep] - 1.0)
    if len(dist) == 0:
        return DistortionStats(0.0, 0.0, 0)
    return DistortionStats(float(dist.mean()), float(dist.max()), int(len(dist)))


def output_variance(Y):
    """Trace of the (1/n) covariance: mean squared distance to the centroid."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    return float(np.sum(np.mean((Y - Y.mean(axis=0)) ** 2, axis=0)))


def pairwise_variance(Y):
    """The same variance written as (1 / 2n²) sum_ij ‖y_i - y_j‖²."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = len(Y)
    total = 0.0
    for i in range(n):
        total += np.sum((Y[i] - Y) ** 2)
    return float(total / (2.0 * n * n))


def variance_preserved(Y, phi: ProjectionMatrix, epsilon):
    """Whether (1-eps) Var(Y) <= Var(Phi Y) <= (1+eps) Var(Y)."""
    v = output_variance(Y)
    vp = output_variance(project(phi, Y))
    return (1 - epsilon) * v <= vp <= (1 + epsilon) * v
