"""Acceptance criteria A1-A10.

Each test records one ``A<k> PASS|FAIL <details>`` line; the lines are
printed in the pytest terminal summary (see conftest.py) and also when the
file is run directly with ``python3 tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from treeforge import harness
from treeforge.boosting import (BoostParams, fit_gb, fit_gbmort, fit_gbrt_relabel_rpo, fit_gbrt_rpo,
                                predict_gb, staged_training_loss)
from treeforge.compression import compress, node_count, predict_score, select_t_cv
from treeforge.datasets import (Dataset, Friedman1Problem, gen_friedman1, gen_friedman1_chain,
                                gen_friedman1_group, gen_friedman1_ind, gen_multilabel)
from treeforge.forest import ForestParams, ProjectionSpec, extra_trees, fit_forest, predict_forest
from treeforge.matrix import sparsify
from treeforge.metrics import (coverage_error, hamming_loss, jaccard, lrap, macro_r2, one_error,
                               ranking_loss, subset_accuracy, threshold)
from treeforge.projections import (ProjectionKind, distortion_stats, jl_epsilon, jl_min_dimension,
                                   sample_projection, variance_preserved)
from treeforge.tree import GrowthParams, grow_xy

REPORT = []


def record(name, ok, detail, seconds, limit):
    ok = bool(ok) and seconds < limit
    line = f"{name} {'PASS' if ok else 'FAIL'} {detail} [{seconds:.1f}s < {limit:g}s]"
    REPORT.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    """Load (or compile) the numba kernels outside the timed sections."""
    X = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 3.0], [3.0, 0.0]])
    y = np.array([0.0, 1.0, 0.0, 1.0])
    for splitter in ("exhaustive", "random-threshold"):
        grow_xy(X, y, GrowthParams(splitter=splitter))
        grow_xy(sparsify(X), y, GrowthParams(splitter=splitter))
    ds = gen_friedman1(40, seed=0)
    select_t_cv(lambda d: fit_forest(d, extra_trees(2)), ds, 0.1, 2, 20)
    fit_gb(ds, BoostParams(n_stages=2))


# ---------------------------------------------------------------- A1

def test_a1_worked_example_metrics():
    t0 = time.perf_counter()
    Y = np.array([[1, 0, 1, 0, 0], [1, 0, 0, 0, 0]])
    F = np.array([[0.75, 0.6, 0.1, 0.8, 0.15], [0.25, 0.8, 0.1, 0.15, 0.3]])
    Yh = threshold(F)
    got = dict(subset=subset_accuracy(Y, Yh), hamming=hamming_loss(Y, Yh), jaccard=jaccard(Y, Yh),
               coverage=coverage_error(Y, F), ranking=ranking_loss(Y, F), lrap=lrap(Y, F),
               one_error=one_error(Y, F))
    ok = (got["subset"] == 0 and got["hamming"] == 0.5 and got["jaccard"] == 0.125
          and got["coverage"] == 4 and abs(got["ranking"] - 7 / 12) <= 1e-12
          and abs(got["lrap"] - 47 / 120) <= 1e-12 and got["one_error"] == 1)
    detail = " ".join(f"{k}={v:.6g}" for k, v in got.items())
    record("A1", ok, detail, time.perf_counter() - t0, 1)


# ---------------------------------------------------------------- A2

def random_case(rng):
    n = int(rng.integers(2, 201))
    p = int(rng.integers(1, 51))
    density = float(rng.choice([0.01, 0.1, 0.5, 1.0]))
    X = rng.standard_normal((n, p))
    if rng.random() < 0.3:
        X = np.round(X)  # many tied values
    X[rng.random((n, p)) >= density] = 0.0
    d = int(rng.integers(1, 4))
    Y = rng.standard_normal((n, d))
    params = GrowthParams(
        max_depth=None if rng.random() < 0.5 else int(rng.integers(1, 8)),
        n_min=int(rng.integers(1, 6)),
        k=int(rng.integers(1, p + 1)),
        splitter=str(rng.choice(["exhaustive", "random-threshold"])),
        seed=int(rng.integers(2**31)),
    )
    return X, Y, params


def test_a2_sparse_dense_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(200):
        X, Y, params = random_case(rng)
        dense = grow_xy(X, Y, params)
        sparse = grow_xy(sparsify(X), Y, params)
        same = (harness.trees_identical(dense, sparse)
                and np.array_equal(dense.n_samples, sparse.n_samples)
                and np.array_equal(dense.right, sparse.right))
        bad += not same
    record("A2", bad == 0, f"mismatching trees={bad}/200", time.perf_counter() - t0, 60)


# ---------------------------------------------------------------- A3

def test_a3_projection_variance_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    n, d, q = 100, 1000, 201
    eps = jl_epsilon(q, n)
    Y = rng.standard_normal((n, d))
    gauss = ProjectionKind("gaussian")
    held = sum(variance_preserved(Y, sample_projection(gauss, q, d, rng), eps) for _ in range(200))
    pairs = np.array([(i, j) for i in range(n) for j in range(i + 1, n)])
    dist = [np.mean([distortion_stats(Y, sample_projection(gauss, qq, d, rng), pairs).mean
                     for _ in range(5)]) for qq in (1, 10, 100, 1000)]
    ok = jl_min_dimension(eps, n) == q and held >= 190 and all(np.diff(dist) < 0)
    detail = f"eps={eps:.3f} held={held}/200 distortion=" + ",".join(f"{v:.3f}" for v in dist)
    record("A3", ok, detail, time.perf_counter() - t0, 120)


# ---------------------------------------------------------------- A4 / A5

def boosting_data(loss):
    ds = gen_friedman1_group(300, 8, seed=4)
    if loss == "logistic":
        return Dataset(ds.X, np.where(ds.Y > np.median(ds.Y, axis=0), 1.0, -1.0))
    return ds


VARIANTS = {
    "gb": (fit_gb, {}),
    "gbmort": (fit_gbmort, {}),
    "rpo-subsample": (fit_gbrt_rpo, {"projection": ProjectionKind("subsample"), "q": 1}),
    "relabel-rpo": (fit_gbrt_relabel_rpo, {"projection": ProjectionKind("gaussian"), "q": 4}),
}


def test_a4_boosting_loss_non_increasing():
    t0 = time.perf_counter()
    worst = -np.inf
    failures = []
    for loss in ("square", "logistic"):
        ds = boosting_data(loss)
        for mu in (1.0, 0.1):
            for name, (fit, kw) in VARIANTS.items():
                model = fit(ds, BoostParams(n_stages=200, mu=mu, loss=loss, seed=1, **kw))
                rise = float(np.max(np.diff(staged_training_loss(model, ds))))
                worst = max(worst, rise)
                if rise > 1e-9:
                    failures.append(f"{name}/{loss}/mu={mu}")
    detail = f"16 runs, largest stage-to-stage increase={worst:.3g}" + (
        f" failing={failures}" if failures else "")
    record("A4", not failures, detail, time.perf_counter() - t0, 600)


def test_a5_square_loss_rho_is_ones():
    t0 = time.perf_counter()
    ds = boosting_data("square")
    dev = 0.0
    for name in ("gbmort", "relabel-rpo"):
        fit, kw = VARIANTS[name]
        for mu in (1.0, 0.1):
            model = fit(ds, BoostParams(n_stages=200, mu=mu, seed=2, **kw))
            dev = max(dev, max(float(np.max(np.abs(s.rho - 1.0))) for s in model.stages))
    record("A5", dev <= 1e-10, f"max |rho - 1|={dev:.3g}", time.perf_counter() - t0, 600)


# ---------------------------------------------------------------- A6

def split_generated(gen, seed, n=300, d=16, n_test=4000):
    full = gen(n + n_test, d, seed=seed)
    idx = np.arange(full.n)
    return full.subset(idx[:n]), full.subset(idx[n:])


def test_a6_synthetic_ordering():
    # mu=0.1 stumps (k=p) for every method; each model gets 1000 stumps, so the
    # single-target baseline (d independent boosters) runs 1000 stages per output
    t0 = time.perf_counter()
    stumps = GrowthParams(max_leaves=2)
    scores = {}
    for label, gen in (("group", gen_friedman1_group), ("ind", gen_friedman1_ind),
                       ("chain", gen_friedman1_chain)):
        res = {"st": [], "gbmort": [], "rpo": []}
        for seed in range(5):
            tr, te = split_generated(gen, seed)
            bp = BoostParams(n_stages=1000, mu=0.1, tree_params=stumps, seed=seed)
            st = fit_gb(tr, BoostParams(n_stages=1000 * tr.d, mu=0.1, tree_params=stumps, seed=seed))
            res["st"].append(macro_r2(te.Y, predict_gb(st, te.X)))
            res["gbmort"].append(macro_r2(te.Y, predict_gb(fit_gbmort(tr, bp), te.X)))
            res["rpo"].append(macro_r2(te.Y, predict_gb(fit_gbrt_rpo(tr, bp), te.X)))
        scores[label] = {k: float(np.mean(v)) for k, v in res.items()}
    a = scores["group"]["rpo"] >= scores["group"]["st"] - 0.01
    b = scores["ind"]["st"] >= scores["ind"]["gbmort"] + 0.10
    c = scores["chain"]["rpo"] >= scores["chain"]["st"] - 0.01
    detail = " ".join(f"{lab}:" + ",".join(f"{k}={v:.3f}" for k, v in s.items())
                      for lab, s in scores.items()) + f" (a={a} b={b} c={c})"
    record("A6", a and b and c, detail, time.perf_counter() - t0, 1800)


# ---------------------------------------------------------------- A7

def test_a7_compression():
    t0 = time.perf_counter()
    ratios, mse_et, mse_ret = [], [], []
    for run in range(10):
        full = gen_friedman1(2300, seed=100 + run)
        idx = np.arange(full.n)
        tr, te = full.subset(idx[:300]), full.subset(idx[300:])
        fp = extra_trees(100, k=tr.p, seed=run, n_min=1)
        sel = select_t_cv(lambda d: fit_forest(d, fp), tr, 0.01, 10, 10000, seed=run)
        forest = fit_forest(tr, fp)
        model = compress(forest, tr, sel.t_star, 0.01, strict=False)
        ratios.append(node_count(forest) / max(node_count(model), 1))
        mse_et.append(np.mean((predict_forest(forest, te.X)[:, 0] - te.Y[:, 0]) ** 2))
        mse_ret.append(np.mean((predict_score(model, te.X) - te.Y[:, 0]) ** 2))
    factor, et, ret = float(np.mean(ratios)), float(np.mean(mse_et)), float(np.mean(mse_ret))
    detail = f"factor={factor:.1f} mse_ET={et:.3f} mse_rET={ret:.3f}"
    record("A7", factor >= 10 and ret <= 1.15 * et, detail, time.perf_counter() - t0, 1200)


# ---------------------------------------------------------------- A8

def test_a8_bias_variance():
    t0 = time.perf_counter()
    gen = Friedman1Problem()
    kw = dict(n_LS_draws=100, n_algo_draws=2, n_test=2000, seed=0, n_train=300)
    single = harness.bias_variance_decompose(gen, harness.tree_learner(GrowthParams(n_min=1)), **kw)
    bag2 = harness.bias_variance_decompose(gen, harness.bagging_learner(2), **kw)
    bag16 = harness.bias_variance_decompose(gen, harness.bagging_learner(16), **kw)
    ratio = bag16.var_algo / bag2.var_algo
    ok = 0.05 <= ratio <= 0.25 and single.var_total > single.bias_sq
    detail = (f"var_algo16/var_algo2={ratio:.3f} single tree var={single.var_total:.2f} "
              f"bias2={single.bias_sq:.2f}")
    record("A8", ok, detail, time.perf_counter() - t0, 900)


# ---------------------------------------------------------------- A9

def test_a9_sparse_speedup():
    t0 = time.perf_counter()
    layouts = ("column-major", "csc")
    # bench_split asserts tree equivalence across layouts before timing
    sparse = harness.bench_split(layouts, 10_000, 1_000, 1e-3, "stump", repeats=5, seed=0)
    dense = harness.bench_split(layouts, 10_000, 1_000, 1.0, "stump", repeats=3, seed=0)
    speedup = sparse.median_seconds["column-major"] / sparse.median_seconds["csc"]
    slowdown = dense.median_seconds["csc"] / dense.median_seconds["column-major"]
    detail = f"density 1e-3 speedup={speedup:.1f}x density 1 csc/dense={slowdown:.2f}"
    record("A9", speedup >= 2 and slowdown <= 2, detail, time.perf_counter() - t0, 300)


# ---------------------------------------------------------------- A10

def test_a10_projection_neutrality():
    t0 = time.perf_counter()
    plain, projected = [], []
    for seed in range(10):
        full = gen_multilabel(2500, 30, seed=seed)
        idx = np.arange(full.n)
        tr, te = full.subset(idx[:500]), full.subset(idx[500:])
        base = ForestParams(100, GrowthParams(), True, None, seed)
        proj = ForestParams(100, GrowthParams(), True,
                            ProjectionSpec(ProjectionKind("gaussian"), tr.d, shared=False), seed)
        plain.append(lrap(te.Y, predict_forest(fit_forest(tr, base), te.X)))
        projected.append(lrap(te.Y, predict_forest(fit_forest(tr, proj), te.X)))
    pooled = float(np.sqrt((np.var(plain, ddof=1) + np.var(projected, ddof=1)) / 2))
    gap = abs(float(np.mean(plain)) - float(np.mean(projected)))
    detail = f"lrap plain={np.mean(plain):.4f} projected={np.mean(projected):.4f} gap={gap:.4f} pooled_sd={pooled:.4f}"
    record("A10", gap <= pooled, detail, time.perf_counter() - t0, 600)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
