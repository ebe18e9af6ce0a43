"""Experiment engine: bias-variance estimates, grid search, split timings and
config-driven runs with CSV/JSON export."""

from __future__ import annotations

import csv
import io
import itertools
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import boosting, compression, datasets, forest as forest_mod, metrics, tree as tree_mod
from .datasets import Dataset
from .exceptions import Unsupported
from .forest import ForestParams, ProjectionSpec
from .matrix import CscMatrix, densify
from .projections import ProjectionKind
from .tree import GrowthParams

CSV_HEADER = ("experiment", "seed", "metric", "value")


# ---------------------------------------------------------------- learners
#
# A learner is ``fit(train: Dataset, seed: int) -> model`` and models are
# predicted with :func:`predict_model`.

def predict_model(model, X):
    if isinstance(model, forest_mod.Forest):
        return forest_mod.predict_forest(model, X)
    if isinstance(model, boosting.GBModel):
        return boosting.predict_gb(model, X)
    if isinstance(model, compression.CompressedForest):
        return compression.predict_score(model, X)[:, None]
    if isinstance(model, tree_mod.Tree):
        return tree_mod.predict(model, X)
    if isinstance(model, ConstantModel):
        return np.tile(model.value, (X.shape[0], 1))
    raise TypeError(f"cannot predict with {type(model).__name__}")


@dataclass(frozen=True, eq=False)
class ConstantModel:
    value: np.ndarray


def constant_learner(train: Dataset, seed=0):
    """Predicts the training mean; being deterministic it has no algorithmic variance."""
    return ConstantModel(train.Y.mean(axis=0))


def forest_learner(params: ForestParams):
    def fit(train: Dataset, seed=0):
        return forest_mod.fit_forest(train, _reseed(params, seed))
    return fit


def bagging_learner(n_trees, tree_params: GrowthParams = GrowthParams(n_min=1)):
    """Bootstrap-aggregated trees that use all features at every node."""
    return forest_learner(ForestParams(n_trees, tree_params, True, None, 0))


def tree_learner(tree_params: GrowthParams = GrowthParams(n_min=1)):
    def fit(train: Dataset, seed=0):
        return tree_mod.grow(train, tree_params.replace(seed=seed))
    return fit


def boosting_learner(params: boosting.BoostParams, mode="single-target"):
    fitter = boosting.FITTERS[mode]

    def fit(train: Dataset, seed=0):
        return fitter(train, _reseed(params, seed))
    return fit


def compression_learner(params: ForestParams, epsilon=0.01, folds=10, max_steps=10000):
    """Forest, CV choice of t, then the pruned L1 refit on the whole training set."""
    def fit(train: Dataset, seed=0):
        fp = _reseed(params, seed)
        sel = compression.select_t_cv(lambda ds: forest_mod.fit_forest(ds, fp), train, epsilon,
                                      folds, max_steps, seed)
        full = forest_mod.fit_forest(train, fp)
        return compression.compress(full, train, sel.t_star, epsilon, strict=False)
    return fit


def _reseed(params, seed):
    return type(params)(**{**{f: getattr(params, f) for f in params.__dataclass_fields__},
                           "seed": seed})


# ---------------------------------------------------------------- bias / variance

@dataclass(frozen=True)
class BVReport:
    residual_error: float
    bias_sq: float
    var_total: float
    var_LS: float
    var_algo: float
    mse: float
    mse_se: float
    n_LS_draws: int
    n_algo_draws: int
    n_test: int

    @property
    def expected_error(self):
        return self.residual_error + self.bias_sq + self.var_total


def bias_variance_decompose(generator, learner: Callable, n_LS_draws=100, n_algo_draws=2,
                            n_test=2000, seed=0, n_train=300) -> BVReport:
    """Monte-Carlo decomposition of the expected squared error.

    ``generator`` must expose ``bayes(X)``, ``sample_inputs(n, rng)``,
    ``sample(n, rng)`` and ``noise_variance``.  One fixed test grid is
    shared by every learning set.  For each of ``n_LS_draws`` learning sets
    the learner is run ``n_algo_draws`` times with different seeds.

    var_algo is the mean over learning sets of the variance over seeds;
    var_LS the variance over learning sets of the seed-averaged prediction,
    corrected for the finite number of seeds; bias_sq the squared gap
    between the overall mean prediction and the Bayes function, corrected
    for the Monte-Carlo noise of that mean.  ``mse`` is measured directly
    against fresh noisy test outputs, ``mse_se`` is its standard error.
    """
    if not callable(getattr(generator, "bayes", None)):
        raise Unsupported("the generator does not expose its regression function")
    if n_LS_draws < 2 or n_algo_draws < 1:
        raise ValueError("need at least two learning sets and one algorithm draw")
    root = np.random.SeedSequence(seed)
    test_ss, *ls_ss = root.spawn(n_LS_draws + 1)
    test_rng = np.random.default_rng(test_ss)
    X_test = generator.sample_inputs(n_test, test_rng)
    f = np.asarray(generator.bayes(X_test), dtype=np.float64).reshape(n_test, -1)
    noise_sd = float(np.sqrt(generator.noise_variance))

    preds = np.empty((n_LS_draws, n_algo_draws) + f.shape)
    sq_err = np.empty(n_LS_draws)
    for l in range(n_LS_draws):
        rng = np.random.default_rng(ls_ss[l])
        train = generator.sample(n_train, rng)
        y_test = f + noise_sd * rng.standard_normal(f.shape)
        for a in range(n_algo_draws):
            algo_seed = int(rng.integers(2**31))
            out = np.asarray(predict_model(learner(train, algo_seed), X_test), dtype=np.float64)
            preds[l, a] = out.reshape(f.shape)
        sq_err[l] = np.mean((preds[l] - y_test) ** 2)

    if n_algo_draws > 1:
        var_algo = float(np.mean(np.var(preds, axis=1, ddof=1)))
    else:
        var_algo = 0.0
    theta_mean = preds.mean(axis=1)
    var_of_means = np.var(theta_mean, axis=0, ddof=1)
    var_LS = float(np.mean(var_of_means) - var_algo / n_algo_draws)
    grand = theta_mean.mean(axis=0)
    bias_sq = float(np.mean((grand - f) ** 2 - var_of_means / n_LS_draws))
    return BVReport(
        residual_error=noise_sd**2,
        bias_sq=bias_sq,
        var_total=var_LS + var_algo,
        var_LS=var_LS,
        var_algo=var_algo,
        mse=float(sq_err.mean()),
        mse_se=float(sq_err.std(ddof=1) / np.sqrt(n_LS_draws)),
        n_LS_draws=n_LS_draws,
        n_algo_draws=n_algo_draws,
        n_test=n_test,
    )


# ---------------------------------------------------------------- grid search

def expand_grid(grid):
    """A dict of lists becomes the list of its cartesian points (first key varies slowest)."""
    if isinstance(grid, dict):
        keys = list(grid)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    return [dict(g) for g in grid]


def neg_mse(Y, P):
    return -metrics.regression_metrics(Y, P).mse


@dataclass(frozen=True, eq=False)
class GridResult:
    best: dict
    table: list
    model: object


def grid_search(dataset: Dataset, learner_family: Callable, grid, validation_fraction=0.2, seed=0,
                score: Callable = neg_mse) -> GridResult:
    """Exhaustive search scored on a held-out validation part.

    ``learner_family(**point)`` must return a learner.  The first
    ``validation_fraction`` of a seeded permutation is held out, a higher
    ``score(Y_val, predictions)`` is better and ties keep the earlier grid
    point.  The winner is refit on all of ``dataset``.
    """
    points = expand_grid(grid)
    if not points:
        raise ValueError("empty grid")
    if not 0 < validation_fraction < 1:
        raise ValueError("validation_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    n_val = max(1, int(np.floor(validation_fraction * dataset.n + 0.5)))
    if n_val >= dataset.n:
        raise ValueError("validation split leaves no training samples")
    train, val = dataset.subset(np.sort(perm[n_val:])), dataset.subset(np.sort(perm[:n_val]))
    table = []
    best_i, best_s = 0, -np.inf
    for i, point in enumerate(points):
        model = learner_family(**point)(train, seed)
        s = float(score(val.Y, predict_model(model, val.X)))
        table.append({**point, "score": s})
        if s > best_s:
            best_i, best_s = i, s
    best = points[best_i]
    return GridResult(best, table, learner_family(**best)(dataset, seed))


# ---------------------------------------------------------------- timing

LAYOUT_NAMES = ("row-major", "column-major", "csc")


def _as_layout(X: CscMatrix, layout):
    if layout == "csc":
        return X
    return densify(X, layout)


def trees_identical(a: tree_mod.Tree, b: tree_mod.Tree):
    return (a.n_nodes == b.n_nodes and np.array_equal(a.feature, b.feature)
            and np.array_equal(a.threshold, b.threshold) and np.array_equal(a.left, b.left)
            and np.array_equal(a.value, b.value))


@dataclass(frozen=True)
class BenchResult:
    median_seconds: dict
    n: int
    p: int
    density: float
    tree_kind: str
    repeats: int


def bench_split(layouts=LAYOUT_NAMES, n=1000, p=100, density=0.01, tree_kind="stump", repeats=5,
                seed=0) -> BenchResult:
    """Median wall time of growing a stump or a full tree from each input layout.

    Every layout must grow the identical tree before anything is timed; a
    warm-up fit per layout is discarded.
    """
    for lay in layouts:
        if lay not in LAYOUT_NAMES:
            raise ValueError(f"unknown layout {lay!r}")
    if tree_kind not in ("stump", "full"):
        raise ValueError("tree_kind must be 'stump' or 'full'")
    ds = datasets.gen_random_sparse_regression(n, p, density, seed)
    params = GrowthParams(max_depth=1 if tree_kind == "stump" else None, seed=seed)
    inputs = {lay: _as_layout(ds.X, lay) for lay in layouts}
    ref = None
    for lay, X in inputs.items():
        t = tree_mod.grow_xy(X, ds.Y, params)
        if ref is None:
            ref = t
        elif not trees_identical(ref, t):
            raise AssertionError(f"layout {lay} grows a different tree")
    times = {}
    for lay, X in inputs.items():
        runs = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            tree_mod.grow_xy(X, ds.Y, params)
            runs.append(time.perf_counter() - t0)
        times[lay] = statistics.median(runs)
    return BenchResult(times, n, p, density, tree_kind, repeats)


# ---------------------------------------------------------------- configs

GENERATORS = {
    "friedman1": datasets.gen_friedman1,
    "friedman1-chain": datasets.gen_friedman1_chain,
    "friedman1-group": datasets.gen_friedman1_group,
    "friedman1-ind": datasets.gen_friedman1_ind,
    "twonorm": datasets.gen_twonorm,
    "multilabel": datasets.gen_multilabel,
    "random-sparse": datasets.gen_random_sparse_regression,
}


def make_dataset(spec: dict, seed=0) -> Dataset:
    """``{"generator": name, "n": ..., ...}`` or ``{"path": file, "format": "svmlight"|"csv", ...}``."""
    spec = dict(spec)
    if "path" in spec:
        path = spec.pop("path")
        fmt = spec.pop("format", "csv" if str(path).endswith(".csv") else "svmlight")
        if fmt == "csv":
            return datasets.load_csv(path, spec.pop("target_columns", ["y"]), spec.pop("task", "regression"))
        return datasets.load_svmlight(path, **spec)
    name = spec.pop("generator", None)
    if name not in GENERATORS:
        raise ValueError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
    spec.pop("n_test", None)
    return GENERATORS[name](seed=seed, **spec)


def _growth(spec):
    keys = GrowthParams.__dataclass_fields__
    return GrowthParams(**{k: v for k, v in spec.items() if k in keys and k != "seed"})


def _projection_spec(spec):
    if spec is None:
        return None
    return ProjectionSpec(ProjectionKind.parse(spec.get("kind", "gaussian"), spec.get("d")),
                          int(spec.get("q", 1)), bool(spec.get("shared", False)))


def forest_params(spec: dict) -> ForestParams:
    """Forest params from a learner spec.  ``"method": "extra-trees"`` switches
    to random thresholds without bootstrap."""
    spec = dict(spec)
    if spec.get("method") == "extra-trees":
        spec.setdefault("splitter", "random-threshold")
        spec.setdefault("bootstrap", False)
    return ForestParams(int(spec.get("n_trees", 100)), _growth(spec), bool(spec.get("bootstrap", True)),
                        _projection_spec(spec.get("projection")), 0)


def boost_params(spec: dict) -> boosting.BoostParams:
    tp = _growth({"max_leaves": 2, **spec})
    return boosting.BoostParams(int(spec.get("n_stages", 100)), float(spec.get("mu", 1.0)),
                                spec.get("loss", "square"), tp,
                                ProjectionKind.parse(spec.get("projection", "subsample"), spec.get("d")),
                                int(spec.get("q", 1)), 0)


def make_learner(spec: dict):
    """Learner from ``{"kind": "tree"|"forest"|"boosting"|"compression"|"constant", ...}``."""
    kind = spec.get("kind", "forest")
    if kind == "constant":
        return constant_learner
    if kind == "tree":
        return tree_learner(_growth(spec))
    if kind == "forest":
        return forest_learner(forest_params(spec))
    if kind == "boosting":
        return boosting_learner(boost_params(spec), spec.get("mode", "single-target"))
    if kind == "compression":
        return compression_learner(forest_params(spec), float(spec.get("epsilon", 0.01)),
                                   int(spec.get("folds", 10)), int(spec.get("max_steps", 10000)))
    raise ValueError(f"unknown learner kind {kind!r}")


def default_metrics(task):
    if task == "multilabel":
        return ["lrap", "hamming_loss", "ranking_loss", "coverage_error"]
    if task == "binary-classification":
        return ["accuracy", "roc_auc"]
    return ["mse", "macro_r2"]


def evaluate(task, Y, P, names):
    """Named metrics of predictions ``P`` (scores or probabilities) against ``Y``."""
    Y = np.asarray(Y, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64).reshape(Y.shape)
    out = {}
    reg = None
    for name in names:
        if name in ("mse", "mae", "r2", "macro_r2", "variance_r2"):
            reg = reg or metrics.regression_metrics(Y, P)
            out[name] = getattr(reg, name)
            continue
        Yb = (Y > 0).astype(np.float64)
        cut = 0.0 if task == "binary-classification" and P.min() < 0 else 0.5
        if name == "accuracy":
            out[name] = metrics.subset_accuracy(Yb, metrics.threshold(P, cut))
        elif name in ("hamming_loss", "subset_accuracy", "jaccard"):
            out[name] = getattr(metrics, name)(Yb, metrics.threshold(P, cut))
        elif name in ("lrap", "ranking_loss", "coverage_error", "one_error"):
            out[name] = getattr(metrics, name)(Yb, P)
        elif name == "roc_auc":
            out[name] = metrics.roc_auc(Yb[:, 0], P[:, 0])
        else:
            raise ValueError(f"unknown metric {name!r}")
    return {k: float(v) for k, v in out.items()}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    dataset: dict
    learner: dict
    evaluation: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    output: Optional[str] = None

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        make_learner(self.learner)
        if "generator" not in self.dataset and "path" not in self.dataset:
            raise ValueError("dataset needs a generator or a path")

    @classmethod
    def from_dict(cls, obj):
        return cls(obj.get("name", "experiment"), obj["dataset"], obj["learner"],
                   obj.get("evaluation", {}), list(obj.get("seeds", [0])), obj.get("output"))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def _train_test(config: ExperimentConfig, seed):
    spec = config.dataset
    if "generator" in spec and "n_test" in spec:
        n_train = int(spec["n"])
        full = make_dataset({**spec, "n": n_train + int(spec["n_test"])}, seed)
        idx = np.arange(full.n)
        return full.subset(idx[:n_train]), full.subset(idx[n_train:])
    full = make_dataset(spec, seed)
    frac = float(config.evaluation.get("train_fraction", 0.75))
    return datasets.train_test_split(full, datasets.SplitSpec(frac, seed))


@dataclass(frozen=True)
class ExperimentResults:
    experiment: str
    rows: list
    summary: dict

    def to_dict(self):
        return asdict(self)


def _summary(rows):
    by = {}
    for r in rows:
        by.setdefault(r["metric"], []).append(r["value"])
    return {m: {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)} for m, v in by.items()}


def run_experiment(config: ExperimentConfig, fmt="csv") -> ExperimentResults:
    """Run every seed independently, then aggregate mean and std per metric.

    Writes ``config.output`` when it is set.
    """
    rows = []
    learner = make_learner(config.learner)
    for seed in config.seeds:
        train, test = _train_test(config, seed)
        model = learner(train, seed)
        names = config.evaluation.get("metrics") or default_metrics(train.task)
        scores = evaluate(train.task, test.Y, predict_model(model, test.X), names)
        rows.extend({"experiment": config.name, "seed": seed, "metric": m, "value": v}
                    for m, v in scores.items())
    res = ExperimentResults(config.name, rows, _summary(rows))
    if config.output:
        export(res, config.output, fmt)
    return res


def export(results: ExperimentResults, path, fmt="csv"):
    """Write results as CSV (``experiment,seed,metric,value``) or JSON."""
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(results.to_dict(), fh, indent=2, sort_keys=True)
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(results_csv(results))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def results_csv(results: ExperimentResults):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in results.rows:
        w.writerow([r["experiment"], r["seed"], r["metric"], repr(float(r["value"]))])
    return buf.getvalue()


def read_results(path) -> ExperimentResults:
    """Read back a file written by :func:`export` (either format)."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        obj = json.loads(text)
        return ExperimentResults(obj["experiment"], obj["rows"], obj["summary"])
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    rows = [{"experiment": r["experiment"], "seed": int(r["seed"]), "metric": r["metric"],
             "value": float(r["value"])} for r in reader]
    return ExperimentResults(rows[0]["experiment"] if rows else "", rows, _summary(rows))


# ---------------------------------------------------------------- model files

def model_to_dict(model):
    if isinstance(model, forest_mod.Forest):
        return forest_mod.forest_to_dict(model)
    if isinstance(model, boosting.GBModel):
        return boosting.gb_to_dict(model)
    if isinstance(model, tree_mod.Tree):
        return model.to_dict()
    if isinstance(model, compression.CompressedForest):
        return {"format": "treeforge.compressed", "version": 1, "intercept": model.intercept,
                "task": model.task, "t": model.t, "trees": [t.to_dict() for t in model.trees]}
    if isinstance(model, ConstantModel):
        return {"format": "treeforge.constant", "version": 1, "value": model.value.tolist()}
    raise TypeError(f"cannot serialise {type(model).__name__}")


def model_from_dict(obj):
    kind = obj.get("format")
    if kind == "treeforge.forest":
        return forest_mod.forest_from_dict(obj)
    if kind == "treeforge.gb":
        return boosting.gb_from_dict(obj)
    if kind == "treeforge.tree":
        return tree_mod.Tree.from_dict(obj)
    if kind == "treeforge.compressed":
        return compression.CompressedForest([tree_mod.Tree.from_dict(t) for t in obj["trees"]],
                                            obj["intercept"], obj["task"], None, obj["t"])
    if kind == "treeforge.constant":
        return ConstantModel(np.asarray(obj["value"], dtype=np.float64))
    raise ValueError(f"unknown model format {kind!r}")


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


__all__ = [
    "BVReport", "bias_variance_decompose", "grid_search", "GridResult", "bench_split", "BenchResult",
    "ExperimentConfig", "run_experiment", "export", "read_results", "make_dataset", "make_learner",
    "predict_model", "save_model", "load_model",
]
