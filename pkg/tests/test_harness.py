import json

import numpy as np
import pytest

from treeforge import harness
from treeforge.datasets import Friedman1Problem, gen_friedman1
from treeforge.exceptions import Unsupported
from treeforge.forest import ForestParams, predict_forest
from treeforge.tree import GrowthParams


def test_constant_learner_has_no_algorithmic_variance():
    rep = harness.bias_variance_decompose(Friedman1Problem(), harness.constant_learner,
                                          n_LS_draws=20, n_algo_draws=3, n_test=300, n_train=50)
    assert abs(rep.var_algo) <= 1e-20
    assert rep.residual_error == 1.0


def test_terms_add_up_to_measured_error():
    rep = harness.bias_variance_decompose(Friedman1Problem(), harness.tree_learner(GrowthParams(max_depth=4)),
                                          n_LS_draws=40, n_algo_draws=2, n_test=500, n_train=100, seed=3)
    total = rep.residual_error + rep.bias_sq + rep.var_LS + rep.var_algo
    assert abs(total - rep.mse) <= 3 * rep.mse_se + 1e-9
    assert rep.expected_error == pytest.approx(total)


def test_decomposition_needs_bayes_function():
    class Opaque:
        def sample(self, n, rng):
            return gen_friedman1(n)

    with pytest.raises(Unsupported):
        harness.bias_variance_decompose(Opaque(), harness.constant_learner)


def family(n_trees=2, max_depth=None):
    return harness.forest_learner(ForestParams(n_trees, GrowthParams(max_depth=max_depth)))


def test_grid_singleton_and_refit():
    ds = gen_friedman1(120, seed=0)
    res = harness.grid_search(ds, family, {"n_trees": [3]})
    assert res.best == {"n_trees": 3} and len(res.table) == 1
    ref = family(3)(ds, 0)
    assert np.array_equal(predict_forest(res.model, ds.X), predict_forest(ref, ds.X))


def test_grid_ties_keep_first_point():
    ds = gen_friedman1(80, seed=1)
    res = harness.grid_search(ds, lambda which: harness.constant_learner, {"which": ["a", "b", "c"]})
    assert res.best == {"which": "a"}
    assert len({e["score"] for e in res.table}) == 1


def test_grid_deterministic_and_picks_better():
    ds = gen_friedman1(200, seed=2)
    grid = {"max_depth": [0, 6]}
    a = harness.grid_search(ds, lambda max_depth: family(5, max_depth), grid, seed=4)
    b = harness.grid_search(ds, lambda max_depth: family(5, max_depth), grid, seed=4)
    assert a.table == b.table
    assert a.best == {"max_depth": 6}


def test_expand_grid_order():
    pts = harness.expand_grid({"a": [1, 2], "b": ["x"]})
    assert pts == [{"a": 1, "b": "x"}, {"a": 2, "b": "x"}]


def test_bench_runs_all_layouts():
    res = harness.bench_split(n=200, p=20, density=0.1, repeats=2)
    assert set(res.median_seconds) == set(harness.LAYOUT_NAMES)
    assert all(v > 0 for v in res.median_seconds.values())
    with pytest.raises(ValueError):
        harness.bench_split(layouts=("diagonal",))


def config(tmp_path=None, **kw):
    obj = {"name": "rf", "dataset": {"generator": "friedman1", "n": 100, "n_test": 200},
           "learner": {"kind": "forest", "n_trees": 5, "k": 3}, "seeds": [0, 1]}
    obj.update(kw)
    return harness.ExperimentConfig.from_dict(obj)


def test_run_experiment_is_deterministic():
    a = harness.run_experiment(config())
    b = harness.run_experiment(config())
    assert a.rows == b.rows
    assert {r["metric"] for r in a.rows} == {"mse", "macro_r2"}
    assert a.summary["mse"]["n"] == 2


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_export_roundtrip(tmp_path, fmt):
    res = harness.run_experiment(config())
    path = harness.export(res, tmp_path / f"out.{fmt}", fmt)
    if fmt == "csv":
        assert open(path).readline().strip() == "experiment,seed,metric,value"
    back = harness.read_results(path)
    assert back.rows == res.rows
    assert back.summary == res.summary


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        config(seeds=[])
    with pytest.raises(ValueError):
        config(learner={"kind": "svm"})
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"name": "x", "dataset": {"generator": "twonorm", "n": 80},
                             "learner": {"kind": "tree", "max_depth": 3}}))
    res = harness.run_experiment(harness.load_config(p))
    assert {r["metric"] for r in res.rows} == {"accuracy", "roc_auc"}


@pytest.mark.parametrize("spec", [
    {"kind": "constant"},
    {"kind": "tree", "max_depth": 3},
    {"kind": "forest", "n_trees": 3},
    {"kind": "boosting", "n_stages": 5},
    {"kind": "compression", "n_trees": 3, "folds": 3, "max_steps": 50, "epsilon": 0.05},
])
def test_model_files_roundtrip(tmp_path, spec):
    ds = gen_friedman1(60, seed=5)
    model = harness.make_learner(spec)(ds, 1)
    harness.save_model(model, tmp_path / "m.json")
    again = harness.load_model(tmp_path / "m.json")
    assert np.allclose(harness.predict_model(model, ds.X), harness.predict_model(again, ds.X),
                       rtol=0, atol=1e-12)
