"""Command line entry point: ``treeforge <command> [options]``.

Every command accepts ``--config <json>``, ``--seed``, ``--out`` and
``--format {csv,json}``.  Config examples:

gen        {"generator": "friedman1", "n": 300, "noise_sd": 1.0}
fit        {"dataset": {"path": "train.svm"}, "learner": {"kind": "forest", "n_trees": 100}}
predict    (no config; ``--model`` and ``--data``)
eval       {"name": "rf", "dataset": {"generator": "friedman1", "n": 300, "n_test": 2000},
            "learner": {"kind": "forest", "n_trees": 50}, "evaluation": {"metrics": ["mse"]},
            "seeds": [0, 1, 2]}
compress   {"dataset": {"generator": "friedman1", "n": 300},
            "learner": {"kind": "forest", "method": "extra-trees", "n_trees": 100, "n_min": 1},
            "epsilon": 0.01, "folds": 10, "max_steps": 10000}
bvdecomp   {"generator": {"noise_sd": 1.0, "p": 10}, "learner": {"kind": "forest", "n_trees": 2,
            "n_min": 1}, "n_LS_draws": 100, "n_algo_draws": 2, "n_test": 2000, "n_train": 300}
bench      {"n": 10000, "p": 1000, "density": 0.001, "tree_kind": "stump", "repeats": 5}
grid       {"dataset": {...}, "learner": {"kind": "boosting", "n_stages": 200},
            "grid": {"mu": [0.1, 1.0]}, "validation_fraction": 0.2}

Tabular outputs use the header ``experiment,seed,metric,value``.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import compression, datasets, harness
from .datasets import Friedman1Problem
from .harness import ExperimentConfig, ExperimentResults


def _load_json(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _emit(results: ExperimentResults, args):
    if args.out:
        harness.export(results, args.out, args.format)
    elif args.format == "json":
        json.dump(results.to_dict(), sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    else:
        sys.stdout.write(harness.results_csv(results))


def _rows(name, seed, values: dict):
    rows = [{"experiment": name, "seed": seed, "metric": k, "value": float(v)} for k, v in values.items()]
    return ExperimentResults(name, rows, harness._summary(rows))


def _dataset(args, cfg):
    if args.data:
        return harness.make_dataset({"path": args.data, **cfg.get("data_options", {})}, args.seed)
    if "dataset" not in cfg:
        raise SystemExit("give --data or a config with a 'dataset' entry")
    return harness.make_dataset(cfg["dataset"], args.seed)


def cmd_gen(args):
    cfg = _load_json(args.config)
    if args.generator:
        cfg["generator"] = args.generator
    if args.n is not None:
        cfg["n"] = args.n
    ds = harness.make_dataset(cfg, args.seed)
    if not args.out:
        raise SystemExit("gen needs --out")
    datasets.write_svmlight(ds, args.out)


def cmd_fit(args):
    cfg = _load_json(args.config)
    ds = _dataset(args, cfg)
    model = harness.make_learner(cfg.get("learner", {"kind": "forest"}))(ds, args.seed)
    if not args.out:
        raise SystemExit("fit needs --out")
    harness.save_model(model, args.out)


def cmd_predict(args):
    if not (args.model and args.data):
        raise SystemExit("predict needs --model and --data")
    model = harness.load_model(args.model)
    ds = harness.make_dataset({"path": args.data}, args.seed)
    P = np.asarray(harness.predict_model(model, ds.X), dtype=np.float64)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        if args.format == "json":
            json.dump(P.tolist(), out)
            out.write("\n")
        else:
            for row in P:
                out.write(",".join(repr(float(v)) for v in row) + "\n")
    finally:
        if args.out:
            out.close()


def cmd_eval(args):
    cfg = _load_json(args.config)
    if not cfg:
        raise SystemExit("eval needs --config")
    if args.seed is not None and "seeds" not in cfg:
        cfg["seeds"] = [args.seed]
    config = ExperimentConfig.from_dict(cfg)
    _emit(harness.run_experiment(config, args.format), args)


def cmd_compress(args):
    cfg = _load_json(args.config)
    ds = _dataset(args, cfg)
    fp = harness._reseed(harness.forest_params(cfg.get("learner", {"method": "extra-trees"})), args.seed)
    eps = float(cfg.get("epsilon", 0.01))
    sel = compression.select_t_cv(lambda d: harness.forest_mod.fit_forest(d, fp), ds, eps,
                                  int(cfg.get("folds", 10)), int(cfg.get("max_steps", 10000)), args.seed)
    forest = harness.forest_mod.fit_forest(ds, fp)
    model = compression.compress(forest, ds, sel.t_star, eps, strict=False)
    if args.model_out:
        harness.save_model(model, args.model_out)
    _emit(_rows("compress", args.seed, {
        "t_star": sel.t_star,
        "nodes_before": compression.node_count(forest),
        "nodes_after": compression.node_count(model),
    }), args)


def cmd_bvdecomp(args):
    cfg = _load_json(args.config)
    gen = Friedman1Problem(**cfg.get("generator", {}))
    learner = harness.make_learner(cfg.get("learner", {"kind": "tree", "n_min": 1}))
    rep = harness.bias_variance_decompose(
        gen, learner, int(cfg.get("n_LS_draws", 100)), int(cfg.get("n_algo_draws", 2)),
        int(cfg.get("n_test", 2000)), args.seed, int(cfg.get("n_train", 300)))
    vals = {k: v for k, v in vars(rep).items() if not k.startswith("n_")}
    _emit(_rows("bvdecomp", args.seed, vals), args)


def cmd_bench(args):
    cfg = _load_json(args.config)
    res = harness.bench_split(tuple(cfg.get("layouts", harness.LAYOUT_NAMES)), int(cfg.get("n", 1000)),
                              int(cfg.get("p", 100)), float(cfg.get("density", 0.01)),
                              cfg.get("tree_kind", "stump"), int(cfg.get("repeats", 5)), args.seed)
    _emit(_rows("bench", args.seed, {f"seconds_{k}": v for k, v in res.median_seconds.items()}), args)


def cmd_grid(args):
    cfg = _load_json(args.config)
    if "grid" not in cfg:
        raise SystemExit("grid needs a config with a 'grid' entry")
    ds = _dataset(args, cfg)
    base = cfg.get("learner", {"kind": "forest"})
    res = harness.grid_search(ds, lambda **pt: harness.make_learner({**base, **pt}), cfg["grid"],
                              float(cfg.get("validation_fraction", 0.2)), args.seed)
    rows = []
    for i, entry in enumerate(res.table):
        rows.append({"experiment": "grid", "seed": args.seed, "metric": f"point{i}:" + json.dumps(
            {k: v for k, v in entry.items() if k != "score"}, sort_keys=True), "value": entry["score"]})
    best_score = max(e["score"] for e in res.table)
    rows.append({"experiment": "grid", "seed": args.seed,
                 "metric": "best:" + json.dumps(res.best, sort_keys=True), "value": best_score})
    _emit(ExperimentResults("grid", rows, {"best": res.best}), args)
    if args.model_out:
        harness.save_model(res.model, args.model_out)


COMMANDS = {
    "gen": cmd_gen, "fit": cmd_fit, "predict": cmd_predict, "eval": cmd_eval,
    "compress": cmd_compress, "bvdecomp": cmd_bvdecomp, "bench": cmd_bench, "grid": cmd_grid,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="treeforge", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="output file (stdout when omitted)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        if name == "gen":
            sp.add_argument("--generator", choices=sorted(harness.GENERATORS))
            sp.add_argument("--n", type=int)
        if name in ("fit", "predict", "compress", "grid"):
            sp.add_argument("--data", help="svmlight or csv dataset")
        if name == "predict":
            sp.add_argument("--model", help="model JSON written by fit")
        if name in ("compress", "grid"):
            sp.add_argument("--model-out", help="also save the resulting model here")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    COMMANDS[args.command](args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
