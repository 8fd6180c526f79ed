"""Command-line surface: generate, train, predict, evaluate, benchmark,
plot-data.

Exit codes: 0 success/converged, 2 configuration or input error,
3 epoch cap hit before convergence, 4 numerical abort.  Delimited outputs
are written atomically (temp file + rename); report paths also render
figures next to the tables.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

import numpy as np
import yaml

from . import datagen, evaluation, figures, taskstruct
from .core import FeatureMap, read_dataset, write_dataset
from .solver import (NumericalAbort, SolverConfig, load_model, predict_dataset,
                     save_model, train, write_train_report)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MAX_EPOCHS = 3
EXIT_NUMERIC = 4


def _atomic_write(path, writer) -> None:
    """writer(tmp_path) -> None; the result is moved into place."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".mtmkl-tmp-")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _default_jobs() -> int:
    env = os.environ.get("MTMKL_JOBS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _add_solver_flags(sub) -> None:
    sub.add_argument("--config", help="YAML file with solver defaults "
                     "(CLI flags override file values)")
    sub.add_argument("--C", type=float, default=None, help="trade-off constant (default 1.0)")
    sub.add_argument("--p", type=float, default=None, help="kernel-weight norm exponent (default 2.0)")
    sub.add_argument("--epsilon", type=float, default=None,
                     help="relative-objective stopping tolerance (default 1e-5)")
    sub.add_argument("--max-epochs", type=int, default=None, help="sweep cap (default 1000)")
    sub.add_argument("--sweep-order", choices=["shuffled", "sequential"], default=None,
                     help="dual sweep ordering (default shuffled)")
    sub.add_argument("--gap-check-interval", type=int, default=None,
                     help="epochs between duality-gap checks (default 1)")
    sub.add_argument("--seed", type=int, default=None, help="sweep shuffle seed (default 0)")
    sub.add_argument("--no-theta-step", action="store_true",
                     help="freeze kernel weights at their uniform initialization")


_SOLVER_KEYS = {"C": "C", "p": "p", "epsilon": "epsilon", "max_epochs": "max_epochs",
                "sweep_order": "sweep_order", "gap_check_interval": "gap_check_interval",
                "seed": "seed"}


def _solver_config(args) -> SolverConfig:
    """Merge precedence: CLI flag > config file > dataclass default."""
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_cfg = yaml.safe_load(fh) or {}
        unknown = set(file_cfg) - set(_SOLVER_KEYS)
        if unknown:
            raise ValueError(f"unknown solver config keys {sorted(unknown)}")
    kwargs = {}
    for attr, key in _SOLVER_KEYS.items():
        cli_val = getattr(args, attr, None)
        if cli_val is not None:
            kwargs[key] = cli_val
        elif key in file_cfg:
            kwargs[key] = file_cfg[key]
    if getattr(args, "no_theta_step", False):
        kwargs["update_theta"] = False
    cfg = SolverConfig(**kwargs)
    cfg.validate()
    return cfg


def cmd_generate(args) -> int:
    spec = datagen.SyntheticSpec(
        dim=args.dim, sigma=args.sigma, flips=args.flips, depth=args.depth,
        n_train_per_class=args.train_per_class,
        n_test_per_class=args.test_per_class, seed=args.seed)
    train_ds, test_ds, _, sim = datagen.generate(spec)
    tree = datagen.similarity_to_tree_clusters(spec.depth)
    os.makedirs(args.out, exist_ok=True)
    _atomic_write(os.path.join(args.out, "train.txt"),
                  lambda p: write_dataset(train_ds, p))
    _atomic_write(os.path.join(args.out, "test.txt"),
                  lambda p: write_dataset(test_ds, p))
    _atomic_write(os.path.join(args.out, "true_similarity.txt"),
                  lambda p: taskstruct.save_matrix(sim, p))
    _atomic_write(os.path.join(args.out, "tree.txt"),
                  lambda p: datagen.write_tree(tree, p))
    print(f"wrote {spec.n_tasks}-task dataset to {args.out}")
    return EXIT_OK


def _load_maps(args, data) -> list | None:
    if not getattr(args, "map", None):
        return None
    maps = [FeatureMap.parse(text) for text in args.map]
    if len(maps) != data.M:
        raise ValueError(f"got {len(maps)} --map flags for {data.M} views")
    return maps


def cmd_train(args) -> int:
    config = _solver_config(args)
    data = read_dataset(args.data)
    Qs = taskstruct.load_task_structures(args.task_structure, T=data.T)
    maps = _load_maps(args, data)
    state, report = train(data, Qs, config, maps=maps)
    _atomic_write(args.model_out, lambda p: save_model(state, p))
    if args.report_out:
        _atomic_write(args.report_out, lambda p: write_train_report(report, p))
        figures.theta_trajectory_figure(
            report.theta_trajectory,
            os.path.splitext(args.report_out)[0] + "_theta.png")
    print(f"stop={report.stop_reason} epochs={report.epochs} "
          f"primal={report.primal:.6g} gap={report.gap:.3g}")
    return EXIT_OK if report.stop_reason != "max_epochs" else EXIT_MAX_EPOCHS


def cmd_predict(args) -> int:
    state = load_model(args.model)
    data = read_dataset(args.data)
    if state.maps is not None:
        data = data.apply_maps(state.maps)
    scores = predict_dataset(state, data)

    def writer(path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("index\ttask\tscore\n")
            for i, s in enumerate(scores):
                fh.write(f"{i}\t{data.task_of[i]}\t{float(s)!r}\n")

    _atomic_write(args.out, writer)
    print(f"wrote {len(scores)} scores to {args.out}")
    return EXIT_OK


def _render_report_figures(reports, outdir) -> None:
    figdir = os.path.join(outdir, "figures")
    os.makedirs(figdir, exist_ok=True)
    rows = [{"method": r.method, "mean_auc": r.mean_auc, "std_auc": 0.0}
            for r in reports]
    figures.auc_bars(rows, os.path.join(figdir, "auc_summary.png"))
    for r in reports:
        if r.roc:
            figures.roc_figure(r.roc, os.path.join(figdir, f"roc_{r.method}.png"),
                               title=f"{r.method} (mean AUC {r.mean_auc:.3f})")


def cmd_evaluate(args) -> int:
    state = load_model(args.model)
    data = read_dataset(args.data)
    if state.maps is not None:
        data = data.apply_maps(state.maps)
    scores = predict_dataset(state, data)
    aucs = evaluation.per_task_auc(scores, data.labels, data.task_of, state.T)
    roc = {t: evaluation.roc_points(scores[data.task_indices(t)],
                                    data.labels[data.task_indices(t)], 256)
           for t in range(state.T)}
    report = evaluation.EvalReport(method=args.method_label, per_task_auc=aucs,
                                   mean_auc=float(aucs.mean()), roc=roc,
                                   config_echo={"model": args.model})
    report.validate()
    os.makedirs(args.out, exist_ok=True)
    _atomic_write(os.path.join(args.out, "report.tsv"),
                  lambda p: evaluation.write_report_table([report], p))
    _atomic_write(os.path.join(args.out, "roc_points.tsv"),
                  lambda p: evaluation.write_roc_table([report], p))
    if not args.no_figures:
        _render_report_figures([report], args.out)
    print(f"mean AUC {report.mean_auc:.4f} over {state.T} tasks -> {args.out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    base = datagen.SyntheticSpec(
        dim=args.dim, sigma=args.sigma, flips=args.flips, depth=args.depth,
        n_train_per_class=args.train_per_class,
        n_test_per_class=args.test_per_class, seed=args.seed)
    cfg = evaluation.EvalConfig(
        C_grid=tuple(args.C_grid), p_values=tuple(args.p),
        epsilon=args.epsilon, max_epochs=args.max_epochs,
        seed=args.seed, n_jobs=args.jobs)
    seeds = list(range(args.seed, args.seed + args.seeds))
    per_seed, summary = evaluation.run_benchmark(base, seeds, cfg)
    os.makedirs(args.out, exist_ok=True)
    for seed, reports in per_seed.items():
        seed_dir = os.path.join(args.out, f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        _atomic_write(os.path.join(seed_dir, "report.tsv"),
                      lambda p, r=reports: evaluation.write_report_table(r, p))
        _atomic_write(os.path.join(seed_dir, "roc_points.tsv"),
                      lambda p, r=reports: evaluation.write_roc_table(r, p))
    _atomic_write(os.path.join(args.out, "summary.tsv"),
                  lambda p: evaluation.write_summary(summary, p))
    figdir = os.path.join(args.out, "figures")
    os.makedirs(figdir, exist_ok=True)
    figures.auc_bars(summary, os.path.join(figdir, "auc_summary.png"))
    first = per_seed[seeds[0]]
    for r in first:
        if r.roc:
            figures.roc_figure(r.roc, os.path.join(figdir, f"roc_{r.method}.png"),
                               title=f"{r.method} seed {seeds[0]}")
    _, _, _, sim = datagen.generate(
        datagen.SyntheticSpec(dim=base.dim, sigma=base.sigma, flips=base.flips,
                              depth=base.depth,
                              n_train_per_class=base.n_train_per_class,
                              n_test_per_class=base.n_test_per_class,
                              seed=seeds[0]))
    figures.similarity_heatmap(sim, os.path.join(figdir, "true_similarity.png"))
    for row in summary:
        print(f"{row['method']:>12s}  mean AUC {row['mean_auc']:.4f} "
              f"(+/- {row['std_auc']:.4f})")
    return EXIT_OK


def cmd_plot_data(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.report, "report.tsv")
    roc_path = os.path.join(args.report, "roc_points.tsv")
    summary_path = os.path.join(args.report, "summary.tsv")
    made = []
    if os.path.exists(report_path):
        table = evaluation.read_report_table(report_path)
        rows = [{"method": m, "mean_auc": v["mean_auc"], "std_auc": 0.0}
                for m, v in table.items() if v["mean_auc"] is not None]
        if rows:
            figures.auc_bars(rows, os.path.join(args.out, "auc_summary.png"))
            made.append("auc_summary.png")
    if os.path.exists(summary_path):
        with open(summary_path, "r", encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            rows = []
            for line in fh:
                cells = line.rstrip("\n").split("\t")
                rows.append({"method": cells[0], "mean_auc": float(cells[1]),
                             "std_auc": float(cells[2])})
        if rows:
            figures.auc_bars(rows, os.path.join(args.out, "auc_over_seeds.png"))
            made.append("auc_over_seeds.png")
    if os.path.exists(roc_path):
        by_method = evaluation.read_roc_table(roc_path)
        for method, roc in by_method.items():
            name = f"roc_{method}.png"
            figures.roc_figure(roc, os.path.join(args.out, name), title=method)
            made.append(name)
    if not made:
        raise ValueError(f"no report.tsv/roc_points.tsv/summary.tsv under {args.report}")
    print("rendered " + ", ".join(made) + f" -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtmkl",
        description="Multi-task multiple kernel learning: data generation, "
                    "training, prediction, evaluation, and the benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic multi-task dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--dim", type=int, default=100, help="feature dimension (default 100)")
    g.add_argument("--sigma", type=float, default=20.0, help="class std (default 20)")
    g.add_argument("--flips", type=int, default=5, help="sign flips per tree edge (default 5)")
    g.add_argument("--depth", type=int, default=5,
                   help="tree depth; 2**depth tasks (default 5 -> 32 tasks)")
    g.add_argument("--train-per-class", type=int, default=10)
    g.add_argument("--test-per-class", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True, help="dataset file")
    t.add_argument("--task-structure", required=True, help="task-structure YAML")
    t.add_argument("--model-out", required=True, help="model file to write")
    t.add_argument("--report-out", default=None, help="training report file")
    t.add_argument("--map", action="append", default=None,
                   help="per-view feature map, e.g. 'dense' or "
                        "'spectrum k=3 bits=12 alphabet=ACGT' (repeatable)")
    _add_solver_flags(t)
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a dataset with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="TSV: index, task, score")
    p.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="per-task AUC/ROC report for a model")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--method-label", default="model")
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("benchmark", help="full baseline comparison on generated data")
    b.add_argument("--out", required=True, help="report directory")
    b.add_argument("--seeds", type=int, default=10, help="number of replicate seeds")
    b.add_argument("--seed", type=int, default=0, help="first seed")
    b.add_argument("--p", type=float, nargs="+", default=[1.0, 2.0, 3.0])
    b.add_argument("--C-grid", type=float, nargs="+",
                   default=[0.01, 0.1, 1.0, 10.0, 100.0])
    b.add_argument("--epsilon", type=float, default=1e-3)
    b.add_argument("--max-epochs", type=int, default=60)
    b.add_argument("--jobs", type=int, default=_default_jobs(),
                   help="parallel training jobs (default: MTMKL_JOBS or CPU count)")
    b.add_argument("--dim", type=int, default=100)
    b.add_argument("--sigma", type=float, default=20.0)
    b.add_argument("--flips", type=int, default=5)
    b.add_argument("--depth", type=int, default=5)
    b.add_argument("--train-per-class", type=int, default=10)
    b.add_argument("--test-per-class", type=int, default=1000)
    b.set_defaults(func=cmd_benchmark)

    d = sub.add_parser("plot-data", help="render figures from report tables")
    d.add_argument("--report", required=True, help="directory with report tables")
    d.add_argument("--out", required=True, help="figure output directory")
    d.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"mtmkl: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError) as exc:
        print(f"mtmkl: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
