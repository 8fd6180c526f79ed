"""Per-task ROC/AUC evaluation and the baseline comparison harness.

Baselines: `individual` trains one independent model per task, `union`
pools everything into a single task, `vanilla` uses the task hierarchy
with frozen uniform kernel weights, and `mtmkl` learns the weights.  The
regularization constant is selected per method on a stratified validation
split; reports carry per-task AUC, mean AUC, and (downsampled) ROC points.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import MultiTaskDataset
from .solver import (ModelState, SolverConfig, get_loss, predict_dataset,
                     train)
from .taskstruct import TaskTree, q_hierarchical, q_identity

__all__ = [
    "auc", "roc_points", "per_task_auc", "EvalConfig", "EvalReport",
    "run_baselines", "run_benchmark", "summarize",
    "write_report_table", "write_roc_table", "write_summary",
    "read_report_table", "read_roc_table",
]


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative,
    ties counted one half (rank statistic)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    n_pos = int(np.sum(labels > 0))
    n_neg = int(np.sum(labels < 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    avg_rank = ends - (counts - 1) / 2.0
    ranks = avg_rank[inverse]
    r_pos = float(ranks[labels > 0].sum())
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_points(scores, labels, max_points: int | None = None) -> np.ndarray:
    """(false positive rate, true positive rate) pairs over descending
    score thresholds, tie-grouped; both coordinates are non-decreasing.
    `max_points` subsamples the curve for plotting."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    n_pos = int(np.sum(labels > 0))
    n_neg = int(np.sum(labels < 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative label")
    order = np.argsort(-scores, kind="mergesort")
    y = labels[order]
    s = scores[order]
    group_end = np.flatnonzero(np.diff(s) != 0)
    group_end = np.append(group_end, len(s) - 1)
    tp = np.cumsum(y > 0)[group_end] / n_pos
    fp = np.cumsum(y < 0)[group_end] / n_neg
    pts = np.vstack([np.concatenate([[0.0], fp]),
                     np.concatenate([[0.0], tp])]).T
    if max_points is not None and len(pts) > max_points:
        keep = np.unique(np.linspace(0, len(pts) - 1, max_points).astype(int))
        pts = pts[keep]
    return pts


def per_task_auc(scores, labels, task_of, T: int) -> np.ndarray:
    out = np.empty(T)
    for t in range(T):
        rows = np.flatnonzero(task_of == t)
        out[t] = auc(scores[rows], labels[rows])
    return out


# ---------------------------------------------------------------------------
# Baseline harness
# ---------------------------------------------------------------------------

@dataclass
class EvalConfig:
    C_grid: tuple = (0.01, 0.1, 1.0, 10.0, 100.0)
    p_values: tuple = (1.0, 2.0, 3.0)
    vanilla_p: float = 2.0
    rho: float = 1.0
    epsilon: float = 1e-5
    max_epochs: int = 2000
    gap_check_interval: int = 5
    seed: int = 0
    val_fraction: float = 0.25
    n_jobs: int = 1
    max_roc_points: int = 256


@dataclass
class EvalReport:
    method: str
    per_task_auc: np.ndarray
    mean_auc: float
    roc: dict = field(default_factory=dict)          # task -> (k, 2) points
    config_echo: dict = field(default_factory=dict)
    train_log: object = None                          # TrainReport of the refit

    def validate(self) -> None:
        if np.any(self.per_task_auc < 0) or np.any(self.per_task_auc > 1):
            raise ValueError("AUC outside [0, 1]")
        for pts in self.roc.values():
            if np.any(np.diff(pts, axis=0) < -1e-12):
                raise ValueError("ROC points must be monotone")


def stratified_split(ds: MultiTaskDataset, frac: float, seed: int):
    """Per task and class, hold out `frac` of the rows (at least one,
    never all).  Returns (fit_rows, held_rows)."""
    rng = np.random.default_rng(seed)
    fit, held = [], []
    for t in range(ds.T):
        for cls in (1.0, -1.0):
            rows = np.flatnonzero((ds.task_of == t) & (ds.labels == cls))
            rows = rng.permutation(rows)
            k = min(max(int(frac * len(rows)), 1), max(len(rows) - 1, 1))
            held.append(rows[:k])
            fit.append(rows[k:])
    return np.sort(np.concatenate(fit)), np.sort(np.concatenate(held))


def _pooled(ds: MultiTaskDataset) -> MultiTaskDataset:
    return MultiTaskDataset(ds.labels, np.zeros(ds.n, dtype=np.int64), ds.views, 1)


def _solver_config(cfg: EvalConfig, C, p, update_theta=True) -> SolverConfig:
    return SolverConfig(C=C, p=p, epsilon=cfg.epsilon, max_epochs=cfg.max_epochs,
                        gap_check_interval=cfg.gap_check_interval, seed=cfg.seed,
                        update_theta=update_theta)


def _fit_job(args):
    """Worker: train and hand back the weights (not the dataset)."""
    train_ds, Qs, config = args
    state, report = train(train_ds, Qs, config)
    return {"W": state.W, "theta": state.theta, "view_of": state.view_of,
            "T": state.T, "report": report, "config": config}


def _state_from(fit, cfg_echo_loss="hinge") -> ModelState:
    return ModelState(W=fit["W"], theta=fit["theta"], alpha=None,
                      view_of=fit["view_of"], T=fit["T"], config=fit["config"],
                      loss=get_loss(cfg_echo_loss))


def _run_jobs(jobs, n_jobs):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_fit_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_fit_job, jobs))


def _individual_reports(train_ds, test_ds, cfg: EvalConfig):
    """One independent model per task, C selected per task."""
    T = train_ds.T
    q1 = [q_identity(1)]
    aucs = np.empty(T)
    roc = {}
    picked = []
    for t in range(T):
        rows_tr = train_ds.task_indices(t)
        sub = train_ds.subset(rows_tr, T=1, task_of=np.zeros(len(rows_tr), np.int64))
        fit_rows, val_rows = stratified_split(sub, cfg.val_fraction, cfg.seed)
        sub_fit = sub.subset(fit_rows)
        sub_val = sub.subset(val_rows)
        best = (-np.inf, None)
        for C in cfg.C_grid:
            st, _ = train(sub_fit, q1, _solver_config(cfg, C, 2.0))
            val_auc = auc(predict_dataset(st, sub_val), sub_val.labels)
            if val_auc > best[0]:
                best = (val_auc, C)
        st, _ = train(sub, q1, _solver_config(cfg, best[1], 2.0))
        rows_te = test_ds.task_indices(t)
        te = test_ds.subset(rows_te, T=1, task_of=np.zeros(len(rows_te), np.int64))
        scores = predict_dataset(st, te)
        aucs[t] = auc(scores, te.labels)
        roc[t] = roc_points(scores, te.labels, cfg.max_roc_points)
        picked.append(best[1])
    report = EvalReport(method="individual", per_task_auc=aucs,
                        mean_auc=float(aucs.mean()), roc=roc,
                        config_echo={"C_per_task": picked, "p": None})
    report.validate()
    return report


def run_baselines(train_ds: MultiTaskDataset, test_ds: MultiTaskDataset,
                  tree: TaskTree, cfg: EvalConfig):
    """Train and evaluate all baselines; returns one EvalReport per method
    (individual, union, vanilla, and one mtmkl entry per p)."""
    if train_ds.T != test_ds.T:
        raise ValueError("train and test task counts differ")
    T = train_ds.T
    fit_rows, val_rows = stratified_split(train_ds, cfg.val_fraction, cfg.seed)
    sel_train, val_ds = train_ds.subset(fit_rows), train_ds.subset(val_rows)
    Qs_tree = q_hierarchical(tree, rho=cfg.rho)
    q1 = [q_identity(1)]

    # (method key, p, update_theta, Qs, pooled?) drives both phases
    specs = [("union", 2.0, True, q1, True),
             ("vanilla", cfg.vanilla_p, False, Qs_tree, False)]
    specs += [(f"mtmkl_p{p:g}", float(p), True, Qs_tree, False) for p in cfg.p_values]

    jobs = []
    for key, p, upd, Qs, pooled in specs:
        ds = _pooled(sel_train) if pooled else sel_train
        for C in cfg.C_grid:
            jobs.append((ds, Qs, _solver_config(cfg, C, p, upd)))
    fits = _run_jobs(jobs, cfg.n_jobs)

    # select C on the pooled validation AUC: per-task AUC from a 25% split
    # of 10 examples per class rests on 2+2 points and is pure noise
    best_C = {}
    j = 0
    for key, p, upd, Qs, pooled in specs:
        scores_val_ds = _pooled(val_ds) if pooled else val_ds
        best = (-np.inf, None)
        for C in cfg.C_grid:
            st = _state_from(fits[j])
            scores = predict_dataset(st, scores_val_ds)
            val_auc = auc(scores, val_ds.labels)
            if val_auc > best[0]:
                best = (val_auc, C)
            j += 1
        best_C[key] = best[1]

    refit_jobs = []
    for key, p, upd, Qs, pooled in specs:
        ds = _pooled(train_ds) if pooled else train_ds
        refit_jobs.append((ds, Qs, _solver_config(cfg, best_C[key], p, upd)))
    refits = _run_jobs(refit_jobs, cfg.n_jobs)

    reports = [_individual_reports(train_ds, test_ds, cfg)]
    for (key, p, upd, Qs, pooled), fit in zip(specs, refits):
        st = _state_from(fit)
        scores = predict_dataset(st, _pooled(test_ds) if pooled else test_ds)
        aucs = per_task_auc(scores, test_ds.labels, test_ds.task_of, T)
        roc = {t: roc_points(scores[test_ds.task_indices(t)],
                             test_ds.labels[test_ds.task_indices(t)],
                             cfg.max_roc_points)
               for t in range(T)}
        report = EvalReport(method=key, per_task_auc=aucs,
                            mean_auc=float(aucs.mean()), roc=roc,
                            config_echo={"C": best_C[key], "p": p,
                                         "update_theta": upd,
                                         "epsilon": cfg.epsilon,
                                         "max_epochs": cfg.max_epochs},
                            train_log=fit["report"])
        report.validate()
        reports.append(report)
    return reports


def run_benchmark(base_spec, seeds, cfg: EvalConfig):
    """Full multi-seed comparison on generated data.

    Returns (per_seed_reports, summary) where per_seed_reports maps seed ->
    list[EvalReport] and summary aggregates mean AUC per method.
    """
    from . import datagen

    per_seed = {}
    for seed in seeds:
        spec = datagen.SyntheticSpec(
            dim=base_spec.dim, sigma=base_spec.sigma, flips=base_spec.flips,
            depth=base_spec.depth, n_train_per_class=base_spec.n_train_per_class,
            n_test_per_class=base_spec.n_test_per_class, seed=seed)
        train_ds, test_ds, _, _ = datagen.generate(spec)
        tree = datagen.similarity_to_tree_clusters(spec.depth)
        per_seed[seed] = run_baselines(train_ds, test_ds, tree, cfg)
    return per_seed, summarize(per_seed)


def summarize(per_seed: dict):
    """Rows of (method, mean over seeds, std over seeds, per-seed means)."""
    methods = [r.method for r in next(iter(per_seed.values()))]
    rows = []
    for method in methods:
        vals = np.array([[r.mean_auc for r in reports if r.method == method][0]
                         for reports in per_seed.values()])
        rows.append({"method": method, "mean_auc": float(vals.mean()),
                     "std_auc": float(vals.std()),
                     "per_seed": {s: float(v) for s, v in zip(per_seed, vals)}})
    return rows


# ---------------------------------------------------------------------------
# Delimited report files
# ---------------------------------------------------------------------------

def write_report_table(reports, path) -> None:
    """One row per method/task/metric; the 'all' task carries aggregates."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method\ttask\tmetric\tvalue\n")
        for r in reports:
            for t, a in enumerate(r.per_task_auc):
                fh.write(f"{r.method}\t{t}\tauc\t{float(a)!r}\n")
            fh.write(f"{r.method}\tall\tmean_auc\t{float(r.mean_auc)!r}\n")
            for k, v in r.config_echo.items():
                fh.write(f"{r.method}\tall\tconfig:{k}\t{v}\n")


def write_roc_table(reports, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method\ttask\tfpr\ttpr\n")
        for r in reports:
            for t in sorted(r.roc):
                for fpr, tpr in r.roc[t]:
                    fh.write(f"{r.method}\t{t}\t{float(fpr)!r}\t{float(tpr)!r}\n")


def write_summary(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        seeds = sorted(rows[0]["per_seed"]) if rows else []
        head = ["method", "mean_auc", "std_auc"] + [f"seed_{s}" for s in seeds]
        fh.write("\t".join(head) + "\n")
        for row in rows:
            cells = [row["method"], repr(row["mean_auc"]), repr(row["std_auc"])]
            cells += [repr(row["per_seed"][s]) for s in seeds]
            fh.write("\t".join(cells) + "\n")


def read_report_table(path):
    """Returns {method: {"per_task": {task: auc}, "mean_auc": float}}."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("method\t"):
            raise ValueError(f"{path}: not a report table")
        for line in fh:
            method, task, metric, value = line.rstrip("\n").split("\t")
            entry = out.setdefault(method, {"per_task": {}, "mean_auc": None})
            if metric == "auc":
                entry["per_task"][int(task)] = float(value)
            elif metric == "mean_auc":
                entry["mean_auc"] = float(value)
    return out


def read_roc_table(path):
    """Returns {method: {task: (k, 2) array}}."""
    acc: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("method\t"):
            raise ValueError(f"{path}: not a ROC table")
        for line in fh:
            method, task, fpr, tpr = line.rstrip("\n").split("\t")
            acc.setdefault(method, {}).setdefault(int(task), []).append(
                (float(fpr), float(tpr)))
    return {m: {t: np.array(pts) for t, pts in tasks.items()}
            for m, tasks in acc.items()}
