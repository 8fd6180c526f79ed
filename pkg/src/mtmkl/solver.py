"""Dual coordinate ascent trainer for multi-task models with learned
lp-norm kernel weights.

The model keeps one weight vector per (view, task) pair, consistent with
the dual variables through

    w_mt = theta_m * sum_i qinv_m[tau(i), t] * alpha_i * y_i * phi_m(x_i),

so sweeps over the dual variables can be performed with feature-space
inner products only.  Training alternates full alpha sweeps with an
analytic update of the kernel weights theta, gated on primal decrease,
and certifies convergence with a theta-free duality gap.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import FeatureMap, Loss, MultiTaskDataset, feature_map_apply, get_loss

__all__ = [
    "SolverConfig", "ModelState", "TrainReport", "NumericalAbort",
    "UnsupportedLossError", "init_state", "theta_step", "coordinate_update",
    "apply_alpha_update", "apply_theta_rescale", "primal_objective",
    "dual_objective_partial", "dual_objective_complete", "duality_gap_complete",
    "train", "predict", "representer_weights", "save_model", "load_model",
    "write_train_report",
]

# kernel weights below this are clamped so that rescales stay well-defined
THETA_FLOOR = 1e-12


class NumericalAbort(RuntimeError):
    """Raised when training hits a numerically broken state (non-PSD
    coupling, non-finite objective, or a zero kernel weight)."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class UnsupportedLossError(ValueError):
    pass


@dataclass
class SolverConfig:
    """Knobs of the trainer.

    epsilon is the relative-objective stopping tolerance; it also sets the
    duality-gap certificate threshold eps * (1 + |primal|).  The gap is
    evaluated every `gap_check_interval` epochs.  `update_theta=False`
    freezes the kernel weights at their uniform initialization (used by
    the fixed-weight baseline).
    """

    C: float = 1.0
    p: float = 2.0
    epsilon: float = 1e-5
    max_epochs: int = 1000
    sweep_order: str = "shuffled"      # "shuffled" | "sequential"
    gap_check_interval: int = 1
    seed: int = 0
    loss: str = "hinge"
    update_theta: bool = True
    stop_on_primal_change: bool = True
    stop_on_gap: bool = True
    # debug: keep the extra theta factor in the update numerator instead of
    # relying on the weights having absorbed it
    literal_theta_numerator: bool = False

    def validate(self) -> None:
        if not (self.C > 0):
            raise ValueError("C must be positive")
        if not (self.p >= 1):
            raise ValueError("p must be >= 1")
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.sweep_order not in ("shuffled", "sequential"):
            raise ValueError(f"unknown sweep order {self.sweep_order!r}")
        if self.gap_check_interval < 1:
            raise ValueError("gap_check_interval must be >= 1")
        get_loss(self.loss)


@dataclass
class TrainReport:
    epochs: int = 0
    primal: float = math.nan
    dual_partial: float = math.nan
    dual_complete: float = math.nan
    gap: float = math.nan
    stop_reason: str = ""
    primal_trajectory: list = field(default_factory=list)
    dual_trajectory: list = field(default_factory=list)
    gap_trajectory: dict = field(default_factory=dict)
    theta_trajectory: list = field(default_factory=list)
    theta_step_epochs: list = field(default_factory=list)
    seconds: dict = field(default_factory=dict)


class ModelState:
    """Mutable training state: weights, kernel weights, duals, and caches.

    Single-threaded by contract while training; safe to share once
    training has finished.
    """

    def __init__(self, W, theta, alpha, view_of, T, config, loss,
                 data=None, Qs=None, maps=None, q_labels=None):
        self.W = W                      # per component m: (T, e) array
        self.theta = theta              # (M,)
        self.alpha = alpha              # (n,) or None for loaded models
        self.view_of = view_of          # component -> physical view index
        self.T = T
        self.config = config
        self.loss = loss
        self.data = data
        self.Qs = Qs
        self.maps = maps
        self.q_labels = q_labels or (["" for _ in W] if Qs is None
                                     else [q.label for q in Qs])
        self.primal_value = math.nan
        self.diag = None                # (M, n) coupling-weighted squared norms
        self.coupling = None            # [m][s] -> (task indices, qinv values)
        self.rows_of_task = None
        self.stacked = None             # (T, M, e) fused weights, when usable
        self.fused_coupling = None      # [s] -> (task idx, comp idx, qinv values)

    @property
    def M(self) -> int:
        return len(self.W)

    def _build_caches(self) -> None:
        data, Qs = self.data, self.Qs
        n = data.n
        norms = {}
        for v in set(self.view_of):
            norms[v] = data.views[v].row_norms_sq()
        tau = data.task_of
        self.diag = np.empty((self.M, n))
        self.coupling = []
        for m, q in enumerate(Qs):
            qd = q.Qinv.diagonal()
            self.diag[m] = qd[tau] * norms[self.view_of[m]]
            tol = 1e-14 * max(np.max(np.abs(q.Qinv)), 1.0)
            rows = []
            for s in range(self.T):
                nz = np.flatnonzero(np.abs(q.Qinv[s]) > tol)
                rows.append((nz, q.Qinv[s, nz].copy()))
            self.coupling.append(rows)
        if self.stacked is not None:
            self.fused_coupling = []
            for s in range(self.T):
                tidx = np.concatenate([self.coupling[m][s][0] for m in range(self.M)])
                midx = np.concatenate([np.full(len(self.coupling[m][s][0]), m,
                                               dtype=np.int64)
                                       for m in range(self.M)])
                qv = np.concatenate([self.coupling[m][s][1] for m in range(self.M)])
                self.fused_coupling.append((tidx, midx, qv))
        self.rows_of_task = [np.flatnonzero(tau == t) for t in range(self.T)]


def init_state(data: MultiTaskDataset, Qs, config: SolverConfig,
               maps=None, stacked: bool = True) -> ModelState:
    """Fresh state: alpha = 0, W = 0, uniform theta on the lp sphere.

    When every coupling shares one dense view, the weights live in a fused
    (T, M, dim) array that the sweep can update in bulk; `stacked=False`
    forces the generic per-view layout (identical results, for debugging).
    """
    config.validate()
    if data.n == 0:
        raise ValueError("dataset is empty")
    if not Qs:
        raise ValueError("need at least one task-coupling matrix")
    if not data.is_numeric():
        if maps is None:
            raise ValueError("dataset has raw string views; feature maps required")
        data = data.apply_maps(maps)
    M = len(Qs)
    if data.M == M:
        view_of = list(range(M))
    elif data.M == 1:
        view_of = [0] * M
    else:
        raise ValueError(
            f"dataset has {data.M} views but {M} coupling matrices; "
            "views must match couplings or be a single shared view")
    for q in Qs:
        if q.T != data.T:
            raise ValueError(f"coupling matrix is {q.T}x{q.T}, dataset has {data.T} tasks")
    theta = np.full(M, (1.0 / M) ** (1.0 / config.p))
    stack = None
    if stacked and len(set(view_of)) == 1 and data.views[view_of[0]].kind == "dense":
        stack = np.zeros((data.T, M, data.views[view_of[0]].dim))
        W = [stack[:, m, :] for m in range(M)]
    else:
        W = [np.zeros((data.T, data.views[view_of[m]].dim)) for m in range(M)]
    state = ModelState(W=W, theta=theta, alpha=np.zeros(data.n), view_of=view_of,
                       T=data.T, config=config, loss=get_loss(config.loss),
                       data=data, Qs=Qs, maps=maps)
    state.stacked = stack
    state._build_caches()
    return state


# ---------------------------------------------------------------------------
# Kernel-weight step
# ---------------------------------------------------------------------------

def _regularizer_terms(W, Qs) -> np.ndarray:
    """r_m = sum_{s,t} q_m[s,t] <w_ms, w_mt> = tr(W_m Q_m W_m^T)."""
    return np.array([float(np.sum((q.Q @ Wm) * Wm)) for Wm, q in zip(W, Qs)])


def _theta_from_terms(r: np.ndarray, p: float) -> np.ndarray:
    """Closed-form minimizer of sum_m r_m / theta_m over the lp ball."""
    M = len(r)
    if np.any(r < -1e-8):
        raise NumericalAbort(
            f"negative regularizer term {r.min():.3e}: coupling matrix is not PSD "
            "on the realized weights")
    r = np.clip(r, 0.0, None)
    rmax = r.max()
    if rmax <= 0.0:
        return np.full(M, (1.0 / M) ** (1.0 / p))
    num = (r / rmax) ** (1.0 / (p + 1.0))
    theta = num / np.sum(num ** p) ** (1.0 / p)
    return np.maximum(theta, THETA_FLOOR)


def theta_step(W, Qs, p: float) -> np.ndarray:
    """Optimal kernel weights for fixed W; uniform when W = 0.

    The result has unit lp norm (up to the tiny floor keeping all
    weights positive).
    """
    return _theta_from_terms(_regularizer_terms(W, Qs), p)


# ---------------------------------------------------------------------------
# Coordinate updates
# ---------------------------------------------------------------------------

def _score_of(state: ModelState, i: int, t: int, literal: bool) -> float:
    views, view_of, W = state.data.views, state.view_of, state.W
    s = 0.0
    if literal:
        for m in range(state.M):
            s += state.theta[m] * views[view_of[m]].dot(i, W[m][t])
    else:
        for m in range(state.M):
            s += views[view_of[m]].dot(i, W[m][t])
    return s


def coordinate_update(state: ModelState, i: int) -> float:
    """Optimal clipped step d for dual variable alpha_i (hinge loss).

    Examples with zero curvature along their coordinate (zero features in
    every view and zero diagonal coupling) are skipped with d = 0.
    """
    den = float(state.theta @ state.diag[:, i])
    if den <= 0.0:
        return 0.0
    t = int(state.data.task_of[i])
    y = state.data.labels[i]
    d = (1.0 - y * _score_of(state, i, t, state.config.literal_theta_numerator)) / den
    lo = -state.alpha[i]
    hi = state.config.C - state.alpha[i]
    return lo if d < lo else (hi if d > hi else d)


def apply_alpha_update(state: ModelState, i: int, d: float) -> None:
    """alpha_i += d with the matching rank-one weight updates; only tasks
    with nonzero coupling to tau(i) are touched."""
    if d == 0.0:
        return
    state.alpha[i] += d
    t = int(state.data.task_of[i])
    dy = d * state.data.labels[i]
    views, view_of = state.data.views, state.view_of
    for m in range(state.M):
        tasks, qv = state.coupling[m][t]
        views[view_of[m]].scatter_add(i, state.W[m], tasks, dy * state.theta[m] * qv)


def apply_theta_rescale(state: ModelState, theta_new) -> None:
    """Rescale every weight vector by theta_new/theta_old and store the
    new weights."""
    theta_new = np.asarray(theta_new, dtype=float)
    old = state.theta
    if np.any(old <= 0.0):
        raise NumericalAbort(
            "kernel weight reached zero; positive-weight invariant violated",
            state=state)
    ratio = theta_new / np.maximum(old, THETA_FLOOR)
    for m in range(state.M):
        state.W[m] *= ratio[m]
    state.theta = theta_new.copy()


# ---------------------------------------------------------------------------
# Objectives and the duality gap
# ---------------------------------------------------------------------------

def _scores_by_view(state: ModelState) -> np.ndarray:
    """(n, M) matrix of per-view scores <w_{m tau(i)}, phi_m(x_i)>,
    batched by task."""
    data = state.data
    S = np.zeros((data.n, state.M))
    if state.stacked is not None:
        X = data.views[state.view_of[0]].X
        for t in range(state.T):
            rows = state.rows_of_task[t]
            if len(rows):
                S[rows] = X[rows] @ state.stacked[t].T
        return S
    for m in range(state.M):
        view = data.views[state.view_of[m]]
        Wm = state.W[m]
        for t in range(state.T):
            rows = state.rows_of_task[t]
            if len(rows) == 0:
                continue
            if view.kind == "dense":
                S[rows, m] = view.X[rows] @ Wm[t]
            else:
                for i in rows:
                    S[i, m] = view.dot(i, Wm[t])
    return S


def _margins(state: ModelState) -> np.ndarray:
    """y_i * sum_m <w_{m tau(i)}, phi_m(x_i)> for all i."""
    return state.data.labels * _scores_by_view(state).sum(axis=1)


def primal_objective(state: ModelState) -> float:
    """0.5 * sum_m r_m/theta_m + C * sum_i l(margin_i), with 0/0 := 0 and
    r/0 := +inf for r > 0."""
    r = _regularizer_terms(state.W, state.Qs)
    reg = 0.0
    for rm, th in zip(r, state.theta):
        if th > 0.0:
            reg += rm / th
        elif rm > 1e-30 * max(r.max(), 1.0):
            return math.inf
    margins = _margins(state)
    loss = state.loss
    if loss.kind == "hinge":
        total = float(np.sum(np.maximum(0.0, 1.0 - margins)))
    else:
        total = float(np.sum(np.logaddexp(0.0, -margins)))
    return 0.5 * reg + state.config.C * total


def _conjugate_term(state: ModelState) -> float:
    """-C * sum_i l*(-alpha_i / C); equals sum(alpha) for feasible hinge
    duals."""
    C = state.config.C
    if state.loss.kind == "hinge":
        return float(np.sum(state.alpha))
    return -C * sum(state.loss.conjugate(-a / C) for a in state.alpha)


def dual_objective_partial(state: ModelState) -> float:
    """Dual value at fixed theta, evaluated through the maintained weights:
    the quadratic part equals 0.5 * sum_m r_m / theta_m."""
    r = _regularizer_terms(state.W, state.Qs)
    quad = 0.0
    for rm, th in zip(r, state.theta):
        if th > 0.0:
            quad += rm / th
    return _conjugate_term(state) - 0.5 * quad


def norm_terms_from_alpha(state: ModelState) -> np.ndarray:
    """||A*_m(alpha)||^2 under Qinv_m, recomputed from the dual variables
    alone (independent of W and theta)."""
    data = state.data
    coef = state.alpha * data.labels
    agg = {}
    for v in set(state.view_of):
        view = data.views[v]
        A = np.zeros((state.T, view.dim))
        for t in range(state.T):
            rows = state.rows_of_task[t]
            if len(rows) == 0:
                continue
            if view.kind == "dense":
                A[t] = coef[rows] @ view.X[rows]
            else:
                for i in rows:
                    idx, val = view.row(i)
                    A[t, idx] += coef[i] * val
        agg[v] = A
    out = np.empty(state.M)
    for m, q in enumerate(state.Qs):
        A = agg[state.view_of[m]]
        out[m] = max(float(np.sum((q.Qinv @ A) * A)), 0.0)
    return out


def _dual_norm(v: np.ndarray, p: float) -> float:
    """||v||_{p/(p-1)} for p >= 1, overflow-safe; p = 1 gives the max norm."""
    vmax = float(np.max(v, initial=0.0))
    if vmax <= 0.0:
        return 0.0
    if p <= 1.0:
        return vmax
    pstar = p / (p - 1.0)
    return vmax * float(np.sum((v / vmax) ** pstar) ** (1.0 / pstar))


def dual_objective_complete(state: ModelState) -> float:
    """Theta-free dual value; lower-bounds the primal for any feasible
    (W, theta)."""
    nu = norm_terms_from_alpha(state)
    return _conjugate_term(state) - 0.5 * _dual_norm(nu, state.config.p)


def duality_gap_complete(state: ModelState, primal: float | None = None) -> float:
    """primal - complete dual; the stopping certificate."""
    if primal is None:
        primal = primal_objective(state)
    return primal - dual_objective_complete(state)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def train(data: MultiTaskDataset, Qs, config: SolverConfig, maps=None):
    """Alternating optimization: full dual sweeps with weight bookkeeping,
    plus analytic kernel-weight steps gated on primal decrease.

    Returns (state, report).  Stops on small relative primal change, a
    certified duality gap below epsilon * (1 + |primal|), or the epoch cap;
    the report records which.
    """
    if config.loss != "hinge":
        raise UnsupportedLossError(
            "analytic coordinate steps cover the hinge loss only; "
            "use the precomputed-kernel reference solver for other losses")
    state = init_state(data, Qs, config, maps=maps)
    n = state.data.n
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    report.theta_trajectory.append(state.theta.copy())
    clock = {"sweep": 0.0, "objective": 0.0, "theta": 0.0}

    o = n * config.C * state.loss.value(0.0)
    o_ref = o
    eps = config.epsilon
    stop_reason = "max_epochs"
    epochs_run = 0

    for epoch in range(1, config.max_epochs + 1):
        epochs_run = epoch
        t0 = time.perf_counter()
        order = rng.permutation(n) if config.sweep_order == "shuffled" else range(n)
        den_vec = state.theta @ state.diag
        alpha, C = state.alpha, config.C
        tau, y = state.data.task_of, state.data.labels
        theta = state.theta
        literal = config.literal_theta_numerator
        if state.stacked is not None:
            # fused layout: one matmul for the score, one indexed add for
            # the coupled weight rows
            Wstack = state.stacked
            X = state.data.views[state.view_of[0]].X
            fused = state.fused_coupling
            for i in order:
                den = den_vec[i]
                if den <= 0.0:
                    continue
                t = tau[i]
                x = X[i]
                comp_scores = Wstack[t] @ x
                s = float(theta @ comp_scores) if literal else float(comp_scores.sum())
                d = (1.0 - y[i] * s) / den
                lo = -alpha[i]
                hi = C - alpha[i]
                if d < lo:
                    d = lo
                elif d > hi:
                    d = hi
                if d == 0.0:
                    continue
                alpha[i] += d
                tidx, midx, qv = fused[t]
                Wstack[tidx, midx] += ((d * y[i]) * theta[midx] * qv)[:, None] * x
        else:
            views, view_of, W, coupling = (state.data.views, state.view_of,
                                           state.W, state.coupling)
            M = state.M
            for i in order:
                den = den_vec[i]
                if den <= 0.0:
                    continue
                t = tau[i]
                s = 0.0
                if literal:
                    for m in range(M):
                        s += theta[m] * views[view_of[m]].dot(i, W[m][t])
                else:
                    for m in range(M):
                        s += views[view_of[m]].dot(i, W[m][t])
                d = (1.0 - y[i] * s) / den
                lo = -alpha[i]
                hi = C - alpha[i]
                if d < lo:
                    d = lo
                elif d > hi:
                    d = hi
                if d == 0.0:
                    continue
                alpha[i] += d
                dy = d * y[i]
                for m in range(M):
                    tasks, qv = coupling[m][t]
                    views[view_of[m]].scatter_add(i, W[m], tasks, dy * theta[m] * qv)
        clock["sweep"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        S = _scores_by_view(state)                    # (n, M) per-view scores
        r = _regularizer_terms(state.W, state.Qs)
        quad = float(np.sum(r / np.maximum(state.theta, THETA_FLOOR)))
        hinge = np.maximum(0.0, 1.0 - y * S.sum(axis=1))
        o_old = o
        o = 0.5 * quad + C * float(hinge.sum())
        if not math.isfinite(o):
            state.primal_value = o
            raise NumericalAbort(f"primal objective became {o}", state=state)
        report.primal_trajectory.append(o)
        report.dual_trajectory.append(float(alpha.sum()) - 0.5 * quad)
        clock["objective"] += time.perf_counter() - t0

        o_state = o
        if config.update_theta and o < o_ref:
            t0 = time.perf_counter()
            theta_new = _theta_from_terms(r, config.p)
            ratio = theta_new / np.maximum(state.theta, THETA_FLOOR)
            apply_theta_rescale(state, theta_new)
            report.theta_step_epochs.append(epoch)
            o_ref = o
            # primal of the rescaled state, from the cached score columns
            S *= ratio
            r = r * ratio ** 2
            hinge = np.maximum(0.0, 1.0 - y * S.sum(axis=1))
            quad = float(np.sum(r / np.maximum(theta_new, THETA_FLOOR)))
            o_state = 0.5 * quad + C * float(hinge.sum())
            clock["theta"] += time.perf_counter() - t0
        report.theta_trajectory.append(state.theta.copy())

        if config.stop_on_gap and epoch % config.gap_check_interval == 0:
            t0 = time.perf_counter()
            if config.update_theta:
                nu = r / np.maximum(state.theta, THETA_FLOOR) ** 2
                dual_c = float(alpha.sum()) - 0.5 * _dual_norm(nu, config.p)
                gap = o_state - dual_c
            else:
                # theta is frozen: certify against the fixed-theta dual
                quad_cur = float(np.sum(r / np.maximum(state.theta, THETA_FLOOR)))
                gap = o_state - (float(alpha.sum()) - 0.5 * quad_cur)
            report.gap_trajectory[epoch] = gap
            clock["objective"] += time.perf_counter() - t0
            if gap <= eps * (1.0 + abs(o_state)):
                stop_reason = "gap_certificate"
                break
        if (config.stop_on_primal_change
                and abs(o_old - o) < eps * max(abs(o_old), 1e-12)):
            stop_reason = "primal_change"
            break

    state.primal_value = primal_objective(state)
    report.epochs = epochs_run
    report.primal = state.primal_value
    report.dual_partial = dual_objective_partial(state)
    report.dual_complete = dual_objective_complete(state)
    report.gap = report.primal - report.dual_complete
    report.stop_reason = stop_reason
    report.seconds = clock
    if report.gap < -1e-8 * max(1.0, abs(report.primal)):
        raise NumericalAbort(
            f"duality gap {report.gap:.3e} is negative beyond tolerance", state=state)
    return state, report


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def predict(state: ModelState, raw_input, task: int, maps=None) -> float:
    """Score sum_m <w_{m,task}, phi_m(x)>; the sign is the class decision.

    raw_input holds one raw item per physical view (a bare vector or
    string is accepted when there is a single view).
    """
    if not 0 <= task < state.T:
        raise ValueError(f"task index {task} out of range [0, {state.T})")
    maps = maps if maps is not None else state.maps
    n_phys = len(set(state.view_of))
    if isinstance(raw_input, (list, tuple)):
        raws = list(raw_input)
    else:
        raws = [raw_input]
    if len(raws) != n_phys:
        raise ValueError(f"expected {n_phys} per-view inputs, got {len(raws)}")
    feats = []
    for v, raw in enumerate(raws):
        fmap = maps[v] if maps is not None else FeatureMap("dense")
        feats.append(feature_map_apply(fmap, raw))
    score = 0.0
    for m in range(state.M):
        w = state.W[m][task]
        phi = feats[state.view_of[m]]
        if isinstance(phi, tuple):
            idx, val = phi
            score += float(w[idx] @ val)
        else:
            score += float(w @ phi)
    return score


def predict_dataset(state: ModelState, data: MultiTaskDataset) -> np.ndarray:
    """Scores for every example of a mapped dataset at its own task."""
    if not data.is_numeric():
        if state.maps is None:
            raise ValueError("dataset has string views and the model has no maps")
        data = data.apply_maps(state.maps)
    scores = np.zeros(data.n)
    rows_of_task = [np.flatnonzero(data.task_of == t) for t in range(state.T)]
    for m in range(state.M):
        view = data.views[state.view_of[m]]
        Wm = state.W[m]
        for t in range(state.T):
            rows = rows_of_task[t]
            if len(rows) == 0:
                continue
            if view.kind == "dense":
                scores[rows] += view.X[rows] @ Wm[t]
            else:
                for i in rows:
                    scores[i] += view.dot(i, Wm[t])
    return scores


def representer_weights(state: ModelState):
    """Rebuild every weight vector from alpha; used to audit consistency."""
    data = state.data
    coef = state.alpha * data.labels
    agg = {}
    for v in set(state.view_of):
        view = data.views[v]
        A = np.zeros((state.T, view.dim))
        for t in range(state.T):
            rows = state.rows_of_task[t]
            if len(rows) == 0:
                continue
            if view.kind == "dense":
                A[t] = coef[rows] @ view.X[rows]
            else:
                for i in rows:
                    idx, val = view.row(i)
                    A[t, idx] += coef[i] * val
        agg[v] = A
    return [state.theta[m] * (q.Qinv @ agg[state.view_of[m]])
            for m, q in enumerate(state.Qs)]


# ---------------------------------------------------------------------------
# Model file
# ---------------------------------------------------------------------------

_MODEL_MAGIC = "mtmkl-model 1"


def _fmt(x: float) -> str:
    return repr(float(x))


def save_model(state: ModelState, path) -> None:
    """Versioned text model; floats are written with full round-trip
    precision so reloaded models predict bit-for-bit identically."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_MODEL_MAGIC + "\n")
        fh.write(f"loss {state.loss.kind}\n")
        fh.write(f"p {_fmt(state.config.p)}\n")
        fh.write(f"C {_fmt(state.config.C)}\n")
        fh.write(f"tasks {state.T}\n")
        n_phys = len(set(state.view_of))
        fh.write(f"views {n_phys}\n")
        for v in range(n_phys):
            fmap = state.maps[v] if state.maps is not None else FeatureMap("dense")
            fh.write(f"view {v} {fmap.describe()}\n")
        fh.write(f"components {state.M}\n")
        for m in range(state.M):
            label = state.q_labels[m] if m < len(state.q_labels) else ""
            fh.write(f"component {m} view={state.view_of[m]} qlabel={label}\n")
        fh.write("theta " + " ".join(_fmt(t) for t in state.theta) + "\n")
        for m in range(state.M):
            for t in range(state.T):
                fh.write(f"w {m} {t} " +
                         " ".join(_fmt(x) for x in state.W[m][t]) + "\n")


def load_model(path) -> ModelState:
    """Load a model for prediction; training state (alpha, caches) is not
    part of the file."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file (bad header)")
    kv = {}
    maps = {}
    comp = {}
    w_lines = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        parts = ln.split()
        if parts[0] == "view":
            maps[int(parts[1])] = FeatureMap.parse(" ".join(parts[2:]))
        elif parts[0] == "component":
            kwargs = dict(p.split("=", 1) for p in parts[2:])
            comp[int(parts[1])] = (int(kwargs["view"]), kwargs.get("qlabel", ""))
        elif parts[0] == "theta":
            kv["theta"] = np.array([float(x) for x in parts[1:]])
        elif parts[0] == "w":
            w_lines.append((int(parts[1]), int(parts[2]),
                            np.array([float(x) for x in parts[3:]])))
        else:
            kv[parts[0]] = " ".join(parts[1:])
    T = int(kv["tasks"])
    M = int(kv["components"])
    view_of = [comp[m][0] for m in range(M)]
    q_labels = [comp[m][1] for m in range(M)]
    dims = {}
    for m, t, vec in w_lines:
        dims[m] = len(vec)
    W = [np.zeros((T, dims[m])) for m in range(M)]
    for m, t, vec in w_lines:
        W[m][t] = vec
    config = SolverConfig(C=float(kv["C"]), p=float(kv["p"]), loss=kv["loss"])
    state = ModelState(W=W, theta=kv["theta"], alpha=None, view_of=view_of,
                       T=T, config=config, loss=get_loss(kv["loss"]),
                       maps=[maps[v] for v in sorted(maps)] if maps else None,
                       q_labels=q_labels)
    return state


def write_train_report(report: TrainReport, path) -> None:
    """Line-oriented tabular report: '#'-prefixed summary, then one row
    per epoch."""
    M = len(report.theta_trajectory[0]) if report.theta_trajectory else 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# stop_reason={report.stop_reason} epochs={report.epochs}\n")
        fh.write(f"# primal={_fmt(report.primal)} dual_partial={_fmt(report.dual_partial)} "
                 f"dual_complete={_fmt(report.dual_complete)} gap={_fmt(report.gap)}\n")
        fh.write("# seconds " +
                 " ".join(f"{k}={v:.3f}" for k, v in report.seconds.items()) + "\n")
        cols = ["epoch", "primal", "dual_partial", "gap", "theta_step"]
        cols += [f"theta_{m}" for m in range(M)]
        fh.write("\t".join(cols) + "\n")
        for e in range(1, report.epochs + 1):
            theta = report.theta_trajectory[min(e, len(report.theta_trajectory) - 1)]
            row = [str(e),
                   _fmt(report.primal_trajectory[e - 1]),
                   _fmt(report.dual_trajectory[e - 1]),
                   _fmt(report.gap_trajectory.get(e, math.nan)),
                   "1" if e in report.theta_step_epochs else "0"]
            row += [_fmt(t) for t in theta]
            fh.write("\t".join(row) + "\n")
