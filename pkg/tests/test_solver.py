import math

import numpy as np
import pytest

from mtmkl.core import DenseView, MultiTaskDataset
from mtmkl.solver import (ModelState, NumericalAbort, SolverConfig,
                          UnsupportedLossError, apply_alpha_update,
                          apply_theta_rescale, coordinate_update,
                          dual_objective_complete, dual_objective_partial,
                          duality_gap_complete, init_state, norm_terms_from_alpha,
                          predict, predict_dataset, primal_objective,
                          representer_weights, save_model, load_model,
                          theta_step, train)
from mtmkl.taskstruct import TaskSimilarity, q_identity

from helpers import (best_theta_numeric, best_theta_two_view, box_qp_max,
                     random_spd_coupling, reference_svm_epoch)


def random_problem(rng, n=30, T=3, M=2, dim=5, separation=1.0):
    """Random linearly-structured multi-task problem with SPD couplings."""
    centers = rng.normal(size=(T, dim))
    labels = rng.choice([-1.0, 1.0], size=n)
    tasks = rng.integers(0, T, size=n)
    # make sure every task has at least one example
    tasks[:T] = np.arange(T)
    X = rng.normal(size=(n, dim)) + separation * labels[:, None] * centers[tasks]
    Qs = []
    for _ in range(M):
        Q, Qinv = random_spd_coupling(T, rng)
        Qs.append(TaskSimilarity(Q=Q, Qinv=Qinv, rank=T, label="rand"))
    data = MultiTaskDataset(labels, tasks, [DenseView(X)], T)
    return data, Qs


def consistent_state(data, Qs, config, alpha):
    """State with the given duals and matching weights."""
    state = init_state(data, Qs, config)
    state.alpha[:] = alpha
    state.W = representer_weights(state)
    return state


# --- theta step -------------------------------------------------------------

def test_theta_step_single_view():
    W = [np.array([[1.0, 2.0]])]
    assert np.allclose(theta_step(W, [q_identity(1)], 2.0), [1.0])


def test_theta_step_equal_terms_uniform():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(2, 3))
    W = [w.copy(), w.copy(), w.copy()]
    Qs = [q_identity(2)] * 3
    for p in (1.0, 2.0, 3.0):
        theta = theta_step(W, Qs, p)
        assert np.allclose(theta, (1.0 / 3.0) ** (1.0 / p), atol=1e-12)
        assert np.sum(theta ** p) == pytest.approx(1.0, abs=1e-10)


def test_theta_step_two_views_matches_golden_section():
    # r = (1, 4), p = 2
    W = [np.array([[1.0]]), np.array([[2.0]])]
    Qs = [q_identity(1), q_identity(1)]
    theta = theta_step(W, Qs, 2.0)
    r = np.array([1.0, 4.0])
    closed_obj = float(np.sum(r / theta))
    assert closed_obj == pytest.approx(best_theta_two_view(r, 2.0), abs=1e-6)
    expect = np.array([1.0, 4.0 ** (1.0 / 3.0)])
    expect /= np.linalg.norm(expect)
    assert np.allclose(theta, expect, atol=1e-12)


def test_theta_step_matches_numeric_minimizer():
    rng = np.random.default_rng(3)
    for trial in range(20):
        M = int(rng.integers(2, 6))
        p = float(rng.choice([1.0, 2.0, 3.0]))
        r = rng.uniform(0.05, 5.0, size=M)
        theta = (r ** (1.0 / (p + 1.0)))
        theta /= np.sum(theta ** p) ** (1.0 / p)
        closed_obj = float(np.sum(r / theta))
        _, num_obj = best_theta_numeric(r, p)
        assert closed_obj <= num_obj + 1e-5 * (1.0 + abs(num_obj))
        assert abs(closed_obj - num_obj) <= 1e-5 * (1.0 + abs(num_obj))


def test_theta_step_zero_weights_gives_uniform():
    W = [np.zeros((2, 3)), np.zeros((2, 3))]
    Qs = [q_identity(2)] * 2
    assert np.allclose(theta_step(W, Qs, 2.0), (0.5) ** 0.5)


def test_theta_step_rejects_broken_coupling():
    bad = TaskSimilarity(Q=np.array([[-1.0]]), Qinv=np.array([[-1.0]]),
                         rank=1, label="broken")
    with pytest.raises(NumericalAbort, match="PSD"):
        theta_step([np.array([[3.0, 0.0]])], [bad], 2.0)


# --- coordinate updates ------------------------------------------------------

def test_fresh_state_step():
    rng = np.random.default_rng(1)
    data, Qs = random_problem(rng, n=12, T=2, M=2)
    config = SolverConfig(C=0.7)
    state = init_state(data, Qs, config)
    for i in range(data.n):
        den = float(state.theta @ state.diag[:, i])
        d = coordinate_update(state, i)
        assert d == pytest.approx(min(config.C, 1.0 / den))


def test_step_keeps_box_feasible_at_upper_bound():
    rng = np.random.default_rng(2)
    data, Qs = random_problem(rng, n=10, T=2, M=1)
    config = SolverConfig(C=0.5)
    state = init_state(data, Qs, config)
    alpha = np.full(data.n, config.C)
    state = consistent_state(data, Qs, config, alpha)
    for i in range(data.n):
        d = coordinate_update(state, i)
        assert -config.C - 1e-12 <= d <= 1e-12
        apply_alpha_update(state, i, d)
        assert 0.0 - 1e-12 <= state.alpha[i] <= config.C + 1e-12


def test_single_task_single_view_matches_reference_svm():
    rng = np.random.default_rng(4)
    n, dim, C = 25, 4, 1.3
    X = rng.normal(size=(n, dim))
    y = rng.choice([-1.0, 1.0], size=n)
    data = MultiTaskDataset(y, np.zeros(n, dtype=int), [DenseView(X)], 1)
    config = SolverConfig(C=C, sweep_order="sequential", max_epochs=1,
                          stop_on_gap=False, stop_on_primal_change=False,
                          update_theta=False)
    state = init_state(data, [q_identity(1)], config)
    alpha_ref = np.zeros(n)
    w_ref = np.zeros(dim)
    for epoch in range(4):
        for i in range(n):
            d = coordinate_update(state, i)
            apply_alpha_update(state, i, d)
        reference_svm_epoch(X, y, alpha_ref, w_ref, C, range(n))
        assert np.allclose(state.alpha, alpha_ref, atol=1e-12)
        assert np.allclose(state.W[0][0], w_ref, atol=1e-12)


def test_alpha_update_noop_and_identity_coupling():
    rng = np.random.default_rng(5)
    data, _ = random_problem(rng, n=8, T=3, M=1)
    Qs = [q_identity(3)]
    state = init_state(data, Qs, SolverConfig())
    before = [w.copy() for w in state.W]
    apply_alpha_update(state, 0, 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(before, state.W))
    apply_alpha_update(state, 0, 0.25)
    t0 = int(data.task_of[0])
    changed = [t for t in range(3) if not np.array_equal(state.W[0][t], before[0][t])]
    assert changed == [t0]


def test_representer_consistency_after_updates_and_rescale():
    rng = np.random.default_rng(6)
    data, Qs = random_problem(rng, n=30, T=4, M=3)
    config = SolverConfig(C=1.0, p=2.0)
    state = init_state(data, Qs, config)
    for i in rng.permutation(data.n):
        apply_alpha_update(state, i, coordinate_update(state, i))
    rebuilt = representer_weights(state)
    for a, b in zip(state.W, rebuilt):
        assert np.max(np.abs(a - b)) <= 1e-6 * max(np.max(np.abs(b)), 1.0)
    theta_new = theta_step(state.W, Qs, config.p)
    apply_theta_rescale(state, theta_new)
    rebuilt = representer_weights(state)
    for a, b in zip(state.W, rebuilt):
        assert np.max(np.abs(a - b)) <= 1e-6 * max(np.max(np.abs(b)), 1.0)


def test_rescale_is_linear_and_guards_zero():
    rng = np.random.default_rng(7)
    data, Qs = random_problem(rng, n=10, T=2, M=2)
    state = init_state(data, Qs, SolverConfig())
    for i in range(data.n):
        apply_alpha_update(state, i, coordinate_update(state, i))
    before = [w.copy() for w in state.W]
    apply_theta_rescale(state, state.theta.copy())
    assert all(np.allclose(a, b) for a, b in zip(before, state.W))
    apply_theta_rescale(state, 2.0 * state.theta)
    assert all(np.allclose(a, 2.0 * b, atol=1e-12) for a, b in zip(state.W, before))
    state.theta = np.zeros_like(state.theta)
    with pytest.raises(NumericalAbort, match="zero"):
        apply_theta_rescale(state, np.ones_like(state.theta))


# --- objectives and duality ---------------------------------------------------

def test_primal_at_zero_weights():
    rng = np.random.default_rng(8)
    data, Qs = random_problem(rng, n=17, T=2, M=2)
    config = SolverConfig(C=2.5)
    state = init_state(data, Qs, config)
    assert primal_objective(state) == pytest.approx(config.C * data.n, abs=1e-12)
    assert dual_objective_partial(state) == 0.0
    assert duality_gap_complete(state) == pytest.approx(config.C * data.n, abs=1e-12)


def test_weak_duality_on_random_feasible_states():
    rng = np.random.default_rng(9)
    for trial in range(10):
        data, Qs = random_problem(rng, n=20, T=3, M=2)
        config = SolverConfig(C=1.0, p=float(rng.choice([1.0, 2.0, 3.0])))
        alpha = rng.uniform(0, config.C, size=data.n)
        state = consistent_state(data, Qs, config, alpha)
        p_val = primal_objective(state)
        d_part = dual_objective_partial(state)
        d_comp = dual_objective_complete(state)
        assert d_part <= p_val + 1e-8
        assert d_comp <= d_part + 1e-8     # complete dual minimizes over theta
        assert duality_gap_complete(state, p_val) >= -1e-8


def test_norm_terms_match_weight_based_identity():
    rng = np.random.default_rng(10)
    data, Qs = random_problem(rng, n=15, T=3, M=2)
    config = SolverConfig(C=1.0)
    alpha = rng.uniform(0, 1.0, size=data.n)
    state = consistent_state(data, Qs, config, alpha)
    nu = norm_terms_from_alpha(state)
    for m, q in enumerate(Qs):
        r_m = float(np.sum((q.Q @ state.W[m]) * state.W[m]))
        assert nu[m] == pytest.approx(r_m / state.theta[m] ** 2, rel=1e-9, abs=1e-12)


def test_complete_dual_uses_max_norm_for_p1():
    rng = np.random.default_rng(11)
    data, Qs = random_problem(rng, n=12, T=2, M=3)
    config = SolverConfig(C=1.0, p=1.0)
    alpha = rng.uniform(0, 1.0, size=data.n)
    state = consistent_state(data, Qs, config, alpha)
    nu = norm_terms_from_alpha(state)
    expect = float(alpha.sum()) - 0.5 * float(np.max(nu))
    assert dual_objective_complete(state) == pytest.approx(expect, rel=1e-12)


def test_partial_dual_meets_primal_at_optimum():
    rng = np.random.default_rng(12)
    data, Qs = random_problem(rng, n=6, T=2, M=2)
    config = SolverConfig(C=1.0, epsilon=1e-9, max_epochs=20000,
                          stop_on_primal_change=False)
    state, report = train(data, Qs, config)
    assert report.stop_reason == "gap_certificate"
    assert abs(report.primal - report.dual_partial) <= 1e-6 * (1 + abs(report.primal))


# --- training ----------------------------------------------------------------

def test_identity_coupling_equals_independent_svms():
    rng = np.random.default_rng(13)
    data, _ = random_problem(rng, n=36, T=3, M=1)
    Qs = [q_identity(3)]
    config = SolverConfig(C=1.0, epsilon=1e-10, max_epochs=30000,
                          stop_on_primal_change=False)
    state, report = train(data, Qs, config)
    total = 0.0
    for t in range(3):
        rows = data.task_indices(t)
        sub = data.subset(rows, T=1, task_of=np.zeros(len(rows), dtype=int))
        st, rep = train(sub, [q_identity(1)], config)
        total += rep.primal
    assert report.primal == pytest.approx(total, rel=1e-6)


def test_training_matches_box_qp_oracle_single_task():
    rng = np.random.default_rng(14)
    n, dim, C = 20, 4, 1.0
    X = rng.normal(size=(n, dim)) + rng.choice([-1.0, 1.0], size=n)[:, None]
    y = rng.choice([-1.0, 1.0], size=n)
    data = MultiTaskDataset(y, np.zeros(n, dtype=int), [DenseView(X)], 1)
    config = SolverConfig(C=C, epsilon=1e-10, max_epochs=50000,
                          stop_on_primal_change=False)
    state, report = train(data, [q_identity(1)], config)
    Qmat = (X @ X.T) * np.outer(y, y)
    _, dual_opt = box_qp_max(Qmat, C)
    assert report.primal == pytest.approx(dual_opt, rel=1e-6)


def test_training_is_deterministic():
    rng = np.random.default_rng(15)
    data, Qs = random_problem(rng, n=25, T=3, M=2)
    config = SolverConfig(C=1.0, epsilon=1e-6, max_epochs=500, seed=42)
    s1, r1 = train(data, Qs, config)
    s2, r2 = train(data, Qs, config)
    assert np.array_equal(s1.alpha, s2.alpha)
    assert all(np.array_equal(a, b) for a, b in zip(s1.W, s2.W))
    assert r1.epochs == r2.epochs


def test_feasibility_and_theta_norm_after_training():
    rng = np.random.default_rng(16)
    for p in (1.0, 2.0, 3.0):
        data, Qs = random_problem(rng, n=30, T=3, M=3)
        config = SolverConfig(C=0.8, p=p, epsilon=1e-7, max_epochs=4000)
        state, report = train(data, Qs, config)
        assert np.all(state.alpha >= -1e-15) and np.all(state.alpha <= config.C + 1e-15)
        assert np.sum(state.theta ** p) ** (1.0 / p) == pytest.approx(1.0, abs=1e-10)
        assert report.gap >= -1e-8


def test_theta_steps_only_after_primal_decrease():
    rng = np.random.default_rng(17)
    data, Qs = random_problem(rng, n=40, T=4, M=3)
    config = SolverConfig(C=1.0, epsilon=1e-8, max_epochs=3000)
    state, report = train(data, Qs, config)
    assert report.theta_step_epochs, "expected at least one kernel-weight step"
    last = data.n * config.C
    stepped = set(report.theta_step_epochs)
    for epoch in range(1, report.epochs + 1):
        o = report.primal_trajectory[epoch - 1]
        if epoch in stepped:
            assert o < last
            last = o


def test_weak_duality_along_trajectory():
    rng = np.random.default_rng(18)
    data, Qs = random_problem(rng, n=30, T=2, M=2)
    config = SolverConfig(C=1.0, epsilon=1e-8, max_epochs=2000)
    _, report = train(data, Qs, config)
    for p_val, d_val in zip(report.primal_trajectory, report.dual_trajectory):
        assert d_val <= p_val + 1e-8
    for epoch, gap in report.gap_trajectory.items():
        assert gap >= -1e-8


def test_max_epochs_reported():
    rng = np.random.default_rng(19)
    data, Qs = random_problem(rng, n=30, T=2, M=2)
    config = SolverConfig(C=1.0, epsilon=1e-14, max_epochs=3)
    _, report = train(data, Qs, config)
    assert report.stop_reason == "max_epochs"
    assert report.epochs == 3


def test_logistic_loss_rejected_by_trainer():
    rng = np.random.default_rng(20)
    data, Qs = random_problem(rng, n=10, T=2, M=1)
    with pytest.raises(UnsupportedLossError):
        train(data, Qs, SolverConfig(loss="logistic"))


def test_literal_numerator_flag_runs():
    rng = np.random.default_rng(21)
    data, Qs = random_problem(rng, n=20, T=2, M=2)
    config = SolverConfig(C=1.0, epsilon=1e-5, max_epochs=200,
                          literal_theta_numerator=True)
    state, report = train(data, Qs, config)
    assert np.all(state.alpha <= config.C + 1e-15)


def test_broadcast_single_view_over_many_couplings():
    rng = np.random.default_rng(22)
    data, Qs = random_problem(rng, n=24, T=3, M=1)
    more = []
    for _ in range(3):
        Q, Qinv = random_spd_coupling(3, rng)
        more.append(TaskSimilarity(Q=Q, Qinv=Qinv, rank=3, label="rand"))
    config = SolverConfig(C=1.0, epsilon=1e-6, max_epochs=1000)
    state, report = train(data, more, config)
    assert state.M == 3 and data.M == 1
    assert report.gap <= config.epsilon * (1 + abs(report.primal)) or \
        report.stop_reason in ("primal_change", "max_epochs")


# --- prediction and model I/O --------------------------------------------------

def test_predict_zero_model_and_linearity():
    rng = np.random.default_rng(23)
    data, Qs = random_problem(rng, n=10, T=2, M=2)
    state = init_state(data, Qs, SolverConfig())
    x = rng.normal(size=data.views[0].dim)
    assert predict(state, x, 0) == 0.0
    for i in range(data.n):
        apply_alpha_update(state, i, coordinate_update(state, i))
    s1 = predict(state, x, 1)
    s2 = predict(state, 2.0 * x, 1)
    assert s2 == pytest.approx(2.0 * s1, rel=1e-12)
    with pytest.raises(ValueError, match="task"):
        predict(state, x, 5)


def test_kkt_margins_at_tight_gap():
    rng = np.random.default_rng(24)
    data, Qs = random_problem(rng, n=30, T=2, M=2, separation=1.5)
    config = SolverConfig(C=1.0, epsilon=1e-7, max_epochs=20000,
                          stop_on_primal_change=False)
    state, report = train(data, Qs, config)
    assert report.gap <= 1e-6 * (1 + abs(report.primal))
    scores = predict_dataset(state, data)
    margins = data.labels * scores
    free = state.alpha < 1e-10
    assert np.all(margins[free] >= 1.0 - 1e-4)


def test_model_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(25)
    data, Qs = random_problem(rng, n=20, T=3, M=2)
    config = SolverConfig(C=1.0, epsilon=1e-6, max_epochs=500)
    state, _ = train(data, Qs, config)
    path = tmp_path / "model.txt"
    save_model(state, path)
    loaded = load_model(path)
    assert np.array_equal(predict_dataset(loaded, data), predict_dataset(state, data))
    path2 = tmp_path / "model2.txt"
    save_model(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_stacked_and_generic_paths_agree():
    # the two layouts accumulate floats in different orders, so compare
    # the certified optima rather than raw trajectories
    rng = np.random.default_rng(26)
    data, _ = random_problem(rng, n=40, T=4, M=1, dim=6)
    more = []
    for _ in range(3):
        Q, Qinv = random_spd_coupling(4, rng)
        more.append(TaskSimilarity(Q=Q, Qinv=Qinv, rank=4, label="rand"))
    config = SolverConfig(C=1.0, epsilon=1e-9, max_epochs=20000, seed=3,
                          stop_on_primal_change=False)
    assert init_state(data, more, config).stacked is not None
    assert init_state(data, more, config, stacked=False).stacked is None
    s1, r1 = train(data, more, config)
    import mtmkl.solver as solver_mod
    orig = solver_mod.init_state
    try:
        solver_mod.init_state = lambda *a, **kw: orig(*a, **{**kw, "stacked": False})
        s2, r2 = train(data, more, config)
    finally:
        solver_mod.init_state = orig
    assert s2.stacked is None
    assert r1.primal == pytest.approx(r2.primal, rel=1e-8)
    assert np.allclose(predict_dataset(s1, data), predict_dataset(s2, data),
                       atol=1e-7)
    assert np.allclose(s1.theta, s2.theta, atol=1e-7)
