"""Independent reference computations used as test oracles.

These deliberately avoid the library's own code paths: conjugates come
from 1-d numeric maximization, kernel-weight optima from constrained
numeric minimization, and dual SVM optima from accelerated projected
gradient on the box QP.
"""

import numpy as np
from scipy import optimize


def conjugate_by_maximization(loss, a, lo=-80.0, hi=80.0):
    """sup_b (a*b - l(b)) by bounded scalar maximization."""
    res = optimize.minimize_scalar(lambda b: -(a * b - loss.value(b)),
                                   bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-13})
    return -res.fun


def theta_objective(theta, r):
    theta = np.asarray(theta)
    out = 0.0
    for rm, th in zip(r, theta):
        if th > 1e-300:
            out += rm / th
        elif rm > 0:
            return np.inf
    return out


def best_theta_numeric(r, p):
    """Minimize sum r_m/theta_m over the lp ball by SLSQP from the
    uniform start (the problem is convex on the feasible set)."""
    r = np.asarray(r, dtype=float)
    M = len(r)
    x0 = np.full(M, (1.0 / M) ** (1.0 / p))
    cons = [{"type": "ineq", "fun": lambda th: 1.0 - np.sum(np.abs(th) ** p)}]
    bounds = [(1e-9, 1.0)] * M
    res = optimize.minimize(theta_objective, x0, args=(r,), method="SLSQP",
                            bounds=bounds, constraints=cons,
                            options={"maxiter": 500, "ftol": 1e-14})
    return res.x, theta_objective(res.x, r)


def best_theta_two_view(r, p):
    """Golden-section oracle for M = 2: parameterize theta_2 by theta_1 on
    the unit lp sphere."""
    def f(t1):
        t2 = (1.0 - t1 ** p) ** (1.0 / p)
        return theta_objective((t1, t2), r)
    res = optimize.minimize_scalar(f, bounds=(1e-9, 1.0 - 1e-12),
                                   method="bounded", options={"xatol": 1e-13})
    return res.fun


def box_qp_max(Q, C, iters=60000, tol=1e-13):
    """Maximize sum(a) - 0.5 a^T Q a over [0, C]^n by accelerated projected
    gradient with adaptive restart."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    L = max(float(np.linalg.eigvalsh(Q).max()), 1e-12)
    step = 1.0 / L
    a = np.zeros(n)
    z = a.copy()
    t = 1.0
    f_prev = -np.inf
    for _ in range(iters):
        grad = 1.0 - Q @ z
        a_new = np.clip(z + step * grad, 0.0, C)
        f_new = float(a_new.sum() - 0.5 * a_new @ Q @ a_new)
        if f_new < f_prev:
            # restart momentum
            z = a.copy()
            t = 1.0
            grad = 1.0 - Q @ z
            a_new = np.clip(z + step * grad, 0.0, C)
            f_new = float(a_new.sum() - 0.5 * a_new @ Q @ a_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = a_new + ((t - 1.0) / t_new) * (a_new - a)
        z = np.clip(z, 0.0, C)
        # projected-gradient optimality measure
        g = 1.0 - Q @ a_new
        pg = np.where(a_new <= 0.0, np.maximum(g, 0.0),
                      np.where(a_new >= C, np.minimum(g, 0.0), g))
        a, t, f_prev = a_new, t_new, f_new
        if np.max(np.abs(pg)) < tol:
            break
    return a, float(a.sum() - 0.5 * a @ Q @ a)


def svm_primal_objective(X, y, w, C):
    margins = y * (X @ w)
    return 0.5 * float(w @ w) + C * float(np.sum(np.maximum(0.0, 1.0 - margins)))


def reference_svm_epoch(X, y, alpha, w, C, order):
    """One sweep of textbook dual coordinate ascent for the bias-free
    linear SVM; mutates alpha and w in place."""
    for i in order:
        qii = float(X[i] @ X[i])
        if qii <= 0.0:
            continue
        d = (1.0 - y[i] * float(w @ X[i])) / qii
        d = max(-alpha[i], min(C - alpha[i], d))
        if d == 0.0:
            continue
        alpha[i] += d
        w += d * y[i] * X[i]


def random_spd_coupling(T, rng, scale=1.0):
    """A random symmetric positive definite coupling pair (Q, Qinv)."""
    A = rng.normal(size=(T, T))
    Q = A @ A.T / T + scale * np.eye(T)
    return Q, np.linalg.inv(Q)
