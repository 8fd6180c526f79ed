"""Reference solver over precomputed multi-task kernel matrices.

Couples a base kernel with the task kernel entrywise,

    ktilde_m[i, j] = qinv_m[tau(i), tau(j)] * k_m(x_i, x_j),

and runs dual coordinate ascent directly in kernel space with the same
analytic kernel-weight step as the feature-space trainer.  Dense n x n
storage only; this solver exists for verification at desk scale, not for
throughput.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import get_loss
from .solver import NumericalAbort, SolverConfig, _dual_norm, _theta_from_terms
from .taskstruct import load_matrix

__all__ = [
    "MultitaskKernelSet", "OracleResult", "build_multitask_kernels",
    "oracle_train", "norm_term", "load_kernel_matrix",
]


@dataclass
class MultitaskKernelSet:
    """M multi-task kernel matrices with the labels and task map they were
    built for."""

    kernels: list            # M arrays of shape (n, n)
    y: np.ndarray            # (n,) labels in {-1, +1}
    tau: np.ndarray          # (n,) task indices

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def M(self) -> int:
        return len(self.kernels)


def _check_sym_psd(K: np.ndarray, name: str, validate_psd: bool) -> None:
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(float(np.max(np.abs(K))), 1.0)
    if np.max(np.abs(K - K.T)) > 1e-8 * scale:
        raise ValueError(f"{name} is not symmetric")
    if validate_psd:
        lo = float(np.linalg.eigvalsh(K).min())
        if lo < -1e-8 * scale:
            raise ValueError(f"{name} has negative eigenvalue {lo:.3e}")


def build_multitask_kernels(base_kernels, qinvs, tau, y=None,
                            validate_psd=True) -> MultitaskKernelSet:
    """Entrywise product of each base kernel with its task kernel.

    Each factor is PSD, so the products are PSD as well; `validate_psd`
    additionally checks the inputs spectrally (skip for large n).
    """
    tau = np.asarray(tau, dtype=np.int64)
    n = len(tau)
    kernels = []
    for m, (K, Qinv) in enumerate(zip(base_kernels, qinvs)):
        K = np.asarray(K, dtype=float)
        Qinv = np.asarray(Qinv, dtype=float)
        if K.shape != (n, n):
            raise ValueError(f"base kernel {m} has shape {K.shape}, expected {(n, n)}")
        _check_sym_psd(K, f"base kernel {m}", validate_psd)
        _check_sym_psd(Qinv, f"task kernel {m}", validate_psd)
        kernels.append(Qinv[np.ix_(tau, tau)] * K)
    if y is None:
        y = np.ones(n)
    return MultitaskKernelSet(kernels=kernels, y=np.asarray(y, dtype=float), tau=tau)


def norm_term(kernels: MultitaskKernelSet, m: int, alpha) -> float:
    """(alpha y)^T ktilde_m (alpha y), the squared coupling norm of the
    dual expansion in view m."""
    ay = np.asarray(alpha, dtype=float) * kernels.y
    return float(ay @ kernels.kernels[m] @ ay)


@dataclass
class OracleResult:
    alpha: np.ndarray
    theta: np.ndarray
    objective: float
    dual_complete: float = math.nan
    gap: float = math.nan
    epochs: int = 0
    stop_reason: str = ""
    primal_trajectory: list = field(default_factory=list)
    theta_step_epochs: list = field(default_factory=list)


def _logistic_root(a_old, C, g, kii):
    """Solve log((C-a)/a) - g - kii*(a - a_old) = 0 for a in (0, C) by
    bisection; the left side is strictly decreasing."""
    lo, hi = 1e-15 * C, C * (1.0 - 1e-15)
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        val = math.log((C - mid) / mid) - g - kii * (mid - a_old)
        if val > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def oracle_train(kernels: MultitaskKernelSet, config: SolverConfig) -> OracleResult:
    """Dual coordinate ascent on the precomputed kernels with analytic
    kernel-weight steps gated on primal decrease.

    Supports the hinge loss (closed-form coordinate steps) and the
    logistic loss (safeguarded 1-d root finding per coordinate).  Stops on
    relative objective change below epsilon, a certified duality gap, or
    the epoch cap.
    """
    config.validate()
    loss = get_loss(config.loss)
    n, M = kernels.n, kernels.M
    if n > 2000:
        raise ValueError("dense kernel solver is limited to n <= 2000")
    y, C, p = kernels.y, config.C, config.p
    Ks = kernels.kernels
    diag = np.stack([K.diagonal() for K in Ks])     # (M, n)
    diag_scale = max(float(np.max(np.abs(diag))), 1.0)
    if np.min(diag) < -1e-8 * diag_scale:
        raise NumericalAbort("negative curvature on a coordinate: combined "
                             "kernel is not PSD")
    alpha = np.zeros(n)
    U = np.zeros((M, n))                            # u_m = ktilde_m (alpha*y)
    theta = np.full(M, (1.0 / M) ** (1.0 / p))
    rng = np.random.default_rng(config.seed)

    def nu_terms():
        ay = alpha * y
        return np.maximum(U @ ay, 0.0)

    def conj_term():
        if loss.kind == "hinge":
            return float(alpha.sum())
        return -C * sum(loss.conjugate(-a / C) for a in alpha)

    def primal():
        nu = nu_terms()
        margins = y * (theta @ U)
        if loss.kind == "hinge":
            total = float(np.sum(np.maximum(0.0, 1.0 - margins)))
        else:
            total = float(np.sum(np.logaddexp(0.0, -margins)))
        return 0.5 * float(theta @ nu) + C * total

    result = OracleResult(alpha=alpha, theta=theta, objective=math.nan)
    o = n * C * loss.value(0.0)
    o_ref = o
    eps = config.epsilon
    stop_reason = "max_epochs"
    epochs_run = 0

    for epoch in range(1, config.max_epochs + 1):
        epochs_run = epoch
        order = rng.permutation(n) if config.sweep_order == "shuffled" else range(n)
        den_vec = theta @ diag
        for i in order:
            den = den_vec[i]
            if den <= 0.0:
                continue
            f_i = float(theta @ U[:, i])
            if loss.kind == "hinge":
                d = (1.0 - y[i] * f_i) / den
                lo = -alpha[i]
                hi = C - alpha[i]
                d = lo if d < lo else (hi if d > hi else d)
            else:
                a_new = _logistic_root(alpha[i], C, y[i] * f_i, den)
                d = a_new - alpha[i]
            if d == 0.0:
                continue
            alpha[i] += d
            dy = d * y[i]
            for m in range(M):
                U[m] += dy * Ks[m][i]
        o_old = o
        o = primal()
        if not math.isfinite(o):
            raise NumericalAbort(f"objective became {o}")
        result.primal_trajectory.append(o)
        if config.update_theta and o < o_ref:
            theta = _theta_from_terms(theta ** 2 * nu_terms(), p)
            result.theta_step_epochs.append(epoch)
            o_ref = o
        if config.stop_on_gap and epoch % config.gap_check_interval == 0:
            gap = o - (conj_term() - 0.5 * _dual_norm(nu_terms(), p))
            if gap <= eps * (1.0 + abs(o)):
                stop_reason = "gap_certificate"
                break
        if (config.stop_on_primal_change
                and abs(o_old - o) < eps * max(abs(o_old), 1e-12)):
            stop_reason = "primal_change"
            break

    result.theta = theta
    result.objective = primal()
    result.dual_complete = conj_term() - 0.5 * _dual_norm(nu_terms(), p)
    result.gap = result.objective - result.dual_complete
    result.epochs = epochs_run
    result.stop_reason = stop_reason
    if result.gap < -1e-8 * max(1.0, abs(result.objective)):
        raise NumericalAbort(f"duality gap {result.gap:.3e} is negative")
    return result


def load_kernel_matrix(path) -> np.ndarray:
    """Plain-text dense kernel matrix, one row per line."""
    return load_matrix(path)
