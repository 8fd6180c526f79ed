"""Constructors for task-coupling matrix pairs.

Every multi-task variant supplies a symmetric T x T matrix Q weighting the
regularizer tr(W Q W^T) together with its (pseudo-)inverse Qinv, which acts
as the kernel on tasks.  All constructors return validated TaskSimilarity
objects; pseudo-inversion is eigendecomposition-based with a relative rank
cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

__all__ = [
    "TaskSimilarity", "ClusterSpec", "TaskTree", "pseudo_inverse",
    "q_identity", "q_uniform", "q_frustratingly_easy", "q_graph_laplacian",
    "q_clustering", "q_hierarchical", "q_smooth",
    "load_task_structures", "save_matrix", "load_matrix",
]

# relative eigenvalue cutoff used when deciding pseudo-inverse rank
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class TaskSimilarity:
    """A (Q, Qinv) pair of T x T symmetric matrices coupling tasks.

    Q weights the regularizer; Qinv enters the multi-task kernel.  When Q
    is rank-deficient, Qinv is the Moore-Penrose pseudo-inverse and `rank`
    records the retained rank.
    """

    Q: np.ndarray
    Qinv: np.ndarray
    rank: int
    label: str = ""

    @property
    def T(self) -> int:
        return self.Q.shape[0]

    def validate(self, atol: float = 1e-8) -> None:
        Q, Qinv = self.Q, self.Qinv
        if Q.shape != Qinv.shape or Q.shape[0] != Q.shape[1]:
            raise ValueError("Q and Qinv must be square and of equal shape")
        for name, mat in (("Q", Q), ("Qinv", Qinv)):
            if np.max(np.abs(mat - mat.T), initial=0.0) > 1e-10:
                raise ValueError(f"{name} is not symmetric")
        evals = np.linalg.eigvalsh(Qinv)
        spectral = max(np.max(np.abs(evals)), 1.0)
        if evals.min() < -1e-8 * spectral:
            raise ValueError(f"Qinv has negative eigenvalue {evals.min():.3e}")
        eye = np.eye(self.T)
        if self.rank == self.T:
            if np.max(np.abs(Q @ Qinv - eye)) > atol * spectral:
                raise ValueError("Q @ Qinv deviates from identity")
        else:
            if np.max(np.abs(Q @ Qinv @ Q - Q)) > atol * max(np.max(np.abs(Q)), 1.0):
                raise ValueError("pseudo-inverse identity Q Qinv Q = Q violated")


def pseudo_inverse(M: np.ndarray, rtol: float = RANK_RTOL):
    """Moore-Penrose pseudo-inverse of a symmetric matrix via
    eigendecomposition.

    Eigenvalues with |sigma| <= rtol * max|sigma| are treated as zero.
    Returns (pinv, rank).
    """
    M = np.asarray(M, dtype=float)
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-10:
        raise ValueError("pseudo_inverse expects a symmetric matrix")
    evals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    cutoff = rtol * np.max(np.abs(evals), initial=0.0)
    keep = np.abs(evals) > cutoff
    inv_evals = np.zeros_like(evals)
    inv_evals[keep] = 1.0 / evals[keep]
    pinv = (vecs * inv_evals) @ vecs.T
    return 0.5 * (pinv + pinv.T), int(keep.sum())


def _inverse_pair(Q: np.ndarray, label: str) -> TaskSimilarity:
    """Q -> (Q, Qinv) with a plain inverse when full rank, else the
    pseudo-inverse."""
    Q = 0.5 * (Q + Q.T)
    Qinv, rank = pseudo_inverse(Q)
    ts = TaskSimilarity(Q=Q, Qinv=Qinv, rank=rank, label=label)
    ts.validate()
    return ts


def q_identity(T: int) -> TaskSimilarity:
    """Independent tasks: the Dirac kernel on tasks."""
    if T < 1:
        raise ValueError("T must be >= 1")
    eye = np.eye(T)
    return TaskSimilarity(Q=eye, Qinv=eye.copy(), rank=T, label="identity")


def q_uniform(T: int) -> TaskSimilarity:
    """Uniformly related tasks: all-ones kernel on tasks (rank 1)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    Qinv = np.ones((T, T))
    Q = np.full((T, T), 1.0 / T ** 2)
    ts = TaskSimilarity(Q=Q, Qinv=Qinv, rank=1, label="uniform")
    ts.validate()
    return ts


def q_frustratingly_easy() -> TaskSimilarity:
    """Two tasks with doubled same-task base similarity."""
    Qinv = np.array([[2.0, 1.0], [1.0, 2.0]])
    Q = np.array([[2.0 / 3.0, -1.0 / 3.0], [-1.0 / 3.0, 2.0 / 3.0]])
    return TaskSimilarity(Q=Q, Qinv=Qinv, rank=2, label="frustratingly_easy")


def q_graph_laplacian(A: np.ndarray) -> TaskSimilarity:
    """Graph-coupled tasks: Q = I + L with L = D - A.

    The +I makes Q positive definite regardless of the graph, so Qinv is a
    plain inverse.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be a square matrix")
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10:
        raise ValueError("adjacency must be symmetric")
    if A.min(initial=0.0) < 0:
        raise ValueError("adjacency entries must be nonnegative")
    L = np.diag(A.sum(axis=1)) - A
    Q = np.eye(A.shape[0]) + L
    return _inverse_pair(Q, label="graph")


@dataclass(frozen=True)
class ClusterSpec:
    """Soft assignment of T tasks to clusters.

    assignments[m, t] >= 0 is the strength with which task t belongs to
    cluster m; `rho` penalizes the cluster centers and `ridge` adds a
    lambda * I term to Q.
    """

    assignments: np.ndarray   # (n_clusters, T)
    rho: float = 1.0
    ridge: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "assignments",
                           np.asarray(self.assignments, dtype=float))
        if self.assignments.ndim != 2:
            raise ValueError("assignments must be a (clusters, tasks) matrix")
        if self.assignments.min(initial=0.0) < 0:
            raise ValueError("assignments must be nonnegative")
        if self.rho <= 0:
            raise ValueError("center penalty rho must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


def _cluster_coupling(assign_row: np.ndarray, rho: float) -> np.ndarray:
    """G for one cluster: diag(a) - a a^T / (rho + sum(a))."""
    a = assign_row
    return np.diag(a) - np.outer(a, a) / (rho + a.sum())


def q_clustering(spec: ClusterSpec, T: int) -> TaskSimilarity:
    """Coupling that pulls each task toward its soft cluster centers."""
    if spec.assignments.shape[1] != T:
        raise ValueError(f"assignments cover {spec.assignments.shape[1]} tasks, expected {T}")
    covered = spec.assignments.max(axis=0) > 0
    if spec.ridge == 0 and not covered.all():
        missing = np.flatnonzero(~covered).tolist()
        raise ValueError(
            f"tasks {missing} belong to no cluster and ridge=0; Q would be singular")
    G = np.zeros((T, T))
    for row in spec.assignments:
        G += _cluster_coupling(row, spec.rho)
    Q = spec.ridge * np.eye(T) + G
    return _inverse_pair(Q, label="clustering")


class TaskTree:
    """Rooted tree whose leaves are tasks.

    Encoded as a parent-index list: parents[i] is the parent of node i and
    exactly one node has parent -1 (the root).  Leaves, in node-index
    order, correspond to task indices 0..T-1.
    """

    def __init__(self, parents):
        self.parents = list(int(p) for p in parents)
        n = len(self.parents)
        roots = [i for i, p in enumerate(self.parents) if p == -1]
        if len(roots) != 1:
            raise ValueError(f"tree must have exactly one root, found {len(roots)}")
        self.root = roots[0]
        self.children: list[list[int]] = [[] for _ in range(n)]
        for i, p in enumerate(self.parents):
            if p == -1:
                continue
            if not 0 <= p < n:
                raise ValueError(f"node {i} has out-of-range parent {p}")
            self.children[p].append(i)
        # reachability doubles as the cycle check
        seen = set()
        stack = [self.root]
        while stack:
            v = stack.pop()
            if v in seen:
                raise ValueError("tree contains a cycle")
            seen.add(v)
            stack.extend(self.children[v])
        if len(seen) != n:
            raise ValueError("not every node is reachable from the root")
        self.leaves = [i for i in range(n) if not self.children[i]]
        self.inner = [i for i in range(n) if self.children[i]]
        self.task_of_leaf = {leaf: t for t, leaf in enumerate(self.leaves)}

    @property
    def n_tasks(self) -> int:
        return len(self.leaves)

    def descendant_tasks(self, node: int) -> list[int]:
        out = []
        stack = [node]
        while stack:
            v = stack.pop()
            if not self.children[v]:
                out.append(self.task_of_leaf[v])
            else:
                stack.extend(self.children[v])
        return sorted(out)


def q_hierarchical(tree: TaskTree, rho: float = 1.0) -> list[TaskSimilarity]:
    """One coupling matrix per inner node: all leaves below the node form
    one cluster pulled toward a shared center.

    Each node contributes Q_m = G_m, the single-cluster coupling of its
    member set; tasks outside the cluster carry zero rows, so Q_m is
    rank-deficient and Qinv_m is the pseudo-inverse.  On the member block
    the pseudo-inverse works out to I + (1/rho) * ones: same-cluster pairs
    share kernel mass, other tasks do not enter the component at all.
    With a single inner node over two tasks and rho = 1 this reproduces
    the two-task doubled-similarity pair exactly.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if not tree.inner:
        raise ValueError("tree has no inner node")
    T = tree.n_tasks
    out = []
    for node in tree.inner:
        member = np.zeros(T)
        member[tree.descendant_tasks(node)] = 1.0
        G = _cluster_coupling(member, rho)
        Qinv, rank = pseudo_inverse(G)
        ts = TaskSimilarity(Q=G, Qinv=Qinv, rank=rank, label=f"hier_node{node}")
        ts.validate()
        out.append(ts)
    return out


def q_smooth(A: np.ndarray, sigmas, floor: float = 1e-6) -> list[TaskSimilarity]:
    """Exponential transforms of a base task similarity at several length
    scales: Qinv = exp(A / sigma), repaired to be PSD.

    exp(A / sigma) need not be PSD, so negative eigenvalues are clipped to
    zero.  Eigenvalues below `floor` times the largest are dropped as
    well: they carry no usable coupling but would make the inverse pair
    hopelessly ill-conditioned (large sigma drives the spectrum toward
    rank one).  The discarded mass is recorded in the label, and Q is the
    pseudo-inverse built from the same eigenbasis.
    """
    A = np.asarray(A, dtype=float)
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10:
        raise ValueError("similarity matrix must be symmetric")
    out = []
    for sigma in sigmas:
        if sigma <= 0:
            raise ValueError("length scales must be positive")
        raw = np.exp(A / sigma)
        raw = 0.5 * (raw + raw.T)
        evals, vecs = np.linalg.eigh(raw)
        keep = evals > floor * evals.max()
        clipped = float(np.sum(np.abs(evals[~keep])))
        rank = int(keep.sum())
        Qinv = (vecs[:, keep] * evals[keep]) @ vecs[:, keep].T
        Qinv = 0.5 * (Qinv + Qinv.T)
        Q = (vecs[:, keep] / evals[keep]) @ vecs[:, keep].T
        Q = 0.5 * (Q + Q.T)
        ts = TaskSimilarity(Q=Q, Qinv=Qinv, rank=rank,
                            label=f"smooth sigma={sigma:g} clipped={clipped:.3e}")
        ts.validate()
        out.append(ts)
    return out


# ---------------------------------------------------------------------------
# Config file and matrix I/O
# ---------------------------------------------------------------------------

def load_task_structures(path, T: int | None = None) -> list[TaskSimilarity]:
    """Read a YAML task-structure config and build the coupling matrices.

    The file declares `kind` plus kind-specific fields:

        kind: identity|uniform|frustratingly_easy|graph|clustering|hierarchy|smooth
        tasks: 4                  # identity/uniform (or inferred from data)
        adjacency: [[...], ...]   # graph
        similarity: [[...], ...]  # smooth
        sigmas: [0.1, 7.55, 15.0] # smooth
        tree: [-1, 0, 0]          # hierarchy (parent-index list)
        rho: 1.0                  # clustering/hierarchy
        ridge: 0.0                # clustering
        assignments: [[...], ...] # clustering (clusters x tasks)
    """
    with open(path, "r", encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ValueError(f"{path}: task-structure config must be a mapping with a 'kind'")
    kind = cfg["kind"]
    def _tasks():
        tval = cfg.get("tasks", T)
        if tval is None:
            raise ValueError(f"{path}: kind {kind!r} needs a 'tasks' count")
        return int(tval)
    if kind == "identity":
        return [q_identity(_tasks())]
    if kind == "uniform":
        return [q_uniform(_tasks())]
    if kind == "frustratingly_easy":
        return [q_frustratingly_easy()]
    if kind == "graph":
        return [q_graph_laplacian(np.asarray(cfg["adjacency"], dtype=float))]
    if kind == "clustering":
        spec = ClusterSpec(assignments=np.asarray(cfg["assignments"], dtype=float),
                           rho=float(cfg.get("rho", 1.0)),
                           ridge=float(cfg.get("ridge", 0.0)))
        return [q_clustering(spec, _tasks())]
    if kind == "hierarchy":
        tree = TaskTree(cfg["tree"])
        return q_hierarchical(tree, rho=float(cfg.get("rho", 1.0)))
    if kind == "smooth":
        return q_smooth(np.asarray(cfg["similarity"], dtype=float),
                        [float(s) for s in cfg["sigmas"]])
    raise ValueError(f"{path}: unknown task-structure kind {kind!r}")


def save_matrix(M: np.ndarray, path) -> None:
    """Plain-text dense rows, one row per line."""
    np.savetxt(path, np.atleast_2d(M), fmt="%.17g")


def load_matrix(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, dtype=float))
