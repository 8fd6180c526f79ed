"""Synthetic multi-task benchmark data.

Tasks arise from hierarchical sign-flip mutations of a class-mean
difference vector along a complete binary tree: the root carries the
all-ones vector, each edge flips a few coordinates, and every leaf becomes
one binary task whose classes are isotropic Gaussians centered at
+/- 0.5 times its vector.  The pairwise dot products of the leaf vectors
form the ground-truth task similarity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DenseView, MultiTaskDataset
from .taskstruct import TaskTree

__all__ = [
    "SyntheticSpec", "generate", "similarity_to_tree_clusters",
    "scaled_similarity", "write_tree", "read_tree",
]


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the generator.  The defaults reproduce the benchmark
    setting: 100 dimensions, sigma 20, 5 flips per edge, 32 tasks
    (complete binary tree of depth 5), 10 training and 1000 test points
    per class and task."""

    dim: int = 100
    sigma: float = 20.0
    flips: int = 5
    depth: int = 5
    n_train_per_class: int = 10
    n_test_per_class: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not 0 <= self.flips <= self.dim:
            raise ValueError("flips must lie in [0, dim]")
        if self.dim < 1 or self.sigma <= 0:
            raise ValueError("dim must be >= 1 and sigma positive")
        if self.n_train_per_class < 1 or self.n_test_per_class < 1:
            raise ValueError("need at least one example per class")

    @property
    def n_tasks(self) -> int:
        return 2 ** self.depth


def _heap_parents(depth: int) -> list[int]:
    """Complete binary tree in heap order: node 0 is the root, node v has
    children 2v+1 and 2v+2; the last 2**depth nodes are the leaves, in
    left-to-right order."""
    n_nodes = 2 ** (depth + 1) - 1
    return [-1] + [(v - 1) // 2 for v in range(1, n_nodes)]


def similarity_to_tree_clusters(depth: int) -> TaskTree:
    """The generating tree as a task hierarchy (leaf order = task order)."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    return TaskTree(_heap_parents(depth))


def _mutated_means(spec: SyntheticSpec, rng) -> np.ndarray:
    """Mean-difference vector per node; children flip `flips` distinct
    coordinates of their parent, independently per edge (a coordinate may
    flip back on a later edge)."""
    parents = _heap_parents(spec.depth)
    mu = np.empty((len(parents), spec.dim))
    mu[0] = 1.0
    for v in range(1, len(parents)):
        mu[v] = mu[parents[v]]
        flip = rng.choice(spec.dim, size=spec.flips, replace=False)
        mu[v, flip] *= -1.0
    return mu


def _sample_split(mu_leaves, spec, rng, n_per_class):
    dim, T = spec.dim, len(mu_leaves)
    blocks, labels, tasks = [], [], []
    for t in range(T):
        center = 0.5 * mu_leaves[t]
        blocks.append(rng.normal(center, spec.sigma, size=(n_per_class, dim)))
        blocks.append(rng.normal(-center, spec.sigma, size=(n_per_class, dim)))
        labels.extend([1.0] * n_per_class + [-1.0] * n_per_class)
        tasks.extend([t] * (2 * n_per_class))
    X = np.vstack(blocks)
    return MultiTaskDataset(np.array(labels), np.array(tasks), [DenseView(X)], T)


def generate(spec: SyntheticSpec):
    """Returns (train, test, mu_per_task, true_similarity).

    Deterministic: identical spec (seed included) yields bit-identical
    output.  true_similarity[s, t] = <mu_s, mu_t> lies in [-dim, dim] with
    dim on the diagonal.
    """
    rng = np.random.default_rng(spec.seed)
    mu = _mutated_means(spec, rng)
    n_leaves = spec.n_tasks
    mu_leaves = mu[-n_leaves:]
    train = _sample_split(mu_leaves, spec, rng, spec.n_train_per_class)
    test = _sample_split(mu_leaves, spec, rng, spec.n_test_per_class)
    true_similarity = mu_leaves @ mu_leaves.T
    return train, test, mu_leaves, true_similarity


def scaled_similarity(true_similarity: np.ndarray, dim: int) -> np.ndarray:
    """Similarity rescaled by 1/dim for use as the smooth-transform input;
    entries fall in [-1, 1] (typically [0, 1] for shallow trees)."""
    return true_similarity / float(dim)


def write_tree(tree_or_parents, path) -> None:
    parents = getattr(tree_or_parents, "parents", tree_or_parents)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(str(int(p)) for p in parents) + "\n")


def read_tree(path) -> TaskTree:
    with open(path, "r", encoding="utf-8") as fh:
        parents = [int(tok) for tok in fh.read().split()]
    return TaskTree(parents)
