"""Shared domain types: losses with convex conjugates, feature maps, and
multi-task datasets with their on-disk format.

A dataset holds n labeled examples, each assigned to one of T tasks and
represented in M feature views.  A view is either an explicit dense matrix,
a sparse per-row (index, value) structure, or raw strings awaiting a
feature map (e.g. hashed k-mer counts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Loss", "HINGE", "LOGISTIC", "loss_eval", "loss_conjugate",
    "FeatureMap", "feature_map_apply", "fnv1a64",
    "DenseView", "SparseView", "StringView",
    "MultiTaskDataset", "DatasetFormatError",
    "read_dataset", "write_dataset",
]


# ---------------------------------------------------------------------------
# Loss catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Loss:
    """A classification loss l(a) of the margin a, with its convex
    conjugate l*(a).

    Both catalog entries are convex, finite at 0, and have conjugates
    that are finite exactly on [-1, 0].
    """

    kind: str  # "hinge" | "logistic"

    def value(self, a: float) -> float:
        if self.kind == "hinge":
            return max(0.0, 1.0 - a)
        # log(1 + exp(-a)), overflow-safe
        return float(np.logaddexp(0.0, -a))

    def conjugate(self, a: float) -> float:
        """l*(a) = sup_b (a*b - l(b)); +inf outside [-1, 0]."""
        if a < -1.0 or a > 0.0:
            return math.inf
        if self.kind == "hinge":
            return a
        # -a*log(-a) + (1+a)*log(1+a), with 0*log(0) = 0 at the endpoints
        s = 0.0
        if a < 0.0:
            s += (-a) * math.log(-a)
        if a > -1.0:
            s += (1.0 + a) * math.log(1.0 + a)
        return s


HINGE = Loss("hinge")
LOGISTIC = Loss("logistic")

_LOSSES = {"hinge": HINGE, "logistic": LOGISTIC}


def get_loss(kind: str) -> Loss:
    try:
        return _LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {sorted(_LOSSES)}")


def loss_eval(loss: Loss, a: float) -> float:
    return loss.value(a)


def loss_conjugate(loss: Loss, a: float) -> float:
    return loss.conjugate(a)


# ---------------------------------------------------------------------------
# Feature maps
# ---------------------------------------------------------------------------

def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash; fixed and process-independent."""
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class FeatureMap:
    """Explicit feature map for one view.

    kind "dense": identity on numeric vectors.
    kind "spectrum": counts of length-k substrings, bucketed into 2**bits
    slots by FNV-1a hashing.  Bucket collisions are part of the map's
    definition; two strings agree in feature space iff their hashed k-mer
    count vectors agree.
    """

    kind: str = "dense"  # "dense" | "spectrum"
    k: int = 3
    bits: int = 12
    alphabet: str = "ACGT"

    def __post_init__(self):
        if self.kind not in ("dense", "spectrum"):
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        if self.kind == "spectrum":
            if self.k < 1:
                raise ValueError("k-mer length must be >= 1")
            if not 1 <= self.bits <= 62:
                raise ValueError("hash-space bits must be in [1, 62]")
            if not self.alphabet:
                raise ValueError("alphabet must be non-empty")

    @property
    def dim(self) -> int | None:
        return (1 << self.bits) if self.kind == "spectrum" else None

    def apply_dense(self, raw) -> np.ndarray:
        x = np.asarray(raw, dtype=float)
        if x.ndim != 1:
            raise ValueError(f"dense view expects a 1-d numeric vector, got shape {x.shape}")
        return x

    def apply_spectrum(self, raw: str):
        """Hash k-mer counts of `raw` into buckets; returns sorted
        (indices, values) arrays."""
        if not isinstance(raw, str):
            raise ValueError("spectrum view expects a string input")
        allowed = set(self.alphabet)
        bad = set(raw) - allowed
        if bad:
            raise ValueError(
                f"input contains symbols {sorted(bad)} outside alphabet {self.alphabet!r}")
        mask = (1 << self.bits) - 1
        counts: dict[int, float] = {}
        for i in range(len(raw) - self.k + 1):
            bucket = fnv1a64(raw[i:i + self.k].encode("ascii")) & mask
            counts[bucket] = counts.get(bucket, 0.0) + 1.0
        idx = np.array(sorted(counts), dtype=np.int64)
        val = np.array([counts[j] for j in idx], dtype=float)
        return idx, val

    def describe(self) -> str:
        if self.kind == "dense":
            return "dense"
        return f"spectrum k={self.k} bits={self.bits} alphabet={self.alphabet}"

    @staticmethod
    def parse(text: str) -> "FeatureMap":
        parts = text.split()
        if parts[0] == "dense":
            return FeatureMap("dense")
        if parts[0] == "spectrum":
            kw = dict(p.split("=", 1) for p in parts[1:])
            return FeatureMap("spectrum", k=int(kw["k"]), bits=int(kw["bits"]),
                              alphabet=kw["alphabet"])
        raise ValueError(f"bad feature map descriptor {text!r}")


def feature_map_apply(fmap: FeatureMap, raw):
    """Apply a feature map to one raw input.

    Returns a dense vector for "dense" maps and an (indices, values)
    pair for "spectrum" maps.
    """
    if fmap.kind == "dense":
        return fmap.apply_dense(raw)
    return fmap.apply_spectrum(raw)


# ---------------------------------------------------------------------------
# Feature views
# ---------------------------------------------------------------------------

class DenseView:
    """All examples of one view as a contiguous (n, dim) float array."""

    kind = "dense"

    def __init__(self, X):
        self.X = np.ascontiguousarray(X, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("dense view requires a 2-d array")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def row(self, i):
        return self.X[i]

    def dot(self, i, w) -> float:
        return float(self.X[i] @ w)

    def dot_rows(self, i, Wsub) -> np.ndarray:
        """Wsub is (k, dim); returns the k inner products with example i."""
        return Wsub @ self.X[i]

    def scatter_add(self, i, Wm, tasks, coefs) -> None:
        """Wm[tasks] += outer(coefs, x_i); tasks contains no duplicates."""
        Wm[tasks] += coefs[:, None] * self.X[i]

    def row_norms_sq(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.X, self.X)

    def scores(self, Wm) -> np.ndarray:
        """(n, T) matrix of inner products with the weight rows of Wm."""
        return self.X @ Wm.T

    def toarray(self) -> np.ndarray:
        return self.X

    def __eq__(self, other):
        return isinstance(other, DenseView) and np.array_equal(self.X, other.X)


class SparseView:
    """Per-example sorted (index, value) pairs in CSR layout."""

    kind = "sparse"

    def __init__(self, indptr, indices, data, dim):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=float)
        self._dim = int(dim)
        if self.indices.size and self.indices.max() >= self._dim:
            raise ValueError("feature index exceeds declared view dimension")

    @classmethod
    def from_rows(cls, rows, dim):
        """rows: iterable of (indices, values) pairs, sorted by index."""
        indptr = [0]
        idx_parts, val_parts = [], []
        for idx, val in rows:
            idx = np.asarray(idx, dtype=np.int64)
            val = np.asarray(val, dtype=float)
            order = np.argsort(idx, kind="stable")
            idx_parts.append(idx[order])
            val_parts.append(val[order])
            indptr.append(indptr[-1] + len(idx))
        indices = np.concatenate(idx_parts) if idx_parts else np.empty(0, np.int64)
        data = np.concatenate(val_parts) if val_parts else np.empty(0, float)
        return cls(np.array(indptr), indices, data, dim)

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def dim(self) -> int:
        return self._dim

    def row(self, i):
        s, e = self.indptr[i], self.indptr[i + 1]
        return self.indices[s:e], self.data[s:e]

    def dot(self, i, w) -> float:
        idx, val = self.row(i)
        return float(w[idx] @ val)

    def dot_rows(self, i, Wsub) -> np.ndarray:
        idx, val = self.row(i)
        return Wsub[:, idx] @ val

    def scatter_add(self, i, Wm, tasks, coefs) -> None:
        idx, val = self.row(i)
        if len(idx):
            Wm[np.ix_(tasks, idx)] += coefs[:, None] * val

    def row_norms_sq(self) -> np.ndarray:
        out = np.zeros(self.n)
        np.add.at(out, np.repeat(np.arange(self.n), np.diff(self.indptr)), self.data ** 2)
        return out

    def scores(self, Wm) -> np.ndarray:
        out = np.empty((self.n, Wm.shape[0]))
        for i in range(self.n):
            idx, val = self.row(i)
            out[i] = Wm[:, idx] @ val
        return out

    def toarray(self) -> np.ndarray:
        X = np.zeros((self.n, self._dim))
        for i in range(self.n):
            idx, val = self.row(i)
            X[i, idx] = val
        return X

    def __eq__(self, other):
        return (isinstance(other, SparseView) and self._dim == other._dim
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.data, other.data))


class StringView:
    """Raw string inputs; must be mapped through a spectrum FeatureMap
    before solving."""

    kind = "string"

    def __init__(self, strings):
        self.strings = list(strings)

    @property
    def n(self) -> int:
        return len(self.strings)

    @property
    def dim(self):
        return None

    def mapped(self, fmap: FeatureMap) -> SparseView:
        if fmap.kind != "spectrum":
            raise ValueError("string views require a spectrum feature map")
        return SparseView.from_rows(
            (fmap.apply_spectrum(s) for s in self.strings), fmap.dim)

    def __eq__(self, other):
        return isinstance(other, StringView) and self.strings == other.strings


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass
class MultiTaskDataset:
    """Labeled examples with a task index and M per-view representations.

    Immutable by convention after construction; all consumers treat the
    arrays as read-only.
    """

    labels: np.ndarray          # (n,) values in {-1, +1}
    task_of: np.ndarray         # (n,) ints in [0, T)
    views: list                 # M views, each with matching n
    T: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=float)
        self.task_of = np.asarray(self.task_of, dtype=np.int64)
        n = len(self.labels)
        if len(self.task_of) != n:
            raise ValueError("labels and task indices disagree in length")
        if n and not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be exactly -1 or +1")
        if self.T < 1:
            raise ValueError("need at least one task")
        if n and (self.task_of.min() < 0 or self.task_of.max() >= self.T):
            raise ValueError(f"task indices must lie in [0, {self.T})")
        for m, v in enumerate(self.views):
            if v.n != n:
                raise ValueError(f"view {m} has {v.n} rows, expected {n}")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def M(self) -> int:
        return len(self.views)

    def task_indices(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.task_of == t)

    def is_numeric(self) -> bool:
        return all(v.kind != "string" for v in self.views)

    def apply_maps(self, maps) -> "MultiTaskDataset":
        """Replace string views by their hashed feature representation.

        `maps` gives one FeatureMap per view; dense/sparse views pass
        through untouched (their map must be kind "dense").
        """
        if len(maps) != self.M:
            raise ValueError(f"need {self.M} feature maps, got {len(maps)}")
        views = []
        for v, fmap in zip(self.views, maps):
            views.append(v.mapped(fmap) if v.kind == "string" else v)
        return MultiTaskDataset(self.labels, self.task_of, views, self.T)

    def subset(self, rows, T=None, task_of=None) -> "MultiTaskDataset":
        """Row-sliced copy; optionally overrides tasks (e.g. for pooling)."""
        rows = np.asarray(rows, dtype=np.int64)
        views = []
        for v in self.views:
            if v.kind == "dense":
                views.append(DenseView(v.X[rows]))
            elif v.kind == "sparse":
                views.append(SparseView.from_rows((v.row(i) for i in rows), v.dim))
            else:
                views.append(StringView([v.strings[i] for i in rows]))
        new_tasks = self.task_of[rows] if task_of is None else np.asarray(task_of)
        return MultiTaskDataset(self.labels[rows], new_tasks, views,
                                self.T if T is None else T)

    def __eq__(self, other):
        return (isinstance(other, MultiTaskDataset)
                and self.T == other.T
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.task_of, other.task_of)
                and self.views == other.views)


# ---------------------------------------------------------------------------
# Dataset file format
# ---------------------------------------------------------------------------
#
# One example per line:
#
#     <label> <task_id> | <view0 features> | <view1 features> | ...
#
# Numeric views write their nonzeros as `index:value` pairs; string views
# write the raw string.  '#' starts a comment.  The writer prepends a
# `#! mtmkl T=<T> views=<kind0>;<kind1>...` pragma so that view kinds and
# dense dimensions survive a round-trip bit-exactly; the reader falls back
# to inference (dense dim = max index + 1) when the pragma is absent.

class DatasetFormatError(ValueError):
    pass


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _view_decl(v) -> str:
    if v.kind == "dense":
        return f"dense:{v.dim}"
    if v.kind == "sparse":
        return f"sparse:{v.dim}"
    return "string"


def write_dataset(ds: MultiTaskDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        decls = ";".join(_view_decl(v) for v in ds.views)
        fh.write(f"#! mtmkl T={ds.T} views={decls}\n")
        for i in range(ds.n):
            fields = [f"{int(ds.labels[i]):+d} {ds.task_of[i]}"]
            for v in ds.views:
                if v.kind == "string":
                    s = v.strings[i]
                    if any(c.isspace() or c in "|#" for c in s):
                        raise DatasetFormatError(
                            f"string feature {s!r} contains reserved characters")
                    fields.append(s)
                elif v.kind == "dense":
                    x = v.X[i]
                    nz = np.flatnonzero(x)
                    fields.append(" ".join(f"{j}:{_fmt_float(x[j])}" for j in nz))
                else:
                    idx, val = v.row(i)
                    fields.append(" ".join(f"{j}:{_fmt_float(w)}" for j, w in zip(idx, val)))
            fh.write(" | ".join(fields) + "\n")


def _parse_pragma(line: str):
    # "#! mtmkl T=<T> views=a;b;c"
    parts = line[2:].split()
    if not parts or parts[0] != "mtmkl":
        return None
    kw = dict(p.split("=", 1) for p in parts[1:])
    decls = kw.get("views", "").split(";") if kw.get("views") else []
    return int(kw["T"]), decls


def read_dataset(path) -> MultiTaskDataset:
    labels, tasks = [], []
    raw_views: list[list] = []
    pragma = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.startswith("#!") and pragma is None and not labels:
                pragma = _parse_pragma(line)
                continue
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = [f.strip() for f in line.split("|")]
            head = fields[0].split()
            if len(head) != 2:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected '<label> <task_id>', got {fields[0]!r}")
            try:
                y = int(head[0])
                t = int(head[1])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
            if y not in (-1, 1):
                raise DatasetFormatError(f"{path}:{lineno}: label must be -1 or +1")
            labels.append(float(y))
            tasks.append(t)
            feats = fields[1:]
            if not raw_views:
                raw_views = [[] for _ in feats]
            if len(feats) != len(raw_views):
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {len(raw_views)} views, got {len(feats)}")
            for m, f in enumerate(feats):
                raw_views[m].append(_parse_feature_field(f, path, lineno))
    if not labels:
        raise DatasetFormatError(f"{path}: no examples")
    decls = None
    T = max(tasks) + 1
    if pragma is not None:
        T, decls = pragma
    views = [_assemble_view(col, decls[m] if decls else None, path)
             for m, col in enumerate(raw_views)]
    return MultiTaskDataset(np.array(labels), np.array(tasks), views, T)


def _parse_feature_field(text: str, path, lineno):
    """Returns (indices, values) for numeric fields, else the raw string."""
    toks = text.split()
    if not toks:
        return np.empty(0, np.int64), np.empty(0, float)
    if all(":" in tk for tk in toks):
        idx, val = [], []
        for tk in toks:
            j, _, w = tk.partition(":")
            try:
                idx.append(int(j))
                val.append(float(w))
            except ValueError:
                raise DatasetFormatError(
                    f"{path}:{lineno}: bad feature token {tk!r}") from None
        return np.array(idx, np.int64), np.array(val, float)
    if len(toks) != 1:
        raise DatasetFormatError(
            f"{path}:{lineno}: string views hold exactly one token, got {text!r}")
    return toks[0]


def _assemble_view(col, decl, path):
    is_string = any(isinstance(r, str) for r in col)
    if is_string:
        if not all(isinstance(r, str) for r in col):
            raise DatasetFormatError(f"{path}: view mixes strings and numeric features")
        if decl not in (None, "string"):
            raise DatasetFormatError(f"{path}: pragma declares {decl!r} for a string view")
        return StringView(col)
    kind, _, dim_s = (decl or "").partition(":")
    max_idx = max((int(idx.max()) for idx, _ in col if len(idx)), default=-1)
    dim = max(int(dim_s) if dim_s else max_idx + 1, 1)
    if max_idx >= dim:
        raise DatasetFormatError(f"{path}: feature index {max_idx} exceeds declared dim {dim}")
    if kind == "dense":
        X = np.zeros((len(col), dim))
        for i, (idx, val) in enumerate(col):
            X[i, idx] = val
        return DenseView(X)
    return SparseView.from_rows(col, dim)
