"""Disjoint dof groups that fix the block pattern of the deflation matrix.

Three generators are provided: problem labels (e.g. channel vs background),
recursive coordinate bisection as a domain-decomposition partitioner, and
k-means on a predicted solution.
"""

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IndexSets",
    "groups_from_labels",
    "partition_graph",
    "kmeans_groups",
    "cluster_features",
]


@dataclass
class IndexSets:
    """A partition of ``range(n_total)`` into non-empty sorted index arrays."""

    sets: list
    n_total: int

    def __post_init__(self):
        self.sets = [np.sort(np.asarray(s, dtype=np.int64)) for s in self.sets]
        self.n_total = int(self.n_total)
        self.validate()

    def validate(self):
        if not self.sets:
            raise ValueError("need at least one group")
        seen = np.zeros(self.n_total, dtype=np.int64)
        for s in self.sets:
            if s.size == 0:
                raise ValueError("groups must be non-empty")
            if s.min() < 0 or s.max() >= self.n_total:
                raise ValueError("group index out of range")
            np.add.at(seen, s, 1)
        if np.any(seen != 1):
            raise ValueError("groups must be pairwise disjoint and cover every dof")

    def __len__(self):
        return len(self.sets)

    def __iter__(self):
        return iter(self.sets)

    @property
    def sizes(self):
        return [int(s.size) for s in self.sets]

    def labels(self):
        lab = np.empty(self.n_total, dtype=np.int64)
        for g, s in enumerate(self.sets):
            lab[s] = g
        return lab

    def to_json(self):
        return json.dumps({"n_total": self.n_total, "sets": [s.tolist() for s in self.sets]})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        if isinstance(data, list):
            return cls(data, sum(len(s) for s in data))
        return cls(data["sets"], data["n_total"])


def groups_from_labels(labels):
    """One group per distinct label, in order of first appearance."""
    labels = np.asarray(labels).ravel()
    if labels.size == 0:
        raise ValueError("labels must be non-empty")
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    sets = [np.flatnonzero(inverse == u) for u in order]
    return IndexSets(sets, labels.size)


def _bisect(idx, coords, parts, out):
    if parts == 1:
        out.append(np.sort(idx))
        return
    pts = coords[idx]
    extent = pts.max(axis=0) - pts.min(axis=0)
    axis = int(np.argmax(extent))
    # geometric ordering only: ties on the split axis fall back to the others
    keys = [pts[:, a] for a in reversed(range(pts.shape[1])) if a != axis] + [pts[:, axis]]
    order = np.lexsort(keys)
    left_parts = (parts + 1) // 2
    cut = int(round(idx.size * left_parts / parts))
    _bisect(idx[order[:cut]], coords, left_parts, out)
    _bisect(idx[order[cut:]], coords, parts - left_parts, out)


def partition_graph(A, coords, S):
    """Recursive coordinate bisection into ``S`` groups.

    Each step splits along the widest coordinate axis; the cut is at the
    median for an even number of remaining parts and proportional otherwise,
    so any ``S`` is accepted. Only node coordinates decide the split.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[:, None]
    n = coords.shape[0] if A is None else A.n
    if coords.shape[0] != n:
        raise ValueError("coords do not match the matrix size")
    if S < 1:
        raise ValueError("S must be >= 1")
    if S > n:
        raise ValueError(f"cannot split {n} dofs into {S} groups")
    out = []
    _bisect(np.arange(n), coords, int(S), out)
    return IndexSets(out, n)


def cluster_features(prediction, coords=None, value_weight=0.5):
    """Per-dof features for k-means.

    Without ``coords`` the feature is the predicted value itself. With
    ``coords`` the standardized prediction, scaled by ``value_weight``, is
    stacked with the standardized node coordinates; the coordinate part
    keeps clusters spatially compact.
    """
    x = np.asarray(prediction, dtype=np.float64).reshape(-1, 1)
    if coords is None:
        return x
    c = np.asarray(coords, dtype=np.float64)
    c = c[:, None] if c.ndim == 1 else c
    c = (c - c.mean(axis=0)) / np.where(c.std(axis=0) > 0, c.std(axis=0), 1.0)
    xs = (x - x.mean()) / (x.std() if x.std() > 0 else 1.0)
    return np.hstack([value_weight * xs, c])


def _sqdist(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def _kmeanspp(X, S, rng):
    n = X.shape[0]
    C = np.empty((S, X.shape[1]))
    C[0] = X[rng.integers(n)]
    d2 = _sqdist(X, C[:1]).ravel()
    for s in range(1, S):
        total = d2.sum()
        j = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        C[s] = X[j]
        d2 = np.minimum(d2, _sqdist(X, C[s:s + 1]).ravel())
    return C


def _repair_empty(X, C, labels, S):
    counts = np.bincount(labels, minlength=S)
    for e in np.flatnonzero(counts == 0):
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        far = members[int(np.argmax(_sqdist(X[members], C[big:big + 1]).ravel()))]
        labels[far] = e
        C[e] = X[far]
        counts[big] -= 1
        counts[e] += 1
    return labels, C


def kmeans_groups(features, S, seed=0, max_iter=100):
    """Lloyd's k-means with k-means++ seeding.

    Parameters
    ----------
    features : array_like, shape (n,) or (n, d)
    S : int
        Number of groups.
    seed : int
        Seed for the k-means++ draws.

    Returns
    -------
    IndexSets
        Groups ordered by their smallest dof index. Every dof is assigned to
        its nearest final centroid, ties going to the lower centroid index.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if S < 1:
        raise ValueError("S must be >= 1")
    n_distinct = np.unique(X, axis=0).shape[0]
    if S > n_distinct:
        raise ValueError(f"S={S} exceeds the number of distinct feature vectors ({n_distinct})")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, S, rng)
    labels = None
    for _ in range(max_iter):
        new = np.argmin(_sqdist(X, C), axis=1)
        new, C = _repair_empty(X, C, new, S)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for s in range(S):
            C[s] = X[labels == s].mean(axis=0)
    labels = np.argmin(_sqdist(X, C), axis=1)
    labels, C = _repair_empty(X, C, labels, S)
    sets = [np.flatnonzero(labels == s) for s in range(S)]
    sets.sort(key=lambda s: s[0])
    return IndexSets(sets, n)
