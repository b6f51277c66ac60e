"""Finite metric spaces, cost matrices, discrete distributions and pushforwards.

Everything here is an immutable value object; arrays are copied on
construction and marked read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .errors import InputError

TRIANGLE_SLACK = 1e-12
MASS_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteMetricSpace:
    """Labelled points with a validated distance matrix."""

    dist: np.ndarray
    labels: tuple = ()
    coords: Optional[np.ndarray] = None

    def __post_init__(self):
        d = _frozen(self.dist)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] == 0:
            raise InputError(f"distance matrix must be square and nonempty, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise InputError("distance matrix has non-finite entries")
        n = d.shape[0]
        if np.any(np.diag(d) != 0):
            raise InputError("distance matrix must have a zero diagonal")
        if not np.array_equal(d, d.T):
            raise InputError("distance matrix must be symmetric")
        off = ~np.eye(n, dtype=bool)
        if np.any(d[off] <= 0):
            raise InputError("distinct points must be at positive distance")
        # d[i,j] <= d[i,k] + d[k,j] for all i,j,k
        via = d[:, :, None] + d[None, :, :]  # via[i,k,j]
        if np.any(d > via.min(axis=1) + TRIANGLE_SLACK):
            raise InputError("distance matrix violates the triangle inequality")
        object.__setattr__(self, "dist", d)
        labels = tuple(self.labels) if self.labels else tuple(range(n))
        if len(labels) != n:
            raise InputError(f"got {len(labels)} labels for {n} points")
        object.__setattr__(self, "labels", labels)
        if self.coords is not None:
            c = _frozen(self.coords)
            if c.ndim == 1:
                c = _frozen(c[:, None])
            if c.shape[0] != n:
                raise InputError("coords must have one row per point")
            object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    def cost(self, scale: float = 1.0) -> "CostMatrix":
        """The metric as a (metric-certified) cost matrix, optionally scaled by ``scale > 0``."""
        if scale <= 0:
            raise InputError("cost scale must be positive")
        return CostMatrix(scale * self.dist, metric_certified=True)

    # constructors -----------------------------------------------------

    @classmethod
    def euclidean(cls, coords, labels: Sequence = ()) -> "FiniteMetricSpace":
        c = np.asarray(coords, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        diff = c[:, None, :] - c[None, :, :]
        d = np.sqrt((diff**2).sum(-1))
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, 0.0)
        return cls(d, labels=tuple(labels), coords=c)

    @classmethod
    def discrete(cls, n: int, labels: Sequence = ()) -> "FiniteMetricSpace":
        """c(x, y) = 1 if x != y else 0."""
        if n < 1:
            raise InputError("need at least one point")
        return cls(1.0 - np.eye(n), labels=tuple(labels))

    @classmethod
    def random_metric(cls, n: int, rng: np.random.Generator, low=0.1, high=1.0) -> "FiniteMetricSpace":
        """Shortest-path closure of a random symmetric matrix with entries in [low, high]."""
        a = rng.uniform(low, high, size=(n, n))
        a = np.triu(a, 1)
        a = a + a.T
        d = shortest_path(a, method="FW", directed=False)
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, 0.0)
        return cls(d)


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """An n x m cost. ``metric_certified`` is set only when it came from a metric space."""

    values: np.ndarray
    metric_certified: bool = False

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2:
            raise InputError("cost must be a 2-D matrix")
        if not np.all(np.isfinite(v)):
            raise InputError("cost has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def scaled(self, gamma: float) -> "CostMatrix":
        if gamma <= 0:
            raise InputError("cost weight must be positive")
        return CostMatrix(gamma * self.values, metric_certified=self.metric_certified)


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Simplex weights over a finite universe (optionally tied to a space)."""

    weights: np.ndarray
    space: Optional[FiniteMetricSpace] = field(default=None, repr=False)

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 1 or w.size == 0:
            raise InputError("weights must be a nonempty vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise InputError(f"weights sum to {w.sum()!r}, not 1")
        if self.space is not None and self.space.n != w.size:
            raise InputError("weights length does not match the space")
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, weights, space=None) -> "DiscreteDistribution":
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        s = w.sum()
        if s <= 0:
            raise InputError("cannot normalize an all-zero weight vector")
        return cls(w / s, space)

    @classmethod
    def uniform(cls, n: int, space=None) -> "DiscreteDistribution":
        return cls(np.full(n, 1.0 / n), space)

    @classmethod
    def point_mass(cls, n: int, i: int, space=None) -> "DiscreteDistribution":
        w = np.zeros(n)
        w[i] = 1.0
        return cls(w, space)

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def __len__(self):
        return self.n


def as_weights(dist) -> np.ndarray:
    """Accept a DiscreteDistribution or a raw vector."""
    if isinstance(dist, DiscreteDistribution):
        return dist.weights
    return np.asarray(dist, dtype=float)


@dataclass(frozen=True, eq=False)
class PushforwardMap:
    """Deterministic map from source indices to target indices."""

    mapping: np.ndarray
    n_target: int = -1

    def __post_init__(self):
        m = _frozen(self.mapping, dtype=np.int64)
        if m.ndim != 1 or m.size == 0:
            raise InputError("mapping must be a nonempty 1-D index array")
        n_target = int(self.n_target) if self.n_target >= 0 else int(m.max()) + 1
        if np.any(m < 0) or np.any(m >= n_target):
            raise InputError("mapping sends a source index outside the target universe")
        object.__setattr__(self, "mapping", m)
        object.__setattr__(self, "n_target", n_target)

    @property
    def n_source(self) -> int:
        return self.mapping.size

    @property
    def invertible(self) -> bool:
        return np.unique(self.mapping).size == self.mapping.size

    @property
    def surjective(self) -> bool:
        return np.unique(self.mapping).size == self.n_target

    def __call__(self, idx):
        return self.mapping[idx]

    def compose(self, inner: "PushforwardMap") -> "PushforwardMap":
        """self o inner (apply ``inner`` first)."""
        if inner.n_target != self.n_source:
            raise InputError("cannot compose: universes do not match")
        return PushforwardMap(self.mapping[inner.mapping], self.n_target)

    def inverse(self) -> "PushforwardMap":
        if not (self.invertible and self.surjective):
            raise InputError("map is not a bijection")
        inv = np.empty(self.n_target, dtype=np.int64)
        inv[self.mapping] = np.arange(self.n_source)
        return PushforwardMap(inv, self.n_source)

    def fibers(self):
        """Source indices grouped by target, for targets with nonempty preimage."""
        return [np.flatnonzero(self.mapping == t) for t in range(self.n_target) if np.any(self.mapping == t)]

    @classmethod
    def identity(cls, n: int) -> "PushforwardMap":
        return cls(np.arange(n), n)


def pushforward(T: PushforwardMap, dist) -> DiscreteDistribution:
    """Mass of each target = total source mass of its preimage."""
    w = as_weights(dist)
    if w.size != T.n_source:
        raise InputError(f"distribution has {w.size} points but the map has {T.n_source} sources")
    out = np.bincount(T.mapping, weights=w, minlength=T.n_target)
    return DiscreteDistribution(out)


def diameter(space: FiniteMetricSpace, support=None) -> float:
    """Largest pairwise distance over ``support`` (all points by default)."""
    idx = np.arange(space.n) if support is None else np.asarray(support, dtype=np.int64)
    if idx.size == 0:
        raise InputError("diameter of an empty set is undefined")
    if np.any(idx < 0) or np.any(idx >= space.n):
        raise InputError("support index out of range")
    return float(space.dist[np.ix_(idx, idx)].max())


def partial_pushforward_gaps(T: PushforwardMap, P, Q, family) -> np.ndarray:
    """|E_P[f o T] - E_Q[f]| for each function vector f in ``family``."""
    p, q = as_weights(P), as_weights(Q)
    if p.size != T.n_source or q.size != T.n_target:
        raise InputError("P must live on the source universe and Q on the target universe")
    F = np.atleast_2d(np.asarray(family, dtype=float))
    if F.size == 0:
        raise InputError("function family must be nonempty")
    if F.shape[1] != T.n_target:
        raise InputError("each family member must be a vector over the target universe")
    pushed = np.bincount(T.mapping, weights=p, minlength=T.n_target)
    return np.abs(F @ pushed - F @ q)


def check_partial_pushforward(T: PushforwardMap, P, Q, family, tol: float = 1e-12) -> bool:
    """True iff T matches P and Q in expectation over every member of ``family``."""
    return bool(np.all(partial_pushforward_gaps(T, P, Q, family) <= tol))
