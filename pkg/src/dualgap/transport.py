"""Exact and entropic optimal transport on finite universes, plus IPMs.

Exact solves go through POT's network simplex. Zero-mass points are removed
before solving and reinserted as zero rows/columns afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from ._pot import emd
from .errors import ContractError, ConvergenceError, InputError
from .space import CostMatrix, DiscreteDistribution, FiniteMetricSpace, as_weights

FEAS_TOL = 1e-9
EMD_MAX_ITERS = 100_000_000


@dataclass(frozen=True, eq=False)
class Coupling:
    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if m.shape != (len(self.row_marginal), len(self.col_marginal)):
            raise InputError("coupling shape does not match its marginals")

    def violations(self):
        """(most negative entry, max row error, max column error)."""
        m = self.matrix
        return (float(min(m.min(), 0.0)),
                float(np.max(np.abs(m.sum(1) - self.row_marginal))),
                float(np.max(np.abs(m.sum(0) - self.col_marginal))))

    def is_feasible(self, tol: float = FEAS_TOL) -> bool:
        neg, r, c = self.violations()
        return neg >= 0 and r <= tol and c <= tol

    def conditional_rows(self) -> np.ndarray:
        """Row-normalized coupling; rows of zero mass become uniform."""
        m = self.matrix
        s = m.sum(1, keepdims=True)
        out = np.full_like(m, 1.0 / m.shape[1])
        nz = s[:, 0] > 0
        out[nz] = m[nz] / s[nz]
        return out


@dataclass(frozen=True, eq=False)
class DualPotentials:
    """Either a single 1-Lipschitz potential ``h`` or a general pair (phi, psi)."""

    h: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    cost: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def lipschitz_modulus(self) -> float:
        """max_{i != j} |h_i - h_j| / c_ij."""
        if self.h is None or self.cost is None:
            raise ContractError("Lipschitz modulus needs the potential h and its metric")
        n = self.h.size
        if n < 2:
            return 0.0
        off = ~np.eye(n, dtype=bool)
        diff = np.abs(self.h[:, None] - self.h[None, :])
        return float(np.max(diff[off] / self.cost[off]))

    def is_feasible(self, tol: float = 1e-9) -> bool:
        if self.h is not None:
            return self.lipschitz_modulus <= 1.0 + tol
        return bool(np.all(self.phi[:, None] + self.psi[None, :] <= self.cost + tol))


def _cost_values(cost) -> np.ndarray:
    if isinstance(cost, CostMatrix):
        return cost.values
    if isinstance(cost, FiniteMetricSpace):
        return cost.dist
    return np.asarray(cost, dtype=float)


def _check_shapes(p, q, C):
    if C.shape != (p.size, q.size):
        raise InputError(f"cost shape {C.shape} does not match marginals ({p.size}, {q.size})")


def _emd_reduced(p, q, C):
    """Network simplex on the supports; returns (full coupling, u on rows, v on cols, row idx, col idx)."""
    I = np.flatnonzero(p > 0)
    J = np.flatnonzero(q > 0)
    a = np.ascontiguousarray(p[I])
    b = np.ascontiguousarray(q[J])
    b = b * (a.sum() / b.sum())
    M = np.ascontiguousarray(C[np.ix_(I, J)], dtype=np.float64)
    G, log = emd(a, b, M, numItermax=EMD_MAX_ITERS, log=True)
    if log.get("result_code", 1) != 1:
        raise ConvergenceError(f"network simplex did not reach optimality: {log.get('warning')}")
    full = np.zeros((p.size, q.size))
    full[np.ix_(I, J)] = G
    return full, np.asarray(log["u"]), np.asarray(log["v"]), I, J


def wasserstein_primal(P, Q, cost):
    """Exact W_C(P, Q) and an optimal coupling."""
    p, q = as_weights(P), as_weights(Q)
    C = _cost_values(cost)
    _check_shapes(p, q, C)
    pi, _, _, _, _ = _emd_reduced(p, q, C)
    return float(np.sum(C * pi)), Coupling(pi, p, q)


def wasserstein_value(P, Q, cost) -> float:
    return wasserstein_primal(P, Q, cost)[0]


def column_potential(P, Q, cost):
    """An optimal dual potential v on the columns (nan off the support of Q)."""
    p, q = as_weights(P), as_weights(Q)
    C = _cost_values(cost)
    _check_shapes(p, q, C)
    _, _, v, _, J = _emd_reduced(p, q, C)
    out = np.full(q.size, np.nan)
    out[J] = v
    return out


def kantorovich_dual(P, Q, space):
    """sup over 1-Lipschitz h of sum h (p - q), with an optimal h (min h = 0).

    h is the c-transform of the network-simplex column potential, which is
    1-Lipschitz by construction; the value is then evaluated from h alone.
    """
    if isinstance(space, FiniteMetricSpace):
        D = space.dist
    elif isinstance(space, CostMatrix) and space.metric_certified:
        D = space.values
    else:
        raise ContractError("Kantorovich duality in Lipschitz form needs a metric-certified cost")
    p, q = as_weights(P), as_weights(Q)
    _check_shapes(p, q, D)
    _, _, v, _, J = _emd_reduced(p, q, D)
    h = np.min(D[:, J] - v[None, :], axis=1)
    h = h - h.min()
    pot = DualPotentials(h=h, cost=D)
    if not pot.is_feasible():
        raise ConvergenceError(f"recovered potential has Lipschitz modulus {pot.lipschitz_modulus}")
    return float(h @ (p - q)), pot


# --- entropic transport -------------------------------------------------------


@dataclass(frozen=True)
class SinkhornConfig:
    tol: float = 1e-9
    max_iters: int = 100_000
    check_every: int = 10
    eps_scaling: bool = True


@dataclass(frozen=True, eq=False)
class SinkhornResult:
    value: float
    coupling: Coupling
    iters: int
    marginal_error: float
    transport_cost: float
    kl: float


def _round_to_marginals(pi, p, q):
    """Project a positive matrix onto the coupling set (Altschuler et al. rounding)."""
    rs = pi.sum(1)
    pi = pi * np.minimum(np.divide(p, rs, out=np.ones_like(p), where=rs > 0), 1.0)[:, None]
    cs = pi.sum(0)
    pi = pi * np.minimum(np.divide(q, cs, out=np.ones_like(q), where=cs > 0), 1.0)[None, :]
    er = p - pi.sum(1)
    ec = q - pi.sum(0)
    s = er.sum()
    if s > 0:
        pi = pi + np.outer(er, ec) / s
    return pi


def _sinkhorn_loop(logp, logq, C, eps, f, g, cfg, budget):
    it = 0
    err = np.inf
    while it < budget:
        f = -eps * logsumexp(logq[None, :] + (g[None, :] - C) / eps, axis=1)
        g = -eps * logsumexp(logp[:, None] + (f[:, None] - C) / eps, axis=0)
        it += 1
        if it % cfg.check_every == 0 or it == budget:
            logpi = logp[:, None] + logq[None, :] + (f[:, None] + g[None, :] - C) / eps
            err = float(np.abs(np.exp(logsumexp(logpi, axis=1)) - np.exp(logp)).sum())
            if err <= cfg.tol:
                break
    return f, g, it, err


def sinkhorn(P, Q, cost, eps: float, cfg: SinkhornConfig = SinkhornConfig()) -> SinkhornResult:
    """min over couplings of <C, pi> + eps * KL(pi || P x Q), log-domain.

    The final iterate is rounded onto the exact coupling set before the value
    is computed, so the value is attained by a feasible plan.
    """
    if not eps > 0:
        raise InputError("epsilon must be positive")
    p, q = as_weights(P), as_weights(Q)
    C = _cost_values(cost)
    _check_shapes(p, q, C)
    I = np.flatnonzero(p > 0)
    J = np.flatnonzero(q > 0)
    pr, qr, Cr = p[I], q[J], C[np.ix_(I, J)]
    logp, logq = np.log(pr), np.log(qr)
    f = np.zeros(I.size)
    g = np.zeros(J.size)
    schedule = [eps]
    if cfg.eps_scaling:
        scale = max(float(np.ptp(Cr)), eps)
        e = scale
        stages = []
        while e > eps:
            stages.append(e)
            e /= 10.0
        schedule = stages + [eps]
    total = 0
    err = np.inf
    for k, e in enumerate(schedule):
        last = k == len(schedule) - 1
        budget = cfg.max_iters - total if last else min(1000, cfg.max_iters - total)
        f, g, it, err = _sinkhorn_loop(logp, logq, Cr, e, f, g, cfg, budget)
        total += it
    if err > cfg.tol:
        raise ConvergenceError(f"Sinkhorn did not converge in {cfg.max_iters} iterations "
                               f"(marginal error {err:.3e})", residual=err)
    logpi = logp[:, None] + logq[None, :] + (f[:, None] + g[None, :] - Cr) / eps
    pi = _round_to_marginals(np.exp(logpi), pr, qr)
    ref = np.outer(pr, qr)
    pos = pi > 0
    kl = float(np.sum(pi[pos] * np.log(pi[pos] / ref[pos])))
    tc = float(np.sum(Cr * pi))
    full = np.zeros((p.size, q.size))
    full[np.ix_(I, J)] = pi
    return SinkhornResult(tc + eps * kl, Coupling(full, p, q), total, err, tc, kl)


# --- integral probability metrics ---------------------------------------------


def ipm(P, Q, family, space=None, radius: Optional[float] = None) -> float:
    """sup_{h in family} E_P h - E_Q h.

    family: "bounded1" (|h| <= 1), "lipschitz" (1-Lipschitz w.r.t. ``space``),
    "bounded_lipschitz" (1-Lipschitz and |h| <= radius), or an explicit
    list of function vectors.
    """
    p, q = as_weights(P), as_weights(Q)
    if p.shape != q.shape:
        raise InputError("P and Q must share a universe")
    if isinstance(family, str):
        if family == "bounded1":
            return float(np.abs(p - q).sum())
        if family == "lipschitz":
            if space is None:
                raise InputError("the Lipschitz IPM needs a metric space")
            return kantorovich_dual(p, q, space)[0]
        if family == "bounded_lipschitz":
            if space is None or radius is None or not radius > 0:
                raise InputError("bounded_lipschitz needs a space and a positive radius")
            return bounded_lipschitz_ipm(p, q, space, radius)
        raise InputError(f"unknown function family {family!r}")
    F = np.atleast_2d(np.asarray(family, dtype=float))
    if F.shape[1] != p.size:
        raise InputError("family vectors must match the universe size")
    return float(np.max(F @ (p - q)))


def bounded_lipschitz_ipm(P, Q, space: FiniteMetricSpace, radius: float) -> float:
    """IPM over {Lip <= 1, |h| <= radius} = W under the truncated metric min(c, 2 radius)."""
    D = np.minimum(space.dist, 2.0 * radius)
    return wasserstein_value(P, Q, D)


def discrete_tv(P, Q) -> float:
    """Transport distance under the discrete metric, 0.5 * sum |p - q|."""
    return 0.5 * float(np.abs(as_weights(P) - as_weights(Q)).sum())
