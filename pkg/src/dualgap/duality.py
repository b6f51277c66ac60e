"""The marginal-penalty program min_q W_C(P, q) + lam * D_f(q, R) and its uses.

One convex program covers both sides of the GAN/WAE correspondence:

* restricted f-GAN: free universe = X, C = c, R = P_G
* WAE:              free universe = Z, C_xz = c(x, G(z)), R = P_Z

Any column vector g gives a certified lower bound through the concave dual

    Phi(g) = sum_i p_i min_j (C_ij + g_j) - sum_j r_j (lam f)*(g_j),

which is how ``certified_gap`` is reported.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import cvxpy as cp
import numpy as np
from scipy import sparse
from scipy.optimize import linprog, minimize, minimize_scalar

from .errors import ContractError, ConvergenceError, InputError, UnsupportedGeneratorError
from .fgen import FGenerator, f_divergence
from .space import (CostMatrix, DiscreteDistribution, FiniteMetricSpace, PushforwardMap,
                    as_weights, pushforward)
from .transport import Coupling, _emd_reduced, wasserstein_primal, wasserstein_value

INF = math.inf
ROW_TOL = 1e-9
POLISH_GAP = 1e-9  # relative gap above which the dual bound is polished


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 5000
    step_scale: float = 1.0
    tol: float = 1e-6
    brute_force_threshold: int = 3
    grid_resolution: float = 1e-4
    method: str = "auto"  # auto | lp | conic | mirror
    mirror_tol: float = 1e-3
    oracle_check: bool = False

    def __post_init__(self):
        for name in ("max_iters", "step_scale", "tol", "brute_force_threshold", "grid_resolution", "mirror_tol"):
            if not getattr(self, name) > 0:
                raise InputError(f"solver config field {name} must be positive")
        if self.method not in ("auto", "lp", "conic", "mirror"):
            raise InputError(f"unknown solver method {self.method!r}")


DEFAULT_CONFIG = SolverConfig()


@dataclass(frozen=True, eq=False)
class MarginalPenaltyProblem:
    fixed_marginal: DiscreteDistribution
    cost: CostMatrix
    penalty_generator: FGenerator
    lam: float
    reference: DiscreteDistribution

    def __post_init__(self):
        if not isinstance(self.fixed_marginal, DiscreteDistribution):
            object.__setattr__(self, "fixed_marginal", DiscreteDistribution(self.fixed_marginal))
        if not isinstance(self.reference, DiscreteDistribution):
            object.__setattr__(self, "reference", DiscreteDistribution(self.reference))
        if not isinstance(self.cost, CostMatrix):
            object.__setattr__(self, "cost", CostMatrix(self.cost))
        if not self.lam > 0:
            raise InputError(f"lambda must be positive, got {self.lam}")
        if self.cost.shape != (self.fixed_marginal.n, self.reference.n):
            raise InputError(f"cost shape {self.cost.shape} does not match "
                             f"({self.fixed_marginal.n}, {self.reference.n})")

    @property
    def penalty(self) -> FGenerator:
        """lam * f as a single generator."""
        return self.penalty_generator.scaled(self.lam)

    def objective(self, q) -> float:
        """J(q) = W_C(P, q) + lam * D_f(q, R)."""
        q = as_weights(q)
        d = f_divergence(q, self.reference.weights, self.penalty)
        if d == INF:
            return INF
        return wasserstein_value(self.fixed_marginal.weights, q, self.cost.values) + d

    def dual_value(self, g) -> float:
        """Phi(g); a lower bound on min J for every g."""
        return _dual_value(self.fixed_marginal.weights, self.cost.values, self.reference.weights,
                           self.penalty, np.asarray(g, dtype=float))


@dataclass(frozen=True, eq=False)
class PenaltySolution:
    value: float
    q: DiscreteDistribution
    coupling: Coupling
    transport: float
    divergence: float
    lower_bound: float
    method: str
    iters: int = 0
    oracle_value: Optional[float] = None

    @property
    def certified_gap(self) -> float:
        return max(self.value - self.lower_bound, 0.0)

    def __iter__(self):
        return iter((self.value, self.q, self.coupling))


@dataclass(frozen=True, eq=False)
class Encoder:
    """Row-stochastic matrix E(z | x); rows indexed by X, columns by Z."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2:
            raise InputError("encoder must be a matrix")
        if np.any(m < 0) or np.any(np.abs(m.sum(1) - 1.0) > ROW_TOL):
            raise InputError("encoder rows must be conditional distributions")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_coupling(cls, pi) -> "Encoder":
        """Condition a coupling on its rows; rows of zero mass become uniform."""
        pi = pi.matrix if isinstance(pi, Coupling) else np.asarray(pi, dtype=float)
        s = pi.sum(1, keepdims=True)
        out = np.full_like(pi, 1.0 / pi.shape[1])
        nz = s[:, 0] > 0
        out[nz] = pi[nz] / s[nz]
        return cls(out)

    def aggregate(self, P_X) -> np.ndarray:
        """E # P_X."""
        return as_weights(P_X) @ self.matrix


# --- dual bound ---------------------------------------------------------------


def _conjugate_terms(r, phi: FGenerator, g):
    """sum_j r_j phi*(g_j), with the r_j = 0 columns priced by the recession constant."""
    total = 0.0
    pos = r > 0
    if np.any(pos):
        vals = np.asarray(phi.conjugate(g[pos]), dtype=float)
        if not np.all(np.isfinite(vals)):
            return INF
        total = float(np.sum(r[pos] * vals))
    if np.any(~pos) and np.any(g[~pos] > phi.recession + 1e-12):
        return INF
    return total


def _dual_value(p, C, r, phi, g) -> float:
    if not np.all(np.isfinite(g)):
        return -INF
    conj = _conjugate_terms(r, phi, g)
    if conj == INF:
        return -INF
    return float(p @ np.min(C + g[None, :], axis=1)) - conj


def _best_shift(p, C, r, phi, g):
    """max_c Phi(g + c); Phi is concave in the shift."""
    base = _dual_value(p, C, r, phi, g)
    lo, hi = -10.0 * (1 + np.ptp(C)), 10.0 * (1 + np.ptp(C))
    lo_b = phi.conjugate_domain[0] - np.min(g) if np.isfinite(phi.conjugate_domain[0]) else lo
    hi_lim = phi.conjugate_domain[1]
    hi_b = hi_lim - np.max(g) if np.isfinite(hi_lim) else hi
    if np.any(r == 0) and np.isfinite(phi.recession):
        hi_b = min(hi_b, phi.recession - np.max(g[r == 0]))
    lo_b, hi_b = max(lo, lo_b), min(hi, hi_b)
    if not hi_b > lo_b:
        return base, g
    res = minimize_scalar(lambda c: -_dual_value(p, C, r, phi, g + c) if np.isfinite(
        _dual_value(p, C, r, phi, g + c)) else 1e300, bounds=(lo_b, hi_b), method="bounded",
                          options={"xatol": 1e-13, "maxiter": 500})
    val = _dual_value(p, C, r, phi, g + res.x)
    if val > base:
        return val, g + res.x
    return base, g


def _candidate_duals(p, C, r, phi, q):
    """Dual vectors suggested by the primal solution q."""
    cands = []
    I = np.flatnonzero(p > 0)
    J = np.flatnonzero(q > 0)
    qq = q * (p.sum() / q.sum())
    _, u, v, _, _ = _emd_reduced(p, qq, C)
    # c-transform fill for columns off the support of q
    g_ot = np.empty(q.size)
    g_ot[J] = -v
    off = np.setdiff1d(np.arange(q.size), J)
    if off.size:
        g_ot[off] = np.max(u[:, None] - C[np.ix_(I, off)], axis=0)
    cands.append(g_ot)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(r > 0, q / np.where(r > 0, r, 1.0), np.inf)
        g_f = np.where(r > 0, phi.deriv(np.where(np.isfinite(ratio), ratio, 1.0)), phi.recession)
    g_mix = np.where(np.isfinite(g_f), g_f, g_ot)
    cands.append(g_mix)
    return cands


def _lower_bound(p, C, r, phi, q, extra=()):
    best, best_g = -INF, None
    for g in list(_candidate_duals(p, C, r, phi, q)) + list(extra):
        if g is None:
            continue
        val, g = _best_shift(p, C, r, phi, np.asarray(g, dtype=float))
        if val > best:
            best, best_g = val, g
    return best, best_g


def _polish_dual(p, C, r, phi, g):
    """Local ascent on max p.t - sum r phi*(g) s.t. t_i - g_j <= C_ij.

    Candidates built from an inexact q lose first-order accuracy in g; this
    recovers it. The result is re-evaluated through Phi, so it is always a
    valid bound whatever the optimizer does.
    """
    n, m = C.shape
    pos = r > 0
    lo, hi, _ = phi.conjugate_domain
    g_lo = np.where(pos, lo + 1e-12, -INF)
    g_hi = np.where(pos, hi - 1e-12, phi.recession)
    bounds = [(None, None)] * n + [(a if np.isfinite(a) else None, c if np.isfinite(c) else None)
                                   for a, c in zip(g_lo, g_hi)]
    A = np.hstack([-np.repeat(np.eye(n), m, axis=0), np.tile(np.eye(m), (n, 1))])
    b = C.ravel()

    def neg(z):
        with np.errstate(all="ignore"):
            val = p @ z[:n] - r[pos] @ np.asarray(phi.conjugate(z[n:][pos]), dtype=float)
        return -val if np.isfinite(val) else 1e300

    g = np.clip(g, g_lo, g_hi)
    z0 = np.r_[np.min(C + g[None, :], axis=1), g]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(neg, z0, method="SLSQP", bounds=bounds, options={"ftol": 1e-15, "maxiter": 200},
                       constraints=[{"type": "ineq", "fun": lambda z: b + A @ z, "jac": lambda z: A}])
    return _dual_value(p, C, r, phi, res.x[n:])


# --- primal paths --------------------------------------------------------------


def _forbidden_columns(r, phi):
    return (r == 0) & (phi.recession == INF)


def _solve_tv_lp(p, C, r, w):
    """min <C, pi> + w * sum |colsum(pi) - r| over pi >= 0 with row sums p (HiGHS)."""
    n, m = C.shape
    nv = n * m + m
    c = np.concatenate([C.ravel(), np.full(m, w)])
    rows_eq = sparse.kron(sparse.eye(n), np.ones((1, m)))
    A_eq = sparse.hstack([rows_eq, sparse.csr_matrix((n, m))]).tocsr()
    col = sparse.kron(np.ones((1, n)), sparse.eye(m))
    A_ub = sparse.vstack([sparse.hstack([col, -sparse.eye(m)]),
                          sparse.hstack([-col, -sparse.eye(m)])]).tocsr()
    b_ub = np.concatenate([r, -r])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=p, bounds=[(0, None)] * nv, method="highs")
    if res.status != 0:
        raise ConvergenceError(f"HiGHS failed on the TV program: {res.message}")
    pi = res.x[: n * m].reshape(n, m)
    return np.clip(pi.sum(0), 0.0, None), res.nit


def _solve_tv_dual_lp(p, C, r, w):
    """max sum p a - sum r t  s.t. a_i - g_j <= C_ij, t >= g, t >= -w, g <= w."""
    n, m = C.shape
    # variables [a (n), g (m), t (m)]
    c = np.concatenate([-p, np.zeros(m), r])
    A1 = sparse.hstack([sparse.kron(sparse.eye(n), np.ones((m, 1))),
                        -sparse.kron(np.ones((n, 1)), sparse.eye(m)),
                        sparse.csr_matrix((n * m, m))])
    A2 = sparse.hstack([sparse.csr_matrix((m, n)), sparse.eye(m), -sparse.eye(m)])
    A_ub = sparse.vstack([A1, A2]).tocsr()
    b_ub = np.concatenate([C.ravel(), np.zeros(m)])
    bounds = [(None, None)] * n + [(None, w)] * m + [(-w, None)] * m
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    return res.x[n:n + m]


class _NotDCP(Exception):
    pass


def _custom_term(t, s, r, lin_only=False):
    c = t["coef"]
    kind = t["type"]
    if kind == "const":
        return c * r
    if kind == "poly":
        k = t["power"]
        if k == 0:
            return c * r
        if k == 1:
            return c * s
        if k > 1 and c > 0:
            return c * cp.power(s, k) / r ** (k - 1)
        if 0 < k < 1 and c < 0:
            return c * cp.power(s, k) * r ** (1 - k)
        raise _NotDCP
    if kind == "xlogx" and c > 0:
        return c * cp.rel_entr(s, r)
    if kind == "log" and c < 0:
        return c * (r * cp.log(s) - r * np.log(r))
    if kind == "abs" and c > 0:
        return c * cp.abs(s - t["center"] * r)
    raise _NotDCP


def _penalty_expr(phi: FGenerator, s, r):
    """cvxpy expression for sum_j r_j phi(s_j / r_j) over columns with r_j > 0 (vectorized)."""
    kind = phi.kind
    w = phi.weight
    if kind == "tv":
        e = cp.abs(s - r)
    elif kind == "kl":
        e = cp.rel_entr(s, r)
    elif kind == "reverse_kl":
        e = -cp.multiply(r, cp.log(s)) + r * np.log(r)
    elif kind == "chi2":
        e = cp.multiply(1.0 / r, cp.square(s - r))
    elif kind == "js":
        e = 0.5 * (cp.rel_entr(s, s + r) - cp.multiply(r, cp.log(s + r)) + r * np.log(r) + (s + r) * math.log(2.0))
    elif kind == "gan":
        e = cp.rel_entr(s, s + r) - cp.multiply(r, cp.log(s + r)) + r * np.log(r) + 2.0 * math.log(2.0) * r
    elif kind == "custom":
        e = 0
        for t in phi.terms:
            e = e + _custom_term(t, s, r)
    else:
        raise _NotDCP
    return w * cp.sum(e)


def _conic_program(p, C, r, phi, A=None):
    """Solve the penalty program with cvxpy/Clarabel.

    Without ``A`` the coupling's columns are the free universe. With ``A``
    (n_cols x m aggregation matrix) the coupling lives on X x X and its column
    marginal must equal A q, which is the reconstruction-side formulation.
    """
    n, k = C.shape
    m = r.size
    pi = cp.Variable((n, k), nonneg=True)
    cons = [cp.sum(pi, axis=1) == p]
    if A is None:
        q = cp.sum(pi, axis=0)
        qvar = None
    else:
        qvar = cp.Variable(m, nonneg=True)
        q = qvar
        cons.append(cp.sum(pi, axis=0) == A @ qvar)
    pos = np.flatnonzero(r > 0)
    zero = np.flatnonzero(r == 0)
    obj = cp.sum(cp.multiply(C, pi))
    if pos.size:
        obj = obj + _penalty_expr(phi, q[pos], r[pos])
    if zero.size:
        if phi.recession == INF:
            cons.append(q[zero] == 0)
        else:
            obj = obj + phi.recession * cp.sum(q[zero])
    prob = cp.Problem(cp.Minimize(obj), cons)
    try:
        with warnings.catch_warnings():
            # inaccurate solutions are fine: the caller re-evaluates q exactly
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11,
                       max_iter=500)
    except cp.error.SolverError as exc:
        raise ConvergenceError(f"conic solver failed: {exc}") from None
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise ConvergenceError(f"conic solver returned status {prob.status}")
    qv = np.asarray(q.value if A is None else qvar.value, dtype=float).ravel()
    iters = prob.solver_stats.num_iters or 0
    return np.clip(qv, 0.0, None), iters


def _mirror_descent(prob: MarginalPenaltyProblem, cfg: SolverConfig):
    """Entropic mirror descent on q with eta_t = step_scale / sqrt(t); best iterate."""
    p = prob.fixed_marginal.weights
    C = prob.cost.values
    r = prob.reference.weights
    phi = prob.penalty
    allowed = ~_forbidden_columns(r, phi)
    q = np.where(allowed, 0.5 * r + 0.5 / allowed.sum(), 0.0)
    q /= q.sum()
    best_q, best_val = q.copy(), prob.objective(q)
    scale = max(float(np.ptp(C)), phi.weight, 1e-12)
    for t in range(1, cfg.max_iters + 1):
        J = np.flatnonzero(q > 0)
        _, _, v, _, _ = _emd_reduced(p, q, C)
        grad_ot = np.zeros(q.size)
        grad_ot[J] = v - v.mean()
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(r > 0, q / np.where(r > 0, r, 1.0), 1.0)
            gf = np.where(r > 0, phi.deriv(ratio), phi.recession)
        gf = np.where(np.isfinite(gf), gf, 0.0)
        grad = grad_ot + gf
        eta = cfg.step_scale / (scale * math.sqrt(t))
        logq = np.where(allowed, np.log(np.where(allowed, q, 1.0)) - eta * grad, -np.inf)
        logq -= np.max(logq[allowed])
        q = np.where(allowed, np.exp(logq), 0.0)
        q = np.maximum(q, 1e-300 * allowed)
        q /= q.sum()
        val = prob.objective(q)
        if val < best_val:
            best_q, best_val = q.copy(), val
    return best_q, cfg.max_iters


def _dcp_supported(phi: FGenerator) -> bool:
    if phi.kind in ("tv", "kl", "reverse_kl", "chi2", "js", "gan"):
        return True
    if phi.kind != "custom":
        return False
    x = cp.Variable(1, nonneg=True)
    try:
        _penalty_expr(phi, x, np.ones(1))
    except _NotDCP:
        return False
    return True


def _pick_method(phi: FGenerator, cfg: SolverConfig) -> str:
    if cfg.method != "auto":
        return cfg.method
    if phi.kind in ("tv", "indicator"):
        return "lp"
    return "conic" if _dcp_supported(phi) else "mirror"


def _finish(prob, q, method, iters, extra_duals=(), cfg=DEFAULT_CONFIG):
    """Exact re-evaluation at q (and at q = R as a safeguard) plus the dual certificate."""
    p = prob.fixed_marginal.weights
    C = prob.cost.values
    r = prob.reference.weights
    phi = prob.penalty
    q = np.where(_forbidden_columns(r, phi), 0.0, np.clip(q, 0.0, None))
    q = q / q.sum()
    candidates = [q, r.copy()]
    best = None
    for cand in candidates:
        d = f_divergence(cand, r, phi)
        if d == INF:
            continue
        w, pi = wasserstein_primal(p, cand, C)
        if best is None or w + d < best[0]:
            best = (w + d, cand, pi, w, d)
    value, q, pi, w, d = best
    lb, g = _lower_bound(p, C, r, phi, q, extra_duals)
    if g is not None and value - lb > POLISH_GAP * max(1.0, abs(value)):
        lb = max(lb, _polish_dual(p, C, r, phi, g))
    oracle_value = None
    if cfg.oracle_check and r.size <= cfg.brute_force_threshold:
        from .oracle import brute_force_penalty
        oracle_value = brute_force_penalty(prob, cfg.grid_resolution)[0]
    return PenaltySolution(value, DiscreteDistribution.normalized(q), pi, w, d, lb, method, iters, oracle_value)


def solve_marginal_penalty(prob: MarginalPenaltyProblem, cfg: SolverConfig = DEFAULT_CONFIG) -> PenaltySolution:
    """min_q W_C(P, q) + lam * D_f(q, R) with an exact re-evaluation and a dual certificate.

    Paths: ``lp`` (TV via HiGHS, indicator by fixing q = R), ``conic`` (cvxpy +
    Clarabel perspective forms) and ``mirror`` (entropic mirror descent).
    """
    p = prob.fixed_marginal.weights
    C = prob.cost.values
    r = prob.reference.weights
    phi = prob.penalty
    method = _pick_method(phi, cfg)
    if phi.is_indicator:
        return _finish(prob, r.copy(), "exact", 0, cfg=cfg)
    extra = ()
    if method == "lp":
        if phi.kind != "tv":
            raise UnsupportedGeneratorError(f"the LP path handles tv and indicator, not {phi.name}")
        q, iters = _solve_tv_lp(p, C, r, phi.weight)
        extra = (_solve_tv_dual_lp(p, C, r, phi.weight),)
    elif method == "conic":
        try:
            q, iters = _conic_program(p, C, r, phi)
        except _NotDCP:
            raise UnsupportedGeneratorError(f"generator {phi.name} has no conic form; use method='mirror'") from None
    else:
        q, iters = _mirror_descent(prob, cfg)
    sol = _finish(prob, q, method, iters, extra, cfg)
    if method == "mirror" and sol.certified_gap > cfg.mirror_tol:
        raise ConvergenceError(f"mirror descent stopped with certified gap {sol.certified_gap:.3e}",
                               residual=sol.certified_gap, best=sol)
    return sol


# --- GAN side -------------------------------------------------------------------


def _metric(space) -> np.ndarray:
    if isinstance(space, FiniteMetricSpace):
        return space.dist
    if isinstance(space, CostMatrix) and space.metric_certified:
        return space.values
    raise ContractError("a metric space is required")


def restricted_fgan(P_X, P_G, f: FGenerator, lam: float, space, cfg: SolverConfig = DEFAULT_CONFIG,
                    full: bool = False):
    """sup over 1-Lipschitz d of E_{P_X} d - E_{P_G} (lam f)*(d), via its primal form

    min_{P'} W_c(P', P_X) + lam * D_f(P', P_G).
    """
    D = _metric(space)
    prob = MarginalPenaltyProblem(DiscreteDistribution(as_weights(P_X)), CostMatrix(D), f, lam,
                                  DiscreteDistribution(as_weights(P_G)))
    sol = solve_marginal_penalty(prob, cfg)
    return sol if full else sol.value


def fgan_direct(P_X, P_G, f: FGenerator, lam: float, space):
    """The f-GAN objective maximized directly over 1-Lipschitz discriminators (LP).

    Only generators with a piecewise-linear conjugate are accepted. For TV the
    conjugate of lam*f on [0, inf) is max(y, -lam) for y <= lam; the cap
    h <= lam * f'(inf) also applies where P_G vanishes.
    """
    if not isinstance(f, FGenerator) or f.kind not in ("tv", "indicator"):
        raise UnsupportedGeneratorError("fgan_direct needs a piecewise-linear conjugate (tv or indicator)")
    if not lam > 0:
        raise InputError("lambda must be positive")
    D = _metric(space)
    p, g = as_weights(P_X), as_weights(P_G)
    n = p.size
    if D.shape != (n, n) or g.size != n:
        raise InputError("distributions and space disagree in size")
    phi = f.scaled(lam)
    iu, ju = np.nonzero(~np.eye(n, dtype=bool))
    k = iu.size
    if phi.is_indicator:
        # max (p - g) . h  s.t. h_i - h_j <= D_ij, h_0 = 0
        A = sparse.csr_matrix((np.r_[np.ones(k), -np.ones(k)], (np.r_[np.arange(k), np.arange(k)], np.r_[iu, ju])),
                              shape=(k, n))
        bounds = [(0.0, 0.0)] + [(None, None)] * (n - 1)
        res = linprog(-(p - g), A_ub=A, b_ub=D[iu, ju], bounds=bounds, method="highs")
        if res.status != 0:
            raise ConvergenceError(f"HiGHS failed: {res.message}")
        h = res.x
        h = h - h.min()
        return float((p - g) @ h), _potential(h, D)
    w = phi.weight
    # variables [h (n), t (n)]: max p.h - g.t ; t >= h ; t >= -w ; h <= w
    A1 = sparse.csr_matrix((np.r_[np.ones(k), -np.ones(k)], (np.r_[np.arange(k), np.arange(k)], np.r_[iu, ju])),
                           shape=(k, 2 * n))
    A2 = sparse.hstack([sparse.eye(n), -sparse.eye(n)])
    A_ub = sparse.vstack([A1, A2]).tocsr()
    b_ub = np.r_[D[iu, ju], np.zeros(n)]
    cap = w * f.recession_base
    bounds = [(None, min(w, cap))] * n + [(-w, None)] * n
    res = linprog(np.r_[-p, g], A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise ConvergenceError(f"HiGHS failed: {res.message}")
    h = res.x[:n]
    value = float(p @ h - g @ np.maximum(h, -w))
    return value, _potential(h, D)


def _potential(h, D):
    from .transport import DualPotentials
    return DualPotentials(h=np.asarray(h, dtype=float), cost=D)


# --- WAE side -------------------------------------------------------------------


def _composed_cost(space, G: PushforwardMap) -> np.ndarray:
    D = _metric(space)
    if G.n_target != D.shape[0]:
        raise InputError("G's target universe does not match the space")
    return D[:, G.mapping]


def _aggregation(G: PushforwardMap) -> np.ndarray:
    A = np.zeros((G.n_target, G.n_source))
    A[G.mapping, np.arange(G.n_source)] = 1.0
    return A


@dataclass(frozen=True, eq=False)
class WAEResult:
    value: float
    encoder: Encoder
    solution: PenaltySolution

    def __iter__(self):
        return iter((self.value, self.encoder))


def wae_objective(P_X, P_Z, G: PushforwardMap, space, f: FGenerator, lam: float,
                  cfg: SolverConfig = DEFAULT_CONFIG) -> WAEResult:
    """inf_E E_{P_X} E_{z~E(.|x)} c(x, G(z)) + lam * D_f(E # P_X, P_Z), with the optimal encoder."""
    p, pz = as_weights(P_X), as_weights(P_Z)
    if pz.size != G.n_source:
        raise InputError("P_Z must live on G's source universe")
    C = _composed_cost(space, G)
    prob = MarginalPenaltyProblem(DiscreteDistribution(p), CostMatrix(C), f, lam, DiscreteDistribution(pz))
    sol = solve_marginal_penalty(prob, cfg)
    enc = Encoder.from_coupling(sol.coupling)
    value = float(np.sum(sol.coupling.matrix * C)) + f_divergence(enc.aggregate(p), pz, f.scaled(lam))
    return WAEResult(value, enc, sol)


@dataclass(frozen=True, eq=False)
class FWAEResult:
    value: float
    q: DiscreteDistribution
    reconstruction: float
    divergence: float

    def __float__(self):
        return self.value


def fwae_objective(P_X, P_Z, G: PushforwardMap, space, f: FGenerator, lam: float,
                   cfg: SolverConfig = DEFAULT_CONFIG, full: bool = False):
    """inf_q W_c(P_X, G # q) + lam * D_f(q, P_Z).

    Solved on X x X with the coupling's column marginal tied to G # q, which
    is a different program from the one behind :func:`wae_objective`.
    """
    p, pz = as_weights(P_X), as_weights(P_Z)
    if pz.size != G.n_source:
        raise InputError("P_Z must live on G's source universe")
    D = _metric(space)
    phi = f.scaled(lam)
    if phi.is_indicator:
        q = pz.copy()
    else:
        try:
            q, _ = _conic_program(p, D, pz, phi, A=_aggregation(G))
        except _NotDCP:
            raise UnsupportedGeneratorError(f"generator {f.name} has no conic form") from None
        q = np.where(_forbidden_columns(pz, phi), 0.0, q)
        q = q / q.sum()
    best = None
    for cand in (q, pz.copy()):
        d = f_divergence(cand, pz, phi)
        if d == INF:
            continue
        w = wasserstein_value(p, pushforward(G, cand).weights, D)
        if best is None or w + d < best[0]:
            best = (w + d, cand, w, d)
    res = FWAEResult(best[0], DiscreteDistribution.normalized(best[1]), best[2], best[3])
    return res if full else res.value


def reconstruction_bound_check(E: Encoder, G: PushforwardMap, P_X, space):
    """(W_c((G o E) # P_X, P_X), E_{P_X} E_{E(z|x)} c(x, G(z)), lhs <= rhs + 1e-9)."""
    p = as_weights(P_X)
    M = E.matrix if isinstance(E, Encoder) else np.asarray(E, dtype=float)
    if M.shape != (p.size, G.n_source):
        raise InputError("encoder shape does not match P_X and G")
    C = _composed_cost(space, G)
    rhs = float(np.sum(p[:, None] * M * C))
    recon = pushforward(G, DiscreteDistribution.normalized(p @ M)).weights
    lhs = wasserstein_value(recon, p, _metric(space))
    return lhs, rhs, bool(lhs <= rhs + 1e-9)


# --- thresholds -----------------------------------------------------------------


def gamma_star(P_X, P_G, f: FGenerator) -> float:
    """max over supp(P_G) of |f'(p/g) - f'(0)|; +inf when f'(0) = -inf."""
    p, g = as_weights(P_X), as_weights(P_G)
    if f.is_indicator:
        raise UnsupportedGeneratorError("the indicator generator has no derivative")
    if np.any((g == 0) & (p > 0)):
        raise ContractError("P_X must be absolutely continuous w.r.t. P_G")
    d0 = float(f.deriv(0.0))
    if not np.isfinite(d0):
        return INF
    sup = g > 0
    return float(np.max(np.abs(f.deriv(p[sup] / g[sup]) - d0)))


@dataclass(frozen=True, eq=False)
class LambdaStar:
    value: float
    argmax: Optional[np.ndarray]
    unbounded: bool = False

    def __float__(self):
        return self.value


def _ratio(P, g, D, f) -> float:
    d = f_divergence(P, g, f)
    if d == INF:
        return 0.0
    if d <= 0:
        return 0.0
    return wasserstein_value(P, g, D) / d


def lambda_star_estimate(P_G, f: FGenerator, space, n_samples: int = 200, refine_iters: int = 50,
                         rng: Optional[np.random.Generator] = None) -> LambdaStar:
    """Heuristic lower bound on sup_{P'} W_c(P', P_G) / D_f(P', P_G).

    Candidates: Dirichlet samples and pairwise transfers P_G + t (e_i - e_j),
    then a local search over pairwise transfers. When the ratio keeps growing
    as P' -> P_G (a generator smooth at 1) the supremum is infinite and the
    estimate is flagged ``unbounded``.
    """
    g = as_weights(P_G)
    D = _metric(space)
    n = g.size
    rng = np.random.default_rng(0) if rng is None else rng
    if f.is_indicator or n == 1:
        return LambdaStar(0.0, g.copy())
    allowed = np.ones(n, dtype=bool) if np.isfinite(f.recession) else g > 0
    idx = np.flatnonzero(allowed)
    src = np.flatnonzero(g > 0)

    def transfer(i, j, t):
        P = g.copy()
        t = min(t, P[j])
        P[i] += t
        P[j] -= t
        return P

    # probe the approach to P_G along the steepest pair
    if src.size and idx.size > 1:
        i_, j_ = max(((i, j) for i in idx for j in src if i != j), key=lambda ij: D[ij])
        far = _ratio(transfer(i_, j_, 1e-2 * g[j_]), g, D, f)
        near = _ratio(transfer(i_, j_, 1e-7 * g[j_]), g, D, f)
        if far > 0 and near > 1e3 * far:
            return LambdaStar(INF, None, unbounded=True)

    best, arg = 0.0, g.copy()
    for _ in range(n_samples):
        P = np.zeros(n)
        P[idx] = rng.dirichlet(np.ones(idx.size))
        val = _ratio(P, g, D, f)
        if val > best:
            best, arg = val, P
    for i in idx:
        for j in src:
            if i == j:
                continue
            for frac in (1.0, 0.5, 0.1, 1e-3):
                P = transfer(i, j, frac * g[j])
                val = _ratio(P, g, D, f)
                if val > best:
                    best, arg = val, P
    step = 0.1
    for _ in range(refine_iters):
        improved = False
        for i in idx:
            for j in np.flatnonzero(arg > 0):
                if i == j:
                    continue
                P = arg.copy()
                t = min(step, P[j])
                P[i] += t
                P[j] -= t
                val = _ratio(P, g, D, f)
                if val > best + 1e-15:
                    best, arg, improved = val, P, True
        if not improved:
            step /= 2
            if step < 1e-6:
                break
    return LambdaStar(float(best), arg)
