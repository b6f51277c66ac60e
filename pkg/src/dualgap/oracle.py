"""Brute-force grid oracle for marginal-penalty problems with at most 3 free points.

W_C(P, q) is evaluated for a whole grid of q at once from the vertices of
the dual arrangement (no LP solver involved), so this path shares no code
with the solvers it checks.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import InputError
from .fgen import f_divergence

INF = math.inf


def _dual_vertices(C: np.ndarray) -> np.ndarray:
    """Candidate column potentials v (v_0 = 0) containing every vertex of the dual arrangement."""
    n, m = C.shape
    if m == 1:
        return np.zeros((1, 1))
    a = C[:, 1] - C[:, 0]
    if m == 2:
        return np.column_stack([np.zeros(a.size), a])
    b = C[:, 2] - C[:, 0]
    d = C[:, 1] - C[:, 2]
    A1, B1 = np.meshgrid(a, b, indexing="ij")
    V = [np.column_stack([A1.ravel(), B1.ravel()])]
    A2, D2 = np.meshgrid(a, d, indexing="ij")
    V.append(np.column_stack([A2.ravel(), (A2 - D2).ravel()]))
    B3, D3 = np.meshgrid(b, d, indexing="ij")
    V.append(np.column_stack([(B3 + D3).ravel(), B3.ravel()]))
    V = np.unique(np.vstack(V), axis=0)
    return np.column_stack([np.zeros(V.shape[0]), V])


def wasserstein_grid(p, C, Q: np.ndarray) -> np.ndarray:
    """W_C(p, q) for every row q of Q, via max over dual vertices."""
    V = _dual_vertices(C)
    # a_k = sum_i p_i min_j (C_ij - v_kj)
    a = np.array([p @ np.min(C - v[None, :], axis=1) for v in V])
    out = np.full(Q.shape[0], -INF)
    for start in range(0, V.shape[0], 512):
        blk = V[start:start + 512]
        out = np.maximum(out, np.max(a[start:start + 512][None, :] + Q @ blk.T, axis=1))
    return out


def _simplex_grid(m, center, radius, h):
    if m == 2:
        t = np.arange(max(center[1] - radius, 0.0), min(center[1] + radius, 1.0) + h / 2, h)
        t = np.clip(np.r_[t, center[1]], 0.0, 1.0)
        return np.column_stack([1 - t, t])
    t1 = np.arange(max(center[1] - radius, 0.0), min(center[1] + radius, 1.0) + h / 2, h)
    t2 = np.arange(max(center[2] - radius, 0.0), min(center[2] + radius, 1.0) + h / 2, h)
    A, B = np.meshgrid(np.clip(t1, 0, 1), np.clip(t2, 0, 1), indexing="ij")
    A, B = A.ravel(), B.ravel()
    keep = A + B <= 1.0 + 1e-15
    A, B = A[keep], np.minimum(B[keep], 1.0 - A[keep])
    Q = np.column_stack([1 - A - B, A, B])
    return np.vstack([Q, center[None, :]])


def _penalty_grid(Q, r, phi):
    """Vectorized sum_j r_j phi(q_j / r_j) with recession pricing where r_j = 0."""
    pos = r > 0
    with np.errstate(invalid="ignore"):
        out = np.sum(r[pos] * phi(Q[:, pos] / r[pos]), axis=1)
    stray = Q[:, ~pos].sum(axis=1)
    if np.any(~pos):
        rec = phi.recession
        out = out + np.where(stray > 0, stray * rec if np.isfinite(rec) else INF, 0.0)
    return out


def brute_force_penalty(prob, resolution: float = None, zoom_rounds: int = 6):
    """Grid minimum of W_C(P, q) + lam D_f(q, R) over the simplex, then local zoom.

    resolution defaults to 1e-4 for two free points and 2.5e-3 for three.
    Returns (value, q).
    """
    p = prob.fixed_marginal.weights
    C = prob.cost.values
    r = prob.reference.weights
    phi = prob.penalty
    m = r.size
    if m > 3:
        raise InputError("the brute-force oracle handles at most 3 free points")
    if phi.is_indicator:
        q = r.copy()
        return float(wasserstein_grid(p, C, q[None, :])[0]), q
    if m == 1:
        q = np.ones(1)
        return float(wasserstein_grid(p, C, q[None, :])[0] + f_divergence(q, r, phi)), q
    h = resolution if resolution is not None else (1e-4 if m == 2 else 2.5e-3)
    center = np.full(m, 1.0 / m)
    Q = _simplex_grid(m, center, 1.0, h)
    best_val, best_q = INF, center
    for rnd in range(zoom_rounds + 1):
        J = wasserstein_grid(p, C, Q) + _penalty_grid(Q, r, phi)
        k = int(np.argmin(J))
        if J[k] < best_val:
            best_val, best_q = float(J[k]), Q[k].copy()
        if rnd == zoom_rounds:
            break
        Q = _simplex_grid(m, best_q, 3 * h, h / 10)
        h /= 10
    return best_val, best_q


def enumerate_transport_vertices(p, q, C) -> float:
    """W_C(p, q) by enumerating basic feasible couplings (tiny instances only)."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    n, m = C.shape
    cells = list(itertools.product(range(n), range(m)))
    best = INF
    for basis in itertools.combinations(cells, n + m - 1):
        A = np.zeros((n + m, len(basis)))
        for k, (i, j) in enumerate(basis):
            A[i, k] = 1
            A[n + j, k] = 1
        x, *_ = np.linalg.lstsq(A, np.r_[p, q], rcond=None)
        if np.all(x >= -1e-12) and np.allclose(A @ x, np.r_[p, q], atol=1e-12):
            best = min(best, float(sum(x[k] * C[i, j] for k, (i, j) in enumerate(basis))))
    return best
