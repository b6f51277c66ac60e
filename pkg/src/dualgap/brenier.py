"""Semi-discrete transport through a Brenier potential phi_h(x) = max_i (x . y_i + h_i).

grad phi_h is the atom of the argmax cell, so phi_h pushes the source onto
the atoms with the cell masses; fitting h means matching those masses to nu.
Fitting uses one fixed sample set (sample-average approximation) so the
objective is deterministic and backtracking is sound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError

CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class SemiDiscreteProblem:
    """Uniform source on a box (or on a regular grid in it) and weighted atoms."""

    atoms: np.ndarray
    weights: np.ndarray
    box: tuple  # ((lo, hi), ...) per dimension
    sampler: str = "uniform-box"  # or uniform-grid
    grid_per_dim: int = 100

    def __post_init__(self):
        a = np.array(self.atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        w = np.array(self.weights, dtype=float)
        if a.shape[0] == 0 or w.shape != (a.shape[0],):
            raise InputError("need one weight per atom")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InputError("atom weights must lie in the simplex")
        if np.unique(a, axis=0).shape[0] != a.shape[0]:
            raise InputError("atoms must be distinct")
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if len(box) != a.shape[1] or any(not (np.isfinite(lo) and np.isfinite(hi) and hi > lo) for lo, hi in box):
            raise InputError("box must give a bounded interval per dimension")
        if self.sampler not in ("uniform-box", "uniform-grid"):
            raise InputError(f"unknown sampler {self.sampler!r}")
        a.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "box", box)

    @property
    def m(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def sample(self, n: int, seed) -> np.ndarray:
        if n < 1:
            raise InputError("n_samples must be at least 1")
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        if self.sampler == "uniform-grid":
            axes = [np.linspace(l, h, self.grid_per_dim) for l, h in self.box]
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.dim)
            idx = np.random.default_rng(seed).integers(0, mesh.shape[0], size=n)
            return mesh[idx]
        return np.random.default_rng(seed).uniform(lo, hi, size=(n, self.dim))


@dataclass(frozen=True, eq=False)
class BrenierPotential:
    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=float).ravel()
        if h.size == 0 or not np.all(np.isfinite(h)):
            raise InputError("potential must be a nonempty finite vector")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    def normalized(self) -> "BrenierPotential":
        return BrenierPotential(self.h - self.h.min())

    def phi(self, x, atoms) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.max(x @ np.asarray(atoms).T + self.h[None, :], axis=1)


def _as_h(h) -> np.ndarray:
    return h.h if isinstance(h, BrenierPotential) else np.asarray(h, dtype=float).ravel()


def _assign(h, atoms, X) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=np.int64)
    for s in range(0, X.shape[0], CHUNK):
        out[s:s + CHUNK] = np.argmax(X[s:s + CHUNK] @ atoms.T + h[None, :], axis=1)
    return out


def assign_cell(h, x, atoms) -> int:
    """argmax_i (x . y_i + h_i); np.argmax resolves ties to the lowest index."""
    hv = _as_h(h)
    a = np.atleast_2d(np.asarray(atoms, dtype=float))
    if a.shape[0] != hv.size:
        raise InputError("one potential value per atom")
    return int(_assign(hv, a, np.atleast_2d(np.asarray(x, dtype=float)))[0])


def masses_on(h, problem: SemiDiscreteProblem, X) -> np.ndarray:
    counts = np.bincount(_assign(_as_h(h), problem.atoms, X), minlength=problem.m)
    return counts / X.shape[0]


def cell_masses(h, problem: SemiDiscreteProblem, n_samples: int, seed) -> np.ndarray:
    """Monte Carlo P(C_i); counts / n, so the vector sums to 1."""
    return masses_on(h, problem, problem.sample(n_samples, seed))


def dual_objective(h, problem: SemiDiscreteProblem, X) -> float:
    """F(h) = sum_i nu_i h_i - E_P[phi_h] on the sample X; concave with gradient nu - masses."""
    hv = _as_h(h)
    total = 0.0
    for s in range(0, X.shape[0], CHUNK):
        total += float(np.sum(np.max(X[s:s + CHUNK] @ problem.atoms.T + hv[None, :], axis=1)))
    return float(problem.weights @ hv) - total / X.shape[0]


@dataclass(frozen=True)
class FitConfig:
    n_samples: int = 100_000
    max_iters: int = 500
    step: float = 1.0
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not (self.n_samples > 0 and self.max_iters > 0 and self.step > 0 and self.tol > 0):
            raise InputError("fit config values must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    potential: BrenierPotential
    residual: float
    converged: bool
    iters: int
    history: tuple = field(default=(), repr=False)

    def __iter__(self):
        return iter((self.potential, self.residual))


def fit_potential(problem: SemiDiscreteProblem, cfg: FitConfig = FitConfig()) -> FitResult:
    """Ascent h <- h + step (nu - masses) on a fixed sample, halving the step
    whenever the max-marginal residual would increase."""
    X = problem.sample(cfg.n_samples, cfg.seed)
    nu = problem.weights
    h = np.zeros(problem.m)
    mass = masses_on(h, problem, X)
    res = float(np.max(np.abs(mass - nu)))
    history = [res]
    step = cfg.step
    it = 0
    while res > cfg.tol and it < cfg.max_iters:
        it += 1
        accepted = False
        for _ in range(40):
            cand = h + step * (nu - mass)
            cmass = masses_on(cand, problem, X)
            cres = float(np.max(np.abs(cmass - nu)))
            if cres <= res:
                h, mass, res = cand, cmass, cres
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        history.append(res)
        step = min(step * 1.5, cfg.step)
    h = h - h.min()
    return FitResult(BrenierPotential(h), res, res <= cfg.tol, it, tuple(history))


def pushforward_check(h, problem: SemiDiscreteProblem, nu=None, n_samples: int = 100_000, seed=1,
                      tol: float = 2e-2):
    """(tv_error, passed) with tv_error = 0.5 * sum |P(C_i) - nu_i| on fresh samples."""
    target = problem.weights if nu is None else np.asarray(nu, dtype=float)
    if target.shape != (problem.m,):
        raise InputError("nu must have one entry per atom")
    masses = cell_masses(h, problem, n_samples, seed)
    tv = 0.5 * float(np.abs(masses - target).sum())
    return tv, bool(tv <= tol)


def finite_difference_gradient(h, problem: SemiDiscreteProblem, X, delta: float = 1e-4) -> np.ndarray:
    hv = _as_h(h)
    g = np.empty(hv.size)
    for i in range(hv.size):
        e = np.zeros(hv.size)
        e[i] = delta
        g[i] = (dual_objective(hv + e, problem, X) - dual_objective(hv - e, problem, X)) / (2 * delta)
    return g


def mc_sigma(masses, n: int) -> np.ndarray:
    """Binomial standard error of Monte Carlo cell masses."""
    m = np.asarray(masses, dtype=float)
    return np.sqrt(np.maximum(m * (1 - m), 1e-300) / n)


def parse_box(text: str) -> tuple:
    """'box:-1,1,-1,1' -> ((-1, 1), (-1, 1))."""
    body = text.split(":", 1)[1] if text.startswith("box:") else text
    try:
        vals = [float(v) for v in body.split(",")]
    except ValueError:
        raise InputError(f"cannot parse domain {text!r}") from None
    if len(vals) % 2 or not vals:
        raise InputError("domain needs lo,hi pairs")
    return tuple((vals[k], vals[k + 1]) for k in range(0, len(vals), 2))
