"""Empirical concentration of IPM_{H_c}(P, P_n), rate fits and covering numbers.

Continuous references are replaced by fine uniform grids, so every distance
here is an exact finite transport problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import binom

from .duality import DEFAULT_CONFIG, SolverConfig, fwae_objective, restricted_fgan
from .errors import InputError
from .fgen import FGenerator, get_generator
from .space import FiniteMetricSpace, PushforwardMap, diameter
from .transport import kantorovich_dual, wasserstein_value

KINDS = ("uniform-square", "uniform-grid", "mixture-of-points")


@dataclass(frozen=True, eq=False)
class SampledDistributionSpec:
    """A bounded distribution we can sample from and compare against exactly.

    uniform-square: continuous uniform on [0,1]^2, referenced by a
    ``grid`` x ``grid`` lattice of cell centres. uniform-grid: uniform over
    the ``grid`` x ``grid`` lattice itself. mixture-of-points: ``atoms``
    (rows of coordinates) with ``weights``.
    """

    kind: str
    grid: int = 64
    atoms: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown distribution kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "mixture-of-points":
            if self.atoms is None:
                raise InputError("mixture-of-points needs atoms")
            a = np.asarray(self.atoms, dtype=float)
            if a.ndim == 1:
                a = a[:, None]
            w = np.full(a.shape[0], 1.0 / a.shape[0]) if self.weights is None else np.asarray(self.weights, float)
            if w.size != a.shape[0] or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
                raise InputError("mixture weights must be a simplex vector, one per atom")
            object.__setattr__(self, "atoms", a)
            object.__setattr__(self, "weights", w)
        elif self.grid < 1:
            raise InputError("grid size must be positive")

    @classmethod
    def two_point(cls) -> "SampledDistributionSpec":
        """Uniform on two points at distance 1."""
        return cls("mixture-of-points", atoms=np.array([[0.0], [1.0]]), weights=np.array([0.5, 0.5]))

    @property
    def discrete(self) -> bool:
        return self.kind != "uniform-square"

    def reference(self):
        """(points, weights) of the exact finite reference measure."""
        if self.kind == "mixture-of-points":
            return self.atoms, self.weights
        k = self.grid
        if self.kind == "uniform-square":
            c = (np.arange(k) + 0.5) / k
        else:
            c = np.linspace(0.0, 1.0, k) if k > 1 else np.zeros(1)
        X, Y = np.meshgrid(c, c, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        return pts, np.full(pts.shape[0], 1.0 / pts.shape[0])

    @property
    def diameter(self) -> float:
        if self.kind == "uniform-square":
            return math.sqrt(2.0)
        pts, w = self.reference()
        sup = pts[w > 0]
        d = np.sqrt(((sup[:, None] - sup[None]) ** 2).sum(-1))
        return float(d.max())

    def sample_counts(self, n: int, rng) -> np.ndarray:
        """Multinomial counts over the reference atoms (discrete kinds)."""
        _, w = self.reference()
        return rng.multinomial(n, w)

    def sample_points(self, n: int, rng) -> np.ndarray:
        if self.kind == "uniform-square":
            return rng.uniform(0.0, 1.0, size=(n, 2))
        pts, _ = self.reference()
        return pts[np.repeat(np.arange(pts.shape[0]), self.sample_counts(n, rng))]


def _cdist(a, b):
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


def empirical_ipm(spec: SampledDistributionSpec, n: int, rng) -> float:
    """IPM_{H_c}(P_ref, P_n) for one empirical sample of size n."""
    pts, w = spec.reference()
    if spec.discrete:
        counts = spec.sample_counts(n, rng)
        sup = (w > 0) | (counts > 0)
        space = FiniteMetricSpace.euclidean(pts[sup])
        return kantorovich_dual(w[sup], counts[sup] / n, space)[0]
    x = spec.sample_points(n, rng)
    return wasserstein_value(np.full(n, 1.0 / n), w, _cdist(x, pts))


@dataclass
class RateCurve:
    rows: list = field(default_factory=list)  # (n, trial, ipm)
    slope: float = float("nan")
    intercept: float = float("nan")

    def medians(self):
        ns = sorted({r[0] for r in self.rows})
        return ns, [float(np.median([r[2] for r in self.rows if r[0] == n])) for n in ns]

    def means(self):
        ns = sorted({r[0] for r in self.rows})
        return ns, [float(np.mean([r[2] for r in self.rows if r[0] == n])) for n in ns]


def fit_loglog(ns, values):
    """Least-squares (slope, intercept) of log(values) against log(ns)."""
    x, y = np.log(np.asarray(ns, float)), np.log(np.asarray(values, float))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def trial_rng(seed: int, n_index: int, trial: int):
    return np.random.default_rng([int(seed), int(n_index), int(trial)])


def empirical_ipm_curve(spec: SampledDistributionSpec, ns: Sequence[int], trials: int, seed: int,
                        statistic: str = "median") -> RateCurve:
    """IPM(P, P_n) over (n, trial) with a log-log slope fit of the per-n median (or mean)."""
    ns = [int(n) for n in ns]
    if trials < 2 or any(b <= a for a, b in zip(ns, ns[1:])) or min(ns) < 1:
        raise InputError("ns must be strictly increasing positive integers and trials >= 2")
    curve = RateCurve()
    for k, n in enumerate(ns):
        for t in range(trials):
            curve.rows.append((n, t, empirical_ipm(spec, n, trial_rng(seed, k, t))))
    xs, ys = curve.medians() if statistic == "median" else curve.means()
    if min(ys) > 0:
        curve.slope, curve.intercept = fit_loglog(xs, ys)
    return curve


def two_point_expected_ipm(n: int) -> float:
    """E |Bin(n, 1/2)/n - 1/2| exactly; the expected IPM for the two-point spec."""
    k = np.arange(n + 1)
    return float(np.sum(binom.pmf(k, n, 0.5) * np.abs(k / n - 0.5)))


def bound_term(diam: float, n: int, delta: float) -> float:
    """(Delta / 2) sqrt(2 ln(1/delta) / n), the bounded-differences deviation."""
    return 0.5 * diam * math.sqrt(2.0 / n * math.log(1.0 / delta))


@dataclass(frozen=True)
class ConcentrationResult:
    violation_fraction: float
    bound_term: float
    allowed: float
    passed: bool
    mean_ipm: float
    values: tuple = ()


def concentration_check(spec: SampledDistributionSpec, n: int, trials: int, delta: float, seed: int) -> ConcentrationResult:
    """Fraction of trials with IPM > mean + bound_term, against delta plus binomial slack."""
    if not 0 < delta < 1:
        raise InputError("delta must lie in (0, 1)")
    if trials < 1 or n < 1:
        raise InputError("n and trials must be positive")
    vals = np.array([empirical_ipm(spec, n, trial_rng(seed, 0, t)) for t in range(trials)])
    bt = bound_term(spec.diameter, n, delta)
    frac = float(np.mean(vals > vals.mean() + bt))
    allowed = delta + 2.0 * math.sqrt(delta * (1 - delta) / trials)
    return ConcentrationResult(frac, bt, allowed, frac <= allowed, float(vals.mean()), tuple(map(float, vals)))


# --- covering numbers ------------------------------------------------------------


@dataclass(frozen=True)
class CoveringResult:
    upper: int
    lower: int
    centers: tuple = ()

    def __int__(self):
        return self.upper


def _as_points(points):
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if p.shape[0] == 0:
        raise InputError("need at least one point")
    return p


def _greedy_cover(D, eta, order=None):
    n = D.shape[0]
    uncovered = np.ones(n, dtype=bool)
    centers = []
    dist_to_c = np.full(n, np.inf)
    cur = 0 if order is None else order[0]
    while uncovered.any():
        centers.append(int(cur))
        dist_to_c = np.minimum(dist_to_c, D[cur])
        uncovered &= D[cur] > eta
        if uncovered.any():
            # farthest uncovered point from the current centres
            cand = np.flatnonzero(uncovered)
            cur = int(cand[np.argmax(dist_to_c[cand])])
    return centers


def covering_number(points, eta: float) -> CoveringResult:
    """Greedy farthest-point eta-cover (upper bound on N_eta) and a
    greedy set with pairwise distances > 2 eta (lower bound: no closed eta-ball
    holds two of its points)."""
    if not eta > 0:
        raise InputError("eta must be positive")
    P = _as_points(points)
    D = _cdist(P, P)
    centers = _greedy_cover(D, eta)
    packed = []
    for i in range(P.shape[0]):
        if all(D[i, j] > 2 * eta for j in packed):
            packed.append(i)
    return CoveringResult(len(centers), len(packed), tuple(centers))


def covering_dimension_profile(points, weights, etas, tau: float = 0.0):
    """d_eta = log N_eta(P, tau) / (-log eta) for each eta, greedy (heuristic) estimate.

    N_eta(P, tau) is estimated by covering the support greedily and then
    dropping the lightest balls while the dropped mass stays <= tau.
    Returns (rows, d_star_estimate) with rows = [(eta, N, d_eta)].
    """
    P = _as_points(points)
    w = np.asarray(weights, dtype=float)
    if w.size != P.shape[0]:
        raise InputError("one weight per point")
    if not 0 <= tau < 1:
        raise InputError("tau must lie in [0, 1)")
    keep = w > 0
    P, w = P[keep], w[keep] / w[keep].sum()
    D = _cdist(P, P)
    rows = []
    for eta in etas:
        if not 0 < eta < 1:
            raise InputError("each eta must lie in (0, 1)")
        centers = _greedy_cover(D, eta)
        owner = np.argmin(D[:, centers], axis=1)
        mass = np.bincount(owner, weights=w, minlength=len(centers))
        dropped, N = 0.0, len(centers)
        for mm in np.sort(mass):
            if N > 1 and dropped + mm <= tau + 1e-15:
                dropped += mm
                N -= 1
            else:
                break
        rows.append((float(eta), int(N), math.log(N) / -math.log(eta)))
    smallest = sorted(rows)[:2]
    return rows, max(r[2] for r in smallest)


# --- generalization structure -----------------------------------------------------


def fwae_empirical(x_points, g_points, f: FGenerator, lam: float, cfg: SolverConfig = DEFAULT_CONFIG) -> float:
    """f-WAE between two empirical measures on the union of their (distinct) sample points."""
    X, Y = _as_points(x_points), _as_points(g_points)
    pts = np.vstack([X, Y])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = inv.ravel()
    px = np.bincount(inv[: X.shape[0]], minlength=uniq.shape[0]) / X.shape[0]
    pg = np.bincount(inv[X.shape[0]:], minlength=uniq.shape[0]) / Y.shape[0]
    space = FiniteMetricSpace.euclidean(uniq)
    return fwae_objective(px, pg, PushforwardMap.identity(uniq.shape[0]), space, f, lam, cfg)


def verify_theorem4_structure(spec_X: SampledDistributionSpec, spec_G: SampledDistributionSpec,
                              generator, lam: float, ns: Sequence[int], trials: int, delta: float, seed: int,
                              cfg: SolverConfig = DEFAULT_CONFIG) -> dict:
    """Population GAN vs empirical f-WAE on discrete specs sharing one universe.

    For TV, moving P_X costs at most W(P_X, P_X_n) and moving P_G at most
    lam * ||P_G - P_G_n||_1, so each trial must have
    slack = fWAE(P_X_n, P_G_n) - GAN(P_X, P_G) >= -(that sum). At the largest
    n the 90% quantile of the negative part must also sit below the mean
    allowance, which decays like n^(-1/2).
    """
    f = generator if isinstance(generator, FGenerator) else get_generator(generator)
    if not (spec_X.discrete and spec_G.discrete):
        raise InputError("theorem4 structure check needs discrete specs")
    px_pts, px = spec_X.reference()
    pg_pts, pg = spec_G.reference()
    pts = np.vstack([px_pts, pg_pts])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = inv.ravel()
    N = uniq.shape[0]
    PX = np.bincount(inv[: px.size], weights=px, minlength=N)
    PG = np.bincount(inv[px.size:], weights=pg, minlength=N)
    space = FiniteMetricSpace.euclidean(uniq)
    lhs = restricted_fgan(PX, PG, f, lam, space, cfg)
    ident = PushforwardMap.identity(N)
    rows = []
    ok = True
    neg_q90, allow_mean = [], []
    for k, n in enumerate(ns):
        negs, allows = [], []
        for t in range(trials):
            rng = trial_rng(seed, k, t)
            hx = rng.multinomial(n, PX) / n
            hg = rng.multinomial(n, PG) / n
            rhs = fwae_objective(hx, hg, ident, space, f, lam, cfg)
            slack = rhs - lhs
            allowance = wasserstein_value(PX, hx, space.dist) + lam * float(np.abs(PG - hg).sum())
            if f.kind == "tv":
                ok = ok and slack >= -allowance - 1e-9
            rows.append({"n": int(n), "trial": t, "rhs": float(rhs), "slack": float(slack),
                         "allowance": float(allowance)})
            negs.append(max(-slack, 0.0))
            allows.append(allowance)
        neg_q90.append(float(np.quantile(negs, 0.9)))
        allow_mean.append(float(np.mean(allows)))
    # the negative part must sit under the (decaying) mean allowance at the largest n
    decaying = neg_q90[-1] <= allow_mean[-1] + 1e-12
    return {"lhs": float(lhs), "rows": rows, "negative_part_q90": neg_q90, "mean_allowance": allow_mean,
            "per_trial_bound_checked": f.kind == "tv", "passed": bool(ok and decaying),
            "delta": delta, "bound_terms": [bound_term(diameter(space), int(n), delta) for n in ns]}
