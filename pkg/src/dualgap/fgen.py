"""Convex generators f (f(1) = 0) and the f-divergences they induce.

A generator lives on [0, inf) and is +inf on negative arguments. Each
built-in carries its derivative, recession constant lim f(t)/t and a
closed-form convex conjugate taken over that domain. ``FGenerator.scaled``
gives lam * f without touching the base formulas, so D_{lam f} = lam * D_f
holds bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InputError
from .space import as_weights

LOG2 = math.log(2.0)
INF = math.inf


def _arr(x):
    return np.asarray(x, dtype=float)


def _on_domain(fn):
    """Wrap a [0, inf) formula so negative inputs give +inf."""

    def wrapped(x):
        x = _arr(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(x < 0, INF, fn(np.clip(x, 0.0, None)))
        return out[()] if out.ndim == 0 else out

    return wrapped


def _xlogx(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


# --- built-in formulas -------------------------------------------------------
# (f, f', f*, recession, conjugate domain (lo, hi, hi_closed))


def _tv_f(x):
    return np.abs(x - 1.0)


def _tv_df(x):
    return np.sign(x - 1.0)


def _tv_conj(y):
    return np.where(y <= 1.0, np.maximum(y, -1.0), INF)


def _kl_f(x):
    return _xlogx(x)


def _kl_df(x):
    with np.errstate(divide="ignore"):
        return np.log(x) + 1.0


def _kl_conj(y):
    return np.exp(y - 1.0)


def _rkl_f(x):
    with np.errstate(divide="ignore"):
        return -np.log(x)


def _rkl_df(x):
    with np.errstate(divide="ignore"):
        return -1.0 / x


def _rkl_conj(y):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(y < 0, -1.0 - np.log(np.abs(y)), INF)


def _chi2_f(x):
    return (x - 1.0) ** 2


def _chi2_df(x):
    return 2.0 * (x - 1.0)


def _chi2_conj(y):
    return np.where(y >= -2.0, y + 0.25 * y * y, -1.0)


def _js_f(x):
    return 0.5 * (_xlogx(x) - (x + 1.0) * np.log((x + 1.0) / 2.0))


def _js_df(x):
    with np.errstate(divide="ignore"):
        return 0.5 * np.log(2.0 * x / (x + 1.0))


def _js_conj(y):
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = 2.0 - np.exp(2.0 * y)
        return np.where(inner > 0, -0.5 * np.log(np.where(inner > 0, inner, 1.0)), INF)


def _gan_f(x):
    return _xlogx(x) - (x + 1.0) * np.log(x + 1.0) + 2.0 * LOG2


def _gan_df(x):
    with np.errstate(divide="ignore"):
        return np.log(x / (x + 1.0))


def _gan_conj(y):
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = 1.0 - np.exp(y)
        return np.where(inner > 0, -np.log(np.where(inner > 0, inner, 1.0)) - 2.0 * LOG2, INF)


def _ind_f(x):
    return np.where(x == 1.0, 0.0, INF)


def _ind_df(x):
    return np.where(x == 1.0, 0.0, np.nan)


def _ind_conj(y):
    return _arr(y) * 1.0


@dataclass(frozen=True)
class FGenerator:
    """A convex generator, optionally scaled by a positive ``weight``.

    ``kind`` names the base formula; solvers dispatch on it. ``terms`` is only
    set for user-defined generators built from :func:`custom_generator`.
    """

    name: str
    kind: str
    _f: Callable = field(repr=False)
    _df: Callable = field(repr=False)
    _conj: Optional[Callable] = field(repr=False)
    recession_base: float
    conj_lo: float
    conj_hi: float
    conj_hi_closed: bool
    piecewise_linear: bool = False
    weight: float = 1.0
    terms: tuple = ()
    # argmax range used by tests of the numeric conjugate: y in [lo, hi]
    test_y: tuple = (-3.0, 0.5)

    def __call__(self, x):
        x = _arr(x)
        return self.weight * _on_domain(self._f)(x)

    def deriv(self, x):
        """f'(x); one-sided (right) at 0, where it may be -inf."""
        x = _arr(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.weight * self._df(np.clip(x, 0.0, None))
        return out[()] if np.ndim(out) == 0 else out

    @property
    def recession(self) -> float:
        return self.weight * self.recession_base

    @property
    def conjugate_domain(self) -> tuple:
        """(lo, hi, hi_closed) of the set where the conjugate is finite."""
        return (self.weight * self.conj_lo, self.weight * self.conj_hi, self.conj_hi_closed)

    def scaled(self, lam: float) -> "FGenerator":
        if not lam > 0:
            raise InputError(f"scaling factor must be positive, got {lam}")
        return replace(self, weight=self.weight * lam)

    @property
    def is_indicator(self) -> bool:
        return self.kind == "indicator"

    def conjugate(self, y):
        """Closed-form f*(y) = weight * f_base*(y / weight); +inf off its domain."""
        y = _arr(y)
        if self._conj is None:
            out = np.vectorize(lambda t: conjugate_numeric(self, t))(y)
        else:
            out = self.weight * self._conj(y / self.weight)
        return out[()] if np.ndim(out) == 0 else out


def _builtin(name, kind, f, df, conj, rec, lo, hi, closed, pl=False, test_y=(-3.0, 0.5)):
    return FGenerator(name, kind, f, df, conj, rec, lo, hi, closed, pl, 1.0, (), test_y)


TV = _builtin("tv", "tv", _tv_f, _tv_df, _tv_conj, 1.0, -INF, 1.0, True, pl=True, test_y=(-3.0, 1.0))
KL = _builtin("kl", "kl", _kl_f, _kl_df, _kl_conj, INF, -INF, INF, False, test_y=(-3.0, 3.0))
REVERSE_KL = _builtin("reverse_kl", "reverse_kl", _rkl_f, _rkl_df, _rkl_conj, 0.0, -INF, 0.0, False, test_y=(-5.0, -0.05))
CHI2 = _builtin("chi2", "chi2", _chi2_f, _chi2_df, _chi2_conj, INF, -INF, INF, False, test_y=(-4.0, 6.0))
JS = _builtin("js", "js", _js_f, _js_df, _js_conj, 0.5 * LOG2, -INF, 0.5 * LOG2, False, test_y=(-3.0, 0.5 * LOG2 - 0.05))
GAN = _builtin("gan", "gan", _gan_f, _gan_df, _gan_conj, 0.0, -INF, 0.0, False, test_y=(-5.0, -0.05))
INDICATOR = _builtin("indicator", "indicator", _ind_f, _ind_df, _ind_conj, INF, -INF, INF, False, pl=True, test_y=(-3.0, 3.0))

BUILTINS = {g.name: g for g in (TV, KL, REVERSE_KL, CHI2, JS, GAN, INDICATOR)}
ALIASES = {"total_variation": "tv", "chi_squared": "chi2", "chisq": "chi2", "rkl": "reverse_kl",
           "jensen_shannon": "js", "jsd": "js", "ind": "indicator"}


def get_generator(name: str) -> FGenerator:
    key = ALIASES.get(name.lower(), name.lower())
    try:
        return BUILTINS[key]
    except KeyError:
        raise InputError(f"unknown generator {name!r}; choose from {sorted(BUILTINS)}") from None


# --- user-defined generators -------------------------------------------------

_TERM_TYPES = ("const", "poly", "xlogx", "log", "abs")


def _term_eval(t, x):
    c = t["coef"]
    kind = t["type"]
    if kind == "const":
        return c * np.ones_like(x)
    if kind == "poly":
        return c * x ** t["power"]
    if kind == "xlogx":
        return c * _xlogx(x)
    if kind == "log":
        with np.errstate(divide="ignore"):
            return c * np.log(x)
    return c * np.abs(x - t.get("center", 1.0))


def _term_deriv(t, x):
    c = t["coef"]
    kind = t["type"]
    if kind == "const":
        return np.zeros_like(x)
    if kind == "poly":
        k = t["power"]
        return c * k * x ** (k - 1) if k != 0 else np.zeros_like(x)
    if kind == "xlogx":
        with np.errstate(divide="ignore"):
            return c * (np.log(x) + 1.0)
    if kind == "log":
        with np.errstate(divide="ignore"):
            return c / x
    return c * np.sign(x - t.get("center", 1.0))


def _term_recession(t):
    c = t["coef"]
    kind = t["type"]
    if c == 0 or kind in ("const", "log"):
        return 0.0
    if kind == "poly":
        k = t["power"]
        if k < 1:
            return 0.0
        if k == 1:
            return c
        return math.copysign(INF, c)
    if kind == "xlogx":
        return math.copysign(INF, c)
    return abs(c)


def custom_generator(spec: dict) -> FGenerator:
    """Build a generator from ``{"name": ..., "terms": [{"type", "coef", ...}]}``.

    Term types: const, poly (``power``), xlogx, log, abs (``center``, default 1).
    The result must satisfy f(1) = 0 and pass a midpoint-convexity grid check.
    """
    try:
        name = str(spec.get("name", "custom"))
        terms = tuple(dict(t) for t in spec["terms"])
    except (KeyError, TypeError, AttributeError):
        raise InputError("custom generator needs a list under 'terms'") from None
    for t in terms:
        if t.get("type") not in _TERM_TYPES:
            raise InputError(f"unknown term type {t.get('type')!r}; expected one of {_TERM_TYPES}")
        t["coef"] = float(t.get("coef", 1.0))
        if t["type"] == "poly":
            t["power"] = float(t.get("power", 1.0))
        if t["type"] == "abs":
            t["center"] = float(t.get("center", 1.0))

    def f(x):
        return sum(_term_eval(t, x) for t in terms)

    def df(x):
        return sum(_term_deriv(t, x) for t in terms)

    recs = [_term_recession(t) for t in terms]
    if any(r == INF for r in recs) and any(r == -INF for r in recs):
        raise InputError("recession constant is ambiguous (inf - inf)")
    rec = float(sum(recs))
    gen = FGenerator(name, "custom", f, df, None, rec, -INF, rec, True,
                     all(t["type"] in ("const", "abs") or (t["type"] == "poly" and t["power"] in (0.0, 1.0)) for t in terms),
                     1.0, terms, (-1.0, min(rec, 1.0) - 0.05 if rec < INF else 1.0))
    f1 = float(gen(1.0))
    if abs(f1) > 1e-12:
        raise InputError(f"custom generator must satisfy f(1) = 0, got {f1}")
    ok, _ = midpoint_convexity(gen)
    if not ok:
        raise InputError("custom generator failed the midpoint convexity check")
    return gen


def generator_from_config(value) -> FGenerator:
    """A name string or a custom-term dict."""
    if isinstance(value, str):
        return get_generator(value)
    if isinstance(value, dict):
        if "terms" in value:
            return custom_generator(value)
        if "name" in value:
            return get_generator(value["name"])
    raise InputError(f"cannot interpret generator spec {value!r}")


# --- checks and numeric conjugate --------------------------------------------

CONVEXITY_GRID = np.linspace(0.05, 10.0, 200)


def midpoint_convexity(f: FGenerator, grid=CONVEXITY_GRID, slack=1e-12):
    """f((a+b)/2) <= (f(a)+f(b))/2 + slack over all grid pairs; returns (ok, worst violation)."""
    if f.is_indicator:
        return True, 0.0
    a = grid[:, None]
    b = grid[None, :]
    with np.errstate(invalid="ignore"):
        lhs = f((a + b) / 2.0)
        rhs = (f(a) + f(b)) / 2.0
        viol = np.where(np.isfinite(rhs), lhs - rhs, -INF)
    worst = float(np.max(viol))
    return worst <= slack * max(1.0, float(np.max(np.abs(rhs[np.isfinite(rhs)])))), worst


def conjugate_numeric(f: FGenerator, y: float, x_max: float = 50.0, resolution: float = 1e-3) -> float:
    """Lower estimate of sup_{0 <= x <= x_max} {x y - f(x)}.

    Grid search (always including 0 and 1) followed by bounded Brent refinement
    inside the bracket around the best grid point. Every returned value is an
    attained objective value, so it never exceeds the true conjugate.
    """
    if x_max <= 0 or resolution <= 0:
        raise InputError("x_max and resolution must be positive")
    y = float(y)
    if f.is_indicator:
        return y * 1.0 - float(f(1.0))
    grid = np.union1d(np.arange(0.0, x_max + resolution / 2, resolution), [0.0, 1.0, x_max])
    vals = grid * y - f(grid)
    vals = np.where(np.isnan(vals), -INF, vals)
    k = int(np.argmax(vals))
    best = float(vals[k])
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid.size - 1)]
    if hi > lo:
        res = minimize_scalar(lambda x: -(x * y - float(f(x))), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12, "maxiter": 500})
        if np.isfinite(res.fun) and -res.fun > best:
            best = float(-res.fun)
    return best


def scale_conjugate(f: FGenerator, lam: float, y):
    """(lam f)*(y) = lam * f*(y / lam)."""
    if not lam > 0:
        raise InputError(f"lambda must be positive, got {lam}")
    return f.scaled(lam).conjugate(y)


def conjugate(f: FGenerator, y):
    return f.conjugate(y)


# --- divergence --------------------------------------------------------------

INDICATOR_TOL = 1e-12


def _base_divergence(p, q, f: FGenerator) -> float:
    if f.is_indicator:
        return 0.0 if np.max(np.abs(p - q)) <= INDICATOR_TOL else INF
    pos = q > 0
    total = 0.0
    if np.any(pos):
        vals = q[pos] * _on_domain(f._f)(p[pos] / q[pos])
        total = float(np.sum(vals))
    stray = p[~pos]
    stray_mass = float(stray.sum())
    if stray_mass > 0:
        total += stray_mass * f.recession_base if f.recession_base != INF else INF
    return total


def f_divergence(P, Q, f: FGenerator) -> float:
    """D_f(P, Q) = sum_{q>0} q f(p/q) + (mass of P where q = 0) * f'(inf)."""
    p, q = as_weights(P), as_weights(Q)
    if p.shape != q.shape:
        raise InputError("P and Q must live on the same universe")
    base = _base_divergence(p, q, f)
    return f.weight * base if base != INF else INF
