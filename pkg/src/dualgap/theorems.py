"""Randomized-instance verification of the GAN / WAE / Wasserstein relations.

Each suite draws instances from an :class:`InstanceSpec` with one generator
per instance, seeded by ``(seed, index)``, so any subset of instances can be
recomputed in isolation and in any order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .duality import (DEFAULT_CONFIG, Encoder, SolverConfig, fwae_objective, gamma_star,
                      lambda_star_estimate, reconstruction_bound_check, restricted_fgan, wae_objective)
from .errors import ContractError, ConvergenceError, InputError
from .fgen import f_divergence, get_generator
from .space import DiscreteDistribution, FiniteMetricSpace, PushforwardMap, as_weights, pushforward
from .transport import SinkhornConfig, sinkhorn, wasserstein_value

INF = math.inf
METRIC_KINDS = ("euclidean", "discrete", "random-metric")
G_KINDS = ("identity", "permutation", "random-surjection", "random-map")


@dataclass(frozen=True)
class InstanceSpec:
    n_x: int = 4
    n_z: int = 4
    metric_kind: str = "random-metric"
    generator: str = "tv"
    lam: float = 1.0
    G_kind: str = "permutation"
    seed: int = 0
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.n_x < 1 or self.n_z < 1:
            raise InputError("support sizes must be at least 1")
        if self.metric_kind not in METRIC_KINDS:
            raise InputError(f"metric_kind must be one of {METRIC_KINDS}")
        if self.G_kind not in G_KINDS:
            raise InputError(f"G_kind must be one of {G_KINDS}")
        if self.G_kind in ("identity", "permutation") and self.n_x != self.n_z:
            raise InputError(f"G_kind={self.G_kind} needs n_x == n_z")
        if self.G_kind == "random-surjection" and self.n_z < self.n_x:
            raise InputError("a surjection needs n_z >= n_x")
        if not self.lam > 0:
            raise InputError("lambda must be positive")
        get_generator(self.generator)


@dataclass(frozen=True, eq=False)
class Instance:
    index: int
    space: FiniteMetricSpace
    P_X: np.ndarray
    P_Z: np.ndarray
    G: PushforwardMap

    @property
    def P_G(self) -> np.ndarray:
        return pushforward(self.G, self.P_Z).weights


def instance_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based split of the master seed: one independent stream per instance."""
    return np.random.default_rng([int(seed), int(index)])


def _simplex(rng, n):
    w = rng.dirichlet(np.ones(n))
    return DiscreteDistribution.normalized(w).weights


def make_space(kind: str, n: int, rng) -> FiniteMetricSpace:
    if kind == "discrete":
        return FiniteMetricSpace.discrete(n)
    if kind == "euclidean":
        while True:
            coords = rng.uniform(0.0, 1.0, size=(n, 2))
            d = np.sqrt(((coords[:, None] - coords[None]) ** 2).sum(-1))
            if n == 1 or d[~np.eye(n, dtype=bool)].min() > 1e-6:
                return FiniteMetricSpace.euclidean(coords)
    return FiniteMetricSpace.random_metric(n, rng)


def make_map(kind: str, n_z: int, n_x: int, rng) -> PushforwardMap:
    if kind == "identity":
        return PushforwardMap.identity(n_x)
    if kind == "permutation":
        return PushforwardMap(rng.permutation(n_x), n_x)
    if kind == "random-surjection":
        m = np.concatenate([rng.permutation(n_x), rng.integers(0, n_x, size=n_z - n_x)])
        return PushforwardMap(rng.permutation(m), n_x)
    return PushforwardMap(rng.integers(0, n_x, size=n_z), n_x)


def make_instance(spec: InstanceSpec, index: int) -> Instance:
    rng = instance_rng(spec.seed, index)
    space = make_space(spec.metric_kind, spec.n_x, rng)
    G = make_map(spec.G_kind, spec.n_z, spec.n_x, rng)
    return Instance(index, space, _simplex(rng, spec.n_x), _simplex(rng, spec.n_z), G)


# --- reports -------------------------------------------------------------------


@dataclass
class TheoremReport:
    suite: str
    spec: dict
    tolerances: dict
    instances: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def violations(self) -> int:
        return sum(1 for r in self.instances if r.get("status") == "fail")

    @property
    def errors(self) -> int:
        return sum(1 for r in self.instances if r.get("status") == "error")

    @property
    def skipped(self) -> int:
        return sum(1 for r in self.instances if r.get("status") == "skip")

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.errors == 0

    def summary(self) -> dict:
        return {"suite": self.suite, "instances": len(self.instances), "violations": self.violations,
                "errors": self.errors, "skipped": self.skipped, "passed": self.passed}

    def to_dict(self) -> dict:
        return {"suite": self.suite, "spec": self.spec, "tolerances": self.tolerances,
                "seeding": "numpy default_rng([seed, instance_index])",
                "instances": self.instances, "notes": self.notes, "summary": self.summary()}


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("DUALGAP_THREADS", "1")))
    except ValueError:
        return 1


def _run(indices, fn: Callable[[int], dict]) -> list:
    """Evaluate instances (possibly in parallel); output ordered by index."""
    def safe(i):
        try:
            return fn(i)
        except (ConvergenceError, ContractError, ValueError) as exc:
            return {"index": i, "status": "error", "reason": f"{type(exc).__name__}: {exc}"}

    n = _workers()
    if n == 1:
        return [safe(i) for i in indices]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(safe, indices))


def _f(x) -> float:
    return float(x)


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


# --- suites -------------------------------------------------------------------


def verify_theorem1(spec: InstanceSpec, count: int, cfg: SolverConfig = DEFAULT_CONFIG,
                    tol: float = 1e-6, tol_eq: float = 1e-5) -> TheoremReport:
    """GAN_{lam f} <= WAE always; equality when G is invertible."""
    f = get_generator(spec.generator)
    invertible = spec.G_kind in ("identity", "permutation")

    def one(i):
        inst = make_instance(spec, i)
        gan = restricted_fgan(inst.P_X, inst.P_G, f, spec.lam, inst.space, cfg)
        wae = wae_objective(inst.P_X, inst.P_Z, inst.G, inst.space, f, spec.lam, cfg).value
        ok = gan <= wae + tol
        if invertible:
            ok = ok and abs(gan - wae) <= tol_eq
        return {"index": i, "gan": _f(gan), "wae": _f(wae), "gap": _f(wae - gan),
                "strict": bool(wae - gan > tol_eq), "surjective": inst.G.surjective, "status": _status(ok)}

    rep = TheoremReport("theorem1", asdict(spec), {"inequality": tol, "equality": tol_eq if invertible else None})
    rep.instances = _run(range(count), one)
    rep.notes["strict_gaps"] = sum(1 for r in rep.instances if r.get("strict"))
    return rep


CONVENTIONS = {"discrete": 1.0, "tv": 2.0}


def verify_theorem2(spec: InstanceSpec, count: int, cfg: SolverConfig = DEFAULT_CONFIG,
                    tol: float = 1e-5) -> TheoremReport:
    """f-WAE with cost gamma*c equals D_f(P_X, P_G) for gamma in {gamma*, 2 gamma*}.

    Both readings of the discrete cost are tried: c = 1[x != y] ("discrete",
    W = half the L1 distance) and c = 2 * 1[x != y] ("tv", W = L1 distance).
    """
    spec = replace(spec, metric_kind="discrete")
    f = get_generator(spec.generator)

    def one(i):
        inst = make_instance(spec, i)
        pg = inst.P_G
        if np.any(pg == 0):
            return {"index": i, "status": "skip", "reason": "P_G has zeros (non-surjective G)"}
        g_star = gamma_star(inst.P_X, pg, f)
        if not np.isfinite(g_star):
            return {"index": i, "status": "skip", "reason": "gamma* is infinite (f'(0) = -inf)"}
        target = f_divergence(inst.P_X, pg, f)
        row = {"index": i, "gamma_star": _f(g_star), "d_f": _f(target), "conventions": {}}
        for name, factor in CONVENTIONS.items():
            vals = []
            for mult in (1.0, 2.0):
                gamma = max(mult * g_star, 1e-12)
                sp = FiniteMetricSpace(gamma * factor * inst.space.dist)
                vals.append(fwae_objective(inst.P_X, inst.P_Z, inst.G, sp, f, 1.0, cfg))
            err = max(abs(v - target) for v in vals)
            row["conventions"][name] = {"values": [_f(v) for v in vals], "max_error": _f(err),
                                        "pass": bool(err <= tol)}
        passing = [k for k, v in row["conventions"].items() if v["pass"]]
        row["passing_conventions"] = passing
        row["status"] = _status(bool(passing))
        return row

    rep = TheoremReport("theorem2", asdict(spec), {"equality": tol})
    rep.instances = _run(range(count), one)
    counts = {k: sum(1 for r in rep.instances if k in r.get("passing_conventions", ())) for k in CONVENTIONS}
    rep.notes["convention_pass_counts"] = counts
    return rep


def verify_theorem3(spec: InstanceSpec, count: int, cfg: SolverConfig = DEFAULT_CONFIG,
                    tol: float = 1e-5, multipliers=(1.0, 2.0, 10.0), n_samples: int = 100) -> TheoremReport:
    """Above lambda*, GAN = f-WAE = WAE = W_c(P_X, P_G)."""
    f = get_generator(spec.generator)
    if f.is_indicator:
        raise InputError("theorem3 is trivial for the indicator generator")

    def one(i):
        inst = make_instance(spec, i)
        rng = instance_rng(spec.seed, i)
        pg = inst.P_G
        est = lambda_star_estimate(pg, f, inst.space, n_samples=n_samples, rng=rng)
        if est.unbounded:
            return {"index": i, "status": "skip", "reason": "lambda* is infinite for this generator"}
        w = wasserstein_value(inst.P_X, pg, inst.space.dist)
        row = {"index": i, "lambda_hat": _f(est.value), "w_c": _f(w), "levels": []}
        ok = True
        if est.value <= 0:
            row["status"] = "skip"
            row["reason"] = "estimated lambda* is zero"
            return row
        for mult in tuple(multipliers) + (0.25,):
            lam = mult * est.value
            gan = restricted_fgan(inst.P_X, pg, f, lam, inst.space, cfg)
            fw = fwae_objective(inst.P_X, inst.P_Z, inst.G, inst.space, f, lam, cfg)
            wae = wae_objective(inst.P_X, inst.P_Z, inst.G, inst.space, f, lam, cfg).value
            vals = (gan, fw, wae, w)
            spread = max(vals) - min(vals)
            asserted = mult != 0.25
            level = {"multiplier": mult, "lambda": _f(lam), "gan": _f(gan), "fwae": _f(fw), "wae": _f(wae),
                     "spread": _f(spread), "asserted": asserted}
            if asserted:
                ok = ok and spread <= tol
            else:
                level["below_threshold_gap"] = _f(w - gan)
            row["levels"].append(level)
        row["status"] = _status(ok)
        return row

    rep = TheoremReport("theorem3", asdict(spec), {"equality": tol})
    rep.instances = _run(range(count), one)
    return rep


def verify_theorem5(spec: InstanceSpec, count: int, eps_list=(1.0, 0.1, 0.01),
                    cfg: SolverConfig = DEFAULT_CONFIG, sinkhorn_cfg: SinkhornConfig = SinkhornConfig(),
                    tol: float = 1e-8) -> TheoremReport:
    """f-WAE <= W_c(P_X, P_G) <= W_{c, eps} for each eps, and W_{c, eps} monotone in eps."""
    f = get_generator(spec.generator)
    eps_sorted = sorted(float(e) for e in eps_list)

    def one(i):
        inst = make_instance(spec, i)
        pg = inst.P_G
        fw = fwae_objective(inst.P_X, inst.P_Z, inst.G, inst.space, f, spec.lam, cfg)
        w = wasserstein_value(inst.P_X, pg, inst.space.dist)
        sk = [sinkhorn(inst.P_X, pg, inst.space.dist, e, sinkhorn_cfg).value for e in eps_sorted]
        left = w - fw
        right = [s - w for s in sk]
        mono = all(sk[k] <= sk[k + 1] + tol for k in range(len(sk) - 1))
        ok = left >= -tol and min(right) >= -tol and mono
        return {"index": i, "fwae": _f(fw), "w_c": _f(w), "sinkhorn": dict(zip(map(repr, eps_sorted), map(_f, sk))),
                "left_slack": _f(left), "right_slack": [_f(x) for x in right], "monotone": mono,
                "status": _status(ok)}

    rep = TheoremReport("theorem5", asdict(spec), {"slack": tol, "eps": eps_sorted})
    rep.instances = _run(range(count), one)
    return rep


def fiber_instance(rng, n_z: int, n_x: int):
    """(G, P, Q) with P/Q constant on every fiber of a random surjection G."""
    G = make_map("random-surjection", n_z, n_x, rng)
    Q = _simplex(rng, n_z)
    rho = rng.uniform(0.2, 3.0, size=n_x)
    P = rho[G.mapping] * Q
    return G, P / P.sum(), Q


def verify_data_processing(spec: InstanceSpec, count: int, n_permutation: Optional[int] = None,
                           n_fiber: int = 20, tol: float = 1e-12, tol_fiber: float = 1e-9) -> TheoremReport:
    """D_f(G#P, G#Q) <= D_f(P, Q); equality for permutations and fiber-constant ratios."""
    f = get_generator(spec.generator)
    n_perm = count if n_permutation is None else n_permutation

    def scale(a, b):
        return max(1.0, abs(a), abs(b))

    def ineq(i):
        rng = instance_rng(spec.seed, i)
        G = make_map("random-map", spec.n_z, spec.n_x, rng)
        P, Q = _simplex(rng, spec.n_z), _simplex(rng, spec.n_z)
        lhs = f_divergence(pushforward(G, P), pushforward(G, Q), f)
        rhs = f_divergence(P, Q, f)
        ok = rhs == INF or lhs <= rhs + tol * scale(lhs, rhs)
        return {"index": i, "kind": "inequality", "lhs": _f(lhs), "rhs": _f(rhs), "status": _status(ok)}

    def perm(i):
        rng = instance_rng(spec.seed, 10**6 + i)
        G = make_map("permutation", spec.n_z, spec.n_z, rng)
        P, Q = _simplex(rng, spec.n_z), _simplex(rng, spec.n_z)
        lhs = f_divergence(pushforward(G, P), pushforward(G, Q), f)
        rhs = f_divergence(P, Q, f)
        ok = lhs == rhs or abs(lhs - rhs) <= tol * scale(lhs, rhs)
        return {"index": i, "kind": "permutation", "lhs": _f(lhs), "rhs": _f(rhs), "status": _status(ok)}

    def fiber(i):
        rng = instance_rng(spec.seed, 2 * 10**6 + i)
        G, P, Q = fiber_instance(rng, max(spec.n_z, spec.n_x + 1), spec.n_x)
        lhs = f_divergence(pushforward(G, P), pushforward(G, Q), f)
        rhs = f_divergence(P, Q, f)
        ok = lhs == rhs or abs(lhs - rhs) <= tol_fiber * scale(lhs, rhs)
        return {"index": i, "kind": "fiber", "lhs": _f(lhs), "rhs": _f(rhs), "status": _status(ok)}

    rep = TheoremReport("data_processing", asdict(spec),
                        {"inequality": tol, "permutation": tol, "fiber": tol_fiber, "relative_to": "max(1,|value|)"})
    rep.instances = _run(range(count), ineq) + _run(range(n_perm), perm) + _run(range(n_fiber), fiber)
    return rep


def verify_fwae_equals_wae(spec: InstanceSpec, count: int, cfg: SolverConfig = DEFAULT_CONFIG,
                           tol: float = 1e-6) -> TheoremReport:
    f = get_generator(spec.generator)

    def one(i):
        inst = make_instance(spec, i)
        fw = fwae_objective(inst.P_X, inst.P_Z, inst.G, inst.space, f, spec.lam, cfg)
        wae = wae_objective(inst.P_X, inst.P_Z, inst.G, inst.space, f, spec.lam, cfg).value
        return {"index": i, "fwae": _f(fw), "wae": _f(wae), "gap": _f(wae - fw),
                "status": _status(abs(fw - wae) <= tol)}

    rep = TheoremReport("fwae_equals_wae", asdict(spec), {"equality": tol})
    rep.instances = _run(range(count), one)
    return rep


def reparametrize(G: PushforwardMap, P_X, P_prime) -> Encoder:
    """An encoder with (G o E) # P_X = P' for invertible G: E(z | x) = P'(G(z))."""
    if not (G.invertible and G.surjective):
        raise ContractError("reparametrization needs an invertible G")
    pp = as_weights(P_prime)
    if pp.size != G.n_target:
        raise InputError("P' must live on G's target universe")
    row = pp[G.mapping]
    return Encoder(np.tile(row, (as_weights(P_X).size, 1)))


def verify_reparametrization(spec: InstanceSpec, count: int, tol: float = 1e-12) -> TheoremReport:
    kind = spec.G_kind if spec.G_kind in ("identity", "permutation") else "permutation"
    spec = replace(spec, G_kind=kind, n_z=spec.n_x)

    def one(i):
        inst = make_instance(spec, i)
        rng = instance_rng(spec.seed, 3 * 10**6 + i)
        Pp = _simplex(rng, spec.n_x)
        E = reparametrize(inst.G, inst.P_X, Pp)
        recon = pushforward(inst.G, DiscreteDistribution.normalized(E.aggregate(inst.P_X))).weights
        err = float(np.max(np.abs(recon - Pp)))
        return {"index": i, "max_error": err, "status": _status(err <= tol)}

    rep = TheoremReport("reparametrization", asdict(spec), {"exact": tol})
    rep.instances = _run(range(count), one)
    return rep


def verify_reconstruction_bound(spec: InstanceSpec, count: int) -> TheoremReport:
    """W_c((G o E) # P_X, P_X) <= E c(x, G(z)) for random encoders."""

    def one(i):
        inst = make_instance(spec, i)
        rng = instance_rng(spec.seed, 4 * 10**6 + i)
        E = Encoder(rng.dirichlet(np.ones(spec.n_z), size=spec.n_x))
        lhs, rhs, holds = reconstruction_bound_check(E, inst.G, inst.P_X, inst.space)
        return {"index": i, "lhs": _f(lhs), "rhs": _f(rhs), "status": _status(holds)}

    rep = TheoremReport("reconstruction_bound", asdict(spec), {"inequality": 1e-9})
    rep.instances = _run(range(count), one)
    return rep


SUITES = ("theorem1", "theorem2", "theorem3", "theorem5", "lemmas")


def run_suite(name: str, spec: InstanceSpec, count: int, cfg: SolverConfig = DEFAULT_CONFIG, eps_list=(1.0, 0.1, 0.01)):
    """Named suite -> list of reports."""
    if name == "theorem1":
        return [verify_theorem1(spec, count, cfg)]
    if name == "theorem2":
        return [verify_theorem2(spec, count, cfg)]
    if name == "theorem3":
        return [verify_theorem3(spec, count, cfg)]
    if name == "theorem5":
        return [verify_theorem5(spec, count, eps_list, cfg)]
    if name == "lemmas":
        return [verify_data_processing(spec, count), verify_fwae_equals_wae(spec, count, cfg),
                verify_reparametrization(spec, count), verify_reconstruction_bound(spec, count)]
    raise InputError(f"unknown suite {name!r}; choose from {SUITES}")
