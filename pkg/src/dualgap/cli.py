"""Command-line entry point: ``dualgap {ot,objective,verify,genbounds,brenier,report}``.

Exit codes: 0 all checks passed, 1 a check was violated (or a NaN reached the
output), 2 bad input or configuration, 3 a solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ContractError, ConvergenceError, InputError

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VIOLATION, EXIT_INPUT, EXIT_CONVERGENCE = 0, 1, 2, 3


class ArgumentError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


# --- serialization ---------------------------------------------------------------


def jsonable(obj):
    """Plain JSON types; +/-inf become strings, NaN is left for the guard to reject."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(payload) -> str:
    """Deterministic JSON (sorted keys, fixed separators); raises ValueError on NaN."""
    return json.dumps(jsonable(payload), sort_keys=True, indent=2, allow_nan=False) + "\n"


def emit_csv(header, rows) -> str:
    """Headered CSV, LF endings, 17 significant digits; NaN is rejected."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        out = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                if math.isnan(v):
                    raise ValueError("NaN is not allowed in CSV output")
                out.append(format(float(v), ".17g"))
            else:
                out.append(str(v))
        w.writerow(out)
    return buf.getvalue()


def _write(text: str, out: str):
    if out == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(out).write_text(text, encoding="utf-8", newline="\n")


def _write_timing(out: str, seconds: float):
    if out != "-":
        Path(out + ".timing.json").write_text(json.dumps({"wall_clock_seconds": seconds}) + "\n")


# --- input parsing ---------------------------------------------------------------


def _read_json(path: str):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{path}: no such file")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}: malformed JSON ({exc.msg})") from None


def _read_csv_matrix(path: str) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{path}: no such file")
    rows = []
    with p.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise InputError(f"{path}: line {lineno}: non-numeric entry") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise InputError(f"{path}: expected a nonempty rectangular numeric table")
    return np.array(rows)


def load_space(doc: dict, path: str = "<input>"):
    from .space import FiniteMetricSpace

    kind = doc.get("metric", "explicit")
    try:
        if kind == "euclidean":
            return FiniteMetricSpace.euclidean(doc["coords"], labels=doc.get("points", ()))
        if kind == "discrete":
            pts = doc.get("points")
            n = len(pts) if pts is not None else int(doc["n"])
            return FiniteMetricSpace.discrete(n, labels=pts or ())
        if kind == "explicit":
            return FiniteMetricSpace(doc["dist"], labels=doc.get("points", ()))
    except KeyError as exc:
        raise InputError(f"{path}: metric '{kind}' needs field {exc.args[0]!r}") from None
    raise InputError(f"{path}: unknown metric {kind!r}")


def _dist(doc, key, path):
    from .space import DiscreteDistribution

    if key not in doc:
        raise InputError(f"{path}: missing distribution {key!r}")
    return DiscreteDistribution(doc[key])


def _validate_out(out: str):
    if out != "-":
        parent = Path(out).resolve().parent
        if not parent.is_dir():
            raise InputError(f"output directory {parent} does not exist")


def _envelope(command: str, config: dict, results, passed: bool) -> dict:
    return {"schema_version": SCHEMA_VERSION, "tool_version": __version__, "command": command,
            "config": config, "results": results, "summary": {"passed": bool(passed)}}


# --- subcommands -----------------------------------------------------------------


def cmd_ot(args) -> tuple:
    from .transport import SinkhornConfig, kantorovich_dual, sinkhorn, wasserstein_primal

    doc = _read_json(args.input)
    space = load_space(doc, args.input)
    P = _dist(doc, "P", args.input)
    Q = _dist(doc, "Q", args.input)
    if args.method == "primal":
        value, pi = wasserstein_primal(P, Q, space.cost())
        res = {"value": value, "coupling": pi.matrix, "iters": None}
    elif args.method == "dual":
        value, pot = kantorovich_dual(P, Q, space)
        res = {"value": value, "potentials": pot.h, "lipschitz_modulus": pot.lipschitz_modulus, "iters": None}
    else:
        if args.epsilon is None:
            raise InputError("--method sinkhorn needs --epsilon")
        sk = sinkhorn(P, Q, space.cost(), args.epsilon, SinkhornConfig(tol=args.tol, max_iters=args.max_iters))
        res = {"value": sk.value, "coupling": sk.coupling.matrix, "iters": sk.iters,
               "marginal_error": sk.marginal_error}
    return res, True


def cmd_objective(args) -> tuple:
    from .duality import SolverConfig, fwae_objective, restricted_fgan, wae_objective
    from .fgen import generator_from_config
    from .space import PushforwardMap

    doc = _read_json(args.input)
    space = load_space(doc, args.input)
    gen_spec = args.f if args.f is not None else doc.get("generator")
    if gen_spec is None:
        raise InputError("no generator given (use --f or a 'generator' field)")
    f = generator_from_config(gen_spec)
    lam = args.lam if args.lam is not None else doc.get("lambda")
    if lam is None:
        raise InputError("no lambda given (use --lambda or a 'lambda' field)")
    lam = float(lam)
    cfg = SolverConfig(method=args.method, tol=args.tol)
    P_X = _dist(doc, "P_X", args.input)
    if args.kind == "fgan":
        P_G = _dist(doc, "P_G", args.input)
        sol = restricted_fgan(P_X, P_G, f, lam, space, cfg, full=True)
        res = {"value": sol.value, "q": sol.q.weights, "iters": sol.iters, "certified_gap": sol.certified_gap,
               "method": sol.method}
        ok = sol.certified_gap <= max(cfg.tol, 1e-9)
    else:
        if "G" not in doc:
            raise InputError(f"{args.input}: missing field 'G' (list of target indices)")
        G = PushforwardMap(doc["G"], space.n)
        P_Z = _dist(doc, "P_Z", args.input)
        if args.kind == "wae":
            out = wae_objective(P_X, P_Z, G, space, f, lam, cfg)
            res = {"value": out.value, "q": out.solution.q.weights, "encoder": out.encoder.matrix,
                   "iters": out.solution.iters, "certified_gap": out.solution.certified_gap,
                   "method": out.solution.method}
            ok = out.solution.certified_gap <= max(cfg.tol, 1e-9)
        else:
            out = fwae_objective(P_X, P_Z, G, space, f, lam, cfg, full=True)
            res = {"value": out.value, "q": out.q.weights, "reconstruction": out.reconstruction,
                   "divergence": out.divergence, "iters": None, "certified_gap": None}
            ok = True
    return res, ok


def cmd_verify(args) -> tuple:
    from .duality import SolverConfig
    from .theorems import InstanceSpec, run_suite

    defaults = {"theorem1": ("tv", "permutation"), "theorem2": ("chi2", "permutation"),
                "theorem3": ("tv", "random-map"), "theorem5": ("tv", "permutation"),
                "lemmas": ("kl", "random-surjection")}
    gen, gk = defaults[args.suite]
    gen = args.generator or gen
    gk = args.G_kind or gk
    n_x = args.n_x
    n_z = args.n_z if args.n_z is not None else (n_x if gk in ("identity", "permutation") else n_x + 2)
    metric = args.metric or ("discrete" if args.suite == "theorem2" else "random-metric")
    spec = InstanceSpec(n_x=n_x, n_z=n_z, metric_kind=metric, generator=gen, lam=args.lam,
                        G_kind=gk, seed=args.seed)
    eps = tuple(float(e) for e in args.eps.split(",")) if args.eps else (1.0, 0.1, 0.01)
    reports = run_suite(args.suite, spec, args.instances, SolverConfig(), eps)
    if any(r.errors for r in reports) and not any(r.violations for r in reports):
        if all(all("Convergence" in i.get("reason", "") for i in r.instances if i.get("status") == "error")
               for r in reports):
            raise ConvergenceError("solver failures: " + ", ".join(
                f"{r.suite}: {r.errors}" for r in reports if r.errors))
    return {"reports": [r.to_dict() for r in reports]}, all(r.passed for r in reports)


def cmd_genbounds(args) -> tuple:
    from .genbounds import SampledDistributionSpec, bound_term, concentration_check, empirical_ipm_curve

    if args.dist == "two-point":
        spec = SampledDistributionSpec.two_point()
    elif args.dist in ("uniform-square", "uniform-grid"):
        spec = SampledDistributionSpec(args.dist, grid=args.grid)
    else:
        raise InputError(f"unknown --dist {args.dist!r}")
    try:
        ns = [int(x) for x in args.ns.split(",")]
    except ValueError:
        raise InputError(f"--ns must be comma-separated integers, got {args.ns!r}") from None
    curve = empirical_ipm_curve(spec, ns, args.trials, args.seed)
    diam = spec.diameter
    rows = [(n, t, v, bound_term(diam, n, args.delta)) for n, t, v in curve.rows]
    conc = None
    if args.concentration_n:
        conc = concentration_check(spec, args.concentration_n, args.trials, args.delta, args.seed)
    return {"rows": rows, "slope": curve.slope, "intercept": curve.intercept,
            "concentration": None if conc is None else {
                "violation_fraction": conc.violation_fraction, "bound_term": conc.bound_term,
                "allowed": conc.allowed, "pass": conc.passed}}, (conc is None or conc.passed)


def cmd_brenier(args) -> tuple:
    from .brenier import FitConfig, SemiDiscreteProblem, fit_potential, parse_box, pushforward_check

    atoms = _read_csv_matrix(args.atoms)
    weights = _read_csv_matrix(args.weights).ravel()
    problem = SemiDiscreteProblem(atoms, weights, parse_box(args.domain))
    fit = fit_potential(problem, FitConfig(n_samples=args.samples, max_iters=args.max_iters, step=args.step,
                                           tol=args.fit_tol, seed=args.seed))
    tv, ok = pushforward_check(fit.potential, problem, n_samples=args.samples, seed=[args.seed, 1], tol=args.tol)
    return {"h": fit.potential.h, "residual": fit.residual, "converged": fit.converged, "iters": fit.iters,
            "tv_error": tv}, ok


def cmd_report(args) -> tuple:
    rows = []
    ok = True
    for path in args.inputs:
        doc = _read_json(path)
        if not isinstance(doc, dict) or "summary" not in doc:
            raise InputError(f"{path}: not a dualgap report")
        passed = bool(doc["summary"].get("passed"))
        ok = ok and passed
        suites = []
        for r in (doc.get("results") or {}).get("reports", []) if isinstance(doc.get("results"), dict) else []:
            suites.append(r.get("summary"))
        rows.append({"file": path, "command": doc.get("command"), "passed": passed, "suites": suites})
    return {"inputs": rows}, ok


# --- argument grammar ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dualgap", description="Primal-dual certificates for discrete f-GAN / WAE objectives.")
    p.add_argument("--version", action="version", version=f"dualgap {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, csv_out=False):
        sp.add_argument("--out", default="-", help="output path, '-' for stdout")
        sp.add_argument("--quiet", action="store_true", help="suppress the stderr summary line")

    s = sub.add_parser("ot", help="exact / dual / entropic transport")
    s.add_argument("--input", required=True)
    s.add_argument("--method", choices=("primal", "dual", "sinkhorn"), default="primal")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--max-iters", type=int, default=100_000)
    common(s)

    s = sub.add_parser("objective", help="restricted f-GAN, WAE or f-WAE value")
    s.add_argument("--kind", choices=("fgan", "wae", "fwae"), required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--f")
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--method", choices=("auto", "lp", "conic", "mirror"), default="auto")
    s.add_argument("--tol", type=float, default=1e-6)
    common(s)

    s = sub.add_parser("verify", help="randomized theorem suites")
    s.add_argument("--suite", choices=("theorem1", "theorem2", "theorem3", "theorem5", "lemmas"), required=True)
    s.add_argument("--instances", type=int, default=20)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--n-x", dest="n_x", type=int, default=4)
    s.add_argument("--n-z", dest="n_z", type=int)
    s.add_argument("--metric", choices=("euclidean", "discrete", "random-metric"))
    s.add_argument("--generator")
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--G-kind", dest="G_kind", choices=("identity", "permutation", "random-surjection", "random-map"))
    s.add_argument("--eps", help="comma-separated epsilons for theorem5")
    common(s)

    s = sub.add_parser("genbounds", help="empirical IPM rate curves (CSV)")
    s.add_argument("--dist", default="uniform-square")
    s.add_argument("--grid", type=int, default=64)
    s.add_argument("--ns", default="100,300,1000,3000")
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--concentration-n", type=int, default=0)
    s.add_argument("--seed", type=int, required=True)
    common(s, csv_out=True)

    s = sub.add_parser("brenier", help="fit a semi-discrete Brenier potential")
    s.add_argument("--atoms", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--domain", default="box:-1,1,-1,1")
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--tol", type=float, default=1e-2)
    s.add_argument("--fit-tol", type=float, default=1e-4)
    s.add_argument("--step", type=float, default=1.0)
    s.add_argument("--max-iters", type=int, default=500)
    s.add_argument("--seed", type=int, required=True)
    common(s)

    s = sub.add_parser("report", help="summarize saved reports")
    s.add_argument("inputs", nargs="+")
    common(s)
    return p


COMMANDS = {"ot": cmd_ot, "objective": cmd_objective, "verify": cmd_verify, "genbounds": cmd_genbounds,
            "brenier": cmd_brenier, "report": cmd_report}


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "quiet")}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise InputError("missing subcommand; choose from " + ", ".join(COMMANDS))
        _validate_out(args.out)
    except InputError as exc:
        sys.stderr.write(f"dualgap: error: {exc}\n")
        return EXIT_INPUT
    t0 = time.perf_counter()
    try:
        results, passed = COMMANDS[args.command](args)
    except (InputError, ContractError) as exc:
        sys.stderr.write(f"dualgap {args.command}: input error: {exc}\n")
        return EXIT_INPUT
    except ConvergenceError as exc:
        sys.stderr.write(f"dualgap {args.command}: did not converge: {exc}\n")
        return EXIT_CONVERGENCE
    elapsed = time.perf_counter() - t0
    try:
        if args.command == "genbounds" and (args.out.endswith(".csv") or args.out == "-"):
            text = emit_csv(("n", "trial", "ipm", "bound_term"), results["rows"])
            if args.out != "-":
                meta = _envelope(args.command, _config_echo(args),
                                 {k: v for k, v in results.items() if k != "rows"}, passed)
                Path(args.out + ".json").write_text(dumps(meta), encoding="utf-8")
        else:
            text = dumps(_envelope(args.command, _config_echo(args), results, passed))
    except ValueError as exc:
        sys.stderr.write(f"dualgap {args.command}: refusing to emit output: {exc}\n")
        return EXIT_VIOLATION
    _write(text, args.out)
    _write_timing(args.out, elapsed)
    if not args.quiet:
        sys.stderr.write(f"dualgap {args.command}: {'PASS' if passed else 'FAIL'} ({elapsed:.2f}s)\n")
    return EXIT_OK if passed else EXIT_VIOLATION


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
