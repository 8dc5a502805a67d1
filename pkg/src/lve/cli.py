"""Command-line entry point: ``lve <command> [options]``.

Every invocation writes one JSON (or CSV) document to stdout or ``--output``;
progress and errors go to stderr. Exit codes: 0 success, 1 verification
failure or numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__, engine, oracle
from .interp import QuadMode, QuadratureSpec, build_covariance, replica_identity_check
from .kernels import BACKEND
from .loopvertex import resolvent_loop_bound_check
from .model import ModelSpec, SliceSpec, operator_norm, verify_propagator_bound
from .trees import count_trees_with_degrees, degree_histogram, enumerate_trees, prufer_decode

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
UNIFORMITY_FACTOR = 2.0


class UsageError(Exception):
    pass


# --- argument plumbing ---------------------------------------------------------

def _complex(text: str) -> complex:
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 're,im' or 're', got {text!r}")
    if len(parts) == 1:
        return complex(parts[0], 0.0)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 're,im', got {text!r}")
    return complex(*parts)


def _complex_list(text: str):
    return [_complex(t) for t in text.split(";") if t.strip()]


def _int_list(text: str):
    return [int(t) for t in text.split(",") if t.strip()]


def _add_model(p, lam="0.05,0"):
    p.add_argument("--model", choices=["zero-d", "lattice"], default="zero-d")
    p.add_argument("--lambda", dest="lam", type=_complex, default=_complex(lam), help="coupling as re,im")
    p.add_argument("--colors", type=int, default=1)
    p.add_argument("--M", type=float, default=2.0)
    p.add_argument("--j", type=int, default=0)
    p.add_argument("--mass", type=float, default=0.0)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--sites", type=int, default=4)
    p.add_argument("--spacing", type=float, default=1.0)


def _add_quad(p):
    p.add_argument("--quad", choices=["auto", "tensor", "qmc", "mc"], default="auto")
    p.add_argument("--samples", type=int, default=None, help="points per replicate (qmc) or draws (mc)")
    p.add_argument("--seed", type=int, default=20240611)


def _add_common(p):
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--output", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--config", default=None, help="flat key=value file; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lve", description="Loop vertex expansion laboratory.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pressure", help="log Z from the tree expansion, with oracle comparison")
    _add_model(p)
    _add_quad(p)
    _add_common(p)
    p.add_argument("--nmax", type=int, default=None)
    p.add_argument("--root", type=int, default=1)
    p.add_argument("--no-oracle", action="store_true")

    p = sub.add_parser("taylor", help="Taylor coefficients of log Z by extrapolated differences")
    _add_model(p, "0,0")
    _add_quad(p)
    _add_common(p)
    p.add_argument("--order", type=int, default=2)

    p = sub.add_parser("borel", help="Taylor remainders and the fitted A rho^r r! |lam|^r bound")
    _add_model(p, "0,0")
    _add_quad(p)
    _add_common(p)
    p.add_argument("--probes", type=_complex_list, default=_complex_list("0.01,0;0.02,0"),
                   help="couplings separated by ';', each re,im")
    p.add_argument("--rmax", type=int, default=4)
    p.add_argument("--js", type=_int_list, default=None, help="slice indices for the uniformity sweep")
    p.add_argument("--coeffs", choices=["engine", "wick"], default="engine")

    p = sub.add_parser("two-point", help="<phi_x phi_y> on a lattice slice and its decay fit")
    _add_model(p, "0.02,0")
    _add_quad(p)
    _add_common(p)
    p.add_argument("--x", type=int, default=0)
    p.add_argument("--y", type=int, default=1)
    p.add_argument("--nmax", type=int, default=None)
    p.add_argument("--oracle-samples", type=int, default=0, help="reweighted MC samples (0: skip)")

    p = sub.add_parser("oracle", help="brute-force reference values")
    _add_model(p)
    _add_quad(p)
    _add_common(p)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--wick-order", type=int, default=6)

    ver = sub.add_parser("verify", help="property checks").add_subparsers(dest="check", required=True)
    p = ver.add_parser("propagator-bound")
    _add_model(p)
    _add_common(p)
    p.add_argument("--c-trial", type=float, default=0.25)
    p.add_argument("--js", type=_int_list, default=_int_list("0,1,2,3,4"))
    p = ver.add_parser("loop-bound")
    _add_model(p)
    _add_quad(p)
    _add_common(p)
    p.add_argument("--k", type=_int_list, default=_int_list("1,2,3,4"))
    p.add_argument("--js", type=_int_list, default=_int_list("0,1,2,3"))
    p.add_argument("--draws", type=int, default=200)
    p.add_argument("--scale", type=float, default=10.0)
    p = ver.add_parser("trees")
    _add_common(p)
    p.add_argument("--n", type=int, default=6)
    p = ver.add_parser("covariance")
    _add_common(p)
    p.add_argument("--draws", type=int, default=10000)
    p.add_argument("--max-n", type=int, default=8)
    p.add_argument("--seed", type=int, default=20240611)
    p = ver.add_parser("replica")
    _add_model(p)
    _add_common(p)
    p.add_argument("--n", type=_int_list, default=_int_list("2,3,4"))
    p.add_argument("--nodes", type=int, default=20)
    return parser


def _read_config(path: str):
    tokens = []
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        if value.lower() == "true":
            tokens.append(f"--{key}")
        elif value.lower() != "false":
            tokens += [f"--{key}", value]
    return tokens


def _expand_config(argv):
    """Insert config-file tokens right after the command words so later flags win."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
    if path is None:
        return argv
    head = 2 if argv and argv[0] == "verify" else 1
    return argv[:head] + _read_config(path) + argv[head:]


# --- output ----------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _jsonable(float(obj.real)), "im": _jsonable(float(obj.imag))}
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def _to_csv(doc) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    table = doc.get("table")
    if table:
        cols = list(table[0].keys())
        writer.writerow(cols)
        for row in table:
            writer.writerow([_csv_cell(row[c]) for c in cols])
    else:
        writer.writerow(["key", "value"])
        for k in sorted(doc):
            if not isinstance(doc[k], (dict, list)):
                writer.writerow([k, _csv_cell(doc[k])])
    return buf.getvalue()


def _csv_cell(v):
    v = _jsonable(v)
    if isinstance(v, dict) and set(v) == {"re", "im"}:
        return f"{v['re']!r}{'+' if not str(v['im']).startswith('-') else ''}{v['im']!r}j"
    return v


def _emit(doc, args):
    doc = _jsonable(doc)
    text = _to_csv(doc) if args.format == "csv" else json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --- helpers ----------------------------------------------------------------------

def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("LVE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"LVE_THREADS must be an integer, got {env!r}")
    return 1


def _model(args, lam=None) -> ModelSpec:
    lam = args.lam if lam is None else lam
    if args.model == "zero-d":
        return ModelSpec("zero-d", lam, args.colors)
    sl = SliceSpec(args.M, args.j, args.mass, args.dim, args.sites, args.spacing)
    return ModelSpec("lattice", lam, args.colors, sl)


def _quad(args, model):
    mode = getattr(args, "quad", "auto")
    if mode == "auto":
        if args.samples is None and args.seed == 20240611:
            return None
        base = engine.LATTICE_POLICY if model.is_lattice else engine.QuadPolicy()
        sampled = base.sampled
        return engine.QuadPolicy(
            tensor=base.tensor,
            sampled=QuadratureSpec(sampled.mode, samples=args.samples or sampled.samples,
                                   replicates=sampled.replicates, seed=args.seed),
            tensor_max_n=base.tensor_max_n)
    kw = {"seed": args.seed}
    if args.samples:
        kw["samples"] = args.samples
    return QuadratureSpec(QuadMode(mode), **kw)


def _inputs(args):
    skip = {"threads", "output", "format", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _doc(args, **fields):
    return {"command": args.command if args.command != "verify" else f"verify {args.check}",
            "inputs": _inputs(args), "version": __version__, "backend": BACKEND, **fields}


def _spread(values):
    values = [abs(v) for v in values]
    lo = min(values)
    return max(values) / lo if lo > 0 else math.inf


# --- commands -------------------------------------------------------------------------

def cmd_pressure(args):
    model = _model(args)
    acc = engine.pressure_series(model, args.nmax, _quad(args, model), root=args.root,
                                 threads=_threads(args))
    doc = _doc(args, logZ=acc.total, logZ_error=acc.integration_error,
               per_n_terms=[{"n": i + 1, "value": t, "error": e} for i, (t, e) in enumerate(zip(acc.terms, acc.errors))],
               ratios=acc.ratios, q=acc.q, tail_estimate=acc.tail_estimate, flagged=acc.flagged,
               trees_evaluated=acc.trees_evaluated)
    doc["table"] = [{"n": i + 1, "term": t, "error": e} for i, (t, e) in enumerate(zip(acc.terms, acc.errors))]
    if model.is_lattice:
        vol = model.cell_volume * model.site_covariance().shape[0]
        doc["pressure"] = acc.total / vol
        doc["pressure_error"] = acc.integration_error / vol
    if not args.no_oracle:
        if model.is_lattice:
            o = oracle.lattice_logZ(model) if model.colors == 1 else None
        else:
            o = oracle.quadrature_logZ_0d(model.lam, colors=model.colors)
        if o is not None:
            doc.update(oracle_logZ=o.value, oracle_error=o.error, oracle_method=o.method,
                       abs_diff=abs(acc.total - o.value))
    return doc, EXIT_OK


def cmd_taylor(args):
    model = _model(args)
    res = engine.taylor_coefficients(model, args.order, _quad(args, model))
    doc = _doc(args, coeffs=list(res.coeffs), errors=list(res.errors), levels=res.levels)
    doc["table"] = [{"k": k, "a_k": a, "error": e} for k, (a, e) in enumerate(zip(res.coeffs, res.errors))]
    if not model.is_lattice:
        _, a = oracle.wick_coefficients(args.order, model.colors)
        doc["wick"] = [float(x) for x in a]
    return doc, EXIT_OK


def _borel_one(model, args):
    coeffs = None
    if args.coeffs == "wick":
        if model.is_lattice:
            raise UsageError("wick coefficients exist for the zero-dimensional model only")
        coeffs = [float(x) for x in oracle.wick_coefficients(args.rmax - 1, model.colors)[1]]
    d = engine.borel_remainder_check(model, args.probes, args.rmax, coeffs=coeffs, quad=_quad(args, model))
    return {"A": d.A, "rho": d.rho, "fit_residual": d.residual, "coeffs": list(d.coeffs),
            "bound_holds": d.bound_holds,
            "remainders": [{"lambda": lam, "R": list(rs)} for lam, rs in d.remainders.items()]}


def cmd_borel(args):
    model = _model(args)
    if model.is_lattice and args.js:
        per_j = []
        for j in args.js:
            mj = ModelSpec("lattice", model.lam, model.colors, model.slice.with_j(j))
            per_j.append({"j": j, **_borel_one(mj, args)})
        spread = _spread([r["rho"] for r in per_j])
        doc = _doc(args, slices=per_j, rho_spread=spread)
        doc["table"] = [{"j": r["j"], "A": r["A"], "rho": r["rho"], "fit_residual": r["fit_residual"]} for r in per_j]
        return doc, EXIT_OK
    return _doc(args, **_borel_one(model, args)), EXIT_OK


def cmd_two_point(args):
    if args.model != "lattice":
        raise UsageError("two-point needs --model lattice")
    model = _model(args)
    S = model.site_covariance().shape[0]
    if not (0 <= args.x < S and 0 <= args.y < S):
        raise UsageError(f"sites must lie in 0..{S - 1}")
    res = engine.two_point_function(model, args.x, args.y, args.nmax, _quad(args, model), threads=_threads(args))
    doc = _doc(args, value=res.value, error=res.error,
               tail=float(res.tail[list(res.separations).index(_pair_distance(res, args))]))
    rows = [{"separation": float(t), "S": v, "error": float(e), "tail": float(tl)}
            for t, v, e, tl in zip(res.separations, res.profile, res.profile_errors, res.tail)]
    try:
        fit = engine.decay_rate_fit(res)
        doc["decay_fit"] = {"c_hat": fit.c_hat, "K_hat": fit.K_hat, "residual": fit.residual,
                            "separations": list(fit.separations)}
    except engine.InsufficientRangeError as exc:
        doc["decay_fit"] = {"error": str(exc)}
    if args.oracle_samples:
        o = oracle.two_point_mc(model, samples=args.oracle_samples, seed=args.seed)
        for row, ov, oe in zip(rows, o.profile, o.profile_errors):
            row["oracle"] = ov
            row["oracle_error"] = float(oe)
        doc["oracle_ess"] = o.ess
    doc["table"] = rows
    return doc, EXIT_OK


def _pair_distance(res, args):
    d, _ = engine.separation_classes(res.model)
    return d[args.x, args.y]


def cmd_oracle(args):
    model = _model(args)
    if model.is_lattice:
        o = oracle.lattice_logZ(model, quad=None if args.quad in ("auto", "qmc") else args.quad,
                                samples=args.samples or 2**20, seed=args.seed)
        return _doc(args, logZ=o.value, error=o.error, method=o.method), EXIT_OK
    o = oracle.quadrature_logZ_0d(model.lam, args.tol, model.colors)
    z, a = oracle.wick_coefficients(args.wick_order, model.colors)
    return _doc(args, logZ=o.value, error=o.error, method=o.method,
                wick_z=[float(x) for x in z], wick_logZ=[float(x) for x in a]), EXIT_OK


def cmd_propagator_bound(args):
    base = SliceSpec(args.M, 0, args.mass, args.dim, args.sites, args.spacing)
    rows = []
    for j in args.js:
        sl = base.with_j(j)
        rep = verify_propagator_bound(sl, args.c_trial)
        norm = operator_norm(sl) * float(sl.M) ** (2 * j)
        rows.append({"j": j, "sup": rep.sup, "argmax": rep.argmax, "failed": rep.failed,
                     "failure_distance": rep.failure_distance, "scaled_norm": norm})
    sup_spread = _spread([r["sup"] for r in rows])
    norm_spread = _spread([r["scaled_norm"] for r in rows])
    passed = (not any(r["failed"] for r in rows) and sup_spread < UNIFORMITY_FACTOR
              and norm_spread < UNIFORMITY_FACTOR)
    doc = _doc(args, sup_spread=sup_spread, norm_spread=norm_spread, passed=passed, table=rows)
    return doc, EXIT_OK if passed else EXIT_FAIL


def cmd_loop_bound(args):
    base = SliceSpec(args.M, 0, args.mass, args.dim, args.sites, args.spacing)
    rng = np.random.Generator(np.random.Philox(key=args.seed))
    sigma = rng.standard_normal((args.draws, base.n_sites))
    rows = []
    passed = True
    for k in args.k:
        worst = []
        for j in args.js:
            a = resolvent_loop_bound_check(base.with_j(j), k, sigma)
            b = resolvent_loop_bound_check(base.with_j(j), k, args.scale * sigma)
            # the bound is uniform in sigma: the constant it needs must not grow with the field
            growth = b.worst / a.worst if a.worst > 0 else math.inf
            rows.append({"k": k, "j": j, "worst": a.worst, "worst_scaled": b.worst, "bound": a.bound,
                         "scale_growth": growth, "within_bound": a.within_bound and b.within_bound})
            worst.append(a.worst)
            passed &= growth < UNIFORMITY_FACTOR and a.within_bound and b.within_bound
        passed &= _spread(worst) < UNIFORMITY_FACTOR
    return _doc(args, passed=bool(passed), table=rows), EXIT_OK if passed else EXIT_FAIL


def cmd_trees(args):
    if not 1 <= args.n <= 9:
        raise UsageError("--n must be in 1..9")
    count = sum(1 for _ in enumerate_trees(args.n))
    expected = args.n ** (args.n - 2) if args.n > 1 else 1
    hist = degree_histogram(args.n)
    hist_ok = all(count_trees_with_degrees(args.n, d) == c for d, c in hist.items())
    passed = count == expected and hist_ok
    rows = [{"degrees": " ".join(map(str, d)), "count": c} for d, c in sorted(hist.items())]
    return _doc(args, count=count, expected=expected, histogram_matches=hist_ok, passed=passed,
                table=rows), EXIT_OK if passed else EXIT_FAIL


def cmd_covariance(args):
    rng = np.random.Generator(np.random.Philox(key=args.seed))
    worst = math.inf
    failures = 0
    for _ in range(args.draws):
        n = int(rng.integers(2, args.max_n + 1))
        code = rng.integers(1, n + 1, size=n - 2)
        tree = prufer_decode(code, n)
        w = rng.random(n - 1)
        # exact 0 and 1 endpoints are quadrature nodes too
        w[rng.random(n - 1) < 0.1] = 0.0
        w[rng.random(n - 1) < 0.1] = 1.0
        try:
            cov = build_covariance(tree, w)
            worst = min(worst, cov.min_pivot)
        except ArithmeticError:
            failures += 1
    passed = failures == 0
    return _doc(args, draws=args.draws, failures=failures, min_pivot=worst, passed=passed), \
        EXIT_OK if passed else EXIT_FAIL


def cmd_replica(args):
    model = _model(args)
    g = ModelSpec("zero-d", model.lam).g
    families = {
        "product": lambda s: np.prod(s, axis=1),
        "phase": lambda s: np.exp(1j * s.sum(axis=1)),
        "loop-vertex": lambda s: np.prod(-0.5 * np.log(1.0 + 1j * g * s), axis=1),
    }
    quad = QuadratureSpec(QuadMode.TENSOR, nodes=args.nodes)
    rows = []
    passed = True
    for name, f in families.items():
        for n in args.n:
            rep = replica_identity_check(f, n, quad)
            rows.append({"family": name, "n": n, "single": rep.single.value, "replica": rep.replica.value,
                         "deviation": rep.deviation, "combined_error": rep.combined_error,
                         "passed": rep.passed})
            passed &= rep.passed
    return _doc(args, passed=bool(passed), table=rows), EXIT_OK if passed else EXIT_FAIL


COMMANDS = {
    "pressure": cmd_pressure,
    "taylor": cmd_taylor,
    "borel": cmd_borel,
    "two-point": cmd_two_point,
    "oracle": cmd_oracle,
    ("verify", "propagator-bound"): cmd_propagator_bound,
    ("verify", "loop-bound"): cmd_loop_bound,
    ("verify", "trees"): cmd_trees,
    ("verify", "covariance"): cmd_covariance,
    ("verify", "replica"): cmd_replica,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _expand_config(argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lve: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    key = ("verify", args.check) if args.command == "verify" else args.command
    try:
        doc, code = COMMANDS[key](args)
    except (UsageError, ValueError) as exc:
        print(f"lve: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, RuntimeError) as exc:
        print(f"lve: numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _emit(doc, args)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
