"""Command-line front end.

Every subcommand prints one JSON document:

    {"schema": "pburg/1", "subcommand": ..., "inputs": {...}, "result": {...},
     "report": {"n", "max_residual", "mean_residual", "tolerance", "verdict"} | null,
     "seed": ..., "timestamp": ...}

Exit codes: 0 pass/decided, 2 fail verdict, 3 undecided, 1 usage or input error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import sys
from fractions import Fraction
from typing import Optional

import numpy as np

from . import expr as ex
from .classes import Family, classify, conserved_current_check, decompose_quadratic
from .errors import PburgError
from .groupoid import decide_equivalence, verify_admissible
from .maps import linearize_p3, potentialize_C, potentialize_L
from .report import JetSampler, VerificationReport
from .transforms import Group, build, params_from_dict, pushforward_f

SCHEMA = "pburg/1"
EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_UNDECIDED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# JSON output with 17 significant digits


def _encode(obj, indent=0):
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(_encode(v, indent + 1) for v in obj) + "]"
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, Fraction, np.floating)):
        value = float(obj)
        if math.isnan(value):
            return '"nan"'
        if math.isinf(value):
            return '"inf"' if value > 0 else '"-inf"'
        return format(value, ".17g")
    return json.dumps(str(obj))


def dumps(doc) -> str:
    return _encode(doc) + "\n"


# ---------------------------------------------------------------------------


def _box(args) -> ex.SampleBox:
    return ex.SampleBox.of(t=tuple(args.t_range), x=tuple(args.x_range), w=tuple(args.w_range), n=50,
                           seed=args.seed)


def _sampler(args) -> JetSampler:
    return JetSampler(_box(args), args.n, args.seed)


def _json_arg(text, what):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise UsageError(f"{what} is not valid JSON: {err.msg} (at byte {err.pos})") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{what} must be a JSON object")
    return doc


def _report(report: Optional[VerificationReport]):
    return None if report is None else report.to_dict()


def _combined(reports: dict) -> VerificationReport:
    """One summary for several checks: the part closest to (or furthest past) its tolerance."""
    items = list(reports.values())
    worst = max(items, key=lambda r: r.max_residual / r.tolerance if r.tolerance > 0 else math.inf)
    n = sum(r.n for r in items)
    mean = sum(r.mean_residual * r.n for r in items) / n if n else math.inf
    return VerificationReport(n, worst.max_residual, mean, worst.tolerance, worst.worst, worst.label)


def cmd_classify(args):
    family = Family.of(args.family)
    sub = classify(family, args.f, _box(args))
    result = {"subclass": sub.value}
    if sub.value in ("P2", "P3", "C2") or (family is Family.L and _quadratic(args.f, args)):
        dec = decompose_quadratic(args.f, _box(args))
        result["decomposition"] = {"f2": ex.to_string(dec.f2), "f1": ex.to_string(dec.f1), "f0": ex.to_string(dec.f0)}
    return result, None, EXIT_OK


def _quadratic(f, args):
    try:
        return ex.probably_zero(ex.derivative(ex.parse(f), "x", "x", "x"), _box(args))
    except PburgError:
        return False


def _build_from(doc, f, t0):
    params, extras = params_from_dict(doc)
    f = f if f is not None else extras["f"]
    t0 = extras["t0"] if "t0" in doc else t0
    return build(params, f, t0), params


def cmd_build(args):
    doc = _json_arg(args.params, "--params")
    doc.setdefault("group", args.group)
    if Group.of(doc["group"]) is not Group.of(args.group):
        raise UsageError("--group disagrees with the group field of --params")
    T, params = _build_from(doc, args.f, args.t0)
    result = {"transform": T.to_dict(), "family": T.family.value,
              "f_scale": float(T.f_scale) if T.f_scale is not None else None}
    report = None
    if args.f is not None:
        fe = ex.parse(args.f)
        target = T.target_expr(fe)
        result["f_target"] = ex.to_string(target) if target is not None else None
        report = verify_admissible(T, fe, None, T.family, _sampler(args))
    code = EXIT_OK if report is None or report.passed else EXIT_FAIL
    return result, report, code


def cmd_apply(args):
    doc = _json_arg(args.transform, "--transform")
    T, _ = _build_from(doc, args.f, args.t0)
    fe = ex.parse(args.f)
    box = _box(args)
    ft = pushforward_f(T, fe, box)
    target = T.target_expr(fe)
    samples = []
    for t, x, w in box.points(n=5, seed=args.seed, margin=1e-3):
        if not T.in_domain(t, x, w):
            continue
        s, y = (float(v) for v in T.point(t, x))
        samples.append({"t": s, "x": y, "f": float(ft(s, y))})
    result = {"f_target": ex.to_string(target) if target is not None else None,
              "f_scale": float(T.f_scale) if T.f_scale is not None else None, "samples": samples}
    return result, None, EXIT_OK


def cmd_verify(args):
    doc = _json_arg(args.transform, "--transform")
    T, _ = _build_from(doc, args.f, args.t0)
    family = Family.of(args.family) if args.family else T.family
    target = ex.parse(args.f_target) if args.f_target is not None else None
    report = verify_admissible(T, ex.parse(args.f), target, family, _sampler(args))
    return {"verdict": report.verdict}, report, EXIT_OK if report.passed else EXIT_FAIL


def cmd_equivalent(args):
    verdict = decide_equivalence(args.f1, args.f2, args.family, budget=args.budget, box=_box(args), seed=args.seed)
    result = verdict.to_dict()
    report = verdict.witness.report if verdict.witness is not None else None
    code = {"equivalent": EXIT_OK, "inequivalent": EXIT_OK}.get(verdict.verdict, EXIT_UNDECIDED)
    return result, report, code


def cmd_potentialize(args):
    family = Family.of(args.family)
    box = _box(args)
    if family is Family.C:
        link = potentialize_C(args.f, box, args.n, args.seed)
        link.reports["current"] = conserved_current_check(Family.C, args.f, box, args.n, args.seed)
        result = {"target_family": "P", "identification": "u = v_x", "f_target": args.f}
    elif family is Family.L:
        link = potentialize_L(args.f, box, args.t0, args.n, args.seed)
        lam = link.lam
        result = {"target_family": "P", "identification": "v_x = lambda u",
                  "lambda": ex.to_string(lam.expr) if lam.expr is not None else None,
                  "f_target": "2*lambda(t)*f(t,x) at the preimage"}
    else:
        raise UsageError("potentialize needs --family C or L")
    result["checks"] = {k: r.to_dict() for k, r in link.reports.items()}
    report = _combined(link.reports)
    return result, report, EXIT_OK if link.passed else EXIT_FAIL


def cmd_linearize(args):
    value = ex.as_constant(ex.parse(args.f), ("t", "x"), _box(args))
    if value is None:
        raise UsageError("linearize needs a constant f")
    _, reports = linearize_p3(float(value), _box(args), args.n, args.seed)
    result = {"map": "v~ = exp(v/f)", "target": f"v~_t + {float(value):.17g}*v~_xx = 0",
              "checks": {k: r.to_dict() for k, r in reports.items()}}
    report = _combined(reports)
    return result, report, EXIT_OK if all(r.passed for r in reports.values()) else EXIT_FAIL


COMMANDS = {
    "classify": cmd_classify,
    "build": cmd_build,
    "apply": cmd_apply,
    "verify": cmd_verify,
    "equivalent": cmd_equivalent,
    "potentialize": cmd_potentialize,
    "linearize": cmd_linearize,
}


def make_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--t-range", nargs=2, type=float, default=[0.1, 1.0], metavar=("LO", "HI"))
    common.add_argument("--x-range", nargs=2, type=float, default=[0.5, 1.5], metavar=("LO", "HI"))
    common.add_argument("--w-range", nargs=2, type=float, default=[-1.0, 1.0], metavar=("LO", "HI"))
    common.add_argument("--n", type=int, default=200, help="number of sampled jets")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--t0", type=float, default=0.0, help="base point of antiderivatives")
    common.add_argument("--output", help="write the JSON report to this file instead of stdout")

    parser = _Parser(prog="pburg", description="Equivalence transformations of generalized Burgers equations.")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("classify", parents=[common], help="subclass of an arbitrary element")
    p.add_argument("--family", required=True, choices=["P", "C", "L"])
    p.add_argument("--f", required=True)

    p = sub.add_parser("build", parents=[common], help="construct a group transformation")
    p.add_argument("--group", required=True, choices=[g.value for g in Group])
    p.add_argument("--params", required=True, help="JSON parameter document")
    p.add_argument("--f")

    p = sub.add_parser("apply", parents=[common], help="push an arbitrary element forward")
    p.add_argument("--transform", required=True)
    p.add_argument("--f", required=True)

    p = sub.add_parser("verify", parents=[common], help="check admissibility on sampled jets")
    p.add_argument("--transform", required=True)
    p.add_argument("--f", required=True)
    p.add_argument("--f-target")
    p.add_argument("--family", choices=["P", "C", "L"])

    p = sub.add_parser("equivalent", parents=[common], help="decide point equivalence of two equations")
    p.add_argument("--family", required=True, choices=["P", "C", "L"])
    p.add_argument("--f1", required=True)
    p.add_argument("--f2", required=True)
    p.add_argument("--budget", type=int, default=40)

    p = sub.add_parser("potentialize", parents=[common], help="map C or L to P and verify")
    p.add_argument("--family", required=True, choices=["C", "L"])
    p.add_argument("--f", required=True)

    p = sub.add_parser("linearize", parents=[common], help="map constant-f P to the heat equation")
    p.add_argument("--f", required=True)
    return parser


def _inputs(args) -> dict:
    skip = {"subcommand", "output"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip or v is None:
            continue
        if k in ("params", "transform") and isinstance(v, str):
            try:
                v = json.loads(v)
            except json.JSONDecodeError:
                pass
        out[k] = v
    return out


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    stderr = stderr if stderr is not None else sys.stderr
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        stderr.write(f"pburg: usage error: {err}\n")
        return EXIT_ERROR
    doc = {"schema": SCHEMA, "subcommand": args.subcommand, "inputs": _inputs(args)}
    try:
        result, report, code = COMMANDS[args.subcommand](args)
        doc.update(result=result, report=_report(report))
    except (UsageError, PburgError, ValueError) as err:
        stderr.write(f"pburg: error: {err}\n")
        doc.update(result=None, report=None, error={"type": type(err).__name__, "message": str(err)})
        code = EXIT_ERROR
    doc["seed"] = args.seed
    doc["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    text = dumps(doc)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
