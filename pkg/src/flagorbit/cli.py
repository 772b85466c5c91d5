"""Command line front end.

    flagorbit list      --family A --rank 3
    flagorbit decompose --family B --rank 5 --partition 2,3
    flagorbit schema    --family D --rank 5 --partition 1,1,3 --alpha-l
    flagorbit check     --family B --rank 5 --partition 2,3 --params p.json
    flagorbit classify  --family B --rank 5 --seed 7

Exit codes for ``check``: 0 GO (certified), 1 NOT_GO, 2 UNDECIDED, an
uncertified GO, or a disagreement between the numeric and closed-form
routes.  Usage and input errors exit with 3.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from fractions import Fraction

import numpy as np

from . import __version__
from .flag_manifold import ThetaSpec, build_decomposition, enumerate_thetas, special_c4
from .go_checker import (
    GO,
    NOT_GO,
    FamilyError,
    classification_kind,
    family_free_values,
    go_family,
    is_go_numeric,
    obstruction_scan,
)
from .invariant_metric import (
    MetricParams,
    NonRationalError,
    PositivityError,
    SchemaError,
    build_metric,
    check_invariance,
    format_value,
    normal_params,
    param_schema,
    random_invariant_metric,
)
from .lie_algebra import LieTypeSpec, RangeError

EXIT_GO, EXIT_NOT_GO, EXIT_UNDECIDED, EXIT_ERROR = 0, 1, 2, 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would read as UNDECIDED
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"flagorbit: error: {message}\n")


# --------------------------------------------------------------------------
# config

def _config(args) -> dict:
    cfg = {"command": args.command, "family": args.family, "rank": args.rank}
    for key in ("partition", "alpha_l", "alpha_l_1", "mode", "tol", "samples", "seed", "params"):
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    cfg["version"] = __version__
    return cfg


def _lie_type(args) -> LieTypeSpec:
    return LieTypeSpec(args.family, args.rank)


def _theta(args) -> ThetaSpec:
    if not args.partition:
        raise UsageError("--partition is required for this command")
    try:
        part = tuple(int(x) for x in args.partition.split(","))
    except ValueError:
        raise UsageError(f"bad --partition {args.partition!r}; expected e.g. 2,1,2") from None
    a1 = None
    if args.family == "D":
        a1 = args.alpha_l_1
    elif args.alpha_l_1:
        raise UsageError("--alpha-l-1 only applies to type D")
    return ThetaSpec(_lie_type(args), part, bool(args.alpha_l), a1)


def _params_for(args, theta):
    if args.params:
        with open(args.params) as fh:
            data = json.load(fh)
        return MetricParams.from_json(data)
    return normal_params(theta)


def _build(dec, params, mode):
    """Exact when possible; an irrational operator in auto mode falls back to float."""
    if mode == "float" or params.is_float:
        return build_metric(dec, params, mode="float")
    try:
        return build_metric(dec, params, mode="exact")
    except NonRationalError:
        if mode == "exact":
            raise
        return build_metric(dec, params, mode="float")


# --------------------------------------------------------------------------
# output

def _emit(args, payload: dict, rows=None, columns=None):
    fmt = args.format
    if fmt == "json":
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        if rows is None:
            rows, columns = [_flatten(payload)], None
        columns = columns or sorted({k for r in rows for k in r})
        buf = io.StringIO()
        buf.write(f"# {json.dumps(payload['config'], sort_keys=True)}\n")
        w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k)) for k in columns})
        text = buf.getvalue()
    else:
        text = _text(payload, rows, columns)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cell(v):
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(v, sort_keys=True)
    return "" if v is None else v


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


def _text(payload, rows, columns):
    lines = [f"# flagorbit {payload['config']['version']}  "
             + " ".join(f"{k}={v}" for k, v in sorted(payload["config"].items())
                        if k != "version" and v not in (None, False))]
    if rows is not None:
        columns = columns or sorted({k for r in rows for k in r})
        table = [[str(_cell(r.get(c))) for c in columns] for r in rows]
        widths = [max([len(c)] + [len(t[i]) for t in table]) for i, c in enumerate(columns)]
        lines.append("  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip())
        for t in table:
            lines.append("  ".join(x.ljust(w) for x, w in zip(t, widths)).rstrip())
    else:
        for k, v in _flatten({k: v for k, v in payload.items() if k != "config"}).items():
            lines.append(f"{k}: {_cell(v)}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# commands

LIST_COLUMNS = ["theta", "partition", "alpha_l", "case", "special", "dim_k", "dim_m",
                "submodules", "summands", "params"]


def cmd_list(args) -> int:
    rows = []
    for t in enumerate_thetas(_lie_type(args)):
        if t.is_full and not args.include_point:
            continue
        dec = build_decomposition(t)
        rows.append({
            "theta": t.label,
            "partition": list(t.partition),
            "alpha_l": t.alpha_l_in_theta,
            "case": dec.case,
            "special": special_c4(t),
            "dim_k": dec.dim_k,
            "dim_m": dec.dim_m,
            "submodules": [f"{s.name}:{s.dim}" for s in dec.submodules],
            "summands": len(dec.isotypical_summands),
            "params": len(param_schema(t)),
        })
    _emit(args, {"config": _config(args), "flags": rows}, rows, LIST_COLUMNS)
    return 0


def cmd_decompose(args) -> int:
    dec = build_decomposition(_theta(args))
    _emit(args, {"config": _config(args), "decomposition": dec.summary()})
    return 0


def cmd_schema(args) -> int:
    schema = param_schema(_theta(args))
    payload = {"config": _config(args), "schema": schema.to_json(),
               "go_family_free_values": list(family_free_values(schema.case))}
    _emit(args, payload)
    return 0


def cmd_check(args) -> int:
    theta = _theta(args)
    dec = build_decomposition(theta)
    params = _params_for(args, theta)
    A = _build(dec, params, args.mode)
    inv = check_invariance(A, samples=2, seed=args.seed)
    if not inv.passed:
        _emit(args, {"config": _config(args), "invariance": inv.to_json(),
                     "error": "metric is not invariant"})
        return EXIT_ERROR
    rep = is_go_numeric(A, n_samples=args.samples, seed=args.seed, tol=args.tol)
    facts = obstruction_scan(A)
    payload = {
        "config": _config(args),
        "theta": theta.to_json(),
        "params": params.to_json(),
        "mode": A.mode,
        "invariance": inv.to_json(),
        "report": rep.to_json(),
        "obstructions": [f.to_json() for f in facts],
    }
    _emit(args, payload)
    if rep.verdict == NOT_GO and rep.agreement:
        return EXIT_NOT_GO
    if rep.verdict == GO and rep.certificate == "certified":
        return EXIT_GO
    return EXIT_UNDECIDED


CLASSIFY_COLUMNS = ["theta", "partition", "alpha_l", "case", "go_set", "free_values",
                    "free_count", "spot_mode", "spot_verdict", "spot_certificate",
                    "random_verdict", "obstructions"]


def _free_draw(case, rng):
    """Rational-friendly free values for a g.o. family instance."""
    k = Fraction(int(rng.integers(1, 4)))
    if case == "A3_single":
        return {"mu1": 3 * k, "mu2": 4 * k}
    lam = Fraction(int(rng.integers(2, 6)))
    b = Fraction(int(rng.integers(1, 2 * int(lam))), 2)
    return {"mu": lam, "b": b, "lambda": lam, "t": Fraction(int(rng.integers(-2, 5)), 4),
            "mu1": k, "mu2": k + 1}


def cmd_classify(args) -> int:
    rng = np.random.default_rng(args.seed)
    rows = []
    for t in enumerate_thetas(_lie_type(args)):
        if t.is_full:
            continue
        dec = build_decomposition(t)
        case = param_schema(t).case
        kind = classification_kind(t)
        free = list(family_free_values(case)) if kind in ("family", "normal only") else []
        if kind == "normal only":
            free = ["mu"]
        row = {"theta": t.label, "partition": list(t.partition), "alpha_l": t.alpha_l_in_theta,
               "case": case, "go_set": kind, "free_values": free, "free_count": len(free)}
        draw = _free_draw(case, rng)
        try:
            P = go_family(t, draw) if kind != "no-closed-form" else random_invariant_metric(
                dec, int(rng.integers(0, 2 ** 31)))
            A = _build(dec, P, args.mode)
            rep = is_go_numeric(A, n_samples=args.samples, seed=args.seed)
            row.update(spot_mode=A.mode, spot_verdict=rep.verdict, spot_certificate=rep.certificate)
        except FamilyError as e:
            row.update(spot_mode="", spot_verdict=f"infeasible: {e}", spot_certificate="")
        R = random_invariant_metric(dec, int(rng.integers(0, 2 ** 31)))
        B = _build(dec, R, args.mode)
        rrep = is_go_numeric(B, n_samples=args.samples, seed=args.seed)
        row["random_verdict"] = rrep.verdict
        row["obstructions"] = len(obstruction_scan(B))
        rows.append(row)
    _emit(args, {"config": _config(args), "flags": rows}, rows, CLASSIFY_COLUMNS)
    return 0


# --------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flagorbit", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"flagorbit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, theta=False):
        sp.add_argument("--family", required=True, choices=["A", "B", "C", "D"])
        sp.add_argument("--rank", required=True, type=int)
        sp.add_argument("--format", choices=["json", "csv", "text"], default="text")
        sp.add_argument("--out", default=None, help="write to a file instead of stdout")
        if theta:
            sp.add_argument("--partition", help="block sizes l_1,...,l_r")
            sp.add_argument("--alpha-l", dest="alpha_l", action="store_true",
                            help="alpha_l in Theta (types B, C, D)")
            sp.add_argument("--alpha-l-1", dest="alpha_l_1", action="store_true", default=None,
                            help="alpha_(l-1) in Theta (type D; implied by l_r >= 2)")

    def numeric(sp):
        sp.add_argument("--mode", choices=["exact", "float", "auto"], default="auto")
        sp.add_argument("--tol", type=float, default=1e-9)
        sp.add_argument("--samples", type=int, default=64)
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("list", help="list the flags of a group")
    common(sp)
    sp.add_argument("--include-point", action="store_true")
    sp.set_defaults(func=cmd_list)

    sp = sub.add_parser("decompose", help="isotropy decomposition of a flag")
    common(sp, theta=True)
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("schema", help="invariant metric parameters of a flag")
    common(sp, theta=True)
    sp.set_defaults(func=cmd_schema)

    sp = sub.add_parser("check", help="g.o. test of one metric")
    common(sp, theta=True)
    numeric(sp)
    sp.add_argument("--params", help="MetricParams JSON file (default: normal metric)")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("classify", help="g.o. survey over every flag of a group")
    common(sp)
    numeric(sp)
    sp.set_defaults(func=cmd_classify, samples=16)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (RangeError, UsageError, SchemaError, PositivityError, NonRationalError,
            FamilyError, ValueError, OSError) as e:
        print(f"flagorbit: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
