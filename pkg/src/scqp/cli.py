"""Command-line front end: generate instances, compare bounds, solve, and
run benchmark sweeps that emit CSV.

Exit codes: 0 success (including gap-reached solves), 2 flag errors
(argparse), 3 unreadable or invalid input file, 4 time limit hit,
5 proven infeasible.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from scqp import bnb, generators, model, reformulate as rf
from scqp.conic import ConicSettings

SCHEMA_VERSION = 1
CSV_COLUMNS = [
    "schema_version", "instance", "reform", "status", "objective",
    "bound_plain", "bound_pr", "bound_lcr", "bound_qcr", "impr",
    "nodes", "cuts", "gap", "time_sdp_l", "time_socp", "time_bnb",
]

EXIT_OK = 0
EXIT_INPUT = 3
EXIT_TIME_LIMIT = 4
EXIT_INFEASIBLE = 5


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        if not math.isfinite(value):
            return "NA"
        return format(value, ".12g")
    return str(value)


def _conic_settings(args) -> ConicSettings:
    return ConicSettings(eps=args.conic_eps, max_iter=args.conic_max_iter)


def _load_instance(path: str):
    try:
        return model.read_instance(path)
    except (OSError, model.ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None


# ---------------------------------------------------------------------------
# generate

def cmd_generate(args) -> int:
    spec = generators.GenSpec(family=args.family, n=args.n, K=args.k,
                              dominance=args.dominance, sections=args.sections,
                              seed=args.seed)
    try:
        spec.check()
        inst = generators.gen_mv(spec) if args.family == "mv" \
            else generators.gen_ssp(spec)
    except (generators.IndivisibleSections, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    out = args.output
    if out is None:
        parts = [args.family, f"n{args.n}"]
        if args.k is not None:
            parts.append(f"k{args.k}")
        if args.sections is not None:
            parts.append(f"sec{args.sections}")
        parts.append(f"s{args.seed}")
        out = "_".join(parts) + ".json"
    model.write_instance(inst, out)
    problems = model.validate(inst)
    summary = "valid" if not problems else "; ".join(problems)
    print(f"{out}: n={inst.n} m={inst.m} family={args.family} ({summary})")
    return 0 if not problems else 1


# ---------------------------------------------------------------------------
# bound

def cmd_bound(args) -> int:
    inst = _load_instance(args.instance)
    if inst is None:
        return EXIT_INPUT
    settings = _conic_settings(args)
    if args.rho == "zero":
        pp = rf.PerspectiveParams(rho=np.zeros(inst.n))
        report = rf.BoundReport()
        try:
            report.bound_plain, _ = rf._relax_bound(rf.build_plain(inst))
            from scqp.conic import solve_conic
            sol = solve_conic(rf.build_socp_relax(inst, pp), settings)
            report.bound_pr = float(sol.primal_obj)
        except Exception as exc:  # noqa: BLE001
            report.failures["pr"] = str(exc)
    else:
        report = rf.bound_compare(inst, settings=settings,
                                  with_qcr=args.qcr or None)
    for name in ("bound_plain", "bound_pr", "bound_lcr", "bound_qcr", "impr"):
        print(f"{name} = {_fmt(getattr(report, name))}")
    for stage, msg in report.failures.items():
        print(f"failure[{stage}]: {msg}")
    if args.output:
        row = _record(args.instance, "bounds", None, report,
                      deterministic=args.deterministic)
        _write_csv(args.output, [row])
        print(f"wrote {args.output}")
    return 0


# ---------------------------------------------------------------------------
# solve

def cmd_solve(args) -> int:
    inst = _load_instance(args.instance)
    if inst is None:
        return EXIT_INPUT
    settings = bnb.SolveSettings(rel_gap=args.gap, time_limit=args.time_limit,
                                 deterministic=args.deterministic,
                                 conic=_conic_settings(args))
    result = bnb.solve(inst, reform=args.reform, settings=settings)
    st = result.stats
    print(f"status    {st.status}")
    print(f"objective {_fmt(result.obj)}")
    print(f"bound     {_fmt(st.best_bound)}")
    print(f"gap       {_fmt(st.gap)}")
    print(f"nodes     {st.nodes}   cuts {st.cuts}")
    if not args.deterministic:
        print(f"time      {st.elapsed:.3f}s")
    print("x =", np.array2string(result.x, precision=6, suppress_small=True))
    print("y =", np.array2string(result.y, precision=0))
    if args.output:
        payload = {
            "status": st.status,
            "objective": result.obj if math.isfinite(result.obj) else None,
            "x": [float(v) for v in result.x],
            "y": [float(v) for v in result.y],
            "nodes": st.nodes,
            "cuts": st.cuts,
            "gap": st.gap if math.isfinite(st.gap) else None,
            "reform": args.reform,
        }
        with open(args.output, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
        print(f"wrote {args.output}")
    if st.status == "TimeLimit":
        return EXIT_TIME_LIMIT
    if st.status == "Infeasible":
        return EXIT_INFEASIBLE
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench

def _record(instance_id: str, reform: str, result, report,
            deterministic: bool) -> dict:
    st = result.stats if result is not None else None
    row = {
        "schema_version": SCHEMA_VERSION,
        "instance": instance_id,
        "reform": reform,
        "status": st.status if st else "NA",
        "objective": _fmt(result.obj) if result else "NA",
        "bound_plain": _fmt(report.bound_plain) if report else "NA",
        "bound_pr": _fmt(report.bound_pr) if report else "NA",
        "bound_lcr": _fmt(report.bound_lcr) if report else "NA",
        "bound_qcr": _fmt(report.bound_qcr) if report else "NA",
        "impr": _fmt(report.impr) if report else "NA",
        "nodes": st.nodes if st else "NA",
        "cuts": st.cuts if st else "NA",
        "gap": _fmt(st.gap) if st else "NA",
        "time_sdp_l": "NA",
        "time_socp": "NA",
        "time_bnb": "NA",
    }
    if not deterministic:
        if report is not None:
            row["time_sdp_l"] = _fmt(report.timings.get("time_sdp_l"))
            row["time_socp"] = _fmt(report.timings.get("time_socp"))
        if st is not None:
            row["time_bnb"] = _fmt(st.elapsed)
    return row


def _write_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _bench_one(task) -> list[dict]:
    path, reforms, gap, time_limit, eps, max_iter, deterministic = task
    instance_id = Path(path).name
    try:
        inst = model.read_instance(path)
    except (OSError, model.ParseError) as exc:
        return [_record_failure(instance_id, reform, f"ParseError") for reform in reforms]
    conic = ConicSettings(eps=eps, max_iter=max_iter)
    try:
        report = rf.bound_compare(inst, settings=conic)
    except Exception:  # noqa: BLE001 - sweep must not abort
        report = None
    rows = []
    for reform in reforms:
        try:
            settings = bnb.SolveSettings(rel_gap=gap, time_limit=time_limit,
                                         deterministic=deterministic,
                                         conic=conic)
            result = bnb.solve(inst, reform=reform, settings=settings)
            rows.append(_record(instance_id, reform, result, report,
                                deterministic))
        except Exception as exc:  # noqa: BLE001
            rows.append(_record_failure(instance_id, reform,
                                        type(exc).__name__))
    return rows


def _record_failure(instance_id: str, reform: str, status: str) -> dict:
    row = {col: "NA" for col in CSV_COLUMNS}
    row.update({"schema_version": SCHEMA_VERSION, "instance": instance_id,
                "reform": reform, "status": status})
    return row


def cmd_bench(args) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        print(f"error: {directory} is not a directory", file=sys.stderr)
        return EXIT_INPUT
    paths = sorted(str(p) for p in directory.glob("*.json"))
    if not paths:
        print(f"error: no .json instances in {directory}", file=sys.stderr)
        return EXIT_INPUT
    reforms = [r.strip() for r in args.reform.split(",") if r.strip()]
    tasks = [(p, reforms, args.gap, args.time_limit, args.conic_eps,
              args.conic_max_iter, args.deterministic) for p in paths]
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            chunks = list(pool.map(_bench_one, tasks))
    else:
        chunks = [_bench_one(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r["instance"], r["reform"]))
    _write_csv(args.output, rows)
    print(f"wrote {args.output} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------

def _add_conic_flags(p) -> None:
    p.add_argument("--conic-eps", type=float, default=1e-7,
                   help="conic solver residual tolerance")
    p.add_argument("--conic-max-iter", type=int, default=200000,
                   help="conic solver iteration limit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scqp",
        description="Solver toolkit for convex QPs with semi-continuous "
                    "variables: perspective, lifted, and QCR reformulations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a random instance")
    p.add_argument("family", choices=["mv", "ssp"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--dominance", choices=sorted(generators.MV_DELTA),
                   default="zero")
    p.add_argument("--sections", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bound", help="compute and compare relaxation bounds")
    p.add_argument("instance")
    p.add_argument("--qcr", action="store_true",
                   help="also solve the QCR parameter SDP")
    p.add_argument("--rho", choices=["sdp", "zero"], default="sdp",
                   help="perspective parameter source")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("-o", "--output", default=None, help="CSV output path")
    _add_conic_flags(p)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("solve", help="solve to global optimality")
    p.add_argument("instance")
    p.add_argument("--reform", choices=["plain", "lcr", "pc", "qcr"],
                   default="pc")
    p.add_argument("--gap", type=float, default=1e-4)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("-o", "--output", default=None)
    _add_conic_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="benchmark a directory of instances")
    p.add_argument("directory")
    p.add_argument("--reform", default="lcr,pc",
                   help="comma-separated reformulations")
    p.add_argument("--gap", type=float, default=1e-4)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("-o", "--output", default="bench.csv")
    _add_conic_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
