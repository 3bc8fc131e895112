"""Command-line entry point.

Subcommands chain through JSON documents on files or stdin/stdout:
`gen` emits an instance, `coarsen` shrinks its graph, `solve` attaches
a solution, `verify` replays it, `export` renders a chrome-tracing
file, and `repro-dualpipe` runs the bidirectional-pipeline benchmark
protocol end to end. Errors print one JSON object on stderr and map to
stable exit codes.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

from .coarsen import CoarsenConfig, coarsen
from .graph import (GraphError, dump_cluster, dump_computation_graph,
                    load_cluster, load_computation_graph)
from .model import (ModelError, ModelOptions, build_model,
                    clear_primal_bound, set_primal_bound)
from .mpswriter import export_lp, export_mps
from .scenarios import (DualPipeSpec, RandomDagSpec, dualpipe_bubble_target,
                        dualpipe_primal_bound, dualpipe_reference,
                        gen_dualpipe, gen_random_dag)
from .simulate import verify
from .solver import (INFEASIBLE, Solution, SolveConfig, SolveError,
                     solve, warm_start)
from .trace import export_trace

CONFIG_ENV = "OPSCHED_CONFIG"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_VIOLATIONS = 4


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_ERROR,
                 **extra):
        super().__init__(message)
        self.kind = kind
        self.code = code
        self.extra = extra


def _fail(kind: str, message: str, code: int = EXIT_ERROR, **extra) -> int:
    doc = {"error": kind, "message": message}
    doc.update(extra)
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def _read_doc(path: str | None) -> dict:
    try:
        if path in (None, "-"):
            return json.load(sys.stdin)
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError("bad-input", f"cannot read document: {exc}",
                       EXIT_USAGE)


def _write_doc(doc: dict, path: str | None):
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _instance_doc(g, h, options: ModelOptions, **extra) -> dict:
    doc = {"graph": dump_computation_graph(g),
           "cluster": dump_cluster(h),
           "options": {"memory_capped": options.memory_capped,
                       "dynamic_loading": options.dynamic_loading}}
    doc.update(extra)
    return doc


def _parse_instance(doc: dict):
    try:
        g = load_computation_graph(doc["graph"])
        h = load_cluster(doc["cluster"])
    except (KeyError, GraphError) as exc:
        raise CliError("bad-instance", f"invalid instance document: {exc}",
                       EXIT_USAGE)
    opts = doc.get("options", {})
    options = ModelOptions(
        memory_capped=bool(opts.get("memory_capped", False)),
        dynamic_loading=bool(opts.get("dynamic_loading", False)))
    return g, h, options


# -- subcommands -------------------------------------------------------------


def _cmd_gen(args) -> int:
    if args.family == "dualpipe":
        spec = DualPipeSpec(pp=args.pp, micro_batches=args.micro_batches,
                            memory_mode=args.memory_mode)
        g, h, options = gen_dualpipe(spec)
        doc = _instance_doc(g, h, options,
                            primal_bound=dualpipe_primal_bound(spec))
    else:
        spec = RandomDagSpec(nodes=args.nodes, seed=args.seed,
                             max_in_degree=args.max_in_degree,
                             max_out_degree=args.max_out_degree)
        g = gen_random_dag(spec)
        from .graph import Channel, HardwareCluster, Machine
        cap = sum(op.weight_mem for op in g.operations.values()) + 1
        machines = [Machine(f"m{k:02d}", cap) for k in range(args.machines)]
        channels = [Channel(a.id, b.id) for a in machines for b in machines
                    if a.id != b.id]
        h = HardwareCluster(machines, channels)
        doc = _instance_doc(g, h, ModelOptions())
    _write_doc(doc, args.output)
    return EXIT_OK


def _cmd_coarsen(args) -> int:
    doc = _read_doc(args.input)
    g, h, options = _parse_instance(doc)
    budget = args.to if args.to else max(1, len(g) // 5)
    coarse, records = coarsen(g, CoarsenConfig.for_graph(g, budget))
    out = _instance_doc(coarse, h, options,
                        coarsen_records=[{"id": r.new_id,
                                          "absorbed": list(r.absorbed)}
                                         for r in records])
    for key in ("primal_bound",):
        if key in doc:
            out[key] = doc[key]
    _write_doc(out, args.output)
    return EXIT_OK


def _build(doc: dict):
    g, h, options = _parse_instance(doc)
    try:
        model = build_model(g, h, options)
    except ModelError as exc:
        raise CliError("infeasible", str(exc), EXIT_INFEASIBLE,
                       tags=["capacity"])
    if doc.get("primal_bound") is not None:
        model = set_primal_bound(model, doc["primal_bound"])
    return g, h, model


def _cmd_solve(args) -> int:
    doc = _read_doc(args.input)
    g, h, model = _build(doc)
    if args.ignore_primal_bound:
        model = clear_primal_bound(model)
    cfg = SolveConfig(time_limit=args.time_limit,
                      node_limit=args.node_limit,
                      compaction=args.compaction)
    sol = solve(model, cfg)
    if sol.status == INFEASIBLE:
        return _fail("infeasible", "no feasible schedule exists",
                     EXIT_INFEASIBLE, tags=["assign", "dep-order"])
    if sol.objective is None:
        return _fail("no-incumbent",
                     "search budget exhausted without a feasible schedule",
                     EXIT_ERROR, status=sol.status)
    out = dict(doc)
    out["solution"] = sol.to_dict()
    _write_doc(out, args.output)
    return EXIT_OK


def _cmd_verify(args) -> int:
    doc = _read_doc(args.input)
    g, h, options = _parse_instance(doc)
    if "solution" not in doc:
        raise CliError("bad-input", "document carries no solution",
                       EXIT_USAGE)
    sol = Solution.from_dict(doc["solution"])
    report = verify(g, h, sol, capped=options.memory_capped)
    out = {"feasible": report.feasible,
           "violations": [{"kind": k, "ids": list(ids), "time": t}
                          for (k, ids, t) in report.violations],
           "makespan": report.makespan,
           "bubble_total": report.bubble_total,
           "per_device_bubble": report.per_device_bubble,
           "channel_busy": {f"{a}->{b}": v
                            for (a, b), v in report.channel_busy.items()}}
    _write_doc(out, args.output)
    if not report.feasible:
        return _fail("verification-failed",
                     f"{len(report.violations)} violations",
                     EXIT_VIOLATIONS)
    return EXIT_OK


def _cmd_export(args) -> int:
    doc = _read_doc(args.input)
    g, h, options = _parse_instance(doc)
    if args.format in ("mps", "lp"):
        _, _, model = _build(doc)
        writer = export_mps if args.format == "mps" else export_lp
        if args.output in (None, "-"):
            writer(model, sys.stdout)
        else:
            with open(args.output, "w") as fh:
                writer(model, fh)
        return EXIT_OK
    if "solution" not in doc:
        raise CliError("bad-input", "document carries no solution",
                       EXIT_USAGE)
    sol = Solution.from_dict(doc["solution"])
    if args.output in (None, "-"):
        export_trace(sol, g, h, sys.stdout)
    else:
        with open(args.output, "w") as fh:
            export_trace(sol, g, h, fh)
    return EXIT_OK


def _cmd_repro_dualpipe(args) -> int:
    spec = DualPipeSpec(pp=args.pp)
    g, h, options = gen_dualpipe(spec)
    bound = dualpipe_primal_bound(spec)
    target = dualpipe_bubble_target(spec)
    half = dualpipe_bubble_target(spec, improved=True)

    t0 = time.monotonic()
    model = set_primal_bound(build_model(g, h, options), bound)
    hint = dualpipe_reference(spec)
    bounded = solve(warm_start(model, hint),
                    SolveConfig(time_limit=args.time_limit))
    rep1 = verify(g, h, bounded, capped=options.memory_capped)
    if not rep1.feasible:
        return _fail("verification-failed",
                     "bounded schedule failed verification",
                     EXIT_VIOLATIONS)
    if rep1.bubble_total != target:
        return _fail("bubble-mismatch",
                     f"bounded bubble {rep1.bubble_total} != {target}",
                     EXIT_ERROR)

    continued = solve(warm_start(clear_primal_bound(model), bounded),
                      SolveConfig(time_limit=args.time_limit,
                                  node_limit=args.node_limit,
                                  idle_refinement=True,
                                  idle_target=half))
    rep2 = verify(g, h, continued, capped=options.memory_capped)
    if not rep2.feasible:
        return _fail("verification-failed",
                     "continued schedule failed verification",
                     EXIT_VIOLATIONS)
    if rep2.bubble_total != half:
        return _fail("bubble-mismatch",
                     f"continued bubble {rep2.bubble_total} != {half}",
                     EXIT_ERROR)

    print(f"bubble(dualpipe-bound)={int(target)}, "
          f"bubble(continued)={int(half)}")
    print(f"pp={args.pp} makespan(bound)={bounded.objective:g} "
          f"makespan(continued)={continued.objective:g} "
          f"status={continued.status} "
          f"elapsed={time.monotonic() - t0:.1f}s")
    if args.output:
        _write_doc(_instance_doc(g, h, options,
                                 primal_bound=bound,
                                 solution=continued.to_dict()),
                   args.output)
    return EXIT_OK


# -- argument parsing --------------------------------------------------------


def _apply_config(parser: argparse.ArgumentParser, subparsers: dict,
                  path: str | None):
    if not path:
        return
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError("bad-config", f"cannot read config {path!r}: {exc}",
                       EXIT_USAGE)
    if not isinstance(doc, dict):
        raise CliError("bad-config", "config root must be an object",
                       EXIT_USAGE)
    for key, value in doc.items():
        if isinstance(value, dict) and key in subparsers:
            subparsers[key].set_defaults(
                **{k.replace("-", "_"): v for k, v in value.items()})
        else:
            parser.set_defaults(**{key.replace("-", "_"): value})


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="opsched",
        description="Operator-level schedule planning on device clusters.")
    parser.add_argument("--config", default=None,
                        help="JSON config file with flag defaults "
                             f"(default from ${CONFIG_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)
    tbl = {}

    p = tbl["gen"] = sub.add_parser("gen", help="generate an instance")
    fam = p.add_subparsers(dest="family", required=True)
    d = fam.add_parser("dualpipe")
    d.add_argument("--pp", type=int, required=True)
    d.add_argument("--micro-batches", type=int, default=None)
    d.add_argument("--memory-mode", default="dualpipe",
                   choices=["dualpipe", "relaxed", "uncapped"])
    d.add_argument("-o", "--output", default=None)
    d.set_defaults(func=_cmd_gen)
    r = fam.add_parser("random")
    r.add_argument("--nodes", type=int, required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--max-in-degree", type=int, default=3)
    r.add_argument("--max-out-degree", type=int, default=3)
    r.add_argument("--machines", type=int, default=2)
    r.add_argument("-o", "--output", default=None)
    r.set_defaults(func=_cmd_gen)

    p = tbl["coarsen"] = sub.add_parser("coarsen", help="merge graph nodes")
    p.add_argument("-i", "--input", default=None)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--to", type=int, default=None,
                   help="target node count")
    p.set_defaults(func=_cmd_coarsen)

    p = tbl["solve"] = sub.add_parser("solve", help="solve an instance")
    p.add_argument("-i", "--input", default=None)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--time-limit", type=float, default=60.0)
    p.add_argument("--node-limit", type=int, default=None)
    p.add_argument("--compaction", default="none", choices=["none", "late"])
    p.add_argument("--ignore-primal-bound", action="store_true")
    p.set_defaults(func=_cmd_solve)

    p = tbl["verify"] = sub.add_parser("verify", help="replay a solution")
    p.add_argument("-i", "--input", default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_verify)

    p = tbl["export"] = sub.add_parser("export", help="write trace/MPS/LP")
    p.add_argument("-i", "--input", default=None)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--format", default="trace",
                   choices=["trace", "mps", "lp"])
    p.set_defaults(func=_cmd_export)

    p = tbl["repro-dualpipe"] = sub.add_parser(
        "repro-dualpipe", help="run the pipeline bubble benchmark")
    p.add_argument("--pp", type=int, required=True)
    p.add_argument("--time-limit", type=float, default=600.0)
    p.add_argument("--node-limit", type=int, default=2_000_000)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_repro_dualpipe)

    return parser, tbl


def main(argv: list[str] | None = None) -> int:
    parser, tbl = build_parser()
    try:
        pre, _ = parser.parse_known_args(argv)
        _apply_config(parser, tbl,
                      pre.config or os.environ.get(CONFIG_ENV))
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), exc.code, **exc.extra)
    except (GraphError, ModelError, SolveError) as exc:
        return _fail(type(exc).__name__.removesuffix("Error").lower(),
                     str(exc), EXIT_ERROR)
    except BrokenPipeError:
        # downstream consumer closed the pipe early (e.g. head)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
