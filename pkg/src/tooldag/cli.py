"""Command-line surface: library management, retrieval, simulation, bench.

Exit codes: 0 ok, 1 usage error, 2 data error (unreadable/inconsistent files,
unknown tools), 3 assumption-breach detected by `simulate`.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

from . import bench as bench_mod
from . import persist
from .fixtures import build_arith_library, build_tabular_library
from .graph import Added, Merged, Rejected, UnknownTool
from .retrieval import SubGoal, retrieve
from .scorers import ScorerFailure
from .sim import SimConfig, coevolve
from .typesys import MalformedType, NonGroundGoal, parse_signature


class UsageExit(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="tooldag", description=__doc__)
    parser.add_argument("--library", help="library file to read (and update)")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument(
        "--lattice",
        choices=("exact", "covariant"),
        default="covariant",
        help="input matching: exact base equality, or contravariant widening",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="write a fresh library from a domain profile")
    p_init.add_argument("--domain", choices=("arith", "tabular"), default="arith")
    p_init.add_argument("path", help="library file to create")

    p_insert = sub.add_parser("insert", help="insert candidate tools from a file")
    p_insert.add_argument("file", help="candidate tool blocks")

    p_ret = sub.add_parser("retrieve", help="run the cascade for one sub-goal")
    p_ret.add_argument("--goal", required=True, help="ground signature, e.g. '(float, float) -> float'")
    p_ret.add_argument("--intent", required=True)
    p_ret.add_argument("--facts", action="append", default=[], help="known pre-condition atom (repeatable)")
    p_ret.add_argument("--effect", default="", help="required post-condition text")
    p_ret.add_argument("--budget", default="", help="complexity ceiling, e.g. 'O(n)'")
    p_ret.add_argument("--k2", type=int, default=32)
    p_ret.add_argument("--trace", action="store_true", help="print per-stage survivors and costs")

    p_sim = sub.add_parser("simulate", help="run the co-evolution loop")
    p_sim.add_argument("--config", help="JSON file of config overrides")
    p_sim.add_argument("--out", default="run_out", help="directory for metrics.csv + manifest.json")

    p_bench = sub.add_parser("bench", help="run the substrate cost sweep")
    p_bench.add_argument("--config", help="JSON file of config overrides")
    p_bench.add_argument("--out", default="bench_out", help="directory for rows.csv + report.txt")

    sub.add_parser("stats", help="node counts, depth histogram, fan-out mean")

    p_dot = sub.add_parser("export-dot", help="write a graphviz rendering")
    p_dot.add_argument("path")

    return parser


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return data


def _require_library(args) -> "persist.LibraryGraph":
    if not args.library:
        raise UsageExit(1)
    return persist.load_library(args.library)


def _cmd_init(args) -> int:
    graph = build_arith_library() if args.domain == "arith" else build_tabular_library()
    persist.save_library(graph, args.path)
    print(f"wrote {args.domain} library with {len(graph.nodes)} tools to {args.path}")
    return 0


def _cmd_insert(args) -> int:
    graph = _require_library(args)
    candidates = persist.load_candidates(args.file, graph)
    for node in candidates:
        outcome = graph.insert_tool(node)
        if isinstance(outcome, Added):
            print(f"{node.id}: Added")
        elif isinstance(outcome, Merged):
            print(f"{node.id}: Merged(into={outcome.into}, appended_examples={outcome.appended_examples})")
        else:
            assert isinstance(outcome, Rejected)
            print(f"{node.id}: Rejected({outcome.reason.value}: {outcome.detail})")
    persist.save_library(graph, args.library)
    return 0


def _cmd_retrieve(args) -> int:
    graph = _require_library(args)
    goal = parse_signature(args.goal, graph.ctor_arities)
    subgoal = SubGoal(
        signature=goal,
        intent=args.intent,
        facts=frozenset(args.facts),
        goal_effect=args.effect,
        budget=args.budget or None,
    )
    input_mode = "exact" if args.lattice == "exact" else "contravariant"
    trace = retrieve(graph, subgoal, k2=args.k2, input_mode=input_mode)
    winner = trace.final_winner()
    if args.trace:
        for i, entry in enumerate(trace.entries()):
            if i:
                print(f"-- descent {i} --")
            for line in entry.to_lines():
                print(line)
    ledger = trace.total_ledger()
    print(f"winner: {winner if winner else 'none'}")
    print(
        f"tokens: {ledger.total_tokens}  scorer_calls: {ledger.total_scorer_calls}  "
        f"unify_visits: {ledger.unification_node_visits}"
    )
    return 0


def _cmd_simulate(args) -> int:
    overrides = _load_json(args.config)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if "depth_range" in overrides:
        overrides["depth_range"] = tuple(overrides["depth_range"])
    config = SimConfig(**overrides)
    result = coevolve(config, out_dir=args.out)
    final = result.metrics[-1]
    print(
        f"steps: {len(result.metrics)}  final J: {final.J:.4f}  "
        f"library: {result.manifest['library']['tools']} tools  "
        f"breaches: {len(result.breaches)}"
    )
    print(f"wrote metrics.csv and manifest.json to {args.out}")
    if result.breaches:
        return 3
    return 0


def _cmd_bench(args) -> int:
    overrides = _load_json(args.config)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if "sizes" in overrides:
        overrides["sizes"] = tuple(overrides["sizes"])
    config = bench_mod.BenchConfig(**overrides)
    rows = bench_mod.run_bench(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench_mod.write_rows(rows, out / "rows.csv")
    report = bench_mod.format_report(bench_mod.summarize(rows, config))
    (out / "report.txt").write_text(report)
    print(report, end="")
    return 0


def _cmd_stats(args) -> int:
    graph = _require_library(args)
    stats = graph.stats()
    for key in sorted(stats):
        print(f"{key}: {stats[key]}")
    hist = Counter(node.depth for node in graph.nodes.values())
    cells = "  ".join(f"d{d}:{hist[d]}" for d in sorted(hist))
    print(f"depth histogram: {cells}")
    return 0


def _cmd_export_dot(args) -> int:
    graph = _require_library(args)
    Path(args.path).write_text(persist.export_dot(graph))
    print(f"wrote {args.path}")
    return 0


_COMMANDS = {
    "init": _cmd_init,
    "insert": _cmd_insert,
    "retrieve": _cmd_retrieve,
    "simulate": _cmd_simulate,
    "bench": _cmd_bench,
    "stats": _cmd_stats,
    "export-dot": _cmd_export_dot,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageExit:
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageExit:
        print("error: this command needs --library <path>", file=sys.stderr)
        return 1
    except (
        persist.ParseError,
        persist.CycleInFile,
        persist.DepthMismatch,
        MalformedType,
        NonGroundGoal,
        UnknownTool,
        ScorerFailure,
        OSError,
        ValueError,
        TypeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
