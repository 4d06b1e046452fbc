"""Retrieval-substrate cost bench: flat, summary-tree, and typed cascade.

Three substrates answer the same synthetic queries over the same library and
are priced by the same per-level token function:

* flat        -- every query reads all four levels of every tool (one scorer
                 call per tool): the put-everything-in-context baseline.
* texthier    -- an extractive summary tree over the L2 descriptions (top-TF
                 terms per node), traversed by a greedy beam of width =
                 branching, charging every inspected node's summary and all
                 four levels of the final top-k2 leaf shortlist.  Type-blind
                 by design.
* tdr         -- the typed cascade from :mod:`tooldag.retrieval`.

The generator realizes the survival fractions: tool signatures concentrate a
random query's L1 survivors at a Binomial(n, alpha1) count, the k2 cut fixes
the L2 fraction, and each tool's spec is drawn compatible with its topic
cluster with probability alpha3.  Each cluster has one canonical effect
string (fixed length, shared verbatim by compatible posts and query goals),
so the deterministic L3 check passes exactly when the tool is compatible and
the budget admits its complexity.  Record lengths follow the configured
per-level token means (L1 naturally small, L2 well below L3 and L4), and all
randomness is seeded, so repeated runs produce byte-identical CSVs.

The fractions only express themselves once the k2 cut binds (alpha1 * n >=
k2) and the in-cluster supply covers the whole shortlist (alpha1 * n >=
clusters * k2): below that the shortlist is padded with zero-score
off-cluster tools that fail the L3 pre-atom check, so realized fractions are
reported per size and the headline values are read at the largest size.
"""

from __future__ import annotations

import csv
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .graph import LibraryGraph, ToolSpec, make_primitive
from .retrieval import SubGoal, retrieve, token_cost
from .scorers import lexical_score
from .typesys import BaseType, Constructor, Signature, TypeVar


class InfeasibleAlpha(ValueError):
    pass


@dataclass
class BenchConfig:
    """alpha1 is realized by the type-tag alphabet, alpha3 by the per-tool
    compatibility draw, and alpha2 by the k2 cut itself: once alpha1 * n >=
    k2 the L2 stage keeps k2 of alpha1 * n survivors, so the largest sweep
    size should satisfy k2 / (alpha1 * n_max) ~= alpha2.  The level means
    keep L2 records far below L3 and L4 ones."""

    sizes: tuple[int, ...] = (50, 100, 200, 400, 800, 1600)
    k2: int = 32
    alpha1: float = 0.1
    alpha2: float = 0.2
    alpha3: float = 0.45
    queries_per_size: int = 40
    seed: int = 0
    branching: int = 8
    summary_terms: int = 10
    clusters: int = 2
    l2_mean: int = 24
    l3_mean: int = 160
    l4_mean: int = 240
    budget: str = "O(n)"


@dataclass(frozen=True)
class BenchQuery:
    query_id: str
    subgoal: SubGoal
    cluster: int


@dataclass(frozen=True)
class BenchRow:
    substrate: str
    n: int
    query_id: str
    tokens: int
    scorer_calls: int
    unify_visits: int
    s1: int
    s2: int
    s3: int
    s4: int
    wall_ticks: int


CSV_COLUMNS = (
    "substrate",
    "n",
    "query_id",
    "tokens",
    "scorer_calls",
    "unify_visits",
    "s1",
    "s2",
    "s3",
    "s4",
)


# ---------------------------------------------------------------------------
# generator


def _cluster_vocab(cluster: int) -> list[str]:
    return [f"c{cluster}w{j}" for j in range(12)]


def _cluster_effect(cluster: int, length: int) -> str:
    filler = " ".join(f"c{cluster}post{j % 17}" for j in range(max(0, length - 3)))
    return f"produces outcome {cluster} {filler}".strip()


def _jitter(rng: random.Random, mean: int) -> int:
    return max(3, round(mean * rng.uniform(0.95, 1.05)))


def tag_count(config: BenchConfig) -> int:
    if not 0 < config.alpha1 <= 1:
        raise InfeasibleAlpha(f"alpha1 must sit in (0, 1], got {config.alpha1}")
    k = max(1, round(1 / config.alpha1))
    realized = 1 / k
    if abs(realized - config.alpha1) > 0.2 * config.alpha1:
        raise InfeasibleAlpha(
            f"type alphabet cannot realize alpha1={config.alpha1} (closest {realized:.3f})"
        )
    return k


def _tag_signature(tag: int) -> Signature:
    return Signature((BaseType(f"t{tag}a"), BaseType(f"t{tag}b")), BaseType(f"t{tag}r"))


def generate_library(config: BenchConfig, n: int) -> LibraryGraph:
    """n ground single-node tools with tag-bucketed signatures, cluster-drawn
    descriptions, alpha3-compatible specs, and padded worked examples; plus a
    fixed trio of polymorphic utilities so the skeleton trie stays exercised."""
    k = tag_count(config)
    rng = random.Random(f"bench-lib:{config.seed}:{n}")
    bases = {f"t{t}{p}" for t in range(k) for p in "abr"}
    graph = LibraryGraph(bases=bases | {"int", "float"})

    t_var = TypeVar("T")
    poly = [
        ("u_pass", Signature((t_var,), t_var)),
        ("u_wrap", Signature((t_var,), Constructor("list", (t_var,)))),
        ("u_pair", Signature((t_var, t_var), t_var)),
    ]
    for pid, sig in poly:
        graph.insert_tool(
            make_primitive(
                pid,
                sig,
                "Generic plumbing utility.",
                ("utility",),
                ToolSpec(("always",), "returns its input unchanged", "O(1)"),
                (("(0)", "0"), ("(1)", "1")),
            )
        )

    for i in range(n):
        tid = f"tool{i:05d}"
        tag = rng.randrange(k)
        cluster = rng.randrange(config.clusters)
        vocab = _cluster_vocab(cluster)
        desc_len = _jitter(rng, config.l2_mean - 4)
        description = " ".join(rng.choice(vocab) for _ in range(desc_len))
        compatible = rng.random() < config.alpha3
        effect = _cluster_effect(cluster, config.l3_mean - 8)
        if compatible:
            pre = (f"fact-{cluster}-a",)
            post = effect
            complexity = rng.choice(("O(1)", "O(log n)", "O(n)"))
        else:
            # three fault flavours: unmet pre-atom, wrong post, over-budget
            fault = rng.randrange(3)
            pre = (f"missing-{tid}",) if fault == 0 else (f"fact-{cluster}-a",)
            if fault == 1:
                post_len = _jitter(rng, config.l3_mean - 8)
                post = f"produces nothing useful {tid} " + " ".join(
                    f"x{j % 13}" for j in range(post_len - 4)
                )
            else:
                post = effect
            complexity = "O(n^2)" if fault == 2 else rng.choice(("O(1)", "O(n)"))
        # example inputs are canonical probes per signature bucket, outputs
        # carry the tool id: tools sharing a bucket then disagree on a shared
        # input and the dedup pass keeps them distinct
        out_len = _jitter(rng, config.l4_mean // 2 - 12)
        examples = tuple(
            (
                f"(probe {ex} t{tag} c{cluster})",
                f"r{ex}-{tid} " + " ".join(f"o{j % 11}" for j in range(out_len)),
            )
            for ex in range(2)
        )
        graph.insert_tool(
            make_primitive(
                tid,
                _tag_signature(tag),
                description,
                (f"cluster{cluster}",),
                ToolSpec(pre, post, complexity),
                examples,
            )
        )
    return graph


def generate_queries(config: BenchConfig, n: int) -> list[BenchQuery]:
    k = tag_count(config)
    rng = random.Random(f"bench-q:{config.seed}:{n}")
    queries = []
    for q in range(config.queries_per_size):
        tag = rng.randrange(k)
        cluster = rng.randrange(config.clusters)
        vocab = _cluster_vocab(cluster)
        intent = f"cluster{cluster} " + " ".join(rng.choice(vocab) for _ in range(10))
        queries.append(
            BenchQuery(
                query_id=f"q{q:03d}",
                subgoal=SubGoal(
                    signature=_tag_signature(tag),
                    intent=intent,
                    facts=frozenset({f"fact-{cluster}-a", "always"}),
                    goal_effect=_cluster_effect(cluster, config.l3_mean - 8),
                    budget=config.budget,
                ),
                cluster=cluster,
            )
        )
    return queries


# ---------------------------------------------------------------------------
# substrates


def _record_costs(graph: LibraryGraph) -> dict[str, tuple[int, int, int, int]]:
    return {
        tid: tuple(token_cost(node.record, level) for level in (1, 2, 3, 4))
        for tid, node in graph.nodes.items()
    }


def run_flat(graph: LibraryGraph, queries: list[BenchQuery], n: int) -> list[BenchRow]:
    """All four levels of every tool, one scorer call per tool, every query."""
    costs = _record_costs(graph)
    total = sum(sum(c) for c in costs.values())
    count = len(graph.nodes)
    return [
        BenchRow("flat", n, q.query_id, total, count, 0, 0, 0, 0, 0, count)
        for q in queries
    ]


@dataclass
class _TreeNode:
    name: str
    children: list["_TreeNode"] = field(default_factory=list)
    tool: str | None = None
    summary: str = ""


def build_text_hierarchy(
    graph: LibraryGraph, branching: int = 8, summary_terms: int = 10
) -> _TreeNode:
    """Bottom-up grouping of tools (id order) into a summary tree; each
    internal node's summary is the top-TF terms of its descendants' L2 text."""
    level = [
        _TreeNode(name=tid, tool=tid) for tid in sorted(graph.nodes)
    ]
    counts: dict[str, Counter] = {
        node.name: Counter(graph.node(node.tool).record.description.split())
        for node in level
    }
    serial = 0
    while len(level) > 1:
        parents = []
        for i in range(0, len(level), branching):
            group = level[i : i + branching]
            parent = _TreeNode(name=f"n{serial:05d}", children=group)
            serial += 1
            merged: Counter = Counter()
            for child in group:
                merged += counts[child.name]
            counts[parent.name] = merged
            top = sorted(merged.items(), key=lambda kv: (-kv[1], kv[0]))[:summary_terms]
            parent.summary = " ".join(term for term, _ in top)
            parents.append(parent)
        level = parents
    return level[0]


def run_texthier(
    tree: _TreeNode,
    graph: LibraryGraph,
    queries: list[BenchQuery],
    config: BenchConfig,
    n: int,
) -> list[BenchRow]:
    """Greedy beam traversal; leaves peek at their description, the final
    top-k2 leaf shortlist charges full records.  No type or spec pruning."""
    costs = _record_costs(graph)
    rows = []
    for q in queries:
        tokens = 0
        inspected = 0
        beam = [tree]
        leaves: list[tuple[float, str]] = []
        while beam:
            frontier = [c for node in beam for c in node.children]
            if not frontier:
                # the root may itself be a leaf for tiny libraries
                frontier = [node for node in beam if node.tool is not None]
                beam = []
            scored = []
            for node in frontier:
                inspected += 1
                if node.tool is not None:
                    text = graph.node(node.tool).record.description
                    tokens += costs[node.tool][1]
                    leaves.append((lexical_score(q.subgoal.intent, text), node.tool))
                else:
                    tokens += len(node.summary.split())
                    scored.append((lexical_score(q.subgoal.intent, node.summary), node))
            if not scored:
                break
            scored.sort(key=lambda sn: (-sn[0], sn[1].name))
            beam = [node for _, node in scored[: config.branching]]
        leaves.sort(key=lambda st: (-st[0], st[1]))
        shortlist = leaves[: config.k2]
        tokens += sum(sum(costs[tid]) for _, tid in shortlist)
        rows.append(
            BenchRow("texthier", n, q.query_id, tokens, inspected, 0, 0, 0, 0, 0, inspected)
        )
    return rows


def run_tdr(
    graph: LibraryGraph, queries: list[BenchQuery], config: BenchConfig, n: int
) -> list[BenchRow]:
    rows = []
    for q in queries:
        trace = retrieve(graph, q.subgoal, k2=config.k2)
        ledger = trace.total_ledger()
        ticks = (
            ledger.unification_node_visits
            + len(trace.s1)
            + len(trace.s2)
            + len(trace.s3)
        )
        rows.append(
            BenchRow(
                "tdr",
                n,
                q.query_id,
                ledger.total_tokens,
                ledger.total_scorer_calls,
                ledger.unification_node_visits,
                len(trace.s1),
                len(trace.s2),
                len(trace.s3),
                len(trace.s4),
                ticks,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# sweep, fits, report


def run_bench(config: BenchConfig) -> list[BenchRow]:
    rows: list[BenchRow] = []
    for n in config.sizes:
        graph = generate_library(config, n)
        queries = generate_queries(config, n)
        tree = build_text_hierarchy(graph, config.branching, config.summary_terms)
        rows.extend(run_flat(graph, queries, n))
        rows.extend(run_texthier(tree, graph, queries, config, n))
        rows.extend(run_tdr(graph, queries, config, n))
    return rows


def write_rows(rows: list[BenchRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.substrate, r.n, r.query_id, r.tokens, r.scorer_calls,
                 r.unify_visits, r.s1, r.s2, r.s3, r.s4]
            )


def mean_tokens_by_size(rows: list[BenchRow], substrate: str) -> dict[int, float]:
    by_n: dict[int, list[int]] = {}
    for r in rows:
        if r.substrate == substrate:
            by_n.setdefault(r.n, []).append(r.tokens)
    return {n: sum(v) / len(v) for n, v in sorted(by_n.items())}


def loglog_slope(points: dict[int, float]) -> float:
    """Least-squares slope of log(tokens) against log(n)."""
    if len(points) < 2:
        raise ValueError("need at least two sizes to fit a slope")
    xs = [math.log(n) for n in points]
    ys = [math.log(v) for v in points.values()]
    mx = sum(xs) / len(xs)
    my = sum(ys) / len(ys)
    num = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    den = sum((x - mx) ** 2 for x in xs)
    return num / den


def _alpha_hats(tdr_rows: list[BenchRow]) -> dict[str, float]:
    def ratio_mean(pairs: list[tuple[int, int]]) -> float:
        usable = [(a, b) for a, b in pairs if b]
        if not usable:
            return 0.0
        return sum(a / b for a, b in usable) / len(usable)

    return {
        "alpha1": ratio_mean([(r.s1, r.n) for r in tdr_rows]),
        "alpha2": ratio_mean([(r.s2, r.s1) for r in tdr_rows]),
        "alpha3": ratio_mean([(r.s3, r.s2) for r in tdr_rows]),
    }


def summarize(rows: list[BenchRow], config: BenchConfig) -> dict:
    """Fits, ratios, realized survival fractions, and the cascade-vs-flat
    cost bound.

    The tdr fit is reported twice: over the whole sweep, and over the sizes
    where the shortlist is saturated (full at alpha1 * n >= k2 and all
    in-cluster at alpha1 * n >= clusters * k2).  Below saturation the
    shortlist itself grows with n, so per-query cost climbs with the library;
    once it freezes, only the L2 scan grows.  The headline realized fractions
    are read at the largest size for the same reason; the per-size table is
    kept alongside.  The cost-bound table covers every size where the cut
    binds, and its slack column should shrink toward zero as n grows.
    """
    summary: dict = {"sizes": sorted({r.n for r in rows})}
    means = {s: mean_tokens_by_size(rows, s) for s in ("flat", "texthier", "tdr")}
    summary["mean_tokens"] = means
    summary["slopes"] = {s: loglog_slope(m) for s, m in means.items() if len(m) >= 2}
    cut_binds = [n for n in means["tdr"] if config.alpha1 * n >= config.k2]
    saturated_sizes = [
        n for n in cut_binds if config.alpha1 * n >= config.clusters * config.k2
    ]
    if len(saturated_sizes) >= 2:
        summary["tdr_slope_saturated"] = loglog_slope(
            {n: means["tdr"][n] for n in saturated_sizes}
        )
        summary["saturated_sizes"] = sorted(saturated_sizes)
    n_max = max(summary["sizes"])
    summary["ratios_at_max"] = {
        "flat_over_tdr": means["flat"][n_max] / means["tdr"][n_max],
        "texthier_over_tdr": means["texthier"][n_max] / means["tdr"][n_max],
        "flat_over_texthier": means["flat"][n_max] / means["texthier"][n_max],
    }
    tdr_rows = [r for r in rows if r.substrate == "tdr"]
    by_size = {
        n: _alpha_hats([r for r in tdr_rows if r.n == n])
        for n in summary["sizes"]
    }
    summary["alpha_hat_by_size"] = by_size
    summary["alpha_hat"] = by_size[n_max]
    # cascade cost against the alpha1*alpha2-scaled flat cost: the excess
    # should shrink relative to flat as n grows past saturation
    bound = {}
    for n in cut_binds:
        a = by_size[n]
        scaled_flat = a["alpha1"] * a["alpha2"] * means["flat"][n]
        bound[n] = {
            "tdr": means["tdr"][n],
            "scaled_flat": scaled_flat,
            "slack_over_flat": (means["tdr"][n] - scaled_flat) / means["flat"][n],
        }
    summary["cost_bound"] = bound
    return summary


def format_report(summary: dict) -> str:
    lines = ["substrate cost summary", "======================"]
    lines.append("mean tokens per query by library size:")
    for substrate, means in summary["mean_tokens"].items():
        cells = "  ".join(f"{n}:{v:.1f}" for n, v in means.items())
        lines.append(f"  {substrate:9s} {cells}")
    lines.append("log-log slope (full sweep):")
    for substrate, slope in summary["slopes"].items():
        lines.append(f"  {substrate:9s} {slope:.4f}")
    if "tdr_slope_saturated" in summary:
        sizes = ",".join(str(s) for s in summary["saturated_sizes"])
        lines.append(
            f"  tdr (k2-saturated sizes {sizes}): {summary['tdr_slope_saturated']:.4f}"
        )
    ratios = summary["ratios_at_max"]
    lines.append("token ratios at the largest size:")
    lines.append(f"  flat/tdr      {ratios['flat_over_tdr']:.2f}")
    lines.append(f"  texthier/tdr  {ratios['texthier_over_tdr']:.2f}")
    lines.append(f"  flat/texthier {ratios['flat_over_texthier']:.2f}")
    lines.append("realized survival fractions by size:")
    for n, a in summary["alpha_hat_by_size"].items():
        lines.append(
            f"  n={n:<5d} alpha1={a['alpha1']:.4f} "
            f"alpha2={a['alpha2']:.4f} alpha3={a['alpha3']:.4f}"
        )
    a = summary["alpha_hat"]
    lines.append(
        f"headline fractions (largest size): alpha1={a['alpha1']:.4f} "
        f"alpha2={a['alpha2']:.4f} alpha3={a['alpha3']:.4f}"
    )
    if summary.get("cost_bound"):
        lines.append("cascade cost vs alpha1*alpha2-scaled flat cost:")
        for n, b in summary["cost_bound"].items():
            lines.append(
                f"  n={n:<5d} tdr={b['tdr']:.1f} scaled_flat={b['scaled_flat']:.1f} "
                f"slack/flat={b['slack_over_flat']:+.4f}"
            )
    return "\n".join(lines) + "\n"
