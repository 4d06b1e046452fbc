"""Typed staged retrieval over the tool DAG.

A sub-goal walks four progressively more expensive record levels:

  S0 = all tools
  S1 = signature unification survivors   (symbolic; zero token cost)
  S2 = top-k2 by L2 lexical relevance    (one scorer call per S1 member)
  S3 = L3 spec-compatibility survivors   (one verdict per S2 member)
  S4 = argmax of the L4 example score    (singleton, or empty when S3 is)

Each level charges the token cost of the records it had to read: level l
charges the sum of ``token_cost(record, l)`` over the *previous* level's
survivors.  The ledger also counts scorer calls per level and unification
node visits, and notes (without failing) any level whose charge exceeded the
per-call token window.

When S4 comes back empty the cascade may descend one level: it re-enters
against the children of the highest-L2-scoring composite that L3 rejected,
at most once per recursion and no deeper than the library's max depth.  Each
re-entry is its own trace with its own survivor sets and ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .graph import LibraryGraph, ToolRecord
from .scorers import ScorerFailure, example_score, lexical_score, spec_compatible
from .typesys import Signature, format_signature, format_type

DEFAULT_K2 = 32
DEFAULT_TOKEN_WINDOW = 4096


@dataclass(frozen=True)
class SubGoal:
    signature: Signature
    intent: str
    facts: frozenset[str] = frozenset()
    goal_effect: str = ""
    budget: str | None = None


def serialize_level(record: ToolRecord, level: int) -> str:
    """Canonical per-level text; token costs count its whitespace words."""
    if level == 1:
        deps = ", ".join(record.deps)
        return f"{format_signature(record.signature)} ; deps = [{deps}]"
    if level == 2:
        tags = ", ".join(record.tags)
        return f"{record.description} ; tags = [{tags}]"
    if level == 3:
        spec = record.spec
        if not spec.structured:
            return spec.text or spec.post
        pre = " ; ".join(spec.pre)
        return f"pre : {pre} post : {spec.post} complexity : {spec.complexity}"
    if level == 4:
        return " ; ".join(f"{i} -> {o}" for i, o in record.examples)
    raise ValueError(f"no level {level}")


def token_cost(record: ToolRecord, level: int) -> int:
    return len(serialize_level(record, level).split())


@dataclass
class CostLedger:
    """Per-episode accounting: charged tokens and scorer calls per level,
    plus L1 symbolic work.  Level 1 never charges tokens."""

    tokens: dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0, 3: 0, 4: 0})
    scorer_calls: dict[int, int] = field(default_factory=lambda: {2: 0, 3: 0, 4: 0})
    unification_node_visits: int = 0
    window_violations: list[tuple[int, int]] = field(default_factory=list)
    window: int = DEFAULT_TOKEN_WINDOW

    def charge(self, level: int, amount: int) -> None:
        self.tokens[level] += amount
        if amount > self.window:
            self.window_violations.append((level, amount))

    @property
    def total_tokens(self) -> int:
        return sum(self.tokens.values())

    @property
    def total_scorer_calls(self) -> int:
        return sum(self.scorer_calls.values())

    def add(self, other: "CostLedger") -> None:
        for level, amount in other.tokens.items():
            self.tokens[level] += amount
        for level, count in other.scorer_calls.items():
            self.scorer_calls[level] += count
        self.unification_node_visits += other.unification_node_visits
        self.window_violations.extend(other.window_violations)


@dataclass
class CascadeTrace:
    subgoal: SubGoal
    s1: tuple[str, ...]
    s2: tuple[str, ...]
    s3: tuple[str, ...]
    s4: tuple[str, ...]
    winner: str | None
    winner_features: dict | None
    ledger: CostLedger
    l2_scores: dict[str, float]
    descent: "CascadeTrace | None" = None

    def final_winner(self) -> str | None:
        if self.winner is not None:
            return self.winner
        return self.descent.final_winner() if self.descent else None

    def total_ledger(self) -> CostLedger:
        total = CostLedger(window=self.ledger.window)
        entry: CascadeTrace | None = self
        while entry is not None:
            total.add(entry.ledger)
            entry = entry.descent
        return total

    def entries(self) -> list["CascadeTrace"]:
        out: list[CascadeTrace] = []
        entry: CascadeTrace | None = self
        while entry is not None:
            out.append(entry)
            entry = entry.descent
        return out

    def to_lines(self) -> list[str]:
        lines = [f"goal {format_signature(self.subgoal.signature)} intent {self.subgoal.intent!r}"]
        survivors = (self.s1, self.s2, self.s3, self.s4)
        for level, ids in enumerate(survivors, start=1):
            lines.append(
                f"L{level} survivors={len(ids)} tokens={self.ledger.tokens[level]} "
                f"calls={self.ledger.scorer_calls.get(level, 0)} ids={','.join(ids)}"
            )
        lines.append(
            f"winner={self.winner or '-'} unify_visits={self.ledger.unification_node_visits}"
        )
        if self.descent:
            lines.append("descend")
            lines.extend("  " + l for l in self.descent.to_lines())
        return lines


# ---------------------------------------------------------------------------
# stages


def l1_filter(
    graph: LibraryGraph,
    subgoal: SubGoal,
    ledger: CostLedger,
    input_mode: str = "contravariant",
    universe: set[str] | None = None,
) -> list[str]:
    """Signature survivors in tool-id order; free of token charges."""
    ids, visits = graph.index.lookup(subgoal.signature, graph.lattice, input_mode)
    ledger.unification_node_visits += visits
    if universe is not None:
        ids = [i for i in ids if i in universe]
    return ids


def l2_rank(
    graph: LibraryGraph,
    subgoal: SubGoal,
    s1: list[str],
    ledger: CostLedger,
    k2: int = DEFAULT_K2,
    scorer=None,
) -> tuple[list[str], dict[str, float]]:
    """Score every S1 member once, keep the top k2 (score desc, id asc)."""
    charge = 0
    scores: dict[str, float] = {}
    for tid in s1:
        record = graph.node(tid).record
        charge += token_cost(record, 2)
        if scorer is None:
            score = lexical_score(subgoal.intent, record.description, record.tags)
        else:
            score = scorer(tid, subgoal.intent, serialize_level(record, 2))
        scores[tid] = score
    ledger.charge(2, charge)
    ledger.scorer_calls[2] += len(s1)
    ranked = sorted(s1, key=lambda t: (-scores[t], t))
    return ranked[:k2], scores


def l3_filter(
    graph: LibraryGraph,
    subgoal: SubGoal,
    s2: list[str],
    ledger: CostLedger,
    checker=None,
) -> list[str]:
    """Keep S2 members (order preserved) whose spec the checker accepts."""
    survivors = []
    charge = 0
    for idx, tid in enumerate(s2):
        record = graph.node(tid).record
        charge += token_cost(record, 3)
        if checker is None:
            verdict = spec_compatible(
                record.spec,
                subgoal.facts,
                subgoal.goal_effect,
                subgoal.budget,
                graph.entailment,
            )
        else:
            verdict = checker(tid, idx, subgoal, serialize_level(record, 3))
        if verdict.compatible:
            survivors.append(tid)
    ledger.charge(3, charge)
    ledger.scorer_calls[3] += len(s2)
    return survivors


def l4_select(
    graph: LibraryGraph,
    subgoal: SubGoal,
    s3: list[str],
    ledger: CostLedger,
    scorer=None,
) -> str | None:
    """Argmax of the example score over S3; ties to the smallest id."""
    charge = 0
    best: tuple[float, str] | None = None
    for tid in s3:
        record = graph.node(tid).record
        charge += token_cost(record, 4)
        if scorer is None:
            score = example_score(subgoal.signature, record.examples, graph.lattice)
        else:
            score = scorer(tid, subgoal.intent, serialize_level(record, 4))
        if best is None or score > best[0] or (score == best[0] and tid < best[1]):
            best = (score, tid)
    ledger.charge(4, charge)
    ledger.scorer_calls[4] += len(s3)
    return best[1] if best else None


def _features(graph: LibraryGraph, tool_id: str) -> dict:
    node = graph.node(tool_id)
    return {
        "depth": node.depth,
        "children": node.children,
        "subgraph_size": graph.subgraph_size(tool_id),
    }


def retrieve(
    graph: LibraryGraph,
    subgoal: SubGoal,
    k2: int = DEFAULT_K2,
    input_mode: str = "contravariant",
    window: int = DEFAULT_TOKEN_WINDOW,
    l2_scorer=None,
    l3_checker=None,
    l4_scorer=None,
    descend: bool = True,
    universe: set[str] | None = None,
    _depth_budget: int | None = None,
) -> CascadeTrace:
    """Run the cascade for one sub-goal.  ScorerFailure propagates with the
    partial ledger attached; everything else is returned on the trace."""
    ledger = CostLedger(window=window)
    try:
        s1 = l1_filter(graph, subgoal, ledger, input_mode, universe)
        s2, l2_scores = l2_rank(graph, subgoal, s1, ledger, k2, l2_scorer)
        s3 = l3_filter(graph, subgoal, s2, ledger, l3_checker)
        winner = l4_select(graph, subgoal, s3, ledger, l4_scorer)
    except ScorerFailure as failure:
        failure.ledger = ledger
        raise
    trace = CascadeTrace(
        subgoal=subgoal,
        s1=tuple(s1),
        s2=tuple(s2),
        s3=tuple(s3),
        s4=(winner,) if winner else (),
        winner=winner,
        winner_features=_features(graph, winner) if winner else None,
        ledger=ledger,
        l2_scores=l2_scores,
    )
    if winner is None and descend:
        budget = graph.max_depth() if _depth_budget is None else _depth_budget
        rejected = [t for t in s2 if t not in s3 and graph.node(t).children]
        if rejected and budget > 0:
            target = max(rejected, key=lambda t: (l2_scores[t], t))
            trace.descent = retrieve(
                graph,
                subgoal,
                k2=k2,
                input_mode=input_mode,
                window=window,
                l2_scorer=l2_scorer,
                l3_checker=l3_checker,
                l4_scorer=l4_scorer,
                descend=True,
                universe=set(graph.node(target).children),
                _depth_budget=budget - 1,
            )
    return trace
