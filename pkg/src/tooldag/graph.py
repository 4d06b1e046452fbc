"""The compositional tool library: a DAG of tools with four-level records.

Nodes are tools; a directed edge (parent, child) means the parent's body
invokes the child.  Primitives have empty bodies and depth 0; a composite's
depth is 1 + the max depth over its *distinct* children, while its flat size
(primitive leaves of the recursive expansion) counts children with the
multiplicity of its body call sequence.  ``saved_calls`` (flat size minus one)
is the invocation-savings credit the reward module pays per call.

Insertion is a validate-then-commit pipeline: record well-formedness, child
existence, spec-composition (each body call's pre-atoms must be covered by
the composite's own pre-atoms plus the posts of earlier calls), acyclicity,
and near-duplicate detection.  Rejections return an outcome with a reason and
leave the graph bit-identical; they never raise.

Writes are serialized by a lock and publish a new version number only at
commit; readers see either the old or the new version.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .typesys import (
    Signature,
    SignatureIndex,
    SubtypeLattice,
    alpha_equivalent,
    default_lattice,
    format_signature,
)

COMPLEXITY_ORDER = ("O(1)", "O(log n)", "O(n)", "O(n log n)", "O(n^2)")


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class ToolSpec:
    """Level-3 behavioral spec: pre-condition atoms, a post effect descriptor,
    and a complexity class.  ``pre=None`` marks a free-text spec (accepted,
    but retrieval can only check it through the lexical fallback)."""

    pre: tuple[str, ...] | None
    post: str
    complexity: str
    text: str = ""

    @property
    def structured(self) -> bool:
        return self.pre is not None

    def normalized(self) -> tuple:
        pre = None if self.pre is None else tuple(sorted({normalize_text(a) for a in self.pre}))
        return (pre, normalize_text(self.post), self.complexity, normalize_text(self.text))


@dataclass(frozen=True)
class ToolRecord:
    """Four-level record: L1 typed signature + dependency names, L2 intent
    description + tags, L3 spec, L4 worked examples as (input, output) text."""

    signature: Signature
    deps: tuple[str, ...]
    description: str
    tags: tuple[str, ...]
    spec: ToolSpec
    examples: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class Param:
    index: int


@dataclass(frozen=True)
class ResultRef:
    index: int


@dataclass(frozen=True)
class Literal:
    value: Fraction


BodyArg = Param | ResultRef | Literal


@dataclass(frozen=True)
class BodyCall:
    tool: str
    args: tuple[BodyArg, ...]


@dataclass(frozen=True)
class ToolNode:
    id: str
    kind: str  # "primitive" | "composite"
    record: ToolRecord
    children: tuple[str, ...]  # body-order multiset
    body: tuple[BodyCall, ...]
    depth: int = 0
    created_version: int = 0


class RejectReason(enum.Enum):
    MISSING_CHILD = "MissingChild"
    SPEC_FAILURE = "SpecFailure"
    CYCLE = "Cycle"
    MALFORMED_RECORD = "MalformedRecord"


@dataclass(frozen=True)
class Added:
    id: str


@dataclass(frozen=True)
class Merged:
    into: str
    appended_examples: int


@dataclass(frozen=True)
class Rejected:
    reason: RejectReason
    detail: str = ""


InsertOutcome = Added | Merged | Rejected


class UnknownTool(KeyError):
    pass


def make_primitive(
    id: str,
    signature: Signature,
    description: str,
    tags: tuple[str, ...],
    spec: ToolSpec,
    examples: tuple[tuple[str, str], ...],
) -> ToolNode:
    record = ToolRecord(signature, (), description, tags, spec, examples)
    return ToolNode(id, "primitive", record, (), ())


def make_composite(
    id: str,
    signature: Signature,
    body: tuple[BodyCall, ...],
    description: str,
    tags: tuple[str, ...],
    spec: ToolSpec,
    examples: tuple[tuple[str, str], ...],
) -> ToolNode:
    children = tuple(c.tool for c in body)
    deps: list[str] = []
    for c in children:
        if c not in deps:
            deps.append(c)
    record = ToolRecord(signature, tuple(deps), description, tags, spec, examples)
    return ToolNode(id, "composite", record, children, body)


# ---------------------------------------------------------------------------
# graph


class LibraryGraph:
    def __init__(
        self,
        lattice: SubtypeLattice | None = None,
        bases: set[str] | None = None,
        ctor_arities: dict[str, int | None] | None = None,
        entailment: set[tuple[str, str]] | None = None,
    ):
        self.lattice = lattice if lattice is not None else default_lattice()
        self.bases: set[str] = set(bases or ())
        self.ctor_arities: dict[str, int | None] = dict(ctor_arities or {"list": 1})
        self.entailment = {
            (normalize_text(a), normalize_text(b)) for a, b in (entailment or set())
        }
        self.nodes: dict[str, ToolNode] = {}
        self.edges: set[tuple[str, str]] = set()
        self.index = SignatureIndex()
        self.version = 0
        self.rejections: list[tuple[str, RejectReason, str]] = []
        self._parents: dict[str, set[str]] = {}
        self._flat_cache: dict[str, int] = {}
        self._write_lock = threading.RLock()

    # -- queries ------------------------------------------------------------

    def __contains__(self, tool_id: str) -> bool:
        return tool_id in self.nodes

    def node(self, tool_id: str) -> ToolNode:
        try:
            return self.nodes[tool_id]
        except KeyError:
            raise UnknownTool(tool_id) from None

    def primitives(self) -> list[str]:
        return sorted(i for i, n in self.nodes.items() if n.kind == "primitive")

    def composites(self) -> list[str]:
        return sorted(i for i, n in self.nodes.items() if n.kind == "composite")

    def flat_size(self, tool_id: str) -> int:
        """Primitive leaves of the recursive expansion, counted with the body
        call sequence's multiplicity.  Memoized; the cache is dropped on every
        committed mutation."""
        cached = self._flat_cache.get(tool_id)
        if cached is not None:
            return cached
        node = self.node(tool_id)
        size = 1 if node.kind == "primitive" else sum(self.flat_size(c) for c in node.children)
        self._flat_cache[tool_id] = size
        return size

    def saved_calls(self, tool_id: str) -> int:
        return self.flat_size(tool_id) - 1

    def expand_to_primitives(self, tool_id: str) -> list[str]:
        """The primitive call sequence the tool stands for, in body order."""
        node = self.node(tool_id)
        if node.kind == "primitive":
            return [tool_id]
        out: list[str] = []
        for c in node.children:
            out.extend(self.expand_to_primitives(c))
        return out

    def subgraph_size(self, tool_id: str) -> int:
        """Distinct nodes reachable from the tool, itself included."""
        seen: set[str] = set()
        stack = [tool_id]
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(self.node(cur).children)
        return len(seen)

    def max_depth(self) -> int:
        return max((n.depth for n in self.nodes.values()), default=0)

    def check_acyclic(
        self, children: tuple[str, ...], candidate_id: str, visit_counter: list | None = None
    ) -> bool:
        """Would adding candidate_id -> children keep the graph acyclic?

        A cycle needs a path from some child back to the candidate, which is
        only possible when the candidate id is already present; fresh ids are
        accepted after a constant-time self-reference check.  DFS with early
        exit; visits are appended to ``visit_counter`` when given."""
        visits = 0
        if candidate_id in children:
            ok = False
        elif candidate_id not in self.nodes:
            ok = True
        else:
            seen: set[str] = set()
            stack = [c for c in set(children)]
            ok = True
            while stack:
                cur = stack.pop()
                if cur in seen:
                    continue
                seen.add(cur)
                visits += 1
                if cur == candidate_id:
                    ok = False
                    break
                stack.extend(self.node(cur).children if cur in self.nodes else ())
        if visit_counter is not None:
            visit_counter.append(visits + len(children))
        return ok

    # -- insertion ----------------------------------------------------------

    def validate_record(self, candidate: ToolNode) -> str | None:
        """Well-formedness; returns a fault description or None."""
        if not candidate.id or any(ch.isspace() for ch in candidate.id):
            return "empty or whitespace id"
        if candidate.kind not in ("primitive", "composite"):
            return f"unknown kind {candidate.kind!r}"
        rec = candidate.record
        if candidate.kind == "primitive":
            if candidate.children or candidate.body:
                return "primitive with children or body"
        else:
            if not candidate.body:
                return "composite with empty body"
            if tuple(c.tool for c in candidate.body) != candidate.children:
                return "children multiset disagrees with body call sequence"
        deps: list[str] = []
        for c in candidate.children:
            if c not in deps:
                deps.append(c)
        if set(rec.deps) != set(deps):
            return "l1 dependency list does not name the distinct children"
        if rec.spec.structured and rec.spec.complexity not in COMPLEXITY_ORDER:
            return f"unknown complexity class {rec.spec.complexity!r}"
        if len(rec.examples) < 2:
            return "fewer than two worked examples"
        arity = len(rec.signature.inputs)
        for i, call in enumerate(candidate.body):
            for arg in call.args:
                if isinstance(arg, Param) and not 0 <= arg.index < arity:
                    return f"call {i} references parameter {arg.index} outside arity {arity}"
                if isinstance(arg, ResultRef) and not 0 <= arg.index < i:
                    return f"call {i} references result {arg.index} before it exists"
        return None

    def _check_spec_composition(self, candidate: ToolNode) -> str | None:
        """Each call's pre-atoms must be covered by the candidate's own pre
        plus the post effects of earlier calls (normalized string match)."""
        established = {
            normalize_text(a) for a in (candidate.record.spec.pre or ())
        }
        for call in candidate.body:
            child_spec = self.nodes[call.tool].record.spec
            for atom in child_spec.pre or ():
                if normalize_text(atom) not in established:
                    return f"call to {call.tool!r} requires unestablished atom {atom!r}"
            established.add(normalize_text(child_spec.post))
        return None

    def dedup_decision(self, candidate: ToolNode) -> str | None:
        """The committed tool the candidate duplicates, or None.

        Duplicate iff signatures are alpha-equivalent, normalized L3 specs are
        equal, and every L4 input present in both example lists maps to the
        same output.  Ties broken by smallest tool id."""
        matches = []
        for other_id in self.index.equivalents(candidate.record.signature):
            other = self.nodes[other_id]
            if not alpha_equivalent(candidate.record.signature, other.record.signature):
                continue
            if candidate.record.spec.normalized() != other.record.spec.normalized():
                continue
            theirs = {
                normalize_text(i): normalize_text(o) for i, o in other.record.examples
            }
            agree = all(
                theirs.get(normalize_text(i), normalize_text(o)) == normalize_text(o)
                for i, o in candidate.record.examples
            )
            if agree:
                matches.append(other_id)
        return min(matches) if matches else None

    def insert_tool(self, candidate: ToolNode) -> InsertOutcome:
        """Atomic insert: validate, spec-check, cycle-check, dedup, commit.

        Never raises for a bad candidate; the outcome carries the reason and
        a failed insert leaves the graph (and its version) untouched."""
        with self._write_lock:
            fault = self.validate_record(candidate)
            if fault:
                return self._reject(candidate, RejectReason.MALFORMED_RECORD, fault)
            missing = [c for c in candidate.record.deps if c not in self.nodes]
            if missing:
                return self._reject(
                    candidate, RejectReason.MISSING_CHILD, f"unknown child {missing[0]!r}"
                )
            if candidate.kind == "composite":
                fault = self._check_spec_composition(candidate)
                if fault:
                    return self._reject(candidate, RejectReason.SPEC_FAILURE, fault)
            if not self.check_acyclic(candidate.children, candidate.id):
                return self._reject(
                    candidate, RejectReason.CYCLE, "candidate reachable from its own children"
                )
            target = self.dedup_decision(candidate)
            if target is not None:
                return self._merge(target, candidate)
            if candidate.id in self.nodes:
                return self._reject(
                    candidate,
                    RejectReason.MALFORMED_RECORD,
                    "id already committed with a different record",
                )
            return self._commit(candidate)

    def _reject(self, candidate: ToolNode, reason: RejectReason, detail: str) -> Rejected:
        self.rejections.append((candidate.id, reason, detail))
        return Rejected(reason, detail)

    def _merge(self, target_id: str, candidate: ToolNode) -> Merged:
        target = self.nodes[target_id]
        known = {normalize_text(i) for i, _ in target.record.examples}
        novel = tuple(
            (i, o) for i, o in candidate.record.examples if normalize_text(i) not in known
        )
        if novel:
            merged_record = replace(
                target.record, examples=target.record.examples + novel
            )
            self.nodes[target_id] = replace(target, record=merged_record)
            self.version += 1
        return Merged(target_id, len(novel))

    def _commit(self, candidate: ToolNode) -> Added:
        depth = (
            0
            if candidate.kind == "primitive"
            else 1 + max(self.nodes[c].depth for c in set(candidate.children))
        )
        self.version += 1
        node = replace(candidate, depth=depth, created_version=self.version)
        self.nodes[node.id] = node
        for c in set(node.children):
            self.edges.add((node.id, c))
            self._parents.setdefault(c, set()).add(node.id)
        self.index.insert(node.record.signature, node.id)
        self._flat_cache.clear()
        return Added(node.id)

    # -- summaries ----------------------------------------------------------

    def stats(self) -> dict:
        comps = self.composites()
        hist: dict[int, int] = {}
        for n in self.nodes.values():
            hist[n.depth] = hist.get(n.depth, 0) + 1
        fanout = (
            sum(len(self.nodes[c].children) for c in comps) / len(comps) if comps else 0.0
        )
        return {
            "tools": len(self.nodes),
            "primitives": len(self.primitives()),
            "composites": len(comps),
            "edges": len(self.edges),
            "version": self.version,
            "max_depth": self.max_depth(),
            "depth_histogram": dict(sorted(hist.items())),
            "mean_fanout_composites": fanout,
            "rejections": len(self.rejections),
        }

    def describe(self, tool_id: str) -> str:
        n = self.node(tool_id)
        return (
            f"{n.id} [{n.kind}, depth {n.depth}] {format_signature(n.record.signature)} "
            f"flat={self.flat_size(tool_id)}"
        )
