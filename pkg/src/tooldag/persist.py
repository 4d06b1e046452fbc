"""Canonical text serialization for tool libraries, plus DOT export.

The format is line-oriented: each line is a keyword followed by one JSON
payload, so arbitrary text in descriptions, tags, or spec atoms never breaks
the framing.  Tools are written in Kahn topological order (children before
parents, ties by id) with their stored depth, and the loader replays them
through the normal insert pipeline, so every invariant the graph enforces at
build time is re-checked at load time.  Saving a loaded graph reproduces the
input byte for byte.

Version counters are deliberately not persisted: a loaded graph starts a
fresh mutation history.
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

from .graph import (
    Added,
    BodyCall,
    LibraryGraph,
    Literal,
    Param,
    ResultRef,
    ToolNode,
    ToolSpec,
    make_composite,
    make_primitive,
)
from .typesys import SubtypeLattice, format_signature, parse_signature

FORMAT_HEADER = "toolgraph-v1"


class ParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class CycleInFile(ValueError):
    def __init__(self, tool_id: str, detail: str = ""):
        super().__init__(f"{tool_id}: {detail}" if detail else tool_id)
        self.tool_id = tool_id


class DepthMismatch(ValueError):
    def __init__(self, tool_id: str, stored: int, computed: int):
        super().__init__(f"{tool_id}: stored depth {stored}, computed {computed}")
        self.tool_id = tool_id
        self.stored = stored
        self.computed = computed


# ---------------------------------------------------------------------------
# writing


def _j(value) -> str:
    return json.dumps(value, ensure_ascii=True)


def _arg_text(arg) -> str:
    if isinstance(arg, Param):
        return f"${arg.index}"
    if isinstance(arg, ResultRef):
        return f"%{arg.index}"
    return str(arg.value)


def topological_ids(graph: LibraryGraph) -> list[str]:
    """Kahn order, children before parents, smallest id first among ready."""
    import heapq

    pending = {tid: set(node.children) for tid, node in graph.nodes.items()}
    dependents: dict[str, list[str]] = {tid: [] for tid in graph.nodes}
    for tid, kids in pending.items():
        for kid in kids:
            dependents[kid].append(tid)
    ready = [tid for tid, kids in pending.items() if not kids]
    heapq.heapify(ready)
    order = []
    while ready:
        tid = heapq.heappop(ready)
        order.append(tid)
        for parent in dependents[tid]:
            pending[parent].discard(tid)
            if not pending[parent]:
                heapq.heappush(ready, parent)
    if len(order) != len(graph.nodes):
        leftover = sorted(set(graph.nodes) - set(order))[0]
        raise CycleInFile(leftover, "graph contains a dependency cycle")
    return order


def tool_block(node: ToolNode) -> list[str]:
    rec = node.record
    lines = [f"tool {_j(node.id)}"]
    lines.append(f"kind {_j(node.kind)}")
    lines.append(f"sig {_j(format_signature(rec.signature))}")
    lines.append(f"desc {_j(rec.description)}")
    lines.append(f"tags {_j(list(rec.tags))}")
    if rec.spec.structured:
        lines.append(f"pre {_j(list(rec.spec.pre))}")
        lines.append(f"post {_j(rec.spec.post)}")
        lines.append(f"complexity {_j(rec.spec.complexity)}")
    else:
        lines.append(f"spec {_j(rec.spec.text)}")
    for inp, out in rec.examples:
        lines.append(f"ex {_j([inp, out])}")
    for call in node.body:
        lines.append(f"call {_j([call.tool, [_arg_text(a) for a in call.args]])}")
    lines.append(f"depth {_j(node.depth)}")
    lines.append("end")
    return lines


def dumps_library(graph: LibraryGraph) -> str:
    lines = [FORMAT_HEADER]
    lines.append(f"bases {_j(sorted(graph.bases))}")
    for name, arity in sorted(graph.ctor_arities.items()):
        lines.append(f"ctor {_j([name, arity])}")
    for sub, sup in sorted(graph.lattice.edges):
        lines.append(f"sub {_j([sub, sup])}")
    for weak, strong in sorted(graph.entailment):
        lines.append(f"ent {_j([weak, strong])}")
    for tid in topological_ids(graph):
        lines.append("")
        lines.extend(tool_block(graph.node(tid)))
    return "\n".join(lines) + "\n"


def save_library(graph: LibraryGraph, path: str | Path) -> None:
    Path(path).write_text(dumps_library(graph))


# ---------------------------------------------------------------------------
# reading


def _parse_arg(text: str, line_no: int):
    if text.startswith("$"):
        return Param(int(text[1:]))
    if text.startswith("%"):
        return ResultRef(int(text[1:]))
    try:
        return Literal(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise ParseError(line_no, f"bad call argument {text!r}: {exc}") from None


def _payload(line: str, line_no: int) -> tuple[str, object]:
    keyword, _, rest = line.partition(" ")
    if not rest:
        raise ParseError(line_no, f"keyword {keyword!r} is missing its payload")
    try:
        return keyword, json.loads(rest)
    except json.JSONDecodeError as exc:
        raise ParseError(line_no, f"bad JSON payload: {exc}") from None


class _BlockReader:
    """One tool block: collects keyword payloads and builds a ToolNode."""

    def __init__(self, tool_id: str, start_line: int):
        self.tool_id = tool_id
        self.start_line = start_line
        self.fields: dict[str, object] = {}
        self.examples: list[tuple[str, str]] = []
        self.calls: list[BodyCall] = []

    def feed(self, keyword: str, payload: object, line_no: int) -> None:
        if keyword == "ex":
            inp, out = payload
            self.examples.append((str(inp), str(out)))
        elif keyword == "call":
            tool, args = payload
            self.calls.append(
                BodyCall(str(tool), tuple(_parse_arg(str(a), line_no) for a in args))
            )
        elif keyword in self.fields:
            raise ParseError(line_no, f"duplicate field {keyword!r} in tool block")
        else:
            self.fields[keyword] = payload

    def _require(self, keyword: str):
        if keyword not in self.fields:
            raise ParseError(self.start_line, f"tool {self.tool_id!r} lacks {keyword!r}")
        return self.fields[keyword]

    def build(self, ctor_arities: dict[str, int | None]) -> tuple[ToolNode, int]:
        kind = self._require("kind")
        sig = parse_signature(str(self._require("sig")), ctor_arities)
        desc = str(self._require("desc"))
        tags = tuple(str(t) for t in self._require("tags"))
        if "spec" in self.fields:
            spec = ToolSpec(None, "", "", str(self.fields["spec"]))
        else:
            spec = ToolSpec(
                tuple(str(a) for a in self._require("pre")),
                str(self._require("post")),
                str(self._require("complexity")),
            )
        depth = int(self._require("depth"))
        examples = tuple(self.examples)
        if kind == "primitive":
            if self.calls:
                raise ParseError(self.start_line, f"primitive {self.tool_id!r} has calls")
            return make_primitive(self.tool_id, sig, desc, tags, spec, examples), depth
        if kind != "composite":
            raise ParseError(self.start_line, f"unknown kind {kind!r}")
        return (
            make_composite(self.tool_id, sig, tuple(self.calls), desc, tags, spec, examples),
            depth,
        )


def loads_library(text: str) -> LibraryGraph:
    lines = text.split("\n")
    if not lines or lines[0] != FORMAT_HEADER:
        raise ParseError(1, f"expected header {FORMAT_HEADER!r}")
    bases: list[str] = []
    ctors: dict[str, int | None] = {}
    sub_edges: set[tuple[str, str]] = set()
    entailment: set[tuple[str, str]] = set()
    blocks: list[tuple[_BlockReader, int]] = []
    current: _BlockReader | None = None

    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line == "end":
            if current is None:
                raise ParseError(line_no, "'end' outside a tool block")
            blocks.append((current, line_no))
            current = None
            continue
        keyword, payload = _payload(line, line_no)
        if keyword == "tool":
            if current is not None:
                raise ParseError(line_no, "previous tool block was not closed with 'end'")
            current = _BlockReader(str(payload), line_no)
        elif current is not None:
            current.feed(keyword, payload, line_no)
        elif keyword == "bases":
            bases = [str(b) for b in payload]
        elif keyword == "ctor":
            name, arity = payload
            ctors[str(name)] = None if arity is None else int(arity)
        elif keyword == "sub":
            a, b = payload
            sub_edges.add((str(a), str(b)))
        elif keyword == "ent":
            a, b = payload
            entailment.add((str(a), str(b)))
        else:
            raise ParseError(line_no, f"unknown header keyword {keyword!r}")
    if current is not None:
        raise ParseError(len(lines), f"unterminated tool block {current.tool_id!r}")

    graph = LibraryGraph(
        lattice=SubtypeLattice(sub_edges),
        bases=set(bases),
        ctor_arities=ctors or None,
        entailment=entailment,
    )
    declared = {reader.tool_id for reader, _ in blocks}
    for reader, end_line in blocks:
        node, stored_depth = reader.build(graph.ctor_arities)
        for child in node.children:
            if child not in graph:
                if child in declared:
                    raise CycleInFile(
                        reader.tool_id,
                        f"calls {child!r} before it is defined; file is not topological",
                    )
                raise ParseError(end_line, f"{reader.tool_id!r} calls unknown tool {child!r}")
        outcome = graph.insert_tool(node)
        if not isinstance(outcome, Added):
            raise ParseError(
                end_line, f"tool {reader.tool_id!r} did not insert cleanly: {outcome}"
            )
        computed = graph.node(node.id).depth
        if computed != stored_depth:
            raise DepthMismatch(node.id, stored_depth, computed)
    return graph


def load_library(path: str | Path) -> LibraryGraph:
    return loads_library(Path(path).read_text())


def load_candidates(path: str | Path, graph: LibraryGraph) -> list[ToolNode]:
    """Tool blocks without a library header (depth optional), in file order,
    for batch CLI insertion.  Candidates are built, not validated; validation
    happens in insert_tool."""
    lines = Path(path).read_text().split("\n")
    current: _BlockReader | None = None
    built: list[ToolNode] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line == "end":
            if current is None:
                raise ParseError(line_no, "'end' outside a tool block")
            built.append(current.build(graph.ctor_arities)[0])
            current = None
            continue
        keyword, payload = _payload(line, line_no)
        if keyword == "tool":
            if current is not None:
                raise ParseError(line_no, "previous tool block was not closed with 'end'")
            current = _BlockReader(str(payload), line_no)
            current.fields["depth"] = 0
        elif current is not None:
            if keyword == "depth":
                current.fields["depth"] = payload
            else:
                current.feed(keyword, payload, line_no)
        else:
            raise ParseError(line_no, f"unexpected content outside tool block: {line!r}")
    if current is not None:
        raise ParseError(len(lines), f"unterminated tool block {current.tool_id!r}")
    if not built:
        raise ParseError(1, "no tool block found")
    return built


# ---------------------------------------------------------------------------
# DOT export


def export_dot(graph: LibraryGraph) -> str:
    """Graphviz digraph, parent -> child per body dependency, deduplicated.
    Composites render as boxes, primitives as ellipses."""
    lines = ["digraph toolgraph {", "  rankdir=BT;"]
    for tid in sorted(graph.nodes):
        node = graph.node(tid)
        shape = "box" if node.kind == "composite" else "ellipse"
        label = f"{tid}\\nd={node.depth} flat={graph.flat_size(tid)}"
        lines.append(f'  "{tid}" [shape={shape}, label="{label}"];')
    for parent, child in sorted(graph.edges):
        lines.append(f'  "{parent}" -> "{child}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
