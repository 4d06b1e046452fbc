"""Deterministic scorers for the retrieval cascade, plus the remote adapter.

The three scoring roles an LLM would normally play are implemented as pure
functions so every run is reproducible: a lexical relevance score over L2
(stage 2), a structured spec-compatibility verdict over L3 (stage 3), and a
worked-example fit score over L4 (stage 4).  ``RemoteScorer`` speaks the
newline-delimited JSON wire protocol for plugging a real model into the same
three stages; any timeout or malformed reply raises ``ScorerFailure``, which
aborts the episode while leaving the cost ledger intact.
"""

from __future__ import annotations

import json
import math
import socket
from collections import Counter
from dataclasses import dataclass

from .graph import COMPLEXITY_ORDER, ToolSpec, normalize_text
from .typesys import Signature, SubtypeLattice, subtype
from .values import ValueError_, parse_example_input, parse_value

SPEC_TEXT_THRESHOLD = 0.5  # lexical fallback gate for free-text L3


class ScorerFailure(Exception):
    def __init__(self, tool_id: str, detail: str = ""):
        super().__init__(f"scorer failed on {tool_id!r}: {detail}")
        self.tool_id = tool_id
        self.ledger = None  # retrieval attaches the partial ledger


def tokenize(text: str) -> list[str]:
    out: list[str] = []
    cur: list[str] = []
    for ch in text.lower():
        if ch.isalnum():
            cur.append(ch)
        elif cur:
            out.append("".join(cur))
            cur = []
    if cur:
        out.append("".join(cur))
    return out


def lexical_score(intent: str, description: str, tags: tuple[str, ...] = ()) -> float:
    """Term-frequency cosine between intent and description, plus 0.1 per tag
    that appears verbatim among the intent's tokens; clamped to [0, 1]."""
    a = Counter(tokenize(intent))
    b = Counter(tokenize(description))
    if a and b:
        dot = sum(a[t] * b[t] for t in a.keys() & b.keys())
        cos = dot / (
            math.sqrt(sum(v * v for v in a.values())) * math.sqrt(sum(v * v for v in b.values()))
        )
    else:
        cos = 0.0
    intent_tokens = set(tokenize(intent))
    bonus = 0.1 * sum(1 for tag in tags if tag.lower() in intent_tokens)
    return min(1.0, cos + bonus)


@dataclass(frozen=True)
class SpecVerdict:
    compatible: bool
    reason: str


def spec_compatible(
    spec: ToolSpec,
    facts: frozenset[str] | set[str],
    goal_effect: str,
    budget: str | None = None,
    entailment: set[tuple[str, str]] | None = None,
) -> SpecVerdict:
    """Deterministic L3 check, clauses in fixed order.

    (i) every pre-atom must appear among the sub-goal's facts; (ii) the post
    must entail the goal effect (normalized equality or a declared entailment
    pair; an empty goal effect is vacuous); (iii) the complexity class must
    not exceed the budget.  Free-text specs fall back to a lexical threshold.
    Adding facts can only flip incompatible -> compatible, never the reverse.
    """
    if budget is not None and budget not in COMPLEXITY_ORDER:
        raise ValueError(f"unknown complexity budget {budget!r}")
    if not spec.structured:
        score = lexical_score(goal_effect, spec.text or spec.post)
        if score >= SPEC_TEXT_THRESHOLD:
            return SpecVerdict(True, "free-text spec above lexical threshold")
        return SpecVerdict(False, f"free-text spec below threshold ({score:.2f})")
    known = {normalize_text(f) for f in facts}
    for atom in spec.pre or ():
        if normalize_text(atom) not in known:
            return SpecVerdict(False, f"missing pre-condition atom {atom!r}")
    effect = normalize_text(goal_effect)
    post = normalize_text(spec.post)
    if effect and post != effect and (post, effect) not in (entailment or set()):
        return SpecVerdict(False, f"post {spec.post!r} does not entail goal effect")
    if budget is not None:
        if COMPLEXITY_ORDER.index(spec.complexity) > COMPLEXITY_ORDER.index(budget):
            return SpecVerdict(False, f"complexity {spec.complexity} exceeds budget {budget}")
    return SpecVerdict(True, "pre-atoms covered, post entails effect, within budget")


def example_score(
    goal: Signature,
    examples: tuple[tuple[str, str], ...],
    lattice: SubtypeLattice,
) -> float:
    """Mean of two fractions over the worked examples: those whose input tuple
    matches the goal's inputs (arity and per-position parsed type usable where
    the goal expects it) and those whose output parses to a subtype of the
    goal's output.  No examples scores 0."""
    if not examples:
        return 0.0
    in_hits = 0
    out_hits = 0
    for input_text, output_text in examples:
        try:
            _, in_types = parse_example_input(input_text)
            _, out_type = parse_value(output_text)
        except ValueError_:
            continue
        if len(in_types) == len(goal.inputs) and all(
            subtype(t, g, lattice) for t, g in zip(in_types, goal.inputs)
        ):
            in_hits += 1
        if subtype(out_type, goal.output, lattice):
            out_hits += 1
    return (in_hits / len(examples) + out_hits / len(examples)) / 2


# ---------------------------------------------------------------------------
# remote adapter


class RemoteScorer:
    """Newline-delimited JSON client for the three scorer stages.

    Requests: ``{"stage": 2|3|4, "intent": ..., "payload": ..., "budget": ...}``
    one per line.  Stage 2/4 replies are ``{"score": <real>}``; stage 3
    replies are ``{"idx": ..., "verdict": "compatible"|"incompatible",
    "reason": ...}``.  Anything else, or a timeout, raises ScorerFailure.
    """

    def __init__(self, sock: socket.socket, timeout: float = 10.0):
        sock.settimeout(timeout)
        self._reader = sock.makefile("r", encoding="utf-8", newline="\n")
        self._writer = sock.makefile("w", encoding="utf-8", newline="\n")

    def _roundtrip(self, tool_id: str, request: dict) -> dict:
        try:
            self._writer.write(json.dumps(request, sort_keys=True) + "\n")
            self._writer.flush()
            line = self._reader.readline()
        except OSError as exc:
            raise ScorerFailure(tool_id, f"transport error: {exc}") from exc
        if not line:
            raise ScorerFailure(tool_id, "connection closed")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScorerFailure(tool_id, f"malformed reply: {line!r}") from exc
        if not isinstance(reply, dict):
            raise ScorerFailure(tool_id, f"malformed reply: {line!r}")
        return reply

    def _score_stage(self, stage: int, tool_id: str, intent: str, payload: str) -> float:
        reply = self._roundtrip(
            tool_id, {"stage": stage, "intent": intent, "payload": payload}
        )
        score = reply.get("score")
        if not isinstance(score, (int, float)):
            raise ScorerFailure(tool_id, f"stage-{stage} reply lacks a numeric score")
        return float(score)

    def score_description(self, tool_id: str, intent: str, payload: str) -> float:
        return self._score_stage(2, tool_id, intent, payload)

    def score_examples(self, tool_id: str, intent: str, payload: str) -> float:
        return self._score_stage(4, tool_id, intent, payload)

    def check_spec(
        self, tool_id: str, idx: int, intent: str, payload: str, budget: str | None
    ) -> SpecVerdict:
        request = {"stage": 3, "intent": intent, "payload": payload}
        if budget is not None:
            request["budget"] = budget
        reply = self._roundtrip(tool_id, request)
        if reply.get("idx") != idx or reply.get("verdict") not in ("compatible", "incompatible"):
            raise ScorerFailure(tool_id, f"bad stage-3 verdict object: {reply!r}")
        return SpecVerdict(reply["verdict"] == "compatible", str(reply.get("reason", "")))
