"""Deterministic scorers and the newline-delimited remote adapter."""

from __future__ import annotations

import json
import math
import random
import socket
import threading

import pytest

from tooldag.graph import ToolSpec
from tooldag.scorers import (
    RemoteScorer,
    ScorerFailure,
    SpecVerdict,
    example_score,
    lexical_score,
    spec_compatible,
    tokenize,
)
from tooldag.typesys import BaseType, Signature, default_lattice, parse_signature

LATTICE = default_lattice()


# ---------------------------------------------------------------------------
# lexical


def test_tokenize_lowercases_and_splits_on_non_alnum():
    assert tokenize("Sum a COLUMN, twice!") == ["sum", "a", "column", "twice"]


def test_lexical_identical_strings_score_one():
    assert lexical_score("sum two numbers", "sum two numbers") == pytest.approx(1.0)


def test_lexical_disjoint_vocabulary_scores_zero():
    assert lexical_score("alpha beta", "gamma delta") == 0.0
    assert lexical_score("", "anything") == 0.0


def test_lexical_prefers_the_on_topic_description():
    intent = "sum a column"
    on_topic = "Sum a numeric column over rows satisfying a predicate."
    off_topic = "Return the sum of two real numbers."
    assert lexical_score(intent, on_topic) > lexical_score(intent, off_topic)


def test_lexical_tag_bonus_and_clamp():
    base = lexical_score("filter rows quickly", "keep matching rows")
    with_tag = lexical_score("filter rows quickly", "keep matching rows", ("filter",))
    assert with_tag == pytest.approx(min(1.0, base + 0.1))
    assert lexical_score("same text", "same text", ("same", "text")) == 1.0


def test_lexical_core_is_symmetric():
    rng = random.Random("sym")
    words = ["sum", "rows", "column", "filter", "value", "table"]
    for _ in range(50):
        a = " ".join(rng.choices(words, k=rng.randint(1, 6)))
        b = " ".join(rng.choices(words, k=rng.randint(1, 6)))
        assert lexical_score(a, b) == pytest.approx(lexical_score(b, a))


def test_lexical_hand_computed_cosine():
    # intent {a, b}, description {a, c}: cos = 1 / (sqrt(2) * sqrt(2))
    assert lexical_score("alpha beta", "alpha gamma") == pytest.approx(0.5)
    assert lexical_score("alpha alpha", "alpha") == pytest.approx(1.0)
    assert lexical_score("alpha beta", "alpha beta gamma") == pytest.approx(
        2 / (math.sqrt(2) * math.sqrt(3))
    )


# ---------------------------------------------------------------------------
# spec checker


def test_spec_compatible_trivial_accept():
    spec = ToolSpec((), "returns the sum", "O(1)")
    verdict = spec_compatible(spec, set(), "returns the sum")
    assert verdict.compatible


def test_spec_missing_pre_atom_names_it():
    spec = ToolSpec(("input-is-list",), "returns the sum", "O(n)")
    verdict = spec_compatible(spec, {"finite-args"}, "returns the sum")
    assert not verdict.compatible
    assert "input-is-list" in verdict.reason


def test_spec_post_must_entail_effect():
    spec = ToolSpec((), "returns a * b", "O(1)")
    assert not spec_compatible(spec, set(), "returns a + b").compatible
    # empty goal effect is vacuous
    assert spec_compatible(spec, set(), "").compatible
    # a declared entailment pair bridges different strings
    assert spec_compatible(
        spec, set(), "returns a product",
        entailment={("returns a * b", "returns a product")},
    ).compatible


def test_spec_complexity_budget():
    spec = ToolSpec((), "returns rows", "O(n^2)")
    assert not spec_compatible(spec, set(), "returns rows", budget="O(n)").compatible
    assert spec_compatible(spec, set(), "returns rows", budget="O(n^2)").compatible
    assert spec_compatible(spec, set(), "returns rows", budget=None).compatible


def test_spec_unknown_budget_raises():
    with pytest.raises(ValueError):
        spec_compatible(ToolSpec((), "x", "O(1)"), set(), "x", budget="O(n!)")


def test_spec_free_text_fallback_uses_lexical_threshold():
    loose = ToolSpec(None, "", "O(1)", text="sums the requested column values")
    verdict = spec_compatible(loose, set(), "sums the requested column values")
    assert verdict.compatible
    far = ToolSpec(None, "", "O(1)", text="rotates an image by ninety degrees")
    assert not spec_compatible(far, set(), "sums the requested column values").compatible


def test_spec_normalization_is_case_and_space_insensitive():
    spec = ToolSpec(("Finite-Args",), "Returns  A + B", "O(1)")
    verdict = spec_compatible(spec, {"finite-args"}, "returns a + b")
    assert verdict.compatible


def test_spec_monotone_in_facts():
    rng = random.Random("facts")
    atoms = [f"atom-{i}" for i in range(6)]
    for _ in range(200):
        pre = tuple(rng.sample(atoms, rng.randint(0, 3)))
        spec = ToolSpec(pre, "returns x", "O(1)")
        facts = set(rng.sample(atoms, rng.randint(0, 4)))
        before = spec_compatible(spec, facts, "returns x").compatible
        grown = facts | set(rng.sample(atoms, rng.randint(0, 3)))
        after = spec_compatible(spec, grown, "returns x").compatible
        assert after >= before  # adding facts never flips accept -> reject


# ---------------------------------------------------------------------------
# example scorer


def test_example_score_full_match_is_one():
    goal = parse_signature("(int, float) -> float")
    assert example_score(goal, (("(3, 4.0)", "12.0"),), LATTICE) == 1.0


def test_example_score_input_shape_breaks_ties():
    goal = parse_signature("(int, float) -> float")
    unit_price = (("(3, 4.0)", "12.0"), ("(2, 1.5)", "3.0"))
    plain_mul = (("(3.0, 4.0)", "12.0"), ("(-1.5, 2.0)", "-3.0"))
    assert example_score(goal, unit_price, LATTICE) > example_score(goal, plain_mul, LATTICE)
    # output halves still match, so the loser sits at exactly one half
    assert example_score(goal, plain_mul, LATTICE) == 0.5


def test_example_score_arity_mismatch_caps_at_half():
    goal = parse_signature("(float, float) -> float")
    examples = (("(1.0)", "2.0"), ("(3.0)", "4.0"))
    assert example_score(goal, examples, LATTICE) <= 0.5


def test_example_score_int_examples_serve_float_goal():
    goal = parse_signature("(float) -> float")
    assert example_score(goal, (("(3)", "4"),), LATTICE) == 1.0


def test_example_score_skips_unparseable_and_empty():
    goal = parse_signature("(float) -> float")
    assert example_score(goal, (("(oops", "3.0"), ("(1.0)", "2.0")), LATTICE) == 0.5
    assert example_score(goal, (), LATTICE) == 0.0


# ---------------------------------------------------------------------------
# remote adapter


def serve(handler):
    """One fake scorer endpoint; returns the client socket."""
    server, client = socket.socketpair()
    reader = server.makefile("r", encoding="utf-8", newline="\n")
    writer = server.makefile("w", encoding="utf-8", newline="\n")

    def run():
        for line in reader:
            reply = handler(json.loads(line))
            if reply is None:
                break
            writer.write(reply if isinstance(reply, str) else json.dumps(reply))
            writer.write("\n")
            writer.flush()
        server.close()

    threading.Thread(target=run, daemon=True).start()
    return client


def test_remote_score_stages():
    seen = []

    def handler(req):
        seen.append(req)
        return {"score": 0.25 * req["stage"]}

    scorer = RemoteScorer(serve(handler), timeout=5.0)
    assert scorer.score_description("t1", "intent", "payload") == pytest.approx(0.5)
    assert scorer.score_examples("t1", "intent", "payload") == pytest.approx(1.0)
    assert seen[0]["stage"] == 2 and seen[1]["stage"] == 4
    assert seen[0]["payload"] == "payload"


def test_remote_check_spec_roundtrip():
    def handler(req):
        assert req["stage"] == 3
        assert req["budget"] == "O(n)"
        return {"idx": 7, "verdict": "incompatible", "reason": "over budget"}

    scorer = RemoteScorer(serve(handler), timeout=5.0)
    verdict = scorer.check_spec("t1", 7, "intent", "payload", "O(n)")
    assert verdict == SpecVerdict(False, "over budget")


def test_remote_check_spec_idx_mismatch_fails():
    scorer = RemoteScorer(
        serve(lambda req: {"idx": 99, "verdict": "compatible", "reason": ""}), timeout=5.0
    )
    with pytest.raises(ScorerFailure):
        scorer.check_spec("t1", 7, "intent", "payload", None)


def test_remote_malformed_reply_fails():
    scorer = RemoteScorer(serve(lambda req: "this is not json"), timeout=5.0)
    with pytest.raises(ScorerFailure, match="malformed"):
        scorer.score_description("t1", "intent", "payload")


def test_remote_missing_score_fails():
    scorer = RemoteScorer(serve(lambda req: {"verdict": "compatible"}), timeout=5.0)
    with pytest.raises(ScorerFailure, match="score"):
        scorer.score_examples("t1", "intent", "payload")


def test_remote_closed_connection_fails():
    scorer = RemoteScorer(serve(lambda req: None), timeout=5.0)
    with pytest.raises(ScorerFailure, match="closed"):
        scorer.score_description("t1", "intent", "payload")
