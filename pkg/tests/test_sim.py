"""Simulator pieces: task generation, exact execution, windowed sub-goals,
the tabular policy, rollouts, the abstraction teacher, and policy updates."""

from __future__ import annotations

import random
from fractions import Fraction

import pytest

from tooldag.fixtures import FINITE, NONNEG_EXP, NONZERO
from tooldag.graph import UnknownTool
from tooldag.retrieval import CostLedger
from tooldag.reward import ToolCall, Trajectory
from tooldag.sim import (
    ArityMismatch,
    DivisionByZero,
    DomainError,
    OpStep,
    PolicyTable,
    RolloutResult,
    SimConfig,
    Task,
    abstract_composites,
    coevolve,
    execute_tool,
    generate_motifs,
    generate_tasks,
    grpo_step,
    rollout,
    subgoal_template,
    window_subgoal,
)
from tooldag.typesys import erased_key, format_signature

F = Fraction


def chain_value(start, steps):
    # independent evaluator: apply each op to the running value
    ops = {
        "add": lambda a, c: a + c,
        "sub": lambda a, c: a - c,
        "mul": lambda a, c: a * c,
        "div": lambda a, c: a / c,
        "pow_int": lambda a, c: a ** int(c),
        "neg": lambda a, c: -a,
    }
    acc = start
    for step in steps:
        acc = ops[step.op](acc, step.const)
    return acc


# ---------------------------------------------------------------------------
# tasks


def test_tasks_are_deterministic_for_a_seed():
    assert generate_tasks(25, 0) == generate_tasks(25, 0)
    assert generate_tasks(25, 0) != generate_tasks(25, 1)


def test_task_oracles_recompute_exactly():
    for task in generate_tasks(100, 42):
        assert isinstance(task.oracle, Fraction)
        assert chain_value(task.start, task.steps) == task.oracle


def test_task_lengths_respect_depth_range():
    tasks = generate_tasks(60, 3, depth_range=(2, 5))
    assert {len(t.steps) for t in tasks} <= {2, 3, 4, 5}


def test_task_constants_stay_in_domain():
    for task in generate_tasks(200, 9):
        for step in task.steps:
            if step.op == "div":
                assert step.const != 0
            if step.op == "pow_int":
                assert step.const >= 0 and step.const.denominator == 1
            if step.op == "neg":
                assert step.const is None


def test_bad_depth_range_rejected():
    with pytest.raises(ValueError):
        generate_motifs(4, 0, depth_range=(0, 3))
    with pytest.raises(ValueError):
        generate_tasks(4, 0, depth_range=(3, 2))


# ---------------------------------------------------------------------------
# execution


def test_execute_primitives(arith):
    assert execute_tool(arith, "add", (F(1), F(2))) == F(3)
    assert execute_tool(arith, "div", (F(1), F(3))) == F(1, 3)
    assert execute_tool(arith, "neg", (F(-5, 2),)) == F(5, 2)
    assert execute_tool(arith, "pow_int", (F(2, 3), F(2))) == F(4, 9)


def test_execute_quadratic_frozen(quad_graph):
    assert execute_tool(quad_graph, "quadratic_expr", (F(1), F(-3), F(2), F(2))) == 0
    assert execute_tool(quad_graph, "quadratic_expr", (F(2), F(0), F(-1), F(3))) == 17


def test_execute_composite_matches_closed_form(quad_graph):
    rng = random.Random(5)
    for _ in range(50):
        a, b, c, x = (F(rng.randint(-8, 8), rng.choice((1, 2, 3))) for _ in range(4))
        got = execute_tool(quad_graph, "quadratic_expr", (a, b, c, x))
        assert got == a * x * x + b * x + c


def test_execute_errors(quad_graph):
    with pytest.raises(DivisionByZero):
        execute_tool(quad_graph, "div", (F(1), F(0)))
    with pytest.raises(ArityMismatch):
        execute_tool(quad_graph, "add", (F(1),))
    with pytest.raises(DomainError):
        execute_tool(quad_graph, "pow_int", (F(2), F(-1)))
    with pytest.raises(DomainError):
        execute_tool(quad_graph, "pow_int", (F(2), F(1, 2)))
    with pytest.raises(UnknownTool):
        execute_tool(quad_graph, "ghost", ())


# ---------------------------------------------------------------------------
# windowed sub-goals


def test_window_subgoal_types_and_facts():
    steps = (OpStep("mul", F(3)), OpStep("add", F(1, 2)), OpStep("div", F(2)))
    task = Task("t", F(1), steps, chain_value(F(1), steps))
    sg = window_subgoal(task, 0, 2)
    assert format_signature(sg.signature) == "(float, int, float) -> float"
    assert sg.facts == frozenset({FINITE})
    assert sg.goal_effect == "returns a + b"
    assert sg.intent == "apply mul then add to the running value"
    wide = window_subgoal(task, 0, 3)
    assert NONZERO in wide.facts
    assert wide.goal_effect == "returns a / b for nonzero b"


def test_window_subgoal_exponent_slot_is_int():
    steps = (OpStep("pow_int", F(2)), OpStep("neg", None))
    task = Task("t", F(2), steps, chain_value(F(2), steps))
    sg = window_subgoal(task, 0, 2)
    assert format_signature(sg.signature) == "(float, int) -> float"
    assert NONNEG_EXP in sg.facts
    # neg consumes no constant, so m=2 only adds one input slot


def test_subgoal_template_keys_on_erased_signature_and_ops():
    steps = (OpStep("mul", F(3)), OpStep("add", F(1, 2)))
    task = Task("t", F(1), steps, chain_value(F(1), steps))
    sg = window_subgoal(task, 0, 2)
    assert subgoal_template(sg) == erased_key(sg.signature) + "|add,mul"


# ---------------------------------------------------------------------------
# policy table


def test_sample_prefers_high_logit_at_low_temperature():
    policy = PolicyTable()
    policy.logits[("T", "a")] = 5.0
    policy.logits[("T", "b")] = 0.0
    action, prob = policy.sample([("T", "a"), ("T", "b")], random.Random(0), 0.01)
    assert action == ("T", "a")
    assert prob > 0.999


def test_sample_unseen_defaults_one_below_best():
    policy = PolicyTable()
    policy.logits[("T", "a")] = 2.0
    policy.logits[("T", "b")] = 0.0
    actions = [("T", "a"), ("T", "b"), ("T", "new")]
    rng = random.Random(1)
    counts = {a: 0 for a in actions}
    for _ in range(3000):
        counts[policy.sample(actions, rng)[0]] += 1
    # effective logits 2 > 1 (default) > 0
    assert counts[("T", "a")] > counts[("T", "new")] > counts[("T", "b")]


def test_sample_uniform_over_fresh_actions():
    policy = PolicyTable()
    _, prob = policy.sample([("T", x) for x in "abcd"], random.Random(2))
    assert prob == pytest.approx(0.25)


def test_sample_deterministic_given_rng():
    policy = PolicyTable()
    policy.logits[("T", "a")] = 0.3
    actions = [("T", "a"), ("T", "b"), ("T", "c")]
    runs = [
        [policy.sample(actions, random.Random(7), 0.8) for _ in range(20)]
        for _ in range(2)
    ]
    assert runs[0] == runs[1]


# ---------------------------------------------------------------------------
# rollouts


def test_rollout_deterministic_given_rng(arith):
    task = generate_tasks(5, 2)[0]
    config = SimConfig()
    results = [
        rollout(arith, task, PolicyTable(), config, random.Random(3), 0.7)
        for _ in range(2)
    ]
    assert results[0].trajectory == results[1].trajectory
    assert results[0].actions == results[1].actions
    assert results[0].action_probs == results[1].action_probs


def test_rollout_single_step_task_forced_primitive(arith):
    steps = (OpStep("add", F(2)),)
    task = Task("t", F(1), steps, F(3))
    out = rollout(arith, task, PolicyTable(), SimConfig(), random.Random(0))
    assert [c.tool for c in out.trajectory.calls] == ["add"]
    assert out.trajectory.calls[0].result == F(3)
    assert out.trajectory.r_res == 1.0
    assert out.invoked_depths == [0]
    assert out.ledger.total_tokens > 0


def test_rollout_uses_composite_over_its_span(arith):
    # a committed two-step composite must advance the chain by two steps
    trajs = []
    for start, const_m, const_a in ((F(2), F(3), F(1)), (F(1), F(4), F(2))):
        mid = start * const_m
        trajs.append(
            Trajectory(
                "w",
                (
                    ToolCall("mul", (start, const_m), mid),
                    ToolCall("add", (mid, const_a), mid + const_a),
                ),
                1.0,
                arith.version,
            )
        )
    proposals = abstract_composites(arith, trajs * 2)
    assert len(proposals) == 1
    assert arith.insert_tool(proposals[0]).__class__.__name__ == "Added"
    comp_id = proposals[0].id

    steps = (OpStep("mul", F(2)), OpStep("add", F(5)))
    task = Task("t", F(3), steps, F(11))
    policy = PolicyTable()
    template = subgoal_template(window_subgoal(task, 0, 2))
    policy.logits[(template, comp_id)] = 50.0
    out = rollout(arith, task, policy, SimConfig(), random.Random(0), 0.05)
    assert [c.tool for c in out.trajectory.calls] == [comp_id]
    assert out.trajectory.r_res == 1.0
    assert out.invoked_depths == [1]


# ---------------------------------------------------------------------------
# the teacher


def make_chain_traj(graph, start, consts, version=None):
    version = graph.version if version is None else version
    calls = []
    acc = start
    for op, const in consts:
        result = chain_value(acc, (OpStep(op, const),))
        calls.append(ToolCall(op, (acc, const) if const is not None else (acc,), result))
        acc = result
    return Trajectory("t", tuple(calls), 1.0, version)


def test_teacher_mines_recurring_window(arith):
    trajs = [
        make_chain_traj(arith, F(2), [("mul", F(3)), ("add", F(1))]),
        make_chain_traj(arith, F(5), [("mul", F(2)), ("add", F(7))]),
    ]
    proposals = abstract_composites(arith, trajs)
    assert len(proposals) == 1
    node = proposals[0]
    assert node.children == ("mul", "add")
    assert node.id.startswith("mul_add__")
    assert format_signature(node.record.signature) == "(float, float, float) -> float"
    assert node.record.spec.pre == (FINITE,)
    assert node.record.spec.post == "returns a + b"
    assert len(node.record.examples) == 2
    outcome = arith.insert_tool(node)
    assert outcome.__class__.__name__ == "Added"
    assert arith.flat_size(node.id) == 2
    assert arith.saved_calls(node.id) == 1
    assert arith.node(node.id).depth == 1


def test_teacher_requires_recurrence(arith):
    two = [
        make_chain_traj(arith, F(2), [("mul", F(3)), ("add", F(1))]),
        make_chain_traj(arith, F(5), [("mul", F(2)), ("add", F(7))]),
    ]
    assert abstract_composites(arith, two[:1]) == []
    assert abstract_composites(arith, two, recurrence=2) != []
    assert abstract_composites(arith, two, recurrence=3) == []


def test_teacher_skips_non_dataflow_windows(arith):
    # second call ignores the first result: not a chain, nothing to mine
    calls = (
        ToolCall("mul", (F(2), F(3)), F(6)),
        ToolCall("add", (F(9), F(1)), F(10)),
    )
    trajs = [Trajectory("t", calls, 1.0, arith.version)] * 3
    assert abstract_composites(arith, trajs) == []


def test_teacher_skips_existing_abstractions(arith):
    trajs = [
        make_chain_traj(arith, F(2), [("mul", F(3)), ("add", F(1))]),
        make_chain_traj(arith, F(5), [("mul", F(2)), ("add", F(7))]),
    ]
    first = abstract_composites(arith, trajs)
    assert len(first) == 1
    arith.insert_tool(first[0])
    assert abstract_composites(arith, trajs) == []


def test_teacher_needs_two_distinct_examples(arith):
    same = make_chain_traj(arith, F(2), [("mul", F(3)), ("add", F(1))])
    assert abstract_composites(arith, [same, same]) == []


def test_teacher_mines_longer_windows(arith):
    trajs = [
        make_chain_traj(arith, F(1), [("mul", F(2)), ("add", F(3)), ("neg", None)]),
        make_chain_traj(arith, F(4), [("mul", F(5)), ("add", F(6)), ("neg", None)]),
    ]
    keys = {p.children for p in abstract_composites(arith, trajs, m_min=2, m_max=3)}
    assert ("mul", "add") in keys
    assert ("add", "neg") in keys
    assert ("mul", "add", "neg") in keys


# ---------------------------------------------------------------------------
# policy updates


def result_with(graph, tools, r_res, prob=0.5):
    calls = tuple(ToolCall(t, (F(1), F(1)), F(2)) for t in tools)
    trajectory = Trajectory("q", calls, r_res, graph.version)
    actions = [("T", t) for t in tools]
    return RolloutResult(
        trajectory, actions, [prob] * len(tools), CostLedger(), [0] * len(tools)
    )


def test_grpo_unanimous_group_is_a_fixed_point(arith):
    policy = PolicyTable()
    policy.logits[("T", "add")] = 0.4
    group = [result_with(arith, ["add"], 1.0) for _ in range(4)]
    rewards, advantages = grpo_step(policy, arith, group, SimConfig())
    assert advantages == [0.0] * 4
    assert policy.logits == {("T", "add"): 0.4}
    assert rewards == [1.0] * 4


def test_grpo_moves_toward_the_better_rollout(arith):
    policy = PolicyTable()
    config = SimConfig()
    group = [
        result_with(arith, ["add"], 1.0),
        result_with(arith, ["sub"], 0.0),
    ]
    grpo_step(policy, arith, group, config)
    delta = config.eta * 1.0 * 0.5  # advantage +-1 at prob 1/2
    assert policy.logits[("T", "add")] == pytest.approx(delta)
    assert policy.logits[("T", "sub")] == pytest.approx(-delta)


def test_grpo_deltas_clamped(arith):
    policy = PolicyTable()
    config = SimConfig(eta=4.0)
    group = [
        result_with(arith, ["add"], 1.0, prob=0.01),
        result_with(arith, ["sub"], 0.0, prob=0.01),
    ]
    grpo_step(policy, arith, group, config)
    for logit in policy.logits.values():
        assert abs(logit) <= config.eps_clip + 1e-12


def test_grpo_rewards_include_composition_bonus(quad_graph):
    policy = PolicyTable()
    group = [
        result_with(quad_graph, ["quadratic_expr"], 1.0),
        result_with(quad_graph, ["add"], 1.0),
    ]
    rewards, advantages = grpo_step(policy, quad_graph, group, SimConfig())
    assert rewards == [1.8, 1.0]  # the composite call saves four primitives
    assert advantages[0] > 0 > advantages[1]


# ---------------------------------------------------------------------------
# end-to-end smoke


TINY = dict(
    epochs=1,
    tasks_per_epoch=10,
    warmup_tasks=5,
    group_size=4,
    motif_count=3,
    audit_interval=5,
    audit_tasks=2,
)


def test_coevolve_tiny_run_shape(tmp_path):
    result = coevolve(SimConfig(seed=5, **TINY), tmp_path / "run")
    assert result.warmup_rows == 5
    assert len(result.metrics) == 5 + 10
    assert [m.step for m in result.metrics] == list(range(15))
    sizes = [m.composites for m in result.metrics]
    assert sizes == sorted(sizes)  # tools are never removed
    assert (tmp_path / "run" / "metrics.csv").exists()
    assert (tmp_path / "run" / "manifest.json").exists()
    assert result.manifest["warmup_rows"] == 5


def test_coevolve_is_deterministic(tmp_path):
    a = coevolve(SimConfig(seed=8, **TINY), tmp_path / "a")
    b = coevolve(SimConfig(seed=8, **TINY), tmp_path / "b")
    assert a.metrics == b.metrics
    assert sorted(a.graph.nodes) == sorted(b.graph.nodes)
    assert a.breaches == b.breaches
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (
        tmp_path / "b" / "metrics.csv"
    ).read_bytes()


def test_coevolve_validates_config():
    with pytest.raises(ValueError):
        coevolve(SimConfig(group_size=1))
    with pytest.raises(ValueError):
        coevolve(SimConfig(m_min=1))
    with pytest.raises(ValueError):
        coevolve(SimConfig(rho=0.0))
