"""Deterministic planner/library co-evolution over exact rational arithmetic.

Tasks are accumulator chains: a starting rational followed by L operator
steps, each folding the running value with at most one fresh constant
(binary ops take one, pow_int a small non-negative exponent, neg none).  A
chain is an expression DAG whose topological order is the op order, so the
typed sub-goals fall straight out of it: at each position the decomposer
emits one sub-goal per window length m (1 up to m_max or the remaining ops),
typed from the window's boundary values, with intent text naming the window's
ops, facts from the ops' pre-conditions, and the final op's post as effect.

The policy is a tabular softmax over (sub-goal template, tool id) logits; the
action set at a position is the union over window lengths of each cascade's
winner plus its L3 survivors.  A chosen tool advances the chain by the length
of its primitive expansion and consumes that window's constants, so a tool
whose expansion does not match the upcoming ops computes the wrong value and
fails the exact-match verifier; those failures are the exploration noise the
group-relative updates learn away.

After every query group the teacher mines contiguous dataflow-chain windows
(length m_min..m_max, recurring at least `recurrence` times across the
group's successful trajectories), generalizes constants to typed parameters,
and proposes them for insertion; the library only ever grows.  Fixed audit
queries are replayed periodically: a previously retrieved winner may only be
displaced by a composite with a strictly higher example score, anything else
is logged as an assumption breach.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field, asdict
from fractions import Fraction
from pathlib import Path

from .fixtures import ARITH_PRIMITIVES, FINITE, NONNEG_EXP, NONZERO, build_arith_library
from .graph import (
    BodyCall,
    LibraryGraph,
    Param,
    ResultRef,
    ToolNode,
    ToolSpec,
    UnknownTool,
    make_composite,
)
from .retrieval import CostLedger, SubGoal, retrieve
from .reward import ToolCall, Trajectory, group_advantage, shaped_reward
from .scorers import example_score
from .typesys import BaseType, Signature, erased_key
from .values import format_example_input, format_value

# ---------------------------------------------------------------------------
# primitive semantics


class ExecutionError(Exception):
    pass


class ArityMismatch(ExecutionError):
    pass


class DivisionByZero(ExecutionError):
    pass


class DomainError(ExecutionError):
    pass


def _div(a: Fraction, b: Fraction) -> Fraction:
    if b == 0:
        raise DivisionByZero("division by zero")
    return a / b


def _pow_int(a: Fraction, e: Fraction) -> Fraction:
    if e.denominator != 1 or e < 0:
        raise DomainError(f"exponent must be a non-negative integer, got {e}")
    return a ** int(e)


PRIMITIVE_OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": _div,
    "pow_int": _pow_int,
    "neg": lambda a: -a,
}

# which ops consume a fresh constant, and of what kind
OP_CONST = {
    "add": "rational",
    "sub": "rational",
    "mul": "rational",
    "div": "rational",
    "pow_int": "exponent",
    "neg": None,
}

OP_NAMES = tuple(sorted(PRIMITIVE_OPS))


def execute_tool(graph: LibraryGraph, tool_id: str, args: tuple[Fraction, ...]) -> Fraction:
    """Execute a tool on exact rationals; composites run their body calls in
    order, resolving parameter / earlier-result / literal arguments."""
    node = graph.node(tool_id)  # UnknownTool when absent
    arity = len(node.record.signature.inputs)
    if len(args) != arity:
        raise ArityMismatch(f"{tool_id} expects {arity} args, got {len(args)}")
    if node.kind == "primitive":
        fn = PRIMITIVE_OPS.get(tool_id)
        if fn is None:
            raise UnknownTool(f"no executable semantics for primitive {tool_id!r}")
        return fn(*args)
    results: list[Fraction] = []
    for call in node.body:
        argv = []
        for arg in call.args:
            if isinstance(arg, Param):
                argv.append(args[arg.index])
            elif isinstance(arg, ResultRef):
                argv.append(results[arg.index])
            else:
                argv.append(arg.value)
        results.append(execute_tool(graph, call.tool, tuple(argv)))
    return results[-1]


# ---------------------------------------------------------------------------
# tasks


@dataclass(frozen=True)
class OpStep:
    op: str
    const: Fraction | None


@dataclass(frozen=True)
class Task:
    id: str
    start: Fraction
    steps: tuple[OpStep, ...]
    oracle: Fraction


def _rand_rational(rng: random.Random, lo: int = -6, hi: int = 6) -> Fraction:
    num = rng.randint(lo, hi)
    den = rng.choice((1, 1, 2, 3))
    return Fraction(num, den)


def _run_chain(start: Fraction, steps: tuple[OpStep, ...]) -> Fraction:
    acc = start
    for step in steps:
        fn = PRIMITIVE_OPS[step.op]
        acc = fn(acc, step.const) if step.const is not None else fn(acc)
    return acc


def generate_motifs(
    count: int, seed: int | str, depth_range: tuple[int, int] = (1, 4)
) -> list[tuple[str, ...]]:
    """The run's latent skills: op sequences that tasks instantiate over and
    over with fresh constants.  A small motif set is what makes abstraction
    pay off; it also bounds the set of chains the teacher can ever mint."""
    lo, hi = depth_range
    if not (1 <= lo <= hi <= 8):
        raise ValueError(f"depth_range must sit within [1, 8], got {depth_range}")
    rng = random.Random(f"motifs:{seed}")
    motifs = []
    seen = set()
    while len(motifs) < count:
        length = rng.randint(lo, hi)
        motif = tuple(rng.choice(OP_NAMES) for _ in range(length))
        if motif in seen:
            continue
        seen.add(motif)
        motifs.append(motif)
    return motifs


def _step_for_op(op: str, rng: random.Random) -> OpStep:
    kind = OP_CONST[op]
    if kind is None:
        return OpStep(op, None)
    if kind == "exponent":
        # rejected-and-resampled: negative exponents are not in the domain
        e = rng.randint(-2, 3)
        while e < 0:
            e = rng.randint(-2, 3)
        return OpStep(op, Fraction(e))
    c = _rand_rational(rng)
    while op == "div" and c == 0:
        c = _rand_rational(rng)
    return OpStep(op, c)


def generate_tasks(
    count: int,
    seed: int | str,
    depth_range: tuple[int, int] = (1, 4),
    motifs: list[tuple[str, ...]] | None = None,
    motif_count: int = 6,
) -> list[Task]:
    """Each task instantiates one motif with fresh rational constants.  When
    no motif list is given, one is derived from the same seed."""
    if motifs is None:
        motifs = generate_motifs(motif_count, seed, depth_range)
    rng = random.Random(f"tasks:{seed}")
    tasks = []
    for i in range(count):
        motif = motifs[rng.randrange(len(motifs))]
        steps = tuple(_step_for_op(op, rng) for op in motif)
        start = _rand_rational(rng)
        tasks.append(Task(f"task{i:04d}", start, steps, _run_chain(start, steps)))
    return tasks


# ---------------------------------------------------------------------------
# sub-goals and the policy


def _value_type(v: Fraction) -> BaseType:
    return BaseType("int") if v.denominator == 1 else BaseType("float")


FLOAT = BaseType("float")


def window_subgoal(task: Task, pos: int, m: int) -> SubGoal:
    """The typed sub-goal covering steps pos..pos+m-1 of the chain."""
    window = task.steps[pos : pos + m]
    inputs: list = [FLOAT]
    facts = {FINITE}
    for step in window:
        if step.const is not None:
            inputs.append(
                BaseType("int") if OP_CONST[step.op] == "exponent" else _value_type(step.const)
            )
        if step.op == "div":
            facts.add(NONZERO)
        if step.op == "pow_int":
            facts.add(NONNEG_EXP)
    ops = [s.op for s in window]
    effect = ARITH_PRIMITIVES[window[-1].op]["post"]
    return SubGoal(
        signature=Signature(tuple(inputs), FLOAT),
        intent="apply " + " then ".join(ops) + " to the running value",
        facts=frozenset(facts),
        goal_effect=effect,
        budget=None,
    )


def subgoal_template(subgoal: SubGoal) -> str:
    """Erased goal signature plus the canonicalized op-keyword multiset."""
    words = [w for w in subgoal.intent.lower().split() if w in PRIMITIVE_OPS]
    return erased_key(subgoal.signature) + "|" + ",".join(sorted(words))


class PolicyTable:
    """Tabular softmax policy over (sub-goal template, tool id) logits.

    Actions never taken before default to one nat below the best logit in the
    current candidate set, so a freshly minted composite gets sampled instead
    of starving behind warm-started primitives; its own advantage then decides
    whether it stays.  The sampling temperature is the caller's exploration
    knob: updates stop once a group is unanimous, so late-run convergence has
    to come from annealing rather than from ever-growing logit gaps."""

    def __init__(self) -> None:
        self.logits: dict[tuple[str, str], float] = {}

    def sample(
        self,
        actions: list[tuple[str, str]],
        rng: random.Random,
        temperature: float = 1.0,
    ) -> tuple[tuple[str, str], float]:
        seen = [self.logits[a] for a in actions if a in self.logits]
        default = (max(seen) - 1.0) if seen else 0.0
        tau = max(temperature, 1e-6)
        zs = [self.logits.get(a, default) / tau for a in actions]
        top = max(zs)
        weights = [math.exp(z - top) for z in zs]
        total = sum(weights)
        pick = rng.random() * total
        acc = 0.0
        for action, w in zip(actions, weights):
            acc += w
            if pick <= acc:
                return action, w / total
        return actions[-1], weights[-1] / total


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutResult:
    trajectory: Trajectory
    actions: list[tuple[str, str]]
    action_probs: list[float]
    ledger: CostLedger
    invoked_depths: list[int]


@dataclass
class SimConfig:
    seed: int = 0
    group_size: int = 8  # G
    lam: float = 0.20
    rho: float = 0.8
    eta: float = 0.3
    eps_clip: float = 0.2
    k2: int = 32
    epochs: int = 3  # N
    tasks_per_epoch: int = 167
    warmup_tasks: int = 48
    m_min: int = 2
    m_max: int = 3
    recurrence: int = 2
    teacher_pool: int = 64  # successful trajectories kept for mining
    motif_count: int = 6
    temp_start: float = 1.0
    temp_end: float = 0.15
    depth_range: tuple[int, int] = (1, 4)
    token_window: int = 4096
    audit_interval: int = 50
    audit_tasks: int = 5

    def validate(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must sit in (0, 1]")
        if self.m_min < 2:
            raise ValueError("m_min must be >= 2 (single-call bodies are suppressed)")
        if self.m_max < self.m_min:
            raise ValueError("m_max must be >= m_min")


def rollout(
    graph: LibraryGraph,
    task: Task,
    policy: PolicyTable,
    config: SimConfig,
    rng: random.Random,
    temperature: float = 1.0,
) -> RolloutResult:
    """Run one episode: per position, retrieve per window length, pool the
    action sets, sample a tool, execute it, advance by its expansion."""
    pos = 0
    acc = task.start
    calls: list[ToolCall] = []
    actions: list[tuple[str, str]] = []
    probs: list[float] = []
    depths: list[int] = []
    ledger = CostLedger(window=config.token_window)
    failed = False
    while pos < len(task.steps):
        candidates: list[tuple[str, str]] = []
        seen: set[str] = set()
        for m in range(1, min(config.m_max, len(task.steps) - pos) + 1):
            sg = window_subgoal(task, pos, m)
            trace = retrieve(
                graph, sg, k2=config.k2, window=config.token_window, descend=True
            )
            ledger.add(trace.total_ledger())
            template = subgoal_template(sg)
            pool = list(trace.s3)
            final = trace.final_winner()
            if final is not None and final not in pool:
                pool.append(final)
            for tool in sorted(pool):
                if tool not in seen:
                    seen.add(tool)
                    candidates.append((template, tool))
        if not candidates:
            failed = True
            break
        action, prob = policy.sample(candidates, rng, temperature)
        _, tool = action
        expansion = graph.expand_to_primitives(tool)
        span = len(expansion)
        if span > len(task.steps) - pos:
            failed = True
            break
        window = task.steps[pos : pos + span]
        args = (acc,) + tuple(s.const for s in window if s.const is not None)
        try:
            result = execute_tool(graph, tool, args)
        except ExecutionError:
            failed = True
            break
        calls.append(ToolCall(tool, args, result))
        actions.append(action)
        probs.append(prob)
        depths.append(graph.node(tool).depth)
        acc = result
        pos += span
    r_res = 0.0 if failed or acc != task.oracle else 1.0
    trajectory = Trajectory(task.id, tuple(calls), r_res, graph.version)
    return RolloutResult(trajectory, actions, probs, ledger, depths)


# ---------------------------------------------------------------------------
# the teacher


def _window_name(child_ids: tuple[str, ...]) -> str:
    digest = hashlib.sha1(":".join(child_ids).encode()).hexdigest()[:6]
    return "_".join(child_ids) + "__" + digest


def abstract_composites(
    graph: LibraryGraph,
    successes: list[Trajectory],
    m_min: int = 2,
    m_max: int = 3,
    recurrence: int = 2,
) -> list[ToolNode]:
    """Mine recurring contiguous dataflow-chain windows from successful
    trajectories and generalize them into composite candidates.

    A window qualifies when every call after the first consumes the previous
    call's result as its first argument.  Constants become typed parameters
    (the child's declared input type at that slot); the record is synthesized
    from the children: description and tags from the names, pre = union of
    child pre-atoms not established by an earlier child's post, post = the
    final child's post, complexity = the worst child class, examples
    harvested from distinct occurrences."""
    occurrences: dict[tuple[str, ...], list[tuple]] = {}
    for traj in successes:
        calls = traj.calls
        for m in range(m_min, min(m_max, len(calls)) + 1):
            for start in range(len(calls) - m + 1):
                window = calls[start : start + m]
                if any(
                    window[i].args[0] != window[i - 1].result for i in range(1, m)
                ):
                    continue
                key = tuple(c.tool for c in window)
                occurrences.setdefault(key, []).append(window)
    proposals = []
    for key in sorted(occurrences):
        windows = occurrences[key]
        if len(windows) < recurrence:
            continue
        if _window_name(key) in graph.nodes:
            # the abstraction already exists; a re-proposal adds nothing
            continue
        body: list[BodyCall] = []
        param_types: list = []
        for i, tool_id in enumerate(key):
            sig = graph.node(tool_id).record.signature
            if i == 0:
                param_types.append(sig.inputs[0])
                args: list = [Param(0)]
            else:
                args = [ResultRef(i - 1)]
            for slot in range(1, len(sig.inputs)):
                param_types.append(sig.inputs[slot])
                args.append(Param(len(param_types) - 1))
            body.append(BodyCall(tool_id, tuple(args)))
        signature = Signature(tuple(param_types), graph.node(key[-1]).record.signature.output)

        pre: list[str] = []
        established: set[str] = set()
        for tool_id in key:
            spec = graph.node(tool_id).record.spec
            for atom in spec.pre or ():
                if atom not in established and atom not in pre:
                    pre.append(atom)
            established.add(spec.post)
        post = graph.node(key[-1]).record.spec.post
        worst = max(
            (graph.node(t).record.spec.complexity for t in key),
            key=lambda c: ("O(1)", "O(log n)", "O(n)", "O(n log n)", "O(n^2)").index(c),
        )

        examples = []
        seen_inputs = set()
        for window in windows:
            flat_args = [window[0].args[0]]
            for call in window:
                flat_args.extend(call.args[1:])
            text_in = format_example_input(tuple(flat_args))
            if text_in in seen_inputs:
                continue
            seen_inputs.add(text_in)
            examples.append((text_in, format_value(window[-1].result)))
            if len(examples) >= 2:
                break
        if len(examples) < 2:
            continue

        expansion = []
        for t in key:
            expansion.extend(graph.expand_to_primitives(t))
        proposals.append(
            make_composite(
                _window_name(key),
                signature,
                tuple(body),
                "Chain of " + " then ".join(key) + ".",
                ("composite",) + tuple(sorted(set(expansion))),
                ToolSpec(tuple(sorted(pre)), post, worst),
                tuple(examples),
            )
        )
    return proposals


# ---------------------------------------------------------------------------
# GRPO step


def grpo_step(
    policy: PolicyTable,
    graph: LibraryGraph,
    group: list[RolloutResult],
    config: SimConfig,
) -> tuple[list[float], list[float]]:
    """Group-relative update: every chosen (template, tool) logit moves by
    clamp(eta * advantage * (1 - pi(action)), +-eps_clip).

    The (1 - pi) factor is the chosen entry's own softmax gradient; without
    it the shared actions of every successful rollout drift upward forever
    (the clamp is asymmetric across a mixed group) and late-minted composites
    can never catch up."""
    rewards = [
        shaped_reward(graph, r.trajectory, config.lam).shaped for r in group
    ]
    advantages = group_advantage(rewards)
    for result, adv in zip(group, advantages):
        for action, prob in zip(result.actions, result.action_probs):
            delta = max(
                -config.eps_clip,
                min(config.eps_clip, config.eta * adv * (1.0 - prob)),
            )
            policy.logits[action] = policy.logits.get(action, 0.0) + delta
    return rewards, advantages


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class MetricsRow:
    step: int
    J: float
    mean_depth: float
    composites: int
    mean_phi: float
    rejections: int
    tokens: int


@dataclass
class CoevolveResult:
    graph: LibraryGraph
    policy: PolicyTable
    metrics: list[MetricsRow]
    warmup_rows: int
    breaches: list[dict]
    manifest: dict


def _audit_subgoals(tasks: list[Task], config: SimConfig):
    for task in tasks:
        for pos in range(len(task.steps)):
            for m in range(1, min(config.m_max, len(task.steps) - pos) + 1):
                yield (task.id, pos, m), window_subgoal(task, pos, m)


def _run_audit(
    graph: LibraryGraph,
    tasks: list[Task],
    config: SimConfig,
    previous: dict,
    step: int,
    breaches: list[dict],
) -> dict:
    """Replay a fixed query set and require that no previously retrieved tool
    vanishes from the retrieved context unless the current winner is a
    composite outscoring it on worked examples (new entries must not crowd
    established ones out)."""
    current: dict = {}
    for key, sg in _audit_subgoals(tasks, config):
        trace = retrieve(graph, sg, k2=config.k2, window=config.token_window)
        winner = trace.final_winner()
        context = set(trace.s3)
        if winner is not None:
            context.add(winner)
        current[key] = (winner, context)
        if key not in previous:
            continue
        _, old_context = previous[key]
        for tool in sorted(old_context - context):
            score_new = (
                example_score(
                    sg.signature, graph.node(winner).record.examples, graph.lattice
                )
                if winner is not None
                else -1.0
            )
            score_old = example_score(
                sg.signature, graph.node(tool).record.examples, graph.lattice
            )
            displaced_ok = (
                winner is not None
                and graph.node(winner).kind == "composite"
                and score_new > score_old
            )
            if not displaced_ok:
                breaches.append(
                    {"step": step, "subgoal": list(key), "lost": tool, "winner": winner}
                )
    return current


def _group_metrics(
    graph: LibraryGraph, group: list[RolloutResult], rewards: list[float], step: int
) -> MetricsRow:
    depths = [d for r in group for d in r.invoked_depths]
    phis = [
        graph.saved_calls(c.tool) for r in group for c in r.trajectory.calls
    ]
    return MetricsRow(
        step=step,
        J=sum(rewards) / len(rewards),
        mean_depth=sum(depths) / len(depths) if depths else 0.0,
        composites=len(graph.composites()),
        mean_phi=sum(phis) / len(phis) if phis else 0.0,
        rejections=len(graph.rejections),
        tokens=sum(r.ledger.total_tokens for r in group),
    )


def coevolve(config: SimConfig, out_dir: str | Path | None = None) -> CoevolveResult:
    """Warm-start, logit initialization, then N epochs of grouped rollouts
    with teacher-proposed library growth.  Deterministic for a fixed config."""
    config.validate()
    graph = build_arith_library()
    policy = PolicyTable()
    metrics: list[MetricsRow] = []
    breaches: list[dict] = []
    step = 0

    # Stage 1: warm-start with a uniform policy; mine the first composites.
    motifs = generate_motifs(config.motif_count, config.seed, config.depth_range)
    warm_tasks = generate_tasks(
        config.warmup_tasks, f"{config.seed}:warmup", config.depth_range, motifs
    )
    success_counts: dict[tuple[str, str], int] = {}
    success_pool: deque[Trajectory] = deque(maxlen=config.teacher_pool)
    for task in warm_tasks:
        group = []
        for g in range(config.group_size):
            rng = random.Random(f"{config.seed}:warm:{task.id}:{g}")
            group.append(rollout(graph, task, policy, config, rng, config.temp_start))
        rewards = [
            shaped_reward(graph, r.trajectory, config.lam).shaped for r in group
        ]
        for r in group:
            if r.trajectory.r_res >= config.rho:
                success_pool.append(r.trajectory)
                for action in r.actions:
                    success_counts[action] = success_counts.get(action, 0) + 1
        for proposal in abstract_composites(
            graph, list(success_pool), config.m_min, config.m_max, config.recurrence
        ):
            graph.insert_tool(proposal)
        metrics.append(_group_metrics(graph, group, rewards, step))
        step += 1
    warmup_rows = len(metrics)

    # Stage 2: initialize logits from warm-start success counts.
    for action, count in success_counts.items():
        policy.logits[action] = math.log1p(count)

    # Stage 3: grouped rollouts, GRPO updates, teacher insertions, audits.
    tasks = generate_tasks(
        config.tasks_per_epoch, f"{config.seed}:train", config.depth_range, motifs
    )
    audit_tasks = tasks[: config.audit_tasks]
    audit_state = _run_audit(graph, audit_tasks, config, {}, step, breaches)
    total_train = max(1, config.epochs * len(tasks) - 1)
    train_step = 0
    for epoch in range(config.epochs):
        order = list(range(len(tasks)))
        random.Random(f"{config.seed}:epoch:{epoch}").shuffle(order)
        for idx in order:
            task = tasks[idx]
            frac = train_step / total_train
            temperature = config.temp_start + (config.temp_end - config.temp_start) * frac
            train_step += 1
            group = []
            for g in range(config.group_size):
                rng = random.Random(f"{config.seed}:roll:{epoch}:{task.id}:{g}")
                group.append(rollout(graph, task, policy, config, rng, temperature))
            rewards, _ = grpo_step(policy, graph, group, config)
            for r in group:
                if r.trajectory.r_res >= config.rho:
                    success_pool.append(r.trajectory)
            for proposal in abstract_composites(
                graph, list(success_pool), config.m_min, config.m_max, config.recurrence
            ):
                graph.insert_tool(proposal)
            metrics.append(_group_metrics(graph, group, rewards, step))
            step += 1
            if (step - warmup_rows) % config.audit_interval == 0:
                audit_state = _run_audit(
                    graph, audit_tasks, config, audit_state, step, breaches
                )

    manifest = {
        "config": {**asdict(config), "depth_range": list(config.depth_range)},
        "warmup_rows": warmup_rows,
        "steps": step,
        "library": graph.stats(),
        "breaches": len(breaches),
    }
    result = CoevolveResult(graph, policy, metrics, warmup_rows, breaches, manifest)
    if out_dir is not None:
        write_run(result, out_dir)
    return result


def write_run(result: CoevolveResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["step", "J", "mean_depth", "composites", "mean_phi", "rejections", "tokens"]
        )
        for row in result.metrics:
            writer.writerow(
                [
                    row.step,
                    f"{row.J:.6f}",
                    f"{row.mean_depth:.6f}",
                    row.composites,
                    f"{row.mean_phi:.6f}",
                    row.rejections,
                    row.tokens,
                ]
            )
    with open(out / "manifest.json", "w") as fh:
        json.dump(result.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
