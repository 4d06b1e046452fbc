"""Shaped reward accounting and group-relative advantages.

A trajectory's shaped reward is the verifier result plus a compositional
bonus: lambda times the total calls its tool choices saved over spelling the
same work out in primitives.  Because a call to t stands for flat(t)
primitive invocations, the bonus and the primitive workload decompose the
trajectory length exactly:  -(number of calls) = comp_reward - prim_workload.
Advantages are group-relative: standardize the group's shaped rewards with
the population standard deviation; a zero-spread group gets all zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .graph import LibraryGraph

DEFAULT_LAMBDA = 0.20


class StaleVersion(Exception):
    pass


class GroupTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: tuple = ()
    result: object = None


@dataclass(frozen=True)
class Trajectory:
    query_id: str
    calls: tuple[ToolCall, ...]
    r_res: float
    graph_version: int


@dataclass(frozen=True)
class RewardBreakdown:
    r_res: float
    comp_reward: int
    shaped: float
    prim_workload: int
    lam: float


def _flat(graph: LibraryGraph, trajectory: Trajectory, tool: str) -> int:
    node = graph.node(tool)  # raises UnknownTool
    if node.created_version > trajectory.graph_version:
        raise StaleVersion(
            f"{tool!r} created at version {node.created_version}, "
            f"trajectory pinned to {trajectory.graph_version}"
        )
    return graph.flat_size(tool)


def comp_reward(graph: LibraryGraph, trajectory: Trajectory) -> int:
    """Total saved calls: sum of (flat(t) - 1) over the trajectory's calls."""
    return sum(_flat(graph, trajectory, c.tool) - 1 for c in trajectory.calls)


def prim_workload(graph: LibraryGraph, trajectory: Trajectory) -> int:
    """The primitive-only length of the same work: sum of flat(t)."""
    return sum(_flat(graph, trajectory, c.tool) for c in trajectory.calls)


def shaped_reward(
    graph: LibraryGraph, trajectory: Trajectory, lam: float = DEFAULT_LAMBDA
) -> RewardBreakdown:
    comp = comp_reward(graph, trajectory)
    return RewardBreakdown(
        r_res=trajectory.r_res,
        comp_reward=comp,
        shaped=trajectory.r_res + lam * comp,
        prim_workload=comp + len(trajectory.calls),
        lam=lam,
    )


def group_advantage(rewards: list[float]) -> list[float]:
    """(r - mean) / population std; all zeros when the spread is zero."""
    if len(rewards) < 2:
        raise GroupTooSmall(f"need at least 2 rewards, got {len(rewards)}")
    mean = sum(rewards) / len(rewards)
    var = sum((r - mean) ** 2 for r in rewards) / len(rewards)
    if var == 0.0:
        return [0.0] * len(rewards)
    std = math.sqrt(var)
    return [(r - mean) / std for r in rewards]
