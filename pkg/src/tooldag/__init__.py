"""Typed, compositional tool libraries with staged retrieval.

A library is a DAG of tools (primitives and composites) carrying four-level
records: typed signature, description, behavioral spec, worked examples.
Retrieval narrows candidates level by level under an explicit token ledger;
rewards credit composite calls with the primitive invocations they save; a
small co-evolution loop grows the library from its own successful rollouts.
"""

from __future__ import annotations

from .graph import (
    Added,
    BodyCall,
    InsertOutcome,
    LibraryGraph,
    Literal,
    Merged,
    Param,
    Rejected,
    RejectReason,
    ResultRef,
    ToolNode,
    ToolRecord,
    ToolSpec,
    UnknownTool,
    make_composite,
    make_primitive,
)
from .retrieval import CascadeTrace, CostLedger, SubGoal, retrieve, token_cost
from .reward import (
    DEFAULT_LAMBDA,
    GroupTooSmall,
    RewardBreakdown,
    StaleVersion,
    ToolCall,
    Trajectory,
    comp_reward,
    group_advantage,
    prim_workload,
    shaped_reward,
)
from .typesys import (
    BaseType,
    Constructor,
    Signature,
    SignatureIndex,
    SubtypeLattice,
    TypeVar,
    alpha_equivalent,
    default_lattice,
    format_signature,
    format_type,
    parse_signature,
    parse_type,
    subtype,
    unify,
)

__version__ = "0.1.0"

__all__ = [
    "Added",
    "BaseType",
    "BodyCall",
    "CascadeTrace",
    "Constructor",
    "CostLedger",
    "DEFAULT_LAMBDA",
    "GroupTooSmall",
    "InsertOutcome",
    "LibraryGraph",
    "Literal",
    "Merged",
    "Param",
    "Rejected",
    "RejectReason",
    "ResultRef",
    "RewardBreakdown",
    "Signature",
    "SignatureIndex",
    "StaleVersion",
    "SubGoal",
    "SubtypeLattice",
    "ToolCall",
    "ToolNode",
    "ToolRecord",
    "ToolSpec",
    "Trajectory",
    "TypeVar",
    "UnknownTool",
    "alpha_equivalent",
    "comp_reward",
    "default_lattice",
    "format_signature",
    "format_type",
    "group_advantage",
    "make_composite",
    "make_primitive",
    "parse_signature",
    "parse_type",
    "prim_workload",
    "retrieve",
    "shaped_reward",
    "subtype",
    "token_cost",
    "unify",
]
