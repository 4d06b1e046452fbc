"""Seed libraries: exact-rational arithmetic primitives and a small tabular
domain.  The arithmetic seeds are what the co-evolution simulator grows from;
the tabular seeds exercise constructor types and the dedup path."""

from __future__ import annotations

from fractions import Fraction

from .graph import (
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
from .typesys import BaseType, Constructor, Signature, SubtypeLattice

FLOAT = BaseType("float")
INT = BaseType("int")

FINITE = "finite-args"
NONZERO = "nonzero-divisor"
NONNEG_EXP = "nonneg-exponent"

ARITH_PRIMITIVES: dict[str, dict] = {
    "add": {
        "signature": Signature((FLOAT, FLOAT), FLOAT),
        "description": "Return the sum of two real numbers.",
        "tags": ("arithmetic", "primitive", "add"),
        "pre": (FINITE,),
        "post": "returns a + b",
        "examples": (("(1.0, 2.0)", "3.0"), ("(-1.5, 2.5)", "1.0"), ("(0.0, 0.0)", "0.0")),
    },
    "sub": {
        "signature": Signature((FLOAT, FLOAT), FLOAT),
        "description": "Return the difference of two real numbers.",
        "tags": ("arithmetic", "primitive", "sub"),
        "pre": (FINITE,),
        "post": "returns a - b",
        "examples": (("(5.0, 3.0)", "2.0"), ("(1.0, 4.0)", "-3.0")),
    },
    "mul": {
        "signature": Signature((FLOAT, FLOAT), FLOAT),
        "description": "Return the product of two real numbers.",
        "tags": ("arithmetic", "primitive", "mul"),
        "pre": (FINITE,),
        "post": "returns a * b",
        "examples": (("(3.0, 4.0)", "12.0"), ("(-1.5, 2.0)", "-3.0")),
    },
    "div": {
        "signature": Signature((FLOAT, FLOAT), FLOAT),
        "description": "Return the quotient of two real numbers; the divisor must be nonzero.",
        "tags": ("arithmetic", "primitive", "div"),
        "pre": (FINITE, NONZERO),
        "post": "returns a / b for nonzero b",
        "examples": (("(6.0, 3.0)", "2.0"), ("(1.0, 4.0)", "0.25")),
    },
    "pow_int": {
        "signature": Signature((FLOAT, INT), FLOAT),
        "description": "Raise a real number to a non-negative integer power.",
        "tags": ("arithmetic", "primitive", "pow_int"),
        "pre": (FINITE, NONNEG_EXP),
        "post": "returns a raised to the integer power n",
        "examples": (("(2.0, 3)", "8.0"), ("(5.0, 0)", "1.0")),
    },
    "neg": {
        "signature": Signature((FLOAT,), FLOAT),
        "description": "Return the negation of a real number.",
        "tags": ("arithmetic", "primitive", "neg"),
        "pre": (FINITE,),
        "post": "returns -a",
        "examples": (("(2.0)", "-2.0"), ("(-3.5)", "3.5")),
    },
}


def build_arith_library() -> LibraryGraph:
    graph = LibraryGraph(bases={"int", "float"})
    for name, meta in ARITH_PRIMITIVES.items():
        node = make_primitive(
            name,
            meta["signature"],
            meta["description"],
            meta["tags"],
            ToolSpec(meta["pre"], meta["post"], "O(1)"),
            meta["examples"],
        )
        outcome = graph.insert_tool(node)
        assert outcome.__class__.__name__ == "Added", outcome
    return graph


def make_quadratic_expr() -> ToolNode:
    """a*x^2 + b*x + c over (a, b, c, x): five primitive calls, one tool."""
    body = (
        BodyCall("pow_int", (Param(3), Literal(Fraction(2)))),
        BodyCall("mul", (Param(0), ResultRef(0))),
        BodyCall("mul", (Param(1), Param(3))),
        BodyCall("add", (ResultRef(1), ResultRef(2))),
        BodyCall("add", (ResultRef(3), Param(2))),
    )
    return make_composite(
        "quadratic_expr",
        Signature((FLOAT, FLOAT, FLOAT, FLOAT), FLOAT),
        body,
        "Evaluate a quadratic a*x^2 + b*x + c at x.",
        ("arithmetic", "polynomial", "composite"),
        ToolSpec((FINITE, NONNEG_EXP), "returns a*x^2 + b*x + c", "O(1)"),
        (("(1.0, -3.0, 2.0, 2.0)", "0.0"), ("(2.0, 0.0, -1.0, 3.0)", "17.0"), ("(0.0, 1.0, 0.0, 5.0)", "5.0")),
    )


TABLE = BaseType("table")
PRED = BaseType("predicate")
STR = BaseType("str")
FLOAT_LIST = Constructor("list", (FLOAT,))

COLUMN_OK = "column-exists-and-is-numeric"
PRED_TOTAL = "predicate-total-on-rows"


def build_tabular_library() -> LibraryGraph:
    lattice = SubtypeLattice({("int", "float")})
    graph = LibraryGraph(
        lattice=lattice, bases={"int", "float", "str", "table", "predicate"}
    )
    graph.insert_tool(
        make_primitive(
            "filter_rows",
            Signature((TABLE, PRED), TABLE),
            "Keep the rows of a table that satisfy a predicate.",
            ("tabular", "filter"),
            ToolSpec((PRED_TOTAL,), "returns rows satisfying the predicate", "O(n)"),
            (
                ('(sales, "region == EU")', "eu_sales"),
                ('(sales, "qty > 10")', "bulk_sales"),
            ),
        )
    )
    graph.insert_tool(
        make_primitive(
            "select_column",
            Signature((TABLE, STR), FLOAT_LIST),
            "Project a numeric column of a table as a list.",
            ("tabular", "projection"),
            ToolSpec((COLUMN_OK,), "returns the numeric column as a list", "O(n)"),
            (('(sales, "amount")', "[1.0, 2.5]"), ('(sales, "qty")', "[3.0]")),
        )
    )
    graph.insert_tool(
        make_primitive(
            "sum_list",
            Signature((FLOAT_LIST,), FLOAT),
            "Sum a list of numbers.",
            ("aggregation", "sum"),
            ToolSpec((), "returns the sum of the list", "O(n)"),
            (("([1.0, 2.0, 3.0])", "6.0"), ("([])", "0.0")),
        )
    )
    body = (
        BodyCall("filter_rows", (Param(0), Param(2))),
        BodyCall("select_column", (ResultRef(0), Param(1))),
        BodyCall("sum_list", (ResultRef(1),)),
    )
    graph.insert_tool(
        make_composite(
            "sum_where",
            Signature((TABLE, STR, PRED), FLOAT),
            body,
            "Sum a numeric column over the rows satisfying a predicate.",
            ("tabular", "aggregation", "composite"),
            ToolSpec(
                (COLUMN_OK, PRED_TOTAL),
                "returns sum of column over filtered rows",
                "O(n)",
            ),
            (
                ('(sales, "amount", "region == EU")', "31420.0"),
                ('(sales, "qty", "qty > 10")', "184.0"),
            ),
        )
    )
    assert len(graph.nodes) == 4
    return graph
