from __future__ import annotations

import pytest

from tooldag.fixtures import build_arith_library, build_tabular_library, make_quadratic_expr


@pytest.fixture
def arith():
    return build_arith_library()


@pytest.fixture
def quad_graph():
    """Arithmetic primitives plus the quadratic_expr composite."""
    graph = build_arith_library()
    outcome = graph.insert_tool(make_quadratic_expr())
    assert outcome.__class__.__name__ == "Added"
    return graph


@pytest.fixture
def tabular():
    return build_tabular_library()
