"""Benchmark harness: generated libraries, the three substrates, fits."""

from __future__ import annotations

import csv
import math

import pytest

from tooldag.bench import (
    CSV_COLUMNS,
    BenchConfig,
    InfeasibleAlpha,
    generate_library,
    generate_queries,
    loglog_slope,
    mean_tokens_by_size,
    run_bench,
    run_flat,
    summarize,
    tag_count,
    format_report,
    write_rows,
)
from tooldag.persist import dumps_library
from tooldag.retrieval import token_cost

TINY = BenchConfig(sizes=(50, 100), queries_per_size=8)


@pytest.fixture(scope="module")
def tiny_rows():
    return run_bench(TINY)


# ---------------------------------------------------------------------------
# alpha feasibility and generators


def test_tag_count_realizes_alpha1():
    assert tag_count(BenchConfig(alpha1=0.1)) == 10
    assert tag_count(BenchConfig(alpha1=0.25)) == 4
    assert tag_count(BenchConfig(alpha1=0.5)) == 2
    assert tag_count(BenchConfig(alpha1=1.0)) == 1


@pytest.mark.parametrize("alpha1", [0.7, 0.0, 1.1, -0.2])
def test_infeasible_alpha1_rejected(alpha1):
    with pytest.raises(InfeasibleAlpha):
        tag_count(BenchConfig(alpha1=alpha1))


def test_generated_library_shape():
    graph = generate_library(TINY, 40)
    assert len(graph.nodes) == 43  # n tools plus the three polymorphic utilities
    assert {"u_pass", "u_wrap", "u_pair"} <= set(graph.nodes)
    assert all(node.depth == 0 for node in graph.nodes.values())


def test_generated_library_deterministic():
    a = dumps_library(generate_library(TINY, 60))
    b = dumps_library(generate_library(TINY, 60))
    assert a == b
    c = dumps_library(generate_library(BenchConfig(seed=1), 60))
    assert a != c


def test_generated_queries_deterministic():
    qs = generate_queries(TINY, 100)
    assert qs == generate_queries(TINY, 100)
    assert len(qs) == TINY.queries_per_size
    for q in qs:
        assert 0 <= q.cluster < TINY.clusters
        assert q.subgoal.budget == TINY.budget
        assert f"fact-{q.cluster}-a" in q.subgoal.facts


# ---------------------------------------------------------------------------
# substrates


def test_flat_substrate_reads_everything():
    graph = generate_library(TINY, 30)
    queries = generate_queries(TINY, 30)
    total = sum(
        token_cost(node.record, level)
        for node in graph.nodes.values()
        for level in (1, 2, 3, 4)
    )
    rows = run_flat(graph, queries, 30)
    assert len(rows) == len(queries)
    for row in rows:
        assert row.substrate == "flat"
        assert row.tokens == total
        assert row.scorer_calls == len(graph.nodes)
        assert (row.s1, row.s2, row.s3, row.s4) == (0, 0, 0, 0)


def test_sweep_rows_cover_every_cell(tiny_rows):
    cells = {(r.substrate, r.n) for r in tiny_rows}
    assert cells == {(s, n) for s in ("flat", "texthier", "tdr") for n in TINY.sizes}
    per_cell = len(tiny_rows) / len(cells)
    assert per_cell == TINY.queries_per_size


def test_cascade_rows_nest_and_undercut_flat(tiny_rows):
    flat = {(r.n, r.query_id): r for r in tiny_rows if r.substrate == "flat"}
    for row in tiny_rows:
        if row.substrate != "tdr":
            continue
        assert row.s1 >= row.s2 >= row.s3 >= row.s4
        assert row.s2 <= TINY.k2
        assert row.tokens <= flat[(row.n, row.query_id)].tokens


def test_sweep_deterministic(tmp_path, tiny_rows):
    again = run_bench(BenchConfig(sizes=(50, 100), queries_per_size=8))
    write_rows(tiny_rows, tmp_path / "a.csv")
    write_rows(again, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_csv_columns_frozen(tmp_path, tiny_rows):
    write_rows(tiny_rows, tmp_path / "rows.csv")
    with open(tmp_path / "rows.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        assert tuple(header) == CSV_COLUMNS
        assert header == [
            "substrate", "n", "query_id", "tokens", "scorer_calls",
            "unify_visits", "s1", "s2", "s3", "s4",
        ]
        assert sum(1 for _ in reader) == len(tiny_rows)


# ---------------------------------------------------------------------------
# fits and the summary


def test_loglog_slope_recovers_power_laws():
    quadratic = {n: 3.0 * n**2 for n in (10, 40, 160)}
    assert loglog_slope(quadratic) == pytest.approx(2.0)
    flat = {n: 7.5 for n in (10, 100, 1000)}
    assert loglog_slope(flat) == pytest.approx(0.0, abs=1e-9)
    linearish = {n: 2.0 * n for n in (8, 64)}
    assert loglog_slope(linearish) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        loglog_slope({10: 1.0})


def test_mean_tokens_by_size(tiny_rows):
    means = mean_tokens_by_size(tiny_rows, "flat")
    assert set(means) == set(TINY.sizes)
    assert means[100] > means[50]  # flat cost scales with the library


def test_summary_shape_small_sweep(tiny_rows):
    summary = summarize(tiny_rows, TINY)
    assert summary["sizes"] == [50, 100]
    assert set(summary["slopes"]) == {"flat", "texthier", "tdr"}
    assert summary["slopes"]["flat"] == pytest.approx(1.0, abs=0.1)
    assert summary["ratios_at_max"]["flat_over_tdr"] > 1.0
    assert set(summary["alpha_hat"]) == {"alpha1", "alpha2", "alpha3"}
    # below alpha1 * n >= k2 the shortlist cut never binds: no saturated fit
    assert "tdr_slope_saturated" not in summary
    assert summary["cost_bound"] == {}


def test_summary_saturated_sizes_gate():
    config = BenchConfig(sizes=(400, 800), queries_per_size=6)
    rows = run_bench(config)
    summary = summarize(rows, config)
    # the cut binds from alpha1*n >= 32 -> both sizes enter the bound table,
    # but only n >= 640 saturates both clusters
    assert sorted(summary["cost_bound"]) == [400, 800]
    assert "tdr_slope_saturated" not in summary
    hat = summary["alpha_hat"]["alpha1"]
    assert 0.05 <= hat <= 0.15
    for entry in summary["cost_bound"].values():
        assert entry["tdr"] > 0 and entry["scaled_flat"] > 0


def test_format_report_mentions_each_substrate(tiny_rows):
    text = format_report(summarize(tiny_rows, TINY))
    for word in ("flat", "texthier", "tdr", "slope"):
        assert word in text
