import math

import numpy as np
import pytest

from graph import (
    BoundedEdge,
    HalfLine,
    MetricGraph,
    classify,
    critical_mass_report,
    parse_graph,
    star_graph,
    subdivide,
    with_terminal_edge,
)
from models import GraphError, GraphSyntaxError
from tests.conftest import graph_file
from graph import load_graph
from utils import MU_R, MU_R_PLUS


def test_parse_line():
    g = parse_graph("halfline v0; halfline v0")
    assert g.is_line
    assert g.vertices == frozenset({"v0"})
    assert [h.edge_id for h in g.half_lines] == ["e0", "e1"]


def test_parse_example_a():
    g = parse_graph("edge v0 v1 1.0; halfline v0; halfline v0")
    assert len(g.bounded_edges) == 1 and len(g.half_lines) == 2
    assert g.bounded_edges[0].length == 1.0
    assert g.terminal_vertices() == ["v1"]


def test_parse_tadpole_self_loop_degree():
    g = parse_graph("edge v0 v0 2.0; halfline v0")
    assert g.degree("v0") == 3
    assert g.terminal_vertices() == []


def test_parse_comments_and_explicit_ids():
    g = parse_graph("# a comment\nedge a b 0.5 loop0  # trailing\nhalfline a e0\nhalfline b\n")
    assert g.edge_ids == ["loop0", "e0", "e1"]


@pytest.mark.parametrize("text, line, col", [
    ("halfline v0\nedge v0 v1", 2, 1),
    ("halfline v0\nedge v0 v1 abc", 2, 12),
    ("halfline v0; vertex v1", 1, 14),
])
def test_syntax_errors_report_position(text, line, col):
    with pytest.raises(GraphSyntaxError) as err:
        parse_graph(text)
    assert err.value.line == line
    assert err.value.col == col


@pytest.mark.parametrize("text, fragment", [
    ("edge v0 v1 1.0", "compact"),
    ("halfline v0; halfline v1", "disconnected"),
    ("edge v0 v1 0.0; halfline v0", "nonpositive"),
    ("edge v0 v1 -2; halfline v0", "nonpositive"),
])
def test_invalid_graphs(text, fragment):
    with pytest.raises(GraphError, match=fragment):
        parse_graph(text)


def test_text_round_trip(signpost):
    assert parse_graph(signpost.to_text()) == signpost


def test_classify_examples(star3, half_line, tadpole):
    c = classify(star3)
    assert c.type_label == "Type2" and c.has_cycle_covering

    c = classify(half_line)
    assert c.type_label == "Type1" and c.has_terminal_point

    c = classify(tadpole)
    assert c.type_label == "Type3" and c.num_half_lines == 1


def test_example_graphs_cover_all_types():
    labels = [classify(load_graph(graph_file(name))).type_label
              for name in ("example_a", "example_b", "tadpole", "signpost")]
    assert labels == ["Type1", "Type2", "Type3", "Type4"]


def test_critical_mass_report_line(line):
    r = critical_mass_report(line)
    assert r.mu_tilde == pytest.approx(2.720699, abs=1e-6)
    assert r.mu_G_lower == r.mu_G_upper == r.mu_tilde == MU_R
    assert r.mu_G_estimate is None


def test_critical_mass_report_example_a(example_a):
    r = critical_mass_report(example_a)
    assert r.mu_tilde == pytest.approx(1.360350, abs=1e-6)
    assert r.mu_G_lower == r.mu_G_upper == MU_R_PLUS


def test_critical_mass_report_signpost(signpost):
    r = critical_mass_report(signpost)
    assert r.mu_tilde == MU_R
    assert (r.mu_G_lower, r.mu_G_upper) == (MU_R_PLUS, MU_R)


def test_classification_invariant_under_subdivision(signpost, example_a, tadpole):
    for g in (signpost, example_a, tadpole):
        e = g.bounded_edges[0]
        split = subdivide(g, e.edge_id, e.length / 3.0)
        assert classify(split).type_label == classify(g).type_label
        assert split.core_length == pytest.approx(g.core_length)


def test_subdivided_terminal_edge_is_one_branch(example_a):
    split = subdivide(example_a, "e0", 0.25)
    (branch,) = split.terminal_branches()
    assert branch.tip == "v1"
    assert branch.length == pytest.approx(1.0)
    assert [s.edge_id for s in branch.segments] == ["e0.1", "e0.0"]


def test_half_line_branch_is_infinite(half_line):
    (branch,) = half_line.terminal_branches()
    assert math.isinf(branch.length)
    assert branch.attach is None


def test_with_terminal_edge(star3):
    g = with_terminal_edge(star3, "c", 2.0)
    c = classify(g)
    assert c.type_label == "Type1"
    assert g.terminal_branches()[0].length == 2.0
    with pytest.raises(GraphError):
        with_terminal_edge(star3, "nowhere", 1.0)


def test_star_graph():
    g = star_graph(3)
    assert g.is_star and not g.is_line
    assert star_graph(2).is_line
    assert star_graph(1).is_half_line


def _covering_by_brute_force(g: MetricGraph) -> bool:
    """Remove each bounded edge; a split must leave a half-line on both sides."""
    if len(g.half_lines) < 2 or g.terminal_vertices():
        return False
    anchored = {h.v for h in g.half_lines}

    def components(edges):
        parent = {v: v for v in g.vertices}

        def find(v):
            while parent[v] != v:
                v = parent[v]
            return v

        for e in edges:
            parent[find(e.v_a)] = find(e.v_b)
        groups = {}
        for v in g.vertices:
            groups.setdefault(find(v), set()).add(v)
        return list(groups.values())

    for e in g.bounded_edges:
        if e.v_a == e.v_b:
            continue
        parts = components([b for b in g.bounded_edges if b is not e])
        if len(parts) > 1 and not all(part & anchored for part in parts):
            return False
    return True


def _random_graph(rng) -> MetricGraph:
    n = int(rng.integers(1, 5))
    vertices = [f"v{i}" for i in range(n)]
    edges = [BoundedEdge(f"b{i}", vertices[i], vertices[i + 1], 1.0) for i in range(n - 1)]
    for k in range(int(rng.integers(0, 4))):
        a, b = rng.choice(vertices, size=2)
        edges.append(BoundedEdge(f"x{k}", str(a), str(b), float(rng.uniform(0.5, 2.0))))
    half = [HalfLine(f"h{k}", str(rng.choice(vertices))) for k in range(int(rng.integers(1, 4)))]
    return MetricGraph(frozenset(vertices), tuple(edges[:8 - len(half)]), tuple(half))


def test_cycle_covering_matches_brute_force():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(300):
        try:
            g = _random_graph(rng)
        except GraphError:
            continue
        assert classify(g).has_cycle_covering == _covering_by_brute_force(g), g.to_text()
        checked += 1
    assert checked > 100
