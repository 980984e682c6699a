"""Metric graphs: parsing, validation, classification and critical masses."""

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import networkx as nx

from models import GraphError, GraphSyntaxError
from utils import MU_R, MU_R_PLUS

logger = logging.getLogger(__name__)

TYPE_LABELS = ("Type1", "Type2", "Type3", "Type4")

_STATEMENT = re.compile(r"[^;]+")
_TOKEN = re.compile(r"\S+")


@dataclass(frozen=True)
class BoundedEdge:
    """Edge [0, length] running from v_a (coordinate 0) to v_b."""
    edge_id: str
    v_a: str
    v_b: str
    length: float


@dataclass(frozen=True)
class HalfLine:
    """Edge [0, inf) attached to v at coordinate 0."""
    edge_id: str
    v: str


@dataclass(frozen=True)
class BranchSegment:
    edge_id: str
    offset: float
    forward: bool  # edge coordinate grows away from the tip


@dataclass(frozen=True)
class TerminalBranch:
    """
    Path that starts at a tip and continues through degree-2 vertices.

    Degree-2 vertices are invisible to the metric, so a subdivided terminal
    edge is still one branch of the original length.
    """
    tip: str
    attach: Optional[str]
    segments: tuple[BranchSegment, ...]
    length: float


@dataclass(frozen=True)
class MetricGraph:
    vertices: frozenset
    bounded_edges: tuple[BoundedEdge, ...]
    half_lines: tuple[HalfLine, ...]

    def __post_init__(self):
        if not self.half_lines:
            raise GraphError("compact graph: at least one half-line is required")

        seen = set()
        for e in self.bounded_edges:
            if not (math.isfinite(e.length) and e.length > 0.0):
                raise GraphError(f"nonpositive edge length {e.length} on edge '{e.edge_id}'")
            for v in (e.v_a, e.v_b):
                if v not in self.vertices:
                    raise GraphError(f"edge '{e.edge_id}' references unknown vertex '{v}'")
            if e.edge_id in seen:
                raise GraphError(f"duplicate edge id '{e.edge_id}'")
            seen.add(e.edge_id)
        for h in self.half_lines:
            if h.v not in self.vertices:
                raise GraphError(f"half-line '{h.edge_id}' references unknown vertex '{h.v}'")
            if h.edge_id in seen:
                raise GraphError(f"duplicate edge id '{h.edge_id}'")
            seen.add(h.edge_id)

        core = nx.MultiGraph()
        core.add_nodes_from(self.vertices)
        core.add_edges_from((e.v_a, e.v_b) for e in self.bounded_edges)
        if not nx.is_connected(core):
            raise GraphError("disconnected graph")

    @property
    def edge_ids(self) -> list[str]:
        """Bounded edges first, then half-lines, in declaration order."""
        return [e.edge_id for e in self.bounded_edges] + [h.edge_id for h in self.half_lines]

    def edge(self, edge_id: str):
        for e in self.bounded_edges:
            if e.edge_id == edge_id:
                return e
        for h in self.half_lines:
            if h.edge_id == edge_id:
                return h
        raise KeyError(edge_id)

    def degree(self, v: str) -> int:
        """Self-loops count twice."""
        deg = sum((e.v_a == v) + (e.v_b == v) for e in self.bounded_edges)
        return deg + sum(h.v == v for h in self.half_lines)

    def incident(self, v: str) -> list[tuple[str, str]]:
        """(edge_id, end) pairs at v, end in {'a', 'b', 'h'}; a self-loop appears twice."""
        ends = []
        for e in self.bounded_edges:
            if e.v_a == v:
                ends.append((e.edge_id, "a"))
            if e.v_b == v:
                ends.append((e.edge_id, "b"))
        ends.extend((h.edge_id, "h") for h in self.half_lines if h.v == v)
        return ends

    def terminal_vertices(self) -> list[str]:
        return sorted(v for v in self.vertices if self.degree(v) == 1)

    def terminal_branches(self) -> list[TerminalBranch]:
        branches = []
        for tip in self.terminal_vertices():
            segments = []
            offset = 0.0
            v = tip
            (edge_id, end), = self.incident(tip)
            while True:
                e = self.edge(edge_id)
                if isinstance(e, HalfLine):
                    segments.append(BranchSegment(edge_id, offset, True))
                    branches.append(TerminalBranch(tip, None, tuple(segments), math.inf))
                    break
                segments.append(BranchSegment(edge_id, offset, end == "a"))
                offset += e.length
                v = e.v_b if end == "a" else e.v_a
                onward = [(eid, en) for eid, en in self.incident(v) if eid != edge_id]
                if self.degree(v) != 2 or len(onward) != 1:
                    branches.append(TerminalBranch(tip, v, tuple(segments), offset))
                    break
                edge_id, end = onward[0]
        return branches

    @property
    def is_line(self) -> bool:
        """Two half-lines at one vertex and nothing else."""
        return (not self.bounded_edges and len(self.half_lines) == 2
                and self.half_lines[0].v == self.half_lines[1].v)

    @property
    def is_half_line(self) -> bool:
        return not self.bounded_edges and len(self.half_lines) == 1

    @property
    def is_star(self) -> bool:
        """All edges are half-lines at one vertex (covers the line and the half-line)."""
        return not self.bounded_edges and len({h.v for h in self.half_lines}) == 1

    @property
    def core_length(self) -> float:
        return sum(e.length for e in self.bounded_edges)

    def to_networkx(self) -> nx.MultiGraph:
        """Multigraph keyed by edge id; every half-line ends at its own node ('inf', id)."""
        G = nx.MultiGraph()
        G.add_nodes_from(self.vertices)
        for e in self.bounded_edges:
            G.add_edge(e.v_a, e.v_b, key=e.edge_id, length=e.length)
        for h in self.half_lines:
            G.add_edge(h.v, ("inf", h.edge_id), key=h.edge_id, length=math.inf)
        return G

    def to_text(self) -> str:
        lines = [f"edge {e.v_a} {e.v_b} {e.length!r} {e.edge_id}" for e in self.bounded_edges]
        lines += [f"halfline {h.v} {h.edge_id}" for h in self.half_lines]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class GraphClass:
    has_terminal_point: bool
    has_cycle_covering: bool
    num_half_lines: int
    type_label: str
    is_line: bool = False


@dataclass(frozen=True)
class CriticalMassReport:
    mu_R: float
    mu_R_plus: float
    mu_tilde: float
    mu_G_lower: float
    mu_G_upper: float
    mu_G_estimate: Optional[float] = None


def parse_graph(text: str) -> MetricGraph:
    """
    Parse the line-oriented graph format.

    Statements are `edge <v> <w> <length> [id]` and `halfline <v> [id]`,
    separated by newlines or ';'. `#` starts a comment. Edges without an id
    are named e0, e1, ... in order of appearance.

    Raises:
        GraphSyntaxError: malformed statement, with line and column
        GraphError: invalid graph (compact, disconnected, bad length)
    """
    statements = []
    explicit_ids = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        for stmt in _STATEMENT.finditer(line):
            tokens = [(t.group(), stmt.start() + t.start() + 1) for t in _TOKEN.finditer(stmt.group())]
            if not tokens:
                continue
            keyword, col = tokens[0]

            if keyword == "edge":
                if len(tokens) not in (4, 5):
                    bad_col = tokens[5][1] if len(tokens) > 5 else col
                    raise GraphSyntaxError("expected 'edge <v> <w> <length> [id]'", lineno, bad_col)
                length_tok, length_col = tokens[3]
                try:
                    length = float(length_tok)
                except ValueError:
                    raise GraphSyntaxError(f"bad edge length '{length_tok}'", lineno, length_col)
                if not (math.isfinite(length) and length > 0.0):
                    raise GraphError(f"line {lineno}: nonpositive edge length {length_tok}")
                edge_id = tokens[4][0] if len(tokens) == 5 else None
                statements.append(("edge", lineno, tokens, edge_id, length))

            elif keyword == "halfline":
                if len(tokens) not in (2, 3):
                    bad_col = tokens[3][1] if len(tokens) > 3 else col
                    raise GraphSyntaxError("expected 'halfline <v> [id]'", lineno, bad_col)
                edge_id = tokens[2][0] if len(tokens) == 3 else None
                statements.append(("halfline", lineno, tokens, edge_id, None))

            else:
                raise GraphSyntaxError(f"unknown statement '{keyword}'", lineno, col)

            if edge_id is not None:
                if edge_id in explicit_ids:
                    raise GraphSyntaxError(f"duplicate edge id '{edge_id}'", lineno, tokens[-1][1])
                explicit_ids.add(edge_id)

    vertices = set()
    bounded, half_lines = [], []
    counter = 0
    for kind, lineno, tokens, edge_id, length in statements:
        if edge_id is None:
            while f"e{counter}" in explicit_ids:
                counter += 1
            edge_id = f"e{counter}"
            counter += 1
        if kind == "edge":
            v_a, v_b = tokens[1][0], tokens[2][0]
            vertices.update((v_a, v_b))
            bounded.append(BoundedEdge(edge_id, v_a, v_b, length))
        else:
            v = tokens[1][0]
            vertices.add(v)
            half_lines.append(HalfLine(edge_id, v))

    g = MetricGraph(frozenset(vertices), tuple(bounded), tuple(half_lines))
    logger.debug(f"Parsed graph: {len(vertices)} vertices, {len(bounded)} bounded edges, "
                 f"{len(half_lines)} half-lines")
    return g


def load_graph(path) -> MetricGraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def _bridges_split_unbounded(g: MetricGraph) -> bool:
    """Every bounded bridge leaves an infinity node on both sides."""
    G = g.to_networkx()
    multiplicity = Counter()
    simple = nx.Graph()
    simple.add_nodes_from(G.nodes)
    for u, v in G.edges():
        if u == v:
            continue
        multiplicity[frozenset((u, v))] += 1
        simple.add_edge(u, v)

    for u, v in nx.bridges(simple):
        if multiplicity[frozenset((u, v))] > 1:
            continue
        if isinstance(u, tuple) or isinstance(v, tuple):
            continue
        cut = simple.copy()
        cut.remove_edge(u, v)
        for side in (u, v):
            component = nx.node_connected_component(cut, side)
            if not any(isinstance(n, tuple) for n in component):
                return False
    return True


def classify(g: MetricGraph) -> GraphClass:
    """Assign one of the four mutually exclusive graph types."""
    has_tip = bool(g.terminal_vertices())
    n_half = len(g.half_lines)
    covering = n_half >= 2 and not has_tip and _bridges_split_unbounded(g)

    if has_tip:
        label = "Type1"
    elif covering:
        label = "Type2"
    elif n_half == 1:
        label = "Type3"
    else:
        label = "Type4"

    return GraphClass(
        has_terminal_point=has_tip,
        has_cycle_covering=covering,
        num_half_lines=n_half,
        type_label=label,
        is_line=g.is_line,
    )


def critical_mass_report(g: MetricGraph, c: Optional[GraphClass] = None) -> CriticalMassReport:
    """Critical-mass constants; mu_G is bracketed, its estimate comes from gn_constant."""
    if c is None:
        c = classify(g)

    if c.type_label == "Type2":
        lower, upper = MU_R, MU_R
    elif c.type_label in ("Type1", "Type3"):
        lower, upper = MU_R_PLUS, MU_R_PLUS
    else:
        # strictly above mu_R+ for Type4; attaining mu_R is open
        lower, upper = MU_R_PLUS, MU_R

    return CriticalMassReport(
        mu_R=MU_R,
        mu_R_plus=MU_R_PLUS,
        mu_tilde=MU_R_PLUS if c.has_terminal_point else MU_R,
        mu_G_lower=lower,
        mu_G_upper=upper,
    )


def star_graph(n: int, center: str = "c") -> MetricGraph:
    if n < 1:
        raise GraphError("a star graph needs at least one half-line")
    return MetricGraph(frozenset({center}), (), tuple(HalfLine(f"h{i}", center) for i in range(n)))


def with_terminal_edge(g: MetricGraph, v: str, ell: float,
                       tip: str = "tip", edge_id: str = "tip_edge") -> MetricGraph:
    """Attach a pendant edge of length ell at vertex v."""
    if v not in g.vertices:
        raise GraphError(f"unknown attach vertex '{v}'")
    while tip in g.vertices:
        tip += "'"
    return MetricGraph(
        g.vertices | {tip},
        g.bounded_edges + (BoundedEdge(edge_id, v, tip, float(ell)),),
        g.half_lines,
    )


def subdivide(g: MetricGraph, edge_id: str, at: float) -> MetricGraph:
    """
    Split an edge at distance `at` from its origin into `<id>.0` and `<id>.1`.

    A half-line becomes a bounded piece followed by a half-line.
    """
    e = g.edge(edge_id)
    mid = f"{edge_id}.m"
    while mid in g.vertices:
        mid += "'"

    if isinstance(e, HalfLine):
        if not at > 0.0:
            raise GraphError(f"cannot subdivide half-line '{edge_id}' at {at}")
        head = BoundedEdge(f"{edge_id}.0", e.v, mid, at)
        half_lines = tuple(HalfLine(f"{edge_id}.1", mid) if h.edge_id == edge_id else h
                           for h in g.half_lines)
        return MetricGraph(g.vertices | {mid}, g.bounded_edges + (head,), half_lines)

    if not 0.0 < at < e.length:
        raise GraphError(f"cannot subdivide edge '{edge_id}' of length {e.length} at {at}")
    bounded = []
    for b in g.bounded_edges:
        if b.edge_id == edge_id:
            bounded.append(replace(b, edge_id=f"{edge_id}.0", v_b=mid, length=at))
            bounded.append(replace(b, edge_id=f"{edge_id}.1", v_a=mid, length=e.length - at))
        else:
            bounded.append(b)
    return MetricGraph(g.vertices | {mid}, tuple(bounded), g.half_lines)
