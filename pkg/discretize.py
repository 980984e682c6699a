"""Piecewise-linear, vertex-continuous discretization of metric graphs."""

import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from dotenv import load_dotenv
from scipy.sparse.csgraph import dijkstra
from scipy.sparse.linalg import splu

from graph import MetricGraph
from models import MeshSizeError, ParameterError

load_dotenv()

logger = logging.getLogger(__name__)

MAX_DOFS = int(float(os.getenv("GRAPHNLS_MAX_DOFS", "2000000")))

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
DEFAULT_H = 0.05

# 4-point Gauss-Legendre on [0, 1]; exact for |u|^6 of piecewise-linear u
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
GAUSS_POINTS = (_GL_X + 1.0) / 2.0
GAUSS_WEIGHTS = _GL_W / 2.0

# share of a half-line treated as its far end by the truncation check
OUTER_SHARE = 0.1
TRUNCATION_MASS_TOL = 1e-6


@dataclass(frozen=True)
class MeshParams:
    """Target width h, half-line truncation L, far boundary condition, per-edge widths."""
    h: float
    L: float = 40.0
    far_bc: str = DIRICHLET
    edge_h: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.h > 0.0:
            raise ParameterError(f"mesh width must be positive, got {self.h}")
        if not self.L >= 10.0 * self.h:
            raise ParameterError(f"truncation L={self.L} must be at least 10*h={10.0 * self.h}")
        if self.far_bc not in (DIRICHLET, NEUMANN):
            raise ParameterError(f"far_bc must be '{DIRICHLET}' or '{NEUMANN}', got '{self.far_bc}'")
        for edge_id, h in self.edge_h.items():
            if not h > 0.0:
                raise ParameterError(f"mesh width for edge '{edge_id}' must be positive, got {h}")

    def width(self, edge_id: str) -> float:
        return self.edge_h.get(edge_id, self.h)

    def describe(self) -> dict:
        return {"h": self.h, "L": self.L, "far_bc": self.far_bc, "edge_h": dict(self.edge_h)}


@dataclass(frozen=True)
class EdgeMesh:
    """Uniform nodes of one edge; dofs[0] sits at the edge origin."""
    edge_id: str
    half_line: bool
    length: float
    x: np.ndarray
    dofs: np.ndarray

    @property
    def h(self) -> float:
        return self.length / (len(self.x) - 1)


class DiscreteGraph:
    """
    Assembled P1 spaces over a metric graph.

    Finite vertices own one DOF shared by every incident edge end, so
    continuity holds by construction and the Kirchhoff balance is the
    natural condition of the weak form. Half-lines stop at L; with a
    Dirichlet far end their last node is pinned to zero.
    """

    def __init__(self, source: MetricGraph, mesh: MeshParams, edges: list[EdgeMesh],
                 n_dofs: int, vertex_dof: dict, pinned: list[int]):
        self.source = source
        self.mesh = mesh
        self.edges = edges
        self.n_dofs = n_dofs
        self.vertex_dof = vertex_dof
        self._edge_index = {em.edge_id: k for k, em in enumerate(edges)}

        self.free = np.ones(n_dofs, dtype=bool)
        self.free[np.asarray(pinned, dtype=np.int64)] = False
        self.free_idx = np.flatnonzero(self.free)

        self._assemble()

    def _assemble(self):
        left, right, dx, x0, owner = [], [], [], [], []
        for k, em in enumerate(self.edges):
            left.append(em.dofs[:-1])
            right.append(em.dofs[1:])
            dx.append(np.diff(em.x))
            x0.append(em.x[:-1])
            owner.append(np.full(len(em.x) - 1, k))
        I = np.concatenate(left)
        J = np.concatenate(right)
        dx = np.concatenate(dx)
        self._cells = (I, J, dx)

        n = self.n_dofs
        rows = np.concatenate([I, I, J, J])
        cols = np.concatenate([I, J, I, J])
        self.K = sp.coo_matrix(
            (np.concatenate([1.0 / dx, -1.0 / dx, -1.0 / dx, 1.0 / dx]), (rows, cols)), shape=(n, n)
        ).tocsr()
        self.M = sp.coo_matrix(
            (np.concatenate([dx / 3.0, dx / 6.0, dx / 6.0, dx / 3.0]), (rows, cols)), shape=(n, n)
        ).tocsr()

        n_cells = len(dx)
        q_rows = np.arange(4 * n_cells)
        xi = np.tile(GAUSS_POINTS, n_cells)
        self.B = sp.coo_matrix(
            (np.concatenate([1.0 - xi, xi]),
             (np.concatenate([q_rows, q_rows]), np.concatenate([np.repeat(I, 4), np.repeat(J, 4)]))),
            shape=(4 * n_cells, n),
        ).tocsr()
        self.qw = np.repeat(dx, 4) * np.tile(GAUSS_WEIGHTS, n_cells)
        self.q_edge = np.repeat(np.concatenate(owner), 4)
        self.q_x = np.repeat(np.concatenate(x0), 4) + xi * np.repeat(dx, 4)

        # lumped nodal weights
        self.weights = np.asarray(self.M.sum(axis=1)).ravel()

    def __getstate__(self):
        # factorizations do not pickle; workers refactor on demand
        state = dict(self.__dict__)
        state.pop("mass_lu", None)
        state.pop("h1_lu", None)
        return state

    def restrict(self, A: sp.spmatrix) -> sp.csc_matrix:
        return A[self.free_idx][:, self.free_idx].tocsc()

    @cached_property
    def mass_lu(self):
        return splu(self.restrict(self.M))

    @cached_property
    def h1_lu(self):
        return splu(self.restrict(self.K + self.M))

    @cached_property
    def _adjacency(self) -> sp.csr_matrix:
        I, J, dx = self._cells
        a, b = np.minimum(I, J), np.maximum(I, J)
        keep = a != b
        a, b, dx = a[keep], b[keep], dx[keep]
        # parallel single-cell edges: keep the shortest
        order = np.lexsort((dx, b, a))
        a, b, dx = a[order], b[order], dx[order]
        first = np.ones(len(a), dtype=bool)
        first[1:] = (a[1:] != a[:-1]) | (b[1:] != b[:-1])
        return sp.coo_matrix((dx[first], (a[first], b[first])), shape=(self.n_dofs, self.n_dofs)).tocsr()

    def edge_mesh(self, edge_id: str) -> EdgeMesh:
        try:
            return self.edges[self._edge_index[edge_id]]
        except KeyError:
            raise ParameterError(f"unknown edge '{edge_id}'")

    def edge_number(self, edge_id: str) -> int:
        return self._edge_index[edge_id]

    def zeros(self) -> "GraphFunction":
        return GraphFunction(self, np.zeros(self.n_dofs))

    def sample(self, fn) -> "GraphFunction":
        """Nodal interpolant of fn(edge_id, x); pinned nodes are set to zero."""
        dofs = np.zeros(self.n_dofs)
        for em in self.edges:
            dofs[em.dofs] = fn(em.edge_id, em.x)
        dofs[~self.free] = 0.0
        return GraphFunction(self, dofs)

    def describe(self) -> dict:
        info = self.mesh.describe()
        info["n_dofs"] = self.n_dofs
        return info


@dataclass
class GraphFunction:
    """Nodal values of a continuous piecewise-linear function on a DiscreteGraph."""
    dg: DiscreteGraph
    dofs: np.ndarray

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=float)
        if self.dofs.shape != (self.dg.n_dofs,):
            raise ParameterError(f"expected {self.dg.n_dofs} dofs, got shape {self.dofs.shape}")
        if not np.all(np.isfinite(self.dofs)):
            raise ParameterError("graph function has non-finite values")

    def with_dofs(self, dofs: np.ndarray) -> "GraphFunction":
        return GraphFunction(self.dg, dofs)

    def edge_values(self, edge_id: str) -> tuple[np.ndarray, np.ndarray]:
        em = self.dg.edge_mesh(edge_id)
        return em.x, self.dofs[em.dofs]

    def value_at(self, edge_id: str, x: float) -> float:
        xs, values = self.edge_values(edge_id)
        return float(np.interp(x, xs, values, right=0.0))

    def vertex_values(self) -> dict:
        return {v: float(self.dofs[k]) for v, k in self.dg.vertex_dof.items()}

    def sup(self) -> float:
        return float(np.max(np.abs(self.dofs))) if self.dofs.size else 0.0


def build_mesh(g: MetricGraph, mp: MeshParams) -> DiscreteGraph:
    """
    Mesh every edge uniformly with ceil(length / h) cells.

    Raises:
        MeshSizeError: total DOFs above GRAPHNLS_MAX_DOFS
        ParameterError: a half-line width override too coarse for L
    """
    plan = []
    for e in g.bounded_edges:
        n = max(1, math.ceil(e.length / mp.width(e.edge_id) - 1e-9))
        plan.append((e.edge_id, False, e.length, n, e.v_a, e.v_b))
    for hl in g.half_lines:
        h = mp.width(hl.edge_id)
        if mp.L < 10.0 * h:
            raise ParameterError(f"truncation L={mp.L} must be at least 10*h on half-line '{hl.edge_id}'")
        n = max(1, math.ceil(mp.L / h - 1e-9))
        plan.append((hl.edge_id, True, mp.L, n, hl.v, None))

    vertex_dof = {v: k for k, v in enumerate(sorted(g.vertices))}
    n_dofs = len(vertex_dof) + sum(n - 1 for _, _, _, n, _, _ in plan) + len(g.half_lines)
    if n_dofs > MAX_DOFS:
        raise MeshSizeError(f"mesh needs {n_dofs} dofs, cap is {MAX_DOFS} (GRAPHNLS_MAX_DOFS)")

    edges = []
    pinned = []
    next_dof = len(vertex_dof)
    for edge_id, half_line, length, n, v_a, v_b in plan:
        dofs = np.empty(n + 1, dtype=np.int64)
        dofs[0] = vertex_dof[v_a]
        dofs[1:n] = np.arange(next_dof, next_dof + n - 1)
        next_dof += n - 1
        if half_line:
            dofs[n] = next_dof
            if mp.far_bc == DIRICHLET:
                pinned.append(next_dof)
            next_dof += 1
        else:
            dofs[n] = vertex_dof[v_b]
        edges.append(EdgeMesh(edge_id, half_line, float(length), np.linspace(0.0, length, n + 1), dofs))

    dg = DiscreteGraph(g, mp, edges, n_dofs, vertex_dof, pinned)
    logger.debug(f"Built mesh: {n_dofs} dofs over {len(edges)} edges (h={mp.h}, L={mp.L}, {mp.far_bc})")
    return dg


def project_mass(u: GraphFunction, mu: float) -> GraphFunction:
    """Rescale u to mass mu."""
    m = float(u.dofs @ (u.dg.M @ u.dofs))
    if not m > 0.0:
        raise ParameterError("cannot project a zero-mass function onto the mass constraint")
    return u.with_dofs(math.sqrt(mu / m) * u.dofs)


def resample(u: GraphFunction, target: DiscreteGraph) -> GraphFunction:
    """Linear interpolation onto another mesh of the same graph; zero past a shorter truncation."""
    dofs = np.zeros(target.n_dofs)
    for em in target.edges:
        xs, values = u.edge_values(em.edge_id)
        dofs[em.dofs] = np.interp(em.x, xs, values, right=0.0)
    dofs[~target.free] = 0.0
    return GraphFunction(target, dofs)


def graph_distance(dg: DiscreteGraph, edge_id: str, x: float) -> np.ndarray:
    """Distance along the graph from the point x of an edge to every node."""
    em = dg.edge_mesh(edge_id)
    x = float(np.clip(x, 0.0, em.length))
    k = int(np.clip(np.searchsorted(em.x, x, side="right") - 1, 0, len(em.x) - 2))
    i, j = em.dofs[k], em.dofs[k + 1]
    d = dijkstra(dg._adjacency, directed=False, indices=[i, j])
    return np.minimum(d[0] + (x - em.x[k]), d[1] + (em.x[k + 1] - x))


def truncation_suspect(u: GraphFunction) -> bool:
    """True when more than 1e-6 of the mass sits in the outer tenth of some half-line."""
    dg = u.dg
    total = float(u.dofs @ (dg.M @ u.dofs))
    if total <= 0.0:
        return False
    density = dg.qw * (dg.B @ u.dofs) ** 2
    for k, em in enumerate(dg.edges):
        if not em.half_line:
            continue
        outer = (dg.q_edge == k) & (dg.q_x >= (1.0 - OUTER_SHARE) * em.length)
        if density[outer].sum() > TRUNCATION_MASS_TOL * total:
            return True
    return False
