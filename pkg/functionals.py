"""Energy, gradients, Gagliardo-Nirenberg quotients, Pohozaev and dilation tools."""

import logging
import math
from enum import Enum
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from discretize import DiscreteGraph, GraphFunction, MeshParams, build_mesh, graph_distance, project_mass
from graph import star_graph
from models import GNReport, ParameterError, PreconditionError, ProblemParams, UnsupportedGeometryError
from utils import soliton_profile

logger = logging.getLogger(__name__)

GN_SEED_SCALE = 1.0
NEGATIVE_VALUE_TOL = 1e-12


class Rearrangement(str, Enum):
    HALF_LINE_DECREASING = "HalfLineDecreasing"
    LINE_SYMMETRIC = "LineSymmetric"


def mass(u: GraphFunction) -> float:
    return float(u.dofs @ (u.dg.M @ u.dofs))


def kinetic(u: GraphFunction) -> float:
    """Integral of |u'|^2."""
    return float(u.dofs @ (u.dg.K @ u.dofs))


def lp_integral(u: GraphFunction, q: float) -> float:
    """Integral of |u|^q by 4-point Gauss quadrature per cell."""
    return float(u.dg.qw @ np.abs(u.dg.B @ u.dofs) ** q)


def inner(u: GraphFunction, v: GraphFunction) -> float:
    """Discrete L2 inner product."""
    return float(u.dofs @ (u.dg.M @ v.dofs))


def energy(u: GraphFunction, params: ProblemParams) -> float:
    dg = u.dg
    a = np.abs(dg.B @ u.dofs)
    return (0.5 * kinetic(u)
            - float(dg.qw @ a ** 6) / 6.0
            - params.alpha / params.p * float(dg.qw @ a ** params.p))


def differential(u: GraphFunction, params: ProblemParams) -> np.ndarray:
    """Vector d with d @ v = dE(u)[v] for every nodal vector v."""
    dg = u.dg
    uq = dg.B @ u.dofs
    a = np.abs(uq)
    nonlinear = uq ** 5 + params.alpha * a ** (params.p - 2.0) * uq
    return dg.K @ u.dofs - dg.B.T @ (dg.qw * nonlinear)


def energy_gradient(u: GraphFunction, params: ProblemParams) -> GraphFunction:
    """L2 Riesz representative of dE(u) on the free DOFs."""
    dg = u.dg
    d = differential(u, params)
    g = np.zeros(dg.n_dofs)
    g[dg.free_idx] = dg.mass_lu.solve(d[dg.free_idx])
    return GraphFunction(dg, g)


def multiplier(u: GraphFunction, params: ProblemParams) -> float:
    """Lagrange multiplier of -u'' + lam u = |u|^4 u + alpha |u|^(p-2) u; the soliton gives +1/3."""
    m = mass(u)
    if m <= 0.0:
        raise ParameterError("multiplier of a zero-mass function is undefined")
    return -float(differential(u, params) @ u.dofs) / m


def dual_norm(dg: DiscreteGraph, r: np.ndarray) -> float:
    """Norm of a residual vector in the dual of H1."""
    rf = r[dg.free_idx]
    return math.sqrt(max(float(rf @ dg.h1_lu.solve(rf)), 0.0))


def stationary_residual(u: GraphFunction, params: ProblemParams, lam: Optional[float] = None) -> float:
    """Dual H1 norm of the weak residual of the stationary equation."""
    if lam is None:
        lam = multiplier(u, params)
    r = differential(u, params) + lam * (u.dg.M @ u.dofs)
    return dual_norm(u.dg, r)


def gn_quotient(u: GraphFunction, q: float) -> float:
    """||u||_q^q / (||u||_2^((q+2)/2) ||u'||_2^((q-2)/2))."""
    k = kinetic(u)
    m = mass(u)
    if not k > 0.0 or not m > 0.0:
        raise ParameterError("Gagliardo-Nirenberg quotient needs a function with nonzero derivative")
    return lp_integral(u, q) / (m ** ((q + 2.0) / 4.0) * k ** ((q - 2.0) / 4.0))


def _gn_starts(dg: DiscreteGraph) -> list[tuple[str, GraphFunction]]:
    """Soliton bumps at every vertex, every bounded-edge midpoint and mid half-line."""
    g = dg.source
    points = []
    for v in sorted(g.vertices):
        edge_id, end = g.incident(v)[0]
        em = dg.edge_mesh(edge_id)
        points.append((f"vertex {v}", edge_id, em.length if end == "b" else 0.0))
    for e in g.bounded_edges:
        points.append((f"edge {e.edge_id}", e.edge_id, e.length / 2.0))
    for h in g.half_lines:
        points.append((f"half-line {h.edge_id}", h.edge_id, dg.mesh.L / 2.0))

    starts = []
    for label, edge_id, x in points:
        dist = graph_distance(dg, edge_id, x)
        dofs = soliton_profile(dist, GN_SEED_SCALE)
        dofs[~dg.free] = 0.0
        starts.append((label, project_mass(GraphFunction(dg, dofs), 1.0)))
    return starts


def _gn_ascent(u: GraphFunction, q: float, maxit: int, tol: float) -> tuple[float, GraphFunction, int, bool]:
    """
    Normalized fixed-point iteration on the stationarity condition of the quotient.

    Returns (quotient, function, iterations, converged); a start that uses up
    maxit without the gain dropping below tol is not converged.
    """
    dg = u.dg
    free = dg.free_idx
    Q = gn_quotient(u, q)

    for it in range(1, maxit + 1):
        k = kinetic(u)
        A = lp_integral(u, q)
        uq = dg.B @ u.dofs
        N = dg.B.T @ (dg.qw * np.abs(uq) ** (q - 2.0) * uq)
        op = dg.restrict((q - 2.0) / (2.0 * k) * dg.K + (q + 2.0) / 2.0 * dg.M)
        target = np.zeros(dg.n_dofs)
        target[free] = splu(op).solve(q * N[free] / A)
        if not np.any(target):
            return Q, u, it, True
        candidate = project_mass(GraphFunction(dg, target), 1.0)
        target = candidate.dofs

        step = 1.0
        Q_new = gn_quotient(candidate, q)
        while Q_new < Q and step > 1.0 / 64.0:
            step /= 2.0
            candidate = project_mass(GraphFunction(dg, u.dofs + step * (target - u.dofs)), 1.0)
            Q_new = gn_quotient(candidate, q)
        if Q_new < Q:
            return Q, u, it, True

        gain = Q_new - Q
        u, Q = candidate, Q_new
        if gain <= tol * Q:
            return Q, u, it, True
    return Q, u, maxit, False


def gn_constant(dg: DiscreteGraph, q: float = 6.0, maxit: int = 200, tol: float = 1e-9) -> GNReport:
    """
    Estimate the optimal constant C_q(G) by multi-start ascent of the quotient.

    Args:
        dg: discretized graph
        q: exponent, q > 2
        maxit: iteration cap per start
        tol: relative gain below which a start stops

    Returns:
        GNReport; for q = 6 it carries mu_G_estimate = sqrt(3 / C_6). Its
        converged flag is false when any start hit maxit.
    """
    if not q > 2.0:
        raise ParameterError(f"q must exceed 2, got {q}")
    if maxit < 1:
        raise ParameterError(f"maxit must be at least 1, got {maxit}")

    best_Q, best_u = -math.inf, None
    iterations, unconverged = {}, []
    for label, u0 in _gn_starts(dg):
        Q, u, its, done = _gn_ascent(u0, q, maxit, tol)
        logger.debug(f"GN start {label}: C_{q:g} ~ {Q:.6f} after {its} iterations")
        iterations[label] = its
        if not done:
            unconverged.append(label)
        if Q > best_Q:
            best_Q, best_u = Q, u

    mu_G = math.sqrt(3.0 / best_Q) if q == 6.0 else None
    logger.info(f"GN constant C_{q:g} ~ {best_Q:.6f}" + (f", mu_G ~ {mu_G:.6f}" if mu_G else ""))
    if unconverged:
        logger.warning(f"GN ascent hit maxit={maxit} for {len(unconverged)} start(s): {', '.join(unconverged)}")
    return GNReport(q=q, C_q_estimate=best_Q, maximizer=best_u, mu_G_estimate=mu_G,
                    converged=not unconverged, iterations=iterations, unconverged=unconverged)


def _require_star(u: GraphFunction, what: str):
    if not u.dg.source.is_star:
        raise UnsupportedGeometryError(f"{what} is only defined on the line, the half-line and star graphs")


def dilation_energy(u: GraphFunction, params: ProblemParams, lam: float) -> float:
    """E(u_lam) for u_lam(x) = sqrt(lam) u(lam x), from the integrals of u."""
    p = params.p
    return (lam ** 2 * (0.5 * kinetic(u) - lp_integral(u, 6.0) / 6.0)
            - params.alpha / p * lam ** ((p - 2.0) / 2.0) * lp_integral(u, p))


def dilation_first_derivative(u: GraphFunction, params: ProblemParams) -> float:
    """d/dlam E(u_lam) at lam = 1; zero is the Pohozaev identity."""
    p = params.p
    return (kinetic(u) - lp_integral(u, 6.0) / 3.0
            - params.alpha * (p - 2.0) / (2.0 * p) * lp_integral(u, p))


def pohozaev_residual(cp, params: ProblemParams) -> float:
    """
    Relative violation of the Pohozaev identity, normalized by the kinetic term.

    Accepts a CriticalPoint or a bare GraphFunction. Zero returns 0.
    """
    u = getattr(cp, "u", cp)
    _require_star(u, "the Pohozaev identity")
    k = kinetic(u)
    if k <= 0.0:
        return 0.0
    return abs(dilation_first_derivative(u, params)) / k


def dilation_closed_form(u: GraphFunction, params: ProblemParams) -> float:
    """(alpha/p)((p-2)/2)((6-p)/2) * integral |u|^p."""
    p = params.p
    return params.alpha / p * (p - 2.0) / 2.0 * (6.0 - p) / 2.0 * lp_integral(u, p)


def dilation_second_derivative(u: GraphFunction, params: ProblemParams, tol: float = 1e-6) -> float:
    """
    d^2/dlam^2 E(u_lam) at lam = 1 for a profile satisfying the Pohozaev identity.

    Raises:
        PreconditionError: Pohozaev residual above tol
    """
    residual = pohozaev_residual(u, params)
    if residual > tol:
        raise PreconditionError("first-order dilation condition violated", residual)
    p = params.p
    s = (p - 2.0) / 2.0
    return (kinetic(u) - lp_integral(u, 6.0) / 3.0
            - params.alpha / p * s * (s - 1.0) * lp_integral(u, p))


def scale_to_pohozaev(u: GraphFunction, params: ProblemParams) -> GraphFunction:
    """Amplitude c > 0 such that c * u satisfies the Pohozaev identity."""
    _require_star(u, "Pohozaev scaling")
    k = kinetic(u)
    S = lp_integral(u, 6.0)
    P = lp_integral(u, params.p)
    if not (k > 0.0 and S > 0.0):
        raise ParameterError("Pohozaev scaling needs a nonconstant, nonzero profile")
    beta = params.alpha * (params.p - 2.0) / (2.0 * params.p)

    def reduced(c):
        return k - c ** 4 * S / 3.0 - beta * c ** (params.p - 2.0) * P

    hi = 1.0
    while reduced(hi) >= 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise ParameterError("no Pohozaev amplitude found")
    c = brentq(reduced, 0.0, hi, xtol=1e-15, rtol=4.0 * np.finfo(float).eps, maxiter=500)
    logger.debug(f"Pohozaev amplitude c = {c:.12g}")
    return u.with_dofs(c * u.dofs)


def dilation(u: GraphFunction, lam: float, renormalize: bool = True) -> tuple[GraphFunction, float]:
    """
    Mass-preserving dilation sqrt(lam) u(lam x), resampled on the same mesh.

    The interpolation leakage is removed by rescaling to the original mass.
    Returns the dilated function and that renormalization factor (1.0 when
    renormalize is off or the resampled function vanishes).
    """
    _require_star(u, "dilation")
    if not lam > 0.0:
        raise ParameterError(f"dilation factor must be positive, got {lam}")
    dg = u.dg
    dofs = np.zeros(dg.n_dofs)
    for em in dg.edges:
        xs, values = u.edge_values(em.edge_id)
        dofs[em.dofs] = math.sqrt(lam) * np.interp(lam * em.x, xs, values, right=0.0)
    dofs[~dg.free] = 0.0
    out = GraphFunction(dg, dofs)

    factor = 1.0
    if renormalize:
        m0, m1 = mass(u), mass(out)
        if m1 > 0.0:
            factor = math.sqrt(m0 / m1)
            logger.debug(f"dilate lam={lam:g}: renormalization factor {factor:.12f}")
            out = out.with_dofs(factor * out.dofs)
    return out, factor


def dilate(u: GraphFunction, lam: float, renormalize: bool = True) -> GraphFunction:
    return dilation(u, lam, renormalize)[0]


def rearrange(u: GraphFunction, target: Rearrangement, h: Optional[float] = None) -> GraphFunction:
    """
    Monotone (half-line) or symmetric-decreasing (line) rearrangement of u >= 0.

    The distribution function is read off the quadrature samples sorted by
    value; the new profile lives on a fresh mesh whose length equals the
    measure of the source mesh and is rescaled to the original mass.
    """
    target = Rearrangement(target)
    dg = u.dg
    values = dg.B @ u.dofs
    scale = max(1.0, u.sup())
    if values.size and values.min() < -NEGATIVE_VALUE_TOL * scale:
        raise ParameterError("rearrangement needs a nonnegative function")
    values = np.clip(values, 0.0, None)

    order = np.argsort(-values, kind="stable")
    levels = values[order]
    measure = np.cumsum(dg.qw[order]) - 0.5 * dg.qw[order]
    total = float(dg.qw.sum())

    if h is None:
        h = min(em.h for em in dg.edges)
    if target == Rearrangement.HALF_LINE_DECREASING:
        line, L, stretch = star_graph(1, center="o"), total, 1.0
    else:
        line, L, stretch = star_graph(2, center="o"), total / 2.0, 2.0
    ndg = build_mesh(line, MeshParams(h=h, L=max(L, 10.0 * h), far_bc=dg.mesh.far_bc))

    out = ndg.sample(lambda edge_id, x: np.interp(stretch * x, measure, levels, right=0.0))
    m = mass(u)
    if m > 0.0:
        out = project_mass(out, m)
    return out


def energy_lower_bound(u: GraphFunction, params: ProblemParams, mu_G: float,
                       C_p: Optional[float] = None) -> float:
    """
    Lower bound on E(u) from the Gagliardo-Nirenberg inequalities.

    Valid for mass(u) < mu_G; C_p is needed when alpha > 0.
    """
    k = kinetic(u)
    m = mass(u)
    bound = 0.5 * (1.0 - (m / mu_G) ** 2) * k
    if params.alpha > 0.0:
        if C_p is None:
            raise ParameterError("the focusing lower bound needs C_p")
        p = params.p
        bound -= params.alpha / p * C_p * m ** ((p + 2.0) / 4.0) * k ** ((p - 2.0) / 4.0)
    return bound
