"""Closed-form profiles and the explicit blow-up families."""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional

import numpy as np

from discretize import DiscreteGraph, GraphFunction, MeshParams, build_mesh, graph_distance, project_mass
from functionals import energy, kinetic, lp_integral, mass, pohozaev_residual
from graph import MetricGraph, TerminalBranch, star_graph, subdivide
from models import BlowupTrace, MeshSizeError, ParameterError, ProblemParams, UnsupportedGeometryError
from utils import MU_R_PLUS, soliton_profile

logger = logging.getLogger(__name__)

# relative soliton value tolerated at the truncation point
SUPPORT_TOL = 1e-4

# refined window, in units of 1/lam, around a concentrating family
TIP_WINDOW = 40.0
LINE_WINDOW = 80.0
DEFAULT_RESOLUTION = 256
DEFAULT_FLOOR = -1e3


class Restriction(str, Enum):
    FULL_LINE = "FullLine"
    HALF_LINE = "HalfLine"


class BlowupMode(str, Enum):
    TIP = "tip"
    SCALED = "scaled"
    LINE = "line"


@dataclass(frozen=True)
class SolitonSpec:
    lam: float = 1.0
    x0: float = 0.0
    restriction: Restriction = Restriction.FULL_LINE

    def __post_init__(self):
        if not self.lam > 0.0:
            raise ParameterError(f"soliton scale must be positive, got {self.lam}")


@dataclass(frozen=True)
class CompactProfile:
    """amplitude * (phi_kappa(s) - phi_kappa(support)) on [0, support], zero beyond."""
    support: float
    kappa: float
    amplitude: float = 1.0

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        shifted = soliton_profile(s, self.kappa) - soliton_profile(self.support, self.kappa)
        inside = (s >= 0.0) & (s <= self.support)
        return np.where(inside, self.amplitude * np.clip(shifted, 0.0, None), 0.0)


def soliton(spec: SolitonSpec, dg: DiscreteGraph) -> GraphFunction:
    """
    Nodal samples of sqrt(lam) sech^(1/2)(2 lam (x - x0) / sqrt(3)) on the line or half-line.

    On the line the first half-line carries x > 0 and the second x < 0.

    Raises:
        UnsupportedGeometryError: graph is not the line (resp. half-line)
        ParameterError: the profile does not decay before the truncation point
    """
    g = dg.source
    if spec.restriction == Restriction.FULL_LINE and not g.is_line:
        raise UnsupportedGeometryError("full-line soliton needs a graph isometric to the line")
    if spec.restriction == Restriction.HALF_LINE and not g.is_half_line:
        raise UnsupportedGeometryError("half-soliton needs a graph isometric to the half-line")

    reach = dg.mesh.L - abs(spec.x0)
    if reach <= 0.0 or soliton_profile(reach, spec.lam) > SUPPORT_TOL * math.sqrt(spec.lam):
        raise ParameterError(f"support overflow: soliton at x0={spec.x0} does not fit in L={dg.mesh.L}")

    signs = {h.edge_id: (1.0 if k == 0 else -1.0) for k, h in enumerate(g.half_lines)}
    return dg.sample(lambda edge_id, x: soliton_profile(signs[edge_id] * x - spec.x0, spec.lam))


def soliton_on_graph(dg: DiscreteGraph, lam: float, edge_id: str, x: float) -> GraphFunction:
    """Soliton profile of the graph distance to a point; a seed on any graph."""
    dofs = soliton_profile(graph_distance(dg, edge_id, x), lam)
    dofs[~dg.free] = 0.0
    return GraphFunction(dg, dofs)


def ode_residual(u: GraphFunction, multiplier: float, params: Optional[ProblemParams] = None) -> float:
    """
    Max of |-u'' + m u - u^5 (- alpha |u|^(p-2) u)| by second differences.

    Only edge-interior nodes whose neighbours are both free count; the
    truncation jump next to a pinned far node is not part of the equation.
    """
    worst = 0.0
    for em in u.dg.edges:
        values = u.dofs[em.dofs]
        if len(values) < 3:
            continue
        free = u.dg.free[em.dofs]
        keep = free[:-2] & free[2:]
        mid = values[1:-1]
        lap = (values[:-2] - 2.0 * mid + values[2:]) / em.h ** 2
        r = -lap + multiplier * mid - mid ** 5
        if params is not None:
            r -= params.alpha * np.abs(mid) ** (params.p - 2.0) * mid
        if keep.any():
            worst = max(worst, float(np.max(np.abs(r[keep]))))
    return worst


def soliton_certificate(lam: float = 1.0, h: float = 1e-3, L: float = 20.0) -> dict:
    """Mass, energy, ODE and Pohozaev residuals of the sampled soliton on the truncated line."""
    dg = build_mesh(star_graph(2, center="o"), MeshParams(h=h, L=L))
    u = soliton(SolitonSpec(lam=lam), dg)
    m = mass(u)
    params = ProblemParams(p=4.0, alpha=0.0, mu=m)
    return {
        "lambda": lam,
        "mass": m,
        "energy": energy(u, params),
        "ode_residual": ode_residual(u, lam ** 2 / 3.0),
        "pohozaev_residual": pohozaev_residual(u, params),
        "n_dofs": dg.n_dofs,
    }


def _branch_coordinates(dg: DiscreteGraph, branch: TerminalBranch):
    """(edge mesh, distance-from-tip of its nodes) along a terminal branch."""
    for seg in branch.segments:
        em = dg.edge_mesh(seg.edge_id)
        yield em, seg.offset + (em.x if seg.forward else em.length - em.x)


def _find_branch(g: MetricGraph, ell: Optional[float] = None) -> TerminalBranch:
    branches = g.terminal_branches()
    if not branches:
        raise ParameterError("graph has no terminal edge")
    if ell is None:
        return branches[0]
    for b in branches:
        if (math.isinf(ell) and math.isinf(b.length)) or math.isclose(b.length, ell, rel_tol=1e-9):
            return b
    raise ParameterError(f"no terminal edge of length {ell}")


def tip_blowup_family(ell: Optional[float], lam: float, dg: DiscreteGraph, mu: float = MU_R_PLUS) -> GraphFunction:
    """
    Shifted half-soliton phi_lam - phi_lam(ell) on the terminal edge, tip at 0, mass mu.

    The function vanishes at the attach vertex and everywhere off the terminal
    edge, so its energy is the energy of the edge alone.
    """
    branch = _find_branch(dg.source, ell)
    shift = 0.0 if math.isinf(branch.length) else float(soliton_profile(branch.length, lam))
    dofs = np.zeros(dg.n_dofs)
    for em, s in _branch_coordinates(dg, branch):
        dofs[em.dofs] = np.clip(soliton_profile(s, lam) - shift, 0.0, None)
    dofs[~dg.free] = 0.0
    return project_mass(GraphFunction(dg, dofs), mu)


def _reference_mesh(u0: CompactProfile, resolution: int) -> DiscreteGraph:
    half_line = subdivide(star_graph(1, center="o"), "h0", u0.support)
    mp = MeshParams(h=u0.support, L=10.0 * u0.support, edge_h={"h0.0": u0.support / resolution})
    return build_mesh(half_line, mp)


@lru_cache(maxsize=32)
def reference_integrals(u0: CompactProfile, p: float, resolution: int = 1024) -> dict:
    """Integrals of u0 on a reference half-line mesh: mass, kinetic, L6, Lp and E0."""
    dg = _reference_mesh(u0, resolution)
    dofs = np.zeros(dg.n_dofs)
    for em, s in _branch_coordinates(dg, _find_branch(dg.source)):
        dofs[em.dofs] = u0(s)
    u = GraphFunction(dg, dofs)
    k = kinetic(u)
    l6 = lp_integral(u, 6.0)
    return {"mass": mass(u), "kinetic": k, "l6": l6, "lp": lp_integral(u, p), "E0": 0.5 * k - l6 / 6.0}


def default_compact_profile(mu: float, support: float = 1.0, sharpness: float = 8.0,
                            resolution: int = 1024) -> CompactProfile:
    """
    Truncated, shifted half-soliton of mass mu with negative critical energy.

    Raises:
        ParameterError: E0 >= 0 (happens for mu <= mu_R+)
    """
    unit = CompactProfile(support=support, kappa=sharpness / support)
    m1 = reference_integrals(unit, 4.0, resolution)["mass"]
    u0 = CompactProfile(support=support, kappa=unit.kappa, amplitude=math.sqrt(mu / m1))
    E0 = reference_integrals(u0, 4.0, resolution)["E0"]
    if not E0 < 0.0:
        raise ParameterError(f"nonnegative E0={E0:.3e} for mass {mu}; a compact profile needs mu > mu_R+")
    logger.debug(f"Compact profile: support {support}, E0 = {E0:.6f}")
    return u0


def compact_blowup_family(u0: CompactProfile, lam: float, dg: DiscreteGraph,
                          check_energy: bool = True) -> GraphFunction:
    """
    sqrt(lam) u0(lam s) on the terminal edge, s the distance from the tip.

    Raises:
        ParameterError: E0(u0) >= 0, or support / lam longer than the terminal edge
    """
    if check_energy and not reference_integrals(u0, 4.0)["E0"] < 0.0:
        raise ParameterError("compact profile has nonnegative E0")
    branch = _find_branch(dg.source)
    if u0.support / lam > branch.length * (1.0 + 1e-12):
        raise ParameterError(f"support overflow: {u0.support / lam:g} exceeds terminal edge {branch.length:g}")
    dofs = np.zeros(dg.n_dofs)
    for em, s in _branch_coordinates(dg, branch):
        dofs[em.dofs] = math.sqrt(lam) * u0(lam * s)
    dofs[~dg.free] = 0.0
    return GraphFunction(dg, dofs)


def line_blowup_family(lam: float, dg: DiscreteGraph, mu: float,
                       edge_id: Optional[str] = None, x0: Optional[float] = None) -> GraphFunction:
    """
    Scaled soliton centred at x0 on one edge, shifted down to vanish at 0 and 2 x0.

    On any graph this is a mass-mu function of the line that fits in a single edge.
    """
    g = dg.source
    if edge_id is None:
        edge_id = g.half_lines[0].edge_id
    if x0 is None:
        x0 = LINE_WINDOW / (2.0 * lam)
    em = dg.edge_mesh(edge_id)
    if 2.0 * x0 > em.length * (1.0 + 1e-12):
        raise ParameterError(f"support overflow: {2.0 * x0:g} exceeds edge '{edge_id}' of length {em.length:g}")
    shift = float(soliton_profile(x0, lam))
    values = np.clip(soliton_profile(em.x - x0, lam) - shift, 0.0, None)
    values[em.x > 2.0 * x0] = 0.0
    dofs = np.zeros(dg.n_dofs)
    dofs[em.dofs] = values
    dofs[~dg.free] = 0.0
    return project_mass(GraphFunction(dg, dofs), mu)


def blowup_mesh(g: MetricGraph, mode: BlowupMode, lam: float, mesh: MeshParams,
                resolution: int = DEFAULT_RESOLUTION,
                u0: Optional[CompactProfile] = None) -> tuple[DiscreteGraph, str, float]:
    """
    Mesh for one member of a family: the edge carrying it is split so that
    only a window of width ~1/lam is refined.

    Returns:
        (mesh, id of the refined edge, window length)
    """
    mode = BlowupMode(mode)
    if mode == BlowupMode.LINE:
        head = g.half_lines[0].edge_id
        extent = LINE_WINDOW / lam
        fine_g, fine_id = subdivide(g, head, extent), f"{head}.0"
        h_fine = min(mesh.h, 1.0 / (lam * resolution))
    else:
        branch = _find_branch(g)
        seg = branch.segments[0]
        edge = g.edge(seg.edge_id)
        first = getattr(edge, "length", math.inf)
        if mode == BlowupMode.TIP:
            extent = TIP_WINDOW / lam
            h_fine = min(mesh.h, 1.0 / (lam * resolution))
        else:
            if u0 is None:
                raise ParameterError("scaled mode needs a compact profile")
            extent = u0.support / lam
            h_fine = extent / resolution
        if extent < first * (1.0 - 1e-12):
            at = extent if seg.forward else first - extent
            fine_g = subdivide(g, seg.edge_id, at)
            fine_id = f"{seg.edge_id}.0" if seg.forward else f"{seg.edge_id}.1"
        else:
            fine_g, fine_id = g, seg.edge_id
            h_fine = min(h_fine, mesh.h)

    edge_h = dict(mesh.edge_h)
    edge_h[fine_id] = h_fine
    mp = MeshParams(h=mesh.h, L=mesh.L, far_bc=mesh.far_bc, edge_h=edge_h)
    return build_mesh(fine_g, mp), fine_id, extent


def family_member(g: MetricGraph, mode: BlowupMode, lam: float, params: ProblemParams,
                  mesh: MeshParams, resolution: int = DEFAULT_RESOLUTION,
                  u0: Optional[CompactProfile] = None) -> GraphFunction:
    """Build the mesh and the family function for one lam."""
    mode = BlowupMode(mode)
    dg, fine_id, extent = blowup_mesh(g, mode, lam, mesh, resolution, u0)
    if mode == BlowupMode.TIP:
        return tip_blowup_family(_find_branch(g).length, lam, dg, params.mu)
    if mode == BlowupMode.SCALED:
        return compact_blowup_family(u0, lam, dg)
    return line_blowup_family(lam, dg, params.mu, edge_id=fine_id, x0=extent / 2.0)


def certify(lams: list[float], energies: list[float], floor: float) -> tuple[bool, Optional[float]]:
    """Below the floor with a negative fitted slope dE/dlog(lam) over the last three points."""
    if len(energies) < 3:
        return False, None
    slope = float(np.polyfit(np.log(lams[-3:]), energies[-3:], 1)[0])
    return (min(energies) < floor and slope < 0.0), slope


def blowup_sweep(g: MetricGraph, mode: BlowupMode, params: ProblemParams, lmax: int,
                 mesh: MeshParams, floor: float = DEFAULT_FLOOR,
                 resolution: int = DEFAULT_RESOLUTION, u0: Optional[CompactProfile] = None,
                 stop_when_certified: bool = False) -> BlowupTrace:
    """
    Energies of a blow-up family along lam = 2^k, k = 0..lmax.

    Members that do not fit (support overflow, mesh cap) are skipped and
    logged; the sweep itself never aborts.
    """
    mode = BlowupMode(mode)
    if mode == BlowupMode.SCALED and u0 is None:
        u0 = default_compact_profile(params.mu)

    lams, energies, skipped = [], [], []
    certified, slope = False, None
    for k in range(lmax + 1):
        lam = 2.0 ** k
        try:
            u = family_member(g, mode, lam, params, mesh, resolution, u0)
            E = energy(u, params)
        except (ParameterError, MeshSizeError) as e:
            logger.warning(f"Blow-up {mode.value}: lam={lam:g} skipped: {e}")
            skipped.append(lam)
            continue

        lams.append(lam)
        energies.append(E)
        logger.info(f"Blow-up {mode.value}: lam={lam:g} E={E:.6g}")
        certified, slope = certify(lams, energies, floor)
        if certified and stop_when_certified:
            break

    return BlowupTrace(mode=mode.value, lams=lams, energies=energies, floor=floor,
                       certified=certified, slope=slope, skipped=skipped)
