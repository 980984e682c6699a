"""Existence versus the length of a terminal edge attached to a graph without tips."""

import logging
from dataclasses import dataclass, field
from typing import Optional

from discretize import DEFAULT_H, MeshParams
from experiments.phase import solve_cell
from graph import MetricGraph, classify, with_terminal_edge
from models import ParameterError, PhasePoint, ProblemParams, Verdict
from solver import SolverConfig
from utils import MU_R_PLUS

logger = logging.getLogger(__name__)


@dataclass
class TipThresholdReport:
    rows: list[PhasePoint] = field(default_factory=list)
    largest_no_minimizer: Optional[float] = None
    smallest_converged: Optional[float] = None
    monotone: bool = True


def tip_length_threshold(g_base: MetricGraph, attach_vertex: str, p: float, alpha: float, mu: float,
                         ell_grid, cfg: Optional[SolverConfig] = None,
                         mesh: Optional[MeshParams] = None) -> TipThresholdReport:
    """
    Verdict for g_base plus a terminal edge of each length in ell_grid.

    A Converged length below a NoMinimizer length breaks the expected
    threshold pattern; it is logged and flagged, not raised.
    """
    if not alpha > 0.0:
        raise ParameterError(f"tip thresholds need alpha > 0, got {alpha}")
    if not 0.0 < mu < MU_R_PLUS:
        raise ParameterError(f"tip thresholds need 0 < mu < {MU_R_PLUS:.6g}, got {mu}")
    if classify(g_base).has_terminal_point:
        raise ParameterError("base graph already has a terminal point")
    if attach_vertex not in g_base.vertices:
        raise ParameterError(f"unknown vertex '{attach_vertex}'")

    cfg = cfg or SolverConfig()
    mesh = mesh or MeshParams(h=DEFAULT_H)
    params = ProblemParams(p=p, alpha=alpha, mu=mu)
    report = TipThresholdReport()

    for ell in sorted(float(e) for e in ell_grid):
        g = with_terminal_edge(g_base, attach_vertex, ell)
        # a terminal edge shorter than h would be a single cell
        cell_mesh = mesh if ell >= mesh.h else MeshParams(
            h=mesh.h, L=mesh.L, far_bc=mesh.far_bc, edge_h={**mesh.edge_h, "tip_edge": ell / 4.0}
        )
        point = solve_cell(g, params, cfg, cell_mesh, ell=ell)
        logger.info(f"ell={ell:g}: {point.verdict.value}, E={point.energy:.8g}")
        report.rows.append(point)

    no_min = [r.ell for r in report.rows if r.verdict == Verdict.NO_MINIMIZER]
    conv = [r.ell for r in report.rows if r.verdict == Verdict.CONVERGED]
    report.largest_no_minimizer = max(no_min) if no_min else None
    report.smallest_converged = min(conv) if conv else None
    if no_min and conv and min(conv) < max(no_min):
        report.monotone = False
        logger.warning(f"Non-monotone verdicts: Converged at ell={min(conv):g} "
                       f"below NoMinimizer at ell={max(no_min):g}")
    return report
