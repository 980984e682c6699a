"""Strict subadditivity of the ground-state level in the mass."""

import logging
from dataclasses import dataclass, field
from typing import Optional

from discretize import DEFAULT_H, MeshParams, build_mesh
from graph import MetricGraph, critical_mass_report
from models import ParameterError, PreconditionError, ProblemParams, Verdict
from solver import SolverConfig, ground_state_energy

logger = logging.getLogger(__name__)


@dataclass
class SubadditivityRow:
    mu1: float
    mu2: float
    e1: float
    e2: float
    e12: float

    @property
    def margin(self) -> float:
        """e1 + e2 - e12; positive when strictly subadditive."""
        return self.e1 + self.e2 - self.e12

    @property
    def strict(self) -> bool:
        return self.margin > 0.0


@dataclass
class SubadditivityReport:
    rows: list[SubadditivityRow] = field(default_factory=list)

    @property
    def all_strict(self) -> bool:
        return all(r.strict for r in self.rows)

    @property
    def min_margin(self) -> float:
        return min(r.margin for r in self.rows)


def subadditivity_check(g: MetricGraph, p: float, alpha: float, pairs, cfg: Optional[SolverConfig] = None,
                        mesh: Optional[MeshParams] = None) -> SubadditivityReport:
    """
    Levels at mu1, mu2 and mu1 + mu2 for every pair; each mass is solved once.

    Raises:
        ParameterError: alpha <= 0, a nonpositive mass, or mu1 + mu2 >= mu_tilde
        PreconditionError: a level is still unbounded on the mesh
    """
    if not alpha > 0.0:
        raise ParameterError(f"subadditivity needs alpha > 0, got {alpha}")
    mu_tilde = critical_mass_report(g).mu_tilde
    pairs = [(float(mu1), float(mu2)) for mu1, mu2 in pairs]
    for mu1, mu2 in pairs:
        if not (mu1 > 0.0 and mu2 > 0.0):
            raise ParameterError(f"masses must be positive, got ({mu1:g}, {mu2:g})")
        if not mu1 + mu2 < mu_tilde:
            raise ParameterError(f"mu1 + mu2 = {mu1 + mu2:g} is not below mu_tilde = {mu_tilde:.6g}")

    cfg = cfg or SolverConfig()
    mesh = mesh or MeshParams(h=DEFAULT_H)
    dg = build_mesh(g, mesh)
    levels = {}

    def level(mu: float) -> float:
        if mu not in levels:
            result = ground_state_energy(dg, ProblemParams(p=p, alpha=alpha, mu=mu), cfg)
            if result.verdict == Verdict.UNBOUNDED:
                raise PreconditionError(f"level at mu={mu:g} is unbounded", residual=float("-inf"))
            levels[mu] = result.energy
            logger.info(f"Level at mu={mu:g}: {result.energy:.10g} ({result.verdict.value})")
        return levels[mu]

    report = SubadditivityReport()
    for mu1, mu2 in pairs:
        row = SubadditivityRow(mu1, mu2, level(mu1), level(mu2), level(mu1 + mu2))
        logger.info(f"({mu1:g}, {mu2:g}): margin {row.margin:.3e}")
        report.rows.append(row)
    return report
