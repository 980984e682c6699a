"""Bisection for the defocusing threshold alpha_bar = sup{alpha < 0 : level = 0}."""

import logging
from typing import Optional

from discretize import DEFAULT_H, DiscreteGraph, MeshParams, build_mesh
from functionals import gn_constant
from graph import MetricGraph, classify
from models import BisectionError, BisectionResult, ParameterError, ProblemParams
from solver import SolverConfig, ground_state_energy
from utils import MU_R, zero_tolerance

logger = logging.getLogger(__name__)

ALPHA_HI = -1e-3
ALPHA_LO_START = -0.1
ALPHA_CAP = 1e3


def negative_level(dg: DiscreteGraph, params: ProblemParams, cfg: SolverConfig,
                   evaluations: list[tuple[float, float]]) -> bool:
    """True when the ground-state level is strictly below -tol."""
    energy = ground_state_energy(dg, params, cfg).energy
    evaluations.append((params.alpha, energy))
    negative = energy < -zero_tolerance(params.alpha)
    logger.info(f"alpha={params.alpha:.6g}: E={energy:.6g} ({'negative' if negative else 'zero'})")
    return negative


def bisect_alpha_bar(g: MetricGraph, p: float, mu: float, width_tol: float = 1e-3,
                     cfg: Optional[SolverConfig] = None, mesh: Optional[MeshParams] = None,
                     mu_G_estimate: Optional[float] = None) -> BisectionResult:
    """
    Bracket alpha_bar between a zero-level alpha (lo) and a negative-level alpha (hi).

    Args:
        width_tol: Target bracket width
        mu_G_estimate: Critical mass of the graph; computed from the GN constant when omitted

    Raises:
        ParameterError: mu outside (0, mu_R)
        BisectionError: graph has a terminal point, mu <= mu_G_estimate, or the level is
            already zero at alpha = -1e-3
    """
    cfg = cfg or SolverConfig()
    mesh = mesh or MeshParams(h=DEFAULT_H)
    if not 0.0 < mu < MU_R:
        raise ParameterError(f"alpha_bar bisection needs 0 < mu < mu_R = {MU_R:.6g}, got {mu}")
    if classify(g).has_terminal_point:
        raise BisectionError("alpha_bar bisection needs a graph without terminal points")

    dg = build_mesh(g, mesh)
    if mu_G_estimate is None:
        mu_G_estimate = gn_constant(dg).mu_G_estimate
    if mu <= mu_G_estimate:
        raise BisectionError(f"mu={mu:g} <= mu_G estimate {mu_G_estimate:.6g}: the level is 0 for every alpha < 0")

    evaluations = []
    base = ProblemParams(p=p, alpha=ALPHA_HI, mu=mu)
    if not negative_level(dg, base, cfg, evaluations):
        raise BisectionError(
            f"no negative level at alpha={ALPHA_HI:g}; inconsistent with mu > mu_G ({mu_G_estimate:.6g})"
        )

    hi, lo = ALPHA_HI, ALPHA_LO_START
    while negative_level(dg, base.with_alpha(lo), cfg, evaluations):
        hi = lo
        lo *= 2.0
        if abs(lo) > ALPHA_CAP:
            message = f"level still negative at alpha={hi:g}; no zero side before |alpha| > {ALPHA_CAP:g}"
            logger.warning(message)
            return BisectionResult((lo, hi), evaluations, converged=False, message=message)

    logger.info(f"Bracket found: ({lo:g}, {hi:g})")
    while hi - lo > width_tol:
        mid = 0.5 * (lo + hi)
        if negative_level(dg, base.with_alpha(mid), cfg, evaluations):
            hi = mid
        else:
            lo = mid

    logger.info(f"alpha_bar in ({lo:.6g}, {hi:.6g}) after {len(evaluations)} solves")
    return BisectionResult((lo, hi), evaluations, converged=True)
