"""
Mass-constrained minimization of the energy with outcome classification,
and Newton refinement to critical points of the stationary equation.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import Pool
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from analytic import BlowupMode, blowup_sweep, soliton_on_graph
from discretize import DiscreteGraph, GraphFunction, project_mass, truncation_suspect
from functionals import differential, dual_norm, energy, mass, pohozaev_residual
from functionals import multiplier as rayleigh_multiplier
from graph import classify
from models import (
    BlowupTrace,
    CriticalPoint,
    DivergenceError,
    EscapeTrace,
    GroundStateLevel,
    IndeterminateError,
    MinimizationOutcome,
    ParameterError,
    ProblemParams,
    RestartSummary,
    SingularJacobianError,
    Verdict,
)
from utils import MU_R, MU_R_PLUS, zero_tolerance

logger = logging.getLogger(__name__)

ARMIJO = "armijo"
FIXED = "fixed"

ARMIJO_C1 = 1e-4
TAU_GROWTH = 1.25
TAU_MAX = 8.0
TAU_MIN = 1e-12
SIGMA_MIN = 1e-2

# flow endpoints with a residual below this are handed to Newton
POLISH_THRESHOLD = 1e-3

# Newton stalls within this factor of tol count as converged
STALL_FACTOR = 10.0

CONVERGED = "converged"
ESCAPED = "escaped"
STALLED = "stalled"
EXHAUSTED = "max_iters"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 3000
    step_rule: str = ARMIJO
    tau: float = 1.0
    grad_tol: float = 1e-6
    energy_floor: float = -1e3
    escape_fraction: float = 0.9
    restarts: int = 4
    seed: int = 0
    local_fraction: float = 0.25
    core_ratio: float = 0.05
    check_every: int = 50
    stall_tol: float = 1e-12
    energy_tie_tol: float = 1e-9
    shortcut_lmax: int = 16
    polish: bool = True
    # 0 runs restarts in this process
    processes: int = 0

    def __post_init__(self):
        if self.step_rule not in (ARMIJO, FIXED):
            raise ParameterError(f"step_rule must be '{ARMIJO}' or '{FIXED}', got '{self.step_rule}'")
        if not self.grad_tol > 0.0:
            raise ParameterError(f"grad_tol must be positive, got {self.grad_tol}")
        if not self.energy_floor < 0.0:
            raise ParameterError(f"energy_floor must be negative, got {self.energy_floor}")
        if not 0.0 < self.escape_fraction < 1.0:
            raise ParameterError(f"escape_fraction must lie in (0, 1), got {self.escape_fraction}")
        if self.restarts < 1:
            raise ParameterError(f"restarts must be positive, got {self.restarts}")
        if self.max_iters < 1 or self.check_every < 1:
            raise ParameterError("max_iters and check_every must be positive")
        if not self.tau > 0.0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if not (0.0 < self.local_fraction < 1.0 and 0.0 < self.core_ratio < 1.0):
            raise ParameterError("local_fraction and core_ratio must lie in (0, 1)")
        if self.processes < 0:
            raise ParameterError(f"processes must be nonnegative, got {self.processes}")


@dataclass
class FlowResult:
    u: GraphFunction
    status: str
    energy: float
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)
    escape: Optional[EscapeTrace] = None


def _local_masks(dg: DiscreteGraph, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature points and nodes of the compact core plus the inner part of each half-line."""
    cutoff = fraction * dg.mesh.L
    half_line = np.array([em.half_line for em in dg.edges])
    quad = ~half_line[dg.q_edge] | (dg.q_x <= cutoff)
    nodes = np.zeros(dg.n_dofs, dtype=bool)
    for em in dg.edges:
        nodes[em.dofs[em.x <= cutoff] if em.half_line else em.dofs] = True
    return quad, nodes


def escape_measures(u: GraphFunction, local_fraction: float) -> tuple[float, float]:
    """(mass fraction outside the local window, local sup / global sup)."""
    dg = u.dg
    quad, nodes = _local_masks(dg, local_fraction)
    density = dg.qw * (dg.B @ u.dofs) ** 2
    total = float(density.sum())
    if total <= 0.0:
        return 0.0, 1.0
    peak = u.sup()
    outer = float(density[~quad].sum()) / total
    local_sup = float(np.max(np.abs(u.dofs[nodes]))) if nodes.any() else 0.0
    return outer, (local_sup / peak if peak > 0.0 else 1.0)


def _seed_points(dg: DiscreteGraph, cfg: SolverConfig) -> list[tuple[str, str, float, float]]:
    """(label, edge_id, x, width) of every restart seed, geometric seeds first."""
    g = dg.source
    points = []
    if g.bounded_edges:
        longest = max(g.bounded_edges, key=lambda e: e.length)
        points.append(("core", longest.edge_id, longest.length / 2.0, 1.0))
    else:
        v = sorted(g.vertices)[0]
        edge_id, end = g.incident(v)[0]
        points.append(("core", edge_id, dg.edge_mesh(edge_id).length if end == "b" else 0.0, 1.0))
    for tip in g.terminal_vertices():
        edge_id, end = g.incident(tip)[0]
        points.append((f"tip {tip}", edge_id, dg.edge_mesh(edge_id).length if end == "b" else 0.0, 1.0))
    for hl in g.half_lines:
        points.append((f"half-line {hl.edge_id}", hl.edge_id, dg.mesh.L / 2.0, 1.0))

    seen, unique = set(), []
    for label, edge_id, x, width in points:
        em = dg.edge_mesh(edge_id)
        # a seed at an edge end is a seed at the vertex
        key = int(em.dofs[0]) if x == 0.0 else int(em.dofs[-1]) if x == em.length else (edge_id, x)
        if key in seen:
            continue
        seen.add(key)
        unique.append((label, edge_id, x, width))

    rng = np.random.default_rng(cfg.seed)
    edge_ids = g.edge_ids
    for k in range(cfg.restarts - 1):
        edge_id = edge_ids[int(rng.integers(len(edge_ids)))]
        em = dg.edge_mesh(edge_id)
        x = float(rng.uniform(0.0, em.length / 2.0 if em.half_line else em.length))
        unique.append((f"random {k}", edge_id, x, float(rng.uniform(0.5, 2.0))))
    return unique


class _Preconditioner:
    """Factorization of K + sigma M on the free DOFs, refreshed when sigma drifts by 2x."""

    def __init__(self, dg: DiscreteGraph):
        self.dg = dg
        self.sigma = None
        self.lu = None

    def solve(self, rhs: np.ndarray, lam: float) -> np.ndarray:
        sigma = max(lam, SIGMA_MIN)
        if self.sigma is None or not 0.5 * self.sigma <= sigma <= 2.0 * self.sigma:
            self.lu = splu(self.dg.restrict(self.dg.K + sigma * self.dg.M))
            self.sigma = sigma
        return self.lu.solve(rhs)


def normalized_flow(u0: GraphFunction, params: ProblemParams, cfg: SolverConfig, restart: int = 0) -> FlowResult:
    """
    Preconditioned gradient flow on the mass sphere.

    Each step solves with K + sigma M (implicit in the stiffness), takes the
    explicit nonlinear gradient, removes its radial part and projects back
    onto mass mu.
    """
    dg = u0.dg
    free = dg.free_idx
    u = project_mass(u0, params.mu)
    E = energy(u, params)
    history = [E]
    escape = EscapeTrace(restart=restart, iterations=[], outer_fraction=[], core_sup_ratio=[], energy=E)
    pre = _Preconditioner(dg)
    tau = cfg.tau
    status = EXHAUSTED
    residual = math.inf
    it = 0

    for it in range(1, cfg.max_iters + 1):
        d = differential(u, params)
        Mu = dg.M @ u.dofs
        lam = -float(d @ u.dofs) / params.mu
        residual = dual_norm(dg, d + lam * Mu)
        if residual < cfg.grad_tol:
            status = CONVERGED
            break

        g = pre.solve(d[free], lam)
        z = pre.solve(Mu[free], lam)
        s = g - (Mu[free] @ g) / (Mu[free] @ z) * z
        slope = float(d[free] @ s)

        while True:
            dofs = u.dofs.copy()
            dofs[free] -= tau * s
            trial = project_mass(u.with_dofs(dofs), params.mu)
            E_trial = energy(trial, params)
            if cfg.step_rule == FIXED or E_trial <= E - ARMIJO_C1 * tau * slope:
                break
            tau *= 0.5
            if tau < TAU_MIN:
                break
        if tau < TAU_MIN:
            status = STALLED
            logger.debug(f"Restart {restart}: step length collapsed at iteration {it}")
            break

        u, E = trial, E_trial
        history.append(E)
        if cfg.step_rule == ARMIJO:
            tau = min(tau * TAU_GROWTH, TAU_MAX)

        if E < cfg.energy_floor:
            status = UNBOUNDED
            break

        if it % cfg.check_every == 0:
            outer, ratio = escape_measures(u, cfg.local_fraction)
            escape.iterations.append(it)
            escape.outer_fraction.append(outer)
            escape.core_sup_ratio.append(ratio)
            logger.debug(f"Restart {restart}: it={it} E={E:.10g} res={residual:.2e} outer={outer:.3f}")
            previous = history[-cfg.check_every - 1]
            if previous - E < cfg.stall_tol * max(1.0, abs(E)):
                status = STALLED
                break

    escape.energy = E
    return FlowResult(u=u, status=status, energy=E, iterations=it, residual=residual,
                      history=history, escape=escape)


def _polish(result: FlowResult, params: ProblemParams, cfg: SolverConfig) -> FlowResult:
    """Hand a localized, nearly stationary flow endpoint to Newton."""
    try:
        cp = refine_newton(result.u, params, tol=0.01 * cfg.grad_tol)
    except (SingularJacobianError, DivergenceError) as e:
        logger.debug(f"Newton polish failed: {e}")
        return result
    if cp.energy > result.energy + cfg.energy_tie_tol or abs(mass(cp.u) - params.mu) > 1e-10 * params.mu:
        return result
    result.u, result.energy, result.residual = cp.u, cp.energy, cp.residual
    result.status = CONVERGED
    result.history.append(cp.energy)
    return result


def _classify_endpoint(result: FlowResult, params: ProblemParams, cfg: SolverConfig) -> FlowResult:
    if result.status == UNBOUNDED:
        return result
    outer, ratio = escape_measures(result.u, cfg.local_fraction)
    result.escape.iterations.append(result.iterations)
    result.escape.outer_fraction.append(outer)
    result.escape.core_sup_ratio.append(ratio)
    if outer > cfg.escape_fraction and ratio < cfg.core_ratio:
        result.status = ESCAPED
    elif (result.status != CONVERGED and cfg.polish and params.alpha != 0.0
          and result.residual < POLISH_THRESHOLD):
        result = _polish(result, params, cfg)
    return result


def shortcut_mode(dg: DiscreteGraph, params: ProblemParams) -> Optional[BlowupMode]:
    """Blow-up family that certifies unboundedness for these parameters, if any."""
    has_tip = classify(dg.source).has_terminal_point
    mu, alpha = params.mu, params.alpha
    if has_tip and alpha > 0.0 and mu >= MU_R_PLUS:
        return BlowupMode.TIP
    if has_tip and alpha <= 0.0 and mu > MU_R_PLUS:
        return BlowupMode.SCALED
    if (alpha > 0.0 and mu >= MU_R) or mu > MU_R:
        return BlowupMode.LINE
    return None


def _try_shortcut(dg: DiscreteGraph, params: ProblemParams, cfg: SolverConfig) -> Optional[BlowupTrace]:
    mode = shortcut_mode(dg, params)
    if mode is None:
        return None
    logger.info(f"Mass {params.mu:.6g} is in the blow-up regime; sweeping the {mode.value} family")
    try:
        trace = blowup_sweep(dg.source, mode, params, cfg.shortcut_lmax, dg.mesh,
                             floor=cfg.energy_floor, stop_when_certified=True)
    except ParameterError as e:
        logger.warning(f"Blow-up family unavailable ({e}); falling back to the flow")
        return None
    if not trace.certified:
        logger.warning(f"Blow-up family not certified (min E = {trace.min_energy:.6g}); falling back to the flow")
        return None
    return trace


def _run_restart(task) -> tuple[str, FlowResult]:
    dg, params, cfg, k, (label, edge_id, x, width) = task
    seed = soliton_on_graph(dg, width, edge_id, x)
    return label, _classify_endpoint(normalized_flow(seed, params, cfg, restart=k), params, cfg)


def _run_restarts(dg: DiscreteGraph, params: ProblemParams, cfg: SolverConfig) -> list[tuple[str, FlowResult]]:
    """Flow every seed, in a process pool when cfg.processes > 0; results stay in seed order."""
    tasks = [(dg, params, cfg, k, point) for k, point in enumerate(_seed_points(dg, cfg))]
    if cfg.processes == 0 or len(tasks) < 2:
        return [_run_restart(task) for task in tasks]

    logger.info(f"Running {len(tasks)} restarts on {min(cfg.processes, len(tasks))} processes")
    with Pool(processes=min(cfg.processes, len(tasks))) as pool:
        results = pool.map(_run_restart, tasks)
    # rebind to the caller's mesh
    return [(label, replace(r, u=GraphFunction(dg, r.u.dofs))) for label, r in results]


def minimize(dg: DiscreteGraph, params: ProblemParams, cfg: Optional[SolverConfig] = None) -> MinimizationOutcome:
    """
    Minimize E over functions of mass mu on the mesh.

    Verdicts merge across restarts: any Unbounded wins; a best energy within
    tol of 0 is the zero level (not attained); a converged restart wins when
    no other restart ends strictly lower; otherwise an escaped restart gives
    NoMinimizer.

    Raises:
        IndeterminateError: no restart reached a verdict
    """
    cfg = cfg or SolverConfig()
    trace = _try_shortcut(dg, params, cfg)
    if trace is not None:
        return MinimizationOutcome(Verdict.UNBOUNDED, trace, -math.inf, list(trace.energies),
                                   {"truncation_suspect": False, "restart_index": None, "restarts": []})

    results = _run_restarts(dg, params, cfg)
    for k, (label, result) in enumerate(results):
        logger.info(f"Restart {k} ({label}): {result.status}, E={result.energy:.10g}, "
                    f"{result.iterations} its, residual {result.residual:.2e}")

    summaries = [
        RestartSummary(index=k, seed_label=label, status=r.status, energy=r.energy, iterations=r.iterations,
                       residual=r.residual, outer_fraction=r.escape.outer_fraction[-1] if r.escape.outer_fraction else 0.0,
                       core_sup_ratio=r.escape.core_sup_ratio[-1] if r.escape.core_sup_ratio else 1.0)
        for k, (label, r) in enumerate(results)
    ]
    diagnostics = {"restarts": [asdict(s) for s in summaries]}

    def outcome(verdict, witness, energy_value, idx):
        r = results[idx][1]
        diagnostics["restart_index"] = idx
        diagnostics["truncation_suspect"] = truncation_suspect(r.u)
        return MinimizationOutcome(verdict, witness, energy_value, r.history, diagnostics)

    unbounded = [k for k, (_, r) in enumerate(results) if r.status == UNBOUNDED]
    if unbounded:
        k = unbounded[0]
        r = results[k][1]
        flow_trace = BlowupTrace(mode="flow", lams=[float(i) for i in range(len(r.history))],
                                 energies=r.history, floor=cfg.energy_floor, certified=True)
        return outcome(Verdict.UNBOUNDED, flow_trace, -math.inf, k)

    energies = np.array([r.energy for _, r in results])
    best = int(np.argmin(energies))
    if energies[best] >= -zero_tolerance(params.alpha):
        logger.info(f"Best energy {energies[best]:.3e} is the zero level: infimum 0, not attained")
        return outcome(Verdict.NO_MINIMIZER, results[best][1].escape, 0.0, best)

    converged = [k for k, (_, r) in enumerate(results) if r.status == CONVERGED]
    if converged:
        k = min(converged, key=lambda i: (energies[i], i))
        others = [energies[i] for i in range(len(results)) if i not in converged]
        if not others or energies[k] <= min(others) + cfg.energy_tie_tol:
            r = results[k][1]
            cp = CriticalPoint(u=r.u, lam=rayleigh_multiplier(r.u, params), energy=r.energy,
                               residual=r.residual, iterations=r.iterations)
            if dg.source.is_star:
                cp.pohozaev_residual = pohozaev_residual(r.u, params)
            return outcome(Verdict.CONVERGED, cp, r.energy, k)

    escaped = [k for k, (_, r) in enumerate(results) if r.status == ESCAPED]
    if escaped:
        k = min(escaped, key=lambda i: (energies[i], i))
        return outcome(Verdict.NO_MINIMIZER, results[k][1].escape, float(energies[best]), k)

    raise IndeterminateError(
        f"no verdict after {len(results)} restarts (best E = {energies[best]:.6g})", trace=summaries
    )


def _linearization(u: GraphFunction, params: ProblemParams, lam: float, shift: float) -> sp.csc_matrix:
    dg = u.dg
    uq = dg.B @ u.dofs
    w = dg.qw * (5.0 * uq ** 4 + params.alpha * (params.p - 1.0) * np.abs(uq) ** (params.p - 2.0))
    nonlinear = dg.B.T @ sp.diags(w) @ dg.B
    return dg.restrict(dg.K - nonlinear + (lam + shift) * dg.M)


def refine_newton(u0: GraphFunction, params: ProblemParams, tol: float = 1e-10, max_iters: int = 30,
                  multiplier: Optional[float] = None, shift: float = 1e-9) -> CriticalPoint:
    """
    Newton on the stationary equation plus the mass constraint, unknowns (u, lam).

    With a fixed multiplier (given, or alpha == 0 where the constrained
    system is degenerate along dilations) only the equation is solved and
    the mass is left free.

    Raises:
        SingularJacobianError: zero input or a singular linearization
        DivergenceError: no decrease of the residual, or max_iters exhausted
    """
    dg = u0.dg
    free = dg.free_idx
    if not mass(u0) > 0.0:
        raise SingularJacobianError("zero function: the mass constraint cannot be linearized")

    fixed = multiplier is not None or params.alpha == 0.0
    lam = multiplier if multiplier is not None else rayleigh_multiplier(u0, params)

    def merit(u: GraphFunction, lam_: float) -> float:
        r = dual_norm(dg, differential(u, params) + lam_ * (dg.M @ u.dofs))
        if fixed:
            return r
        return math.hypot(r, (mass(u) - params.mu) / params.mu)

    def accept(u: GraphFunction, lam_: float, residual: float, it: int) -> CriticalPoint:
        cp = CriticalPoint(u=u, lam=lam_, energy=energy(u, params), residual=residual, iterations=it)
        if dg.source.is_star:
            cp.pohozaev_residual = pohozaev_residual(u, params)
        logger.debug(f"Newton converged in {it} iterations: lam={lam_:.12g}, residual {residual:.2e}")
        return cp

    u = u0
    current = merit(u, lam)
    for it in range(max_iters + 1):
        if current < tol:
            return accept(u, lam, current, it)
        if it == max_iters:
            break

        F = (differential(u, params) + lam * (dg.M @ u.dofs))[free]
        try:
            lu = splu(_linearization(u, params, lam, shift))
        except RuntimeError as e:
            raise SingularJacobianError(f"singular linearization: {e}")
        du = lu.solve(-F)
        dlam = 0.0
        if not fixed:
            Mu = (dg.M @ u.dofs)[free]
            x2 = lu.solve(Mu)
            denom = float(Mu @ x2)
            if denom == 0.0 or not math.isfinite(denom):
                raise SingularJacobianError("bordered system is singular")
            dlam = (float(Mu @ du) - 0.5 * (params.mu - mass(u))) / denom
            du = du - dlam * x2
        if not np.all(np.isfinite(du)):
            raise SingularJacobianError("non-finite Newton step")

        t = 1.0
        for _ in range(12):
            dofs = u.dofs.copy()
            dofs[free] += t * du
            trial = u.with_dofs(dofs)
            trial_merit = merit(trial, lam + t * dlam)
            if trial_merit < current:
                break
            t *= 0.5
        else:
            # no decrease left above the round-off floor of the dual norm
            if current < STALL_FACTOR * tol:
                return accept(u, lam, current, it)
            raise DivergenceError(f"Newton stalled at residual {current:.3e} after {it} iterations")

        u, lam, current = trial, lam + t * dlam, trial_merit
        logger.debug(f"Newton it={it + 1}: residual {current:.3e}, step {t:g}, lam={lam:.12g}")

    if current < STALL_FACTOR * tol:
        return accept(u, lam, current, max_iters)
    raise DivergenceError(f"Newton did not reach {tol:g} in {max_iters} iterations (residual {current:.3e})")


def ground_state_energy(dg: DiscreteGraph, params: ProblemParams, cfg: Optional[SolverConfig] = None) -> GroundStateLevel:
    """Ground-state level: E when attained, -inf when unbounded, else the best value, not attained."""
    outcome = minimize(dg, params, cfg)
    return GroundStateLevel(energy=outcome.energy, attained=outcome.attained,
                            verdict=outcome.verdict, outcome=outcome)
