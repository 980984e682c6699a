"""(mu, alpha) phase diagrams with per-cell checkpointing."""

import logging
import math
from dataclasses import replace
from multiprocessing import Pool
from pathlib import Path
from typing import Optional

from discretize import DEFAULT_H, MeshParams, build_mesh
from graph import MetricGraph
from models import (
    CHECKPOINT_DB,
    GraphNLSError,
    IndeterminateError,
    PhasePoint,
    ProblemParams,
    Verdict,
    init_db,
    load_cells,
    save_cell,
)
from solver import SolverConfig, ground_state_energy
from utils import digest_text

logger = logging.getLogger(__name__)


def sweep_id_for(g: MetricGraph, p: float, mu_grid, alpha_grid, cfg: SolverConfig, mesh: MeshParams,
                 ell_grid=None) -> str:
    """Stable id of a sweep; identical inputs resume the same checkpoint rows."""
    parts = [
        g.to_text(),
        repr(float(p)),
        ",".join(repr(float(m)) for m in mu_grid),
        ",".join(repr(float(a)) for a in alpha_grid),
        ",".join(repr(float(e)) for e in (ell_grid or [])),
        repr(sorted((k, v) for k, v in cfg.__dict__.items() if k != "processes")),
        repr(sorted(mesh.describe().items())),
    ]
    return digest_text("|".join(parts))


def solve_cell(g: MetricGraph, params: ProblemParams, cfg: SolverConfig, mesh: MeshParams,
               ell: Optional[float] = None) -> PhasePoint:
    """One cell of a sweep. Errors are recorded on the point, never raised."""
    try:
        level = ground_state_energy(build_mesh(g, mesh), params, cfg)
        return PhasePoint(mu=params.mu, alpha=params.alpha, verdict=level.verdict, energy=level.energy,
                          attained=level.attained, ell=ell)
    except IndeterminateError as e:
        logger.warning(f"Cell mu={params.mu:g} alpha={params.alpha:g}: indeterminate ({e})")
        return PhasePoint(mu=params.mu, alpha=params.alpha, verdict=Verdict.INDETERMINATE,
                          energy=math.nan, ell=ell, error=str(e))
    except GraphNLSError as e:
        logger.error(f"Cell mu={params.mu:g} alpha={params.alpha:g} failed: {e}")
        return PhasePoint(mu=params.mu, alpha=params.alpha, verdict=Verdict.INDETERMINATE,
                          energy=math.nan, ell=ell, error=f"{type(e).__name__}: {e}")


def _solve_cell_task(task) -> PhasePoint:
    return solve_cell(*task)


def phase_diagram(g: MetricGraph, p: float, mu_grid, alpha_grid, cfg: Optional[SolverConfig] = None,
                  mesh: Optional[MeshParams] = None, db_path: Optional[Path] = CHECKPOINT_DB) -> list[PhasePoint]:
    """
    Verdict and level for every (mu, alpha) cell.

    Finished cells are committed one by one to the checkpoint store, so an
    interrupted sweep resumes where it stopped. Pass db_path=None to run
    without checkpoints.

    Args:
        g: Graph to sweep
        p: Subcritical exponent
        mu_grid: Masses
        alpha_grid: Coefficients of the subcritical term

    Returns:
        PhasePoints in grid order (mu outer, alpha inner)
    """
    cfg = cfg or SolverConfig()
    mesh = mesh or MeshParams(h=DEFAULT_H)
    sweep_id = sweep_id_for(g, p, mu_grid, alpha_grid, cfg, mesh)

    done = {}
    if db_path is not None:
        init_db(db_path)
        done = load_cells(sweep_id, db_path)
        if done:
            logger.info(f"Resuming sweep {sweep_id}: {len(done)} cells already finished")

    cells = [(float(mu), float(alpha)) for mu in mu_grid for alpha in alpha_grid]
    todo = [(mu, alpha) for mu, alpha in cells if (mu, alpha, None) not in done]
    total = len(cells)
    failed = 0

    def finish(point: PhasePoint):
        nonlocal failed
        if point.error:
            failed += 1
        done[(point.mu, point.alpha, None)] = point
        logger.info(f"[{len(done)}/{total}] mu={point.mu:g} alpha={point.alpha:g}: "
                    f"{point.verdict.value}, E={point.energy:.8g}")
        if db_path is not None:
            save_cell(sweep_id, point, db_path)

    if cfg.processes > 0 and len(todo) > 1:
        # cells own the pool; their restarts run serially
        cell_cfg = replace(cfg, processes=0)
        tasks = [(g, ProblemParams(p=p, alpha=alpha, mu=mu), cell_cfg, mesh) for mu, alpha in todo]
        logger.info(f"Solving {len(tasks)} cells on {min(cfg.processes, len(tasks))} processes")
        with Pool(processes=min(cfg.processes, len(tasks))) as pool:
            for point in pool.imap(_solve_cell_task, tasks):
                finish(point)
    else:
        for mu, alpha in todo:
            finish(solve_cell(g, ProblemParams(p=p, alpha=alpha, mu=mu), cfg, mesh))

    points = [done[(mu, alpha, None)] for mu, alpha in cells]
    logger.info(f"Sweep {sweep_id} finished: {total - failed} cells solved, {failed} failed")
    return points
