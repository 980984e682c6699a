"""Domain models, errors, and the sweep checkpoint store."""

import math
import os
import sqlite3
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from dotenv import load_dotenv

from utils import digest_text

load_dotenv()

CHECKPOINT_DB = Path(
    os.getenv("GRAPHNLS_CHECKPOINT_DB", Path(__file__).parent / "data" / "checkpoints.db")
)

# ell column value for cells without an attached terminal edge
NO_ELL = -1.0


class GraphNLSError(Exception):
    """Base class for every error raised by the solver library."""


class GraphError(GraphNLSError, ValueError):
    """Invalid metric graph (disconnected, compact, bad lengths)."""


class GraphSyntaxError(GraphError):
    """Malformed graph description; carries the 1-based position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class ParameterError(GraphNLSError, ValueError):
    """Out-of-range problem, mesh, or solver parameter."""


class MeshSizeError(GraphNLSError):
    """The requested mesh exceeds GRAPHNLS_MAX_DOFS."""


class UnsupportedGeometryError(GraphNLSError):
    """Operation only defined on the line, the half-line, or star graphs."""


class PreconditionError(GraphNLSError):
    """A measured precondition does not hold."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (measured residual {residual:.3e})")
        self.residual = residual


class SolverError(GraphNLSError):
    """Base class for solver failures."""


class IndeterminateError(SolverError):
    """No restart reached a verdict within its budget."""

    def __init__(self, message: str, trace: Any = None):
        super().__init__(message)
        self.trace = trace


class SingularJacobianError(SolverError):
    """Newton system singular at the current iterate."""


class DivergenceError(SolverError):
    """Newton left its basin (residual stopped decreasing)."""


class BisectionError(GraphNLSError):
    """The alpha-bar bracket could not be established."""


class Verdict(str, Enum):
    CONVERGED = "Converged"
    UNBOUNDED = "Unbounded"
    NO_MINIMIZER = "NoMinimizer"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class ProblemParams:
    """Exponent p, coefficient alpha and target mass mu of the energy."""
    p: float
    alpha: float
    mu: float

    def __post_init__(self):
        if not 2.0 < self.p < 6.0:
            raise ParameterError(f"p must lie in (2, 6), got {self.p}")
        if not self.mu > 0.0 or not math.isfinite(self.mu):
            raise ParameterError(f"mu must be positive, got {self.mu}")
        if not math.isfinite(self.alpha):
            raise ParameterError(f"alpha must be finite, got {self.alpha}")

    def with_mu(self, mu: float) -> "ProblemParams":
        return ProblemParams(self.p, self.alpha, mu)

    def with_alpha(self, alpha: float) -> "ProblemParams":
        return ProblemParams(self.p, alpha, self.mu)


@dataclass
class CriticalPoint:
    """A (discrete) solution of the stationary equation with its multiplier."""
    u: Any
    lam: float
    energy: float
    pohozaev_residual: Optional[float] = None
    residual: Optional[float] = None
    iterations: int = 0


@dataclass
class GNReport:
    q: float
    C_q_estimate: float
    maximizer: Any
    mu_G_estimate: Optional[float] = None
    converged: bool = True
    # ascent iterations per start label
    iterations: dict[str, int] = field(default_factory=dict)
    unconverged: list[str] = field(default_factory=list)


@dataclass
class BlowupTrace:
    """Energies along a dilation family; certified when it crosses the floor going down."""
    mode: str
    lams: list[float]
    energies: list[float]
    floor: float
    certified: bool
    slope: Optional[float] = None
    skipped: list[float] = field(default_factory=list)

    @property
    def min_energy(self) -> float:
        return min(self.energies) if self.energies else math.inf


@dataclass
class EscapeTrace:
    """Outer mass fraction and core sup-norm sampled along one flow."""
    restart: int
    iterations: list[int]
    outer_fraction: list[float]
    core_sup_ratio: list[float]
    energy: float


@dataclass
class RestartSummary:
    index: int
    seed_label: str
    status: str
    energy: float
    iterations: int
    residual: float
    outer_fraction: float
    core_sup_ratio: float


@dataclass
class MinimizationOutcome:
    verdict: Verdict
    witness: Any
    energy: float
    energy_history: list[float] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def attained(self) -> bool:
        return self.verdict == Verdict.CONVERGED


@dataclass
class GroundStateLevel:
    """Value of the ground-state level; -inf when unbounded from below."""
    energy: float
    attained: bool
    verdict: Verdict
    outcome: MinimizationOutcome


@dataclass
class PhasePoint:
    mu: float
    alpha: float
    verdict: Verdict
    energy: float
    attained: bool = False
    ell: Optional[float] = None
    error: Optional[str] = None


@dataclass
class BisectionResult:
    alpha_bar_interval: tuple[float, float]
    evaluations: list[tuple[float, float]]
    converged: bool
    message: str = ""


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    mesh: dict
    wall_time: float
    tool_version: str
    input_digests: dict
    started_at: str = ""

    @property
    def run_id(self) -> str:
        return digest_text(f"{self.command}:{sorted(self.config.items())}:{self.started_at}")


def init_db(db_path: Path = CHECKPOINT_DB) -> None:
    """Initialize the checkpoint database with the cells table."""
    db_path = Path(db_path)
    db_path.parent.mkdir(parents=True, exist_ok=True)

    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    cursor.execute("""
        CREATE TABLE IF NOT EXISTS cells (
            sweep_id TEXT NOT NULL,
            mu REAL NOT NULL,
            alpha REAL NOT NULL,
            ell REAL NOT NULL,
            verdict TEXT NOT NULL,
            energy REAL,
            attained BOOLEAN,
            error TEXT,
            saved_at TEXT NOT NULL,
            PRIMARY KEY (sweep_id, mu, alpha, ell)
        )
    """)

    cursor.execute("CREATE INDEX IF NOT EXISTS idx_sweep ON cells(sweep_id)")

    conn.commit()
    conn.close()


def save_cell(sweep_id: str, point: PhasePoint, db_path: Path = CHECKPOINT_DB) -> bool:
    """
    Save one finished cell. Returns True if new, False if already present.
    """
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    try:
        cursor.execute("""
            INSERT INTO cells (
                sweep_id, mu, alpha, ell, verdict, energy, attained, error, saved_at
            ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
        """, (
            sweep_id,
            point.mu,
            point.alpha,
            NO_ELL if point.ell is None else point.ell,
            point.verdict.value,
            point.energy,
            point.attained,
            point.error,
            datetime.now(timezone.utc).isoformat(),
        ))
        conn.commit()
        return True
    except sqlite3.IntegrityError:
        return False
    finally:
        conn.close()


def load_cells(sweep_id: str, db_path: Path = CHECKPOINT_DB) -> dict:
    """Get the finished cells of a sweep keyed by (mu, alpha, ell)."""
    if not Path(db_path).exists():
        return {}

    conn = sqlite3.connect(db_path)
    conn.row_factory = sqlite3.Row
    cursor = conn.cursor()

    cursor.execute("SELECT * FROM cells WHERE sweep_id = ?", (sweep_id,))
    rows = cursor.fetchall()
    conn.close()

    cells = {}
    for row in rows:
        ell = None if row['ell'] == NO_ELL else row['ell']
        energy = row['energy']
        cells[(row['mu'], row['alpha'], ell)] = PhasePoint(
            mu=row['mu'],
            alpha=row['alpha'],
            verdict=Verdict(row['verdict']),
            energy=math.nan if energy is None else energy,
            attained=bool(row['attained']),
            ell=ell,
            error=row['error'],
        )
    return cells
