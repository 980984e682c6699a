"""Shared constants and small helpers."""

import hashlib
import math
from pathlib import Path

import numpy as np

VERSION = "0.3.0"

# Critical masses of the line and the half-line
MU_R = math.pi * math.sqrt(3.0) / 2.0
MU_R_PLUS = MU_R / 2.0

# Optimal critical Gagliardo-Nirenberg constants, mu = sqrt(3 / C6)
C6_R = 4.0 / math.pi ** 2
C6_R_PLUS = 16.0 / math.pi ** 2

# Closed-form integrals of the unit soliton over the line
SOLITON_L4 = math.sqrt(3.0)
SOLITON_L6 = math.pi * math.sqrt(3.0) / 4.0
SOLITON_KINETIC = math.pi * math.sqrt(3.0) / 12.0


def sech(x: np.ndarray) -> np.ndarray:
    """Overflow-free hyperbolic secant."""
    ax = np.abs(np.asarray(x, dtype=float))
    e = np.exp(-ax)
    return 2.0 * e / (1.0 + e * e)


def soliton_profile(x: np.ndarray, lam: float = 1.0) -> np.ndarray:
    """sqrt(lam) * sech^(1/2)(2 lam x / sqrt(3)); solves -u'' + (lam^2/3) u = u^5."""
    return math.sqrt(lam) * np.sqrt(sech(2.0 * lam * np.asarray(x, dtype=float) / math.sqrt(3.0)))


def zero_tolerance(alpha: float) -> float:
    """Energies above -tol are read as the zero level."""
    return 1e-5 * max(1.0, abs(alpha))


def parse_grid(spec: str) -> np.ndarray:
    """
    Parse an 'a:b:n' grid (n evenly spaced points, endpoints included).
    A comma separated list of values is accepted as well.
    """
    text = spec.strip()
    if "," in text or ":" not in text:
        try:
            return np.array([float(v) for v in text.split(",") if v.strip()])
        except ValueError:
            raise ValueError(f"Bad grid '{spec}': expected a:b:n or v1,v2,...")

    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"Bad grid '{spec}': expected a:b:n")
    try:
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ValueError(f"Bad grid '{spec}': expected a:b:n")
    if n < 1:
        raise ValueError(f"Bad grid '{spec}': n must be positive")
    return np.linspace(a, b, n)


def digest_text(text: str) -> str:
    """Short sha256 digest used for run ids and sweep ids."""
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
