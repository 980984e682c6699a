"""Experiment drivers: phase diagrams, threshold searches and structural checks."""

from .phase import phase_diagram, solve_cell, sweep_id_for
from .bisection import bisect_alpha_bar
from .tip import TipThresholdReport, tip_length_threshold
from .subadditivity import SubadditivityReport, SubadditivityRow, subadditivity_check

__all__ = [
    'phase_diagram',
    'solve_cell',
    'sweep_id_for',
    'bisect_alpha_bar',
    'TipThresholdReport',
    'tip_length_threshold',
    'SubadditivityReport',
    'SubadditivityRow',
    'subadditivity_check',
]
