"""Classical, quantum and Bohmian reaction dynamics on the Mueller-Brown surface."""

from .pes import FRONTIER, FrontierLine, PesModel, find_stationary_points, muller_brown
from .quantum import GridSpec, WaveField, initial_packet, propagate
from .classical import EnsembleSpec, run_classical_ensemble, sample
from .bohmian import run_bohmian_ensemble
from .reaction_path import build_full_path
from .trajectory import Trajectory

__all__ = [
    "FRONTIER",
    "FrontierLine",
    "PesModel",
    "find_stationary_points",
    "muller_brown",
    "GridSpec",
    "WaveField",
    "initial_packet",
    "propagate",
    "EnsembleSpec",
    "run_classical_ensemble",
    "sample",
    "run_bohmian_ensemble",
    "build_full_path",
    "Trajectory",
]
