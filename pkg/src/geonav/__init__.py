"""Geometric navigation supervision on 2D grid maps.

MPPI planning over traversability costs, planner-labelled trajectory
datasets, SPL evaluation, and a closed-loop simulator.
"""
from geonav._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
