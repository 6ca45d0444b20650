"""Leaderless consensus of nonlinear agents with unknown control directions.

Core library (graph/exprlang/plant/controller/sim/analysis/scenario),
a FastAPI service wrapping it, and a thin-client CLI.
"""

__version__ = "0.1.0"
