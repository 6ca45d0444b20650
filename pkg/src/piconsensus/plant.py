"""True agent dynamics, known only to the simulator.

Each agent has an unknown nonzero input gain ``b`` (its sign is the
control direction), an unknown parameter vector ``theta`` and a known
regressor ``phi`` of smooth nonlinearities.  First-order agents evolve
as ``xdot = b*u + theta . phi(x)``; second-order agents as
``xdot = v, vdot = b*u + theta . phi(x, v)``.

Controllers never see ``b`` or ``theta``: the control stack in
:mod:`piconsensus.controller` is handed regressor values and estimator
state only.  Non-finite rates are not trapped here; the simulation
divergence guard flags them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exprlang import ExprAst, compile_expr


@dataclass
class AgentParams:
    b: float
    theta: np.ndarray
    phi: tuple[ExprAst, ...]

    def __post_init__(self):
        if self.b == 0 or not math.isfinite(self.b):
            raise ValueError("control gain b must be a nonzero finite number")
        self.theta = np.asarray(self.theta, dtype=float)
        self.phi = tuple(self.phi)
        if len(self.theta) != len(self.phi):
            raise ValueError(
                f"theta has {len(self.theta)} entries but phi has {len(self.phi)} components"
            )

    @property
    def ell(self) -> int:
        return len(self.phi)

    @cached_property
    def phi_fns_x(self):
        """Regressor compiled for first-order use, phi_k(x)."""
        return tuple(compile_expr(a, ("x",)) for a in self.phi)

    @cached_property
    def phi_fns_xv(self):
        """Regressor compiled for second-order use, phi_k(x, v)."""
        return tuple(compile_expr(a, ("x", "v")) for a in self.phi)


def first_order_rate(x_i: float, u_i: float, p: AgentParams) -> float:
    """xdot = b*u + theta . phi(x)."""
    rate = p.b * u_i
    for th, f in zip(p.theta, p.phi_fns_x):
        rate += th * f(x_i)
    return rate


def second_order_rate(x_i: float, v_i: float, u_i: float, p: AgentParams) -> tuple[float, float]:
    """(xdot, vdot) = (v, b*u + theta . phi(x, v))."""
    acc = p.b * u_i
    for th, f in zip(p.theta, p.phi_fns_xv):
        acc += th * f(x_i, v_i)
    return v_i, acc
