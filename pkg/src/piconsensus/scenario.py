"""Scenario documents: the complete definition of one simulation run.

Scenarios live on disk as YAML (conventionally ``*.scenario``) with the
structure::

    name: case1
    order: 1                  # 1 or 2
    graph:
      n: 4
      edges:                  # [source, target, weight]; target receives source
        - [1, 2, 3.0]
    agents:                   # one entry per node, in node order
      - {b: 1.0, theta: [1.0], phi: ["sin(x)"]}
    gains:
      rho: 0.1
      nu: 0.1
      lambda: 1.5             # second order only
      gamma: 0.1              # scalar or per-agent list
      xbar: [1.0, 2.0, 3.0, 4.0]   # or the string "initial"
    x0: [1.0, 2.0, 3.0, -1.0]
    v0: [0.0, 0.0, 0.0, 0.0]  # second order only
    sim: {dt: 0.001, horizon: 200.0, decimation: 10}
    nussbaum: k2cos           # k2cos | k2sin | unit

Validation is total: every invariant a downstream operation relies on is
checked here, and all violations are reported together rather than one
at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from . import graph as graphmod
from .controller import NUSSBAUM_GAINS, ControllerGains, NussbaumGain
from .exprlang import ExprError, parse
from .plant import AgentParams


class ScenarioValidationError(ValueError):
    """Carries every validation problem found in a scenario document."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


@dataclass
class Scenario:
    name: str
    order: int
    graph: graphmod.DirectedGraph
    agents: list[AgentParams]
    gains: ControllerGains
    x0: np.ndarray
    v0: np.ndarray | None
    dt: float
    horizon: float
    decimation: int
    nussbaum: str = "k2cos"
    xbar_policy: str = "explicit"  # "explicit" | "initial"

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def ells(self) -> list[int]:
        return [a.ell for a in self.agents]

    @cached_property
    def laplacian(self) -> np.ndarray:
        return graphmod.laplacian(self.graph).matrix

    @cached_property
    def omega(self) -> np.ndarray:
        return graphmod.left_eigenvector(graphmod.laplacian(self.graph)).omega

    @property
    def ngain(self) -> NussbaumGain:
        return NUSSBAUM_GAINS[self.nussbaum]

    def with_sim(self, dt: float | None = None, horizon: float | None = None) -> "Scenario":
        """Copy with overridden integration settings (for CLI flags and
        step-refinement studies)."""
        out = replace(self)
        if dt is not None:
            if not dt > 0:
                raise ScenarioValidationError([f"dt must be positive, got {dt}"])
            out.dt = float(dt)
        if horizon is not None:
            if not horizon > 0:
                raise ScenarioValidationError([f"horizon must be positive, got {horizon}"])
            out.horizon = float(horizon)
        return out


_TOP_KEYS = {"name", "order", "graph", "agents", "gains", "x0", "v0", "sim", "nussbaum"}
_GRAPH_KEYS = {"n", "edges"}
_AGENT_KEYS = {"b", "theta", "phi"}
_GAINS_KEYS = {"rho", "nu", "lambda", "gamma", "xbar"}
_SIM_KEYS = {"dt", "horizon", "decimation"}


def _real_vector(value, n, what, errors):
    if not isinstance(value, (list, tuple)) or len(value) != n:
        errors.append(f"{what} must be a list of {n} numbers")
        return None
    try:
        vec = np.array([float(v) for v in value])
    except (TypeError, ValueError):
        errors.append(f"{what} must contain only numbers")
        return None
    if not np.isfinite(vec).all():
        errors.append(f"{what} must be finite")
        return None
    return vec


def _positive(value, what, errors):
    try:
        v = float(value)
    except (TypeError, ValueError):
        errors.append(f"{what} must be a number")
        return None
    if not (v > 0 and math.isfinite(v)):
        errors.append(f"{what} must be positive, got {value}")
        return None
    return v


def build_scenario(data: dict, default_name: str = "scenario") -> Scenario:
    """Validate a parsed scenario document and assemble the Scenario.

    Raises :class:`ScenarioValidationError` listing every problem found.
    """
    if not isinstance(data, dict):
        raise ScenarioValidationError(["scenario document must be a mapping"])
    errors: list[str] = []
    for key in sorted(set(data) - _TOP_KEYS):
        errors.append(f"unknown field {key!r}")

    name = str(data.get("name", default_name))

    order = data.get("order")
    if order not in (1, 2):
        errors.append(f"order must be 1 or 2, got {order!r}")
        order = 1

    # graph section
    g = None
    gsec = data.get("graph")
    if not isinstance(gsec, dict):
        errors.append("missing or malformed 'graph' section")
    else:
        for key in sorted(set(gsec) - _GRAPH_KEYS):
            errors.append(f"graph: unknown field {key!r}")
        n = gsec.get("n")
        edges = gsec.get("edges")
        if not isinstance(n, int) or n < 2:
            errors.append(f"graph.n must be an integer >= 2, got {n!r}")
        elif not isinstance(edges, list):
            errors.append("graph.edges must be a list of [source, target, weight] triples")
        else:
            ok = []
            for k, e in enumerate(edges):
                if not isinstance(e, (list, tuple)) or len(e) != 3:
                    errors.append(f"graph.edges[{k}]: expected [source, target, weight]")
                    continue
                ok.append(e)
            try:
                g = graphmod.build_graph(n, [(int(j), int(i), float(w)) for j, i, w in ok])
            except (graphmod.GraphError, TypeError, ValueError) as exc:
                errors.append(f"graph: {exc}")
        if g is not None and not graphmod.is_strongly_connected(g):
            errors.append("graph: communication topology must be strongly connected")
            g = None

    n_agents = g.n if g is not None else None

    # agents section
    allowed_vars = {"x"} if order == 1 else {"x", "v"}
    agents: list[AgentParams] = []
    asec = data.get("agents")
    if not isinstance(asec, list):
        errors.append("missing or malformed 'agents' section")
    else:
        if n_agents is not None and len(asec) != n_agents:
            errors.append(f"expected {n_agents} agents (graph.n), got {len(asec)}")
        for k, entry in enumerate(asec, start=1):
            if not isinstance(entry, dict):
                errors.append(f"agent {k}: expected a mapping with b/theta/phi")
                continue
            for key in sorted(set(entry) - _AGENT_KEYS):
                errors.append(f"agent {k}: unknown field {key!r}")
            try:
                b = float(entry.get("b"))
            except (TypeError, ValueError):
                errors.append(f"agent {k}: b must be a number")
                continue
            if b == 0 or not math.isfinite(b):
                errors.append(f"agent {k}: input gain b must be nonzero and finite "
                              "(a zero gain leaves the agent uncontrollable)")
                continue
            theta = entry.get("theta", [])
            phi_srcs = entry.get("phi", [])
            if not isinstance(theta, list) or not isinstance(phi_srcs, list):
                errors.append(f"agent {k}: theta and phi must be lists")
                continue
            if len(theta) != len(phi_srcs):
                errors.append(f"agent {k}: theta has {len(theta)} entries but phi has {len(phi_srcs)}")
                continue
            asts = []
            bad = False
            for ci, src in enumerate(phi_srcs, start=1):
                try:
                    asts.append(parse(str(src), allowed_vars))
                except ExprError as exc:
                    errors.append(f"agent {k}: phi[{ci}]: {exc}")
                    bad = True
            if bad:
                continue
            try:
                agents.append(AgentParams(b, np.asarray(theta, dtype=float), tuple(asts)))
            except ValueError as exc:
                errors.append(f"agent {k}: {exc}")

    # x0 / v0
    x0 = v0 = None
    if n_agents is not None:
        x0 = _real_vector(data.get("x0"), n_agents, "x0", errors)
        if order == 2:
            if "v0" not in data:
                errors.append("second-order scenarios require v0")
            else:
                v0 = _real_vector(data.get("v0"), n_agents, "v0", errors)
        elif "v0" in data:
            errors.append("v0 only applies to second-order scenarios")

    # gains section
    gains = None
    gsec = data.get("gains")
    if not isinstance(gsec, dict):
        errors.append("missing or malformed 'gains' section")
    else:
        for key in sorted(set(gsec) - _GAINS_KEYS):
            errors.append(f"gains: unknown field {key!r}")
        rho = _positive(gsec.get("rho"), "gains.rho", errors)
        nu = _positive(gsec.get("nu"), "gains.nu", errors)
        lam = None
        if order == 2:
            if "lambda" not in gsec:
                errors.append("second-order scenarios require gains.lambda")
            else:
                lam = _positive(gsec.get("lambda"), "gains.lambda", errors)
        elif "lambda" in gsec:
            errors.append("gains.lambda only applies to second-order scenarios")

        gamma = gsec.get("gamma")
        gamma_vec = None
        if n_agents is not None:
            if isinstance(gamma, (int, float)) and not isinstance(gamma, bool):
                val = _positive(gamma, "gains.gamma", errors)
                gamma_vec = None if val is None else np.full(n_agents, val)
            elif isinstance(gamma, list):
                gamma_vec = _real_vector(gamma, n_agents, "gains.gamma", errors)
                if gamma_vec is not None and not (gamma_vec > 0).all():
                    errors.append("every gains.gamma entry must be positive")
                    gamma_vec = None
            else:
                errors.append("gains.gamma must be a positive number or per-agent list")

        xbar_policy = "explicit"
        xbar_vec = None
        xbar = gsec.get("xbar")
        if xbar == "initial":
            xbar_policy = "initial"
            xbar_vec = None if x0 is None else x0.copy()
        elif n_agents is not None:
            xbar_vec = _real_vector(xbar, n_agents, "gains.xbar", errors)

        if rho is not None and nu is not None and gamma_vec is not None and xbar_vec is not None:
            gains = ControllerGains(rho=rho, nu=nu, gamma=gamma_vec, xbar=xbar_vec, lam=lam)

    # sim section
    ssec = data.get("sim")
    dt, horizon, decimation = 1e-3, None, 10
    if not isinstance(ssec, dict):
        errors.append("missing or malformed 'sim' section")
    else:
        for key in sorted(set(ssec) - _SIM_KEYS):
            errors.append(f"sim: unknown field {key!r}")
        if "dt" in ssec:
            dt = _positive(ssec.get("dt"), "sim.dt", errors)
        horizon = _positive(ssec.get("horizon"), "sim.horizon", errors)
        if horizon is not None and dt is not None and horizon < dt:
            errors.append("sim.horizon must be at least one step long")
        if "decimation" in ssec:
            decimation = ssec.get("decimation")
            if not isinstance(decimation, int) or decimation < 1:
                errors.append(f"sim.decimation must be a positive integer, got {decimation!r}")
                decimation = 10

    nussbaum = data.get("nussbaum", "k2cos")
    if nussbaum not in NUSSBAUM_GAINS:
        errors.append(f"unknown nussbaum gain {nussbaum!r}; choose from {sorted(NUSSBAUM_GAINS)}")

    if errors:
        raise ScenarioValidationError(errors)

    return Scenario(
        name=name,
        order=order,
        graph=g,
        agents=agents,
        gains=gains,
        x0=x0,
        v0=v0,
        dt=dt,
        horizon=horizon,
        decimation=decimation,
        nussbaum=nussbaum,
        xbar_policy=xbar_policy,
    )


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioValidationError([f"cannot parse {path.name}: {exc}"]) from exc
    return build_scenario(data, default_name=path.stem)
