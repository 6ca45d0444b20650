"""Closed-loop assembly and fixed-step integration.

The integrated state is one flat vector holding, in signal blocks:
positions x (N), velocities v (N, second order only), disagreement
integrals w (N), parameter estimates theta_hat (sum of per-agent
lengths, grouped by agent), Nussbaum arguments zeta (N).  A
:class:`StateLayout` names the blocks; everything downstream (CSV,
analysis, divergence reporting) addresses state through it.

Integration is classical fixed-step RK4.  Nussbaum loops can stiffen
transiently while the gain sweeps (the effective loop gain grows like
zeta^2), so the step stays small and an overflow guard aborts loudly
instead of emitting garbage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import is_strongly_connected
from .scenario import Scenario, ScenarioValidationError

OVERFLOW_GUARD = 1e12


class DivergenceError(RuntimeError):
    """The closed loop left the numerically trustworthy region."""

    def __init__(self, message, t=None, agent=None, field_name=None):
        super().__init__(message)
        self.t = t
        self.agent = agent
        self.field_name = field_name


@dataclass(frozen=True)
class StateLayout:
    """Slices of the flat state vector, plus naming helpers."""

    order: int
    n: int
    ells: tuple[int, ...]
    x: slice
    v: slice | None
    w: slice
    theta: slice
    zeta: slice
    theta_slices: tuple[slice, ...]
    dim: int
    names: tuple[str, ...] = field(repr=False)

    @classmethod
    def build(cls, order: int, ells) -> "StateLayout":
        n = len(ells)
        ells = tuple(int(e) for e in ells)
        pos = 0

        def block(size):
            nonlocal pos
            s = slice(pos, pos + size)
            pos += size
            return s

        x = block(n)
        v = block(n) if order == 2 else None
        w = block(n)
        theta = block(sum(ells))
        theta_slices = []
        start = theta.start
        for e in ells:
            theta_slices.append(slice(start, start + e))
            start += e
        zeta = block(n)

        names = [f"x_{i}" for i in range(1, n + 1)]
        if order == 2:
            names += [f"v_{i}" for i in range(1, n + 1)]
        names += [f"w_{i}" for i in range(1, n + 1)]
        for i, e in enumerate(ells, start=1):
            names += [f"theta_hat_{i}_{k}" for k in range(1, e + 1)]
        names += [f"zeta_{i}" for i in range(1, n + 1)]

        return cls(order, n, ells, x, v, w, theta, zeta,
                   tuple(theta_slices), pos, tuple(names))

    def agent_of(self, idx: int) -> int:
        """1-based agent owning flat index idx."""
        name = self.names[idx]
        return int(name.split("_")[-2 if name.startswith("theta") else -1])

    def pack(self, x0, v0=None) -> np.ndarray:
        y = np.zeros(self.dim)
        y[self.x] = x0
        if self.order == 2:
            y[self.v] = v0
        return y


@dataclass
class Trajectory:
    """Recorded run: uniform time grid, states, and derived signals."""

    t: np.ndarray
    states: np.ndarray
    layout: StateLayout
    u: np.ndarray
    z: np.ndarray
    xi: np.ndarray
    s: np.ndarray | None = None

    @property
    def x(self):
        return self.states[:, self.layout.x]

    @property
    def v(self):
        return self.states[:, self.layout.v] if self.layout.v is not None else None

    @property
    def w(self):
        return self.states[:, self.layout.w]

    @property
    def zeta(self):
        return self.states[:, self.layout.zeta]

    def theta_hat(self, i: int):
        return self.states[:, self.layout.theta_slices[i - 1]]

    def __len__(self):
        return len(self.t)


def _rate_closure(sc: Scenario):
    layout = StateLayout.build(sc.order, sc.ells)
    lap = sc.laplacian
    n = sc.n
    b = np.array([a.b for a in sc.agents])
    theta_true = [a.theta for a in sc.agents]
    fns = [a.phi_fns_x if sc.order == 1 else a.phi_fns_xv for a in sc.agents]
    tsl = layout.theta_slices
    g = sc.gains
    rho, nu, lam, gamma, xbar = g.rho, g.nu, g.lam, g.gamma, g.xbar
    nf = sc.ngain.f

    if sc.order == 1:
        def rate(y):
            x = y[layout.x]
            w = y[layout.w]
            zeta = y[layout.zeta]
            xi = lap @ x
            z = x - xbar + rho * w
            tp_hat = np.empty(n)
            tp_true = np.empty(n)
            phivals = []
            for i in range(n):
                xif = x[i]
                th = y[tsl[i]]
                acc_h = 0.0
                acc_t = 0.0
                vals = [f(xif) for f in fns[i]]
                for k, val in enumerate(vals):
                    acc_h += th[k] * val
                    acc_t += theta_true[i][k] * val
                tp_hat[i] = acc_h
                tp_true[i] = acc_t
                phivals.append(vals)
            inner = tp_hat + rho * xi + nu * z
            u = nf(zeta) * inner
            out = np.empty(layout.dim)
            out[layout.x] = b * u + tp_true
            out[layout.w] = xi
            out[layout.zeta] = z * inner
            for i in range(n):
                c = gamma[i] * z[i]
                base = tsl[i].start
                for k, val in enumerate(phivals[i]):
                    out[base + k] = c * val
            return out
    else:
        def rate(y):
            x = y[layout.x]
            v = y[layout.v]
            w = y[layout.w]
            zeta = y[layout.zeta]
            xi = lap @ x
            xiv = lap @ v
            z = x - xbar + rho * w
            s = v + rho * xi + lam * z
            tp_hat = np.empty(n)
            tp_true = np.empty(n)
            phivals = []
            for i in range(n):
                xif = x[i]
                vif = v[i]
                th = y[tsl[i]]
                acc_h = 0.0
                acc_t = 0.0
                vals = [f(xif, vif) for f in fns[i]]
                for k, val in enumerate(vals):
                    acc_h += th[k] * val
                    acc_t += theta_true[i][k] * val
                tp_hat[i] = acc_h
                tp_true[i] = acc_t
                phivals.append(vals)
            inner = tp_hat + lam * v + rho * xiv + nu * s + (lam * rho) * xi
            u = nf(zeta) * inner
            out = np.empty(layout.dim)
            out[layout.x] = v
            out[layout.v] = b * u + tp_true
            out[layout.w] = xi
            out[layout.zeta] = s * inner
            for i in range(n):
                c = gamma[i] * s[i]
                base = tsl[i].start
                for k, val in enumerate(phivals[i]):
                    out[base + k] = c * val
            return out

    return layout, rate


def closed_loop_rate(state: np.ndarray, sc: Scenario) -> np.ndarray:
    """Full right-hand side of the closed loop at one state.

    Raises :class:`DivergenceError` naming the offending agent if any
    rate component is non-finite.
    """
    layout, rate = _rate_closure(sc)
    state = np.asarray(state, dtype=float)
    if state.shape != (layout.dim,):
        raise ValueError(f"state has shape {state.shape}, expected ({layout.dim},)")
    with np.errstate(over="ignore", invalid="ignore"):
        out = rate(state)
    if not np.isfinite(out).all():
        idx = int(np.flatnonzero(~np.isfinite(out))[0])
        raise DivergenceError(
            f"non-finite rate in {layout.names[idx]} (agent {layout.agent_of(idx)})",
            agent=layout.agent_of(idx), field_name=layout.names[idx],
        )
    return out


def rk4_step(rate_fn, state: np.ndarray, dt: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step; deterministic.

    Stages are not checked for finiteness here (hot path); callers guard
    the returned state.
    """
    k1 = rate_fn(state)
    k2 = rate_fn(state + (dt / 2.0) * k1)
    k3 = rate_fn(state + (dt / 2.0) * k2)
    k4 = rate_fn(state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def inner_terms(sc: Scenario, states: np.ndarray, layout: StateLayout) -> np.ndarray:
    """Per-sample, per-agent control bracket.

    For first order ``theta_hat.phi + rho*xi + nu*z``; for second order
    the five-term bracket including the velocity and filtered terms.
    The control is N(zeta)*bracket and the zeta rate is z*bracket (or
    s*bracket), so simulation recording and post-run certificates share
    this single implementation.
    """
    lap = sc.laplacian
    n = sc.n
    g = sc.gains
    fns = [a.phi_fns_x if sc.order == 1 else a.phi_fns_xv for a in sc.agents]
    x = states[:, layout.x]
    w = states[:, layout.w]
    xi = x @ lap.T
    z = x - g.xbar + g.rho * w
    n_samples = states.shape[0]
    tp_hat = np.zeros((n_samples, n))
    if sc.order == 1:
        for i in range(n):
            th = states[:, layout.theta_slices[i]]
            for k, f in enumerate(fns[i]):
                vals = np.array([f(xs) for xs in x[:, i]])
                tp_hat[:, i] += th[:, k] * vals
        return tp_hat + g.rho * xi + g.nu * z
    v = states[:, layout.v]
    xiv = v @ lap.T
    s = v + g.rho * xi + g.lam * z
    for i in range(n):
        th = states[:, layout.theta_slices[i]]
        for k, f in enumerate(fns[i]):
            vals = np.array([f(xs, vs) for xs, vs in zip(x[:, i], v[:, i])])
            tp_hat[:, i] += th[:, k] * vals
    return tp_hat + g.lam * v + g.rho * xiv + g.nu * s + (g.lam * g.rho) * xi


def _derived_records(sc: Scenario, tr: Trajectory) -> None:
    g = sc.gains
    x = tr.x
    tr.xi = x @ sc.laplacian.T
    tr.z = x - g.xbar + g.rho * tr.w
    inner = inner_terms(sc, tr.states, tr.layout)
    tr.u = sc.ngain.f(tr.zeta) * inner
    if sc.order == 2:
        tr.s = tr.v + g.rho * tr.xi + g.lam * tr.z


def simulate(sc: Scenario, dt: float | None = None, horizon: float | None = None) -> Trajectory:
    """Run the closed loop over the scenario horizon.

    Records every ``decimation``-th step (plus the final state).  Aborts
    with :class:`DivergenceError` if any state entry exceeds the
    overflow guard or goes non-finite.
    """
    if dt is not None or horizon is not None:
        sc = sc.with_sim(dt=dt, horizon=horizon)
    if not is_strongly_connected(sc.graph):
        raise ScenarioValidationError(["communication topology must be strongly connected"])
    for k, a in enumerate(sc.agents, start=1):
        if a.b == 0:
            raise ScenarioValidationError([f"agent {k}: input gain b must be nonzero"])

    layout, rate = _rate_closure(sc)
    step = sc.dt
    n_steps = int(math.floor(sc.horizon / step + 1e-9))
    dec = sc.decimation
    n_samples = n_steps // dec + 1 + (1 if n_steps % dec else 0)

    states = np.empty((n_samples, layout.dim))
    tgrid = np.empty(n_samples)
    y = layout.pack(sc.x0, sc.v0)
    states[0] = y
    tgrid[0] = 0.0
    si = 1
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_steps + 1):
            y = rk4_step(rate, y, step)
            peak = np.abs(y).max()
            if not peak < OVERFLOW_GUARD:
                finite = np.isfinite(y)
                bad = ~finite if not finite.all() else (np.abs(y) >= OVERFLOW_GUARD)
                idx = int(np.flatnonzero(bad)[0])
                raise DivergenceError(
                    f"divergence at t={k * step:.6g}: {layout.names[idx]} "
                    f"(agent {layout.agent_of(idx)}) left the trusted range",
                    t=k * step, agent=layout.agent_of(idx), field_name=layout.names[idx],
                )
            if k % dec == 0 or k == n_steps:
                states[si] = y
                tgrid[si] = k * step
                si += 1

    tr = Trajectory(t=tgrid, states=states, layout=layout,
                    u=None, z=None, xi=None, s=None)
    _derived_records(sc, tr)
    return tr
