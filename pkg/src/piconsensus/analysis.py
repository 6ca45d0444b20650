"""Post-run verification of the closed loop's theoretical guarantees.

Given a recorded trajectory this module computes:

* consensus metrics (predicted agreement value, final spread, tail of
  the transformed error z, per-family boundedness flags),
* the integrated energy-balance certificate, per agent:
  ``Vbar_i(t) = Vbar_i(0) - nu * int e_i^2 + int (b_i N(zeta_i) + 1) zeta_i_dot``
  where ``e`` is z for first-order runs and the filtered error s for
  second-order runs, and ``Vbar_i = e_i^2/2 + |theta_hat_i - theta_i|^2/(2 gamma_i)``.
  The certificate legitimately uses the true plant parameters, which the
  controllers never see; its residual is evaluated with trapezoidal
  quadrature on the recorded grid, so it shrinks as the recording step
  does (a dt-halving check accompanies it in the test suite).

Boundedness of a signal family is operationalized as: the running max of
its magnitude grows by less than 1% over the final half of the horizon.
That is a finite-horizon proxy for the qualitative all-signals-bounded
guarantee, and is documented as such.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario
from .sim import Trajectory, inner_terms


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


@dataclass
class ConsensusReport:
    predicted_consensus: float
    final_positions: np.ndarray
    final_spread: float
    final_velocity_norm: float | None
    z_sup_tail: float
    bounded: dict[str, bool]
    lyapunov_residuals: np.ndarray | None

    def to_text(self) -> str:
        """Flat key-value rendering, one fact per line."""
        lines = [f"predicted_consensus = {_fmt(self.predicted_consensus)}"]
        for i, xi in enumerate(self.final_positions, start=1):
            lines.append(f"final_position_{i} = {_fmt(xi)}")
        lines.append(f"final_spread = {_fmt(self.final_spread)}")
        if self.final_velocity_norm is not None:
            lines.append(f"final_velocity_norm = {_fmt(self.final_velocity_norm)}")
        lines.append(f"z_sup_tail = {_fmt(self.z_sup_tail)}")
        for fam in sorted(self.bounded):
            lines.append(f"bounded_{fam} = {'true' if self.bounded[fam] else 'false'}")
        if self.lyapunov_residuals is not None:
            for i, r in enumerate(self.lyapunov_residuals, start=1):
                lines.append(f"lyapunov_residual_{i} = {_fmt(r)}")
        return "\n".join(lines) + "\n"


def _running_max_bounded(series: np.ndarray, rel_growth: float = 0.01) -> bool:
    mags = np.abs(series).max(axis=1) if series.ndim == 2 else np.abs(series)
    runmax = np.maximum.accumulate(mags)
    mid = runmax[(len(runmax) - 1) // 2]
    end = runmax[-1]
    return bool(end <= mid * (1.0 + rel_growth) + 1e-12)


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    areas = 0.5 * (y[1:] + y[:-1]) * np.diff(t)
    return np.concatenate(([0.0], np.cumsum(areas)))


def consensus_metrics(traj: Trajectory, omega, xbar, scenario: Scenario | None = None) -> ConsensusReport:
    """Summarize a completed run against its predicted agreement point.

    Passing the scenario (which carries the true plant parameters) also
    fills in the per-agent energy-balance residuals.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    omega = np.asarray(omega, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    x = traj.x
    tail_lo = max(0, len(traj) - max(1, len(traj) // 10))

    bounded = {
        "x": _running_max_bounded(x),
        "zeta": _running_max_bounded(traj.zeta),
        "theta_hat": _running_max_bounded(traj.states[:, traj.layout.theta])
        if traj.layout.theta.stop > traj.layout.theta.start else True,
        "u": _running_max_bounded(traj.u),
    }
    if traj.v is not None:
        bounded["v"] = _running_max_bounded(traj.v)

    return ConsensusReport(
        predicted_consensus=float(omega @ xbar),
        final_positions=x[-1].copy(),
        final_spread=float(x[-1].max() - x[-1].min()),
        final_velocity_norm=float(np.abs(traj.v[-1]).max()) if traj.v is not None else None,
        z_sup_tail=float(np.abs(traj.z[tail_lo:]).max()),
        bounded=bounded,
        lyapunov_residuals=lyapunov_certificate(traj, scenario) if scenario is not None else None,
    )


def lyapunov_certificate(traj: Trajectory, sc: Scenario) -> np.ndarray:
    """Max-over-time defect of the integrated energy balance, per agent.

    Zero in exact arithmetic; in practice limited by the trapezoidal
    quadrature on the recorded grid.
    """
    g = sc.gains
    err = traj.z if sc.order == 1 else traj.s
    inner = inner_terms(sc, traj.states, traj.layout)
    zeta_dot = err * inner
    b = np.array([a.b for a in sc.agents])
    n_gain = sc.ngain.f(traj.zeta)

    residuals = np.empty(sc.n)
    for i in range(sc.n):
        th_err = traj.theta_hat(i + 1) - sc.agents[i].theta
        vbar = 0.5 * err[:, i] ** 2 + (th_err ** 2).sum(axis=1) / (2.0 * g.gamma[i])
        damping = g.nu * _cumtrapz(err[:, i] ** 2, traj.t)
        sweep = _cumtrapz((b[i] * n_gain[:, i] + 1.0) * zeta_dot[:, i], traj.t)
        residuals[i] = np.abs(vbar - vbar[0] + damping - sweep).max()
    return residuals


def second_order_velocity_check(traj: Trajectory) -> float:
    """Largest final velocity magnitude; the design drives all to zero."""
    if traj.v is None:
        raise ValueError("velocity check applies to second-order trajectories only")
    return float(np.abs(traj.v[-1]).max())
