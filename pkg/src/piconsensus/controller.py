"""Distributed adaptive control stack with direction-seeking gains.

The consensus design works on transformed error variables rather than on
raw displacements.  For agent i with fixed point ``xbar_i``:

* consensus error   ``xi_i  = sum_j a_ij (x_i - x_j)``, the i-th entry of L x
* PI error          ``z_i   = x_i - xbar_i + rho * w_i`` where ``w_i`` is the
  running integral of ``xi_i``  (so z is the position error plus rho times
  the integrated local disagreement)
* filtered error    ``s_i   = v_i + rho*xi_i + lambda*z_i`` (second order only)

Regulating z (or s) to zero forces all positions to the weighted average
``omega . xbar``.  Because only agent i's input enters the z_i dynamics,
each agent can run its own regulator: a gradient estimator ``theta_hat_i``
for the unknown plant parameters plus a Nussbaum gain ``N(zeta_i)`` that
sweeps the unknown sign of the input gain until the loop stabilizes.

All functions here are pure; per-agent operations consume only agent-local
state and neighbor positions/velocities (1-based agent indices, matching
graph node numbering).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import DirectedGraph, Laplacian, laplacian


# --- Nussbaum gains --------------------------------------------------------

def _k2cos(k):
    return k * k * np.cos(k)


def _k2cos_anti(k):
    return k * k * np.sin(k) + 2.0 * k * np.cos(k) - 2.0 * np.sin(k)


def _k2sin(k):
    return k * k * np.sin(k)


def _k2sin_anti(k):
    return -k * k * np.cos(k) + 2.0 * k * np.sin(k) + 2.0 * np.cos(k) - 2.0


def _unit(k):
    return np.ones_like(k) if isinstance(k, np.ndarray) else 1.0


def _unit_anti(k):
    return k


@dataclass(frozen=True)
class NussbaumGain:
    """A gain function N(k) together with its closed-form antiderivative."""

    name: str
    f: callable
    antiderivative: callable

    def mean(self, k: float) -> float:
        """(1/k) * integral of N from 0 to k; the quantity whose running
        sup/inf must reach +/- infinity for a true direction-seeking gain."""
        if k == 0:
            raise ValueError("mean of N over [0, k] is undefined at k = 0")
        return float(self.antiderivative(k)) / k


K2COS = NussbaumGain("k2cos", _k2cos, _k2cos_anti)
K2SIN = NussbaumGain("k2sin", _k2sin, _k2sin_anti)
UNIT = NussbaumGain("unit", _unit, _unit_anti)  # test hook: known-direction baseline

NUSSBAUM_GAINS = {g.name: g for g in (K2COS, K2SIN, UNIT)}


def nussbaum(k: float) -> float:
    """Default even smooth direction-seeking gain, N(k) = k^2 cos(k)."""
    return float(K2COS.f(float(k)))


def nussbaum_mean(k: float) -> float:
    """(1/k) * integral_0^k N for the default gain, via the antiderivative
    k^2 sin k + 2k cos k - 2 sin k."""
    return K2COS.mean(float(k))


def oscillation_witness(gain: NussbaumGain = K2COS, threshold: float = 10.0,
                        k_max: float = 100.0) -> bool:
    """Numerically confirm the running mean of N exceeds +threshold and
    falls below -threshold somewhere on (0, k_max]."""
    ks = np.arange(0.25, k_max, 0.25)
    means = np.array([gain.mean(k) for k in ks])
    return bool(means.max() > threshold and means.min() < -threshold)


# --- Gains and per-agent state ---------------------------------------------

@dataclass
class ControllerGains:
    """Shared design constants: integral gain rho, damping nu, filter gain
    lam (second order only), per-agent adaptation gains gamma, and the
    fixed points xbar the PI errors are measured from."""

    rho: float
    nu: float
    gamma: np.ndarray
    xbar: np.ndarray
    lam: float | None = None

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.xbar = np.asarray(self.xbar, dtype=float)
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.lam is not None and not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not (self.gamma > 0).all():
            raise ValueError("every adaptation gain gamma_i must be positive")


@dataclass
class ControllerState:
    """Integrated controller quantities: disagreement integrals w,
    parameter estimates theta_hat (one vector per agent), Nussbaum
    arguments zeta."""

    w: np.ndarray
    theta_hat: list[np.ndarray]
    zeta: np.ndarray


def initial_state(ells: list[int]) -> ControllerState:
    """Uninformed start: w = 0, theta_hat = 0, zeta = 0 (so every u_i(0) = 0)."""
    n = len(ells)
    return ControllerState(
        w=np.zeros(n),
        theta_hat=[np.zeros(ell) for ell in ells],
        zeta=np.zeros(n),
    )


# --- Error variables --------------------------------------------------------

def consensus_error(g, x) -> np.ndarray:
    """Local disagreement vector xi = L x (xi_i sums a_ij (x_i - x_j) over
    in-neighbors).  Accepts a DirectedGraph or a prebuilt Laplacian."""
    lap = g.matrix if isinstance(g, Laplacian) else laplacian(g).matrix
    x = np.asarray(x, dtype=float)
    if x.shape != (lap.shape[0],):
        raise ValueError(f"state has shape {x.shape}, expected ({lap.shape[0]},)")
    return lap @ x


def pi_error(x, w, gains: ControllerGains) -> np.ndarray:
    """z = x - xbar + rho * w."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != gains.xbar.shape or w.shape != x.shape:
        raise ValueError("x, w and xbar must have matching shapes")
    return x - gains.xbar + gains.rho * w


def filtered_error(v, xi, z, gains: ControllerGains) -> np.ndarray:
    """s = zdot + lambda*z = v + rho*xi + lambda*z (second-order designs)."""
    if gains.lam is None:
        raise ValueError("filtered error needs the second-order filter gain lambda")
    v = np.asarray(v, dtype=float)
    xi = np.asarray(xi, dtype=float)
    z = np.asarray(z, dtype=float)
    return v + gains.rho * xi + gains.lam * z


def _local_disagreement(g: DirectedGraph, i: int, values) -> float:
    acc = 0.0
    vi = values[i - 1]
    for j, a in g.in_neighbors(i):
        acc += a * (vi - values[j - 1])
    return acc


# --- Control laws ------------------------------------------------------------

def first_order_control(g: DirectedGraph, i: int, x, phi_values, state: ControllerState,
                        gains: ControllerGains, ngain: NussbaumGain = K2COS):
    """Agent i's first-order control and adaptation rates.

    Returns ``(u_i, zeta_rate, theta_hat_rate)`` with

    * u_i        = N(zeta_i) * [theta_hat_i . phi_i + rho*xi_i + nu*z_i]
    * zeta_rate  = nu*z_i^2 + z_i * [theta_hat_i . phi_i + rho*xi_i]
    * theta_hat_rate = gamma_i * phi_i * z_i

    Uses only x_i, neighbor positions x_j, and agent-i local state; smooth
    everywhere including z_i = 0 (no switching).
    """
    phi_values = np.asarray(phi_values, dtype=float)
    z_i = x[i - 1] - gains.xbar[i - 1] + gains.rho * state.w[i - 1]
    xi_i = _local_disagreement(g, i, x)
    inner = float(state.theta_hat[i - 1] @ phi_values) + gains.rho * xi_i + gains.nu * z_i
    u_i = float(ngain.f(state.zeta[i - 1])) * inner
    zeta_rate = z_i * inner
    theta_hat_rate = gains.gamma[i - 1] * z_i * phi_values
    return u_i, zeta_rate, theta_hat_rate


def second_order_control(g: DirectedGraph, i: int, x, v, phi_values, state: ControllerState,
                         gains: ControllerGains, ngain: NussbaumGain = K2COS):
    """Agent i's second-order control and adaptation rates.

    Returns ``(u_i, zeta_rate, theta_hat_rate)`` with

    * u_i        = N(zeta_i) * [theta_hat_i . phi_i + lam*v_i + rho*xiv_i
                                + nu*s_i + lam*rho*xi_i]
    * zeta_rate  = nu*s_i^2 + s_i * [theta_hat_i . phi_i + lam*v_i
                                     + rho*xiv_i + rho*lam*xi_i]
    * theta_hat_rate = gamma_i * phi_i * s_i

    where xi and xiv are the position and velocity disagreements and
    s_i = v_i + rho*xi_i + lam*z_i.
    """
    if gains.lam is None:
        raise ValueError("second-order control needs the filter gain lambda")
    phi_values = np.asarray(phi_values, dtype=float)
    lam = gains.lam
    z_i = x[i - 1] - gains.xbar[i - 1] + gains.rho * state.w[i - 1]
    xi_i = _local_disagreement(g, i, x)
    xiv_i = _local_disagreement(g, i, v)
    s_i = v[i - 1] + gains.rho * xi_i + lam * z_i
    inner = (float(state.theta_hat[i - 1] @ phi_values) + lam * v[i - 1]
             + gains.rho * xiv_i + gains.nu * s_i + lam * gains.rho * xi_i)
    u_i = float(ngain.f(state.zeta[i - 1])) * inner
    zeta_rate = s_i * inner
    theta_hat_rate = gains.gamma[i - 1] * s_i * phi_values
    return u_i, zeta_rate, theta_hat_rate
