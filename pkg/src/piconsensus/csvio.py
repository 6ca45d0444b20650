"""Lossless trajectory CSV encoding.

Column order: ``t``, ``x_1..x_N``, (``v_1..v_N`` for second order),
``w_1..w_N``, ``z_1..z_N``, (``s_1..s_N``), ``zeta_1..zeta_N``,
``u_1..u_N``, then ``theta_hat_i_k`` grouped by agent.  Values carry 17
significant digits, so parsing reproduces the exact doubles and
reanalysis of a stored trajectory is bit-for-bit faithful.
"""

from __future__ import annotations

import io

import numpy as np

from .scenario import Scenario
from .sim import StateLayout, Trajectory


def _columns(layout: StateLayout) -> list[str]:
    n = layout.n
    cols = ["t"] + [f"x_{i}" for i in range(1, n + 1)]
    if layout.order == 2:
        cols += [f"v_{i}" for i in range(1, n + 1)]
    cols += [f"w_{i}" for i in range(1, n + 1)]
    cols += [f"z_{i}" for i in range(1, n + 1)]
    if layout.order == 2:
        cols += [f"s_{i}" for i in range(1, n + 1)]
    cols += [f"zeta_{i}" for i in range(1, n + 1)]
    cols += [f"u_{i}" for i in range(1, n + 1)]
    for i, ell in enumerate(layout.ells, start=1):
        cols += [f"theta_hat_{i}_{k}" for k in range(1, ell + 1)]
    return cols


def trajectory_to_csv(tr: Trajectory) -> str:
    layout = tr.layout
    blocks = [tr.t[:, None], tr.x]
    if layout.order == 2:
        blocks.append(tr.v)
    blocks += [tr.w, tr.z]
    if layout.order == 2:
        blocks.append(tr.s)
    blocks += [tr.zeta, tr.u, tr.states[:, layout.theta]]
    mat = np.hstack(blocks)
    lines = [",".join(_columns(layout))]
    lines.extend(",".join(format(v, ".17g") for v in row) for row in mat)
    return "\n".join(lines) + "\n"


class TrajectoryFormatError(ValueError):
    pass


def trajectory_from_csv(text: str, sc: Scenario) -> Trajectory:
    """Rebuild a trajectory from CSV text against its scenario.

    The header must match the scenario's layout exactly; the consensus
    error xi is recomputed from the stored positions (it is memoryless).
    """
    layout = StateLayout.build(sc.order, sc.ells)
    expected = _columns(layout)
    head, _, body = text.partition("\n")
    actual = [c.strip() for c in head.split(",")]
    if actual != expected:
        raise TrajectoryFormatError(
            f"CSV header does not match scenario {sc.name!r}: "
            f"expected {len(expected)} columns starting {expected[:4]}, got {actual[:4]}"
        )
    if not body.strip():
        raise TrajectoryFormatError("CSV carries no samples")
    data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    if data.shape[1] != len(expected):
        raise TrajectoryFormatError(
            f"CSV rows have {data.shape[1]} values, expected {len(expected)}"
        )
    n = layout.n
    pos = 1

    def take(count):
        nonlocal pos
        block = data[:, pos:pos + count]
        pos += count
        return block

    x = take(n)
    v = take(n) if layout.order == 2 else None
    w = take(n)
    z = take(n)
    s = take(n) if layout.order == 2 else None
    zeta = take(n)
    u = take(n)
    theta = take(sum(layout.ells))

    states = np.empty((data.shape[0], layout.dim))
    states[:, layout.x] = x
    if layout.order == 2:
        states[:, layout.v] = v
    states[:, layout.w] = w
    states[:, layout.theta] = theta
    states[:, layout.zeta] = zeta

    t = data[:, 0]
    if not (np.diff(t) > 0).all():
        raise TrajectoryFormatError("time column must be strictly increasing")

    return Trajectory(t=t, states=states, layout=layout,
                      u=u, z=z, xi=x @ sc.laplacian.T, s=s)
