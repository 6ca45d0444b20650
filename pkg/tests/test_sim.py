"""Closed-loop assembly and integration."""

import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from piconsensus import controller
from piconsensus.scenario import ScenarioValidationError, build_scenario, load_scenario
from piconsensus.sim import (
    DivergenceError,
    StateLayout,
    closed_loop_rate,
    rk4_step,
    simulate,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture(scope="module")
def case1():
    return load_scenario(SCENARIOS / "case1.scenario")


@pytest.fixture(scope="module")
def case2():
    return load_scenario(SCENARIOS / "case2.scenario")


@pytest.fixture(scope="module")
def case1_short(case1):
    return case1, simulate(case1, horizon=5.0)


@pytest.fixture(scope="module")
def case2_short(case2):
    return case2, simulate(case2, horizon=5.0)


class TestLayout:
    def test_first_order_blocks(self):
        lo = StateLayout.build(1, [1, 1, 1, 1])
        assert lo.dim == 4 * 3 + 4
        assert lo.x == slice(0, 4)
        assert lo.v is None
        assert lo.names[0] == "x_1" and lo.names[-1] == "zeta_4"
        assert lo.names[lo.theta_slices[1].start] == "theta_hat_2_1"
        assert lo.agent_of(0) == 1
        assert lo.agent_of(lo.theta_slices[2].start) == 3

    def test_second_order_with_varied_ells(self):
        lo = StateLayout.build(2, [2, 0, 1])
        # per agent: x, v, w, zeta plus theta entries
        assert lo.dim == 3 * 4 + 3
        assert lo.theta_slices[1] == slice(lo.theta.start + 2, lo.theta.start + 2)
        assert lo.names[lo.v.start] == "v_1"

    def test_pack(self):
        lo = StateLayout.build(2, [1, 1])
        y = lo.pack([1.0, 2.0], [3.0, 4.0])
        assert np.array_equal(y[lo.x], [1.0, 2.0])
        assert np.array_equal(y[lo.v], [3.0, 4.0])
        assert (y[lo.w] == 0).all() and (y[lo.zeta] == 0).all()


class TestRk4:
    def test_exponential_decay_one_step(self):
        y = rk4_step(lambda s: -s, np.array([1.0]), 0.1)
        assert y[0] == pytest.approx(0.9048375, abs=1e-7)
        assert abs(y[0] - math.exp(-0.1)) < 1e-7

    def test_zero_rate_identity(self):
        y0 = np.array([1.0, -2.0, 3.5])
        assert np.array_equal(rk4_step(lambda s: np.zeros_like(s), y0, 0.25), y0)

    def test_constant_rate_exact(self):
        y = rk4_step(lambda s: np.ones_like(s), np.array([2.0]), 0.5)
        assert y[0] == 2.5

    def test_fourth_order_on_scalar_problem(self):
        # global error on ydot = -y over [0, 1] shrinks ~16x per halving
        def run(dt):
            y = np.array([1.0])
            for _ in range(int(round(1.0 / dt))):
                y = rk4_step(lambda s: -s, y, dt)
            return abs(y[0] - math.exp(-1.0))

        assert run(0.1) / run(0.05) > 14


class TestClosedLoopRate:
    def test_error_system_equilibrium(self, case1):
        # consensus state with zero PI error: only x can still move
        lo = StateLayout.build(1, case1.ells)
        y = np.zeros(lo.dim)
        c = 2.5
        y[lo.x] = c
        y[lo.w] = (case1.gains.xbar - c) / case1.gains.rho  # makes z = 0
        y[lo.zeta] = 0.7
        y[lo.theta] = -0.3
        rate = closed_loop_rate(y, case1)
        assert np.array_equal(rate[lo.w], np.zeros(4))
        assert np.array_equal(rate[lo.zeta], np.zeros(4))
        assert np.array_equal(rate[lo.theta], np.zeros(4))

    def test_w_rate_is_consensus_error_exactly(self, case1):
        rng = np.random.default_rng(41)
        lo = StateLayout.build(1, case1.ells)
        for _ in range(20):
            y = rng.normal(size=lo.dim)
            rate = closed_loop_rate(y, case1)
            assert np.array_equal(rate[lo.w], controller.consensus_error(case1.graph, y[lo.x]))

    def test_case1_start_position_rate(self, case1):
        lo = StateLayout.build(1, case1.ells)
        y = lo.pack(case1.x0)
        rate = closed_loop_rate(y, case1)
        # u(0) = 0 everywhere, so xdot_4 = theta_4 * phi_4(x_4) = 2*(-1)*sin(-1)
        assert rate[lo.x][3] == pytest.approx(2.0 * (-1.0) * math.sin(-1.0), rel=1e-12)
        assert rate[lo.x][0] == pytest.approx(math.sin(1.0), rel=1e-12)

    def test_matches_per_agent_control_ops_first_order(self, case1):
        rng = np.random.default_rng(42)
        lo = StateLayout.build(1, case1.ells)
        for _ in range(10):
            y = rng.normal(size=lo.dim)
            rate = closed_loop_rate(y, case1)
            x = y[lo.x]
            state = controller.ControllerState(
                w=y[lo.w],
                theta_hat=[y[lo.theta_slices[i]] for i in range(4)],
                zeta=y[lo.zeta],
            )
            for i in range(1, 5):
                phi = [f(x[i - 1]) for f in case1.agents[i - 1].phi_fns_x]
                u, zdot, thdot = controller.first_order_control(
                    case1.graph, i, x, np.array(phi), state, case1.gains
                )
                assert rate[lo.zeta][i - 1] == pytest.approx(zdot, rel=1e-12, abs=1e-12)
                assert rate[lo.theta_slices[i - 1]] == pytest.approx(thdot, rel=1e-12, abs=1e-12)
                xdot_expected = case1.agents[i - 1].b * u + float(
                    case1.agents[i - 1].theta @ phi
                )
                assert rate[lo.x][i - 1] == pytest.approx(xdot_expected, rel=1e-12, abs=1e-12)

    def test_matches_per_agent_control_ops_second_order(self, case2):
        rng = np.random.default_rng(43)
        lo = StateLayout.build(2, case2.ells)
        for _ in range(10):
            y = rng.normal(size=lo.dim)
            rate = closed_loop_rate(y, case2)
            x, v = y[lo.x], y[lo.v]
            state = controller.ControllerState(
                w=y[lo.w],
                theta_hat=[y[lo.theta_slices[i]] for i in range(4)],
                zeta=y[lo.zeta],
            )
            assert np.array_equal(rate[lo.x], v)
            for i in range(1, 5):
                phi = [f(x[i - 1], v[i - 1]) for f in case2.agents[i - 1].phi_fns_xv]
                u, zdot, thdot = controller.second_order_control(
                    case2.graph, i, x, v, np.array(phi), state, case2.gains
                )
                assert rate[lo.zeta][i - 1] == pytest.approx(zdot, rel=1e-12, abs=1e-12)
                assert rate[lo.theta_slices[i - 1]] == pytest.approx(thdot, rel=1e-12, abs=1e-12)
                vdot_expected = case2.agents[i - 1].b * u + float(
                    case2.agents[i - 1].theta @ phi
                )
                assert rate[lo.v][i - 1] == pytest.approx(vdot_expected, rel=1e-12, abs=1e-12)

    def test_input_decoupling(self, case1):
        # zeta_j sets u_j; changing it must leave every agent-i rate entry
        # untouched for i != j
        rng = np.random.default_rng(44)
        lo = StateLayout.build(1, case1.ells)
        y = rng.normal(size=lo.dim)
        base = closed_loop_rate(y, case1)
        for j in range(4):
            y2 = y.copy()
            y2[lo.zeta][j] += 1.0  # view writes through to y2
            rate = closed_loop_rate(y2, case1)
            for i in range(4):
                if i == j:
                    continue
                assert rate[lo.x][i] == base[lo.x][i]
                assert rate[lo.w][i] == base[lo.w][i]
                assert rate[lo.zeta][i] == base[lo.zeta][i]
                assert np.array_equal(rate[lo.theta_slices[i]], base[lo.theta_slices[i]])

    def test_nonfinite_rate_reported(self, case1):
        lo = StateLayout.build(1, case1.ells)
        y = np.zeros(lo.dim)
        y[lo.x] = np.array([1.0, 2.0, 3.0, 1e308])  # phi_3 = 0.5 x^2 + 1 overflows
        with pytest.raises(DivergenceError) as exc:
            closed_loop_rate(y, case1)
        assert exc.value.agent in (1, 2, 3, 4)


class TestSimulate:
    def test_sample_grid_shape(self, case1):
        tr = simulate(case1, horizon=2.0)
        assert len(tr) == int(2.0 / 1e-3) / 10 + 1
        assert tr.t[0] == 0.0 and tr.t[-1] == pytest.approx(2.0, abs=1e-12)
        assert (np.diff(tr.t) > 0).all()

    def test_unaligned_final_step_recorded(self, case1):
        tr = simulate(case1.with_sim(horizon=0.0251), dt=1e-3)
        # 25 steps, decimation 10 -> samples at steps 0, 10, 20, 25
        assert len(tr) == 4
        assert tr.t[-1] == pytest.approx(0.025, abs=1e-12)

    def test_determinism_bit_identical(self, case1):
        a = simulate(case1, horizon=3.0)
        b = simulate(case1, horizon=3.0)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.u, b.u)
        assert np.array_equal(a.t, b.t)

    def test_conservation_of_weighted_integral(self, case1_short):
        sc, tr = case1_short
        lhs = np.abs(tr.w @ sc.omega)
        bound = 1e-6 * (1.0 + np.abs(tr.w).max(axis=1))
        assert (lhs <= bound).all()

    def test_weighted_position_identity(self, case1_short):
        sc, tr = case1_short
        target = float(sc.omega @ sc.gains.xbar)
        lhs = np.abs(tr.x @ sc.omega - tr.z @ sc.omega - target)
        bound = 1e-6 * (1.0 + np.abs(tr.x).max(axis=1))
        assert (lhs <= bound).all()

    def test_filtered_error_link(self, case2_short):
        sc, tr = case2_short
        expected = tr.v + sc.gains.rho * tr.xi + sc.gains.lam * tr.z
        assert np.array_equal(tr.s, expected)

    def test_recorded_u_matches_control_law(self, case1_short):
        sc, tr = case1_short
        state = controller.ControllerState(
            w=tr.w[-1],
            theta_hat=[tr.theta_hat(i)[-1] for i in range(1, 5)],
            zeta=tr.zeta[-1],
        )
        for i in range(1, 5):
            phi = [f(tr.x[-1][i - 1]) for f in sc.agents[i - 1].phi_fns_x]
            u, _, _ = controller.first_order_control(
                sc.graph, i, tr.x[-1], np.array(phi), state, sc.gains
            )
            assert tr.u[-1][i - 1] == pytest.approx(u, rel=1e-12, abs=1e-12)

    def test_rk4_order_on_closed_loop(self, case1):
        ref = simulate(case1.with_sim(dt=1e-3, horizon=1.0)).states[-1]
        e1 = np.abs(simulate(case1.with_sim(dt=8e-3, horizon=1.0)).states[-1] - ref).max()
        e2 = np.abs(simulate(case1.with_sim(dt=4e-3, horizon=1.0)).states[-1] - ref).max()
        assert e1 / e2 >= 12.0

    def test_divergence_raises(self):
        # the loop stabilizes where b*N < 0; pinning N to 1 with positive b
        # makes the feedback positive, so the state runs away and the
        # overflow guard must fire
        doc = {
            "name": "runaway",
            "order": 1,
            "graph": {"n": 2, "edges": [[1, 2, 1.0], [2, 1, 1.0]]},
            "agents": [{"b": 1.0}, {"b": 1.0}],
            "gains": {"rho": 5.0, "nu": 5.0, "gamma": 1.0, "xbar": [0.0, 1.0]},
            "x0": [1.0, 0.0],
            "sim": {"dt": 0.001, "horizon": 20.0},
            "nussbaum": "unit",
        }
        sc = build_scenario(doc)
        with pytest.raises(DivergenceError) as exc:
            simulate(sc)
        assert exc.value.t is not None and exc.value.agent in (1, 2)

    def test_known_direction_baseline_converges(self):
        # pinning N to 1 with b = -1 gives a plain stable PI consensus
        # scheme (effective feedback b*N = -1); it must settle at omega . xbar
        doc = {
            "name": "baseline",
            "order": 1,
            "graph": {"n": 4, "edges": [[1, 2, 3.0], [2, 3, 3.0], [3, 4, 2.0], [4, 1, 3.0]]},
            "agents": [{"b": -1.0}, {"b": -1.0}, {"b": -1.0}, {"b": -1.0}],
            "gains": {"rho": 0.5, "nu": 1.0, "gamma": 0.1, "xbar": [1.0, 2.0, 3.0, 4.0]},
            "x0": [1.0, 2.0, 3.0, -1.0],
            "sim": {"dt": 0.001, "horizon": 60.0},
            "nussbaum": "unit",
        }
        sc = build_scenario(doc)
        tr = simulate(sc)
        target = float(sc.omega @ sc.gains.xbar)
        assert np.abs(tr.x[-1] - target).max() < 0.01

    def test_rejects_single_agent(self):
        with pytest.raises(ScenarioValidationError):
            build_scenario({
                "name": "solo", "order": 1,
                "graph": {"n": 1, "edges": []},
                "agents": [{"b": 1.0}],
                "gains": {"rho": 0.1, "nu": 0.1, "gamma": 0.1, "xbar": [0.0]},
                "x0": [0.0],
                "sim": {"dt": 0.001, "horizon": 1.0},
            })
