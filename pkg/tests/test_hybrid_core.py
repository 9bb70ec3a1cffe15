import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridseek.closeness import min_epsilon
from hybridseek.hybrid_core import (
    ContractViolation,
    HybridArc,
    HybridSystem,
    JumpPolicy,
    NoDynamicsFromPoint,
    OutOfDomain,
    SolverConfig,
    Termination,
    ZenoWarning,
    arc_from_blocks,
    empirical_average,
    inflate,
    never,
    sample_at,
    simulate,
)
from hybridseek.scenarios import build_scenario


def reset_system(T=10.0, gamma=0.1):
    return HybridSystem(
        2,
        flow_margin=lambda x: min(x[0], T - x[0]),
        flow=lambda x: np.array([1.0, -gamma * x[1]]),
        jump_margin=lambda x: x[0] - T,
        jump=lambda x: np.array([0.0, 0.5 * x[1]]),
    )


def decay_system():
    return HybridSystem(1, lambda x: math.inf, lambda x: -x, never, lambda x: x)


@pytest.fixture(scope="module")
def reset_arc():
    return simulate(reset_system(), [0.0, 10.0], SolverConfig(h=0.01, T_max=55.0)).arc


# ---------------------------------------------------------------- periodic reset oracle

def test_first_jump_pre_and_post_values(reset_arc):
    pre, post = reset_arc.jumps()[0]
    assert reset_arc.jump_times()[0] == pytest.approx(10.0, abs=1e-9)
    assert pre == pytest.approx([10.0, 10.0 * math.exp(-1.0)], abs=1e-6)
    assert post == pytest.approx([0.0, 5.0 * math.exp(-1.0)], abs=1e-6)
    assert post[1] == pytest.approx(1.8394, abs=1e-4)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_post_jump_values_follow_decay_and_halving(reset_arc, k):
    # flow multiplies x2 by e^{-1} over each period, the jump halves it
    expected = 10.0 * math.exp(-k) * 2.0 ** (-k)
    assert reset_arc.jump_times()[k - 1] == pytest.approx(10.0 * k, abs=1e-10)
    assert reset_arc.jumps()[k - 1][1][1] == pytest.approx(expected, abs=1e-4)


def test_sample_at_midpoint_matches_closed_form(reset_arc):
    x = sample_at(reset_arc, 5.0, 0)
    assert x == pytest.approx([5.0, 10.0 * math.exp(-0.5)], abs=1e-4)


def test_sample_at_stored_sample_is_identity(reset_arc):
    t = reset_arc.times[1][7]
    assert np.array_equal(sample_at(reset_arc, t, 1), reset_arc.states[1][7])


def test_sample_at_constant_interval():
    arc = arc_from_blocks([[0.0, 1.0, 2.0]], [[[3.0], [3.0], [3.0]]])
    assert sample_at(arc, 1.5, 0)[0] == 3.0


def test_sample_at_out_of_domain(reset_arc):
    with pytest.raises(OutOfDomain):
        sample_at(reset_arc, 15.0, 0)
    with pytest.raises(OutOfDomain):
        sample_at(reset_arc, 1.0, 99)


# ---------------------------------------------------------------- termination and contracts

def test_no_dynamics_outside_both_sets():
    with pytest.raises(NoDynamicsFromPoint):
        simulate(reset_system(), [-1.0, 1.0], SolverConfig(h=0.01, T_max=1.0))


def test_dimension_mismatch_is_contract_violation():
    with pytest.raises(ContractViolation):
        simulate(reset_system(), [0.0], SolverConfig())


def test_solver_config_contracts():
    with pytest.raises(ContractViolation):
        SolverConfig(h=0.0)
    with pytest.raises(ContractViolation):
        SolverConfig(h=1e-3, tol_event=1e-2)
    with pytest.raises(ContractViolation):
        SolverConfig(J_max=-1)


def test_flow_set_exit_terminates_at_boundary():
    sys_ = HybridSystem(1, lambda x: 1.0 - x[0], lambda x: np.array([1.0]), never, lambda x: x)
    sol = simulate(sys_, [0.0], SolverConfig(h=0.1, T_max=5.0))
    assert sol.termination == Termination.FLOW_SET_EXIT
    assert sol.arc.final_state()[0] == pytest.approx(1.0, abs=1e-8)


def test_horizon_jumps_counts_exactly_j_max():
    sol = simulate(reset_system(T=1.0), [0.0, 1.0], SolverConfig(h=0.01, T_max=100.0, J_max=4))
    assert sol.termination == Termination.HORIZON_JUMPS
    assert sol.arc.n_jumps == 4


def test_horizon_time_reaches_t_max():
    sol = simulate(decay_system(), [1.0], SolverConfig(h=0.03, T_max=1.0))
    assert sol.termination == Termination.HORIZON_TIME
    assert sol.arc.total_flow_time() >= 1.0 - 0.03


def test_jump_first_versus_flow_first_at_overlap():
    # the state starts in C and D; jump-first resets, flow-first keeps flowing until C ends
    sys_ = HybridSystem(1, lambda x: 2.0 - x[0], lambda x: np.array([1.0]),
                        lambda x: x[0] - 1.0, lambda x: np.array([0.0]))
    jf = simulate(sys_, [1.5], SolverConfig(h=0.01, T_max=0.1, J_max=1))
    ff = simulate(sys_, [1.5], SolverConfig(h=0.01, T_max=0.1, J_max=1,
                                           jump_policy=JumpPolicy.FLOW_FIRST))
    assert jf.arc.n_jumps == 1 and jf.arc.jump_times()[0] == 0.0
    assert ff.arc.n_jumps == 0
    assert ff.arc.final_state()[0] == pytest.approx(1.6)


def test_averaged_ball_first_impact():
    built = build_scenario("bouncing_average")
    arc = simulate(built.system, built.x0, built.config.replace(T_max=2.0)).arc
    assert arc.jump_times()[0] == pytest.approx(math.sqrt(2.0), abs=1e-8)
    assert arc.jumps()[0][1][1] == pytest.approx(0.8 * 10.0 * math.sqrt(2.0), abs=1e-6)
    assert arc.jumps()[0][1][1] == pytest.approx(11.3137, abs=1e-4)


def test_zeno_accumulation_warns_and_stops_at_jump_budget():
    built = build_scenario("bouncing_average")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sol = simulate(built.system, built.x0, built.config.replace(T_max=100.0, J_max=200))
    assert sol.termination == Termination.HORIZON_JUMPS
    assert any(issubclass(w.category, ZenoWarning) for w in caught)


def test_simulate_is_deterministic():
    built = build_scenario("source_surveillance", {"horizon": 2.0})
    a = simulate(built.system, built.x0, built.config).arc
    b = simulate(built.system, built.x0, built.config).arc
    assert all(np.array_equal(x, y) for x, y in zip(a.states, b.states))


def test_rk4_order_on_smooth_flow():
    errs = []
    for h in (0.1, 0.05, 0.025):
        x = simulate(decay_system(), [1.0], SolverConfig(h=h, T_max=2.0)).arc.final_state()[0]
        errs.append(abs(x - math.exp(-2.0)))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 3.5


def test_halving_step_shrinks_terminal_change_sixteenfold():
    def terminal(h):
        return simulate(reset_system(), [0.0, 10.0], SolverConfig(h=h, T_max=9.0)).arc.final_state()
    exact = np.array([9.0, 10.0 * math.exp(-0.9)])
    e1 = np.linalg.norm(terminal(0.1) - exact)
    e2 = np.linalg.norm(terminal(0.05) - exact)
    assert e2 <= e1 / 12.0


# ---------------------------------------------------------------- domain invariants

@settings(max_examples=40, deadline=None)
@given(T=st.floats(0.3, 3.0), gamma=st.floats(0.0, 2.0), x2=st.floats(-5.0, 5.0),
       horizon=st.floats(0.5, 8.0))
def test_solution_domains_are_hybrid_time_domains(T, gamma, x2, horizon):
    arc = simulate(reset_system(T, gamma), [0.0, x2], SolverConfig(h=0.02, T_max=horizon)).arc
    intervals = arc.domain.intervals
    assert intervals[0][0] == 0.0 and intervals[0][2] == 0
    for (s0, e0, j0), (s1, e1, j1) in zip(intervals, intervals[1:]):
        assert s1 == e0 and j1 == j0 + 1
    for t, (s, e, _) in zip(arc.times, intervals):
        assert t[0] == s and t[-1] == e and np.all(np.diff(t) >= 0)
    # every jump happens on D and maps through G
    for pre, post in arc.jumps():
        assert pre[0] >= T - 1e-8
        assert post == pytest.approx([0.0, 0.5 * pre[1]])


def test_arc_contracts():
    with pytest.raises(ContractViolation):
        HybridArc((np.array([0.0, 1.0]),), (np.zeros((3, 1)),))
    with pytest.raises(ContractViolation):
        arc_from_blocks([[1.0, 0.0]], [[[0.0], [0.0]]])


# ---------------------------------------------------------------- inflation

def test_zero_inflation_reproduces_nominal(reset_arc):
    infl = simulate(inflate(reset_system(), 0.0, lambda x: 1.0), [0.0, 10.0],
                    SolverConfig(h=0.01, T_max=55.0)).arc
    assert all(np.array_equal(a, b) for a, b in zip(infl.states, reset_arc.states))


def test_inflated_flow_stays_within_disturbance_bound(rng):
    sys_ = inflate(decay_system(), 0.1, lambda x: 1.0)
    for x in rng.uniform(-5, 5, size=(300, 1)):
        assert abs(sys_.flow(x)[0] + x[0]) <= 0.1 + 1e-12


def test_inflated_margins_dominate_nominal(rng):
    base = reset_system()
    for rho in (0.01, 0.3):
        infl = inflate(base, rho, lambda x: 1.0 + abs(x[1]))
        for x in rng.uniform(-20, 20, size=(200, 2)):
            assert infl.flow_margin(x) >= base.flow_margin(x)
            assert infl.jump_margin(x) >= base.jump_margin(x)


def test_small_inflation_keeps_periodic_reset_close():
    cfg = SolverConfig(h=0.01, T_max=33.0)
    nominal = simulate(reset_system(), [0.0, 10.0], cfg).arc
    infl = simulate(inflate(reset_system(), 0.05, lambda x: 1.0), [0.0, 10.0], cfg).arc
    shift = np.abs(infl.jump_times()[:3] - nominal.jump_times()[:3])
    assert np.max(shift) <= 0.6
    grid = [0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0]
    assert min_epsilon(nominal, infl, 33.0, grid).min_eps <= 0.7


def test_negative_inflation_rejected():
    with pytest.raises(ContractViolation):
        inflate(reset_system(), -0.1, lambda x: 1.0)


# ---------------------------------------------------------------- empirical averaging

def test_average_of_dithered_gradient_estimate():
    eps_a = 0.01

    def f(x, tau):
        return -(2.0 / eps_a) * (x + eps_a * math.sin(tau)) ** 2 * math.sin(tau)

    assert empirical_average(f, 2 * math.pi, 1.0, 256)[0] == pytest.approx(-2.0, abs=10 * eps_a)


def test_average_of_constant_integrand_is_exact():
    val = empirical_average(lambda x, tau: np.array([3.25, -1.0]), 0.7, None, 8)
    assert np.array_equal(val, [3.25, -1.0])


def test_average_of_squared_sine_acceleration():
    val = empirical_average(lambda x, tau: 2 * 10.0 * math.sin(tau) ** 2, 2 * math.pi, None, 64)
    assert val[0] == pytest.approx(10.0, abs=1e-9)


def test_average_contracts():
    with pytest.raises(ContractViolation):
        empirical_average(lambda x, t: 0.0, 0.0, 0.0)
    with pytest.raises(ContractViolation):
        empirical_average(lambda x, t: 0.0, 1.0, 0.0, quad_points=4)
