import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridseek.hybrid_core import (
    ContractViolation,
    Fragment,
    HybridArc,
    SolverConfig,
    Termination,
    arc_from_blocks,
    simulate,
)
from hybridseek.set_valued import Box, Selector
from hybridseek.supervisors import (
    ActivationParams,
    DwellParams,
    SeparationViolated,
    ThresholdOrderViolation,
    activation_monitor,
    activation_verify,
    adt_verify,
    dwell_time_automaton,
    hysteresis_sets,
    margin_check,
    obstacle_partition,
    periodic_reset_timer,
    rotating_drift,
    slow_drift,
)

from conftest import run_scenario


def run_fragment(frag, x0, T, h=0.01, J_max=10_000, ext=None):
    return simulate(frag.as_system(ext), x0, SolverConfig(h=h, T_max=T, J_max=J_max))


# ---------------------------------------------------------------- dwell time

def test_max_rate_dwell_jumps_spaced_by_inverse_rate():
    eta1 = 2.0
    arc = run_fragment(dwell_time_automaton(DwellParams(1.0, eta1), Selector.max_rate()), [0.0], 3.2).arc
    tj = arc.jump_times()
    assert len(tj) == 6
    assert np.diff(tj) == pytest.approx(np.full(5, 1 / eta1), abs=1e-9)
    assert tj[0] == pytest.approx(0.5, abs=1e-9)


def test_min_rate_dwell_never_jumps():
    sol = run_fragment(dwell_time_automaton(DwellParams(1.0, 2.0), Selector.min_rate()), [0.0], 5.0)
    assert sol.arc.n_jumps == 0 and sol.termination == Termination.HORIZON_TIME


@pytest.mark.filterwarnings("ignore::hybridseek.hybrid_core.ZenoWarning")
def test_full_dwell_budget_spends_two_jumps_immediately():
    arc = run_fragment(dwell_time_automaton(DwellParams(2.0, 1.0), Selector.max_rate()), [2.0], 1.5).arc
    assert list(arc.jump_times()[:2]) == [0.0, 0.0]
    assert arc.states[2][0, 0] == 0.0
    assert arc.jump_times()[2] == pytest.approx(1.0, abs=1e-9)


def test_adt_verify_examples():
    flow_only = arc_from_blocks([[0.0, 5.0]], [[[0.0], [0.0]]])
    assert adt_verify(flow_only, DwellParams(1.0, 0.01))
    burst = arc_from_blocks([[0.0, 0.0]] * 3 + [[0.0, 1.0]], [[[0.0], [0.0]]] * 4)
    assert burst.n_jumps == 3
    assert not adt_verify(burst, DwellParams(1.0, 1.0))
    assert adt_verify(burst, DwellParams(3.0, 1.0))
    assert not adt_verify([0.0, 0.1, 0.2], DwellParams(1.0, 1.0))


@pytest.mark.filterwarnings("ignore::hybridseek.hybrid_core.ZenoWarning")
@settings(max_examples=1000, deadline=None)
@given(N0=st.floats(1.0, 3.0), eta1=st.floats(0.2, 5.0), seed=st.integers(0, 10_000),
       start=st.floats(0.0, 1.0), kind=st.sampled_from(["uniform", "max", "const"]))
def test_dwell_automaton_domains_satisfy_their_bound(N0, eta1, seed, start, kind):
    sel = {"uniform": Selector.seeded_uniform(seed), "max": Selector.max_rate(),
           "const": Selector.constant(eta1 * (seed % 97) / 97.0)}[kind]
    tau0 = start * N0
    arc = run_fragment(dwell_time_automaton(DwellParams(N0, eta1), sel), [tau0], 4.0, h=0.05).arc
    assert adt_verify(arc, DwellParams(N0, eta1))


def test_dwell_params_contract():
    with pytest.raises(ContractViolation):
        DwellParams(0.5, 1.0)
    with pytest.raises(ContractViolation):
        ActivationParams(1.0, 1.0)


# ---------------------------------------------------------------- activation time

def test_monitor_saturates_when_always_stable():
    mon = activation_monitor(ActivationParams(2.0, 0.5, {1}))
    sol = run_fragment(mon, [0.0], 10.0, ext=0)
    assert sol.termination == Termination.HORIZON_TIME
    assert sol.arc.final_state()[0] == pytest.approx(2.0, abs=1e-9)


def test_monitor_drains_at_complementary_rate():
    T0, eta2 = 1.0, 0.3
    sol = run_fragment(activation_monitor(ActivationParams(T0, eta2, {1})), [T0], 5.0, h=1e-3, ext=1)
    assert sol.termination == Termination.FLOW_SET_EXIT
    assert sol.arc.times[-1][-1] == pytest.approx(T0 / (1 - eta2), abs=1e-6)


def test_activation_verify_examples():
    p = ActivationParams(1.0, 0.0, {2})
    assert activation_verify(([0.0, 5.0, 10.0], [1, 1]), p)
    assert not activation_verify(([0.0, 2.0, 3.0], [2, 1]), p)
    eta2 = 0.4
    p2 = ActivationParams(0.5, eta2, {2})
    # unstable for eta2/2 of every unit period
    t = np.sort(np.concatenate([np.arange(0, 40.0), np.arange(0, 40.0) + eta2 / 2, [40.0]]))
    modes = [2, 1] * 40
    assert activation_verify((t, modes), p2)


def test_activation_verify_reads_mode_arc():
    arc = arc_from_blocks([[0.0, 1.0], [1.0, 4.0]], [[[2.0], [2.0]], [[1.0], [1.0]]])
    assert activation_verify(arc, ActivationParams(1.0, 0.0, {2}))
    assert not activation_verify(arc, ActivationParams(0.5, 0.0, {2}))


def mode_switcher(dwell, seed):
    """Mode q in {1, 2, 3} held for `dwell` seconds, then replaced by a seeded pick."""
    sel = Selector.seeded_uniform(seed)

    def jump(x, ext=None):
        return np.array([1.0 + math.floor(sel.pick_scalar(0.0, 2.999, x)), 0.0])

    return Fragment(2, lambda x, ext=None: np.array([0.0, 1.0]), lambda x, ext=None: dwell - x[1],
                    jump, lambda x, ext=None: x[1] - dwell, ("q", "s"))


@settings(max_examples=150, deadline=None)
@given(T0=st.floats(0.2, 2.0), eta2=st.floats(0.0, 0.9), dwell=st.floats(0.1, 1.0),
       seed=st.integers(0, 1000), rate_seed=st.integers(0, 1000))
def test_surviving_mode_traces_satisfy_activation_bound(T0, eta2, dwell, seed, rate_seed):
    p = ActivationParams(T0, eta2, {2, 3})
    mon = activation_monitor(p, mode_switcher(dwell, seed), Selector.seeded_uniform(rate_seed))
    arc = run_fragment(mon, [T0, 1.0, 0.0], 8.0, h=0.02).arc
    times, modes = [], []
    for ts, xs in zip(arc.times, arc.states):
        if ts[-1] > ts[0]:
            times.append(ts[0])
            modes.append(int(round(xs[0, 1])))
    times.append(arc.times[-1][-1])
    assert activation_verify((np.array(times), modes), p, tol=1e-6)


# ---------------------------------------------------------------- periodic timer

def test_periodic_timer_jumps_every_period():
    arc = run_fragment(periodic_reset_timer(10.0), [0.0], 35.0).arc
    assert arc.jump_times() == pytest.approx([10.0, 20.0, 30.0], abs=1e-9)


def test_periodic_timer_at_period_jumps_immediately():
    arc = run_fragment(periodic_reset_timer(2.0), [2.0], 5.0).arc
    assert arc.jump_times()[0] == 0.0
    assert np.diff(arc.jump_times()) == pytest.approx([2.0, 2.0], abs=1e-9)


def test_periodic_timer_contract():
    with pytest.raises(ContractViolation):
        periodic_reset_timer(0.0)


# ---------------------------------------------------------------- hysteresis

@pytest.fixture
def hyst():
    return hysteresis_sets(lambda u: float(np.dot(u, u)), 0.0, 1.0, 0.5)


def test_hysteresis_band(hyst):
    u = np.array([math.sqrt(0.75), 0.0])
    assert hyst.C0(u) >= 0 and hyst.C1(u) >= 0
    assert hyst.D0(u) < 0 and hyst.D1(u) < 0


def test_hysteresis_at_optimum_forces_mode_one_out(hyst):
    u = np.zeros(2)
    assert hyst.C0(u) >= 0 and hyst.D1(u) >= 0 and hyst.C1(u) < 0


def test_hysteresis_far_away_forces_mode_zero_out(hyst):
    u = np.array([math.sqrt(2.0), 0.0])
    assert hyst.C1(u) >= 0 and hyst.D0(u) >= 0 and hyst.C0(u) < 0


def test_hysteresis_threshold_order():
    with pytest.raises(ThresholdOrderViolation):
        hysteresis_sets(lambda u: 0.0, 0.0, 0.5, 1.0)
    with pytest.raises(ThresholdOrderViolation):
        hysteresis_sets(lambda u: 0.0, 0.0, 1.0, 0.0)


def test_uniting_mode_switches_are_separated_by_flow():
    _, sol, _ = run_scenario("newton_gradient_switch")
    arc = sol.arc
    assert arc.n_jumps >= 1
    # each interval between consecutive switches has positive duration
    for ts in arc.times[1:-1]:
        assert ts[-1] - ts[0] > 0


# ---------------------------------------------------------------- margin inequality

def test_margin_check_examples():
    assert margin_check(1.0, 1.0, 1.0, 50.0, 0.0)
    assert margin_check(1.0, 1.0, math.e, 0.2, 0.3)
    assert not margin_check(1.0, 1.0, math.e, 0.2, 0.6)
    with pytest.raises(ContractViolation):
        margin_check(1.0, 1.0, 0.5, 0.1, 0.1)


@settings(max_examples=300)
@given(ls=st.floats(0.01, 10), lu=st.floats(0.01, 10), chi=st.floats(1.0, 20.0),
       e1=st.floats(0, 5), e2=st.floats(0, 0.99), s1=st.floats(0, 1), s2=st.floats(0, 1))
def test_margin_check_monotone_in_rates(ls, lu, chi, e1, e2, s1, s2):
    if margin_check(ls, lu, chi, e1, e2):
        assert margin_check(ls, lu, chi, s1 * e1, s2 * e2)


# ---------------------------------------------------------------- drift

def test_zero_drift_is_constant():
    arc = run_fragment(slow_drift(0.0, dim=2), [0.3, -0.2], 3.0).arc
    assert np.array_equal(arc.final_state(), [0.3, -0.2])


@settings(max_examples=20, deadline=None)
@given(eta3=st.floats(0.01, 2.0), seed=st.integers(0, 1000))
def test_drift_speed_bounded(eta3, seed):
    frag = slow_drift(eta3, Box([-100, -100], [100, 100]), Selector.seeded_uniform(seed))
    _, _, x = run_fragment(frag, [0.0, 0.0], 2.0, h=0.05).arc.flat()
    assert np.all(np.linalg.norm(np.diff(x, axis=0), axis=1) <= eta3 * 0.05 + 1e-12)


def test_rotating_drift_traces_circle():
    freq = 0.001
    center = np.array([0.0, 0.0])
    frag = rotating_drift(center, 1.5, freq)
    T = 500.0
    arc = run_fragment(frag, [1.5, 0.0], T, h=1.0).arc
    expected = 1.5 * np.array([math.cos(freq * T), math.sin(freq * T)])
    assert arc.final_state() == pytest.approx(expected, abs=1e-9)


def test_drift_velocity_contract():
    frag = slow_drift(0.1, None, Selector.max_rate(), 2, lambda q: np.array([1.0, 0.0]))
    with pytest.raises(ContractViolation):
        frag.flow(np.zeros(2))
    with pytest.raises(ContractViolation):
        slow_drift(-1.0)


# ---------------------------------------------------------------- obstacle

@pytest.fixture
def part():
    source = np.array([4.0, 0.0])
    return obstacle_partition([0.0, 0.0], 0.5, 1.5, 0.25,
                              lambda u: -0.25 * float(np.sum((np.asarray(u) - source) ** 2)),
                              u_star=source)


def test_point_far_below_is_in_first_region_only(part):
    u = np.array([0.0, -10.0])
    assert part.L_margin(u, 1) > 0 and part.L_margin(u, 2) < 0
    assert math.isinf(part.barrier(u, 2)) and math.isfinite(part.barrier(u, 1))


def test_obstacle_center_is_in_diamond_only(part):
    u = np.zeros(2)
    assert part.diamond_margin(u) == pytest.approx(2 * 0.5 * math.sqrt(2))
    assert part.L_margin(u, 1) < 0 and part.L_margin(u, 2) < 0


def test_dominated_mode_must_switch(part):
    found = 0
    for x in np.linspace(-6, 6, 49):
        for y in np.linspace(-6, 6, 49):
            u = np.array([x, y])
            for q in (1, 2):
                a, b = part.Jhat(u, q), part.Jhat(u, 3 - q)
                if math.isfinite(a) and math.isfinite(b) and a > part.chi * b:
                    found += 1
                    assert part.jump_margin(u, q) >= 0
                    assert part.flow_margin(u, q) < 0
    assert found > 0


def test_region_distance_matches_brute_force(part, rng):
    # the complement of L1 is the quadrant {la1 <= 0, lb1 <= 0}; sample its boundary densely
    c = 2 * 0.5 * math.sqrt(2)
    s = np.linspace(0, 40, 200_001)
    # boundary rays from the apex (0, -c): along la1 = 0 and lb1 = 0
    apex = np.array([0.0, -c])
    rays = np.concatenate([apex + s[:, None] * np.array([-1, 1]) / math.sqrt(2),
                           apex + s[:, None] * np.array([1, 1]) / math.sqrt(2)])
    for u in rng.uniform(-6, 6, size=(30, 2)):
        if part.L_margin(u, 1) <= 0:
            assert part.region_distance(u, 1) == 0.0
            continue
        brute = np.min(np.linalg.norm(rays - u, axis=1))
        assert part.region_distance(u, 1) == pytest.approx(brute, abs=2e-4)


def test_separation_violations():
    J = lambda u: 0.0
    with pytest.raises(SeparationViolated):
        obstacle_partition([0, 0], 0.5, 1.5, 0.25, J, u_star=[0.5, 0.0])
    with pytest.raises(SeparationViolated):
        obstacle_partition([0, 0], 0.5, 1.5, 0.25, J, u_star=[0.0, 4.0])
    with pytest.raises(ContractViolation):
        obstacle_partition([0, 0], 0.5, 1.5, 0.6, J)
