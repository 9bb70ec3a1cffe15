import math

import numpy as np
import pytest

from hybridseek import _kernel
from hybridseek.hybrid_core import Termination
from hybridseek.scenarios import (
    ORIGINS,
    PUBLISHED,
    InvalidOverride,
    NoCounterpart,
    UnknownScenario,
    build_scenario,
    get_spec,
    list_scenarios,
    reference_arc,
    scenario_names,
)
from hybridseek.scenarios.constrained import rotated_box

from conftest import run_scenario

ALL = scenario_names()

# defaults that come straight from printed values
PUBLISHED_DEFAULTS = {
    "periodic_reset": {"period": 10.0, "decay": 0.1},
    "bouncing_seeker": {"gravity": 10.0, "frequency": 100.0},
    "source_surveillance": {"timer_rate": 0.01, "N0": 1.0, "frequency": 1000.0,
                            "dither_amplitude": 0.01},
    "rps_nash": {"dither_amplitude": 0.01, "gain": 0.005, "filter_rate": 10.0},
    "projected_tracking": {"dither_amplitude": 0.01, "frequency": [100.0, 150.0],
                           "filter_gain": 1.0, "gain": 0.2, "drift_frequency": 0.001},
    "unknown_constraints": {"constraint_normal": [-1.0, -2.0], "constraint_offset": 2.0,
                            "dither_amplitude": 0.01, "frequency": [100.0, 250.0],
                            "filter_gain": 1.0, "gain": 0.1},
    "distributed_sign": {"dither_amplitude": 0.8, "gain": 0.05, "filter_gain": 0.1,
                         "frequency_scale": 500.0},
    "attack_gradient": {"frequency": [810.0, 420.0], "dither_amplitude": 0.1, "filter_eps": 1.0},
    "momentum_reset": {"rho": 0.5},
}


def test_registry_has_sixteen_entries():
    assert len(ALL) == 16
    assert "periodic_reset" in ALL
    assert [s["name"] for s in list_scenarios()] == ALL


def test_every_default_carries_an_origin():
    for name in ALL:
        for key, param in get_spec(name).params.items():
            assert param.origin in ORIGINS, (name, key)


@pytest.mark.parametrize("name", sorted(PUBLISHED_DEFAULTS))
def test_published_defaults(name):
    params = get_spec(name).params
    for key, value in PUBLISHED_DEFAULTS[name].items():
        assert params[key].origin == PUBLISHED, (name, key)
        assert np.allclose(params[key].default, value), (name, key)


def test_rps_frequencies_published():
    assert np.allclose(get_spec("rps_nash").params["frequency"].default, [18.5e4, 20e4, 25.3e4])


def test_distributed_frequency_ratios_published():
    assert np.allclose(get_spec("distributed_sign").params["frequency_ratios"].default,
                       [5 / 6, 3 / 8, 2 / 3, 4 / 5, 7 / 10])


def test_unknown_name_and_bad_override():
    with pytest.raises(UnknownScenario):
        build_scenario("nope")
    with pytest.raises(InvalidOverride):
        build_scenario("periodic_reset", {"not_a_param": 1})
    with pytest.raises(InvalidOverride):
        build_scenario("periodic_reset", {"period": "ten"})
    with pytest.raises(InvalidOverride):
        build_scenario("momentum_reset", {"variant": "other"})


def test_metadata_echoes_resolved_params():
    built = build_scenario("periodic_reset", {"period": 4.0})
    assert built.metadata["params"]["period"] == 4.0
    assert built.metadata["params"]["decay"] == 0.1
    assert built.metadata["origins"]["period"] == PUBLISHED


@pytest.mark.parametrize("name", ALL)
def test_builds_with_defaults(name):
    built = build_scenario(name)
    assert built.system.dim == len(built.x0)
    assert built.metadata["state_names"] == list(built.system.state_names())


@pytest.mark.filterwarnings("ignore::hybridseek.hybrid_core.ZenoWarning")
@pytest.mark.parametrize("name", ALL)
def test_recommended_horizon_runs_clean(name):
    built, sol, metrics = run_scenario(name)
    assert sol.termination in (Termination.HORIZON_TIME, Termination.HORIZON_JUMPS)
    assert all(np.all(np.isfinite(x)) for x in sol.arc.states)
    assert not metrics.get("diverged", False)


def test_periodic_reset_three_jumps_in_thirty_seconds():
    built, sol, _ = run_scenario("periodic_reset")
    assert built.system.dim == 2
    assert sol.arc.n_jumps == 3
    assert sol.arc.jump_times() == pytest.approx([10.0, 20.0, 30.0], abs=1e-9)


def test_rps_dimension_and_simplex():
    built, sol, metrics = run_scenario("rps_nash")
    assert built.system.dim == 3 + 3 + 6
    u = sol.arc.flat()[2][:, :3]
    assert np.min(u) >= -1e-6
    assert np.max(np.abs(u.sum(axis=1) - 1.0)) <= 1e-6
    assert np.linalg.norm(u[-1] - 1 / 3) <= 0.05


@pytest.mark.filterwarnings("ignore::hybridseek.hybrid_core.ZenoWarning")
def test_bouncing_average_gaps_are_geometric():
    arc = reference_arc("bouncing_seeker")
    tj = arc.jump_times()
    gaps = np.diff(tj[:8])
    lam, g = 0.8, 10.0
    v_impact = math.sqrt(2 * g * 10.0)
    expected = [2 * lam ** (k + 1) * v_impact / g for k in range(len(gaps))]
    assert gaps == pytest.approx(expected, abs=1e-6)


def test_gradient_flow_reference_is_exponential():
    arc = reference_arc("growing_timer_es", {"initial_input": 2.0, "optimum": 0.0})
    t, _, x = arc.flat()
    assert np.max(np.abs(x[:, 0] - 2 * np.exp(-2 * t))) <= 1e-9


def test_no_counterpart():
    with pytest.raises(NoCounterpart):
        reference_arc("periodic_reset")


KERNELED = [n for n in ALL if build_scenario(n).system.kernel is not None]


@pytest.mark.filterwarnings("ignore::hybridseek.hybrid_core.ZenoWarning")
@pytest.mark.parametrize("name", KERNELED)
def test_compiled_and_python_data_agree(name):
    built, sol, _ = run_scenario(name)
    flow, c_margin, d_margin = _kernel.python_view(built.system.kernel)
    states = sol.arc.flat()[2]
    pick = np.linspace(0, len(states) - 1, min(len(states), 200)).astype(int)
    for x in states[pick]:
        x = np.array(x)
        f_py = built.system.flow(x)
        assert np.allclose(flow(x), f_py, rtol=1e-9, atol=1e-9 * (1 + np.max(np.abs(f_py))))
        for mine, theirs in ((c_margin(x), built.system.flow_margin(x)),
                             (d_margin(x), built.system.jump_margin(x))):
            if math.isinf(theirs) or math.isinf(mine):
                assert (theirs >= 0) == (mine >= 0)
            else:
                assert mine == pytest.approx(theirs, abs=1e-9)


def test_projected_tracking_stays_in_box():
    built, sol, metrics = run_scenario("projected_tracking")
    box = rotated_box(built.metadata["half_width"])
    u = sol.arc.flat()[2][:, :2]
    slack = (box.b - u @ box.A.T) / np.linalg.norm(box.A, axis=1)
    assert np.min(slack) >= -1e-6
    assert metrics["min_set_margin"] >= -1e-6


def test_distributed_reaches_consensus():
    _, sol, metrics = run_scenario("distributed_sign")
    assert metrics["all_finite"]
    assert metrics["consensus_time"] is not None
    # spread below 1 is reached before anything blows up
    t, _, x = sol.arc.flat()
    u = x[:, :25].reshape(-1, 5, 5)
    spread = np.max(np.linalg.norm(u[:, :, None, :] - u[:, None, :, :], axis=-1), axis=(1, 2))
    first = np.argmax(spread < 1.0)
    assert spread[first] < 1.0
    assert np.all(np.isfinite(x[: first + 1]))


def test_distributed_graph_switches_every_tenth_second():
    _, sol, _ = run_scenario("distributed_sign")
    gaps = np.diff(sol.arc.jump_times())
    assert gaps == pytest.approx(np.full_like(gaps, 0.1), abs=1e-8)


def test_momentum_resets_at_timer_end_and_zero_momentum():
    built, sol, _ = run_scenario("momentum_reset", alpha=1.0)
    T = built.metadata["params"]["T"]
    names = built.system.state_names()
    i_tau, i_xi = names.index("tau"), [names.index("xi0"), names.index("xi1")]
    assert sol.arc.n_jumps >= 3
    for pre, post in sol.arc.jumps():
        assert pre[i_tau] == pytest.approx(T, abs=1e-9)
        assert np.linalg.norm(post[i_xi]) == 0.0


def test_attack_budget_dichotomy():
    _, _, low = run_scenario("attack_gradient", eta2=0.05)
    _, _, high = run_scenario("attack_gradient", eta2=0.45)
    assert not low["diverged"] and low["terminal_error"] < 0.1
    assert high["diverged"]
