"""Timers, bouncing dynamics, source seeking and the growing-timer seeking loop."""

from __future__ import annotations

import math

import numpy as np

from .. import _kernel
from ..es_toolkit import DitherParams, LoopConfig, assemble_loop, gradient_decision
from ..hybrid_core import FlowKernel, HybridSystem, SolverConfig, never, simulate
from ..set_valued import Selector
from ..supervisors import dwell_time_automaton, DwellParams
from . import CHOSEN, PUBLISHED, STRUCTURAL, Counterpart, Param, ScenarioSpec, register


# ---------------------------------------------------------------- periodic reset

def _periodic_reset(p):
    T, gamma = p["period"], p["decay"]

    def flow(x):
        return np.array([1.0, -gamma * x[1]])

    def jump(x):
        return np.array([0.0, 0.5 * x[1]])

    system = HybridSystem(
        2,
        flow_margin=lambda x: min(x[0], T - x[0]),
        flow=flow,
        jump_margin=lambda x: x[0] - T,
        jump=jump,
        names=("timer", "x2"),
    )
    config = SolverConfig(h=0.01, T_max=p["horizon"], J_max=1000)
    return system, p["initial_state"], config, {}


register(ScenarioSpec(
    name="periodic_reset",
    description="Timer x1 resets every period while x2 decays and is halved at each reset.",
    topic="timers",
    params={
        "period": Param(10.0, PUBLISHED),
        "decay": Param(0.1, PUBLISHED),
        "initial_state": Param((0.0, 10.0), PUBLISHED),
        "horizon": Param(30.0, CHOSEN),
    },
    builder=_periodic_reset,
))


# ---------------------------------------------------------------- bouncing seeker

@_kernel.flow_fn
def _ball_flow(x, out, p):
    s = math.sin(x[2])
    out[0] = x[1]
    out[1] = -2.0 * p[0] * s * s
    out[2] = p[1]


@_kernel.margin_fn
def _ball_c(x, p):
    return x[0]


@_kernel.margin_fn
def _ball_d(x, p):
    return min(-x[0], -x[1])


def _ball_step(p):
    if p["frequency"] >= 1000:
        return 2e-4
    return min(1e-3, 0.2 / p["frequency"])


def _bouncing_seeker(p):
    g, w, lam = p["gravity"], p["frequency"], p["restitution"]

    def flow(x):
        return np.array([x[1], -2.0 * g * math.sin(x[2]) ** 2, w])

    def jump(x):
        return np.array([0.0, -lam * x[1], x[2]])

    system = HybridSystem(
        3,
        flow_margin=lambda x: x[0],
        flow=flow,
        jump_margin=lambda x: min(-x[0], -x[1]),
        jump=jump,
        names=("height", "velocity", "phase"),
        kernel=FlowKernel(_ball_flow, _ball_c, _ball_d, _kernel.no_project, np.array([g, w, lam])),
    )
    x0 = (*p["initial_state"], 0.0)
    config = SolverConfig(h=_ball_step(p), T_max=p["horizon"], J_max=p["max_jumps"])
    return system, x0, config, {"compare_coords": [0, 1]}


def _bouncing_average(p):
    g, lam = p["gravity"], p["restitution"]
    system = HybridSystem(
        2,
        flow_margin=lambda x: x[0],
        flow=lambda x: np.array([x[1], -g]),
        jump_margin=lambda x: min(-x[0], -x[1]),
        jump=lambda x: np.array([0.0, -lam * x[1]]),
        names=("height", "velocity"),
    )
    config = SolverConfig(h=1e-3, T_max=p["horizon"], J_max=p["max_jumps"])
    return system, p["initial_state"], config, {}


def _ball_counterpart(p):
    system, x0, config, _ = _bouncing_average(p)
    arc = simulate(system, x0, config).arc
    return Counterpart(arc, (0, 1), (0, 1))


_BALL_PARAMS = {
    "gravity": Param(10.0, PUBLISHED, "nominal acceleration"),
    "restitution": Param(0.8, CHOSEN, "not stated numerically; fixed by the jump count pattern"),
    "initial_state": Param((10.0, 0.0), CHOSEN, "not stated numerically"),
    "horizon": Param(20.0, CHOSEN),
    "max_jumps": Param(60, CHOSEN, "bounds the Zeno accumulation"),
}

register(ScenarioSpec(
    name="bouncing_seeker",
    description="Ball bouncing under fast oscillating acceleration 2*gravity*sin(phase)^2.",
    topic="averaging",
    params={**_BALL_PARAMS, "frequency": Param(100.0, PUBLISHED, "dither frequency")},
    builder=_bouncing_seeker,
    counterpart=_ball_counterpart,
))

register(ScenarioSpec(
    name="bouncing_average",
    description="Averaged bouncing ball with constant acceleration; Zeno accumulation point.",
    topic="averaging",
    params=dict(_BALL_PARAMS),
    builder=_bouncing_average,
))


# ---------------------------------------------------------------- source seeking and surveillance

@_kernel.flow_fn
def _source_flow(x, out, p):
    # state: px, py, mode, timer, mu_c, mu_s; p: eps_a, omega, eta_d, N0, a0x, a0y, a1x, a1y
    eps_a, w = p[0], p[1]
    if x[2] < 0.5:
        cx, cy = p[4], p[5]
    else:
        cx, cy = p[6], p[7]
    J = -((x[0] - cx) ** 2 + (x[1] - cy) ** 2)
    m1, m2 = x[4], x[5]
    out[0] = eps_a * w * m2 + (2.0 / eps_a) * J * m1
    out[1] = -eps_a * w * m1 + (2.0 / eps_a) * J * m2
    out[2] = 0.0
    out[3] = p[2]
    out[4] = w * m2
    out[5] = -w * m1


@_kernel.margin_fn
def _source_c(x, p):
    band = 1e-6 - abs(x[4] * x[4] + x[5] * x[5] - 1.0)
    return min(x[3], p[3] - x[3], band)


@_kernel.margin_fn
def _source_d(x, p):
    return min(x[3] - 1.0, p[3] - x[3])


@_kernel.project_fn
def _source_project(x, p):
    r2 = x[4] * x[4] + x[5] * x[5]
    if abs(r2 - 1.0) > 1e-9:
        r = math.sqrt(r2)
        x[4] /= r
        x[5] /= r


def _source_surveillance(p):
    eps_a, w = p["dither_amplitude"], p["frequency"]
    sources = np.array([p["source_a"], p["source_b"]])
    timer = dwell_time_automaton(DwellParams(p["N0"], p["timer_rate"]), Selector.max_rate())
    R0 = np.array([[0.0, 1.0], [-1.0, 0.0]])

    def field(pos, q):
        return -float(np.sum((pos - sources[int(round(q))]) ** 2))

    def flow(x):
        out = np.empty(6)
        mu = x[4:6]
        out[0:2] = eps_a * w * (R0 @ mu) + (2.0 / eps_a) * field(x[0:2], x[2]) * mu
        out[2] = 0.0
        out[3] = timer.flow(x[3:4])[0]
        out[4:6] = w * (R0 @ mu)
        return out

    def c_margin(x):
        band = 1e-6 - abs(x[4] ** 2 + x[5] ** 2 - 1.0)
        return min(timer.flow_margin(x[3:4]), band)

    def jump(x):
        out = x.copy()
        out[2] = 1.0 - round(x[2])
        out[3] = timer.jump(x[3:4])[0]
        return out

    def project(x):
        r = math.hypot(x[4], x[5])
        if abs(r * r - 1.0) <= 1e-9:
            return x
        y = x.copy()
        y[4:6] /= r
        return y

    params = np.array([eps_a, w, p["timer_rate"], p["N0"], *sources[0], *sources[1]])
    kernel = FlowKernel(_source_flow, _source_c, _source_d, _source_project, params)
    system = HybridSystem(6, c_margin, flow, lambda x: timer.jump_margin(x[3:4]), jump, project,
                          ("px", "py", "mode", "timer", "mu_c", "mu_s"), kernel)
    x0 = (*p["initial_position"], 0.0, 0.0, 1.0, 0.0)
    config = SolverConfig(h=min(1e-4, 0.1 / w), T_max=p["horizon"], J_max=1000, record_every=100)
    return system, x0, config, {"sources": sources.tolist()}


register(ScenarioSpec(
    name="source_surveillance",
    description="Point-mass vehicle seeking the active one of two intermittent potential fields.",
    topic="switching",
    params={
        "timer_rate": Param(0.01, PUBLISHED, "maximal timer rate eta_d"),
        "N0": Param(1.0, PUBLISHED),
        "frequency": Param(1000.0, PUBLISHED),
        "dither_amplitude": Param(0.01, PUBLISHED),
        "source_a": Param((0.5, 0.5), CHOSEN, "fields are strongly concave quadratic bowls"),
        "source_b": Param((-0.5, -0.5), CHOSEN),
        "initial_position": Param((0.0, -0.5), CHOSEN),
        "horizon": Param(250.0, CHOSEN),
    },
    builder=_source_surveillance,
))


# ---------------------------------------------------------------- growing-timer seeking loop

@_kernel.flow_fn
def _timer_es_flow(x, out, p):
    # p: eps_a, kappa, eps_omega, gain, optimum
    s = math.sin(2.0 * math.pi * p[1] * x[1])
    u = x[0] + p[0] * s
    y = (u - p[4]) ** 2
    out[0] = -p[3] * y * (2.0 / p[0]) * s
    out[1] = 1.0 / p[2]


def _growing_timer_es(p):
    w, eps_a, opt = p["frequency"], p["dither_amplitude"], p["optimum"]
    dither = DitherParams(1, eps_a, 2.0 * math.pi / w, np.array([1.0]))
    system, layout = assemble_loop(
        gradient_decision(1, 1.0),
        lambda u: float((u[0] - opt) ** 2),
        dither,
        None,
        LoopConfig(filter_style="none"),
    )
    params = np.array([eps_a, 1.0, dither.eps_omega, 1.0, opt])
    system = system.with_kernel(FlowKernel(_timer_es_flow, _kernel.everywhere, _kernel.no_jump,
                                           _kernel.no_project, params))
    config = SolverConfig(h=min(1e-3, 0.3 / w), T_max=p["horizon"], J_max=0,
                          record_every=max(1, int(w // 1000)))
    return system, (p["initial_input"], 0.0), config, {
        "optimum": [opt], "decision_coords": [0], "compare_coords": [0]}


def _gradient_flow_counterpart(p):
    opt = p["optimum"]
    system = HybridSystem(1, lambda x: math.inf, lambda x: -2.0 * (x - opt), never, lambda x: x,
                          names=("u",))
    arc = simulate(system, [p["initial_input"]], SolverConfig(h=1e-3, T_max=p["horizon"])).arc
    return Counterpart(arc, (0,), (0,))


register(ScenarioSpec(
    name="growing_timer_es",
    description="Filter-free seeking loop with an unbounded timer driving the dither (J = (u - optimum)^2).",
    topic="averaging",
    params={
        "frequency": Param(1000.0, CHOSEN, "2*pi*kappa/eps_omega with kappa = 1"),
        "dither_amplitude": Param(0.1, CHOSEN),
        "optimum": Param(0.0, CHOSEN),
        "initial_input": Param(2.0, CHOSEN),
        "horizon": Param(3.0, CHOSEN),
    },
    builder=_growing_timer_es,
    counterpart=_gradient_flow_counterpart,
))
