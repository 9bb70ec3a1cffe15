"""Corrupted measurements, momentum with resets, and Newton/gradient uniting."""

from __future__ import annotations

import math

import numpy as np

from .. import _kernel
from ..es_toolkit import (
    DitherParams,
    FilterParams,
    LoopConfig,
    assemble_loop,
    initial_mu,
    newton_matrix,
)
from ..hybrid_core import FlowKernel, Fragment, HybridSystem, SolverConfig, never, simulate
from ..supervisors import ActivationParams, DwellParams, hysteresis_sets
from . import CHOSEN, PUBLISHED, STRUCTURAL, Counterpart, Param, ScenarioSpec, register
from ._logic import GreedySwitching, check_budget, logic_decision


# ---------------------------------------------------------------- corrupted-sign measurements

_ATTACK_Q = np.array([[1.0, 0.5], [0.5, 1.5]])
_ATTACK_B = np.array([0.1, 0.1])


def _attack_cost(u):
    return 0.01 * float(u @ _ATTACK_Q @ u) + float(_ATTACK_B @ u)


@_kernel.flow_fn
def _attack_flow(x, out, p):
    # x: u1 u2 q tau1 tau2 xi1 xi2 m1c m1s m2c m2s
    # p: eps_a w1 w2 kf/eps_f eta1 N0 eta2 T0 lambda_xi
    eps_a = p[0]
    u1 = x[0] + eps_a * x[7]
    u2 = x[1] + eps_a * x[9]
    J = 0.01 * (u1 * u1 + u1 * u2 + 1.5 * u2 * u2) + 0.1 * (u1 + u2)
    y = x[2] * J
    out[0] = -x[5]
    out[1] = -x[6]
    out[2] = 0.0
    out[3] = p[4] if x[3] < p[5] else 0.0
    r = p[6]
    if x[2] < 0.0:
        r -= 1.0
    if x[4] >= p[7] and r > 0.0:
        r = 0.0
    out[4] = r
    out[5] = -p[3] * (x[5] - (2.0 / eps_a) * y * x[7])
    out[6] = -p[3] * (x[6] - (2.0 / eps_a) * y * x[9])
    out[7] = p[1] * x[8]
    out[8] = -p[1] * x[7]
    out[9] = p[2] * x[10]
    out[10] = -p[2] * x[9]


@_kernel.margin_fn
def _attack_shared(x, p):
    m = p[8] - max(abs(x[5]), abs(x[6]))
    band = 1e-6 - max(abs(x[7] * x[7] + x[8] * x[8] - 1.0), abs(x[9] * x[9] + x[10] * x[10] - 1.0))
    return min(m, band)


@_kernel.margin_fn
def _attack_c(x, p):
    m = min(x[3], p[5] - x[3], x[4], p[7] - x[4])
    return min(m, _attack_shared(x, p))


@_kernel.margin_fn
def _attack_d(x, p):
    m = min(x[3] - 1.0, p[5] - x[3])
    if x[2] > 0.0:
        m = min(m, x[4] - p[7])
    else:
        m = min(m, -x[4])
    return min(m, _attack_shared(x, p))


@_kernel.project_fn
def _attack_project(x, p):
    x[3] = min(max(x[3], 0.0), p[5])
    x[4] = min(max(x[4], 0.0), p[7])
    _kernel.renormalize_pairs(x, p)


def _attack_gradient(p):
    dwell = DwellParams(p["N0"], p["eta1"])
    act = ActivationParams(p["T0"], p["eta2"], {-1})
    check_budget(dwell, act)
    logic = GreedySwitching(dwell, act, stable=(1,), unstable=(-1,))
    decision = logic_decision(2, logic, lambda x, sig: -sig.xi,
                               ("u_hat0", "u_hat1", "sign", "tau1", "tau2"))
    dither = DitherParams.from_omega(p["frequency"], p["dither_amplitude"])
    filt = FilterParams(1.0, p["filter_eps"], p["lambda_xi"])
    system, layout = assemble_loop(decision, lambda u, x_uz: x_uz[2] * _attack_cost(u), dither, filt,
                                   LoopConfig(plant_reads_state=True))
    params = np.array([dither.eps_a, *dither.omega, filt.k_f / filt.eps_f, dwell.eta1, dwell.N0,
                       act.eta2, act.T0, filt.lambda_xi, 7.0, 2.0])
    system = system.with_kernel(FlowKernel(_attack_flow, _attack_c, _attack_d, _attack_project, params))
    x0 = np.concatenate([p["initial_input"], [1.0, dwell.N0, act.T0], np.zeros(2), initial_mu(2)])
    u_star = -50.0 * np.linalg.solve(_ATTACK_Q, _ATTACK_B)
    config = SolverConfig(h=p["step"], T_max=p["horizon"], J_max=10000, record_every=20)
    return system, x0, config, {"optimum": u_star, "decision_coords": [0, 1], "mode_coord": 2}


def _attack_metrics(arc, meta):
    u0 = arc.states[0][0][:2]
    peak = max(float(np.max(np.linalg.norm(x[:, :2], axis=1))) for x in arc.states)
    return {"growth": peak / float(np.linalg.norm(u0))}


register(ScenarioSpec(
    name="attack_gradient",
    description="Gradient seeking whose measurements are sign-flipped by an adversary within an activation budget.",
    topic="switching",
    params={
        "frequency": Param((810.0, 420.0), PUBLISHED),
        "dither_amplitude": Param(0.1, PUBLISHED),
        "filter_eps": Param(1.0, PUBLISHED),
        "eta2": Param(0.05, CHOSEN, "sweep to see the stable/unstable dichotomy"),
        "T0": Param(60.0, CHOSEN, "activation budget, spent at once by the adversary"),
        "N0": Param(1.0, CHOSEN),
        "eta1": Param(1.0, CHOSEN),
        "lambda_xi": Param(1e6, CHOSEN),
        "initial_input": Param((-3.0, -1.0), CHOSEN),
        "step": Param(5e-4, CHOSEN),
        "horizon": Param(500.0, CHOSEN),
    },
    builder=_attack_gradient,
    metrics=_attack_metrics,
))


# ---------------------------------------------------------------- momentum with resets

def _quadratic(curvature, optimum):
    optimum = np.asarray(optimum, dtype=float)

    def J(u):
        d = np.asarray(u, dtype=float) - optimum
        return 0.5 * curvature * float(d @ d)

    return J


@_kernel.flow_fn
def _momentum_flow(x, out, p):
    # x: u1 u2 tau xi1 xi2 m1c m1s m2c m2s
    # p: eps_a w1 w2 curvature us1 us2 c1 c2 rho variant(0 momentum / 1 gradient) kf lambda_xi T0 T
    eps_a = p[0]
    u1 = x[0] + eps_a * x[5]
    u2 = x[1] + eps_a * x[7]
    y = 0.5 * p[3] * ((u1 - p[4]) ** 2 + (u2 - p[5]) ** 2)
    g1 = (2.0 / eps_a) * y * x[5]
    g2 = (2.0 / eps_a) * y * x[7]
    if p[9] < 0.5:
        out[0] = x[3]
        out[1] = x[4]
        out[2] = p[8]
        out[3] = -(p[6] / x[2]) * x[3] - p[7] * g1
        out[4] = -(p[6] / x[2]) * x[4] - p[7] * g2
    else:
        out[0] = -x[3]
        out[1] = -x[4]
        out[2] = 0.0
        out[3] = -p[10] * (x[3] - g1)
        out[4] = -p[10] * (x[4] - g2)
    out[5] = p[1] * x[6]
    out[6] = -p[1] * x[5]
    out[7] = p[2] * x[8]
    out[8] = -p[2] * x[7]


@_kernel.margin_fn
def _momentum_shared(x, p):
    band = 1e-6 - max(abs(x[5] * x[5] + x[6] * x[6] - 1.0), abs(x[7] * x[7] + x[8] * x[8] - 1.0))
    return min(band, p[11] - max(abs(x[3]), abs(x[4])))


@_kernel.margin_fn
def _momentum_c(x, p):
    m = _momentum_shared(x, p)
    if p[9] < 0.5:
        m = min(m, x[2] - p[12], p[13] - x[2])
    return m


@_kernel.margin_fn
def _momentum_d(x, p):
    if p[9] > 0.5:
        return -np.inf
    return min(x[2] - p[13], _momentum_shared(x, p))


def _momentum_reset(p):
    n = 2
    T0, T, rho = p["T0"], p["T"], p["rho"]
    if not T > T0 > 0:
        raise ValueError("need T > T0 > 0")
    c1, c2 = 2.0 + rho, 4.0 * p["k2"]
    alpha = p["alpha"]
    J = _quadratic(p["curvature"], p["optimum"])
    dither = DitherParams.from_omega(p["frequency"], p["dither_amplitude"])
    filt = FilterParams(p["filter_gain"], 1.0, p["lambda_xi"])
    momentum = p["variant"] == "momentum"
    names = ("u_hat0", "u_hat1", "tau")
    if momentum:
        decision = Fragment(
            n + 1,
            flow=lambda x, sig: np.array([*sig.xi, rho]),
            flow_margin=lambda x, sig: min(x[n] - T0, T - x[n]),
            jump=lambda x, sig: np.array([*x[:n], T0]),
            jump_margin=lambda x, sig: x[n] - T,
            names=names,
        )
        loop = LoopConfig(filter_style="hybrid",
                          filter_fn=lambda x_uz, xi, g: -(c1 / x_uz[n]) * xi - c2 * g,
                          xi_jump=lambda x_uz, xi: (1.0 - alpha) * xi)
    else:
        decision = Fragment(
            n + 1,
            flow=lambda x, sig: np.array([*(-sig.xi), 0.0]),
            flow_margin=lambda x, sig: math.inf,
            jump=lambda x, sig: x,
            jump_margin=lambda x, sig: never(x),
            names=names,
        )
        loop = LoopConfig(filter_style="lowpass")
    system, layout = assemble_loop(decision, J, dither, filt, loop)
    params = np.array([dither.eps_a, *dither.omega, p["curvature"], *p["optimum"], c1, c2, rho,
                       0.0 if momentum else 1.0, filt.k_f, filt.lambda_xi, T0, T, 5.0, 2.0])
    # resets are decided in Python (the jump map), flows run compiled
    system = system.with_kernel(FlowKernel(_momentum_flow, _momentum_c, _momentum_d,
                                           _kernel.renormalize_pairs, params))
    x0 = np.concatenate([p["initial_input"], [T0], np.zeros(n), initial_mu(n)])
    config = SolverConfig(h=p["step"], T_max=p["horizon"], J_max=100000, record_every=5)
    return system, x0, config, {"optimum": list(p["optimum"]), "decision_coords": [0, 1],
                                "compare_coords": [0, 1]}


def _momentum_target(p):
    """Same decision dynamics driven by the exact gradient instead of the dither estimate."""
    T0, T, rho = p["T0"], p["T"], p["rho"]
    c1, c2, alpha = 2.0 + rho, 4.0 * p["k2"], p["alpha"]
    opt = np.asarray(p["optimum"], dtype=float)
    lam = p["curvature"]
    if p["variant"] == "momentum":
        system = HybridSystem(
            5,
            flow_margin=lambda x: min(x[2] - T0, T - x[2]),
            flow=lambda x: np.array([x[3], x[4], rho, *(-(c1 / x[2]) * x[3:5] - c2 * lam * (x[:2] - opt))]),
            jump_margin=lambda x: x[2] - T,
            jump=lambda x: np.array([x[0], x[1], T0, *((1.0 - alpha) * x[3:5])]),
        )
        x0 = [*p["initial_input"], T0, 0.0, 0.0]
    else:
        system = HybridSystem(2, lambda x: math.inf, lambda x: -lam * (x - opt), never, lambda x: x)
        x0 = list(p["initial_input"])
    arc = simulate(system, x0, SolverConfig(h=1e-3, T_max=p["horizon"], J_max=100000)).arc
    return Counterpart(arc, (0, 1), (0, 1))


def _time_to_reach(arc, coords, target, radius):
    for ts, xs in zip(arc.times, arc.states):
        err = np.linalg.norm(xs[:, list(coords)] - np.asarray(target), axis=1)
        hit = np.nonzero(err <= radius)[0]
        if hit.size:
            return float(ts[hit[0]])
    return math.inf


def _first_hit_time(arc, meta):
    t = _time_to_reach(arc, meta["decision_coords"], meta["optimum"], 0.1)
    return {"time_to_0.1": t if math.isfinite(t) else None}


register(ScenarioSpec(
    name="momentum_reset",
    description="Seeking with heavy-ball momentum whose timer-scheduled resets zero the momentum.",
    topic="momentum",
    params={
        "variant": Param("momentum", STRUCTURAL, "gradient = vanilla seeking loop for comparison",
                         choices=("momentum", "gradient")),
        "rho": Param(0.5, PUBLISHED, "timer rate"),
        "alpha": Param(1.0, CHOSEN, "1 resets the momentum at each jump, 0 keeps it"),
        "T0": Param(1.0, CHOSEN),
        "T": Param(5.0, CHOSEN),
        "k2": Param(1.0, CHOSEN),
        "curvature": Param(0.1, CHOSEN, "J = curvature/2 |u - optimum|^2"),
        "optimum": Param((1.0, -1.0), CHOSEN),
        "initial_input": Param((-2.0, 2.0), CHOSEN),
        "frequency": Param((40.0, 55.0), CHOSEN),
        "dither_amplitude": Param(0.1, CHOSEN),
        "filter_gain": Param(1.0, CHOSEN, "low-pass gain of the gradient variant"),
        "lambda_xi": Param(1e6, CHOSEN),
        "step": Param(2e-3, CHOSEN),
        "horizon": Param(60.0, CHOSEN),
    },
    builder=_momentum_reset,
    counterpart=_momentum_target,
    metrics=_first_hit_time,
))


# ---------------------------------------------------------------- Newton / gradient uniting

@_kernel.flow_fn
def _newton_flow(x, out, p):
    # x: u1 u2 z xi1a xi1b xi2a xi2b m1c m1s m2c m2s
    # p: eps_a w1 w2 kf/eps_f kh/eps_f H11 H12 H22 us1 us2 c0 c10 lambda_xi variant
    eps_a = p[0]
    u1 = x[0] + eps_a * x[7]
    u2 = x[1] + eps_a * x[9]
    d1 = u1 - p[8]
    d2 = u2 - p[9]
    y = 0.5 * (p[5] * d1 * d1 + 2.0 * p[6] * d1 * d2 + p[7] * d2 * d2)
    z = x[2]
    out[0] = -z * x[3] - (1.0 - z) * x[5]
    out[1] = -z * x[4] - (1.0 - z) * x[6]
    out[2] = 0.0
    out[3] = -p[3] * (x[3] - (2.0 / eps_a) * y * x[7])
    out[4] = -p[3] * (x[4] - (2.0 / eps_a) * y * x[9])
    a = 1.0 / (eps_a * eps_a)
    n11 = 16.0 * a * (x[7] * x[7] - 0.5)
    n22 = 16.0 * a * (x[9] * x[9] - 0.5)
    n12 = 4.0 * a * x[7] * x[9]
    out[5] = -p[4] * (y * (n11 * x[5] + n12 * x[6]) - y * x[7])
    out[6] = -p[4] * (y * (n12 * x[5] + n22 * x[6]) - y * x[9])
    out[7] = p[1] * x[8]
    out[8] = -p[1] * x[7]
    out[9] = p[2] * x[10]
    out[10] = -p[2] * x[9]


@_kernel.margin_fn
def _newton_gap(x, p):
    d1 = x[0] - p[8]
    d2 = x[1] - p[9]
    return 0.5 * (p[5] * d1 * d1 + 2.0 * p[6] * d1 * d2 + p[7] * d2 * d2)


@_kernel.margin_fn
def _newton_shared(x, p):
    for i in range(x.size):
        if not math.isfinite(x[i]):
            return -np.inf
    m = p[12] - max(max(abs(x[3]), abs(x[4])), max(abs(x[5]), abs(x[6])))
    band = 1e-6 - max(abs(x[7] * x[7] + x[8] * x[8] - 1.0), abs(x[9] * x[9] + x[10] * x[10] - 1.0))
    return min(m, band)


@_kernel.margin_fn
def _newton_c(x, p):
    m = _newton_shared(x, p)
    if p[13] > 0.5:
        return m
    gap = _newton_gap(x, p)
    if x[2] < 0.5:
        return min(m, p[10] - gap)
    return min(m, gap - p[11])


@_kernel.margin_fn
def _newton_d(x, p):
    if p[13] > 0.5:
        return -np.inf
    gap = _newton_gap(x, p)
    if x[2] < 0.5:
        d = gap - p[10]
    else:
        d = p[11] - gap
    return min(d, _newton_shared(x, p))


_NEWTON_VARIANTS = ("uniting", "newton", "gradient")


def _newton_gradient_switch(p):
    n = 2
    H = np.array([[p["hessian"][0], p["hessian"][1]], [p["hessian"][1], p["hessian"][2]]])
    opt = np.asarray(p["optimum"], dtype=float)

    def J(u):
        d = np.asarray(u, dtype=float) - opt
        return 0.5 * float(d @ H @ d)

    sets = hysteresis_sets(J, 0.0, p["c0"], p["c10"])
    dither = DitherParams.from_omega(p["frequency"], p["dither_amplitude"])
    eps_a = dither.eps_a
    kf, kh, eps_f = p["filter_gain"], p["hessian_gain"], p["filter_eps"]
    variant = p["variant"]
    fixed = variant != "uniting"

    def filter_fn(x_uz, xi, y, mu):
        dmu = mu[0::2]
        out = np.empty(4)
        out[:2] = -(kf / eps_f) * (xi[:2] - (2.0 / eps_a) * y * dmu)
        out[2:] = -(kh / eps_f) * (y * newton_matrix(mu, dither) @ xi[2:] - y * dmu)
        return out

    def field(x, sig):
        z = x[n]
        return np.array([*(-z * sig.xi[:2] - (1.0 - z) * sig.xi[2:]), 0.0])

    decision = Fragment(
        n + 1,
        flow=field,
        flow_margin=(lambda x, sig: math.inf) if fixed else (lambda x, sig: sets.flow_margin(x[:n], round(x[n]))),
        jump=lambda x, sig: np.array([x[0], x[1], 1.0 - x[n]]),
        jump_margin=(lambda x, sig: never(x)) if fixed else (lambda x, sig: sets.jump_margin(x[:n], round(x[n]))),
        names=("u_hat0", "u_hat1", "z"),
    )
    system, layout = assemble_loop(decision, J, dither, FilterParams(kf, eps_f, p["lambda_xi"]),
                                   LoopConfig(filter_style="custom", filter_fn=filter_fn, xi_dim=4))
    params = np.array([eps_a, *dither.omega, kf / eps_f, kh / eps_f, H[0, 0], H[0, 1], H[1, 1], *opt,
                       p["c0"], p["c10"], p["lambda_xi"], 1.0 if fixed else 0.0, 7.0, 2.0])
    system = system.with_kernel(FlowKernel(_newton_flow, _newton_c, _newton_d, _kernel.renormalize_pairs, params))
    if variant == "newton":
        z0 = 0.0
    elif variant == "gradient":
        z0 = 1.0
    else:
        z0 = 0.0 if J(p["initial_input"]) <= p["c0"] else 1.0
    x0 = np.concatenate([p["initial_input"], [z0], np.zeros(4), initial_mu(n)])
    config = SolverConfig(h=p["step"], T_max=p["horizon"], J_max=1000, record_every=10)
    return system, x0, config, {"optimum": opt, "decision_coords": [0, 1], "mode_coord": 2}


def _mode_dwell(arc, meta):
    dwell = [float(ts[-1] - ts[0]) for ts in arc.times]
    inner = dwell[1:-1] if len(dwell) > 2 else dwell[:0]
    peak = max(float(np.max(np.linalg.norm(x, axis=1))) for x in arc.states)
    return {"min_mode_dwell": min(inner) if inner else None, "peak_state_norm": peak}


register(ScenarioSpec(
    name="newton_gradient_switch",
    description="Hysteresis supervisor uniting gradient seeking far from the optimum and Newton seeking near it.",
    topic="uniting",
    params={
        "variant": Param("uniting", STRUCTURAL, "newton/gradient freeze the mode for comparison",
                         choices=_NEWTON_VARIANTS),
        "hessian": Param((2.0, 0.5, 1.0), CHOSEN, "entries H11, H12, H22 of a quadratic with J* = 0"),
        "optimum": Param((1.0, -1.0), CHOSEN),
        "c0": Param(0.5, CHOSEN),
        "c10": Param(0.1, CHOSEN),
        "frequency": Param((300.0, 410.0), CHOSEN),
        "dither_amplitude": Param(0.5, CHOSEN, "Hessian filter ripple grows like 16 J/eps_a^2"),
        "filter_gain": Param(1.0, CHOSEN),
        "hessian_gain": Param(1.0, CHOSEN),
        "filter_eps": Param(1.0, CHOSEN),
        "lambda_xi": Param(1e8, CHOSEN),
        "initial_input": Param((3.0, 1.0), CHOSEN, "far enough out that the Newton-only loop diverges"),
        "step": Param(2.4e-4, CHOSEN),
        "horizon": Param(80.0, CHOSEN),
    },
    builder=_newton_gradient_switch,
    metrics=_mode_dwell,
))
