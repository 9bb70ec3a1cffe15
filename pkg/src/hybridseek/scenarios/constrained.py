"""Constrained seeking: projected flows on a rotated box, sliding on an unknown constraint, obstacles."""

from __future__ import annotations

import math

import numpy as np

from .. import _kernel
from ..es_toolkit import (
    DitherParams,
    FilterParams,
    LoopConfig,
    assemble_loop,
    flow_only_decision,
    initial_mu,
)
from ..hybrid_core import FlowKernel, Fragment, HybridSystem, SolverConfig, never, simulate
from ..set_valued import Halfspaces, sliding_rule, tangent_cone_project
from ..supervisors import obstacle_partition, rotating_drift
from . import CHOSEN, PUBLISHED, STRUCTURAL, Counterpart, Param, ScenarioSpec, register

_S2 = math.sqrt(2.0)


def rotated_box(half_width: float = 1.0) -> Halfspaces:
    """Square turned by 45 degrees: |u1 + u2| / sqrt(2) <= w and |u1 - u2| / sqrt(2) <= w."""
    A = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    return Halfspaces(A, np.full(4, _S2 * half_width))


def project_rotated_box(point, half_width: float = 1.0) -> np.ndarray:
    """Euclidean projection onto rotated_box: clip in the rotated frame and rotate back."""
    p = np.asarray(point, dtype=float)
    z = np.clip([(p[0] + p[1]) / _S2, (p[0] - p[1]) / _S2], -half_width, half_width)
    return np.array([(z[0] + z[1]) / _S2, (z[0] - z[1]) / _S2])


def drift_position(q0, frequency: float, t: float) -> np.ndarray:
    """Solution of q' = frequency * (-q2, q1) from q0."""
    c, s = math.cos(frequency * t), math.sin(frequency * t)
    return np.array([c * q0[0] - s * q0[1], s * q0[0] + c * q0[1]])


def _drifting_target_plant(u, x_uz):
    q = x_uz[2:4]
    return float((u[0] - q[0]) ** 2 + (u[1] - q[1]) ** 2)


def _tracking_metrics(arc, meta):
    box = rotated_box(meta["half_width"])
    scale = np.linalg.norm(box.A, axis=1)
    worst = min(float(np.min((box.b - x[:, :2] @ box.A.T) / scale)) for x in arc.states)
    xf = arc.final_state()
    return {"min_set_margin": worst, "final_target_distance": float(np.linalg.norm(xf[:2] - xf[2:4]))}


# ---------------------------------------------------------------- projected flow on a rotated box

@_kernel.flow_fn
def _projected_flow(x, out, p):
    # x: u_hat(2) q(2) xi(2) mu(4)
    # p: eps_a w1 w2 kf gain drift band half_width lambda_xi start count
    eps_a = p[0]
    u0 = x[0] + eps_a * x[6]
    u1 = x[1] + eps_a * x[8]
    y = (u0 - x[2]) ** 2 + (u1 - x[3]) ** 2
    out[4] = -p[3] * (x[4] - (2.0 / eps_a) * y * x[6])
    out[5] = -p[3] * (x[5] - (2.0 / eps_a) * y * x[8])
    v0 = -x[4]
    v1 = -x[5]
    r = 1.0 / math.sqrt(2.0)
    for i in range(4):
        if i == 0:
            n0, n1 = r, r
        elif i == 1:
            n0, n1 = -r, -r
        elif i == 2:
            n0, n1 = r, -r
        else:
            n0, n1 = -r, r
        # adjacent faces are orthogonal, so removing active components one at a time is exact
        if p[7] - (n0 * x[0] + n1 * x[1]) <= p[6]:
            d = n0 * v0 + n1 * v1
            if d > 0.0:
                v0 -= d * n0
                v1 -= d * n1
    out[0] = p[4] * v0
    out[1] = p[4] * v1
    out[2] = -p[5] * x[3]
    out[3] = p[5] * x[2]
    out[6] = p[1] * x[7]
    out[7] = -p[1] * x[6]
    out[8] = p[2] * x[9]
    out[9] = -p[2] * x[8]


@_kernel.margin_fn
def _projected_c(x, p):
    r = 1.0 / math.sqrt(2.0)
    a = (x[0] + x[1]) * r
    b = (x[0] - x[1]) * r
    m = p[7] - max(abs(a), abs(b))
    m = min(m, p[8] - max(abs(x[4]), abs(x[5])))
    band = max(abs(x[6] * x[6] + x[7] * x[7] - 1.0), abs(x[8] * x[8] + x[9] * x[9] - 1.0))
    return min(m, 1e-6 - band)


def _box_and_drift(p):
    box = rotated_box(p["half_width"])
    drift = rotating_drift((0.0, 0.0), float(np.linalg.norm(p["initial_target"])), p["drift_frequency"])
    return box, drift


def _projected_tracking(p):
    box, drift = _box_and_drift(p)
    gain, band = p["gain"], p["active_band"]

    def field(x, sig):
        out = np.empty(4)
        out[:2] = gain * tangent_cone_project(box, x[:2], -sig.xi, active_tol=band)
        out[2:] = drift.flow(x[2:])
        return out

    decision = flow_only_decision(4, field, lambda x, sig: box.margin(x[:2]),
                                  ("u_hat0", "u_hat1", "q0", "q1"))
    dither = DitherParams.from_omega(p["frequency"], p["dither_amplitude"])
    filt = FilterParams(p["filter_gain"], 1.0, p["lambda_xi"])
    system, layout = assemble_loop(decision, _drifting_target_plant, dither, filt,
                                   LoopConfig(plant_reads_state=True))
    params = np.array([dither.eps_a, *dither.omega, filt.k_f, gain, p["drift_frequency"], band,
                       p["half_width"], filt.lambda_xi, 6.0, 2.0])
    system = system.with_kernel(FlowKernel(_projected_flow, _projected_c, _kernel.no_jump,
                                           _kernel.renormalize_pairs, params))
    q0 = np.asarray(p["initial_target"], dtype=float)
    x0 = np.concatenate([p["initial_input"], q0, [0.0, 0.0], initial_mu(2)])
    config = SolverConfig(h=p["step"], T_max=p["horizon"], J_max=0, record_every=p["record_every"])
    # the constrained optimizer at the final time
    opt = project_rotated_box(drift_position(q0, p["drift_frequency"], p["horizon"]), p["half_width"])
    return system, x0, config, {"optimum": opt.tolist(), "decision_coords": [0, 1],
                                "compare_coords": [0, 1], "half_width": p["half_width"]}


def _projected_counterpart(p):
    box, drift = _box_and_drift(p)
    gain, band = p["gain"], p["active_band"]

    def flow(x):
        out = np.empty(4)
        grad = 2.0 * (x[:2] - x[2:])
        out[:2] = gain * tangent_cone_project(box, x[:2], -grad, active_tol=band)
        out[2:] = drift.flow(x[2:])
        return out

    system = HybridSystem(4, lambda x: box.margin(x[:2]), flow, never, lambda x: x,
                          names=("u_hat0", "u_hat1", "q0", "q1"))
    x0 = np.concatenate([p["initial_input"], p["initial_target"]])
    arc = simulate(system, x0, SolverConfig(h=0.01, T_max=p["horizon"], J_max=0)).arc
    return Counterpart(arc, (0, 1), (0, 1))


register(ScenarioSpec(
    name="projected_tracking",
    description="Seeking a slowly rotating minimizer with the estimate projected onto the tangent cone of a 45-degree rotated box.",
    topic="set-valued",
    params={
        "dither_amplitude": Param(0.01, PUBLISHED),
        "frequency": Param((100.0, 150.0), PUBLISHED),
        "filter_gain": Param(1.0, PUBLISHED, "k_f"),
        "gain": Param(0.2, PUBLISHED, "k"),
        "drift_frequency": Param(0.001, PUBLISHED, "frequency of the oscillator moving the minimizer"),
        "half_width": Param(1.0, CHOSEN, "box |u1 +- u2| / sqrt(2) <= half_width"),
        "initial_target": Param((1.5, 0.0), CHOSEN, "radius 1.5 keeps the minimizer outside the box"),
        "initial_input": Param((-0.5, 0.0), CHOSEN),
        "active_band": Param(0.01, STRUCTURAL, "faces within this slack count as active"),
        "lambda_xi": Param(1e3, CHOSEN),
        "step": Param(2e-3, CHOSEN),
        "horizon": Param(100.0, CHOSEN),
        "record_every": Param(10, CHOSEN),
    },
    builder=_projected_tracking,
    counterpart=_projected_counterpart,
    metrics=_tracking_metrics,
))


# ---------------------------------------------------------------- sliding on an unknown constraint

@_kernel.flow_fn
def _sliding_flow(x, out, p):
    # x: u_hat(2) q(2) xi_J(2) xi_c(2) mu(4)
    # p: eps_a w1 w2 kf gain drift a0 a1 b lambda_xi start count
    eps_a = p[0]
    u0 = x[0] + eps_a * x[8]
    u1 = x[1] + eps_a * x[10]
    yJ = (u0 - x[2]) ** 2 + (u1 - x[3]) ** 2
    yc = p[6] * u0 + p[7] * u1 + p[8]
    g = 2.0 / eps_a
    out[4] = -p[3] * (x[4] - g * yJ * x[8])
    out[5] = -p[3] * (x[5] - g * yJ * x[10])
    out[6] = -p[3] * (x[6] - g * yc * x[8])
    out[7] = -p[3] * (x[7] - g * yc * x[10])
    c = p[6] * x[0] + p[7] * x[1] + p[8]
    if c < 0.0:
        lam = 1.0
    elif c > 0.0:
        lam = 0.0
    else:
        lam = 0.5
    out[0] = -p[4] * (lam * x[4] + (1.0 - lam) * x[6])
    out[1] = -p[4] * (lam * x[5] + (1.0 - lam) * x[7])
    out[2] = -p[5] * x[3]
    out[3] = p[5] * x[2]
    out[8] = p[1] * x[9]
    out[9] = -p[1] * x[8]
    out[10] = p[2] * x[11]
    out[11] = -p[2] * x[10]


@_kernel.margin_fn
def _sliding_c(x, p):
    m = p[9] - max(max(abs(x[4]), abs(x[5])), max(abs(x[6]), abs(x[7])))
    band = max(abs(x[8] * x[8] + x[9] * x[9] - 1.0), abs(x[10] * x[10] + x[11] * x[11] - 1.0))
    return min(m, 1e-6 - band)


def constrained_minimizer(q, a, b) -> np.ndarray:
    """argmin |u - q|^2 subject to a.u + b <= 0."""
    q = np.asarray(q, dtype=float)
    a = np.asarray(a, dtype=float)
    excess = max(0.0, float(a @ q) + b)
    return q - excess * a / float(a @ a)


def _unknown_constraints(p):
    a = np.asarray(p["constraint_normal"], dtype=float)
    b, gain = p["constraint_offset"], p["gain"]
    drift = rotating_drift((0.0, 0.0), float(np.linalg.norm(p["initial_target"])), p["drift_frequency"])

    def plant(u, x_uz):
        return np.array([_drifting_target_plant(u, x_uz), float(a @ u) + b])

    def field(x, sig):
        out = np.empty(4)
        # the constraint is sampled at the nominal input
        out[:2] = sliding_rule(float(a @ x[:2]) + b, sig.xi[:2], sig.xi[2:], gain)
        out[2:] = drift.flow(x[2:])
        return out

    decision = flow_only_decision(4, field, names=("u_hat0", "u_hat1", "q0", "q1"))
    dither = DitherParams.from_omega(p["frequency"], p["dither_amplitude"])
    filt = FilterParams(p["filter_gain"], 1.0, p["lambda_xi"])
    system, layout = assemble_loop(decision, plant, dither, filt,
                                   LoopConfig(output_mode="stacked", n_outputs=2, plant_reads_state=True))
    params = np.array([dither.eps_a, *dither.omega, filt.k_f, gain, p["drift_frequency"], *a, b,
                       filt.lambda_xi, 8.0, 2.0])
    system = system.with_kernel(FlowKernel(_sliding_flow, _sliding_c, _kernel.no_jump,
                                           _kernel.renormalize_pairs, params))
    q0 = np.asarray(p["initial_target"], dtype=float)
    x0 = np.concatenate([p["initial_input"], q0, np.zeros(4), initial_mu(2)])
    config = SolverConfig(h=p["step"], T_max=p["horizon"], J_max=0, record_every=p["record_every"])
    opt = constrained_minimizer(drift_position(q0, p["drift_frequency"], p["horizon"]), a, b)
    return system, x0, config, {"optimum": opt.tolist(), "decision_coords": [0, 1],
                                "constraint": [*a.tolist(), b]}


def _constraint_metrics(arc, meta):
    a0, a1, b = meta["constraint"]
    tail_start = 0.5 * float(arc.times[-1][-1])
    worst = -math.inf
    for t, x in zip(arc.times, arc.states):
        keep = t >= tail_start
        if np.any(keep):
            worst = max(worst, float(np.max(a0 * x[keep, 0] + a1 * x[keep, 1] + b)))
    xf = arc.final_state()
    return {"final_constraint": float(a0 * xf[0] + a1 * xf[1] + b), "late_max_constraint": worst}


register(ScenarioSpec(
    name="unknown_constraints",
    description="Seeking a drifting minimizer under a constraint c(u) <= 0 known only through measurements, with a sliding rule.",
    topic="set-valued",
    params={
        "constraint_normal": Param((-1.0, -2.0), PUBLISHED, "a in c(u) = a.u + b"),
        "constraint_offset": Param(2.0, PUBLISHED, "b"),
        "dither_amplitude": Param(0.01, PUBLISHED),
        "frequency": Param((100.0, 250.0), PUBLISHED),
        "filter_gain": Param(1.0, PUBLISHED, "k_f"),
        "gain": Param(0.1, PUBLISHED, "k"),
        "drift_frequency": Param(0.001, CHOSEN, "same slowly rotating minimizer as projected_tracking"),
        "initial_target": Param((1.5, 0.0), CHOSEN),
        "initial_input": Param((-1.0, -1.0), CHOSEN, "starts outside the feasible set"),
        "lambda_xi": Param(1e3, CHOSEN),
        "step": Param(1e-3, CHOSEN),
        "horizon": Param(150.0, CHOSEN),
        "record_every": Param(20, CHOSEN),
    },
    builder=_unknown_constraints,
    metrics=_constraint_metrics,
))


# ---------------------------------------------------------------- obstacle avoidance with two barrier fields

def _obstacle_parts(p):
    source = np.asarray(p["source"], dtype=float)
    weight = p["field_weight"]

    def field(u):
        d = np.asarray(u, dtype=float) - source
        return -weight * float(d @ d)

    return source, obstacle_partition(p["obstacle_center"], p["obstacle_radius"], p["chi"], p["lam"],
                                      field, u_star=source)


def _obstacle_avoid(p):
    source, part = _obstacle_parts(p)
    gain = p["gain"]

    def flow(x, sig):
        return np.array([-gain * sig.xi[0], -gain * sig.xi[1], 0.0])

    def jump(x, sig):
        return np.array([x[0], x[1], 3.0 - round(x[2])])

    decision = Fragment(3, flow, lambda x, sig: part.flow_margin(x[:2], round(x[2])), jump,
                        lambda x, sig: part.jump_margin(x[:2], round(x[2])), ("u_hat0", "u_hat1", "mode"))

    def measured(u, x_uz):
        return part.Jhat(u, round(x_uz[2]))

    dither = DitherParams.from_omega(p["frequency"], p["dither_amplitude"])
    filt = FilterParams(p["filter_gain"], 1.0, p["lambda_xi"])
    system, layout = assemble_loop(decision, measured, dither, filt, LoopConfig(plant_reads_state=True))
    x0 = np.concatenate([p["initial_input"], [float(p["initial_mode"])], [0.0, 0.0], initial_mu(2)])
    config = SolverConfig(h=p["step"], T_max=p["horizon"], J_max=p["max_jumps"], record_every=p["record_every"])
    meta = {"optimum": source.tolist(), "decision_coords": [0, 1],
            "obstacle": [*part.p0.tolist(), part.rho]}
    return system, x0, config, meta


def _obstacle_metrics(arc, meta):
    cx, cy, rho = meta["obstacle"]
    reach = 2.0 * rho * _S2
    # clearance from the diamond ||u - p0||_1 <= 2 rho sqrt(2) containing the obstacle
    gap = min(float(np.min(np.abs(x[:, 0] - cx) + np.abs(x[:, 1] - cy))) for x in arc.states) - reach
    return {"min_clearance": gap, "final_mode": int(round(arc.final_state()[2]))}


register(ScenarioSpec(
    name="obstacle_avoid",
    description="Vehicle seeks the peak of a potential field around a diamond obstacle, toggling between two barrier-augmented fields with hysteresis.",
    topic="switching",
    params={
        "source": Param((4.0, 0.0), CHOSEN, "peak of J(u) = -field_weight * |u - source|^2"),
        "field_weight": Param(0.25, CHOSEN, "the barrier shifts each mode's minimizer by about 1/(2 field_weight d^2)"),
        "obstacle_center": Param((0.0, 0.0), CHOSEN, "p0"),
        "obstacle_radius": Param(0.5, CHOSEN, "rho"),
        "chi": Param(1.5, CHOSEN),
        "lam": Param(0.25, CHOSEN, "hysteresis width, 0 < lam < chi - 1"),
        "gain": Param(1.0, CHOSEN, "u_hat' = -gain * xi"),
        "dither_amplitude": Param(0.05, CHOSEN),
        "frequency": Param((100.0, 130.0), CHOSEN),
        "filter_gain": Param(1.0, CHOSEN),
        "lambda_xi": Param(1e4, CHOSEN),
        "initial_input": Param((-2.5, 0.8), CHOSEN, "in the jump set of mode 1, so the logic switches to pass above"),
        "initial_mode": Param(1, STRUCTURAL, "mode 1 or 2", choices=(1, 2)),
        "step": Param(1e-3, CHOSEN),
        "horizon": Param(40.0, CHOSEN),
        "max_jumps": Param(20, CHOSEN),
        "record_every": Param(50, CHOSEN),
    },
    builder=_obstacle_avoid,
    metrics=_obstacle_metrics,
))
