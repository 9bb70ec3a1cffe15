"""Seeking loops around dynamic plants: Coulomb friction and a fast-switching linear plant."""

from __future__ import annotations

import math

import numpy as np

from .. import _kernel
from ..es_toolkit import (
    DitherParams,
    DynamicPlant,
    FilterParams,
    LoopConfig,
    assemble_loop,
    gradient_decision,
    initial_mu,
)
from ..hybrid_core import FlowKernel, SolverConfig
from ..set_valued import Selector
from . import CHOSEN, STRUCTURAL, Param, ScenarioSpec, register
from .games import switched_matrices


# ---------------------------------------------------------------- oscillator with Coulomb friction

def coulomb_flow(theta, u, friction=1.0, stiffness=1.0, mass=1.0) -> np.ndarray:
    """Open-loop oscillator with velocity offset u; sign(0) = 0 selects from [-1, 1]."""
    slip = theta[1] - u
    return np.array([slip, -(friction / mass) * np.sign(slip) - (stiffness / mass) * theta[0]])


@_kernel.flow_fn
def _coulomb_flow(x, out, p):
    # x: u_hat xi mu_c mu_s theta1 theta2
    # p: eps_a omega k kf/eps_f B/M K/M target lambda_xi lambda_theta
    eps_a, k = p[0], p[2]
    u = x[0] + eps_a * x[2]
    y = (x[5] - p[6]) ** 2
    out[0] = -k * x[1]
    out[1] = -k * p[3] * (x[1] - (2.0 / eps_a) * y * x[2])
    out[2] = k * p[1] * x[3]
    out[3] = -k * p[1] * x[2]
    slip = x[5] - u
    s = 0.0
    if slip > 0.0:
        s = 1.0
    elif slip < 0.0:
        s = -1.0
    out[4] = slip
    out[5] = -p[4] * s - p[5] * x[4]


@_kernel.margin_fn
def _coulomb_c(x, p):
    m = min(p[7] - abs(x[1]), p[8] - max(abs(x[4]), abs(x[5])))
    return min(m, 1e-6 - abs(x[2] * x[2] + x[3] * x[3] - 1.0))


def _coulomb_plant_loop(p):
    B, K, M = p["friction"], p["stiffness"], p["mass"]
    target, k = p["target"], p["gain"]
    plant = DynamicPlant(2, lambda theta, u: coulomb_flow(theta, u[0], B, K, M),
                         lambda theta, u: float((theta[1] - target) ** 2), ("theta1", "theta2"))
    dither = DitherParams.from_omega([p["frequency"]], p["dither_amplitude"])
    filt = FilterParams(p["filter_gain"], 1.0, p["lambda_xi"])
    loop = LoopConfig(k=k, lambda_theta=p["lambda_theta"])
    system, layout = assemble_loop(gradient_decision(1), plant, dither, filt, loop)
    params = np.array([dither.eps_a, dither.omega[0], k, filt.k_f / filt.eps_f, B / M, K / M, target,
                       filt.lambda_xi, loop.lambda_theta, 2.0, 1.0])
    system = system.with_kernel(FlowKernel(_coulomb_flow, _coulomb_c, _kernel.no_jump,
                                           _kernel.renormalize_pairs, params))
    x0 = np.concatenate([[p["initial_input"], 0.0], initial_mu(1), p["initial_plant"]])
    config = SolverConfig(h=p["step"], T_max=p["horizon_scale"] / k, J_max=0,
                          record_every=p["record_every"])
    # theta2 settles at u whatever theta1 sticks at, so the response map is (u - target)^2
    return system, x0, config, {"optimum": [target], "decision_coords": [0]}


register(ScenarioSpec(
    name="coulomb_plant_loop",
    description="Gradient seeking through a harmonic oscillator with Coulomb friction and a velocity offset input.",
    topic="plants",
    params={
        "friction": Param(1.0, CHOSEN, "B"),
        "stiffness": Param(1.0, CHOSEN, "K"),
        "mass": Param(1.0, CHOSEN, "M"),
        "target": Param(1.0, CHOSEN, "output (theta2 - target)^2 depends on theta2 only"),
        "gain": Param(0.2, CHOSEN, "k, the plant/controller time-scale separation"),
        "frequency": Param(60.0, CHOSEN, "with dither_amplitude 0.5 the plant cannot follow the dither unless gain is small"),
        "dither_amplitude": Param(0.5, CHOSEN),
        "filter_gain": Param(1.0, CHOSEN),
        "lambda_xi": Param(1e3, CHOSEN),
        "lambda_theta": Param(1e3, CHOSEN),
        "initial_input": Param(-1.0, CHOSEN),
        "initial_plant": Param((0.0, 0.0), CHOSEN),
        "step": Param(1e-3, CHOSEN),
        "horizon_scale": Param(20.0, CHOSEN, "horizon = horizon_scale / gain"),
        "record_every": Param(20, CHOSEN),
    },
    builder=_coulomb_plant_loop,
))


# ---------------------------------------------------------------- fast-switching linear plant

def _switched_plant_loop(p):
    mixer = Selector.seeded_uniform(p["seed"])
    target = p["target"]

    def plant_flow(theta, u):
        A, B = switched_matrices(mixer.pick_scalar(0.0, 1.0, theta, b"plant"))
        return A @ theta + B * u[0]

    def output(theta, u):
        return float((theta[0] - target) ** 2 + theta[1] ** 2)

    plant = DynamicPlant(2, plant_flow, output, ("theta1", "theta2"))
    dither = DitherParams.from_omega([p["frequency"]], p["dither_amplitude"])
    filt = FilterParams(p["filter_gain"], 1.0, p["lambda_xi"])
    system, layout = assemble_loop(gradient_decision(1), plant, dither, filt, LoopConfig(k=p["gain"]))
    u0 = p["initial_input"]
    x0 = np.concatenate([[u0, 0.0], initial_mu(1), [u0, 0.0]])
    config = SolverConfig(h=p["step"], T_max=p["horizon"], J_max=0)
    # steady state theta = (u, 0) in both modes, so the response map is (u - target)^2
    return system, x0, config, {"optimum": [target], "decision_coords": [0]}


register(ScenarioSpec(
    name="switched_plant_loop",
    description="Gradient seeking through a linear plant switching arbitrarily fast between two modes.",
    topic="plants",
    params={
        "target": Param(1.0, CHOSEN, "output (theta1 - target)^2 + theta2^2"),
        "gain": Param(0.05, CHOSEN, "k"),
        "frequency": Param(8.0, CHOSEN, "dither runs at gain * frequency in plant time"),
        "dither_amplitude": Param(0.2, CHOSEN),
        "filter_gain": Param(0.2, CHOSEN),
        "lambda_xi": Param(1e3, CHOSEN),
        "initial_input": Param(-1.0, CHOSEN),
        "seed": Param(0, STRUCTURAL, "drives the mode mixing weight"),
        "step": Param(0.05, CHOSEN),
        "horizon": Param(600.0, CHOSEN),
    },
    builder=_switched_plant_loop,
))
