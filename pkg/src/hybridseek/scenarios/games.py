"""Multi-agent scenarios: population-game Nash seeking, sign consensus, intermittent Nash play."""

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
    initial_mu,
    renormalize,
    sphere_margin,
)
from ..hybrid_core import FlowKernel, Fragment, HybridSystem, SolverConfig, never
from ..set_valued import Selector, Simplex, best_response
from ..supervisors import ActivationParams, DwellParams
from . import CHOSEN, PUBLISHED, STRUCTURAL, Param, ScenarioSpec, register
from ._logic import GreedySwitching, check_budget, logic_decision


# ---------------------------------------------------------------- rock-paper-scissors Nash seeking

_PAYOFFS = ("standard", "printed")


def _rps_payoffs(u, printed: bool) -> np.ndarray:
    if printed:
        return np.array([u[0] * (u[1] - u[2]), u[1] * (u[0] - u[2]), u[2] * (u[0] - u[1])])
    return np.array([u[0] * (u[1] - u[2]), u[1] * (u[2] - u[0]), u[2] * (u[0] - u[1])])


@_kernel.flow_fn
def _rps_flow(x, out, p):
    # x: u1 u2 u3 xi1 xi2 xi3 m1c m1s m2c m2s m3c m3s
    # p: eps_a w1 w2 w3 kf k lambda_xi printed
    eps_a = p[0]
    u1 = x[0] + eps_a * x[6]
    u2 = x[1] + eps_a * x[8]
    u3 = x[2] + eps_a * x[10]
    y1 = u1 * (u2 - u3)
    if p[7] > 0.5:
        y2 = u2 * (u1 - u3)
    else:
        y2 = u2 * (u3 - u1)
    y3 = u3 * (u1 - u2)
    best = 0
    if x[4] > x[3 + best]:
        best = 1
    if x[5] > x[3 + best]:
        best = 2
    for i in range(3):
        target = 1.0 if i == best else 0.0
        out[i] = p[5] * (target - x[i])
    c = 2.0 / eps_a
    out[3] = -p[4] * (x[3] - c * y1 * x[6])
    out[4] = -p[4] * (x[4] - c * y2 * x[8])
    out[5] = -p[4] * (x[5] - c * y3 * x[10])
    for i in range(3):
        w = p[1 + i]
        out[6 + 2 * i] = w * x[7 + 2 * i]
        out[7 + 2 * i] = -w * x[6 + 2 * i]


@_kernel.margin_fn
def _rps_c(x, p):
    simplex = min(min(x[0], x[1]), min(x[2], -abs(x[0] + x[1] + x[2] - 1.0)))
    box = p[6] - max(abs(x[3]), max(abs(x[4]), abs(x[5])))
    worst = 0.0
    for i in range(3):
        worst = max(worst, abs(x[6 + 2 * i] ** 2 + x[7 + 2 * i] ** 2 - 1.0))
    return min(simplex, min(box, 1e-6 - worst))


def _rps_nash(p):
    eps_a, k = p["dither_amplitude"], p["gain"]
    printed = p["payoffs"] == "printed"
    simplex = Simplex(3)

    def field(x, sig):
        return k * (best_response(sig.xi) - x)

    decision = Fragment(3, field, lambda x, sig: simplex.margin(x), lambda x, sig: x,
                        lambda x, sig: never(x), ("u_hat0", "u_hat1", "u_hat2"))
    dither = DitherParams.from_omega(p["frequency"], eps_a)
    filt = FilterParams(p["filter_rate"], 1.0, p["lambda_xi"])
    system, layout = assemble_loop(decision, lambda u: _rps_payoffs(u, printed), dither, filt,
                                   LoopConfig(output_mode="per_agent"))
    params = np.array([eps_a, *dither.omega, filt.k_f, k, filt.lambda_xi, 1.0 if printed else 0.0,
                       6.0, 3.0])
    system = system.with_kernel(FlowKernel(_rps_flow, _rps_c, _kernel.no_jump,
                                           _kernel.renormalize_pairs, params))
    x0 = np.concatenate([p["initial_input"], np.zeros(3), initial_mu(3)])
    config = SolverConfig(h=p["step"], T_max=p["horizon"], J_max=0, record_every=p["record_every"])
    return system, x0, config, {"optimum": [1 / 3, 1 / 3, 1 / 3], "decision_coords": [0, 1, 2]}


def _simplex_metrics(arc, meta):
    worst = min(float(np.min(np.minimum(x[:, :3].min(axis=1), -np.abs(x[:, :3].sum(axis=1) - 1.0))))
                for x in arc.states)
    return {"min_simplex_margin": worst}


register(ScenarioSpec(
    name="rps_nash",
    description="Three players seek the Nash point of rock-paper-scissors with best-response dynamics on the simplex.",
    topic="set-valued",
    params={
        "payoffs": Param("standard", CHOSEN,
                         "standard zero-sum payoffs; 'printed' uses the variant whose second gradient is u1 - u3",
                         choices=_PAYOFFS),
        "dither_amplitude": Param(0.01, PUBLISHED),
        "gain": Param(0.005, PUBLISHED, "k"),
        "filter_rate": Param(10.0, PUBLISHED, "k_f / eps_f"),
        "frequency": Param((1.85e5, 2.0e5, 2.53e5), PUBLISHED),
        "lambda_xi": Param(1e3, CHOSEN),
        "initial_input": Param((0.5, 0.25, 0.25), CHOSEN),
        "step": Param(5e-6, CHOSEN, "about 1.3 rad per step at the fastest dither"),
        "horizon": Param(420.0, CHOSEN),
        "record_every": Param(2000, CHOSEN),
    },
    builder=_rps_nash,
    metrics=_simplex_metrics,
))


# ---------------------------------------------------------------- distributed sign consensus

_AGENTS = 5
_B_VECTORS = np.array([
    [1.0, 2.0, 3.0, 4.0, 5.0],
    [5.0, 4.0, 3.0, 2.0, 1.0],
    [2.0, 3.0, 4.0, 5.0, 1.0],
    [3.0, 4.0, 5.0, 1.0, 2.0],
    [4.0, 5.0, 1.0, 2.0, 3.0],
])
# connected undirected graphs visited in turn: path, star, ring, and a second path
_GRAPHS = (
    ((0, 1), (1, 2), (2, 3), (3, 4)),
    ((0, 1), (0, 2), (0, 3), (0, 4)),
    ((0, 1), (1, 2), (2, 3), (3, 4), (4, 0)),
    ((0, 2), (2, 4), (4, 1), (1, 3)),
)


def _adjacency(edges, n=_AGENTS) -> np.ndarray:
    a = np.zeros((n, n))
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    return a


_ADJ = np.array([_adjacency(e) for e in _GRAPHS])


@_kernel.flow_fn
def _dist_flow(x, out, p):
    # x: u (25, agent-major) graph tau xi (25) mu (50)
    # p: eps_a k*alpha k*gamma kf/eps_l period lambda_xi w(5) b(25) adjacency(4x25)
    n = 5
    eps_a = p[0]
    g = int(x[25] + 0.5)
    base = 36 + 25 * g
    for i in range(n):
        y = 0.0
        for c in range(n):
            mc = x[52 + 2 * (n * i + c)]
            u = x[n * i + c] + eps_a * mc
            y += 0.5 * u * u - 100.0 * p[11 + n * i + c] * u
        for c in range(n):
            pull = 0.0
            ui = x[n * i + c]
            for j in range(n):
                if p[base + n * i + j] > 0.0:
                    d = x[n * j + c] - ui
                    if d > 0.0:
                        pull += 1.0
                    elif d < 0.0:
                        pull -= 1.0
            k = n * i + c
            out[k] = p[1] * pull - p[2] * x[27 + k]
            out[27 + k] = -p[3] * (x[27 + k] - (2.0 / eps_a) * y * x[52 + 2 * k])
            w = p[6 + c]
            out[52 + 2 * k] = w * x[53 + 2 * k]
            out[53 + 2 * k] = -w * x[52 + 2 * k]
    out[25] = 0.0
    out[26] = 1.0


@_kernel.margin_fn
def _dist_shared(x, p):
    m = 0.0
    for k in range(25):
        m = max(m, abs(x[27 + k]))
    worst = 0.0
    for k in range(25):
        worst = max(worst, abs(x[52 + 2 * k] ** 2 + x[53 + 2 * k] ** 2 - 1.0))
    return min(p[5] - m, 1e-6 - worst)


@_kernel.margin_fn
def _dist_c(x, p):
    return min(min(x[26], p[4] - x[26]), _dist_shared(x, p))


@_kernel.margin_fn
def _dist_d(x, p):
    return min(x[26] - p[4], _dist_shared(x, p))


def _distributed_sign(p):
    n = _AGENTS
    eps_a = p["dither_amplitude"]
    k, alpha, gamma = p["gain"], p["alpha"], p["gamma"]
    rate = p["filter_gain"] / p["filter_eps"]
    omega = np.asarray(p["frequency_scale"] * np.array(p["frequency_ratios"]), dtype=float)
    period, lam = p["switch_period"], p["lambda_xi"]
    b = _B_VECTORS
    n_graphs = len(_GRAPHS)
    dim = n * n + 2 + n * n + 2 * n * n
    s_xi = slice(n * n + 2, 2 * n * n + 2)
    s_mu = slice(2 * n * n + 2, dim)

    def shared(x):
        if not np.all(np.isfinite(x)):
            return -math.inf
        return min(lam - float(np.max(np.abs(x[s_xi]))), sphere_margin(x[s_mu]))

    def flow(x):
        U = x[:n * n].reshape(n, n)
        xi = x[s_xi].reshape(n, n)
        mu = x[s_mu]
        mc = mu[0::2].reshape(n, n)
        u = U + eps_a * mc
        y = 0.5 * np.sum(u * u, axis=1) - 100.0 * np.sum(b * u, axis=1)
        adj = _ADJ[int(round(x[n * n]))]
        signs = np.sign(U[None, :, :] - U[:, None, :])  # [i, j] = sign(u_j - u_i)
        out = np.empty(dim)
        out[:n * n] = (k * alpha * np.einsum("ij,ijc->ic", adj, signs) - k * gamma * xi).ravel()
        out[n * n] = 0.0
        out[n * n + 1] = 1.0
        out[s_xi] = (-rate * (xi - (2.0 / eps_a) * y[:, None] * mc)).ravel()
        w = np.tile(omega, n)
        mo = np.empty(2 * n * n)
        mo[0::2] = w * mu[1::2]
        mo[1::2] = -w * mu[0::2]
        out[s_mu] = mo
        return out

    def c_margin(x):
        tau = x[n * n + 1]
        return min(tau, period - tau, shared(x))

    def d_margin(x):
        return min(x[n * n + 1] - period, shared(x))

    def jump(x):
        out = x.copy()
        out[n * n] = float((round(x[n * n]) + 1) % n_graphs)
        out[n * n + 1] = 0.0
        return out

    def project(x):
        mu = renormalize(x[s_mu])
        if mu is x[s_mu]:
            return x
        out = x.copy()
        out[s_mu] = mu
        return out

    names = tuple(f"u{i}_{c}" for i in range(n) for c in range(n)) + ("graph", "tau") + tuple(
        f"xi{i}_{c}" for i in range(n) for c in range(n)) + tuple(
        f"mu{i}_{c}_{s}" for i in range(n) for c in range(n) for s in ("c", "s"))
    params = np.concatenate([[eps_a, k * alpha, k * gamma, rate, period, lam], omega, b.ravel(),
                             _ADJ.reshape(n_graphs, -1).ravel(), [float(s_mu.start), float(n * n)]])
    kernel = FlowKernel(_dist_flow, _dist_c, _dist_d, _kernel.renormalize_pairs, params)
    system = HybridSystem(dim, c_margin, flow, d_margin, jump, project, names, kernel)
    x0 = np.concatenate([(p["initial_scale"] * b).ravel(), [0.0, 0.0], np.zeros(n * n),
                         initial_mu(n * n)])
    u_star = 100.0 * b.sum(axis=0) / n
    config = SolverConfig(h=p["step"], T_max=p["horizon"], J_max=10 ** 6, record_every=p["record_every"])
    return system, x0, config, {"optimum": np.tile(u_star, n), "decision_coords": list(range(n * n)),
                                "consensus_optimum": u_star}


def _consensus_metrics(arc, meta):
    n = _AGENTS
    t_all = np.concatenate(arc.times)
    x_all = np.concatenate(arc.states)
    U = x_all[:, :n * n].reshape(-1, n, n)
    spread = np.max(np.linalg.norm(U[:, :, None, :] - U[:, None, :, :], axis=3), axis=(1, 2))
    below = np.nonzero(spread < 1.0)[0]
    finite = np.all(np.isfinite(x_all), axis=1)
    u_star = np.asarray(meta["consensus_optimum"])
    return {
        "final_spread": float(spread[-1]),
        "consensus_time": float(t_all[below[0]]) if below.size else None,
        "all_finite": bool(np.all(finite)),
        "mean_error": float(np.linalg.norm(U[-1].mean(axis=0) - u_star)),
    }


register(ScenarioSpec(
    name="distributed_sign",
    description="Five agents reach consensus on the minimizer of a sum of costs over switching graphs.",
    topic="set-valued",
    params={
        "dither_amplitude": Param(0.8, PUBLISHED),
        "gain": Param(0.05, PUBLISHED, "k"),
        "filter_gain": Param(0.1, PUBLISHED, "k_f"),
        "filter_eps": Param(0.1, PUBLISHED, "eps_l, the filter time scale"),
        "frequency_scale": Param(500.0, PUBLISHED),
        "frequency_ratios": Param((5 / 6, 3 / 8, 2 / 3, 4 / 5, 7 / 10), PUBLISHED,
                                  "shared by all agents; each agent has its own oscillators"),
        "alpha": Param(15.0, PUBLISHED, "consensus gain 1/delta"),
        "gamma": Param(0.1, PUBLISHED),
        "switch_period": Param(0.1, PUBLISHED),
        "lambda_xi": Param(1e6, CHOSEN),
        "initial_scale": Param(2.0, CHOSEN, "agent i starts at initial_scale * b_i"),
        "step": Param(1e-3, CHOSEN),
        "horizon": Param(1500.0, CHOSEN),
        "record_every": Param(100, CHOSEN),
    },
    builder=_distributed_sign,
    metrics=_consensus_metrics,
))


# ---------------------------------------------------------------- Nash seeking with intermittent updates

def _plant_A(q):
    return np.array([[-1.0, 1.5 - 1.25 * q], [-2.25 + 1.25 * q, -1.0]])


def _plant_B(q):
    return np.array([1.0, 2.25 - 1.25 * q])


# l = 1 lets both players update; 2, 3, 4 freeze player 1, player 2, both
_UPDATES = {1: (1.0, 1.0), 2: (0.0, 1.0), 3: (1.0, 0.0), 4: (0.0, 0.0)}


def switched_matrices(alpha: float):
    """Convex combination alpha * (A_1, B_1) + (1 - alpha) * (A_2, B_2) of the two plant modes."""
    return (alpha * _plant_A(1) + (1 - alpha) * _plant_A(2),
            alpha * _plant_B(1) + (1 - alpha) * _plant_B(2))


def nash_payoffs(theta1, offset: float = -4.0 / 9.0) -> np.ndarray:
    """Payoffs (to maximize) of the substituted game; Nash point (2/3, 2/3).

    The default offset makes both payoffs vanish at the Nash point.
    """
    a, b = theta1
    return np.array([-a * a + 0.5 * a * b + a, -b * b + 0.5 * a * b + b]) + offset


def _nash_intermittent(p):
    dwell = DwellParams(p["N0"], p["eta1"])
    act = ActivationParams(p["T0"], p["eta2"], {2, 3, 4})
    check_budget(dwell, act)
    logic = GreedySwitching(dwell, act, stable=(1,), unstable=(2, 3, 4), seed=p["seed"])
    mixer = Selector.seeded_uniform(p["seed"])

    def field(x, sig):
        return np.array(_UPDATES[int(round(x[2]))]) * sig.xi

    decision = logic_decision(2, logic, field, ("u_hat0", "u_hat1", "mode", "tau1", "tau2"))

    def plant_flow(theta, u):
        A, B = switched_matrices(mixer.pick_scalar(0.0, 1.0, theta, b"plant"))
        out = np.empty(4)
        out[0:2] = A @ theta[0:2] + B * u[0]
        out[2:4] = A @ theta[2:4] + B * u[1]
        return out

    offset = p["payoff_offset"]
    plant = DynamicPlant(4, plant_flow, lambda theta, u: nash_payoffs(theta[0::2], offset),
                         ("theta1_1", "theta1_2", "theta2_1", "theta2_2"))
    dither = DitherParams.from_omega(p["frequency"], p["dither_amplitude"])
    filt = FilterParams(p["filter_gain"], 1.0, p["lambda_xi"])
    system, layout = assemble_loop(decision, plant, dither, filt,
                                   LoopConfig(k=p["gain"], output_mode="per_agent"))
    u0 = np.asarray(p["initial_input"])
    x0 = np.concatenate([u0, [1.0, dwell.N0, act.T0], np.zeros(2), initial_mu(2),
                         [u0[0], 0.0, u0[1], 0.0]])
    config = SolverConfig(h=p["step"], T_max=p["horizon"], J_max=1000)
    return system, x0, config, {"optimum": [2 / 3, 2 / 3], "decision_coords": [0, 1], "mode_coord": 2}


register(ScenarioSpec(
    name="nash_intermittent",
    description="Two players with switching linear plants seek a Nash point while updates are intermittently frozen.",
    topic="switching",
    params={
        "eta2": Param(0.3, CHOSEN, "fraction of time the update pattern may be degraded"),
        "T0": Param(1.0, CHOSEN),
        "N0": Param(1.0, CHOSEN),
        "eta1": Param(1.0, CHOSEN),
        "gain": Param(0.05, CHOSEN, "time-scale separation k between plant and seeking loop"),
        "frequency": Param((6.0, 8.0), CHOSEN, "dither runs at gain * frequency in plant time"),
        "dither_amplitude": Param(0.2, CHOSEN),
        "filter_gain": Param(0.2, CHOSEN),
        "payoff_offset": Param(-4.0 / 9.0, CHOSEN, "constant c_i; zero payoff at the Nash point"),
        "lambda_xi": Param(1e3, CHOSEN),
        "initial_input": Param((0.0, 1.5), CHOSEN),
        "seed": Param(0, STRUCTURAL, "drives the plant-mode mixing and the unstable-mode picks"),
        "step": Param(0.05, CHOSEN),
        "horizon": Param(800.0, CHOSEN),
    },
    builder=_nash_intermittent,
))
