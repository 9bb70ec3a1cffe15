"""Extremum-seeking building blocks and closed-loop assembly.

State ordering of an assembled loop is (x_uz, xi, mu[, theta]); with the
growing-timer style it is (x_uz, tau[, theta]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .hybrid_core import ContractViolation, Fragment, HybridError, HybridSystem

R0 = np.array([[0.0, 1.0], [-1.0, 0.0]])


class DimensionUnsupported(HybridError):
    pass


@dataclass(frozen=True, eq=False)
class DitherParams:
    n: int
    eps_a: float
    eps_omega: float
    kappa: np.ndarray

    def __post_init__(self):
        kappa = np.atleast_1d(np.asarray(self.kappa, dtype=float))
        object.__setattr__(self, "kappa", kappa)
        if kappa.size != self.n:
            raise ContractViolation("need one kappa per input")
        if not (self.eps_a > 0 and self.eps_omega > 0):
            raise ContractViolation("eps_a and eps_omega must be positive")
        if np.any(kappa <= 0):
            raise ContractViolation("kappa entries must be positive")
        if len(set(kappa.tolist())) != kappa.size:
            raise ContractViolation("kappa entries must be distinct")

    @classmethod
    def from_omega(cls, omega: Sequence[float], eps_a: float) -> "DitherParams":
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        return cls(omega.size, eps_a, 1.0, omega)

    @property
    def omega(self) -> np.ndarray:
        return self.kappa / self.eps_omega


@dataclass(frozen=True)
class FilterParams:
    k_f: float = 1.0
    eps_f: float = 1.0
    lambda_xi: float = 1e3

    def __post_init__(self):
        if not (self.k_f > 0 and self.eps_f > 0 and self.lambda_xi > 0):
            raise ContractViolation("filter parameters must be positive")


@dataclass(frozen=True)
class LoopConfig:
    """Interconnection options.

    filter_style: "lowpass", "hybrid", "custom" or "none" (growing timer).
    output_mode: "scalar" (one y for all inputs), "per_agent" (y_i drives
    xi_i) or "stacked" (one full gradient estimate per output).
    """

    k: float = 1.0
    delta: float = 0.0
    filter_style: str = "lowpass"
    output_mode: str = "scalar"
    n_outputs: int = 1
    gamma: Optional[Callable] = None
    filter_fn: Optional[Callable] = None
    xi_dim: Optional[int] = None
    xi_jump: Optional[Callable] = None
    lambda_theta: float = 1e3
    sphere_band: float = 1e-6
    plant_reads_state: bool = False

    def __post_init__(self):
        if not self.k > 0 or self.delta < 0:
            raise ContractViolation("need k > 0 and delta >= 0")
        if self.filter_style not in ("lowpass", "hybrid", "custom", "none"):
            raise ContractViolation(f"unknown filter style {self.filter_style!r}")
        if self.output_mode not in ("scalar", "per_agent", "stacked"):
            raise ContractViolation(f"unknown output mode {self.output_mode!r}")
        if self.filter_style == "custom" and (self.filter_fn is None or self.xi_dim is None):
            raise ContractViolation("custom filters need filter_fn and xi_dim")


def phi_matrix(dither: Union[DitherParams, Sequence[float]]) -> np.ndarray:
    omega = dither.omega if isinstance(dither, DitherParams) else np.atleast_1d(
        np.asarray(dither, dtype=float))
    n = omega.size
    out = np.zeros((2 * n, 2 * n))
    for i, w in enumerate(omega):
        out[2 * i:2 * i + 2, 2 * i:2 * i + 2] = w * R0
    return out


def extraction_matrix(n: int) -> np.ndarray:
    if n < 1:
        raise ContractViolation("n must be at least 1")
    out = np.zeros((n, 2 * n))
    out[np.arange(n), 2 * np.arange(n)] = 1.0
    return out


def oscillator_flow(mu, dither: DitherParams) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    w = dither.omega
    out = np.empty_like(mu)
    out[0::2] = w * mu[1::2]
    out[1::2] = -w * mu[0::2]
    return out


def filter_flow(xi, y: float, mu, filt: FilterParams, dither: DitherParams) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    return -(filt.k_f / filt.eps_f) * (np.asarray(xi, dtype=float)
                                       - (2.0 / dither.eps_a) * y * mu[0::2])


def control_input(u_hat, mu, dither: DitherParams) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    return np.asarray(u_hat, dtype=float) + dither.eps_a * mu[0::2]


def newton_matrix(mu, dither: DitherParams) -> np.ndarray:
    """Hessian-estimate modulation built from the two cosine-phase entries mu[0], mu[2]."""
    if dither.n != 2:
        raise DimensionUnsupported("the Newton matrix is defined for two inputs")
    mu = np.asarray(mu, dtype=float)
    a = 1.0 / dither.eps_a ** 2
    m1, m3 = mu[0], mu[2]
    off = 4.0 * a * m1 * m3
    return np.array([[16.0 * a * (m1 * m1 - 0.5), off], [off, 16.0 * a * (m3 * m3 - 0.5)]])


def hessian_filter_flow(xi2, y: float, mu, k_h: float, eps_f: float,
                        dither: DitherParams) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    return -(k_h / eps_f) * (y * newton_matrix(mu, dither) @ xi2 - y * mu[0::2])


def growing_timer_dither(tau: float, dither: DitherParams) -> np.ndarray:
    return (2.0 / dither.eps_a) * np.sin(2.0 * math.pi * dither.kappa * tau)


def sphere_margin(mu, band: float = 1e-6) -> float:
    mu = np.asarray(mu, dtype=float)
    r2 = mu[0::2] ** 2 + mu[1::2] ** 2
    return band - float(np.max(np.abs(r2 - 1.0)))


def renormalize(mu: np.ndarray, guard: float = 1e-9) -> np.ndarray:
    r2 = mu[0::2] ** 2 + mu[1::2] ** 2
    if np.max(np.abs(r2 - 1.0)) <= guard:
        return mu
    r = np.sqrt(r2)
    out = mu.copy()
    out[0::2] /= r
    out[1::2] /= r
    return out


def initial_mu(n: int) -> np.ndarray:
    mu = np.zeros(2 * n)
    mu[0::2] = 1.0
    return mu


@dataclass(frozen=True)
class DynamicPlant:
    """theta' = flow(theta, u) on box |theta|_inf <= lambda_theta, output y = output(theta, u)."""

    dim: int
    flow: Callable
    output: Callable
    names: tuple[str, ...] = ()


class LoopSignals(NamedTuple):
    """What the decision dynamics may read: filter state, output, dither, applied input."""

    xi: np.ndarray
    y: Union[float, np.ndarray]
    mu: np.ndarray
    u: np.ndarray


@dataclass(frozen=True)
class LoopLayout:
    n: int
    uz: slice
    xi: slice
    mu: slice
    theta: slice
    dim: int
    names: tuple[str, ...] = field(default=())


def assemble_loop(decision: Fragment, plant: Union[Callable, DynamicPlant],
                  dither: DitherParams, filt: Optional[FilterParams] = None,
                  loop: LoopConfig = LoopConfig()) -> tuple[HybridSystem, LoopLayout]:
    """Interconnect decision dynamics, a plant and the dither/filter into one hybrid system.

    The first dither.n entries of the decision state are the nominal input u_hat.
    """
    n = dither.n
    m_uz = decision.dim
    if m_uz < n:
        raise ContractViolation("decision state must start with the n nominal inputs")
    style = loop.filter_style
    dynamic = isinstance(plant, DynamicPlant)
    if style in ("lowpass", "hybrid") and filt is None and not (style == "hybrid" and loop.filter_fn):
        raise ContractViolation(f"{style} filter requires FilterParams")

    if style == "none":
        xi_dim, mu_dim = 0, 1
    elif style == "custom":
        xi_dim, mu_dim = loop.xi_dim, 2 * n
    elif loop.output_mode == "stacked":
        xi_dim, mu_dim = n * loop.n_outputs, 2 * n
    else:
        xi_dim, mu_dim = n, 2 * n
    th_dim = plant.dim if dynamic else 0
    s_uz = slice(0, m_uz)
    s_xi = slice(m_uz, m_uz + xi_dim)
    s_mu = slice(s_xi.stop, s_xi.stop + mu_dim)
    s_th = slice(s_mu.stop, s_mu.stop + th_dim)
    dim = s_th.stop

    uz_names = decision.names or tuple([f"u_hat{i}" for i in range(n)]
                                       + [f"z{i}" for i in range(m_uz - n)])
    xi_names = tuple(f"xi{i}" for i in range(xi_dim))
    mu_names = ("tau",) if style == "none" else tuple(
        f"mu{i}_{c}" for i in range(n) for c in ("c", "s"))
    th_names = plant.names if dynamic and plant.names else tuple(f"theta{i}" for i in range(th_dim))
    names = tuple(uz_names) + xi_names + mu_names + tuple(th_names)
    layout = LoopLayout(n, s_uz, s_xi, s_mu, s_th, dim, names)

    k = loop.k
    eps_a = dither.eps_a
    omega = dither.omega
    lam_xi = filt.lambda_xi if filt is not None else math.inf
    lam_th = loop.lambda_theta
    band = loop.sphere_band
    gamma = loop.gamma
    xi_jump = loop.xi_jump
    filter_fn = loop.filter_fn
    mode = loop.output_mode
    reads_state = loop.plant_reads_state

    s_cos = slice(s_mu.start, s_mu.stop, 2)
    # mu' = omega * (mu_s, -mu_c) pairwise, as one gather and one multiply
    if style != "none":
        rot_index = np.arange(s_mu.start, s_mu.stop).reshape(-1, 2)[:, ::-1].ravel()
        rot_gain = k * np.repeat(np.asarray(omega, dtype=float), 2) * np.tile([1.0, -1.0], n)
    lowpass_gain = k * filt.k_f / filt.eps_f if filt is not None else 0.0

    def applied(x):
        if style == "none":
            return x[:n] + eps_a * np.sin(2.0 * math.pi * dither.kappa * x[s_mu][0])
        return x[:n] + eps_a * x[s_cos]

    def measure(x, u):
        if dynamic:
            return plant.output(x[s_th], u)
        if reads_state:
            return plant(u, x[s_uz])
        return plant(u)

    def signals(x):
        u = applied(x)
        return LoopSignals(x[s_xi], measure(x, u), x[s_mu], u)

    def grad_sample(y, mu, x_uz):
        dmu = mu[0::2]
        if mode == "stacked":
            g = (2.0 / eps_a) * np.kron(np.asarray(y, dtype=float), dmu)
        elif mode == "per_agent":
            y = np.atleast_1d(np.asarray(y, dtype=float))
            if y.size != n:
                y = np.repeat(y, n // y.size)
            g = (2.0 / eps_a) * y * dmu
        elif isinstance(y, float):
            g = ((2.0 / eps_a) * y) * dmu
        else:
            g = (2.0 / eps_a) * np.asarray(y, dtype=float) * dmu
        if gamma is not None:
            g = gamma(x_uz) * g
        return g

    def flow(x):
        out = np.empty(dim)
        x_uz = x[s_uz]
        sig = signals(x)
        if style == "none":
            tau = x[s_mu][0]
            ext = LoopSignals(np.asarray(sig.y, dtype=float) * growing_timer_dither(tau, dither),
                              sig.y, x[s_mu], sig.u)
            out[s_uz] = k * np.asarray(decision.flow(x_uz, ext), dtype=float)
            out[s_mu] = k / dither.eps_omega
        else:
            mu = x[s_mu]
            xi = x[s_xi]
            out[s_uz] = k * np.asarray(decision.flow(x_uz, sig), dtype=float)
            if style == "lowpass":
                out[s_xi] = -lowpass_gain * (xi - grad_sample(sig.y, mu, x_uz))
            elif style == "hybrid":
                g = grad_sample(sig.y, mu, x_uz)
                if filter_fn is not None:
                    out[s_xi] = k * np.asarray(filter_fn(x_uz, xi, g), dtype=float)
                else:
                    out[s_xi] = -k * filt.k_f * (xi - g)
            else:
                out[s_xi] = k * np.asarray(filter_fn(x_uz, xi, sig.y, mu), dtype=float)
            out[s_mu] = rot_gain * x[rot_index]
        if dynamic:
            out[s_th] = plant.flow(x[s_th], sig.u)
        return out

    def shared_margin(x):
        m = math.inf
        if xi_dim:
            m = min(m, lam_xi - float(np.max(np.abs(x[s_xi]))))
        if style != "none":
            m = min(m, sphere_margin(x[s_mu], band))
        if dynamic:
            m = min(m, lam_th - float(np.max(np.abs(x[s_th]))))
        return m

    def c_margin(x):
        if not np.all(np.isfinite(x)):
            return -math.inf
        return min(shared_margin(x), float(decision.flow_margin(x[s_uz], signals(x))))

    def d_margin(x):
        if not np.all(np.isfinite(x)):
            return -math.inf
        d = float(decision.jump_margin(x[s_uz], signals(x)))
        if d == -math.inf:
            return d
        return min(shared_margin(x), d)

    def jump(x):
        out = x.copy()
        sig = signals(x)
        out[s_uz] = np.asarray(decision.jump(x[s_uz], sig), dtype=float)
        if xi_jump is not None:
            out[s_xi] = np.asarray(xi_jump(x[s_uz], x[s_xi]), dtype=float)
        return out

    def project(x):
        y = x
        if style != "none":
            mu = renormalize(x[s_mu])
            if mu is not x[s_mu]:
                y = x.copy()
                y[s_mu] = mu
        if decision.project is not None:
            if y is x:
                y = x.copy()
            y[s_uz] = decision.project(y[s_uz], None)
        return y

    system = HybridSystem(dim, c_margin, flow, d_margin, jump, project, names)
    return system, layout


def flow_only_decision(n: int, field_fn: Callable, margin: Optional[Callable] = None,
                       names: tuple[str, ...] = ()) -> Fragment:
    """Decision dynamics without jumps: u_hat' = field_fn(u_hat, signals)."""
    from .hybrid_core import never

    return Fragment(
        dim=n,
        flow=field_fn,
        flow_margin=margin or (lambda x, ext: math.inf),
        jump=lambda x, ext: x,
        jump_margin=lambda x, ext: never(x),
        names=names,
    )


def gradient_decision(n: int, gain: float = 1.0) -> Fragment:
    """u_hat' = -gain * xi (the simplest gradient-descent decision)."""
    return flow_only_decision(n, lambda x, ext: -gain * ext.xi)
