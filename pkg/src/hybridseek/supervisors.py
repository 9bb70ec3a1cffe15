"""Timers, switching monitors and hysteresis logic that shape hybrid time domains."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Collection, Sequence

import numpy as np

from .hybrid_core import ContractViolation, Fragment, HybridArc, HybridError, HybridTimeDomain, never
from .set_valued import ConvexSetDescription, Interval, Selector, interval_select


class ThresholdOrderViolation(HybridError):
    pass


class SeparationViolated(HybridError):
    pass


@dataclass(frozen=True)
class DwellParams:
    N0: float = 1.0
    eta1: float = 1.0

    def __post_init__(self):
        if self.N0 < 1 or not self.eta1 > 0:
            raise ContractViolation("need N0 >= 1 and eta1 > 0")


@dataclass(frozen=True)
class ActivationParams:
    T0: float
    eta2: float
    unstable_modes: frozenset = frozenset()

    def __post_init__(self):
        if self.T0 < 0 or not 0 <= self.eta2 < 1:
            raise ContractViolation("need T0 >= 0 and 0 <= eta2 < 1")
        object.__setattr__(self, "unstable_modes", frozenset(self.unstable_modes))


def dwell_time_automaton(p: DwellParams, sel: Selector) -> Fragment:
    """tau1' in [0, eta1] on [0, N0]; tau1+ = tau1 - 1 on [1, N0]."""
    N0, eta1 = float(p.N0), float(p.eta1)
    rates = Interval(0.0, eta1)

    def flow(x, ext=None):
        return np.array([interval_select(rates, sel, x)])

    def flow_margin(x, ext=None):
        return min(x[0], N0 - x[0])

    def jump(x, ext=None):
        return np.array([x[0] - 1.0])

    def jump_margin(x, ext=None):
        return min(x[0] - 1.0, N0 - x[0])

    return Fragment(1, flow, flow_margin, jump, jump_margin, ("tau1",))


def _pair_counts_ok(times: np.ndarray, eta1: float, N0: float, tol: float) -> bool:
    m = times.size
    if m == 0:
        return True
    # jumps a..b (1-based, a <= b) lie in [T_a, T_b]: need (b - a + 1) <= eta1 (T_b - T_a) + N0
    idx = np.arange(m)
    for a in range(m):
        count = idx[a:] - a + 1
        span = times[a:] - times[a]
        if np.any(count > eta1 * span + N0 + tol):
            return False
    return True


def adt_verify(domain, p: DwellParams, tol: float = 1e-9) -> bool:
    """Average dwell-time bound j - i <= eta1 (t - s) + N0 over all domain pairs."""
    if isinstance(domain, HybridArc):
        domain = domain.domain
    times = domain.jump_times() if isinstance(domain, HybridTimeDomain) else np.asarray(domain, float)
    return _pair_counts_ok(np.sort(times), float(p.eta1), float(p.N0), tol)


def activation_monitor(p: ActivationParams, q_dynamics: Fragment | None = None,
                       sel: Selector | None = None, mode_index: int = 0) -> Fragment:
    """tau2' in [0, eta2] - 1{q unstable} on [0, T0]; tau2+ = tau2.

    The state is (tau2, *q_state). q is read from the mode fragment's state
    at mode_index (or from ext when no fragment is given). At tau2 = T0 the
    selected rate is clamped so tau2 saturates instead of leaving [0, T0].
    """
    sel = sel or Selector.max_rate()
    T0, eta2 = float(p.T0), float(p.eta2)
    unstable = p.unstable_modes
    qd = q_dynamics.dim if q_dynamics is not None else 0
    rates = Interval(0.0, eta2)

    def mode(x, ext):
        if q_dynamics is not None:
            return x[1 + mode_index]
        return ext

    def tau_rate(x, ext):
        r = interval_select(rates, sel, x)
        if mode(x, ext) in unstable:
            r -= 1.0
        if x[0] >= T0 and r > 0:
            r = 0.0
        return r

    def flow(x, ext=None):
        out = np.empty(1 + qd)
        out[0] = tau_rate(x, ext)
        if qd:
            out[1:] = q_dynamics.flow(x[1:], ext)
        return out

    def flow_margin(x, ext=None):
        m = min(x[0], T0 - x[0])
        if qd:
            m = min(m, q_dynamics.flow_margin(x[1:], ext))
        return m

    def jump(x, ext=None):
        out = np.array(x, dtype=float)
        if qd:
            out[1:] = q_dynamics.jump(x[1:], ext)
        return out

    def jump_margin(x, ext=None):
        if not qd:
            return never(x)
        return min(x[0], T0 - x[0], q_dynamics.jump_margin(x[1:], ext))

    def project(x, ext=None):
        # only the top saturates; running out of budget must show up as leaving [0, T0]
        if x[0] > T0:
            y = np.array(x, dtype=float)
            y[0] = T0
            return y
        return x

    names = ("tau2",) + (q_dynamics.names if q_dynamics is not None else ())
    return Fragment(1 + qd, flow, flow_margin, jump, jump_margin, names, project)


def activation_verify(q_arc, p: ActivationParams, tol: float = 1e-9) -> bool:
    """Check total unstable time over every [s, t] against T0 + eta2 (t - s).

    q_arc is a HybridArc whose first state component is the mode, or a pair
    (breakpoint times, mode on each segment).
    """
    if isinstance(q_arc, HybridArc):
        times, modes = _mode_segments(q_arc)
    else:
        times, modes = q_arc
        times = np.asarray(times, dtype=float)
        modes = list(modes)
    if times.size < 2:
        return True
    unstable = np.array([m in p.unstable_modes for m in modes], dtype=float)
    dt = np.diff(times)
    cum = np.concatenate([[0.0], np.cumsum(unstable * dt)])
    g = cum - p.eta2 * times
    # worst window: max over k >= l of g_k - g_l, attained at breakpoints
    worst = np.max(g - np.minimum.accumulate(g))
    return bool(worst <= p.T0 + tol)


def _mode_segments(arc: HybridArc):
    times = []
    modes = []
    for ts, xs in zip(arc.times, arc.states):
        if ts[-1] > ts[0]:
            times.append(float(ts[0]))
            modes.append(_as_mode(xs[0, 0]))
    end = float(arc.times[-1][-1])
    times.append(end)
    return np.array(times), modes


def _as_mode(v):
    r = round(float(v))
    return r if abs(r - v) < 1e-9 else float(v)


def periodic_reset_timer(T: float) -> Fragment:
    if not T > 0:
        raise ContractViolation("period must be positive")
    return Fragment(
        1,
        lambda x, ext=None: np.array([1.0]),
        lambda x, ext=None: min(x[0], T - x[0]),
        lambda x, ext=None: np.array([0.0]),
        lambda x, ext=None: x[0] - T,
        ("timer",),
    )


@dataclass(frozen=True)
class HysteresisSets:
    """Margins of C0, C1, D0, D1 as functions of the decision point u."""

    J: Callable
    J_star: float
    c0: float
    c10: float

    def gap(self, u) -> float:
        return float(self.J(u)) - self.J_star

    def C0(self, u):
        return self.c0 - self.gap(u)

    def C1(self, u):
        return self.gap(u) - self.c10

    def D0(self, u):
        return self.gap(u) - self.c0

    def D1(self, u):
        return self.c10 - self.gap(u)

    def flow_margin(self, u, z: int) -> float:
        return self.C0(u) if z == 0 else self.C1(u)

    def jump_margin(self, u, z: int) -> float:
        return self.D0(u) if z == 0 else self.D1(u)


def hysteresis_sets(J: Callable, J_star: float, c0: float, c10: float) -> HysteresisSets:
    """Mode 0 (near the optimum) flows while J - J* <= c0; mode 1 while J - J* >= c10."""
    if not c0 > c10 > 0:
        raise ThresholdOrderViolation(f"need c0 > c10 > 0, got c0={c0}, c10={c10}")
    return HysteresisSets(J, float(J_star), float(c0), float(c10))


def margin_check(lambda_s: float, lambda_u: float, chi: float, eta1: float, eta2: float) -> bool:
    if not (lambda_s > 0 and lambda_u > 0 and chi >= 1):
        raise ContractViolation("need lambda_s > 0, lambda_u > 0, chi >= 1")
    return lambda_s > eta1 * math.log(chi) + eta2 * (lambda_s + lambda_u)


def slow_drift(eta3: float, set_Q: ConvexSetDescription | None = None,
               sel: Selector | None = None, dim: int = 2,
               velocity: Callable | None = None) -> Fragment:
    """q' in eta3 * ball, q+ in q + eta3 * ball, kept in set_Q.

    velocity(q) may supply a deterministic selection (for instance a slow
    rotation); its norm must not exceed eta3.
    """
    if eta3 < 0:
        raise ContractViolation("eta3 must be non-negative")
    sel = sel or Selector.seeded_uniform()
    if set_Q is not None:
        dim = set_Q.dim

    def flow(q, ext=None):
        if eta3 == 0:
            return np.zeros(dim)
        if velocity is not None:
            v = np.asarray(velocity(q), dtype=float)
            if np.linalg.norm(v) > eta3 * (1 + 1e-9):
                raise ContractViolation("drift velocity exceeds eta3")
            return v
        return eta3 * sel.pick_ball(dim, q, salt=b"drift")

    def flow_margin(q, ext=None):
        return set_Q.margin(q) if set_Q is not None else math.inf

    def jump(q, ext=None):
        if eta3 == 0:
            return np.array(q, dtype=float)
        return np.asarray(q, dtype=float) + eta3 * sel.pick_ball(dim, q, salt=b"drift-jump")

    return Fragment(dim, flow, flow_margin, jump, lambda q, ext=None: never(q),
                    tuple(f"q{i}" for i in range(dim)))


def rotating_drift(center, radius: float, frequency: float, phase: float = 0.0) -> Fragment:
    """Minimizer moving on a circle: q' = frequency * R0 (q - center); speed radius*frequency."""
    center = np.asarray(center, dtype=float)
    eta3 = abs(radius * frequency)

    def velocity(q):
        d = np.asarray(q, dtype=float) - center
        return frequency * np.array([-d[1], d[0]])

    return slow_drift(eta3 * (1 + 1e-6), None, Selector.max_rate(), 2, velocity)


# ---------------------------------------------------------------- obstacle avoidance

@dataclass(frozen=True)
class ObstaclePartition:
    """Mode regions for steering around a diamond obstacle B(p0, rho).

    L1 = La1 u Lb1 and L2 = La2 u Lb2 are unions of half-planes through the
    obstacle corners; Jhat_q = -J + B_q blows up at the boundary of L_q.
    """

    p0: np.ndarray
    rho: float
    chi: float
    lam: float
    J: Callable

    def _halfplanes(self, u):
        x, y = float(u[0]) - self.p0[0], float(u[1]) - self.p0[1]
        c = 2.0 * self.rho * math.sqrt(2.0)
        s2 = math.sqrt(2.0)
        # signed distances (>0 inside) to the four lines bounding the diamond
        la1 = (-(x + y) - c) / s2
        lb1 = ((x - y) - c) / s2
        la2 = ((y - x) - c) / s2
        lb2 = ((x + y) - c) / s2
        return la1, lb1, la2, lb2

    def L_margin(self, u, q: int) -> float:
        la1, lb1, la2, lb2 = self._halfplanes(u)
        # union of the two half-planes
        return max(la1, lb1) if q == 1 else max(la2, lb2)

    def diamond_margin(self, u) -> float:
        d = abs(float(u[0]) - self.p0[0]) + abs(float(u[1]) - self.p0[1])
        return 2.0 * self.rho * math.sqrt(2.0) - d

    def region_distance(self, u, q: int) -> float:
        """Euclidean distance from u to the complement of L_q (0 outside L_q).

        The complement is a quadrant because the two bounding lines are
        orthogonal, so the distance combines the two positive parts.
        """
        la1, lb1, la2, lb2 = self._halfplanes(u)
        a, b = (la1, lb1) if q == 1 else (la2, lb2)
        return math.hypot(max(a, 0.0), max(b, 0.0))

    def barrier(self, u, q: int) -> float:
        # 1/L_margin would put a ridge on the bisector below the apex
        d = self.region_distance(u, q)
        return 1.0 / d if d > 0 else math.inf

    def Jhat(self, u, q: int) -> float:
        return -float(self.J(u)) + self.barrier(u, q)

    def flow_margin(self, u, q: int) -> float:
        """Margin of C_{u,q}: L_q and Jhat_q <= chi * Jhat_{3-q}."""
        a, b = self.Jhat(u, q), self.Jhat(u, 3 - q)
        m = self.L_margin(u, q)
        if math.isinf(a):
            return -math.inf
        return min(m, self.chi * b - a) if not math.isinf(b) else m

    def jump_margin(self, u, q: int) -> float:
        """Margin of D_{u,q}: Jhat_q >= (chi - lam) * Jhat_{3-q}, with the other mode available."""
        a, b = self.Jhat(u, q), self.Jhat(u, 3 - q)
        if math.isinf(b):
            return -math.inf
        if math.isinf(a):
            return math.inf
        return a - (self.chi - self.lam) * b


def obstacle_partition(p0, rho: float, chi: float, lam: float, J: Callable,
                       u_star=None, delta: float = 0.0) -> ObstaclePartition:
    p0 = np.asarray(p0, dtype=float)
    if not (rho > 0 and chi > 1 and 0 < lam < chi - 1):
        raise ContractViolation("need rho > 0, chi > 1, 0 < lam < chi - 1")
    part = ObstaclePartition(p0, float(rho), float(chi), float(lam), J)
    if u_star is not None:
        u_star = np.asarray(u_star, dtype=float)
        if np.linalg.norm(u_star - p0) <= 2.0 * rho * math.sqrt(2.0) + delta:
            raise SeparationViolated("optimizer too close to the obstacle")
        if part.L_margin(u_star, 1) <= 0 or part.L_margin(u_star, 2) <= 0:
            raise SeparationViolated("optimizer must lie inside both mode regions")
    return part
