"""Hybrid systems {C, F, D, G}, their solutions on hybrid time domains, and helpers.

Sets are given as signed margins (>= 0 inside) so crossings can be located by
bisection. Set-valued maps are simulated through a selection bound inside the
flow and jump functions.
"""

from __future__ import annotations

import contextvars
import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Vector = np.ndarray
Margin = Callable[[Vector], float]
Field = Callable[[Vector], Vector]

# seed of the simulate() call currently running; seeded selectors mix it in
_ACTIVE_SEED: contextvars.ContextVar[int] = contextvars.ContextVar("hybridseek_seed", default=0)


def active_seed() -> int:
    return _ACTIVE_SEED.get()


class HybridError(Exception):
    """Base class for errors raised by the engine."""


class NoDynamicsFromPoint(HybridError):
    pass


class OutOfDomain(HybridError):
    pass


class ContractViolation(HybridError):
    pass


class ZenoWarning(UserWarning):
    pass


class JumpPolicy(str, enum.Enum):
    JUMP_FIRST = "jump-first"
    FLOW_FIRST = "flow-first"


class Termination(str, enum.Enum):
    HORIZON_TIME = "HorizonTime"
    HORIZON_JUMPS = "HorizonJumps"
    FLOW_SET_EXIT = "FlowSetExit"
    NO_DYNAMICS = "NoDynamicsFromPoint"


@dataclass(frozen=True)
class HybridTimeDomain:
    """Ordered intervals (t_start, t_end, j) with j = 0, 1, 2, ..."""

    intervals: tuple[tuple[float, float, int], ...]

    def __post_init__(self):
        if not self.intervals:
            raise ContractViolation("a hybrid time domain needs at least one interval")
        t0, _, j0 = self.intervals[0]
        if t0 != 0.0 or j0 != 0:
            raise ContractViolation("domain must start at (0, 0)")
        prev = None
        for ts, te, j in self.intervals:
            if te < ts:
                raise ContractViolation(f"interval {j} ends before it starts")
            if prev is not None and (ts != prev[1] or j != prev[2] + 1):
                raise ContractViolation(f"interval {j} does not continue interval {prev[2]}")
            prev = (ts, te, j)

    @property
    def n_jumps(self) -> int:
        return len(self.intervals) - 1

    @property
    def t_final(self) -> float:
        return self.intervals[-1][1]

    def jump_times(self) -> np.ndarray:
        return np.array([iv[1] for iv in self.intervals[:-1]], dtype=float)

    def contains(self, t: float, j: int, tol: float = 0.0) -> bool:
        if j < 0 or j >= len(self.intervals):
            return False
        ts, te, _ = self.intervals[j]
        return ts - tol <= t <= te + tol


@dataclass(frozen=True)
class HybridArc:
    """Samples of a solution, one (times, states) block per flow interval.

    The pre-jump value of jump k is the last sample of interval k and the
    post-jump value is the first sample of interval k + 1.
    """

    times: tuple[np.ndarray, ...]
    states: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.times) != len(self.states) or not self.times:
            raise ContractViolation("arc needs matching, non-empty time/state blocks")
        dim = None
        for t, x in zip(self.times, self.states):
            if t.ndim != 1 or x.ndim != 2 or len(t) != len(x) or len(t) == 0:
                raise ContractViolation("each interval needs aligned 1-d times and 2-d states")
            if np.any(np.diff(t) < 0):
                raise ContractViolation("sample times must be non-decreasing")
            if dim is None:
                dim = x.shape[1]
            elif x.shape[1] != dim:
                raise ContractViolation("state dimension changes along the arc")
        for t in self.times:
            t.setflags(write=False)
        for x in self.states:
            x.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.states[0].shape[1]

    @property
    def n_jumps(self) -> int:
        return len(self.times) - 1

    @property
    def domain(self) -> HybridTimeDomain:
        return HybridTimeDomain(tuple(
            (float(t[0]), float(t[-1]), j) for j, t in enumerate(self.times)))

    def jump_times(self) -> np.ndarray:
        return np.array([t[-1] for t in self.times[:-1]], dtype=float)

    def jumps(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(x_pre, x_post) for each jump."""
        return [(self.states[k][-1], self.states[k + 1][0]) for k in range(self.n_jumps)]

    def final_state(self) -> np.ndarray:
        return self.states[-1][-1]

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All samples stacked: (t, j, x)."""
        t = np.concatenate(self.times)
        j = np.concatenate([np.full(len(ts), k, dtype=np.int64) for k, ts in enumerate(self.times)])
        x = np.concatenate(self.states, axis=0)
        return t, j, x

    def total_flow_time(self) -> float:
        return float(sum(t[-1] - t[0] for t in self.times))


def arc_from_blocks(times: Sequence[Sequence[float]], states: Sequence[Sequence[Sequence[float]]]) -> HybridArc:
    return HybridArc(tuple(np.asarray(t, dtype=float) for t in times),
                     tuple(np.atleast_2d(np.asarray(x, dtype=float)) for x in states))


@dataclass(frozen=True)
class FlowKernel:
    """Compiled versions of a system's data used by the fast stepping loop.

    flow(x, out, params) writes F(x) into out; flow_margin(x, params) and
    jump_margin(x, params) return floats; project(x, params) corrects x in
    place after each step. params is a float array shared by all four.
    """

    flow: Callable
    flow_margin: Callable
    jump_margin: Callable
    project: Callable
    params: np.ndarray = field(default_factory=lambda: np.zeros(1))


@dataclass(frozen=True)
class HybridSystem:
    dim: int
    flow_margin: Margin
    flow: Field
    jump_margin: Margin
    jump: Field
    project: Optional[Callable[[Vector], Vector]] = None
    names: Optional[tuple[str, ...]] = None
    kernel: Optional[FlowKernel] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ContractViolation("dim must be positive")
        if self.names is not None and len(self.names) != self.dim:
            raise ContractViolation("names must match dim")

    def state_names(self) -> tuple[str, ...]:
        return self.names if self.names is not None else tuple(f"x{i}" for i in range(self.dim))

    def with_kernel(self, kernel: Optional[FlowKernel]) -> "HybridSystem":
        return HybridSystem(self.dim, self.flow_margin, self.flow, self.jump_margin, self.jump,
                            self.project, self.names, kernel)


def never(_x) -> float:
    """Margin of the empty set."""
    return -math.inf


def always(_x) -> float:
    return math.inf


def hold(x):
    return np.array(x, dtype=float)


@dataclass(frozen=True)
class SolverConfig:
    h: float = 1e-2
    T_max: float = 10.0
    J_max: int = 1000
    jump_policy: JumpPolicy = JumpPolicy.JUMP_FIRST
    tol_mem: float = 1e-9
    tol_event: float = 1e-10
    rng_seed: int = 0
    record_every: int = 1
    use_kernel: bool = True

    def __post_init__(self):
        object.__setattr__(self, "jump_policy", JumpPolicy(self.jump_policy))
        if not self.h > 0:
            raise ContractViolation("h must be positive")
        if not self.tol_event < self.h:
            raise ContractViolation("tol_event must be smaller than h")
        if self.J_max < 0 or self.T_max < 0:
            raise ContractViolation("J_max and T_max must be non-negative")
        if self.record_every < 1:
            raise ContractViolation("record_every must be at least 1")

    def replace(self, **changes) -> "SolverConfig":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return SolverConfig(**values)


@dataclass(frozen=True)
class Solution:
    arc: HybridArc
    termination: Termination
    zeno_warnings: int = 0


def rk4_step(system: HybridSystem, x: Vector, h: float) -> Vector:
    f = system.flow
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    xn = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if system.project is not None:
        xn = system.project(xn)
    return xn


class _Recorder:
    def __init__(self):
        self.t_blocks: list[np.ndarray] = []
        self.x_blocks: list[np.ndarray] = []
        self._t: list = []
        self._x: list = []

    def add(self, t, x):
        self._t.append(np.atleast_1d(np.asarray(t, dtype=float)))
        self._x.append(np.atleast_2d(np.asarray(x, dtype=float)))

    def close(self):
        self.t_blocks.append(np.concatenate(self._t))
        self.x_blocks.append(np.concatenate(self._x, axis=0))
        self._t, self._x = [], []

    def arc(self) -> HybridArc:
        return HybridArc(tuple(self.t_blocks), tuple(self.x_blocks))


class _Integrator:
    """Flow-phase machinery shared by the pure-Python and compiled paths."""

    def __init__(self, system: HybridSystem, config: SolverConfig):
        self.sys = system
        self.cfg = config
        self.tol = config.tol_mem
        self.watch_jump = config.jump_policy is JumpPolicy.JUMP_FIRST

    def event(self, x) -> bool:
        if self.sys.flow_margin(x) < -self.tol:
            return True
        # entry into D is detected at the true crossing so jump times land within tol_event
        return self.watch_jump and self.sys.jump_margin(x) >= 0.0

    def advance_python(self, x, t, n_steps, step_count, rec: _Recorder):
        """Take up to n_steps full steps; stop before the first step that triggers an event."""
        h = self.cfg.h
        every = self.cfg.record_every
        t0 = t
        for s in range(n_steps):
            xn = rk4_step(self.sys, x, h)
            if self.event(xn):
                return x, t, step_count, True
            step_count += 1
            t = t0 + (s + 1) * h
            x = xn
            if step_count % every == 0:
                rec.add(t, x)
        return x, t, step_count, False

    def advance_kernel(self, x, t, n_steps, step_count, rec: _Recorder):
        from . import _kernel

        res = _kernel.advance(self.sys.kernel, x, t, self.cfg.h, n_steps, step_count,
                              self.cfg.record_every, self.tol, self.watch_jump)
        x, t, step_count, hit, rec_t, rec_x = res
        if len(rec_t):
            rec.add(rec_t, rec_x)
        return x, t, step_count, hit

    def locate(self, x, t, h_step, use_kernel=False):
        """Bisect the step size at which the event first occurs.

        Returns (lo, x_lo, hi, x_hi): no event at lo, event at hi.
        """
        if use_kernel:
            from . import _kernel

            lo, x_lo, hi, x_hi = _kernel.locate(self.sys.kernel, x, h_step, self.tol,
                                                self.cfg.tol_event, self.watch_jump)
        else:
            lo, hi = 0.0, h_step
            x_lo, x_hi = x, rk4_step(self.sys, x, h_step)
            while hi - lo > self.cfg.tol_event:
                mid = 0.5 * (lo + hi)
                xm = rk4_step(self.sys, x, mid)
                if self.event(xm):
                    hi, x_hi = mid, xm
                else:
                    lo, x_lo = mid, xm
        return (lo, x_lo) + self._secant(x, lo, x_lo, hi, x_hi)

    def _secant(self, x, lo, x_lo, hi, x_hi):
        # without this each jump overshoots by up to tol_event and the error piles up over jumps
        if not self.watch_jump:
            return hi, x_hi
        m_lo, m_hi = self.sys.jump_margin(x_lo), self.sys.jump_margin(x_hi)
        if not (m_lo < 0.0 <= m_hi) or not math.isfinite(m_hi - m_lo):
            return hi, x_hi
        s = lo + (hi - lo) * (-m_lo) / (m_hi - m_lo)
        x_s = rk4_step(self.sys, x, s)
        if self.sys.jump_margin(x_s) >= -self.tol and self.sys.flow_margin(x_s) >= -self.tol:
            return s, x_s
        return hi, x_hi


def _check_vector(x, dim, what):
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ContractViolation(f"{what} has shape {x.shape}, expected ({dim},)")
    if not np.all(np.isfinite(x)):
        raise ContractViolation(f"{what} is not finite")
    return x


def simulate(system: HybridSystem, x0, config: SolverConfig | None = None) -> Solution:
    """Compute one solution of the hybrid system from x0.

    Flows are integrated with fixed-step RK4. Leaving C or entering D inside a
    step is located by bisection on the step size down to tol_event.
    """
    config = config or SolverConfig()
    x = _check_vector(x0, system.dim, "x0").copy()
    tol = config.tol_mem
    if system.flow_margin(x) < -tol and system.jump_margin(x) < -tol:
        raise NoDynamicsFromPoint("initial state is in neither the flow set nor the jump set")

    token = _ACTIVE_SEED.set(int(config.rng_seed))
    try:
        return _run(system, x, config)
    finally:
        _ACTIVE_SEED.reset(token)


def _run(system: HybridSystem, x: np.ndarray, config: SolverConfig) -> Solution:
    tol = config.tol_mem
    h = config.h
    T_max = config.T_max
    integ = _Integrator(system, config)
    use_kernel = config.use_kernel and system.kernel is not None
    advance = integ.advance_kernel if use_kernel else integ.advance_python

    rec = _Recorder()
    rec.add(0.0, x)
    t = 0.0
    j = 0
    step_count = 0
    last_jump_t = None
    zeno = 0
    termination = None

    while termination is None:
        in_c = system.flow_margin(x) >= -tol
        in_d = system.jump_margin(x) >= -tol
        if in_d and (config.jump_policy is JumpPolicy.JUMP_FIRST or not in_c):
            if j >= config.J_max:
                termination = Termination.HORIZON_JUMPS
                break
            x_post = _check_vector(system.jump(x), system.dim, "jump value")
            rec.close()
            if last_jump_t is not None and t - last_jump_t < 10 * config.tol_event:
                zeno += 1
                if zeno == 1:
                    warnings.warn(f"inter-jump flow time below {10 * config.tol_event:g} s "
                                  f"at t={t:.6g}, j={j}", ZenoWarning, stacklevel=3)
            last_jump_t = t
            j += 1
            x = x_post
            rec.add(t, x)
            step_count = 0
            continue
        if not in_c:
            termination = Termination.NO_DYNAMICS
            break
        remaining = T_max - t
        if remaining <= 1e-12 * max(1.0, T_max):
            termination = Termination.HORIZON_TIME
            break

        n_full = int(math.floor(remaining / h * (1 + 1e-12)))
        hit = False
        if n_full > 0:
            x, t, step_count, hit = advance(x, t, n_full, step_count, rec)
        if hit:
            h_step = h
        else:
            h_step = T_max - t
            if h_step <= 1e-12 * max(1.0, T_max):
                # back to the top so a jump available at the horizon is still taken
                continue
            x_new = rk4_step(system, x, h_step)
            if not integ.event(x_new):
                t, x = T_max, x_new
                rec.add(t, x)
                continue
        lo, x_lo, hi, x_hi = integ.locate(x, t, h_step, use_kernel)
        if system.flow_margin(x_hi) >= -tol or system.jump_margin(x_hi) >= -tol:
            t, x = t + hi, x_hi
        elif system.jump_margin(x_lo) >= -tol:
            t, x = t + lo, x_lo
        else:
            # flow set left with no jump available
            t, x = t + lo, x_lo
            termination = Termination.FLOW_SET_EXIT
            break
        rec.add(t, x)

    if rec._t and rec._t[-1][-1] != t:
        rec.add(t, x)
    rec.close()
    return Solution(rec.arc(), termination, zeno)


def sample_at(arc: HybridArc, t: float, j: int) -> np.ndarray:
    """State at (t, j) by linear interpolation within interval j."""
    if j < 0 or j >= len(arc.times):
        raise OutOfDomain(f"jump index {j} not in domain")
    ts = arc.times[j]
    xs = arc.states[j]
    if t < ts[0] or t > ts[-1]:
        raise OutOfDomain(f"t={t} outside interval {j} = [{ts[0]}, {ts[-1]}]")
    k = int(np.searchsorted(ts, t, side="right")) - 1
    if k >= len(ts) - 1:
        return xs[-1].copy()
    t0, t1 = ts[k], ts[k + 1]
    if t1 == t0:
        return xs[k + 1].copy()
    w = (t - t0) / (t1 - t0)
    return (1.0 - w) * xs[k] + w * xs[k + 1]


def unit_ball_point(dim: int, u: np.ndarray) -> np.ndarray:
    """Map dim + 1 uniforms in (0, 1) to a point uniformly distributed in the unit ball."""
    normals = np.empty(dim)
    for i in range(dim):
        a = u[i]
        b = u[(i + 1) % dim] if dim > 1 else u[dim]
        normals[i] = math.sqrt(-2.0 * math.log(a)) * math.cos(2.0 * math.pi * b)
    norm = float(np.linalg.norm(normals))
    if norm == 0.0:
        return np.zeros(dim)
    radius = u[dim] ** (1.0 / dim)
    return normals / norm * radius


def inflate(system: HybridSystem, rho: float, sigma: Callable[[Vector], float],
            selector=None) -> HybridSystem:
    """Inflate C, D by rho*sigma(x) and perturb F, G by rho*sigma(x)*d, |d| <= 1.

    The returned system follows one selection of the inflated maps; d comes
    from the selector (seeded-uniform by default).
    """
    if rho < 0:
        raise ContractViolation("rho must be non-negative")
    from .set_valued import Selector

    sel = selector if selector is not None else Selector.seeded_uniform(seed=1)
    dim = system.dim

    def c_margin(x):
        return system.flow_margin(x) + rho * sigma(x)

    def d_margin(x):
        return system.jump_margin(x) + rho * sigma(x)

    def flow(x):
        base = system.flow(x)
        if rho == 0:
            return base
        return base + rho * sigma(x) * sel.pick_ball(dim, x, salt=b"flow")

    def jump(x):
        base = system.jump(x)
        if rho == 0:
            return base
        return base + rho * sigma(x) * sel.pick_ball(dim, x, salt=b"jump")

    return HybridSystem(dim, c_margin, flow, d_margin, jump, system.project, system.names)


def empirical_average(f: Callable[[Vector, float], Vector], period: float, x,
                      quad_points: int = 256) -> np.ndarray:
    """Average of f(x, tau) over tau in [0, period] by the composite trapezoid rule."""
    if not period > 0:
        raise ContractViolation("period must be positive")
    if quad_points < 8:
        raise ContractViolation("quad_points must be at least 8")
    taus = np.linspace(0.0, period, quad_points + 1)
    vals = np.array([np.atleast_1d(np.asarray(f(x, tau), dtype=float)) for tau in taus])
    return np.trapezoid(vals, taus, axis=0) / period


@dataclass(frozen=True)
class Fragment:
    """Partial hybrid data over a block of states, driven by an external signal.

    Each callable takes (x_block, ext) where ext is whatever the composing
    system passes in (often the full state). Empty jump sets use `never`.
    """

    dim: int
    flow: Callable
    flow_margin: Callable
    jump: Callable
    jump_margin: Callable
    names: tuple[str, ...] = ()
    project: Optional[Callable] = None
    meta: dict = field(default_factory=dict)

    def as_system(self, ext=None) -> HybridSystem:
        """Close the fragment with a fixed external signal."""
        return HybridSystem(
            self.dim,
            lambda x: self.flow_margin(x, ext),
            lambda x: np.asarray(self.flow(x, ext), dtype=float),
            lambda x: self.jump_margin(x, ext),
            lambda x: np.asarray(self.jump(x, ext), dtype=float),
            (lambda x: self.project(x, ext)) if self.project is not None else None,
            self.names or None,
        )
