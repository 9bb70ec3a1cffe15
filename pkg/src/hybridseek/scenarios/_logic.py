"""Mode logic shared by the intermittent-update and corrupted-measurement scenarios."""

from __future__ import annotations

import numpy as np

from ..hybrid_core import ContractViolation, Fragment
from ..set_valued import Selector
from ..supervisors import ActivationParams, DwellParams, activation_monitor, dwell_time_automaton


class GreedySwitching:
    """Block (mode, tau1, tau2): dwell-time automaton plus activation monitor.

    The switching signal is the most adversarial one the two monitors allow:
    stable modes are left as soon as the activation budget tau2 is full,
    unstable modes are held until it is exhausted. Both timers saturate at
    their upper bounds instead of leaving the flow set.
    """

    def __init__(self, dwell: DwellParams, act: ActivationParams, stable: tuple, unstable: tuple,
                 seed: int = 0):
        if not stable or not unstable:
            raise ContractViolation("need at least one stable and one unstable mode")
        N0 = float(dwell.N0)
        self.dwell = dwell
        self.act = act
        self.stable = tuple(float(m) for m in stable)
        self.unstable = tuple(float(m) for m in unstable)
        self.timer = dwell_time_automaton(dwell, Selector.custom(lambda lo, hi, x: hi if x[0] < N0 else lo))
        self.monitor = activation_monitor(act, sel=Selector.max_rate())
        self.pick = Selector.seeded_uniform(seed)

    def is_stable(self, mode: float) -> bool:
        return round(mode) in self.stable

    def flow(self, z):
        mode = round(z[0])
        return np.array([0.0, self.timer.flow(z[1:2])[0], self.monitor.flow(z[2:3], mode)[0]])

    def flow_margin(self, z):
        return min(self.timer.flow_margin(z[1:2]), self.monitor.flow_margin(z[2:3]))

    def jump_margin(self, z):
        m = self.timer.jump_margin(z[1:2])
        if self.is_stable(z[0]):
            return min(m, z[2] - self.act.T0)
        return min(m, -z[2])

    def next_mode(self, z) -> float:
        pool = self.unstable if self.is_stable(z[0]) else self.stable
        if len(pool) == 1:
            return pool[0]
        idx = min(int(self.pick.pick_scalar(0.0, len(pool), z, b"mode")), len(pool) - 1)
        return pool[idx]

    def jump(self, z):
        return np.array([self.next_mode(z), self.timer.jump(z[1:2])[0], z[2]])

    def project(self, z):
        tau1 = min(max(z[1], 0.0), float(self.dwell.N0))
        tau2 = min(max(z[2], 0.0), float(self.act.T0))
        if tau1 == z[1] and tau2 == z[2]:
            return z
        out = np.array(z, dtype=float)
        out[1], out[2] = tau1, tau2
        return out


def check_budget(dwell: DwellParams, act: ActivationParams):
    """The greedy signal needs the dwell timer recharged before each forced switch."""
    recharge = 1.0 / dwell.eta1
    if act.eta2 > 0 and act.T0 / act.eta2 < recharge:
        raise ContractViolation("stable phase T0/eta2 shorter than the dwell recharge time")
    if act.T0 / (1.0 - act.eta2) < recharge:
        raise ContractViolation("unstable phase T0/(1-eta2) shorter than the dwell recharge time")


def logic_decision(n: int, logic: GreedySwitching, field, names) -> Fragment:
    """Decision (u_hat, mode, tau1, tau2) with u_hat' = field(u_hat, signals)."""

    def flow(x, sig):
        out = np.empty(n + 3)
        out[:n] = field(x, sig)
        out[n:] = logic.flow(x[n:])
        return out

    def jump(x, sig):
        out = np.array(x, dtype=float)
        out[n:] = logic.jump(x[n:])
        return out

    def project(x, sig):
        z = logic.project(x[n:])
        if z is x[n:]:
            return x
        out = np.array(x, dtype=float)
        out[n:] = z
        return out

    return Fragment(n + 3, flow, lambda x, sig: logic.flow_margin(x[n:]), jump,
                    lambda x, sig: logic.jump_margin(x[n:]), names, project)
