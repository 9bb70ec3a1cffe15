"""Graphical (tau, eps)-closeness of hybrid arcs and minimal-eps certificates."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba as nb
import numpy as np

from .hybrid_core import ContractViolation, HybridArc, SolverConfig, simulate


@nb.njit(cache=True)
def _match_interval(ta, xa, tb, xb, eps, t_limit, s_out, d_out):
    """Match every sample of (ta, xa) with t <= t_limit against interval (tb, xb).

    Returns the index of the first unmatched sample, or -1 when all match.
    """
    m = ta.size
    k = tb.size
    dim = xa.shape[1]
    p = np.empty(dim)
    q0 = np.empty(dim)
    q1 = np.empty(dim)
    for i in range(m):
        t = ta[i]
        if t > t_limit:
            s_out[i] = np.nan
            d_out[i] = np.nan
            continue
        lo = max(t - eps, tb[0])
        hi = min(t + eps, tb[k - 1])
        if lo > hi:
            return i
        for c in range(dim):
            p[c] = xa[i, c]
        # first try s = t (or the nearest admissible time)
        s0 = min(max(t, lo), hi)
        _interp(tb, xb, s0, q0)
        best = _dist(p, q0)
        best_s = s0
        if best >= eps:
            # search the polyline restricted to [lo, hi]
            a = np.searchsorted(tb, lo, side="right")
            b = np.searchsorted(tb, hi, side="left")
            _interp(tb, xb, lo, q0)
            s_prev = lo
            found = False
            for r in range(a, b + 1):
                if r < b:
                    s_next = tb[r]
                    for c in range(dim):
                        q1[c] = xb[r, c]
                else:
                    s_next = hi
                    _interp(tb, xb, hi, q1)
                d, w = _seg_dist(p, q0, q1)
                if d < best:
                    best = d
                    best_s = s_prev + w * (s_next - s_prev)
                if best < eps:
                    found = True
                    break
                for c in range(dim):
                    q0[c] = q1[c]
                s_prev = s_next
            if not found:
                return i
        s_out[i] = best_s
        d_out[i] = best
    return -1


@nb.njit(cache=True)
def _interp(tb, xb, s, out):
    k = tb.size
    r = np.searchsorted(tb, s, side="right") - 1
    if r < 0:
        r = 0
    if r >= k - 1:
        for c in range(out.size):
            out[c] = xb[k - 1, c]
        return
    t0 = tb[r]
    t1 = tb[r + 1]
    if t1 == t0:
        w = 1.0
    else:
        w = (s - t0) / (t1 - t0)
    for c in range(out.size):
        out[c] = (1.0 - w) * xb[r, c] + w * xb[r + 1, c]


@nb.njit(cache=True)
def _dist(p, q):
    acc = 0.0
    for c in range(p.size):
        acc += (p[c] - q[c]) ** 2
    return math.sqrt(acc)


@nb.njit(cache=True)
def _seg_dist(p, q0, q1):
    num = 0.0
    den = 0.0
    for c in range(p.size):
        num += (p[c] - q0[c]) * (q1[c] - q0[c])
        den += (q1[c] - q0[c]) ** 2
    w = 0.0
    if den > 0.0:
        w = min(max(num / den, 0.0), 1.0)
    acc = 0.0
    for c in range(p.size):
        acc += (p[c] - q0[c] - w * (q1[c] - q0[c])) ** 2
    return math.sqrt(acc), w


def _select(arc: HybridArc, coords) -> list[np.ndarray]:
    if coords is None:
        return [np.ascontiguousarray(x) for x in arc.states]
    idx = np.asarray(coords, dtype=np.int64)
    return [np.ascontiguousarray(x[:, idx]) for x in arc.states]


@dataclass
class Witnesses:
    """Matches for one direction: arc samples (t, j) paired with (s, j) at distance dist."""

    t: np.ndarray
    j: np.ndarray
    s: np.ndarray
    dist: np.ndarray

    def to_dict(self) -> dict:
        return {"t": self.t.tolist(), "j": self.j.tolist(), "s": self.s.tolist(),
                "dist": self.dist.tolist()}


def _one_way(a_times, a_states, b_times, b_states, tau, eps, want_witnesses):
    ts_all, js_all, ss_all, ds_all = [], [], [], []
    for j, (ta, xa) in enumerate(zip(a_times, a_states)):
        t_limit = tau - j
        if t_limit < ta[0]:
            break
        if j >= len(b_times):
            return False, None
        s_out = np.empty(ta.size)
        d_out = np.empty(ta.size)
        bad = _match_interval(ta, xa, b_times[j], b_states[j], float(eps), float(t_limit), s_out, d_out)
        if bad >= 0:
            return False, None
        if want_witnesses:
            keep = ~np.isnan(s_out)
            ts_all.append(ta[keep])
            js_all.append(np.full(int(keep.sum()), j, dtype=np.int64))
            ss_all.append(s_out[keep])
            ds_all.append(d_out[keep])
    if not want_witnesses:
        return True, None
    if not ts_all:
        empty = np.empty(0)
        return True, Witnesses(empty, np.empty(0, dtype=np.int64), empty, empty)
    return True, Witnesses(np.concatenate(ts_all), np.concatenate(js_all),
                           np.concatenate(ss_all), np.concatenate(ds_all))


def _prepare(a: HybridArc, b: HybridArc, coords_a, coords_b):
    if coords_b is None:
        coords_b = coords_a
    xa = _select(a, coords_a)
    xb = _select(b, coords_b)
    if xa[0].shape[1] != xb[0].shape[1]:
        raise ContractViolation(
            f"compared states have dimensions {xa[0].shape[1]} and {xb[0].shape[1]}")
    ta = [np.ascontiguousarray(t) for t in a.times]
    tb = [np.ascontiguousarray(t) for t in b.times]
    return ta, xa, tb, xb


def tau_eps_close(a: HybridArc, b: HybridArc, tau: float, eps: float,
                  coords_a: Optional[Sequence[int]] = None,
                  coords_b: Optional[Sequence[int]] = None) -> bool:
    """Both arcs' samples with t + j <= tau are matched within eps in time and state.

    Time offsets are allowed up to eps inclusive; state distance must be
    strictly below eps. coords_a / coords_b pick the compared components
    (coords_b defaults to coords_a).
    """
    if not eps > 0:
        raise ContractViolation("eps must be positive")
    ta, xa, tb, xb = _prepare(a, b, coords_a, coords_b)
    ok, _ = _one_way(ta, xa, tb, xb, tau, eps, False)
    if not ok:
        return False
    ok, _ = _one_way(tb, xb, ta, xa, tau, eps, False)
    return ok


@dataclass
class ClosenessReport:
    tau: float
    eps_grid: list[float]
    min_eps: Optional[float]
    forward: Optional[Witnesses] = None
    backward: Optional[Witnesses] = None
    meta: dict = field(default_factory=dict)

    @property
    def exceeds_grid(self) -> bool:
        return self.min_eps is None

    def to_dict(self, witnesses: bool = True) -> dict:
        out = {
            "tau": float(self.tau),
            "eps_grid": [float(e) for e in self.eps_grid],
            "min_eps": "exceeds grid" if self.min_eps is None else float(self.min_eps),
        }
        if witnesses:
            out["witnesses"] = {
                "forward": self.forward.to_dict() if self.forward is not None else None,
                "backward": self.backward.to_dict() if self.backward is not None else None,
            }
        if self.meta:
            out["meta"] = self.meta
        return out

    def to_json(self, witnesses: bool = True) -> str:
        return json.dumps(self.to_dict(witnesses))


def min_epsilon(a: HybridArc, b: HybridArc, tau: float, eps_grid: Sequence[float],
                coords_a: Optional[Sequence[int]] = None,
                coords_b: Optional[Sequence[int]] = None) -> ClosenessReport:
    """Smallest grid value certifying closeness, with the matching witnesses."""
    grid = [float(e) for e in eps_grid]
    if not grid or any(e <= 0 for e in grid) or any(x >= y for x, y in zip(grid, grid[1:])):
        raise ContractViolation("eps_grid must be positive and strictly ascending")
    ta, xa, tb, xb = _prepare(a, b, coords_a, coords_b)
    for eps in grid:
        ok, fwd = _one_way(ta, xa, tb, xb, tau, eps, True)
        if not ok:
            continue
        ok, bwd = _one_way(tb, xb, ta, xa, tau, eps, True)
        if ok:
            return ClosenessReport(tau, grid, eps, fwd, bwd)
    return ClosenessReport(tau, grid, None)


def closeness_curve(build: Callable, params: Sequence, x0, config: SolverConfig,
                    reference: HybridArc, tau: float, eps_grid: Sequence[float],
                    coords_a: Optional[Sequence[int]] = None,
                    coords_b: Optional[Sequence[int]] = None) -> list[tuple[object, ClosenessReport]]:
    """min_epsilon of each build(param) solution against a fixed reference arc."""
    out = []
    for param in params:
        sol = simulate(build(param), x0, config)
        out.append((param, min_epsilon(sol.arc, reference, tau, eps_grid, coords_a, coords_b)))
    return out
