"""Compiled RK4 stepping loop for systems that supply a FlowKernel."""

from __future__ import annotations

import math

import numba as nb
import numpy as np
from numba import types

_vec = types.float64[::1]
FLOW_SIG = types.void(_vec, _vec, _vec)
MARGIN_SIG = types.float64(_vec, _vec)
PROJECT_SIG = types.void(_vec, _vec)

# Kernel functions are compiled against fixed signatures so the stepping loop
# below is compiled once and cached, whatever kernel it is handed.
flow_fn = nb.njit(FLOW_SIG, cache=True)
margin_fn = nb.njit(MARGIN_SIG, cache=True)
project_fn = nb.njit(PROJECT_SIG, cache=True)

_FT = types.FunctionType
_ADVANCE_SIG = types.Tuple((_vec, types.float64, types.int64, types.boolean, _vec, types.float64[:, ::1]))(
    _FT(FLOW_SIG), _FT(MARGIN_SIG), _FT(MARGIN_SIG), _FT(PROJECT_SIG), _vec, _vec,
    types.float64, types.float64, types.int64, types.int64, types.int64, types.float64, types.boolean)


@nb.njit(_ADVANCE_SIG, cache=True)
def _advance(flow, flow_margin, jump_margin, project, params, x0, t0, h, n_steps, step_count,
             every, tol, watch_jump):
    n = x0.size
    x = x0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    y = np.empty(n)
    n_rec = (step_count + n_steps) // every - step_count // every
    rec_t = np.empty(n_rec)
    rec_x = np.empty((n_rec, n))
    r = 0
    t = t0
    hit = False
    for s in range(n_steps):
        flow(x, k1, params)
        for i in range(n):
            y[i] = x[i] + 0.5 * h * k1[i]
        flow(y, k2, params)
        for i in range(n):
            y[i] = x[i] + 0.5 * h * k2[i]
        flow(y, k3, params)
        for i in range(n):
            y[i] = x[i] + h * k3[i]
        flow(y, k4, params)
        for i in range(n):
            y[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        project(y, params)
        if flow_margin(y, params) < -tol or (watch_jump and jump_margin(y, params) >= 0.0):
            hit = True
            break
        for i in range(n):
            x[i] = y[i]
        step_count += 1
        t = t0 + (s + 1) * h
        if step_count % every == 0:
            rec_t[r] = t
            rec_x[r, :] = x
            r += 1
    return x, t, step_count, hit, rec_t[:r].copy(), rec_x[:r].copy()


_LOCATE_SIG = types.Tuple((types.float64, _vec, types.float64, _vec))(
    _FT(FLOW_SIG), _FT(MARGIN_SIG), _FT(MARGIN_SIG), _FT(PROJECT_SIG), _vec, _vec,
    types.float64, types.float64, types.float64, types.boolean)


@nb.njit(cache=True)
def _rk4(flow, project, params, x, h):
    n = x.size
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    flow(x, k1, params)
    y = x + 0.5 * h * k1
    flow(y, k2, params)
    y = x + 0.5 * h * k2
    flow(y, k3, params)
    y = x + h * k3
    flow(y, k4, params)
    y = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    project(y, params)
    return y


@nb.njit(_LOCATE_SIG, cache=True)
def _locate(flow, flow_margin, jump_margin, project, params, x, h_step, tol, tol_event, watch_jump):
    lo = 0.0
    hi = h_step
    x_lo = x.copy()
    x_hi = _rk4(flow, project, params, x, h_step)
    while hi - lo > tol_event:
        mid = 0.5 * (lo + hi)
        xm = _rk4(flow, project, params, x, mid)
        if flow_margin(xm, params) < -tol or (watch_jump and jump_margin(xm, params) >= 0.0):
            hi = mid
            x_hi = xm
        else:
            lo = mid
            x_lo = xm
    return lo, x_lo, hi, x_hi


def locate(kernel, x, h_step, tol, tol_event, watch_jump):
    """Bisect the step size at which leaving C or entering D first happens."""
    lo, x_lo, hi, x_hi = _locate(
        kernel.flow, kernel.flow_margin, kernel.jump_margin, kernel.project,
        np.ascontiguousarray(kernel.params, dtype=np.float64),
        np.ascontiguousarray(x, dtype=np.float64), float(h_step), float(tol), float(tol_event),
        bool(watch_jump))
    return float(lo), x_lo, float(hi), x_hi


def advance(kernel, x, t, h, n_steps, step_count, every, tol, watch_jump):
    x, t, step_count, hit, rec_t, rec_x = _advance(
        kernel.flow, kernel.flow_margin, kernel.jump_margin, kernel.project,
        np.ascontiguousarray(kernel.params, dtype=np.float64),
        np.ascontiguousarray(x, dtype=np.float64), float(t), float(h), int(n_steps),
        int(step_count), int(every), float(tol), bool(watch_jump))
    return x, float(t), int(step_count), bool(hit), rec_t, rec_x


@project_fn
def no_project(x, params):
    pass


@margin_fn
def no_jump(x, params):
    return -np.inf


@margin_fn
def everywhere(x, params):
    return np.inf


@project_fn
def renormalize_pairs(x, p):
    """Pull drifting dither pairs back onto the unit circles.

    The pairs start at index p[-2] and there are p[-1] of them.
    """
    n = int(p[p.size - 1])
    start = int(p[p.size - 2])
    worst = 0.0
    for i in range(n):
        a = x[start + 2 * i]
        b = x[start + 2 * i + 1]
        worst = max(worst, abs(a * a + b * b - 1.0))
    if worst > 1e-9:
        for i in range(n):
            a = x[start + 2 * i]
            b = x[start + 2 * i + 1]
            r = math.sqrt(a * a + b * b)
            x[start + 2 * i] = a / r
            x[start + 2 * i + 1] = b / r


def python_view(kernel):
    """Plain callables (x -> value) over a kernel, for testing against the Python flow."""

    def flow(x):
        out = np.empty(len(x))
        kernel.flow(np.ascontiguousarray(x, dtype=np.float64), out, kernel.params)
        return out

    def flow_margin(x):
        return kernel.flow_margin(np.ascontiguousarray(x, dtype=np.float64), kernel.params)

    def jump_margin(x):
        return kernel.jump_margin(np.ascontiguousarray(x, dtype=np.float64), kernel.params)

    return flow, flow_margin, jump_margin
