"""Set-valued primitives and the selectors that turn inclusions into simulatable maps."""

from __future__ import annotations

import functools
import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import nnls

from .hybrid_core import ContractViolation, HybridError, active_seed, unit_ball_point


class PointOutsideSet(HybridError):
    pass


class SelectionOutsideSet(HybridError):
    pass


# ---------------------------------------------------------------- convex sets

class ConvexSetDescription:
    """Closed convex set with a signed margin (>= 0 inside)."""

    dim: int

    def margin(self, point) -> float:
        raise NotImplementedError

    def contains(self, point, tol: float = 1e-9) -> bool:
        return self.margin(point) >= -tol


@dataclass(frozen=True)
class Interval(ConvexSetDescription):
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ContractViolation(f"interval needs lo <= hi, got [{self.lo}, {self.hi}]")

    @property
    def dim(self) -> int:
        return 1

    def margin(self, point) -> float:
        p = float(np.asarray(point).reshape(-1)[0])
        return min(p - self.lo, self.hi - p)

    def as_halfspaces(self) -> "Halfspaces":
        return Halfspaces(np.array([[-1.0], [1.0]]), np.array([-self.lo, self.hi]))


@dataclass(frozen=True, eq=False)
class Box(ConvexSetDescription):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        up = np.asarray(self.upper, dtype=float)
        if lo.shape != up.shape or np.any(lo > up):
            raise ContractViolation("box needs lower <= upper elementwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def dim(self) -> int:
        return self.lower.size

    def margin(self, point) -> float:
        p = np.asarray(point, dtype=float)
        return float(min(np.min(p - self.lower), np.min(self.upper - p)))

    def as_halfspaces(self) -> "Halfspaces":
        eye = np.eye(self.dim)
        return Halfspaces(np.vstack([-eye, eye]), np.concatenate([-self.lower, self.upper]))


@dataclass(frozen=True, eq=False)
class Halfspaces(ConvexSetDescription):
    """{u : A u <= b}; margins use distances to each bounding hyperplane."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.size:
            raise ContractViolation("A and b disagree on the number of constraints")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0):
            raise ContractViolation("zero constraint row")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def slacks(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=float)
        return (self.b - self.A @ p) / np.linalg.norm(self.A, axis=1)

    def margin(self, point) -> float:
        return float(np.min(self.slacks(point)))

    def as_halfspaces(self) -> "Halfspaces":
        return self


@dataclass(frozen=True)
class Simplex(ConvexSetDescription):
    """Unit simplex {u >= 0, sum u = 1} of the given dimension."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ContractViolation("simplex dimension must be at least 1")

    @property
    def dim(self) -> int:
        return self.n

    def margin(self, point) -> float:
        p = np.asarray(point, dtype=float)
        return float(min(np.min(p), -abs(np.sum(p) - 1.0)))


@dataclass(frozen=True, eq=False)
class FiniteHull(ConvexSetDescription):
    """Convex hull of finitely many vertices (rows)."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if v.shape[0] < 1:
            raise ContractViolation("hull needs at least one vertex")
        object.__setattr__(self, "vertices", v)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def distance(self, point) -> float:
        return hull_distance(self.vertices, point)

    def margin(self, point) -> float:
        d = self.distance(point)
        if d > 1e-9:
            return -d
        from scipy.spatial import QhullError

        try:
            return max(self.as_halfspaces().margin(point), -d)
        except QhullError:
            # degenerate hull (no interior): membership only
            return -d

    def as_halfspaces(self) -> Halfspaces:
        if self.dim == 1:
            v = self.vertices[:, 0]
            return Interval(float(v.min()), float(v.max())).as_halfspaces()
        from scipy.spatial import ConvexHull

        hull = ConvexHull(self.vertices)
        eq = hull.equations
        return Halfspaces(eq[:, :-1], -eq[:, -1])


def hull_distance(vertices, point) -> float:
    """Euclidean distance from point to conv(vertices), via weighted NNLS."""
    V = np.atleast_2d(np.asarray(vertices, dtype=float))
    p = np.asarray(point, dtype=float)
    scale = 1e3 * (1.0 + np.abs(V).max() + np.abs(p).max())
    M = np.vstack([V.T, scale * np.ones((1, V.shape[0]))])
    rhs = np.concatenate([p, [scale]])
    weights, _ = nnls(M, rhs)
    weights = weights / weights.sum()
    return float(np.linalg.norm(V.T @ weights - p))


# ---------------------------------------------------------------- selectors

def _framed(parts: Sequence[bytes]) -> bytes:
    return b"".join(len(p).to_bytes(4, "little") + p for p in parts)


@functools.lru_cache(maxsize=256)
def _draw_prefix(seed: int, solver_seed: int, salt: bytes) -> bytes:
    return _framed([seed.to_bytes(8, "little", signed=True),
                    solver_seed.to_bytes(8, "little", signed=True), salt])


def _uniforms(parts: Sequence[bytes], count: int) -> np.ndarray:
    """count deterministic uniforms in (0, 1) from a hash of parts."""
    prefix = _framed(parts)
    digests = b"".join(hashlib.blake2b(prefix + block.to_bytes(4, "little"), digest_size=64).digest()
                       for block in range((count + 7) // 8))
    words = np.frombuffer(digests, dtype="<u8")[:count]
    return (words >> np.uint64(11)) * 2.0 ** -53 + 2.0 ** -54


@dataclass(frozen=True)
class Selector:
    """How a single value is picked from a set-valued map.

    kind is one of "max-rate", "min-rate", "constant", "seeded-uniform",
    "custom". Seeded-uniform picks depend only on (seed, solver seed, x), so
    flows stay pure functions of the state.
    """

    kind: str = "max-rate"
    value: Optional[float] = None
    seed: int = 0
    fn: Optional[Callable] = None

    @classmethod
    def max_rate(cls) -> "Selector":
        return cls("max-rate")

    @classmethod
    def min_rate(cls) -> "Selector":
        return cls("min-rate")

    @classmethod
    def constant(cls, c: float) -> "Selector":
        return cls("constant", value=float(c))

    @classmethod
    def seeded_uniform(cls, seed: int = 0) -> "Selector":
        return cls("seeded-uniform", seed=int(seed))

    @classmethod
    def custom(cls, fn: Callable) -> "Selector":
        return cls("custom", fn=fn)

    def _draws(self, x, salt: bytes, count: int) -> np.ndarray:
        xb = b"" if x is None else np.ascontiguousarray(x, dtype=np.float64).tobytes()
        parts = [self.seed.to_bytes(8, "little", signed=True),
                 int(active_seed()).to_bytes(8, "little", signed=True), salt, xb]
        return _uniforms(parts, count)

    def _draw_one(self, x, salt: bytes) -> float:
        # same bytes and arithmetic as _draws(x, salt, 1)[0]; flows call this once per evaluation
        xb = b"" if x is None else np.ascontiguousarray(x, dtype=np.float64).tobytes()
        msg = _draw_prefix(self.seed, int(active_seed()), salt) + len(xb).to_bytes(4, "little") + xb
        digest = hashlib.blake2b(msg + b"\0\0\0\0", digest_size=64).digest()
        return (int.from_bytes(digest[:8], "little") >> 11) * 2.0 ** -53 + 2.0 ** -54

    def pick_scalar(self, lo: float, hi: float, x=None, salt: bytes = b"") -> float:
        if self.kind == "max-rate":
            v = hi
        elif self.kind == "min-rate":
            v = lo
        elif self.kind == "constant":
            v = self.value
        elif self.kind == "seeded-uniform":
            v = lo + (hi - lo) * self._draw_one(x, salt)
        elif self.kind == "custom":
            v = float(self.fn(lo, hi, x))
        else:
            raise ContractViolation(f"unknown selector kind {self.kind!r}")
        if not lo - 1e-12 <= v <= hi + 1e-12:
            raise SelectionOutsideSet(f"selected {v} outside [{lo}, {hi}]")
        return float(min(max(v, lo), hi))

    def pick_ball(self, dim: int, x=None, salt: bytes = b"") -> np.ndarray:
        """A point of the closed unit ball in R^dim."""
        if self.kind == "min-rate":
            return np.zeros(dim)
        if self.kind == "constant":
            d = np.full(dim, self.value / math.sqrt(dim))
        elif self.kind == "custom":
            d = np.asarray(self.fn(dim, x), dtype=float)
        elif self.kind == "max-rate":
            d = np.zeros(dim)
            d[0] = 1.0
        else:
            d = unit_ball_point(dim, self._draws(x, salt, dim + 1))
        if np.linalg.norm(d) > 1.0 + 1e-12:
            raise SelectionOutsideSet("selected point outside the unit ball")
        return d


def interval_select(interval: Interval | tuple, sel: Selector, x=None) -> float:
    if not isinstance(interval, Interval):
        interval = Interval(*interval)
    return sel.pick_scalar(interval.lo, interval.hi, x)


# ---------------------------------------------------------------- primitives

def sign_hull(z: float) -> Interval:
    """Krasovskii regularization of sign: a point for z != 0, [-1, 1] at 0."""
    if z > 0:
        return Interval(1.0, 1.0)
    if z < 0:
        return Interval(-1.0, -1.0)
    return Interval(-1.0, 1.0)


def sign_select(z: float, sel: Selector, x=None) -> float:
    return interval_select(sign_hull(z), sel, x)


def convex_combination(fields: Sequence[Callable], weights, x) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.size != len(fields):
        raise ContractViolation("one weight per field required")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ContractViolation("weights must be non-negative and sum to 1")
    out = None
    for wi, f in zip(w, fields):
        term = wi * np.asarray(f(x), dtype=float)
        out = term if out is None else out + term
    return out


def _project_polar(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    """v minus its projection onto cone(rows of A): the projection onto {d: A d <= 0}."""
    if A.shape[0] == 0:
        return v.copy()
    lam, _ = nnls(A.T, v)
    d = v - A.T @ lam
    # clean round-off on the active normals
    for _ in range(2):
        viol = A @ d
        bad = viol > 0
        if not np.any(bad):
            break
        lam2, _ = nnls(A[bad].T, d)
        d = d - A[bad].T @ lam2
    return d


def _simplex_cone_project(point: np.ndarray, v: np.ndarray, tol: float) -> np.ndarray:
    n = v.size
    zero = point <= tol
    free = np.ones(n, dtype=bool)
    d = np.zeros(n)
    for _ in range(n):
        theta = v[free].mean()
        d[:] = 0.0
        d[free] = v[free] - theta
        drop = free & zero & (d < 0)
        if not np.any(drop):
            break
        free &= ~drop
    return d


def tangent_cone_project(cset: ConvexSetDescription, point, v, tol: float = 1e-9,
                         active_tol: float = 0.0) -> np.ndarray:
    """Euclidean projection of v onto the tangent cone of cset at point.

    Constraints with slack <= max(tol, active_tol) count as active. A positive
    active_tol projects in a thin band near the boundary, which is a selection
    from the Krasovskii regularization of the projected field.
    """
    p = np.asarray(point, dtype=float)
    v = np.asarray(v, dtype=float)
    if cset.margin(p) < -tol:
        raise PointOutsideSet(f"point margin {cset.margin(p):.3g} < -{tol:g}")
    band = max(tol, active_tol)
    if isinstance(cset, Simplex):
        return _simplex_cone_project(p, v, band)
    hs = cset.as_halfspaces()
    active = hs.slacks(p) <= band
    if not np.any(active):
        return v.copy()
    A = hs.A[active]
    A = A / np.linalg.norm(A, axis=1)[:, None]
    return _project_polar(A, v)


def best_response(payoff, dim: int | None = None) -> np.ndarray:
    """Simplex vertex maximizing payoff; ties go to the lowest index."""
    p = np.asarray(payoff, dtype=float)
    if dim is not None and dim != p.size:
        raise ContractViolation("dim must equal len(payoff)")
    e = np.zeros(p.size)
    e[int(np.argmax(p))] = 1.0
    return e


def sliding_rule(c_value: float, xi_J, xi_c, k: float, sel: Selector | None = None,
                 x=None) -> np.ndarray:
    xi_J = np.asarray(xi_J, dtype=float)
    xi_c = np.asarray(xi_c, dtype=float)
    if c_value < 0:
        return -k * xi_J
    if c_value > 0:
        return -k * xi_c
    lam = interval_select(Interval(0.0, 1.0), sel or Selector.constant(0.5), x)
    return -k * (lam * xi_J + (1.0 - lam) * xi_c)
