"""Path-dependent vector fields.

A path-dependent vector field maps a stopped path y_[0,a] to a vector of
R^d.  Fields here are immutable callables acting on ``StoppedPath``
objects, batched over any leading axes of the path values (shape
``(m + 1, *batch, d)`` in, ``(*batch, d)`` out).

Three kinds of derivative are exposed:

* ``directional(y, v)``: d/de of the field at the path shifted by the
  constant vector ``e * v`` (all samples move, the endpoint included);
* ``directional2(y, u, v)``: the second derivative along two such shifts;
* ``fine_derivative(y, ydot)``: derivative along growth of the history,
  i.e. the integrand F'(y_[0,r]; ydot_[0,r]) with
  F(y_[0,a]) = F(y_[0,0]) + int_0^a F'(y_[0,r]; ydot_[0,r]) dr.

Closed forms are used when a field knows them.  ``directional`` and
``directional2`` otherwise fall back on central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NotFinelyDifferentiableError, ShapeMismatchError
from .pathspace import StoppedPath

FD_STEP = 1e-5


def _fd_scale(y: StoppedPath) -> float:
    return FD_STEP * (1.0 + float(np.max(np.abs(y.values))))


def _split_direction(v):
    """Unit direction and norm along the last axis; zero vectors stay zero."""
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(nv > 0, nv, 1.0)
    return v / safe, nv


class SegmentSlopes:
    """Exact derivative of a piecewise-linear path: the slope of the segment
    containing ``u`` (right-continuous, last slope from the end time on)."""

    def __init__(self, y: StoppedPath):
        if y.is_point:
            raise ValueError("a point path has no segments")
        self.times = y.times
        dt = np.diff(y.times).reshape((-1,) + (1,) * (y.values.ndim - 1))
        self.slopes = np.diff(y.values, axis=0) / dt

    def eval_at(self, u):
        k = np.clip(np.searchsorted(self.times, u, side="right") - 1, 0, self.slopes.shape[0] - 1)
        return self.slopes[k]


def _as_ydot(ydot, y: StoppedPath):
    """Accept a derivative path, any object with ``eval_at``, or a single
    vector (held constant)."""
    if hasattr(ydot, "eval_at"):
        return ydot
    ydot = np.asarray(ydot, dtype=float)
    if y.is_point:
        return StoppedPath.point(ydot)
    return StoppedPath.constant(ydot, y.end_time)


class PathVectorField:
    """Base class.  Subclasses implement ``eval`` and optionally derivatives."""

    regularity = "C1"
    finely_differentiable = False

    def __init__(self, dim: int):
        self.dim = int(dim)

    def _check(self, y: StoppedPath):
        if y.dim != self.dim:
            raise ShapeMismatchError(f"field acts on R^{self.dim}, path lives in R^{y.dim}")

    def eval(self, y: StoppedPath) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, y: StoppedPath) -> np.ndarray:
        self._check(y)
        return self.eval(y)

    def directional(self, y: StoppedPath, v) -> np.ndarray:
        u, nv = _split_direction(v)
        eps = _fd_scale(y)
        hi = self.eval(y.perturb(u, eps))
        lo = self.eval(y.perturb(u, -eps))
        return (hi - lo) / (2 * eps) * nv

    def directional2(self, y: StoppedPath, u, v) -> np.ndarray:
        uu, nu = _split_direction(u)
        eps = _fd_scale(y)
        hi = self.directional(y.perturb(uu, eps), v)
        lo = self.directional(y.perturb(uu, -eps), v)
        return (hi - lo) / (2 * eps) * nu

    def fine_derivative(self, y: StoppedPath, ydot) -> np.ndarray:
        raise NotFinelyDifferentiableError(f"field {type(self).__name__} is not finely differentiable")

    def breakpoints(self, y: StoppedPath) -> np.ndarray:
        """Times off the sample grid where r -> V'(y_[0,r]; ydot_[0,r]) may jump or kink."""
        return np.empty(0)

    # algebra -------------------------------------------------------------
    def __add__(self, other):
        return LinearCombinationField([1.0, 1.0], [self, other])

    def __sub__(self, other):
        return LinearCombinationField([1.0, -1.0], [self, other])

    def __rmul__(self, c):
        return LinearCombinationField([float(c)], [self])

    def __neg__(self):
        return LinearCombinationField([-1.0], [self])


# --------------------------------------------------------------------------
# scalar maps used to build concrete fields

@dataclass(frozen=True)
class ScalarMap:
    """Componentwise smooth map with its first two derivatives."""

    name: str
    f: Callable
    df: Callable
    d2f: Callable


def _poly_map(coeffs) -> ScalarMap:
    P = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
    dP, d2P = P.deriv(1), P.deriv(2)
    return ScalarMap("poly", P, dP, d2P)


def scalar_map(name: str, coeffs=None) -> ScalarMap:
    """Preset componentwise maps: ``tanh``, ``sin``, ``poly`` (with coeffs), ``identity``."""
    if name == "tanh":
        def dtanh(z):
            return 1.0 - np.tanh(z) ** 2

        return ScalarMap("tanh", np.tanh, dtanh, lambda z: -2.0 * np.tanh(z) * dtanh(z))
    if name == "sin":
        return ScalarMap("sin", np.sin, np.cos, lambda z: -np.sin(z))
    if name == "identity":
        return ScalarMap("identity", lambda z: z, np.ones_like, np.zeros_like)
    if name in ("poly", "polynomial"):
        if coeffs is None or len(coeffs) == 0:
            raise ValueError("polynomial map needs coefficients")
        return _poly_map(coeffs)
    raise ValueError(f"unknown map {name!r}; expected tanh, sin, poly or identity")


def _affine(matrix, offset, dim):
    A = np.eye(dim) if matrix is None else np.asarray(matrix, dtype=float)
    if A.shape != (dim, dim):
        raise ShapeMismatchError(f"matrix must be {dim}x{dim}, got {A.shape}")
    b = np.zeros(dim) if offset is None else np.broadcast_to(np.asarray(offset, dtype=float), (dim,)).copy()
    return A, b


# --------------------------------------------------------------------------
# concrete fields

class ZeroField(PathVectorField):
    regularity = "smooth"
    finely_differentiable = True

    def eval(self, y):
        return np.zeros(y.batch_shape + (self.dim,))

    def directional(self, y, v):
        return np.zeros(y.batch_shape + (self.dim,))

    def directional2(self, y, u, v):
        return np.zeros(y.batch_shape + (self.dim,))

    def fine_derivative(self, y, ydot):
        return np.zeros(y.batch_shape + (self.dim,))


class ConstantField(ZeroField):
    def __init__(self, value):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        super().__init__(value.size)
        self.value = value

    def eval(self, y):
        return np.broadcast_to(self.value, y.batch_shape + (self.dim,)).copy()


class MarkovianField(PathVectorField):
    """V(y_[0,a]) = v(y_a) for a map v of R^d.

    ``jvp(x, w)`` returns Dv(x) w and ``jvp2(x, u, w)`` returns D^2 v(x)[u, w];
    both are optional and replaced by central differences when absent.
    """

    regularity = "smooth"
    finely_differentiable = True

    def __init__(self, v, dim, jvp=None, jvp2=None):
        super().__init__(dim)
        self.v = v
        self.jvp = jvp
        self.jvp2 = jvp2

    def point_jvp(self, x, w):
        if self.jvp is not None:
            return self.jvp(x, w)
        u, nw = _split_direction(w)
        eps = FD_STEP * (1.0 + float(np.max(np.abs(x))))
        return (self.v(x + eps * u) - self.v(x - eps * u)) / (2 * eps) * nw

    def point_jvp2(self, x, u, w):
        if self.jvp2 is not None:
            return self.jvp2(x, u, w)
        uu, nu = _split_direction(u)
        eps = FD_STEP * (1.0 + float(np.max(np.abs(x))))
        return (self.point_jvp(x + eps * uu, w) - self.point_jvp(x - eps * uu, w)) / (2 * eps) * nu

    def eval(self, y):
        return np.asarray(self.v(y.end), dtype=float)

    def directional(self, y, v):
        return self.point_jvp(y.end, np.asarray(v, dtype=float))

    def directional2(self, y, u, v):
        return self.point_jvp2(y.end, np.asarray(u, dtype=float), np.asarray(v, dtype=float))

    def fine_derivative(self, y, ydot):
        ydot = _as_ydot(ydot, y)
        return self.point_jvp(y.end, ydot.eval_at(y.end_time))

    @classmethod
    def from_map(cls, name, dim, matrix=None, offset=None, coeffs=None):
        """v(x) = phi(A x + b) with phi a preset componentwise map."""
        phi = scalar_map(name, coeffs)
        A, b = _affine(matrix, offset, dim)

        def v(x):
            return phi.f(x @ A.T + b)

        def jvp(x, w):
            return phi.df(x @ A.T + b) * (w @ A.T)

        def jvp2(x, u, w):
            return phi.d2f(x @ A.T + b) * (u @ A.T) * (w @ A.T)

        field = cls(v, dim, jvp, jvp2)
        field.description = f"markovian {phi.name}"
        return field


class LinearMarkovianField(MarkovianField):
    """V(y_[0,a]) = A y_a + b."""

    def __init__(self, matrix, offset=None):
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        dim = A.shape[0]
        A, b = _affine(A, offset, dim)
        self.matrix, self.offset = A, b
        super().__init__(
            lambda x: x @ A.T + b,
            dim,
            lambda x, w: np.broadcast_to(w @ A.T, np.broadcast_shapes(np.shape(x), np.shape(w))).copy(),
            lambda x, u, w: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(u), np.shape(w))),
        )


class DelayField(PathVectorField):
    """V(y_[0,a]) = f(y_{(a - r_1) v 0}, ..., y_{(a - r_n) v 0}).

    ``f(*us)`` takes n arrays of shape (*batch, d).  ``jvp(us, ws)`` returns
    sum_i d_i f(us)(ws[i]) and ``jvp2(us, ws, vs)`` the matching second
    derivative sum_ij d_i d_j f(us)[ws[i], vs[j]]; missing ones are
    approximated by central differences.  Each delay is a non-negative
    constant or a callable of the end time a; ``delay_rates`` gives r_i'(a)
    for callable delays.
    """

    regularity = "smooth"
    finely_differentiable = True

    def __init__(self, f, delays, dim, jvp=None, jvp2=None, delay_rates=None):
        super().__init__(dim)
        self.f = f
        self.delays = list(delays)
        if not self.delays:
            raise ValueError("a delay field needs at least one delay")
        for r in self.delays:
            if not callable(r) and r < 0:
                raise ValueError(f"delays must be non-negative, got {r!r}")
        self._jvp = jvp
        self._jvp2 = jvp2
        self.delay_rates = delay_rates

    def _delay(self, i, a):
        r = self.delays[i]
        return float(r(a)) if callable(r) else float(r)

    def _delay_rate(self, i, a):
        r = self.delays[i]
        if not callable(r):
            return 0.0
        if self.delay_rates is not None and self.delay_rates[i] is not None:
            return float(self.delay_rates[i](a))
        h = 1e-6 * (1.0 + a)
        return (float(r(a + h)) - float(r(max(a - h, 0.0)))) / (a + h - max(a - h, 0.0))

    def lag_times(self, a):
        return [a - self._delay(i, a) for i in range(len(self.delays))]

    def breakpoints(self, y):
        # a lag crosses sample node t_k where u - r(u) = t_k; for callable
        # delays the lag time is assumed increasing and found by bisection
        shifts = [r for r in self.delays if not callable(r) and r > 0]
        pts = [_shifted_nodes(y, shifts)]
        a = y.end_time
        for r in self.delays:
            if not callable(r) or a <= 0:
                continue
            lag = np.vectorize(lambda u: u - float(r(u)))
            targets = y.times[(y.times >= lag(0.0)) & (y.times < lag(a))]
            lo, hi = np.zeros_like(targets), np.full_like(targets, a)
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                below = lag(mid) < targets
                lo, hi = np.where(below, mid, lo), np.where(below, hi, mid)
            pts.append(hi[(hi > 0.0) & (hi < a)])
        return np.unique(np.concatenate(pts))

    def _args(self, y):
        return [y.eval_at(max(tau, 0.0)) for tau in self.lag_times(y.end_time)]

    def jvp(self, us, ws):
        if self._jvp is not None:
            return self._jvp(us, ws)
        scale = 1.0 + max(float(np.max(np.abs(u))) for u in us)
        wn = max(float(np.max(np.abs(w))) for w in ws)
        if wn == 0:
            return np.zeros_like(np.asarray(self.f(*us), dtype=float))
        eps = FD_STEP * scale / wn
        hi = self.f(*[u + eps * w for u, w in zip(us, ws)])
        lo = self.f(*[u - eps * w for u, w in zip(us, ws)])
        return (hi - lo) / (2 * eps)

    def jvp2(self, us, ws, vs):
        if self._jvp2 is not None:
            return self._jvp2(us, ws, vs)
        scale = 1.0 + max(float(np.max(np.abs(u))) for u in us)
        wn = max(float(np.max(np.abs(w))) for w in ws)
        if wn == 0:
            return np.zeros_like(np.asarray(self.f(*us), dtype=float))
        eps = FD_STEP * scale / wn
        hi = self.jvp([u + eps * w for u, w in zip(us, ws)], vs)
        lo = self.jvp([u - eps * w for u, w in zip(us, ws)], vs)
        return (hi - lo) / (2 * eps)

    def eval(self, y):
        return np.asarray(self.f(*self._args(y)), dtype=float)

    def directional(self, y, v):
        v = np.asarray(v, dtype=float)
        return self.jvp(self._args(y), [v] * len(self.delays))

    def directional2(self, y, u, v):
        n = len(self.delays)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return self.jvp2(self._args(y), [u] * n, [v] * n)

    def fine_derivative(self, y, ydot):
        ydot = _as_ydot(ydot, y)
        a = y.end_time
        us = self._args(y)
        ws = []
        for i, tau in enumerate(self.lag_times(a)):
            # a lag frozen at time 0 does not move as the history grows
            if tau < 0:
                ws.append(np.zeros_like(us[i]))
            else:
                ws.append((1.0 - self._delay_rate(i, a)) * ydot.eval_at(tau))
        return self.jvp(us, ws)

    @classmethod
    def from_map(cls, name, dim, delays, matrix=None, offset=None, coeffs=None):
        """f(u_1, ..., u_n) = phi(A (u_1 + ... + u_n) + b) with a preset map phi."""
        phi = scalar_map(name, coeffs)
        A, b = _affine(matrix, offset, dim)

        def f(*us):
            return phi.f(sum(us) @ A.T + b)

        def jvp(us, ws):
            return phi.df(sum(us) @ A.T + b) * (sum(ws) @ A.T)

        def jvp2(us, ws, vs):
            return phi.d2f(sum(us) @ A.T + b) * (sum(ws) @ A.T) * (sum(vs) @ A.T)

        field = cls(f, delays, dim, jvp, jvp2)
        field.description = f"delay {phi.name}"
        return field


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)
_GL_NODES = 0.5 * (1.0 + _GL_NODES)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


def _shifted_nodes(y: StoppedPath, shifts) -> np.ndarray:
    """Sample times shifted by each of ``shifts``, kept inside (0, a)."""
    if not shifts:
        return np.empty(0)
    pts = np.concatenate([y.times + r for r in shifts])
    return pts[(pts > 0.0) & (pts < y.end_time)]


def _segment_average(times, values, func, quadrature="gauss"):
    """(1/(b - a)) int func(y_r) dr along the piecewise-linear path."""
    dt = np.diff(times).reshape((-1,) + (1,) * (values.ndim - 1))
    if quadrature == "trapezoid":
        fv = func(values)
        total = np.sum(0.5 * (fv[1:] + fv[:-1]) * dt, axis=0)
    else:
        left, step = values[:-1], np.diff(values, axis=0)
        total = 0.0
        for th, wt in zip(_GL_NODES, _GL_WEIGHTS):
            total = total + wt * np.sum(func(left + th * step) * dt, axis=0)
    return total / (times[-1] - times[0])


class MovingAverageField(PathVectorField):
    """V(y_[0,a]) = (1/a) int_0^a g(y_r) dr, with V(y_[0,0]) = g(y_0).

    With a ``window`` lambda the average runs over [(a - lambda) v 0, a]
    instead.  Integrals run segment by segment along the piecewise-linear
    history with 3-point Gauss-Legendre (``quadrature="gauss"``, default)
    or the trapezoid rule on the sample grid (``"trapezoid"``).  Both are
    exact when g is affine; the trapezoid variant makes the fine-derivative
    identity hold only to O(h^2 log(1/h)) because of the 1/a weight.
    """

    regularity = "smooth"
    finely_differentiable = True

    def __init__(self, g, dim, jvp=None, jvp2=None, window=None, quadrature="gauss"):
        super().__init__(dim)
        if window is not None and not window > 0:
            raise ValueError(f"window must be positive, got {window!r}")
        if quadrature not in ("gauss", "trapezoid"):
            raise ValueError(f"unknown quadrature {quadrature!r}")
        self.quadrature = quadrature
        self.g = g
        self._jvp = jvp
        self._jvp2 = jvp2
        self.window = window

    def _segment(self, y):
        a = y.end_time
        if self.window is None or self.window >= a:
            return y.times, y.values
        lo = a - self.window
        k = int(np.searchsorted(y.times, lo, side="right"))
        times = np.concatenate([[lo], y.times[k:]])
        values = np.concatenate([y.eval_at(lo)[None], y.values[k:]], axis=0)
        return times, values

    def _g_jvp(self, x, w):
        if self._jvp is not None:
            return self._jvp(x, w)
        u, nw = _split_direction(w)
        eps = FD_STEP * (1.0 + float(np.max(np.abs(x))))
        return (self.g(x + eps * u) - self.g(x - eps * u)) / (2 * eps) * nw

    def _g_jvp2(self, x, u, w):
        if self._jvp2 is not None:
            return self._jvp2(x, u, w)
        uu, nu = _split_direction(u)
        eps = FD_STEP * (1.0 + float(np.max(np.abs(x))))
        return (self._g_jvp(x + eps * uu, w) - self._g_jvp(x - eps * uu, w)) / (2 * eps) * nu

    def eval(self, y):
        if y.is_point:
            return np.asarray(self.g(y.end), dtype=float)
        times, values = self._segment(y)
        return _segment_average(times, values, self.g, self.quadrature)

    def directional(self, y, v):
        v = np.asarray(v, dtype=float)
        if y.is_point:
            return self._g_jvp(y.end, v)
        times, values = self._segment(y)
        return _segment_average(times, values, lambda x: self._g_jvp(x, v), self.quadrature)

    def directional2(self, y, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if y.is_point:
            return self._g_jvp2(y.end, u, v)
        times, values = self._segment(y)
        return _segment_average(times, values, lambda x: self._g_jvp2(x, u, v), self.quadrature)

    def fine_derivative(self, y, ydot):
        a = y.end_time
        if y.is_point:
            ydot = _as_ydot(ydot, y)
            return self._g_jvp(y.end, ydot.eval_at(0.0))
        ga = np.asarray(self.g(y.end), dtype=float)
        if self.window is None or self.window >= a:
            return (ga - self.eval(y)) / a
        return (ga - np.asarray(self.g(y.eval_at(a - self.window)), dtype=float)) / self.window

    def breakpoints(self, y):
        return _shifted_nodes(y, [] if self.window is None else [self.window])

    @classmethod
    def from_map(cls, name, dim, matrix=None, offset=None, coeffs=None, window=None, quadrature="gauss"):
        phi = scalar_map(name, coeffs)
        A, b = _affine(matrix, offset, dim)

        def g(x):
            return phi.f(x @ A.T + b)

        def jvp(x, w):
            return phi.df(x @ A.T + b) * (w @ A.T)

        def jvp2(x, u, w):
            return phi.d2f(x @ A.T + b) * (u @ A.T) * (w @ A.T)

        field = cls(g, dim, jvp, jvp2, window=window, quadrature=quadrature)
        field.description = f"moving average {phi.name}"
        return field


class LinearCombinationField(PathVectorField):
    """sum_k c_k V_k with constant coefficients."""

    def __init__(self, coeffs: Sequence[float], fields: Sequence[PathVectorField]):
        if len(coeffs) != len(fields) or not fields:
            raise ValueError("need matching, non-empty coefficient and field lists")
        dims = {f.dim for f in fields}
        if len(dims) != 1:
            raise ShapeMismatchError(f"fields of different dimensions {sorted(dims)}")
        super().__init__(dims.pop())
        self.coeffs = [float(c) for c in coeffs]
        self.fields = list(fields)
        self.finely_differentiable = all(f.finely_differentiable for f in fields)

    def _combine(self, method, *args):
        out = None
        for c, f in zip(self.coeffs, self.fields):
            if c == 0.0:
                continue
            val = c * getattr(f, method)(*args)
            out = val if out is None else out + val
        if out is None:
            return np.zeros(args[0].batch_shape + (self.dim,))
        return out

    def eval(self, y):
        return self._combine("eval", y)

    def directional(self, y, v):
        return self._combine("directional", y, v)

    def directional2(self, y, u, v):
        return self._combine("directional2", y, u, v)

    def fine_derivative(self, y, ydot):
        return self._combine("fine_derivative", y, ydot)

    def breakpoints(self, y):
        return np.unique(np.concatenate([np.empty(0)] + [f.breakpoints(y) for f in self.fields]))


class DirectionalField(PathVectorField):
    """The field VW: y -> d/de W(y + e V(y)), perturbing the whole history."""

    def __init__(self, V: PathVectorField, W: PathVectorField):
        if V.dim != W.dim:
            raise ShapeMismatchError(f"fields of different dimensions {V.dim} and {W.dim}")
        super().__init__(V.dim)
        self.V, self.W = V, W
        self.finely_differentiable = V.finely_differentiable and W.finely_differentiable

    def eval(self, y):
        return self.W.directional(y, self.V.eval(y))

    def directional(self, y, u):
        # d/de W'(y + e u)[V(y + e u)] = D^2 W[u, V] + DW[DV u]
        Vy = self.V.eval(y)
        return self.W.directional2(y, u, Vy) + self.W.directional(y, self.V.directional(y, u))

    def fine_derivative(self, y, ydot):
        return vw_fine_derivative(self.V, self.W, y, ydot)

    def breakpoints(self, y):
        return np.union1d(self.V.breakpoints(y), self.W.breakpoints(y))


class BracketField(LinearCombinationField):
    """[V, W] = VW - WV."""

    def __init__(self, V: PathVectorField, W: PathVectorField):
        super().__init__([1.0, -1.0], [DirectionalField(V, W), DirectionalField(W, V)])
        self.V, self.W = V, W

    def eval(self, y):
        # evaluated in one place so that bracket(V, W) == -bracket(W, V) bit for bit
        return self.fields[0].eval(y) - self.fields[1].eval(y)


# --------------------------------------------------------------------------
# operations

def directional_vw(V: PathVectorField, W: PathVectorField, y: StoppedPath) -> np.ndarray:
    """(VW)(y) = d/de W(y^{V,e}) at e = 0."""
    V._check(y)
    W._check(y)
    return W.directional(y, V.eval(y))


def bracket(V: PathVectorField, W: PathVectorField, y: StoppedPath) -> np.ndarray:
    return directional_vw(V, W, y) - directional_vw(W, V, y)


def fine_derivative(V: PathVectorField, y: StoppedPath, ydot=None) -> np.ndarray:
    """V'(y; ydot); ``ydot`` defaults to the derivative of the sampled path."""
    V._check(y)
    if ydot is None:
        ydot = y.derivative_path()
    return V.fine_derivative(y, ydot)


def vw_fine_derivative(V: PathVectorField, W: PathVectorField, y: StoppedPath, ydot) -> np.ndarray:
    """Fine derivative of VW.

    Growing the history changes both the perturbation direction V(y) and the
    point where W is differentiated:

        (VW)'(y; .) = (DW)'(y; .)[V(y)] + (D_y W)[V'(y; .)],

    where the first term is d/de W'(y + e V(y); .) (a constant shift leaves
    ydot unchanged), taken here by central differences.
    """
    if not (V.finely_differentiable and W.finely_differentiable):
        raise NotFinelyDifferentiableError("both fields must be finely differentiable")
    ydot = _as_ydot(ydot, y)
    Vy = V.eval(y)
    u, nv = _split_direction(Vy)
    eps = _fd_scale(y)
    first = (W.fine_derivative(y.perturb(u, eps), ydot) - W.fine_derivative(y.perturb(u, -eps), ydot)) / (2 * eps) * nv
    second = W.directional(y, V.fine_derivative(y, ydot))
    return first + second


def vf_of_function(V: PathVectorField, y: StoppedPath, f, grad=None, hess=None, ydot=None):
    """(Vf)(y) = Df(y_a) V(y) and its fine derivative.

    ``grad(x)`` returns the gradient of the scalar function f and ``hess(x)``
    its Hessian matrix.  Returns the pair ((Vf)(y), (Vf)'(y; ydot)).
    """
    if grad is None or hess is None:
        raise ValueError("vf_of_function needs the gradient and the Hessian of f")
    V._check(y)
    if ydot is None:
        ydot = y.derivative_path()
    ydot = _as_ydot(ydot, y)
    x = y.end
    Vy = V.eval(y)
    g = np.asarray(grad(x), dtype=float)
    H = np.asarray(hess(x), dtype=float)
    value = np.sum(g * Vy, axis=-1)
    yd = ydot.eval_at(y.end_time)
    Vp = V.fine_derivative(y, ydot)
    deriv = np.einsum("...i,...ij,...j->...", yd, H, Vy) + np.sum(g * Vp, axis=-1)
    return value, deriv


def check_fine_identity(V: PathVectorField, y: StoppedPath, ydot=None) -> float:
    """|V(y_[0,a]) - V(y_[0,0]) - int_0^a V'(y_[0,r]; ydot_[0,r]) dr|.

    The integral is 3-point Gauss-Legendre on every piece of the sample grid
    refined by ``V.breakpoints(y)``, with ``ydot`` defaulting to the exact
    segment slopes of the sampled path.  The integrand may jump at sample
    nodes and at nodes shifted by a lag or window, and carries a 1/a weight
    for averages, so node evaluations are avoided and the rule is applied
    piece by piece.
    """
    V._check(y)
    if y.n_samples < 2:
        raise ValueError("check_fine_identity needs a path with at least 2 samples")
    if ydot is None:
        ydot = SegmentSlopes(y)
    t = np.union1d(y.times, V.breakpoints(y))
    # drop pieces shorter than rounding noise
    t = t[np.concatenate([[True], np.diff(t) > 1e-13 * max(1.0, t[-1])])]
    t[-1] = y.end_time
    total = 0.0
    for k in range(t.size - 1):
        h = t[k + 1] - t[k]
        for th, wt in zip(_GL_NODES, _GL_WEIGHTS):
            total = total + wt * h * V.fine_derivative(y.prefix(t[k] + th * h), ydot)
    lhs = V.eval(y) - V.eval(y.prefix(0.0))
    return float(np.max(np.linalg.norm(lhs - total, axis=-1)))


@dataclass(frozen=True)
class RegularityReport:
    """Probe maxima standing in for the analytic norms (never certified)."""

    sup: float
    directional: float
    second_directional: float
    fine: float | None
    probes: int

    @property
    def c1(self) -> float:
        return self.sup + self.directional

    @property
    def c2(self) -> float:
        return self.sup + self.directional + self.second_directional


def regularity_norms(V: PathVectorField, probes) -> RegularityReport:
    """Estimate sup |V|, sup |DV|, sup |D^2 V| and sup |V'| over probe histories.

    ``probes`` is an iterable of ``(path, direction)`` pairs; directions are
    normalised before use.  The fine derivative is evaluated against the
    sampled derivative of each non-point probe.
    """
    sup = d1 = d2 = 0.0
    fine = 0.0 if V.finely_differentiable else None
    n = 0
    for y, v in probes:
        n += 1
        u, _ = _split_direction(v)
        sup = max(sup, float(np.max(np.linalg.norm(V(y), axis=-1))))
        d1 = max(d1, float(np.max(np.linalg.norm(V.directional(y, u), axis=-1))))
        d2 = max(d2, float(np.max(np.linalg.norm(V.directional2(y, u, u), axis=-1))))
        if fine is not None:
            ydot = u if y.is_point else y.derivative_path()
            fine = max(fine, float(np.max(np.linalg.norm(V.fine_derivative(y, ydot), axis=-1))))
    return RegularityReport(sup, d1, d2, fine, n)
