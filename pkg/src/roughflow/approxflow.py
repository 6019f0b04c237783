"""Step maps mu_ts of the path-dependent rough equation and their composition.

For a scheme (V, V_1..V_ell, h, X) the step map mu_ts is the time-1 map of
the path-dependent ODE

    y'_u = (h_t - h_s) V(y_[0,u]) + sum_w c_w(Lambda_ts) V_[w](y_[0,u]),

where c_w are the coordinates of Lambda_ts = log X_st (truncated at level
[p]) in the Lyndon basis and V_[w] is the bracket field of the standard
bracketing of the Lyndon word w.  For [p] = 2 this is
(h_t - h_s) V + X^i V_i + 1/2 XX^{jk} [V_j, V_k].

Histories handed to the fields either restart at the point x on an
internal clock u in [0, 1] ("fresh", the default) or continue the real-time
trajectory of the flow ("carried"), in which case the internal segment is
appended on real time u -> base + u (t - s).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import (
    ConfigError,
    FlowDivergenceError,
    NonConvergenceError,
    NonGeometricDriverError,
    NotLieElementError,
    ShapeMismatchError,
)
from .pathspace import HistoryBuffer, StoppedPath
from .pdvf import (
    BracketField,
    DirectionalField,
    LinearCombinationField,
    PathVectorField,
    ZeroField,
)
from .roughpath import GridRoughPath
from .tensor_lie import LyndonBasis, TensorShape, lyndon_coords, word_index

HISTORY_MODES = ("fresh", "carried")
JACOBIAN_STEP = 1e-5


class DrivingPath:
    """Scalar drift driver h with Hoelder exponent ``alpha`` (metadata)."""

    def __init__(self, func: Callable[[float], float], alpha: float = 1.0, kind: str = "custom"):
        self._func = func
        self.alpha = float(alpha)
        self.kind = kind

    def __call__(self, t: float) -> float:
        return float(self._func(t))

    def increment(self, s: float, t: float) -> float:
        return self(t) - self(s)

    @classmethod
    def zero(cls) -> "DrivingPath":
        return cls(lambda t: 0.0, 1.0, "zero")

    @classmethod
    def linear(cls, rate: float = 1.0) -> "DrivingPath":
        return cls(lambda t: rate * t, 1.0, "linear")

    @classmethod
    def sampled(cls, path: StoppedPath, alpha: float = 1.0) -> "DrivingPath":
        if path.dim != 1 or path.batch_shape:
            raise ShapeMismatchError("a sampled drift driver must be a scalar path")
        return cls(lambda t: path.eval_at(t)[0], alpha, "sampled")


def lyndon_bracket_fields(F: Sequence[PathVectorField], basis: LyndonBasis) -> list:
    """V_[w] for every Lyndon word of ``basis``, built from the standard bracketing."""
    cache = {}

    def build(tree):
        if isinstance(tree, int):
            return F[tree - 1]
        key = tree
        if key not in cache:
            cache[key] = BracketField(build(tree[0]), build(tree[1]))
        return cache[key]

    return [build(tree) for tree in basis.trees]


class StepField(LinearCombinationField):
    """Frozen-coefficient field of one step map, with its coefficients recorded."""

    def __init__(self, dim, drift_coeff, drift, words, coeffs, fields):
        cs, fs = [], []
        if drift_coeff != 0.0:
            cs.append(drift_coeff)
            fs.append(drift)
        for c, f in zip(coeffs, fields):
            if c != 0.0:
                cs.append(float(c))
                fs.append(f)
        if not fs:
            cs, fs = [0.0], [ZeroField(dim)]
        super().__init__(cs, fs)
        self.drift_coeff = float(drift_coeff)
        self.coefficients = dict(zip(words, (float(c) for c in coeffs)))

    @property
    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.coeffs)


@dataclass
class FlowScheme:
    """The assembled problem d phi = V h(dt) + F X(dt).

    ``F`` lists the ell diffusion fields; ``V`` is the drift (``None`` for
    no drift).  ``p`` and ``alpha`` default to the metadata carried by the
    rough path; gamma = min(([p] + 1) / p, alpha + 1 / p) must exceed 1.
    """

    F: Sequence[PathVectorField]
    X: GridRoughPath
    V: PathVectorField | None = None
    h: DrivingPath | None = None
    p: float | None = None
    alpha: float | None = None
    substeps: int = 32
    history_mode: str = "fresh"
    lie_tol: float | None = None
    basis: LyndonBasis = field(init=False, repr=False)
    brackets: list = field(init=False, repr=False)

    def __post_init__(self):
        self.F = list(self.F)
        if self.p is None:
            self.p = self.X.p
        if self.alpha is None:
            self.alpha = self.h.alpha if self.h is not None else self.X.alpha
        if self.h is None:
            self.h = DrivingPath.zero()
        if not self.F:
            raise ConfigError("a scheme needs at least one diffusion field")
        dims = {f.dim for f in self.F}
        if self.V is not None:
            dims.add(self.V.dim)
        if len(dims) != 1:
            raise ConfigError(f"fields act on different dimensions: {sorted(dims)}")
        self.dim = dims.pop()
        if self.V is None:
            self.V = ZeroField(self.dim)
        if len(self.F) != self.X.alphabet_size:
            raise ConfigError(
                f"rough path has {self.X.alphabet_size} components but {len(self.F)} diffusion fields were given"
            )
        if not self.p >= 1:
            raise ConfigError(f"p must be at least 1, got {self.p}")
        if self.alpha + 1.0 / self.p <= 1.0:
            raise ConfigError(
                f"alpha + 1/p must exceed 1, got alpha={self.alpha:g}, p={self.p:g} "
                f"(alpha + 1/p = {self.alpha + 1.0 / self.p:g})"
            )
        self.level = int(np.floor(self.p))
        if self.X.depth < self.level:
            raise ConfigError(f"rough path depth {self.X.depth} is below [p] = {self.level}")
        if self.substeps < 1:
            raise ConfigError(f"substeps must be positive, got {self.substeps}")
        if self.history_mode not in HISTORY_MODES:
            raise ConfigError(f"history_mode must be one of {HISTORY_MODES}, got {self.history_mode!r}")
        self.basis = LyndonBasis(TensorShape(self.X.alphabet_size, self.level))
        self.brackets = lyndon_bracket_fields(self.F, self.basis)

    @property
    def gamma(self) -> float:
        return min((self.level + 1) / self.p, self.alpha + 1.0 / self.p)

    @property
    def ell(self) -> int:
        return self.X.alphabet_size

    def with_options(self, **kw) -> "FlowScheme":
        args = dict(F=self.F, X=self.X, V=self.V, h=self.h, p=self.p, alpha=self.alpha,
                    substeps=self.substeps, history_mode=self.history_mode, lie_tol=self.lie_tol)
        args.update(kw)
        return FlowScheme(**args)

    def truncated_increment(self, s: float, t: float) -> list:
        """Levels 0..[p] of X_st."""
        return self.X.query_levels(s, t)[: self.level + 1]


# ---------------------------------------------------------------------------
# step fields


def build_step_field(scheme: FlowScheme, s: float, t: float) -> StepField:
    """The frozen field (h_t - h_s) V + sum_w c_w V_[w] of the step (s, t)."""
    if s > t:
        raise ValueError(f"need s <= t, got s={s!r}, t={t!r}")
    words = scheme.basis.words
    if s == t:
        return StepField(scheme.dim, 0.0, scheme.V, words, np.zeros(len(words)), scheme.brackets)
    lam = scheme.X.log_increment(s, t).truncate(scheme.level)
    try:
        coords = lyndon_coords(lam, scheme.basis, tol=scheme.lie_tol)
    except NotLieElementError as exc:
        listing = ", ".join(f"{'.'.join(map(str, w))}={v:.6g}" for w, v in lam.items(atol=0.0))
        raise NonGeometricDriverError(
            f"non-geometric driver on [{s:g}, {t:g}]: log-increment is not a Lie element "
            f"(residual {exc.residual:.3e}); coefficients {listing}",
            residual=exc.residual,
            coefficients=dict(lam.items()),
        ) from None
    return StepField(scheme.dim, scheme.h.increment(s, t), scheme.V, words, coords.coefficients, scheme.brackets)


def level2_step_field(scheme: FlowScheme, s: float, t: float) -> PathVectorField:
    """(h_t - h_s) V + X^i V_i + 1/2 XX^{jk} [V_j, V_k], read off X_st directly.

    Independent of the Lyndon machinery; used to cross-check
    ``build_step_field`` when 2 <= p < 3.
    """
    if scheme.level != 2:
        raise ValueError("the level-2 step field needs 2 <= p < 3")
    lv = scheme.X.query_levels(s, t)
    ell = scheme.ell
    x1 = lv[1]
    x2 = lv[2].reshape(ell, ell)
    coeffs = [scheme.h.increment(s, t)]
    fields = [scheme.V]
    for i in range(ell):
        coeffs.append(x1[i])
        fields.append(scheme.F[i])
    for j in range(ell):
        for k in range(ell):
            if j != k:
                coeffs.append(0.5 * x2[j, k])
                fields.append(BracketField(scheme.F[j], scheme.F[k]))
    return LinearCombinationField(coeffs, fields)


# ---------------------------------------------------------------------------
# step maps


def _as_points(x, dim):
    x = np.array(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != dim:
        raise ShapeMismatchError(f"points must have last dimension {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial points must be finite")
    return x


def _integrate(W: PathVectorField, buf: HistoryBuffer, span: float, n: int, step_index=None):
    """RK4 on the history buffer over buffer time ``span``, solving dy/dtau = W / span.

    Every substep end point is committed to the buffer; stage points are
    provisional.
    """
    dtau = span / n
    scale = 1.0 / span
    t0 = buf.end_time
    for k in range(n):
        tk = t0 + k * dtau
        y = buf.end.copy()
        # overflow is detected below, so silence the intermediate warnings
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = W.eval(buf.view()) * scale
            k2 = W.eval(buf.view_with(tk + 0.5 * dtau, y + 0.5 * dtau * k1)) * scale
            k3 = W.eval(buf.view_with(tk + 0.5 * dtau, y + 0.5 * dtau * k2)) * scale
            k4 = W.eval(buf.view_with(tk + dtau, y + dtau * k3)) * scale
            y_next = y + (dtau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y_next)):
            raise FlowDivergenceError(
                f"step ODE diverged at internal time {(k + 1) / n:.6g}"
                + (f" in step {step_index}" if step_index is not None else ""),
                internal_time=(k + 1) / n,
                step_index=step_index,
            )
        buf.push(tk + dtau if k < n - 1 else t0 + span, y_next)
    return buf.end.copy()


def mu(scheme: FlowScheme, s: float, t: float, x, history: HistoryBuffer | None = None) -> np.ndarray:
    """mu_ts(x): time-1 value of the step ODE started at x.

    ``x`` may carry leading batch axes.  In carried mode ``history`` holds
    the real-time trajectory so far (its end must be x); without it the
    history starts as the point x.
    """
    x = _as_points(x, scheme.dim)
    W = build_step_field(scheme, s, t)
    if W.is_zero:
        if history is not None and scheme.history_mode == "carried" and t > s:
            _extend_constant(history, t - s, scheme.substeps)
        return x.copy()
    if scheme.history_mode == "carried":
        buf = history if history is not None else HistoryBuffer(StoppedPath.point(x), scheme.substeps + 2)
        return _integrate(W, buf, t - s, scheme.substeps)
    buf = HistoryBuffer(StoppedPath.point(x), scheme.substeps + 2)
    return _integrate(W, buf, 1.0, scheme.substeps)


def _extend_constant(buf: HistoryBuffer, span, n):
    t0, y = buf.end_time, buf.end.copy()
    for k in range(1, n + 1):
        buf.push(t0 + span * k / n, y)


class Composition(NamedTuple):
    value: np.ndarray
    times: np.ndarray
    points: np.ndarray
    history: StoppedPath | None


def compose_over_partition(scheme: FlowScheme, partition, x, history: HistoryBuffer | None = None) -> Composition:
    """mu_(s_n s_(n-1)) o ... o mu_(s_1 s_0) applied to x, recording every step.

    In carried mode the real-time history (time 0 at s_0) threads through
    the steps; it is returned as ``history``.
    """
    pi = np.asarray(partition, dtype=float)
    if pi.ndim != 1 or pi.size < 2 or np.any(np.diff(pi) < 0):
        raise ValueError("a partition is a non-decreasing sequence of at least two times")
    x = _as_points(x, scheme.dim)
    carried = scheme.history_mode == "carried"
    buf = None
    if carried:
        buf = history if history is not None else HistoryBuffer(StoppedPath.point(x), 64)
    points = [x.copy()]
    cur = x
    for k in range(pi.size - 1):
        s, t = pi[k], pi[k + 1]
        if t == s:
            points.append(cur.copy())
            continue
        try:
            if carried:
                W = build_step_field(scheme, s, t)
                if W.is_zero:
                    _extend_constant(buf, t - s, scheme.substeps)
                    cur = buf.end.copy()
                else:
                    cur = _integrate(W, buf, t - s, scheme.substeps, step_index=k)
            else:
                cur = mu(scheme, s, t, cur)
        except FlowDivergenceError as exc:
            raise FlowDivergenceError(
                f"flow diverged in step {k} on [{s:g}, {t:g}] at internal time {exc.internal_time:.6g}",
                internal_time=exc.internal_time,
                step_index=k,
            ) from None
        points.append(cur.copy())
    return Composition(cur, pi.copy(), np.stack(points), buf.snapshot() if carried else None)


def dyadic_partition(s: float, t: float, level: int) -> np.ndarray:
    if s > t or level < 0:
        raise ValueError(f"need s <= t and level >= 0, got s={s!r}, t={t!r}, level={level!r}")
    n = 1 << level
    return s + (t - s) * np.arange(n + 1) / n


# ---------------------------------------------------------------------------
# defects


class C1Defect(NamedTuple):
    sup: float
    jacobian: float

    @property
    def total(self) -> float:
        return self.sup + self.jacobian


def _perturbation_stack(x, step):
    """Points x +- step_j e_j stacked on a new leading axis (2d, *batch, d)."""
    d = x.shape[-1]
    eye = np.eye(d)
    h = step[..., None]  # (*batch, 1)
    plus = x[None] + eye.reshape((d,) + (1,) * (x.ndim - 1) + (d,)) * h[None]
    minus = x[None] - eye.reshape((d,) + (1,) * (x.ndim - 1) + (d,)) * h[None]
    return np.concatenate([plus, minus], axis=0)


def _jacobians(values, step, d):
    plus, minus = values[:d], values[d:]
    cols = (plus - minus) / (2.0 * step[None, ..., None])  # (d, *batch, d): column j
    return np.moveaxis(cols, 0, -1)  # (*batch, d_out, d_in)


def mu_c1_defect(scheme: FlowScheme, s: float, u: float, t: float, probes) -> C1Defect:
    """Largest |mu_tu(mu_us(x)) - mu_ts(x)| and Jacobian gap (operator norm) over probes.

    Jacobians are central differences with step 1e-5 (1 + |x|).
    """
    if not s <= u <= t:
        raise ValueError("need s <= u <= t")
    x = _as_points(probes, scheme.dim)
    if x.ndim == 1:
        x = x[None]
    d = scheme.dim
    step = JACOBIAN_STEP * (1.0 + np.linalg.norm(x, axis=-1))
    pts = np.concatenate([x[None], _perturbation_stack(x, step)], axis=0)
    two = compose_over_partition(scheme, [s, u, t], pts).value
    one = compose_over_partition(scheme, [s, t], pts).value
    sup = float(np.max(np.linalg.norm(two[0] - one[0], axis=-1)))
    J2 = _jacobians(two[1:], step, d)
    J1 = _jacobians(one[1:], step, d)
    jac = float(np.max(np.linalg.norm(J2 - J1, ord=2, axis=(-2, -1))))
    return C1Defect(sup, jac)


def word_fields(F: Sequence[PathVectorField], max_len: int) -> dict:
    """V_I = V_(i1)(V_(i2)(... V_(ir))) for all words up to ``max_len``, as fields."""
    ell = len(F)
    out = {}
    for i in range(1, ell + 1):
        out[(i,)] = F[i - 1]
    for r in range(2, max_len + 1):
        for w in [w for w in out if len(w) == r - 1]:
            for i in range(1, ell + 1):
                out[(i,) + w] = DirectionalField(F[i - 1], out[w])
    return out


def euler_expansion(scheme: FlowScheme, s: float, t: float, x) -> np.ndarray:
    """x + (h_t - h_s) V(x) + sum_{|I| <= [p]} X^I_st V_I(x)."""
    x = _as_points(x, scheme.dim)
    y = StoppedPath.point(x)
    lv = scheme.truncated_increment(s, t)
    out = x + scheme.h.increment(s, t) * scheme.V.eval(y)
    fields = getattr(scheme, "_word_fields", None)
    if fields is None:
        fields = word_fields(scheme.F, scheme.level)
        scheme._word_fields = fields
    ell = scheme.ell
    for w, Vw in fields.items():
        c = lv[len(w)][word_index(w, ell)]
        if c != 0.0:
            out = out + c * Vw.eval(y)
    return out


def euler_defect(scheme: FlowScheme, s: float, t: float, probes) -> np.ndarray:
    """Per-probe |mu_ts(x) - Euler expansion at x|."""
    x = _as_points(probes, scheme.dim)
    m = mu(scheme, s, t, x)
    return np.linalg.norm(m - euler_expansion(scheme, s, t, x), axis=-1)


# ---------------------------------------------------------------------------
# rate fits and the flow solver


class RateFit(NamedTuple):
    slope: float | None
    intercept: float | None
    residual: float | None
    monotone: bool
    levels_used: int


def fit_rate(meshes, diffs, drop_first: bool = True, last: int = 4, min_levels: int = 4) -> RateFit:
    """Least-squares slope of log diff against log mesh.

    The first level is discarded as pre-asymptotic and the last ``last``
    remaining levels are fitted.  A slope is only reported when the
    remaining differences decrease monotonically over at least
    ``min_levels`` levels and are all positive.
    """
    meshes = np.asarray(meshes, dtype=float)
    diffs = np.asarray(diffs, dtype=float)
    if drop_first and meshes.size > 1:
        meshes, diffs = meshes[1:], diffs[1:]
    meshes, diffs = meshes[-last:], diffs[-last:]
    ok = diffs.size >= min_levels and np.all(diffs > 0) and np.all(np.diff(diffs) < 0)
    if diffs.size < 2 or np.any(diffs <= 0):
        return RateFit(None, None, None, bool(ok), int(diffs.size))
    lx, ly = np.log(meshes), np.log(diffs)
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = float(np.sqrt(np.mean((A @ np.array([slope, intercept]) - ly) ** 2)))
    if not ok:
        return RateFit(None, float(intercept), resid, False, int(diffs.size))
    return RateFit(float(slope), float(intercept), resid, True, int(diffs.size))


@dataclass
class FlowResult:
    value: np.ndarray
    partition: np.ndarray
    depth: int
    levels: list
    differences: list
    times: np.ndarray
    trace: np.ndarray
    rate: RateFit
    flow_defect: float | None = None
    history: StoppedPath | None = None

    @property
    def converged(self) -> bool:
        return bool(self.differences) and self.differences[-1] is not None


def solve_flow(scheme: FlowScheme, s: float, t: float, x, tol: float = 1e-6, max_depth: int = 10,
               min_depth: int = 0, check_flow: bool = False) -> FlowResult:
    """phi_ts(x) by dyadic refinement of compositions of step maps.

    Level k uses the uniform partition of [s, t] into 2^k intervals.  The
    refinement stops at the first k with sup_probes |mu_(pi_k) - mu_(pi_(k-1))|
    below ``tol`` (and k > min_depth); the value returned is that of the
    finest level computed.  ``depth`` is the coarsest level certified
    within ``tol`` of its refinement.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol!r}")
    if s > t:
        raise ValueError(f"need s <= t, got s={s!r}, t={t!r}")
    x = _as_points(x, scheme.dim)
    prev = compose_over_partition(scheme, dyadic_partition(s, t, 0), x)
    levels, diffs = [0], []
    k = 0
    while True:
        if k >= max_depth:
            raise NonConvergenceError(
                f"no Cauchy decrease below tol={tol:g} after {max_depth} dyadic refinements "
                f"(last differences: {', '.join(f'{d:.3e}' for d in diffs[-4:])})",
                diagnostics={"levels": levels, "differences": diffs},
            )
        k += 1
        cur = compose_over_partition(scheme, dyadic_partition(s, t, k), x)
        diff = float(np.max(np.linalg.norm(cur.value - prev.value, axis=-1)))
        levels.append(k)
        diffs.append(diff)
        prev = cur
        if diff < tol and k > min_depth:
            break
    meshes = [(t - s) / (1 << lv) for lv in levels[1:]]
    rate = fit_rate(meshes, diffs)
    result = FlowResult(
        value=prev.value,
        partition=prev.times,
        depth=k - 1,
        levels=levels,
        differences=diffs,
        times=prev.times,
        trace=prev.points,
        rate=rate,
        history=prev.history,
    )
    if check_flow and t > s:
        u = 0.5 * (s + t)
        if scheme.history_mode == "carried":
            first = compose_over_partition(scheme, dyadic_partition(s, u, max(k - 1, 0)), x)
            buf = HistoryBuffer(first.history, 64)
            second = compose_over_partition(scheme, dyadic_partition(u, t, max(k - 1, 0)), first.value, history=buf)
            composed = second.value
        else:
            first = solve_flow(scheme, s, u, x, tol, max_depth)
            composed = solve_flow(scheme, u, t, first.value, tol, max_depth).value
        result.flow_defect = float(np.max(np.linalg.norm(composed - prev.value, axis=-1)))
    return result
