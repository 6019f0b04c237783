"""Numerical studies: convergence rates, vanishing delays, Stratonovich
comparison, additive sewing and cross-consistency of the step fields.

Every study is deterministic given its seeds.  Work that is independent
across probes or parameters can be spread over threads with ``threads``;
results are always merged in input order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .approxflow import (
    FlowScheme,
    RateFit,
    build_step_field,
    compose_over_partition,
    dyadic_partition,
    euler_defect,
    fit_rate,
    level2_step_field,
    mu_c1_defect,
    solve_flow,
)
from .errors import NonGeometricDriverError, SewingError
from .pathspace import HistoryBuffer, StoppedPath
from .pdvf import LinearMarkovianField, PathVectorField
from .roughpath import GridRoughPath, lift_piecewise_linear, sample_brownian
from .tensor_lie import LyndonBasis, TensorShape, lyndon_coords


def default_threads() -> int:
    env = os.environ.get("ROUGHFLOW_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def ordered_map(func, items, threads: int | None = None) -> list:
    """map with an optional thread pool; output order follows ``items``."""
    items = list(items)
    threads = threads or 1
    if threads <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------------------
# rate studies


@dataclass
class RateReport:
    levels: list
    meshes: list
    diffs: list
    fit: RateFit
    targets: dict = field(default_factory=dict)

    @property
    def slope(self):
        return self.fit.slope

    @property
    def flagged(self) -> bool:
        return self.fit.slope is None

    def rows(self):
        for lv, m, d in zip(self.levels, self.meshes, self.diffs):
            yield lv, m, d


def rate_study(scheme: FlowScheme, s: float, t: float, probes, depths: Sequence[int], threads=None) -> RateReport:
    """Dyadic Cauchy differences sup_probes |mu_(pi_k) - mu_(pi_(k-1))| per level k.

    The fitted slope is compared with gamma - 1 (and 1/p, the exponent of
    the drift-present bound for 2 < p < 3); both are returned as targets.
    """
    depths = sorted(depths)
    if len(depths) < 5:
        raise ValueError("a rate study needs at least 5 dyadic levels (4 differences)")
    x = np.asarray(probes, dtype=float)

    def run(k):
        return compose_over_partition(scheme, dyadic_partition(s, t, k), x).value

    values = ordered_map(run, depths, threads)
    diffs, meshes, levels = [], [], []
    for k in range(1, len(depths)):
        diffs.append(float(np.max(np.linalg.norm(values[k] - values[k - 1], axis=-1))))
        meshes.append((t - s) / (1 << depths[k]))
        levels.append(depths[k])
    fit = fit_rate(meshes, diffs)
    targets = {"gamma_minus_one": scheme.gamma - 1.0, "one_over_p": 1.0 / scheme.p}
    return RateReport(levels, meshes, diffs, fit, targets)


def dyadic_intervals(s0: float, t0: float, k: int, count: int):
    """Up to ``count`` dyadic intervals of length (t0 - s0) 2^-k, evenly spread over [s0, t0]."""
    n = 1 << k
    idx = np.unique(np.linspace(0, n - 1, min(count, n)).round().astype(int))
    h = (t0 - s0) / n
    return [(s0 + i * h, s0 + (i + 1) * h) for i in idx]


def defect_study(scheme: FlowScheme, probes, levels: Sequence[int], kind: str = "euler",
                 s0: float = 0.0, t0: float = 1.0, intervals: int = 16, aggregate: str = "median",
                 threads=None) -> RateReport:
    """Euler or C1 defect over dyadic intervals of length (t0 - s0) 2^-k.

    Per interval the defect is maximised over probes; across intervals the
    values are combined with ``aggregate`` ("median" or "max").  For random
    drivers the max over many intervals carries the log factor of the
    modulus of continuity, which biases a fit over a short range of scales,
    so the median is the default scaling estimator.

    ``kind="euler"`` uses ``euler_defect``; ``kind="c1"`` the sum of the sup
    and Jacobian parts of ``mu_c1_defect`` with u the interval midpoint.
    The slope is a least-squares fit over all levels.
    """
    x = np.asarray(probes, dtype=float)

    if aggregate not in ("median", "max"):
        raise ValueError(f"unknown aggregate {aggregate!r}")

    def one(k):
        vals = []
        for s, t in dyadic_intervals(s0, t0, k, intervals):
            if kind == "euler":
                val = float(np.max(euler_defect(scheme, s, t, x)))
            elif kind == "c1":
                val = mu_c1_defect(scheme, s, 0.5 * (s + t), t, x).total
            else:
                raise ValueError(f"unknown defect kind {kind!r}")
            vals.append(val)
        return float(np.median(vals)) if aggregate == "median" else max(vals)

    diffs = ordered_map(one, levels, threads)
    meshes = [(t0 - s0) / (1 << k) for k in levels]
    fit = fit_rate(meshes, diffs, drop_first=False, last=len(levels), min_levels=2)
    if fit.slope is None and all(d > 0 for d in diffs):
        # the least-squares slope is meaningful without monotonicity here
        lx, ly = np.log(meshes), np.log(diffs)
        slope, intercept = np.polyfit(lx, ly, 1)
        fit = RateFit(float(slope), float(intercept), None, False, len(levels))
    return RateReport(list(levels), meshes, diffs, fit, {"gamma": scheme.gamma})


# ---------------------------------------------------------------------------
# vanishing delay


@dataclass
class DelayStudy:
    lambdas: list
    distances: list

    @property
    def decreasing(self) -> bool:
        d = self.distances
        return all(b < a for a, b in zip(d, d[1:]))

    def decreasing_with_slack(self, slack: float = 0.1) -> bool:
        d = self.distances
        return all(b <= (1.0 + slack) * a for a, b in zip(d, d[1:]))


def vanishing_delay_study(family: Callable[[float], FlowScheme], limit: FlowScheme, s: float, t: float,
                          probes, lambdas: Sequence[float], partition=None, threads=None) -> DelayStudy:
    """d(lambda) = max_probes |phi^lambda_ts(x) - phi_ts(x)| along a delay sequence.

    Flows are compositions over ``partition`` (default: the grid of the
    limit scheme's driver restricted to [s, t]).
    """
    x = np.asarray(probes, dtype=float)
    if partition is None:
        g = limit.X.grid
        partition = g[(g >= s) & (g <= t)]
    ref = compose_over_partition(limit, partition, x).value

    def one(lam):
        val = compose_over_partition(family(lam), partition, x).value
        return float(np.max(np.linalg.norm(val - ref, axis=-1)))

    return DelayStudy(list(lambdas), ordered_map(one, lambdas, threads))


# ---------------------------------------------------------------------------
# reference integrator and the Stratonovich comparison


def reference_flow(V: PathVectorField | None, F: Sequence[PathVectorField], driver: StoppedPath, x0,
                   h: Callable[[float], float] | None = None, refine: int = 16) -> StoppedPath:
    """RK4 solution of y' = V(y_[0,r]) h'(r) + V_i(y_[0,r]) X'^i(r) for a piecewise-linear driver.

    Each driver cell is split into ``refine`` steps and the fields see the
    real-time history.  This is a plain ODE integrator that does not touch
    the rough-path or step-map code, so it serves as an independent
    reference.  ``driver`` must start at time 0.
    """
    x0 = np.asarray(x0, dtype=float)
    times = driver.times
    dt_cells = np.diff(times)
    slopes = np.diff(driver.values, axis=0) / dt_cells[:, None]
    buf = HistoryBuffer(StoppedPath.point(x0), (times.size - 1) * refine + 2)

    def rhs(path, rates, dh):
        out = np.zeros(x0.shape)
        for rate, Fi in zip(rates, F):
            if rate != 0.0:
                out = out + rate * Fi.eval(path)
        if V is not None and dh != 0.0:
            out = out + dh * V.eval(path)
        return out

    for c in range(times.size - 1):
        a, b = times[c], times[c + 1]
        dt = (b - a) / refine
        rates = slopes[c]
        dh = (h(b) - h(a)) / (b - a) if h is not None else 0.0
        for j in range(refine):
            r = a + j * dt
            y = buf.end.copy()
            k1 = rhs(buf.view(), rates, dh)
            k2 = rhs(buf.view_with(r + 0.5 * dt, y + 0.5 * dt * k1), rates, dh)
            k3 = rhs(buf.view_with(r + 0.5 * dt, y + 0.5 * dt * k2), rates, dh)
            k4 = rhs(buf.view_with(r + dt, y + dt * k3), rates, dh)
            buf.push(b if j == refine - 1 else r + dt, y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
    return buf.snapshot()


@dataclass
class StratonovichRow:
    steps: int
    value: float
    exact: float

    @property
    def error(self) -> float:
        return abs(self.value - self.exact)


def stratonovich_compare(seed: int, steps: Sequence[int], T: float = 1.0, x0: float = 1.0,
                         fine_steps: int | None = None, tol: float = 1e-10, substeps: int = 32):
    """Scalar linear equation dx = x o dW solved as a rough flow, against x0 exp(W_T).

    One Brownian path is sampled on the finest grid (``fine_steps``,
    default the largest entry of ``steps``) and subsampled to every grid of
    ``steps``, so all rows share the same W_T.
    """
    steps = list(steps)
    fine = fine_steps or max(steps)
    for n in steps:
        if fine % n:
            raise ValueError(f"grid with {n} steps is not a subgrid of the {fine}-step grid")
    path, _ = sample_brownian(seed, np.linspace(0.0, T, fine + 1), 1, depth=2)
    exact = x0 * float(np.exp(path.end[0] - path.start[0]))
    rows = []
    for n in steps:
        sub = StoppedPath(path.times[:: fine // n], path.values[:: fine // n])
        X = lift_piecewise_linear(sub, 2, p=2.5)
        scheme = FlowScheme([LinearMarkovianField([[1.0]])], X, substeps=substeps)
        res = solve_flow(scheme, 0.0, T, np.array([x0]), tol=tol, max_depth=14)
        rows.append(StratonovichRow(n, float(res.value[0]), exact))
    return rows


def deterministic_compare(T: float = 1.0, x0: float = 1.0, steps: int = 64, tol: float = 1e-10):
    """The same comparison with W replaced by the identity path: x0 e^T."""
    t = np.linspace(0.0, T, steps + 1)
    X = lift_piecewise_linear(StoppedPath(t, t[:, None]), 2, p=2.5)
    scheme = FlowScheme([LinearMarkovianField([[1.0]])], X)
    res = solve_flow(scheme, 0.0, T, np.array([x0]), tol=tol, max_depth=14)
    return StratonovichRow(steps, float(res.value[0]), x0 * float(np.exp(T)))


@dataclass
class DelayModeComparison:
    reference: np.ndarray
    fresh: np.ndarray
    carried: np.ndarray

    @property
    def fresh_error(self) -> float:
        return float(np.max(np.abs(self.fresh - self.reference)))

    @property
    def carried_error(self) -> float:
        return float(np.max(np.abs(self.carried - self.reference)))


def delay_mode_compare(V1: PathVectorField, driver: StoppedPath, x0, substeps: int = 4,
                       refine: int = 16) -> DelayModeComparison:
    """Delay equation dx = V1(x) o dW: fresh and carried step maps on the driver
    grid against a fine Wong-Zakai reference solution of the delay ODE."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    X = lift_piecewise_linear(driver, 2, p=2.5)
    ref = reference_flow(None, [V1], driver, x0, refine=refine).end
    base = FlowScheme([V1], X, substeps=substeps)
    fresh = compose_over_partition(base, driver.times, x0).value
    carried = compose_over_partition(base.with_options(history_mode="carried"), driver.times, x0).value
    return DelayModeComparison(ref, fresh, carried)


# ---------------------------------------------------------------------------
# additive sewing


def sew_additive(germ: Callable, grid, tol: float = 1e-12, max_level: int = 24, gamma: float | None = None,
                 max_evals: int = 1 << 24) -> StoppedPath:
    """Sewing limit I_t = lim sum_{pi} germ(s_i, s_(i+1)) on [0, t] for t in ``grid``.

    Each cell of ``grid`` is refined dyadically.  ``germ(s, t)`` must accept
    arrays of start and end times and return one value per pair.  Successive
    partial sums are extrapolated with the observed contraction ratio of
    their differences (Aitken); when ``gamma`` is given and the observed
    ratio is unusable the Richardson factor for the declared almost
    additivity exponent is used instead.  Raises ``SewingError`` when the
    extrapolated sums stop contracting before ``tol`` is reached.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("sewing grids start at 0 and increase strictly")
    a, b = grid[:-1], grid[1:]
    ncell = a.size

    def partial(level):
        n = 1 << level
        frac = np.arange(n + 1) / n
        pts = a[:, None] + (b - a)[:, None] * frac[None, :]
        vals = np.asarray(germ(pts[:, :-1].ravel(), pts[:, 1:].ravel()), dtype=float)
        return vals.reshape(ncell, n).sum(axis=1)

    sums = [partial(0)]
    est_prev = sums[0]
    done = np.zeros(ncell, dtype=bool)
    est = sums[0].copy()
    history = []
    for level in range(1, max_level + 1):
        if ncell * (1 << level) > max_evals:
            break
        sums.append(partial(level))
        d1 = sums[-1] - sums[-2]
        cur = sums[-1].copy()
        if level >= 2:
            d0 = sums[-2] - sums[-3]
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(d0 != 0, d1 / d0, 0.0)
            good = (r > 0) & (r < 0.95) & np.isfinite(r)
            corr = np.where(good, d1 * r / (1.0 - r), 0.0)
            if gamma is not None:
                rich = d1 / (2.0 ** (gamma - 1.0) - 1.0)
                corr = np.where(good, corr, rich)
            cur = cur + corr
        elif gamma is not None:
            cur = cur + d1 / (2.0 ** (gamma - 1.0) - 1.0)
        change = np.abs(cur - est_prev)
        history.append(float(np.max(change)))
        done = change <= tol * np.maximum(1.0, np.abs(cur))
        est_prev = cur
        est = cur
        if np.all(np.abs(d1) == 0.0):
            done[:] = True
        if np.all(done) and level >= 2:
            break
    else:
        level = max_level
    if not np.all(done):
        raise SewingError(
            f"dyadic sewing did not settle below tol={tol:g} by level {level}; "
            f"last changes {', '.join(f'{c:.3e}' for c in history[-4:])}"
        )
    values = np.concatenate([[0.0], np.cumsum(est)])
    return StoppedPath(grid, values)


def young_germ(f: StoppedPath, g: StoppedPath):
    """mu_st = f_s (g_t - g_s) for scalar sampled paths (linear interpolation)."""

    def germ(s, t):
        fs = f.eval_at(s)[..., 0]
        return fs * (g.eval_at(t)[..., 0] - g.eval_at(s)[..., 0])

    return germ


def riemann_stieltjes_linear(f: StoppedPath, g: StoppedPath) -> float:
    """Exact int f dg for piecewise-linear f, g on a common grid."""
    fv, gv = f.values[:, 0], g.values[:, 0]
    return float(np.sum(0.5 * (fv[1:] + fv[:-1]) * np.diff(gv)))


# ---------------------------------------------------------------------------
# consistency of the step fields


def consistency_level2_general(scheme: FlowScheme, histories, intervals=None, rng_seed: int = 0) -> float:
    """Max |Lyndon-basis step field - level-2 step field| over histories and intervals.

    Raises ``NonGeometricDriverError`` (listing the Lyndon coefficients) when
    the residual exceeds 1e-10.
    """
    if intervals is None:
        rng = np.random.default_rng(rng_seed)
        T = scheme.X.end_time
        intervals = [tuple(sorted(rng.uniform(0, T, 2))) for _ in range(len(histories))]
    worst = 0.0
    for y, (s, t) in zip(histories, intervals):
        a = build_step_field(scheme, s, t).eval(y)
        b = level2_step_field(scheme, s, t).eval(y)
        res = float(np.max(np.abs(a - b)))
        if res > 1e-10:
            lam = scheme.X.log_increment(s, t).truncate(scheme.level)
            coords = lyndon_coords(lam, scheme.basis, check=False)
            listing = ", ".join(
                f"{'.'.join(map(str, w))}={c:.6g}" for w, c in zip(scheme.basis.words, coords.coefficients)
            )
            raise NonGeometricDriverError(
                f"step fields disagree by {res:.3e} on [{s:g}, {t:g}]; Lyndon coefficients {listing}",
                residual=res,
            )
        worst = max(worst, res)
    return worst


# ---------------------------------------------------------------------------
# invariant suite


@dataclass
class CheckResult:
    name: str
    passed: int
    total: int
    worst: float

    @property
    def ok(self) -> bool:
        return self.passed == self.total


def selftest_suite(seed: int = 0) -> list:
    """Randomised invariant checks used by the ``selftest`` command.

    Each entry counts the cases within tolerance and records the worst
    residual.
    """
    from .pdvf import DelayField, MarkovianField, MovingAverageField, bracket, check_fine_identity
    from .roughpath import check_weak_geometric
    from .tensor_lie import TensorElement, lie_bracket, tensor_exp, tensor_log

    rng = np.random.default_rng(seed)
    out = []

    def record(name, residuals, tol):
        residuals = [float(r) for r in residuals]
        out.append(CheckResult(name, sum(r <= tol for r in residuals), len(residuals), max(residuals)))

    res = []
    for _ in range(200):
        shape = TensorShape(int(rng.integers(1, 4)), int(rng.integers(1, 5)))
        a = TensorElement(shape, [np.zeros(1)] + [0.5 * rng.standard_normal(shape.level_size(n)) for n in range(1, shape.depth + 1)])
        res.append((tensor_log(tensor_exp(a)) - a).max_abs())
    record("exp_log_roundtrip", res, 1e-10)

    res_chen, res_geo = [], []
    for _ in range(40):
        ell, depth = int(rng.integers(1, 4)), int(rng.integers(2, 5))
        m = int(rng.integers(2, 12))
        t = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 0.3, m))])
        X = lift_piecewise_linear(StoppedPath(t, rng.standard_normal((m + 1, ell))), depth)
        s, u, v = np.sort(rng.uniform(0.0, t[-1], 3))
        res_chen.append((X.query(s, u) @ X.query(u, v) - X.query(s, v)).max_abs())
        res_geo.append(check_weak_geometric(X).residual)
    record("chen_identity", res_chen, 1e-10)
    record("weak_geometric_lift", res_geo, 1e-10)

    res = []
    for _ in range(50):
        shape = TensorShape(int(rng.integers(2, 4)), int(rng.integers(2, 5)))
        a = TensorElement.from_vector(shape, rng.standard_normal(shape.alphabet_size))
        b = TensorElement.from_vector(shape, rng.standard_normal(shape.alphabet_size))
        lie = a + lie_bracket(a, b) + lie_bracket(b, lie_bracket(a, b)) * 0.5
        basis = LyndonBasis(shape)
        coords = lyndon_coords(lie, basis)
        res.append((basis.element(coords.coefficients) - lie).max_abs())
    record("lyndon_reconstruction", res, 1e-10)

    res = []
    for _ in range(20):
        A, B = rng.standard_normal((2, 3, 3))
        V, W = LinearMarkovianField(A), LinearMarkovianField(B)
        y = StoppedPath.point(rng.standard_normal(3))
        res.append(float(np.max(np.abs(bracket(V, W, y) + bracket(W, V, y)))))
        res.append(float(np.max(np.abs(bracket(V, W, y) - (B @ A - A @ B) @ y.end))))
    record("bracket_linear_fields", res, 1e-6)

    path, X = sample_brownian(seed + 1, np.linspace(0.0, 1.0, 65), 1, depth=2)
    scheme = FlowScheme([LinearMarkovianField([[1.0]])], X)
    exact = float(np.exp(path.end[0] - path.start[0]))
    res = []
    for k in (3, 5):
        val = compose_over_partition(scheme, dyadic_partition(0.0, 1.0, k), np.array([1.0])).value
        res.append(abs(val[0] - exact))
    record("abelian_oracle", res, 1e-8)

    _, X2 = sample_brownian(seed + 2, np.linspace(0.0, 1.0, 33), 2, depth=2)

    F = [MarkovianField.from_map("tanh", 2, [[0.8, 0.2], [-0.3, 0.6]]),
         DelayField.from_map("sin", 2, [0.1], [[0.1, 0.7], [0.5, -0.4]])]
    sch2 = FlowScheme(F, X2)
    hist = []
    for _ in range(20):
        n = int(rng.integers(1, 6))
        tt = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 0.5, n))])
        hist.append(StoppedPath(tt, rng.standard_normal((n + 1, 2))))
    worst = consistency_level2_general(sch2, hist, rng_seed=seed)
    record("step_field_consistency", [worst], 1e-10)

    times = np.linspace(0.0, 1.0, 257)
    y = StoppedPath(times, np.stack([np.sin(3 * times), times * times], axis=1))
    fields = [MovingAverageField.from_map("tanh", 2), DelayField.from_map("tanh", 2, [0.3])]
    record("fine_identity", [check_fine_identity(V, y) for V in fields], 1e-3)
    return out
