"""Weak geometric rough paths stored as group increments on a time grid.

A ``GridRoughPath`` keeps the increments g_i = X_{t_i t_(i+1)} of a rough
path over consecutive grid cells, together with products over aligned
dyadic blocks of cells, so that a grid-aligned query multiplies
O(log N) cached blocks.  Off-grid endpoints split a boundary cell with
exp(theta log g) (the geodesic through the cell increment), which is exact
for piecewise-linear lifts.

Increments are multiplied left to right in time: X_su X_ut = X_st.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ShapeMismatchError
from .pathspace import StoppedPath
from .tensor_lie import (
    LyndonBasis,
    TensorElement,
    TensorShape,
    _exp,
    _log,
    _mul,
    dump,
    format_float,
    lie_tolerance,
    parse_dump,
)

FBM_MAX_POINTS = 4096


def _level_norm(x):
    return np.sqrt(np.sum(x * x, axis=-1))


class GridRoughPath:
    """Hoelder weak geometric p-rough path given by grid increments.

    ``increments`` is a list of ``depth + 1`` arrays with shapes
    ``(N, ell**n)`` (level n of every cell increment) or a sequence of N
    ``TensorElement`` objects.  ``alpha`` is the Hoelder exponent of the
    drift path h, carried as metadata for scheme assembly.
    """

    def __init__(self, grid, increments, p: float, alpha: float = 1.0):
        grid = np.array(grid, dtype=float).reshape(-1)
        if grid.size < 2:
            raise ValueError("a rough path grid needs at least two times")
        if not np.all(np.diff(grid) > 0):
            raise ValueError("grid times must be strictly increasing")
        if not p >= 1:
            raise ValueError(f"p must be at least 1, got {p!r}")
        if isinstance(increments, (list, tuple)) and increments and isinstance(increments[0], TensorElement):
            shape = increments[0].shape
            levels = [np.stack([g.levels[n] for g in increments]) for n in range(shape.depth + 1)]
        else:
            levels = [np.array(lv, dtype=float) for lv in increments]
            if not levels or levels[0].ndim != 2 or levels[0].shape[1] != 1:
                raise ShapeMismatchError("level 0 of the increments must have shape (N, 1)")
            ell = levels[1].shape[1] if len(levels) > 1 else 1
            shape = TensorShape(ell, len(levels) - 1)
        n = grid.size - 1
        for k, lv in enumerate(levels):
            if lv.shape != (n, shape.level_size(k)):
                raise ShapeMismatchError(
                    f"level {k} of the increments must have shape {(n, shape.level_size(k))}, got {lv.shape}"
                )
        if not np.allclose(levels[0], 1.0, rtol=0, atol=1e-12):
            raise ValueError("every increment must have scalar part 1")
        if shape.depth < int(np.floor(p)):
            raise ValueError(f"depth {shape.depth} is below [p] = {int(np.floor(p))}")
        self.grid = grid
        self.grid.flags.writeable = False
        self.p = float(p)
        self.alpha = float(alpha)
        self.shape = shape
        self._inc = levels
        for lv in levels:
            lv.flags.writeable = False
        self._blocks = self._build_blocks(levels)
        self._logs = None

    # construction helpers ---------------------------------------------------
    def _build_blocks(self, levels):
        ell, depth = self.shape.alphabet_size, self.shape.depth
        blocks = [levels]
        cur = levels
        while cur[0].shape[0] >= 2:
            m = cur[0].shape[0] // 2
            left = [lv[0 : 2 * m : 2] for lv in cur]
            right = [lv[1 : 2 * m : 2] for lv in cur]
            cur = _mul(left, right, ell, depth)
            blocks.append(cur)
        return blocks

    def _with_levels(self, levels):
        out = GridRoughPath.__new__(GridRoughPath)
        out.grid, out.p, out.alpha, out.shape = self.grid, self.p, self.alpha, self.shape
        out._inc = levels
        out._blocks = out._build_blocks(levels)
        out._logs = None
        return out

    # basic properties ----------------------------------------------------------
    @property
    def alphabet_size(self) -> int:
        return self.shape.alphabet_size

    @property
    def depth(self) -> int:
        return self.shape.depth

    @property
    def n_cells(self) -> int:
        return self.grid.size - 1

    @property
    def start_time(self) -> float:
        return float(self.grid[0])

    @property
    def end_time(self) -> float:
        return float(self.grid[-1])

    def __repr__(self):
        return (
            f"GridRoughPath(ell={self.alphabet_size}, depth={self.depth}, p={self.p:g}, "
            f"cells={self.n_cells}, T={self.end_time:g})"
        )

    def increment(self, i: int) -> TensorElement:
        return TensorElement(self.shape, [lv[i] for lv in self._inc])

    def increments(self) -> list:
        return [self.increment(i) for i in range(self.n_cells)]

    def increment_levels(self):
        """Read-only level arrays of all cell increments, shapes (N, ell**n)."""
        return list(self._inc)

    def level1_path(self) -> StoppedPath:
        """The first level t -> X_t - X_(t_0) sampled on the grid (time shifted to start at 0)."""
        x = np.concatenate([np.zeros((1, self.alphabet_size)), np.cumsum(self._inc[1], axis=0)])
        return StoppedPath(self.grid - self.grid[0], x)

    # queries --------------------------------------------------------------------
    def _cell_logs(self):
        if self._logs is None:
            self._logs = _log(list(self._inc), self.alphabet_size, self.depth)
        return self._logs

    def _partial_cell(self, i: int, theta: float):
        """Levels of exp(theta log g_i)."""
        if theta == 1.0:
            return [lv[i] for lv in self._inc]
        logs = self._cell_logs()
        return _exp([theta * lv[i] for lv in logs], self.alphabet_size, self.depth)

    def _aligned(self, i: int, j: int):
        """Product g_i ... g_(j-1) over aligned dyadic blocks (levels, unbatched)."""
        ell, depth = self.alphabet_size, self.depth
        acc = None
        while i < j:
            k = 0
            while k + 1 < len(self._blocks) and i % (2 << k) == 0 and i + (2 << k) <= j:
                k += 1
            block = [lv[i >> k] for lv in self._blocks[k]]
            acc = block if acc is None else _mul(acc, block, ell, depth)
            i += 1 << k
        return acc

    def _split(self, t):
        """(k, None) when t is grid node k, else (k, theta) with t inside cell k."""
        g = self.grid
        k = int(np.searchsorted(g, t, side="right")) - 1
        if k >= 0 and g[k] == t:
            return k, None
        k = min(max(k, 0), self.n_cells - 1)
        return k, (t - g[k]) / (g[k + 1] - g[k])

    def query_levels(self, s: float, t: float):
        if s > t:
            raise ValueError(f"query needs s <= t, got s={s!r}, t={t!r}")
        g = self.grid
        if s < g[0] or t > g[-1]:
            raise ValueError(f"query interval [{s}, {t}] outside [{g[0]}, {g[-1]}]")
        ell, depth = self.alphabet_size, self.depth
        if s == t:
            out = [np.zeros(ell**n) for n in range(depth + 1)]
            out[0][0] = 1.0
            return out
        i, ths = self._split(s)
        j, tht = self._split(t)
        if ths is not None and tht is not None and i == j:
            return self._partial_cell(i, tht - ths)
        pieces = []
        first = i
        if ths is not None:
            pieces.append(self._partial_cell(i, 1.0 - ths))
            first = i + 1
        if j > first:
            pieces.append(self._aligned(first, j))
        if tht is not None:
            pieces.append(self._partial_cell(j, tht))
        acc = pieces[0]
        for piece in pieces[1:]:
            acc = _mul(acc, piece, ell, depth)
        return acc

    def query(self, s: float, t: float) -> TensorElement:
        """The group increment X_st (level 0 equal to 1)."""
        return TensorElement(self.shape, self.query_levels(s, t))

    def log_increment(self, s: float, t: float) -> TensorElement:
        """Lambda_st = log X_st, an element of the free nilpotent Lie algebra."""
        lv = self.query_levels(s, t)
        return TensorElement(self.shape, _log(lv, self.alphabet_size, self.depth))

    def restrict_depth(self, depth: int) -> "GridRoughPath":
        if depth > self.depth or depth < int(np.floor(self.p)):
            raise ValueError(f"cannot restrict depth {self.depth} to {depth} with p={self.p}")
        out = GridRoughPath(self.grid, [lv.copy() for lv in self._inc[: depth + 1]], self.p, self.alpha)
        return out


# ---------------------------------------------------------------------------
# lifts and samplers


def default_p(depth: int) -> float:
    return depth + 0.5 if depth >= 2 else 1.5


def lift_piecewise_linear(path: StoppedPath, depth: int, p: float | None = None, alpha: float = 1.0,
                          time_offset: float = 0.0) -> GridRoughPath:
    """Signature lift of the piecewise-linear interpolation of ``path``.

    Each cell increment is exp(dx) with dx placed at level 1, so the result
    is weak geometric by construction.
    """
    if path.n_samples < 2:
        raise ValueError("lifting needs a path with at least 2 samples")
    if path.batch_shape:
        raise ValueError("only unbatched paths can be lifted")
    ell = path.dim
    shape = TensorShape(ell, depth)
    dx = np.diff(path.values, axis=0)
    n = dx.shape[0]
    a = [np.zeros((n, 1))] + [dx] + [np.zeros((n, ell**k)) for k in range(2, depth + 1)]
    levels = _exp(a[: depth + 1], shape.alphabet_size, shape.depth)
    if p is None:
        p = default_p(depth)
    return GridRoughPath(path.times + time_offset, levels, p, alpha)


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size < 2 or grid[0] != 0.0 or not np.all(np.diff(grid) > 0):
        raise ValueError("sampling grids must start at 0 and increase strictly")
    return grid


def uniform_grid(T: float, steps: int) -> np.ndarray:
    if steps < 1 or not T > 0:
        raise ValueError(f"need T > 0 and steps >= 1, got T={T!r}, steps={steps!r}")
    return np.linspace(0.0, T, steps + 1)


def sample_brownian(seed: int, grid, ell: int, depth: int = 2, p: float | None = None):
    """Brownian sample on ``grid`` and its piecewise-linear (Wong-Zakai) lift.

    Returns ``(path, rough_path)``.  Increments are independent centred
    Gaussians with variance equal to the cell length in every coordinate.
    """
    grid = _check_grid(grid)
    rng = np.random.default_rng(seed)
    dt = np.diff(grid)
    dw = rng.standard_normal((dt.size, ell)) * np.sqrt(dt)[:, None]
    w = np.concatenate([np.zeros((1, ell)), np.cumsum(dw, axis=0)])
    path = StoppedPath(grid, w)
    if p is None:
        p = 2.5 if depth == 2 else default_p(depth)
    return path, lift_piecewise_linear(path, depth, p)


def fbm_covariance(H: float, times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    s, u = np.meshgrid(t, t, indexing="ij")
    return 0.5 * (s ** (2 * H) + u ** (2 * H) - np.abs(s - u) ** (2 * H))


def fbm_depth(H: float, p: float | None = None):
    """Default (p, depth) for an fBm lift: p slightly above 1/H, depth = [p]."""
    if p is None:
        p = 1.0 / H + 0.05
    elif not p > 1.0 / H:
        raise ValueError(f"p = {p} must exceed 1/H = {1.0 / H:.4g}")
    return p, max(1, int(np.floor(p)))


def sample_fbm(H: float, seed: int, grid, ell: int, depth: int | None = None, p: float | None = None):
    """Fractional Brownian motion with exact covariance on ``grid``.

    Coordinates are independent; the sample is the Cholesky factor of the
    covariance at the nonzero grid times applied to standard normals.
    Returns ``(path, rough_path)`` with the piecewise-linear lift.
    """
    if not 0.0 < H < 1.0:
        raise ValueError(f"Hurst index must lie in (0, 1), got {H!r}")
    grid = _check_grid(grid)
    if grid.size - 1 > FBM_MAX_POINTS:
        raise ValueError(f"fBm sampling is capped at {FBM_MAX_POINTS} grid points, got {grid.size - 1}")
    p, d = fbm_depth(H, p)
    if depth is None:
        depth = d
    elif depth < int(np.floor(p)):
        raise ValueError(f"depth {depth} too small for H={H}: need [p] = {int(np.floor(p))}")
    L = np.linalg.cholesky(fbm_covariance(H, grid[1:]))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((grid.size - 1, ell))
    x = np.concatenate([np.zeros((1, ell)), L @ z])
    path = StoppedPath(grid, x)
    return path, lift_piecewise_linear(path, depth, p)


# ---------------------------------------------------------------------------
# transformations and diagnostics


def dilate(X: GridRoughPath, eps: float) -> GridRoughPath:
    """Multiply level n of every increment by eps**n."""
    levels = [lv * (eps**n) if n else lv.copy() for n, lv in enumerate(X.increment_levels())]
    return X._with_levels(levels)


def holder_norm(X: GridRoughPath) -> float:
    """Estimate of max_n sup |X^(n)_st|^(1/n) / |t - s|^(1/p).

    Pairs are grid index pairs (i, i + 2^k) for every i and k, plus the full
    interval, computed by repeated doubling of sliding window products.
    """
    ell, depth = X.alphabet_size, X.depth
    g = X.grid
    best = 0.0

    def update(levels, dt):
        nonlocal best
        for n in range(1, depth + 1):
            val = _level_norm(levels[n]) ** (1.0 / n) / dt ** (1.0 / X.p)
            best = max(best, float(np.max(val)))

    win = X.increment_levels()
    width = 1
    while True:
        m = win[0].shape[0]
        update(win, g[width : width + m] - g[:m])
        if 2 * width > X.n_cells:
            break
        nxt = _mul([lv[: m - width] for lv in win], [lv[width:] for lv in win], ell, depth)
        win, width = nxt, 2 * width
    full = X.query_levels(X.start_time, X.end_time)
    update([lv[None] for lv in full], np.array([g[-1] - g[0]]))
    return best


class GeometricityReport(NamedTuple):
    level2: float
    lie: float

    @property
    def residual(self) -> float:
        return max(self.level2, self.lie)


def _geometric_residuals(levels, ell, depth):
    """Per-increment level-2 symmetry and Lie residuals for batched levels."""
    n = levels[0].shape[0]
    if depth >= 2:
        x1 = levels[1]
        x2 = levels[2].reshape(n, ell, ell)
        sym = 0.5 * (x2 + np.swapaxes(x2, 1, 2)) - 0.5 * x1[:, :, None] * x1[:, None, :]
        lvl2 = np.sqrt(np.sum(sym * sym, axis=(1, 2)))
    else:
        lvl2 = np.zeros(n)
    lie = np.zeros(n)
    if depth >= 3:
        logs = _log(list(levels), ell, depth)
        basis = LyndonBasis(TensorShape(ell, depth))
        _, lie = basis.coords_batch(logs)
    return lvl2, lie


def check_weak_geometric(X) -> GeometricityReport:
    """Largest geometricity residual over all stored increments.

    Level 2: |Sym(X^2) - X^1 (x) X^1 / 2|.  For depth >= 3 also the distance
    of log(g) from the Lie algebra (residual of the Lyndon-basis solve).
    Accepts a ``GridRoughPath`` or a single ``TensorElement``.
    """
    if isinstance(X, TensorElement):
        levels = [lv[None] for lv in X.levels]
        ell, depth = X.shape.alphabet_size, X.shape.depth
    else:
        levels = X.increment_levels()
        ell, depth = X.alphabet_size, X.depth
    lvl2, lie = _geometric_residuals(levels, ell, depth)
    return GeometricityReport(float(np.max(lvl2, initial=0.0)), float(np.max(lie, initial=0.0)))


def is_weak_geometric(X, tol: float | None = None) -> bool:
    rep = check_weak_geometric(X)
    if tol is None:
        tol = 1e-9
    return rep.residual <= tol


# ---------------------------------------------------------------------------
# text format


def write_rough_path(fh, X: GridRoughPath) -> None:
    fh.write(f"ell={X.alphabet_size} depth={X.depth} count={X.n_cells} p={format_float(X.p)}\n")
    for i in range(X.n_cells):
        fh.write(f"{format_float(X.grid[i])} {format_float(X.grid[i + 1])}\n")
        fh.write(dump(X.increment(i)))


def read_rough_path(fh, alpha: float = 1.0) -> GridRoughPath:
    lines = [ln.strip() for ln in fh]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ValueError("empty rough path file")
    try:
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        ell, depth, count, p = int(header["ell"]), int(header["depth"]), int(header["count"]), float(header["p"])
    except (KeyError, ValueError):
        raise ValueError(f"malformed rough path header: {lines[0]!r}") from None
    shape = TensorShape(ell, depth)
    times, incs = [], []
    block = None
    for ln in lines[1:]:
        if ln.startswith("I="):
            if block is None:
                raise ValueError("tensor coefficients before the first time line")
            block.append(ln)
            continue
        if block is not None:
            incs.append(parse_dump(block, shape))
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"expected a 't0 t1' line, got {ln!r}")
        times.append((float(parts[0]), float(parts[1])))
        block = []
    if block is not None:
        incs.append(parse_dump(block, shape))
    if len(incs) != count:
        raise ValueError(f"header announces {count} increments, found {len(incs)}")
    for (a, _), (_, b) in zip(times[1:], times[:-1]):
        if a != b:
            raise ValueError("increments must cover consecutive grid cells")
    grid = [times[0][0]] + [b for _, b in times]
    return GridRoughPath(grid, incs, p, alpha)
