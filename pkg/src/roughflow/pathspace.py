"""Stopped paths y_[0,a], their constant extension, metric and perturbations.

A ``StoppedPath`` is a piecewise-linear path sampled at strictly increasing
times ``0 = u_0 < ... < u_m = a``.  Values have shape ``(m + 1, d)``; an
optional batch of independent paths sharing the same time grid is stored
as ``(m + 1, *batch, d)``, which lets vector fields evaluate many probe
trajectories in one call.  Evaluation past the end time returns ``y_a``,
which realises the constant extension over ``[a, T]``.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError


def _readonly(a):
    a = np.asarray(a)
    if a.flags.writeable:
        a = a.view()
        a.flags.writeable = False
    return a


class StoppedPath:
    __slots__ = ("times", "values")

    def __init__(self, times, values):
        times = np.array(times, dtype=float).reshape(-1)
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None] if times.size > 1 or values.size == 1 else values[None, :]
        if times.size == 0:
            raise ValueError("a stopped path needs at least one sample")
        if values.shape[0] != times.size:
            raise ShapeMismatchError(
                f"{times.size} sample times but {values.shape[0]} sample values"
            )
        if times[0] != 0.0:
            raise ValueError(f"sample times must start at 0, got {times[0]!r}")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("sample times must be strictly increasing")
        self.times = _readonly(times)
        self.values = _readonly(values)

    @classmethod
    def _trusted(cls, times, values):
        obj = cls.__new__(cls)
        obj.times = times
        obj.values = values
        return obj

    @classmethod
    def point(cls, x) -> "StoppedPath":
        """The path y_[0,0] identified with the point ``x``."""
        x = np.asarray(x, dtype=float)
        return cls([0.0], x[None, ...])

    @classmethod
    def constant(cls, x, a: float) -> "StoppedPath":
        """The constant path over [0, a] identically equal to ``x``."""
        x = np.asarray(x, dtype=float)
        if a == 0:
            return cls.point(x)
        return cls([0.0, a], np.stack([x, x]))

    @classmethod
    def from_function(cls, f, times) -> "StoppedPath":
        times = np.asarray(times, dtype=float)
        return cls(times, np.array([np.atleast_1d(f(t)) for t in times]))

    # basic properties -----------------------------------------------------
    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.values.shape[1:-1]

    @property
    def n_samples(self) -> int:
        return self.times.size

    @property
    def start(self) -> np.ndarray:
        return self.values[0]

    @property
    def end(self) -> np.ndarray:
        return self.values[-1]

    @property
    def is_point(self) -> bool:
        return self.times.size == 1

    def __len__(self):
        return self.times.size

    def __repr__(self):
        return f"StoppedPath(end_time={self.end_time:.6g}, samples={self.n_samples}, dim={self.dim})"

    # evaluation -------------------------------------------------------------
    def eval_at(self, u):
        """Value of the extended path at time ``u`` (scalar or array of times)."""
        t, v = self.times, self.values
        if np.ndim(u) == 0:
            u = float(u)
            if u >= t[-1]:
                return v[-1]
            if u <= 0.0:
                return v[0]
            k = int(np.searchsorted(t, u, side="right"))
            w = (u - t[k - 1]) / (t[k] - t[k - 1])
            return v[k - 1] + w * (v[k] - v[k - 1])
        u = np.asarray(u, dtype=float)
        if t.size == 1:
            return np.broadcast_to(v[0], u.shape + v.shape[1:]).copy()
        uc = np.clip(u, 0.0, t[-1])
        k = np.clip(np.searchsorted(t, uc, side="right"), 1, t.size - 1)
        w = (uc - t[k - 1]) / (t[k] - t[k - 1])
        w = w.reshape(w.shape + (1,) * (v.ndim - 1))
        return v[k - 1] + w * (v[k] - v[k - 1])

    __call__ = eval_at

    # constructions ------------------------------------------------------------
    def perturb(self, v, eps: float) -> "StoppedPath":
        """Shift every sample by ``eps * v`` (the path y^{V, eps})."""
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.dim:
            raise ShapeMismatchError(f"direction has dimension {v.shape[-1]}, path has {self.dim}")
        if eps == 0:
            return self
        return StoppedPath._trusted(self.times, _readonly(self.values + eps * v))

    def append(self, dt: float, value) -> "StoppedPath":
        if not dt > 0:
            raise ValueError(f"append needs dt > 0, got {dt!r}")
        value = np.asarray(value, dtype=float)
        if value.shape != self.values.shape[1:]:
            raise ShapeMismatchError(f"value shape {value.shape} vs sample shape {self.values.shape[1:]}")
        times = np.append(self.times, self.times[-1] + dt)
        values = np.concatenate([self.values, value[None]], axis=0)
        return StoppedPath._trusted(_readonly(times), _readonly(values))

    def prefix(self, a: float) -> "StoppedPath":
        """Restriction y_[0,a] for 0 <= a <= end_time, endpoint interpolated."""
        if a < 0 or a > self.end_time + 1e-15:
            raise ValueError(f"prefix time {a!r} outside [0, {self.end_time}]")
        if a == 0:
            return StoppedPath._trusted(self.times[:1], self.values[:1])
        k = int(np.searchsorted(self.times, a, side="left"))
        if k < self.times.size and self.times[k] == a:
            return StoppedPath._trusted(self.times[: k + 1], self.values[: k + 1])
        times = np.append(self.times[:k], a)
        values = np.concatenate([self.values[:k], self.eval_at(a)[None]], axis=0)
        return StoppedPath._trusted(_readonly(times), _readonly(values))

    def derivative_path(self) -> "StoppedPath":
        """Piecewise-linear representative of the derivative.

        Segment slopes are placed at segment midpoints and held constant
        towards both ends, so that interpolation recovers each slope exactly
        at its midpoint.
        """
        if self.is_point:
            raise ValueError(
                "derivative of a point path undefined; use the (y0, ydot0) identification"
            )
        dt = np.diff(self.times)
        slopes = np.diff(self.values, axis=0) / dt.reshape((-1,) + (1,) * (self.values.ndim - 1))
        mids = self.times[:-1] + 0.5 * dt
        times = np.concatenate([[0.0], mids, [self.end_time]])
        values = np.concatenate([slopes[:1], slopes, slopes[-1:]], axis=0)
        return StoppedPath._trusted(_readonly(times), _readonly(values))

    def sup_distance(self, other: "StoppedPath", horizon: float | None = None) -> float:
        """sup over [0, horizon] of |ybar_t - zbar_t| (Euclidean norm in R^d)."""
        if other.dim != self.dim:
            raise ShapeMismatchError(f"dimension mismatch: {self.dim} vs {other.dim}")
        grid = np.union1d(self.times, other.times)
        if horizon is not None:
            grid = np.union1d(grid[grid <= horizon], [horizon])
        diff = self.eval_at(grid) - other.eval_at(grid)
        return float(np.max(np.linalg.norm(diff, axis=-1)))


def eval_at(y: StoppedPath, u):
    return y.eval_at(u)


def perturb(y: StoppedPath, v, eps: float) -> StoppedPath:
    return y.perturb(v, eps)


def append(y: StoppedPath, dt: float, value) -> StoppedPath:
    return y.append(dt, value)


def derivative_path(y: StoppedPath) -> StoppedPath:
    return y.derivative_path()


def metric_d(y: StoppedPath, z: StoppedPath) -> float:
    """|b - a| + sup_t |ybar_t - zbar_t|.

    Both extensions are constant after their end times, so the supremum over
    any horizon T >= max(a, b) is attained on the union of the sample grids,
    which makes this exact for piecewise-linear paths.
    """
    if y.dim != z.dim:
        raise ShapeMismatchError(f"dimension mismatch: {y.dim} vs {z.dim}")
    return abs(z.end_time - y.end_time) + y.sup_distance(z)


class HistoryBuffer:
    """Growable sample store handing out zero-copy ``StoppedPath`` views.

    Used by the step-ODE integrator.  ``view_with`` writes a provisional
    sample into the first free slot and returns a view that includes it; the
    next call to ``view_with`` or ``push`` overwrites that slot, so such views
    must not be retained.
    """

    def __init__(self, path: StoppedPath, capacity: int = 64):
        n = path.n_samples
        cap = max(capacity, 2 * n + 1)
        self._t = np.empty(cap)
        self._x = np.empty((cap,) + path.values.shape[1:])
        self._t[:n] = path.times
        self._x[:n] = path.values
        self._n = n

    def __len__(self):
        return self._n

    @property
    def end_time(self) -> float:
        return float(self._t[self._n - 1])

    @property
    def end(self) -> np.ndarray:
        return self._x[self._n - 1]

    def _reserve(self, extra):
        if self._n + extra <= self._t.size:
            return
        cap = max(2 * self._t.size, self._n + extra)
        t = np.empty(cap)
        x = np.empty((cap,) + self._x.shape[1:])
        t[: self._n] = self._t[: self._n]
        x[: self._n] = self._x[: self._n]
        self._t, self._x = t, x

    def push(self, t: float, x) -> None:
        self._reserve(1)
        self._t[self._n] = t
        self._x[self._n] = x
        self._n += 1

    def view(self) -> StoppedPath:
        t = self._t[: self._n]
        x = self._x[: self._n]
        t.flags.writeable = False
        x.flags.writeable = False
        return StoppedPath._trusted(t, x)

    def view_with(self, t: float, x) -> StoppedPath:
        if t <= self._t[self._n - 1]:
            return self.view()
        self._reserve(1)
        self._t[self._n] = t
        self._x[self._n] = x
        tv = self._t[: self._n + 1]
        xv = self._x[: self._n + 1]
        tv.flags.writeable = False
        xv.flags.writeable = False
        return StoppedPath._trusted(tv, xv)

    def snapshot(self) -> StoppedPath:
        """Independent copy of the committed samples."""
        return StoppedPath._trusted(
            _readonly(self._t[: self._n].copy()), _readonly(self._x[: self._n].copy())
        )


def read_path(fh) -> StoppedPath:
    """Parse the path text format: header ``dim=<d> count=<m>`` then ``t v1 ... vd`` lines."""
    lines = [ln for ln in (line.strip() for line in fh) if ln and not ln.startswith("#")]
    if not lines:
        raise ValueError("empty path file")
    header = dict(tok.split("=", 1) for tok in lines[0].split())
    try:
        dim, count = int(header["dim"]), int(header["count"])
    except (KeyError, ValueError):
        raise ValueError(f"malformed path header: {lines[0]!r}") from None
    rows = lines[1:]
    if len(rows) != count:
        raise ValueError(f"path header announces {count} samples, found {len(rows)}")
    data = np.array([[float(v) for v in row.split()] for row in rows]).reshape(count, -1)
    if data.shape[1] != dim + 1:
        raise ValueError(f"each sample line needs 1 + {dim} numbers")
    return StoppedPath(data[:, 0], data[:, 1:])


def write_path(fh, path: StoppedPath) -> None:
    if path.batch_shape:
        raise ValueError("only unbatched paths can be written")
    fh.write(f"dim={path.dim} count={path.n_samples}\n")
    for t, v in zip(path.times, path.values):
        fh.write(" ".join(format(float(x), ".17g") for x in (t, *v)) + "\n")
