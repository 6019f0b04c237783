"""Scheme configuration files.

Grammar: one ``key = value`` per line, ``#`` starts a comment, keys are
dotted names.  Lists are whitespace or comma separated; matrix rows are
separated by ``;``.  Recognised keys::

    dim = 2                      # state dimension d (required)
    p = 2.5                      # roughness, default 2.5
    alpha = 1                    # drift regularity, default 1

    driver.kind = brownian       # brownian | fbm | smooth | lift | file
    driver.seed = 1              # brownian, fbm
    driver.steps = 4096          # brownian, fbm, smooth
    driver.T = 1                 # brownian, fbm, smooth
    driver.H = 0.4               # fbm
    driver.curve = loop          # smooth: loop | sine | line
    driver.file = path.txt       # lift (path file) or file (rough path file)
    driver.ell = 2               # alphabet size, default: number of diffusion fields
    driver.depth = 2             # lift depth, default [p]

    h.kind = linear              # zero | linear | file, default linear with a drift
    h.rate = 1
    h.file = h.txt

    field.<name>.kind = markovian  # markovian | linear | delay | moving_average | constant | zero
    field.<name>.map = tanh        # tanh | sin | identity | poly
    field.<name>.coeffs = 0 1 0.5  # poly coefficients
    field.<name>.matrix = 1 0; 0 1
    field.<name>.offset = 0 0
    field.<name>.delays = 0.25     # delay; the token ``lambda`` is replaced by the study parameter
    field.<name>.window = 0.5      # moving_average, optional
    field.<name>.value = 1 0       # constant

    drift = V                    # field name, optional
    diffusion = F1, F2           # ell field names (required)

    solver.substeps = 32
    solver.tol = 1e-6
    solver.max_depth = 10
    solver.history_mode = fresh  # fresh | carried

    run.s = 0                    # default: start of the driver
    run.t = 1                    # default: end of the driver
    run.x0 = 0 0                 # default: origin

    probes.count = 24
    probes.radius = 2
    probes.seed = 7

    rates.depths = 0 1 2 3 4 5 6 7 8 9
    delay.lambdas = 0.2 0.1 0.05 0.025

Relative file names are resolved against the directory of the config file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .approxflow import HISTORY_MODES, DrivingPath, FlowScheme
from .errors import ConfigError
from .pathspace import StoppedPath, read_path
from .pdvf import (
    ConstantField,
    DelayField,
    LinearMarkovianField,
    MarkovianField,
    MovingAverageField,
    ZeroField,
)
from .roughpath import (
    GridRoughPath,
    lift_piecewise_linear,
    read_rough_path,
    sample_brownian,
    sample_fbm,
    uniform_grid,
)

DEFAULTS = {
    "p": "2.5",
    "alpha": "1",
    "solver.substeps": "32",
    "solver.tol": "1e-6",
    "solver.max_depth": "10",
    "solver.history_mode": "fresh",
    "probes.count": "24",
    "probes.radius": "2",
    "probes.seed": "7",
}

FIELD_KINDS = ("markovian", "linear", "delay", "moving_average", "constant", "zero")
DRIVER_KINDS = ("brownian", "fbm", "smooth", "lift", "file")
CURVES = ("loop", "sine", "line")


def smooth_curve(name: str, times, ell: int) -> np.ndarray:
    """Preset smooth drivers sampled at ``times``; ``loop`` has non-zero area."""
    t = np.asarray(times, dtype=float)
    if name == "loop":
        cols = [np.sin(2 * np.pi * t) + 0.5 * np.sin(6 * np.pi * t), 1.0 - np.cos(2 * np.pi * t) + 0.3 * t]
    elif name == "sine":
        cols = [np.sin(2 * np.pi * t), t * t]
    elif name == "line":
        cols = [t]
    else:
        raise ConfigError(f"unknown curve {name!r}; expected one of {', '.join(CURVES)}")
    k = 1
    while len(cols) < ell:
        k += 1
        cols.append(np.sin(2 * np.pi * k * t) / k)
    return np.stack(cols[:ell], axis=1)


@dataclass
class SchemeConfig:
    """Validated configuration; ``build_scheme`` assembles the FlowScheme."""

    values: dict
    lines: dict
    base_dir: str = "."
    source: str = "<config>"
    _driver: GridRoughPath | None = field(default=None, repr=False)

    # typed accessors ---------------------------------------------------------
    def _where(self, key):
        line = self.lines.get(key)
        return f"{self.source}:{line}: " if line else f"{self.source}: "

    def has(self, key):
        return key in self.values

    def raw(self, key, default=None):
        if key in self.values:
            return self.values[key]
        if key in DEFAULTS:
            return DEFAULTS[key]
        if default is not None:
            return default
        raise ConfigError(f"{self.source}: missing required key {key!r}")

    def get_float(self, key, default=None) -> float:
        text = self.raw(key, default)
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{self._where(key)}{key} = {text}: not a number") from None

    def get_int(self, key, default=None) -> int:
        text = self.raw(key, default)
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{self._where(key)}{key} = {text}: not an integer") from None

    def get_list(self, key, default=None) -> list:
        text = self.raw(key, default)
        return [tok for tok in text.replace(",", " ").split() if tok]

    def get_floats(self, key, default=None) -> list:
        try:
            return [float(v) for v in self.get_list(key, default)]
        except ValueError:
            raise ConfigError(f"{self._where(key)}{key}: expected numbers") from None

    def get_matrix(self, key):
        rows = [r for r in self.raw(key).split(";") if r.strip()]
        try:
            return np.array([[float(v) for v in r.replace(",", " ").split()] for r in rows])
        except ValueError:
            raise ConfigError(f"{self._where(key)}{key}: expected a matrix of numbers") from None

    def path_of(self, key) -> str:
        name = self.raw(key)
        full = name if os.path.isabs(name) else os.path.join(self.base_dir, name)
        if not os.path.exists(full):
            raise ConfigError(f"{self._where(key)}{key} = {name}: file not found")
        return full

    # derived quantities --------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.get_int("dim")

    @property
    def p(self) -> float:
        return self.get_float("p")

    @property
    def alpha(self) -> float:
        return self.get_float("alpha")

    @property
    def diffusion_names(self) -> list:
        return self.get_list("diffusion")

    @property
    def ell(self) -> int:
        if self.has("driver.ell"):
            return self.get_int("driver.ell")
        return len(self.diffusion_names)

    @property
    def substeps(self) -> int:
        return self.get_int("solver.substeps")

    @property
    def tol(self) -> float:
        return self.get_float("solver.tol")

    @property
    def max_depth(self) -> int:
        return self.get_int("solver.max_depth")

    @property
    def history_mode(self) -> str:
        return self.raw("solver.history_mode")

    # builders -------------------------------------------------------------------
    def build_driver(self) -> GridRoughPath:
        if self._driver is not None:
            return self._driver
        kind = self.raw("driver.kind")
        p, ell = self.p, self.ell
        depth = self.get_int("driver.depth", str(int(np.floor(p))))
        if kind == "brownian":
            grid = uniform_grid(self.get_float("driver.T", "1"), self.get_int("driver.steps"))
            _, X = sample_brownian(self.get_int("driver.seed"), grid, ell, depth=depth, p=p)
        elif kind == "fbm":
            grid = uniform_grid(self.get_float("driver.T", "1"), self.get_int("driver.steps"))
            _, X = sample_fbm(self.get_float("driver.H"), self.get_int("driver.seed"), grid, ell, depth=depth, p=p)
        elif kind == "smooth":
            grid = uniform_grid(self.get_float("driver.T", "1"), self.get_int("driver.steps"))
            path = StoppedPath(grid, smooth_curve(self.raw("driver.curve", "loop"), grid, ell))
            X = lift_piecewise_linear(path, depth, p=p)
        elif kind == "lift":
            with open(self.path_of("driver.file")) as fh:
                path = read_path(fh)
            X = lift_piecewise_linear(path, depth, p=p)
        elif kind == "file":
            with open(self.path_of("driver.file")) as fh:
                X = read_rough_path(fh)
        else:
            raise ConfigError(
                f"{self._where('driver.kind')}driver.kind = {kind}: expected one of {', '.join(DRIVER_KINDS)}"
            )
        if X.alphabet_size != ell:
            raise ConfigError(
                f"{self._where('driver.kind')}driver has {X.alphabet_size} components "
                f"but {ell} diffusion fields are listed"
            )
        self._driver = X
        return X

    def build_field(self, name: str, lam: float | None = None):
        pre = f"field.{name}."
        kind_key = pre + "kind"
        if not self.has(kind_key):
            raise ConfigError(f"{self.source}: field {name!r} is used but {kind_key} is not set")
        kind = self.raw(kind_key)
        d = self.dim
        matrix = self.get_matrix(pre + "matrix") if self.has(pre + "matrix") else None
        offset = self.get_floats(pre + "offset") if self.has(pre + "offset") else None
        coeffs = self.get_floats(pre + "coeffs") if self.has(pre + "coeffs") else None
        fmap = self.raw(pre + "map", "tanh")
        try:
            if kind == "markovian":
                return MarkovianField.from_map(fmap, d, matrix, offset, coeffs)
            if kind == "linear":
                if matrix is None:
                    raise ConfigError(f"{self.source}: linear field {name!r} needs {pre}matrix")
                return LinearMarkovianField(matrix, offset)
            if kind == "delay":
                delays = []
                for tok in self.get_list(pre + "delays"):
                    if tok == "lambda":
                        if lam is None:
                            raise ConfigError(
                                f"{self._where(pre + 'delays')}field {name!r} uses 'lambda' outside a delay study"
                            )
                        delays.append(lam)
                    else:
                        delays.append(float(tok))
                return DelayField.from_map(fmap, d, delays, matrix, offset, coeffs)
            if kind == "moving_average":
                window = self.raw(pre + "window", "none")
                if window == "lambda":
                    if lam is None:
                        raise ConfigError(f"{self.source}: field {name!r} uses 'lambda' outside a delay study")
                    if lam == 0:
                        # the zero-window limit is the point field g(y_a)
                        return MarkovianField.from_map(fmap, d, matrix, offset, coeffs)
                    window = lam
                else:
                    window = None if window == "none" else float(window)
                return MovingAverageField.from_map(fmap, d, matrix, offset, coeffs, window=window)
            if kind == "constant":
                value = self.get_floats(pre + "value")
                if len(value) != d:
                    raise ConfigError(f"{self._where(pre + 'value')}constant field {name!r} needs {d} values")
                return ConstantField(value)
            if kind == "zero":
                return ZeroField(d)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{self._where(kind_key)}field {name!r}: {exc}") from None
        raise ConfigError(f"{self._where(kind_key)}{kind_key} = {kind}: expected one of {', '.join(FIELD_KINDS)}")

    def build_h(self, has_drift: bool) -> DrivingPath | None:
        kind = self.raw("h.kind", "linear" if has_drift else "zero")
        if kind == "zero":
            return DrivingPath.zero()
        if kind == "linear":
            return DrivingPath.linear(self.get_float("h.rate", "1"))
        if kind == "file":
            with open(self.path_of("h.file")) as fh:
                return DrivingPath.sampled(read_path(fh), self.alpha)
        raise ConfigError(f"{self._where('h.kind')}h.kind = {kind}: expected zero, linear or file")

    def build_scheme(self, lam: float | None = None, **overrides) -> FlowScheme:
        X = self.build_driver()
        F = [self.build_field(n, lam) for n in self.diffusion_names]
        V = self.build_field(self.raw("drift"), lam) if self.has("drift") else None
        opts = dict(
            F=F, X=X, V=V, h=self.build_h(V is not None), p=self.p, alpha=self.alpha,
            substeps=self.substeps, history_mode=self.history_mode,
        )
        opts.update(overrides)
        return FlowScheme(**opts)

    def interval(self):
        X = self.build_driver()
        s = self.get_float("run.s", repr(X.start_time))
        t = self.get_float("run.t", repr(X.end_time))
        if not (X.start_time <= s <= t <= X.end_time):
            raise ConfigError(f"{self.source}: run interval [{s}, {t}] outside the driver [{X.start_time}, {X.end_time}]")
        return s, t

    def x0(self) -> np.ndarray:
        if not self.has("run.x0"):
            return np.zeros(self.dim)
        x = np.array(self.get_floats("run.x0"))
        if x.size != self.dim:
            raise ConfigError(f"{self._where('run.x0')}run.x0 needs {self.dim} values, got {x.size}")
        return x

    def probes(self) -> np.ndarray:
        """Deterministic probe points, uniform in the ball of radius probes.radius."""
        n = self.get_int("probes.count")
        radius = self.get_float("probes.radius")
        rng = np.random.default_rng(self.get_int("probes.seed"))
        g = rng.standard_normal((n, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = radius * rng.uniform(0.0, 1.0, n) ** (1.0 / self.dim)
        return g * r[:, None]

    # validation -------------------------------------------------------------------
    def validate(self) -> "SchemeConfig":
        for key in ("dim", "driver.kind", "diffusion"):
            self.raw(key)
        if self.dim < 1:
            raise ConfigError(f"{self._where('dim')}dim must be positive")
        p, alpha = self.p, self.alpha
        if not p >= 1:
            raise ConfigError(f"{self._where('p')}p = {p:g}: p must be at least 1")
        if alpha + 1.0 / p <= 1.0:
            raise ConfigError(
                f"{self._where('alpha')}alpha + 1/p > 1 is violated: alpha = {alpha:g}, p = {p:g}, "
                f"alpha + 1/p = {alpha + 1.0 / p:g}"
            )
        names = self.diffusion_names
        if not names:
            raise ConfigError(f"{self._where('diffusion')}diffusion lists no fields")
        if self.has("driver.ell") and self.get_int("driver.ell") != len(names):
            raise ConfigError(
                f"{self._where('driver.ell')}driver.ell = {self.get_int('driver.ell')} "
                f"but diffusion lists {len(names)} fields"
            )
        for name in names + ([self.raw("drift")] if self.has("drift") else []):
            if not self.has(f"field.{name}.kind"):
                raise ConfigError(f"{self._where('diffusion')}field {name!r} has no field.{name}.kind")
        if self.substeps < 1:
            raise ConfigError(f"{self._where('solver.substeps')}solver.substeps must be positive")
        if not self.tol > 0:
            raise ConfigError(f"{self._where('solver.tol')}solver.tol must be positive")
        if self.history_mode not in HISTORY_MODES:
            raise ConfigError(
                f"{self._where('solver.history_mode')}solver.history_mode = {self.history_mode}: "
                f"expected one of {', '.join(HISTORY_MODES)}"
            )
        kind = self.raw("driver.kind")
        if kind not in DRIVER_KINDS:
            raise ConfigError(f"{self._where('driver.kind')}driver.kind = {kind}: expected one of {', '.join(DRIVER_KINDS)}")
        if kind in ("lift", "file"):
            self.path_of("driver.file")
        if self.raw("h.kind", "zero") == "file":
            self.path_of("h.file")
        return self


def parse_config(text: str, source: str = "<config>", base_dir: str = ".") -> SchemeConfig:
    values, lines = {}, {}
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {body!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if not key or any(c.isspace() for c in key):
            raise ConfigError(f"{source}:{n}: malformed key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r} (first set on line {lines[key]})")
        values[key] = value
        lines[key] = n
    return SchemeConfig(values, lines, base_dir, source).validate()


def load_config(path: str) -> SchemeConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=os.path.basename(path), base_dir=os.path.dirname(os.path.abspath(path)))


def bundled_config_path(name: str) -> str:
    here = os.path.join(os.path.dirname(__file__), "configs")
    fname = name if name.endswith(".cfg") else name + ".cfg"
    return os.path.join(here, fname)


def bundled_configs() -> list:
    here = os.path.join(os.path.dirname(__file__), "configs")
    return sorted(f[:-4] for f in os.listdir(here) if f.endswith(".cfg"))


def load_bundled(name: str) -> SchemeConfig:
    path = bundled_config_path(name)
    if not os.path.exists(path):
        raise ConfigError(f"no bundled config named {name!r}; available: {', '.join(bundled_configs())}")
    return load_config(path)
