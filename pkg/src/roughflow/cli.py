"""Command line interface.

    roughflow lift PATH_FILE [--depth N] [--p P] [-o OUT]
    roughflow solve CONFIG [-o TRACE] [--check-flow]
    roughflow rates CONFIG [--kind cauchy|euler|c1] [-o CSV]
    roughflow delay-study CONFIG [-o CSV]
    roughflow strat-compare [--seed S] [--steps N ...] [--delay R] [-o CSV]
    roughflow selftest

CONFIG is a config file or the name of a bundled config.  Reports are CSV
followed by ``key=value`` summary lines; with ``-o`` the CSV goes to the
file and only the summary is printed.  Exit status: 0 on success, 1 on
invalid input, 2 on numerical failure.  Errors print one line starting
with ``error:``.
"""

from __future__ import annotations

import argparse
import io
import os
import sys

import numpy as np

from . import experiments as ex
from .approxflow import solve_flow
from .config import SchemeConfig, bundled_configs, load_bundled, load_config
from .errors import ConfigError, NumericalFailure, RoughFlowError
from .pathspace import read_path
from .roughpath import lift_piecewise_linear, write_rough_path
from .tensor_lie import format_float


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format_float(float(x))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _summary(pairs) -> str:
    return "".join(f"{k}={_fmt(v) if not isinstance(v, str) else v}\n" for k, v in pairs)


def _emit(out, csv_text, summary_text, output):
    if output:
        with open(output, "w", newline="\n") as fh:
            fh.write(csv_text)
        out.write(summary_text)
    else:
        out.write(csv_text)
        out.write(summary_text)


def _config(name: str) -> SchemeConfig:
    if os.path.exists(name):
        return load_config(name)
    if os.sep not in name and name.replace(".cfg", "") in bundled_configs():
        return load_bundled(name)
    raise ConfigError(f"config {name!r} not found (bundled: {', '.join(bundled_configs())})")


def _threads(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        return args.threads
    return ex.default_threads()


# commands --------------------------------------------------------------------


def cmd_lift(args, out):
    with open(args.path) as fh:
        path = read_path(fh)
    X = lift_piecewise_linear(path, args.depth, p=args.p)
    if args.output:
        with open(args.output, "w", newline="\n") as fh:
            write_rough_path(fh, X)
        out.write(_summary([("cells", X.n_cells), ("ell", X.alphabet_size), ("depth", X.depth), ("p", X.p)]))
    else:
        write_rough_path(out, X)


def cmd_solve(args, out):
    cfg = _config(args.config)
    scheme = cfg.build_scheme()
    s, t = cfg.interval()
    res = solve_flow(scheme, s, t, cfg.x0(), tol=cfg.tol, max_depth=cfg.max_depth, check_flow=args.check_flow)
    d = scheme.dim
    header = ["t"] + [f"x{i + 1}" for i in range(d)]
    rows = [[ti, *xi] for ti, xi in zip(res.times, res.trace)]
    pairs = [("depth", res.depth), ("levels", len(res.levels)), ("final_diff", res.differences[-1])]
    pairs += [(f"value{i + 1}", v) for i, v in enumerate(res.value)]
    pairs += [("rate_slope", res.rate.slope)]
    if res.flow_defect is not None:
        pairs.append(("flow_defect", res.flow_defect))
    _emit(out, _csv(header, rows), _summary(pairs), args.output)


def cmd_rates(args, out):
    cfg = _config(args.config)
    scheme = cfg.build_scheme()
    probes = cfg.probes()
    threads = _threads(args)
    if args.kind == "cauchy":
        s, t = cfg.interval()
        depths = [int(v) for v in cfg.get_list("rates.depths", "0 1 2 3 4 5 6 7")]
        rep = ex.rate_study(scheme, s, t, probes, depths, threads=threads)
        targets = [("target_gamma_minus_one", rep.targets["gamma_minus_one"]), ("target_one_over_p", rep.targets["one_over_p"])]
    else:
        levels = [int(v) for v in cfg.get_list("defects.levels", "3 4 5 6 7 8 9")]
        s, t = cfg.interval()
        rep = ex.defect_study(scheme, probes, levels, kind=args.kind, s0=s, t0=t, threads=threads)
        targets = [("target_gamma", scheme.gamma)]
    rows = [[lv, m, d, rep.slope] for lv, m, d in rep.rows()]
    pairs = [("kind", args.kind), ("slope", rep.slope), ("flagged", rep.flagged), ("gamma", scheme.gamma)] + targets
    _emit(out, _csv(["level", "mesh", "diff", "slope"], rows), _summary(pairs), args.output)


def cmd_delay_study(args, out):
    cfg = _config(args.config)
    lambdas = cfg.get_floats("delay.lambdas", "0.2 0.1 0.05 0.025")
    s, t = cfg.interval()
    limit = cfg.build_scheme(lam=0.0)
    study = ex.vanishing_delay_study(lambda lam: cfg.build_scheme(lam=lam), limit, s, t, cfg.probes(), lambdas,
                                     threads=_threads(args))
    rows = [[lam, dist] for lam, dist in zip(study.lambdas, study.distances)]
    pairs = [
        ("decreasing", study.decreasing),
        ("decreasing_with_slack", study.decreasing_with_slack()),
        ("ratio_last_first", study.distances[-1] / study.distances[0] if study.distances[0] else 0.0),
    ]
    _emit(out, _csv(["lambda", "distance"], rows), _summary(pairs), args.output)


def cmd_strat_compare(args, out):
    steps = args.steps or [1024, 4096]
    rows = ex.stratonovich_compare(args.seed, steps, T=args.T, x0=args.x0)
    table = [[r.steps, r.value, r.exact, r.error] for r in rows]
    pairs = [("max_error", max(r.error for r in rows))]
    if len(rows) > 1:
        pairs.append(("decreasing", all(b.error < a.error for a, b in zip(rows, rows[1:]))))
    if args.delay is not None:
        from .pdvf import DelayField
        from .roughpath import sample_brownian

        path, _ = sample_brownian(args.seed, np.linspace(0.0, args.T, args.delay_steps + 1), 1, depth=2)
        cmp = ex.delay_mode_compare(DelayField.from_map("tanh", 1, [args.delay]), path, [args.x0])
        pairs += [("delay_fresh_error", cmp.fresh_error), ("delay_carried_error", cmp.carried_error)]
    _emit(out, _csv(["steps", "value", "exact", "error"], table), _summary(pairs), args.output)


def cmd_selftest(args, out):
    results = ex.selftest_suite(args.seed)
    for r in results:
        out.write(f"{r.name} {r.passed}/{r.total} worst={_fmt(r.worst)}\n")
    passed = sum(r.ok for r in results)
    out.write(_summary([("checks_passed", passed), ("checks_failed", len(results) - passed)]))
    return 0 if passed == len(results) else 2


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roughflow", description="Path-dependent rough differential equations via approximate flows.")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: ROUGHFLOW_THREADS or CPU count)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("lift", help="lift a sampled path to its piecewise-linear rough path")
    p.add_argument("path")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("solve", help="solve the flow of a configured scheme")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.add_argument("--check-flow", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("rates", help="dyadic rate study or defect exponents")
    p.add_argument("config")
    p.add_argument("--kind", choices=("cauchy", "euler", "c1"), default="cauchy")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("delay-study", help="distance to the zero-delay flow along delay.lambdas")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_delay_study)

    p = sub.add_parser("strat-compare", help="scalar linear equation against x0 exp(W_T)")
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--steps", type=int, nargs="+")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--delay", type=float, default=None, help="also compare history modes for a tanh delay field")
    p.add_argument("--delay-steps", type=int, default=256)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_strat_compare)

    p = sub.add_parser("selftest", help="run the randomised invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no command given")
        code = args.func(args, out)
        return 0 if code is None else code
    except UsageError as exc:
        sys.stderr.write(parser.format_usage())
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"error: numerical failure: {_one_line(exc)}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, RoughFlowError) as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return 1


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
