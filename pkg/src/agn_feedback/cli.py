"""Command-line front end.

Exit codes: 0 success, 1 validation or usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .capacity import (closed_form_rate, feedback_capacity, iid_nofeedback_lower_bound,
                       kim_solutions, markov_nofeedback_lower_bound,
                       noise_cancellation_lower_bound, time_sharing_envelope,
                       water_filling_reference)
from .channel import (ChannelParams, PowerBudget, Regime, Strategy, classify_regime,
                      regime_threshold, to_base, validate)
from .errors import ChannelError, NumericalError, ValidationError
from .finite_horizon import OptimizerConfig, finite_horizon_optimize
from .riccati import are_stabilizing_solution, dre_iterate
from .simulator import SimulationConfig, counterexample_kz_zero, simulate

QUANTITIES = ("feedback", "iid_lb", "markov_lb", "nc_lb", "water_filling", "kim", "timeshare")
CSV_HEADER = ("c", "kw", "kappa", "quantity", "value_bits", "regime", "certified")
THREADS_ENV = "AGN_FEEDBACK_THREADS"
NA = "NA"


class UsageError(Exception):
    def __init__(self, message, help_text=""):
        super().__init__(message)
        self.help_text = help_text


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_help())


def fmt(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return NA
    return f"{x:.12g}"


def parse_grid(text: str) -> np.ndarray:
    """Parse ``min:max:count:{linear|log}`` into an array of powers."""
    parts = text.split(":")
    if len(parts) != 4:
        raise ValueError(f"grid {text!r} is not min:max:count:spacing")
    lo, hi, count, spacing = float(parts[0]), float(parts[1]), int(parts[2]), parts[3]
    if count < 2:
        raise ValueError("grid count must be >= 2")
    if lo < 0 or hi < lo:
        raise ValueError("grid needs 0 <= min <= max")
    if spacing == "linear":
        return np.linspace(lo, hi, count)
    if spacing == "log":
        if lo <= 0:
            raise ValueError("log spacing needs min > 0")
        return np.geomspace(lo, hi, count)
    raise ValueError(f"unknown spacing {spacing!r}")


def parse_floats(text: str) -> list:
    return [float(v) for v in str(text).split(",") if v.strip()]


def read_config(path: str) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


REQUIRED = object()

# name -> (type, default)
COMMON = {"c": (str, REQUIRED), "kw": (float, 1.0), "base": (str, "bits")}
OPTIONS = {
    "capacity": {"kappa": (float, REQUIRED)},
    "sweep": {"kappa": (str, REQUIRED), "emit": (str, "feedback,iid_lb"), "boundary": (bool, False),
              "threads": (int, None)},
    "dre": {"lam": (float, REQUIRED), "kz": (float, REQUIRED), "k0": (float, 0.0), "steps": (int, 1000)},
    "simulate": {"lam": (float, REQUIRED), "kz": (float, REQUIRED), "n": (int, 500), "m": (int, 20000),
                 "seed": (int, 0), "v0": (float, 0.0)},
    "kim-compare": {"kappa": (float, REQUIRED), "n": (int, 100)},
    "finite-horizon": {"kappa": (float, REQUIRED), "n": (int, 30), "starts": (int, 8), "seed": (int, 0)},
    "timeshare": {"kappa": (str, REQUIRED), "thetas": (int, 101), "kappa1_count": (int, 200)},
}
HELP = {
    "capacity": "feedback capacity at one point (JSON)",
    "sweep": "rates over a power grid (CSV)",
    "dre": "Riccati trajectory and ARE solution (JSON)",
    "simulate": "Monte Carlo check of a strategy (JSON)",
    "kim-compare": "zero-innovation counterexample report (JSON)",
    "finite-horizon": "time-varying n-step optimum (JSON)",
    "timeshare": "time-sharing envelope over a power grid (CSV)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="agn-feedback", description="Feedback capacity of AR(1)-noise channels.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="key = value file; flags override it")
        for key, (typ, _) in {**COMMON, **opts}.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, action="store_const", const=True, default=None)
            elif key == "base":
                p.add_argument(flag, choices=("bits", "nats"), default=None)
            else:
                p.add_argument(flag, type=typ, default=None)
    return parser


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the config file, then from defaults."""
    cfg = read_config(args.config) if args.config else {}
    known = {**COMMON, **OPTIONS[args.command]}
    unknown = set(cfg) - set(known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, (typ, default) in known.items():
        if getattr(args, key) is not None:
            continue
        if key in cfg:
            raw = cfg[key]
            if typ is bool:
                value = raw.lower() in ("1", "true", "yes", "on")
            else:
                value = typ(raw)
            setattr(args, key, value)
        elif default is REQUIRED:
            raise UsageError(f"--{key.replace('_', '-')} is required")
        else:
            setattr(args, key, default)
    if args.base not in ("bits", "nats"):
        raise UsageError(f"unknown base {args.base!r}")
    return args


def _strategy_json(s: Strategy | None):
    return None if s is None else {"lambda": s.lam, "k_z": s.k_z}


def _result_json(res, base):
    return {
        "rate": to_base(res.rate, base),
        "kind": res.kind,
        "regime": str(res.regime),
        "certified": res.certified,
        "strategy": _strategy_json(res.strategy),
        "error_variance": res.error_variance,
        "closed_loop": res.closed_loop,
        "flags": None if res.flags is None else {
            "detectable": res.flags.detectable,
            "unit_circle_controllable": res.flags.unit_circle_controllable,
            "stabilizable": res.flags.stabilizable},
        "notes": list(res.notes),
    }


def _dump(obj, out):
    json.dump(obj, out, indent=2, sort_keys=True, allow_nan=False, default=_json_default)
    out.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _single_c(args) -> float:
    cs = parse_floats(args.c)
    if len(cs) != 1:
        raise UsageError("this command takes a single --c value")
    return cs[0]


def cmd_capacity(args, out):
    params, budget = ChannelParams(_single_c(args), args.kw), PowerBudget(args.kappa)
    res = feedback_capacity(params, budget)
    payload = {"c": params.c, "kw": params.k_w, "kappa": budget.kappa, "base": args.base,
               "threshold": regime_threshold(params), **_result_json(res, args.base)}
    _dump(_clean(payload), out)


def _quantity(params, budget, name):
    """Return ``(value_nats or None, regime, certified_text)`` for one sweep cell."""
    regime = classify_regime(params, budget)
    try:
        if name == "feedback":
            if regime is not Regime.FEEDBACK_GAIN:
                return None, regime, "false"
            res = feedback_capacity(params, budget)
            return res.rate, regime, str(res.certified).lower()
        if name == "iid_lb":
            res = iid_nofeedback_lower_bound(params, budget)
        elif name == "markov_lb":
            res = markov_nofeedback_lower_bound(params, budget)
        elif name == "nc_lb":
            res = noise_cancellation_lower_bound(params, budget)
        elif name == "water_filling":
            return water_filling_reference(params, budget), regime, NA
        elif name == "kim":
            res = kim_solutions(params, budget)[0]
        elif name == "timeshare":
            return time_sharing_envelope(params, budget)[0], regime, NA
        else:
            raise UsageError(f"unknown quantity {name!r}")
    except (ValidationError, NumericalError):
        return None, regime, "false"
    return res.rate, regime, str(res.certified).lower()


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def cmd_sweep(args, out):
    cs = parse_floats(args.c)
    kappas = parse_grid(args.kappa)
    emit = [q.strip() for q in args.emit.split(",") if q.strip()]
    bad = [q for q in emit if q not in QUANTITIES]
    if bad or not emit:
        raise UsageError(f"unknown quantities: {', '.join(bad) or '(none)'}")
    for c in cs:
        validate(ChannelParams(c, args.kw), PowerBudget(float(kappas[0])))
    cells = [(c, float(k), q) for c in cs for k in kappas for q in emit]

    def work(cell):
        c, k, q = cell
        return _quantity(ChannelParams(c, args.kw), PowerBudget(k), q)

    # map keeps submission order, so the output never depends on scheduling
    with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
        results = list(pool.map(work, cells))

    header = list(CSV_HEADER)
    if args.base == "nats":
        header[4] = "value_nats"
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for (c, k, q), (value, regime, cert) in zip(cells, results):
        shown = None if value is None else to_base(value, args.base)
        writer.writerow([fmt(c), fmt(args.kw), fmt(k), q, fmt(shown), str(regime), cert])
    if args.boundary:
        for c in cs:
            params = ChannelParams(c, args.kw)
            thr = regime_threshold(params)
            if math.isinf(thr):
                continue
            below = feedback_capacity(params, PowerBudget(thr))
            above = closed_form_rate(params, PowerBudget(thr))
            writer.writerow([fmt(c), fmt(args.kw), fmt(thr), "feedback_below",
                             fmt(to_base(below.rate, args.base)),
                             str(Regime.UNSTABLE_LOW_POWER), str(below.certified).lower()])
            writer.writerow([fmt(c), fmt(args.kw), fmt(thr), "feedback_above",
                             fmt(to_base(above, args.base)), str(Regime.FEEDBACK_GAIN), "false"])


def cmd_dre(args, out):
    params, strategy = ChannelParams(_single_c(args), args.kw), Strategy(args.lam, args.kz)
    validate(params)
    traj = dre_iterate(params, strategy, k0=args.k0, max_steps=args.steps)
    sol = are_stabilizing_solution(params, strategy, strict=False)
    payload = {
        "c": params.c, "kw": params.k_w, "lambda": strategy.lam, "k_z": strategy.k_z, "k0": args.k0,
        "converged": traj.converged, "limit": traj.limit, "steps": traj.steps,
        "values": traj.values,
        "are_roots": list(sol.roots), "stabilizing_root": sol.stabilizing_root,
        "closed_loop": sol.closed_loop,
        "flags": {"detectable": sol.flags.detectable,
                  "unit_circle_controllable": sol.flags.unit_circle_controllable,
                  "stabilizable": sol.flags.stabilizable},
    }
    _dump(_clean(payload), out)


def cmd_simulate(args, out):
    params = ChannelParams(_single_c(args), args.kw)
    validate(params)
    cfg = SimulationConfig(params, Strategy(args.lam, args.kz), args.n, args.m, args.seed, args.v0)
    rep = simulate(cfg)
    b = args.base
    payload = {
        "c": params.c, "kw": params.k_w, "lambda": args.lam, "k_z": args.kz, "n": args.n,
        "m": args.m, "seed": args.seed, "v0": args.v0, "base": b,
        "empirical_power": rep.empirical_power, "analytic_power": rep.analytic_power,
        "power_stderr": rep.power_stderr,
        "empirical_rate": to_base(rep.empirical_rate, b),
        "analytic_rate": to_base(rep.analytic_rate, b),
        "empirical_innovation_variance": rep.empirical_innovation_variance,
        "analytic_innovation_variance": rep.analytic_innovation_variance,
        "empirical_mse": rep.empirical_mse, "analytic_mse": rep.analytic_mse,
        "lag1_correlation": rep.lag1_correlation,
        "deviations": rep.deviations,
    }
    _dump(_clean(payload), out)


def cmd_kim_compare(args, out):
    params, budget = ChannelParams(_single_c(args), args.kw), PowerBudget(args.kappa)
    sol1, sol2 = kim_solutions(params, budget)
    cx = counterexample_kz_zero(params, sol1.strategy.lam, args.n)
    payload = {
        "c": params.c, "kw": params.k_w, "kappa": budget.kappa, "base": args.base,
        "solution1": _result_json(sol1, args.base),
        "solution2": _result_json(sol2, args.base),
        "dre_limit": cx.error_variances[-1],
        "dre_rate": to_base(cx.rate, args.base),
        "dre_power": cx.power,
        "closed_loop": cx.closed_loop[-1],
        "stabilizable": cx.stabilizable,
        "are_roots": list(cx.are_roots),
    }
    _dump(_clean(payload), out)


def cmd_finite_horizon(args, out):
    params, budget = ChannelParams(_single_c(args), args.kw), PowerBudget(args.kappa)
    strat, rate = finite_horizon_optimize(params, budget, args.n,
                                          OptimizerConfig(starts=args.starts, seed=args.seed))
    payload = {"c": params.c, "kw": params.k_w, "kappa": budget.kappa, "n": args.n,
               "base": args.base, "rate": to_base(rate, args.base), "lambdas": strat.lams,
               "k_zs": strat.k_zs, "error_variances": strat.error_variances,
               "power": strat.power}
    _dump(_clean(payload), out)


def cmd_timeshare(args, out):
    cs = parse_floats(args.c)
    kappas = parse_grid(args.kappa)
    thetas = np.linspace(0.0, 1.0, args.thetas)
    unit = "bits" if args.base == "bits" else "nats"
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["c", "kw", "kappa", "theta", "kappa1", "kappa2",
                     f"timeshare_{unit}", f"feedback_{unit}", f"iid_{unit}"])
    for c in cs:
        params = ChannelParams(c, args.kw)
        thr = regime_threshold(params)
        grid = None if math.isinf(thr) else thr * np.geomspace(1.0 + 1e-6, 1e3, args.kappa1_count)
        for k in kappas:
            budget = PowerBudget(float(k))
            rate, theta, k1, k2 = time_sharing_envelope(params, budget, thetas, grid)
            fb = feedback_capacity(params, budget)
            fb_val = fb.rate if fb.regime is Regime.FEEDBACK_GAIN else None
            iid = iid_nofeedback_lower_bound(params, budget).rate
            writer.writerow([fmt(c), fmt(args.kw), fmt(float(k)), fmt(theta), fmt(k1), fmt(k2),
                             fmt(to_base(rate, args.base)),
                             fmt(None if fb_val is None else to_base(fb_val, args.base)),
                             fmt(to_base(iid, args.base))])


COMMANDS = {
    "capacity": cmd_capacity,
    "sweep": cmd_sweep,
    "dre": cmd_dre,
    "simulate": cmd_simulate,
    "kim-compare": cmd_kim_compare,
    "finite-horizon": cmd_finite_horizon,
    "timeshare": cmd_timeshare,
}


def run(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(err)
            return 1
        args = resolve(args)
        buf = io.StringIO()
        COMMANDS[args.command](args, buf)
        out.write(buf.getvalue())
        return 0
    except UsageError as exc:
        err.write(exc.help_text)
        print(f"usage error: {exc}", file=err)
        return 1
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=err)
        return 2
    except (ChannelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=err)
        return 1


def main():
    sys.exit(run())
