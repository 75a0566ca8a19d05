"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
Every subcommand that writes files also writes ``manifest.json``; running
``psnf-control replay manifest.json --out DIR`` regenerates the same files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .averaging import (
    InfeasibleTarget,
    approx_equilibrium,
    averaged_equilibrium,
    invert_feedforward,
    open_loop_condition,
    tabulate_feedforward_curve,
)
from .experiments import (
    CONTROLLERS,
    DEFAULT_GAMMA,
    DEFAULT_PERIOD,
    CV_LIST,
    RunConfig,
    default_workers,
    robustness_csv,
    robustness_sweep,
    run_closed_loop,
    tune_pi_grid,
    tuning_csv,
)
from .ga import GaConfig
from .integrator import DEFAULT_STEP, IntegrationDiverged
from .model import (
    InvalidParameters,
    PlantParams,
    dimensionless_equilibrium,
    equilibria,
    ideal_biomass,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_grid(text: str) -> list[float]:
    """``a:b:step`` (inclusive) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"bad range {text!r}; use start:stop:step")
        lo, hi, step = (float(p) for p in parts)
        if step <= 0 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad range {text!r}")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [round(lo + i * step, 10) for i in range(n)]
    values = [float(v) for v in text.split(",") if v.strip()]
    if not values:
        raise argparse.ArgumentTypeError("empty grid")
    return values


def _add_params(p: argparse.ArgumentParser) -> None:
    d = PlantParams()
    g = p.add_argument_group("plant parameters")
    g.add_argument("--g", type=float, default=d.g, help="growth rate [1/month] (default %(default)s)")
    g.add_argument("--b-max", type=float, default=d.b_max, help="carrying capacity [kg/cm^2] (default %(default)s)")
    g.add_argument("--d", type=float, default=d.d, help="death rate [1/month] (default %(default)s)")
    g.add_argument("--s", type=float, default=d.s, help="toxin sensitivity (default %(default)s)")
    g.add_argument("--c", type=float, default=d.c, help="toxin production rate (default %(default)s)")
    g.add_argument("--k", type=float, default=d.k, help="toxin decay rate [1/month] (default %(default)s)")


def _add_run(p: argparse.ArgumentParser) -> None:
    r = p.add_argument_group("closed-loop run")
    r.add_argument("--controller", choices=CONTROLLERS, default="pi", help="(default %(default)s)")
    r.add_argument("--bref", type=float, default=0.9, help="target mean biomass (default %(default)s)")
    r.add_argument("--periods", type=int, default=20, help="number of periods N (default %(default)s)")
    r.add_argument("--period", type=float, default=DEFAULT_PERIOD, help="pulse period P [months] (default %(default)s)")
    r.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="removal amplitude, per unit of g*t (default %(default)s)")
    r.add_argument("--h", type=float, default=DEFAULT_STEP, help="RK4 step [months] (default %(default)s)")
    r.add_argument("--seed", type=int, default=0, help="master seed (default %(default)s)")
    r.add_argument("--kp", type=float, default=0.1, help="PI proportional gain (default %(default)s)")
    r.add_argument("--ki", type=float, default=26.0, help="PI integral gain (default %(default)s)")
    r.add_argument("--quant", type=float, default=0.01, help="duty quantization step, 0 disables (default %(default)s)")
    r.add_argument("--no-anti-windup", action="store_true", help="accumulate the PI error while saturated")
    r.add_argument("--horizon", type=int, default=5, help="MPC horizon in periods (default %(default)s)")
    r.add_argument("--duty", type=float, default=None, help="open-loop duty (default: feedforward value)")
    r.add_argument("--init-b", type=float, default=None, help="initial biomass (default: uncontrolled equilibrium)")
    r.add_argument("--init-t", type=float, default=None, help="initial toxin (default: uncontrolled equilibrium)")


def _params(a) -> PlantParams:
    return PlantParams(a.g, a.b_max, a.d, a.s, a.c, a.k)


def _run_config(a) -> RunConfig:
    if (a.init_b is None) != (a.init_t is None):
        raise ConfigError("--init-b and --init-t must be given together")
    initial = None if a.init_b is None else (a.init_b, a.init_t)
    return RunConfig(
        params=_params(a),
        period=a.period,
        gamma=a.gamma,
        controller=a.controller,
        b_ref=a.bref,
        n_periods=a.periods,
        initial=initial,
        h=a.h,
        seed=a.seed,
        kp=a.kp,
        ki=a.ki,
        quantization=a.quant,
        anti_windup=not a.no_anti_windup,
        openloop_duty=a.duty,
        horizon=a.horizon,
        ga=GaConfig(),
    )


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _manifest(a, argv: list[str], extra: dict | None = None) -> str:
    settings = {k: v for k, v in vars(a).items() if k not in ("func", "config", "out", "workers")}
    data = {
        "program": "psnf-control",
        "version": __version__,
        "command": a.command,
        "argv": argv,
        "settings": settings,
    }
    if extra:
        data.update(extra)
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ------------------------------------------------------------- subcommands


def cmd_equilibria(a, argv) -> int:
    p = _params(a)
    eq = equilibria(p).coexistence
    b_nd, t_nd = dimensionless_equilibrium(p)
    data = {
        "alpha": p.alpha,
        "beta": p.beta,
        "kappa": p.kappa,
        "Gamma": p.discriminant,
        "B_star_dimensionless": b_nd,
        "T_star_dimensionless": t_nd,
        "B_star": eq.b,
        "T_star": eq.t,
        "B_hat": ideal_biomass(p),
    }
    if a.json:
        sys.stdout.write(_dumps(data))
    else:
        for k, v in data.items():
            print(f"{k:22s} {v:.15g}")
    return EXIT_OK


def cmd_feedforward(a, argv) -> int:
    p = _params(a)
    ff = invert_feedforward(p, a.gamma, a.bref / p.b_max)
    approx, valid = approx_equilibrium(p, a.gamma, ff.duty)
    data = {
        "gamma": a.gamma,
        "b_ref": a.bref,
        "D_ref": ff.duty,
        "eta": ff.eta,
        "saturated": ff.saturated,
        "B_av_star_at_D_ref": averaged_equilibrium(p, a.gamma, ff.duty),
        "small_alpha_approximation": approx,
        "small_alpha_valid": valid,
        "open_loop_min_removal": open_loop_condition(p, a.delta),
        "delta": a.delta,
    }
    if a.json:
        sys.stdout.write(_dumps(data))
    else:
        for k, v in data.items():
            print(f"{k:26s} {v}")
    return EXIT_OK


def cmd_curve(a, argv) -> int:
    p = _params(a)
    curve = tabulate_feedforward_curve(p, a.gamma, a.points)
    lookup = curve.lookup(a.bref / p.b_max)
    if a.out:
        out = Path(a.out)
        _write(out, "curve.csv", curve.to_csv())
        _write(out, "manifest.json", _manifest(a, argv))
    else:
        sys.stdout.write(curve.to_csv())
    print(f"lookup({a.bref})={lookup!r}", file=sys.stderr if not a.out else sys.stdout)
    return EXIT_OK


def cmd_simulate(a, argv) -> int:
    cfg = _run_config(a)
    traj, report = run_closed_loop(cfg)
    out = Path(a.out)
    _write(out, "trajectory.csv", traj.to_csv())
    _write(out, "duty.csv", report.duty_csv())
    _write(out, "report.json", report.to_json() + "\n")
    _write(out, "manifest.json", _manifest(a, argv))
    print(report.summary_line())
    return EXIT_OK


def cmd_tune_pi(a, argv) -> int:
    base = replace(_run_config(a), controller="pi")
    rows = tune_pi_grid(
        base,
        a.kp_grid,
        a.ki_grid,
        max_settle=None if a.no_settle_rule else a.max_settle,
        workers=a.workers,
    )
    out = Path(a.out)
    _write(out, "tuning.csv", tuning_csv(rows))
    _write(out, "manifest.json", _manifest(a, argv))
    kept = sum(not r.excluded for r in rows)
    print(f"evaluated={len(rows)} kept={kept} excluded={len(rows) - kept}")
    return EXIT_OK


def cmd_robustness(a, argv) -> int:
    base = _run_config(a)
    controllers = tuple(c.strip() for c in a.controllers.split(",") if c.strip())
    bad = [c for c in controllers if c not in CONTROLLERS]
    if bad or not controllers:
        raise ConfigError(f"unknown controllers {bad}; choose from {CONTROLLERS}")
    if any(cv < 0 for cv in a.cv):
        raise ConfigError("cv values must be non-negative")
    if a.runs < 1:
        raise ConfigError("--runs must be >= 1")
    rows, agg = robustness_sweep(base, tuple(a.cv), a.runs, controllers, workers=a.workers)
    out = Path(a.out)
    _write(out, "robustness.csv", robustness_csv(rows))
    _write(out, "aggregate.json", _dumps(agg))
    _write(out, "manifest.json", _manifest(a, argv))
    print(f"runs={len(rows)} diverged={sum(r.diverged for r in rows)}")
    return EXIT_OK


def cmd_replay(a, argv) -> int:
    manifest = json.loads(Path(a.manifest).read_text())
    old = list(manifest["argv"])
    # drop any previous output directory, then point at the new one
    cleaned = []
    skip = False
    for tok in old:
        if skip:
            skip = False
            continue
        if tok == "--out":
            skip = True
            continue
        if tok.startswith("--out="):
            continue
        cleaned.append(tok)
    return main(cleaned + ["--out", a.out])


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psnf-control",
        description="Periodic toxin-removal control of a biomass/toxin soil model.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key = value file; flags override it")

    p = sub.add_parser("equilibria", help="equilibria and dimensionless groups")
    common(p)
    _add_params(p)
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_equilibria)

    p = sub.add_parser("feedforward", help="duty-cycle for a target mean biomass")
    common(p)
    _add_params(p)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="(default %(default)s)")
    p.add_argument("--bref", type=float, default=0.9, help="(default %(default)s)")
    p.add_argument("--delta", type=float, default=0.1, help="open-loop bound (default %(default)s)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_feedforward)

    p = sub.add_parser("curve", help="tabulate the feedforward curve")
    common(p)
    _add_params(p)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="(default %(default)s)")
    p.add_argument("--points", type=int, default=101, help="(default %(default)s)")
    p.add_argument("--bref", type=float, default=0.9, help="target looked up on the curve (default %(default)s)")
    p.add_argument("--out", default=None, help="output directory (default: stdout)")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("simulate", help="one closed-loop run")
    common(p)
    _add_params(p)
    _add_run(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune-pi", help="PI gain grid")
    common(p)
    _add_params(p)
    _add_run(p)
    p.add_argument("--kp-grid", type=parse_grid, default="0:2:0.1", help="(default %(default)s)")
    p.add_argument("--ki-grid", type=parse_grid, default="1:30:1", help="(default %(default)s)")
    p.add_argument("--max-settle", type=int, default=7, help="exclude pairs settling later (default %(default)s)")
    p.add_argument("--no-settle-rule", action="store_true", help="do not exclude slow pairs")
    p.add_argument("--workers", type=int, default=None, help="worker processes (env PSNF_WORKERS)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune_pi)

    p = sub.add_parser("robustness", help="Monte Carlo parameter-variation sweep")
    common(p)
    _add_params(p)
    _add_run(p)
    p.add_argument("--cv", type=parse_grid, default=",".join(str(c) for c in CV_LIST), help="(default %(default)s)")
    p.add_argument("--runs", type=int, default=50, help="runs per cv (default %(default)s)")
    p.add_argument("--controllers", default=",".join(CONTROLLERS), help="(default %(default)s)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (env PSNF_WORKERS)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        values = read_config_file(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in subparser._actions}
        unknown = set(values) - set(actions)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in values.items():
            if isinstance(actions[key], argparse._StoreTrueAction):
                values[key] = value.lower() in ("1", "true", "yes", "on")
        subparser.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        if getattr(args, "workers", None) is None and hasattr(args, "workers"):
            args.workers = default_workers()
        return args.func(args, argv)
    except SystemExit as exc:
        # argparse usage errors
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    except (ConfigError, InvalidParameters, InfeasibleTarget, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationDiverged, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
