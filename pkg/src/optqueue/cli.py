"""Command-line front end: ``optqueue <command> [--config FILE] [flags]``.

Every command writes ``report.json`` into ``--out``; some also write CSV
curves.  Flags override values from the config file.  Exit status: 0 on
success, 1 for a missing or unknown command, 2 for invalid input, 3 for a
numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import beliefs, design, incentives, leshno, sim
from .errors import NumericalError, OptQueueError, ValidationError
from .process import PrimitiveProcess, make_mmc, process_from_json, regularity_check

COMMANDS = ("optimize", "verify", "beliefs", "figures", "necessity", "naor", "counterexample", "leshno", "simulate")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3


@dataclass
class RunConfig:
    command: str | None
    params: dict[str, Any] = field(default_factory=dict)
    out: Path = Path(".")


@dataclass(frozen=True)
class Diagnostic:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


# --------------------------------------------------------------------------
# JSON output with 17 significant digits


def _encode(obj: Any) -> str:
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return "null"
        text = format(v, ".17g")
        return text if any(ch in text for ch in ".en") else text + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any) -> str:
    return _encode(obj) + "\n"


# --------------------------------------------------------------------------
# Validation

_FAMILY_KEYS = {
    "mmc": ("lambda", "mu", "c"),
    "team": ("m", "lambda", "mu", "c"),
    "one_sided_matching": ("eta", "theta"),
}

_NEEDS_PROCESS = {"optimize", "verify", "beliefs", "naor", "simulate"}
_NEEDS_VC = {"optimize", "verify", "naor"}


def _num(params: dict[str, Any], key: str, diags: list[Diagnostic], *, lo=None, hi=None, lo_open=False, required=False):
    if key not in params or params[key] is None:
        if required:
            diags.append(Diagnostic(key, "required"))
        return None
    val = params[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        diags.append(Diagnostic(key, "must be a finite number"))
        return None
    if lo is not None and (val < lo or (lo_open and val == lo)):
        diags.append(Diagnostic(key, f"must be {'>' if lo_open else '>='} {lo}, got {val}"))
    if hi is not None and val > hi:
        diags.append(Diagnostic(key, f"must be <= {hi}, got {val}"))
    return val


def _validate_process(spec: Any, params: dict[str, Any], diags: list[Diagnostic]) -> None:
    if not isinstance(spec, dict):
        diags.append(Diagnostic("process", "must be an object"))
        return
    family = spec.get("family")
    if family is not None:
        if family not in _FAMILY_KEYS:
            diags.append(Diagnostic("process.family", f"unknown family {family!r}"))
            return
        for key in _FAMILY_KEYS[family]:
            if key not in spec:
                diags.append(Diagnostic(f"process.{key}", "required"))
        if family in ("mmc", "one_sided_matching") and "k_max" not in spec:
            alpha = params.get("alpha")
            if params.get("command") in ("optimize", "verify", "naor") and alpha is not None and alpha > 0:
                pass  # default truncation from the K_bar_2 bound
            elif params.get("command") == "naor":
                pass
            else:
                diags.append(Diagnostic("process.k_max", "required (alpha = 0 or no alpha: truncation must be explicit)"))
        if family == "one_sided_matching" and "theta" in spec:
            th = spec["theta"]
            if not isinstance(th, (int, float)) or not 0 < th <= 1:
                diags.append(Diagnostic("process.theta", "must lie in (0, 1]"))
        for key in ("lambda", "mu", "eta"):
            if key in spec and (not isinstance(spec[key], (int, float)) or spec[key] <= 0):
                diags.append(Diagnostic(f"process.{key}", "must be a positive rate"))
        return
    lam, mu = spec.get("lambda"), spec.get("mu")
    if not isinstance(lam, list) or not lam:
        diags.append(Diagnostic("process.lambda", "must be a nonempty list"))
    if not isinstance(mu, list) or not mu:
        diags.append(Diagnostic("process.mu", "must be a nonempty list"))
    if not (isinstance(lam, list) and isinstance(mu, list) and lam and mu):
        return
    if len(lam) != len(mu):
        diags.append(Diagnostic("process", "lambda and mu must have equal length"))
    for name, seq in (("lambda", lam), ("mu", mu)):
        for i, v in enumerate(seq):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                diags.append(Diagnostic(f"process.{name}[{i}]", "must be a finite nonnegative number"))
    if isinstance(mu[0], (int, float)) and mu[0] != 0:
        diags.append(Diagnostic("process.mu[0]", "must equal 0"))
    if isinstance(lam[0], (int, float)) and lam[0] <= 0:
        diags.append(Diagnostic("process.lambda[0]", "must be positive"))
    for i in range(1, len(mu)):
        a, b = mu[i - 1], mu[i]
        if isinstance(a, (int, float)) and isinstance(b, (int, float)) and b < a:
            diags.append(Diagnostic(f"process.mu[{i}]", "mu must be nondecreasing (monotonicity invariant)"))


def validate(config: RunConfig | dict[str, Any]) -> list[Diagnostic]:
    """All violated preconditions of ``run`` with their field paths."""
    if isinstance(config, dict):
        params = dict(config)
        command = params.get("command")
    else:
        params = dict(config.params)
        command = config.command
    params["command"] = command
    diags: list[Diagnostic] = []
    if command not in COMMANDS:
        diags.append(Diagnostic("command", f"must be one of {', '.join(COMMANDS)}"))
        return diags
    if command in _NEEDS_PROCESS:
        if "process" not in params:
            diags.append(Diagnostic("process", "required"))
        else:
            _validate_process(params["process"], params, diags)
    _num(params, "alpha", diags, lo=0, hi=1, required=command in ("optimize", "verify"))
    for key in ("R",):
        _num(params, key, diags, lo=0, lo_open=True)
    for key in ("V", "C"):
        _num(params, key, diags, lo=0, lo_open=True, required=command in _NEEDS_VC or command == "leshno")
    _num(params, "seed", diags, lo=0)
    _num(params, "points", diags, lo=2)
    _num(params, "horizon", diags, lo=0, lo_open=True)
    if command in ("beliefs", "simulate"):
        _num(params, "K", diags, lo=1, required=True)
        _num(params, "x_last", diags, lo=0, hi=1, lo_open=True)
    if command == "simulate":
        h = _num(params, "horizon", diags, lo=0, lo_open=True, required=True)
        w = _num(params, "warmup", diags, lo=0)
        if h is not None and w is not None and w >= h:
            diags.append(Diagnostic("warmup", "must be smaller than horizon"))
        _num(params, "replications", diags, lo=1)
        disc = params.get("discipline", "FCFS")
        if disc not in ("FCFS", "LCFS", "SIRO", "LIEW"):
            diags.append(Diagnostic("discipline", "must be FCFS, LCFS, SIRO or LIEW"))
    if command == "figures":
        _num(params, "lambda", diags, lo=0, lo_open=True)
        _num(params, "mu", diags, lo=0, lo_open=True)
    if command == "necessity":
        _num(params, "mu", diags, lo=0, lo_open=True)
        fr = params.get("q22_fraction", [0.25, 0.5, 1.0])
        for i, v in enumerate(fr if isinstance(fr, list) else [fr]):
            if not isinstance(v, (int, float)) or not 0 <= v <= 1:
                diags.append(Diagnostic(f"q22_fraction[{i}]", "must lie in [0, 1]"))
        lams = params.get("lambdas", [1e-1, 1e-2, 1e-3])
        for i, v in enumerate(lams if isinstance(lams, list) else [lams]):
            if not isinstance(v, (int, float)) or v <= 0:
                diags.append(Diagnostic(f"lambdas[{i}]", "must be positive"))
    if command == "counterexample":
        eps = params.get("epsilon", [0.1, 0.05, 0.01])
        for i, v in enumerate(eps if isinstance(eps, list) else [eps]):
            if not isinstance(v, (int, float)) or not 0 < v <= 0.1:
                diags.append(Diagnostic(f"epsilon[{i}]", "must lie in (0, 0.1]"))
    if command == "leshno":
        _num(params, "mu_A", diags, lo=0, hi=1, lo_open=True, required=True)
        _num(params, "mu_alpha", diags, lo=0, hi=1, lo_open=True, required=True)
        for key in ("mu_A", "mu_alpha"):
            if params.get(key) == 1:
                diags.append(Diagnostic(key, "must be < 1"))
        _num(params, "t_max", diags, lo=0)
    return diags


# --------------------------------------------------------------------------
# Commands


def _process(params: dict[str, Any]) -> PrimitiveProcess:
    spec = dict(params["process"])
    family = spec.get("family")
    if family in ("mmc", "one_sided_matching") and "k_max" not in spec:
        # Truncate at max(K_bar_2 + 2, 32), with K_bar_2 found on a long provisional table.
        provisional = dict(spec, k_max=4096)
        long = process_from_json(provisional)
        kb = design.k_bar_2(long, params["alpha"], params.get("R", 1.0), params["V"], params["C"])
        spec["k_max"] = max(kb + 2, 32)
    return process_from_json(spec)


def _grid(params: dict[str, Any], mu1: float) -> np.ndarray:
    T = params.get("horizon") or 10.0 / mu1
    return np.linspace(0.0, T, int(params.get("points", beliefs.DEFAULT_POINTS)))


def _cmd_optimize(params, out: Path) -> dict[str, Any]:
    process = _process(params)
    alpha, R, V, C = params["alpha"], params.get("R", 1.0), params["V"], params["C"]
    outcome = design.solve_optimal_design(process, alpha, R, V, C)
    return {
        "process": process.to_json(),
        "k_max": process.k_max,
        "outcome": outcome.to_json(),
        "unbounded_at_truncation": alpha == 0 and outcome.K_star == process.k_max,
    }


def _cmd_verify(params, out: Path) -> dict[str, Any]:
    process = _process(params)
    report = incentives.verify_optimal_design(process, params["alpha"], params.get("R", 1.0), params["V"], params["C"])
    if report.verdict is not None and report.verdict.profile is not None:
        (out / "trajectory.csv").write_text(report.verdict.profile.to_csv())
    return {"process": process.to_json(), "verification": report.to_json()}


def _cmd_beliefs(params, out: Path) -> dict[str, Any]:
    process = _process(params)
    cutoff = design.CutoffPolicy(int(params["K"]), params.get("x_last", 1.0))
    traj = beliefs.fcfs_belief_ode(process, cutoff, _grid(params, process.mu[1]), params.get("V"), params.get("C"))
    (out / "trajectory.csv").write_text(traj.to_csv())
    return {
        "process": process.to_json(),
        "K": cutoff.K,
        "x_last": cutoff.x_last,
        "entry_belief": traj.gamma[0],
        "W0": traj.residual_wait[0],
        "W_end": traj.residual_wait[-1],
        "max_ratio_increase": incentives.max_ratio_increase(traj),
    }


def _cmd_figures(params, out: Path) -> dict[str, Any]:
    lam, mu = params.get("lambda", 1.0), params.get("mu", 1.0)
    grid = _grid(params, mu)
    process = make_mmc(lam, mu, 1, 2)
    dec = beliefs.belief_decomposition(process, design.CutoffPolicy(2, 1.0), grid)
    (out / "fig1.csv").write_text(dec.to_csv())
    curves = beliefs.discipline_wait_curves(lam, mu, grid)
    (out / "fig2.csv").write_text(beliefs.discipline_curves_csv(curves))
    slopes = beliefs.discipline_initial_slopes(lam, mu)
    return {
        "lambda": lam,
        "mu": mu,
        "W0": {name: traj.residual_wait[0] for name, traj in curves.items()},
        "slope_at_0": slopes,
    }


def _cmd_necessity(params, out: Path) -> dict[str, Any]:
    mu, C = params.get("mu", 1.0), params.get("C", 1.0)
    fracs = params.get("q22_fraction", [0.25, 0.5, 1.0])
    fracs = fracs if isinstance(fracs, list) else [fracs]
    lams = params.get("lambdas", [1e-1, 1e-2, 1e-3])
    lams = lams if isinstance(lams, list) else [lams]
    results = [incentives.necessity_experiment(f, mu, C, lams) for f in fracs]
    lines = ["q22,lambda,udot_over_lambda,analytic_limit"]
    for res in results:
        for r in res.rows:
            lines.append(f"{res.q22:.17g},{r.lam:.17g},{r.udot_over_lambda:.17g},{r.analytic_limit:.17g}")
    (out / "necessity.csv").write_text("\n".join(lines) + "\n")
    return {"mu": mu, "C": C, "experiments": [r.to_json() for r in results]}


def _cmd_naor(params, out: Path) -> dict[str, Any]:
    params = dict(params, alpha=params.get("alpha", 1.0))
    process = _process(params)
    res = incentives.naor_full_info_K(process, params["V"], params["C"], params.get("R", 1.0))
    return {"process": process.to_json(), "K_FI": res.K_FI, "K_star": res.K_star, "holds": res.holds}


def _cmd_counterexample(params, out: Path) -> dict[str, Any]:
    eps = params.get("epsilon", [0.1, 0.05, 0.01])
    eps = eps if isinstance(eps, list) else [eps]
    rows = []
    for e in eps:
        res = incentives.nonregular_counterexample(e)
        rows.append(
            {
                "epsilon": e,
                "slope": res.slope,
                "entry_belief": res.entry_belief,
                "first_process_violation": regularity_check(res.process).first_process_violation,
            }
        )
    return {"limit_slope": 1.0 / 3.0, "rows": rows}


def _cmd_leshno(params, out: Path) -> dict[str, Any]:
    model = leshno.BufferQueueModel(params["mu_A"], params["mu_alpha"], params["V"], params["C"])
    t_max = int(params.get("t_max", leshno.DEFAULT_T_MAX))
    K_A, K_B = leshno.max_buffer_size(model)
    report: dict[str, Any] = {
        "model": model.to_json(),
        "K_A_star": K_A,
        "K_B_star": K_B,
        "r0_A": leshno.entry_likelihood_ratio(model, "A"),
        "r0_B": leshno.entry_likelihood_ratio(model, "B"),
    }
    for side, K in (("A", K_A), ("B", K_B)):
        if K is None:
            continue
        report[f"obedience_{side}"] = leshno.obedience_check(model, K, t_max, side).to_json()
        report[f"obedience_{side}_plus_one"] = leshno.obedience_check(model, K + 1, t_max, side).to_json()
        if K >= 1:
            dyn = leshno.discrete_belief_dynamics(model, K, t_max, side)
            lines = ["t," + ",".join(f"gamma_{l}" for l in range(1, K + 1))]
            for t, row in enumerate(dyn.gamma):
                lines.append(",".join([str(t)] + [f"{v:.17g}" for v in row]))
            (out / f"leshno_{side}.csv").write_text("\n".join(lines) + "\n")
    return report


def _cmd_simulate(params, out: Path) -> dict[str, Any]:
    process = _process(params)
    K = int(params["K"])
    policy = design.CutoffPolicy(K, params.get("x_last", 1.0)).to_policy(process.k_max)
    disc = design.discipline_rates(process, params.get("discipline", "FCFS"), K)
    config = sim.SimConfig(
        horizon=float(params["horizon"]),
        warmup=float(params.get("warmup", 0.0)),
        seed=int(params.get("seed", 0)),
        replications=int(params.get("replications", 1)),
    )
    stats_ = sim.simulate(process, policy, disc, config)
    analytic = design.invariant_distribution(process, policy, K)
    report = {
        "process": process.to_json(),
        "K": K,
        "discipline": disc.kind.value,
        "config": {"horizon": config.horizon, "warmup": config.warmup, "seed": config.seed, "replications": config.replications},
        "stats": stats_.to_json(),
        "analytic_p": analytic,
        "total_variation": sim.total_variation(stats_.time_avg_p, analytic),
    }
    if stats_.arrival_rate_effective > 0:
        report["little_discrepancy"] = sim.little_check(stats_)
    return report


_DISPATCH = {
    "optimize": _cmd_optimize,
    "verify": _cmd_verify,
    "beliefs": _cmd_beliefs,
    "figures": _cmd_figures,
    "necessity": _cmd_necessity,
    "naor": _cmd_naor,
    "counterexample": _cmd_counterexample,
    "leshno": _cmd_leshno,
    "simulate": _cmd_simulate,
}


def run(config: RunConfig) -> int:
    """Validate, dispatch and write ``report.json``; returns the exit status."""
    if config.command not in COMMANDS:
        print(_parser().format_usage(), file=sys.stderr, end="")
        return EXIT_USAGE
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    params = dict(config.params)
    diags = validate(RunConfig(config.command, params, out))
    if diags:
        for d in diags:
            print(f"error: {d}", file=sys.stderr)
        (out / "report.json").write_text(
            dumps({"command": config.command, "status": "invalid", "diagnostics": [str(d) for d in diags]})
        )
        return EXIT_INVALID
    try:
        body = _DISPATCH[config.command](params, out)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        (out / "report.json").write_text(dumps({"command": config.command, "status": "numerical_failure", "error": str(exc)}))
        return EXIT_NUMERICAL
    except (ValidationError, OptQueueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        (out / "report.json").write_text(dumps({"command": config.command, "status": "invalid", "diagnostics": [str(exc)]}))
        return EXIT_INVALID
    (out / "report.json").write_text(dumps({"command": config.command, "status": "ok", **body}))
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optqueue", description="Optimal queue design toolkit.")
    p.add_argument("command", nargs="?", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--out", type=Path, help="output directory (default: .)")
    p.add_argument("--seed", type=int)
    p.add_argument("--process", help="process spec as inline JSON or a path to a JSON file")
    p.add_argument("--family", choices=sorted(_FAMILY_KEYS), help="canonical family (with rate flags)")
    p.add_argument("--lambda", dest="lam", type=float, help="arrival rate")
    p.add_argument("--mu", type=float, help="service rate")
    p.add_argument("--c", type=int, help="servers")
    p.add_argument("--m", type=int, help="team population")
    p.add_argument("--eta", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--k-max", dest="k_max", type=int, help="truncation length")
    for name in ("alpha", "R", "V", "C", "x_last", "horizon", "warmup", "mu_A", "mu_alpha"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    for name in ("K", "points", "replications", "t_max"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    p.add_argument("--discipline", choices=["FCFS", "LCFS", "SIRO", "LIEW"])
    p.add_argument("--q22-fraction", dest="q22_fraction", type=float, nargs="+")
    p.add_argument("--lambdas", type=float, nargs="+")
    p.add_argument("--epsilon", type=float, nargs="+")
    return p


def _load_json(text_or_path: str) -> Any:
    path = Path(text_or_path)
    if not text_or_path.lstrip().startswith("{") and path.exists():
        return json.loads(path.read_text())
    return json.loads(text_or_path)


def parse_args(argv: Sequence[str] | None) -> RunConfig:
    args = _parser().parse_args(argv)
    params: dict[str, Any] = {}
    if args.config is not None:
        params.update(json.loads(Path(args.config).read_text()))
    command = args.command or params.pop("command", None)
    params.pop("command", None)
    out = args.out or Path(params.pop("out", "."))
    params.pop("out", None)

    # Flags override file values.
    for key in (
        "seed", "alpha", "R", "V", "C", "x_last", "horizon", "warmup", "mu_A", "mu_alpha",
        "K", "points", "replications", "t_max", "discipline", "lambdas",
    ):
        val = getattr(args, key)
        if val is not None:
            params[key] = val
    for key in ("q22_fraction", "epsilon"):
        val = getattr(args, key)
        if val is not None:
            params[key] = val
    if args.process is not None:
        params["process"] = _load_json(args.process)
    family_flags = {"lambda": args.lam, "mu": args.mu, "c": args.c, "m": args.m, "eta": args.eta, "theta": args.theta, "k_max": args.k_max}
    if args.family is not None:
        base = params.get("process") if isinstance(params.get("process"), dict) else {}
        spec = dict(base) if base.get("family") == args.family else {}
        spec["family"] = args.family
        spec.update({k: v for k, v in family_flags.items() if v is not None})
        params["process"] = spec
    else:
        proc = params.get("process")
        if isinstance(proc, dict) and proc.get("family"):
            proc = dict(proc)
            proc.update({k: v for k, v in family_flags.items() if v is not None and k in _FAMILY_KEYS[proc["family"]] + ("k_max",)})
            params["process"] = proc
        # Rate flags also parameterize the figures and necessity commands.
        if args.lam is not None:
            params["lambda"] = args.lam
        if args.mu is not None:
            params["mu"] = args.mu
    return RunConfig(command, params, out)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        config = parse_args(argv)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
