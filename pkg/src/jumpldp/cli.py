"""Command-line interface: ``jumpldp <command> MODEL [options]``.

Every command writes a JSON (or CSV) payload to ``--output`` (standard
output by default) and a one-line summary.  Seeds are always echoed in the
payload so a run can be repeated bit for bit.
"""

from __future__ import annotations

import argparse
import io
import json
import sys

import numpy as np

from .action import local_lagrangian, path_action
from .dynamics import Path, integrate_ode
from .errors import JumpLDPError
from .model import load_model, validate_model
from .quasipotential import A_END, N_SEGMENTS, T_GRID, quasipotential, regularize_endpoint
from .rareevent import TerminalEvent, Tilt, importance_sampling_estimate, tilt_from_path
from .stochastic import (LLNReplicate, RNG_NAME, Region, exit_time_ensemble, monte_carlo,
                         simulate)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None


def _json(payload) -> str:
    return json.dumps(payload, indent=2, allow_nan=True) + "\n"


# ------------------------------------------------------------ commands

def cmd_validate(args, model):
    rep = validate_model(model, resolution=args.resolution, strict=args.strict)
    payload = {"model": model.name, **rep.to_dict()}
    return _json(payload), f"{model.name}: sigma={rep.sigma:g} boundary_consistent={rep.boundary_consistent} violations={len(rep.violations)}", True


def cmd_simulate(args, model):
    traj = simulate(model, args.n, args.z, args.t, seed=args.seed)
    if args.format == "csv":
        buf = io.StringIO()
        traj.to_csv(buf, model.compartments)
        text = buf.getvalue()
    else:
        text = _json({"model": model.name, "rng": RNG_NAME, **traj.to_dict()})
    return text, f"{traj.n_events} events, terminal state {traj.terminal_state().tolist()}, seed {args.seed}", True


def cmd_lln(args, model):
    path = integrate_ode(model, args.z, args.t, args.dt)
    ens = monte_carlo(LLNReplicate(model, args.n, tuple(args.z), path), args.reps, args.seed, args.workers)
    payload = {"model": model.name, "N": args.n, "T": args.t, "z": args.z,
               "median": float(np.median(ens.values)), **ens.to_dict()}
    return _json(payload), f"median sup-distance {payload['median']:.6g} over {args.reps} runs (N={args.n}, seed {args.seed})", True


def cmd_ode(args, model):
    path = integrate_ode(model, args.z, args.t, args.dt)
    if args.format == "csv":
        buf = io.StringIO()
        path.to_csv(buf, model.compartments)
        text = buf.getvalue()
    else:
        text = _json({"model": model.name, "times": path.times.tolist(), "states": path.states.tolist(),
                      "projections": path.projections})
    return text, f"{path.m} steps, terminal state {path.states[-1].tolist()}, projections {path.projections}", True


def cmd_action(args, model):
    with open(args.path, newline="") as fh:
        path = Path.from_csv(fh, model.compartments)
    value = path_action(model, path, order=args.order)
    payload = {"model": model.name, "action": value, "T": path.T, "segments": path.m}
    return _json(payload), f"action {value:.10g} over T={path.T:g}", True


def cmd_lagrangian(args, model):
    res = local_lagrangian(model, args.z, args.y)
    return _json(res.to_dict()), f"L = {res.value:.10g} ({res.iterations} Newton steps)", True


def cmd_quasipotential(args, model):
    target = regularize_endpoint(np.asarray(args.to, dtype=float), args.a_end)
    res = quasipotential(model, args.from_, target, args.t_grid, args.segments)
    path_file = None
    if args.path_out:
        with open(args.path_out, "w", newline="") as fh:
            res.path.to_csv(fh, model.compartments)
        path_file = args.path_out
    payload = {"model": model.name, "requested_end": args.to, **res.to_dict(path_file)}
    table = "; ".join(f"T={t:.4g}: {a:.6g}" for t, a, _ in res.per_T)
    return _json(payload), f"V = {res.value:.8g} at T* = {res.T_star:.4g} [{table}]", True


def cmd_exit_time(args, model):
    region = Region.parse(args.domain, model.compartments)
    ens = exit_time_ensemble(model, args.n, args.z, region, args.t_max, args.reps, args.seed, args.workers)
    payload = {"model": model.name, "N": args.n, "z": args.z, "domain": args.domain, **ens.to_dict()}
    return _json(payload), (f"mean exit time {ens.mean:.6g} +- {ens.se:.3g} "
                            f"({ens.extra['censored']} of {args.reps} censored at {args.t_max:g}, seed {args.seed})"), True


def cmd_importance(args, model):
    with open(args.tilt) as fh:
        tilt = Tilt.from_dict(json.load(fh))
    T = tilt.T if args.t is None else args.t
    event = TerminalEvent(Region.parse(args.event, model.compartments))
    res = importance_sampling_estimate(model, event, tilt, args.n, args.z, T, args.reps, args.seed, args.workers)
    payload = {"model": model.name, "N": args.n, "z": args.z, "T": T, "event": args.event,
               "rng": RNG_NAME, **res.to_dict()}
    return _json(payload), (f"estimate {res.estimate:.6g} +- {res.se:.3g}, hits {res.hit_fraction:.3f}, "
                            f"support violations {res.support_violations}, seed {args.seed}"), True


def cmd_tilt(args, model):
    with open(args.path, newline="") as fh:
        path = Path.from_csv(fh, model.compartments)
    tilt = tilt_from_path(model, path, args.epsilon)
    return _json(tilt.to_dict()), f"{tilt.windows} windows of length {args.epsilon:g}, {tilt.n_flagged} support flags", True


# ------------------------------------------------------------ parser

def _parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="jumpldp", description="Large deviations toolkit for density-dependent jump processes.",
                                formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def command(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        sp.add_argument("model", help="model JSON file or bundled model name (sis, sir)")
        sp.add_argument("-o", "--output", default="-", help="payload destination; '-' for standard output")
        sp.set_defaults(func=func)
        return sp

    def seeded(sp):
        sp.add_argument("--seed", type=_seed, default=0, help="base seed for the random streams")
        sp.add_argument("--workers", type=_positive_int, default=None,
                        help="worker processes (falls back to JUMPLDP_WORKERS, then 1)")

    sp = command("validate", cmd_validate, "Check rate positivity, bounds and boundary consistency.")
    sp.add_argument("--resolution", type=_positive_int, default=200, help="grid points per simplex edge")
    sp.add_argument("--strict", action="store_true", help="fail on negative rates instead of reporting them")

    sp = command("simulate", cmd_simulate, "Simulate one trajectory of the scaled jump process.")
    sp.add_argument("--n", type=_positive_int, required=True, help="population size N")
    sp.add_argument("--z", type=_floats, required=True, help="initial state, comma separated")
    sp.add_argument("--t", type=_positive_float, required=True, help="horizon T")
    sp.add_argument("--seed", type=_seed, default=0, help="seed of the random stream")
    sp.add_argument("--format", choices=("csv", "json"), default="csv", help="payload format")

    sp = command("lln", cmd_lln, "Sup-distance between simulated trajectories and the fluid limit.")
    sp.add_argument("--n", type=_positive_int, required=True, help="population size N")
    sp.add_argument("--z", type=_floats, required=True, help="initial state, comma separated")
    sp.add_argument("--t", type=_positive_float, required=True, help="horizon T")
    sp.add_argument("--reps", type=_positive_int, default=100, help="number of trajectories")
    sp.add_argument("--dt", type=_positive_float, default=None, help="RK4 step (default T/10^4)")
    seeded(sp)

    sp = command("ode", cmd_ode, "Integrate the fluid-limit ODE with fixed-step RK4.")
    sp.add_argument("--z", type=_floats, required=True, help="initial state, comma separated")
    sp.add_argument("--t", type=_positive_float, required=True, help="horizon T")
    sp.add_argument("--dt", type=_positive_float, default=None, help="RK4 step (default T/10^4)")
    sp.add_argument("--format", choices=("csv", "json"), default="csv", help="payload format")

    sp = command("action", cmd_action, "Action of a polygonal path given as CSV.")
    sp.add_argument("--path", required=True, help="path CSV with header t,<compartments>")
    sp.add_argument("--order", type=_positive_int, default=8, help="Gauss-Legendre nodes per segment")

    sp = command("lagrangian", cmd_lagrangian, "Local cost L(z, y) with its optimal dual point and intensities.")
    sp.add_argument("--z", type=_floats, required=True, help="state, comma separated")
    sp.add_argument("--y", type=_floats, required=True, help="velocity, comma separated")

    sp = command("quasipotential", cmd_quasipotential, "Least action between two states over all horizons.")
    sp.add_argument("--from", dest="from_", type=_floats, required=True, help="start state (an equilibrium)")
    sp.add_argument("--to", type=_floats, required=True, help="end state; boundary points are pulled inside")
    sp.add_argument("--t-grid", type=_floats, default=list(T_GRID), help="horizons scanned, comma separated")
    sp.add_argument("--segments", type=_positive_int, default=N_SEGMENTS, help="path segments")
    sp.add_argument("--a-end", type=_positive_float, default=A_END, help="interior shrink for boundary end points")
    sp.add_argument("--path-out", default=None, help="write the minimizing path CSV here")

    sp = command("exit-time", cmd_exit_time, "Monte Carlo exit times from a domain given by coordinate bounds.")
    sp.add_argument("--n", type=_positive_int, required=True, help="population size N")
    sp.add_argument("--z", type=_floats, required=True, help="initial state, comma separated")
    sp.add_argument("--domain", required=True, help="domain as constraints, e.g. 'i>0' or 's<0.9,i>0'")
    sp.add_argument("--reps", type=_positive_int, default=100, help="number of samples")
    sp.add_argument("--t-max", type=_positive_float, default=1e6, help="censoring time")
    seeded(sp)

    sp = command("importance", cmd_importance, "Importance-sampling estimate of a terminal-state event.")
    sp.add_argument("--event", required=True, help="terminal event as constraints, e.g. 'i<=0.2'")
    sp.add_argument("--tilt", required=True, help="tilt JSON (see the tilt command)")
    sp.add_argument("--n", type=_positive_int, required=True, help="population size N")
    sp.add_argument("--z", type=_floats, required=True, help="initial state, comma separated")
    sp.add_argument("--t", type=_positive_float, default=None, help="horizon (default: the tilt's)")
    sp.add_argument("--reps", type=_positive_int, default=10_000, help="number of tilted replicates")
    seeded(sp)

    sp = command("tilt", cmd_tilt, "Window-constant optimal intensities along a path CSV.")
    sp.add_argument("--path", required=True, help="path CSV with header t,<compartments>")
    sp.add_argument("--epsilon", type=_positive_float, required=True, help="window length dividing T")
    return p


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        model = load_model(args.model)
        text, summary, ok = args.func(args, model)
    except (JumpLDPError, ValueError, OSError, KeyError) as exc:
        print(f"jumpldp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if args.output == "-":
        sys.stdout.write(text)
        print(summary, file=sys.stderr)
    else:
        with open(args.output, "w", newline="") as fh:
            fh.write(text)
        print(summary)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
