"""Command-line front end.

Exit codes: 0 success, 1 invalid or unstable network, 2 bad arguments or
unreadable input, 3 steady-state iteration did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis, model, sim, steady_net
from .model import ConfigError

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_USAGE):
        super().__init__(msg)
        self.code = code


def bundled_networks() -> list:
    return sorted(p.name[:-5] for p in resources.files("sigqueue").joinpath("data").iterdir()
                  if p.name.endswith(".json"))


def _net_path(arg: str):
    """``@name`` picks a bundled network; anything else is a file path."""
    if arg.startswith("@"):
        p = resources.files("sigqueue").joinpath("data", arg[1:] + ".json")
        if not p.is_file():
            raise CliError(f"no bundled network {arg[1:]!r}; have {', '.join(bundled_networks())}")
        return p
    return Path(arg)


def _load(arg: str, need_valid: bool = True) -> model.Network:
    try:
        net = model.load_network(_net_path(arg))
    except FileNotFoundError:
        raise CliError(f"{arg}: no such file") from None
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"{arg}: {exc}") from None
    if need_valid:
        rep = model.validate(net)
        for w in rep.warnings:
            print(f"warning: {w}", file=sys.stderr)
        if not rep.ok:
            raise CliError("invalid network: " + "; ".join(rep.errors), EXIT_INVALID)
    return net


def _require_stable(net):
    rep = analysis.stability(net)
    if not rep.stable:
        raise CliError(f"network is unstable (margin {rep.margin:.6g})", EXIT_INVALID)
    return rep


def _init_x(spec: str, net) -> np.ndarray:
    if spec == "zero":
        return np.zeros(net.n_links)
    try:
        return np.full(net.n_links, float(spec))
    except ValueError:
        pass
    try:
        vals = json.loads(Path(spec).read_text() if Path(spec).is_file() else spec)
    except (json.JSONDecodeError, OSError):
        raise CliError(f"--init must be 'zero', a number or a JSON list, got {spec!r}") from None
    arr = np.asarray(vals, dtype=float)
    if arr.shape != (net.n_links,):
        raise CliError(f"--init list needs {net.n_links} values, got {arr.size}")
    return arr


def _plot(fn, *args):
    from . import plotting

    return getattr(plotting, fn)(*args)


# -- subcommands --------------------------------------------------------------

def cmd_validate(a) -> int:
    net = _load(a.network, need_valid=False)
    rep = model.validate(net)
    for line in rep.lines():
        print(line)
    return EXIT_OK if rep.ok else EXIT_INVALID


def cmd_stability(a) -> int:
    net = _load(a.network)
    rep = analysis.stability(net)
    if a.format == "json":
        print(json.dumps(rep.as_dict()))
    elif a.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["link", "slack"])
        for lid, s in zip(net.link_ids, rep.slack):
            w.writerow([lid, repr(float(s))])
        w.writerow(["margin", repr(rep.margin)])
    else:
        print(f"margin {rep.margin:.6g}")
        print("stable" if rep.stable else "unstable")
    return EXIT_OK if rep.stable else EXIT_INVALID


def cmd_simulate(a) -> int:
    net = _load(a.network)
    if a.horizon_ms <= 0:
        raise CliError("--horizon-ms must be positive")
    init = sim.NetState.cold(net, _init_x(a.init, net), 0)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if a.adaptive:
        try:
            traj, greens = sim.adaptive_green(net, init, a.horizon_ms)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        with open(out.with_suffix(".greens.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle", "link", "green_ms"])
            for k, row in enumerate(greens):
                for i, g in enumerate(row):
                    w.writerow([k, i, g])
    else:
        traj = sim.simulate(net, init, a.horizon_ms)
    sim.write_trajectory_csv(traj, out)
    sim.write_events_csv(traj, out.with_suffix(".events.csv"))
    if not a.no_plot:
        _plot("plot_trajectory", traj, out.with_suffix(".png"), net.link_ids)
    print(f"wrote {out} ({len(traj.times)} knots, {len(traj.events)} zero-set events)")
    return EXIT_OK


def cmd_steady(a) -> int:
    net = _load(a.network)
    rep = _require_stable(net)
    state, log = steady_net.solve_steady(net, a.eps, a.max_iter)
    out = steady_net.write_bundle(net, state, log, a.out)
    if not a.no_plot:
        _plot("plot_orbits", state.orbits, out / "orbits.png", net.link_ids)
    print(f"margin {rep.margin:.6g}; {state.iterations} iterations, gap {state.gap:.3e}; wrote {out}")
    if not state.converged:
        print(f"error: no convergence to {a.eps:g} within {a.max_iter} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _read_curves(arg: str):
    """Per-link queue curves and their natural window start from any written file."""
    p = Path(arg)
    if p.is_dir():
        if not (p / "summary.json").is_file():
            raise CliError(f"{arg}: directory without summary.json")
        pairs, _ = steady_net.read_bundle(p)
        return [x for x, _ in pairs], "orbit"
    if not p.is_file():
        raise CliError(f"{arg}: no such file")
    with open(p, newline="") as fh:
        header = next(csv.reader(fh), [])
    if header[:4] == ["t_ms", "link", "x", "z"]:
        traj = sim.read_trajectory_csv(p)
        return [traj.x_curve(i) for i in range(traj.n_links)], "trajectory"
    if header[:3] == ["t_ms", "x_star", "z_star"]:
        from .steady_link import read_orbit_csv

        x, _ = read_orbit_csv(p)
        return [x], "orbit"
    raise CliError(f"{arg}: not a trajectory, orbit or bundle")


def cmd_compare(a) -> int:
    ca, kind_a = _read_curves(a.a)
    cb, kind_b = _read_curves(a.b)
    if len(ca) != len(cb):
        raise CliError(f"link counts differ ({len(ca)} vs {len(cb)})")
    T = a.period_ms

    def start(curves, kind, given):
        if given is not None:
            return given
        # trajectories are compared over their last full period
        return curves[0].end - T if kind == "trajectory" else curves[0].start

    try:
        r = analysis.rmse(ca, cb, T, start(ca, kind_a, a.start_a), start(cb, kind_b, a.start_b))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["link", "rmse"])
    for i, v in enumerate(r):
        w.writerow([i, repr(float(v))])
    return EXIT_OK


def cmd_demo_fig_rmse(a) -> int:
    net = _load(a.network)
    _require_stable(net)
    study = analysis.rmse_study(net, a.init_x, a.eps, a.max_iter, a.max_cycles)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    study.write_csv(out / "rmse.csv")
    if not a.no_plot:
        _plot("plot_rmse", study.table, out / "rmse.png", net.link_ids)
    final = float(study.table[-1].max())
    print(f"{study.table.shape[0]} iterations; simulation settled after {study.sim_cycles} cycles"
          f" ({'yes' if study.settled else 'no'}); final max RMSE {final:.3e};"
          f" non-increasing: {'yes' if study.non_increasing() else 'no'}")
    if not study.steady.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sigqueue", description=(
        "Queue dynamics and periodic steady states of signalized road networks. "
        "NETWORK is a JSON config path or @name for a bundled one ("
        + ", ".join(bundled_networks()) + ")."))
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a network config")
    s.add_argument("network")
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("stability", help="stability margin and per-link slack")
    s.add_argument("network")
    s.add_argument("--format", choices=("text", "json", "csv"), default="text")
    s.set_defaults(fn=cmd_stability)

    s = sub.add_parser("simulate", help="event-driven simulation to a trajectory CSV")
    s.add_argument("network")
    s.add_argument("--horizon-ms", type=int, required=True)
    s.add_argument("--init", default="zero", help="'zero', a number, or a JSON list / file")
    s.add_argument("--out", required=True, help="trajectory CSV path")
    s.add_argument("--adaptive", action="store_true",
                   help="re-split green time each cycle in proportion to peak queues")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("steady", help="periodic steady state by monotone iteration")
    s.add_argument("network")
    s.add_argument("--eps", type=float, default=steady_net.DEFAULT_EPS)
    s.add_argument("--max-iter", type=int, default=steady_net.DEFAULT_MAX_ITER)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(fn=cmd_steady)

    s = sub.add_parser("compare", help="per-link queue RMSE between two outputs")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--period-ms", type=float, required=True)
    s.add_argument("--start-a", type=float, default=None)
    s.add_argument("--start-b", type=float, default=None)
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("demo-fig-rmse",
                       help="RMSE of each iterate against a long simulation")
    s.add_argument("network")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--init-x", type=float, default=10.0)
    s.add_argument("--eps", type=float, default=1e-9)
    s.add_argument("--max-iter", type=int, default=steady_net.DEFAULT_MAX_ITER)
    s.add_argument("--max-cycles", type=int, default=2000)
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(fn=cmd_demo_fig_rmse)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (steady_net.UnstableNetworkError, sim.HistoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
