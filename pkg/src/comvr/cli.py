"""Command-line entry point.

    comvr pf --network rhodes_r26.json --loading 0.5
    comvr campaign --steps 300,400,500 --modes dispatch,redispatch --count 1000 --seed 42

Exit codes: 0 ok, 1 runtime failure, 2 usage error, 3 bad input data.
A JSON config file given with --config overrides any flag. The default
output directory comes from $COMVR_OUTDIR, else ./comvr-out.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .campaign import (
    DEFAULT_STEPS,
    MODES,
    Scenario,
    ScenarioConfig,
    find_critical_loading,
    generate_scenarios,
    run_campaign,
)
from .com import WEIGHTINGS, bus_currents, centers_from_currents, mass_diagram
from .controller import APPROACH_RULES, INCREASE_RULES, RegulationConfig, Regulator, injections, load_fleet
from .network import NetworkError, NetworkModel, load_network
from .powerflow import PowerFlowError, solve
from .report import (
    ProfileRun,
    emit_report,
    format_cell,
    format_summary,
    read_profile,
    read_report,
    read_stats_csv,
    write_profile,
)
from .testdata import DATA_DIR
from .topology import extract_main_body

log = logging.getLogger("comvr")

OUTDIR_ENV = "COMVR_OUTDIR"
EXIT_RUNTIME, EXIT_USAGE, EXIT_DATA = 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings of one invocation, written next to the outputs."""

    network: str
    fleet: str | None
    mode: str
    steps: tuple[float, ...]
    v_min: float
    v_max: float
    weighting: str
    theta_small: float
    lesser_threshold: float
    max_iter: int
    seed: int
    outdir: str

    def __post_init__(self):
        if not self.v_min < 1.0 < self.v_max:
            raise UsageError("voltage limits must satisfy v-min < 1 < v-max")
        for name in ("theta_small", "lesser_threshold", "max_iter"):
            if getattr(self, name) <= 0:
                raise UsageError(f"{name.replace('_', '-')} must be positive")
        if any(s <= 0 for s in self.steps):
            raise UsageError("steps must be positive")


def _resolve_data(path: str) -> Path:
    """A path as given, else a bundled file of that name."""
    p = Path(path)
    if p.exists():
        return p
    for cand in (DATA_DIR / path, DATA_DIR / f"{path}.json"):
        if cand.exists():
            return cand
    raise DataError(f"no such file: {path}")


def _network(args) -> NetworkModel:
    return load_network(_resolve_data(args.network))


def _fleet(args):
    return load_fleet(_resolve_data(args.fleet)) if args.fleet else []


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _mode_list(text: str) -> tuple[str, ...]:
    modes = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise argparse.ArgumentTypeError(f"modes must be among {','.join(MODES)}")
    return modes


def _outdir(args) -> Path:
    return Path(args.outdir or os.environ.get(OUTDIR_ENV) or "comvr-out")


def _run_config(args) -> RunConfig:
    steps = getattr(args, "steps", None) or (getattr(args, "step", None),)
    return RunConfig(
        network=str(args.network),
        fleet=getattr(args, "fleet", None),
        mode=getattr(args, "mode", "") or ",".join(getattr(args, "modes", ()) or ()),
        steps=tuple(float(s) for s in steps if s is not None),
        v_min=args.v_min,
        v_max=args.v_max,
        weighting=args.weighting,
        theta_small=args.theta_small,
        lesser_threshold=args.lesser_threshold,
        max_iter=args.max_iter,
        seed=getattr(args, "seed", 0),
        outdir=str(_outdir(args)),
    )


def _regulation_config(args) -> RegulationConfig:
    _run_config(args)  # validation with CLI wording
    return RegulationConfig(
        v_min=args.v_min,
        v_max=args.v_max,
        theta_small=args.theta_small,
        lesser_threshold=args.lesser_threshold,
        max_iter=args.max_iter,
        weighting=args.weighting,
        approach_rule=args.approach_rule,
        increase_rule=args.increase_rule,
    )


def _loads(model: NetworkModel, loading: float) -> np.ndarray:
    if loading < 0:
        raise UsageError("loading must be non-negative")
    return model.load_vector() * loading


def _write_rows(rows, header, out):
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


# --- subcommands -------------------------------------------------------------


def cmd_pf(args) -> int:
    model = _network(args)
    fleet = _fleet(args)
    loads = _loads(model, args.loading)
    s, _, _ = injections(model, loads, fleet, {a.id: a.setpoint_kw for a in fleet})
    sol = solve(model, s, tol=args.tol)
    base = model.base_mva * 1e3
    rows = []
    for b, vm, va, si in zip(sol.bus_ids, sol.vm, sol.va, sol.s_injection):
        rows.append([b, f"{vm:.8f}", f"{math.degrees(va):.6f}", f"{si.real * base:.4f}", f"{si.imag * base:.4f}"])
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        _write_rows(rows, ["bus", "vm_pu", "va_deg", "p_inj_kw", "q_inj_kvar"], out)
    finally:
        if args.out:
            out.close()
    log.info("converged in %d iterations, min V %.4f p.u.", sol.iterations, sol.vm.min())
    return 0


def cmd_topology(args) -> int:
    model = _network(args)
    body = extract_main_body(model)
    rows = [[b, f"{body.coords[b]:.6f}", " ".join(str(x) for x in body.branches.get(b, ()))] for b in body.chain]
    _write_rows(rows, ["bus", "coord_ohm", "concentrated"], sys.stdout)
    log.info("main body: %d buses, %.4f ohm", len(body.chain), body.length)
    return 0


def cmd_com(args) -> int:
    model = _network(args)
    fleet = _fleet(args)
    loads = _loads(model, args.loading)
    s, load, gen = injections(model, loads, fleet, {a.id: a.setpoint_kw for a in fleet})
    sol = solve(model, s)
    body = extract_main_body(model)
    cur = bus_currents(model, body, sol, load, gen)
    centers = centers_from_currents(cur, args.weighting)
    out = asdict(centers)
    out["length_ohm"] = body.length
    print(json.dumps(out, indent=1, sort_keys=True))
    if args.diagram:
        print(mass_diagram(cur, centers))
    return 0


def _scenario(args, model, fleet) -> Scenario:
    if args.scenario:
        try:
            return Scenario.from_dict(json.loads(_resolve_data(args.scenario).read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad scenario file: {exc}") from exc
    loads = _loads(model, args.loading)
    return Scenario(0, 0, args.mode, float(loads.real.sum()), tuple(complex(x) for x in loads), {a.id: a.setpoint_kw for a in fleet}, {})


def cmd_regulate(args) -> int:
    model = _network(args)
    fleet = _fleet(args)
    if not fleet:
        raise UsageError("regulate needs --fleet")
    cfg = _regulation_config(args)
    sc = _scenario(args, model, fleet)
    actors = sc.fleet(fleet)
    body = extract_main_body(model)
    reg = Regulator(model, body, actors, sc.loads_kw, args.mode, args.step, cfg, record_profiles=True)
    out = reg.run()
    outdir = _outdir(args)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "steps.csv", "w", newline="") as fh:
        rows = [
            [
                s.iteration,
                s.pass_no,
                s.depth,
                repr(s.segment[0]),
                repr(s.segment[1]),
                repr(s.step_kw),
                repr(s.moved_kw),
                repr(s.rest_kw),
                repr(s.net_change_kw),
                int(s.accepted),
                repr(s.v_min),
                repr(s.v_max),
                repr(s.metric),
                json.dumps(s.changes, sort_keys=True),
            ]
            for s in out.steps
        ]
        header = ["iteration", "pass", "depth", "seg_lo", "seg_hi", "step_kw", "moved_kw", "rest_kw", "net_change_kw"]
        _write_rows(rows, header + ["accepted", "v_min", "v_max", "metric", "changes"], fh)
    summary = {
        "success": out.success,
        "reason": out.reason,
        "iterations": out.iterations,
        "vpp_change_kw": out.vpp_change_kw,
        "il_shed_kw": out.il_shed_kw,
        "initial_v_min": out.initial_v_min,
        "final_v_min": out.final_v_min,
        "final_v_max": out.final_v_max,
        "metric_trace": list(out.metric_trace),
        "setpoints": out.setpoints,
        "violation": out.vmode,
        "restrictions": out.restrictions,
        "passes": out.passes,
        "config": asdict(_run_config(args)),
    }
    (outdir / "outcome.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    if out.steps:
        s, _, _ = injections(model, sc.loads_kw, actors, {a.id: a.setpoint_kw for a in actors})
        vm0 = solve(model, s).vm
        write_profile(ProfileRun("regulate", tuple(model.bus_ids), tuple(vm0.tolist()), out, cfg.v_min), outdir)
    print(f"{'success' if out.success else 'failure'}: {out.iterations} iterations, "
          f"VPP change {out.vpp_change_kw:.1f} kW, IL shed {out.il_shed_kw:.1f} kW, "
          f"min V {out.initial_v_min:.4f} -> {out.final_v_min:.4f}" + (f" ({out.reason})" if out.reason else ""))
    return 0


def _profile_runs(model, fleet, scenarios, steps, cfg, per_cell: int):
    """Re-run the first successful re-dispatch runs of each step with profiles kept."""
    body = extract_main_body(model)
    runs = []
    for step in steps:
        kept = 0
        for sc in scenarios.get("redispatch", []):
            if kept >= per_cell:
                break
            actors = sc.fleet(fleet)
            out = Regulator(model, body, actors, sc.loads_kw, sc.mode, step, cfg, record_profiles=True).run()
            if not out.success or not out.steps:
                continue
            s, _, _ = injections(model, sc.loads_kw, actors, {a.id: a.setpoint_kw for a in actors})
            vm0 = solve(model, s).vm
            runs.append(ProfileRun(f"redispatch_{step:g}_{sc.index}", tuple(model.bus_ids), tuple(vm0.tolist()), out, cfg.v_min))
            kept += 1
    return runs


def cmd_campaign(args) -> int:
    model = _network(args)
    fleet = _fleet(args)
    if not fleet:
        raise UsageError("campaign needs --fleet")
    cfg = _regulation_config(args)
    if args.count < 1:
        raise UsageError("count must be >= 1")
    critical = args.critical_kw
    if critical is None:
        critical = find_critical_loading(model) * model.total_load.real
    scfg = ScenarioConfig(sigma=args.sigma, mean_offset=args.mean_offset)
    scenarios = {m: generate_scenarios(model, fleet, critical, args.count, args.seed, m, scfg) for m in args.modes}
    log.info("critical loading %.1f kW, %d scenarios x %d steps x %d modes", critical, args.count, len(args.steps), len(args.modes))
    outcomes, stats = run_campaign(model, fleet, scenarios, args.steps, cfg, args.workers)
    profiles = _profile_runs(model, fleet, scenarios, args.steps, cfg, args.plot_runs) if args.plot_runs else []
    outdir = _outdir(args)
    emit_report(outcomes, stats, outdir, profiles)
    meta = {"config": asdict(_run_config(args)), "critical_kw": critical, "scenario": asdict(scfg), "version": __version__}
    (outdir / "run.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    print(format_summary(stats), end="")
    return 0


def cmd_report(args) -> int:
    d = Path(args.directory)
    if not d.is_dir():
        raise DataError(f"no such directory: {d}")
    try:
        outcomes, stats = read_report(d)
        if (d / "cells.csv").exists():
            again = read_stats_csv(d / "cells.csv", d / "stats.csv")
            if again != stats:
                raise DataError("stats.csv and stats.json disagree")
        profiles = sorted(d.glob("profile_*.csv"))
        for p in profiles:
            read_profile(p)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable report in {d}: {exc}") from exc
    print(format_summary(stats))
    for c in stats.cells:
        print(format_cell(c))
    print(f"{len(outcomes)} outcome records, {len(profiles)} voltage profiles")
    return 0


# --- argument parsing ----------------------------------------------------------


def _add_network(p, fleet=False, loading=False):
    p.add_argument("--network", default="rhodes_r26.json", help="network JSON (path or bundled name)")
    if fleet:
        p.add_argument("--fleet", default="rhodes_vpp.json", help="VPP fleet JSON (path or bundled name)")
    if loading:
        p.add_argument("--loading", type=float, default=1.0, help="uniform scale on the peak loads")


def _add_controller(p):
    g = p.add_argument_group("controller")
    g.add_argument("--v-min", type=float, default=0.90)
    g.add_argument("--v-max", type=float, default=1.10)
    g.add_argument("--weighting", choices=WEIGHTINGS, default="magnitude")
    g.add_argument("--theta-small", type=float, default=0.10, help="step doubles below this share of the deficit")
    g.add_argument("--lesser-threshold", type=float, default=0.15, help="minimum lesser part, share of the main body")
    g.add_argument("--max-iter", type=int, default=100)
    g.add_argument("--approach-rule", choices=APPROACH_RULES, default=RegulationConfig.approach_rule)
    g.add_argument("--increase-rule", choices=INCREASE_RULES, default=RegulationConfig.increase_rule)
    g.add_argument("--outdir", default=None, help=f"output directory (default ${OUTDIR_ENV} or ./comvr-out)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="comvr", description="Center-of-mass voltage regulation by a VPP on radial feeders.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--config", help="JSON file whose keys override the matching flags")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("pf", help="solve the power flow, print per-bus CSV")
    _add_network(p, loading=True)
    p.add_argument("--fleet", default=None, help="include the VPP setpoints of this fleet")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", default=None, help="write the CSV here instead of stdout")
    p.set_defaults(func=cmd_pf)

    p = sub.add_parser("topology", help="main body chain and coordinates")
    _add_network(p)
    p.set_defaults(func=cmd_topology)

    p = sub.add_parser("com", help="centers of mass of a solved case")
    _add_network(p, loading=True)
    p.add_argument("--fleet", default=None)
    p.add_argument("--weighting", choices=WEIGHTINGS, default="magnitude")
    p.add_argument("--diagram", action="store_true", help="also print a text mass diagram")
    p.set_defaults(func=cmd_com)

    p = sub.add_parser("regulate", help="one regulation run with its step trace")
    _add_network(p, fleet=True, loading=True)
    p.add_argument("--scenario", default=None, help="scenario JSON (overrides --loading)")
    p.add_argument("--mode", choices=MODES, default="redispatch")
    p.add_argument("--step", type=float, default=300.0)
    _add_controller(p)
    p.set_defaults(func=cmd_regulate)

    p = sub.add_parser("campaign", help="Monte-Carlo campaign over modes and steps")
    _add_network(p, fleet=True)
    p.add_argument("--steps", type=_float_list, default=DEFAULT_STEPS)
    p.add_argument("--modes", type=_mode_list, default=MODES)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--critical-kw", type=float, default=None, help="skip the critical-loading search")
    p.add_argument("--sigma", type=float, default=ScenarioConfig.sigma)
    p.add_argument("--mean-offset", type=float, default=ScenarioConfig.mean_offset)
    p.add_argument("--plot-runs", type=int, default=1, help="profile plots per step (successful re-dispatch runs)")
    _add_controller(p)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("report", help="re-read a report directory and print its tables")
    p.add_argument("directory")
    p.set_defaults(func=cmd_report)
    return ap


def _apply_config(args) -> None:
    if not args.config:
        return
    try:
        data = json.loads(_resolve_data(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"config {args.config}: {exc}") from exc
    if not isinstance(data, dict):
        raise DataError("config file must hold a JSON object")
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest in ("command", "func", "config") or not hasattr(args, dest):
            raise UsageError(f"config key {key!r} is not an option of {args.command}")
        if dest == "steps" and isinstance(value, str):
            value = _float_list(value)
        elif dest == "modes" and isinstance(value, str):
            value = _mode_list(value)
        setattr(args, dest, tuple(value) if isinstance(value, list) else value)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        _apply_config(args)
        return args.func(args)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"comvr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, NetworkError, FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"comvr {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PowerFlowError as exc:
        print(f"comvr {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        log.debug("unhandled", exc_info=True)
        print(f"comvr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
