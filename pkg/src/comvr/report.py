"""Report files: outcome records, statistic tables and voltage-profile plots.

Everything written here can be read back with ``read_report``; the CSV
tables and ``stats.json`` hold the same numbers.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .campaign import STAT_FIELDS, CampaignStats, CellStats, ScenarioOutcome, total_vpp_power  # noqa: E402
from .controller import RegulationOutcome  # noqa: E402

OUTCOMES_CSV = "outcomes.csv"
STATS_JSON = "stats.json"
CELLS_CSV = "cells.csv"
STATS_CSV = "stats.csv"
TABLES_TXT = "tables.txt"

CELL_COLUMNS = ("mode", "step_kw", "runs", "successes", "failures", "discarded", "success_rate", "zero_change_fraction")
STAT_COLUMNS = ("mode", "step_kw", "group", "field", "mean", "std", "max", "min")
LABELS = {
    "initial_load_kw": "Initial loading (kW)",
    "initial_vpp_kw": "VPP initial (kW)",
    "vpp_change_kw": "VPP change (kW)",
    "il_shed_kw": "IL shed (kW)",
    "iterations": "Iterations",
}


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def _parse_num(s: str):
    return None if s == "" else float(s)


def write_outcomes(outcomes, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ScenarioOutcome.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for o in outcomes:
            w.writerow(o.row())


def read_outcomes(path: Path) -> list[ScenarioOutcome]:
    with open(path, newline="") as fh:
        return [ScenarioOutcome.from_row(r) for r in csv.DictReader(fh)]


def write_stats_csv(stats: CampaignStats, cells_path: Path, stats_path: Path) -> None:
    with open(cells_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CELL_COLUMNS)
        for c in stats.cells:
            w.writerow(
                [c.mode, _num(c.step_kw), c.runs, c.successes, c.failures, c.discarded, _num(c.success_rate), _num(c.zero_change_fraction)]
            )
    with open(stats_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STAT_COLUMNS)
        for c in stats.cells:
            for group in ("success", "failure"):
                for name, d in getattr(c, group).items():
                    w.writerow([c.mode, _num(c.step_kw), group, name] + [_num(d[k]) for k in ("mean", "std", "max", "min")])


def read_stats_csv(cells_path: Path, stats_path: Path) -> CampaignStats:
    cells = []
    with open(cells_path, newline="") as fh:
        for r in csv.DictReader(fh):
            cells.append(
                CellStats(
                    mode=r["mode"],
                    step_kw=float(r["step_kw"]),
                    runs=int(r["runs"]),
                    successes=int(r["successes"]),
                    failures=int(r["failures"]),
                    discarded=int(r["discarded"]),
                    success_rate=float(r["success_rate"]),
                    zero_change_fraction=_parse_num(r["zero_change_fraction"]),
                )
            )
    by_key = {(c.mode, c.step_kw): c for c in cells}
    with open(stats_path, newline="") as fh:
        for r in csv.DictReader(fh):
            c = by_key[(r["mode"], float(r["step_kw"]))]
            getattr(c, r["group"])[r["field"]] = {k: _parse_num(r[k]) for k in ("mean", "std", "max", "min")}
    return CampaignStats(cells)


def _fmt(x, digits=2) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    return f"{x:.{digits}f}"


def format_cell(cell: CellStats) -> str:
    """One statistics table in the usual mean/std/max/min layout."""
    out = io.StringIO()
    title = f"{cell.mode} at {cell.step_kw:g} kW step: success rate {cell.success_rate:.2f} % ({cell.successes}/{cell.successes + cell.failures})"
    out.write(title + "\n")
    if cell.discarded:
        out.write(f"discarded (non-convergent): {cell.discarded}\n")
    for group in ("success", "failure"):
        stats = getattr(cell, group)
        out.write(f"\n  {'successful' if group == 'success' else 'failed'} runs\n")
        out.write(f"  {'':24s}{'Mean':>10s}{'Std':>10s}{'Max':>10s}{'Min':>10s}\n")
        for name in STAT_FIELDS:
            if name not in stats:
                continue
            d = stats[name]
            out.write(f"  {LABELS[name]:24s}" + "".join(f"{_fmt(d[k]):>10s}" for k in ("mean", "std", "max", "min")) + "\n")
    if cell.zero_change_fraction is not None:
        out.write(f"\n  zero VPP change among successes: {100 * cell.zero_change_fraction:.1f} %\n")
    tot = total_vpp_power(cell)
    if tot is not None:
        out.write(f"  mean total VPP power of successes: {tot:.1f} kW\n")
    return out.getvalue()


def format_summary(stats: CampaignStats) -> str:
    """Success rate per step, one row per mode."""
    modes = list(dict.fromkeys(c.mode for c in stats.cells))
    steps = sorted({c.step_kw for c in stats.cells})
    lines = ["Success rate (%) by step", f"{'':12s}" + "".join(f"{s:>10g}" for s in steps)]
    for m in modes:
        row = f"{m:12s}"
        for s in steps:
            try:
                row += f"{stats.cell(m, s).success_rate:>10.2f}"
            except KeyError:
                row += f"{'-':>10s}"
        lines.append(row)
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ProfileRun:
    """A regulation run kept for plotting: the start profile plus its trace."""

    label: str
    bus_ids: tuple[int, ...]
    initial_vm: tuple[float, ...]
    outcome: RegulationOutcome
    v_min: float = 0.90


def profile_rows(run: ProfileRun) -> list[dict]:
    """Initial profile and one row per accepted step, with the profile metric."""
    rows = [{"step": 0, "iteration": 0, "metric": run.outcome.metric_trace[0], "vm": list(run.initial_vm)}]
    k = 0
    for s in run.outcome.steps:
        if not s.accepted:
            continue
        if s.vm is None:
            raise ValueError("run was not recorded with voltage profiles")
        k += 1
        rows.append({"step": k, "iteration": s.iteration, "metric": s.metric, "vm": list(s.vm)})
    return rows


def write_profile(run: ProfileRun, outdir: Path) -> tuple[Path, Path]:
    """Voltage profile per accepted step as SVG plus the plotted numbers as CSV."""
    rows = profile_rows(run)
    csv_path = outdir / f"profile_{run.label}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "iteration", "metric"] + [str(b) for b in run.bus_ids])
        for r in rows:
            w.writerow([r["step"], r["iteration"], repr(float(r["metric"]))] + [repr(float(v)) for v in r["vm"]])

    fig, ax = plt.subplots(figsize=(9, 4.5))
    x = range(len(run.bus_ids))
    for r in rows:
        name = "initial" if r["step"] == 0 else f"step {r['step']}"
        ax.plot(x, r["vm"], lw=1.0, label=f"{name} (J={r['metric']:.4f})")
    ax.axhline(run.v_min, color="k", ls="--", lw=0.8)
    ticks = list(range(0, len(run.bus_ids), max(1, len(run.bus_ids) // 12)))
    ax.set_xticks(ticks, [str(run.bus_ids[i]) for i in ticks])
    ax.set_xlabel("bus")
    ax.set_ylabel("voltage (p.u.)")
    ax.set_title(f"Voltage profile per accepted step: {run.label}")
    ax.legend(fontsize=7, loc="lower left")
    fig.tight_layout()
    svg_path = outdir / f"profile_{run.label}.svg"
    plt.rcParams["svg.hashsalt"] = "comvr"  # stable ids, reproducible files
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return svg_path, csv_path


def read_profile(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        bus_ids = [int(b) for b in header[3:]]
        out = []
        for row in r:
            out.append(
                {"step": int(row[0]), "iteration": int(row[1]), "metric": float(row[2]), "vm": dict(zip(bus_ids, map(float, row[3:])))}
            )
    return out


def emit_report(outcomes, stats: CampaignStats, outdir, profiles=()) -> list[Path]:
    """Write the report files into ``outdir`` and return their paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    p = outdir / OUTCOMES_CSV
    write_outcomes(outcomes, p)
    written.append(p)
    p = outdir / STATS_JSON
    p.write_text(json.dumps(stats.to_dict(), indent=1, sort_keys=True) + "\n")
    written.append(p)
    write_stats_csv(stats, outdir / CELLS_CSV, outdir / STATS_CSV)
    written += [outdir / CELLS_CSV, outdir / STATS_CSV]
    text = format_summary(stats) + "".join("\n" + format_cell(c) for c in stats.cells)
    p = outdir / TABLES_TXT
    p.write_text(text)
    written.append(p)
    for run in profiles:
        written += list(write_profile(run, outdir))
    return written


def read_report(outdir) -> tuple[list[ScenarioOutcome], CampaignStats]:
    outdir = Path(outdir)
    outcomes = read_outcomes(outdir / OUTCOMES_CSV)
    stats = CampaignStats.from_dict(json.loads((outdir / STATS_JSON).read_text()))
    return outcomes, stats
