"""Monte-Carlo evaluation: critical loading, scenario draws, campaign runs, statistics."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .controller import (
    DISPATCH,
    REDISPATCH,
    RegulationConfig,
    Regulator,
    VppActor,
    injections,
)
from .network import NetworkModel, build_admittance
from .powerflow import PowerFlowError, solve
from .topology import extract_main_body

log = logging.getLogger(__name__)

MODES = (DISPATCH, REDISPATCH)
DEFAULT_STEPS = (300.0, 400.0, 500.0)
STAT_FIELDS = ("initial_load_kw", "initial_vpp_kw", "vpp_change_kw", "il_shed_kw", "iterations")


def _min_v(model, Y, loads_kw, extra_kw=None):
    s = -np.asarray(loads_kw, dtype=complex)
    if extra_kw is not None:
        s = s + extra_kw
    return float(solve(model, s, Y=Y).vm.min())


def find_critical_loading(
    model: NetworkModel,
    base_profile=None,
    v_limit: float = 0.90,
    tol: float = 0.0005,
    extra_injection_kw=None,
    Y=None,
) -> float:
    """Uniform load scale at which the lowest bus voltage reaches ``v_limit``.

    ``base_profile`` defaults to the peak loads of the model. The bracket is
    widened until it straddles the limit; bisection then runs well inside
    ``tol`` so the returned scale lands on the limit.
    """
    base = model.load_vector() if base_profile is None else np.asarray(base_profile, dtype=complex)
    Y = build_admittance(model) if Y is None else Y
    lo, hi = 0.0, 1.0
    for _ in range(60):
        try:
            if _min_v(model, Y, hi * base, extra_injection_kw) < v_limit:
                break
        except PowerFlowError:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ValueError("load profile never drives the voltage down to the limit")

    last_ok = lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        try:
            v = _min_v(model, Y, mid * base, extra_injection_kw)
        except PowerFlowError:
            hi = mid
            continue
        last_ok = mid
        if abs(v - v_limit) < tol * 1e-3:
            return mid
        if v > v_limit:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(hi, 1.0):
            break
    try:
        v = _min_v(model, Y, last_ok * base, extra_injection_kw)
    except PowerFlowError:
        v = math.nan
    if not abs(v - v_limit) <= tol:
        log.warning("critical loading search stopped at scale %.6f (min V %.4f)", last_ok, v)
    return last_ok


@dataclass(frozen=True)
class ScenarioConfig:
    sigma: float = 0.025  # std of the total load, share of the critical load
    mean_offset: float = 0.04  # mean of the total load above critical, share of critical
    multiplier_range: tuple[float, float] = (0.9, 1.1)
    vpp_range_kw: tuple[float, float] = (400.0, 1700.0)
    availability_range: tuple[float, float] = (0.5, 1.0)
    net_of_vpp: bool = True  # re-dispatch: raise the load by the scheduled VPP output


@dataclass(frozen=True)
class Scenario:
    index: int
    seed: int
    mode: str
    total_load_kw: float
    loads_kw: tuple[complex, ...]  # bus order
    setpoints: dict[str, float]
    availability: dict[str, float]
    multipliers: tuple[float, ...] = ()  # per-bus draws before renormalisation

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "seed": self.seed,
            "mode": self.mode,
            "total_load_kw": self.total_load_kw,
            "loads_kw": [[z.real, z.imag] for z in self.loads_kw],
            "setpoints": dict(self.setpoints),
            "availability": dict(self.availability),
            "multipliers": list(self.multipliers),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            int(d.get("index", 0)),
            int(d.get("seed", 0)),
            d.get("mode", REDISPATCH),
            float(d["total_load_kw"]),
            tuple(complex(p, q) for p, q in d["loads_kw"]),
            {k: float(v) for k, v in d.get("setpoints", {}).items()},
            {k: float(v) for k, v in d.get("availability", {}).items()},
            tuple(float(m) for m in d.get("multipliers", ())),
        )

    def fleet(self, actors) -> list[VppActor]:
        out = []
        for a in actors:
            avail = self.availability.get(a.id, a.availability)
            out.append(
                VppActor(
                    a.id,
                    a.bus,
                    a.kind,
                    a.rated_kw,
                    self.setpoints.get(a.id, 0.0),
                    avail,
                    a.curtailment_protected,
                    a.energy_kw,
                    a.unit_type,
                )
            )
        return out


def generate_scenarios(
    model: NetworkModel,
    actors,
    critical_kw: float,
    count: int,
    seed: int,
    mode: str,
    config: ScenarioConfig | None = None,
) -> list[Scenario]:
    """Draw ``count`` operating points around the critical loading.

    Scenario ``i`` depends only on ``(seed, i)``; the load draws do not
    depend on the mode, so dispatch and re-dispatch see the same feeder.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    cfg = config or ScenarioConfig()
    base = model.load_vector()
    loaded = np.abs(base) > 0
    out = []
    for i in range(count):
        rng_load = np.random.default_rng([seed, i, 0])
        rng_vpp = np.random.default_rng([seed, i, 1])
        total = critical_kw * (1.0 + cfg.mean_offset + cfg.sigma * rng_load.standard_normal())
        total = max(total, 0.0)
        mult = np.zeros(len(base))
        mult[loaded] = rng_load.uniform(*cfg.multiplier_range, size=int(loaded.sum()))
        weighted = base * mult

        availability = {}
        for a in actors:
            if a.kind == "stochastic-DG":
                availability[a.id] = float(rng_vpp.uniform(*cfg.availability_range))
            else:
                availability[a.id] = a.availability
        setpoints = {a.id: 0.0 for a in actors}
        if mode == REDISPATCH:
            dg = [a for a in actors if a.is_dg]
            for a in dg:
                setpoints[a.id] = float(rng_vpp.uniform(0.0, availability[a.id] * a.rated_kw))
            sched = sum(setpoints[a.id] for a in dg)
            lo, hi = cfg.vpp_range_kw
            if sched > hi:
                for a in dg:
                    setpoints[a.id] *= hi / sched
            elif 0 < sched < lo:
                for a in dg:
                    setpoints[a.id] = min(setpoints[a.id] * lo / sched, availability[a.id] * a.rated_kw)
            if cfg.net_of_vpp:
                total += sum(setpoints[a.id] for a in dg)

        loads = weighted * (total / weighted.real.sum()) if weighted.real.sum() > 0 else weighted
        out.append(
            Scenario(
                i,
                seed,
                mode,
                float(loads.real.sum()),
                tuple(complex(x) for x in loads),
                setpoints,
                availability,
                tuple(float(x) for x in mult),
            )
        )
    return out


@dataclass(frozen=True)
class ScenarioOutcome:
    mode: str
    step_kw: float
    index: int
    seed: int
    initial_load_kw: float
    initial_vpp_kw: float
    vpp_change_kw: float
    il_shed_kw: float
    iterations: int
    success: bool
    discarded: bool
    initial_v_min: float
    final_v_min: float
    reason: str = ""

    CSV_FIELDS = (
        "mode",
        "step_kw",
        "index",
        "seed",
        "initial_load_kw",
        "initial_vpp_kw",
        "vpp_change_kw",
        "il_shed_kw",
        "iterations",
        "success",
        "discarded",
        "initial_v_min",
        "final_v_min",
        "reason",
    )

    def row(self) -> dict:
        d = asdict(self)
        for k in ("step_kw", "initial_load_kw", "initial_vpp_kw", "vpp_change_kw", "il_shed_kw", "initial_v_min", "final_v_min"):
            d[k] = repr(float(d[k]))
        d["success"] = int(self.success)
        d["discarded"] = int(self.discarded)
        return d

    @classmethod
    def from_row(cls, row: dict) -> "ScenarioOutcome":
        return cls(
            row["mode"],
            float(row["step_kw"]),
            int(row["index"]),
            int(row["seed"]),
            float(row["initial_load_kw"]),
            float(row["initial_vpp_kw"]),
            float(row["vpp_change_kw"]),
            float(row["il_shed_kw"]),
            int(row["iterations"]),
            bool(int(row["success"])),
            bool(int(row["discarded"])),
            float(row["initial_v_min"]),
            float(row["final_v_min"]),
            row.get("reason", ""),
        )


def run_one(model, body, actors, scenario: Scenario, step_kw: float, config: RegulationConfig | None = None, Y=None):
    fleet = scenario.fleet(actors)
    vpp0 = sum(a.setpoint_kw for a in fleet)
    common = dict(
        mode=scenario.mode,
        step_kw=float(step_kw),
        index=scenario.index,
        seed=scenario.seed,
        initial_load_kw=scenario.total_load_kw,
        initial_vpp_kw=vpp0,
    )
    try:
        out = Regulator(model, body, fleet, scenario.loads_kw, scenario.mode, step_kw, config, Y).run()
    except PowerFlowError as exc:
        return ScenarioOutcome(
            **common,
            vpp_change_kw=0.0,
            il_shed_kw=0.0,
            iterations=0,
            success=False,
            discarded=True,
            initial_v_min=math.nan,
            final_v_min=math.nan,
            reason=f"power flow: {exc}",
        )
    return ScenarioOutcome(
        **common,
        vpp_change_kw=out.vpp_change_kw,
        il_shed_kw=out.il_shed_kw,
        iterations=out.iterations,
        success=out.success,
        discarded=False,
        initial_v_min=out.initial_v_min,
        final_v_min=out.final_v_min,
        reason=out.reason,
    )


# worker-process globals, set once per process by the pool initializer
_W: dict = {}


def _init_worker(model, actors, config):
    _W["model"] = model
    _W["actors"] = actors
    _W["config"] = config
    _W["body"] = extract_main_body(model)
    _W["Y"] = build_admittance(model)


def _work(job):
    scenario, step = job
    return run_one(_W["model"], _W["body"], _W["actors"], scenario, step, _W["config"], _W["Y"])


def run_campaign(
    model: NetworkModel,
    actors,
    scenarios: dict[str, list[Scenario]] | list[Scenario],
    steps=DEFAULT_STEPS,
    config: RegulationConfig | None = None,
    workers: int = 1,
) -> tuple[list[ScenarioOutcome], "CampaignStats"]:
    """Regulate every (mode, step, scenario) and aggregate the results.

    Results are returned in (mode, step, scenario index) order whatever the
    worker count.
    """
    if isinstance(scenarios, dict):
        by_mode = scenarios
    else:
        by_mode = {}
        for s in scenarios:
            by_mode.setdefault(s.mode, []).append(s)
    jobs = [(s, float(step)) for mode in MODES if mode in by_mode for step in steps for s in by_mode[mode]]
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(model, list(actors), config)) as pool:
            outcomes = list(pool.map(_work, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    else:
        _init_worker(model, list(actors), config)
        outcomes = [_work(j) for j in jobs]
    return outcomes, aggregate(outcomes)


def _describe(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"mean": None, "std": None, "max": None, "min": None}
    return {
        "mean": float(np.mean(v)),
        "std": float(np.std(v, ddof=1)) if v.size > 1 else 0.0,
        "max": float(np.max(v)),
        "min": float(np.min(v)),
    }


@dataclass
class CellStats:
    mode: str
    step_kw: float
    runs: int
    successes: int
    failures: int
    discarded: int
    success_rate: float
    zero_change_fraction: float | None
    success: dict = field(default_factory=dict)
    failure: dict = field(default_factory=dict)


@dataclass
class CampaignStats:
    cells: list[CellStats]

    def cell(self, mode: str, step_kw: float) -> CellStats:
        for c in self.cells:
            if c.mode == mode and c.step_kw == float(step_kw):
                return c
        raise KeyError((mode, step_kw))

    def to_dict(self) -> dict:
        return {"cells": [asdict(c) for c in self.cells]}

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignStats":
        return cls([CellStats(**c) for c in data["cells"]])


def aggregate(outcomes) -> CampaignStats:
    keys = []
    groups: dict = {}
    for o in outcomes:
        k = (o.mode, o.step_kw)
        if k not in groups:
            groups[k] = []
            keys.append(k)
        groups[k].append(o)
    cells = []
    for mode, step in keys:
        recs = groups[(mode, step)]
        kept = [o for o in recs if not o.discarded]
        ok = [o for o in kept if o.success]
        bad = [o for o in kept if not o.success]
        fields = [f for f in STAT_FIELDS if not (mode == DISPATCH and f == "initial_vpp_kw")]
        zero = [o for o in ok if abs(o.vpp_change_kw) < 1e-6]
        cells.append(
            CellStats(
                mode=mode,
                step_kw=step,
                runs=len(recs),
                successes=len(ok),
                failures=len(bad),
                discarded=len(recs) - len(kept),
                success_rate=100.0 * len(ok) / len(kept) if kept else 0.0,
                zero_change_fraction=len(zero) / len(ok) if ok else None,
                success={f: _describe([getattr(o, f) for o in ok]) for f in fields},
                failure={f: _describe([getattr(o, f) for o in bad]) for f in fields},
            )
        )
    return CampaignStats(cells)


def total_vpp_power(cell: CellStats) -> float | None:
    """Mean total VPP power of the successes: initial schedule plus change."""
    s = cell.success
    if not s or s["vpp_change_kw"]["mean"] is None:
        return None
    init = s.get("initial_vpp_kw", {}).get("mean") or 0.0
    return init + s["vpp_change_kw"]["mean"]


def scenario_injections(model, actors, scenario: Scenario):
    fleet = scenario.fleet(actors)
    return injections(model, scenario.loads_kw, fleet, {a.id: a.setpoint_kw for a in fleet})[0]
