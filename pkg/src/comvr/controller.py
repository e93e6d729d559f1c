"""VPP voltage-regulation controller.

One regulation run repeats: compute the centers of mass on the active part
of the line, rank the VPP actors into a reduction list and an increase
list, move one step of power between them, keep the move only if the
voltages improve, and shrink the active part of the line when the main
body cannot be compensated any further.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .com import Centers, bus_currents, centers_from_currents
from .network import NetworkModel, build_admittance
from .powerflow import PowerFlowError, VoltageSolution, max_voltage, min_voltage, solve, voltage_profile_metric
from .topology import MainBody, coordinate_of

ACTOR_KINDS = ("dispatchable-DG", "stochastic-DG", "interruptible-load", "storage")
DG_KINDS = ("dispatchable-DG", "stochastic-DG")

UNDERVOLTAGE = "undervoltage"
OVERVOLTAGE = "overvoltage"
DISPATCH = "dispatch"
REDISPATCH = "redispatch"

EPS_KW = 1e-9
APPROACH_RULES = ("overlap", "contain")
# readings of the increase list: far side of g_L farthest first, far side
# nearest first, or the whole g_GL width nearest first
INCREASE_RULES = ("far-side", "far-side-nearest", "window")


@dataclass(frozen=True)
class VppActor:
    """A controllable unit of the VPP.

    ``setpoint_kw`` is the generator output for DG, the shed amount for an
    interruptible load and the discharge power for storage (negative while
    charging). In every case a larger setpoint means more net injection.
    """

    id: str
    bus: int
    kind: str
    rated_kw: float
    setpoint_kw: float = 0.0
    availability: float = 1.0
    curtailment_protected: bool = False
    energy_kw: float | None = None  # storage only: per-scenario power budget
    unit_type: str = ""

    def __post_init__(self):
        if self.kind not in ACTOR_KINDS:
            raise ValueError(f"actor {self.id}: unknown kind {self.kind!r}")
        if self.rated_kw <= 0:
            raise ValueError(f"actor {self.id}: rated power must be positive")
        if not 0.0 <= self.availability <= 1.0:
            raise ValueError(f"actor {self.id}: availability outside [0, 1]")
        lo, hi = self.limits()
        if not lo - EPS_KW <= self.setpoint_kw <= hi + EPS_KW:
            raise ValueError(f"actor {self.id}: setpoint {self.setpoint_kw} outside [{lo}, {hi}]")

    @property
    def is_dg(self) -> bool:
        return self.kind in DG_KINDS

    def limits(self) -> tuple[float, float]:
        if self.is_dg:
            return 0.0, self.availability * self.rated_kw
        if self.kind == "interruptible-load":
            return 0.0, self.rated_kw
        cap = self.rated_kw if self.energy_kw is None else min(self.rated_kw, self.energy_kw)
        return -cap, cap

    def up_headroom(self, setpoint: float) -> float:
        """Room to raise net injection (more DG, more shedding, more discharge)."""
        return max(0.0, self.limits()[1] - setpoint)

    def down_headroom(self, setpoint: float, vmode: str = UNDERVOLTAGE) -> float:
        """Room to lower net injection (curtail DG, restore shed load, charge)."""
        if self.is_dg:
            return 0.0 if self.curtailment_protected else max(0.0, setpoint)
        if self.kind == "interruptible-load":
            # restoring shed load is only a relief action against overvoltage
            return max(0.0, setpoint) if vmode == OVERVOLTAGE else 0.0
        return max(0.0, setpoint - self.limits()[0])


def load_fleet(path: str | Path) -> list[VppActor]:
    data = json.loads(Path(path).read_text())
    return fleet_from_dict(data)


def fleet_from_dict(data: dict) -> list[VppActor]:
    out = []
    for rec in data["actors"]:
        out.append(
            VppActor(
                id=str(rec["id"]),
                bus=int(rec["bus"]),
                kind=rec["kind"],
                rated_kw=float(rec["rated_kw"]),
                setpoint_kw=float(rec.get("setpoint_kw", 0.0)),
                availability=float(rec.get("availability", 1.0)),
                curtailment_protected=bool(rec.get("curtailment_protected", False)),
                energy_kw=rec.get("energy_kw"),
                unit_type=rec.get("unit_type", ""),
            )
        )
    ids = [a.id for a in out]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate actor ids in fleet")
    return out


def fleet_to_dict(actors) -> dict:
    recs = []
    for a in actors:
        rec = {
            "id": a.id,
            "bus": a.bus,
            "kind": a.kind,
            "unit_type": a.unit_type,
            "rated_kw": a.rated_kw,
            "setpoint_kw": a.setpoint_kw,
            "availability": a.availability,
            "curtailment_protected": a.curtailment_protected,
        }
        if a.energy_kw is not None:
            rec["energy_kw"] = a.energy_kw
        recs.append(rec)
    return {"actors": recs}


@dataclass(frozen=True)
class PriorityEntry:
    actor_id: str
    bus: int
    coord: float
    headroom_kw: float


@dataclass(frozen=True)
class PriorityList:
    direction: str  # "reduce" (L_S-) or "increase" (L_S+)
    entries: tuple[PriorityEntry, ...] = ()

    @property
    def headroom_kw(self) -> float:
        return math.fsum(e.headroom_kw for e in self.entries)

    @property
    def actor_ids(self) -> list[str]:
        return [e.actor_id for e in self.entries]

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class RegulationConfig:
    v_min: float = 0.90
    v_max: float = 1.10
    v_sp: float = 1.0
    theta_small: float = 0.10  # step doubles when improvement < this share of the deficit
    lesser_threshold: float = 0.15  # share of the main-body length
    max_iter: int = 100
    weighting: str = "magnitude"
    step_cap_kw: float | None = None  # default: total VPP rated power
    max_passes: int = 2
    approach_rule: str = "overlap"  # "overlap": widths intersect; "contain": each center inside the other's width
    increase_rule: str = "far-side"

    def __post_init__(self):
        if self.approach_rule not in APPROACH_RULES:
            raise ValueError(f"unknown approach rule {self.approach_rule!r}")
        if self.increase_rule not in INCREASE_RULES:
            raise ValueError(f"unknown increase rule {self.increase_rule!r}")
        if not self.v_min < 1.0 < self.v_max:
            raise ValueError("voltage limits must satisfy v_min < 1 < v_max")
        for name in ("theta_small", "lesser_threshold", "max_iter", "max_passes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _window_contains(ctr, x: float) -> bool:
    lo, hi = ctr.interval
    return lo <= x <= hi


def _strictly_between(x: float, a: float, b: float) -> bool:
    return min(a, b) < x < max(a, b)


def _roles(centers: Centers, vmode: str):
    """(target, source) centers: the mass to be served locally and the one to pull toward it."""
    if vmode == UNDERVOLTAGE:
        return centers.g_L, centers.g_G
    return centers.g_G, centers.g_L


def _order(entries, target: float, farthest_first: bool):
    def key(e: PriorityEntry):
        d = abs(e.coord - target)
        return (-d if farthest_first else d, -e.headroom_kw, e.bus, e.actor_id)

    return sorted(entries, key=key)


def populate_priority_lists(
    centers: Centers,
    actors,
    coords: dict[str, float],
    segment: tuple[float, float],
    vmode: str = UNDERVOLTAGE,
    setpoints: dict[str, float] | None = None,
    dispatch: bool = False,
    increase_rule: str = "far-side",
) -> tuple[PriorityList, PriorityList]:
    """Build (L_S-, L_S+) for the active part of the line.

    ``coords`` maps actor id to its coupling-bus coordinate. In undervoltage
    the reduction list curtails generation inside the g_G width, farthest
    from g_L first; the increase list raises injection inside the g_GL width
    on the far side of g_L from g_G, farthest first. Actors strictly between
    g_G and g_L are appended last, nearest to g_L first. Actors in the
    overlap of the g_G and g_L widths, and everything else, are left out.
    ``increase_rule`` picks another reading of the increase list, see
    INCREASE_RULES. Overvoltage swaps the roles of g_G and g_L and the list directions.
    """
    if increase_rule not in INCREASE_RULES:
        raise ValueError(f"unknown increase rule {increase_rule!r}")
    setpoints = setpoints or {}
    target, source = _roles(centers, vmode)
    lo, hi = segment
    reduce_main, reduce_low, increase_main, increase_low = [], [], [], []
    if target is None:
        return PriorityList("reduce"), PriorityList("increase")

    tg = target.g
    # without a source mass the upstream grid at the segment start plays its role
    sg = source.g if source is not None else lo
    side = 1.0 if tg >= sg else -1.0
    net = centers.g_GL if centers.g_GL is not None else target

    def in_overlap(x):
        return source is not None and _window_contains(source, x) and _window_contains(target, x)

    for a in actors:
        x = coords[a.id]
        if not lo <= x <= hi or in_overlap(x):
            continue
        sp = setpoints.get(a.id, a.setpoint_kw)
        between = source is not None and _strictly_between(x, sg, tg)
        if vmode == UNDERVOLTAGE:
            relief, counter = a.up_headroom(sp), a.down_headroom(sp, vmode)
        else:
            relief, counter = a.down_headroom(sp, vmode), a.up_headroom(sp)

        if counter > EPS_KW and not dispatch and source is not None:
            e = PriorityEntry(a.id, a.bus, x, counter)
            if between:
                reduce_low.append(e)
            elif _window_contains(source, x):
                reduce_main.append(e)
        if relief > EPS_KW:
            e = PriorityEntry(a.id, a.bus, x, relief)
            if between:
                increase_low.append(e)
            elif _window_contains(net, x) and (increase_rule == "window" or side * (x - tg) >= 0):
                increase_main.append(e)

    reduce = _order(reduce_main, tg, True) + _order(reduce_low, tg, False)
    increase = _order(increase_main, tg, increase_rule == "far-side") + _order(increase_low, tg, False)
    return PriorityList("reduce", tuple(reduce)), PriorityList("increase", tuple(increase))


@dataclass(frozen=True)
class DispatchPlan:
    changes: dict[str, float]  # actor id -> setpoint delta (kW), signed toward net injection
    moved_kw: float  # power delivered against the demand
    rest_kw: float  # shortfall carried to the next iteration

    @property
    def empty(self) -> bool:
        return self.moved_kw <= EPS_KW

    @property
    def net_change_kw(self) -> float:
        return math.fsum(self.changes.values())


def _take(plist: PriorityList, amount: float) -> dict[str, float]:
    out = {}
    left = amount
    for e in plist.entries:
        if left <= EPS_KW:
            break
        d = min(left, e.headroom_kw)
        out[e.actor_id] = out.get(e.actor_id, 0.0) + d
        left -= d
    return out


def apply_step(reduce: PriorityList, increase: PriorityList, step_kw: float, rest_kw: float, vmode: str = UNDERVOLTAGE):
    """Spread ``step + rest`` over the list heads.

    With a non-empty reduction list the same power is taken from its heads
    and given to the heads of the increase list. Otherwise (dispatch, or
    nothing left to curtail) only the increase list moves. Whatever cannot
    be placed comes back as the new rest.
    """
    demand = step_kw + rest_kw
    if demand <= 0:
        raise ValueError("step + rest must be positive")
    amount = min(demand, increase.headroom_kw)
    if len(reduce):
        amount = min(amount, reduce.headroom_kw)
    if amount <= EPS_KW:
        return DispatchPlan({}, 0.0, demand)
    sign = 1.0 if vmode == UNDERVOLTAGE else -1.0
    changes: dict[str, float] = {}
    for aid, d in _take(increase, amount).items():
        changes[aid] = changes.get(aid, 0.0) + sign * d
    if len(reduce):
        for aid, d in _take(reduce, amount).items():
            changes[aid] = changes.get(aid, 0.0) - sign * d
    return DispatchPlan(changes, amount, demand - amount)


def adapt_step(step_kw: float, improvement: float, deficit: float, theta_small: float, cap_kw: float) -> float:
    """Double the step when the last accepted move helped too little."""
    if improvement < theta_small * deficit:
        return min(2.0 * step_kw, cap_kw)
    return step_kw


def restrict_lesser_part(segment: tuple[float, float], centers: Centers, vmode: str = UNDERVOLTAGE):
    """Narrow the active part of the line around the uncompensated mass.

    With g_G beyond g_L keep [g_L - dg_L, end]; with g_G before g_L keep
    [start, g_G + dg_G]. Overvoltage mirrors the two roles. With no source
    mass at all, keep the part from the start of the target mass onward.
    """
    lo, hi = segment
    target, source = _roles(centers, vmode)
    if target is None:
        return segment
    if source is None or source.g > target.g:
        new = (max(lo, target.g - target.delta_g), hi)
    else:
        new = (lo, min(hi, source.g + source.delta_g))
    return new


@dataclass
class RegulationState:
    segment: tuple[float, float]
    step_kw: float
    rest_kw: float = 0.0
    iterations: int = 0
    depth: int = 0
    pass_no: int = 1
    demanded_kw: float = 0.0
    delivered_kw: float = 0.0
    moved_in_segment: bool = False  # geometric triggers apply only after a move on this part
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class StepRecord:
    iteration: int
    pass_no: int
    depth: int
    segment: tuple[float, float]
    step_kw: float
    moved_kw: float
    rest_kw: float
    net_change_kw: float
    changes: dict[str, float]
    accepted: bool
    v_min: float
    v_max: float
    metric: float
    g_G: float | None
    g_L: float | None
    g_GL: float | None
    vm: tuple[float, ...] | None = None


@dataclass(frozen=True)
class RegulationOutcome:
    success: bool
    iterations: int
    vpp_change_kw: float
    il_shed_kw: float
    initial_v_min: float
    final_v_min: float
    final_v_max: float
    metric_trace: tuple[float, ...]
    vmin_trace: tuple[float, ...]
    setpoints: dict[str, float]
    steps: tuple[StepRecord, ...]
    reason: str = ""
    vmode: str = ""  # violation found at entry, empty when there was none
    restrictions: int = 0
    passes: int = 1


def injections(model: NetworkModel, loads_kw, actors, setpoints: dict[str, float]):
    """Net per-bus injections (kW/kvar, bus order) plus the load and generation parts.

    Interruptible-load shedding is an active-power reduction of the bus load.
    DG runs at unity power factor.
    """
    idx = model.index
    load = np.array(loads_kw, dtype=complex, copy=True)
    gen = np.zeros(len(model.buses), dtype=complex)
    for a in actors:
        sp = setpoints[a.id]
        i = idx[a.bus]
        if a.kind == "interruptible-load":
            load[i] -= sp
        elif a.kind == "storage" and sp < 0:
            load[i] -= sp
        else:
            gen[i] += sp
    return gen - load, load, gen


def vpp_net_kw(actors, setpoints: dict[str, float]) -> float:
    return math.fsum(setpoints[a.id] for a in actors)


def il_shed_kw(actors, setpoints: dict[str, float]) -> float:
    return math.fsum(setpoints[a.id] for a in actors if a.kind == "interruptible-load")


def _violation(sol: VoltageSolution, cfg: RegulationConfig) -> str | None:
    vmin = float(sol.vm.min())
    vmax = float(sol.vm.max())
    if vmin < cfg.v_min:
        return UNDERVOLTAGE
    if vmax > cfg.v_max:
        return OVERVOLTAGE
    return None


def evaluate_step(before: VoltageSolution, after: VoltageSolution | None, vmode: str = UNDERVOLTAGE, v_sp: float = 1.0) -> bool:
    """Accept a move that converges and improves the extreme voltage or the profile.

    A profile improvement alone is accepted only when the extreme voltage
    does not get worse.
    """
    if after is None:
        return False
    m0, m1 = voltage_profile_metric(before, v_sp), voltage_profile_metric(after, v_sp)
    if vmode == UNDERVOLTAGE:
        d = min_voltage(after)[1] - min_voltage(before)[1]
    else:
        d = max_voltage(before)[1] - max_voltage(after)[1]
    return d > 0 or (m1 < m0 and d >= 0)


class _Exhausted(Exception):
    pass


class Regulator:
    """Runs the loop for one operating point. Inputs are not mutated."""

    def __init__(
        self,
        model: NetworkModel,
        body: MainBody,
        actors,
        loads_kw,
        mode: str = REDISPATCH,
        step_kw: float = 300.0,
        config: RegulationConfig | None = None,
        Y=None,
        record_profiles: bool = False,
    ):
        if mode not in (DISPATCH, REDISPATCH):
            raise ValueError(f"unknown mode {mode!r}")
        if step_kw <= 0:
            raise ValueError("step must be positive")
        self.model = model
        self.body = body
        self.actors = list(actors)
        self.loads_kw = np.asarray(loads_kw, dtype=complex)
        self.mode = mode
        self.cfg = config or RegulationConfig()
        self.Y = build_admittance(model) if Y is None else Y
        self.record_profiles = record_profiles
        self.coords = {a.id: coordinate_of(body, a.bus) for a in self.actors}
        self.step0 = float(step_kw)
        rated = math.fsum(a.rated_kw for a in self.actors)
        self.step_cap = self.cfg.step_cap_kw or max(rated, self.step0)
        self.full_segment = (0.0, body.length)
        self.min_length = self.cfg.lesser_threshold * body.length

    def _solve(self, setpoints):
        s, load, gen = injections(self.model, self.loads_kw, self.actors, setpoints)
        return solve(self.model, s, Y=self.Y), load, gen

    def _try_solve(self, setpoints):
        try:
            return self._solve(setpoints)
        except PowerFlowError:
            return None, None, None

    def _buses_in(self, seg):
        lo, hi = seg
        return frozenset(b for b in self.body.chain[1:] if lo <= self.body.coords[b] <= hi)

    def _restrict(self, state: RegulationState, centers: Centers, vmode: str):
        new = restrict_lesser_part(state.segment, centers, vmode)
        shrunk = self._buses_in(new) != self._buses_in(state.segment)
        state.moved_in_segment = False
        if shrunk and new[1] - new[0] >= self.min_length:
            state.segment = new
            state.depth += 1
            return
        if state.pass_no >= self.cfg.max_passes:
            raise _Exhausted("lesser part below threshold on the final pass")
        state.pass_no += 1
        state.segment = self.full_segment
        state.depth = 0

    def run(self) -> RegulationOutcome:
        cfg = self.cfg
        setpoints = {a.id: a.setpoint_kw for a in self.actors}
        initial = dict(setpoints)
        sol, load, gen = self._solve(setpoints)  # a divergent base case is the caller's problem
        v0 = min_voltage(sol)[1]
        metrics = [voltage_profile_metric(sol, cfg.v_sp)]
        vmins = [v0]
        vmode = _violation(sol, cfg)
        initial_vmode = vmode or ""
        state = RegulationState(self.full_segment, self.step0)
        steps: list[StepRecord] = []
        restrictions = 0
        reason = ""
        # every restriction strictly shrinks the set of covered buses, so this bounds the loop
        guard = (len(self.body.chain) + 1) * cfg.max_passes + cfg.max_iter + 1

        while vmode is not None:
            guard -= 1
            if state.iterations >= cfg.max_iter or guard < 0:
                reason = "iteration cap"
                break
            cur = bus_currents(self.model, self.body, sol, load, gen)
            centers = centers_from_currents(cur, cfg.weighting, state.segment)
            try:
                if state.moved_in_segment and self._compensated(centers, vmode):
                    restrictions += 1
                    self._restrict(state, centers, vmode)
                    continue
                reduce, increase = populate_priority_lists(
                    centers,
                    self.actors,
                    self.coords,
                    state.segment,
                    vmode,
                    setpoints,
                    dispatch=self.mode == DISPATCH,
                    increase_rule=cfg.increase_rule,
                )
                plan = apply_step(reduce, increase, state.step_kw, state.rest_kw, vmode)
                if plan.empty:
                    restrictions += 1
                    self._restrict(state, centers, vmode)
                    continue

                state.iterations += 1
                trial = dict(setpoints)
                for aid, d in plan.changes.items():
                    trial[aid] += d
                new_sol, new_load, new_gen = self._try_solve(trial)
                accepted = evaluate_step(sol, new_sol, vmode, cfg.v_sp)
                rec_sol = new_sol if accepted else sol
                steps.append(
                    StepRecord(
                        state.iterations,
                        state.pass_no,
                        state.depth,
                        state.segment,
                        state.step_kw,
                        plan.moved_kw,
                        plan.rest_kw if accepted else state.rest_kw,
                        plan.net_change_kw,
                        dict(plan.changes),
                        accepted,
                        float(rec_sol.vm.min()),
                        float(rec_sol.vm.max()),
                        voltage_profile_metric(rec_sol, cfg.v_sp),
                        centers.g_G.g if centers.g_G else None,
                        centers.g_L.g if centers.g_L else None,
                        centers.g_GL.g if centers.g_GL else None,
                        tuple(rec_sol.vm.tolist()) if self.record_profiles else None,
                    )
                )
                if not accepted:
                    restrictions += 1
                    self._restrict(state, centers, vmode)
                    continue

                if vmode == UNDERVOLTAGE:
                    improvement = min_voltage(new_sol)[1] - min_voltage(sol)[1]
                    deficit = cfg.v_min - min_voltage(sol)[1]
                else:
                    improvement = max_voltage(sol)[1] - max_voltage(new_sol)[1]
                    deficit = max_voltage(sol)[1] - cfg.v_max
                setpoints = trial
                state.moved_in_segment = True
                sol, load, gen = new_sol, new_load, new_gen
                state.demanded_kw += state.step_kw
                state.delivered_kw += plan.moved_kw
                state.rest_kw = plan.rest_kw
                state.step_kw = adapt_step(state.step_kw, improvement, deficit, cfg.theta_small, self.step_cap)
                metrics.append(voltage_profile_metric(sol, cfg.v_sp))
                vmins.append(min_voltage(sol)[1])
                vmode = _violation(sol, cfg)
            except _Exhausted as exc:
                reason = str(exc)
                break

        success = _violation(sol, cfg) is None
        return RegulationOutcome(
            success=success,
            iterations=state.iterations,
            vpp_change_kw=vpp_net_kw(self.actors, setpoints) - vpp_net_kw(self.actors, initial),
            il_shed_kw=il_shed_kw(self.actors, setpoints) - il_shed_kw(self.actors, initial),
            initial_v_min=v0,
            final_v_min=float(sol.vm.min()),
            final_v_max=float(sol.vm.max()),
            metric_trace=tuple(metrics),
            vmin_trace=tuple(vmins),
            setpoints=setpoints,
            steps=tuple(steps),
            reason="" if success else reason,
            vmode=initial_vmode,
            restrictions=restrictions,
            passes=state.pass_no,
        )

    def _compensated(self, centers: Centers, vmode: str) -> bool:
        """The main body cannot be compensated further on the current part."""
        target, source = _roles(centers, vmode)
        if target is None or source is None:
            return False
        if self.cfg.approach_rule == "overlap":
            if _intervals_overlap(source.interval, target.interval):
                return True
        elif _window_contains(source, target.g) and _window_contains(target, source.g):
            return True
        if centers.g_GL is not None and _strictly_between(centers.g_GL.g, source.g, target.g):
            return True
        return False


def _intervals_overlap(a, b) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def regulate(
    model: NetworkModel,
    body: MainBody,
    actors,
    loads_kw,
    mode: str = REDISPATCH,
    step_kw: float = 300.0,
    config: RegulationConfig | None = None,
    Y=None,
    record_profiles: bool = False,
) -> RegulationOutcome:
    return Regulator(model, body, actors, loads_kw, mode, step_kw, config, Y, record_profiles).run()


def with_setpoints(actors, setpoints: dict[str, float]):
    return [replace(a, setpoint_kw=setpoints.get(a.id, a.setpoint_kw)) for a in actors]
