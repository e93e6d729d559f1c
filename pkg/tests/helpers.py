"""Random feeders and fleets for controller property tests."""

from __future__ import annotations

import numpy as np

from comvr.controller import DISPATCH, REDISPATCH, VppActor, injections
from comvr.network import Bus, NetworkModel, Segment
from comvr.powerflow import solve
from comvr.topology import extract_main_body


def random_feeder(rng, n):
    """A long radial feeder: a main line with a few laterals, loads everywhere."""
    buses = [Bus(0, "feeder-head")]
    segs = []
    for i in range(1, n):
        p = float(rng.uniform(50, 400))
        buses.append(Bus(i, "load", complex(p, 0.33 * p)))
        parent = i - 1 if rng.random() < 0.75 or i < 3 else int(rng.integers(1, i))
        segs.append(Segment(parent, i, complex(rng.uniform(0.3, 2.0), rng.uniform(0.2, 1.5))))
    return NetworkModel(tuple(buses), tuple(segs), 20.0, 10.0)


def random_fleet(rng, model, redispatch, with_storage=True):
    ids = [b.id for b in model.buses if b.kind != "feeder-head"]
    actors = []
    for k in range(int(rng.integers(2, 8))):
        bus = int(rng.choice(ids))
        r = rng.random()
        rated = float(rng.uniform(50, 600))
        if r < 0.35:
            sp = float(rng.uniform(0, rated)) if redispatch else 0.0
            actors.append(VppActor(f"D{k}", bus, "dispatchable-DG", rated, sp))
        elif r < 0.55:
            av = float(rng.uniform(0.3, 1.0))
            sp = float(rng.uniform(0, av * rated)) if redispatch else 0.0
            prot = bool(rng.random() < 0.4)
            actors.append(VppActor(f"S{k}", bus, "stochastic-DG", rated, sp, av, prot))
        elif r < 0.85 or not with_storage:
            actors.append(VppActor(f"I{k}", bus, "interruptible-load", min(rated, 200.0)))
        else:
            sp = float(rng.uniform(-rated, rated)) * 0.5 if redispatch else 0.0
            actors.append(VppActor(f"B{k}", bus, "storage", rated, sp, energy_kw=rated))
    return actors


def random_case(rng, overvoltage=False):
    """(model, body, fleet, loads, mode, step) with a violation more often than not."""
    n = int(rng.integers(5, 16))
    model = random_feeder(rng, n)
    mode = REDISPATCH if rng.random() < 0.6 else DISPATCH
    fleet = random_fleet(rng, model, mode == REDISPATCH)
    base = model.load_vector()
    if overvoltage:
        # light load with heavy generation at the far end
        loads = base * 0.05
        big = VppActor("G0", n - 1, "dispatchable-DG", 6000.0, float(rng.uniform(3000, 6000)))
        fleet = fleet + [big]
        mode = REDISPATCH
    else:
        # voltage drop is close to linear in the load; one solve gives the rough critical scale
        v1 = float(solve(model, -base).vm.min())
        crit = 0.1 / max(1.0 - v1, 1e-6)
        loads = base * crit * float(rng.uniform(0.9, 1.3))
    step = float(rng.choice([50.0, 100.0, 300.0]))
    return model, extract_main_body(model), fleet, loads, mode, step


def setpoint_history(fleet, outcome):
    """Setpoints after each accepted step, starting from the initial ones."""
    sp = {a.id: a.setpoint_kw for a in fleet}
    out = [dict(sp)]
    for s in outcome.steps:
        if s.accepted:
            for aid, d in s.changes.items():
                sp[aid] += d
            out.append(dict(sp))
    return out


def min_v(model, loads, fleet, setpoints):
    s, _, _ = injections(model, loads, fleet, setpoints)
    return float(solve(model, s).vm.min())


def safety_violations(fleet, outcome, cfg) -> list[str]:
    """Names of the controller safety properties a finished run breaks."""
    bad = []
    actors = {a.id: a for a in fleet}
    for sp in setpoint_history(fleet, outcome):
        for aid, v in sp.items():
            lo, hi = actors[aid].limits()
            if not lo - 1e-9 <= v <= hi + 1e-9:
                bad.append(f"limit {aid}")
    for s in outcome.steps:
        if not s.accepted:
            continue
        sign = 1.0 if outcome.vmode != "overvoltage" else -1.0
        # a plan that curtails anything is a transfer and must be net-zero
        reduced = any(sign * d < -1e-12 for d in s.changes.values())
        if reduced and abs(s.net_change_kw) > 1e-9:
            bad.append("transfer conservation")
    if outcome.vmode == "undervoltage":
        tr = outcome.vmin_trace
        if any(b < a for a, b in zip(tr, tr[1:])):
            bad.append("min voltage decreased")
    if outcome.success and not (outcome.final_v_min >= cfg.v_min and outcome.final_v_max <= cfg.v_max):
        bad.append("success outside limits")
    if outcome.iterations > cfg.max_iter:
        bad.append("iteration cap")
    # rest: demanded minus delivered over accepted steps
    demanded = delivered = 0.0
    for s in outcome.steps:
        if s.accepted:
            demanded += s.step_kw
            delivered += s.moved_kw
            if abs(s.rest_kw - (demanded - delivered)) > 1e-6:
                bad.append("rest bookkeeping")
    return bad
