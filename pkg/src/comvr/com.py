"""Bus current estimation and centers of mass along the main body.

Bus currents are point masses placed at their accumulated-impedance
coordinate. Three centers are tracked: generation (injected currents),
load (absorbed currents) and the net per-bus current.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import NetworkModel
from .powerflow import VoltageSolution
from .topology import MainBody

NOISE_FLOOR = 1e-6  # p.u.; smaller currents are numerical noise on poles/junctions

WEIGHTINGS = ("magnitude", "real-part")


class NoCenter(ValueError):
    """The weight set is empty or sums to zero."""


@dataclass(frozen=True)
class CenterOfMass:
    g: float
    delta_g: float
    total_weight: float
    kind: str = ""

    @property
    def interval(self) -> tuple[float, float]:
        return self.g - self.delta_g, self.g + self.delta_g


@dataclass(frozen=True)
class Centers:
    g_G: CenterOfMass | None
    g_L: CenterOfMass | None
    g_GL: CenterOfMass | None


def estimate_bus_current(v_prev: complex, v_k: complex, v_next: complex | None, z_k: complex, z_next: complex | None):
    """Net current injected at bus k from the voltages of its chain neighbours.

    Positive real part means the bus injects into the line; a load bus
    returns a current pointing the other way. ``v_next``/``z_next`` are None
    at the end of the chain.
    """
    if z_k == 0 or z_next == 0:
        raise ZeroDivisionError("segment impedance must be nonzero")
    cur = (v_k - v_prev) / z_k
    if v_next is not None:
        cur -= (v_next - v_k) / z_next
    return cur


def compute_center(weights, coords, kind: str = "") -> CenterOfMass:
    w = np.asarray(weights, dtype=float)
    c = np.asarray(coords, dtype=float)
    if w.size == 0:
        raise NoCenter("no weights")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = math.fsum(w)
    if total <= 0:
        raise NoCenter("weights sum to zero")
    p = w / total
    g = math.fsum(p * c)
    support = c[w > 0]
    # keep g inside the hull despite rounding
    g = min(max(g, support.min()), support.max())
    var = math.fsum(p * (c - g) ** 2)
    if np.all(support == support[0]):
        var = 0.0
    return CenterOfMass(g, math.sqrt(var), total, kind)


def _weight(cur: complex, weighting: str) -> float:
    if weighting == "magnitude":
        return abs(cur)
    if weighting == "real-part":
        return abs(cur.real)
    raise ValueError(f"unknown weighting {weighting!r}")


@dataclass(frozen=True)
class BusCurrents:
    """Per chain bus currents (p.u.), branches concentrated at their coupling bus."""

    chain: tuple[int, ...]
    coords: np.ndarray
    net: np.ndarray  # estimated from voltages, injection-positive
    absorbed: np.ndarray  # load current, from metered load power
    injected: np.ndarray  # generation current, from metered generation power


def chain_net_currents(model: NetworkModel, body: MainBody, sol: VoltageSolution) -> np.ndarray:
    """Net injected current at each chain bus (head excluded) from voltages alone."""
    V = dict(zip(sol.bus_ids, sol.v))
    z = [zz / model.z_base for zz in body.segment_impedances(model)]
    chain = body.chain
    out = np.zeros(len(chain) - 1, dtype=complex)
    for k in range(1, len(chain)):
        nxt = chain[k + 1] if k + 1 < len(chain) else None
        out[k - 1] = estimate_bus_current(
            V[chain[k - 1]],
            V[chain[k]],
            V[nxt] if nxt is not None else None,
            z[k],
            z[k + 1] if nxt is not None else None,
        )
    return out


def bus_currents(
    model: NetworkModel,
    body: MainBody,
    sol: VoltageSolution,
    load_kw,
    gen_kw,
) -> BusCurrents:
    """Assemble the three current classes on the chain.

    ``load_kw``/``gen_kw`` are per-bus complex powers in bus order, as a
    smart meter would report them; they split the net current into its
    absorbed and injected parts. The net current itself comes from the
    voltage-only estimate.
    """
    idx = model.index
    base = model.base_mva * 1e3
    V = sol.v
    load = np.asarray(load_kw, dtype=complex) / base
    gen = np.asarray(gen_kw, dtype=complex) / base
    chain = body.chain[1:]
    pos = {b: i for i, b in enumerate(chain)}
    absorbed = np.zeros(len(chain), dtype=complex)
    injected = np.zeros(len(chain), dtype=complex)
    for b, i in idx.items():
        c = body.coupling[b]
        if c not in pos:
            continue  # the head and anything concentrated onto it
        vb = V[i]
        absorbed[pos[c]] += np.conj(load[i] / vb)
        injected[pos[c]] += np.conj(gen[i] / vb)
    coords = np.array([body.coords[b] for b in chain])
    return BusCurrents(tuple(chain), coords, chain_net_currents(model, body, sol), absorbed, injected)


def _center_or_none(weights, coords, kind, lo, hi):
    mask = (weights >= NOISE_FLOOR) & (coords >= lo) & (coords <= hi)
    if not np.any(mask):
        return None
    try:
        return compute_center(weights[mask], coords[mask], kind)
    except NoCenter:
        return None


def centers_from_currents(cur: BusCurrents, weighting: str = "magnitude", segment=None) -> Centers:
    lo, hi = segment if segment is not None else (-math.inf, math.inf)
    wl = np.array([_weight(x, weighting) for x in cur.absorbed])
    wg = np.array([_weight(x, weighting) for x in cur.injected])
    wn = np.array([_weight(x, weighting) for x in cur.net])
    return Centers(
        _center_or_none(wg, cur.coords, "g_G", lo, hi),
        _center_or_none(wl, cur.coords, "g_L", lo, hi),
        _center_or_none(wn, cur.coords, "g_GL", lo, hi),
    )


def compute_all_centers(
    model: NetworkModel,
    body: MainBody,
    sol: VoltageSolution,
    load_kw,
    gen_kw,
    weighting: str = "magnitude",
    segment=None,
) -> Centers:
    """g_G, g_L and g_GL for a solved case; a missing center is None."""
    return centers_from_currents(bus_currents(model, body, sol, load_kw, gen_kw), weighting, segment)


def mass_diagram(cur: BusCurrents, centers: Centers, width: int = 72) -> str:
    """Text rendering of the point masses and centers along the line."""
    length = float(cur.coords.max()) if len(cur.coords) else 1.0
    length = length or 1.0

    def col(x):
        return min(width - 1, max(0, int(round(x / length * (width - 1)))))

    load_row = [" "] * width
    gen_row = [" "] * width
    for c, a, g in zip(cur.coords, cur.absorbed, cur.injected):
        if abs(a) >= NOISE_FLOOR:
            load_row[col(c)] = "v"
        if abs(g) >= NOISE_FLOOR:
            gen_row[col(c)] = "^"
    rows = []
    for name in ("g_G", "g_L", "g_GL"):
        ctr = getattr(centers, name)
        row = [" "] * width
        if ctr is not None:
            lo, hi = ctr.interval
            for c in range(col(lo), col(hi) + 1):
                row[c] = "-"
            row[col(ctr.g)] = "|"
        rows.append(f"{name:6s}|" + "".join(row))
    axis = "-" * width
    return "\n".join(
        [
            "gen   |" + "".join(gen_row),
            "      |" + axis,
            "load  |" + "".join(load_row),
            *rows,
            f"       0{'':{width - 12}}{length:9.3f} ohm",
        ]
    )
