"""Radial feeder model: buses, impedance segments, network files, admittance matrix."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

BUS_KINDS = ("feeder-head", "junction", "load", "pole")

DEFAULT_POWER_FACTOR = 0.95

# Typical overhead-line data for the conductor types found on the feeder
# (positive sequence, 20 kV construction). Overridable per network file.
CONDUCTORS: dict[str, tuple[float, float]] = {
    "CU-95": (0.193, 0.340),
    "CU-35": (0.524, 0.372),
    "CU-16": (1.150, 0.397),
    "ACSR-35": (0.850, 0.380),
    "ACSR-16": (1.870, 0.405),
    "AAAC-35": (0.986, 0.377),
}


class NetworkError(ValueError):
    """Base class for network data errors."""


class ParseError(NetworkError):
    pass


class TopologyError(NetworkError):
    pass


class UnitError(NetworkError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = "load"
    base_load: complex = 0j  # kW + j kvar at peak
    attached_actors: tuple[str, ...] = ()


@dataclass(frozen=True)
class Segment:
    from_bus: int
    to_bus: int
    impedance: complex  # ohm
    conductor_type: str = ""
    length_km: float = 0.0


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    segments: tuple[Segment, ...]
    base_kv: float
    base_mva: float
    conductors: dict[str, tuple[float, float]] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        _validate(self)

    # Derived views are cheap and recomputed rather than cached: the
    # dataclass is frozen and shared between worker processes.
    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def head(self) -> int:
        return next(b.id for b in self.buses if b.kind == "feeder-head")

    @property
    def z_base(self) -> float:
        return self.base_kv**2 / self.base_mva

    @property
    def total_load(self) -> complex:
        return sum((b.base_load for b in self.buses), 0j)

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def load_vector(self) -> np.ndarray:
        """Peak complex loads in kW/kvar, in bus order."""
        return np.array([b.base_load for b in self.buses], dtype=complex)

    def with_impedance_scale(self, factor: float) -> "NetworkModel":
        segs = tuple(
            Segment(s.from_bus, s.to_bus, s.impedance * factor, s.conductor_type, s.length_km * factor)
            for s in self.segments
        )
        return NetworkModel(self.buses, segs, self.base_kv, self.base_mva, self.conductors)


def _validate(model: NetworkModel) -> None:
    if not (model.base_kv > 0 and model.base_mva > 0):
        raise UnitError("per-unit base (kv, mva) must be positive")
    ids = [b.id for b in model.buses]
    if len(set(ids)) != len(ids):
        raise TopologyError("duplicate bus ids")
    heads = [b for b in model.buses if b.kind == "feeder-head"]
    if len(heads) != 1:
        raise TopologyError(f"expected exactly one feeder-head bus, found {len(heads)}")
    for b in model.buses:
        if b.kind not in BUS_KINDS:
            raise ParseError(f"bus {b.id}: unknown kind {b.kind!r}")
        if b.kind == "load" and b.base_load.real < 0:
            raise NetworkError(f"bus {b.id}: negative load")
    known = set(ids)
    adj: dict[int, list[int]] = {i: [] for i in ids}
    for s in model.segments:
        for end in (s.from_bus, s.to_bus):
            if end not in known:
                raise TopologyError(f"segment {s.from_bus}-{s.to_bus} references undeclared bus {end}")
        if s.from_bus == s.to_bus:
            raise TopologyError(f"self-loop at bus {s.from_bus}")
        if abs(s.impedance) == 0:
            raise NetworkError(f"segment {s.from_bus}-{s.to_bus} has zero impedance")
        adj[s.from_bus].append(s.to_bus)
        adj[s.to_bus].append(s.from_bus)
    if len(model.segments) != len(ids) - 1:
        # a connected graph with n-1 edges is a tree; anything else has a cycle or an island
        kind = "cycle detected" if len(model.segments) >= len(ids) else "disconnected bus"
        raise TopologyError(kind)
    seen = {heads[0].id}
    stack = [heads[0].id]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if len(seen) != len(ids):
        missing = sorted(known - seen)
        raise TopologyError(f"disconnected bus(es): {missing[:5]}")


def build_admittance(model: NetworkModel, per_unit: bool = True) -> sparse.csr_matrix:
    """Bus admittance matrix in bus order. No shunt elements are modelled."""
    n = len(model.buses)
    idx = model.index
    zb = model.z_base if per_unit else 1.0
    rows, cols, vals = [], [], []
    for s in model.segments:
        y = zb / s.impedance
        i, j = idx[s.from_bus], idx[s.to_bus]
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        vals += [y, y, -y, -y]
    return sparse.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n))


def power_factor_q(p_kw: float, pf: float = DEFAULT_POWER_FACTOR) -> float:
    """Lagging reactive power for a given active power and power factor."""
    return p_kw * math.tan(math.acos(pf))


def model_from_dict(data: dict) -> NetworkModel:
    try:
        base = data["base"]
    except KeyError:
        raise UnitError("missing 'base' section") from None
    try:
        kv, mva = float(base["kv"]), float(base["mva"])
    except (KeyError, TypeError, ValueError):
        raise UnitError("base section needs numeric 'kv' and 'mva'") from None

    conductors = dict(CONDUCTORS)
    try:
        for c in data.get("conductors", []):
            conductors[c["name"]] = (float(c["r_ohm_per_km"]), float(c["x_ohm_per_km"]))

        buses = []
        for rec in data["buses"]:
            p = float(rec.get("p_kw", 0.0))
            q = rec.get("q_kvar")
            q = power_factor_q(p, float(rec.get("pf", DEFAULT_POWER_FACTOR))) if q is None else float(q)
            buses.append(Bus(int(rec["id"]), rec.get("kind", "load"), complex(p, q), tuple(rec.get("actors", ()))))

        segments = []
        for rec in data["segments"]:
            length = float(rec.get("length_km", 1.0))
            name = rec.get("conductor", "")
            if "r_ohm" in rec or "x_ohm" in rec:
                z = complex(float(rec.get("r_ohm", 0.0)), float(rec.get("x_ohm", 0.0)))
            else:
                if name not in conductors:
                    raise ParseError(f"unknown conductor {name!r}")
                r, x = conductors[name]
                z = complex(r * length, x * length)
            segments.append(Segment(int(rec["from"]), int(rec["to"]), z, name, length))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed record: {exc}") from exc

    used = {s.conductor_type for s in segments}
    return NetworkModel(
        tuple(buses),
        tuple(segments),
        kv,
        mva,
        {k: v for k, v in conductors.items() if k in used},
    )


def model_to_dict(model: NetworkModel) -> dict:
    segs = []
    for s in model.segments:
        rec = {"from": s.from_bus, "to": s.to_bus, "length_km": s.length_km, "conductor": s.conductor_type}
        r, x = model.conductors.get(s.conductor_type, (None, None))
        if r is None or not (
            math.isclose(r * s.length_km, s.impedance.real, rel_tol=1e-12, abs_tol=1e-15)
            and math.isclose(x * s.length_km, s.impedance.imag, rel_tol=1e-12, abs_tol=1e-15)
        ):
            rec["r_ohm"] = s.impedance.real
            rec["x_ohm"] = s.impedance.imag
        segs.append(rec)
    buses = []
    for b in model.buses:
        rec = {"id": b.id, "kind": b.kind, "p_kw": b.base_load.real, "q_kvar": b.base_load.imag}
        if b.attached_actors:
            rec["actors"] = list(b.attached_actors)
        buses.append(rec)
    return {
        "base": {"kv": model.base_kv, "mva": model.base_mva},
        "conductors": [
            {"name": k, "r_ohm_per_km": r, "x_ohm_per_km": x} for k, (r, x) in sorted(model.conductors.items())
        ],
        "buses": buses,
        "segments": segs,
    }


def load_network(path: str | Path) -> NetworkModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return model_from_dict(data)


def save_network(model: NetworkModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")
