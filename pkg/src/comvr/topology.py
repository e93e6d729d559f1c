"""Main-body extraction: the longest electric path from the feeder head.

Every bus off that path is concentrated onto the chain bus where its
branch couples, which gives the whole feeder a single coordinate axis:
the accumulated impedance magnitude from the head.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from .network import NetworkModel

# Relative tolerance under which two path lengths count as a tie.
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class MainBody:
    chain: tuple[int, ...]
    coords: dict[int, float]  # chain bus -> accumulated |Z| (ohm)
    branches: dict[int, tuple[int, ...]]  # chain bus -> buses concentrated onto it
    coupling: dict[int, int]  # any bus -> the chain bus it belongs to

    @property
    def length(self) -> float:
        return self.coords[self.chain[-1]]

    def segment_impedances(self, model: NetworkModel) -> list[complex]:
        """Impedance of the segment feeding each chain bus (index 0 is the head: 0)."""
        z = _edge_impedances(model)
        return [0j] + [z[(a, b)] for a, b in zip(self.chain, self.chain[1:])]


def _edge_impedances(model: NetworkModel) -> dict[tuple[int, int], complex]:
    z = {}
    for s in model.segments:
        z[(s.from_bus, s.to_bus)] = s.impedance
        z[(s.to_bus, s.from_bus)] = s.impedance
    return z


def _longer(a: float, b: float) -> bool:
    return a > b and not abs(a - b) <= TIE_RTOL * max(abs(a), abs(b))


def extract_main_body(model: NetworkModel) -> MainBody:
    adj: dict[int, list[tuple[int, complex]]] = defaultdict(list)
    for s in model.segments:
        adj[s.from_bus].append((s.to_bus, s.impedance))
        adj[s.to_bus].append((s.from_bus, s.impedance))

    head = model.head
    parent = {head: None}
    dist = {head: 0.0}
    best_leaf, best_len = head, 0.0
    stack = [head]
    while stack:
        u = stack.pop()
        is_leaf = True
        for v, z in adj[u]:
            if v in parent:
                continue
            is_leaf = False
            parent[v] = u
            dist[v] = dist[u] + abs(z)
            stack.append(v)
        if is_leaf and u != head:
            d = dist[u]
            if best_leaf == head or _longer(d, best_len) or (not _longer(best_len, d) and u < best_leaf):
                best_leaf, best_len = u, d

    chain = [best_leaf]
    while parent[chain[-1]] is not None:
        chain.append(parent[chain[-1]])
    chain.reverse()
    on_chain = set(chain)

    coupling = {b: b for b in chain}
    branches: dict[int, list[int]] = {b: [] for b in chain}
    for c in chain:
        stack = [v for v, _ in adj[c] if v not in on_chain]
        while stack:
            u = stack.pop()
            coupling[u] = c
            branches[c].append(u)
            stack.extend(v for v, _ in adj[u] if v not in coupling)

    return MainBody(
        tuple(chain),
        {b: dist[b] for b in chain},
        {b: tuple(sorted(v)) for b, v in branches.items()},
        coupling,
    )


def coordinate_of(body: MainBody, bus: int) -> float:
    try:
        return body.coords[body.coupling[bus]]
    except KeyError:
        raise KeyError(f"bus {bus} is not part of the main body or its branches") from None
