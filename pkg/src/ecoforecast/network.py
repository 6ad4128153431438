"""Directed road network, upstream-link topology and synthetic grid generation."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class NetworkError(ValueError):
    """Raised for malformed network documents or unknown ids."""


@dataclass(frozen=True)
class Link:
    id: str
    from_node: str
    to_node: str
    length: float  # m
    lanes: int
    free_flow_speed: float  # km/h

    @property
    def ffs_mps(self) -> float:
        return self.free_flow_speed / 3.6


class Network:
    """Immutable directed network.

    Links are kept in id order; ``index`` maps a link id to its position in
    that order, which is what the array-based simulator and feature code use.
    """

    def __init__(self, nodes, links, check_connected=True):
        nodes = list(nodes)
        if len(set(nodes)) != len(nodes):
            dup = sorted({n for n in nodes if nodes.count(n) > 1})
            raise NetworkError(f"duplicate node ids: {dup}")
        ids = [l.id for l in links]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise NetworkError(f"duplicate link ids: {dup}")
        node_set = set(nodes)
        for l in links:
            if l.from_node not in node_set or l.to_node not in node_set:
                raise NetworkError(f"link {l.id} references unknown node")
            if l.from_node == l.to_node:
                raise NetworkError(f"link {l.id} is a self loop")
            if not l.length > 0:
                raise NetworkError(f"link {l.id}: length must be > 0")
            if int(l.lanes) != l.lanes or l.lanes < 1:
                raise NetworkError(f"link {l.id}: lanes must be a positive integer")
            if not l.free_flow_speed > 0:
                raise NetworkError(f"link {l.id}: free-flow speed must be > 0")

        self.nodes = tuple(sorted(node_set))
        self.links = tuple(sorted(links, key=lambda l: l.id))
        self.index = {l.id: i for i, l in enumerate(self.links)}
        self._by_id = {l.id: l for l in self.links}

        self.out_links = {n: [] for n in self.nodes}
        self.inc_links = {n: [] for n in self.nodes}
        for l in self.links:
            self.out_links[l.from_node].append(l.id)
            self.inc_links[l.to_node].append(l.id)

        self._in_links = {}
        for l in self.links:
            self._in_links[l.id] = frozenset(
                u for u in self.inc_links[l.from_node]
                if self._by_id[u].from_node != l.to_node
            )
        if check_connected and not self.strongly_connected():
            raise NetworkError("network is not strongly connected")

    def __len__(self):
        return len(self.links)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return self.nodes == other.nodes and self.links == other.links

    def __hash__(self):
        return hash((self.nodes, self.links))

    def link(self, link_id: str) -> Link:
        try:
            return self._by_id[link_id]
        except KeyError:
            raise NetworkError(f"unknown link id {link_id!r}") from None

    def in_links(self, link_id: str) -> frozenset:
        if link_id not in self._in_links:
            raise NetworkError(f"unknown link id {link_id!r}")
        return self._in_links[link_id]

    def reverse(self, link_id: str):
        """Id of the opposite-direction link of the same segment, or None."""
        l = self.link(link_id)
        for u in self.out_links[l.to_node]:
            if self._by_id[u].to_node == l.from_node:
                return u
        return None

    def strongly_connected(self) -> bool:
        if not self.nodes:
            return True

        def reach(adj):
            seen = {self.nodes[0]}
            todo = deque(seen)
            while todo:
                n = todo.popleft()
                for m in adj[n]:
                    if m not in seen:
                        seen.add(m)
                        todo.append(m)
            return len(seen) == len(self.nodes)

        fwd = {n: [self._by_id[l].to_node for l in self.out_links[n]] for n in self.nodes}
        bwd = {n: [self._by_id[l].from_node for l in self.inc_links[n]] for n in self.nodes}
        return reach(fwd) and reach(bwd)

    # array views used by the simulator/features
    def lengths(self) -> np.ndarray:
        return np.array([l.length for l in self.links], dtype=float)

    def lanes_array(self) -> np.ndarray:
        return np.array([l.lanes for l in self.links], dtype=np.int64)

    def ffs_kmh(self) -> np.ndarray:
        return np.array([l.free_flow_speed for l in self.links], dtype=float)


def _num(text, kind, what):
    try:
        return kind(text)
    except ValueError:
        raise NetworkError(f"bad {what}: {text!r}") from None


def load_network(text: str, check_connected=True) -> Network:
    """Parse the line-oriented ``node,<id>`` / ``link,...`` format."""
    nodes, links = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if parts[0] == "node" and len(parts) == 2:
            nodes.append(parts[1])
        elif parts[0] == "link" and len(parts) == 7:
            lanes = _num(parts[5], float, f"lanes on line {lineno}")
            if lanes != int(lanes):
                raise NetworkError(f"line {lineno}: lanes must be an integer")
            links.append(Link(
                id=parts[1], from_node=parts[2], to_node=parts[3],
                length=_num(parts[4], float, f"length on line {lineno}"),
                lanes=int(lanes),
                free_flow_speed=_num(parts[6], float, f"ffs on line {lineno}"),
            ))
        else:
            raise NetworkError(f"line {lineno}: unrecognised record {raw!r}")
    return Network(nodes, links, check_connected=check_connected)


def read_network(path) -> Network:
    return load_network(Path(path).read_text(encoding="utf-8"))


def export_network(net: Network) -> str:
    out = ["# ecoforecast network"]
    out += [f"node,{n}" for n in net.nodes]
    out += [
        f"link,{l.id},{l.from_node},{l.to_node},{l.length!r},{l.lanes},{l.free_flow_speed!r}"
        for l in net.links
    ]
    return "\n".join(out) + "\n"


def generate_grid(rows: int, cols: int, spacing: float = 300.0,
                  lane_choices=(1, 2, 3), ffs_choices=(40.0, 50.0, 60.0, 80.0),
                  seed: int = 0) -> Network:
    """Bidirectional Manhattan grid.

    Each physical segment draws its lane count and free-flow speed once, so
    both directions share them.
    """
    if rows < 2 or cols < 2:
        raise NetworkError("grid needs rows, cols >= 2")
    if spacing <= 0:
        raise NetworkError("spacing must be > 0")
    if len(lane_choices) == 0 or len(ffs_choices) == 0:
        raise NetworkError("lane and ffs choice lists must be non-empty")
    rng = np.random.default_rng(seed)
    node = lambda r, c: f"N{r:02d}{c:02d}"
    nodes = [node(r, c) for r in range(rows) for c in range(cols)]

    segments = []
    for r in range(rows):
        for c in range(cols - 1):
            segments.append((node(r, c), node(r, c + 1)))
    for c in range(cols):
        for r in range(rows - 1):
            segments.append((node(r, c), node(r + 1, c)))

    links = []
    for a, b in segments:
        lanes = int(lane_choices[rng.integers(len(lane_choices))])
        ffs = float(ffs_choices[rng.integers(len(ffs_choices))])
        for u, v in ((a, b), (b, a)):
            links.append(Link(f"L{len(links):04d}", u, v, float(spacing), lanes, ffs))
    return Network(nodes, links)


def sample_network() -> Network:
    """The small irregular network bundled with the package."""
    return read_network(Path(__file__).with_name("data") / "sample_network.txt")
