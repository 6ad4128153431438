"""Second-by-second microsimulation: IDM car following with dynamic routing.

Vehicles live in flat numpy arrays (one slot per vehicle of the scenario).
Within a link, each lane is an ordered queue; vehicles pick lanes
round-robin when they enter a link and never change lane or overtake.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import kernels
from .network import Network

log = logging.getLogger(__name__)

DEPARTURES = ("exponential", "uniform", "normal")
CRAWL_SPEED = 1.0  # m/s, floor for routing travel times
PENDING, ACTIVE, ARRIVED = 0, 1, 2


@dataclass(frozen=True)
class IdmParams:
    desired_speed_factor: float = 1.0
    a: float = 1.5  # max acceleration, m/s^2
    b: float = 2.0  # comfortable deceleration, m/s^2
    s0: float = 2.0  # jam gap, m
    T: float = 1.5  # time headway, s
    delta: float = 4.0
    decel_cap: float | None = None  # defaults to 3*b
    vehicle_length: float = 5.0

    def __post_init__(self):
        for name in ("desired_speed_factor", "a", "b", "s0", "T", "vehicle_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IDM parameter {name} must be > 0")
        if self.delta < 1:
            raise ValueError("IDM exponent delta must be >= 1")
        if self.decel_cap is not None and not self.decel_cap > 0:
            raise ValueError("decel_cap must be > 0")

    @property
    def cap(self) -> float:
        return 3.0 * self.b if self.decel_cap is None else self.decel_cap


@dataclass(frozen=True)
class DemandScenario:
    demand_factor: float
    n_vehicles: int
    departure_distribution: str
    horizon: float
    od_pairs: tuple  # ((origin, destination, weight), ...)

    def __post_init__(self):
        if not self.demand_factor > 0:
            raise ValueError("demand_factor must be > 0")
        if self.n_vehicles < 1:
            raise ValueError("n_vehicles must be >= 1")
        if self.departure_distribution not in DEPARTURES:
            raise ValueError(f"departure distribution must be one of {DEPARTURES}")
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        pairs = tuple((str(o), str(d), float(w)) for o, d, w in self.od_pairs if w > 0)
        if not pairs:
            raise ValueError("at least one OD pair with positive weight is required")
        if any(o == d for o, d, _ in pairs):
            raise ValueError("origin and destination must differ")
        if abs(sum(w for *_, w in pairs) - 1.0) > 1e-9:
            raise ValueError("OD weights must sum to 1")
        object.__setattr__(self, "od_pairs", pairs)

    @property
    def scenario_id(self) -> str:
        return f"df{self.demand_factor:g}_{self.departure_distribution}"


def scale_scenario(base_vehicles: int, demand_factor: float, distribution: str,
                   horizon: float, od_pairs) -> DemandScenario:
    """A scenario whose vehicle count is the base count times the demand factor."""
    return DemandScenario(demand_factor, max(1, int(round(base_vehicles * demand_factor))),
                          distribution, horizon, tuple(od_pairs))


def generate_od_pairs(network: Network, n_pairs: int, seed: int, min_separation: int = 2):
    """Random OD pairs at least ``min_separation`` hops apart, weights normalised."""
    rng = np.random.default_rng(seed)
    hops = _hop_counts(network)
    cand = [(o, d) for o in network.nodes for d in network.nodes
            if o != d and hops[o][d] >= min_separation]
    if not cand:
        raise ValueError("no node pairs satisfy the separation constraint")
    pick = rng.choice(len(cand), size=min(n_pairs, len(cand)), replace=False)
    w = rng.uniform(0.5, 1.5, size=pick.size)
    w = w / w.sum()
    pairs = [(cand[i][0], cand[i][1], float(x)) for i, x in zip(sorted(pick), w)]
    # renormalise after float rounding so the weights sum to 1 exactly enough
    total = sum(x for *_, x in pairs)
    return tuple((o, d, x / total) for o, d, x in pairs)


def _hop_counts(network):
    out = {}
    for src in network.nodes:
        dist = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for n in frontier:
                for l in network.out_links[n]:
                    m = network.link(l).to_node
                    if m not in dist:
                        dist[m] = dist[n] + 1
                        nxt.append(m)
            frontier = nxt
        out[src] = dist
    return out


def sample_departures(scenario: DemandScenario, seed) -> np.ndarray:
    """Sorted departure times in ``[0, horizon]``."""
    rng = np.random.default_rng(seed)
    n, h = scenario.n_vehicles, scenario.horizon
    kind = scenario.departure_distribution
    if kind == "uniform":
        t = rng.uniform(0.0, h, size=n)
    elif kind == "normal":
        t = rng.normal(h / 2.0, h / 6.0, size=n)
    else:
        # Poisson arrivals at rate n/h, truncated at the horizon
        t = np.cumsum(rng.exponential(h / n, size=n))
    return np.sort(np.clip(t, 0.0, h))


def idm_acceleration(v: float, v0: float, s: float, dv: float, p: IdmParams = IdmParams()) -> float:
    """IDM acceleration for one vehicle; ``s=inf`` means no leader."""
    if not v0 > 0:
        raise ValueError("desired speed must be > 0")
    args = [np.array([x], dtype=float) for x in (v, v0, s, dv)]
    return float(kernels.idm_accel(*args, p.a, p.b, p.s0, p.T, p.delta, p.cap)[0])


# ------------------------------------------------------------------ routing

def shortest_path_tree(network: Network, destination: str, travel_times):
    """Backward Dijkstra towards ``destination``.

    Returns (cost-to-go per node, next link per node). Among equal-cost
    continuations the smallest link id wins, which yields the
    lexicographically smallest link-id sequence from any origin.
    """
    tt = _tt_lookup(network, travel_times)
    dist = {destination: 0.0}
    heap = [(0.0, destination)]
    done = set()
    while heap:
        c, n = heapq.heappop(heap)
        if n in done:
            continue
        done.add(n)
        for lid in network.inc_links[n]:
            u = network.link(lid).from_node
            nc = c + tt[lid]
            if nc < dist.get(u, math.inf):
                dist[u] = nc
                heapq.heappush(heap, (nc, u))
    nxt = {}
    for n in network.nodes:
        if n == destination or n not in dist:
            continue
        best = None
        for lid in network.out_links[n]:
            m = network.link(lid).to_node
            if m not in dist:
                continue
            c = tt[lid] + dist[m]
            if c <= dist[n] * (1 + 1e-12) + 1e-12 and (best is None or lid < best):
                best = lid
        nxt[n] = best
    return dist, nxt


def _tt_lookup(network, travel_times):
    if isinstance(travel_times, dict):
        tt = travel_times
    else:
        tt = {l.id: float(x) for l, x in zip(network.links, travel_times)}
    for lid in (l.id for l in network.links):
        if not tt[lid] > 0:
            raise ValueError(f"travel time of {lid} must be > 0")
    return tt


def route(network: Network, origin: str, destination: str, travel_times) -> list:
    """Minimum travel-time link sequence from ``origin`` to ``destination``."""
    if origin == destination:
        raise ValueError("origin equals destination")
    _, nxt = shortest_path_tree(network, destination, travel_times)
    return _walk(network, nxt, origin, destination)


def _walk(network, nxt, origin, destination):
    path, n = [], origin
    while n != destination:
        lid = nxt.get(n)
        if lid is None:
            raise ValueError(f"{destination} unreachable from {origin}")
        path.append(lid)
        n = network.link(lid).to_node
    return path


# --------------------------------------------------------------- simulation

@dataclass
class SimState:
    """Mutable simulation state; arrays are indexed by vehicle id."""
    network: Network
    idm: IdmParams
    t: int
    status: np.ndarray
    dep_time: np.ndarray
    origin: list
    dest: list
    link: np.ndarray
    lane: np.ndarray
    pos: np.ndarray
    speed: np.ndarray
    nxt: np.ndarray  # next link index on the path, -1 on the final link
    paths: list  # per vehicle list of link indices (from current link onwards)
    rr: np.ndarray  # round-robin lane pointer per link
    entered_at: np.ndarray
    arrived_at: np.ndarray
    reroute_interval: int = 60
    records: list = field(default_factory=list)
    _tt: np.ndarray | None = None
    _trees: dict = field(default_factory=dict)

    @property
    def n_active(self):
        return int((self.status == ACTIVE).sum())

    @property
    def n_arrived(self):
        return int((self.status == ARRIVED).sum())

    @property
    def n_departed(self):
        return int((self.entered_at >= 0).sum())

    def finished(self):
        return not np.any(self.status != ARRIVED)


def init_state(network: Network, idm: IdmParams, dep_time, origins, dests,
               reroute_interval: int = 60) -> SimState:
    n = len(dep_time)
    state = SimState(
        network=network, idm=idm, t=0,
        status=np.zeros(n, dtype=np.int8),
        dep_time=np.asarray(dep_time, dtype=float),
        origin=list(origins), dest=list(dests),
        link=np.full(n, -1, dtype=np.int64), lane=np.zeros(n, dtype=np.int64),
        pos=np.zeros(n), speed=np.zeros(n), nxt=np.full(n, -1, dtype=np.int64),
        paths=[None] * n, rr=np.zeros(len(network), dtype=np.int64),
        entered_at=np.full(n, -1, dtype=np.int64), arrived_at=np.full(n, -1, dtype=np.int64),
        reroute_interval=int(reroute_interval),
    )
    _refresh_travel_times(state)
    return state


def _current_travel_times(state):
    net = state.network
    L = net.lengths()
    act = state.status == ACTIVE
    cnt = np.bincount(state.link[act], minlength=len(net))
    ssum = np.bincount(state.link[act], weights=state.speed[act], minlength=len(net))
    v = np.where(cnt > 0, ssum / np.maximum(cnt, 1), net.ffs_kmh() / 3.6)
    return L / np.maximum(v, CRAWL_SPEED)


def _refresh_travel_times(state):
    state._tt = _current_travel_times(state)
    state._trees = {}


def _path_from(state, node, dest):
    net = state.network
    tree = state._trees.get(dest)
    if tree is None:
        tree = shortest_path_tree(net, dest, state._tt)[1]
        state._trees[dest] = tree
    return [net.index[l] for l in _walk(net, tree, node, dest)]


def _tails(state, max_lanes):
    """Per (link, lane) key: index of the rearmost active vehicle or -1."""
    n_keys = len(state.network) * max_lanes
    tail = np.full(n_keys, -1, dtype=np.int64)
    act = np.nonzero(state.status == ACTIVE)[0]
    if act.size:
        key = state.link[act] * max_lanes + state.lane[act]
        order = np.lexsort((state.pos[act], key))  # ascending pos within key
        k_sorted = key[order]
        first = np.ones(order.size, dtype=bool)
        first[1:] = k_sorted[1:] != k_sorted[:-1]
        tail[k_sorted[first]] = act[order[first]]
    return tail


def step(state: SimState) -> SimState:
    """Advance the state by one second and append the per-second records."""
    net = state.network
    p = state.idm
    L = net.lengths()
    lanes = net.lanes_array()
    ffs = net.ffs_kmh() / 3.6 * p.desired_speed_factor
    ml = int(lanes.max())
    t = state.t
    veh_len = p.vehicle_length

    # departures enter at position 0 when the entry lane offers an s0 gap
    tail = _tails(state, ml)
    waiting = np.nonzero((state.status == PENDING) & (state.dep_time <= t))[0]
    for i in waiting:
        path = _path_from(state, state.origin[i], state.dest[i])
        first = path[0]
        ln = state.rr[first]
        k = first * ml + ln
        j = tail[k]
        if j >= 0 and state.pos[j] - veh_len < p.s0:
            continue
        state.rr[first] = (ln + 1) % lanes[first]
        state.status[i] = ACTIVE
        state.link[i], state.lane[i], state.pos[i], state.speed[i] = first, ln, 0.0, 0.0
        state.paths[i] = path
        state.nxt[i] = path[1] if len(path) > 1 else -1
        state.entered_at[i] = t
        tail[k] = i

    act = np.nonzero(state.status == ACTIVE)[0]
    if act.size:
        lk, pos, v = state.link[act], state.pos[act], state.speed[act]
        key = lk * ml + state.lane[act]
        order = np.lexsort((-pos, key))  # front-to-back within each lane
        leader = np.full(act.size, -1, dtype=np.int64)
        same = key[order[1:]] == key[order[:-1]]
        leader[order[1:][same]] = order[:-1][same]

        gap = np.full(act.size, np.inf)
        dv = np.zeros(act.size)
        has = leader >= 0
        gap[has] = pos[leader[has]] - pos[has] - veh_len
        dv[has] = v[has] - v[leader[has]]

        # lane heads look across the node at the tail of their entry lane
        nx = state.nxt[act]
        head = ~has & (nx >= 0)
        if head.any():
            hi = np.nonzero(head)[0]
            k2 = nx[hi] * ml + state.rr[nx[hi]]
            tj = tail[k2]
            ok = tj >= 0
            hi, tj = hi[ok], tj[ok]
            gap[hi] = L[lk[hi]] - pos[hi] + state.pos[tj] - veh_len
            dv[hi] = v[hi] - state.speed[tj]

        v0 = ffs[lk].copy()
        # slow down ahead of a node into a slower link
        slower = (nx >= 0)
        if slower.any():
            si = np.nonzero(slower)[0]
            v0n = ffs[nx[si]]
            zone = (v[si] ** 2 - v0n ** 2) / (2.0 * p.b) + v[si]
            use = (v0n < v0[si]) & (L[lk[si]] - pos[si] <= zone)
            v0[si[use]] = v0n[use]

        acc = kernels.idm_accel(v, v0, gap, dv, p.a, p.b, p.s0, p.T, p.delta, p.cap)
        v_new = np.maximum(0.0, v + acc)
        x_new = pos + 0.5 * (v + v_new)
        x_new, v_new = kernels.clamp_lanes(order, leader, x_new, v_new, veh_len)

        state.pos[act] = x_new
        state.speed[act] = v_new

        # link transitions, front-most first
        over = np.nonzero(x_new >= L[lk])[0]
        if over.size:
            tail = _tails(state, ml)
            blocked = np.zeros(act.size, dtype=bool)
            for q in over[np.argsort(-(x_new[over] - L[lk[over]]), kind="stable")]:
                i = act[q]
                cur = state.link[i]
                nl = state.nxt[i]
                if nl < 0:
                    state.status[i] = ARRIVED
                    state.arrived_at[i] = t + 1
                    continue
                rest = state.pos[i] - L[cur]
                ln = state.rr[nl]
                k = nl * ml + ln
                j = tail[k]
                lq = leader[q]
                if (lq >= 0 and blocked[lq]) or (j >= 0 and state.pos[j] - veh_len - rest < p.s0):
                    # entry blocked: wait at the stop line behind any blocked leader
                    blocked[q] = True
                    state.pos[i] = L[cur]
                    state.speed[i] = 0.0
                    continue
                state.rr[nl] = (ln + 1) % lanes[nl]
                path = state.paths[i][1:]
                state.paths[i] = path
                state.link[i], state.lane[i] = nl, ln
                state.pos[i] = min(rest, L[nl])
                state.speed[i] = min(state.speed[i], ffs[nl])
                state.nxt[i] = path[1] if len(path) > 1 else -1
                tail[k] = i
            if blocked.any():
                # re-queue followers behind vehicles held at the stop line
                stay = (state.status[act] == ACTIVE) & (state.link[act] == lk)
                lead2 = np.where((leader >= 0) & stay & stay[np.maximum(leader, 0)], leader, -1)
                px, sp = state.pos[act], state.speed[act]
                px, sp = kernels.clamp_lanes(order, lead2, px, sp, veh_len)
                state.pos[act], state.speed[act] = px, sp

        still = state.status[act] == ACTIVE
        ids = act[still]
        state.records.append((
            np.full(ids.size, t + 1, dtype=np.int64), ids, state.link[ids].copy(),
            state.speed[ids].copy(), state.speed[ids] - v[still],
        ))

    state.t = t + 1
    if state.t % state.reroute_interval == 0:
        _reroute(state)
    return state


def _reroute(state):
    _refresh_travel_times(state)
    net = state.network
    for i in np.nonzero(state.status == ACTIVE)[0]:
        cur = state.link[i]
        node = net.links[cur].to_node
        if node == state.dest[i]:
            continue
        path = [cur] + _path_from(state, node, state.dest[i])
        state.paths[i] = path
        state.nxt[i] = path[1]


@dataclass
class SimResult:
    records: pd.DataFrame
    end_time: int
    n_unarrived: int
    entered_at: np.ndarray
    arrived_at: np.ndarray


def records_frame(state: SimState) -> pd.DataFrame:
    cats = [l.id for l in state.network.links]
    if state.records:
        cols = [np.concatenate(c) for c in zip(*state.records)]
    else:
        cols = [np.zeros(0, dtype=np.int64)] * 3 + [np.zeros(0)] * 2
    return pd.DataFrame({
        "t_sec": cols[0],
        "vehicle_id": cols[1],
        "link_id": pd.Categorical.from_codes(cols[2], categories=cats),
        "speed_mps": cols[3],
        "accel_mps2": cols[4],
    })


def run_scenario(network: Network, scenario: DemandScenario, idm: IdmParams = IdmParams(),
                 reroute_interval: int = 60, seed: int = 0) -> SimResult:
    """Simulate one scenario until every vehicle arrives (or 10x horizon)."""
    s_dep, s_od = np.random.SeedSequence(seed).generate_state(2)
    dep = sample_departures(scenario, int(s_dep))
    rng = np.random.default_rng(int(s_od))
    w = np.array([x for *_, x in scenario.od_pairs])
    pick = rng.choice(len(scenario.od_pairs), size=scenario.n_vehicles, p=w / w.sum())
    origins = [scenario.od_pairs[k][0] for k in pick]
    dests = [scenario.od_pairs[k][1] for k in pick]
    state = init_state(network, idm, dep, origins, dests, reroute_interval)
    cap = int(math.ceil(10 * scenario.horizon))
    while not state.finished() and state.t < cap:
        step(state)
    left = int((state.status != ARRIVED).sum())
    if left:
        log.warning("scenario %s hit the %d s cap with %d vehicles unarrived",
                    scenario.scenario_id, cap, left)
    return SimResult(records_frame(state), state.t, left,
                     state.entered_at.copy(), state.arrived_at.copy())


def write_records(df: pd.DataFrame, path):
    df.to_csv(path, index=False, lineterminator="\n")


def read_records(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"link_id": str}, float_precision="round_trip")
    df["link_id"] = df["link_id"].astype("category")
    return df
