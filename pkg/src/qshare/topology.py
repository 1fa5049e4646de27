"""Layered datacenter topologies with capacity and queue bookkeeping.

Topologies are layered graphs: hypervisors at layer 0, switch tiers above.
Tree-derived builds (multi-rooted trees, fattree-equivalents) keep links
between adjacent layers only; random builds put every switch at layer 1 and
precompute k-shortest path sets between hypervisor pairs.

Reservation state on links is mutated only by the placement module under a
single-writer contract; everything else is immutable after construction.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

HYPERVISOR = "hypervisor"
SWITCH = "switch"

_REL_EPS = 1e-9


class ConstructionError(ValueError):
    """Topology parameters produced an unusable network."""


@dataclass
class Node:
    id: str
    kind: str
    layer: int
    vm_slots_total: int = 0
    vm_slots_free: int = 0

    def is_hypervisor(self) -> bool:
        return self.kind == HYPERVISOR


@dataclass
class Link:
    """Undirected link; `reservations` maps tenant id -> reserved Mbps.

    A tenant appears in `reservations` for every link of its routing tree,
    possibly with a 0.0 reservation; membership is what queue accounting and
    per-port tenant counts are based on.
    """

    a: str
    b: str
    capacity: float
    queue_count: int = 8
    reserved: float = 0.0
    reservations: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, str]:
        return (self.a, self.b)

    @property
    def residual(self) -> float:
        return self.capacity - self.reserved

    def tenant_count(self) -> int:
        return len(self.reservations)

    def _recompute(self) -> None:
        self.reserved = math.fsum(self.reservations.values())


def link_key(u: str, v: str) -> tuple[str, str]:
    return (u, v) if u < v else (v, u)


@dataclass
class Topology:
    nodes: dict
    links: dict
    layer_count: int
    kind: str = "tree"
    params: dict = field(default_factory=dict)
    path_sets: dict | None = None

    def __post_init__(self):
        adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for (u, v) in self.links:
            adj[u].append(v)
            adj[v].append(u)
        for n in adj:
            adj[n].sort()
        self.adjacency = adj
        self.total_capacity = math.fsum(l.capacity for l in self.links.values())
        self._reserved_sum = math.fsum(l.reserved for l in self.links.values())
        self._skel_cache: dict[int, list] = {}
        hyps = sorted(n for n, d in self.nodes.items() if d.kind == HYPERVISOR)
        self.hyp_index = {h: i for i, h in enumerate(hyps)}
        self._free_arr = np.array(
            [self.nodes[h].vm_slots_free for h in hyps], dtype=np.int64)

    # -- queries -------------------------------------------------------
    def hypervisors(self) -> list[str]:
        return sorted(n for n, d in self.nodes.items() if d.kind == HYPERVISOR)

    def nodes_at_layer(self, layer: int) -> list[str]:
        return sorted(n for n, d in self.nodes.items() if d.layer == layer)

    def link(self, u: str, v: str) -> Link:
        return self.links[link_key(u, v)]

    def down_neighbors(self, node: str) -> list[str]:
        lay = self.nodes[node].layer
        return [m for m in self.adjacency[node] if self.nodes[m].layer < lay]

    def up_neighbors(self, node: str) -> list[str]:
        lay = self.nodes[node].layer
        return [m for m in self.adjacency[node] if self.nodes[m].layer > lay]

    def total_reserved(self) -> float:
        return self._reserved_sum

    def load(self) -> float:
        if self.total_capacity <= 0:
            return 0.0
        return self.total_reserved() / self.total_capacity

    def total_vm_slots(self) -> int:
        return sum(d.vm_slots_total for d in self.nodes.values())

    def free_vm_slots(self) -> int:
        return sum(d.vm_slots_free for d in self.nodes.values())

    def oversubscription(self) -> float:
        """Aggregate downlink/uplink capacity ratio at the highest link tier."""
        top = self.layer_count - 1
        if top < 2:
            return 1.0
        down = math.fsum(
            l.capacity for l in self.links.values()
            if max(self.nodes[l.a].layer, self.nodes[l.b].layer) == top - 1
        )
        up = math.fsum(
            l.capacity for l in self.links.values()
            if max(self.nodes[l.a].layer, self.nodes[l.b].layer) == top
        )
        if up <= 0:
            raise ConstructionError("no uplinks at the top tier")
        return down / up

    def oversubscription_descriptor(self) -> str:
        r = self.oversubscription()
        if abs(r - round(r)) < 1e-6:
            return f"{int(round(r))}:1"
        return f"{r:.2f}:1"

    # -- reservation state (single-writer: placement module) ------------
    def reserve(self, key: tuple[str, str], tenant_id: str, amount: float) -> None:
        lnk = self.links[key]
        if amount > lnk.residual + _REL_EPS * lnk.capacity:
            raise ValueError(f"over-reservation on {key}: {amount} > {lnk.residual}")
        before = lnk.reserved
        lnk.reservations[tenant_id] = amount
        lnk._recompute()
        self._reserved_sum += lnk.reserved - before

    def release(self, key: tuple[str, str], tenant_id: str) -> None:
        lnk = self.links[key]
        before = lnk.reserved
        del lnk.reservations[tenant_id]
        lnk._recompute()
        self._reserved_sum += lnk.reserved - before

    def occupy_slots(self, hyp: str, count: int) -> None:
        node = self.nodes[hyp]
        if node.vm_slots_free < count:
            raise ValueError(f"not enough free VM slots on {hyp}")
        node.vm_slots_free -= count
        self._free_arr[self.hyp_index[hyp]] = node.vm_slots_free

    def free_slots(self, hyp: str, count: int) -> None:
        node = self.nodes[hyp]
        node.vm_slots_free += count
        if node.vm_slots_free > node.vm_slots_total:
            raise ValueError(f"slot underflow on {hyp}")
        self._free_arr[self.hyp_index[hyp]] = node.vm_slots_free

    def dump_json(self) -> str:
        return json.dumps(
            {
                "layer_count": self.layer_count,
                "kind": self.kind,
                "oversubscription": self.oversubscription_descriptor(),
                "nodes": [
                    {
                        "id": n.id, "kind": n.kind, "layer": n.layer,
                        "vm_slots_total": n.vm_slots_total,
                        "vm_slots_free": n.vm_slots_free,
                    }
                    for _, n in sorted(self.nodes.items())
                ],
                "links": [
                    {
                        "a": l.a, "b": l.b, "capacity": l.capacity,
                        "reserved": l.reserved, "queue_count": l.queue_count,
                        "tenants": sorted(l.reservations),
                    }
                    for _, l in sorted(self.links.items())
                ],
            },
            indent=2,
        )


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

@dataclass
class MultiRootedParams:
    """Parameters for a multi-rooted tree with up to three switch tiers.

    fanouts[0] = hypervisors per ToR, fanouts[1] = ToRs per pod,
    fanouts[2] = number of pods (every core switch attaches to each pod).
    redundancy[i] = switches per group at tier i+1 (redundancy[0] is always 1:
    one ToR per hypervisor group). Core switch c attaches to aggregation
    switch (c mod redundancy[1]) in every pod.

    capacities[i] is the capacity of links whose upper endpoint is at layer
    i+1. disabled_fraction maps a switch layer to the fraction of its switches
    removed (uniform per seed) to realize oversubscription.
    """

    layers: int
    fanouts: tuple
    capacities: tuple
    vm_slots: int
    redundancy: tuple = ()
    queue_count: int = 8
    disabled_fraction: dict = field(default_factory=dict)
    seed: int = 0


def _hyp_id(i: int) -> str:
    return f"h{i:04d}"


_TIER_PREFIX = {1: "t", 2: "a", 3: "c"}


def _switch_id(layer: int, i: int) -> str:
    return f"{_TIER_PREFIX[layer]}{i:03d}"


def build_multirooted(params: MultiRootedParams) -> Topology:
    """Deterministic multi-rooted tree; raises ConstructionError on bad params
    or if disabling disconnects any hypervisor from the top layer."""
    n = params.layers
    if n < 1 or n > 3:
        raise ConstructionError("1 to 3 switch layers supported")
    if len(params.fanouts) != n or len(params.capacities) != n:
        raise ConstructionError("fanouts/capacities must have one entry per layer")
    if any(f <= 0 for f in params.fanouts) or any(c <= 0 for c in params.capacities):
        raise ConstructionError("fanouts and capacities must be positive")
    red = tuple(params.redundancy) or (1,) * n
    if len(red) != n or red[0] != 1 or any(r <= 0 for r in red):
        raise ConstructionError("redundancy must be per-layer with redundancy[0] == 1")
    for lay, frac in params.disabled_fraction.items():
        if not (0 <= frac < 1):
            raise ConstructionError("disabled fraction must be in [0, 1)")
        if not (1 <= lay <= n):
            raise ConstructionError(f"disabled fraction names unknown layer {lay}")

    nodes: dict[str, Node] = {}
    links: dict[tuple[str, str], Link] = {}

    def add_link(u: str, v: str, cap: float) -> None:
        k = link_key(u, v)
        links[k] = Link(k[0], k[1], float(cap), queue_count=params.queue_count)

    f1 = params.fanouts[0]
    tor_count = params.fanouts[1] * params.fanouts[2] if n >= 3 else (
        params.fanouts[1] if n == 2 else 1)
    hyp_count = f1 * tor_count
    for i in range(hyp_count):
        nodes[_hyp_id(i)] = Node(_hyp_id(i), HYPERVISOR, 0,
                                 params.vm_slots, params.vm_slots)
    for t in range(tor_count):
        tid = _switch_id(1, t)
        nodes[tid] = Node(tid, SWITCH, 1)
        for j in range(f1):
            add_link(tid, _hyp_id(t * f1 + j), params.capacities[0])

    if n >= 2:
        if n == 2:
            pods, aggs_per_pod = 1, red[1]
            tors_per_pod = params.fanouts[1]
        else:
            pods, aggs_per_pod = params.fanouts[2], red[1]
            tors_per_pod = params.fanouts[1]
        agg_ids = []
        for p in range(pods):
            for r in range(aggs_per_pod):
                aid = _switch_id(2, p * aggs_per_pod + r)
                agg_ids.append(aid)
                nodes[aid] = Node(aid, SWITCH, 2)
                for t in range(tors_per_pod):
                    add_link(aid, _switch_id(1, p * tors_per_pod + t),
                             params.capacities[1])

    if n >= 3:
        cores = red[2]
        for c in range(cores):
            cid = _switch_id(3, c)
            nodes[cid] = Node(cid, SWITCH, 3)
            for p in range(pods):
                aid = _switch_id(2, p * aggs_per_pod + (c % aggs_per_pod))
                add_link(cid, aid, params.capacities[2])

    rng = np.random.default_rng(params.seed)
    for lay in sorted(params.disabled_fraction):
        frac = params.disabled_fraction[lay]
        if frac == 0:
            continue
        layer_nodes = sorted(n_ for n_, d in nodes.items()
                             if d.kind == SWITCH and d.layer == lay)
        kill = rng.choice(len(layer_nodes),
                          size=int(round(frac * len(layer_nodes))), replace=False)
        for idx in sorted(kill):
            dead = layer_nodes[idx]
            del nodes[dead]
            for k in [k for k in links if dead in k]:
                del links[k]

    topo = Topology(nodes, links, layer_count=n + 1, kind="tree",
                    params={"multirooted": params.__dict__ | {
                        "disabled_fraction": dict(params.disabled_fraction)}})
    _check_upward_connectivity(topo)
    return topo


def _check_upward_connectivity(topo: Topology) -> None:
    top = topo.layer_count - 1
    top_nodes = set(topo.nodes_at_layer(top))
    if not top_nodes:
        raise ConstructionError("no switches at the top layer")
    for h in topo.hypervisors():
        frontier, seen = [h], {h}
        reached = False
        while frontier and not reached:
            u = frontier.pop()
            for v in topo.up_neighbors(u):
                if v in top_nodes:
                    reached = True
                    break
                if v not in seen:
                    seen.add(v)
                    frontier.append(v)
        if not reached:
            raise ConstructionError(f"{h} cannot reach the top layer after disabling")


def fattree_like(oversub: str = "1:1", *, k: int = 16, vm_slots: int = 100,
                 nic_mbps: float = 10_000.0, port_mbps: float = 40_000.0,
                 queue_count: int = 8, seed: int = 0) -> Topology:
    """k-ary fattree-equivalent multi-rooted tree; oversubscription realized
    by disabling core switches uniformly at random per seed."""
    half = k // 2
    ratio = {"1:1": 1, "4:1": 4, "16:1": 16}.get(oversub)
    if ratio is None:
        num, _, den = oversub.partition(":")
        ratio = int(num) / int(den or "1")
    cores_full = half * half
    frac = 1.0 - 1.0 / ratio if ratio > 1 else 0.0
    return build_multirooted(MultiRootedParams(
        layers=3,
        fanouts=(half, half, k),
        redundancy=(1, half, cores_full),
        capacities=(nic_mbps, port_mbps, port_mbps),
        vm_slots=vm_slots,
        queue_count=queue_count,
        disabled_fraction={3: frac},
        seed=seed,
    ))


def build_testbed(racks: int = 2, servers_per_rack: int = 5, vm_slots: int = 10,
                  nic_mbps: float = 1000.0, core_mbps: float = 1000.0,
                  queue_count: int = 8) -> Topology:
    """Two-tier rack topology: ToR per rack, one core switch on top."""
    return build_multirooted(MultiRootedParams(
        layers=2,
        fanouts=(servers_per_rack, racks),
        capacities=(nic_mbps, core_mbps),
        vm_slots=vm_slots,
        queue_count=queue_count,
    ))


def build_custom(nodes: list, links: list, *, queue_count: int = 8) -> Topology:
    """Hand-built topology from (id, kind, layer, vm_slots) node tuples and
    (u, v, capacity) link tuples."""
    nd = {}
    for (nid, kind, layer, slots) in nodes:
        nd[nid] = Node(nid, kind, layer, slots, slots)
    lk = {}
    for (u, v, cap) in links:
        k = link_key(u, v)
        lk[k] = Link(k[0], k[1], float(cap), queue_count=queue_count)
    layer_count = max(d.layer for d in nd.values()) + 1
    return Topology(nd, lk, layer_count=layer_count, kind="tree")


# ---------------------------------------------------------------------------
# routing-tree skeletons
# ---------------------------------------------------------------------------

@dataclass
class TRSkeleton:
    """Tree rooted at a switch whose leaves are the hypervisors reachable
    using only downward links (tree mode) / BFS tree (random mode)."""

    root: str
    parent: dict
    children: dict
    order: list
    leaves: list
    links: list

    def path_to_root(self, node: str) -> list:
        keys = []
        u = node
        while self.parent[u] is not None:
            keys.append(link_key(u, self.parent[u]))
            u = self.parent[u]
        return keys


def _bfs_tree(topo: Topology, root: str, downward_only: bool) -> TRSkeleton:
    parent = {root: None}
    children: dict[str, list] = {root: []}
    order = [root]
    frontier = [root]
    while frontier:
        nxt = []
        for u in frontier:
            if downward_only:
                neigh = topo.down_neighbors(u)
            else:
                neigh = topo.adjacency[u]
            for v in sorted(neigh):
                if v in parent:
                    continue
                parent[v] = u
                children.setdefault(u, []).append(v)
                children.setdefault(v, [])
                order.append(v)
                nxt.append(v)
        frontier = nxt
    leaves = sorted(n for n in order if topo.nodes[n].kind == HYPERVISOR)
    links = [link_key(n, parent[n]) for n in order if parent[n] is not None]
    return TRSkeleton(root, parent, children, order, leaves, links)


def trs_at_layer(topo: Topology, layer: int) -> list:
    """One skeleton per node at `layer`, in node-id order; empty if the layer
    has no switches. Skeletons are structural and cached per topology."""
    if layer < 1 or layer > topo.layer_count:
        raise ValueError(f"layer must be in [1, {topo.layer_count}]")
    cached = topo._skel_cache.get(layer)
    if cached is not None:
        return cached
    skeletons = []
    for root in topo.nodes_at_layer(layer):
        if topo.nodes[root].kind != SWITCH:
            continue
        skel = _bfs_tree(topo, root, downward_only=(topo.kind == "tree"))
        if skel.leaves:
            skeletons.append(skel)
    topo._skel_cache[layer] = skeletons
    return skeletons


# ---------------------------------------------------------------------------
# k-shortest paths and random topologies
# ---------------------------------------------------------------------------

def _lex_shortest_path(adj: dict, src: str, dst: str,
                       banned_nodes=frozenset(), banned_edges=frozenset()):
    """Shortest path by edge count, ties broken by lexicographic node sequence."""
    heap = [(0, (src,))]
    best = {}
    while heap:
        dist, path = heapq.heappop(heap)
        u = path[-1]
        if u == dst:
            return list(path)
        if best.get(u, (1 << 30, None)) < (dist, path):
            continue
        for v in adj[u]:
            if v in banned_nodes or v in path:
                continue
            if (u, v) in banned_edges or (v, u) in banned_edges:
                continue
            cand = (dist + 1, path + (v,))
            if v not in best or cand < best[v]:
                best[v] = cand
                heapq.heappush(heap, cand)
    return None


def k_shortest_paths(adj: dict, src: str, dst: str, k: int) -> list:
    """Up to k loop-free shortest paths (Yen), edge-count length with
    lexicographic tie-breaking; returns every simple path when k exceeds the
    number available."""
    if k < 1:
        raise ValueError("k must be >= 1")
    first = _lex_shortest_path(adj, src, dst)
    if first is None:
        return []
    paths = [first]
    candidates: list = []
    seen = {tuple(first)}
    while len(paths) < k:
        prev = paths[-1]
        for i in range(len(prev) - 1):
            spur = prev[i]
            root = prev[: i + 1]
            banned_edges = set()
            for p in paths:
                if p[: i + 1] == root and len(p) > i + 1:
                    banned_edges.add((p[i], p[i + 1]))
            banned_nodes = frozenset(root[:-1])
            rest = _lex_shortest_path(adj, spur, dst, banned_nodes,
                                      frozenset(banned_edges))
            if rest is None:
                continue
            total = root[:-1] + rest
            t = tuple(total)
            if t not in seen:
                seen.add(t)
                heapq.heappush(candidates, (len(total) - 1, total))
        if not candidates:
            break
        _, nxt = heapq.heappop(candidates)
        paths.append(list(nxt))
    return paths


@dataclass
class RandomParams:
    switches: int
    degree: int
    hypervisors: int
    k: int
    switch_mbps: float = 1000.0
    nic_mbps: float = 1000.0
    vm_slots: int = 10
    queue_count: int = 8
    seed: int = 0
    max_retries: int = 50


def build_random(params: RandomParams) -> Topology:
    """Random regular-ish switch graph with hypervisors attached round-robin;
    precomputes <= k loop-free shortest paths per hypervisor pair."""
    if params.k < 1:
        raise ConstructionError("k must be >= 1")
    if params.switches < 2 or params.degree < 1:
        raise ConstructionError("need at least two switches with degree >= 1")
    rng = np.random.default_rng(params.seed)
    sw = [f"s{i:03d}" for i in range(params.switches)]
    edges = None
    for _ in range(params.max_retries):
        edges = _sample_regular_edges(sw, params.degree, rng)
        if edges is not None and _connected(sw, edges):
            break
        edges = None
    if edges is None:
        raise ConstructionError("could not sample a connected random graph")

    nodes = {s: Node(s, SWITCH, 1) for s in sw}
    links = {}
    for (u, v) in edges:
        k = link_key(u, v)
        links[k] = Link(k[0], k[1], params.switch_mbps, queue_count=params.queue_count)
    attach = {}
    for i in range(params.hypervisors):
        h = _hyp_id(i)
        s = sw[i % params.switches]
        attach[h] = s
        nodes[h] = Node(h, HYPERVISOR, 0, params.vm_slots, params.vm_slots)
        k = link_key(h, s)
        links[k] = Link(k[0], k[1], params.nic_mbps, queue_count=params.queue_count)

    sw_adj = {s: [] for s in sw}
    for (u, v) in edges:
        sw_adj[u].append(v)
        sw_adj[v].append(u)
    for s in sw_adj:
        sw_adj[s] = sorted(set(sw_adj[s]))

    path_sets = {}
    hyps = sorted(attach)
    for i, h1 in enumerate(hyps):
        for h2 in hyps[i + 1:]:
            s1, s2 = attach[h1], attach[h2]
            if s1 == s2:
                core_paths = [[s1]]
            else:
                core_paths = k_shortest_paths(sw_adj, s1, s2, params.k)
            path_sets[(h1, h2)] = [[h1] + p + [h2] for p in core_paths]

    topo = Topology(nodes, links, layer_count=2, kind="random",
                    params={"random": params.__dict__}, path_sets=path_sets)
    return topo


def _sample_regular_edges(nodes: list, degree: int, rng) -> set | None:
    stubs = [n for n in nodes for _ in range(degree)]
    rng.shuffle(stubs)
    edges = set()
    for i in range(0, len(stubs) - 1, 2):
        u, v = stubs[i], stubs[i + 1]
        if u == v or (link_key(u, v) in edges):
            return None
        edges.add(link_key(u, v))
    return edges


def _connected(nodes: list, edges: set) -> bool:
    adj = {n: [] for n in nodes}
    for (u, v) in edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(nodes)
