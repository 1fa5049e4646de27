"""Fluid (rate-based) flow-level simulator with per-link WFQ semantics.

Flows are greedy fluid streams confined to their tenant's routing tree. Rates
come from a network-wide hierarchical max-min fixed point: per directed link,
active queues split capacity in proportion to their weights with unused share
redistributed; a dedicated queue's share is divided max-min among the owning
tenant's flows; the shared queue is divided among shared tenants in proportion
to their per-link reservations, capped at each tenant's reservation.

Time advances event-driven between control-interval boundaries; at each
boundary the binding controller re-scores tenants from the interval's usage
measurements and reassigns queues.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .binding import BindingController, link_queue_weights
from .topology import Topology, link_key

BYTES_PER_MBPS_SEC = 125_000.0  # 1 Mbps moves 125 kB per second
LOOPBACK_MBPS = 100_000.0       # flows between co-located VMs
_TOL = 1e-9


def dormancy_probability(n_vm_pairs: int) -> float:
    """Probability that n independent VM pairs, each active with probability
    one half, are all dormant at once: 2**-n."""
    if n_vm_pairs < 0:
        raise ValueError("pair count must be non-negative")
    return 0.5 ** n_vm_pairs


def idealized_all_dormant_frequency(n_pairs: int, draws: int, rng) -> float:
    """Observed all-dormant frequency under the idealized equal-probability
    activity model (each pair flips a fair coin per micro-interval)."""
    if n_pairs == 0:
        return 1.0
    active = rng.integers(0, 2, size=(draws, n_pairs))
    return float(np.mean(active.sum(axis=1) == 0))


# ---------------------------------------------------------------------------
# flow-size distributions
# ---------------------------------------------------------------------------

_CDF_CACHE: dict = {}


def load_workload_cdf(name: str):
    """Piecewise log-linear CDF control points shipped with the package:
    (bytes, cumulative_probability) rows, strictly increasing in both."""
    if name in _CDF_CACHE:
        return _CDF_CACHE[name]
    try:
        text = resources.files("qshare.workloads").joinpath(f"{name}.csv").read_text()
    except FileNotFoundError:
        raise KeyError(f"unknown workload distribution: {name!r}")
    rows = list(csv.DictReader(text.splitlines()))
    pts = [(float(r["bytes"]), float(r["cumulative_probability"])) for r in rows]
    for (b0, p0), (b1, p1) in zip(pts, pts[1:]):
        if b1 <= b0 or p1 <= p0:
            raise ValueError(f"workload table {name} is not strictly increasing")
    _CDF_CACHE[name] = pts
    return pts


def sample_flow_size(distribution, rng) -> float:
    """Draw a flow size in bytes. `distribution` is "enterprise",
    "datamining", or ("fixed", bytes)."""
    if isinstance(distribution, tuple) and distribution[0] == "fixed":
        return float(distribution[1])
    pts = load_workload_cdf(distribution)
    u = rng.random()
    if u <= pts[0][1]:
        return pts[0][0]
    for (b0, p0), (b1, p1) in zip(pts, pts[1:]):
        if u <= p1:
            frac = (u - p0) / (p1 - p0)
            return math.exp(math.log(b0) + frac * (math.log(b1) - math.log(b0)))
    return pts[-1][0]


def cdf_quantile(name: str, q: float) -> float:
    """Quantile of a shipped workload table (log-linear interpolation)."""
    pts = load_workload_cdf(name)
    if q <= pts[0][1]:
        return pts[0][0]
    for (b0, p0), (b1, p1) in zip(pts, pts[1:]):
        if q <= p1:
            frac = (q - p0) / (p1 - p0)
            return math.exp(math.log(b0) + frac * (math.log(b1) - math.log(b0)))
    return pts[-1][0]


# ---------------------------------------------------------------------------
# flows and rate solving
# ---------------------------------------------------------------------------

@dataclass
class Flow:
    fid: int
    tenant: str
    src_vm: int
    dst_vm: int
    src_hyp: str
    dst_hyp: str
    size: float
    start: float
    remaining: float = 0.0
    rate: float = 0.0
    route: tuple = ()
    client: int = -1

    def __post_init__(self):
        if self.remaining == 0.0:
            self.remaining = self.size


def tenant_route(tenant, src_hyp: str, dst_hyp: str) -> tuple:
    """Directed link sequence between two hosting hypervisors inside the
    tenant's routing tree (empty when co-located)."""
    if src_hyp == dst_hyp:
        return ()
    up_src = [src_hyp] + _ancestors(tenant.tr.parent, src_hyp)
    up_dst = [dst_hyp] + _ancestors(tenant.tr.parent, dst_hyp)
    on_dst = {n: i for i, n in enumerate(up_dst)}
    for i, node in enumerate(up_src):
        if node in on_dst:
            lca = i, on_dst[node]
            break
    else:
        raise ValueError("hypervisors not connected in the routing tree")
    hops = []
    for k in range(lca[0]):
        hops.append((up_src[k], up_src[k + 1]))
    for k in range(lca[1], 0, -1):
        hops.append((up_dst[k], up_dst[k - 1]))
    return tuple(hops)


def _ancestors(parent: dict, node: str) -> list:
    out = []
    u = parent.get(node)
    while u is not None:
        out.append(u)
        u = parent.get(u)
    return out


def _water_fill(total: float, caps: list) -> list:
    """Equal-share max-min of `total` among entries capped at caps[i]."""
    n = len(caps)
    out = [0.0] * n
    remaining = total
    order = sorted(range(n), key=lambda i: caps[i])
    active = n
    for idx, i in enumerate(order):
        if remaining <= 0:
            break
        share = remaining / active
        give = min(caps[i], share)
        out[i] = give
        remaining -= give
        active -= 1
    return out


def _weighted_fill(total: float, weights: list, caps: list) -> list:
    """Weighted max-min of `total` with per-entry caps; surplus from capped
    entries is redistributed in proportion to the remaining weights."""
    n = len(weights)
    out = [0.0] * n
    remaining = total
    wsum = math.fsum(weights)
    order = sorted(range(n), key=lambda i: (caps[i] / weights[i]) if weights[i] > 0 else 0.0)
    for i in order:
        if wsum <= 0 or remaining <= 0:
            break
        give = min(caps[i], remaining * weights[i] / wsum)
        out[i] = give
        remaining -= give
        wsum -= weights[i]
    return out


def _lift_level(total: float, other_caps: list) -> float:
    """Max-min share of one greedy entry among others capped at other_caps,
    all with equal weight: the water level of `total` split equally with
    capped surplus redistributed."""
    rem = total
    k = len(other_caps) + 1
    for c in sorted(other_caps):
        if c * k <= rem:
            rem -= c
            k -= 1
        else:
            break
    return max(rem / k, 0.0)


def _lift_levels(total: float, caps: list) -> list:
    """_lift_level for every entry at once: out[i] is the water level when
    entry i is greedy and the others keep their caps."""
    n = len(caps)
    if n == 1:
        return [max(total, 0.0)]
    order = sorted(range(n), key=lambda i: caps[i])
    S = [caps[i] for i in order]
    P = [0.0] * (n + 1)
    for j in range(n):
        P[j + 1] = P[j] + S[j]
    out = [0.0] * n
    for rank, idx in enumerate(order):
        def satsum(k):
            return P[k] if k <= rank else P[k + 1] - S[rank]

        def nth(k):
            j = k if k < rank else k + 1
            return S[j]

        lo, hi = 0, n - 1  # number of saturated others
        while lo < hi:
            mid = (lo + hi) // 2
            level = (total - satsum(mid)) / (n - mid)
            if nth(mid) < level - 1e-15:
                lo = mid + 1
            else:
                hi = mid
        out[idx] = max((total - satsum(lo)) / (n - lo), 0.0)
    return out


def _weighted_lift(total: float, weight: float, cap: float,
                   other_weights: list, other_caps: list) -> float:
    """Share of one entry with demand lifted to `cap` under weighted max-min
    against capped others."""
    weights = [weight] + list(other_weights)
    caps = [cap] + list(other_caps)
    return _weighted_fill(total, weights, caps)[0]


class LinkQueueView:
    """Queue structure of one undirected link under the current binding."""

    def __init__(self, ukey, link, owners: set, weight_mode: str):
        self.ukey = ukey
        self.capacity = link.capacity
        self.reservations = dict(link.reservations)
        self.owners = set(owners) & set(link.reservations)
        weights = link_queue_weights(link, owners)
        col = 0 if weight_mode == "normalized" else 1
        self.qweights = {qid: w[col] for qid, w in weights.items()}

    def tenant_queue(self, tenant: str):
        return ("dedicated", tenant) if tenant in self.owners else ("shared",)


class RateSolver:
    """Iterative per-link water-filling toward the network-wide fixed point.

    mode "wfq": hierarchical WFQ with work conservation and shared-queue caps.
    mode "static": every tenant hard-capped at its per-link reservation, no
    redistribution of unused capacity.
    """

    def __init__(self, topo: Topology, mode: str = "wfq",
                 weight_mode: str = "normalized"):
        self.topo = topo
        self.mode = mode
        self.weight_mode = weight_mode
        self.views: dict = {}

    def rebuild(self, owners_by_link: dict) -> None:
        self.views = {}
        for ukey, link in self.topo.links.items():
            owners = owners_by_link.get(ukey, set())
            self.views[ukey] = LinkQueueView(ukey, link, owners, self.weight_mode)

    def solve(self, flows: list) -> None:
        """Set flow.rate for every flow in place.

        Iterative water-filling toward the hierarchical max-min fixed point:
        each sweep computes per-link *lifted grants* (the share a flow would
        receive there if it alone were greedy, everyone else consuming their
        current rates) and updates every flow's rate to the minimum grant over
        its path. A final capped pass projects the result onto link
        capacities.
        """
        routed = [f for f in flows if f.route]
        for f in flows:
            if not f.route:
                f.rate = LOOPBACK_MBPS
        if not routed:
            return
        flow_links: dict = {f.fid: f.route for f in routed}
        by_link: dict = {}
        for f in routed:
            for dkey in f.route:
                by_link.setdefault(dkey, []).append(f)
        for members in by_link.values():
            members.sort(key=lambda f: f.fid)
        link_order = sorted(by_link)
        rates = {f.fid: math.inf for f in routed}
        for _ in range(max(10 * len(link_order), 8)):
            grants = {dkey: self._grants(dkey, by_link[dkey], rates)
                      for dkey in link_order}
            new_rates = {
                f.fid: min(grants[dk][f.fid] for dk in flow_links[f.fid])
                for f in routed}
            delta = max(
                abs(new_rates[fid] - rates[fid]) / max(new_rates[fid], 1e-9)
                if math.isfinite(rates[fid]) else math.inf
                for fid in new_rates)
            rates = new_rates
            if delta < _TOL:
                break
        for _ in range(2):
            alloc = {dkey: self._alloc(dkey, by_link[dkey], rates)
                     for dkey in link_order}
            rates = {f.fid: min(alloc[dk][f.fid] for dk in flow_links[f.fid])
                     for f in routed}
        for f in routed:
            f.rate = rates[f.fid]

    def _alloc(self, dkey, members: list, caps: dict) -> dict:
        view = self.views[link_key(*dkey)]
        C = view.capacity
        if self.mode == "static":
            return self._alloc_static(view, members, caps)
        by_queue: dict = {}
        for f in members:
            by_queue.setdefault(view.tenant_queue(f.tenant), []).append(f)
        qids = sorted(by_queue)
        qweights, qdemands, internal = [], [], []
        for qid in qids:
            qflows = by_queue[qid]
            if qid[0] == "dedicated":
                demand = math.fsum(min(caps[f.fid], C) for f in qflows)
                internal.append(("flows", qflows))
            else:
                tenants: dict = {}
                for f in qflows:
                    tenants.setdefault(f.tenant, []).append(f)
                tdem = {
                    t: min(math.fsum(min(caps[f.fid], C) for f in fl),
                           view.reservations.get(t, 0.0))
                    for t, fl in tenants.items()
                }
                demand = math.fsum(tdem.values())
                internal.append(("tenants", tenants, tdem))
            qweights.append(max(view.qweights.get(qid, 0.0), 1e-12))
            qdemands.append(demand)
        shares = _weighted_fill(C, qweights, qdemands)
        out = {}
        for qid, share, inner in zip(qids, shares, internal):
            if inner[0] == "flows":
                qflows = inner[1]
                fills = _water_fill(share, [min(caps[f.fid], C) for f in qflows])
                for f, r in zip(qflows, fills):
                    out[f.fid] = r
            else:
                tenants, tdem = inner[1], inner[2]
                tlist = sorted(tenants)
                tweights = [max(view.reservations.get(t, 0.0), 1e-12) for t in tlist]
                tshares = _weighted_fill(share, tweights, [tdem[t] for t in tlist])
                for t, ts in zip(tlist, tshares):
                    qflows = tenants[t]
                    fills = _water_fill(ts, [min(caps[f.fid], C) for f in qflows])
                    for f, r in zip(qflows, fills):
                        out[f.fid] = r
        return out

    def _alloc_static(self, view, members: list, caps: dict) -> dict:
        tenants: dict = {}
        for f in members:
            tenants.setdefault(f.tenant, []).append(f)
        out = {}
        for t, qflows in sorted(tenants.items()):
            cap_t = view.reservations.get(t, 0.0)
            fills = _water_fill(cap_t, [min(caps[f.fid], view.capacity)
                                        for f in qflows])
            for f, r in zip(qflows, fills):
                out[f.fid] = r
        return out

    def _grants(self, dkey, members: list, rates: dict) -> dict:
        """Per-flow lifted grants at one directed link: the share each flow
        would receive if it alone were greedy while every other flow consumed
        its current rate. Shared tenants stay capped at their per-link
        reservation (a policy cap, never lifted)."""
        view = self.views[link_key(*dkey)]
        C = view.capacity
        cap = {f.fid: min(rates.get(f.fid, math.inf), C) for f in members}
        out: dict = {}
        if self.mode == "static":
            tenants: dict = {}
            for f in members:
                tenants.setdefault(f.tenant, []).append(f)
            for t, qflows in sorted(tenants.items()):
                cap_t = view.reservations.get(t, 0.0)
                levels = _lift_levels(cap_t, [cap[f.fid] for f in qflows])
                for f, lvl in zip(qflows, levels):
                    out[f.fid] = min(lvl, cap_t)
            return out
        by_queue: dict = {}
        for f in members:
            by_queue.setdefault(view.tenant_queue(f.tenant), []).append(f)
        qids = sorted(by_queue)
        qweights, qdemands = [], []
        tenant_dem: dict = {}
        for qid in qids:
            qflows = by_queue[qid]
            if qid[0] == "dedicated":
                demand = math.fsum(cap[f.fid] for f in qflows)
            else:
                groups: dict = {}
                for f in qflows:
                    groups.setdefault(f.tenant, []).append(f)
                for t, fl in groups.items():
                    tenant_dem[t] = min(math.fsum(cap[f.fid] for f in fl),
                                        view.reservations.get(t, 0.0))
                demand = math.fsum(tenant_dem[t] for t in groups)
            qweights.append(max(view.qweights.get(qid, 0.0), 1e-12))
            qdemands.append(demand)
        for qi, qid in enumerate(qids):
            qflows = by_queue[qid]
            other_w = qweights[:qi] + qweights[qi + 1:]
            other_d = qdemands[:qi] + qdemands[qi + 1:]
            if qid[0] == "dedicated":
                # a greedy member makes the whole queue greedy
                u_q = _weighted_lift(C, qweights[qi], C, other_w, other_d)
                levels = _lift_levels(u_q, [cap[f.fid] for f in qflows])
                for f, lvl in zip(qflows, levels):
                    out[f.fid] = lvl
            else:
                groups: dict = {}
                for f in qflows:
                    groups.setdefault(f.tenant, []).append(f)
                tlist = sorted(groups)
                for t in tlist:
                    g_t = view.reservations.get(t, 0.0)
                    # lifting one flow lifts its tenant's demand to the cap
                    d_lift = qdemands[qi] - tenant_dem[t] + g_t
                    v_t = _weighted_lift(C, qweights[qi], d_lift,
                                         other_w, other_d)
                    ow = [max(view.reservations.get(x, 0.0), 1e-12)
                          for x in tlist if x != t]
                    od = [tenant_dem[x] for x in tlist if x != t]
                    t_share = _weighted_lift(v_t, max(g_t, 1e-12), g_t, ow, od)
                    levels = _lift_levels(t_share,
                                          [cap[f.fid] for f in groups[t]])
                    for f, lvl in zip(groups[t], levels):
                        out[f.fid] = min(lvl, g_t)
        return out


# ---------------------------------------------------------------------------
# demand generation
# ---------------------------------------------------------------------------

@dataclass
class ClientSpec:
    tenant: str
    vm: int
    hyp: str
    start: float
    stop: float = math.inf
    mode: str | None = None
    flow_sizes: object = None
    concurrency: int = 1
    peer_vms: tuple | None = None
    size_scale: float | None = None


@dataclass
class DemandGenerator:
    """Per-VM clients request flow transfers from randomly chosen peer VMs of
    the same tenant (data flows peer -> client). Modes:

    predictable: back-to-back flows for the client's whole active window.
    unpredictable: after each flow the client flips a coin between starting
    the next flow immediately and sleeping uniform [0, dormancy] seconds.
    shuffle: like predictable, but the client cycles deterministically through
    every peer VM (transfer-from-all-servers pattern).

    Every client draws from its own seeded stream, so a client's i-th request
    has the same size and peer under any rate policy.
    """

    mode: str
    flow_sizes: object
    dormancy: float = 1.0
    seed: int = 0
    size_scale: float = 1.0
    clients: list = field(default_factory=list)

    def __post_init__(self):
        self._rngs = [np.random.default_rng([self.seed, 0xC11E, i])
                      for i in range(len(self.clients))]
        self._cursor = [0] * len(self.clients)

    def start_events(self) -> list:
        return [(c.start, ("activate", i))
                for i, c in enumerate(self.clients)
                for _ in range(c.concurrency)]

    def next_flow(self, sim, idx: int, now: float):
        c = self.clients[idx]
        if now >= c.stop:
            return None
        tenant = sim.tenants[c.tenant]
        vms = sim.vm_map[c.tenant]
        if c.peer_vms is not None:
            peers = [v for v in c.peer_vms if v != c.vm]
        else:
            peers = [v for v in range(len(vms)) if v != c.vm]
        if not peers:
            return None
        rng = self._rngs[idx]
        mode = c.mode or self.mode
        if mode == "shuffle":
            # staggered start so concurrent clients fan out across sources
            if self._cursor[idx] == 0:
                self._cursor[idx] = c.vm
            src = peers[self._cursor[idx] % len(peers)]
            self._cursor[idx] += 1
        else:
            src = peers[int(rng.integers(0, len(peers)))]
        size = sample_flow_size(c.flow_sizes or self.flow_sizes, rng)
        scale = c.size_scale if c.size_scale is not None else self.size_scale
        return Flow(
            fid=sim.next_fid(), tenant=c.tenant,
            src_vm=src, dst_vm=c.vm,
            src_hyp=vms[src], dst_hyp=vms[c.vm],
            size=size * scale, start=now,
            route=tenant_route(tenant, vms[src], vms[c.vm]),
            client=idx,
        )

    def after_completion(self, idx: int, now: float) -> float:
        """Next request time for the client whose flow just finished."""
        c = self.clients[idx]
        mode = c.mode or self.mode
        if mode in ("predictable", "shuffle"):
            return now
        rng = self._rngs[idx]
        if rng.random() < 0.5:
            return now
        return now + rng.uniform(0.0, self.dormancy)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass
class IntervalReport:
    index: int
    start: float
    end: float
    link_util: dict
    tenant_throughput_mbps: dict
    usage: dict
    fcts: list
    scores: dict

    def max_utilization(self) -> float:
        return max((max(series) for series in self.link_util.values()),
                   default=0.0)


@dataclass
class SegmentStats:
    """Online acceptance checks on one monitored directed link, evaluated per
    piecewise-constant rate segment.

    A tenant's entitled bandwidth on the link during a segment is the hose
    bound: min(reservation on the link, sum of its hose guarantees at the
    engaged source hypervisors, same at the engaged destinations). A tenant
    engaging every hypervisor it occupies is entitled to its full link
    reservation.
    """

    dkey: tuple
    capacity: float
    guarantees: dict
    nic_guarantees: dict
    time_active: float = 0.0
    time_total: float = 0.0
    busy_time: float = 0.0
    guarantee_violation_time: float = 0.0
    conservation_violation_time: float = 0.0
    violating_tenants: set = field(default_factory=set)

    def entitlement(self, tenant: str, srcs: set, dsts: set) -> float:
        out = math.fsum(self.nic_guarantees.get((tenant, h), 0.0) for h in srcs)
        inn = math.fsum(self.nic_guarantees.get((tenant, h), 0.0) for h in dsts)
        return min(self.guarantees.get(tenant, 0.0), out, inn)

    def observe(self, t0: float, t1: float, flows: list, owners: set,
                all_unsaturated) -> None:
        dt = t1 - t0
        if dt <= 0:
            return
        self.time_total += dt
        per_tenant: dict = {}
        total = 0.0
        for f in flows:
            if self.dkey in f.route:
                rate, srcs, dsts = per_tenant.setdefault(
                    f.tenant, [0.0, set(), set()])
                per_tenant[f.tenant][0] += f.rate
                srcs.add(f.src_hyp)
                dsts.add(f.dst_hyp)
                total += f.rate
        if not per_tenant:
            return
        self.time_active += dt
        util = total / self.capacity
        if util >= 1.0 - 1e-6:
            self.busy_time += dt
        else:
            for f in flows:
                if self.dkey in f.route and f.tenant in owners:
                    if all_unsaturated(f, self.dkey):
                        self.conservation_violation_time += dt
                        break
        for tenant, (rate, srcs, dsts) in per_tenant.items():
            entitled = self.entitlement(tenant, srcs, dsts)
            if entitled > 0 and rate < entitled * (1.0 - 1e-6):
                self.guarantee_violation_time += dt
                self.violating_tenants.add(tenant)


class FluidSimulation:
    """Event-driven control loop over an embedded tenant set."""

    def __init__(self, topo: Topology, tenants: dict, generator: DemandGenerator,
                 *, interval: float = 4.0, policy: str = "qshare",
                 weight_mode: str = "normalized", seed: int = 0,
                 monitor: tuple | None = None, sample: float = 0.1,
                 initial_dedicated: list | None = None,
                 rate_hook=None, quantum: float | None = None):
        self.topo = topo
        self.tenants = tenants
        self.generator = generator
        self.interval = interval
        self.policy = policy
        self.seed = seed
        self.sample = sample
        self.rate_hook = rate_hook
        self.quantum = quantum
        self.rng = np.random.default_rng([seed, 0xB1ED])
        self.vm_map = {tid: _expand_vms(t) for tid, t in tenants.items()}
        self.controller = BindingController(
            queue_count=max((l.queue_count for l in topo.links.values()), default=8))
        self.solver = RateSolver(topo, mode="static" if policy == "static" else "wfq",
                                 weight_mode=weight_mode)
        if initial_dedicated:
            for tid in initial_dedicated:
                self.controller.state.enqueue(tenants[tid])
            for tid, t in tenants.items():
                t.state = "dedicated" if tid in self.controller.state.dedicated else "shared"
        self.solver.rebuild(self.controller.state.owners)
        self.monitor = monitor
        self.flows: dict = {}
        self.completed: list = []
        self._fid = 0
        self.reports: list = []
        self.stats: SegmentStats | None = None
        if monitor is not None:
            ukey = link_key(*monitor)
            nic_g = {}
            for tid, t in tenants.items():
                n = t.request.vm_count
                for hyp, m in t.vm_placement.items():
                    nic_g[(tid, hyp)] = t.request.per_vm_guarantee * min(m, n - m)
            self.stats = SegmentStats(
                monitor, topo.links[ukey].capacity,
                {tid: topo.links[ukey].reservations.get(tid, 0.0)
                 for tid in tenants}, nic_g)

    def next_fid(self) -> int:
        self._fid += 1
        return self._fid

    # -- event loop ----------------------------------------------------
    def run(self, duration: float, warmup_intervals: int = 0) -> list:
        events: list = []
        seq = 0
        for when, ev in self.generator.start_events():
            seq += 1
            heapq.heappush(events, (when, seq, ev))
        t = 0.0
        horizon = warmup_intervals * self.interval + duration
        interval_idx = 0
        int_start = 0.0
        next_quantum = self.quantum if self.quantum is not None else math.inf
        usage: dict = {}
        buckets: dict = {}
        ten_bytes: dict = {}
        fcts: list = []
        dirty = True
        while t < horizon - _TOL:
            if dirty:
                self._resolve(t)
                dirty = False
            t_next = min(int_start + self.interval, next_quantum, horizon)
            if events:
                t_next = min(t_next, events[0][0])
            for f in self.flows.values():
                if f.rate > 0:
                    t_done = t + f.remaining / (f.rate * BYTES_PER_MBPS_SEC)
                    if t_done < t_next:
                        t_next = t_done
            t_next = max(t_next, t)
            self._advance(t, t_next, usage, buckets, ten_bytes)
            if self.stats is not None:
                self.stats.observe(t, t_next, list(self.flows.values()),
                                   self.controller.state.dedicated,
                                   self._all_unsaturated)
            t = t_next
            done = [f for f in self.flows.values()
                    if f.rate > 0 and f.remaining <= 1e-6]
            for f in sorted(done, key=lambda f: f.fid):
                del self.flows[f.fid]
                fcts.append((f.fid, f.tenant, f.size, f.start, t - f.start, f.client))
                nxt = self.generator.after_completion(f.client, t)
                seq += 1
                heapq.heappush(events, (nxt, seq, ("request", f.client)))
                dirty = True
            while events and events[0][0] <= t + _TOL:
                _, _, ev = heapq.heappop(events)
                if self._handle_event(ev, t):
                    dirty = True
            if t >= next_quantum - _TOL:
                if self.rate_hook is not None:
                    self.rate_hook.on_quantum(self, t)
                next_quantum += self.quantum
                dirty = True
            if t >= int_start + self.interval - _TOL and t < horizon - _TOL:
                interval_idx += 1
                self._interval_boundary(interval_idx, int_start, t, usage,
                                        buckets, ten_bytes, fcts)
                int_start = t
                usage, buckets, ten_bytes, fcts = {}, {}, {}, []
                dirty = True
        if usage or buckets or fcts or self.flows:
            interval_idx += 1
            self._interval_boundary(interval_idx, int_start, t, usage, buckets,
                                    ten_bytes, fcts, rebind=False)
        return self.reports

    def _handle_event(self, ev, t: float) -> bool:
        kind = ev[0]
        if kind in ("activate", "request"):
            idx = ev[1]
            flow = self.generator.next_flow(self, idx, t)
            if flow is not None:
                flow.client = idx
                self.flows[flow.fid] = flow
                return True
        return False

    def _resolve(self, t: float) -> None:
        flows = sorted(self.flows.values(), key=lambda f: f.fid)
        if self.rate_hook is not None:
            self.rate_hook.compute(self, flows, t)
        else:
            self.solver.solve(flows)

    def _advance(self, t0: float, t1: float, usage, buckets, ten_bytes) -> None:
        dt = t1 - t0
        if dt <= 0:
            return
        for f in self.flows.values():
            moved = f.rate * BYTES_PER_MBPS_SEC * dt
            f.remaining = max(f.remaining - moved, 0.0)
            u = usage.setdefault(f.tenant, {})
            src = u.setdefault(f.src_hyp, [0.0, 0.0])
            src[1] += moved
            dst = u.setdefault(f.dst_hyp, [0.0, 0.0])
            dst[0] += moved
            for dkey in f.route:
                _bucketize(buckets.setdefault(dkey, {}), t0, t1,
                           f.rate, self.sample)
            if self.monitor is not None and self.monitor in f.route:
                _bucketize(ten_bytes.setdefault(f.tenant, {}), t0, t1,
                           f.rate, self.sample)

    def _all_unsaturated(self, flow, excluding) -> bool:
        for dkey in flow.route:
            if dkey == excluding:
                continue
            total = sum(f.rate for f in self.flows.values() if dkey in f.route)
            if total >= self.topo.links[link_key(*dkey)].capacity * (1 - 1e-6):
                return False
        return True

    def _interval_boundary(self, idx, start, end, usage, buckets, ten_bytes,
                           fcts, rebind: bool = True) -> None:
        seconds = max(end - start, 1e-12)
        usage_mbps = {
            tid: {hyp: (io[0] / BYTES_PER_MBPS_SEC / seconds,
                        io[1] / BYTES_PER_MBPS_SEC / seconds)
                  for hyp, io in hyps.items()}
            for tid, hyps in usage.items()
        }
        link_util = {
            dkey: [mbps / self.topo.links[link_key(*dkey)].capacity
                   for mbps in _bucket_series(b, start, end, self.sample)]
            for dkey, b in buckets.items()
        }
        throughput = {
            tid: _bucket_series(b, start, end, self.sample)
            for tid, b in ten_bytes.items()
        }
        scores = {}
        if rebind and self.policy == "qshare":
            results = self.controller.run_interval(self.tenants, usage_mbps,
                                                   self.rng)
            scores = {tid: (r.u_factor, r.score) for tid, r in results.items()}
            self.solver.rebuild(self.controller.state.owners)
        self.reports.append(IntervalReport(
            idx, start, end, link_util, throughput, usage_mbps, fcts, scores))


def _expand_vms(tenant) -> list:
    vms = []
    for hyp in sorted(tenant.vm_placement):
        vms.extend([hyp] * tenant.vm_placement[hyp])
    return vms


def _bucketize(bucket: dict, t0: float, t1: float, rate_mbps: float,
               sample: float) -> None:
    """Integrate rate over [t0, t1) into fixed-width sample buckets (bytes)."""
    i = math.floor(t0 / sample + 1e-12)
    while True:
        edge = (i + 1) * sample
        hi = min(edge, t1)
        lo = max(i * sample, t0)
        if hi > lo:
            bucket[i] = bucket.get(i, 0.0) + rate_mbps * BYTES_PER_MBPS_SEC * (hi - lo)
        if edge >= t1 - 1e-15:
            break
        i += 1


def _bucket_series(bucket: dict, start: float, end: float, sample: float) -> list:
    i0 = math.floor(start / sample + 1e-12)
    i1 = max(math.ceil(end / sample - 1e-12), i0 + 1)
    out = []
    for i in range(i0, i1):
        width = min((i + 1) * sample, end) - max(i * sample, start)
        width = max(width, 1e-12)
        out.append(bucket.get(i, 0.0) / BYTES_PER_MBPS_SEC / width)
    return out


def make_clients(tenants: dict, vm_map: dict, *, client_hyps=None,
                 activations=None, concurrency: int = 1) -> list:
    """One client per VM (optionally restricted to VMs on `client_hyps`),
    activated per the tenant's entry in `activations` (default 0.0). Each
    client keeps `concurrency` outstanding transfer requests."""
    activations = activations or {}
    clients = []
    for tid in sorted(tenants):
        start = activations.get(tid, 0.0)
        if start is None:
            continue
        stop = math.inf
        if isinstance(start, tuple):
            start, stop = start
        for vm, hyp in enumerate(vm_map[tid]):
            if client_hyps is not None and hyp not in client_hyps:
                continue
            clients.append(ClientSpec(tid, vm, hyp, start, stop,
                                      concurrency=concurrency))
    return clients


def run_control_loop(topo, tenants, generator, **kwargs) -> list:
    """Convenience wrapper: build the simulation and run it."""
    duration = kwargs.pop("duration", 10.0)
    warmup = kwargs.pop("warmup_intervals", 0)
    sim = FluidSimulation(topo, tenants, generator, **kwargs)
    return sim.run(duration, warmup_intervals=warmup)
