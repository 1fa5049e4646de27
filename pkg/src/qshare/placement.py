"""Balanced tenant placement: layered routing-tree exploration, optimal VM
allocation, and candidate election on combined bandwidth/queue cost.

Exploration starts at the lowest switch layer and returns the cheapest
feasible candidate at the first layer that has one, so tenants stay as low in
the tree as resources allow. Feasibility of a routing-tree option is decided
by computing a minimum-reservation VM allocation for it.

The allocation itself is an exact dynamic program over the tree (min-plus
convolution on VM counts) rather than a largest-first greedy: the greedy is
not optimal once a tree has two switch levels, and the test suite holds this
module to an exhaustive-search oracle. Hypervisor usable-slot semantics
(free slots intersected with what the root path can absorb) are preserved,
and `usable_vm_slots` exposes them directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tenants import Tenant, TenantRequest, TenantRouting, cut_reservation
from .topology import Topology, TRSkeleton, link_key, trs_at_layer

_EPS = 1e-9


@dataclass
class CostPolicy:
    """Weights for combined candidate cost w_b * c_b_hat + w_q * c_q_hat.

    With both weights None the policy is load-adaptive: w_b = load and
    w_q = 1 - load, where load is the reserved fraction of total capacity.
    """

    w_b: float | None = None
    w_q: float | None = None

    def weights(self, load: float) -> tuple[float, float]:
        if self.w_b is None and self.w_q is None:
            return load, 1.0 - load
        wb = self.w_b or 0.0
        wq = self.w_q or 0.0
        if wb < 0 or wq < 0 or (wb == 0 and wq == 0):
            raise ValueError("cost weights must be non-negative, not both zero")
        return wb, wq

    @staticmethod
    def stress() -> "CostPolicy":
        """Queue-balancing stress mode: c_q dominates the election."""
        return CostPolicy(w_b=0.01, w_q=1.0)

    @staticmethod
    def bandwidth_first() -> "CostPolicy":
        return CostPolicy(w_b=1.0, w_q=0.01)


@dataclass
class TrEvaluation:
    feasible: bool
    placement: dict | None = None
    c_b: float = 0.0
    c_q: int = 0
    pruned_links: tuple = ()
    reserved: dict | None = None
    parent: dict | None = None
    root: str = ""
    layer: int = 0


@dataclass
class PlacementOutcome:
    feasible: bool
    tenant: Tenant | None = None
    layer: int = 0
    candidates: int = 0
    ops: int = 0
    error: str | None = None


class _EpisodeContext:
    """Per-embed cache: subtree profiles keyed by node id (valid because the
    downward closure of a node is identical in every tree-mode skeleton)."""

    def __init__(self, topo: Topology, request: TenantRequest):
        self.topo = topo
        self.request = request
        self.n = request.vm_count
        self.b = request.per_vm_guarantee
        self.ha = request.per_hypervisor_cap
        self.profiles: dict[str, tuple] = {}
        self.ops = 0
        self.memo_ok = topo.kind == "tree"

    def hyp_cap(self, hyp: str) -> int:
        """Per-hypervisor VM cap from free slots and the fault-domain limit."""
        nd = self.topo.nodes[hyp]
        return max(min(nd.vm_slots_free, self.ha, self.n), 0)


def _leaf_indices(topo: Topology, skel: TRSkeleton) -> np.ndarray:
    idx = getattr(skel, "_leaf_idx", None)
    if idx is None:
        idx = np.array([topo.hyp_index[h] for h in skel.leaves], dtype=np.int64)
        skel._leaf_idx = idx
    return idx


def _edge_cost_vector(n: int, b: float, residual: float) -> np.ndarray:
    j = np.arange(n + 1)
    cost = b * np.minimum(j, n - j).astype(float)
    cost[cost > residual + _EPS * max(residual, 1.0)] = np.inf
    return cost


def _minplus(G: np.ndarray, H: np.ndarray, ctx: _EpisodeContext):
    """Min-plus convolution restricted to 0..N; argmin prefers the smallest
    contribution from H for determinism."""
    n = len(G)
    out = np.full(n, np.inf)
    arg = np.zeros(n, dtype=np.int32)
    ctx.ops += n
    for j in np.flatnonzero(np.isfinite(H)):
        cand = G[: n - j] + H[j]
        seg = out[j:]
        better = cand < seg
        if better.any():
            seg[better] = cand[better]
            arg[j:][better] = j
    return out, arg


def _star_profile(ctx: _EpisodeContext, hyps: list, nic_residuals: list):
    """Closed-form profile for a switch whose children are all hypervisors.

    For j VMs inside the star the internal cost is B*(j - m + min(m, N - m))
    where m is the count on a designated hypervisor; cost is minimized by the
    largest admissible m, trying every hypervisor as the designee.
    """
    n, b, ha = ctx.n, ctx.b, ctx.ha
    h = len(hyps)
    upper = np.array([ctx.hyp_cap(x) for x in hyps], dtype=np.int64)
    if b > 0:
        a = np.floor(np.array(nic_residuals) / b + _EPS).astype(np.int64)
    else:
        a = np.full(h, n, dtype=np.int64)
    a = np.minimum(a, n)
    gap = 2 * a < n  # NIC window is split: m <= a or m >= n - a
    cap_low = np.where(gap, np.minimum(upper, a), upper)
    total_low = int(cap_low.sum())
    rest = total_low - cap_low

    js = np.arange(n + 1)
    F = np.full(n + 1, np.inf)
    best_h = np.full(n + 1, -1, dtype=np.int32)
    best_m = np.zeros(n + 1, dtype=np.int32)
    ctx.ops += h * (n + 1)
    for i in range(h):
        hi = np.minimum(upper[i], js)
        if gap[i]:
            m = np.where(hi >= n - a[i], hi, np.minimum(hi, a[i]))
        else:
            m = hi
        feas = (js - m) <= rest[i]
        cost = b * (js - m + np.minimum(m, n - m))
        cost = np.where(feas, cost, np.inf)
        better = cost < F
        F[better] = cost[better]
        best_h[better] = i
        best_m[better] = m[better]
    recon = ("star", hyps, best_h, best_m, cap_low)
    return F, recon


def _reconstruct(ctx: _EpisodeContext, node: str, j: int, placement: dict) -> None:
    kind = ctx.profiles[node][1][0]
    recon = ctx.profiles[node][1]
    if j == 0:
        return
    if kind == "leaf":
        placement[node] = placement.get(node, 0) + j
    elif kind == "star":
        _, hyps, best_h, best_m, cap_low = recon
        i = int(best_h[j])
        m = int(best_m[j])
        placement[hyps[i]] = placement.get(hyps[i], 0) + m
        left = j - m
        for k, hx in enumerate(hyps):
            if left == 0:
                break
            if k == i:
                continue
            take = min(left, int(cap_low[k]))
            if take:
                placement[hx] = placement.get(hx, 0) + take
                left -= take
        if left:
            raise AssertionError("star reconstruction failed")
    else:
        _, children, args = recon
        t = j
        for child, arg in zip(reversed(children), reversed(args)):
            jc = int(arg[t])
            _reconstruct(ctx, child, jc, placement)
            t -= jc
        if t != 0:
            raise AssertionError("merge reconstruction failed")


def _subtree_profile(ctx: _EpisodeContext, skel: TRSkeleton, node: str):
    if ctx.memo_ok and node in ctx.profiles:
        return ctx.profiles[node][0]
    topo, n = ctx.topo, ctx.n
    children = skel.children[node]
    nd = topo.nodes[node]
    if nd.is_hypervisor():
        cap = ctx.hyp_cap(node)
        F = np.full(n + 1, np.inf)
        F[: cap + 1] = 0.0
        ctx.profiles[node] = (F, ("leaf",))
        return F
    if children and all(topo.nodes[c].is_hypervisor() for c in children):
        residuals = [topo.link(node, c).residual for c in children]
        F, recon = _star_profile(ctx, list(children), residuals)
        ctx.profiles[node] = (F, recon)
        return F
    G = np.full(n + 1, np.inf)
    G[0] = 0.0
    args = []
    for c in children:
        Fc = _subtree_profile(ctx, skel, c)
        H = Fc + _edge_cost_vector(n, ctx.b, topo.link(node, c).residual)
        G, arg = _minplus(G, H, ctx)
        args.append(arg)
    ctx.profiles[node] = (G, ("merge", list(children), args))
    return G


def evaluate_tr(topo: Topology, skel: TRSkeleton, request: TenantRequest,
                ctx: _EpisodeContext | None = None) -> TrEvaluation:
    """Feasibility plus (c_b, c_q) for one routing-tree option."""
    if ctx is None:
        ctx = _EpisodeContext(topo, request)
    if not ctx.memo_ok:
        ctx.profiles.clear()
    n = request.vm_count
    idx = _leaf_indices(topo, skel)
    usable = np.minimum(topo._free_arr[idx], ctx.ha)
    ctx.ops += len(skel.order)
    if int(usable.sum()) < n:
        return TrEvaluation(False, root=skel.root,
                            layer=topo.nodes[skel.root].layer)
    F = _subtree_profile(ctx, skel, skel.root)
    if not np.isfinite(F[n]):
        return TrEvaluation(False, root=skel.root,
                            layer=topo.nodes[skel.root].layer)
    placement: dict[str, int] = {}
    _reconstruct(ctx, skel.root, n, placement)
    placement = {h: m for h, m in placement.items() if m > 0}

    below: dict[str, int] = {}
    pruned_nodes = {skel.root}
    for h, m in placement.items():
        u = h
        while u not in pruned_nodes:
            below[u] = below.get(u, 0) + m
            pruned_nodes.add(u)
            u = skel.parent[u]
        while u is not None:
            below[u] = below.get(u, 0) + m
            u = skel.parent[u]
    pruned_links = []
    reserved = {}
    parent = {skel.root: None}
    for u in sorted(pruned_nodes - {skel.root}):
        p = skel.parent[u]
        key = link_key(u, p)
        pruned_links.append(key)
        reserved[key] = cut_reservation(request, below[u])
        parent[u] = p
    c_b = math.fsum(reserved.values())
    if not math.isclose(c_b, float(F[n]), rel_tol=1e-9, abs_tol=1e-6):
        raise AssertionError(f"allocation cost mismatch: {c_b} vs {F[n]}")
    c_q = 0
    for key in pruned_links:
        c_q = max(c_q, topo.links[key].tenant_count() + 1)
    if not pruned_links:
        c_q = 1
    return TrEvaluation(True, placement, c_b, c_q, tuple(pruned_links), reserved,
                        parent, skel.root, topo.nodes[skel.root].layer)


def optimal_allocation(topo: Topology, skel: TRSkeleton,
                       request: TenantRequest) -> dict | None:
    """Minimum-reservation VM allocation on one routing tree, or None."""
    ev = evaluate_tr(topo, skel, request)
    return ev.placement if ev.feasible else None


def usable_vm_slots(topo: Topology, skel: TRSkeleton, request: TenantRequest,
                    hyp: str, partial: dict | None = None) -> int:
    """Largest VM count the hypervisor can take given its free slots, the
    fault-domain cap, and what its root path can absorb on top of a partial
    placement (VMs placed so far count toward the far side of each cut)."""
    partial = partial or {}
    nd = topo.nodes[hyp]
    n, b, ha = request.vm_count, request.per_vm_guarantee, request.per_hypervisor_cap
    cap = min(nd.vm_slots_free, ha - partial.get(hyp, 0),
              n - sum(partial.values()))
    cap = max(cap, 0)

    def leaves_under(u: str) -> list:
        out, stack = [], [u]
        while stack:
            x = stack.pop()
            if topo.nodes[x].is_hypervisor():
                out.append(x)
            stack.extend(skel.children[x])
        return out

    path = []
    u = hyp
    while skel.parent[u] is not None:
        p = skel.parent[u]
        base_below = sum(partial.get(h, 0) for h in leaves_under(u))
        path.append((topo.link(u, p).residual, base_below))
        u = p
    for m in range(cap, 0, -1):
        ok = True
        for residual, base in path:
            need = b * min(base + m, n - base - m)
            if need > residual + _EPS * max(residual, 1.0):
                ok = False
                break
        if ok:
            return m
    return 0


def embed(topo: Topology, request: TenantRequest, policy: CostPolicy | None = None,
          tenant_id: str = "tenant") -> PlacementOutcome:
    """Explore layers bottom-up; at the first layer with feasible candidates
    commit the one with minimum combined cost. Returns an embedding-error
    outcome when the whole topology is exhausted."""
    policy = policy or CostPolicy()
    ctx = _EpisodeContext(topo, request)
    load = topo.load()
    w_b, w_q = policy.weights(load)
    qc = max((l.queue_count for l in topo.links.values()), default=8)
    denom_b = request.per_vm_guarantee * request.vm_count
    layer = 1
    total_candidates = 0
    while layer <= topo.layer_count:
        best = None
        for skel in trs_at_layer(topo, layer):
            ev = evaluate_tr(topo, skel, request, ctx)
            if not ev.feasible:
                continue
            total_candidates += 1
            chat_b = ev.c_b / denom_b if denom_b > 0 else 0.0
            chat_q = ev.c_q / qc
            cost = (w_b * chat_b + w_q * chat_q, ev.root)
            if best is None or cost < best[0]:
                best = (cost, ev)
        if best is not None:
            ev = best[1]
            _commit(topo, request, tenant_id, ev)
            tenant = Tenant(
                id=tenant_id, request=request,
                tr=TenantRouting(ev.root, ev.layer, ev.pruned_links,
                                 dict(ev.reserved), dict(ev.parent),
                                 cost_b=ev.c_b, cost_q=ev.c_q),
                vm_placement=dict(ev.placement),
            )
            return PlacementOutcome(True, tenant, ev.layer, total_candidates,
                                    ctx.ops)
        layer += 1
    return PlacementOutcome(False, None, 0, total_candidates, ctx.ops,
                            error="no feasible routing tree at any layer")


def _commit(topo: Topology, request: TenantRequest, tenant_id: str,
            ev: TrEvaluation) -> None:
    for key in ev.pruned_links:
        topo.reserve(key, tenant_id, ev.reserved[key])
    try:
        for h, m in ev.placement.items():
            topo.occupy_slots(h, m)
    except ValueError:
        for key in ev.pruned_links:
            topo.release(key, tenant_id)
        raise


def depart(topo: Topology, tenant: Tenant) -> None:
    """Restore every reservation and VM slot held by the tenant. Departing an
    unknown or already-departed tenant is a fault."""
    if not tenant.embedded:
        raise ValueError(f"tenant {tenant.id} is not embedded")
    for key in tenant.tr.links:
        topo.release(key, tenant.id)
    for h, m in tenant.vm_placement.items():
        topo.free_slots(h, m)
    tenant.embedded = False


def embed_fixed(topo: Topology, request: TenantRequest, tenant_id: str,
                root: str, placement: dict) -> Tenant:
    """Commit an explicitly chosen placement (testbed-style scenarios where VM
    spread is part of the experiment design). The routing tree is the pruned
    tree spanning root and hosts within the root's skeleton."""
    layer = topo.nodes[root].layer
    skel = next(s for s in trs_at_layer(topo, layer) if s.root == root)
    below: dict[str, int] = {}
    pruned_nodes = {root}
    for h, m in placement.items():
        u = h
        while u not in pruned_nodes:
            below[u] = below.get(u, 0) + m
            pruned_nodes.add(u)
            u = skel.parent[u]
        while u is not None:
            below[u] = below.get(u, 0) + m
            u = skel.parent[u]
    links, reserved, parent = [], {}, {root: None}
    for u in sorted(pruned_nodes - {root}):
        p = skel.parent[u]
        key = link_key(u, p)
        links.append(key)
        reserved[key] = cut_reservation(request, below[u])
        parent[u] = p
    ev = TrEvaluation(True, dict(placement), math.fsum(reserved.values()),
                      0, tuple(links), reserved, parent, root, layer)
    _commit(topo, request, tenant_id, ev)
    c_q = max((topo.links[k].tenant_count() for k in links), default=1)
    return Tenant(id=tenant_id, request=request,
                  tr=TenantRouting(root, layer, tuple(links), reserved, parent,
                                   cost_b=ev.c_b, cost_q=c_q),
                  vm_placement=dict(placement))
