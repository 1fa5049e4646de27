import math

import pytest

from conftest import random_request, random_tree
from oracles import exhaustive_min_cb
from qshare import placement as P
from qshare import topology as T
from qshare.tenants import TenantRequest


def fig3_topology(h1_cap=100.0, slots=(4, 10)):
    return T.build_custom(
        [("h1", "hypervisor", 0, slots[0]), ("h2", "hypervisor", 0, slots[1]),
         ("s1", "switch", 1, 0)],
        [("h1", "s1", h1_cap), ("h2", "s1", 100.0)])


def test_usable_slots_zero_when_residual_below_guarantee():
    topo = fig3_topology(h1_cap=5.0)
    skel = T.trs_at_layer(topo, 1)[0]
    req = TenantRequest(5, 10.0)
    # 4 free slots, but the uplink cannot absorb even one VM's cut
    assert P.usable_vm_slots(topo, skel, req, "h1") == 0
    assert P.usable_vm_slots(topo, skel, req, "h2") == 5
    ample = fig3_topology(h1_cap=100.0)
    skel2 = T.trs_at_layer(ample, 1)[0]
    assert P.usable_vm_slots(ample, skel2, req, "h1") == 4


def test_colocation_costs_nothing():
    topo = fig3_topology(slots=(10, 10))
    skel = T.trs_at_layer(topo, 1)[0]
    ev = P.evaluate_tr(topo, skel, TenantRequest(5, 10.0))
    assert ev.feasible and ev.c_b == 0.0
    assert ev.placement in ({"h1": 5}, {"h2": 5})


def test_fig3_split_costs():
    topo = fig3_topology(slots=(4, 4))
    skel = T.trs_at_layer(topo, 1)[0]
    ev = P.evaluate_tr(topo, skel, TenantRequest(5, 10.0))
    # neither side fits all five: (1, 4) split, both links carry B
    assert ev.feasible
    assert sorted(ev.placement.values()) == [1, 4]
    assert math.isclose(ev.c_b, 20.0)


def test_ha_spreads_allocation():
    topo = fig3_topology(slots=(10, 10))
    skel = T.trs_at_layer(topo, 1)[0]
    ev = P.evaluate_tr(topo, skel, TenantRequest(4, 10.0, wcs=0.5))
    assert ev.feasible
    assert max(ev.placement.values()) == 2


def test_infeasible_when_slots_short():
    topo = fig3_topology(slots=(1, 1))
    skel = T.trs_at_layer(topo, 1)[0]
    assert P.optimal_allocation(topo, skel, TenantRequest(5, 1.0)) is None


def test_embed_early_return_at_layer1():
    topo = T.build_testbed()
    out = P.embed(topo, TenantRequest(5, 10.0), tenant_id="t")
    assert out.feasible and out.layer == 1


def test_embed_error_when_capacity_exhausted():
    topo = T.build_testbed()
    out = P.embed(topo, TenantRequest(101, 1.0), tenant_id="t")
    assert not out.feasible and out.error


def test_embed_prefers_lower_cq_on_tie():
    topo = T.build_custom(
        [("h1", "hypervisor", 0, 10), ("h2", "hypervisor", 0, 10),
         ("s1", "switch", 1, 0), ("s2", "switch", 1, 0)],
        [("h1", "s1", 100.0), ("h2", "s2", 100.0)])
    first = P.embed(topo, TenantRequest(2, 1.0), P.CostPolicy(w_b=0.5, w_q=0.5),
                    tenant_id="a")
    assert first.feasible
    second = P.embed(topo, TenantRequest(2, 1.0), P.CostPolicy(w_b=0.5, w_q=0.5),
                     tenant_id="b")
    # equal c_b; the empty subtree serves fewer tenants per link
    assert second.tenant.tr.root != first.tenant.tr.root


def test_depart_restores_everything_and_double_departs_fault():
    topo = T.build_testbed()
    before = {k: (l.reserved, dict(l.reservations)) for k, l in topo.links.items()}
    free = {h: topo.nodes[h].vm_slots_free for h in topo.hypervisors()}
    out = P.embed(topo, TenantRequest(8, 50.0), tenant_id="t")
    P.depart(topo, out.tenant)
    assert all(topo.links[k].reserved == before[k][0]
               and topo.links[k].reservations == before[k][1]
               for k in topo.links)
    assert all(topo.nodes[h].vm_slots_free == free[h]
               for h in topo.hypervisors())
    with pytest.raises(ValueError):
        P.depart(topo, out.tenant)


def test_optimality_matches_exhaustive_search(rng):
    mismatches = 0
    for _ in range(300):
        topo = random_tree(rng)
        skel = T.trs_at_layer(topo, 2)[0]
        req = random_request(rng)
        ev = P.evaluate_tr(topo, skel, req)
        oracle = exhaustive_min_cb(topo, skel, req)
        if ev.feasible != (oracle is not None):
            mismatches += 1
        elif ev.feasible and not math.isclose(ev.c_b, oracle, rel_tol=1e-9,
                                              abs_tol=1e-9):
            mismatches += 1
    assert mismatches == 0


def test_star_profile_matches_generic_merge(rng):
    """The closed-form star allocator and the generic DP agree."""
    for _ in range(200):
        n_h = int(rng.integers(1, 6))
        nodes = [("s0", "switch", 1, 0)]
        links = []
        for h in range(n_h):
            nodes.append((f"h{h}", "hypervisor", 0, int(rng.integers(0, 8))))
            links.append((f"h{h}", "s0", float(rng.integers(1, 25))))
        topo = T.build_custom(nodes, links)
        skel = T.trs_at_layer(topo, 1)[0]
        req = random_request(rng)
        ev = P.evaluate_tr(topo, skel, req)
        oracle = exhaustive_min_cb(topo, skel, req)
        assert ev.feasible == (oracle is not None)
        if ev.feasible:
            assert math.isclose(ev.c_b, oracle, rel_tol=1e-9, abs_tol=1e-9)


def test_early_return_layering_is_minimal(rng):
    for _ in range(100):
        topo = T.fattree_like("1:1", k=4, vm_slots=int(rng.integers(2, 6)),
                              nic_mbps=float(rng.integers(5, 30)),
                              port_mbps=40.0)
        req = random_request(rng, n_hi=8)
        out = P.embed(topo, req, tenant_id="probe")
        if not out.feasible:
            continue
        feasible_layers = []
        P.depart(topo, out.tenant)
        for layer in range(1, topo.layer_count):
            if any(P.evaluate_tr(topo, s, req).feasible
                   for s in T.trs_at_layer(topo, layer)):
                feasible_layers.append(layer)
        assert out.layer == min(feasible_layers)


def test_embed_log_costs_match_links():
    topo = T.build_testbed()
    out = P.embed(topo, TenantRequest(12, 30.0), tenant_id="t")
    t = out.tenant
    assert math.isclose(t.tr.cost_b, math.fsum(t.tr.reserved.values()))
    assert t.tr.cost_q >= 1
    for key in t.tr.links:
        assert t.id in topo.links[key].reservations


def test_operation_counter_scales_polynomially():
    budgets = {}
    for k in (4, 8):
        topo = T.fattree_like("1:1", k=k, vm_slots=2, nic_mbps=10.0,
                              port_mbps=40.0)
        # exhaust slots near the top so exploration reaches the core layer
        req = TenantRequest(2 * len(topo.hypervisors()) // 2, 1.0, wcs=0.5)
        out = P.embed(topo, TenantRequest(6, 1.0, wcs=0.8), tenant_id="t")
        budgets[k] = (out.ops, len(topo.nodes))
    ops4, v4 = budgets[4]
    ops8, v8 = budgets[8]
    c = 3.0 * ops4 / v4 ** (5 / 3)
    assert ops8 <= c * v8 ** (5 / 3)


def test_embed_on_random_topology():
    topo = T.build_random(T.RandomParams(switches=6, degree=3, hypervisors=8,
                                         k=2, vm_slots=4, seed=7))
    out = P.embed(topo, TenantRequest(6, 50.0), tenant_id="r1")
    assert out.feasible
    t = out.tenant
    hosts = set(t.vm_placement)
    nodes = {t.tr.root} | {n for k in t.tr.links for n in k}
    assert hosts <= nodes
    assert len(t.tr.links) == len(nodes) - 1  # spanning tree
    P.depart(topo, t)
    assert P.embed(topo, TenantRequest(40, 1.0), tenant_id="r2").feasible is False
