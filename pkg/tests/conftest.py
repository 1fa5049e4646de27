import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qshare import topology as topo_mod
from qshare.tenants import TenantRequest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_tree(rng, max_hyps=4, max_mid=3, slot_hi=7, cap_hi=30):
    """Small random 3-level tree for allocation oracles: root at layer 2,
    random mid switches, hypervisors with random slots and link capacities."""
    nodes = [("s0", "switch", 2, 0)]
    links = []
    mids = int(rng.integers(1, max_mid))
    for m in range(mids):
        nodes.append((f"m{m}", "switch", 1, 0))
        links.append((f"m{m}", "s0", float(rng.integers(1, cap_hi))))
    n_h = int(rng.integers(1, max_hyps + 1))
    for h in range(n_h):
        nodes.append((f"h{h}", "hypervisor", 0, int(rng.integers(0, slot_hi))))
        links.append((f"h{h}", f"m{rng.integers(0, mids)}",
                      float(rng.integers(1, cap_hi))))
    return topo_mod.build_custom(nodes, links)


def random_request(rng, n_hi=6, b_hi=5):
    wcs = None if rng.random() < 0.7 else float(rng.choice([0.25, 0.5]))
    return TenantRequest(int(rng.integers(2, n_hi + 1)),
                         float(rng.integers(1, b_hi)), wcs=wcs)
