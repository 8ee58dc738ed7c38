"""Shared fixtures for the trimming estimator test suite."""

import os

import numpy as np
import pytest

from diffusion_trim.config import VILLAGES_DIR
from diffusion_trim.model import OutcomeMatrix, SeedVector, Village, VillageNetwork
from diffusion_trim.network_loader import VillageLoader
from diffusion_trim.simulation import draw_ip, make_rng, simulate_adoption

# Village Graph 1, 0-based
TOY_EDGES = [(0, 1), (0, 2), (1, 3), (2, 4), (2, 3), (3, 5), (4, 5)]


def build_village(n, edges, ips, y, name="village"):
    """Village from 0-based edges, 0-based injection points and an outcome matrix."""
    return Village(name, VillageNetwork.from_edges(n, edges), SeedVector.from_indices(n, ips),
                   OutcomeMatrix(np.asarray(y, dtype=np.uint8)))


def quiet_village(n, edges, ips, periods, name="quiet"):
    """Village in which nobody ever participates."""
    return build_village(n, edges, ips, np.zeros((n, periods)), name)


def simulated_village(seed, n_max=7, periods=3, density=0.45):
    """Random network with outcomes simulated under random true parameters."""
    rng = make_rng(seed)
    n = int(rng.integers(2, n_max + 1))
    upper = np.triu(rng.random((n, n)) < density, 1)
    net = VillageNetwork((upper | upper.T).astype(np.uint8))
    s0 = draw_ip(n, rng)
    p0, q0 = rng.uniform(0.2, 0.8, size=2)
    y, s = simulate_adoption(net, s0, float(p0), float(q0), periods, rng)
    return Village(f"random-{seed}", net, s0, y), s


@pytest.fixture
def toy_network():
    return VillageNetwork.from_edges(6, TOY_EDGES)


@pytest.fixture
def toy_village():
    # IP participates at once, node 2 in period 2, node 4 in period 4
    y = np.zeros((6, 4))
    y[0, :] = 1
    y[1, 1:] = 1
    y[3, 3] = 1
    return build_village(6, TOY_EDGES, [0], y, "toy-village-1")


@pytest.fixture
def star_village():
    """Injection point in the centre of a four-leaf star, nobody participates, T = 3."""
    return quiet_village(5, [(0, k) for k in range(1, 5)], [0], 3, "star")


@pytest.fixture
def bundled_villages():
    return VillageLoader(VILLAGES_DIR).load_villages()


@pytest.fixture
def audit_villages():
    left, right = VillageLoader(VILLAGES_DIR).load_villages("audit.json")
    return {"left": left, "right": right}


@pytest.fixture
def toy_network_path():
    return os.path.join(VILLAGES_DIR, "toy_village_1.csv")


@pytest.fixture
def dead_end_village():
    """Consistent village whose every branch dies when d = 0: the leaf behind node 5 joins in period 4."""
    (village,) = VillageLoader(VILLAGES_DIR).load_villages("dead_end.json")
    return village
