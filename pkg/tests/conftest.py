import os

import numpy as np
import pytest

from swcopf.conic import SolverOptions
from swcopf.load import load_case, load_uncertainty_model
from swcopf.netmodel import Bus, BusKind, Generator, Line, Network

DEMO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'demo')


def demo_path(*parts):
    return os.path.join(DEMO_DIR, *parts)

def two_bus(z=0.1j, load=1.0, dv_max=0.5, second_gen=True, vmin=0.9, vmax=1.1):
    """ Slack generator at bus 0, load (and optionally a generator) at bus 1 """
    buses = [
        Bus(0, BusKind.SLACK, vmin, vmax),
        Bus(1, BusKind.GENERATOR if second_gen else BusKind.LOAD, vmin, vmax, pd=load),
    ]
    gens = [Generator(0, 0.0, 3.0, -3.0, 3.0, c2=1.0)]
    if second_gen:
        gens.append(Generator(1, 0.0, 3.0, -3.0, 3.0, c2=2.0))
    return Network(buses, [Line(0, 1, z, dv_max)], gens, name='two_bus')

def random_network(rng, n):
    """ Connected n-bus network with a random spanning tree plus one chord, a slack generator, and one PV generator """
    lines, pairs = [], set()
    for k in range(1, n):
        l = int(rng.integers(0, k))
        pairs.add(frozenset((l, k)))
        lines.append(Line(l, k, complex(rng.uniform(0.005, 0.05), rng.uniform(0.05, 0.3)), 1.0))
    if n > 2:
        a, b = (int(v) for v in rng.choice(n, 2, replace=False))
        if frozenset((a, b)) not in pairs:
            lines.append(Line(a, b, complex(rng.uniform(0.005, 0.05), rng.uniform(0.05, 0.3)), 1.0))
    buses = [Bus(0, BusKind.SLACK, 0.9, 1.1)]
    for k in range(1, n):
        kind = BusKind.GENERATOR if k == n - 1 else BusKind.LOAD
        buses.append(Bus(k, kind, 0.9, 1.1, pd=rng.uniform(0.0, 0.3), qd=rng.uniform(0.0, 0.1)))
    gens = [Generator(0, 0.0, 5.0, -5.0, 5.0, c2=1.0), Generator(n - 1, 0.0, 5.0, -5.0, 5.0, c2=1.0)]
    return Network(buses, lines, gens, name=f'random_{n}')


@pytest.fixture
def opts():
    return SolverOptions(feas_tol=1e-9, gap_tol=1e-9, max_iter=200)

@pytest.fixture
def lossless_2bus():
    return load_case(demo_path('cases', 'lossless_2bus.json'))

@pytest.fixture
def radial_3bus():
    return load_case(demo_path('cases', 'radial_3bus.json'))

@pytest.fixture
def triangle_3bus():
    return load_case(demo_path('cases', 'triangle_3bus.json'))

@pytest.fixture
def single_bus():
    return load_case(demo_path('cases', 'single_bus.json'))

@pytest.fixture
def triangle_box(triangle_3bus):
    return load_uncertainty_model(demo_path('models', 'triangle_3bus_box.yml'), triangle_3bus)

@pytest.fixture
def radial_wind(radial_3bus):
    return load_uncertainty_model(demo_path('models', 'radial_3bus_wind.yml'), radial_3bus)

@pytest.fixture
def rng():
    return np.random.default_rng(0)
