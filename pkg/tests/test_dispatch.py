import numpy as np
import pytest
from conftest import two_bus

from swcopf.dispatch import solve_dc_opf, solve_ed
from swcopf.errors import InfeasibleDemand, InfeasibleOPF
from swcopf.netmodel import Generator, Line, Network
from swcopf.powerflow import dc_linearize


def wide(c2, c1=0.0):
    return Generator(0, 0.0, 10.0, -10.0, 10.0, c2=c2, c1=c1)


###### Economic dispatch ######

def test_ed_equal_marginal_costs():
    result = solve_ed([wide(1.0), wide(2.0)], 3.0)
    assert result.p_gen == pytest.approx([2.0, 1.0], abs=1e-8)
    assert result.price == pytest.approx(4.0, abs=1e-6)
    assert result.cost == pytest.approx(4.0 + 2.0, abs=1e-8)

def test_ed_single_generator_meets_demand_exactly():
    result = solve_ed([wide(1.0, 3.0)], 2.5)
    assert result.p_gen[0] == 2.5

def test_ed_demand_at_capacity():
    gens = [Generator(0, 0.0, 1.0, -1, 1, c2=1.0), Generator(1, 0.0, 2.0, -1, 1, c2=5.0)]
    result = solve_ed(gens, 3.0)
    assert result.p_gen == pytest.approx([1.0, 2.0])

def test_ed_balance_and_bounds(rng):
    for _ in range(20):
        gens = [Generator(g, rng.uniform(0, 0.5), rng.uniform(1, 2), -1, 1, c2=rng.uniform(0, 2), c1=rng.uniform(0, 5))
                for g in range(4)]
        lo, hi = sum(g.pmin for g in gens), sum(g.pmax for g in gens)
        demand = rng.uniform(lo, hi)
        result = solve_ed(gens, demand)
        assert result.p_gen.sum() == pytest.approx(demand, abs=1e-9)
        assert all(g.pmin - 1e-12 <= p <= g.pmax + 1e-12 for g, p in zip(gens, result.p_gen))

def test_ed_linear_costs_fill_in_merit_order():
    gens = [Generator(0, 0.0, 1.0, -1, 1, c1=2.0), Generator(1, 0.0, 1.0, -1, 1, c1=1.0)]
    result = solve_ed(gens, 1.5)
    assert result.p_gen == pytest.approx([0.5, 1.0], abs=1e-9)

def test_ed_infeasible_demand():
    with pytest.raises(InfeasibleDemand) as info:
        solve_ed([wide(1.0), wide(2.0)], 25.0)
    assert info.value.hint == 'capacity'


###### DC-OPF ######

def test_dcopf_uncongested_matches_ed(lossless_2bus, opts):
    dc = solve_dc_opf(lossless_2bus, opts=opts, verbose=False)
    ed = solve_ed(lossless_2bus.generators, lossless_2bus.pd.sum())
    assert dc.p_gen == pytest.approx(ed.p_gen, abs=1e-5)
    assert dc.p_gen.sum() == pytest.approx(1.0, abs=1e-12)
    assert dc.price == pytest.approx(4.0 / 3.0, abs=1e-4)
    assert np.allclose(dc.line_duals, 0.0, atol=1e-6)

def test_dcopf_zero_load(opts):
    net = two_bus(load=0.0)
    dc = solve_dc_opf(net, opts=opts, verbose=False)
    assert dc.p_gen == pytest.approx([0.0, 0.0], abs=1e-6)
    assert dc.cost == pytest.approx(0.0, abs=1e-8)
    assert dc.angles == pytest.approx([0.0, 0.0], abs=1e-6)

def tight_triangle(triangle_3bus, dv_tight=0.05):
    z = 0.01 + 0.1j
    lines = [Line(0, 1, z, 0.15), Line(1, 2, z, 0.15), Line(0, 2, z, dv_tight)]
    return Network(triangle_3bus.buses, lines, triangle_3bus.generators, name='tight_triangle')

def test_dcopf_binding_line_matches_grid_search(triangle_3bus, opts):
    net = tight_triangle(triangle_3bus)
    result = solve_dc_opf(net, opts=opts, verbose=False)

    dc = dc_linearize(net)
    g0, g1 = net.generators
    demand = net.pd.sum()
    best = np.inf
    for p1 in np.arange(g1.pmin, g1.pmax + 1e-9, 1e-3):
        p0 = demand - p1
        if not g0.pmin <= p0 <= g0.pmax:
            continue
        theta = dc.solve_angles([p0 - net.pd[0], p1 - net.pd[1], -net.pd[2]])
        if all(abs(theta[l.from_bus] - theta[l.to_bus]) <= l.dv_max + 1e-12 for l in net.lines):
            best = min(best, g0.cost(p0) + g1.cost(p1))

    assert result.cost <= best + 1e-6
    assert best - result.cost <= 2e-2
    assert abs(result.line_duals[2]) > 1e-6
    assert abs(result.angles[0] - result.angles[2]) == pytest.approx(0.05, abs=1e-5)
    assert result.lmp[2] > result.lmp[0]

def test_dcopf_congestion_infeasible(opts):
    net = two_bus(z=0.1j, load=1.0, dv_max=0.05, second_gen=False)
    with pytest.raises(InfeasibleOPF) as info:
        solve_dc_opf(net, opts=opts, verbose=False)
    assert info.value.hint == 'congestion'

def test_dcopf_demand_outside_capacity(lossless_2bus):
    with pytest.raises(InfeasibleDemand):
        solve_dc_opf(lossless_2bus, loads=[0.0, 7.0], verbose=False)
