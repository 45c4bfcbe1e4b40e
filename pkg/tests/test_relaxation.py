import numpy as np
import pytest
from conftest import two_bus

from swcopf.conic import SolverOptions
from swcopf.dispatch import solve_ed
from swcopf.errors import InfeasibleOPF, RankCheckFailed
from swcopf.powerflow import InjectionSpec, check_limits, evaluate_state
from swcopf.relaxation import HermitianLift, assemble_nominal, rank_check, recover_voltages, solve_nominal


###### Rank test and voltage recovery ######

def test_outer_product_is_rank_one():
    v = np.array([1.0, 0.98 * np.exp(-0.05j), 1.02 * np.exp(0.03j)])
    diag = rank_check(np.outer(v, v.conj()))
    assert diag.rank_one
    assert diag.ratio <= 1e-12
    assert diag.spectrum[0] == pytest.approx(np.vdot(v, v).real)

def test_identity_is_not_rank_one():
    diag = rank_check(np.eye(3))
    assert not diag.rank_one
    assert diag.ratio == pytest.approx(1.0)

def test_single_bus_lift_is_trivially_rank_one():
    assert rank_check(np.array([[1.02]])).rank_one

def test_recover_voltages_removes_the_global_phase():
    vm = np.array([1.0, 0.97, 1.03])
    va = np.array([0.0, -0.08, 0.04])
    v = vm * np.exp(1j * va) * np.exp(0.7j)
    state = recover_voltages(np.outer(v, v.conj()))
    assert state.vm == pytest.approx(vm, abs=1e-12)
    assert state.va == pytest.approx(va, abs=1e-10)

def test_recover_voltages_refuses_higher_rank():
    u = np.array([1.0, 1.0j])
    W = np.outer(u, u.conj()) + 0.5 * np.eye(2)
    with pytest.raises(RankCheckFailed):
        recover_voltages(W)

def test_lift_split_by_generator_buses(radial_3bus):
    v = np.array([1.0, 0.99, 1.01 * np.exp(-0.02j)])
    lift = HermitianLift.from_network(np.outer(v, v.conj()), radial_3bus)
    assert lift.W_u == pytest.approx(np.abs(v[[0, 2]]) ** 2)
    assert lift.W_x[0, 0] == 0.0
    assert lift.W_x[1, 1] == pytest.approx(0.99 ** 2)
    assert lift.W_x[0, 2] == pytest.approx(v[0] * np.conj(v[2]))

def test_lift_mask_must_be_diagonal():
    mask = np.zeros((2, 2), dtype=bool)
    mask[0, 1] = True
    with pytest.raises(ValueError):
        HermitianLift(np.eye(2), mask)


###### Relaxed AC-OPF ######

def test_lossless_two_bus_matches_economic_dispatch(lossless_2bus, opts):
    sol = solve_nominal(lossless_2bus, opts=opts, verbose=False)
    assert sol.p_gen == pytest.approx([2.0 / 3.0, 1.0 / 3.0], abs=1e-4)
    assert sol.objective == pytest.approx(2.0 / 3.0, abs=1e-5)

def test_single_bus_cost(single_bus, opts):
    sol = solve_nominal(single_bus, opts=opts, verbose=False)
    assert sol.p_gen[0] == pytest.approx(0.5, abs=1e-6)
    assert sol.q_gen[0] == pytest.approx(0.1, abs=1e-6)
    assert sol.objective == pytest.approx(7.25, abs=1e-5)
    assert sol.rank_one

def test_radial_relaxation_is_exact(radial_3bus, opts):
    sol = solve_nominal(radial_3bus, opts=opts, verbose=False)
    assert sol.rank_one
    assert sol.reconstruction_error <= 1e-4
    assert sol.state.va[0] == 0.0

    spec = InjectionSpec.from_network(radial_3bus, p_gen=sol.p_gen, vm_gen=sol.state.vm[radial_3bus.gen_bus])
    report = check_limits(radial_3bus, evaluate_state(radial_3bus, sol.state, spec), tol=1e-4)
    assert report.feasible

    # Losses only add to the lossless dispatch cost
    ed = solve_ed(radial_3bus.generators, radial_3bus.pd.sum())
    assert sol.objective >= ed.cost - 1e-6

def test_renewable_injection_lowers_the_cost(radial_3bus, opts):
    base = solve_nominal(radial_3bus, opts=opts, verbose=False)
    p_ren = np.array([0.0, 0.2, 0.0])
    with_ren = solve_nominal(radial_3bus, opts=opts, p_renewable=p_ren, verbose=False)
    assert with_ren.objective < base.objective
    assert with_ren.p_gen.sum() < base.p_gen.sum()

def test_nominal_program_families(radial_3bus):
    prog = assemble_nominal(radial_3bus)
    counts = prog.family_counts()
    assert counts['hermitian_tie'] > 0
    assert {'active_power', 'voltage_magnitude', 'voltage_difference'} <= set(counts)

def test_infeasible_relaxation(opts):
    net = two_bus(z=0.1j, load=1.0, dv_max=0.05, second_gen=False)
    with pytest.raises(InfeasibleOPF):
        solve_nominal(net, opts=opts, verbose=False)

@pytest.mark.parametrize("tol", [1e-7, 1e-9])
def test_tight_tolerance_keeps_the_radial_solve_exact(radial_3bus, tol):
    sol = solve_nominal(radial_3bus, opts=SolverOptions(feas_tol=tol, gap_tol=tol, max_iter=200), verbose=False)
    assert sol.solver['status'] == 'optimal'
    assert sol.rank_one
    assert sol.reconstruction_error <= 1e-4
