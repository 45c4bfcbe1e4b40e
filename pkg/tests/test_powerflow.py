import math

import numpy as np
import pytest
from conftest import random_network, two_bus

from swcopf.errors import DimensionMismatch, PowerFlowError
from swcopf.netmodel import Line, Network
from swcopf.powerflow import (
    ComplexVoltageState,
    InjectionSpec,
    check_limits,
    dc_linearize,
    evaluate_state,
    line_flows,
    pf_jacobian,
    pf_residual,
    power_injections,
    solve_pf,
)


###### Residual and Jacobian ######

def test_equal_voltages_leave_raw_injections():
    net = two_bus(z=1 / (1 - 10j))
    state = ComplexVoltageState.flat(2)
    inj = np.array([0.3 + 0.1j, -0.3 - 0.1j])
    dP, dQ = pf_residual(net, state, inj)
    assert np.allclose(dP, inj.real)
    assert np.allclose(dQ, inj.imag)

def test_residual_matches_complex_arithmetic():
    y = 1 - 10j
    net = two_bus(z=1 / y)
    V2 = np.exp(-0.1j)
    state = ComplexVoltageState.from_complex([1.0, V2])
    dP, _ = pf_residual(net, state, np.zeros(2))
    expected = -((1.0 - V2) * y).real
    assert dP[0] == pytest.approx(expected, abs=1e-12)

def test_residual_sum_equals_injection_minus_losses(rng):
    net = random_network(rng, 4)
    state = ComplexVoltageState(rng.uniform(0.95, 1.05, 4), np.concatenate([[0.0], rng.uniform(-0.1, 0.1, 3)]))
    inj = rng.normal(size=4) + 1j * rng.normal(size=4)
    dP, _ = pf_residual(net, state, inj)
    losses = line_flows(net, state).total_losses
    assert dP.sum() == pytest.approx(inj.real.sum() - losses.real, abs=1e-10)

def test_residual_dimension_checked():
    net = two_bus()
    with pytest.raises(DimensionMismatch):
        pf_residual(net, ComplexVoltageState.flat(3), np.zeros(3))

@pytest.mark.parametrize("trial", range(50))
def test_jacobian_matches_finite_differences(trial):
    rng = np.random.default_rng(100 + trial)
    n = int(rng.integers(2, 7))
    net = random_network(rng, n)
    vm = rng.uniform(0.9, 1.1, n)
    va = np.concatenate([[0.0], rng.uniform(-0.3, 0.3, n - 1)])
    inj = rng.normal(size=n) + 1j * rng.normal(size=n)

    def F(x):
        dP, dQ = pf_residual(net, ComplexVoltageState(x[n:], x[:n]), inj)
        return np.concatenate([dP, dQ])

    x0 = np.concatenate([va, vm])
    J = pf_jacobian(net, ComplexVoltageState(vm, va))
    h = 1e-6
    J_fd = np.column_stack([(F(x0 + h * e) - F(x0 - h * e)) / (2 * h) for e in np.eye(2 * n)])
    assert np.allclose(J, J_fd, rtol=1e-6, atol=1e-6 * np.abs(J).max())


###### Newton-Raphson ######

def test_lossless_two_bus_angle(lossless_2bus):
    spec = InjectionSpec.from_network(lossless_2bus, p_gen=[0.0, 0.0], vm_gen=[1.0, 1.0])
    sol = solve_pf(lossless_2bus, spec)
    assert sol.state.va[1] == pytest.approx(-math.asin(0.1), abs=1e-9)
    assert sol.state.va[0] == 0.0
    assert sol.p_slack == pytest.approx(1.0, abs=1e-9)
    assert sol.residual <= 1e-8

def test_flat_case_converges_immediately():
    net = two_bus(load=0.0)
    spec = InjectionSpec.from_network(net, p_gen=[0.0, 0.0], vm_gen=[1.0, 1.0])
    sol = solve_pf(net, spec)
    assert sol.iterations <= 1
    assert np.allclose(sol.state.va, 0.0)
    assert np.allclose(sol.flows.s_from, 0.0)

def test_load_beyond_transfer_capability_does_not_converge():
    net = two_bus(load=0.0)
    spec = InjectionSpec.from_network(net, p_gen=[0.0, 0.0], vm_gen=[1.0, 1.0],
                                      p_fixed=[0.0, -11.0], q_fixed=[0.0, 0.0])
    with pytest.raises(PowerFlowError):
        solve_pf(net, spec, max_iter=30)

def test_radial_solution_satisfies_balance(radial_3bus):
    spec = InjectionSpec.from_network(radial_3bus, p_gen=[0.0, 0.4], vm_gen=[1.0, 1.0])
    sol = solve_pf(radial_3bus, spec)
    S = power_injections(radial_3bus, sol.state)
    inj = spec.p_inj + 1j * spec.q_inj
    # PQ buses meet P and Q, the PV bus meets P
    assert abs(S[1] - inj[1]) <= 1e-7
    assert abs(S[2].real - inj[2].real) <= 1e-7
    assert sol.state.vm[2] == pytest.approx(1.0)
    assert sol.iterations <= 6
    losses = sol.flows.total_losses.real
    assert sol.p_slack + 0.4 == pytest.approx(radial_3bus.pd.sum() + losses, abs=1e-7)

def test_injection_spec_dimension_checked(radial_3bus):
    with pytest.raises(DimensionMismatch):
        InjectionSpec.from_network(radial_3bus, p_gen=[0.0, 0.1, 0.2])


###### Limits ######

def test_generous_limits_give_empty_report():
    net = two_bus(load=0.0)
    sol = solve_pf(net, InjectionSpec.from_network(net, p_gen=[0.0, 0.0], vm_gen=[1.0, 1.0]))
    report = check_limits(net, sol)
    assert report.feasible
    assert len(report) == 0

def test_voltage_magnitude_violation_amount(triangle_3bus):
    state = ComplexVoltageState(np.array([1.0, 1.0, 1.08]), np.zeros(3))
    spec = InjectionSpec.from_network(triangle_3bus)
    report = check_limits(triangle_3bus, evaluate_state(triangle_3bus, state, spec))
    vl = [v for v in report.violations if v.family == 'voltage_magnitude']
    assert len(vl) == 1
    assert vl[0].element == 'bus 2'
    assert vl[0].amount == pytest.approx(0.03)
    assert vl[0].limit == pytest.approx(1.05)

def test_voltage_difference_violation_uses_complex_difference():
    net = two_bus(dv_max=0.05)
    state = ComplexVoltageState(np.array([1.0, 0.98]), np.array([0.0, -0.1]))
    report = check_limits(net, evaluate_state(net, state, InjectionSpec.from_network(net)))
    dv = [v for v in report.violations if v.family == 'voltage_difference']
    assert len(dv) == 1
    expected = math.sqrt(1.0 + 0.98 ** 2 - 2 * 0.98 * math.cos(0.1))
    assert dv[0].value == pytest.approx(expected, abs=1e-12)

def test_apparent_power_limits_are_informational():
    base = two_bus(load=1.0)
    net = Network(base.buses, [Line(0, 1, 0.1j, 0.5, s_max=0.5)], base.generators)
    sol = solve_pf(net, InjectionSpec.from_network(net, p_gen=[0.0, 0.0], vm_gen=[1.0, 1.0]))
    report = check_limits(net, sol)
    assert [v.family for v in report.informational] == ['apparent_power']
    assert all(v.family != 'apparent_power' for v in report.violations)


###### DC linearization ######

def test_dc_single_line():
    net = two_bus(z=0.1j)
    dc = dc_linearize(net)
    theta = np.array([0.0, -0.1])
    assert dc.injections(theta) == pytest.approx([1.0, -1.0])
    assert dc.solve_angles([1.0, -1.0]) == pytest.approx(theta)
    assert dc.flows(theta) == pytest.approx([1.0])
    assert np.allclose(dc.injections(np.zeros(2)), 0.0)

def test_dc_close_to_ac_for_small_angles():
    net = two_bus(z=0.1j, load=0.1)
    ac = solve_pf(net, InjectionSpec.from_network(net, p_gen=[0.0, 0.0], vm_gen=[1.0, 1.0]))
    theta = dc_linearize(net).solve_angles([0.1, -0.1])
    assert abs(theta[1] - ac.state.va[1]) / abs(ac.state.va[1]) <= 5e-3

def test_dc_angle_error_shrinks_with_load():
    errors = []
    for load in (2.0, 1.0, 0.5, 0.25):
        net = two_bus(z=0.1j, load=load)
        ac = solve_pf(net, InjectionSpec.from_network(net, p_gen=[0.0, 0.0], vm_gen=[1.0, 1.0]))
        theta = dc_linearize(net).solve_angles([load, -load])
        errors.append(abs(theta[1] - ac.state.va[1]))
    assert all(a > b for a, b in zip(errors, errors[1:]))
