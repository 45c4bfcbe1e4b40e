## AC power-flow equations in polar form, Newton-Raphson solver, limit checks, and the DC linearization

from collections import Counter
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg as la

from swcopf.errors import DimensionMismatch, PowerFlowDivergence, SingularJacobian
from swcopf.netmodel import admittance_matrix, bus_partition
from swcopf.utils import vprint

VIOLATION_FAMILIES = ('active_power', 'reactive_power', 'voltage_magnitude', 'voltage_difference')


###### Types ######

@dataclass(frozen=True)
class ComplexVoltageState:
    """ Per-bus voltage magnitude (p.u.) and angle (rad), slack angle is the reference """
    vm: np.ndarray
    va: np.ndarray

    def __post_init__(self):
        vm = np.asarray(self.vm, dtype=float)
        va = np.asarray(self.va, dtype=float)
        if vm.shape != va.shape or vm.ndim != 1:
            raise DimensionMismatch(f"vm and va must be 1D arrays of equal length, got {vm.shape} and {va.shape}")
        if np.any(vm <= 0):
            raise ValueError(f"Voltage magnitudes must be positive, got min |V| = {vm.min():.4g}")
        object.__setattr__(self, 'vm', vm)
        object.__setattr__(self, 'va', va)

    @classmethod
    def flat(cls, n, slack_vm=1.0):
        vm = np.ones(n)
        vm[0] = slack_vm
        return cls(vm, np.zeros(n))

    @classmethod
    def from_complex(cls, V):
        V = np.asarray(V, dtype=complex)
        return cls(np.abs(V), np.angle(V))

    @property
    def voltages(self):
        return self.vm * np.exp(1j * self.va)

    def to_dict(self):
        return {'vm': self.vm.tolist(), 'va': self.va.tolist()}

@dataclass(frozen=True)
class InjectionSpec:
    """
    Specified quantities of a power-flow problem.

    Attributes:
        p_fixed, q_fixed (np.ndarray): per-bus non-dispatchable net injection (renewable - load).
        p_gen (np.ndarray): per-generator active setpoint, the slack entry is an output.
        vm (np.ndarray): per-bus magnitude setpoint, used at the slack and PV buses.
        pv, pq (np.ndarray): PV bus ids (non-slack generator buses) and PQ bus ids.
    """
    p_fixed: np.ndarray
    q_fixed: np.ndarray
    p_gen: np.ndarray
    vm: np.ndarray
    pv: np.ndarray
    pq: np.ndarray
    gen_bus: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.p_fixed)
        for name in ('q_fixed', 'vm'):
            if len(getattr(self, name)) != n:
                raise DimensionMismatch(f"InjectionSpec.{name} has length {len(getattr(self, name))}, expected {n}")
        if len(self.p_gen) != len(self.gen_bus):
            raise DimensionMismatch(f"InjectionSpec.p_gen has length {len(self.p_gen)}, expected {len(self.gen_bus)} generators")
        ids = np.sort(np.concatenate([[0], self.pv, self.pq]))
        if not np.array_equal(ids, np.arange(n)):
            raise ValueError("PV and PQ bus ids together with the slack bus must cover every bus exactly once")

    @classmethod
    def from_network(cls, net, p_gen=None, vm_gen=None, p_fixed=None, q_fixed=None):
        """
        Build the PV/PQ specification of `net`. Generator buses other than the slack are PV buses.

        Args:
            p_gen (array, optional): per-generator active setpoints. Defaults to 0.
            vm_gen (array, optional): per-generator magnitude setpoints. Defaults to 1 (slack: net.slack_vm).
            p_fixed, q_fixed (array, optional): per-bus net injection besides generators. Defaults to minus the nominal loads.
        """
        part = bus_partition(net)
        n = net.n_bus
        vm = np.ones(n)
        vm[0] = net.slack_vm
        if vm_gen is not None:
            vm_gen = np.asarray(vm_gen, dtype=float)
            if len(vm_gen) != net.n_gen:
                raise DimensionMismatch(f"vm_gen has length {len(vm_gen)}, expected {net.n_gen}")
            for g, gen in enumerate(net.generators):
                if gen.bus != 0:
                    vm[gen.bus] = vm_gen[g]
        return cls(
            p_fixed = -net.pd if p_fixed is None else np.asarray(p_fixed, dtype=float),
            q_fixed = -net.qd if q_fixed is None else np.asarray(q_fixed, dtype=float),
            p_gen   = np.zeros(net.n_gen) if p_gen is None else np.asarray(p_gen, dtype=float),
            vm      = vm,
            pv      = np.array(part.generator, dtype=np.int64),
            pq      = np.array(part.renewable + part.demand, dtype=np.int64),
            gen_bus = net.gen_bus,
        )

    @property
    def p_inj(self):
        p = self.p_fixed.copy()
        np.add.at(p, self.gen_bus, self.p_gen)
        return p

    @property
    def q_inj(self):
        return self.q_fixed.copy()

@dataclass(frozen=True)
class LineFlows:
    """ Complex power entering each line at its from/to end, p.u. """
    s_from: np.ndarray
    s_to: np.ndarray

    @property
    def losses(self):
        return self.s_from + self.s_to

    @property
    def total_losses(self):
        return complex(self.losses.sum())

    def to_dict(self):
        return {
            'p_from': self.s_from.real.tolist(), 'q_from': self.s_from.imag.tolist(),
            'p_to'  : self.s_to.real.tolist(),   'q_to'  : self.s_to.imag.tolist(),
            'total_losses': [self.total_losses.real, self.total_losses.imag],
        }

@dataclass(frozen=True)
class PowerFlowSolution:
    state: ComplexVoltageState
    p_gen: np.ndarray
    q_gen: np.ndarray
    p_slack: float
    q_slack: float
    flows: LineFlows
    iterations: int
    residual: float

    def to_dict(self):
        return {
            'state'     : self.state.to_dict(),
            'p_gen'     : self.p_gen.tolist(),
            'q_gen'     : self.q_gen.tolist(),
            'p_slack'   : self.p_slack,
            'q_slack'   : self.q_slack,
            'flows'     : self.flows.to_dict(),
            'iterations': self.iterations,
            'residual'  : self.residual,
        }

@dataclass(frozen=True)
class Violation:
    family: str
    element: str
    value: float
    limit: float
    amount: float

    def to_dict(self):
        return {'family': self.family, 'element': self.element, 'value': self.value, 'limit': self.limit, 'amount': self.amount}

@dataclass(frozen=True)
class ViolationReport:
    violations: tuple = ()
    informational: tuple = ()

    @property
    def feasible(self):
        return len(self.violations) == 0

    def __len__(self):
        return len(self.violations)

    def families(self):
        return Counter(v.family for v in self.violations)

    def to_dict(self):
        return {
            'feasible'     : self.feasible,
            'violations'   : [v.to_dict() for v in self.violations],
            'informational': [v.to_dict() for v in self.informational],
        }


###### Power-flow equations ######

def power_injections(net, state, Ybus=None):
    """ Calculated complex injection S_k = V_k conj(sum_l Y_kl (V_k - V_l)) """
    if Ybus is None:
        Ybus = admittance_matrix(net)
    V = state.voltages
    return V * np.conj(Ybus @ V)

def pf_residual(net, state, injections, Ybus=None):
    """
    Polar-form mismatch of the bus balance equations.

    Args:
        state (ComplexVoltageState): voltages of every bus.
        injections (array of complex): specified net injection per bus.

    Returns:
        tuple[np.ndarray, np.ndarray]: (dP, dQ), specified minus calculated injection per bus.
    """
    injections = np.asarray(injections, dtype=complex)
    n = net.n_bus
    if len(state.vm) != n:
        raise DimensionMismatch(f"State has {len(state.vm)} buses, network '{net.name}' has {n}")
    if injections.shape != (n,):
        raise DimensionMismatch(f"Injections have shape {injections.shape}, expected ({n},)")
    mis = injections - power_injections(net, state, Ybus)
    return mis.real, mis.imag

def pf_jacobian(net, state, Ybus=None):
    """
    Jacobian of `pf_residual` w.r.t. (va, vm) over all buses, ordered as
    [[dP/dva, dP/dvm], [dQ/dva, dQ/dvm]].
    """
    if Ybus is None:
        Ybus = admittance_matrix(net)
    V = state.voltages
    Ibus = Ybus @ V
    diagV = np.diag(V)
    diagI = np.diag(Ibus)
    diagVnorm = np.diag(V / np.abs(V))

    dS_dVm = diagV @ np.conj(Ybus @ diagVnorm) + np.conj(diagI) @ diagVnorm
    dS_dVa = 1j * diagV @ np.conj(diagI - Ybus @ diagV)

    # The residual is specified minus calculated
    return -np.block([[dS_dVa.real, dS_dVm.real],
                      [dS_dVa.imag, dS_dVm.imag]])

def solve_pf(net, spec, tol=1e-8, max_iter=30, verbose=False):
    """
    Polar Newton-Raphson power flow from a flat start.

    Args:
        net (Network): the network.
        spec (InjectionSpec): PV/PQ specification.
        tol (float): convergence threshold on the mismatch infinity norm (p.u.).
        max_iter (int): Newton iteration cap.

    Returns:
        PowerFlowSolution

    Raises:
        PowerFlowDivergence: no convergence within `max_iter` or a non-finite iterate.
        SingularJacobian: the reduced Jacobian could not be factorized.
    """
    n = net.n_bus
    Ybus = admittance_matrix(net)
    pv, pq = spec.pv, spec.pq
    pvpq = np.concatenate([pv, pq])
    rows = np.concatenate([pvpq, n + pq])
    cols = np.concatenate([pvpq, n + pq])

    vm = spec.vm.copy()
    vm[pq] = 1.0
    va = np.zeros(n)
    S_spec = spec.p_inj + 1j * spec.q_inj

    for it in range(max_iter + 1):
        V = vm * np.exp(1j * va)
        mis = S_spec - V * np.conj(Ybus @ V)
        F = np.concatenate([mis.real[pvpq], mis.imag[pq]])
        norm = np.max(np.abs(F)) if len(F) else 0.0
        if not np.isfinite(norm):
            raise PowerFlowDivergence(f"Newton iterate became non-finite at iteration {it}", iterations=it, residual=norm)
        vprint(f"PF iter {it:2d}: mismatch = {norm:.3e}", verbose=verbose)
        if norm <= tol:
            break
        if it == max_iter:
            raise PowerFlowDivergence(f"Power flow did not converge in {max_iter} iterations (mismatch {norm:.3e} > tol {tol:.1e}). "
                                      f"The specified injections may exceed the transfer capability of the network.",
                                      iterations=it, residual=norm)
        state = _unchecked_state(vm, va)
        J = pf_jacobian(net, state, Ybus)[np.ix_(rows, cols)]
        try:
            dx = la.solve(J, -F)
        except (la.LinAlgError, ValueError) as e:
            raise SingularJacobian(f"Power-flow Jacobian is singular at iteration {it} ({e}). "
                                   f"Check for voltage collapse or inconsistent bus data.") from None
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian(f"Power-flow Jacobian is numerically singular at iteration {it}.")
        va[pvpq] += dx[:len(pvpq)]
        vm[pq] += dx[len(pvpq):]

    if np.any(vm <= 0):
        raise PowerFlowDivergence(f"Power flow converged to a non-physical point with min |V| = {vm.min():.3g}",
                                  iterations=it, residual=norm)
    state = ComplexVoltageState(vm, va)
    return evaluate_state(net, state, spec, iterations=it, residual=float(norm), Ybus=Ybus)

def _unchecked_state(vm, va):
    state = object.__new__(ComplexVoltageState)
    object.__setattr__(state, 'vm', vm)
    object.__setattr__(state, 'va', va)
    return state

def evaluate_state(net, state, spec, iterations=0, residual=None, Ybus=None):
    """ Derive generator outputs and line flows of a given voltage state """
    S = power_injections(net, state, Ybus)
    p_gen = spec.p_gen.astype(float).copy()
    q_gen = np.zeros(net.n_gen)
    for g, gen in enumerate(net.generators):
        q_gen[g] = S[gen.bus].imag - spec.q_fixed[gen.bus]
        if gen.bus == 0:
            p_gen[g] = S[0].real - spec.p_fixed[0]
    if residual is None:
        mis = spec.p_inj + 1j * spec.q_inj - S
        pvpq = np.concatenate([spec.pv, spec.pq])
        F = np.concatenate([mis.real[pvpq], mis.imag[spec.pq]])
        residual = float(np.max(np.abs(F))) if len(F) else 0.0
    return PowerFlowSolution(
        state      = state,
        p_gen      = p_gen,
        q_gen      = q_gen,
        p_slack    = float(S[0].real - spec.p_fixed[0]),
        q_slack    = float(S[0].imag - spec.q_fixed[0]),
        flows      = line_flows(net, state),
        iterations = iterations,
        residual   = residual,
    )


###### Line flows ######

@numba.njit(cache=True)
def _branch_power_numba(V, f, t, y):
    n_line = len(f)
    s_from = np.empty(n_line, dtype=np.complex128)
    s_to = np.empty(n_line, dtype=np.complex128)
    for i in range(n_line):
        dv = V[f[i]] - V[t[i]]
        s_from[i] = V[f[i]] * np.conj(y[i] * dv)
        s_to[i] = -V[t[i]] * np.conj(y[i] * dv)
    return s_from, s_to

def line_flows(net, state):
    """ Complex flows S_lm = V_l conj(Y_lm (V_l - V_m)) at both ends of every line """
    if net.n_line == 0:
        empty = np.zeros(0, dtype=complex)
        return LineFlows(empty, empty)
    s_from, s_to = _branch_power_numba(state.voltages.astype(np.complex128), net.line_from, net.line_to, net.line_admittance)
    return LineFlows(s_from, s_to)


###### Limits ######

def check_limits(net, sol, tol=1e-6):
    """
    List every violated generator power bound, voltage magnitude bound, and line
    voltage-difference limit at a power-flow solution. Apparent-power limits are
    reported separately as informational entries.
    """
    violations, info = [], []

    def _check(family, element, value, lo, hi, out):
        if lo is not None and value < lo - tol:
            out.append(Violation(family, element, float(value), float(lo), float(lo - value)))
        elif hi is not None and value > hi + tol:
            out.append(Violation(family, element, float(value), float(hi), float(value - hi)))

    for g, gen in enumerate(net.generators):
        _check('active_power', f'generator {g} (bus {gen.bus})', sol.p_gen[g], gen.pmin, gen.pmax, violations)
    for g, gen in enumerate(net.generators):
        _check('reactive_power', f'generator {g} (bus {gen.bus})', sol.q_gen[g], gen.qmin, gen.qmax, violations)
    if net.gen_at_bus[0] < 0:
        # Slack bus without a generator cannot absorb any imbalance
        _check('active_power', 'bus 0', sol.p_slack, 0.0, 0.0, violations)
        _check('reactive_power', 'bus 0', sol.q_slack, 0.0, 0.0, violations)

    vm = sol.state.vm
    for k, bus in enumerate(net.buses):
        _check('voltage_magnitude', f'bus {k}', vm[k], bus.vmin, bus.vmax, violations)

    V = sol.state.voltages
    for i, line in enumerate(net.lines):
        element = f'line {line.from_bus}-{line.to_bus}'
        dv = abs(V[line.from_bus] - V[line.to_bus])
        _check('voltage_difference', element, dv, None, line.dv_max, violations)
        if line.s_max is not None:
            s = max(abs(sol.flows.s_from[i]), abs(sol.flows.s_to[i]))
            _check('apparent_power', element, s, None, line.s_max, info)

    return ViolationReport(tuple(violations), tuple(info))


###### DC linearization ######

@dataclass(frozen=True)
class DCModel:
    """
    Lossless small-angle model P = B' theta, with line weights b = -Im(Y_lm).

    Attributes:
        bbus (np.ndarray): full n x n B' matrix.
        reduced (np.ndarray): B' with the slack row and column removed.
        branch_matrix (np.ndarray): n_line x n map from angles to line flows.
    """
    bbus: np.ndarray
    reduced: np.ndarray
    branch_matrix: np.ndarray

    def injections(self, theta):
        return self.bbus @ np.asarray(theta, dtype=float)

    def solve_angles(self, p_inj):
        """ Angles with theta_0 = 0 for the non-slack injections p_inj[1:] """
        p_inj = np.asarray(p_inj, dtype=float)
        theta = np.zeros(len(p_inj))
        if len(p_inj) > 1:
            theta[1:] = la.solve(self.reduced, p_inj[1:], assume_a='sym')
        return theta

    def flows(self, theta):
        return self.branch_matrix @ np.asarray(theta, dtype=float)

def dc_linearize(net):
    n, m = net.n_bus, net.n_line
    b = -net.line_admittance.imag
    C = np.zeros((m, n))
    C[np.arange(m), net.line_from] = 1.0
    C[np.arange(m), net.line_to] = -1.0
    branch_matrix = b[:, None] * C
    bbus = C.T @ branch_matrix
    return DCModel(bbus=bbus, reduced=bbus[1:, 1:], branch_matrix=branch_matrix)
