## Convex relaxation of the AC-OPF in the lifted voltage matrix W = V V^H

"""
The relaxed program keeps every constraint of the AC-OPF written in W
(bus balance, voltage magnitude bounds, line voltage-difference limits,
generator bounds) together with W >= 0, and drops rank(W) = 1.

Line flows are linear in W:

    S_kl = conj(Y_kl) (W_kk - W_kl)
    P_kl =  G (W_kk - Re W_kl) - B Im W_kl
    Q_kl = -B (W_kk - Re W_kl) - G Im W_kl

with Y_kl = G + iB. The complex W is carried by a real PSD block through
`conic.embed_hermitian`.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as la

from swcopf.conic import (
    Free,
    ProgramBuilder,
    SecondOrder,
    SolverOptions,
    SolverStatus,
    add_embedding_ties,
    blocking_families,
    embed_hermitian,
    solve,
)
from swcopf.errors import DimensionMismatch, InfeasibleOPF, NumericalFailure, RankCheckFailed
from swcopf.powerflow import ComplexVoltageState, pf_residual
from swcopf.utils import vprint

RANK_TOL = 1e-5


###### Lifted matrix ######

@dataclass(frozen=True)
class HermitianLift:
    """
    The lifted matrix W (per-unit, n x n) with its split into W^u, the squared voltage
    magnitudes at generator buses, and W^x, every remaining entry.

    Only the upper triangle of the given matrix is read; the lower triangle is its
    conjugate by construction and the diagonal is real.
    """
    W: np.ndarray
    u_mask: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=complex)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DimensionMismatch(f"W must be a square matrix, got shape {W.shape}")
        upper = np.triu(W, 1)
        W = upper + upper.conj().T + np.diag(W.diagonal().real)
        u_mask = np.asarray(self.u_mask, dtype=bool)
        if u_mask.shape != W.shape:
            raise DimensionMismatch(f"u_mask has shape {u_mask.shape}, expected {W.shape}")
        if np.any(u_mask & ~np.eye(len(W), dtype=bool)):
            raise ValueError("W^u may only contain diagonal entries")
        object.__setattr__(self, 'W', W)
        object.__setattr__(self, 'u_mask', u_mask)

    @classmethod
    def from_network(cls, W, net):
        mask = np.zeros((net.n_bus, net.n_bus), dtype=bool)
        mask[net.gen_bus, net.gen_bus] = True
        return cls(W, mask)

    @property
    def n(self):
        return len(self.W)

    @property
    def x_mask(self):
        return ~self.u_mask

    @property
    def W_u(self):
        """ Squared magnitudes at the generator buses, in bus order """
        return self.W.diagonal().real[self.u_mask.diagonal()]

    @property
    def W_x(self):
        return np.where(self.u_mask, 0.0, self.W)

    def to_dict(self):
        return {'re': self.W.real.tolist(), 'im': self.W.imag.tolist(),
                'u_buses': np.flatnonzero(self.u_mask.diagonal()).tolist()}


###### Column maps and shared row builders ######

class LiftColumns:
    """ Column/scale lookup of W entries stored in an embedded PSD block """

    def __init__(self, ref, n):
        self.ref = ref
        self.emb = embed_hermitian(n)
        self.n = n

    def diag(self, k):
        return self.ref.entry(k, k)

    def re(self, k, l):
        return self.ref.entry(*self.emb.re_pos(k, l))

    def im(self, k, l):
        return self.ref.entry(*self.emb.im_pos(k, l))

    def add_ties(self, target, family='hermitian_tie'):
        add_embedding_ties(target, self.ref, self.emb, family)

    def matrix(self, sol, prog):
        """ Complex W from the primal solution """
        X = sol.block_value(prog, self.ref.block.name)
        return self.emb.extract(X)

def _accumulate(terms, col_scale, coef):
    col, scale = col_scale
    terms[col] = terms.get(col, 0.0) + coef * scale

def line_flow_terms(lift, k, l, y):
    """ Linear forms of P_kl and Q_kl (flow leaving bus k toward bus l) as {col: coef} dicts """
    G, B = y.real, y.imag
    p, q = {}, {}
    _accumulate(p, lift.diag(k), G)
    _accumulate(p, lift.re(k, l), -G)
    _accumulate(p, lift.im(k, l), -B)
    _accumulate(q, lift.diag(k), -B)
    _accumulate(q, lift.re(k, l), B)
    _accumulate(q, lift.im(k, l), -G)
    return p, q

def voltage_difference_terms(lift, l, m):
    """ |V_l - V_m|^2 = W_ll + W_mm - 2 Re W_lm """
    t = {}
    _accumulate(t, lift.diag(l), 1.0)
    _accumulate(t, lift.diag(m), 1.0)
    _accumulate(t, lift.re(l, m), -2.0)
    return t

def add_balance_rows(target, net, lift, p_gen_terms, q_gen_terms, p_rhs, q_rhs):
    """
    Bus balance rows  sum_l P_kl(W) - (generation terms at k) = p_rhs[k], likewise for Q.

    Args:
        target (ProgramBuilder | RowChunk): receives the rows.
        p_gen_terms, q_gen_terms (dict[int, tuple]): per-bus (cols, coefs) of the generation injected at that bus.
        p_rhs, q_rhs (array): per-bus fixed injection (renewable minus load).
    """
    for k in range(net.n_bus):
        p_row, q_row = {}, {}
        for l in net.adjacency[k]:
            y = net.line_admittance[net.line_index(k, l)]
            p, q = line_flow_terms(lift, k, l, y)
            for col, val in p.items():
                p_row[col] = p_row.get(col, 0.0) + val
            for col, val in q.items():
                q_row[col] = q_row.get(col, 0.0) + val
        for row, gen_terms in ((p_row, p_gen_terms), (q_row, q_gen_terms)):
            cols, coefs = gen_terms.get(k, ((), ()))
            for col, val in zip(cols, coefs):
                row[col] = row.get(col, 0.0) - val
        target.add_row(list(p_row), list(p_row.values()), p_rhs[k], 'balance_p')
        target.add_row(list(q_row), list(q_row.values()), q_rhs[k], 'balance_q')

def add_voltage_difference_rows(target, net, lift):
    for line in net.lines:
        t = voltage_difference_terms(lift, line.from_bus, line.to_bus)
        target.add_row(list(t), list(t.values()), line.dv_max ** 2, 'voltage_difference', '<=')

def add_slack_voltage_rows(target, net, col_scale):
    """
    W_00 = V_0^2 on the given column. The magnitude bounds of the slack bus are added
    only when V_0^2 lies strictly inside them, otherwise they would duplicate the equality.
    """
    bus = net.buses[0]
    v0_sq = net.slack_vm ** 2
    if not (bus.vmin ** 2 - 1e-12 <= v0_sq <= bus.vmax ** 2 + 1e-12):
        raise InfeasibleOPF(f"Slack voltage {net.slack_vm} lies outside its bounds [{bus.vmin}, {bus.vmax}]", hint='voltage_magnitude')
    col, scale = col_scale
    target.add_row([col], [scale], v0_sq, 'slack_voltage')
    if bus.vmin ** 2 < v0_sq < bus.vmax ** 2:
        target.add_range([col], [scale], bus.vmin ** 2, bus.vmax ** 2, 'voltage_magnitude')

def add_generation_cost(builder, net, pg_ref):
    """
    Epigraph of the quadratic generation cost. For every generator with c2 > 0 a 3-dim
    second-order block z bounds c2 P^2 <= (z0 + z2) / 2 through z0 - z2 = 2, z1 = 2 sqrt(c2) P.

    Returns:
        tuple: (cols, coefs, constant), a linear upper bound on the total cost.
    """
    cols, coefs, constant = [], [], 0.0
    for g, gen in enumerate(net.generators):
        constant += gen.c0
        if gen.c1 != 0:
            cols.append(pg_ref.col(g))
            coefs.append(gen.c1)
        if gen.c2 > 0:
            z = builder.add_block(SecondOrder(3, f'cost_g{g}'))
            builder.add_row([z.col(0), z.col(2)], [1.0, -1.0], 2.0, 'cost_epigraph')
            builder.add_row([z.col(1), pg_ref.col(g)], [1.0, -2.0 * np.sqrt(gen.c2)], 0.0, 'cost_epigraph')
            cols.extend([z.col(0), z.col(2)])
            coefs.extend([0.5, 0.5])
    return cols, coefs, constant

def _fixed_injection(net, p_renewable, q_renewable):
    n = net.n_bus
    p_ren = np.zeros(n) if p_renewable is None else np.asarray(p_renewable, dtype=float)
    q_ren = np.zeros(n) if q_renewable is None else np.asarray(q_renewable, dtype=float)
    if p_ren.shape != (n,) or q_ren.shape != (n,):
        raise DimensionMismatch(f"Renewable injections must have shape ({n},), got {p_ren.shape} and {q_ren.shape}")
    return p_ren - net.pd, q_ren - net.qd


###### Nominal program ######

@dataclass(frozen=True)
class NominalLayout:
    pg: object
    qg: object
    lift: LiftColumns

def assemble_nominal(net, p_renewable=None, q_renewable=None, return_layout=False):
    """
    Cone program of the relaxed AC-OPF of `net`.

    Args:
        net (Network): the network.
        p_renewable, q_renewable (array, optional): per-bus renewable injection, p.u. Defaults to 0.
        return_layout (bool): also return the column layout used to read the solution.

    Returns:
        ConeProgram, or (ConeProgram, NominalLayout) with return_layout=True.
    """
    n, n_g = net.n_bus, net.n_gen
    p_rhs, q_rhs = _fixed_injection(net, p_renewable, q_renewable)

    builder = ProgramBuilder(name=f'acopf:{net.name}' if net.name else 'acopf')
    pg = builder.add_block(Free(n_g, 'pg')) if n_g else None
    qg = builder.add_block(Free(n_g, 'qg')) if n_g else None
    emb = embed_hermitian(n)
    lift = LiftColumns(builder.add_block(emb.block('W')), n)

    p_terms = {gen.bus: ([pg.col(g)], [1.0]) for g, gen in enumerate(net.generators)}
    q_terms = {gen.bus: ([qg.col(g)], [1.0]) for g, gen in enumerate(net.generators)}
    add_balance_rows(builder, net, lift, p_terms, q_terms, p_rhs, q_rhs)

    add_slack_voltage_rows(builder, net, lift.diag(0))
    for bus in net.buses[1:]:
        col, scale = lift.diag(bus.id)
        builder.add_range([col], [scale], bus.vmin ** 2, bus.vmax ** 2, 'voltage_magnitude')
    add_voltage_difference_rows(builder, net, lift)

    for g, gen in enumerate(net.generators):
        builder.add_range([pg.col(g)], [1.0], gen.pmin, gen.pmax, 'active_power')
        builder.add_range([qg.col(g)], [1.0], gen.qmin, gen.qmax, 'reactive_power')

    if n_g:
        cols, coefs, constant = add_generation_cost(builder, net, pg)
        for col, val in zip(cols, coefs):
            builder.add_cost(col, val)
        builder.offset = constant

    lift.add_ties(builder)
    prog = builder.build()
    if return_layout:
        return prog, NominalLayout(pg, qg, lift)
    return prog


###### Rank test and voltage recovery ######

class RankDiagnostic(NamedTuple):
    rank_one: bool
    spectrum: np.ndarray
    ratio: float

def rank_check(W, tol=RANK_TOL):
    """
    Numerical rank-one test lambda_2 / lambda_1 <= tol.

    Args:
        W (HermitianLift | array): Hermitian matrix.
        tol (float): ratio threshold.

    Returns:
        RankDiagnostic: (rank_one, eigenvalues in descending order, lambda_2 / lambda_1).
    """
    W = W.W if isinstance(W, HermitianLift) else np.asarray(W, dtype=complex)
    spectrum = la.eigvalsh(0.5 * (W + W.conj().T))[::-1]
    if len(spectrum) < 2:
        ratio = 0.0
    elif spectrum[0] <= 0:
        ratio = np.inf
    else:
        ratio = float(max(spectrum[1], 0.0) / spectrum[0])
    return RankDiagnostic(bool(ratio <= tol), spectrum, ratio)

def recover_voltages(W, net=None, tol=RANK_TOL):
    """
    Voltages of a rank-one lift: |V_k| = sqrt(W_kk), angles from the dominant eigenvector
    rotated so that the slack angle is 0.

    Raises:
        RankCheckFailed: lambda_2 / lambda_1 exceeds `tol`.
    """
    W = W.W if isinstance(W, HermitianLift) else np.asarray(W, dtype=complex)
    if net is not None and W.shape != (net.n_bus, net.n_bus):
        raise DimensionMismatch(f"W has shape {W.shape}, network '{net.name}' has {net.n_bus} buses")
    diag = rank_check(W, tol)
    if not diag.rank_one:
        raise RankCheckFailed(f"W is not numerically rank one (lambda_2/lambda_1 = {diag.ratio:.3e} > {tol:.1e}); "
                              f"the relaxation is inexact and no voltage state is recovered.")
    _, vecs = la.eigh(0.5 * (W + W.conj().T))
    u = vecs[:, -1]
    va = np.angle(u) - np.angle(u[0])
    va = (va + np.pi) % (2 * np.pi) - np.pi
    vm = np.sqrt(np.maximum(W.diagonal().real, 0.0))
    return ComplexVoltageState(vm, va)


###### Solve ######

@dataclass
class RelaxedOpfSolution:
    p_gen: np.ndarray
    q_gen: np.ndarray
    lift: HermitianLift
    objective: float
    spectrum: np.ndarray
    rank_ratio: float
    rank_one: bool
    state: ComplexVoltageState | None
    reconstruction_error: float | None
    solver: dict

    def to_dict(self):
        return {
            'p_gen'               : self.p_gen.tolist(),
            'q_gen'               : self.q_gen.tolist(),
            'objective'           : self.objective,
            'spectrum'            : self.spectrum.tolist(),
            'rank_ratio'          : self.rank_ratio,
            'rank_one'            : self.rank_one,
            'state'               : None if self.state is None else self.state.to_dict(),
            'reconstruction_error': self.reconstruction_error,
            'W'                   : self.lift.to_dict(),
            'solver'              : self.solver,
        }

def raise_for_status(sol, prog, infeasible_cls, what):
    """ Map a non-optimal ConeSolution to the domain error `infeasible_cls` or NumericalFailure """
    if sol.status == SolverStatus.PRIMAL_INFEASIBLE:
        families = blocking_families(prog, sol)
        hint = next(iter(families), None)
        raise infeasible_cls(f"{what} is infeasible; the infeasibility certificate is carried mostly by the "
                             f"'{hint}' constraints.", hint=hint)
    if sol.status == SolverStatus.DUAL_INFEASIBLE:
        raise NumericalFailure(f"{what} is unbounded below, which indicates inconsistent cost or limit data.")
    if sol.status == SolverStatus.MAX_ITER:
        raise NumericalFailure(f"{what} did not converge within {sol.iterations} interior-point iterations.")

def solve_nominal(net, opts=None, rank_tol=RANK_TOL, p_renewable=None, q_renewable=None, verbose=True):
    """
    Relaxed AC-OPF: assemble, solve, test the rank of W, and recover voltages when it is one.

    Args:
        net (Network): the network.
        opts (SolverOptions, optional): conic solver options.
        rank_tol (float): threshold on lambda_2 / lambda_1.
        p_renewable, q_renewable (array, optional): per-bus renewable injection, p.u.

    Returns:
        RelaxedOpfSolution

    Raises:
        InfeasibleOPF: the relaxed program has no feasible point (so neither has the AC-OPF).
        NumericalFailure: the conic solver broke down or hit its iteration cap.
    """
    opts = SolverOptions() if opts is None else opts
    vprint("### Solving the relaxed AC-OPF ###", verbose=verbose)
    prog, layout = assemble_nominal(net, p_renewable, q_renewable, return_layout=True)
    vprint(f"Program '{prog.name}': {prog.n_var} variables, {prog.n_row} rows, families {prog.family_counts()}", verbose=verbose)
    sol = solve(prog, opts)
    raise_for_status(sol, prog, InfeasibleOPF, f"The relaxed AC-OPF of '{net.name or 'case'}'")

    n_g = net.n_gen
    p_gen = sol.block_value(prog, 'pg') if n_g else np.zeros(0)
    q_gen = sol.block_value(prog, 'qg') if n_g else np.zeros(0)
    lift = HermitianLift.from_network(layout.lift.matrix(sol, prog), net)
    diag = rank_check(lift, rank_tol)

    state, recon = None, None
    if diag.rank_one:
        state = recover_voltages(lift, net, rank_tol)
        p_fixed, q_fixed = _fixed_injection(net, p_renewable, q_renewable)
        inj = p_fixed + 1j * q_fixed
        np.add.at(inj, net.gen_bus, p_gen + 1j * q_gen)
        dP, dQ = pf_residual(net, state, inj)
        recon = float(max(np.max(np.abs(dP)), np.max(np.abs(dQ))))

    vprint(f"Objective = {sol.primal_obj:.8g}, lambda_2/lambda_1 = {diag.ratio:.3e}, rank one = {diag.rank_one}", verbose=verbose)
    if recon is not None:
        vprint(f"Recovered voltages reproduce the balance equations to {recon:.3e} p.u.", verbose=verbose)
    vprint(" ", verbose=verbose)
    return RelaxedOpfSolution(
        p_gen                = np.asarray(p_gen, dtype=float),
        q_gen                = np.asarray(q_gen, dtype=float),
        lift                 = lift,
        objective            = float(sol.primal_obj),
        spectrum             = diag.spectrum,
        rank_ratio           = diag.ratio,
        rank_one             = diag.rank_one,
        state                = state,
        reconstruction_error = recon,
        solver               = sol.stats(),
    )
