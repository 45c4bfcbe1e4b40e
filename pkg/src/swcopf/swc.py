## Sample complexity and the scenario-with-certificates (SwC) AC-OPF

"""
The SwC program shares one control decision u = (P^G, W^u, alpha) across N sampled
scenarios. Every scenario i gets its own certificate (Q^G[i], W[i]) satisfying the
relaxed AC-OPF constraints under the deployed dispatch P^G + alpha s^T Re(delta^(i)),
with W[i]_kk = W^u_k at generator buses and W[i] >= 0. The objective is the epigraph

    minimize gamma  s.t.  f(P^G) + gamma_b sum Q^G[i] + gamma_l sum_{L_prob} L[i]_lm <= gamma  for all i

where L[i]_lm = |S_lm| + |S_ml| is carried by two 3-dim second-order cones per line.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import binom

from swcopf.conic import (
    Free,
    NonNeg,
    ProgramBuilder,
    RowChunk,
    SecondOrder,
    SolverOptions,
    embed_hermitian,
    solve,
)
from swcopf.errors import DimensionMismatch, InfeasibleSwC
from swcopf.relaxation import (
    HermitianLift,
    LiftColumns,
    add_balance_rows,
    add_generation_cost,
    add_slack_voltage_rows,
    add_voltage_difference_rows,
    line_flow_terms,
    raise_for_status,
    rank_check,
)
from swcopf.uncertainty import DeploymentVector, ScenarioSet, mismatch, sample
from swcopf.utils import vprint

ALPHA_REGULARIZATION = 1e-9


###### Sample complexity ######

@dataclass(frozen=True)
class SampleComplexitySpec:
    """ Risk level eps, confidence beta, and the number n_u of scenario-independent decision variables """
    eps: float
    beta: float
    n_u: int

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if isinstance(self.n_u, bool) or int(self.n_u) != self.n_u or self.n_u < 1:
            raise ValueError(f"n_u must be a positive integer, got {self.n_u}")
        object.__setattr__(self, 'n_u', int(self.n_u))

    @classmethod
    def for_network(cls, eps, beta, net, n_u=None):
        """ n_u defaults to dim(P^G) + dim(W^u) + dim(alpha) + 1 = 3 n_g + 1 """
        return cls(eps, beta, shared_dimension(net) if n_u is None else n_u)

def shared_dimension(net):
    return 3 * net.n_gen + 1

def n_swc_explicit(spec):
    """ ceil( e / (eps (e - 1)) * (ln(1/beta) + n_u - 1) ) """
    e = math.e
    return int(math.ceil(e / (spec.eps * (e - 1.0)) * (math.log(1.0 / spec.beta) + spec.n_u - 1)))

def binomial_tail(N, spec):
    """ sum_{i < n_u} C(N, i) eps^i (1 - eps)^(N - i), the probability that N samples leave risk above eps """
    return float(binom.cdf(spec.n_u - 1, N, spec.eps))

def n_swc_exact(spec):
    """ Smallest N whose binomial tail is at most beta, by bisection on the log-domain tail """
    log_beta = math.log(spec.beta)

    def ok(N):
        return binom.logcdf(spec.n_u - 1, N, spec.eps) <= log_beta

    lo = spec.n_u - 1          # tail is 1 below n_u samples
    hi = max(n_swc_explicit(spec), spec.n_u)
    while not ok(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return int(hi)

def n_swc(spec, bound='exact'):
    if bound == 'exact':
        return n_swc_exact(spec)
    if bound == 'explicit':
        return n_swc_explicit(spec)
    raise ValueError(f"bound must be 'exact' or 'explicit', got {bound!r}")


###### Decision types ######

class OperatingSetpoints(NamedTuple):
    p_gen: np.ndarray
    vm_gen: np.ndarray

@dataclass(frozen=True)
class ControlDecision:
    """
    Scenario-independent controls.

    Attributes:
        p_gen (np.ndarray): nominal dispatch P^G per generator.
        w_u (np.ndarray): squared voltage magnitude at each generator's bus.
        alpha (DeploymentVector): mismatch shares.
        gamma (float): epigraph value.
        provenance (dict): eps, beta, N, seed, bound, model hash of the design run.
    """
    p_gen: np.ndarray
    w_u: np.ndarray
    alpha: DeploymentVector
    gamma: float = 0.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'p_gen', np.asarray(self.p_gen, dtype=float))
        object.__setattr__(self, 'w_u', np.asarray(self.w_u, dtype=float))
        if not (self.p_gen.shape == self.w_u.shape == self.alpha.alpha.shape):
            raise DimensionMismatch(f"p_gen {self.p_gen.shape}, w_u {self.w_u.shape}, alpha {self.alpha.alpha.shape} must agree")

    @property
    def vm_gen(self):
        return np.sqrt(np.maximum(self.w_u, 0.0))

    def to_dict(self):
        return {
            'p_gen'     : self.p_gen.tolist(),
            'w_u'       : self.w_u.tolist(),
            'vm_gen'    : self.vm_gen.tolist(),
            'alpha'     : self.alpha.alpha.tolist(),
            'gamma'     : self.gamma,
            'provenance': self.provenance,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d['p_gen'], d['w_u'], DeploymentVector.from_raw(d['alpha']), float(d.get('gamma', 0.0)), dict(d.get('provenance', {})))
        except KeyError as e:
            raise ValueError(f"Control decision is missing field {e}") from None

def apply_realtime(dec, delta):
    """ Setpoints after observing delta: P^G + alpha s^T Re(delta), |V| = sqrt(W^u) at generator buses """
    m = mismatch(delta)
    return OperatingSetpoints(dec.p_gen + dec.alpha.alpha * m, dec.vm_gen)

@dataclass
class ScenarioCertificate:
    q_gen: np.ndarray
    lift: HermitianLift
    rank_ratio: float

@dataclass
class SwcSolution:
    decision: ControlDecision
    certificates: list
    objective: float
    generation_cost: float
    reactive_penalty: np.ndarray
    line_penalty: np.ndarray
    spec: SampleComplexitySpec | None
    n_scenarios: int
    seed: int | None
    solver: dict

    @property
    def epigraph_slack(self):
        return self.objective - (self.generation_cost + self.reactive_penalty + self.line_penalty)

    def to_dict(self):
        return {
            'decision'        : self.decision.to_dict(),
            'objective'       : self.objective,
            'generation_cost' : self.generation_cost,
            'scenarios'       : [
                {'index': i, 'q_gen': c.q_gen.tolist(), 'rank_ratio': c.rank_ratio,
                 'reactive_penalty': float(rp), 'line_penalty': float(lp), 'epigraph_slack': float(sl)}
                for i, (c, rp, lp, sl) in enumerate(zip(self.certificates, self.reactive_penalty, self.line_penalty, self.epigraph_slack))
            ],
            'eps'             : None if self.spec is None else self.spec.eps,
            'beta'            : None if self.spec is None else self.spec.beta,
            'n_u'             : None if self.spec is None else self.spec.n_u,
            'N'               : self.n_scenarios,
            'seed'            : self.seed,
            'solver'          : self.solver,
        }


###### Program assembly ######

@dataclass
class SwcLayout:
    pg: object
    wu: object
    alpha: object
    gamma: object
    scenario_qg: list
    scenario_lift: list
    scenario_lines: list
    scenario_rows: list

def _resolve_lines(net, lines_prob):
    if lines_prob is None:
        return list(range(net.n_line))
    out = []
    for item in lines_prob:
        idx = net.line_index(*item) if isinstance(item, (tuple, list)) else int(item)
        if not 0 <= idx < net.n_line:
            raise ValueError(f"Line index {idx} is outside 0..{net.n_line - 1}")
        out.append(idx)
    return sorted(set(out))

def _scenario_chunk(net, model, delta, layout, i, cost_expr, penalties, lines):
    """ All rows of scenario i, numbered locally """
    gamma_b, gamma_l = penalties
    chunk = RowChunk()
    lift = layout.scenario_lift[i]
    qg = layout.scenario_qg[i]
    pg, wu, alpha = layout.pg, layout.wu, layout.alpha
    m = mismatch(delta)
    p_rhs, q_rhs = model.fixed_injection(net, delta)

    p_terms = {gen.bus: ([pg.col(g), alpha.col(g)], [1.0, m]) for g, gen in enumerate(net.generators)}
    q_terms = {gen.bus: ([qg.col(g)], [1.0]) for g, gen in enumerate(net.generators)}
    add_balance_rows(chunk, net, lift, p_terms, q_terms, p_rhs, q_rhs)

    for g, gen in enumerate(net.generators):
        chunk.add_range([pg.col(g), alpha.col(g)], [1.0, m], gen.pmin, gen.pmax, 'active_power')
        chunk.add_range([qg.col(g)], [1.0], gen.qmin, gen.qmax, 'reactive_power')
        col, scale = lift.diag(gen.bus)
        chunk.add_row([col, wu.col(g)], [scale, -1.0], 0.0, 'lift_tie')

    if net.gen_at_bus[0] < 0:
        add_slack_voltage_rows(chunk, net, lift.diag(0))
    for bus in net.buses[1:]:
        if net.gen_at_bus[bus.id] < 0:
            col, scale = lift.diag(bus.id)
            chunk.add_range([col], [scale], bus.vmin ** 2, bus.vmax ** 2, 'voltage_magnitude')
    add_voltage_difference_rows(chunk, net, lift)

    cols, coefs, constant = cost_expr
    epi = dict(zip(cols, coefs))
    if gamma_b != 0:
        for g in range(net.n_gen):
            epi[qg.col(g)] = epi.get(qg.col(g), 0.0) + gamma_b
    for idx, (soc_from, soc_to) in zip(lines, layout.scenario_lines[i]):
        line = net.lines[idx]
        y = net.line_admittance[idx]
        for soc, (k, l) in ((soc_from, (line.from_bus, line.to_bus)), (soc_to, (line.to_bus, line.from_bus))):
            p, q = line_flow_terms(lift, k, l, y)
            chunk.add_row([soc.col(1)] + list(p), [1.0] + [-v for v in p.values()], 0.0, 'line_flow')
            chunk.add_row([soc.col(2)] + list(q), [1.0] + [-v for v in q.values()], 0.0, 'line_flow')
            epi[soc.col(0)] = epi.get(soc.col(0), 0.0) + gamma_l
    epi[layout.gamma.col(0)] = -1.0
    chunk.add_row(list(epi), list(epi.values()), -constant, 'epigraph', '<=')

    lift.add_ties(chunk)
    return chunk

def assemble_swc(net, model, scenarios, penalties=(0.0, 0.0), lines_prob=None, threads=1, return_layout=False):
    """
    Cone program of the SwC AC-OPF over the sampled scenarios.

    Args:
        net (Network): the network, at least one generator.
        model (UncertaintyModel): nominal renewable injections (scenario deltas come from `scenarios`).
        scenarios (ScenarioSet | list): N >= 1 scenarios.
        penalties (tuple): (gamma_b, gamma_l) >= 0.
        lines_prob (list, optional): line indices or (from, to) pairs in L_prob. Defaults to all lines.
        threads (int): worker threads for the per-scenario row assembly.
        return_layout (bool): also return the SwcLayout.

    Returns:
        ConeProgram, or (ConeProgram, SwcLayout).
    """
    scenarios = list(scenarios)
    gamma_b, gamma_l = (float(p) for p in penalties)
    if not scenarios:
        raise ValueError("The scenario program needs at least one scenario")
    if gamma_b < 0 or gamma_l < 0:
        raise ValueError(f"Penalties must be nonnegative, got gamma_b={gamma_b}, gamma_l={gamma_l}")
    if net.n_gen == 0:
        raise ValueError(f"Network '{net.name}' has no generator to deploy")
    if model.n_bus != net.n_bus:
        raise DimensionMismatch(f"Uncertainty model has {model.n_bus} buses, network '{net.name}' has {net.n_bus}")
    for v in scenarios:
        if v.n_bus != net.n_bus:
            raise DimensionMismatch(f"Scenario of dimension {2 * v.n_bus} does not match {net.n_bus} buses")
    lines = _resolve_lines(net, lines_prob) if gamma_l > 0 else []
    n, n_g, N = net.n_bus, net.n_gen, len(scenarios)

    builder = ProgramBuilder(name=f'swc:{net.name}' if net.name else 'swc')
    pg = builder.add_block(Free(n_g, 'pg'))
    wu = builder.add_block(Free(n_g, 'wu'))
    alpha = builder.add_block(NonNeg(n_g, 'alpha'))
    gamma = builder.add_block(Free(1, 'gamma'))
    builder.add_cost(gamma.col(0), 1.0)

    builder.add_row(list(alpha.cols), [1.0] * n_g, 1.0, 'alpha_simplex')
    for g, gen in enumerate(net.generators):
        if gen.bus == 0:
            add_slack_voltage_rows(builder, net, (wu.col(g), 1.0))
        else:
            bus = net.buses[gen.bus]
            builder.add_range([wu.col(g)], [1.0], bus.vmin ** 2, bus.vmax ** 2, 'voltage_magnitude')

    cost_expr = add_generation_cost(builder, net, pg)

    if n_g > 1:
        # ALPHA_REGULARIZATION * ||alpha - 1/n_g||^2 breaks ties among equally good deployment vectors
        z = builder.add_block(SecondOrder(n_g + 2, 'alpha_reg'))
        builder.add_row([z.col(0), z.col(n_g + 1)], [1.0, -1.0], 2.0, 'alpha_regularizer')
        for g in range(n_g):
            builder.add_row([z.col(1 + g), alpha.col(g)], [1.0, -2.0], -2.0 / n_g, 'alpha_regularizer')
        builder.add_cost(z.col(0), 0.5 * ALPHA_REGULARIZATION)
        builder.add_cost(z.col(n_g + 1), 0.5 * ALPHA_REGULARIZATION)

    layout = SwcLayout(pg, wu, alpha, gamma, [], [], [], [])
    for i in range(N):
        layout.scenario_qg.append(builder.add_block(Free(n_g, f'qg[{i}]')))
        layout.scenario_lift.append(LiftColumns(builder.add_block(embed_hermitian(n).block(f'W[{i}]')), n))
        socs = []
        for idx in lines:
            socs.append((builder.add_block(SecondOrder(3, f'L[{i}]_{idx}_from')),
                         builder.add_block(SecondOrder(3, f'L[{i}]_{idx}_to'))))
        layout.scenario_lines.append(socs)

    def build(i):
        return _scenario_chunk(net, model, scenarios[i], layout, i, cost_expr, (gamma_b, gamma_l), lines)

    if threads > 1 and N > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(build, range(N)))
    else:
        chunks = [build(i) for i in range(N)]
    for chunk in chunks:
        start = builder.add_chunk(chunk)
        layout.scenario_rows.append(range(start, start + len(chunk)))

    prog = builder.build()
    if return_layout:
        return prog, layout
    return prog

###### Solve ######

def _line_penalty(net, W, lines):
    total = 0.0
    for idx in lines:
        line = net.lines[idx]
        y = net.line_admittance[idx]
        l, m = line.from_bus, line.to_bus
        total += abs(np.conj(y) * (W[l, l] - W[l, m])) + abs(np.conj(y) * (W[m, m] - W[m, l]))
    return total

def solve_swc(net, model, spec, penalties=(0.0, 0.0), lines_prob=None, seed=0, bound='exact',
              scenarios=None, opts=None, threads=1, verbose=True):
    """
    Design procedure: draw N scenarios, assemble the SwC program, solve, and extract the decision.

    Args:
        net (Network): the network.
        model (UncertaintyModel): uncertainty model.
        spec (SampleComplexitySpec): (eps, beta, n_u).
        penalties (tuple): (gamma_b, gamma_l).
        lines_prob (list, optional): lines of the flow penalty, defaults to all lines.
        seed (int): training seed.
        bound (str): 'exact' (binomial tail) or 'explicit' (closed form) sample count.
        scenarios (ScenarioSet, optional): use these instead of drawing.
        opts (SolverOptions, optional): conic solver options.
        threads (int): worker threads for sampling and assembly.

    Returns:
        SwcSolution

    Raises:
        InfeasibleSwC: some sampled scenario admits no certificate for any decision.
        NumericalFailure: solver breakdown or iteration cap.
    """
    opts = SolverOptions() if opts is None else opts
    vprint("### Solving the SwC AC-OPF ###", verbose=verbose)
    if scenarios is None:
        N = n_swc(spec, bound)
        vprint(f"eps = {spec.eps}, beta = {spec.beta}, n_u = {spec.n_u} -> N = {N} ({bound} bound)", verbose=verbose)
        scenarios = sample(model, N, seed, eps=spec.eps, beta=spec.beta, threads=threads, verbose=verbose)
    else:
        seed = scenarios.seed if isinstance(scenarios, ScenarioSet) else seed
    N = len(scenarios)

    prog, layout = assemble_swc(net, model, scenarios, penalties, lines_prob, threads, return_layout=True)
    vprint(f"Program '{prog.name}': {prog.n_var} variables, {prog.n_row} rows, {len(prog.blocks)} cone blocks", verbose=verbose)
    sol = solve(prog, opts)
    raise_for_status(sol, prog, InfeasibleSwC, f"The SwC program over {N} scenarios")

    gamma_b, gamma_l = (float(p) for p in penalties)
    lines = _resolve_lines(net, lines_prob) if gamma_l > 0 else []
    p_gen = sol.x[layout.pg.cols]
    w_u = sol.x[layout.wu.cols]
    alpha = DeploymentVector.from_raw(sol.x[layout.alpha.cols])
    gamma = float(sol.x[layout.gamma.col(0)])

    certificates, reactive, line_pen = [], [], []
    for i in range(N):
        q_gen = sol.x[layout.scenario_qg[i].cols]
        lift = HermitianLift.from_network(layout.scenario_lift[i].matrix(sol, prog), net)
        certificates.append(ScenarioCertificate(q_gen, lift, rank_check(lift).ratio))
        reactive.append(gamma_b * q_gen.sum())
        line_pen.append(gamma_l * _line_penalty(net, lift.W, lines))

    provenance = {
        'eps'       : None if spec is None else spec.eps,
        'beta'      : None if spec is None else spec.beta,
        'n_u'       : None if spec is None else spec.n_u,
        'N'         : N,
        'seed'      : seed,
        'bound'     : bound,
        'model_hash': model.hash,
        'penalties' : [gamma_b, gamma_l],
    }
    decision = ControlDecision(p_gen, w_u, alpha, gamma, provenance)
    gen_cost = float(sum(gen.cost(p) for gen, p in zip(net.generators, p_gen)))
    vprint(f"gamma* = {gamma:.8g}, generation cost = {gen_cost:.8g}, alpha = {np.round(alpha.alpha, 6).tolist()}", verbose=verbose)
    vprint(" ", verbose=verbose)
    return SwcSolution(
        decision         = decision,
        certificates     = certificates,
        objective        = gamma,
        generation_cost  = gen_cost,
        reactive_penalty = np.array(reactive),
        line_penalty     = np.array(line_pen),
        spec             = spec,
        n_scenarios      = N,
        seed             = seed,
        solver           = sol.stats(),
    )

def assemble_certificate(net, model, dec, delta):
    """
    Feasibility program of one scenario block with the controls fixed: find (Q^G, W >= 0)
    for the deployed dispatch of `dec` under `delta`. The deployed active-power bounds do
    not involve the certificate and are left to the caller.
    """
    n, n_g = net.n_bus, net.n_gen
    p_bar, _ = apply_realtime(dec, delta)
    p_rhs, q_rhs = model.fixed_injection(net, delta)
    p_rhs = p_rhs.copy()
    np.add.at(p_rhs, net.gen_bus, p_bar)

    builder = ProgramBuilder(name='certificate')
    qg = builder.add_block(Free(n_g, 'qg'))
    lift = LiftColumns(builder.add_block(embed_hermitian(n).block('W')), n)
    q_terms = {gen.bus: ([qg.col(g)], [1.0]) for g, gen in enumerate(net.generators)}
    add_balance_rows(builder, net, lift, {}, q_terms, p_rhs, q_rhs)
    for g, gen in enumerate(net.generators):
        builder.add_range([qg.col(g)], [1.0], gen.qmin, gen.qmax, 'reactive_power')
        col, scale = lift.diag(gen.bus)
        builder.add_row([col], [scale], dec.w_u[g], 'lift_tie')
    if net.gen_at_bus[0] < 0:
        add_slack_voltage_rows(builder, net, lift.diag(0))
    for bus in net.buses[1:]:
        if net.gen_at_bus[bus.id] < 0:
            col, scale = lift.diag(bus.id)
            builder.add_range([col], [scale], bus.vmin ** 2, bus.vmax ** 2, 'voltage_magnitude')
    add_voltage_difference_rows(builder, net, lift)
    lift.add_ties(builder)
    return builder.build()

def certificate_residual(net, model, dec, cert, delta):
    """
    Largest violation of the scenario block at (dec, cert), evaluated directly from W:
    bus balance, generator bounds, voltage bounds, line limits, and the W^u ties.
    """
    W = cert.lift.W
    p_bar, _ = apply_realtime(dec, delta)
    p_fixed, q_fixed = model.fixed_injection(net, delta)
    inj = p_fixed + 1j * q_fixed
    np.add.at(inj, net.gen_bus, p_bar + 1j * cert.q_gen)
    S = np.zeros(net.n_bus, dtype=complex)
    for line, y in zip(net.lines, net.line_admittance):
        l, m = line.from_bus, line.to_bus
        S[l] += np.conj(y) * (W[l, l] - W[l, m])
        S[m] += np.conj(y) * (W[m, m] - W[m, l])
    worst = float(np.max(np.abs(inj - S)))

    def over(value, lo, hi):
        return max(0.0, lo - value, value - hi)

    for g, gen in enumerate(net.generators):
        worst = max(worst, over(p_bar[g], gen.pmin, gen.pmax), over(cert.q_gen[g], gen.qmin, gen.qmax),
                    abs(W[gen.bus, gen.bus].real - dec.w_u[g]))
    for k, bus in enumerate(net.buses):
        worst = max(worst, over(W[k, k].real, bus.vmin ** 2, bus.vmax ** 2))
    for line in net.lines:
        l, m = line.from_bus, line.to_bus
        worst = max(worst, over((W[l, l] + W[m, m] - 2 * W[l, m].real).real, -np.inf, line.dv_max ** 2))
    return worst

def sweep_sample_sizes(net, model, sizes, penalties=(0.0, 0.0), lines_prob=None, seed=0, opts=None, threads=1, verbose=True):
    """
    gamma* for nested scenario sets: the first N draws of one stream for every N in `sizes`.

    Returns:
        list[dict]: rows {'N', 'gamma', 'generation_cost'} in increasing N.
    """
    sizes = sorted(set(int(s) for s in sizes))
    if not sizes or sizes[0] < 1:
        raise ValueError(f"Sample sizes must be positive integers, got {sizes}")
    vprint("### Sweeping the number of scenarios ###", verbose=verbose)
    pool = sample(model, sizes[-1], seed, threads=threads)
    rows = []
    for N in sizes:
        sol = solve_swc(net, model, None, penalties, lines_prob, seed, scenarios=pool.prefix(N), opts=opts,
                        threads=threads, verbose=False)
        rows.append({'N': N, 'gamma': sol.objective, 'generation_cost': sol.generation_cost})
        vprint(f"N = {N:5d}: gamma* = {sol.objective:.8g}", verbose=verbose)
    vprint(" ", verbose=verbose)
    return rows
