## Economic dispatch and the network-constrained DC-OPF

from dataclasses import dataclass, field

import numpy as np

from swcopf.conic import Free, ProgramBuilder, SolverOptions, solve
from swcopf.errors import DimensionMismatch, InfeasibleDemand, InfeasibleOPF
from swcopf.powerflow import dc_linearize
from swcopf.relaxation import add_generation_cost, raise_for_status
from swcopf.utils import vprint

PRICE_TOL = 1e-10


@dataclass
class DispatchResult:
    """
    Attributes:
        p_gen (np.ndarray): per-generator active output, p.u.
        cost (float): total generation cost.
        price (float): system marginal price (dual of the balance constraint). For DC-OPF this is the slack-bus price.
        angles (np.ndarray | None): DC bus angles, rad (DC-OPF only).
        lmp (np.ndarray | None): per-bus marginal prices (DC-OPF only).
        line_duals (np.ndarray | None): multipliers of the per-line angle limits (DC-OPF only).
    """
    p_gen: np.ndarray
    cost: float
    price: float
    angles: np.ndarray | None = None
    lmp: np.ndarray | None = None
    line_duals: np.ndarray | None = None
    solver: dict = field(default_factory=dict)

    def to_dict(self):
        out = {'p_gen': self.p_gen.tolist(), 'cost': self.cost, 'price': self.price}
        for key in ('angles', 'lmp', 'line_duals'):
            value = getattr(self, key)
            if value is not None:
                out[key] = value.tolist()
        if self.solver:
            out['solver'] = self.solver
        return out

def total_cost(gens, p_gen):
    return float(sum(gen.cost(p) for gen, p in zip(gens, p_gen)))


###### Economic dispatch ######

def _response(gens, price):
    """ Cost-minimizing output of each generator facing `price`, linear-cost units resolved to a bound """
    out = np.empty(len(gens))
    for g, gen in enumerate(gens):
        if gen.c2 > 0:
            p = (price - gen.c1) / (2.0 * gen.c2)
        else:
            p = gen.pmax if price > gen.c1 else gen.pmin
        out[g] = min(max(p, gen.pmin), gen.pmax)
    return out

def _rebalance(gens, p_gen, target, prefer=(), tol=1e-12):
    """ Shift the imbalance target - sum(p_gen) onto units with room: `prefer` first, then largest room first """
    p_gen = p_gen.copy()
    delta = target - p_gen.sum()
    if abs(delta) <= tol:
        return p_gen
    room = np.array([(gen.pmax - p) if delta > 0 else (p - gen.pmin) for gen, p in zip(gens, p_gen)])
    rest = [g for g in np.argsort(-room, kind='stable') if g not in prefer]
    for g in list(prefer) + rest:
        if abs(delta) <= tol:
            break
        step = min(abs(delta), max(room[g], 0.0))
        p_gen[g] += np.sign(delta) * step
        delta -= np.sign(delta) * step
    return p_gen

def solve_ed(gens, demand, tol=PRICE_TOL):
    """
    Economic dispatch by bisection on the marginal price.

    Args:
        gens (list[Generator]): dispatchable units.
        demand (float): aggregate demand P^D, p.u.
        tol (float): bisection tolerance on the price.

    Returns:
        DispatchResult: outputs with equal marginal cost among interior units.

    Raises:
        InfeasibleDemand: demand outside [sum P_min, sum P_max].
    """
    gens = list(gens)
    lo_cap = sum(gen.pmin for gen in gens)
    hi_cap = sum(gen.pmax for gen in gens)
    if not gens or not (lo_cap - 1e-12 <= demand <= hi_cap + 1e-12):
        raise InfeasibleDemand(f"Demand {demand:.6g} p.u. is outside the aggregate capacity [{lo_cap:.6g}, {hi_cap:.6g}] p.u.",
                               hint='capacity')

    lo = min(gen.marginal_cost(gen.pmin) for gen in gens) - 1.0
    hi = max(gen.marginal_cost(gen.pmax) for gen in gens) + 1.0
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if _response(gens, mid).sum() < demand:
            lo = mid
        else:
            hi = mid
    price = 0.5 * (lo + hi)

    # Units with linear cost sit exactly at the price; they absorb whatever the quadratic units leave
    p_gen = _response(gens, price)
    marginal = [g for g, gen in enumerate(gens) if gen.c2 == 0 and abs(gen.c1 - price) <= 1e-6 * max(1.0, abs(price))]
    p_gen = _rebalance(gens, p_gen, demand, prefer=marginal)
    return DispatchResult(p_gen=p_gen, cost=total_cost(gens, p_gen), price=float(price))


###### DC-OPF ######

def solve_dc_opf(net, loads=None, opts=None, verbose=True):
    """
    DC-OPF: minimum generation cost under the lossless DC balance at every bus, generator
    bounds, and the angle surrogate |theta_l - theta_m| <= dv_max of the line limits.

    Args:
        net (Network): the network.
        loads (array, optional): per-bus active load, p.u. Defaults to the nominal loads of `net`.
        opts (SolverOptions, optional): conic solver options.

    Returns:
        DispatchResult: with angles, per-bus prices, and line-limit duals.

    Raises:
        InfeasibleDemand: total load outside the aggregate capacity (hint 'capacity').
        InfeasibleOPF: the line limits block every dispatch (hint 'congestion').
    """
    opts = SolverOptions() if opts is None else opts
    n, n_g = net.n_bus, net.n_gen
    loads = net.pd if loads is None else np.asarray(loads, dtype=float)
    if loads.shape != (n,):
        raise DimensionMismatch(f"loads has shape {loads.shape}, expected ({n},)")
    demand = float(loads.sum())
    lo_cap = sum(gen.pmin for gen in net.generators)
    hi_cap = sum(gen.pmax for gen in net.generators)
    if not n_g or not (lo_cap - 1e-12 <= demand <= hi_cap + 1e-12):
        raise InfeasibleDemand(f"Total load {demand:.6g} p.u. is outside the aggregate capacity [{lo_cap:.6g}, {hi_cap:.6g}] p.u.",
                               hint='capacity')

    vprint("### Solving the DC-OPF ###", verbose=verbose)
    dc = dc_linearize(net)
    builder = ProgramBuilder(name=f'dcopf:{net.name}' if net.name else 'dcopf')
    pg = builder.add_block(Free(n_g, 'pg'))
    theta = builder.add_block(Free(n - 1, 'theta')) if n > 1 else None

    def theta_col(k):
        return None if k == 0 else theta.col(k - 1)

    balance_rows = []
    for k in range(n):
        cols, vals = [], []
        for l in range(n):
            if dc.bbus[k, l] != 0 and l != 0:
                cols.append(theta_col(l))
                vals.append(dc.bbus[k, l])
        g = net.gen_at_bus[k]
        if g >= 0:
            cols.append(pg.col(g))
            vals.append(-1.0)
        balance_rows.append(builder.add_row(cols, vals, -loads[k], 'balance_p'))

    line_rows = []
    for line in net.lines:
        cols, vals = [], []
        for k, sign in ((line.from_bus, 1.0), (line.to_bus, -1.0)):
            if k != 0:
                cols.append(theta_col(k))
                vals.append(sign)
        line_rows.append(builder.add_range(cols, vals, -line.dv_max, line.dv_max, 'voltage_difference'))

    for g, gen in enumerate(net.generators):
        builder.add_range([pg.col(g)], [1.0], gen.pmin, gen.pmax, 'active_power')

    cols, coefs, constant = add_generation_cost(builder, net, pg)
    for col, val in zip(cols, coefs):
        builder.add_cost(col, val)
    builder.offset = constant

    prog = builder.build()
    sol = solve(prog, opts)
    try:
        raise_for_status(sol, prog, InfeasibleOPF, f"The DC-OPF of '{net.name or 'case'}'")
    except InfeasibleOPF as e:
        raise InfeasibleOPF(f"{e} No dispatch meets the line limits.", hint='congestion') from None

    # Remove the solver-tolerance imbalance so the lossless balance holds exactly
    p_gen = _rebalance(net.generators, np.asarray(sol.block_value(prog, 'pg'), dtype=float), demand)
    p_inj = -loads.copy()
    np.add.at(p_inj, net.gen_bus, p_gen)
    angles = dc.solve_angles(p_inj)

    lmp = -sol.y[balance_rows]
    line_duals = np.array([sol.y[list(rows)].sum() for rows in line_rows])
    result = DispatchResult(
        p_gen      = p_gen,
        cost       = total_cost(net.generators, p_gen),
        price      = float(lmp[0]),
        angles     = angles,
        lmp        = lmp,
        line_duals = line_duals,
        solver     = sol.stats(),
    )
    vprint(f"Cost = {result.cost:.8g}, binding lines = {int(np.sum(np.abs(line_duals) > 1e-6))}", verbose=verbose)
    vprint(" ", verbose=verbose)
    return result
