## Out-of-sample Monte Carlo estimate of the violation probability of a control decision

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.stats import beta as beta_dist
from scipy.stats import binom

from swcopf.conic import SolverOptions, SolverStatus, blocking_families, solve
from swcopf.errors import NumericalFailure, PowerFlowError, SeedReuseError
from swcopf.powerflow import VIOLATION_FAMILIES, InjectionSpec, Violation, check_limits, solve_pf
from swcopf.swc import apply_realtime, assemble_certificate, solve_swc
from swcopf.uncertainty import Gaussian, UncertaintyModel, mismatch, sample
from swcopf.utils import vprint

METHODS = ('pf-newton', 'sdp-feasibility')
PF_INFEASIBLE = 'pf_infeasible'
NO_CERTIFICATE = 'no_certificate'
RISK_FAMILIES = VIOLATION_FAMILIES + (PF_INFEASIBLE,)
TAIL_RADIUS = 3.0 # Mahalanobis radius beyond which a Gaussian draw counts as a tail event


###### Single scenario ######

@dataclass(frozen=True)
class ScenarioCheck:
    """
    Outcome of one feasibility test.

    Attributes:
        feasible (bool): a state exists and respects every limit.
        method (str): 'pf-newton' or 'sdp-feasibility'.
        violations (tuple[Violation]): what failed, empty when feasible.
        index (int | None): stream index of the scenario.
        mismatch (float): s^T Re(delta) of the scenario.
        message (str): solver message for infeasible power flows or certificates.
    """
    feasible: bool
    method: str
    violations: tuple = ()
    index: int | None = None
    mismatch: float = 0.0
    message: str = ''

    @property
    def families(self):
        """ Each violated family once, in first-seen order """
        return tuple(dict.fromkeys(v.family for v in self.violations))

    def to_dict(self):
        return {
            'index'     : self.index,
            'feasible'  : self.feasible,
            'method'    : self.method,
            'mismatch'  : self.mismatch,
            'families'  : list(self.families),
            'violations': [v.to_dict() for v in self.violations],
            'message'   : self.message,
        }

def _deployed_bounds(net, dec, p_bar, tol):
    """ Generator bounds on the deployed dispatch and the voltage setpoints, no state needed """
    out = []
    for g, gen in enumerate(net.generators):
        element = f'generator {g} (bus {gen.bus})'
        if p_bar[g] > gen.pmax + tol:
            out.append(Violation('active_power', element, float(p_bar[g]), gen.pmax, float(p_bar[g] - gen.pmax)))
        elif p_bar[g] < gen.pmin - tol:
            out.append(Violation('active_power', element, float(p_bar[g]), gen.pmin, float(gen.pmin - p_bar[g])))
    for g, gen in enumerate(net.generators):
        bus = net.buses[gen.bus]
        vm = float(dec.vm_gen[g])
        if vm > bus.vmax + tol:
            out.append(Violation('voltage_magnitude', f'bus {gen.bus}', vm, bus.vmax, vm - bus.vmax))
        elif vm < bus.vmin - tol:
            out.append(Violation('voltage_magnitude', f'bus {gen.bus}', vm, bus.vmin, bus.vmin - vm))
    return out

def _check_pf(net, dec, delta, model, pf_tol, pf_max_iter, tol):
    setpoints = apply_realtime(dec, delta)
    p_fixed, q_fixed = model.fixed_injection(net, delta)
    spec = InjectionSpec.from_network(net, p_gen=setpoints.p_gen, vm_gen=setpoints.vm_gen, p_fixed=p_fixed, q_fixed=q_fixed)
    try:
        sol = solve_pf(net, spec, tol=pf_tol, max_iter=pf_max_iter)
    except PowerFlowError as e:
        residual = float(getattr(e, 'residual', None) or np.nan)
        return (Violation(PF_INFEASIBLE, 'network', residual, pf_tol, residual),), str(e)
    return check_limits(net, sol, tol=tol).violations, ''

def _check_sdp(net, dec, delta, model, opts, tol):
    p_bar, _ = apply_realtime(dec, delta)
    violations = _deployed_bounds(net, dec, p_bar, tol)
    if violations:
        return tuple(violations), ''
    prog = assemble_certificate(net, model, dec, delta)
    try:
        sol = solve(prog, opts)
    except NumericalFailure as e:
        return (Violation(NO_CERTIFICATE, 'certificate', np.nan, 0.0, np.nan),), str(e)
    if sol.status == SolverStatus.OPTIMAL:
        return (), ''
    if sol.status == SolverStatus.PRIMAL_INFEASIBLE:
        family = next(iter(blocking_families(prog, sol)), NO_CERTIFICATE)
        return (Violation(family, 'certificate', np.nan, 0.0, np.nan),), f"no certificate, blocked by '{family}' constraints"
    return (Violation(NO_CERTIFICATE, 'certificate', np.nan, 0.0, np.nan),), f"certificate search ended with status '{sol.status.value}'"

def check_scenario(net, dec, delta, model=None, method='pf-newton', opts=None, pf_tol=1e-8, pf_max_iter=30, tol=1e-6):
    """
    Test whether the decision `dec` admits a feasible operating state under the fluctuation `delta`.

    Args:
        net (Network): the network.
        dec (ControlDecision): controls to test.
        delta (UncertaintyVector): the fluctuation.
        model (UncertaintyModel, optional): nominal renewable injections. Defaults to none.
        method (str): 'pf-newton' solves the AC power flow with |V| = sqrt(W^u) at the PV buses and checks
            every limit including the Q^G bounds. 'sdp-feasibility' fixes the controls in the relaxed
            single-scenario block and tests whether a certificate (Q^G, W >= 0) exists.
        opts (SolverOptions, optional): conic solver options for 'sdp-feasibility'.
        pf_tol, pf_max_iter: Newton settings for 'pf-newton'.
        tol (float): limit tolerance, p.u.

    Returns:
        ScenarioCheck: non-convergence is reported as an infeasible outcome under 'pf_infeasible'.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    model = UncertaintyModel.point_mass(net) if model is None else model
    if method == 'pf-newton':
        violations, message = _check_pf(net, dec, delta, model, pf_tol, pf_max_iter, tol)
    else:
        violations, message = _check_sdp(net, dec, delta, model, SolverOptions() if opts is None else opts, tol)
    return ScenarioCheck(
        feasible   = not violations,
        method     = method,
        violations = tuple(violations),
        index      = getattr(delta, 'index', None),
        mismatch   = mismatch(delta),
        message    = message,
    )


###### Risk estimate ######

def clopper_pearson(k, M, eta=0.05):
    """
    One-sided exact binomial bounds at level eta on each side: P(p < lower) <= eta and P(p > upper) <= eta.

    Returns:
        tuple: (lower, upper). k = 0 gives upper = 1 - eta^(1/M).
    """
    if M < 1 or not 0 <= k <= M:
        raise ValueError(f"Need 0 <= k <= M and M >= 1, got k={k}, M={M}")
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    lower = 0.0 if k == 0 else float(beta_dist.ppf(eta, k, M - k + 1))
    upper = 1.0 if k == M else float(beta_dist.ppf(1.0 - eta, k + 1, M - k))
    return lower, upper

@dataclass
class RiskReport:
    """
    Attributes:
        M (int): validation samples.
        violations (int): samples without a feasible state.
        p_hat (float): violations / M.
        lower, upper (float): Clopper-Pearson bounds at confidence 1 - eta.
        eta (float): confidence parameter.
        breakdown (dict): per-family count; a sample may count under several families.
        seed (int): validation seed.
        method (str): feasibility test used.
        eps (float | None): declared risk level of the decision.
        passed (bool | None): upper <= eps, None without a declared eps.
        tail_violations (int): violating samples with a Gaussian draw beyond the tail radius.
        outcomes (list[ScenarioCheck]): per-sample results in stream order.
    """
    M: int
    violations: int
    p_hat: float
    lower: float
    upper: float
    eta: float
    breakdown: dict
    seed: int
    method: str
    eps: float | None = None
    passed: bool | None = None
    tail_violations: int = 0
    outcomes: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            'M'              : self.M,
            'violations'     : self.violations,
            'p_hat'          : self.p_hat,
            'interval'       : [self.lower, self.upper],
            'eta'            : self.eta,
            'breakdown'      : self.breakdown,
            'seed'           : self.seed,
            'method'         : self.method,
            'eps'            : self.eps,
            'passed'         : self.passed,
            'tail_violations': self.tail_violations,
        }

    def outcome_rows(self):
        """ One flat row per validation sample, for CSV export """
        return [{'index': o.index, 'feasible': int(o.feasible), 'mismatch': o.mismatch, 'families': ';'.join(o.families)}
                for o in self.outcomes]

def _gaussian_tail(model, delta):
    n = model.n_bus
    d = delta.delta
    for offset, supports in ((0, model.load_supports), (n, model.renewable_supports)):
        for k, sup in supports.items():
            if isinstance(sup, Gaussian):
                z = np.array([d[offset + k].real, d[offset + k].imag])
                if z @ la.pinv(np.asarray(sup.cov)) @ z > TAIL_RADIUS ** 2:
                    return True
    return False

def _check_all(net, dec, scenarios, model, method, opts, threads, pf_tol, pf_max_iter):
    def run(delta):
        return check_scenario(net, dec, delta, model, method, opts, pf_tol, pf_max_iter)

    if threads > 1 and len(scenarios) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, scenarios))
    return [run(delta) for delta in scenarios]

def estimate_risk(net, dec, model, M=1000, eta=0.05, seed=1, method='pf-newton', eps=None, opts=None,
                  threads=1, pf_tol=1e-8, pf_max_iter=30, verbose=True):
    """
    Violation probability of `dec` on M fresh i.i.d. draws with exact Clopper-Pearson bounds.

    Args:
        net (Network): the network.
        dec (ControlDecision): decision under audit.
        model (UncertaintyModel): the uncertainty model to draw from.
        M (int): validation sample count, at least 1.
        eta (float): confidence parameter of the interval.
        seed (int): validation seed, must differ from the training seed in dec.provenance.
        method (str): 'pf-newton' or 'sdp-feasibility'.
        eps (float, optional): risk level to compare against. Defaults to the one in dec.provenance.
        threads (int): concurrent scenario checks.

    Returns:
        RiskReport

    Raises:
        SeedReuseError: `seed` equals the training seed.
    """
    if isinstance(M, bool) or int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M}")
    train_seed = dec.provenance.get('seed')
    if train_seed is not None and seed == train_seed:
        raise SeedReuseError(f"Validation seed {seed} equals the training seed of the decision; "
                             f"draw the validation set from an independent seed.")
    eps = dec.provenance.get('eps') if eps is None else eps
    model_hash = dec.provenance.get('model_hash')
    if model_hash and model_hash != model.hash:
        vprint(f"WARNING: the decision was designed for uncertainty model {model_hash[:12]}, validating against {model.hash[:12]}", verbose=verbose)

    vprint("### Estimating the violation probability ###", verbose=verbose)
    scenarios = sample(model, int(M), seed, threads=threads)
    outcomes = _check_all(net, dec, scenarios, model, method, opts, threads, pf_tol, pf_max_iter)

    breakdown = Counter({fam: 0 for fam in RISK_FAMILIES})
    tail = 0
    for delta, out in zip(scenarios, outcomes):
        breakdown.update(out.families)
        if not out.feasible and _gaussian_tail(model, delta):
            tail += 1
    k = sum(not o.feasible for o in outcomes)
    lower, upper = clopper_pearson(k, int(M), eta)
    report = RiskReport(
        M               = int(M),
        violations      = k,
        p_hat           = k / M,
        lower           = lower,
        upper           = upper,
        eta             = eta,
        breakdown       = dict(breakdown),
        seed            = seed,
        method          = method,
        eps             = eps,
        passed          = None if eps is None else bool(upper <= eps),
        tail_violations = tail,
        outcomes        = outcomes,
    )
    vprint(f"{k}/{M} violations, p_hat = {report.p_hat:.4g}, {100 * (1 - eta):.0f}% bounds [{lower:.4g}, {upper:.4g}]", verbose=verbose)
    if eps is not None:
        vprint(f"{'PASS' if report.passed else 'FAIL'}: upper bound {upper:.4g} vs eps = {eps}", verbose=verbose)
    vprint(f"Breakdown: {({f: c for f, c in report.breakdown.items() if c})}", verbose=verbose)
    vprint(" ", verbose=verbose)
    return report


###### Method agreement ######

@dataclass
class MethodAgreement:
    n: int
    agreements: int
    disagreements: list

    @property
    def rate(self):
        return self.agreements / self.n if self.n else 1.0

    def to_dict(self):
        return {'n': self.n, 'agreements': self.agreements, 'rate': self.rate, 'disagreements': self.disagreements}

def compare_methods(net, dec, model, M=200, seed=1, opts=None, threads=1, verbose=True):
    """
    Judge the same M draws with both methods. Disagreements typically mark scenarios where the
    relaxation certifies a state that the power flow cannot reach (or the reverse for loose W).
    """
    vprint("### Comparing feasibility methods ###", verbose=verbose)
    scenarios = sample(model, M, seed, threads=threads)
    pf = _check_all(net, dec, scenarios, model, 'pf-newton', opts, threads, 1e-8, 30)
    sdp = _check_all(net, dec, scenarios, model, 'sdp-feasibility', opts, threads, 1e-8, 30)
    disagreements = []
    for a, b in zip(pf, sdp):
        if a.feasible != b.feasible:
            disagreements.append({'index': a.index, 'mismatch': a.mismatch,
                                  'pf-newton': list(a.families), 'sdp-feasibility': list(b.families)})
            vprint(f"Scenario {a.index}: pf-newton {'feasible' if a.feasible else list(a.families)}, "
                   f"sdp-feasibility {'feasible' if b.feasible else list(b.families)}", verbose=verbose)
    result = MethodAgreement(M, M - len(disagreements), disagreements)
    vprint(f"Agreement rate = {result.rate:.4f} over {M} scenarios", verbose=verbose)
    vprint(" ", verbose=verbose)
    return result


###### Robust screening ######

def worst_case_mismatch(model, dec=None, net=None):
    """
    Extreme values of s^T Re(delta) over the supports and, given a decision, whether its deployed
    dispatch stays within the generator bounds for every mismatch in that range. Unbounded supports
    leave the robust flag None.
    """
    lo, hi = model.mismatch_range()
    out = {'mismatch_min': lo, 'mismatch_max': hi, 'bounded': bool(np.isfinite(lo) and np.isfinite(hi))}
    if dec is None or net is None:
        return out
    p_lo = dec.p_gen + dec.alpha.alpha * lo
    p_hi = dec.p_gen + dec.alpha.alpha * hi
    out['p_gen_min'] = np.minimum(p_lo, p_hi).tolist()
    out['p_gen_max'] = np.maximum(p_lo, p_hi).tolist()
    if not out['bounded']:
        out['robust_active_power'] = None
        return out
    pmin = np.array([gen.pmin for gen in net.generators])
    pmax = np.array([gen.pmax for gen in net.generators])
    out['robust_active_power'] = bool(np.all(np.minimum(p_lo, p_hi) >= pmin - 1e-9) and np.all(np.maximum(p_lo, p_hi) <= pmax + 1e-9))
    return out


###### Guarantee audit ######

def guarantee_audit(net, model, spec, trainings=20, M=2000, eta=0.05, penalties=(0.0, 0.0), first_seed=0,
                    method='pf-newton', opts=None, threads=1, verbose=True):
    """
    Repeat the design procedure with independent training seeds and validate each decision on fresh draws.
    Trainings whose upper bound exceeds eps should stay within the binomial(trainings, beta) 99th percentile.

    Returns:
        dict: failures, allowed failures, and the per-training (seed, gamma, upper) rows.
    """
    rows = []
    for r in range(trainings):
        train_seed = first_seed + r
        sol = solve_swc(net, model, spec, penalties, seed=train_seed, opts=opts, threads=threads, verbose=False)
        report = estimate_risk(net, sol.decision, model, M, eta, seed=train_seed + trainings, method=method,
                               opts=opts, threads=threads, verbose=False)
        rows.append({'seed': train_seed, 'gamma': sol.objective, 'p_hat': report.p_hat, 'upper': report.upper,
                     'failed': bool(report.upper > spec.eps)})
        vprint(f"Training {r:2d}: gamma* = {sol.objective:.6g}, p_hat = {report.p_hat:.4g}, upper = {report.upper:.4g}", verbose=verbose)
    failures = sum(row['failed'] for row in rows)
    allowed = int(binom.ppf(0.99, trainings, spec.beta))
    vprint(f"{failures}/{trainings} trainings exceed eps = {spec.eps}; the binomial 99th percentile allows {allowed}", verbose=verbose)
    return {'failures': failures, 'allowed': allowed, 'consistent': failures <= allowed, 'rows': rows}
