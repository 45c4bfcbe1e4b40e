## Command-line front end: one subcommand per pipeline stage, JSON reports, documented exit codes

"""
Exit codes:
    0  success
    1  domain infeasibility (demand outside capacity, infeasible OPF or SwC program)
    2  usage, I/O, or file-format error, including validation with the training seed
    3  numerical failure of the conic solver or the power flow
"""

import argparse
import logging
import os
import sys

import numpy as np

from swcopf.conic import SolverOptions
from swcopf.errors import InfeasibleError, NumericalFailure, PowerFlowError, SeedReuseError, UsageError
from swcopf.load import load_case, load_params, load_uncertainty_model
from swcopf.save import make_report, resolve_output_dir, save_csv, save_json, save_scenarios
from swcopf.utils import CustomLogger, print_system_info, vprint
from swcopf.utils.common import LOGGER_NAME

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3


###### Argument parsing ######

def _floats(text):
    return [float(v) for v in text.split(',') if v.strip()]

def _ints(text):
    return [int(v) for v in text.split(',') if v.strip()]

def _probability(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {value}")
    return value

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--outdir",   type=str,   default=None, help="report directory, defaults to $SWCOPF_OUTPUT_DIR or 'output'")
    common.add_argument("--threads",  type=int,   default=1)
    common.add_argument("--feas_tol", type=float, default=1e-7)
    common.add_argument("--gap_tol",  type=float, default=1e-7)
    common.add_argument("--max_iter", type=int,   default=100)
    common.add_argument("--log_file", type=str,   default=None, help="write the log to <outdir>/<log_file>")
    common.add_argument("--quiet",    action='store_true')

    case = argparse.ArgumentParser(add_help=False)
    case.add_argument("--case",   type=str, required=True, help="case file (.json or MATPOWER .m)")
    case.add_argument("--format", type=str, default='auto', choices=('auto', 'json', 'matpower'))

    risk = argparse.ArgumentParser(add_help=False)
    risk.add_argument("--eps",   type=_probability, default=0.1)
    risk.add_argument("--beta",  type=_probability, default=1e-3)
    risk.add_argument("--nu",    type=int, default=None, help="number of shared decision variables, defaults to 3 n_g + 1")
    risk.add_argument("--bound", type=str, default='exact', choices=('exact', 'explicit'))

    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog='swcopf', description="Chance-constrained AC-OPF with scenarios and certificates",
                                     formatter_class=fmt)
    sub = parser.add_subparsers(dest='subcommand', required=True)

    p = sub.add_parser('pf', parents=[common, case], formatter_class=fmt, help="Newton-Raphson AC power flow")
    p.add_argument("--p_gen",  type=_floats, default=None, help="per-generator active setpoints, p.u., comma separated")
    p.add_argument("--vm_gen", type=_floats, default=None, help="per-generator voltage magnitudes, p.u., comma separated")
    p.add_argument("--pf_tol", type=float, default=1e-8)
    p.add_argument("--pf_max_iter", type=int, default=30)

    p = sub.add_parser('ed', parents=[common, case], formatter_class=fmt, help="economic dispatch")
    p.add_argument("--demand", type=float, default=None, help="aggregate demand, p.u., defaults to the total case load")

    sub.add_parser('dcopf', parents=[common, case], formatter_class=fmt, help="DC optimal power flow")

    p = sub.add_parser('acopf', parents=[common, case], formatter_class=fmt, help="relaxed AC-OPF with rank test")
    p.add_argument("--model",    type=str, default=None, help="uncertainty model supplying the nominal renewable injection")
    p.add_argument("--rank_tol", type=float, default=1e-5)

    p = sub.add_parser('swc', parents=[common, case, risk], formatter_class=fmt, help="SwC chance-constrained AC-OPF")
    p.add_argument("--model",   type=str, required=True)
    p.add_argument("--seed",    type=int, default=0, help="training seed")
    p.add_argument("--gamma_b", type=float, default=0.0, help="reactive power penalty")
    p.add_argument("--gamma_l", type=float, default=0.0, help="line flow penalty")
    p.add_argument("--lines",   type=_ints, default=None, help="line indices of the flow penalty, defaults to all lines")
    p.add_argument("--scenarios", type=str, default=None, help="scenario file to use instead of drawing")
    p.add_argument("--sweep",   type=_ints, default=None, help="also solve for these N and write swc_sweep.csv")

    p = sub.add_parser('validate', parents=[common, case], formatter_class=fmt, help="Monte Carlo risk of a decision")
    p.add_argument("--model",    type=str, required=True)
    p.add_argument("--decision", type=str, required=True, help="swc.json report or a bare decision JSON")
    p.add_argument("--M",        type=int, default=1000)
    p.add_argument("--eta",      type=_probability, default=0.05)
    p.add_argument("--seed",     type=int, default=1, help="validation seed, must differ from the training seed")
    p.add_argument("--method",   type=str, default='pf-newton', choices=('pf-newton', 'sdp-feasibility'))
    p.add_argument("--eps",      type=_probability, default=None, help="risk level to compare against, defaults to the decision's")
    p.add_argument("--compare",  action='store_true', help="also run both methods and report their agreement")
    p.add_argument("--no_csv",   action='store_true')

    p = sub.add_parser('samples', parents=[common, risk], formatter_class=fmt, help="scenario count for (eps, beta, n_u)")
    p.add_argument("--case",  type=str, default=None, help="derive n_u = 3 n_g + 1 from this case when --nu is absent")
    p.add_argument("--model", type=str, default=None, help="with --case and --seed, also draw and save the scenarios")
    p.add_argument("--seed",  type=int, default=None)
    p.add_argument("--format", type=str, default='auto', choices=('auto', 'json', 'matpower'))

    p = sub.add_parser('run', parents=[common], formatter_class=fmt, help="params-driven design procedure or hypertune")
    p.add_argument("--params_path", type=str, required=True)
    p.add_argument("--jobid",       type=int, default=0)
    return parser

def run_config(args):
    """ The parsed flags as a plain dict, embedded in every report """
    config = {k: v for k, v in sorted(vars(args).items())}
    config['outdir'] = resolve_output_dir(args.outdir)
    return config


###### Subcommands ######

def _opts(args):
    return SolverOptions(feas_tol=args.feas_tol, gap_tol=args.gap_tol, max_iter=args.max_iter)

def _write(args, result, inputs=()):
    path = os.path.join(resolve_output_dir(args.outdir), f"{args.subcommand}.json")
    save_json(path, make_report(args.subcommand, run_config(args), result, inputs), verbose=args.verbose)
    return path

def cmd_pf(args):
    from swcopf.powerflow import InjectionSpec, check_limits, solve_pf

    net = load_case(args.case, args.format)
    spec = InjectionSpec.from_network(net, p_gen=args.p_gen, vm_gen=args.vm_gen)
    sol = solve_pf(net, spec, tol=args.pf_tol, max_iter=args.pf_max_iter, verbose=args.verbose)
    report = check_limits(net, sol)
    _write(args, {'solution': sol.to_dict(), 'limits': report.to_dict()}, [args.case])
    return f"pf: converged in {sol.iterations} iterations, P_slack = {sol.p_slack:.6g} p.u., {len(report)} limit violations"

def cmd_ed(args):
    from swcopf.dispatch import solve_ed

    net = load_case(args.case, args.format)
    demand = float(net.pd.sum()) if args.demand is None else args.demand
    result = solve_ed(net.generators, demand)
    _write(args, {'demand': demand, **result.to_dict()}, [args.case])
    return f"ed: cost = {result.cost:.8g}, price = {result.price:.8g}"

def cmd_dcopf(args):
    from swcopf.dispatch import solve_dc_opf

    net = load_case(args.case, args.format)
    result = solve_dc_opf(net, opts=_opts(args), verbose=args.verbose)
    _write(args, result.to_dict(), [args.case])
    return f"dcopf: cost = {result.cost:.8g}, slack price = {result.price:.8g}"

def cmd_acopf(args):
    from swcopf.relaxation import solve_nominal

    net = load_case(args.case, args.format)
    p_ren = q_ren = None
    if args.model:
        model = load_uncertainty_model(args.model, net)
        p_ren, q_ren = model.p_renewable, model.q_renewable
    sol = solve_nominal(net, _opts(args), args.rank_tol, p_ren, q_ren, verbose=args.verbose)
    _write(args, sol.to_dict(), [args.case, args.model])
    return f"acopf: objective = {sol.objective:.8g}, rank one = {sol.rank_one} (lambda_2/lambda_1 = {sol.rank_ratio:.3e})"

def cmd_swc(args):
    from swcopf.load import load_scenarios
    from swcopf.swc import SampleComplexitySpec, n_swc, solve_swc, sweep_sample_sizes
    from swcopf.uncertainty import sample

    net = load_case(args.case, args.format)
    model = load_uncertainty_model(args.model, net)
    spec = SampleComplexitySpec.for_network(args.eps, args.beta, net, args.nu)
    penalties = (args.gamma_b, args.gamma_l)
    if args.scenarios:
        scenarios = load_scenarios(args.scenarios)
        if scenarios.model_hash and scenarios.model_hash != model.hash:
            raise UsageError(f"Scenario file '{args.scenarios}' was drawn from another uncertainty model")
    else:
        scenarios = sample(model, n_swc(spec, args.bound), args.seed, eps=spec.eps, beta=spec.beta, threads=args.threads)
    sol = solve_swc(net, model, spec, penalties, args.lines, seed=args.seed, bound=args.bound, scenarios=scenarios,
                    opts=_opts(args), threads=args.threads, verbose=args.verbose)
    outdir = resolve_output_dir(args.outdir)
    _write(args, sol.to_dict(), [args.case, args.model, args.scenarios])
    if not args.scenarios:
        save_scenarios(os.path.join(outdir, 'scenarios.jsonl'), scenarios, verbose=args.verbose)
    if args.sweep:
        rows = sweep_sample_sizes(net, model, args.sweep, penalties, args.lines, args.seed, _opts(args), args.threads, args.verbose)
        save_csv(os.path.join(outdir, 'swc_sweep.csv'), rows, verbose=args.verbose)
    return f"swc: N = {sol.n_scenarios}, gamma* = {sol.objective:.8g}, alpha = {np.round(sol.decision.alpha.alpha, 6).tolist()}"

def _read_decision(file_path):
    from swcopf.swc import ControlDecision

    doc = load_params(file_path, stamp_path=False, verbose=False)
    doc = doc.get('result', doc)
    doc = doc.get('decision', doc)
    return ControlDecision.from_dict(doc)

def cmd_validate(args):
    from swcopf.validate import compare_methods, estimate_risk

    net = load_case(args.case, args.format)
    model = load_uncertainty_model(args.model, net)
    dec = _read_decision(args.decision)
    report = estimate_risk(net, dec, model, args.M, args.eta, seed=args.seed, method=args.method, eps=args.eps,
                           opts=_opts(args), threads=args.threads, verbose=args.verbose)
    result = report.to_dict()
    if args.compare:
        result['agreement'] = compare_methods(net, dec, model, args.M, args.seed, _opts(args), args.threads, args.verbose).to_dict()
    _write(args, result, [args.case, args.model, args.decision])
    if not args.no_csv:
        save_csv(os.path.join(resolve_output_dir(args.outdir), 'validate_outcomes.csv'), report.outcome_rows(), verbose=args.verbose)
    verdict = '' if report.passed is None else (' PASS' if report.passed else ' FAIL')
    return f"validate: {report.violations}/{report.M} violations, upper bound = {report.upper:.6g}{verdict}"

def cmd_samples(args):
    from swcopf.swc import SampleComplexitySpec, n_swc
    from swcopf.uncertainty import sample

    if args.model and (not args.case or args.seed is None):
        raise UsageError("samples --model also needs --case and --seed to draw the scenarios")
    net = None
    if args.nu is None:
        if not args.case:
            raise UsageError("samples needs --nu or --case to count the shared decision variables")
        net = load_case(args.case, args.format)
        spec = SampleComplexitySpec.for_network(args.eps, args.beta, net)
    else:
        spec = SampleComplexitySpec(args.eps, args.beta, args.nu)
    N = n_swc(spec, args.bound)
    result = {'eps': spec.eps, 'beta': spec.beta, 'n_u': spec.n_u, 'bound': args.bound, 'N': N}
    if args.model:
        net = net or load_case(args.case, args.format)
        scenarios = sample(load_uncertainty_model(args.model, net), N, args.seed, eps=spec.eps, beta=spec.beta, threads=args.threads)
        save_scenarios(os.path.join(resolve_output_dir(args.outdir), 'scenarios.jsonl'), scenarios, verbose=args.verbose)
    _write(args, result, [args.case, args.model])
    return str(N)

def cmd_run(args, logger=None):
    from swcopf.workflow import SwCOPFSolver

    params = load_params(args.params_path, verbose=args.verbose)
    if args.outdir:
        params.setdefault('output_params', {})['output_dir'] = args.outdir
    SwCOPFSolver(params, logger=logger, verbose=args.verbose).run()
    return f"run: finished '{args.params_path}'"

COMMANDS = {
    'pf'      : cmd_pf,
    'ed'      : cmd_ed,
    'dcopf'   : cmd_dcopf,
    'acopf'   : cmd_acopf,
    'swc'     : cmd_swc,
    'validate': cmd_validate,
    'samples' : cmd_samples,
    'run'     : cmd_run,
}


###### Entry point ######

def _silence():
    """ Route library output to a NullHandler so stdout carries only the summary line """
    log = logging.getLogger(LOGGER_NAME)
    log.handlers.clear()
    log.addHandler(logging.NullHandler())

def main(argv=None):
    """ Parse `argv`, run the subcommand, print a one-line summary, and return the exit code """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    args.verbose = not args.quiet

    logger = None
    if not args.verbose:
        _silence()
    else:
        logger = CustomLogger(log_file=args.log_file, log_dir=resolve_output_dir(args.outdir), prefix_date=False,
                              prefix_jobid=getattr(args, 'jobid', 0), show_timestamp=False)
        if args.subcommand == 'run':
            print_system_info()

    code = EXIT_OK
    try:
        if args.subcommand == 'run':
            summary = cmd_run(args, logger)
        else:
            summary = COMMANDS[args.subcommand](args)
        print(summary)
    except InfeasibleError as e:
        hint = f" [{e.hint}]" if getattr(e, 'hint', None) else ''
        print(f"infeasible{hint}: {e}", file=sys.stderr)
        code = EXIT_INFEASIBLE
    except SeedReuseError as e:
        print(f"seed reuse: {e}", file=sys.stderr)
        code = EXIT_USAGE
    except (NumericalFailure, PowerFlowError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        code = EXIT_USAGE
    finally:
        if logger is not None and logger.flush_file:
            # run moves the log into its output folder
            if logger.log_path is None:
                logger.flush_to_file()
            logger.close()
    vprint(f"exit code {code}", verbose=args.verbose and code != EXIT_OK)
    return code

if __name__ == "__main__":
    sys.exit(main())
