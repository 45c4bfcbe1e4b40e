## Params-driven design procedure: load, size, sample, solve, validate, save; or hypertune the penalty weights

import os
from copy import deepcopy

from swcopf.conic import SolverOptions
from swcopf.errors import InfeasibleError, NumericalFailure
from swcopf.load import fill_default_params, load_case, load_uncertainty_model
from swcopf.save import (
    copy_params_to_dir,
    make_output_folder,
    make_report,
    resolve_output_dir,
    save_csv,
    save_json,
    save_scenarios,
)
from swcopf.swc import SampleComplexitySpec, n_swc, solve_swc
from swcopf.uncertainty import UncertaintyModel, sample
from swcopf.utils import get_date, parse_sec_to_time_str, time_sync, vprint
from swcopf.validate import estimate_risk

VALID_METRICS = ('cost', 'risk')


class SwCOPFSolver(object):
    """
    A wrapper class to run the SwC design procedure or tune its penalty weights.

    Attributes:
        params (dict): nested params, missing keys filled from DEFAULT_PARAMS.
        if_hypertune (bool): run `hypertune` instead of `design` in `run`.
        net (Network): the loaded case.
        model (UncertaintyModel): the loaded uncertainty model (point mass without a model file).
        spec (SampleComplexitySpec): (eps, beta, n_u) of the design.

    Methods:
        design(): size N, sample, solve the SwC program, validate on fresh draws, and save reports.
        hypertune(): optimize (gamma_b, gamma_l) with Optuna against generation cost or validated risk.
        run(): either of the above based on if_hypertune.
    """
    def __init__(self, params, logger=None, verbose=True):
        self.params       = fill_default_params(deepcopy(params))
        self.if_hypertune = self.params['hypertune_params'].get('if_hypertune', False)
        self.logger       = logger
        self.verbose      = verbose
        self.opts         = SolverOptions.from_params(self.params['solver_params'])

        self.init_case()
        self.init_spec()
        vprint("### Done initializing SwCOPFSolver ###", verbose=verbose)
        vprint(" ", verbose=verbose)

    def init_case(self):
        vprint("### Initializing case and uncertainty model ###", verbose=self.verbose)
        case_params = self.params['case_params']
        if not case_params.get('case_path'):
            raise ValueError("params['case_params']['case_path'] is required.")
        self.net = load_case(case_params['case_path'], case_params.get('case_format', 'auto'))
        model_path = self.params['uncertainty_params'].get('model_path')
        if model_path:
            self.model = load_uncertainty_model(model_path, self.net)
        else:
            vprint("No uncertainty model given, using the point mass at delta = 0", verbose=self.verbose)
            self.model = UncertaintyModel.point_mass(self.net)
        vprint(" ", verbose=self.verbose)

    def init_spec(self):
        swc_params = self.params['swc_params']
        self.spec = SampleComplexitySpec.for_network(swc_params['eps'], swc_params['beta'], self.net, swc_params.get('n_u'))
        self.n_scenarios = n_swc(self.spec, swc_params['bound'])
        vprint(f"eps = {self.spec.eps}, beta = {self.spec.beta}, n_u = {self.spec.n_u}: N = {self.n_scenarios} ({swc_params['bound']} bound)",
               verbose=self.verbose)

    @property
    def inputs(self):
        return [self.params['case_params'].get('case_path'), self.params['uncertainty_params'].get('model_path')]

    def _penalties(self, params=None):
        swc_params = (params or self.params)['swc_params']
        return float(swc_params.get('gamma_b') or 0.0), float(swc_params.get('gamma_l') or 0.0)

    def design(self, params=None, output_dir=None, save=True):
        """ One pass of the design procedure. Returns (SwcSolution, RiskReport) """
        params          = self.params if params is None else params
        swc_params      = params['swc_params']
        validate_params = params['validate_params']
        pf_params       = params['pf_params']
        output_params   = params['output_params']
        threads         = validate_params.get('threads', 1)

        scenarios = sample(self.model, self.n_scenarios, swc_params['seed'], eps=self.spec.eps, beta=self.spec.beta,
                           threads=threads, verbose=self.verbose)
        sol = solve_swc(self.net, self.model, self.spec, self._penalties(params), swc_params.get('lines_prob'),
                        seed=swc_params['seed'], bound=swc_params['bound'], scenarios=scenarios, opts=self.opts,
                        threads=threads, verbose=self.verbose)
        report = estimate_risk(self.net, sol.decision, self.model, validate_params['M'], validate_params['eta'],
                               seed=validate_params['seed'], method=validate_params['method'], opts=self.opts,
                               threads=threads, pf_tol=pf_params['tol'], pf_max_iter=pf_params['max_iter'],
                               verbose=self.verbose)
        if not save:
            return sol, report

        output_dir  = resolve_output_dir(output_dir or output_params.get('output_dir'))
        output_path = make_output_folder(output_dir, output_params, swc_params, self.n_scenarios, verbose=self.verbose)
        if self.logger is not None and self.logger.flush_file:
            self.logger.flush_to_file(log_dir=output_path)
        if output_params.get('copy_params', True):
            copy_params_to_dir(params.get('params_path'), output_path, params, verbose=self.verbose)
        save_json(os.path.join(output_path, 'swc.json'), make_report('swc', params, sol.to_dict(), self.inputs), verbose=self.verbose)
        save_json(os.path.join(output_path, 'validate.json'), make_report('validate', params, report.to_dict(), self.inputs), verbose=self.verbose)
        save_scenarios(os.path.join(output_path, 'scenarios.jsonl'), scenarios, verbose=self.verbose)
        if output_params.get('save_csv', True):
            save_csv(os.path.join(output_path, 'validate_outcomes.csv'), report.outcome_rows(), verbose=self.verbose)
        self.output_path = output_path
        return sol, report

    def hypertune(self):
        import optuna

        hypertune_params = self.params['hypertune_params']
        n_trials         = hypertune_params.get('n_trials')
        timeout          = hypertune_params.get('timeout')
        study_name       = hypertune_params.get('study_name')
        storage_path     = hypertune_params.get('storage_path')
        error_metric     = hypertune_params['error_metric']
        sampler          = create_optuna_sampler(hypertune_params['sampler_params'], verbose=self.verbose)
        pruner           = create_optuna_pruner(hypertune_params.get('pruner_params'), verbose=self.verbose)

        vprint("### Hypertune params ###", verbose=self.verbose)
        for key, value in hypertune_params.items():
            if key == 'tune_params':
                vprint("Active tune_params:", verbose=self.verbose)
                for param, param_config in value.items():
                    if param_config.get('state', False):
                        vprint(f"    {param.ljust(12)}: {param_config}", verbose=self.verbose)
            else:
                vprint(f"{key.ljust(16)}: {value}", verbose=self.verbose)
        vprint(" ", verbose=self.verbose)

        if error_metric not in VALID_METRICS:
            raise ValueError(f"Invalid error metric: '{error_metric}'. Expected one of {VALID_METRICS}.")

        output_params = self.params['output_params']
        prefix  = output_params.get('prefix', '')
        prefix  = prefix + '_' if prefix else ''
        if output_params.get('prefix_date', True):
            prefix = get_date() + '_' + prefix
        output_dir = os.path.join(resolve_output_dir(output_params.get('output_dir')),
                                  f"{prefix}hypertune_{hypertune_params['sampler_params']['name']}_{error_metric}{output_params.get('postfix', '')}")
        if output_params.get('copy_params', True):
            copy_params_to_dir(self.params.get('params_path'), output_dir, self.params, verbose=self.verbose)

        if self.logger is not None:
            if self.logger.flush_file:
                self.logger.flush_to_file(log_dir=output_dir)
            self.logger.route("optuna")

        study = optuna.create_study(
                    direction='minimize',
                    sampler=sampler,
                    pruner=pruner,
                    storage=storage_path,
                    study_name=study_name,
                    load_if_exists=True)
        study.optimize(lambda trial: optuna_objective(trial, self), n_trials=n_trials, timeout=timeout,
                       catch=(InfeasibleError, NumericalFailure))

        vprint(f"Hypertune study is finished due to either (1) n_trials = {n_trials} or (2) study timeout = {timeout} sec has reached",
               verbose=self.verbose)
        vprint("Best hypertune params:", verbose=self.verbose)
        for key, value in study.best_params.items():
            vprint(f"\t{key}: {value}", verbose=self.verbose)
        if hypertune_params.get('collate_results', True):
            rows = [{'trial': t.number, 'value': t.value, **t.params} for t in study.trials if t.value is not None]
            save_csv(os.path.join(output_dir, 'hypertune_trials.csv'), rows, verbose=self.verbose)
        self.study = study
        return study

    def run(self):
        start_t = time_sync()
        solver_mode = 'hypertune' if self.if_hypertune else 'design'
        vprint(f"### Starting the SwCOPFSolver in {solver_mode} mode ###", verbose=self.verbose)
        vprint(" ", verbose=self.verbose)

        result = self.hypertune() if self.if_hypertune else self.design()

        solver_t = time_sync() - start_t
        time_str = "" if solver_t < 60 else f", or {parse_sec_to_time_str(solver_t)}"
        vprint(f"### The SwCOPFSolver is finished in {solver_t:.3f} sec{time_str} ###", verbose=self.verbose)
        vprint(" ", verbose=self.verbose)
        if self.logger is not None and self.logger.flush_file:
            self.logger.close()
        return result


###### Optuna helpers ######

def create_optuna_sampler(sampler_params, verbose=True):
    # Every sampler in optuna.samplers except PartialFixedSampler, which needs a sequential setup.
    # GridSampler takes its 'search_space' from 'configs' and ignores the ranges in 'tune_params'.
    import optuna

    sampler_name = sampler_params['name']
    sampler_configs = sampler_params.get('configs') or {}
    vprint(f"### Creating Optuna '{sampler_name}' sampler with configs = {sampler_configs} ###", verbose=verbose)

    sampler_class = getattr(optuna.samplers, sampler_name, None)
    if sampler_class is None or sampler_name == 'PartialFixedSampler':
        raise ValueError(f"Optuna sampler '{sampler_name}' is not supported.")
    sampler = sampler_class(**sampler_configs)
    vprint(" ", verbose=verbose)
    return sampler

def create_optuna_pruner(pruner_params, verbose=True):
    # Each trial reports one value, so pruners only act between trials
    import optuna

    if pruner_params is None:
        return None
    pruner_name = pruner_params['name']
    pruner_configs = dict(pruner_params.get('configs') or {})
    vprint(f"### Creating Optuna '{pruner_name}' pruner with configs = {pruner_configs} ###", verbose=verbose)

    pruner_class = getattr(optuna.pruners, pruner_name, None)
    if pruner_class is None or pruner_name == 'WilcoxonPruner':
        raise ValueError(f"Optuna pruner '{pruner_name}' is not supported.")
    if pruner_name == 'NopPruner':
        raise ValueError("Optuna NopPruner is an empty pruner, please set pruner_params = None if you don't want to prune.")
    if pruner_name == 'PatientPruner':
        wrapped_pruner = create_optuna_pruner(pruner_configs.pop('wrapped_pruner_configs'), verbose=verbose)
        pruner = pruner_class(wrapped_pruner, **pruner_configs)
    else:
        pruner = pruner_class(**pruner_configs)
    vprint(" ", verbose=verbose)
    return pruner

def optuna_objective(trial, solver):
    """
    Objective of one trial: suggest the active penalty weights, run the design procedure without
    saving, and return the generation cost or the validated upper risk bound.

    Infeasible or numerically failed designs are reported to Optuna as failed trials.
    """
    params = deepcopy(solver.params)
    tune_params = params['hypertune_params']['tune_params']
    for name, config in tune_params.items():
        if not config.get('state', False):
            continue
        suggest = getattr(trial, f"suggest_{config.get('suggest', 'float')}")
        params['swc_params'][name] = suggest(name, **config['kwargs'])

    sol, report = solver.design(params, save=False)
    trial.set_user_attr('generation_cost', sol.generation_cost)
    trial.set_user_attr('risk_upper', report.upper)
    trial.set_user_attr('p_hat', report.p_hat)
    if params['hypertune_params']['error_metric'] == 'risk':
        return report.upper
    return sol.generation_cost
