import json
import os

import pytest
import yaml
from conftest import demo_path

from swcopf.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, main

TRIANGLE = demo_path('cases', 'triangle_3bus.json')
TRIANGLE_BOX = demo_path('models', 'triangle_3bus_box.yml')


def run(capsys, *argv):
    code = main(list(argv) + ['--quiet'])
    out, err = capsys.readouterr()
    return code, out.strip(), err

def read_report(outdir, subcommand):
    with open(os.path.join(outdir, f'{subcommand}.json'), encoding='utf-8') as f:
        return json.load(f)


def test_samples_prints_the_count(tmp_path, capsys):
    code, out, _ = run(capsys, 'samples', '--eps', '0.1', '--beta', '1e-6', '--nu', '10', '--bound', 'explicit',
                       '--outdir', str(tmp_path))
    assert code == EXIT_OK
    assert out == '361'
    report = read_report(tmp_path, 'samples')
    assert report['subcommand'] == 'samples'
    assert report['result']['N'] == 361
    assert report['config']['eps'] == 0.1

def test_samples_counts_shared_variables_from_the_case(tmp_path, capsys):
    code, out, _ = run(capsys, 'samples', '--eps', '0.1', '--beta', '0.01', '--case', TRIANGLE, '--outdir', str(tmp_path))
    assert code == EXIT_OK
    assert read_report(tmp_path, 'samples')['result']['n_u'] == 7
    assert int(out) > 0

def test_samples_without_nu_or_case_is_a_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, 'samples', '--outdir', str(tmp_path))
    assert code == EXIT_USAGE
    assert '--nu' in err

@pytest.mark.parametrize("extra", [[], ['--case', TRIANGLE]])
def test_samples_model_without_case_or_seed_is_a_usage_error(tmp_path, capsys, extra):
    argv = ['samples', '--nu', '10', '--model', TRIANGLE_BOX, '--outdir', str(tmp_path)] + extra
    if not extra:
        argv += ['--seed', '0']
    code, _, err = run(capsys, *argv)
    assert code == EXIT_USAGE
    assert '--case and --seed' in err
    assert not os.path.exists(tmp_path / 'samples.json')

def test_economic_dispatch_report(tmp_path, capsys):
    code, out, _ = run(capsys, 'ed', '--case', demo_path('cases', 'lossless_2bus.json'), '--outdir', str(tmp_path))
    assert code == EXIT_OK
    assert out.startswith('ed: cost =')
    result = read_report(tmp_path, 'ed')['result']
    assert result['p_gen'] == pytest.approx([2 / 3, 1 / 3], abs=1e-8)
    assert 'lossless_2bus.json' in read_report(tmp_path, 'ed')['inputs']

def test_demand_outside_capacity_exits_with_one(tmp_path, capsys):
    code, _, err = run(capsys, 'ed', '--case', TRIANGLE, '--demand', '100', '--outdir', str(tmp_path))
    assert code == EXIT_INFEASIBLE
    assert '[capacity]' in err

def test_power_flow_report(tmp_path, capsys):
    code, out, _ = run(capsys, 'pf', '--case', demo_path('cases', 'lossless_2bus.json'), '--p_gen', '0.5,0.5',
                       '--vm_gen', '1.0,1.0', '--outdir', str(tmp_path))
    assert code == EXIT_OK
    assert out.startswith('pf: converged')
    result = read_report(tmp_path, 'pf')['result']
    assert set(result) == {'solution', 'limits'}

def test_dc_opf_report(tmp_path, capsys):
    code, out, _ = run(capsys, 'dcopf', '--case', demo_path('cases', 'lossless_2bus.json'), '--outdir', str(tmp_path))
    assert code == EXIT_OK
    assert out.startswith('dcopf: cost =')
    result = read_report(tmp_path, 'dcopf')['result']
    assert result['cost'] == pytest.approx(2 / 3, abs=1e-5)
    assert result['lmp'] == pytest.approx([4 / 3, 4 / 3], abs=1e-4)

def test_acopf_reports_the_rank(tmp_path, capsys):
    code, out, _ = run(capsys, 'acopf', '--case', demo_path('cases', 'radial_3bus.json'), '--outdir', str(tmp_path),
                       '--feas_tol', '1e-9', '--gap_tol', '1e-9', '--max_iter', '200')
    assert code == EXIT_OK
    assert 'rank one = True' in out
    result = read_report(tmp_path, 'acopf')['result']
    assert result['rank_one'] is True
    assert len(result['state']['vm']) == 3

def test_swc_then_validate(tmp_path, capsys):
    outdir = str(tmp_path)
    code, out, _ = run(capsys, 'swc', '--case', TRIANGLE, '--model', TRIANGLE_BOX, '--eps', '0.3', '--beta', '0.1',
                       '--nu', '1', '--seed', '0', '--outdir', outdir)
    assert code == EXIT_OK
    assert out.startswith('swc: N = 7')
    assert os.path.isfile(os.path.join(outdir, 'scenarios.jsonl'))
    decision = read_report(outdir, 'swc')['result']['decision']
    assert decision['provenance']['seed'] == 0
    assert sum(decision['alpha']) == pytest.approx(1.0)

    decision_path = os.path.join(outdir, 'swc.json')
    code, _, err = run(capsys, 'validate', '--case', TRIANGLE, '--model', TRIANGLE_BOX, '--decision', decision_path,
                       '--seed', '0', '--M', '10', '--outdir', outdir)
    assert code == EXIT_USAGE
    assert 'seed reuse' in err

    code, out, _ = run(capsys, 'validate', '--case', TRIANGLE, '--model', TRIANGLE_BOX, '--decision', decision_path,
                       '--seed', '1', '--M', '20', '--outdir', outdir)
    assert code == EXIT_OK
    assert out.startswith('validate:')
    result = read_report(outdir, 'validate')['result']
    assert result['M'] == 20
    assert result['eps'] == 0.3
    assert os.path.isfile(os.path.join(outdir, 'validate_outcomes.csv'))

def test_unknown_flag_is_a_usage_error(capsys):
    code, _, _ = run(capsys, 'ed', '--case', TRIANGLE, '--no_such_flag')
    assert code == EXIT_USAGE

def test_missing_case_file_is_a_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, 'pf', '--case', str(tmp_path / 'missing.json'), '--outdir', str(tmp_path))
    assert code == EXIT_USAGE
    assert 'does not exist' in err

def test_output_dir_from_the_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv('SWCOPF_OUTPUT_DIR', str(tmp_path / 'env_out'))
    code, _, _ = run(capsys, 'samples', '--nu', '3')
    assert code == EXIT_OK
    assert os.path.isfile(tmp_path / 'env_out' / 'samples.json')

def test_run_writes_its_log_into_the_output_folder(tmp_path, capsys):
    params = {
        'case_params'       : {'case_path': TRIANGLE},
        'uncertainty_params': {'model_path': TRIANGLE_BOX},
        'swc_params'        : {'eps': 0.3, 'beta': 0.1, 'n_u': 1, 'seed': 0},
        'validate_params'   : {'M': 20, 'seed': 1},
        'output_params'     : {'prefix_date': False},
    }
    params_path = tmp_path / 'params.yml'
    params_path.write_text(yaml.safe_dump(params), encoding='utf-8')
    outdir = tmp_path / 'out'

    code = main(['run', '--params_path', str(params_path), '--outdir', str(outdir), '--log_file', 'run.log'])
    capsys.readouterr()
    assert code == EXIT_OK
    log_path = outdir / 'swc_eps0.3_beta0.1_N7' / 'run.log'
    assert log_path.is_file()
    assert 'Done initializing SwCOPFSolver' in log_path.read_text(encoding='utf-8')
    assert not (outdir / 'run.log').exists()
