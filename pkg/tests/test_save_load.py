import csv
import json
import math

import numpy as np
import pytest
import yaml

from swcopf.load import DEFAULT_PARAMS, fill_default_params, load_params
from swcopf.save import (
    OUTPUT_DIR_ENV,
    _plain,
    copy_params_to_dir,
    file_sha256,
    make_output_folder,
    make_report,
    resolve_output_dir,
    save_csv,
    save_json,
)


###### Params ######

def test_fill_default_params_keeps_user_values():
    params = fill_default_params({'swc_params': {'eps': 0.2}, 'extra': 1})
    assert params['swc_params']['eps'] == 0.2
    assert params['swc_params']['beta'] == DEFAULT_PARAMS['swc_params']['beta']
    assert params['validate_params'] == DEFAULT_PARAMS['validate_params']
    assert params['extra'] == 1
    params['validate_params']['M'] = 5
    assert DEFAULT_PARAMS['validate_params']['M'] == 1000

def test_tune_params_replace_the_defaults():
    tune = {'gamma_l': {'state': True, 'suggest': 'float', 'kwargs': {'low': 0.0, 'high': 0.5}}}
    params = fill_default_params({'hypertune_params': {'tune_params': tune}})
    assert params['hypertune_params']['tune_params'] == tune

@pytest.mark.parametrize("suffix", ['.yml', '.json', '.toml'])
def test_load_params_formats(tmp_path, suffix):
    path = tmp_path / f'params{suffix}'
    if suffix == '.yml':
        path.write_text(yaml.safe_dump({'swc_params': {'eps': 0.2, 'seed': 3}}))
    elif suffix == '.json':
        path.write_text(json.dumps({'swc_params': {'eps': 0.2, 'seed': 3}}))
    else:
        path.write_text('[swc_params]\neps = 0.2\nseed = 3\n')
    params = load_params(str(path), verbose=False)
    assert params['swc_params'] == {'eps': 0.2, 'seed': 3}
    assert params['params_path'] == str(path)

def test_load_params_rejects_other_formats(tmp_path):
    path = tmp_path / 'params.ini'
    path.write_text('[swc_params]\n')
    with pytest.raises(ValueError, match='param_type'):
        load_params(str(path), verbose=False)
    with pytest.raises(FileNotFoundError):
        load_params(str(tmp_path / 'missing.yml'), verbose=False)


###### Reports ######

def test_plain_converts_numpy_and_non_finite():
    out = _plain({'a': np.array([1.0, np.nan]), 'b': np.int64(3), 'c': 1 + 2j, 'd': (np.inf, True), 4: np.bool_(False)})
    assert out == {'a': [1.0, None], 'b': 3, 'c': [1.0, 2.0], 'd': [None, True], '4': False}

def test_save_json_writes_strict_json(tmp_path):
    path = save_json(tmp_path / 'sub' / 'report.json', {'x': np.float64(math.nan), 'y': [1, 2]}, verbose=False)
    text = path.read_text()
    assert 'NaN' not in text
    assert json.loads(text) == {'x': None, 'y': [1, 2]}

def test_report_envelope(tmp_path):
    case = tmp_path / 'case.json'
    case.write_text('{}')
    report = make_report('ed', {'case': str(case)}, {'cost': 1.0}, [str(case), None])
    assert report['subcommand'] == 'ed'
    assert report['inputs'] == {'case.json': file_sha256(case)}
    assert len(report['inputs']['case.json']) == 64
    assert set(report) == {'subcommand', 'version', 'timestamp', 'config', 'inputs', 'result'}

def test_save_csv(tmp_path):
    rows = [{'N': 1, 'gamma': 2.5}, {'N': 3, 'gamma': np.float64(np.inf)}]
    path = save_csv(tmp_path / 'sweep.csv', rows, verbose=False)
    with open(path, newline='') as f:
        got = list(csv.DictReader(f))
    assert got == [{'N': '1', 'gamma': '2.5'}, {'N': '3', 'gamma': ''}]


###### Output folders ######

def test_output_folder_name(tmp_path):
    path = make_output_folder(str(tmp_path), {'prefix_date': False, 'prefix': 'run', 'postfix': '_v2'},
                              {'eps': 0.2, 'beta': 0.05, 'gamma_b': 0.1}, n_scenarios=33, verbose=False)
    assert path == str(tmp_path / 'run_swc_eps0.2_beta0.05_N33_gb0.1_v2')
    assert (tmp_path / 'run_swc_eps0.2_beta0.05_N33_gb0.1_v2').is_dir()

def test_output_dir_resolution(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    assert resolve_output_dir() == 'output'
    monkeypatch.setenv(OUTPUT_DIR_ENV, '/tmp/swcopf_reports')
    assert resolve_output_dir() == '/tmp/swcopf_reports'
    assert resolve_output_dir('mine') == 'mine'

def test_copy_params_dumps_generated_params(tmp_path):
    path = copy_params_to_dir(None, str(tmp_path), {'swc_params': {'eps': np.float64(0.2)}}, verbose=False)
    with open(path) as f:
        assert yaml.safe_load(f) == {'swc_params': {'eps': 0.2}}
    assert copy_params_to_dir(None, str(tmp_path), None, verbose=False) is None
