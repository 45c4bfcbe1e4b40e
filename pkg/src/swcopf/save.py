# Saving

import csv
import hashlib
import json
import math
import os
from datetime import datetime, timezone

import numpy as np

from swcopf.utils import get_date, vprint

OUTPUT_DIR_ENV = 'SWCOPF_OUTPUT_DIR'


def resolve_output_dir(output_dir=None):
    """ Explicit value, then $SWCOPF_OUTPUT_DIR, then 'output' """
    return output_dir or os.environ.get(OUTPUT_DIR_ENV) or 'output'

def make_output_folder(output_dir, output_params=None, swc_params=None, n_scenarios=None, verbose=True):
    """
    Generate the output folder: <output_dir>/<date>_<prefix>_swc_eps<eps>_beta<beta>_N<N>_gb<gamma_b>_gl<gamma_l><postfix>.
    Without swc_params the folder is <output_dir> itself (plus affixes).
    """
    output_params = output_params or {}
    prefix_date = output_params.get('prefix_date', True)
    prefix      = output_params.get('prefix', '')
    postfix     = output_params.get('postfix', '')

    folder = ''
    if prefix_date:
        folder += get_date()
    if prefix:
        folder += f"_{prefix}" if folder else prefix

    if swc_params is not None:
        folder += f"{'_' if folder else ''}swc_eps{swc_params['eps']:g}_beta{swc_params['beta']:g}"
        if n_scenarios is not None:
            folder += f"_N{n_scenarios}"
        if swc_params.get('gamma_b'):
            folder += f"_gb{round(swc_params['gamma_b'], 4):g}"
        if swc_params.get('gamma_l'):
            folder += f"_gl{round(swc_params['gamma_l'], 4):g}"
    folder += postfix

    output_path = os.path.join(output_dir, folder) if folder else output_dir
    os.makedirs(output_path, exist_ok=True)
    vprint(f"output_path = '{output_path}' is generated!", verbose=verbose)
    return output_path

def copy_params_to_dir(params_path, output_dir, params=None, verbose=True):
    """
    Copies the params file to the output directory if it exists. If the params file does not exist,
    it dumps the provided params dictionary to a YAML file in the output directory.

    Args:
        params_path (str): Path to the params file (can be None if params are programmatically generated).
        output_dir (str): Directory where the params file or YAML dump will be saved.
        params (dict, optional): The programmatically generated params dictionary to save if no file exists.
        verbose (bool): Whether to print verbose messages.
    """
    import shutil

    import yaml

    os.makedirs(output_dir, exist_ok=True)

    if params_path and os.path.isfile(params_path):
        file_name = os.path.basename(params_path)
        shutil.copy2(params_path, os.path.join(output_dir, file_name))
        vprint(f"### Successfully copy '{file_name}' to '{output_dir}' ###", verbose=verbose)
        return os.path.join(output_dir, file_name)

    if params is not None:
        output_path = os.path.join(output_dir, "params_dumped.yml")
        with open(output_path, "w", encoding='utf-8') as f:
            yaml.safe_dump(_plain(params), f, sort_keys=False)
        vprint(f"### No params file found. Dumped params dictionary to '{output_path}' ###", verbose=verbose)
        return output_path

    vprint("### Warning: No params file found and no params dictionary provided. Skipping. ###", verbose=verbose)
    return None


###### Reports ######

def file_sha256(file_path):
    h = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            h.update(chunk)
    return h.hexdigest()

def make_report(subcommand, config, result, inputs=()):
    """
    Reproducibility envelope around a result: the run config, a sha256 per input file, the
    package version, and a timestamp. The timestamp is the only field that changes between
    identical runs.
    """
    from swcopf import __version__

    return {
        'subcommand': subcommand,
        'version'   : __version__,
        'timestamp' : datetime.now(timezone.utc).isoformat(timespec='seconds'),
        'config'    : config,
        'inputs'    : {os.path.basename(p): file_sha256(p) for p in inputs if p},
        'result'    : result,
    }

def _plain(obj):
    """ JSON/YAML-safe copy: numpy to Python, complex to [re, im], non-finite floats to None """
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj

def save_json(file_path, report, verbose=True):
    os.makedirs(os.path.dirname(os.path.abspath(file_path)), exist_ok=True)
    with open(file_path, 'w', encoding='utf-8') as f:
        json.dump(_plain(report), f, indent=2, allow_nan=False)
        f.write('\n')
    vprint(f"Saved report to '{file_path}'", verbose=verbose)
    return file_path

def save_csv(file_path, rows, verbose=True):
    """ Rows of equal keys, header from the first row """
    rows = list(rows)
    os.makedirs(os.path.dirname(os.path.abspath(file_path)), exist_ok=True)
    with open(file_path, 'w', newline='', encoding='utf-8') as f:
        if rows:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(_plain(rows))
    vprint(f"Saved {len(rows)} rows to '{file_path}'", verbose=verbose)
    return file_path

def save_scenarios(file_path, scenarios, verbose=True):
    """ JSON-lines scenario file readable by `swcopf.load.load_scenarios` """
    with open(file_path, 'w', encoding='utf-8') as f:
        f.write('\n'.join(scenarios.to_jsonl()) + '\n')
    vprint(f"Saved {len(scenarios)} scenarios to '{file_path}'", verbose=verbose)
    return file_path
