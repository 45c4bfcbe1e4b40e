import copy
import json
import os

from swcopf.errors import CaseFormatError
from swcopf.utils import vprint

###### Default params, filled into user params by `fill_default_params` ######

DEFAULT_PARAMS = {
    'case_params': {
        'case_path'  : None,
        'case_format': 'auto', # 'json', 'matpower', or 'auto'
    },
    'uncertainty_params': {
        'model_path' : None,
    },
    'solver_params': {
        'feas_tol'   : 1e-7,
        'gap_tol'    : 1e-7,
        'infeas_tol' : 1e-7,
        'max_iter'   : 100,
        'reg'        : 1e-8,
        'verbose'    : False,
    },
    'pf_params': {
        'tol'        : 1e-8,
        'max_iter'   : 30,
    },
    'swc_params': {
        'eps'        : 0.1,
        'beta'       : 1e-3,
        'bound'      : 'exact', # 'exact' or 'explicit'
        'n_u'        : None,    # None counts the shared decision variables, 3 n_g + 1
        'gamma_b'    : 0.0,
        'gamma_l'    : 0.0,
        'lines_prob' : None,    # None means all lines
        'seed'       : 0,
    },
    'validate_params': {
        'M'          : 1000,
        'eta'        : 0.05,
        'seed'       : 1,
        'method'     : 'pf-newton', # 'pf-newton' or 'sdp-feasibility'
        'threads'    : 1,
    },
    'output_params': {
        'output_dir' : None,    # None falls back to $SWCOPF_OUTPUT_DIR, then 'output/'
        'prefix_date': True,
        'prefix'     : '',
        'postfix'    : '',
        'copy_params': True,
        'save_csv'   : True,
    },
    'hypertune_params': {
        'if_hypertune'  : False,
        'collate_results': True,
        'n_trials'      : 20,
        'timeout'       : None,
        'study_name'    : 'swcopf',
        'storage_path'  : None,
        'error_metric'  : 'cost', # 'cost' or 'risk'
        'sampler_params': {'name': 'TPESampler', 'configs': {}},
        'pruner_params' : None,
        'tune_params'   : {
            'gamma_b': {'state': True, 'suggest': 'float', 'kwargs': {'low': 0.0, 'high': 1.0}},
            'gamma_l': {'state': False, 'suggest': 'float', 'kwargs': {'low': 0.0, 'high': 1.0}},
        },
    },
}

def fill_default_params(params, defaults=None):
    """
    Nested merge of `params` on top of `defaults`; user values win, missing keys are filled.
    Returns a new dict and leaves both inputs untouched.
    """
    if defaults is None:
        defaults = DEFAULT_PARAMS
    merged = copy.deepcopy(defaults)
    for key, value in (params or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) and key != 'tune_params':
            merged[key] = fill_default_params(value, merged[key])
        else:
            merged[key] = copy.deepcopy(value)
    return merged


###### Case, uncertainty model, and scenario files ######

def load_case(file_path, fmt='auto'):
    """ Read a case file (.json or MATPOWER .m) into a validated Network """
    from swcopf.netmodel import parse_case

    if not os.path.exists(file_path):
        raise FileNotFoundError(f"The specified case file '{file_path}' does not exist.")
    if fmt == 'auto':
        ext = os.path.splitext(file_path)[1].lower()
        fmt = {'.json': 'json', '.m': 'matpower'}.get(ext, 'auto')
    with open(file_path, 'r', encoding='utf-8') as file:
        text = file.read()
    try:
        net = parse_case(text, fmt=fmt)
    except CaseFormatError as e:
        raise type(e)(f"in '{file_path}': {e}") from None
    vprint(f"Success! Loaded case file path = {file_path} ({net.n_bus} buses, {net.n_line} lines, {net.n_gen} generators)")
    return net

def load_uncertainty_model(file_path, net):
    """ Read an uncertainty model (.json, .yml, .toml) whose powers are in MW/MVAr on the network base """
    from swcopf.uncertainty import UncertaintyModel

    doc = load_params(file_path, stamp_path=False, verbose=False)
    model = UncertaintyModel.from_dict(doc, net)
    vprint(f"Success! Loaded uncertainty model path = {file_path} ({len(model.uncertain_buses)} uncertain buses)")
    return model

def load_scenarios(file_path):
    """ Read a JSON-lines scenario file written by `swcopf.save.save_scenarios` """
    from swcopf.uncertainty import ScenarioSet

    if not os.path.exists(file_path):
        raise FileNotFoundError(f"The specified scenario file '{file_path}' does not exist.")
    with open(file_path, 'r', encoding='utf-8') as file:
        lines = [ln for ln in file.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"Scenario file '{file_path}' is empty, expected a header line and one scenario per line.")
    scenarios = ScenarioSet.from_jsonl(lines)
    vprint(f"Success! Loaded {len(scenarios)} scenarios from {file_path}")
    return scenarios


###### Params files ######

def load_params(file_path, stamp_path=True, verbose=True):

    # Check if the file exists
    if not os.path.exists(file_path):
        raise FileNotFoundError(f"The specified file '{file_path}' does not exist.")

    vprint("### Loading params file ###", verbose=verbose)
    param_type = os.path.splitext(file_path)[1].lower()
    if param_type in (".yml", ".yaml"):
        params_dict = load_yml_params(file_path)
    elif param_type == ".toml":
        params_dict = load_toml_params(file_path)
    elif param_type == ".json":
        params_dict = load_json_params(file_path)
    else:
        raise ValueError(f"param_type needs to be either 'yml', 'toml', or 'json', got '{param_type}' from '{file_path}'")

    if not isinstance(params_dict, dict):
        raise ValueError(f"Params file '{file_path}' must contain a mapping at the top level, got {type(params_dict).__name__}")

    # Add the file path so the params file can be copied to the output folder
    if stamp_path:
        params_dict['params_path'] = file_path

    vprint(" ", verbose=verbose)
    return params_dict

def load_json_params(file_path):
    with open(file_path, "r", encoding='utf-8') as file:
        params_dict = json.load(file)
    vprint("Success! Loaded .json file path =", file_path)
    return params_dict

def load_toml_params(file_path):
    """
    Load parameters from a TOML file.

    Raises:
        ImportError: If the tomli package is not installed for Python < 3.11.
    """
    try:
        # TOML is UTF-8 by definition; read as text first so terminals with another default encoding behave
        with open(file_path, "r", encoding='utf-8') as file:
            content = file.read()

        try:
            import tomllib
            params_dict = tomllib.loads(content)
        except ImportError:
            import tomli # type: ignore
            params_dict = tomli.loads(content)
    except ImportError:
        raise ImportError("TOML support requires 'tomli' package for Python < 3.11 or built-in 'tomllib' for Python 3.11+. ")

    vprint("Success! Loaded .toml file path =", file_path)
    return params_dict

def load_yml_params(file_path):
    import yaml

    with open(file_path, "r", encoding='utf-8') as file:
        params_dict = yaml.safe_load(file)
    vprint("Success! Loaded .yml file path =", file_path)
    return params_dict
