## Immutable network data model, validation, admittance construction, and case-file ingestion

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from swcopf.errors import (
    CaseFormatError,
    DisconnectedNetwork,
    InvariantViolation,
    NoSuchLine,
)
from swcopf.utils import vprint


class BusKind(str, Enum):
    SLACK     = 'slack'
    GENERATOR = 'generator'
    LOAD      = 'load'

class BusPartition(NamedTuple):
    slack: tuple
    generator: tuple
    renewable: tuple
    demand: tuple

@dataclass(frozen=True)
class Bus:
    """
    A network node. All quantities are per-unit on the network base.

    Attributes:
        id (int): 0-based index, 0 is the slack bus.
        kind (BusKind): slack, generator (hosts a generator), or load.
        vmin, vmax (float): voltage magnitude bounds.
        pd, qd (float): nominal active/reactive load.
        renewable (bool): a renewable source is attached (may coexist with a load).
        base_kv (float | None): voltage base, only needed for ohmic line data.
    """
    id: int
    kind: BusKind
    vmin: float
    vmax: float
    pd: float = 0.0
    qd: float = 0.0
    renewable: bool = False
    base_kv: float | None = None
    name: str = ''

@dataclass(frozen=True)
class Line:
    """ Series element between two buses. `impedance` is per-unit, `dv_max` bounds |V_from - V_to|. """
    from_bus: int
    to_bus: int
    impedance: complex
    dv_max: float
    s_max: float | None = None
    name: str = ''

    @property
    def admittance(self):
        return 1.0 / self.impedance

@dataclass(frozen=True)
class Generator:
    """ Dispatchable unit with quadratic cost c2 P^2 + c1 P + c0, all per-unit. """
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0
    name: str = ''

    def cost(self, p):
        return self.c2 * np.square(p) + self.c1 * p + self.c0

    def marginal_cost(self, p):
        return 2.0 * self.c2 * p + self.c1

@dataclass(frozen=True)
class Network:
    """
    Immutable network. Construction validates every invariant, so any Network instance
    can be shared freely between concurrent readers.

    Attributes:
        buses (tuple[Bus]): ordered by id, bus 0 is the slack bus.
        lines (tuple[Line]): series elements, unique per unordered bus pair.
        generators (tuple[Generator]): at most one per bus.
        base_mva (float): power base used for the per-unit conversion.
        slack_vm (float): slack voltage magnitude, the slack angle is always 0.
    """
    buses: tuple
    lines: tuple
    generators: tuple
    base_mva: float = 100.0
    slack_vm: float = 1.0
    name: str = ''
    _line_lookup: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'buses', tuple(self.buses))
        object.__setattr__(self, 'lines', tuple(self.lines))
        object.__setattr__(self, 'generators', tuple(self.generators))
        validate_network(self)
        lookup = {}
        for idx, line in enumerate(self.lines):
            lookup[(line.from_bus, line.to_bus)] = idx
            lookup[(line.to_bus, line.from_bus)] = idx
        object.__setattr__(self, '_line_lookup', lookup)

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_line(self):
        return len(self.lines)

    @property
    def n_gen(self):
        return len(self.generators)

    @cached_property
    def adjacency(self):
        """ N_k: sorted neighbor tuple of every bus """
        neighbors = [set() for _ in range(self.n_bus)]
        for line in self.lines:
            neighbors[line.from_bus].add(line.to_bus)
            neighbors[line.to_bus].add(line.from_bus)
        return tuple(tuple(sorted(nb)) for nb in neighbors)

    @cached_property
    def line_from(self):
        return np.array([line.from_bus for line in self.lines], dtype=np.int64)

    @cached_property
    def line_to(self):
        return np.array([line.to_bus for line in self.lines], dtype=np.int64)

    @cached_property
    def line_admittance(self):
        return np.array([line.admittance for line in self.lines], dtype=complex)

    @cached_property
    def gen_bus(self):
        return np.array([gen.bus for gen in self.generators], dtype=np.int64)

    @cached_property
    def gen_at_bus(self):
        """ Generator index hosted by each bus, -1 if none """
        index = np.full(self.n_bus, -1, dtype=np.int64)
        for g, gen in enumerate(self.generators):
            index[gen.bus] = g
        return index

    @property
    def pd(self):
        return np.array([bus.pd for bus in self.buses])

    @property
    def qd(self):
        return np.array([bus.qd for bus in self.buses])

    @property
    def vmin(self):
        return np.array([bus.vmin for bus in self.buses])

    @property
    def vmax(self):
        return np.array([bus.vmax for bus in self.buses])

    def line_index(self, l, m):
        try:
            return self._line_lookup[(l, m)]
        except KeyError:
            raise NoSuchLine(f"No line between bus {l} and bus {m} in network '{self.name}'.") from None


###### Validation ######

def validate_network(net):
    n = len(net.buses)
    if n == 0:
        raise CaseFormatError("a network needs at least one bus", path='buses')

    if net.base_mva <= 0:
        raise InvariantViolation(f"base_mva must be positive, got {net.base_mva}", path='base_mva')
    if net.slack_vm <= 0:
        raise InvariantViolation(f"slack voltage magnitude must be positive, got {net.slack_vm}", path='slack_vm')

    for k, bus in enumerate(net.buses):
        if bus.id != k:
            raise InvariantViolation(f"bus ids must be contiguous 0..{n-1}, found id {bus.id} at position {k}", path=f'buses[{k}].id')
        if not (0 < bus.vmin <= bus.vmax):
            raise InvariantViolation(f"voltage bounds need 0 < vmin <= vmax, got vmin={bus.vmin}, vmax={bus.vmax}", path=f'buses[{k}]')

    slack = [bus.id for bus in net.buses if bus.kind == BusKind.SLACK]
    if len(slack) != 1:
        raise InvariantViolation(f"exactly one slack bus is required, found {len(slack)} ({slack})", path='buses')
    if slack[0] != 0:
        raise InvariantViolation(f"the slack bus must have id 0, found id {slack[0]}", path='buses')

    seen = set()
    for i, line in enumerate(net.lines):
        path = f'lines[{i}]'
        for end in (line.from_bus, line.to_bus):
            if not (0 <= end < n):
                raise InvariantViolation(f"line end {end} is not a bus id", path=path)
        if line.from_bus == line.to_bus:
            raise InvariantViolation(f"line connects bus {line.from_bus} to itself", path=path)
        pair = frozenset((line.from_bus, line.to_bus))
        if pair in seen:
            raise InvariantViolation(f"duplicate line between buses {line.from_bus} and {line.to_bus}", path=path)
        seen.add(pair)
        if line.impedance == 0:
            raise InvariantViolation("line impedance must be nonzero", path=path)
        if not line.dv_max > 0:
            raise InvariantViolation(f"dv_max must be positive, got {line.dv_max}", path=path)
        if line.s_max is not None and not line.s_max > 0:
            raise InvariantViolation(f"s_max must be positive when present, got {line.s_max}", path=path)

    hosted = set()
    for g, gen in enumerate(net.generators):
        path = f'generators[{g}]'
        if not (0 <= gen.bus < n):
            raise InvariantViolation(f"generator bus {gen.bus} is not a bus id", path=path)
        if gen.bus in hosted:
            raise InvariantViolation(f"at most one generator per bus, bus {gen.bus} has two", path=path)
        hosted.add(gen.bus)
        if gen.pmin > gen.pmax:
            raise InvariantViolation(f"pmin={gen.pmin} exceeds pmax={gen.pmax}", path=path)
        if gen.qmin > gen.qmax:
            raise InvariantViolation(f"qmin={gen.qmin} exceeds qmax={gen.qmax}", path=path)
        if gen.c2 < 0:
            raise InvariantViolation(f"cost must be convex, got c2={gen.c2}", path=path)

    for k, bus in enumerate(net.buses):
        if bus.kind == BusKind.GENERATOR and k not in hosted:
            raise InvariantViolation(f"bus {k} is declared as a generator bus but hosts no generator", path=f'buses[{k}].kind')

    if n > 1:
        rows = [line.from_bus for line in net.lines] + [line.to_bus for line in net.lines]
        cols = [line.to_bus for line in net.lines] + [line.from_bus for line in net.lines]
        graph = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        reached = breadth_first_order(graph, 0, directed=False, return_predecessors=False)
        if len(reached) != n:
            missing = sorted(set(range(n)) - set(reached.tolist()))
            raise DisconnectedNetwork(f"buses {missing} are unreachable from the slack bus", path='lines')


###### Queries ######

def admittance_of(net, l, m):
    """ Series admittance Y_lm of the line joining buses l and m (symmetric in l, m) """
    return net.lines[net.line_index(l, m)].admittance

def bus_partition(net):
    """
    Split the bus ids into (slack, generator, renewable, demand) groups.

    A bus hosting a generator belongs to the generator group even when it also carries
    loads or a renewable source; the renewable group holds the remaining buses with a
    renewable flag.
    """
    gen_buses = {gen.bus for gen in net.generators}
    G, R, D = [], [], []
    for bus in net.buses[1:]:
        if bus.id in gen_buses:
            G.append(bus.id)
        elif bus.renewable:
            R.append(bus.id)
        else:
            D.append(bus.id)
    return BusPartition((0,), tuple(G), tuple(R), tuple(D))

def admittance_matrix(net, sparse=False):
    """ Bus admittance matrix built from the series elements only """
    n = net.n_bus
    f, t, y = net.line_from, net.line_to, net.line_admittance
    rows = np.concatenate([f, t, f, t])
    cols = np.concatenate([f, t, t, f])
    vals = np.concatenate([y, y, -y, -y])
    Y = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return Y if sparse else Y.toarray()

def to_per_unit(value, base):
    return np.asarray(value) / base if isinstance(value, (list, np.ndarray)) else value / base

def to_physical(value, base):
    return np.asarray(value) * base if isinstance(value, (list, np.ndarray)) else value * base

def impedance_base(base_kv, base_mva):
    return base_kv ** 2 / base_mva


###### JSON case schema ######

_UNSUPPORTED_LINE_FIELDS = ('b_charging', 'charging', 'tap', 'shift', 'phase_shift')
_UNSUPPORTED_BUS_FIELDS = ('gs', 'bs', 'shunt_g', 'shunt_b', 'gs_mw', 'bs_mvar')

def parse_case(text, fmt='auto'):
    """
    Parse a case document into a validated Network.

    Args:
        text (str): JSON case document or a MATPOWER-style `mpc` m-file.
        fmt (str): 'json', 'matpower', or 'auto' (sniffed from the content).

    Returns:
        Network: all quantities converted to per-unit on the declared base.

    Raises:
        CaseFormatError: schema violation, with the offending field path.
        InvariantViolation: e.g. two slack buses, vmin > vmax.
        DisconnectedNetwork: a bus unreachable from the slack bus.
    """
    if fmt == 'auto':
        fmt = 'json' if text.lstrip().startswith('{') else 'matpower'
    if fmt == 'json':
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise CaseFormatError(f"invalid JSON ({e.msg} at line {e.lineno})", path='$') from None
        return case_from_dict(doc)
    elif fmt == 'matpower':
        return parse_matpower(text)
    else:
        raise ValueError(f"Unsupported case format '{fmt}', expected 'json', 'matpower', or 'auto'.")

def _number(d, key, path, default=None, required=True):
    if key not in d or d[key] is None:
        if required and default is None:
            raise CaseFormatError(f"missing required field '{key}'", path=path)
        return default
    value = d[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseFormatError(f"field '{key}' must be a number, got {value!r}", path=f'{path}.{key}')
    return float(value)

def _power(d, key_phys, key_pu, base, path, default=0.0):
    """ Read a power field given either in MW/MVAr (`key_phys`) or already per-unit (`key_pu`) """
    if key_pu in d:
        return _number(d, key_pu, path)
    value = _number(d, key_phys, path, default=default, required=False)
    return None if value is None else to_per_unit(value, base)

def case_from_dict(doc):
    if not isinstance(doc, dict):
        raise CaseFormatError("case document must be an object", path='$')
    for key in ('buses', 'lines', 'generators'):
        if key not in doc:
            raise CaseFormatError(f"missing required field '{key}'", path='$')
        if not isinstance(doc[key], list):
            raise CaseFormatError(f"'{key}' must be a list", path=key)

    base_mva = _number(doc, 'base_mva', '$')
    base_kv  = _number(doc, 'base_kv', '$', required=False)
    slack_vm = _number(doc, 'slack_vm', '$', default=1.0, required=False)

    gen_buses = set()
    for g, gd in enumerate(doc['generators']):
        if not isinstance(gd, dict):
            raise CaseFormatError("generator entry must be an object", path=f'generators[{g}]')
        gen_buses.add(gd.get('bus'))

    buses = []
    for k, bd in enumerate(doc['buses']):
        path = f'buses[{k}]'
        if not isinstance(bd, dict):
            raise CaseFormatError("bus entry must be an object", path=path)
        for key in _UNSUPPORTED_BUS_FIELDS:
            if bd.get(key):
                raise CaseFormatError(f"shunt elements are not supported (field '{key}')", path=f'{path}.{key}')
        if 'id' not in bd or isinstance(bd['id'], bool) or not isinstance(bd['id'], int):
            raise CaseFormatError("bus 'id' must be an integer", path=f'{path}.id')
        declared = bd.get('kind')
        try:
            kind = BusKind(declared) if declared is not None else None
        except ValueError:
            raise CaseFormatError(f"unknown bus kind {declared!r}, expected one of {[k.value for k in BusKind]}", path=f'{path}.kind') from None
        if kind is None:
            kind = BusKind.SLACK if bd['id'] == 0 else BusKind.LOAD
        # A bus with both a generator and loads counts as a generator bus
        if kind == BusKind.LOAD and bd['id'] in gen_buses:
            kind = BusKind.GENERATOR
        buses.append(Bus(
            id        = bd['id'],
            kind      = kind,
            vmin      = _number(bd, 'vmin', path, default=0.9, required=False),
            vmax      = _number(bd, 'vmax', path, default=1.1, required=False),
            pd        = _power(bd, 'pd_mw', 'pd_pu', base_mva, path),
            qd        = _power(bd, 'qd_mvar', 'qd_pu', base_mva, path),
            renewable = bool(bd.get('renewable', False)),
            base_kv   = _number(bd, 'base_kv', path, default=base_kv, required=False),
            name      = str(bd.get('name', '')),
        ))
    buses.sort(key=lambda b: b.id)

    lines = []
    for i, ld in enumerate(doc['lines']):
        path = f'lines[{i}]'
        if not isinstance(ld, dict):
            raise CaseFormatError("line entry must be an object", path=path)
        for key in _UNSUPPORTED_LINE_FIELDS:
            if ld.get(key):
                raise CaseFormatError(f"field '{key}' is not supported, only series impedances are modeled", path=f'{path}.{key}')
        for end in ('from', 'to'):
            if not isinstance(ld.get(end), int) or isinstance(ld.get(end), bool):
                raise CaseFormatError(f"'{end}' must be an integer bus id", path=f'{path}.{end}')
        if 'r_pu' in ld or 'x_pu' in ld:
            z = complex(_number(ld, 'r_pu', path, default=0.0, required=False), _number(ld, 'x_pu', path, default=0.0, required=False))
        elif 'r_ohm' in ld or 'x_ohm' in ld:
            kv = _line_base_kv(ld, buses, base_kv, path)
            zb = impedance_base(kv, base_mva)
            z = complex(_number(ld, 'r_ohm', path, default=0.0, required=False), _number(ld, 'x_ohm', path, default=0.0, required=False)) / zb
        else:
            raise CaseFormatError("line needs an impedance as (r_pu, x_pu) or (r_ohm, x_ohm)", path=path)
        s_max = _power(ld, 's_max_mva', 's_max_pu', base_mva, path, default=None)
        dv_max = _number(ld, 'dv_max_pu', path, required=False)
        if dv_max is None:
            if s_max is None:
                raise CaseFormatError("line needs 'dv_max_pu' or an apparent-power limit", path=path)
            dv_max = _dv_from_s_max(s_max, z)
        lines.append(Line(ld['from'], ld['to'], z, dv_max, s_max, str(ld.get('name', ''))))

    generators = []
    for g, gd in enumerate(doc['generators']):
        path = f'generators[{g}]'
        if not isinstance(gd.get('bus'), int) or isinstance(gd.get('bus'), bool):
            raise CaseFormatError("'bus' must be an integer bus id", path=f'{path}.bus')
        cost = gd.get('cost', {})
        if not isinstance(cost, dict):
            raise CaseFormatError("'cost' must be an object with c2, c1, c0", path=f'{path}.cost')
        # Physical cost coefficients are per MW^2 h, per MWh, per h
        if cost.get('units', 'mw') == 'pu':
            c2, c1 = _number(cost, 'c2', path, default=0.0, required=False), _number(cost, 'c1', path, default=0.0, required=False)
        else:
            c2 = _number(cost, 'c2', path, default=0.0, required=False) * base_mva ** 2
            c1 = _number(cost, 'c1', path, default=0.0, required=False) * base_mva
        generators.append(Generator(
            bus  = gd['bus'],
            pmin = _power(gd, 'pmin_mw', 'pmin_pu', base_mva, path),
            pmax = _power(gd, 'pmax_mw', 'pmax_pu', base_mva, path),
            qmin = _power(gd, 'qmin_mvar', 'qmin_pu', base_mva, path),
            qmax = _power(gd, 'qmax_mvar', 'qmax_pu', base_mva, path),
            c2   = c2,
            c1   = c1,
            c0   = _number(cost, 'c0', path, default=0.0, required=False),
            name = str(gd.get('name', '')),
        ))

    return Network(buses, lines, generators, base_mva=base_mva, slack_vm=slack_vm, name=str(doc.get('name', '')))

def _line_base_kv(ld, buses, base_kv, path):
    ends = [b for b in buses if b.id in (ld['from'], ld['to'])]
    kvs = {b.base_kv for b in ends if b.base_kv is not None}
    if not kvs and base_kv is None:
        raise CaseFormatError("ohmic impedance needs 'base_kv' on the case or on the line ends", path=path)
    if len(kvs) > 1:
        raise CaseFormatError(f"line ends have different base_kv {sorted(kvs)}, transformers are not supported", path=path)
    return kvs.pop() if kvs else base_kv

def _dv_from_s_max(s_max, z):
    # |S| = |V_l| |y| |V_l - V_m|, at |V_l| = 1 the equivalent voltage-difference limit is s_max |z|
    return s_max * abs(z)

def serialize_case(net):
    """ Dump a Network into the JSON case schema, using the exact per-unit fields """
    doc = {
        'name': net.name,
        'base_mva': net.base_mva,
        'slack_vm': net.slack_vm,
        'buses': [],
        'lines': [],
        'generators': [],
    }
    for bus in net.buses:
        entry = {'id': bus.id, 'kind': bus.kind.value, 'vmin': bus.vmin, 'vmax': bus.vmax,
                 'pd_pu': bus.pd, 'qd_pu': bus.qd, 'renewable': bus.renewable, 'name': bus.name}
        if bus.base_kv is not None:
            entry['base_kv'] = bus.base_kv
        doc['buses'].append(entry)
    for line in net.lines:
        entry = {'from': line.from_bus, 'to': line.to_bus, 'r_pu': line.impedance.real, 'x_pu': line.impedance.imag,
                 'dv_max_pu': line.dv_max, 'name': line.name}
        if line.s_max is not None:
            entry['s_max_pu'] = line.s_max
        doc['lines'].append(entry)
    for gen in net.generators:
        doc['generators'].append({
            'bus': gen.bus, 'pmin_pu': gen.pmin, 'pmax_pu': gen.pmax, 'qmin_pu': gen.qmin, 'qmax_pu': gen.qmax,
            'cost': {'units': 'pu', 'c2': gen.c2, 'c1': gen.c1, 'c0': gen.c0}, 'name': gen.name,
        })
    return doc


###### MATPOWER-style `mpc` subset ######

_MPC_MATRIX = r"mpc\.{name}\s*=\s*\[([-+\s0-9eE.;,]*)\]"

def _mpc_array(case_as_str, name, required=True):
    match = re.search(_MPC_MATRIX.format(name=name), case_as_str)
    if match is None:
        if required:
            raise CaseFormatError(f"missing or unparsable 'mpc.{name}' table", path=f'mpc.{name}')
        return None
    rows = [r.replace(',', ' ').split() for r in match.group(1).strip(';\n\t ').split(';')]
    rows = [r for r in rows if r]
    try:
        return np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as e:
        raise CaseFormatError(f"non-numeric entry ({e})", path=f'mpc.{name}') from None

def parse_matpower(text):
    """
    Import the supported subset of a MATPOWER case: bus, branch, gen, and gencost
    (polynomial model of degree <= 2). Anything outside the subset raises CaseFormatError.
    """
    # Strip MATLAB comments
    lines = [ln.split('%')[0] for ln in text.splitlines()]
    case_as_str = "\n".join(lines)

    if re.search(r"mpc\.(bus|gen|branch|gencost)\s*\(", case_as_str):
        raise CaseFormatError("indexed assignments like 'mpc.bus(...)' are not supported", path='mpc')

    match = re.search(r"mpc\.baseMVA\s*=\s*([0-9eE.+-]+)", case_as_str)
    if match is None:
        raise CaseFormatError("missing 'mpc.baseMVA'", path='mpc.baseMVA')
    base_mva = float(match.group(1))

    bus     = _mpc_array(case_as_str, 'bus')
    gen     = _mpc_array(case_as_str, 'gen')
    branch  = _mpc_array(case_as_str, 'branch')
    gencost = _mpc_array(case_as_str, 'gencost', required=False)
    branch_dv = _mpc_array(case_as_str, 'branch_dv', required=False)

    if bus.shape[1] < 13:
        raise CaseFormatError(f"bus table needs 13 columns, got {bus.shape[1]}", path='mpc.bus')
    if branch.shape[1] < 11:
        raise CaseFormatError(f"branch table needs 11 columns, got {branch.shape[1]}", path='mpc.branch')
    if gen.shape[1] < 10:
        raise CaseFormatError(f"gen table needs 10 columns, got {gen.shape[1]}", path='mpc.gen')

    # Remap external bus numbers so that the reference bus becomes 0
    ref = np.flatnonzero(bus[:, 1] == 3)
    if len(ref) != 1:
        raise InvariantViolation(f"exactly one reference bus (type 3) is required, found {len(ref)}", path='mpc.bus')
    order = [int(ref[0])] + [k for k in range(bus.shape[0]) if k != ref[0]]
    remap = {int(bus[k, 0]): new for new, k in enumerate(order)}

    active_gen = [g for g in range(gen.shape[0]) if gen[g, 7] > 0]
    if len(active_gen) < gen.shape[0]:
        vprint(f"Skipping {gen.shape[0] - len(active_gen)} out-of-service generator(s) in mpc.gen")
    gen_buses = {remap.get(int(gen[g, 0])) for g in active_gen}

    buses = []
    for new, k in enumerate(order):
        path = f'mpc.bus[{k}]'
        btype = int(bus[k, 1])
        if btype == 4:
            raise CaseFormatError("isolated buses (type 4) are not supported", path=path)
        if bus[k, 4] != 0 or bus[k, 5] != 0:
            raise CaseFormatError("shunt elements (GS, BS) are not supported", path=path)
        if btype == 3:
            kind = BusKind.SLACK
        elif new in gen_buses:
            kind = BusKind.GENERATOR
        else:
            kind = BusKind.LOAD
        buses.append(Bus(new, kind, vmin=bus[k, 12], vmax=bus[k, 11], pd=bus[k, 2] / base_mva, qd=bus[k, 3] / base_mva,
                         base_kv=bus[k, 9] if bus[k, 9] > 0 else None, name=str(int(bus[k, 0]))))

    if branch_dv is not None and branch_dv.size != branch.shape[0]:
        raise CaseFormatError(f"branch_dv needs one entry per branch ({branch.shape[0]}), got {branch_dv.size}", path='mpc.branch_dv')

    lines = []
    for i in range(branch.shape[0]):
        path = f'mpc.branch[{i}]'
        if branch[i, 10] <= 0:
            vprint(f"Skipping out-of-service branch {i} in mpc.branch")
            continue
        if branch[i, 4] != 0:
            raise CaseFormatError("line charging (BR_B) is not supported", path=path)
        if branch[i, 8] not in (0.0, 1.0):
            raise CaseFormatError("transformer taps are not supported", path=path)
        if branch[i, 9] != 0:
            raise CaseFormatError("phase shifters are not supported", path=path)
        try:
            f, t = remap[int(branch[i, 0])], remap[int(branch[i, 1])]
        except KeyError as e:
            raise CaseFormatError(f"branch refers to unknown bus {e.args[0]}", path=path) from None
        s_max = branch[i, 5] / base_mva if branch[i, 5] > 0 else None
        if branch_dv is not None:
            dv_max = float(branch_dv.ravel()[i])
        else:
            # Non-binding default: |V_f - V_t| <= |V_f| + |V_t|
            dv_max = buses[f].vmax + buses[t].vmax
        lines.append(Line(f, t, complex(branch[i, 2], branch[i, 3]), dv_max, s_max, name=str(i)))

    if gencost is not None and gencost.shape[0] < gen.shape[0]:
        raise CaseFormatError(f"gencost needs one row per generator ({gen.shape[0]}), got {gencost.shape[0]}", path='mpc.gencost')

    slack_vm = 1.0
    generators = []
    for g in active_gen:
        path = f'mpc.gen[{g}]'
        try:
            b = remap[int(gen[g, 0])]
        except KeyError:
            raise CaseFormatError(f"generator refers to unknown bus {int(gen[g, 0])}", path=path) from None
        c2 = c1 = c0 = 0.0
        if gencost is not None:
            model, ncost = int(gencost[g, 0]), int(gencost[g, 3])
            if model != 2:
                raise CaseFormatError("only polynomial costs (model 2) are supported", path=f'mpc.gencost[{g}]')
            if ncost > 3:
                raise CaseFormatError(f"polynomial cost degree must be <= 2, got NCOST={ncost}", path=f'mpc.gencost[{g}]')
            coeffs = [0.0] * (3 - ncost) + list(gencost[g, 4:4 + ncost])
            c2, c1, c0 = coeffs[0] * base_mva ** 2, coeffs[1] * base_mva, coeffs[2]
        if b == 0:
            slack_vm = float(gen[g, 5])
        generators.append(Generator(b, pmin=gen[g, 9] / base_mva, pmax=gen[g, 8] / base_mva,
                                    qmin=gen[g, 4] / base_mva, qmax=gen[g, 3] / base_mva,
                                    c2=c2, c1=c1, c0=c0, name=str(g)))

    return Network(buses, lines, generators, base_mva=base_mva, slack_vm=slack_vm, name='mpc')
