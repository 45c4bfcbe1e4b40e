## Renewable and load fluctuation models, scenario sampling, and the deployment-vector recourse

"""
Uncertain injections at bus k are

    renewable:  P^R0_k + Q^R0_k i + delta^R_k
    load:       P^L0_k + Q^L0_k i + delta^L_k

with one complex draw per bus and source. Stacked, delta = [delta^L_0 .. delta^L_{n-1},
delta^R_0 .. delta^R_{n-1}], and the real-time active mismatch is
s^T Re(delta) = sum Re(delta^L) - sum Re(delta^R) (positive means extra demand),
which the generators absorb in the proportions of the deployment vector alpha.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from swcopf.errors import CaseFormatError, DimensionMismatch
from swcopf.utils import stable_hash, vprint

SCENARIO_FORMAT = 'swcopf-scenarios'
SCENARIO_VERSION = 1


###### Supports ######

@dataclass(frozen=True)
class PointZero:
    """ No fluctuation, delta = 0 """
    kind = 'point'

    def draw(self, rng):
        return 0j

    def contains(self, z):
        return z == 0

    def active_range(self):
        return 0.0, 0.0

    def scaled(self, factor):
        return self

    def to_dict(self):
        return {'type': self.kind}

@dataclass(frozen=True)
class Box:
    """ Complex rectangle [re_lo, re_hi] + [im_lo, im_hi] i, sampled uniformly """
    re_lo: float
    re_hi: float
    im_lo: float = 0.0
    im_hi: float = 0.0
    kind = 'box'

    def __post_init__(self):
        if self.re_lo > self.re_hi or self.im_lo > self.im_hi:
            raise ValueError(f"Box support needs lo <= hi, got re [{self.re_lo}, {self.re_hi}], im [{self.im_lo}, {self.im_hi}]")

    def draw(self, rng):
        u = rng.random(2)
        return complex(self.re_lo + (self.re_hi - self.re_lo) * u[0], self.im_lo + (self.im_hi - self.im_lo) * u[1])

    def contains(self, z):
        return self.re_lo <= z.real <= self.re_hi and self.im_lo <= z.imag <= self.im_hi

    def active_range(self):
        return self.re_lo, self.re_hi

    def scaled(self, factor):
        return Box(self.re_lo * factor, self.re_hi * factor, self.im_lo * factor, self.im_hi * factor)

    def to_dict(self):
        return {'type': self.kind, 're': [self.re_lo, self.re_hi], 'im': [self.im_lo, self.im_hi]}

@dataclass(frozen=True)
class Gaussian:
    """ Zero-mean normal over (Re, Im) with 2 x 2 covariance; unbounded support """
    cov: tuple
    kind = 'gaussian'

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T) or la.eigvalsh(cov)[0] < -1e-14:
            raise ValueError(f"Gaussian support needs a symmetric PSD 2x2 covariance, got {cov.tolist()}")
        object.__setattr__(self, 'cov', tuple(map(tuple, cov.tolist())))

    @property
    def factor(self):
        w, V = la.eigh(np.asarray(self.cov))
        return V * np.sqrt(np.maximum(w, 0.0))

    def draw(self, rng):
        z = self.factor @ rng.standard_normal(2)
        return complex(z[0], z[1])

    def contains(self, z):
        return bool(np.isfinite(z.real) and np.isfinite(z.imag))

    def active_range(self):
        return -np.inf, np.inf

    def scaled(self, factor):
        return Gaussian(tuple(map(tuple, (np.asarray(self.cov) * factor ** 2).tolist())))

    def to_dict(self):
        return {'type': self.kind, 'cov': [list(row) for row in self.cov]}

@dataclass(frozen=True)
class BetaScaled:
    """ Active fluctuation lo + (hi - lo) Beta(a, b), zero reactive part (wind output model) """
    lo: float
    hi: float
    a: float = 2.0
    b: float = 5.0
    kind = 'beta'

    def __post_init__(self):
        if self.lo > self.hi or self.a <= 0 or self.b <= 0:
            raise ValueError(f"Beta support needs lo <= hi and positive shapes, got [{self.lo}, {self.hi}], a={self.a}, b={self.b}")

    def draw(self, rng):
        return complex(self.lo + (self.hi - self.lo) * rng.beta(self.a, self.b), 0.0)

    def contains(self, z):
        return self.lo <= z.real <= self.hi and z.imag == 0

    def active_range(self):
        return self.lo, self.hi

    def scaled(self, factor):
        return BetaScaled(self.lo * factor, self.hi * factor, self.a, self.b)

    def to_dict(self):
        return {'type': self.kind, 'lo': self.lo, 'hi': self.hi, 'a': self.a, 'b': self.b}

def support_from_dict(d, base, path, p_nominal=0.0, p_cap=None):
    """
    Support from its document form. Powers are divided by `base` (1 for per-unit documents).

        {"type": "point"}
        {"type": "box", "re": [lo, hi], "im": [lo, hi]}
        {"type": "gaussian", "cov": [[var_re, c], [c, var_im]]}
        {"type": "beta", "lo": lo, "hi": hi, "a": 2, "b": 5}

    A beta support without bounds defaults to [-P^R0, cap - P^R0] (cap = P^R0 if not given).
    """
    if not isinstance(d, dict) or 'type' not in d:
        raise CaseFormatError("support must be an object with a 'type' field", path=path)
    kind = d['type']
    try:
        if kind == 'point':
            return PointZero()
        if kind == 'box':
            re = d.get('re', [0.0, 0.0])
            im = d.get('im', [0.0, 0.0])
            return Box(re[0] / base, re[1] / base, im[0] / base, im[1] / base)
        if kind == 'gaussian':
            return Gaussian(tuple(map(tuple, (np.asarray(d['cov'], dtype=float) / base ** 2).tolist())))
        if kind == 'beta':
            cap = p_nominal if p_cap is None else p_cap
            lo = d['lo'] / base if 'lo' in d else -p_nominal
            hi = d['hi'] / base if 'hi' in d else cap - p_nominal
            return BetaScaled(lo, hi, float(d.get('a', 2.0)), float(d.get('b', 5.0)))
    except (KeyError, TypeError, IndexError, ValueError) as e:
        raise CaseFormatError(f"invalid '{kind}' support ({e})", path=path) from None
    raise CaseFormatError(f"unknown support type '{kind}', expected 'point', 'box', 'gaussian', or 'beta'", path=f'{path}.type')


###### Model ######

@dataclass(frozen=True)
class UncertaintyModel:
    """
    Per-bus nominal renewable injection and fluctuation supports, per-unit.

    Attributes:
        n_bus (int): number of buses.
        p_renewable, q_renewable (np.ndarray): nominal renewable injection P^R0, Q^R0.
        load_supports (dict[int, support]): Delta^L_k of buses with variable load.
        renewable_supports (dict[int, support]): Delta^R_k of renewable buses.
    """
    n_bus: int
    p_renewable: np.ndarray
    q_renewable: np.ndarray
    load_supports: dict = field(default_factory=dict)
    renewable_supports: dict = field(default_factory=dict)
    name: str = ''

    def __post_init__(self):
        n = self.n_bus
        object.__setattr__(self, 'p_renewable', np.asarray(self.p_renewable, dtype=float))
        object.__setattr__(self, 'q_renewable', np.asarray(self.q_renewable, dtype=float))
        if self.p_renewable.shape != (n,) or self.q_renewable.shape != (n,):
            raise DimensionMismatch(f"Nominal renewable arrays must have shape ({n},)")
        for label, supports in (('load', self.load_supports), ('renewable', self.renewable_supports)):
            for k in supports:
                if not 0 <= k < n:
                    raise ValueError(f"{label} support at bus {k} is outside 0..{n - 1}")
        # Point supports carry no randomness
        object.__setattr__(self, 'load_supports',
                           {k: s for k, s in sorted(self.load_supports.items()) if not isinstance(s, PointZero)})
        object.__setattr__(self, 'renewable_supports',
                           {k: s for k, s in sorted(self.renewable_supports.items()) if not isinstance(s, PointZero)})

    @classmethod
    def point_mass(cls, net, p_renewable=None, q_renewable=None):
        n = net.n_bus
        return cls(n, np.zeros(n) if p_renewable is None else p_renewable, np.zeros(n) if q_renewable is None else q_renewable)

    @classmethod
    def from_dict(cls, doc, net):
        """
        Model from its document form:

            {"units": "mw" | "pu",
             "renewables": [{"bus": k, "p": P^R0, "q": Q^R0, "cap": P_cap, "support": {...}}, ...],
             "loads": [{"bus": k, "support": {...}}, ...]}

        With units 'mw' (default) powers are MW / MVAr on the network base. Renewable buses
        must carry the renewable flag in the case.
        """
        if not isinstance(doc, dict):
            raise CaseFormatError("uncertainty model must be an object", path='$')
        units = doc.get('units', 'mw')
        if units not in ('mw', 'pu'):
            raise CaseFormatError(f"units must be 'mw' or 'pu', got {units!r}", path='units')
        base = net.base_mva if units == 'mw' else 1.0
        n = net.n_bus
        p_ren, q_ren = np.zeros(n), np.zeros(n)
        ren_sup, load_sup = {}, {}
        for i, entry in enumerate(doc.get('renewables', [])):
            path = f'renewables[{i}]'
            k = _bus_of(entry, n, path)
            if not net.buses[k].renewable:
                raise CaseFormatError(f"bus {k} has no renewable flag in case '{net.name}'", path=f'{path}.bus')
            p_ren[k] = entry.get('p', 0.0) / base
            q_ren[k] = entry.get('q', 0.0) / base
            cap = entry['cap'] / base if 'cap' in entry else None
            ren_sup[k] = support_from_dict(entry.get('support', {'type': 'point'}), base, f'{path}.support', p_ren[k], cap)
        for i, entry in enumerate(doc.get('loads', [])):
            path = f'loads[{i}]'
            k = _bus_of(entry, n, path)
            load_sup[k] = support_from_dict(entry.get('support', {'type': 'point'}), base, f'{path}.support')
        return cls(n, p_ren, q_ren, load_sup, ren_sup, name=doc.get('name', ''))

    def to_dict(self):
        ren_buses = (set(np.flatnonzero(self.p_renewable).tolist()) | set(np.flatnonzero(self.q_renewable).tolist())
                     | set(self.renewable_supports))
        renewables = []
        for k in sorted(ren_buses):
            sup = self.renewable_supports.get(k, PointZero())
            renewables.append({'bus': k, 'p': float(self.p_renewable[k]), 'q': float(self.q_renewable[k]), 'support': sup.to_dict()})
        return {
            'units'     : 'pu',
            'name'      : self.name,
            'renewables': renewables,
            'loads'     : [{'bus': k, 'support': s.to_dict()} for k, s in self.load_supports.items()],
        }

    @property
    def hash(self):
        return stable_hash(self.to_dict())

    @property
    def uncertain_buses(self):
        return sorted(set(self.load_supports) | set(self.renewable_supports))

    @property
    def degenerate(self):
        return not self.load_supports and not self.renewable_supports

    def scaled(self, factor):
        """ Same nominal injections with every support shrunk (or grown) by `factor` """
        return UncertaintyModel(self.n_bus, self.p_renewable, self.q_renewable,
                                {k: s.scaled(factor) for k, s in self.load_supports.items()},
                                {k: s.scaled(factor) for k, s in self.renewable_supports.items()}, self.name)

    def fixed_injection(self, net, delta=None):
        """ Per-bus (P, Q) of renewables minus loads under the fluctuation `delta` """
        n = self.n_bus
        d = np.zeros(2 * n, dtype=complex) if delta is None else _as_delta(delta, n)
        s = self.p_renewable + 1j * self.q_renewable + d[n:] - (net.pd + 1j * net.qd + d[:n])
        return s.real, s.imag

    def draw(self, seed, index):
        """
        The index-th scenario of the stream `seed`. Each index owns a Philox stream keyed by
        (seed, index), so scenarios can be drawn in any order or concurrently.
        """
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))
        n = self.n_bus
        delta = np.zeros(2 * n, dtype=complex)
        for k, sup in self.load_supports.items():
            delta[k] = sup.draw(rng)
        for k, sup in self.renewable_supports.items():
            delta[n + k] = sup.draw(rng)
        return UncertaintyVector(delta, seed, index)

    def contains(self, delta):
        n = self.n_bus
        d = _as_delta(delta, n)
        for k in range(n):
            for sup, z in ((self.load_supports.get(k), d[k]), (self.renewable_supports.get(k), d[n + k])):
                if sup is None:
                    if z != 0:
                        return False
                elif not sup.contains(z):
                    return False
        return True

    def mismatch_range(self):
        """ (min, max) of s^T Re(delta) over the supports """
        lo = sum(s.active_range()[0] for s in self.load_supports.values()) - sum(s.active_range()[1] for s in self.renewable_supports.values())
        hi = sum(s.active_range()[1] for s in self.load_supports.values()) - sum(s.active_range()[0] for s in self.renewable_supports.values())
        return float(lo), float(hi)

def _bus_of(entry, n, path):
    k = entry.get('bus') if isinstance(entry, dict) else None
    if isinstance(k, bool) or not isinstance(k, int) or not 0 <= k < n:
        raise CaseFormatError(f"'bus' must be a bus id in 0..{n - 1}, got {k!r}", path=f'{path}.bus')
    return k


###### Vectors and scenario sets ######

@dataclass(frozen=True)
class UncertaintyVector:
    """ Stacked complex fluctuation [delta^L, delta^R] of length 2n, with its (seed, index) provenance """
    delta: np.ndarray
    seed: int | None = None
    index: int | None = None

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=complex)
        if d.ndim != 1 or len(d) % 2:
            raise DimensionMismatch(f"delta must be a 1D vector of even length 2n, got shape {d.shape}")
        object.__setattr__(self, 'delta', d)

    @classmethod
    def zeros(cls, n_bus):
        return cls(np.zeros(2 * n_bus, dtype=complex))

    @property
    def n_bus(self):
        return len(self.delta) // 2

    @property
    def load(self):
        return self.delta[:self.n_bus]

    @property
    def renewable(self):
        return self.delta[self.n_bus:]

def _as_delta(delta, n=None):
    d = delta.delta if isinstance(delta, UncertaintyVector) else np.asarray(delta, dtype=complex)
    if n is not None and d.shape != (2 * n,):
        raise DimensionMismatch(f"delta has shape {d.shape}, expected ({2 * n},)")
    return d

@dataclass(frozen=True)
class ScenarioSet:
    """
    Ordered scenarios with their provenance.

    Attributes:
        vectors (tuple[UncertaintyVector]): the draws, scenario i is index start + i of the stream.
        seed (int): stream seed.
        model_hash (str): sha256 of the model that produced the draws.
        eps, beta (float | None): declared risk and confidence when produced for a scenario program.
    """
    vectors: tuple
    seed: int | None = None
    model_hash: str = ''
    eps: float | None = None
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, 'vectors', tuple(self.vectors))
        sizes = {len(v.delta) for v in self.vectors}
        if len(sizes) > 1:
            raise DimensionMismatch(f"Scenarios have mixed dimensions {sorted(sizes)}")

    def __len__(self):
        return len(self.vectors)

    def __iter__(self):
        return iter(self.vectors)

    def __getitem__(self, i):
        return self.vectors[i]

    @property
    def deltas(self):
        if not self.vectors:
            return np.zeros((0, 0), dtype=complex)
        return np.stack([v.delta for v in self.vectors])

    def prefix(self, count):
        return ScenarioSet(self.vectors[:count], self.seed, self.model_hash, self.eps, self.beta)

    def header(self):
        return {
            'format'    : SCENARIO_FORMAT,
            'version'   : SCENARIO_VERSION,
            'seed'      : self.seed,
            'model_hash': self.model_hash,
            'n_bus'     : self.vectors[0].n_bus if self.vectors else None,
            'count'     : len(self),
            'eps'       : self.eps,
            'beta'      : self.beta,
        }

    def to_jsonl(self):
        """ Header line, then one {"index", "delta": [[re, im], ...]} object per scenario """
        lines = [json.dumps(self.header(), sort_keys=True)]
        for v in self.vectors:
            lines.append(json.dumps({'index': v.index, 'delta': [[z.real, z.imag] for z in v.delta.tolist()]}))
        return lines

    @classmethod
    def from_jsonl(cls, lines):
        head = json.loads(lines[0])
        if head.get('format') != SCENARIO_FORMAT:
            raise CaseFormatError(f"not a scenario file (format {head.get('format')!r}, expected '{SCENARIO_FORMAT}')", path='header.format')
        if head.get('version') != SCENARIO_VERSION:
            raise CaseFormatError(f"unsupported scenario file version {head.get('version')!r}", path='header.version')
        vectors = []
        for i, line in enumerate(lines[1:]):
            rec = json.loads(line)
            try:
                delta = np.array([complex(re, im) for re, im in rec['delta']])
            except (KeyError, TypeError, ValueError) as e:
                raise CaseFormatError(f"malformed scenario ({e})", path=f'line {i + 2}') from None
            vectors.append(UncertaintyVector(delta, head.get('seed'), rec.get('index')))
        if head.get('count') is not None and head['count'] != len(vectors):
            raise CaseFormatError(f"header declares {head['count']} scenarios, file holds {len(vectors)}", path='header.count')
        return cls(tuple(vectors), head.get('seed'), head.get('model_hash', ''), head.get('eps'), head.get('beta'))


###### Operations ######

def sample(model, N, seed, start=0, eps=None, beta=None, threads=1, verbose=False):
    """
    Draw N scenarios i.i.d. from the supports of `model`.

    Args:
        model (UncertaintyModel): the model.
        N (int): number of scenarios, at least 1.
        seed (int): stream seed. The same (seed, model) always yields the same set.
        start (int): index of the first scenario in the stream.
        eps, beta (float, optional): declared risk/confidence, recorded in the set.
        threads (int): worker threads for drawing.

    Returns:
        ScenarioSet
    """
    if N < 1:
        raise ValueError(f"Number of scenarios must be at least 1, got {N}")
    indices = range(start, start + N)
    if threads > 1 and N > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vectors = list(pool.map(lambda i: model.draw(seed, i), indices))
    else:
        vectors = [model.draw(seed, i) for i in indices]
    vprint(f"Sampled {N} scenarios with seed {seed} over {len(model.uncertain_buses)} uncertain buses", verbose=verbose)
    return ScenarioSet(tuple(vectors), seed, model.hash, eps, beta)

def mismatch(delta):
    """ s^T Re(delta) = sum Re(delta^L) - sum Re(delta^R); positive means extra demand """
    d = _as_delta(delta)
    n = len(d) // 2
    return float(d[:n].real.sum() - d[n:].real.sum())

@dataclass(frozen=True)
class DeploymentVector:
    """ Nonnegative weights summing to one that split the mismatch among generators """
    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim != 1 or len(a) == 0:
            raise DimensionMismatch(f"alpha must be a nonempty 1D vector, got shape {a.shape}")
        if np.any(a < 0) or abs(a.sum() - 1.0) > 1e-12:
            raise ValueError(f"alpha must be nonnegative and sum to 1, got {a.tolist()} (sum {a.sum():.15g})")
        object.__setattr__(self, 'alpha', a)

    @classmethod
    def from_raw(cls, raw):
        """ Project a solver output onto the simplex by clipping and renormalizing """
        a = np.maximum(np.asarray(raw, dtype=float), 0.0)
        total = a.sum()
        if total <= 0:
            raise ValueError(f"Cannot normalize alpha {np.asarray(raw).tolist()}, no positive entry")
        return cls(a / total)

    @classmethod
    def uniform(cls, n_gen):
        return cls(np.full(n_gen, 1.0 / n_gen))

    def __len__(self):
        return len(self.alpha)

def deploy(p_gen, alpha, delta):
    """ Adjusted dispatch P^G + alpha * s^T Re(delta) """
    a = alpha.alpha if isinstance(alpha, DeploymentVector) else np.asarray(alpha, dtype=float)
    p_gen = np.asarray(p_gen, dtype=float)
    if p_gen.shape != a.shape:
        raise DimensionMismatch(f"p_gen has shape {p_gen.shape}, alpha has shape {a.shape}")
    return p_gen + a * mismatch(delta)
