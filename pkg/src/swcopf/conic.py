## Primal-dual interior-point solver for conic programs over free, nonnegative, second-order, and PSD cones

"""
Programs are in standard form

    minimize    c^T x + offset
    subject to  A x = b,  x in K = K_1 x ... x K_p

with dual

    maximize    b^T y + offset
    subject to  A^T y + s = c,  s in K*.

PSD blocks are stored as svec (lower triangle, column by column, off-diagonals
scaled by sqrt(2)), so inner products of blocks are plain dot products.

The iteration runs on the homogeneous self-dual embedding with Nesterov-Todd
scaling and a Mehrotra predictor-corrector step. Each step solves the
quasi-definite KKT system [[-H - reg I, A^T], [A, reg I]] with a sparse LU in
symmetric mode, followed by iterative refinement against the unregularized system.
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from urllib.parse import quote, unquote

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from swcopf.errors import DimensionMismatch, NumericalFailure
from swcopf.utils import vprint
from swcopf.utils.math_ops import SQRT2, real_to_hermitian, skron, smat, svec, svec_dim, svec_index


###### Cones and programs ######

class ConeKind(str, Enum):
    FREE   = 'free'
    NONNEG = 'nonneg'
    SOC    = 'soc'
    PSD    = 'psd'

@dataclass(frozen=True)
class ConeBlock:
    """ One cone of the product. `size` is the vector length, or the matrix order for PSD blocks. """
    kind: ConeKind
    size: int
    name: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'kind', ConeKind(self.kind))
        if self.size < 1:
            raise ValueError(f"Cone block '{self.name}' must have positive size, got {self.size}")

    @property
    def dim(self):
        return svec_dim(self.size) if self.kind == ConeKind.PSD else self.size

    @property
    def degree(self):
        return {ConeKind.FREE: 0, ConeKind.NONNEG: self.size, ConeKind.SOC: 1, ConeKind.PSD: self.size}[self.kind]

def Free(size, name=''):
    return ConeBlock(ConeKind.FREE, size, name)

def NonNeg(size, name=''):
    return ConeBlock(ConeKind.NONNEG, size, name)

def SecondOrder(size, name=''):
    return ConeBlock(ConeKind.SOC, size, name)

def PSD(order, name=''):
    return ConeBlock(ConeKind.PSD, order, name)

@dataclass(frozen=True)
class ConeProgram:
    """
    A conic program in standard form.

    Attributes:
        c (np.ndarray): objective vector.
        A (scipy.sparse.csr_matrix): equality constraint matrix.
        b (np.ndarray): right-hand side.
        blocks (tuple[ConeBlock]): ordered cone decomposition of x.
        row_families (tuple[str]): constraint family of every row, for diagnostics.
        offset (float): constant added to both objectives.
    """
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    blocks: tuple
    row_families: tuple = ()
    offset: float = 0.0
    name: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'c', np.asarray(self.c, dtype=float))
        object.__setattr__(self, 'b', np.asarray(self.b, dtype=float))
        object.__setattr__(self, 'A', sp.csr_matrix(self.A, dtype=float))
        object.__setattr__(self, 'blocks', tuple(self.blocks))
        object.__setattr__(self, 'row_families', tuple(self.row_families))
        n = sum(block.dim for block in self.blocks)
        if len(self.c) != n:
            raise DimensionMismatch(f"Program '{self.name}': c has length {len(self.c)}, cone blocks sum to {n}")
        if self.A.shape != (len(self.b), n):
            raise DimensionMismatch(f"Program '{self.name}': A has shape {self.A.shape}, expected ({len(self.b)}, {n})")
        if self.row_families and len(self.row_families) != len(self.b):
            raise DimensionMismatch(f"Program '{self.name}': {len(self.row_families)} row families for {len(self.b)} rows")

    @property
    def n_var(self):
        return len(self.c)

    @property
    def n_row(self):
        return len(self.b)

    @cached_property
    def block_slices(self):
        slices, start = [], 0
        for block in self.blocks:
            slices.append(slice(start, start + block.dim))
            start += block.dim
        return tuple(slices)

    def block_by_name(self, name):
        for block, sl in zip(self.blocks, self.block_slices):
            if block.name == name:
                return block, sl
        raise KeyError(f"No cone block named '{name}' in program '{self.name}'")

    def family_counts(self):
        counts = {}
        for fam in self.row_families:
            counts[fam] = counts.get(fam, 0) + 1
        return counts


###### Program assembly ######

@dataclass(frozen=True)
class BlockRef:
    """ Handle to a block added to a ProgramBuilder """
    index: int
    start: int
    block: ConeBlock

    def col(self, i=0):
        if not 0 <= i < self.block.dim:
            raise IndexError(f"Index {i} out of range for block '{self.block.name}' of dim {self.block.dim}")
        return self.start + i

    def entry(self, i, j):
        """ (column, scale) with X_ij = scale * x[column] for a PSD block """
        if self.block.kind != ConeKind.PSD:
            raise TypeError(f"Block '{self.block.name}' is not a PSD block")
        order = self.block.size
        if not (0 <= i < order and 0 <= j < order):
            raise IndexError(f"Entry ({i}, {j}) out of range for PSD block '{self.block.name}' of order {order}")
        scale = 1.0 if i == j else 1.0 / SQRT2
        return self.start + svec_index(order, i, j), scale

    @property
    def cols(self):
        return np.arange(self.start, self.start + self.block.dim)

@dataclass
class RowChunk:
    """
    Rows assembled independently of a builder, with rows numbered locally from 0.
    Chunks from different threads are appended in a fixed order for deterministic programs.

    Inequality rows get their own slack: '<=' rows read a x + s = rhs, '>=' rows a x - s = rhs,
    with s collected into one NonNeg block named 'slack' at build time.
    """
    rows: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    vals: list = field(default_factory=list)
    rhs: list = field(default_factory=list)
    families: list = field(default_factory=list)
    ineq: list = field(default_factory=list)

    def add_row(self, cols, vals, rhs, family='', sense='='):
        if sense not in ('=', '<=', '>='):
            raise ValueError(f"Row sense must be '=', '<=', or '>=', got {sense!r}")
        r = len(self.rhs)
        for col, val in zip(cols, vals):
            if val != 0:
                self.rows.append(r)
                self.cols.append(int(col))
                self.vals.append(float(val))
        self.rhs.append(float(rhs))
        self.families.append(family)
        if sense != '=':
            self.ineq.append((r, 1.0 if sense == '<=' else -1.0))
        return r

    def add_range(self, cols, vals, lo, hi, family=''):
        """ lo <= a x <= hi, collapsed to one equality when the bounds coincide """
        if hi < lo:
            raise ValueError(f"Empty range [{lo}, {hi}] for a '{family}' row")
        if hi - lo <= 1e-12 * max(1.0, abs(hi)):
            return [self.add_row(cols, vals, 0.5 * (lo + hi), family)]
        return [self.add_row(cols, vals, lo, family, '>='), self.add_row(cols, vals, hi, family, '<=')]

    def __len__(self):
        return len(self.rhs)

class ProgramBuilder:
    """ Incremental assembly of a ConeProgram from blocks, rows, and costs """
    def __init__(self, name=''):
        self.name = name
        self.blocks = []
        self.n = 0
        self.c = {}
        self.offset = 0.0
        self._chunks = []
        self._n_rows = 0
        self._current = RowChunk()
        self._current_start = 0

    def add_block(self, block):
        ref = BlockRef(len(self.blocks), self.n, block)
        self.blocks.append(block)
        self.n += block.dim
        return ref

    def add_cost(self, col, value):
        self.c[col] = self.c.get(col, 0.0) + float(value)

    def add_row(self, cols, vals, rhs, family='', sense='='):
        self._current.add_row(cols, vals, rhs, family, sense)
        self._n_rows += 1
        return self._n_rows - 1

    def add_range(self, cols, vals, lo, hi, family=''):
        """ Same as RowChunk.add_range, returns the global indices of the new rows """
        local = self._current.add_range(cols, vals, lo, hi, family)
        self._n_rows += len(local)
        return [self._current_start + r for r in local]

    def add_chunk(self, chunk):
        """ Append a RowChunk, returns the global index of its first row """
        self._flush()
        start = self._n_rows
        self._chunks.append((start, chunk))
        self._n_rows += len(chunk)
        self._current_start = self._n_rows
        return start

    def _flush(self):
        if len(self._current):
            self._chunks.append((self._current_start, self._current))
        self._current = RowChunk()
        self._current_start = self._n_rows

    @property
    def n_rows(self):
        return self._n_rows

    def build(self):
        self._flush()
        rows, cols, vals, rhs, families, ineq = [], [], [], [], [], []
        for start, chunk in self._chunks:
            rows.append(np.asarray(chunk.rows, dtype=np.int64) + start)
            cols.append(np.asarray(chunk.cols, dtype=np.int64))
            vals.append(np.asarray(chunk.vals, dtype=float))
            rhs.extend(chunk.rhs)
            families.extend(chunk.families)
            ineq.extend((start + r, sign) for r, sign in chunk.ineq)
        blocks = list(self.blocks)
        n = self.n
        if ineq:
            blocks.append(NonNeg(len(ineq), 'slack'))
            rows.append(np.array([r for r, _ in ineq], dtype=np.int64))
            cols.append(np.arange(n, n + len(ineq), dtype=np.int64))
            vals.append(np.array([sign for _, sign in ineq], dtype=float))
            n += len(ineq)
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        A = sp.coo_matrix((vals, (rows, cols)), shape=(self._n_rows, n)).tocsr()
        A.sum_duplicates()
        c = np.zeros(n)
        for col, val in self.c.items():
            c[col] += val
        return ConeProgram(c, A, np.array(rhs, dtype=float), tuple(blocks), tuple(families), self.offset, self.name)


###### Hermitian embedding ######

@dataclass(frozen=True)
class HermitianEmbedding:
    """
    Realization of an order-n complex Hermitian matrix H = A + iB as the real
    symmetric block X = [[A, -B], [B, A]] of order 2n (H >= 0 iff X >= 0).

    Re H_kl is read from X[k, l] and Im H_kl from X[n + k, l]; `tying_rows`
    lists the equalities that force X to keep the embedded structure.
    """
    n: int

    @property
    def order(self):
        return 2 * self.n

    def block(self, name=''):
        return PSD(self.order, name)

    def re_pos(self, k, l):
        return (k, l)

    def im_pos(self, k, l):
        return (self.n + k, l)

    def four_positions(self, k, l):
        """ Real positions of H_kl as (row, col, sign, part) """
        n = self.n
        return (
            (k, l, 1.0, 're'),
            (n + k, n + l, 1.0, 're'),
            (n + k, l, 1.0, 'im'),
            (k, n + l, -1.0, 'im'),
        )

    def tying_rows(self):
        """ [(((i1, j1), coef1), ((i2, j2), coef2)), ...] each meaning coef1 X_i1j1 + coef2 X_i2j2 = 0 """
        n = self.n
        rows = []
        for l in range(n):
            for k in range(l, n):
                rows.append((((k, l), 1.0), ((n + k, n + l), -1.0)))
        for l in range(n):
            rows.append((((n + l, l), 1.0),))
            for k in range(l + 1, n):
                rows.append((((n + k, l), 1.0), ((n + l, k), 1.0)))
        return rows

    def embed(self, H):
        H = np.asarray(H, dtype=complex)
        if H.shape != (self.n, self.n):
            raise DimensionMismatch(f"Expected a {self.n}x{self.n} matrix, got {H.shape}")
        A, B = H.real, H.imag
        return np.block([[A, -B], [B, A]])

    def extract(self, X):
        return real_to_hermitian(np.asarray(X, dtype=float))

def embed_hermitian(n):
    if n < 1:
        raise ValueError(f"Hermitian order must be at least 1, got {n}")
    return HermitianEmbedding(n)

def add_embedding_ties(builder, ref, emb, family='hermitian_tie'):
    """ Add the structure rows of `emb` on the PSD block `ref` """
    for terms in emb.tying_rows():
        cols, vals = [], []
        for (i, j), coef in terms:
            col, scale = ref.entry(i, j)
            cols.append(col)
            vals.append(coef * scale)
        builder.add_row(cols, vals, 0.0, family)


###### Options and results ######

class SolverStatus(str, Enum):
    OPTIMAL           = 'optimal'
    PRIMAL_INFEASIBLE = 'primal_infeasible'
    DUAL_INFEASIBLE   = 'dual_infeasible'
    MAX_ITER          = 'max_iter'

@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-7
    infeas_tol: float = 1e-7
    max_iter: int = 100
    reg: float = 1e-8
    refine_steps: int = 3
    step_fraction: float = 0.99
    backoff_steps: int = 20
    stall_iters: int = 8
    # Residuals within this factor of the tolerances are accepted at reduced accuracy
    inaccurate_factor: float = 1e3
    presolve: bool = True
    debug: bool = False
    verbose: bool = False

    @classmethod
    def from_params(cls, solver_params):
        known = {k: v for k, v in (solver_params or {}).items() if k in cls.__dataclass_fields__}
        return cls(**known)

@dataclass
class ConeSolution:
    """
    Result of `solve`. For infeasible statuses x / (y, s) hold the certificate ray:
    PRIMAL_INFEASIBLE ships y with b^T y = 1 and s = -A^T y in K*,
    DUAL_INFEASIBLE ships x in K with A x = 0 and c^T x = -1.
    reduced_accuracy marks the best iterate of a stalled solve, within `inaccurate_factor` of the tolerances.
    """
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: SolverStatus
    primal_obj: float
    dual_obj: float
    gap: float
    iterations: int
    history: list = field(default_factory=list)
    presolve_info: dict = field(default_factory=dict)
    reduced_accuracy: bool = False

    @property
    def optimal(self):
        return self.status == SolverStatus.OPTIMAL

    def block_value(self, prog, name):
        """ Primal values of a named block, PSD blocks returned as matrices """
        block, sl = prog.block_by_name(name)
        v = self.x[sl]
        return smat(v, block.size) if block.kind == ConeKind.PSD else v

    def stats(self):
        return {
            'status'          : self.status.value,
            'primal_obj'      : self.primal_obj,
            'dual_obj'        : self.dual_obj,
            'gap'             : self.gap,
            'iterations'      : self.iterations,
            'reduced_accuracy': self.reduced_accuracy,
            'presolve'        : self.presolve_info,
        }


###### Cone kernels ######

def _soc_J(v):
    out = -v.copy()
    out[0] = v[0]
    return out

def _identity(block):
    if block.kind == ConeKind.NONNEG:
        return np.ones(block.size)
    if block.kind == ConeKind.SOC:
        e = np.zeros(block.size)
        e[0] = 1.0
        return e
    if block.kind == ConeKind.PSD:
        return svec(np.eye(block.size))
    return np.zeros(block.size)

def _jordan(block, u, v):
    if block.kind == ConeKind.NONNEG:
        return u * v
    if block.kind == ConeKind.SOC:
        out = u[0] * v + v[0] * u
        out[0] = u @ v
        return out
    U, V = smat(u, block.size), smat(v, block.size)
    return svec(0.5 * (U @ V + V @ U))

class _Scaling:
    """ Nesterov-Todd scaling of one cone block: lam = W x = W^{-T} s """
    __slots__ = ('block', 'W', 'lam', 'lam_vals')

    def __init__(self, block, x, s):
        self.block = block
        self.lam_vals = None
        if block.kind == ConeKind.NONNEG:
            if np.any(x <= 0) or np.any(s <= 0):
                raise NumericalFailure(f"Iterate left the nonnegative orthant in block '{block.name}'")
            self.W = np.sqrt(s / x)
            self.lam = np.sqrt(x * s)
        elif block.kind == ConeKind.SOC:
            self.W = _soc_scaling(x, s, block.name)
            self.lam = self.W @ x
        else:
            self.W, self.lam_vals = _psd_scaling(x, s, block.size, block.name)
            self.lam = svec(np.diag(self.lam_vals))

    def apply(self, v):
        return self.W * v if self.block.kind == ConeKind.NONNEG else self.W @ v

    def apply_T(self, v):
        return self.W * v if self.block.kind == ConeKind.NONNEG else self.W.T @ v

    def hessian(self):
        if self.block.kind == ConeKind.NONNEG:
            return sp.diags(self.W ** 2)
        return sp.csr_matrix(self.W.T @ self.W)

    def lam_div(self, v):
        """ z with lam o z = v """
        kind = self.block.kind
        lam = self.lam
        if kind == ConeKind.NONNEG:
            return v / lam
        if kind == ConeKind.SOC:
            det = lam[0] ** 2 - lam[1:] @ lam[1:]
            z = np.empty_like(v)
            z[0] = (lam[0] * v[0] - lam[1:] @ v[1:]) / det
            z[1:] = (v[1:] - z[0] * lam[1:]) / lam[0]
            return z
        lv = self.lam_vals
        V = smat(v, self.block.size)
        return svec(2.0 * V / (lv[:, None] + lv[None, :]))

    def lam_sq(self):
        if self.block.kind == ConeKind.PSD:
            return svec(np.diag(self.lam_vals ** 2))
        return _jordan(self.block, self.lam, self.lam)

    def max_step(self, d):
        """ Largest a with lam + a d in the cone (inf if unbounded) """
        kind = self.block.kind
        if kind == ConeKind.NONNEG:
            neg = d < 0
            return np.min(-self.lam[neg] / d[neg]) if np.any(neg) else np.inf
        if kind == ConeKind.SOC:
            return _soc_max_step(self.lam, d)
        lv = np.sqrt(self.lam_vals)
        M = smat(d, self.block.size) / (lv[:, None] * lv[None, :])
        lam_min = la.eigvalsh(M)[0]
        return -1.0 / lam_min if lam_min < 0 else np.inf

def _soc_scaling(x, s, name):
    xJx = x[0] ** 2 - x[1:] @ x[1:]
    sJs = s[0] ** 2 - s[1:] @ s[1:]
    if xJx <= 0 or sJs <= 0 or x[0] <= 0 or s[0] <= 0:
        raise NumericalFailure(f"Iterate left the interior of second-order cone '{name}'")
    xn, sn = np.sqrt(xJx), np.sqrt(sJs)
    xb, sb = x / xn, s / sn
    gamma = np.sqrt(0.5 * (1.0 + xb @ sb))
    wb = (sb + _soc_J(xb)) / (2.0 * gamma)
    beta = np.sqrt(sn / xn)
    v = wb.copy()
    v[0] += 1.0
    v /= np.sqrt(2.0 * (wb[0] + 1.0))
    J = -np.eye(len(x))
    J[0, 0] = 1.0
    return beta * (2.0 * np.outer(v, v) - J)

def _psd_scaling(x, s, order, name):
    X, S = smat(x, order), smat(s, order)
    try:
        Lx = la.cholesky(X, lower=True)
        Ls = la.cholesky(S, lower=True)
    except la.LinAlgError:
        raise NumericalFailure(f"Iterate lost positive definiteness in PSD block '{name}'") from None
    _, lam, Vh = la.svd(Ls.T @ Lx)
    if np.any(lam <= 0):
        raise NumericalFailure(f"Degenerate scaling in PSD block '{name}'")
    Lx_inv = la.solve_triangular(Lx, np.eye(order), lower=True)
    # R = Lx V lam^{-1/2}, W maps X -> R^{-1} X R^{-T}
    R_inv = np.sqrt(lam)[:, None] * (Vh @ Lx_inv)
    return skron(R_inv), lam

def _soc_max_step(lam, d):
    a = d[0] ** 2 - d[1:] @ d[1:]
    b = lam[0] * d[0] - lam[1:] @ d[1:]
    c = lam[0] ** 2 - lam[1:] @ lam[1:]
    roots = []
    if abs(a) <= 1e-14 * max(1.0, abs(b), abs(c)):
        if b < 0:
            roots.append(-c / (2.0 * b))
    else:
        disc = b * b - a * c
        if disc >= 0:
            q = -(b + np.copysign(np.sqrt(disc), b))
            if q != 0:
                roots.extend([q / a, c / q])
            else:
                roots.append(0.0)
    pos = [r for r in roots if r > 0]
    return min(pos) if pos else np.inf

def cone_violation(block, v, dual=False):
    """ Distance-like violation of v in the block (0 if inside). Free blocks have K* = {0}. """
    kind = block.kind
    if kind == ConeKind.FREE:
        return float(np.max(np.abs(v))) if dual and len(v) else 0.0
    if kind == ConeKind.NONNEG:
        return float(max(0.0, -v.min()))
    if kind == ConeKind.SOC:
        return float(max(0.0, np.linalg.norm(v[1:]) - v[0]))
    return float(max(0.0, -la.eigvalsh(smat(v, block.size))[0]))


###### Presolve ######

@dataclass
class _Reduced:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    blocks: tuple
    offset: float
    keep_rows: np.ndarray
    keep_cols: np.ndarray
    fixed: list
    info: dict
    certificate: np.ndarray = None

def _presolve(prog, enabled=True):
    m, n = prog.A.shape
    info = {'zero_rows': [], 'duplicate_rows': [], 'fixed_columns': [], 'dependent_rows': []}
    keep_rows = np.ones(m, dtype=bool)
    keep_cols = np.ones(n, dtype=bool)
    b = prog.b.copy()
    offset = prog.offset
    fixed = []

    if not enabled:
        return _Reduced(prog.c.copy(), prog.A, b, prog.blocks, offset, np.arange(m), np.arange(n), fixed, info)

    A = prog.A.tocsr()
    tol = 1e-12 * max(1.0, np.abs(b).max() if m else 1.0)
    free_col = np.zeros(n, dtype=bool)
    for block, sl in zip(prog.blocks, prog.block_slices):
        if block.kind == ConeKind.FREE:
            free_col[sl] = True

    def _certificate(y):
        return _Reduced(prog.c, prog.A, prog.b, prog.blocks, offset, np.arange(m), np.arange(n), fixed, info, certificate=y)

    # Duplicate rows, up to a scale factor
    seen = {}
    for i in range(m):
        start, end = A.indptr[i], A.indptr[i + 1]
        if start == end:
            continue
        cols, vals = A.indices[start:end], A.data[start:end]
        order = np.argsort(cols)
        cols, vals = cols[order], vals[order]
        lead = vals[0]
        key = (tuple(cols.tolist()), tuple((vals / lead).tolist()))
        if key in seen:
            j, lead_j = seen[key]
            if abs(b[i] / lead - b[j] / lead_j) > tol:
                y = np.zeros(m)
                y[i], y[j] = 1.0 / lead, -1.0 / lead_j
                y /= y @ prog.b
                return _certificate(y)
            keep_rows[i] = False
            info['duplicate_rows'].append(i)
        else:
            seen[key] = (i, lead)

    # Free variables fixed by singleton rows, repeated until no new singleton appears
    csc = A.tocsc()
    changed = True
    while changed:
        changed = False
        for i in np.flatnonzero(keep_rows):
            start, end = A.indptr[i], A.indptr[i + 1]
            cols, vals = A.indices[start:end], A.data[start:end]
            live = keep_cols[cols] & (vals != 0)
            cols, vals = cols[live], vals[live]
            if len(cols) == 0:
                if abs(b[i]) > tol:
                    y = np.zeros(m)
                    y[i] = 1.0 / b[i]
                    # Rows still referencing fixed columns need a consistent certificate
                    if fixed:
                        y = _postsolve_dual(csc, np.zeros(n), y, fixed)
                        y /= y @ prog.b
                    return _certificate(y)
                keep_rows[i] = False
                info['zero_rows'].append(int(i))
                continue
            if len(cols) == 1 and free_col[cols[0]]:
                j, a = cols[0], vals[0]
                value = b[i] / a
                col_rows = csc.indices[csc.indptr[j]:csc.indptr[j + 1]]
                col_vals = csc.data[csc.indptr[j]:csc.indptr[j + 1]]
                b[col_rows] -= col_vals * value
                offset += prog.c[j] * value
                keep_cols[j] = False
                keep_rows[i] = False
                fixed.append((int(i), int(j), float(value)))
                info['fixed_columns'].append(int(j))
                changed = True

    rows_idx = np.flatnonzero(keep_rows)
    cols_idx = np.flatnonzero(keep_cols)
    A_red = A[rows_idx][:, cols_idx].tocsr()
    b_red = b[rows_idx]

    # Dependent rows by pivoted QR on A^T
    m_red, n_red = A_red.shape
    if m_red > 1 and m_red * n_red <= 4_000_000:
        Ad = A_red.toarray()
        R, piv = la.qr(Ad.T, mode='r', pivoting=True)
        diag = np.abs(np.diag(R)) if R.size else np.zeros(0)
        rank = int(np.sum(diag > 1e-9 * max(diag.max() if len(diag) else 0.0, 1e-300)))
        if rank < m_red:
            indep = np.sort(piv[:rank])
            dep = np.sort(piv[rank:])
            Ak = Ad[indep]
            for r in dep:
                z, *_ = la.lstsq(Ak.T, Ad[r])
                mismatch = b_red[r] - b_red[indep] @ z
                if abs(mismatch) > 1e-9 * max(1.0, abs(b_red[r])):
                    y_red = np.zeros(m_red)
                    y_red[indep] = -z
                    y_red[r] = 1.0
                    y = np.zeros(m)
                    y[rows_idx] = y_red
                    if fixed:
                        y = _postsolve_dual(csc, np.zeros(n), y, fixed)
                    y /= y @ prog.b
                    return _certificate(y)
            info['dependent_rows'] = [int(rows_idx[r]) for r in dep]
            rows_idx = rows_idx[indep]
            A_red = A_red[indep]
            b_red = b_red[indep]
    elif m_red * n_red > 4_000_000:
        info['dependent_rows'] = 'skipped'

    blocks = []
    for block, sl in zip(prog.blocks, prog.block_slices):
        if block.kind == ConeKind.FREE:
            kept = int(keep_cols[sl].sum())
            if kept:
                blocks.append(ConeBlock(ConeKind.FREE, kept, block.name))
        else:
            blocks.append(block)

    return _Reduced(prog.c[cols_idx], A_red, b_red, tuple(blocks), offset, rows_idx, cols_idx, fixed, info)

def _postsolve_dual(csc, c, y, fixed):
    """ Duals of rows that fixed a free column, so that column's dual equation holds with s_j = 0 """
    y = y.copy()
    for i, j, _ in reversed(fixed):
        col_rows = csc.indices[csc.indptr[j]:csc.indptr[j + 1]]
        col_vals = csc.data[csc.indptr[j]:csc.indptr[j + 1]]
        a_ij = col_vals[col_rows == i].sum()
        others = col_rows != i
        y[i] = (c[j] - col_vals[others] @ y[col_rows[others]]) / a_ij
    return y


###### Solver ######

def solve(prog, opts=None):
    """
    Solve a ConeProgram.

    Args:
        prog (ConeProgram): the program.
        opts (SolverOptions, optional): tolerances and iteration cap.

    Returns:
        ConeSolution: OPTIMAL, PRIMAL_INFEASIBLE / DUAL_INFEASIBLE with a certificate, or MAX_ITER.

    Raises:
        NumericalFailure: the iteration broke down before any iterate came within
            `inaccurate_factor` of the optimality or infeasibility tolerances.
    """
    opts = SolverOptions() if opts is None else opts
    m, n = prog.A.shape
    red = _presolve(prog, opts.presolve)

    if red.certificate is not None:
        vprint(f"Presolve of '{prog.name}' found an inconsistent row set, returning a primal infeasibility certificate", verbose=opts.verbose)
        y = red.certificate
        s = -(prog.A.T @ y)
        return ConeSolution(np.zeros(n), y, s, SolverStatus.PRIMAL_INFEASIBLE, np.inf, np.inf, np.inf, 0, [], red.info)

    if len(red.c) == 0:
        x = np.zeros(n)
        for _, j, value in red.fixed:
            x[j] = value
        y = _postsolve_dual(prog.A.tocsc(), prog.c, np.zeros(m), red.fixed)
        s = prog.c - prog.A.T @ y
        obj = float(prog.c @ x + prog.offset)
        return ConeSolution(x, y, s, SolverStatus.OPTIMAL, obj, obj, 0.0, 0, [], red.info)

    status, xr, yr, sr, it, history, reduced = _hsde(red, opts, prog.name)

    x = np.zeros(n)
    x[red.keep_cols] = xr
    for _, j, value in red.fixed:
        x[j] = value if status in (SolverStatus.OPTIMAL, SolverStatus.MAX_ITER) else 0.0
    y = np.zeros(m)
    y[red.keep_rows] = yr
    csc = prog.A.tocsc()
    c_post = prog.c if status in (SolverStatus.OPTIMAL, SolverStatus.MAX_ITER) else np.zeros(n)
    y = _postsolve_dual(csc, c_post, y, red.fixed)
    s = np.zeros(n)
    s[red.keep_cols] = sr

    if status == SolverStatus.PRIMAL_INFEASIBLE:
        pobj, dobj, gap = np.inf, np.inf, np.inf
    elif status == SolverStatus.DUAL_INFEASIBLE:
        pobj, dobj, gap = -np.inf, -np.inf, np.inf
    else:
        pobj = float(prog.c @ x + prog.offset)
        dobj = float(prog.b @ y + prog.offset)
        gap = (pobj - dobj) / max(1.0, abs(pobj))

    return ConeSolution(x, y, s, status, pobj, dobj, gap, it, history, red.info, reduced)

def _factorize(K, name):
    try:
        return spla.splu(K, permc_spec='MMD_AT_PLUS_A', diag_pivot_thresh=0.0, options={'SymmetricMode': True})
    except RuntimeError:
        pass
    try:
        return spla.splu(K)
    except RuntimeError as e:
        raise NumericalFailure(f"KKT factorization failed for program '{name}' ({e})") from None

def _hsde(red, opts, name):
    A, b, c, blocks = red.A, red.b, red.c, red.blocks
    m, n = A.shape
    slices, start = [], 0
    for block in blocks:
        slices.append(slice(start, start + block.dim))
        start += block.dim
    cone_idx = [(blk, sl) for blk, sl in zip(blocks, slices) if blk.kind != ConeKind.FREE]
    free_mask = np.zeros(n, dtype=bool)
    for blk, sl in zip(blocks, slices):
        if blk.kind == ConeKind.FREE:
            free_mask[sl] = True
    nu = sum(blk.degree for blk in blocks)

    # Row equilibration and scalar scaling of b and c
    row_norm = abs(A).max(axis=1).toarray().ravel() if m else np.zeros(0)
    D = 1.0 / np.where(row_norm > 0, row_norm, 1.0)
    A_s = sp.diags(D) @ A if m else A
    A_s = sp.csr_matrix(A_s)
    b_s = D * b
    sb = np.abs(b_s).max() if m and np.abs(b_s).max() > 0 else 1.0
    sc = np.abs(c).max() if np.abs(c).max() > 0 else 1.0
    b_s = b_s / sb
    c_s = c / sc
    AT = A_s.T.tocsr()
    norm_b, norm_c = np.linalg.norm(b), np.linalg.norm(c)

    x = np.zeros(n)
    s = np.zeros(n)
    for blk, sl in cone_idx:
        x[sl] = _identity(blk)
        s[sl] = _identity(blk)
    y = np.zeros(m)
    tau, kappa = 1.0, 1.0

    reg = opts.reg
    reg_diag = np.concatenate([-reg * np.ones(n), reg * np.ones(m)])
    history = []
    status = SolverStatus.MAX_ITER
    reduced = False
    # Best optimality merit (max residual over its tolerance) and best certificate ratio seen so far
    best_merit, best_iterate = np.inf, None
    best_ratio, best_certificate = np.inf, None
    stall = 0

    def settle(reason):
        """ Fall back on the best iterate or certificate once the iteration cannot continue """
        if best_merit <= opts.inaccurate_factor:
            return (SolverStatus.OPTIMAL, *best_iterate)
        if best_ratio <= opts.infeas_tol * opts.inaccurate_factor:
            return best_certificate
        raise NumericalFailure(reason)

    if opts.verbose:
        vprint(f"### Interior-point solve of '{name}': {n} variables, {m} rows, degree {nu} ###")
        vprint(f"{'Iter':>4} {'pobj':>13} {'dobj':>13} {'pres':>9} {'dres':>9} {'gap':>9} {'step':>6}")

    it = 0
    step = 0.0
    for it in range(opts.max_iter + 1):
        rp = b_s * tau - A_s @ x
        rd = c_s * tau - AT @ y - s
        rg = c_s @ x - b_s @ y + kappa
        mu = (x[~free_mask] @ s[~free_mask] + tau * kappa) / (nu + 1)

        # Residuals in the original units
        x_o = sb * x / tau
        y_o = sc * D * y / tau
        s_o = sc * s / tau
        pres = np.linalg.norm(A @ x_o - b) / max(1.0, norm_b)
        dres = np.linalg.norm(A.T @ y_o + s_o - c) / max(1.0, norm_c)
        pobj = c @ x_o
        dobj = b @ y_o
        gap = abs(pobj - dobj) / max(1.0, abs(pobj))
        margin = (c_s @ x - b_s @ y) / tau - (x @ rd - y @ rp) / tau ** 2

        history.append({'iter': it, 'pobj': float(pobj + red.offset), 'dobj': float(dobj + red.offset),
                        'pres': float(pres), 'dres': float(dres), 'gap': float(gap), 'mu': float(mu),
                        'tau': float(tau), 'kappa': float(kappa), 'step': float(step),
                        'weak_duality_margin': float(margin)})
        if opts.debug and margin < -1e-9 * max(1.0, abs(c_s @ x / tau)):
            raise NumericalFailure(f"Weak duality violated at iteration {it} of '{name}' (margin {margin:.3e})")
        vprint(f"{it:4d} {pobj + red.offset:13.6e} {dobj + red.offset:13.6e} {pres:9.2e} {dres:9.2e} {gap:9.2e} {step:6.3f}",
               verbose=opts.verbose)

        if pres <= opts.feas_tol and dres <= opts.feas_tol and gap <= opts.gap_tol:
            status = SolverStatus.OPTIMAL
            x, y, s = x_o, y_o, s_o
            break

        merit = max(pres / opts.feas_tol, dres / opts.feas_tol, gap / opts.gap_tol)
        stall = 0 if merit < 0.9 * best_merit else stall + 1
        if merit < best_merit:
            best_merit, best_iterate = merit, (x_o, y_o, s_o)

        bty = b_s @ y
        if bty > 0:
            pinf = np.linalg.norm(AT @ y + s) / bty
            scale = sb * bty
            if pinf < best_ratio:
                best_ratio = pinf
                best_certificate = (SolverStatus.PRIMAL_INFEASIBLE, np.zeros(n), D * y / scale, s / scale)
            if pinf <= opts.infeas_tol:
                status, x, y, s = best_certificate
                break
        ctx = c_s @ x
        if ctx < 0:
            dinf = np.linalg.norm(A_s @ x) / (-ctx)
            scale = -sc * ctx
            if dinf < best_ratio:
                best_ratio = dinf
                best_certificate = (SolverStatus.DUAL_INFEASIBLE, x / scale, np.zeros(m), np.zeros(n))
            if dinf <= opts.infeas_tol:
                status, x, y, s = best_certificate
                break

        if stall >= opts.stall_iters and best_merit <= opts.inaccurate_factor:
            status, x, y, s = settle('')
            reduced = True
            break

        if it == opts.max_iter:
            x, y, s = x_o, y_o, s_o
            break

        try:
            dx, dy, ds, dtau, dkappa, step = _newton_step(A_s, AT, b_s, c_s, blocks, slices, cone_idx, opts,
                                                         x, y, s, tau, kappa, rp, rd, rg, mu, reg_diag, it, name)
        except NumericalFailure as e:
            status, x, y, s = settle(str(e))
            reduced = True
            break
        if step <= 1e-12:
            status, x, y, s = settle(f"Interior-point step collapsed at iteration {it} of '{name}'")
            reduced = True
            break

        x = x + step * dx
        y = y + step * dy
        s = s + step * ds
        tau = tau + step * dtau
        kappa = kappa + step * dkappa

    if status == SolverStatus.MAX_ITER:
        try:
            status, x, y, s = settle('')
            reduced = True
        except NumericalFailure:
            pass
    if status == SolverStatus.MAX_ITER:
        vprint(f"Interior-point solve of '{name}' hit the iteration cap ({opts.max_iter})", verbose=opts.verbose)
    elif reduced:
        vprint(f"Interior-point solve of '{name}' stalled at iteration {it}, returning the best {status.value} "
               f"iterate at reduced accuracy", verbose=opts.verbose)
    return status, x, y, s, it, history, reduced

def _strictly_inside(block, v):
    kind = block.kind
    if kind == ConeKind.NONNEG:
        return bool(np.all(v > 0))
    if kind == ConeKind.SOC:
        return bool(v[0] > 0 and v[0] ** 2 - v[1:] @ v[1:] > 0)
    try:
        la.cholesky(smat(v, block.size), lower=True)
    except la.LinAlgError:
        return False
    return True

def _newton_step(A_s, AT, b_s, c_s, blocks, slices, cone_idx, opts, x, y, s, tau, kappa, rp, rd, rg, mu, reg_diag, it, name):
    """
    Mehrotra predictor-corrector direction of the homogeneous embedding and its step length.
    The step is halved until both iterates stay strictly inside their cones (0.0 if that never happens).
    """
    m, n = A_s.shape

    # Scaling and KKT factorization
    scalings = [(sl, _Scaling(blk, x[sl], s[sl])) for blk, sl in cone_idx]
    by_start = {sl.start: sc_k for sl, sc_k in scalings}
    H = sp.block_diag([by_start[sl.start].hessian() if sl.start in by_start else sp.csr_matrix((blk.dim, blk.dim))
                       for blk, sl in zip(blocks, slices)], format='csr')
    K0 = sp.bmat([[-H, AT], [A_s, None]], format='csc') if m else sp.csc_matrix(-H)
    K = (K0 + sp.diags(reg_diag)).tocsc()
    lu = _factorize(K, name)

    def kkt_solve(rhs):
        z = lu.solve(rhs)
        for _ in range(opts.refine_steps):
            r = rhs - K0 @ z
            if np.linalg.norm(r, np.inf) <= 1e-14 * max(1.0, np.linalg.norm(rhs, np.inf)):
                break
            z = z + lu.solve(r)
        if not np.all(np.isfinite(z)):
            raise NumericalFailure(f"KKT solve produced non-finite values at iteration {it} of '{name}'")
        return z

    z2 = kkt_solve(np.concatenate([c_s, b_s]))
    p2, q2 = z2[:n], z2[n:]
    denom = c_s @ p2 - b_s @ q2 - kappa / tau

    def direction(eta, rc_blocks, r_tau):
        u = np.zeros(n)
        WTu = np.zeros(n)
        for (sl, sc_k), rc in zip(scalings, rc_blocks):
            u[sl] = sc_k.lam_div(rc)
            WTu[sl] = sc_k.apply_T(u[sl])
        z1 = kkt_solve(np.concatenate([eta * rd - WTu, eta * rp]))
        p1, q1 = z1[:n], z1[n:]
        dtau = (-eta * rg - r_tau / tau - c_s @ p1 + b_s @ q1) / denom
        dx = p1 + dtau * p2
        dy = q1 + dtau * q2
        dkappa = (r_tau - kappa * dtau) / tau
        Wdx = np.zeros(n)
        ds = np.zeros(n)
        for sl, sc_k in scalings:
            Wdx[sl] = sc_k.apply(dx[sl])
            ds[sl] = sc_k.apply_T(u[sl] - Wdx[sl])
        return dx, dy, ds, dtau, dkappa, Wdx, u - Wdx

    def max_step(Wdx, Wds, dtau, dkappa):
        alpha = np.inf
        for sl, sc_k in scalings:
            alpha = min(alpha, sc_k.max_step(Wdx[sl]), sc_k.max_step(Wds[sl]))
        if dtau < 0:
            alpha = min(alpha, -tau / dtau)
        if dkappa < 0:
            alpha = min(alpha, -kappa / dkappa)
        return alpha

    # Predictor
    rc_aff = [-sc_k.lam_sq() for _, sc_k in scalings]
    dx_a, dy_a, ds_a, dtau_a, dkappa_a, Wdx_a, Wds_a = direction(1.0, rc_aff, -tau * kappa)
    alpha_a = min(1.0, max_step(Wdx_a, Wds_a, dtau_a, dkappa_a))
    sigma = (1.0 - alpha_a) ** 3

    # Corrector
    rc_cor = []
    for sl, sc_k in scalings:
        blk = sc_k.block
        rc_cor.append(sigma * mu * _identity(blk) - sc_k.lam_sq() - _jordan(blk, Wdx_a[sl], Wds_a[sl]))
    r_tau = sigma * mu - tau * kappa - dtau_a * dkappa_a
    dx, dy, ds, dtau, dkappa, Wdx, Wds = direction(1.0 - sigma, rc_cor, r_tau)
    step = min(1.0, opts.step_fraction * max_step(Wdx, Wds, dtau, dkappa))

    # Back off while rounding puts the candidate on or outside a cone boundary
    for _ in range(opts.backoff_steps):
        if not step > 1e-12:
            break
        x_new, s_new = x + step * dx, s + step * ds
        if tau + step * dtau > 0 and kappa + step * dkappa > 0 and all(
                _strictly_inside(blk, x_new[sl]) and _strictly_inside(blk, s_new[sl]) for blk, sl in cone_idx):
            return dx, dy, ds, dtau, dkappa, step
        step *= 0.5
    return dx, dy, ds, dtau, dkappa, 0.0


###### Independent residual evaluation ######

def residuals(prog, sol, relative=True):
    """
    Recompute (primal feasibility, dual feasibility, signed gap) of a solution from scratch.

    primal = max(||A x - b||, cone violation of x), dual = max(||A^T y + s - c||, cone violation of s),
    gap = (c^T x - b^T y) / max(1, |c^T x + offset|). With relative=True the norms are divided
    by max(1, ||b||) and max(1, ||c||) as in the solver's stopping test.
    """
    x, y, s = sol.x, sol.y, sol.s
    if len(x) != prog.n_var or len(y) != prog.n_row or len(s) != prog.n_var:
        raise DimensionMismatch(f"Solution dimensions ({len(x)}, {len(y)}, {len(s)}) do not match program '{prog.name}' ({prog.n_var}, {prog.n_row})")
    p_lin = np.linalg.norm(prog.A @ x - prog.b)
    d_lin = np.linalg.norm(prog.A.T @ y + s - prog.c)
    if relative:
        p_lin /= max(1.0, np.linalg.norm(prog.b))
        d_lin /= max(1.0, np.linalg.norm(prog.c))
    p_cone = max((cone_violation(blk, x[sl]) for blk, sl in zip(prog.blocks, prog.block_slices)), default=0.0)
    d_cone = max((cone_violation(blk, s[sl], dual=True) for blk, sl in zip(prog.blocks, prog.block_slices)), default=0.0)
    pobj = prog.c @ x + prog.offset
    gap = (prog.c @ x - prog.b @ y) / max(1.0, abs(pobj))
    return float(max(p_lin, p_cone)), float(max(d_lin, d_cone)), float(gap)

def certificate_residual(prog, sol):
    """ For a PRIMAL_INFEASIBLE solution: (b^T y, dual-cone violation of -A^T y) """
    z = -(prog.A.T @ sol.y)
    viol = max((cone_violation(blk, z[sl], dual=True) for blk, sl in zip(prog.blocks, prog.block_slices)), default=0.0)
    return float(prog.b @ sol.y), float(viol)

def blocking_families(prog, sol):
    """
    Share of b^T y = 1 carried by each row family of a PRIMAL_INFEASIBLE certificate,
    largest first. The leading family is the constraint class that blocks the program.
    """
    if sol.status != SolverStatus.PRIMAL_INFEASIBLE or not prog.row_families:
        return {}
    weights = {}
    for fam, contrib in zip(prog.row_families, prog.b * sol.y):
        weights[fam] = weights.get(fam, 0.0) + float(contrib)
    return dict(sorted(weights.items(), key=lambda kv: -kv[1]))


###### Sparse text dump ######

_DUMP_HEADER = '# swcopf cone program v1'

def _quote(name):
    return quote(name, safe=':[](),=').replace('-', '%2D') or '-'

def _unquote(token):
    return '' if token == '-' else unquote(token)

def dump_program(prog, file_path):
    """
    Write a program as text:

        # swcopf cone program v1
        name <name>
        dims <n_var> <n_row>
        offset <value>
        cones <count>
        <kind> <size> <name>          one line per block
        c <nnz>
        <col> <value>
        b <nnz>
        <row> <value> <family>
        A <nnz>
        <row> <col> <value>

    Indices are 0-based and values use 17 significant digits.
    Names and families are percent-encoded single tokens, '-' stands for an empty one.
    """
    coo = prog.A.tocoo()
    with open(file_path, 'w', encoding='utf-8') as f:
        f.write(_DUMP_HEADER + '\n')
        f.write(f"name {_quote(prog.name)}\n")
        f.write(f"dims {prog.n_var} {prog.n_row}\n")
        f.write(f"offset {prog.offset:.17g}\n")
        f.write(f"cones {len(prog.blocks)}\n")
        for block in prog.blocks:
            f.write(f"{block.kind.value} {block.size} {_quote(block.name)}\n")
        nz = np.flatnonzero(prog.c)
        f.write(f"c {len(nz)}\n")
        for j in nz:
            f.write(f"{j} {prog.c[j]:.17g}\n")
        families = prog.row_families or ('',) * prog.n_row
        f.write(f"b {prog.n_row}\n")
        for i in range(prog.n_row):
            f.write(f"{i} {prog.b[i]:.17g} {_quote(families[i])}\n")
        f.write(f"A {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{i} {j} {v:.17g}\n")
    vprint(f"Cone program '{prog.name}' dumped to {file_path}")

def read_program(file_path):
    with open(file_path, 'r', encoding='utf-8') as f:
        lines = [ln.rstrip('\n') for ln in f]
    if not lines or lines[0] != _DUMP_HEADER:
        raise ValueError(f"'{file_path}' is not a cone program dump (missing '{_DUMP_HEADER}' header)")
    pos = 1

    def take(tag):
        nonlocal pos
        parts = lines[pos].split()
        if parts[0] != tag:
            raise ValueError(f"'{file_path}' line {pos + 1}: expected '{tag}', got '{parts[0]}'")
        pos += 1
        return parts[1:]

    name = take('name')[0]
    n, m = (int(v) for v in take('dims'))
    offset = float(take('offset')[0])
    blocks = []
    for _ in range(int(take('cones')[0])):
        kind, size, bname = lines[pos].split()
        blocks.append(ConeBlock(ConeKind(kind), int(size), _unquote(bname)))
        pos += 1
    c = np.zeros(n)
    for _ in range(int(take('c')[0])):
        j, v = lines[pos].split()
        c[int(j)] = float(v)
        pos += 1
    b = np.zeros(m)
    families = [''] * m
    for _ in range(int(take('b')[0])):
        i, v, fam = lines[pos].split()
        b[int(i)] = float(v)
        families[int(i)] = _unquote(fam)
        pos += 1
    nnz = int(take('A')[0])
    trip = np.array([lines[pos + k].split() for k in range(nnz)], dtype=float).reshape(nnz, 3)
    A = sp.coo_matrix((trip[:, 2], (trip[:, 0].astype(int), trip[:, 1].astype(int))), shape=(m, n)).tocsr()
    return ConeProgram(c, A, b, tuple(blocks), tuple(families), offset, _unquote(name))
