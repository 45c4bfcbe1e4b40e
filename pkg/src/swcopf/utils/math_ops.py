import hashlib
import json
from functools import lru_cache

import numba
import numpy as np
import scipy.sparse as sp

SQRT2 = np.sqrt(2.0)

# Symmetric matrices are stored as svec: lower triangle, column by column,
# off-diagonal entries scaled by sqrt(2) so that <X, Y> = svec(X) @ svec(Y).

@lru_cache(maxsize=64)
def svec_indices(order):
    """ Row/col indices of the lower triangle in svec order """
    rows, cols = [], []
    for j in range(order):
        for i in range(j, order):
            rows.append(i)
            cols.append(j)
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)

def svec_dim(order):
    return order * (order + 1) // 2

def svec_index(order, i, j):
    """ Position of entry (i, j) (either triangle) inside svec of a matrix with the given order """
    if i < j:
        i, j = j, i
    # Columns 0..j-1 hold order, order-1, ..., order-j+1 entries
    return j * order - j * (j - 1) // 2 + (i - j)

def svec(X):
    order = X.shape[0]
    rows, cols = svec_indices(order)
    scale = np.where(rows == cols, 1.0, SQRT2)
    return X[rows, cols] * scale

def smat(v, order=None):
    if order is None:
        order = int(round((np.sqrt(8 * len(v) + 1) - 1) / 2))
    rows, cols = svec_indices(order)
    scale = np.where(rows == cols, 1.0, 1.0 / SQRT2)
    X = np.zeros((order, order), dtype=np.result_type(v, float))
    X[rows, cols] = v * scale
    X[cols, rows] = v * scale
    return X

@lru_cache(maxsize=64)
def svec_projection(order):
    """
    Sparse Q with svec(X) = Q @ vec(X) for symmetric X, vec in column-major order.
    Rows of Q are orthonormal, so vec(X) = Q.T @ svec(X).
    """
    rows, cols = svec_indices(order)
    data, r_idx, c_idx = [], [], []
    for k, (i, j) in enumerate(zip(rows, cols)):
        if i == j:
            r_idx.append(k)
            c_idx.append(i + j * order)
            data.append(1.0)
        else:
            r_idx.extend([k, k])
            c_idx.extend([i + j * order, j + i * order])
            data.extend([1.0 / SQRT2, 1.0 / SQRT2])
    return sp.csr_matrix((data, (r_idx, c_idx)), shape=(svec_dim(order), order * order))

def skron(G, method='numba'):
    """
    Matrix of the map X -> G X G^T in svec coordinates.

    Args:
        G (ndarray): Square real matrix.
        method (str): 'numba' fills the entries directly with the JIT kernel,
            'projection' forms Q kron(G, G) Q^T, which needs order^4 memory.
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    if method == 'numba':
        rows, cols = svec_indices(G.shape[0])
        return _skron_numba(G, rows, cols)
    if method == 'projection':
        Q = svec_projection(G.shape[0])
        # Only sparse @ dense products occur
        return np.asarray((Q @ (Q @ np.kron(G, G)).T).T)
    raise ValueError(f"skron method must be 'numba' or 'projection', got '{method}'")

@numba.njit(cache=True)
def _skron_numba(G, rows, cols):
    """
    Numba JIT-compiled entries of skron(G).

    Entry (a, b) with a ~ (i, j) and b ~ (k, l) is
    s_a * t_b * (G_ik G_jl + G_il G_jk), with s = sqrt(2) off the diagonal,
    t = 1/sqrt(2) off the diagonal and t = 1/2 on it.
    """
    d = len(rows)
    out = np.empty((d, d))
    sqrt2 = np.sqrt(2.0)
    for a in range(d):
        i, j = rows[a], cols[a]
        s = 1.0 if i == j else sqrt2
        for b in range(d):
            k, l = rows[b], cols[b]
            t = 0.5 if k == l else 1.0 / sqrt2
            out[a, b] = s * t * (G[i, k] * G[j, l] + G[i, l] * G[j, k])
    return out

def hermitian_to_real(H):
    """ [[A, -B], [B, A]] for H = A + iB """
    A = H.real
    B = H.imag
    return np.block([[A, -B], [B, A]])

def real_to_hermitian(X):
    """ Inverse of `hermitian_to_real`, averaging the duplicated blocks """
    n = X.shape[0] // 2
    A = 0.5 * (X[:n, :n] + X[n:, n:])
    B = 0.5 * (X[n:, :n] - X[:n, n:])
    H = A + 1j * B
    return 0.5 * (H + H.conj().T)

def stable_hash(obj):
    """ sha256 of the canonical JSON form of obj """
    payload = json.dumps(obj, sort_keys=True, separators=(',', ':'), default=_json_default)
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()

def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")
