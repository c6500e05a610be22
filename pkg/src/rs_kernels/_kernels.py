"""Inner loops with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``RS_KERNELS_DISABLE_NUMBA``
is unset (or "0").  ``RS_KERNELS_THREADS`` caps numba's thread pool.  Both
paths compute the same values; tests run them against each other.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

__all__ = [
    "HAVE_NUMBA",
    "USE_NUMBA",
    "backend",
    "cp_gather",
    "cp_dense",
    "scatter_blocks",
    "conv1d_axis",
    "replica_gather",
]


def _flag(name):
    return os.environ.get(name, "").strip().lower() not in ("", "0", "false", "no")


# an outdated system TBB only disables that threading layer; numba falls back
warnings.filterwarnings("ignore", message="The TBB threading layer requires TBB version")

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _flag("RS_KERNELS_DISABLE_NUMBA")

if HAVE_NUMBA and os.environ.get("RS_KERNELS_THREADS"):
    try:
        numba.set_num_threads(max(1, min(int(os.environ["RS_KERNELS_THREADS"]),
                                         numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        pass


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy path

# Both paths and both entry points (gather, dense) form each term as
# ((w_r * U1) * U2) * U3 and add terms in order r = 0, 1, ..., so a
# gathered entry equals the dense entry bit for bit.

def _cp_gather_np(U1, U2, U3, w, idx):
    A, B, C = U1[idx[:, 0]], U2[idx[:, 1]], U3[idx[:, 2]]
    out = np.zeros(len(idx))
    for r in range(len(w)):
        out += ((w[r] * A[:, r]) * B[:, r]) * C[:, r]
    return out


def _cp_dense_np(U1, U2, U3, w):
    out = np.zeros((U1.shape[0], U2.shape[0], U3.shape[0]))
    for r in range(len(w)):
        out += ((w[r] * U1[:, r])[:, None, None] * U2[None, :, r, None]) * U3[None, None, :, r]
    return out


def _scatter_blocks_np(out, block, corners, coeffs):
    n0, n1, n2 = out.shape
    m0, m1, m2 = block.shape
    for (c0, c1, c2), q in zip(corners, coeffs):
        a0, a1, a2 = max(c0, 0), max(c1, 0), max(c2, 0)
        b0, b1, b2 = min(c0 + m0, n0), min(c1 + m1, n1), min(c2 + m2, n2)
        if a0 >= b0 or a1 >= b1 or a2 >= b2:
            continue
        out[a0:b0, a1:b1, a2:b2] += q * block[a0 - c0:b0 - c0, a1 - c1:b1 - c1, a2 - c2:b2 - c2]
    return out


def _conv1d_axis_np(f, kern, axis):
    g = np.moveaxis(f, axis, 0)
    n = g.shape[0]
    half = len(kern) // 2
    out = np.zeros_like(g)
    for j, c in enumerate(kern):
        s = j - half
        if s >= 0:
            out[s:] += c * g[:n - s]
        else:
            out[:n + s] += c * g[-s:]
    return np.moveaxis(out, 0, axis)


def _replica_gather_np(block, corners, coeffs, idx):
    m = np.array(block.shape)
    vals = np.zeros(len(idx))
    for c, q in zip(corners, coeffs):
        rel = idx - c
        inside = np.all((rel >= 0) & (rel < m), axis=1)
        if inside.any():
            r = rel[inside]
            vals[inside] += q * block[r[:, 0], r[:, 1], r[:, 2]]
    return vals


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(parallel=True, cache=True)
    def _cp_gather_nb(U1, U2, U3, w, idx):
        m = idx.shape[0]
        R = w.shape[0]
        out = np.empty(m)
        for p in prange(m):
            i, j, k = idx[p, 0], idx[p, 1], idx[p, 2]
            s = 0.0
            for r in range(R):
                s += w[r] * U1[i, r] * U2[j, r] * U3[k, r]
            out[p] = s
        return out

    @njit(parallel=True, cache=True)
    def _cp_dense_nb(U1, U2, U3, w):
        n1, n2, n3 = U1.shape[0], U2.shape[0], U3.shape[0]
        R = w.shape[0]
        out = np.empty((n1, n2, n3))
        for i in prange(n1):
            for j in range(n2):
                for k in range(n3):
                    s = 0.0
                    for r in range(R):
                        s += w[r] * U1[i, r] * U2[j, r] * U3[k, r]
                    out[i, j, k] = s
        return out

    @njit(cache=True)
    def _scatter_blocks_nb(out, block, corners, coeffs):
        n0, n1, n2 = out.shape
        m0, m1, m2 = block.shape
        for p in range(corners.shape[0]):
            c0, c1, c2 = corners[p, 0], corners[p, 1], corners[p, 2]
            q = coeffs[p]
            for a in range(max(c0, 0), min(c0 + m0, n0)):
                for b in range(max(c1, 0), min(c1 + m1, n1)):
                    for c in range(max(c2, 0), min(c2 + m2, n2)):
                        out[a, b, c] += q * block[a - c0, b - c1, c - c2]
        return out

    @njit(parallel=True, cache=True)
    def _conv_first_axis_nb(g, kern):
        n = g.shape[0]
        rest = g.shape[1]
        half = kern.shape[0] // 2
        out = np.zeros_like(g)
        for col in prange(rest):
            for i in range(n):
                s = 0.0
                for j in range(kern.shape[0]):
                    src = i - (j - half)
                    if 0 <= src < n:
                        s += kern[j] * g[src, col]
                out[i, col] = s
        return out

    @njit(parallel=True, cache=True)
    def _replica_gather_nb(block, corners, coeffs, idx):
        m0, m1, m2 = block.shape
        out = np.zeros(idx.shape[0])
        for p in prange(idx.shape[0]):
            s = 0.0
            for v in range(corners.shape[0]):
                a = idx[p, 0] - corners[v, 0]
                b = idx[p, 1] - corners[v, 1]
                c = idx[p, 2] - corners[v, 2]
                if 0 <= a < m0 and 0 <= b < m1 and 0 <= c < m2:
                    s += coeffs[v] * block[a, b, c]
            out[p] = s
        return out


# ---------------------------------------------------------------- dispatch

def cp_gather(U1, U2, U3, w, idx, use_numba=None):
    """Entries ``sum_r w_r U1[i,r] U2[j,r] U3[k,r]`` at rows of ``idx``."""
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1, 3)
    if (USE_NUMBA if use_numba is None else use_numba):
        return _cp_gather_nb(np.ascontiguousarray(U1, dtype=float), np.ascontiguousarray(U2, dtype=float),
                             np.ascontiguousarray(U3, dtype=float), np.ascontiguousarray(w, dtype=float), idx)
    return _cp_gather_np(U1, U2, U3, w, idx)


def cp_dense(U1, U2, U3, w, use_numba=None):
    """Full array of the canonical tensor, same arithmetic as :func:`cp_gather`."""
    if (USE_NUMBA if use_numba is None else use_numba):
        return _cp_dense_nb(np.ascontiguousarray(U1, dtype=float), np.ascontiguousarray(U2, dtype=float),
                            np.ascontiguousarray(U3, dtype=float), np.ascontiguousarray(w, dtype=float))
    return _cp_dense_np(U1, U2, U3, np.asarray(w, dtype=float))


def scatter_blocks(out, block, corners, coeffs, use_numba=None):
    """Add ``coeffs[p] * block`` into ``out`` with its corner at ``corners[p]``, clipped."""
    corners = np.ascontiguousarray(corners, dtype=np.int64).reshape(-1, 3)
    coeffs = np.ascontiguousarray(coeffs, dtype=float)
    if (USE_NUMBA if use_numba is None else use_numba):
        return _scatter_blocks_nb(out, np.ascontiguousarray(block, dtype=float), corners, coeffs)
    return _scatter_blocks_np(out, block, corners, coeffs)


def conv1d_axis(f, kern, axis, use_numba=None):
    """Zero-padded 'same' convolution of ``f`` with a centred odd-length ``kern`` along ``axis``."""
    kern = np.ascontiguousarray(kern, dtype=float)
    if len(kern) % 2 != 1:
        raise ValueError("convolution kernel must have odd length")
    if (USE_NUMBA if use_numba is None else use_numba):
        g = np.moveaxis(f, axis, 0)
        shape = g.shape
        res = _conv_first_axis_nb(np.ascontiguousarray(g, dtype=float).reshape(shape[0], -1), kern)
        return np.moveaxis(res.reshape(shape), 0, axis)
    return _conv1d_axis_np(f, kern, axis)


def replica_gather(block, corners, coeffs, idx, use_numba=None):
    """Sum of ``coeffs[p] * block[idx - corners[p]]`` over replicas covering each index."""
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1, 3)
    corners = np.ascontiguousarray(corners, dtype=np.int64).reshape(-1, 3)
    coeffs = np.ascontiguousarray(coeffs, dtype=float)
    if (USE_NUMBA if use_numba is None else use_numba):
        return _replica_gather_nb(np.ascontiguousarray(block, dtype=float), corners, coeffs, idx)
    return _replica_gather_np(block, corners, coeffs, idx)
