"""Numba kernels for Hamiltonian application on a constrained basis.

A basis is a sorted list of register bitstrings.  The position of a bitstring
in the basis is found from two lookup tables (low bits ``a`` and high bits
``b`` of the register):

    index(u) = offset[sig[a]] + rank_a[a] * width[sig[a]] + rank_b[b]

Terms are grouped by flip mask ``x``; each group stores the z masks and the
coefficients (including the ``i**k`` factor of the string) of its members.
"""
from __future__ import annotations

import numba
import numpy as np
from numba import njit, prange

# the system TBB may be too old for numba; prefer the OpenMP or workqueue pools
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@njit(cache=True, inline="always")
def popcount(v):
    v = v - ((v >> 1) & 0x5555555555555555)
    v = (v & 0x3333333333333333) + ((v >> 2) & 0x3333333333333333)
    v = (v + (v >> 4)) & 0x0F0F0F0F0F0F0F0F
    return ((v * 0x0101010101010101) & 0xFFFFFFFFFFFFFFFF) >> 56


@njit(cache=True, inline="always")
def _lookup(v, n_a, mask_a, sig_a, rank_a, rank_b, offset, width):
    a = v & mask_a
    b = v >> n_a
    s = sig_a[a]
    return offset[s] + rank_a[a] * width[s] + rank_b[b]


@njit(cache=True, parallel=True)
def matvec(states, n_a, mask_a, sig_a, rank_a, rank_b, offset, width, gx, gstart, tz, tc, psi, out):
    """``out = H psi`` in gather form: ``out[i] = sum_v <u_i|H|v> psi[v]``."""
    ng = gx.shape[0]
    zero = np.zeros(1, dtype=out.dtype)[0]
    for i in prange(states.shape[0]):
        u = states[i]
        acc = zero
        for g in range(ng):
            v = u ^ gx[g]
            c = tc[0] * 0
            for t in range(gstart[g], gstart[g + 1]):
                if popcount(tz[t] & v) & 1:
                    c -= tc[t]
                else:
                    c += tc[t]
            if c != 0:
                acc += c * psi[_lookup(v, n_a, mask_a, sig_a, rank_a, rank_b, offset, width)]
        out[i] = acc
    return out


@njit(cache=True)
def coo(states, n_a, mask_a, sig_a, rank_a, rank_b, offset, width, gx, gstart, tz, tc):
    """Nonzero matrix elements ``(row, col, value)``."""
    n = states.shape[0]
    ng = gx.shape[0]
    rows = np.empty(n * ng, dtype=np.int64)
    cols = np.empty(n * ng, dtype=np.int64)
    vals = np.empty(n * ng, dtype=tc.dtype)
    k = 0
    for i in range(n):
        u = states[i]
        for g in range(ng):
            v = u ^ gx[g]
            c = tc[0] * 0
            for t in range(gstart[g], gstart[g + 1]):
                if popcount(tz[t] & v) & 1:
                    c -= tc[t]
                else:
                    c += tc[t]
            if c != 0:
                rows[k] = i
                cols[k] = _lookup(v, n_a, mask_a, sig_a, rank_a, rank_b, offset, width)
                vals[k] = c
                k += 1
    return rows[:k], cols[:k], vals[:k]


@njit(cache=True, parallel=True)
def diagonal_expectations(states, zmasks, weights):
    """``<Z^m>`` for each mask ``m`` under basis weights ``|psi|^2``."""
    nm = zmasks.shape[0]
    out = np.zeros(nm)
    for j in prange(nm):
        m = zmasks[j]
        s = 0.0
        for i in range(states.shape[0]):
            if popcount(states[i] & m) & 1:
                s -= weights[i]
            else:
                s += weights[i]
        out[j] = s
    return out


def parities(values: np.ndarray, mask: int) -> np.ndarray:
    return (np.bitwise_count(values & np.int64(mask)) & 1).astype(np.int64)
