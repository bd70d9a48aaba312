"""Sparse spin operators on the 2^N product basis.

Basis state index b encodes atom j as bit j (1 = excited), so |0...0> is index
0 and the first atom is the least significant bit.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp


@lru_cache(maxsize=64)
def lowering(j: int, n: int) -> sp.csr_matrix:
    """sigma_j = |g><e| acting on atom j of n."""
    dim = 2 ** n
    cols = np.arange(dim)
    cols = cols[(cols >> j) & 1 == 1]
    rows = cols - (1 << j)
    op = sp.csr_matrix((np.ones(len(cols), dtype=complex), (rows, cols)), shape=(dim, dim))
    op.data.setflags(write=False)
    return op


def lowering_ops(n: int) -> list[sp.csr_matrix]:
    return [lowering(j, n) for j in range(n)]


def excitation_number(n: int) -> np.ndarray:
    """Number of excited atoms in each basis state."""
    b = np.arange(2 ** n)
    return np.array([bin(x).count("1") for x in b])


def embed_single_excitation(vector) -> np.ndarray:
    """Lift an N-vector on {|e_j>} into the 2^N product basis."""
    vector = np.asarray(vector, dtype=complex)
    n = len(vector)
    out = np.zeros(2 ** n, dtype=complex)
    out[1 << np.arange(n)] = vector
    return out


def bilinear(matrix, n: int) -> sp.csr_matrix:
    """sum_jk matrix[j, k] sigma_j^+ sigma_k as a sparse 2^N operator.

    sigma_j^+ sigma_k maps |b> (bit k set, bit j clear unless j == k) to
    |b - 2^k + 2^j>, so all entries can be placed in one COO assembly.
    """
    matrix = np.asarray(matrix)
    dim = 2 ** n
    basis = np.arange(dim)
    rows, cols, vals = [], [], []
    for j in range(n):
        for k in range(n):
            c = matrix[j, k]
            if c == 0:
                continue
            mask = (basis >> k) & 1 == 1
            if j != k:
                mask &= (basis >> j) & 1 == 0
            src = basis[mask]
            rows.append(src - (1 << k) + (1 << j))
            cols.append(src)
            vals.append(np.full(src.size, c, dtype=complex))
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=complex)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(dim, dim))
