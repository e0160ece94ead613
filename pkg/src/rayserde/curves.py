"""Hilbert and Morton codecs over the 3D cell cube, used as serialization baselines.

Both map (z, y, x) cells of a 2^order cube bijectively onto [0, 2^(3*order)).
The Hilbert codec uses the transpose-based construction (Skilling's
formulation of the Butz/Hamilton algorithm), so consecutive keys land on
face-adjacent cells. All functions accept a single cell or an (N, 3) array.
"""

from __future__ import annotations

import numpy as np

from .errors import BoundsError, ConfigError

MAX_ORDER = 21  # 3 * 21 = 63 key bits


def _check_order(order: int) -> int:
    order = int(order)
    if not (1 <= order <= MAX_ORDER):
        raise ConfigError(f"order must be in [1, {MAX_ORDER}], got {order}")
    return order


def _as_cells(cell, order: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(cell, dtype=np.int64)
    single = arr.ndim == 1
    arr = arr.reshape(-1, 3)
    side = 1 << order
    if arr.size and (arr.min() < 0 or arr.max() >= side):
        raise BoundsError(f"cell coordinate outside the 2^{order} cube")
    return arr.astype(np.uint64), single


def morton_key(cell, order: int):
    """Bit-interleaved Z-order key; z supplies the most significant bit of
    each 3-bit group, then y, then x."""
    order = _check_order(order)
    cells, single = _as_cells(cell, order)
    key = np.zeros(cells.shape[0], np.uint64)
    one = np.uint64(1)
    for b in range(order):
        bb = np.uint64(b)
        key |= ((cells[:, 0] >> bb) & one) << np.uint64(3 * b + 2)
        key |= ((cells[:, 1] >> bb) & one) << np.uint64(3 * b + 1)
        key |= ((cells[:, 2] >> bb) & one) << np.uint64(3 * b)
    return int(key[0]) if single else key


def morton_cell(key, order: int):
    """Inverse of :func:`morton_key`."""
    order = _check_order(order)
    keys = np.atleast_1d(np.asarray(key, dtype=np.uint64))
    single = np.ndim(key) == 0
    if keys.size and int(keys.max()) >= 1 << (3 * order):
        raise BoundsError(f"key outside [0, 2^{3 * order})")
    out = np.zeros((keys.size, 3), np.uint64)
    one = np.uint64(1)
    for b in range(order):
        out[:, 0] |= ((keys >> np.uint64(3 * b + 2)) & one) << np.uint64(b)
        out[:, 1] |= ((keys >> np.uint64(3 * b + 1)) & one) << np.uint64(b)
        out[:, 2] |= ((keys >> np.uint64(3 * b)) & one) << np.uint64(b)
    out = out.astype(np.int64)
    return tuple(int(v) for v in out[0]) if single else out


def _interleave_transpose(X: np.ndarray, order: int) -> np.ndarray:
    key = np.zeros(X.shape[0], np.uint64)
    one = np.uint64(1)
    for b in range(order):
        bb = np.uint64(b)
        key |= ((X[:, 0] >> bb) & one) << np.uint64(3 * b + 2)
        key |= ((X[:, 1] >> bb) & one) << np.uint64(3 * b + 1)
        key |= ((X[:, 2] >> bb) & one) << np.uint64(3 * b)
    return key


def _deinterleave_key(keys: np.ndarray, order: int) -> np.ndarray:
    X = np.zeros((keys.size, 3), np.uint64)
    one = np.uint64(1)
    for b in range(order):
        X[:, 0] |= ((keys >> np.uint64(3 * b + 2)) & one) << np.uint64(b)
        X[:, 1] |= ((keys >> np.uint64(3 * b + 1)) & one) << np.uint64(b)
        X[:, 2] |= ((keys >> np.uint64(3 * b)) & one) << np.uint64(b)
    return X


def hilbert_key(cell, order: int):
    """Hilbert curve index of cells in the 2^order cube.

    Consecutive indices map to face-adjacent cells (Manhattan distance 1).
    """
    order = _check_order(order)
    X, single = _as_cells(cell, order)
    X = X.copy()
    M = np.uint64(1 << (order - 1))
    one = np.uint64(1)

    # Undo excess work (map axes into the transposed Hilbert frame).
    Q = M
    while Q > one:
        P = Q - one
        for i in range(3):
            hi = (X[:, i] & Q) != 0
            X[hi, 0] ^= P
            lo = ~hi
            t = (X[lo, 0] ^ X[lo, i]) & P
            X[lo, 0] ^= t
            X[lo, i] ^= t
        Q >>= one

    # Gray encode.
    X[:, 1] ^= X[:, 0]
    X[:, 2] ^= X[:, 1]
    t = np.zeros(X.shape[0], np.uint64)
    Q = M
    while Q > one:
        sel = (X[:, 2] & Q) != 0
        t[sel] ^= Q - one
        Q >>= one
    X ^= t[:, None]

    key = _interleave_transpose(X, order)
    return int(key[0]) if single else key


def hilbert_cell(key, order: int):
    """Inverse of :func:`hilbert_key`."""
    order = _check_order(order)
    keys = np.atleast_1d(np.asarray(key, dtype=np.uint64))
    single = np.ndim(key) == 0
    if keys.size and int(keys.max()) >= 1 << (3 * order):
        raise BoundsError(f"key outside [0, 2^{3 * order})")
    X = _deinterleave_key(keys, order)
    one = np.uint64(1)
    top = np.uint64(1 << order)

    # Gray decode.
    t = X[:, 2] >> one
    X[:, 2] ^= X[:, 1]
    X[:, 1] ^= X[:, 0]
    X[:, 0] ^= t

    # Redo excess work (transposed frame back to axes).
    Q = np.uint64(2)
    while Q != top:
        P = Q - one
        for i in (2, 1, 0):
            hi = (X[:, i] & Q) != 0
            X[hi, 0] ^= P
            lo = ~hi
            t = (X[lo, 0] ^ X[lo, i]) & P
            X[lo, 0] ^= t
            X[lo, i] ^= t
        Q <<= one

    out = X.astype(np.int64)
    return tuple(int(v) for v in out[0]) if single else out
