"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Every kernel exists twice: a scalar-loop version compiled with ``numba.njit``
and a vectorized numpy version. The public names (:func:`edt_sq`,
:func:`linear_assignment`) are bound to one of them at import time.

Set ``OCPOSE_DISABLE_NUMBA=1`` to force the numpy path. The numpy path is also
used when numba cannot be imported.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _env_disabled() -> bool:
    return os.environ.get("OCPOSE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _env_disabled()
BACKEND = "numba" if USE_NUMBA else "numpy"


def _njit(fn):
    if numba is None:  # pragma: no cover
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# Exact squared Euclidean distance transform
# ---------------------------------------------------------------------------


def _edt_sq_loops(mask):
    h, w = mask.shape
    inf = np.inf
    g = np.empty((h, w), np.float64)
    # pass 1: vertical distance to the nearest foreground pixel in each column
    for c in range(w):
        last = -1
        for r in range(h):
            if mask[r, c]:
                last = r
                g[r, c] = 0.0
            elif last >= 0:
                g[r, c] = r - last
            else:
                g[r, c] = inf
        last = -1
        for r in range(h - 1, -1, -1):
            if mask[r, c]:
                last = r
            elif last >= 0:
                d = last - r
                g[r, c] = min(g[r, c], d)

    # pass 2: lower envelope of parabolas along each row
    out = np.empty((h, w), np.float64)
    f = np.empty(w, np.float64)
    v = np.empty(w, np.int64)
    z = np.empty(w + 1, np.float64)
    for r in range(h):
        for c in range(w):
            f[c] = g[r, c] * g[r, c]
        k = -1
        for q in range(w):
            if f[q] == inf:
                continue
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -inf
                z[1] = inf
                continue
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
            while s <= z[k]:
                k -= 1
                s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = inf
        if k < 0:
            for q in range(w):
                out[r, q] = inf
            continue
        k = 0
        for q in range(w):
            while z[k + 1] < q:
                k += 1
            d = q - v[k]
            out[r, q] = d * d + f[v[k]]
    return out


edt_sq_numba = _njit(_edt_sq_loops)

# keeps the (rows, w, w) broadcast of the numpy fallback bounded
_EDT_CHUNK_ELEMS = 1 << 22


def edt_sq_numpy(mask: np.ndarray) -> np.ndarray:
    """Squared distance transform, vectorized; O(h * w^2) but exact."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if h == 0 or w == 0:
        return np.zeros((h, w), np.float64)
    rows = np.arange(h, dtype=np.float64)[:, None]
    above = np.where(mask, rows, -np.inf)
    above = np.maximum.accumulate(above, axis=0)
    below = np.where(mask, rows, np.inf)
    below = np.minimum.accumulate(below[::-1], axis=0)[::-1]
    g = np.minimum(rows - above, below - rows)
    f = g * g

    cols = np.arange(w, dtype=np.float64)
    dx2 = (cols[:, None] - cols[None, :]) ** 2  # (target, source)
    out = np.empty((h, w), np.float64)
    step = max(1, _EDT_CHUNK_ELEMS // max(1, w * w))
    for r0 in range(0, h, step):
        fc = f[r0 : r0 + step]
        out[r0 : r0 + step] = np.min(dx2[None, :, :] + fc[:, None, :], axis=2)
    return out


# ---------------------------------------------------------------------------
# Square linear assignment (shortest augmenting path with potentials)
# ---------------------------------------------------------------------------


def _lsa_loops(cost):
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, np.int64)
    way = np.zeros(n + 1, np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = inf
            used[j] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.empty(n, np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col


linear_assignment_numba = _njit(_lsa_loops)


def linear_assignment_numpy(cost: np.ndarray) -> np.ndarray:
    """Same augmenting-path algorithm with the column scan vectorized."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, np.int64)
    way = np.zeros(n + 1, np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.empty(n, np.int64)
    row_to_col[p[1:] - 1] = np.arange(n)
    return row_to_col


def edt_sq(mask: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from each pixel center to the nearest foreground pixel.

    Background-only masks yield ``inf`` everywhere.
    """
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if USE_NUMBA:
        return edt_sq_numba(mask)
    return edt_sq_numpy(mask)


def linear_assignment(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching of a square matrix; returns the column of each row."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"expected a square cost matrix, got shape {cost.shape}")
    if cost.shape[0] == 0:
        return np.empty(0, np.int64)
    if USE_NUMBA:
        return linear_assignment_numba(cost)
    return linear_assignment_numpy(cost)
