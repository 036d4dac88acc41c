"""Compiled inner loop of the forward simulator."""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _cell(pos, m, h, L):
    idx = 0
    for j in range(pos.shape[0]):
        p = pos[j] - L * math.floor(pos[j] / L)
        c = int(math.floor(p / h)) % m
        idx = idx * m + c
    return idx


@njit(cache=True)
def apply_events(w, m, d, h, L, u, x, r, selective, z1, p1, z2, p2, start, stop, validate):
    """Apply events start..stop-1 to the flat field ``w``; returns the number of bad cells."""
    bad = 0
    pos = np.empty(d)
    lo = np.empty(d, dtype=np.int64)
    hi = np.empty(d, dtype=np.int64)
    for i in range(start, stop):
        for j in range(d):
            pos[j] = x[i, j] + z1[i, j]
        type0 = p1[i] < w[_cell(pos, m, h, L)]
        if selective[i]:
            for j in range(d):
                pos[j] = x[i, j] + z2[i, j]
            second = p2[i] < w[_cell(pos, m, h, L)]
            type0 = type0 and second
        add = u if type0 else 0.0
        ri = r[i]
        for j in range(d):
            lo[j] = int(math.ceil((x[i, j] - ri) / h - 0.5))
            hi[j] = int(math.floor((x[i, j] + ri) / h - 0.5))
        if d == 1:
            for a in range(lo[0], hi[0] + 1):
                k = a % m
                w[k] = (1 - u) * w[k] + add
                if validate and (w[k] < 0.0 or w[k] > 1.0):
                    bad += 1
        elif d == 2:
            for a in range(lo[0], hi[0] + 1):
                da = (a + 0.5) * h - x[i, 0]
                for b in range(lo[1], hi[1] + 1):
                    db = (b + 0.5) * h - x[i, 1]
                    if 0.0 + da * da + db * db <= ri * ri:
                        k = (a % m) * m + (b % m)
                        w[k] = (1 - u) * w[k] + add
                        if validate and (w[k] < 0.0 or w[k] > 1.0):
                            bad += 1
        else:
            for a in range(lo[0], hi[0] + 1):
                da = (a + 0.5) * h - x[i, 0]
                for b in range(lo[1], hi[1] + 1):
                    db = (b + 0.5) * h - x[i, 1]
                    for c in range(lo[2], hi[2] + 1):
                        dc = (c + 0.5) * h - x[i, 2]
                        if 0.0 + da * da + db * db + dc * dc <= ri * ri:
                            k = ((a % m) * m + (b % m)) * m + (c % m)
                            w[k] = (1 - u) * w[k] + add
                            if validate and (w[k] < 0.0 or w[k] > 1.0):
                                bad += 1
    return bad
