"""Compiled per-location loops for neighbor grouping, frame estimation and pixel binning."""

from __future__ import annotations

import numpy as np
from numba import njit

# frame flags; anything but OK takes its normal from the mean input normal
FRAME_OK = 0
FRAME_DEGENERATE = 1  # covariance rank below 2
FRAME_FEW = 2  # fewer than 3 neighbors
FRAME_EMPTY = 3


@njit(cache=True)
def group_pairs(qi, si, n_queries):
    """Counting sort of (query, source) pairs into CSR form, sources ascending per query."""
    counts = np.zeros(n_queries + 1, dtype=np.int64)
    for k in range(len(qi)):
        counts[qi[k] + 1] += 1
    indptr = np.cumsum(counts)
    fill = indptr[:-1].copy()
    cols = np.empty(len(si), dtype=np.int64)
    for k in range(len(qi)):
        q = qi[k]
        cols[fill[q]] = si[k]
        fill[q] += 1
    for q in range(n_queries):
        a, b = indptr[q], indptr[q + 1]
        if b - a > 1:
            cols[a:b].sort()
    return indptr, cols


@njit(cache=True)
def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


@njit(cache=True)
def _frame(q, nbrs, src_pos, src_nrm, rank_tol, out_n, out_u, out_v, out_na):
    m = len(nbrs)
    mean = np.zeros(3)
    na = np.zeros(3)
    for j in nbrs:
        for a in range(3):
            mean[a] += src_pos[j, a] - q[a]
            na[a] += src_nrm[j, a]
    if m > 0:
        mean /= m
        na /= m
    cov = np.zeros((3, 3))
    for j in nbrs:
        for a in range(3):
            da = src_pos[j, a] - q[a] - mean[a]
            for b in range(a, 3):
                cov[a, b] += da * (src_pos[j, b] - q[b] - mean[b])
    for a in range(3):
        for b in range(a + 1, 3):
            cov[b, a] = cov[a, b]
    if m > 0:
        cov /= m
    evals, evecs = np.linalg.eigh(cov)

    flag = FRAME_OK
    if evals[1] <= rank_tol * max(evals[2], 1e-300):
        flag = FRAME_DEGENERATE
    if m < 3:
        flag = FRAME_FEW
    if m == 0:
        flag = FRAME_EMPTY

    k = evecs[:, 0].copy()
    dot = k[0] * na[0] + k[1] * na[1] + k[2] * na[2]
    dom = 0
    for a in range(1, 3):
        if abs(k[a]) > abs(k[dom]):
            dom = a
    if dot < 0 or (dot == 0 and k[dom] < 0):
        k = -k
    na_len = np.sqrt(na[0] ** 2 + na[1] ** 2 + na[2] ** 2)
    n = k
    if flag != FRAME_OK and na_len > 0:
        n = na / na_len
    if flag == FRAME_EMPTY:
        n = np.array([0.0, 0.0, 1.0])

    major = evecs[:, 2]
    mn = major[0] * n[0] + major[1] * n[1] + major[2] * n[2]
    u = major - mn * n
    u_len = np.sqrt(u[0] ** 2 + u[1] ** 2 + u[2] ** 2)
    if u_len < 1e-8 or flag != FRAME_OK:
        e = np.zeros(3)
        small = 0
        for a in range(1, 3):
            if abs(n[a]) < abs(n[small]):
                small = a
        e[small] = 1.0
        u = _cross(n, e)
        u /= np.sqrt(u[0] ** 2 + u[1] ** 2 + u[2] ** 2)
    else:
        u = u / u_len
    # sign of u from the third moment of the neighbor projections
    skew = 0.0
    for j in nbrs:
        t = (src_pos[j, 0] - q[0]) * u[0] + (src_pos[j, 1] - q[1]) * u[1] + (src_pos[j, 2] - q[2]) * u[2]
        skew += t * t * t
    if skew < 0:
        u = -u
    v = _cross(n, u)
    out_n[:] = n
    out_u[:] = u
    out_v[:] = v
    out_na[:] = na
    return flag


@njit(cache=True)
def _bin(q, nbrs, src_pos, u, v, delta, extent, cap, row0, rows_out, cols_out, pos):
    """Append (row, source) entries for one location; rows and sources ascending.

    With ``cap > 0`` each pixel keeps the ``cap`` projections nearest its center,
    earlier sources winning exact ties.
    """
    m = len(nbrs)
    if m == 0:
        return pos
    P = extent * extent
    half = extent / 2.0
    width = m if cap <= 0 else min(cap, m)
    best_d = np.full((P, width), np.inf)
    best_j = np.full((P, width), -1, dtype=np.int64)
    fill = np.zeros(P, dtype=np.int64)
    for t in range(m):
        j = nbrs[t]
        dx = src_pos[j, 0] - q[0]
        dy = src_pos[j, 1] - q[1]
        dz = src_pos[j, 2] - q[2]
        x = dx * u[0] + dy * u[1] + dz * u[2]
        y = dx * v[0] + dy * v[1] + dz * v[2]
        ix = min(max(int(np.floor(x / delta + half)), 0), extent - 1)
        iy = min(max(int(np.floor(y / delta + half)), 0), extent - 1)
        p = iy * extent + ix
        cx = (ix - (extent - 1) / 2.0) * delta
        cy = (iy - (extent - 1) / 2.0) * delta
        d2 = (x - cx) ** 2 + (y - cy) ** 2
        k = fill[p]
        if k < width:
            fill[p] = k + 1
        elif d2 < best_d[p, width - 1]:
            k = width - 1
        else:
            continue
        # insertion keeps (distance, arrival) order
        while k > 0 and d2 < best_d[p, k - 1]:
            best_d[p, k] = best_d[p, k - 1]
            best_j[p, k] = best_j[p, k - 1]
            k -= 1
        best_d[p, k] = d2
        best_j[p, k] = j
    for p in range(P):
        k = fill[p]
        if k == 0:
            continue
        sel = np.sort(best_j[p, :k])
        for r in range(k):
            rows_out[pos] = row0 + p
            cols_out[pos] = sel[r]
            pos += 1
    return pos


@njit(cache=True)
def tangent_level(queries, indptr, cols, src_pos, src_nrm, radius, extent, cap, rank_tol):
    """Frames plus binned gather entries for every query."""
    L = len(queries)
    P = extent * extent
    normals = np.empty((L, 3))
    us = np.empty((L, 3))
    vs = np.empty((L, 3))
    nas = np.empty((L, 3))
    flags = np.empty(L, dtype=np.int8)
    rows_out = np.empty(len(cols), dtype=np.int64)
    cols_out = np.empty(len(cols), dtype=np.int64)
    delta = 2.0 * radius / extent
    pos = 0
    for i in range(L):
        nbrs = cols[indptr[i]:indptr[i + 1]]
        flags[i] = _frame(queries[i], nbrs, src_pos, src_nrm, rank_tol,
                          normals[i], us[i], vs[i], nas[i])
        pos = _bin(queries[i], nbrs, src_pos, us[i], vs[i], delta, extent, cap, i * P,
                   rows_out, cols_out, pos)
    return normals, us, vs, flags, nas, rows_out[:pos], cols_out[:pos]


@njit(cache=True)
def bin_with_frames(queries, indptr, cols, src_pos, us, vs, radius, extent, cap):
    L = len(queries)
    P = extent * extent
    rows_out = np.empty(len(cols), dtype=np.int64)
    cols_out = np.empty(len(cols), dtype=np.int64)
    delta = 2.0 * radius / extent
    pos = 0
    for i in range(L):
        pos = _bin(queries[i], cols[indptr[i]:indptr[i + 1]], src_pos, us[i], vs[i], delta, extent,
                   cap, i * P, rows_out, cols_out, pos)
    return rows_out[:pos], cols_out[:pos]


@njit(cache=True)
def grid_radius_csr(queries, src_pos, order, cell_keys, cell_start, lo, h, dims, r):
    """Neighbors with |p - q|^2 <= r^2 via a uniform grid of cell size ``h >= r``.

    ``order`` lists sources sorted by cell key (ascending index inside a cell),
    ``cell_keys``/``cell_start`` delimit the occupied cells in that order. Keys
    are z-fastest, so each (x, y) column of the 3x3x3 stencil is one contiguous run.
    Queries are visited in cell order for locality; rows come back in input order.
    """
    L = len(queries)
    r2 = r * r
    sorted_pos = np.empty((len(order), 3))
    for t in range(len(order)):
        sorted_pos[t] = src_pos[order[t]]
    qcell = np.empty((L, 3), dtype=np.int64)
    qkey = np.empty(L, dtype=np.int64)
    for i in range(L):
        for a in range(3):
            # clamp before the integer cast; one cell outside still sees the border cells
            f = min(max(np.floor((queries[i, a] - lo[a]) / h), -2.0), float(dims[a] + 1))
            qcell[i, a] = int(f)
        qkey[i] = (qcell[i, 0] * dims[1] + qcell[i, 1]) * dims[2] + qcell[i, 2]
    visit = np.argsort(qkey, kind="mergesort")

    starts = np.empty(L, dtype=np.int64)
    counts = np.empty(L, dtype=np.int64)
    cap = max(16, 8 * L)
    buf = np.empty(cap, dtype=np.int64)
    pos = 0
    for k in range(L):
        i = visit[k]
        qx, qy, qz = queries[i, 0], queries[i, 1], queries[i, 2]
        c0, c1, c2 = qcell[i, 0], qcell[i, 1], qcell[i, 2]
        row_start = pos
        z0, z1 = max(c2 - 1, 0), min(c2 + 2, dims[2])
        if z0 < z1:
            for x in range(max(c0 - 1, 0), min(c0 + 2, dims[0])):
                for y in range(max(c1 - 1, 0), min(c1 + 2, dims[1])):
                    base = (x * dims[1] + y) * dims[2]
                    a = np.searchsorted(cell_keys, base + z0)
                    b = np.searchsorted(cell_keys, base + z1)
                    for t in range(cell_start[a], cell_start[b]):
                        d0 = sorted_pos[t, 0] - qx
                        d1 = sorted_pos[t, 1] - qy
                        d2 = sorted_pos[t, 2] - qz
                        if d0 * d0 + d1 * d1 + d2 * d2 <= r2:
                            if pos == cap:
                                cap *= 2
                                grown = np.empty(cap, dtype=np.int64)
                                grown[:pos] = buf[:pos]
                                buf = grown
                            buf[pos] = order[t]
                            pos += 1
        if pos - row_start > 1:
            buf[row_start:pos].sort()
        starts[i] = row_start
        counts[i] = pos - row_start

    indptr = np.zeros(L + 1, dtype=np.int64)
    for i in range(L):
        indptr[i + 1] = indptr[i] + counts[i]
    cols = np.empty(pos, dtype=np.int64)
    for i in range(L):
        cols[indptr[i]:indptr[i + 1]] = buf[starts[i]:starts[i] + counts[i]]
    return indptr, cols
