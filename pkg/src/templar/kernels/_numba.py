"""numba @njit kernel implementations (loop form of the numpy contract)."""

from __future__ import annotations

import numpy as np
from numba import njit

SQUARE, CIRCLE, TRIANGLE = 0, 1, 2


@njit(cache=True)
def _paint(shapes, cx, cy, hw, hh, colors, size):
    canvas = np.zeros((size, size), dtype=np.uint8)
    prov = np.full((size, size), -1, dtype=np.int32)
    half = size / 2.0
    for k in range(shapes.shape[0]):
        for i in range(size):
            y = (i + 0.5) / half - 1.0
            dy = y - cy[k]
            for j in range(size):
                x = (j + 0.5) / half - 1.0
                dx = x - cx[k]
                if shapes[k] == 0:
                    hit = abs(dx) <= hw[k] and abs(dy) <= hh[k]
                elif shapes[k] == 1:
                    hit = (dx / hw[k]) ** 2 + (dy / hh[k]) ** 2 <= 1.0
                else:
                    if dy >= -hh[k] and dy <= hh[k]:
                        halfw = hw[k] * (hh[k] - dy) / (2.0 * hh[k])
                        hit = abs(dx) <= halfw
                    else:
                        hit = False
                if hit:
                    canvas[i, j] = colors[k]
                    prov[i, j] = k
    return canvas, prov


def paint_layout(shapes, cx, cy, hw, hh, colors, size=64):
    return _paint(np.asarray(shapes, dtype=np.int64),
                  np.asarray(cx, dtype=np.float64),
                  np.asarray(cy, dtype=np.float64),
                  np.asarray(hw, dtype=np.float64),
                  np.asarray(hh, dtype=np.float64),
                  np.asarray(colors, dtype=np.uint8), size)


@njit(cache=True)
def _supercover(grid, x0, y0, x1, y1, size):
    inf = np.inf
    xs0 = x0 * size
    ys0 = y0 * size
    xs1 = x1 * size
    ys1 = y1 * size
    c = int(np.floor(xs0))
    if c > size - 1:
        c = size - 1
    r = int(np.floor(ys0))
    if r > size - 1:
        r = size - 1
    c1 = int(np.floor(xs1))
    if c1 > size - 1:
        c1 = size - 1
    r1 = int(np.floor(ys1))
    if r1 > size - 1:
        r1 = size - 1
    grid[r, c] = 1
    dx = xs1 - xs0
    dy = ys1 - ys0
    stepx = 1 if dx > 0 else -1
    stepy = 1 if dy > 0 else -1
    if dx != 0.0:
        tmaxx = ((c + 1 - xs0) / dx) if dx > 0 else ((c - xs0) / dx)
        tdx = abs(1.0 / dx)
    else:
        tmaxx = inf
        tdx = inf
    if dy != 0.0:
        tmaxy = ((r + 1 - ys0) / dy) if dy > 0 else ((r - ys0) / dy)
        tdy = abs(1.0 / dy)
    else:
        tmaxy = inf
        tdy = inf
    guard = 4 * size + 4
    while (c != c1 or r != r1) and guard > 0:
        guard -= 1
        if tmaxx < tmaxy:
            nc = c + stepx
            if 0 <= nc < size:
                c = nc
                tmaxx += tdx
                grid[r, c] = 1
            else:
                tmaxx = inf
        elif tmaxy < tmaxx:
            nr = r + stepy
            if 0 <= nr < size:
                r = nr
                tmaxy += tdy
                grid[r, c] = 1
            else:
                tmaxy = inf
        else:
            if tmaxx == inf:
                break
            if stepx > 0 and stepy < 0:
                nc = c + stepx
                if 0 <= nc < size:
                    c = nc
                    grid[r, c] = 1
                tmaxx += tdx
                nr = r + stepy
                if 0 <= nr < size:
                    r = nr
                    grid[r, c] = 1
                tmaxy += tdy
            elif stepx < 0 and stepy > 0:
                nr = r + stepy
                if 0 <= nr < size:
                    r = nr
                    grid[r, c] = 1
                tmaxy += tdy
                nc = c + stepx
                if 0 <= nc < size:
                    c = nc
                    grid[r, c] = 1
                tmaxx += tdx
            else:
                nc = c + stepx
                nr = r + stepy
                if 0 <= nc < size:
                    c = nc
                tmaxx += tdx
                if 0 <= nr < size:
                    r = nr
                tmaxy += tdy
                grid[r, c] = 1


@njit(cache=True)
def _ink_polyline(pts, size):
    grid = np.zeros((size, size), dtype=np.uint8)
    n = pts.shape[0]
    if n == 0:
        return grid
    if n == 1:
        c = int(pts[0, 0] * size)
        if c > size - 1:
            c = size - 1
        r = int(pts[0, 1] * size)
        if r > size - 1:
            r = size - 1
        grid[r, c] = 1
        return grid
    for i in range(n - 1):
        _supercover(grid, pts[i, 0], pts[i, 1], pts[i + 1, 0], pts[i + 1, 1],
                    size)
    return grid


def ink_polyline(points, size=28):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return _ink_polyline(pts, size)


@njit(cache=True)
def _chamfer(pa, pb):
    na = pa.shape[0]
    nb = pb.shape[0]
    sab = 0.0
    for i in range(na):
        best = np.inf
        for j in range(nb):
            d0 = pa[i, 0] - pb[j, 0]
            d1 = pa[i, 1] - pb[j, 1]
            d = d0 * d0 + d1 * d1
            if d < best:
                best = d
        sab += np.sqrt(best)
    sba = 0.0
    for j in range(nb):
        best = np.inf
        for i in range(na):
            d0 = pa[i, 0] - pb[j, 0]
            d1 = pa[i, 1] - pb[j, 1]
            d = d0 * d0 + d1 * d1
            if d < best:
                best = d
        sba += np.sqrt(best)
    return 0.5 * (sab / na + sba / nb)


def chamfer_mean(pa, pb):
    return _chamfer(np.asarray(pa, dtype=np.float64).reshape(-1, 2),
                    np.asarray(pb, dtype=np.float64).reshape(-1, 2))


@njit(cache=True)
def _nearest_instance(shapes, cx, cy, hw, hh, size):
    out = np.zeros((size, size), dtype=np.int32)
    half = size / 2.0
    for i in range(size):
        y = (i + 0.5) / half - 1.0
        for j in range(size):
            x = (j + 0.5) / half - 1.0
            best = np.inf
            arg = 0
            for k in range(shapes.shape[0]):
                dx = abs(x - cx[k])
                dy = abs(y - cy[k])
                if shapes[k] == 1:
                    u = dx / hw[k]
                    v = dy / hh[k]
                    rr = np.sqrt(u * u + v * v)
                    d = 0.0 if rr <= 1.0 else (rr - 1.0) * np.sqrt(hw[k] * hh[k])
                else:
                    ox = dx - hw[k]
                    if ox < 0.0:
                        ox = 0.0
                    oy = dy - hh[k]
                    if oy < 0.0:
                        oy = 0.0
                    d = np.sqrt(ox * ox + oy * oy)
                if d < best:
                    best = d
                    arg = k
            out[i, j] = arg
    return out


def nearest_instance(shapes, cx, cy, hw, hh, size=64):
    return _nearest_instance(np.asarray(shapes, dtype=np.int64),
                             np.asarray(cx, dtype=np.float64),
                             np.asarray(cy, dtype=np.float64),
                             np.asarray(hw, dtype=np.float64),
                             np.asarray(hh, dtype=np.float64), size)


@njit(cache=True)
def _knn_vote(q, s, parts, n_parts, k):
    nq = q.shape[0]
    ns = s.shape[0]
    if k > ns:
        k = ns
    labels = np.empty(nq, dtype=np.int32)
    nd = np.empty(k, dtype=np.float64)
    ni = np.empty(k, dtype=np.int64)
    counts = np.empty(n_parts, dtype=np.int64)
    for i in range(nq):
        m = 0
        for j in range(ns):
            d0 = q[i, 0] - s[j, 0]
            d1 = q[i, 1] - s[j, 1]
            d = d0 * d0 + d1 * d1
            # insertion into the running top-k, (distance, index) lexicographic
            if m < k:
                p = m
                while p > 0 and (nd[p - 1] > d):
                    nd[p] = nd[p - 1]
                    ni[p] = ni[p - 1]
                    p -= 1
                nd[p] = d
                ni[p] = j
                m += 1
            elif d < nd[k - 1]:
                p = k - 1
                while p > 0 and (nd[p - 1] > d):
                    nd[p] = nd[p - 1]
                    ni[p] = ni[p - 1]
                    p -= 1
                nd[p] = d
                ni[p] = j
        for c in range(n_parts):
            counts[c] = 0
        for jj in range(m):
            counts[parts[ni[jj]]] += 1
        best = -1
        arg = 0
        for c in range(n_parts):
            if counts[c] > best:
                best = counts[c]
                arg = c
        labels[i] = arg
    return labels


def knn_vote(queries, samples, sample_parts, n_parts, k=3):
    return _knn_vote(np.asarray(queries, dtype=np.float64).reshape(-1, 2),
                     np.asarray(samples, dtype=np.float64).reshape(-1, 2),
                     np.asarray(sample_parts, dtype=np.int32),
                     n_parts, k)
