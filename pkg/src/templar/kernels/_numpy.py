"""Pure-numpy (vectorized) kernel implementations.

Semantics are the contract shared with the numba backend; see package
docstring for the cell conventions.  uint8/int32 outputs are bit-identical
across backends; float reductions may differ in the last ulp (summation
order), so cross-backend tests compare those at 1e-12.
"""

from __future__ import annotations

import numpy as np

SQUARE, CIRCLE, TRIANGLE = 0, 1, 2


def _centers(n: int):
    c = (np.arange(n) + 0.5) / (n / 2.0) - 1.0
    return c


def paint_layout(shapes, cx, cy, hw, hh, colors, size=64):
    """Painter's-algorithm raster of primitive instances.

    A cell is painted iff its center lies inside the shape (closed
    predicates); later instances overwrite earlier ones.  Returns
    (canvas uint8 with palette indices, provenance int32 with the painting
    instance index or -1).
    """
    canvas = np.zeros((size, size), dtype=np.uint8)
    prov = np.full((size, size), -1, dtype=np.int32)
    xs = _centers(size)[None, :]  # col -> x
    ys = _centers(size)[:, None]  # row -> y
    for k in range(len(shapes)):
        dx = xs - cx[k]
        dy = ys - cy[k]
        if shapes[k] == SQUARE:
            mask = (np.abs(dx) <= hw[k]) & (np.abs(dy) <= hh[k])
        elif shapes[k] == CIRCLE:
            mask = (dx / hw[k]) ** 2 + (dy / hh[k]) ** 2 <= 1.0
        else:  # triangle: isoceles, apex up, inscribed in the footprint box
            inside_y = (dy >= -hh[k]) & (dy <= hh[k])
            halfw = hw[k] * (hh[k] - dy) / (2.0 * hh[k])
            mask = inside_y & (np.abs(dx) <= halfw)
        canvas[mask] = colors[k]
        prov[mask] = k
    return canvas, prov


def ink_polyline(points, size=28):
    """Supercover-ink a polyline (coords in [0,1]^2) onto a binary grid.

    Cell convention: c = min(floor(u*size), size-1) per coordinate; the cell
    set inked for each segment is exactly the set of cells the continuous
    point->cell map visits along it.
    """
    grid = np.zeros((size, size), dtype=np.uint8)
    if len(points) == 0:
        return grid
    pts = np.asarray(points, dtype=np.float64)
    for i in range(len(pts) - 1):
        _supercover_segment(grid, pts[i, 0], pts[i, 1], pts[i + 1, 0],
                            pts[i + 1, 1], size)
    if len(pts) == 1:
        c = min(int(pts[0, 0] * size), size - 1)
        r = min(int(pts[0, 1] * size), size - 1)
        grid[r, c] = 1
    return grid


def _supercover_segment(grid, x0, y0, x1, y1, size):
    xs0, ys0 = x0 * size, y0 * size
    xs1, ys1 = x1 * size, y1 * size
    c = min(int(np.floor(xs0)), size - 1)
    r = min(int(np.floor(ys0)), size - 1)
    c1 = min(int(np.floor(xs1)), size - 1)
    r1 = min(int(np.floor(ys1)), size - 1)
    grid[r, c] = 1
    dx = xs1 - xs0
    dy = ys1 - ys0
    stepx = 1 if dx > 0 else -1
    stepy = 1 if dy > 0 else -1
    inf = np.inf
    if dx != 0.0:
        tmaxx = ((c + 1 - xs0) / dx) if dx > 0 else ((c - xs0) / dx)
        tdx = abs(1.0 / dx)
    else:
        tmaxx, tdx = inf, inf
    if dy != 0.0:
        tmaxy = ((r + 1 - ys0) / dy) if dy > 0 else ((r - ys0) / dy)
        tdy = abs(1.0 / dy)
    else:
        tmaxy, tdy = inf, inf
    # Steps that would leave the clamped grid are saturated away (the clamped
    # floor map never leaves the edge cell), not taken.
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
            # simultaneous boundary crossing: whether the corner instant maps
            # into a side cell depends on step signs (floor ties go up/right)
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


def chamfer_mean(pa, pb):
    """Symmetric mean nearest-neighbor distance between two point sets.

    ``(mean_a min_b d + mean_b min_a d) / 2``; caller handles empty sets and
    normalization.  Points are (N,2) float arrays.
    """
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
    dab = np.sqrt(d2.min(axis=1)).mean()
    dba = np.sqrt(d2.min(axis=0)).mean()
    return 0.5 * (dab + dba)


def shape_distance_grid(shapes, cx, cy, hw, hh, size=64):
    """Point-to-shape distance from every cell center to every instance.

    Returns an (n_instances, size, size) float array.  Square/triangle use
    the footprint box distance (triangle approximated by its box; documented),
    circle uses the scaled radial distance; 0 inside.
    """
    xs = _centers(size)[None, :]
    ys = _centers(size)[:, None]
    out = np.empty((len(shapes), size, size), dtype=np.float64)
    for k in range(len(shapes)):
        dx = np.abs(xs - cx[k])
        dy = np.abs(ys - cy[k])
        if shapes[k] == CIRCLE:
            u = dx / hw[k]
            v = dy / hh[k]
            r = np.sqrt(u * u + v * v)
            d = np.where(r <= 1.0, 0.0, (r - 1.0) * np.sqrt(hw[k] * hh[k]))
        else:
            ox = np.maximum(dx - hw[k], 0.0)
            oy = np.maximum(dy - hh[k], 0.0)
            d = np.sqrt(ox * ox + oy * oy)
        out[k] = d
    return out


def nearest_instance(shapes, cx, cy, hw, hh, size=64):
    """Per cell, the index of the nearest instance (ties -> lowest index)."""
    d = shape_distance_grid(shapes, cx, cy, hw, hh, size)
    return d.argmin(axis=0).astype(np.int32)


def knn_vote(queries, samples, sample_parts, n_parts, k=3):
    """k-NN majority vote: label each query point by its neighbors' parts.

    Neighbor order is (distance, sample index) lexicographic; vote ties go to
    the smallest part id.  Returns int32 labels, shape (len(queries),).
    """
    q = np.asarray(queries, dtype=np.float64)
    s = np.asarray(samples, dtype=np.float64)
    parts = np.asarray(sample_parts, dtype=np.int32)
    k = min(k, len(s))
    d2 = ((q[:, None, :] - s[None, :, :]) ** 2).sum(axis=2)
    # stable selection: argsort on distance is stable -> index tie-break
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    votes = parts[order]  # (Q, k)
    labels = np.empty(len(q), dtype=np.int32)
    for i in range(len(q)):
        counts = np.bincount(votes[i], minlength=n_parts)
        labels[i] = int(counts.argmax())
    return labels
