"""Fixed visual featurizer: a canvas becomes 16 patch descriptors.

The canvas is cut into a 4x4 grid of equal patches (16x16 cells for the
layout canvas, 7x7 for the stroke canvas).  Each patch yields a fixed
feature row: the normalized histogram over cell values followed by the
centroid of occupied cells in patch-local coordinates (0..1; an empty
patch reports the patch center).  A trainable affine lift inside the model
maps rows to the decoder width, so the featurizer itself stays frozen and
domain-agnostic.
"""

from __future__ import annotations

import numpy as np

PATCH_GRID = 4
TOKENS_PER_CANVAS = PATCH_GRID * PATCH_GRID


def feature_dim(palette_size: int) -> int:
    return palette_size + 2


def patch_features(cells: np.ndarray, palette_size: int) -> np.ndarray:
    """(16, palette_size + 2) float64 patch descriptors, row-major patches."""
    n = cells.shape[0]
    if cells.shape != (n, n) or n % PATCH_GRID:
        raise ValueError(f"canvas shape {cells.shape} not divisible into "
                         f"{PATCH_GRID}x{PATCH_GRID} patches")
    p = n // PATCH_GRID
    area = float(p * p)
    grid = cells.reshape(PATCH_GRID, p, PATCH_GRID, p).transpose(0, 2, 1, 3)
    out = np.empty((TOKENS_PER_CANVAS, palette_size + 2), dtype=np.float64)
    k = 0
    for i in range(PATCH_GRID):
        for j in range(PATCH_GRID):
            patch = grid[i, j]
            hist = np.bincount(patch.reshape(-1).astype(np.int64),
                               minlength=palette_size)[:palette_size]
            out[k, :palette_size] = hist / area
            rr, cc = np.nonzero(patch)
            if rr.size:
                out[k, palette_size] = (rr.mean() + 0.5) / p
                out[k, palette_size + 1] = (cc.mean() + 0.5) / p
            else:
                out[k, palette_size] = 0.5
                out[k, palette_size + 1] = 0.5
            k += 1
    return out


def group_features(canvases, palette_size: int) -> np.ndarray:
    """(n_canvases, 16, F) stack of patch features."""
    return np.stack([patch_features(c, palette_size) for c in canvases])
