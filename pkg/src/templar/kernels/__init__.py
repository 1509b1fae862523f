"""Hot raster/metric kernels with two interchangeable backends.

``TEMPLAR_KERNELS`` selects the backend at import time:

* ``numba`` - @njit loop kernels (error if numba is unavailable);
* ``numpy`` - pure-numpy vectorized fallback;
* ``auto``  - numba when importable, else numpy (default).

Both backends implement the same cell conventions and tie-breaking rules;
integer outputs are bit-identical, float reductions agree to ~1e-12 (see
``benchmarks/bench_kernels.py`` for a speed comparison).  ``use_backend``
re-points the dispatch at runtime (tests use it to cross-check).

Cell conventions:

* layout: 64x64 grid over [-1,1]^2, cell center x = (col+0.5)/32 - 1 (same
  for y/rows); a cell is painted iff its center is inside the shape (closed
  predicates); painter's algorithm, later instances overwrite.
* stroke: 28x28 grid over [0,1]^2, cell index = min(floor(u*28), 27); a
  polyline segment inks the exact supercover of the continuous point->cell
  map along it.
"""

from __future__ import annotations

import os

from . import _numpy

_BACKENDS = {"numpy": _numpy}
_numba_error = None
try:  # pragma: no cover - exercised via env flag
    from . import _numba
    _BACKENDS["numba"] = _numba
except Exception as e:  # numba missing or failed to compile
    _numba_error = e

_active = None


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def use_backend(name: str) -> str:
    """Select 'numba', 'numpy' or 'auto'; returns the backend now active."""
    global _active
    if name == "auto":
        name = "numba" if "numba" in _BACKENDS else "numpy"
    if name not in _BACKENDS:
        raise ValueError(
            f"kernel backend {name!r} unavailable"
            + (f" ({_numba_error})" if name == "numba" else ""))
    _active = _BACKENDS[name]
    return active_backend()


def active_backend() -> str:
    return "numba" if _active is _BACKENDS.get("numba") else "numpy"


use_backend(os.environ.get("TEMPLAR_KERNELS", "auto"))


def paint_layout(shapes, cx, cy, hw, hh, colors, size=64):
    return _active.paint_layout(shapes, cx, cy, hw, hh, colors, size)


def ink_polyline(points, size=28):
    return _active.ink_polyline(points, size)


def chamfer_mean(pa, pb):
    return _active.chamfer_mean(pa, pb)


def nearest_instance(shapes, cx, cy, hw, hh, size=64):
    return _active.nearest_instance(shapes, cx, cy, hw, hh, size)


def knn_vote(queries, samples, sample_parts, n_parts, k=3):
    return _active.knn_vote(queries, samples, sample_parts, n_parts, k)
