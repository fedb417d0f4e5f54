"""Segment reductions with a compiled core and a pure-numpy fallback.

The backend is fixed at import time: the compiled Cython module is used when
present, the numpy implementation otherwise.  ``AMLGRAPH_KERNELS`` overrides
the choice (``auto``/``cython``/``numpy``).  Both backends satisfy identical
contracts and are cross-checked in the test suite; ``benchmarks/kernel_bench.py``
compares their throughput.

``segment_sum_canonical`` additionally accumulates each segment's values in
value-sorted order, which makes the result independent of how rows were
numbered (plain float summation is order-sensitive in the last ulp).  The
model evaluation paths use it so predictions do not depend on node numbering.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import ShapeError
from . import _segment_np

_choice = os.environ.get("AMLGRAPH_KERNELS", "auto").lower()
if _choice not in ("auto", "cython", "numpy"):
    raise ValueError(f"AMLGRAPH_KERNELS must be auto|cython|numpy, got {_choice!r}")

if _choice == "numpy":
    _impl = _segment_np
else:
    try:
        from . import _segment_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "cython":
            raise ImportError(
                "AMLGRAPH_KERNELS=cython but the compiled kernel module is not "
                "built; reinstall the package with a C compiler available"
            ) from None
        _impl = _segment_np


def backend_name() -> str:
    """Name of the active backend: 'cython' or 'numpy'."""
    return _impl.BACKEND


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        from . import _segment_cy  # noqa: F401

        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def _check(data: np.ndarray, ids: np.ndarray, n_segments: int):
    """Validate and normalize (data, ids, n_segments) for the backends."""
    data = np.asarray(data, dtype=np.float64)
    squeeze = data.ndim == 1
    if squeeze:
        data = data[:, None]
    if data.ndim != 2:
        raise ShapeError(f"segment data must be 1-D or 2-D, got ndim={data.ndim}")
    data = np.ascontiguousarray(data)
    ids = np.asarray(ids)
    if ids.ndim != 1 or ids.shape[0] != data.shape[0]:
        raise ShapeError(
            f"segment ids must be 1-D with one entry per data row: "
            f"got ids shape {ids.shape} for {data.shape[0]} rows"
        )
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"segment ids must be integers, got dtype {ids.dtype}")
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    n_segments = int(n_segments)
    if n_segments < 0:
        raise ShapeError(f"n_segments must be >= 0, got {n_segments}")
    if ids.size:
        lo, hi = int(ids.min()), int(ids.max())
        if lo < 0 or hi >= n_segments:
            raise ShapeError(
                f"segment ids out of range [0, {n_segments}): found [{lo}, {hi}]"
            )
    return data, ids, n_segments, squeeze


def segment_sum(data, ids, n_segments: int) -> np.ndarray:
    """Sum rows of ``data`` into ``n_segments`` buckets selected by ``ids``.

    Returns an (n_segments, n_cols) array (1-D data gives an (n_segments,)
    vector).  Empty segments are zero.
    """
    data, ids, n_segments, squeeze = _check(data, ids, n_segments)
    out = _impl.segment_sum(data, ids, n_segments)
    return out[:, 0] if squeeze else out


def segment_max(data, ids, n_segments: int) -> np.ndarray:
    """Per-segment maximum; empty segments are -inf."""
    data, ids, n_segments, squeeze = _check(data, ids, n_segments)
    out = _impl.segment_max(data, ids, n_segments)
    return out[:, 0] if squeeze else out


def segment_softmax(data, ids, n_segments: int) -> np.ndarray:
    """Softmax over each segment (columns independent), max-subtracted.

    Output has the shape of ``data``; rows in the same segment sum to 1
    column-wise.
    """
    data, ids, n_segments, squeeze = _check(data, ids, n_segments)
    out = _impl.segment_softmax(data, ids, n_segments)
    return out[:, 0] if squeeze else out


def segment_sum_canonical(data, ids, n_segments: int) -> np.ndarray:
    """segment_sum with a numbering-independent accumulation order.

    Each segment's column values are sorted ascending before the reduction,
    so any permutation of input rows yields a bit-identical result.  Slower
    than ``segment_sum``; used on evaluation paths where exact invariance
    under node relabeling matters.
    """
    data, ids, n_segments, squeeze = _check(data, ids, n_segments)
    out = np.zeros((n_segments, data.shape[1]), dtype=np.float64)
    if data.shape[0]:
        for j in range(data.shape[1]):
            col = data[:, j]
            order = np.lexsort((col, ids))
            sorted_ids = ids[order]
            # Run starts within the (ids, value)-sorted column.
            starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
            out[sorted_ids[starts], j] = np.add.reduceat(col[order], starts)
    return out[:, 0] if squeeze else out


def segment_softmax_canonical(data, ids, n_segments: int) -> np.ndarray:
    """segment_softmax with numbering-independent denominators (see above)."""
    data, ids, n_segments, squeeze = _check(data, ids, n_segments)
    peak = _impl.segment_max(data, ids, n_segments)
    e = np.exp(data - peak[ids])
    denom = segment_sum_canonical(e, ids, n_segments)
    out = e / denom[ids]
    return out[:, 0] if squeeze else out
