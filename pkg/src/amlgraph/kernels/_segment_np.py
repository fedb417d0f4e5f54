"""Pure-numpy segment reductions (fallback backend).

Mirrors the compiled backend in ``_segment_cy.pyx``; the dispatcher in
``kernels.__init__`` validates arguments, so these assume well-formed input:
``data`` is C-contiguous float64, ``ids`` is int64 in ``[0, n_segments)``.
"""

import numpy as np

BACKEND = "numpy"


def segment_sum(data: np.ndarray, ids: np.ndarray, n_segments: int) -> np.ndarray:
    out = np.zeros((n_segments, data.shape[1]), dtype=np.float64)
    np.add.at(out, ids, data)
    return out


def segment_max(data: np.ndarray, ids: np.ndarray, n_segments: int) -> np.ndarray:
    # Empty segments keep -inf; callers only read segments that have members.
    out = np.full((n_segments, data.shape[1]), -np.inf, dtype=np.float64)
    np.maximum.at(out, ids, data)
    return out


def segment_softmax(data: np.ndarray, ids: np.ndarray, n_segments: int) -> np.ndarray:
    # Max-subtracted for overflow safety within each segment.
    peak = segment_max(data, ids, n_segments)
    e = np.exp(data - peak[ids])
    denom = segment_sum(e, ids, n_segments)
    return e / denom[ids]
