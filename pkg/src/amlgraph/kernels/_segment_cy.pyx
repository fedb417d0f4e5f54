# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled segment reductions.

Same contracts as ``_segment_np``: inputs are pre-validated by the
dispatcher (C-contiguous float64 data, int64 ids in range).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def segment_sum(double[:, ::1] data, long long[::1] ids, Py_ssize_t n_segments):
    cdef Py_ssize_t n_rows = data.shape[0]
    cdef Py_ssize_t n_cols = data.shape[1]
    out_arr = np.zeros((n_segments, n_cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, s
    for i in range(n_rows):
        s = ids[i]
        for j in range(n_cols):
            out[s, j] += data[i, j]
    return out_arr


def segment_max(double[:, ::1] data, long long[::1] ids, Py_ssize_t n_segments):
    cdef Py_ssize_t n_rows = data.shape[0]
    cdef Py_ssize_t n_cols = data.shape[1]
    out_arr = np.full((n_segments, n_cols), -np.inf, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, s
    for i in range(n_rows):
        s = ids[i]
        for j in range(n_cols):
            if data[i, j] > out[s, j]:
                out[s, j] = data[i, j]
    return out_arr


def segment_softmax(double[:, ::1] data, long long[::1] ids, Py_ssize_t n_segments):
    cdef Py_ssize_t n_rows = data.shape[0]
    cdef Py_ssize_t n_cols = data.shape[1]
    peak_arr = segment_max(data, ids, n_segments)
    cdef double[:, ::1] peak = peak_arr
    out_arr = np.empty((n_rows, n_cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    denom_arr = np.zeros((n_segments, n_cols), dtype=np.float64)
    cdef double[:, ::1] denom = denom_arr
    cdef Py_ssize_t i, j, s
    cdef double e
    for i in range(n_rows):
        s = ids[i]
        for j in range(n_cols):
            e = exp(data[i, j] - peak[s, j])
            out[i, j] = e
            denom[s, j] += e
    for i in range(n_rows):
        s = ids[i]
        for j in range(n_cols):
            out[i, j] /= denom[s, j]
    return out_arr


cdef extern from "math.h":
    double exp(double x) nogil
