# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled replica-synthesis kernel.

Same contract as ``isacsar.kernels._ref.replica_rows``: analytic baseband
OFDM symbol evaluated by direct subcarrier summation (Horner recurrence on
the unit-circle phasor), delayed copies stacked as rows.
"""

import numpy as np

from libc.math cimport cos, sin, sqrt, M_PI


def replica_rows(symbols, double delta_f, double t_cp, double t_total,
                 t, taus):
    cdef double complex[::1] s = np.ascontiguousarray(symbols, dtype=np.complex128)
    cdef double[::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef double[::1] dv = np.atleast_1d(np.ascontiguousarray(taus, dtype=np.float64))
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t nt = tv.shape[0]
    cdef Py_ssize_t m = dv.shape[0]
    out_arr = np.zeros((m, nt), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    cdef double scale = 1.0 / sqrt(<double> n)
    cdef double w = 2.0 * M_PI * delta_f
    cdef double tau, t_rel, phase
    cdef double complex z, acc
    cdef Py_ssize_t i, j, k
    for i in range(m):
        tau = dv[i]
        for j in range(nt):
            t_rel = tv[j] - tau
            if t_rel < 0.0 or t_rel >= t_total:
                continue
            phase = w * (t_rel - t_cp)
            z = cos(phase) + 1j * sin(phase)
            acc = s[n - 1]
            for k in range(n - 2, -1, -1):
                acc = acc * z + s[k]
            out[i, j] = acc * scale
    return out_arr
