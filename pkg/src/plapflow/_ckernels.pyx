# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, exp, log
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()


cdef inline double _psi(double t, double p, int ip) nogil:
    cdef double a
    if ip == 2:
        return t
    if ip == 3:
        return fabs(t) * t
    if ip == 4:
        return t * t * t
    if t == 0.0:
        return 0.0
    a = fabs(t)
    return exp((p - 2.0) * log(a)) * t


cdef inline double _abs_pow(double a, double e, int ie) nogil:
    if ie == 0:
        return 1.0
    if ie == 1:
        return a
    if ie == 2:
        return a * a
    if ie == 3:
        return a * a * a
    if ie == 4:
        return (a * a) * (a * a)
    if a == 0.0:
        return 0.0
    return exp(e * log(a))


cdef inline int _int_code(double e):
    if e == 0.0 or e == 1.0 or e == 2.0 or e == 3.0 or e == 4.0:
        return <int>e
    return -1


def plap_apply(const int[::1] indptr, const int[::1] indices, const double[::1] data,
               const double[::1] v, double m, double p):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, k
    cdef double s, vi
    cdef int ip = _int_code(p)
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            s = 0.0
            vi = v[i]
            for k in range(indptr[i], indptr[i + 1]):
                s = s + data[k] * _psi(v[indices[k]] - vi, p, ip)
            o[i] = -m * s
    return out


def plap_energy(const int[::1] indptr, const int[::1] indices, const double[::1] data,
                const double[::1] v, double m, double p):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, k
    cdef double s = 0.0
    cdef int ie = _int_code(p)
    with nogil:
        for i in range(n):
            for k in range(indptr[i], indptr[i + 1]):
                s = s + data[k] * _abs_pow(fabs(v[indices[k]] - v[i]), p, ie)
    return m * m * s / (2.0 * p)


def plap_jacobian_weights(const int[::1] indptr, const int[::1] indices, const double[::1] data,
                          const double[::1] v, double m, double p):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, k
    cdef double c = m * (p - 1.0)
    cdef double e = p - 2.0
    cdef int ie = _int_code(e)
    out = np.empty(data.shape[0], dtype=np.float64)
    cdef double[::1] w = out
    with nogil:
        for i in range(n):
            for k in range(indptr[i], indptr[i + 1]):
                if indices[k] == i:
                    w[k] = 0.0
                else:
                    w[k] = c * data[k] * _abs_pow(fabs(v[indices[k]] - v[i]), e, ie)
    return out


cdef inline uint64_t _splitmix64(uint64_t z) nogil:
    z = z + 0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def pair_uniforms(seed, i, j):
    cdef uint64_t key = _splitmix64(<uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF))
    cdef const int64_t[::1] ii = np.ascontiguousarray(i, dtype=np.int64)
    cdef const int64_t[::1] jj = np.ascontiguousarray(j, dtype=np.int64)
    cdef Py_ssize_t n = ii.shape[0]
    cdef Py_ssize_t k
    cdef uint64_t h
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for k in range(n):
            h = _splitmix64(key ^ <uint64_t>ii[k])
            h = _splitmix64(h ^ <uint64_t>jj[k])
            o[k] = <double>(h >> 11) * (1.0 / 9007199254740992.0)
    return out


def step_hessian_data(const int[::1] indptr, const int[::1] indices, const double[::1] data,
                      const int[::1] diagpos, const double[::1] v, double m, double p,
                      double tau_mu, const double[::1] base_diag):
    """Values of I + tau G + tau mu J on a pattern that stores every diagonal."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, k
    cdef double c = m * (p - 1.0)
    cdef double e = p - 2.0
    cdef int ie = _int_code(e)
    cdef double w, rowsum
    out = np.empty(data.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            rowsum = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                if indices[k] == i:
                    continue
                w = c * data[k] * _abs_pow(fabs(v[indices[k]] - v[i]), e, ie)
                rowsum = rowsum + w
                o[k] = -tau_mu * w
            o[diagpos[i]] = base_diag[i] + tau_mu * rowsum
    return out
