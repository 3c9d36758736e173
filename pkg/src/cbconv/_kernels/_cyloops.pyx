# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the sequential hot loops (see _pyloops for contracts)."""

import numpy as np

cimport numpy as cnp

from libc.math cimport fabs, floor, sqrt

BACKEND = "cy"


def sim_block(double[:, ::1] Ad, double[:, ::1] Gd, double[:, ::1] w,
              double[:, ::1] dither, double b, int levels,
              double[::1] x, unsigned char[:, ::1] codes_out,
              double[::1] max_abs):
    cdef Py_ssize_t M = codes_out.shape[0]
    cdef Py_ssize_t n = x.shape[0]
    cdef double scale = levels / (2.0 * b)
    cdef double smap = 2.0 / (levels - 1)
    cdef Py_ssize_t k, i, j
    cdef long violations = 0
    cdef double v, acc, ax
    cdef double[::1] s = np.empty(n)
    cdef double[::1] xn = np.empty(n)
    for k in range(M):
        for i in range(n):
            v = x[i] + dither[k, i]
            v = floor((v + b) * scale)
            if v < 0.0:
                v = 0.0
            elif v > levels - 1:
                v = levels - 1
            codes_out[k, i] = <unsigned char> v
            s[i] = v * smap - 1.0
        for i in range(n):
            acc = w[k, i]
            for j in range(n):
                acc += Ad[i, j] * x[j] + Gd[i, j] * s[j]
            xn[i] = acc
        for i in range(n):
            x[i] = xn[i]
            ax = fabs(xn[i])
            if ax > max_abs[i]:
                max_abs[i] = ax
            if ax > b:
                violations += 1
    return violations


def filt_forward(double[:, ::1] Af, double[:, ::1] c, double[::1] m,
                 double[:, ::1] out):
    cdef Py_ssize_t M = c.shape[0]
    cdef Py_ssize_t n = m.shape[0]
    cdef Py_ssize_t k, i, j
    cdef double acc
    cdef double[::1] mn = np.empty(n)
    for k in range(M):
        for i in range(n):
            out[k, i] = m[i]
        for i in range(n):
            acc = c[k, i]
            for j in range(n):
                acc += Af[i, j] * m[j]
            mn[i] = acc
        for i in range(n):
            m[i] = mn[i]


def filt_backward(double[:, ::1] Ab, double[:, ::1] c, double[:, ::1] mf,
                  double[:, ::1] WT, double[::1] mb, double[:, ::1] out_u):
    cdef Py_ssize_t M = c.shape[0]
    cdef Py_ssize_t n = mb.shape[0]
    cdef Py_ssize_t kdim = WT.shape[0]
    cdef Py_ssize_t k, i, j
    cdef double acc, nb
    cdef double max_mb = 0.0
    cdef double[::1] mn = np.empty(n)
    for k in range(M - 1, -1, -1):
        for i in range(n):
            acc = c[k, i]
            for j in range(n):
                acc += Ab[i, j] * mb[j]
            mn[i] = acc
        nb = 0.0
        for i in range(n):
            mb[i] = mn[i]
            nb += mn[i] * mn[i]
        nb = sqrt(nb)
        if nb > max_mb:
            max_mb = nb
        for i in range(kdim):
            acc = 0.0
            for j in range(n):
                acc += WT[i, j] * (mb[j] - mf[k, j])
            out_u[k, i] = acc
    return max_mb


def scan_complex(double complex[::1] lam, double complex[:, ::1] f,
                 double complex[:, ::1] out, bint backward):
    cdef Py_ssize_t M = f.shape[0]
    cdef Py_ssize_t n = f.shape[1]
    cdef Py_ssize_t k, i
    cdef double complex m
    if not backward:
        for i in range(n):
            m = 0
            for k in range(M):
                out[k, i] = m
                m = lam[i] * m + f[k, i]
    else:
        for i in range(n):
            m = 0
            for k in range(M - 1, -1, -1):
                m = lam[i] * m + f[k, i]
                out[k, i] = m
