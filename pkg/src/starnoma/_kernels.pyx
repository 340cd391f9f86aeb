# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same signatures and results as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, INFINITY
from scipy.linalg.cython_blas cimport dtrsm
from scipy.linalg.cython_lapack cimport dsyevr

cnp.import_array()


def back_substitute_powers(gains, thresholds, double sigma2):
    cdef double[:, :] g = np.ascontiguousarray(gains, dtype=np.float64)
    cdef double[:] r = np.ascontiguousarray(thresholds, dtype=np.float64)
    cdef Py_ssize_t k = r.shape[0]
    out = np.zeros(k)
    cdef double[:] p = out
    cdef Py_ssize_t i, j
    cdef double interference
    for i in range(k - 1, -1, -1):
        interference = 0.0
        for j in range(i + 1, k):
            interference += p[j] * g[j, i]
        p[i] = r[i] * (interference + sigma2) / g[i, i]
    return out


def psum_min_curve(lams, pbar, gains, qos_bits, double sigma2):
    cdef double[:] lam = np.ascontiguousarray(lams, dtype=np.float64)
    cdef double[:] pb = np.ascontiguousarray(pbar, dtype=np.float64)
    cdef double[:, :] g = np.ascontiguousarray(gains, dtype=np.float64)
    cdef double[:] q = np.ascontiguousarray(qos_bits, dtype=np.float64)
    cdef Py_ssize_t n_lam = lam.shape[0], k = pb.shape[0]
    out = np.empty(n_lam)
    cdef double[:] res = out
    cdef double[:] interf = np.zeros(k)
    cdef double[:] own = np.zeros(k)
    cdef Py_ssize_t n, i, j
    cdef double worst, thr, d, ln2 = log(2.0)
    cdef bint feasible
    for i in range(k):
        own[i] = pb[i] * g[i, i]
        for j in range(i + 1, k):
            interf[i] += pb[j] * g[j, i]
    for n in range(n_lam):
        worst = 0.0
        feasible = lam[n] > 0
        if feasible:
            for i in range(k):
                thr = _expm1(q[i] / lam[n] * ln2)
                d = own[i] / thr - interf[i]
                if not d > 0:
                    feasible = False
                    break
                if sigma2 / d > worst:
                    worst = sigma2 / d
        res[n] = worst if feasible else INFINITY
    return out


cdef inline double _expm1(double x) nogil:
    # libm expm1 via exp for large x; series for small keeps relative accuracy
    cdef double ax = x if x >= 0 else -x
    if ax < 1e-5:
        return x + 0.5 * x * x + x * x * x / 6.0
    return exp(x) - 1.0


def refine_phases(a, v, int max_sweeps=50, double tol=1e-6):
    cdef double complex[:, :] am = np.ascontiguousarray(a, dtype=np.complex128)
    vout = np.array(v, dtype=np.complex128)
    cdef double complex[:] vv = vout
    cdef Py_ssize_t n_rows = am.shape[0], n_cols = am.shape[1]
    cdef double complex[:] total = np.zeros(n_rows, dtype=np.complex128)
    cdef double complex[:] rest = np.zeros(n_rows, dtype=np.complex128)
    cdef Py_ssize_t i, m
    cdef int sweep
    cdef double complex inner
    cdef double mag, gain, new_gain
    for i in range(n_rows):
        for m in range(n_cols):
            total[i] += am[i, m] * vv[m]
    gain = 0.0
    for i in range(n_rows):
        gain += total[i].real * total[i].real + total[i].imag * total[i].imag
    history = [gain]
    for sweep in range(max_sweeps):
        for m in range(n_cols):
            inner = 0.0
            for i in range(n_rows):
                rest[i] = total[i] - am[i, m] * vv[m]
                inner += am[i, m].conjugate() * rest[i]
            mag = sqrt(inner.real * inner.real + inner.imag * inner.imag)
            if mag != 0:
                vv[m] = inner / mag
            for i in range(n_rows):
                total[i] = rest[i] + am[i, m] * vv[m]
        new_gain = 0.0
        for i in range(n_rows):
            new_gain += total[i].real * total[i].real + total[i].imag * total[i].imag
        history.append(new_gain)
        if new_gain - gain <= tol * (new_gain if new_gain > 1e-300 else 1e-300):
            break
        gain = new_gain
    return vout, history


def min_congruence_eig(chol, d):
    """Smallest eigenvalue of ``L^{-1} D L^{-T}`` via BLAS trsm + LAPACK syevr."""
    cdef cnp.ndarray[double, ndim=2, mode="fortran"] lf = np.asfortranarray(chol, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="fortran"] tf = np.array(d, dtype=np.float64, order="F")
    cdef int n = lf.shape[0]
    cdef double one = 1.0
    cdef char side_l = b'L', side_r = b'R', lower = b'L', no_t = b'N', tr = b'T', unit = b'N'
    dtrsm(&side_l, &lower, &no_t, &unit, &n, &n, &one, &lf[0, 0], &n, &tf[0, 0], &n)
    dtrsm(&side_r, &lower, &tr, &unit, &n, &n, &one, &lf[0, 0], &n, &tf[0, 0], &n)

    cdef char jobz = b'N', rng = b'I'
    cdef int il = 1, iu = 1, m_found = 0, ldz = 1, info = 0
    cdef double vl = 0.0, vu = 0.0, abstol = 0.0
    cdef double w[128]
    cdef double zdummy = 0.0
    cdef int isuppz[256]
    cdef int lwork = 26 * n, liwork = 10 * n
    cdef cnp.ndarray[double, ndim=1] work = np.empty(max(lwork, 1))
    cdef cnp.ndarray[int, ndim=1] iwork = np.empty(max(liwork, 1), dtype=np.intc)
    if n > 128:
        raise ValueError("block dimension above 128")
    dsyevr(&jobz, &rng, &lower, &n, &tf[0, 0], &n, &vl, &vu, &il, &iu, &abstol, &m_found,
           w, &zdummy, &ldz, isuppz, &work[0], &lwork, &iwork[0], &liwork, &info)
    if info != 0:
        raise ValueError(f"dsyevr failed with info={info}")
    return w[0]
