# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled odometer kernel for product-to-sum moment expansion."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef extern from "complex.h" nogil:
    double creal(double complex)
    double complex conj(double complex)


def odometer_moment(int q1, int q2, weights, phases, char_theta, char_fd):
    """Compiled twin of :func:`pascal_sim._kernels_py.odometer_moment`."""
    cdef cnp.ndarray[double, ndim=1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] ph = np.ascontiguousarray(phases, dtype=np.float64)
    cdef cnp.ndarray[double complex, ndim=1] unit = np.ascontiguousarray(
        np.exp(2j * np.pi * ph).ravel(), dtype=np.complex128)
    cdef cnp.ndarray[double complex, ndim=1] ct = np.ascontiguousarray(char_theta, dtype=np.complex128)
    cdef cnp.ndarray[double complex, ndim=1] cf = np.ascontiguousarray(char_fd, dtype=np.complex128)
    cdef int k = ph.shape[0]
    cdef int n = ph.shape[1]
    cdef int kn = k * n
    if q1 == 0:
        return 1.0
    cdef int off_t = q1 * (n - 1)
    cdef int off_f = q1
    cdef int g2 = q1 - q2
    cdef double complex lead = (-1j) ** g2
    # running state per depth: entry g holds the product of factors 0..g-1
    cdef cnp.ndarray[int, ndim=1] digits = np.zeros(q1, dtype=np.intc)
    cdef cnp.ndarray[int, ndim=1] c3 = np.zeros(q1 + 1, dtype=np.intc)
    cdef cnp.ndarray[int, ndim=1] se = np.zeros(q1 + 1, dtype=np.intc)
    cdef cnp.ndarray[double complex, ndim=1] rot = np.ones(q1 + 1, dtype=np.complex128)
    cdef cnp.ndarray[double, ndim=1] wp = np.ones(q1 + 1, dtype=np.float64)
    cdef int g, d, e, t, p, i, start = 0
    cdef double total = 0.0
    with nogil:
        while True:
            for g in range(start, q1):
                d = digits[g]
                if d < kn:
                    e = 1
                    t = d
                    rot[g + 1] = rot[g] * unit[t]
                else:
                    e = -1
                    t = d - kn
                    rot[g + 1] = rot[g] * conj(unit[t])
                p = t // n
                i = t - p * n
                c3[g + 1] = c3[g] + e * i
                se[g + 1] = se[g] + e
                if g < q2:
                    wp[g + 1] = wp[g] * w[p]
                else:
                    wp[g + 1] = wp[g] * e * w[p]
            total += wp[q1] * creal(lead * rot[q1] * ct[c3[q1] + off_t] * cf[se[q1] + off_f])
            # advance the odometer; the first digit only spans the e = +1 half
            g = q1 - 1
            while g >= 0:
                digits[g] += 1
                if digits[g] < (kn if g == 0 else 2 * kn):
                    break
                digits[g] = 0
                g -= 1
            if g < 0:
                break
            start = g
    return 2.0 * total / 2.0 ** q1
