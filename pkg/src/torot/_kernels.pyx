# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loop for torus diffusion paths.

One call advances a single path by Euler-Maruyama steps with a trigonometric
drift, accumulating per-mode occupation sums, an optional visit histogram and
optional strided position records. Gaussian increments come straight from the
replica's bit generator through NumPy's C API, drawn in fixed-size chunks so
the pure NumPy fallback can reproduce the identical increment stream.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport cos, fmod, sin, sqrt
from libc.stdint cimport int64_t
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal_fill

cnp.import_array()

DEF CHUNK = 8192
DEF MAX_DIM = 16


def chunk_steps():
    """Steps per Gaussian fill. The fallback backend must use the same."""
    return CHUNK


def max_dim():
    return MAX_DIM


def run_path(
    double[::1] x,
    double L,
    double dt,
    int64_t n_steps,
    double[::1] const_drift,
    int64_t[:, ::1] drift_freq,
    double[:, ::1] drift_cos,
    double[:, ::1] drift_sin,
    int64_t[:, ::1] kvecs,
    object bit_generator,
    double[::1] psi_out,
    int64_t[::1] hist_out,
    int64_t hist_n,
    double[:, ::1] rec_out,
    int64_t record_stride,
):
    """Advance one path in place and accumulate occupation sums.

    The drift at a point y is

        b_a(y) = const_drift[a]
                 + sum_j drift_cos[j,a] cos(alpha m_j . y)
                 + sum_j drift_sin[j,a] sin(alpha m_j . y)

    with alpha = 2 pi / L and m_j = drift_freq[j]. Positions evolve by
    x <- (x + b(x) dt + sqrt(2 dt) xi) mod L with standard normal xi.

    psi_out has 2 * len(kvecs) slots, cos before sin for each row k, and
    receives the left-endpoint sums over all n_steps of cos/sin(alpha k . x).
    When hist_n > 0, hist_out receives visit counts on the uniform
    hist_n**d grid (C order). When record_stride > 0, rec_out receives the
    positions at steps 0, record_stride, 2*record_stride, ...

    Returns the number of records written. The caller is responsible for
    consistent buffer shapes; only cheap invariants are re-checked here.
    """
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t M = kvecs.shape[0]
    cdef Py_ssize_t J = drift_freq.shape[0]
    cdef Py_ssize_t i, a, j, p
    cdef int64_t kmax = 0, k, step, t, m, rcount = 0, flat, c
    cdef double alpha = 2.0 * np.pi / L
    cdef double sig = sqrt(2.0 * dt)
    cdef double ph, cph, sph, zr, zi, wr, wi, tr, xa
    cdef double bbuf[MAX_DIM]
    cdef bitgen_t *rng

    if d < 1 or d > MAX_DIM:
        raise ValueError(f"dimension {d} outside 1..{MAX_DIM}")
    if const_drift.shape[0] != d:
        raise ValueError("const_drift length mismatch")
    if drift_cos.shape[0] != J or drift_sin.shape[0] != J:
        raise ValueError("drift coefficient row mismatch")
    if J > 0 and (drift_freq.shape[1] != d or drift_cos.shape[1] != d or drift_sin.shape[1] != d):
        raise ValueError("drift coefficient column mismatch")
    if M > 0 and kvecs.shape[1] != d:
        raise ValueError("kvecs column mismatch")
    if psi_out.shape[0] != 2 * M:
        raise ValueError("psi_out must have 2 * len(kvecs) slots")
    if hist_n > 0 and hist_out.shape[0] != hist_n**d:
        raise ValueError("hist_out size mismatch")
    if record_stride > 0:
        if rec_out.shape[1] != d:
            raise ValueError("rec_out column mismatch")
        if rec_out.shape[0] < (n_steps + record_stride - 1) // record_stride:
            raise ValueError("rec_out too short")

    for i in range(M):
        for a in range(d):
            k = kvecs[i, a]
            if k < 0:
                k = -k
            if k > kmax:
                kmax = k

    pw_re_arr = np.empty((d, kmax + 1))
    pw_im_arr = np.empty((d, kmax + 1))
    cdef double[:, ::1] pw_re = pw_re_arr
    cdef double[:, ::1] pw_im = pw_im_arr
    xi_arr = np.empty(CHUNK * d)
    cdef double[::1] xi = xi_arr

    rng = <bitgen_t *> PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")

    with bit_generator.lock:
        with nogil:
            step = 0
            while step < n_steps:
                m = n_steps - step
                if m > CHUNK:
                    m = CHUNK
                random_standard_normal_fill(rng, m * d, &xi[0])
                for j in range(m):
                    t = step + j
                    if record_stride > 0 and t % record_stride == 0:
                        for a in range(d):
                            rec_out[rcount, a] = x[a]
                        rcount += 1
                    if hist_n > 0:
                        flat = 0
                        for a in range(d):
                            c = <int64_t>(x[a] * hist_n / L)
                            if c >= hist_n:
                                c = hist_n - 1
                            flat = flat * hist_n + c
                        hist_out[flat] += 1
                    if M > 0:
                        for a in range(d):
                            ph = alpha * x[a]
                            zr = cos(ph)
                            zi = sin(ph)
                            pw_re[a, 0] = 1.0
                            pw_im[a, 0] = 0.0
                            for p in range(1, kmax + 1):
                                tr = pw_re[a, p - 1] * zr - pw_im[a, p - 1] * zi
                                pw_im[a, p] = pw_re[a, p - 1] * zi + pw_im[a, p - 1] * zr
                                pw_re[a, p] = tr
                        for i in range(M):
                            wr = 1.0
                            wi = 0.0
                            for a in range(d):
                                k = kvecs[i, a]
                                if k > 0:
                                    tr = wr * pw_re[a, k] - wi * pw_im[a, k]
                                    wi = wr * pw_im[a, k] + wi * pw_re[a, k]
                                    wr = tr
                                elif k < 0:
                                    tr = wr * pw_re[a, -k] + wi * pw_im[a, -k]
                                    wi = wi * pw_re[a, -k] - wr * pw_im[a, -k]
                                    wr = tr
                            psi_out[2 * i] += wr
                            psi_out[2 * i + 1] += wi
                    for a in range(d):
                        bbuf[a] = const_drift[a]
                    for i in range(J):
                        ph = 0.0
                        for a in range(d):
                            ph += drift_freq[i, a] * x[a]
                        ph *= alpha
                        cph = cos(ph)
                        sph = sin(ph)
                        for a in range(d):
                            bbuf[a] += drift_cos[i, a] * cph + drift_sin[i, a] * sph
                    for a in range(d):
                        xa = x[a] + bbuf[a] * dt + sig * xi[j * d + a]
                        xa = fmod(xa, L)
                        if xa < 0.0:
                            xa += L
                        x[a] = xa
                step += m
    return rcount
