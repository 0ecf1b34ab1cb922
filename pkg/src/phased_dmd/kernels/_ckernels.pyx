# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fused elementwise kernels for the toy networks and analytic teacher.

Each function mirrors one in ``_pykernels`` and must agree with it to
rounding error.
"""

import numpy as np

from libc.math cimport exp, expf, log, sqrt, sqrtf, fabs, INFINITY


ctypedef fused real:
    float
    double


# exp overflow gives inf and a sigmoid of exactly 0, which is the right limit
cdef inline real _sigmoid(real z) noexcept nogil:
    if real is float:
        return 1.0 / (1.0 + expf(-z))
    else:
        return 1.0 / (1.0 + exp(-z))


def silu_forward(const real[:, ::1] z):
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1], i, j
    dtype = np.float32 if real is float else np.float64
    a_arr = np.empty((n, m), dtype=dtype)
    s_arr = np.empty((n, m), dtype=dtype)
    cdef real[:, ::1] a = a_arr
    cdef real[:, ::1] s = s_arr
    cdef real sg
    with nogil:
        for i in range(n):
            for j in range(m):
                sg = _sigmoid(z[i, j])
                s[i, j] = sg
                a[i, j] = z[i, j] * sg
    return a_arr, s_arr


def silu_backward(const real[:, ::1] z, const real[:, ::1] s, const real[:, ::1] upstream):
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1], i, j
    out_arr = np.empty((n, m), dtype=np.float32 if real is float else np.float64)
    cdef real[:, ::1] out = out_arr
    cdef real sg
    with nogil:
        for i in range(n):
            for j in range(m):
                sg = s[i, j]
                out[i, j] = upstream[i, j] * (sg + z[i, j] * sg * (1 - sg))
    return out_arr


def adamw_update(
    real[::1] p,
    const real[::1] g,
    real[::1] m,
    real[::1] v,
    double lr,
    double beta1,
    double beta2,
    double eps,
    double weight_decay,
    double bias_correction1,
    double bias_correction2,
):
    """In-place AdamW step on flat views; returns the count of non-finite grads."""
    cdef Py_ssize_t n = p.shape[0], i
    cdef real b1 = beta1, b2 = beta2, c1 = 1.0 - beta1, c2 = 1.0 - beta2
    cdef real decay = 1.0 - lr * weight_decay
    cdef real step = lr / bias_correction1
    cdef real inv_sqrt_bc2 = 1.0 / sqrt(bias_correction2)
    cdef real e = eps, gi, mi, vi
    cdef long bad = 0
    with nogil:
        for i in range(n):
            bad += not (fabs(g[i]) < INFINITY)
        if bad == 0:
            for i in range(n):
                gi = g[i]
                mi = b1 * m[i] + c1 * gi
                vi = b2 * v[i] + c2 * gi * gi
                m[i] = mi
                v[i] = vi
                if real is float:
                    p[i] = p[i] * decay - step * mi / (sqrtf(vi) * inv_sqrt_bc2 + e)
                else:
                    p[i] = p[i] * decay - step * mi / (sqrt(vi) * inv_sqrt_bc2 + e)
    return bad


def mixture_posterior(
    const double[:, ::1] x,
    const double[:, ::1] atoms,
    const double[::1] log_probs,
    const double[::1] widths_sq,
    const double[::1] alphas,
    const double[::1] sigmas,
):
    """Posterior mean of x0 and score of p(x_t) for a Gaussian-atom mixture.

    Atom c contributes N(x_t; alpha*a_c, (alpha^2 w_c^2 + sigma^2) I), with
    (alpha, sigma) taken per sample.
    """
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], k = atoms.shape[0]
    cdef Py_ssize_t i, j, c
    mean_arr = np.zeros((n, d), dtype=np.float64)
    score_arr = np.zeros((n, d), dtype=np.float64)
    logit_buf = np.empty(k, dtype=np.float64)
    cdef double[:, ::1] mean = mean_arr
    cdef double[:, ::1] score = score_arr
    cdef double[::1] logit = logit_buf
    cdef double var, diff, sq, mx, tot, r, gain, alpha, sigma
    with nogil:
        for i in range(n):
            alpha = alphas[i]
            sigma = sigmas[i]
            mx = -INFINITY
            for c in range(k):
                var = alpha * alpha * widths_sq[c] + sigma * sigma
                sq = 0.0
                for j in range(d):
                    diff = x[i, j] - alpha * atoms[c, j]
                    sq = sq + diff * diff
                logit[c] = log_probs[c] - 0.5 * sq / var - 0.5 * d * log(var)
                if logit[c] > mx:
                    mx = logit[c]
            tot = 0.0
            for c in range(k):
                logit[c] = exp(logit[c] - mx)
                tot = tot + logit[c]
            for c in range(k):
                r = logit[c] / tot
                var = alpha * alpha * widths_sq[c] + sigma * sigma
                gain = alpha * widths_sq[c] / var
                for j in range(d):
                    diff = x[i, j] - alpha * atoms[c, j]
                    mean[i, j] += r * (atoms[c, j] + gain * diff)
                    score[i, j] -= r * diff / var
    return mean_arr, score_arr
