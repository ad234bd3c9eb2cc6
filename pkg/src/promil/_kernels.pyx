# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the Bernstein quantile estimator hot path.

Same API as ``promil._kernels_py``; used for the per-bag inner loop of
training where Python/numpy dispatch overhead dominates at typical bag
sizes (tens of instances).
"""

from libc.math cimport exp, lgamma, log, log1p

import numpy as np

IS_COMPILED = True


cdef void _fill_log_weights(double[::1] out, Py_ssize_t n, double q) noexcept nogil:
    cdef Py_ssize_t k
    cdef double lg_np1 = lgamma(n + 1.0)
    cdef double lq = log(q)
    cdef double l1mq = log1p(-q)
    for k in range(n + 1):
        out[k] = (lg_np1 - lgamma(k + 1.0) - lgamma(n - k + 1.0)
                  + (n - k) * lq + k * l1mq)


def log_weights(n, double q):
    """Log binomial weights log C(n,k) + (n-k) log q + k log(1-q), k = 0..n."""
    cdef Py_ssize_t nn = n
    out = np.empty(nn + 1, dtype=np.float64)
    cdef double[::1] view = out
    _fill_log_weights(view, nn, q)
    return out


def quantile_value(double[::1] values, double q, double eps):
    """exp(logsumexp_k(log_w[k] + log(max(values[k], eps)))) for ascending values."""
    cdef Py_ssize_t n = values.shape[0] - 1
    cdef Py_ssize_t k
    buf = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] log_terms = buf
    cdef double g, m, acc
    _fill_log_weights(log_terms, n, q)
    m = -1e308
    for k in range(n + 1):
        g = values[k]
        if g < eps:
            g = eps
        log_terms[k] += log(g)
        if log_terms[k] > m:
            m = log_terms[k]
    acc = 0.0
    for k in range(n + 1):
        acc += exp(log_terms[k] - m)
    return exp(m) * acc


def quantile_value_grad(double[::1] values, double q, double eps):
    """Estimate plus analytic gradients; see the pure twin for the formulas."""
    cdef Py_ssize_t n = values.shape[0] - 1
    cdef Py_ssize_t k
    wbuf = np.empty(n + 1, dtype=np.float64)
    gbuf = np.zeros(n + 1, dtype=np.float64)
    cdef double[::1] log_w = wbuf
    cdef double[::1] grad_values = gbuf
    cdef double g, m, acc, w, grad_q, term
    _fill_log_weights(log_w, n, q)
    m = -1e308
    for k in range(n + 1):
        g = values[k]
        if g < eps:
            g = eps
        term = log_w[k] + log(g)
        if term > m:
            m = term
    acc = 0.0
    grad_q = 0.0
    for k in range(n + 1):
        g = values[k]
        if g < eps:
            g = eps
        w = exp(log_w[k])
        acc += exp(log_w[k] + log(g) - m)
        if values[k] >= eps:
            grad_values[k] = w
        grad_q += w * g * ((n - k) / q - k / (1.0 - q))
    return exp(m) * acc, gbuf, grad_q
