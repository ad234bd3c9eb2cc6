"""Pure-numpy kernels for the Bernstein quantile estimator.

Twin of the compiled extension ``promil._kernels``; both expose the same
three functions and must agree to float precision.  Selection happens in
``promil._backend``.
"""

import numpy as np
from scipy.special import gammaln

IS_COMPILED = False


def log_weights(n, q):
    """Log binomial weights log C(n,k) + (n-k) log q + k log(1-q), k = 0..n."""
    k = np.arange(n + 1, dtype=np.float64)
    return (
        gammaln(n + 1.0)
        - gammaln(k + 1.0)
        - gammaln(n - k + 1.0)
        + (n - k) * np.log(q)
        + k * np.log1p(-q)
    )


def quantile_value(values, q, eps):
    """exp(logsumexp_k(log_w[k] + log(max(values[k], eps)))) for ascending values."""
    log_terms = log_weights(len(values) - 1, q) + np.log(np.maximum(values, eps))
    m = log_terms.max()
    return float(np.exp(m) * np.exp(log_terms - m).sum())


def quantile_value_grad(values, q, eps):
    """Estimate plus analytic gradients.

    Returns ``(value, grad_values, grad_q)`` where ``grad_values[k]`` is the
    probability weight w_k (zero for entries clamped below eps) and
    ``grad_q = sum_k w_k * max(values[k], eps) * ((n-k)/q - k/(1-q))``.
    """
    n = len(values) - 1
    k = np.arange(n + 1, dtype=np.float64)
    log_w = log_weights(n, q)
    g = np.maximum(values, eps)
    log_terms = log_w + np.log(g)
    m = log_terms.max()
    value = float(np.exp(m) * np.exp(log_terms - m).sum())
    w = np.exp(log_w)
    grad_values = np.where(values >= eps, w, 0.0)
    grad_q = float(np.sum(w * g * ((n - k) / q - k / (1.0 - q))))
    return value, grad_values, grad_q
