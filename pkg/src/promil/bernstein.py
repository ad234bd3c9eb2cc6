"""Bernstein polynomial quantile estimator.

For ascending values p_0 <= ... <= p_n and a level q in (0, 1), the
estimate is

    sum_{k=0}^{n} C(n,k) q^(n-k) (1-q)^k * p_k,

a binomial mixture of order statistics that is differentiable in both the
values and q.  The weights put their mass near index n*(1-q), so q -> 0
approaches the maximum and q -> 1 the minimum.  Evaluation runs in the log
domain (log-gamma binomial coefficients, logsumexp accumulation) so that
bag sizes in the thousands stay finite.

Values are clamped below at ``eps`` before the log; clamped entries receive
zero gradient.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from . import _backend

DEFAULT_EPS = 1e-7


@dataclass(frozen=True)
class SortedPredictions:
    """Ascending per-instance scores plus the sort permutation.

    ``permutation[k]`` is the original index of the k-th smallest score, so
    ``values[k] == original[permutation[k]]``.
    """

    values: np.ndarray
    permutation: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        permutation = np.asarray(self.permutation, dtype=np.intp)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "permutation", permutation)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("values must be a nonempty 1-D array")
        if np.any(np.diff(values) < 0):
            raise ValueError("values must be sorted ascending")
        if values[0] < 0.0 or values[-1] > 1.0:
            raise ValueError("values must lie in [0, 1]")
        if sorted(permutation.tolist()) != list(range(values.size)):
            raise ValueError("permutation must be a bijection on 0..n")

    @classmethod
    def from_raw(cls, predictions):
        """Stable-sort raw predictions ascending, recording the permutation."""
        predictions = np.asarray(predictions, dtype=np.float64)
        perm = np.argsort(predictions, kind="stable")
        return cls(values=predictions[perm], permutation=perm)

    def __len__(self):
        return self.values.size


@dataclass
class QuantileParam:
    """Trainable quantile level stored as an unconstrained real.

    ``q = logistic(raw)`` is strictly inside (0, 1) for every finite raw
    value, so gradient steps can never push the level onto a boundary.
    The float logistic saturates to exact 0.0/1.0 around |raw| > 37, so the
    derived level is clipped back into the open interval.
    """

    raw: float = field(default=0.0)

    @property
    def q(self):
        return float(np.clip(expit(self.raw), np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0)))

    @classmethod
    def from_q(cls, q):
        if not 0.0 < q < 1.0:
            raise ValueError(f"q must be in (0, 1), got {q}")
        return cls(raw=float(logit(q)))


def log_binomial(n, k):
    """log C(n, k) via log-gamma: logG(n+1) - logG(k+1) - logG(n-k+1)."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if not 0 <= k <= n:
        raise ValueError(f"k must be in [0, {n}], got {k}")
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def bernstein_log_weights(n, q):
    """Log weights log C(n,k) + (n-k) log q + k log(1-q) for k = 0..n.

    The exponentiated weights are the Binomial(n, 1-q) pmf and sum to one,
    i.e. logsumexp of the result is 0 up to rounding.
    """
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be strictly inside (0, 1), got {q}")
    return _backend.log_weights(int(n), float(q))


def _ascending_values(preds):
    if isinstance(preds, SortedPredictions):
        return preds.values
    values = np.ascontiguousarray(preds, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("predictions must be a nonempty 1-D array")
    if np.any(np.diff(values) < 0):
        raise ValueError("predictions must be sorted ascending")
    return values


def estimate_quantile(preds, q, eps=DEFAULT_EPS):
    """Evaluate the estimator at level q on ascending predictions.

    ``preds`` is a SortedPredictions or an already-ascending 1-D array.
    ``eps`` is the lower clamp applied to each value before its log.
    """
    values = _ascending_values(preds)
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be strictly inside (0, 1), got {q}")
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    return float(_backend.quantile_value(values, float(q), float(eps)))


def quantile_gradients(preds, q, eps=DEFAULT_EPS):
    """Analytic gradients of estimate_quantile.

    Returns ``(grad_values, grad_q)``: grad_values[k] is the k-th binomial
    weight (zero when values[k] was clamped), and grad_q sums
    w_k * max(values[k], eps) * ((n-k)/q - k/(1-q)).
    """
    values = _ascending_values(preds)
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be strictly inside (0, 1), got {q}")
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    _, grad_values, grad_q = _backend.quantile_value_grad(values, float(q), float(eps))
    return grad_values, float(grad_q)


def estimate_quantile_limit(preds, q):
    """Boundary levels via the 0^0 = 1 convention: q=0 -> max, q=1 -> min."""
    values = _ascending_values(preds)
    if q == 0:
        return float(values[-1])
    if q == 1:
        return float(values[0])
    raise ValueError(f"q must be exactly 0 or 1, got {q}")
