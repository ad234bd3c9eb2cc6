"""Bag-level scoring heads and the bag decision rule.

The quantile head sorts the instance predictions ascending (stable, so
gradient routing is reproducible under ties) and evaluates the Bernstein
estimator at q and 1-q.  The max and mean heads are the classic
instance-based baselines.
"""

from dataclasses import dataclass

import numpy as np

from .bernstein import DEFAULT_EPS, SortedPredictions, estimate_quantile

HEADS = ("promil", "max", "mean")


@dataclass
class BagScore:
    score: float
    aux_score: float = None
    permutation: np.ndarray = None


def _check_nonempty(predictions):
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.ndim != 1 or predictions.size == 0:
        raise ValueError("predictions must be a nonempty 1-D array")
    return predictions


def promil_score(predictions, q, eps=DEFAULT_EPS):
    """Quantile head: score at level q, aux score at level 1-q."""
    predictions = _check_nonempty(predictions)
    sp = SortedPredictions.from_raw(predictions)
    return BagScore(
        score=estimate_quantile(sp, q, eps),
        aux_score=estimate_quantile(sp, 1.0 - q, eps),
        permutation=sp.permutation,
    )


def max_score(predictions):
    predictions = _check_nonempty(predictions)
    return BagScore(score=float(predictions.max()))


def mean_score(predictions):
    predictions = _check_nonempty(predictions)
    return BagScore(score=float(predictions.mean()))


def decide(score):
    """Bag label: positive iff the score exceeds 0.5 (strict)."""
    return 1 if score > 0.5 else 0


def score_bag(predictions, head, q=None, eps=DEFAULT_EPS):
    """Dispatch to one of the three heads by name."""
    if head == "promil":
        return promil_score(predictions, q, eps)
    if head == "max":
        return max_score(predictions)
    if head == "mean":
        return mean_score(predictions)
    raise ValueError(f"head must be one of {HEADS}, got {head!r}")
