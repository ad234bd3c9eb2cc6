"""Bag-level evaluation: rank AUC and balanced accuracy."""

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalResult:
    auc: float
    balanced_accuracy: float
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    n_bags: int


def _tied_ranks(x):
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


def auc(scores, labels):
    """Mann-Whitney AUC: P(random positive outranks random negative), ties 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = _tied_ranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def balanced_accuracy(pred_labels, labels):
    """Mean of sensitivity and specificity."""
    pred_labels = np.asarray(pred_labels)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("balanced accuracy needs both classes present")
    tp = int(((pred_labels == 1) & (labels == 1)).sum())
    tn = int(((pred_labels == 0) & (labels == 0)).sum())
    return 0.5 * (tp / n_pos + tn / n_neg)


def evaluate(model, bags, head=None, eps=None):
    """Score every bag with the chosen head and aggregate an EvalResult.

    ``model`` is a TrainedModel (or anything with .net and .q); ``head``
    defaults to the head the model was trained with.
    """
    from .heads import decide, score_bag
    from .network import forward_bag

    if not bags:
        raise ValueError("cannot evaluate an empty bag list")
    head = head or model.head
    if eps is None:
        eps = 1e-7
    scores = np.empty(len(bags))
    labels = np.empty(len(bags), dtype=np.int64)
    for i, bag in enumerate(bags):
        preds, _ = forward_bag(model.net, bag.instances)
        scores[i] = score_bag(preds, head, q=model.q.q, eps=eps).score
        labels[i] = int(bag.label)
    hard = np.array([decide(s) for s in scores])
    tp = int(((hard == 1) & (labels == 1)).sum())
    fp = int(((hard == 1) & (labels == 0)).sum())
    tn = int(((hard == 0) & (labels == 0)).sum())
    fn = int(((hard == 0) & (labels == 1)).sum())
    return EvalResult(
        auc=auc(scores, labels),
        balanced_accuracy=balanced_accuracy(hard, labels),
        accuracy=float((hard == labels).mean()),
        tp=tp, fp=fp, tn=tn, fn=fn,
        n_bags=len(bags),
    )
