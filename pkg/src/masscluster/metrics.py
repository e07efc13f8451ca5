"""Clustering quality metrics: matched F1 and adjusted mutual information.

Both metrics are label-permutation invariant and accept arbitrary label
values (integers, strings); labels are compared only through the
co-occurrence table.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln

__all__ = ["contingency", "f1_score", "ami_score"]


def _check_lengths(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.ndim != 1 or truth.ndim != 1 or pred.shape[0] != truth.shape[0]:
        raise ValueError(
            f"pred and truth must be 1-d of equal length, got {pred.shape} "
            f"and {truth.shape}"
        )
    if pred.shape[0] < 1:
        raise ValueError("labelings must be non-empty")
    return pred, truth


def contingency(pred, truth):
    """Co-occurrence counts between predicted clusters and true classes.

    Returns
    -------
    counts : (r, c) int64 array
        counts[i, j] = points in predicted cluster i and true class j.
    pred_values, truth_values : arrays
        The distinct label values indexing the rows and columns.
    """
    pred, truth = _check_lengths(pred, truth)
    pred_values, pi = np.unique(pred, return_inverse=True)
    truth_values, ti = np.unique(truth, return_inverse=True)
    counts = np.zeros((pred_values.size, truth_values.size), dtype=np.int64)
    np.add.at(counts, (pi, ti), 1)
    return counts, pred_values, truth_values


def f1_score(pred, truth):
    """F1 after optimal one-to-one matching of clusters to classes.

    The Hungarian method matches predicted clusters to true classes to
    maximize total matched count. Each matched pair scores the binary F1
    2 * TP / (cluster size + class size): points of other classes inside the
    matched cluster count against precision, and class members lost to other
    clusters (including unmatched ones) count against recall. The score is
    the class-size weighted mean over matched pairs; classes left unmatched
    (more classes than clusters, or zero overlap) contribute no weight.
    """
    counts, _, _ = contingency(pred, truth)
    rows, cols = linear_sum_assignment(counts, maximize=True)
    cluster_sizes = counts.sum(axis=1)
    class_sizes = counts.sum(axis=0)
    num = 0.0
    den = 0.0
    for u, v in zip(rows, cols):
        tp = counts[u, v]
        if tp == 0:
            continue
        pair_f1 = 2.0 * tp / (cluster_sizes[u] + class_sizes[v])
        num += class_sizes[v] * pair_f1
        den += class_sizes[v]
    return num / den if den > 0 else 0.0


def _entropy(sizes, n):
    p = sizes[sizes > 0] / n
    return float(-(p * np.log(p)).sum())


def _expected_mi(a, b, n):
    """E[MI] under the fixed-marginals permutation model.

    For each cell the overlap count follows a hypergeometric law; terms are
    accumulated with log-gamma factorials so the sum stays stable for large n.
    """
    lgn = gammaln(n + 1)
    total = 0.0
    for ai in a:
        # vectorize over the nij support for every column at this row
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1, dtype=np.float64)
            log_term = np.log(nij) + np.log(n) - np.log(ai) - np.log(bj)
            log_prob = (
                gammaln(ai + 1)
                + gammaln(bj + 1)
                + gammaln(n - ai + 1)
                + gammaln(n - bj + 1)
                - lgn
                - gammaln(nij + 1)
                - gammaln(ai - nij + 1)
                - gammaln(bj - nij + 1)
                - gammaln(n - ai - bj + nij + 1)
            )
            total += float(((nij / n) * log_term * np.exp(log_prob)).sum())
    return total


def ami_score(pred, truth):
    """Adjusted mutual information with max normalization, natural logs.

    AMI = (MI - E[MI]) / (max(H(pred), H(truth)) - E[MI]), with E[MI] taken
    under the permutation model with fixed marginals. Two single-cluster
    labelings are identical partitions and score 1.
    """
    counts, _, _ = contingency(pred, truth)
    n = int(counts.sum())
    a = counts.sum(axis=1)
    b = counts.sum(axis=0)
    h_pred = _entropy(a, n)
    h_truth = _entropy(b, n)
    if h_pred == 0.0 and h_truth == 0.0:
        return 1.0
    nz = counts > 0
    nij = counts[nz].astype(np.float64)
    outer = (a[:, None] * b[None, :])[nz].astype(np.float64)
    mi = float(((nij / n) * (np.log(nij) + np.log(n) - np.log(outer))).sum())
    emi = _expected_mi(a.astype(np.int64), b.astype(np.int64), n)
    denominator = max(h_pred, h_truth) - emi
    eps = np.finfo(np.float64).eps
    if denominator < 0:
        denominator = min(denominator, -eps)
    else:
        denominator = max(denominator, eps)
    return (mi - emi) / denominator
