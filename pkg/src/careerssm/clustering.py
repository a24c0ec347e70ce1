"""Label-invariant summaries of sampled allocations."""

from __future__ import annotations

import numpy as np
from sklearn.metrics import adjusted_rand_score

from .errors import ValidationError


def co_clustering_matrix(allocations):
    """Posterior similarity: share of draws in which runners ``i`` and ``j`` share a group.

    Parameters
    ----------
    allocations : (K, Q) integer labels
    """
    a = np.asarray(allocations)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValidationError("allocations must be a non-empty (K, Q) array")
    K, Q = a.shape
    out = np.zeros((Q, Q))
    for row in a:
        out += row[:, None] == row[None, :]
    return out / K


def least_squares_partition(allocations, similarity=None):
    """Draw whose co-clustering indicator is closest in squared error to the similarity matrix.

    Returns the labels of that draw relabelled ``0, 1, ...`` by first appearance.
    """
    a = np.asarray(allocations)
    psm = co_clustering_matrix(a) if similarity is None else similarity
    loss = [(((row[:, None] == row[None, :]) - psm) ** 2).sum() for row in a]
    return relabel(a[int(np.argmin(loss))])


def relabel(labels):
    """Map labels to ``0, 1, ...`` in order of first appearance."""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse].astype(np.int32)


def adjusted_rand_index(labels_true, labels_pred):
    return float(adjusted_rand_score(labels_true, labels_pred))


def match_groups(true_allocation, allocation):
    """For one draw, the fitted component holding most runners of each true group.

    Returns an array ``m`` with ``m[h]`` the fitted label for true group ``h``
    (``-1`` when the true group has no runners).
    """
    true_allocation = np.asarray(true_allocation)
    allocation = np.asarray(allocation)
    H = int(true_allocation.max()) + 1
    out = np.full(H, -1)
    for h in range(H):
        members = allocation[true_allocation == h]
        if members.size:
            out[h] = np.bincount(members).argmax()
    return out
