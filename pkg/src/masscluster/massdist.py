"""Mass and density estimators built on kernel mean embeddings.

A cluster is represented by its mean map: the average feature vector of its
members. The mass of a point with respect to a cluster is the similarity of
the point's feature vector to that mean map, which equals the average kernel
similarity between the point and the cluster's members. With a Gaussian
kernel the same construction estimates average density instead; the two
differ only in the kernel model supplied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import Dataset

__all__ = [
    "ClusterMeanMap",
    "ObjectiveValue",
    "mean_map",
    "mean_map_from_features",
    "mass",
    "density",
    "mass_matrix",
    "mass_distribution",
    "total_objective",
    "total_objective_from_features",
]


@dataclass
class ClusterMeanMap:
    """Dense feature sums over a point set, i.e. size * mean feature vector.

    Sums rather than means are stored so that isolation-kernel entries stay
    exact integer counts under incremental updates. Mutation is single-writer;
    reads of a finished map are safe anywhere.
    """

    sums: np.ndarray
    size: int

    @property
    def mean(self):
        return self.sums / self.size

    def add(self, model, feature_row):
        """Add one member's feature vector in O(feature dim)."""
        model.accumulate_one(self.sums, feature_row, +1)
        self.size += 1

    def remove(self, model, feature_row):
        """Remove one member's feature vector; the map must stay non-empty."""
        if self.size <= 1:
            raise ValueError("cannot remove the last member of a mean map")
        model.accumulate_one(self.sums, feature_row, -1)
        self.size -= 1


def _check_features_shape(model, cmm):
    if cmm.sums.shape != model.feature_shape:
        raise ValueError(
            f"mean map shape {cmm.sums.shape} does not match model "
            f"feature shape {model.feature_shape}"
        )


def mean_map_from_features(model, features):
    """Mean map of already-embedded feature rows."""
    features = np.atleast_2d(features)
    if features.shape[0] < 1:
        raise ValueError("member set must be non-empty")
    return ClusterMeanMap(model.accumulate(features), int(features.shape[0]))


def mean_map(model, data, members):
    """Mean map of the given member indices of a dataset.

    Equals the arithmetic mean of the members' feature vectors; with members
    covering the whole dataset it is the dataset's own mean map.
    """
    members = np.asarray(members, dtype=np.int64)
    if members.size < 1:
        raise ValueError("member set must be non-empty")
    pts = data.points if isinstance(data, Dataset) else np.asarray(data, np.float64)
    return mean_map_from_features(model, model.embed(pts[members]))


def _point_set_similarity(model, x, cmm):
    _check_features_shape(model, cmm)
    feats = np.atleast_2d(model.embed(x))
    return model.mean_similarity(feats, cmm.mean)


def mass(model, x, cmm):
    """Mass of point x with respect to the cluster behind the mean map.

    Computed as the similarity of x's feature vector to the cluster mean map,
    which equals the average kernel similarity of x to the cluster members.
    Lies in [0, 1] for isolation kernels.
    """
    return float(_point_set_similarity(model, x, cmm)[0])


def density(model, x, cmm):
    """Average Gaussian-kernel density of x over the cluster members.

    Identical machinery to mass, evaluated with a Nystrom Gaussian model, so
    the value is approximate with the quality of the landmark feature map.
    """
    return float(_point_set_similarity(model, x, cmm)[0])


def mass_matrix(model, features, cmms):
    """(n, k) matrix of masses of embedded feature rows against k mean maps."""
    features = np.atleast_2d(features)
    out = np.empty((features.shape[0], len(cmms)), dtype=np.float64)
    for j, cmm in enumerate(cmms):
        _check_features_shape(model, cmm)
        out[:, j] = model.mean_similarity(features, cmm.mean)
    return out


def mass_distribution(model, x, cmms):
    """Argmax cluster index and value of x's mass over k mean maps.

    Ties go to the lowest index.
    """
    if len(cmms) < 1:
        raise ValueError("need at least one mean map")
    feats = np.atleast_2d(model.embed(x))
    values = mass_matrix(model, feats, cmms)[0]
    idx = int(np.argmax(values))
    return idx, float(values[idx])


class ObjectiveValue(NamedTuple):
    """Total-mass objective, raw and divided by n."""

    raw: float
    per_point: float


def total_objective_from_features(model, features, labels):
    """Objective from precomputed feature rows; labels are 1..k, no gaps."""
    features = np.atleast_2d(features)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match n={n}")
    if labels.min() < 1:
        raise ValueError("labels must be >= 1")
    k = int(labels.max())
    counts = np.bincount(labels, minlength=k + 1)[1:]
    if (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0] + 1)
        raise ValueError(f"cluster {empty} is empty")
    raw = 0.0
    for j in range(1, k + 1):
        rows = features[labels == j]
        cmm = mean_map_from_features(model, rows)
        raw += float(model.mean_similarity(rows, cmm.mean).sum())
    return ObjectiveValue(raw, raw / n)


def total_objective(model, data, labels):
    """Sum over clusters of each member's mass with respect to its own cluster.

    Labels must cover 1..k with no empty cluster. Returns the raw sum and the
    per-point (divided by n) value.
    """
    pts = data.points if isinstance(data, Dataset) else np.asarray(data, np.float64)
    return total_objective_from_features(model, model.embed(pts), labels)
