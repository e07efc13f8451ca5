"""Experiment harnesses built on the kernel and clustering stack.

Four studies: cohesiveness of threshold-graph components as the threshold
sweeps, two diagnostic checks for when density-style kernels break cluster
detection, the objective-versus-correctness curve under gradual label
correction, and a wall-clock scaling ladder. Everything here is analysis
only: the O(n^2) pairwise similarity matrices never enter the clustering
path and are capped at 5000 points.

The command-line front end serializes each result as a CSV series plus a
plain-text summary; the functions themselves return structured records.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree
from scipy.stats import spearmanr

from .data import Dataset, generate_synthetic, normalize_minmax, rng_from
from .errors import AlgorithmError, ConfigError, DataError
from .massdist import mean_map_from_features
from .metrics import ami_score
from .clustering import run_mmc

__all__ = [
    "PAIRWISE_CAP",
    "TauRecord",
    "CohesivenessCurve",
    "cohesiveness_curve",
    "ConditionOneReport",
    "check_condition_one",
    "ConditionTwoReport",
    "check_condition_two",
    "CorrectionPoint",
    "CorrectionCurve",
    "correction_curve",
    "spearman",
    "ScaleReport",
    "scaleup",
]

# pairwise-matrix harnesses refuse datasets larger than this
PAIRWISE_CAP = 5000

CLOCK_FLOOR_SECONDS = 1e-3


def _labeled_points(data):
    if not isinstance(data, Dataset):
        raise DataError("expected a Dataset")
    if data.labels is None:
        raise DataError("this analysis needs a labeled dataset")
    return data.points, data.labels


def _check_cap(n):
    if n > PAIRWISE_CAP:
        raise ConfigError(
            f"pairwise analysis is capped at {PAIRWISE_CAP} points, got {n}"
        )


def _cluster_index_lists(labels):
    values = np.unique(labels)
    return values, [np.flatnonzero(labels == v) for v in values]


def _mean_nn_dist(points, idx):
    """Mean Euclidean nearest-neighbor distance within one cluster."""
    P = points[idx]
    sq = np.einsum("ij,ij->i", P, P)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (P @ P.T)
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(np.clip(d2.min(axis=1), 0.0, None)).mean())


# ---------------------------------------------------------------------------
# Cohesiveness versus threshold
# ---------------------------------------------------------------------------


@dataclass
class TauRecord:
    """Threshold-graph components at one tau.

    members are dataset indices per component, largest component first.
    sbar is the mean pairwise similarity over distinct member pairs; it is
    undefined (NaN) for singletons.
    """

    tau: float
    members: list
    sbar: np.ndarray

    @property
    def n_components(self):
        return len(self.members)

    @property
    def sizes(self):
        return np.array([m.size for m in self.members], dtype=np.int64)


@dataclass
class CohesivenessCurve:
    tau_grid: np.ndarray
    records: list

    @property
    def component_counts(self):
        return np.array([r.n_components for r in self.records], dtype=np.int64)


def cohesiveness_curve(model, data, tau_grid):
    """Components of the kernel graph thresholded at each tau, with their
    mean within-component similarity.

    Edges require similarity strictly above tau, so component counts never
    decrease along an ascending grid. The similarity matrix is computed once
    and reused; datasets above 5000 points are refused.
    """
    taus = np.asarray(tau_grid, dtype=np.float64)
    if taus.size == 0:
        raise ConfigError("tau grid is empty")
    if np.any(np.diff(taus) <= 0):
        raise ConfigError("tau grid must be strictly ascending")
    points = data.points if isinstance(data, Dataset) else np.asarray(data, np.float64)
    _check_cap(len(points))
    S = model.pairwise(points)
    records = []
    for tau in taus:
        adj = S > tau
        np.fill_diagonal(adj, False)
        n_comp, comp = connected_components(sparse.csr_matrix(adj), directed=False)
        members = [np.flatnonzero(comp == c) for c in range(n_comp)]
        members.sort(key=lambda m: (-m.size, m[0]))
        sbar = np.full(n_comp, np.nan)
        for ci, m in enumerate(members):
            if m.size < 2:
                continue
            sub = S[np.ix_(m, m)]
            sbar[ci] = (sub.sum() - np.trace(sub)) / (m.size * (m.size - 1))
        records.append(TauRecord(float(tau), members, sbar))
    return CohesivenessCurve(taus, records)


# ---------------------------------------------------------------------------
# Failure-condition diagnostics
# ---------------------------------------------------------------------------


def _peak_index(S, idx):
    """Member with the largest within-cluster similarity sum (self excluded)."""
    sub = S[np.ix_(idx, idx)]
    return int(idx[np.argmax(sub.sum(axis=1) - np.diag(sub))])


def _bottleneck_path_value(S, src, dst):
    """Max-min similarity over all paths from src to dst.

    The maximum spanning tree of the similarity graph contains a maximum-
    bottleneck path between every pair, so the answer is the smallest
    similarity along the unique tree path. Weights 2 - S keep every edge
    positive for the sparse routine.
    """
    mst = minimum_spanning_tree(sparse.csr_matrix(2.0 - S))
    und = mst + mst.T
    order, pred = breadth_first_order(und, src, directed=False, return_predecessors=True)
    val = np.inf
    node = dst
    while node != src:
        parent = pred[node]
        if parent < 0:
            raise AlgorithmError("spanning tree left the peaks disconnected")
        val = min(val, S[node, parent])
        node = parent
    return float(val)


@dataclass
class ConditionOneReport:
    """Does the sparse cluster's peak attach later than the dense pair merges?

    holds=True means the failure inequality s_alpha_hat < bottleneck is
    satisfied: every threshold that separates the two dense clusters has
    already isolated the sparse peak, so no threshold yields all three
    clusters as components.
    """

    sparse_label: object
    dense_labels: tuple
    sparse_peak: int
    dense_peaks: tuple
    s_alpha_hat: float
    bottleneck: float
    holds: bool


def check_condition_one(data, model):
    """First failure diagnostic, for 2-dense + 1-sparse labeled datasets.

    The sparse cluster is the one with the largest mean nearest-neighbor
    distance. Its peak c is the member with maximal within-cluster similarity
    sum; s_alpha_hat = max over x != c of kappa(x, c). The dense peaks'
    bottleneck is the max-min similarity over paths between them, computed
    via the maximum spanning tree.
    """
    points, labels = _labeled_points(data)
    _check_cap(data.n)
    values, clusters = _cluster_index_lists(labels)
    if len(values) != 3:
        raise DataError(f"condition one needs exactly 3 clusters, got {len(values)}")
    for v, idx in zip(values, clusters):
        if idx.size < 2:
            raise DataError(f"cluster {v!r} has fewer than 2 points")
    S = model.pairwise(points)
    nn_dists = [_mean_nn_dist(points, idx) for idx in clusters]
    sparse_i = int(np.argmax(nn_dists))
    dense_is = [i for i in range(3) if i != sparse_i]
    sparse_peak = _peak_index(S, clusters[sparse_i])
    dense_peaks = tuple(_peak_index(S, clusters[i]) for i in dense_is)
    others = np.ones(data.n, dtype=bool)
    others[sparse_peak] = False
    s_alpha_hat = float(S[sparse_peak, others].max())
    bottleneck = _bottleneck_path_value(S, dense_peaks[0], dense_peaks[1])
    return ConditionOneReport(
        sparse_label=values[sparse_i],
        dense_labels=tuple(values[i] for i in dense_is),
        sparse_peak=sparse_peak,
        dense_peaks=dense_peaks,
        s_alpha_hat=s_alpha_hat,
        bottleneck=bottleneck,
        holds=bool(s_alpha_hat < bottleneck),
    )


@dataclass
class ConditionTwoReport:
    """Is the dense cluster's weakest neighbor link much stronger than the
    sparse cluster's?

    ratio = dense_min / sparse_min, where each minimum is over points x of
    kappa(x, most-similar same-cluster neighbor). holds=True when the ratio
    meets the threshold; "much greater" is operationalized as ratio >= 4 by
    default, with both raw minima reported so callers can re-threshold.
    """

    dense_label: object
    sparse_label: object
    dense_min: float
    sparse_min: float
    ratio: float
    threshold: float
    holds: bool


def check_condition_two(data, model, threshold=4.0):
    """Second failure diagnostic, for overlapping dense + sparse pairs."""
    points, labels = _labeled_points(data)
    _check_cap(data.n)
    values, clusters = _cluster_index_lists(labels)
    if len(values) != 2:
        raise DataError(f"condition two needs exactly 2 clusters, got {len(values)}")
    for v, idx in zip(values, clusters):
        if idx.size < 2:
            raise DataError(f"cluster {v!r} has fewer than 2 points")
    S = model.pairwise(points)
    mins = []
    for idx in clusters:
        sub = S[np.ix_(idx, idx)].copy()
        np.fill_diagonal(sub, -np.inf)
        mins.append(float(sub.max(axis=1).min()))
    nn_dists = [_mean_nn_dist(points, idx) for idx in clusters]
    dense_i = int(np.argmin(nn_dists))
    sparse_i = 1 - dense_i
    dense_min, sparse_min = mins[dense_i], mins[sparse_i]
    if sparse_min > 0:
        ratio = dense_min / sparse_min
    else:
        ratio = np.inf if dense_min > 0 else 1.0
    return ConditionTwoReport(
        dense_label=values[dense_i],
        sparse_label=values[sparse_i],
        dense_min=dense_min,
        sparse_min=sparse_min,
        ratio=float(ratio),
        threshold=float(threshold),
        holds=bool(ratio >= threshold),
    )


# ---------------------------------------------------------------------------
# Correction curve
# ---------------------------------------------------------------------------


@dataclass
class CorrectionPoint:
    corrected: int
    objective: float
    ami: float


@dataclass
class CorrectionCurve:
    batch: int
    seed: int
    points: list

    def column(self, name):
        return np.array([getattr(p, name) for p in self.points])


def _objective_skip_empty(model, features, labels, k):
    """Total own-cluster mass, tolerating empty clusters (they add zero)."""
    total = 0.0
    for j in range(1, k + 1):
        members = np.flatnonzero(labels == j)
        if members.size == 0:
            continue
        cmm = mean_map_from_features(model, features[members])
        total += float(model.mean_similarity(features[members], cmm.mean).sum())
    return total


def correction_curve(data, model, batch, seed):
    """Objective and agreement as a random labeling is corrected in batches.

    Starts from uniformly random labels over the true number of clusters,
    then repeatedly fixes the labels of the next `batch` points (in one fixed
    random order) to ground truth, recording the total-mass objective and the
    adjusted-mutual-information score after every batch. The first record is
    the uncorrected state; the last one is fully corrected.
    """
    points, labels = _labeled_points(data)
    if batch < 1:
        raise ConfigError("batch must be >= 1")
    _, truth01 = np.unique(labels, return_inverse=True)
    truth = truth01.astype(np.int64) + 1
    k = int(truth.max())
    rng = rng_from(seed)
    current = rng.integers(1, k + 1, size=data.n).astype(np.int64)
    order = rng.permutation(data.n)
    features = model.embed(points)

    def record(n_corrected):
        obj = _objective_skip_empty(model, features, current, k)
        return CorrectionPoint(int(n_corrected), obj, ami_score(current, truth))

    series = [record(0)]
    for start in range(0, data.n, batch):
        sl = order[start : start + batch]
        current[sl] = truth[sl]
        series.append(record(min(start + batch, data.n)))
    return CorrectionCurve(int(batch), int(seed), series)


def spearman(a, b):
    """Spearman rank correlation between two series."""
    rho = spearmanr(np.asarray(a, np.float64), np.asarray(b, np.float64)).statistic
    return float(rho)


# ---------------------------------------------------------------------------
# Scaling ladder
# ---------------------------------------------------------------------------


@dataclass
class ScaleReport:
    """Wall-clock ladder and the fitted log-log slope of total time vs n.

    flagged marks sizes whose total ran under the clock floor; those are
    excluded from the fit. The slope uses the upper half of the ladder where
    fixed costs no longer dominate.
    """

    family: str
    sizes: np.ndarray
    stage_seconds: list
    total_seconds: np.ndarray
    flagged: np.ndarray
    fitted_sizes: np.ndarray
    slope: float
    params: object = None
    notes: list = field(default_factory=list)


def scaleup(family, sizes, params, seed=0, warmup=True):
    """Time the full pipeline over a ladder of dataset sizes.

    The ladder needs at least 3 strictly increasing sizes spanning two
    decades. Each size regenerates the synthetic family at that n, normalizes
    it, and runs the isolation-kernel pipeline end to end with fixed
    (s, psi, t, k). A warm-up round at the smallest size absorbs first-call
    overhead. The slope is fit on log10(total seconds) against log10(n) over
    the upper half of the ladder, skipping any size flagged as below the
    clock floor.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.size < 3:
        raise ConfigError("the size ladder needs at least 3 entries")
    if np.any(np.diff(sizes) <= 0):
        raise ConfigError("sizes must be strictly increasing")
    if sizes[-1] < 100 * sizes[0]:
        raise ConfigError("the ladder must span at least two decades")
    params.validate()
    if params.kernel_kind not in ("ik_voronoi", "ik_hypersphere"):
        raise ConfigError("scaleup times the isolation-kernel pipeline")

    def one(n):
        data = normalize_minmax(generate_synthetic(family, int(n), seed))
        tic = time.perf_counter()
        result = run_mmc(data, params)
        total = time.perf_counter() - tic
        return result.stage_seconds, total

    if warmup:
        one(sizes[0])

    stage_seconds = []
    totals = np.empty(sizes.size)
    for i, n in enumerate(sizes):
        stages, total = one(n)
        stage_seconds.append(stages)
        totals[i] = total

    flagged = totals < CLOCK_FLOOR_SECONDS
    notes = [
        f"n={int(sizes[i])} ran under the {CLOCK_FLOOR_SECONDS:g}s clock floor"
        for i in np.flatnonzero(flagged)
    ]
    upper = np.arange(sizes.size) >= sizes.size // 2
    keep = upper & ~flagged
    if keep.sum() < 2:
        raise AlgorithmError("not enough unflagged sizes in the upper half to fit a slope")
    slope = float(
        np.polyfit(np.log10(sizes[keep].astype(np.float64)), np.log10(totals[keep]), 1)[0]
    )
    return ScaleReport(
        family=family,
        sizes=sizes,
        stage_seconds=stage_seconds,
        total_seconds=totals,
        flagged=flagged,
        fitted_sizes=sizes[keep],
        slope=slope,
        params=params,
        notes=notes,
    )
