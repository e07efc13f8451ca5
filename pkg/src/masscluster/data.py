"""Dataset containers, CSV I/O, min-max normalization, and synthetic generators.

All randomness flows through Philox, a counter-based PRNG: a (seed, *stream)
tuple fully determines every draw, independent of platform, call order, or
worker schedule.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "Dataset",
    "SampleSet",
    "SYNTHETIC_FAMILIES",
    "rng_from",
    "load_csv",
    "save_csv",
    "normalize_minmax",
    "subsample",
    "generate_synthetic",
]


def rng_from(seed, *stream):
    """Return a Philox-backed Generator keyed by (seed, *stream).

    Philox is counter-based, so streams derived from distinct key tuples are
    independent and reproducible regardless of how calls are scheduled.
    """
    entropy = (int(seed),) + tuple(int(v) for v in stream)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class Dataset:
    """An immutable n x d point matrix with optional ground-truth labels.

    Parameters
    ----------
    points : (n, d) array_like of float
        Point coordinates.
    labels : (n,) array_like, optional
        Per-point class identifiers.
    name : str
        Free-form tag carried through pipelines and manifests.
    """

    points: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise DataError(f"points must be 2-d, got shape {pts.shape}")
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DataError(f"need n >= 1 and d >= 1, got shape {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (pts.shape[0],):
                raise DataError(
                    f"labels have shape {lab.shape}, expected ({pts.shape[0]},)"
                )
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class SampleSet:
    """Distinct indices into a Dataset, plus the seed that drew them."""

    indices: np.ndarray
    seed: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size < 1:
            raise DataError(f"indices must be a non-empty 1-d array, got {idx.shape}")
        if len(np.unique(idx)) != idx.size:
            raise DataError("sample indices must be distinct")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def s(self):
        return self.indices.size


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, label_column=None):
    """Load a comma-separated file into an un-normalized Dataset.

    A header row is detected by the presence of any non-numeric cell in the
    first row. The decimal separator is '.'. `label_column` selects the label
    column by header name or by zero-based index (the only option for
    headerless files); integer-looking labels are stored as int64, anything
    else as strings.

    Raises
    ------
    DataError
        Missing file, empty file, ragged rows, a missing label column, or a
        non-numeric feature cell; row numbers refer to lines in the file.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        raw = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if row]
    if not raw:
        raise DataError(f"{path}: file contains no rows")

    header = None
    if not all(_is_number(c) for c in raw[0][1]):
        header = [c.strip() for c in raw[0][1]]
        raw = raw[1:]
        if not raw:
            raise DataError(f"{path}: header only, no data rows")

    arity = len(raw[0][1])
    label_idx = None
    if label_column is not None:
        if isinstance(label_column, (int, np.integer)):
            if not 0 <= label_column < arity:
                raise DataError(
                    f"{path}: label column index {label_column} is out of range "
                    f"for {arity} columns"
                )
            label_idx = int(label_column)
        else:
            if header is None:
                raise DataError(
                    f"{path}: label column {label_column!r} requested but the file "
                    "has no header row"
                )
            if label_column not in header:
                raise DataError(f"{path}: no column named {label_column!r} in header")
            label_idx = header.index(label_column)
    features = []
    labels = []
    for line_no, row in raw:
        if len(row) != arity:
            raise DataError(
                f"{path}: row {line_no} has {len(row)} cells, expected {arity}"
            )
        feat = []
        for j, cell in enumerate(row):
            if j == label_idx:
                labels.append(cell.strip())
                continue
            try:
                feat.append(float(cell))
            except ValueError:
                raise DataError(
                    f"{path}: row {line_no}: non-numeric feature value {cell!r}"
                ) from None
        features.append(feat)

    pts = np.asarray(features, dtype=np.float64)
    lab = None
    if label_idx is not None:
        try:
            lab = np.asarray([int(v) for v in labels], dtype=np.int64)
        except ValueError:
            lab = np.asarray(labels)
    return Dataset(pts, lab, name=path.stem)


def save_csv(data, path):
    """Write a Dataset to CSV with a header, labels as a trailing int column.

    The write is atomic: content lands in a temp file that is renamed over
    the target, so interrupted runs leave no partial file under `path`.
    """
    path = Path(path)
    header = [f"f{j}" for j in range(data.d)]
    if data.labels is not None:
        header.append("label")
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(data.n):
                row = [repr(float(v)) for v in data.points[i]]
                if data.labels is not None:
                    row.append(str(data.labels[i]))
                writer.writerow(row)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def normalize_minmax(data):
    """Rescale each feature column to [0, 1] by (x - min) / (max - min).

    Constant columns map to 0 everywhere; they carry no distance information,
    and mapping them to a constant avoids a zero division. The map is
    idempotent: normalizing twice equals normalizing once.
    """
    pts = data.points
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    out = np.zeros_like(pts)
    nz = span > 0
    out[:, nz] = (pts[:, nz] - lo[nz]) / span[nz]
    return Dataset(out, data.labels, data.name)


def subsample(data, s, seed):
    """Draw s distinct indices uniformly without replacement.

    Deterministic per (n, s, seed); s = n yields a permutation of all indices.
    """
    n = data.n
    if not 1 <= s <= n:
        raise ConfigError(f"sample size s={s} must satisfy 1 <= s <= n={n}")
    idx = rng_from(seed).choice(n, size=s, replace=False)
    return SampleSet(idx, int(seed))


# ---------------------------------------------------------------------------
# Synthetic families
# ---------------------------------------------------------------------------

SYNTHETIC_FAMILIES = (
    "two_gaussians_varied_density",
    "three_gaussians_3G",
    "ring_gaussians_RingG",
    "subspace_gaussian",
    "scaleup_arc_mix",
)

_FAMILY_CLUSTERS = {
    "two_gaussians_varied_density": 2,
    "three_gaussians_3G": 3,
    "ring_gaussians_RingG": 4,
    "subspace_gaussian": 2,
    "scaleup_arc_mix": 3,
}


def _split_sizes(n, weights):
    """Apportion n into len(weights) positive integer parts, deterministically."""
    k = len(weights)
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    base = np.ones(k, dtype=np.int64)
    rest = n - k
    extra = np.floor(rest * w).astype(np.int64)
    base += extra
    short = n - int(base.sum())
    # hand leftovers to the largest fractional remainders, lowest index first
    frac = rest * w - extra
    order = np.lexsort((np.arange(k), -frac))
    for i in range(short):
        base[order[i % k]] += 1
    return base


def _gauss_blob(rng, size, mean, sd, trunc=None):
    """Gaussian blob; trunc (in units of sd) resamples draws beyond that radius."""
    mean = np.asarray(mean, dtype=np.float64)
    pts = rng.normal(loc=mean, scale=sd, size=(size, mean.size))
    if trunc is not None:
        lim = (trunc * sd) ** 2
        while True:
            bad = ((pts - mean) ** 2).sum(axis=1) > lim
            if not bad.any():
                break
            pts[bad] = rng.normal(loc=mean, scale=sd, size=(int(bad.sum()), mean.size))
    return pts


def _sparse_blob(rng, size, mean, sd, r_min):
    """Gaussian blob with a minimum-separation floor between its points.

    Greedy rejection: candidates are drawn from the Gaussian and kept only
    when at least r_min from every accepted point, so the blob is sparse
    everywhere rather than just sparse on average. If a batch round adds
    nothing the floor is relaxed by 10% to guarantee termination.
    """
    mean = np.asarray(mean, dtype=np.float64)
    accepted = np.empty((size, mean.size))
    count = 0
    r = float(r_min)
    while count < size:
        cand = rng.normal(loc=mean, scale=sd, size=(4 * size, mean.size))
        before = count
        for c in cand:
            if count == size:
                break
            diff = accepted[:count] - c
            if count and (np.einsum("ij,ij->i", diff, diff).min() < r * r):
                continue
            accepted[count] = c
            count += 1
        if count == before:
            r *= 0.9
    return accepted


def _ring(rng, size, center, radius, sd):
    theta = rng.uniform(0.0, 2.0 * np.pi, size=size)
    r = radius + rng.normal(0.0, sd, size=size)
    return np.column_stack(
        (center[0] + r * np.cos(theta), center[1] + r * np.sin(theta))
    )


def _gen_two_gaussians(rng, n):
    sizes = _split_sizes(n, (0.5, 0.5))
    dense = _gauss_blob(rng, sizes[0], (0.30, 0.50), 0.035)
    sparse = _gauss_blob(rng, sizes[1], (0.60, 0.50), 0.16)
    return np.vstack((dense, sparse)), np.repeat([1, 2], sizes)


def _gen_three_gaussians(rng, n):
    # Two adjacent dense blobs sitting inside one broad sparse cloud. The
    # cloud is sparse everywhere (separation floor above the dense bridge
    # gaps), so no distance threshold isolates it before the dense pair
    # merges, and under a fixed-width kernel the cloud's interior is always
    # nearer in similarity to a dense blob than to its own diffuse cluster.
    sizes = _split_sizes(n, (0.4, 0.4, 0.2))
    a = _gauss_blob(rng, sizes[0], (0.32, 0.38), 0.03, trunc=2.0)
    b = _gauss_blob(rng, sizes[1], (0.433, 0.38), 0.03, trunc=2.0)
    sparse = _sparse_blob(rng, sizes[2], (0.42, 0.47), 0.28, r_min=0.035)
    return np.vstack((a, b, sparse)), np.repeat([1, 2, 3], sizes)


def _gen_ring_gaussians(rng, n):
    sizes = _split_sizes(n, (0.25, 0.25, 0.25, 0.25))
    blob1 = _gauss_blob(rng, sizes[0], (0.42, 0.50), 0.025)
    blob2 = _gauss_blob(rng, sizes[1], (0.58, 0.50), 0.025)
    inner = _ring(rng, sizes[2], (0.5, 0.5), 0.30, 0.008)
    outer = _ring(rng, sizes[3], (0.5, 0.5), 0.44, 0.008)
    return np.vstack((blob1, blob2, inner, outer)), np.repeat([1, 2, 3, 4], sizes)


def _gen_subspace_gaussian(rng, n, d_noise):
    # Two same-variance clusters, each spreading in its own half of the
    # dimensions and staying tight in the other half. In high dimensions the
    # spread half concentrates on a thin shell, so pairwise distances look
    # alike while local neighborhoods still separate the clusters.
    if d_noise < 1:
        raise ConfigError(f"d_noise must be >= 1, got {d_noise}")
    sizes = _split_sizes(n, (0.5, 0.5))
    d = 2 * d_noise
    spread, tight = 0.15, 0.05
    pts = np.empty((n, d))
    c1 = slice(0, sizes[0])
    c2 = slice(sizes[0], n)
    pts[c1, :d_noise] = rng.normal(0.5, spread, size=(sizes[0], d_noise))
    pts[c1, d_noise:] = rng.normal(0.5, tight, size=(sizes[0], d_noise))
    pts[c2, :d_noise] = rng.normal(0.5, tight, size=(sizes[1], d_noise))
    pts[c2, d_noise:] = rng.normal(0.5, spread, size=(sizes[1], d_noise))
    return pts, np.repeat([1, 2], sizes)


def _gen_scaleup_arc_mix(rng, n):
    sizes = _split_sizes(n, (0.4, 0.35, 0.25))
    a = _gauss_blob(rng, sizes[0], (0.22, 0.28), 0.05)
    b = _gauss_blob(rng, sizes[1], (0.72, 0.30), 0.07)
    theta = rng.uniform(np.pi / 6, 5 * np.pi / 6, size=sizes[2])
    r = 0.42 + rng.normal(0.0, 0.015, size=sizes[2])
    arc = np.column_stack((0.5 + r * np.cos(theta), 0.35 + r * np.sin(theta)))
    return np.vstack((a, b, arc)), np.repeat([1, 2, 3], sizes)


def generate_synthetic(family, n, seed, d_noise=10):
    """Generate a labeled synthetic Dataset.

    Parameters
    ----------
    family : str
        One of SYNTHETIC_FAMILIES. `two_gaussians_varied_density` is a dense
        blob with a sparse blob overlapping its flank; `three_gaussians_3G`
        is two adjacent dense blobs inside one broad sparse cloud;
        `ring_gaussians_RingG` is two dense blobs inside two sparse
        concentric rings; `subspace_gaussian` is two same-variance clusters
        in 2 * d_noise dimensions, each spreading in its own half of the
        dimensions; `scaleup_arc_mix` is two blobs plus an arc, intended for
        timing ladders at arbitrary n.
    n : int
        Total point count, apportioned across the family's clusters.
    seed : int
        Generator seed; output is deterministic per (family, n, seed).
    d_noise : int
        Per-cluster signal dimension count for `subspace_gaussian` only.

    Returns
    -------
    Dataset
        With integer labels 1..k, every cluster non-empty.
    """
    if family not in SYNTHETIC_FAMILIES:
        raise ConfigError(
            f"unknown family {family!r}; choose from {', '.join(SYNTHETIC_FAMILIES)}"
        )
    k = _FAMILY_CLUSTERS[family]
    if n < k:
        raise DataError(f"family {family!r} has {k} clusters; n={n} is too small")
    fam_idx = SYNTHETIC_FAMILIES.index(family)
    rng = rng_from(seed, fam_idx, n)
    if family == "two_gaussians_varied_density":
        pts, lab = _gen_two_gaussians(rng, n)
    elif family == "three_gaussians_3G":
        pts, lab = _gen_three_gaussians(rng, n)
    elif family == "ring_gaussians_RingG":
        pts, lab = _gen_ring_gaussians(rng, n)
    elif family == "subspace_gaussian":
        pts, lab = _gen_subspace_gaussian(rng, n, d_noise)
    else:
        pts, lab = _gen_scaleup_arc_mix(rng, n)
    name = family if family != "subspace_gaussian" else f"{family}_{d_noise}"
    return Dataset(pts, lab.astype(np.int64), name=name)
