"""Kernel models with finite-dimensional feature maps.

Two families are provided. The isolation kernel is data dependent: it scores
two points by how often they fall into the same cell across t random
partitionings of space, each induced by psi points sampled from the fit data.
The Gaussian kernel is data independent; a Nystrom landmark approximation
gives it a finite feature map so that both kernels drive the same
feature-space clustering pipeline.

Isolation-kernel feature vectors are stored as t block indices (int16, -1 for
a hypersphere miss) rather than t * psi explicit bits. A dot product is then
a count of matching non-miss blocks, which keeps similarity values exact
integer counts divided by t and keeps the pipeline linear-time.

Every model exposes the same feature-space surface used by the mass and
clustering modules:

- ``embed(X)``: points to features,
- ``features_pairwise(FX, FY)``: similarity matrix from features,
- ``accumulate(F)`` / ``accumulate_one(sums, row, sign)``: dense feature sums
  for mean maps,
- ``mean_similarity(F, mean_arr)``: similarity of each feature row to a dense
  mean map,
- ``pairwise(X, Y)``: point-space similarity matrix (kernel values).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, rng_from
from .errors import ConfigError, DataError

__all__ = [
    "MECHANISMS",
    "IsolationKernelModel",
    "NystromGaussianModel",
    "GaussianKernelExact",
    "fit_ik",
    "embed_ik",
    "ik_similarity",
    "fit_nystrom",
    "embed_nystrom",
    "save_model",
    "load_model",
]

MECHANISMS = ("voronoi", "hypersphere")

MODEL_FORMAT_VERSION = 1


def _as_points(x, d=None):
    """Coerce to a (n, d) float64 matrix; remember if input was a single point."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DataError(f"expected a point or point matrix, got shape {arr.shape}")
    if d is not None and arr.shape[1] != d:
        raise DataError(f"point dimension {arr.shape[1]} does not match model d={d}")
    return np.ascontiguousarray(arr), single


def _sq_dists(A, B):
    """Squared Euclidean distances between row sets, clipped at 0."""
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _dataset_points(data):
    return data.points if isinstance(data, Dataset) else np.asarray(data, np.float64)


@dataclass(frozen=True)
class IsolationKernelModel:
    """A fitted isolation kernel: t partitionings of psi centers each.

    For the voronoi mechanism a point always falls in the cell of its nearest
    center. For the hypersphere mechanism each center's sphere reaches to its
    nearest neighbor within the same psi-sample; a point falls in the sphere
    of the nearest center among those whose spheres contain it, or nowhere.
    """

    mechanism: str
    centers: np.ndarray  # (t, psi, d)
    radii_sq: np.ndarray | None  # (t, psi), hypersphere only
    seed: int

    def __post_init__(self):
        sq = np.einsum("tpj,tpj->tp", self.centers, self.centers)
        object.__setattr__(self, "_center_sq", sq)

    @property
    def t(self):
        return self.centers.shape[0]

    @property
    def psi(self):
        return self.centers.shape[1]

    @property
    def d(self):
        return self.centers.shape[2]

    @property
    def feature_shape(self):
        return (self.t, self.psi)

    def embed(self, X):
        """Map points to (n, t) int16 block indices; -1 marks a sphere miss."""
        X, single = _as_points(X, self.d)
        n = X.shape[0]
        out = np.empty((n, self.t), dtype=np.int16)
        chunk = max(256, (1 << 22) // max(self.psi, 1))
        voronoi = self.mechanism == "voronoi"
        for lo in range(0, n, chunk):
            hi = min(n, lo + chunk)
            xc = X[lo:hi]
            xx = np.einsum("ij,ij->i", xc, xc)
            for i in range(self.t):
                d2 = xx[:, None] + self._center_sq[i][None, :] - 2.0 * (
                    xc @ self.centers[i].T
                )
                np.maximum(d2, 0.0, out=d2)
                if voronoi:
                    out[lo:hi, i] = np.argmin(d2, axis=1)
                else:
                    inside = d2 <= self.radii_sq[i][None, :]
                    d2[~inside] = np.inf
                    blocks = np.argmin(d2, axis=1).astype(np.int16)
                    blocks[~inside.any(axis=1)] = -1
                    out[lo:hi, i] = blocks
        return out[0] if single else out

    def features_pairwise(self, FX, FY=None):
        """Similarity matrix from block-index features: matching blocks / t."""
        FX = np.atleast_2d(FX)
        FY = FX if FY is None else np.atleast_2d(FY)
        nx, ny = FX.shape[0], FY.shape[0]
        out = np.empty((nx, ny), dtype=np.float64)
        rows = max(1, (1 << 26) // max(ny * self.t, 1))
        for lo in range(0, nx, rows):
            hi = min(nx, lo + rows)
            eq = (FX[lo:hi, None, :] == FY[None, :, :]) & (FX[lo:hi, None, :] >= 0)
            out[lo:hi] = eq.sum(axis=2)
        out /= self.t
        return out

    def accumulate(self, F):
        """Sum block-index features into a dense (t, psi) count table."""
        F = np.atleast_2d(F)
        valid = F >= 0
        flat = (F.astype(np.int64) + np.arange(self.t)[None, :] * self.psi)[valid]
        counts = np.bincount(flat, minlength=self.t * self.psi)
        return counts.reshape(self.t, self.psi).astype(np.float64)

    def accumulate_one(self, sums, row, sign):
        valid = row >= 0
        sums[np.arange(self.t)[valid], row[valid].astype(np.int64)] += sign

    def mean_similarity(self, F, mean_arr):
        """Similarity of each feature row to a dense (t, psi) mean map."""
        F = np.atleast_2d(F)
        valid = F >= 0
        idx = np.where(valid, F, 0).astype(np.int64)
        vals = mean_arr[np.arange(self.t)[None, :], idx]
        vals[~valid] = 0.0
        return vals.sum(axis=1) / self.t

    def pairwise(self, X, Y=None):
        """Kernel values between point sets (embed, then feature dot / t)."""
        FX = np.atleast_2d(self.embed(X))
        FY = None if Y is None else np.atleast_2d(self.embed(Y))
        return self.features_pairwise(FX, FY)


def fit_ik(data, psi, t, mechanism, seed):
    """Fit an isolation kernel on a dataset.

    Each of the t partitionings draws psi points uniformly without
    replacement, with a per-partitioning Philox stream derived from
    (seed, partitioning index), so fitting is reproducible under any
    parallel schedule.
    """
    X = _dataset_points(data)
    n = X.shape[0]
    if mechanism not in MECHANISMS:
        raise ConfigError(f"mechanism must be one of {MECHANISMS}, got {mechanism!r}")
    if not 1 <= psi <= n:
        raise ConfigError(f"psi={psi} must satisfy 1 <= psi <= n={n}")
    if t < 1:
        raise ConfigError(f"t={t} must be >= 1")
    if mechanism == "hypersphere" and psi < 2:
        raise ConfigError("hypersphere radii need psi >= 2 (a center needs a neighbor)")
    idx = np.empty((t, psi), dtype=np.int64)
    for i in range(t):
        idx[i] = rng_from(seed, i).choice(n, size=psi, replace=False)
    centers = np.ascontiguousarray(X[idx])
    radii_sq = None
    if mechanism == "hypersphere":
        radii_sq = np.empty((t, psi), dtype=np.float64)
        for i in range(t):
            d2 = _sq_dists(centers[i], centers[i])
            np.fill_diagonal(d2, np.inf)
            radii_sq[i] = d2.min(axis=1)
    return IsolationKernelModel(mechanism, centers, radii_sq, int(seed))


def embed_ik(model, x):
    """Feature vector(s) of x: (t,) block indices for one point, (n, t) for a batch."""
    return model.embed(x)


def ik_similarity(model, x, y):
    """Isolation-kernel similarity: matching non-miss blocks divided by t.

    Accepts single points (returns a float) or batches (returns a matrix).
    """
    FX = model.embed(x)
    FY = model.embed(y)
    if FX.ndim == 1 and FY.ndim == 1:
        match = (FX == FY) & (FX >= 0)
        return float(np.count_nonzero(match)) / model.t
    return model.features_pairwise(np.atleast_2d(FX), np.atleast_2d(FY))


@dataclass(frozen=True)
class NystromGaussianModel:
    """Gaussian kernel with a Nystrom landmark feature map.

    Feature dot products approximate exp(-||x - y||^2 / (2 sigma^2)); the
    approximation is exact (up to roundoff) when the landmarks span the data.
    """

    landmarks: np.ndarray  # (m, d)
    sigma: float
    whitening: np.ndarray  # (m, m) symmetric inverse square root of the Gram
    seed: int

    @property
    def m(self):
        return self.landmarks.shape[0]

    @property
    def d(self):
        return self.landmarks.shape[1]

    @property
    def feature_shape(self):
        return (self.m,)

    def _kernel_to_landmarks(self, X):
        d2 = _sq_dists(X, self.landmarks)
        return np.exp(-d2 / (2.0 * self.sigma**2))

    def embed(self, X):
        """Map points to (n, m) dense features."""
        X, single = _as_points(X, self.d)
        out = self._kernel_to_landmarks(X) @ self.whitening
        return out[0] if single else out

    def features_pairwise(self, FX, FY=None):
        FX = np.atleast_2d(FX)
        FY = FX if FY is None else np.atleast_2d(FY)
        return FX @ FY.T

    def accumulate(self, F):
        return np.atleast_2d(F).sum(axis=0)

    def accumulate_one(self, sums, row, sign):
        sums += sign * row

    def mean_similarity(self, F, mean_arr):
        return np.atleast_2d(F) @ mean_arr

    def pairwise(self, X, Y=None):
        FX = np.atleast_2d(self.embed(X))
        FY = None if Y is None else np.atleast_2d(self.embed(Y))
        return self.features_pairwise(FX, FY)


EIGENVALUE_FLOOR = 1e-10


def fit_nystrom(data, landmarks, sigma, seed):
    """Fit a Nystrom Gaussian model with uniformly drawn landmarks.

    The whitening matrix is V diag(max(lambda, floor))^(-1/2) V^T from the
    eigendecomposition of the landmark Gram matrix; the floor (1e-10) keeps
    duplicate or near-duplicate landmarks from blowing up the inverse.
    """
    X = _dataset_points(data)
    n = X.shape[0]
    if sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    if not 1 <= landmarks <= n:
        raise ConfigError(f"landmarks={landmarks} must satisfy 1 <= landmarks <= n={n}")
    idx = rng_from(seed, 0).choice(n, size=landmarks, replace=False)
    L = np.ascontiguousarray(X[idx])
    gram = np.exp(-_sq_dists(L, L) / (2.0 * sigma**2))
    lam, V = np.linalg.eigh(gram)
    lam = np.maximum(lam, EIGENVALUE_FLOOR)
    whitening = (V / np.sqrt(lam)) @ V.T
    return NystromGaussianModel(L, float(sigma), whitening, int(seed))


def embed_nystrom(model, x):
    """Dense feature vector(s) of x under the Nystrom map."""
    return model.embed(x)


@dataclass(frozen=True)
class GaussianKernelExact:
    """Exact Gaussian kernel, for pairwise analysis only (no feature map)."""

    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")

    def pairwise(self, X, Y=None):
        X, _ = _as_points(X)
        Y = X if Y is None else _as_points(Y, X.shape[1])[0]
        return np.exp(-_sq_dists(X, Y) / (2.0 * self.sigma**2))


def save_model(model, path):
    """Serialize a fitted kernel model to a versioned .npz archive."""
    path = Path(path)
    if isinstance(model, IsolationKernelModel):
        payload = dict(
            kind="isolation",
            mechanism=model.mechanism,
            centers=model.centers,
            seed=model.seed,
        )
        if model.radii_sq is not None:
            payload["radii_sq"] = model.radii_sq
    elif isinstance(model, NystromGaussianModel):
        payload = dict(
            kind="nystrom_gaussian",
            landmarks=model.landmarks,
            sigma=model.sigma,
            whitening=model.whitening,
            seed=model.seed,
        )
    else:
        raise ConfigError(f"cannot serialize model of type {type(model).__name__}")
    np.savez(path, format_version=MODEL_FORMAT_VERSION, **payload)


def load_model(path):
    """Load a model saved by save_model."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with np.load(path, allow_pickle=False) as archive:
        version = int(archive["format_version"])
        if version != MODEL_FORMAT_VERSION:
            raise DataError(
                f"{path}: format version {version} is not supported "
                f"(expected {MODEL_FORMAT_VERSION})"
            )
        kind = str(archive["kind"])
        if kind == "isolation":
            radii = archive["radii_sq"] if "radii_sq" in archive else None
            return IsolationKernelModel(
                str(archive["mechanism"]),
                archive["centers"],
                radii,
                int(archive["seed"]),
            )
        if kind == "nystrom_gaussian":
            return NystromGaussianModel(
                archive["landmarks"],
                float(archive["sigma"]),
                archive["whitening"],
                int(archive["seed"]),
            )
    raise DataError(f"{path}: unknown model kind {kind!r}")
