"""The mass-maximization clustering algorithm and its density twin.

Three steps, shared by both variants:

1. seed: threshold the pairwise similarity graph of a small sample at tau and
   keep the k largest connected components as seed clusters;
2. assign: label every point by the seed cluster of maximal mass (average
   similarity to the seed members);
3. refine: synchronously reassign points against the current cluster mean
   maps, accepting an iteration only if the total-mass objective does not
   decrease.

MMC runs the pipeline with an isolation kernel, DMC with the Nystrom Gaussian
kernel; the algorithm itself is identical, only the kernel model differs.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.csgraph import connected_components

from .data import Dataset, subsample
from .errors import ConfigError, GridSearchError, SeedingError
from .kernels import fit_ik, fit_nystrom
from .massdist import mass_matrix, mean_map_from_features
from .metrics import ami_score, f1_score

__all__ = [
    "KERNEL_KINDS",
    "ClusterParams",
    "SeedClusters",
    "ClusterAssignment",
    "ParamGrid",
    "GridCellResult",
    "GridSearchResult",
    "default_mmc_grid",
    "default_dmc_grid",
    "seed_components",
    "assign_by_mass",
    "refine",
    "run_mmc",
    "run_dmc",
    "grid_search",
]

logger = logging.getLogger(__name__)

KERNEL_KINDS = ("ik_voronoi", "ik_hypersphere", "gaussian_nystrom")


@dataclass(frozen=True)
class ClusterParams:
    """Inputs of one clustering run.

    psi applies to the isolation kernels, sigma to the Gaussian kernel;
    landmarks sets the Nystrom feature dimension. t is the partitioning count
    of the isolation kernel (unused by the Gaussian kernel).
    """

    k: int
    s: int
    tau: float
    kernel_kind: str
    psi: int | None = None
    sigma: float | None = None
    t: int = 200
    landmarks: int = 256
    seed: int = 0
    max_refine_iters: int = 100

    def validate(self):
        if self.kernel_kind not in KERNEL_KINDS:
            raise ConfigError(
                f"kernel_kind must be one of {KERNEL_KINDS}, got {self.kernel_kind!r}"
            )
        if self.k < 1:
            raise ConfigError(f"k={self.k} must be >= 1")
        if self.s < self.k:
            raise ConfigError(f"s={self.s} must be >= k={self.k}")
        if not 0.0 <= self.tau < 1.0:
            raise ConfigError(f"tau={self.tau} must lie in [0, 1)")
        if self.t < 1:
            raise ConfigError(f"t={self.t} must be >= 1")
        if self.max_refine_iters < 0:
            raise ConfigError("max_refine_iters must be >= 0")
        if self.kernel_kind in ("ik_voronoi", "ik_hypersphere"):
            if self.psi is None or self.psi < 1:
                raise ConfigError("isolation kernels need psi >= 1")
        else:
            if self.sigma is None or self.sigma <= 0:
                raise ConfigError("the Gaussian kernel needs sigma > 0")
            if self.landmarks < 1:
                raise ConfigError("landmarks must be >= 1")


@dataclass(frozen=True)
class SeedClusters:
    """The k largest tau-cohesive components of a sample.

    seeds holds dataset indices (sorted ascending within each seed);
    component_sizes lists every component's size, largest first, for
    diagnostics.
    """

    seeds: tuple
    component_sizes: np.ndarray
    tau: float

    @property
    def k(self):
        return len(self.seeds)


@dataclass
class ClusterAssignment:
    """Result of a clustering run: labels in 1..k plus the objective."""

    labels: np.ndarray
    objective: float
    refine_iters_used: int
    per_cluster_sizes: np.ndarray
    objective_per_point: float = 0.0
    stage_seconds: dict = field(default_factory=dict)
    params: ClusterParams | None = None


def build_model(data, params):
    """Fit the kernel model named by params.kernel_kind on the full dataset."""
    params.validate()
    if params.kernel_kind == "ik_voronoi":
        return fit_ik(data, params.psi, params.t, "voronoi", params.seed)
    if params.kernel_kind == "ik_hypersphere":
        return fit_ik(data, params.psi, params.t, "hypersphere", params.seed)
    n = data.n if isinstance(data, Dataset) else len(data)
    return fit_nystrom(data, min(params.landmarks, n), params.sigma, params.seed)


def seed_components(model, data, sample, tau, k, sample_features=None, sample_sims=None):
    """Step 1: the k largest components of the thresholded sample graph.

    Edges require similarity strictly above tau. Components are ranked by
    size, ties broken by the smallest dataset index among members. Fewer than
    k components is a hard error; the caller (typically a grid search over
    tau) decides how to recover.

    sample_features / sample_sims short-circuit the embedding and the sample
    similarity matrix; tau sweeps pass sample_sims to threshold one matrix
    many times.
    """
    if sample.s < k:
        raise ConfigError(f"sample size {sample.s} is smaller than k={k}")
    idx = sample.indices
    if sample_sims is None:
        if sample_features is None:
            pts = data.points if isinstance(data, Dataset) else np.asarray(data)
            sample_features = model.embed(pts[idx])
        sample_sims = model.features_pairwise(sample_features)
    sims = sample_sims
    adj = sims > tau
    np.fill_diagonal(adj, False)
    n_comp, comp = connected_components(sparse.csr_matrix(adj), directed=False)
    if n_comp < k:
        raise SeedingError(found=int(n_comp), needed=k, tau=tau)
    sizes = np.bincount(comp, minlength=n_comp)
    min_member = np.full(n_comp, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(min_member, comp, idx)
    order = np.lexsort((min_member, -sizes))
    seeds = tuple(np.sort(idx[comp == c]) for c in order[:k])
    return SeedClusters(seeds, np.sort(sizes)[::-1], float(tau))


def _seed_mean_maps(model, features_by_index, seeds):
    return [mean_map_from_features(model, features_by_index(q)) for q in seeds.seeds]


def assign_by_mass(model, data, seeds, features=None):
    """Step 2: label every point by the highest-mass seed cluster.

    Ties go to the lowest seed index. Points with zero mass under every seed
    (possible when hypersphere embeddings miss all spheres) fall back to the
    label of their Euclidean-nearest seed member; the fallback count is
    logged.
    """
    pts = data.points if isinstance(data, Dataset) else np.asarray(data, np.float64)
    if features is None:
        features = model.embed(pts)
    cmms = [mean_map_from_features(model, features[q]) for q in seeds.seeds]
    masses = mass_matrix(model, features, cmms)
    labels = masses.argmax(axis=1).astype(np.int64) + 1
    dead = masses.max(axis=1) <= 0.0
    if dead.any():
        member_idx = np.concatenate(seeds.seeds)
        member_lab = np.concatenate(
            [np.full(q.size, j + 1, np.int64) for j, q in enumerate(seeds.seeds)]
        )
        members = pts[member_idx]
        for i in np.flatnonzero(dead):
            diff = members - pts[i]
            d2 = np.einsum("ij,ij->i", diff, diff)
            labels[i] = member_lab[np.argmin(d2)]
        logger.info(
            "zero-mass fallback assigned %d of %d points by nearest seed member",
            int(dead.sum()),
            len(labels),
        )
    return labels


def _own_cluster_objective(masses, labels):
    return float(masses[np.arange(labels.size), labels - 1].sum())


def _masses_for_labels(model, features, labels, k):
    """Mass of every point under every cluster's current mean map.

    Clusters with no members get a -inf column: no point can join a cluster
    that has no mean map. (Step 2 can hand step 3 an empty cluster when a
    weak seed loses all of its members to argmax assignment.)
    """
    masses = np.full((len(features), k), -np.inf)
    for j in range(1, k + 1):
        members = labels == j
        if not members.any():
            continue
        cmm = mean_map_from_features(model, features[members])
        masses[:, j - 1] = model.mean_similarity(features, cmm.mean)
    return masses


def refine(model, data, labels, max_iters, features=None):
    """Step 3: synchronous reassignment until a fixed point or no improvement.

    Each iteration freezes the current mean maps, reassigns every point to
    its argmax-mass cluster (lowest index on ties), then accepts the result
    only if the total-mass objective did not decrease; a decrease reverts and
    stops. A cluster that would be emptied keeps its single highest-mass
    member pinned; a cluster that arrives empty stays empty. The reported
    objective is therefore never below the initial one.
    """
    pts = data.points if isinstance(data, Dataset) else np.asarray(data, np.float64)
    if features is None:
        features = model.embed(pts)
    labels = np.asarray(labels, dtype=np.int64).copy()
    k = int(labels.max())
    masses = _masses_for_labels(model, features, labels, k)
    obj = _own_cluster_objective(masses, labels)
    iters_used = 0
    for _ in range(max_iters):
        cand = masses.argmax(axis=1).astype(np.int64) + 1
        cand_counts = np.bincount(cand, minlength=k + 1)[1:]
        for j in np.flatnonzero(cand_counts == 0) + 1:
            members = np.flatnonzero(labels == j)
            if members.size == 0:
                continue  # cluster was handed to us empty; it stays empty
            pin = members[np.argmax(masses[members, j - 1])]
            cand[pin] = j
        if np.array_equal(cand, labels):
            break
        cand_masses = _masses_for_labels(model, features, cand, k)
        cand_obj = _own_cluster_objective(cand_masses, cand)
        if cand_obj < obj:
            break
        labels, masses, obj = cand, cand_masses, cand_obj
        iters_used += 1
    sizes = np.bincount(labels, minlength=k + 1)[1:]
    return ClusterAssignment(
        labels=labels,
        objective=obj,
        refine_iters_used=iters_used,
        per_cluster_sizes=sizes,
        objective_per_point=obj / labels.size,
    )


def _run_pipeline(data, params, model=None):
    timings = {}
    tic = time.perf_counter()
    if model is None:
        model = build_model(data, params)
    timings["fit"] = time.perf_counter() - tic

    tic = time.perf_counter()
    features = model.embed(data.points)
    timings["embed"] = time.perf_counter() - tic

    tic = time.perf_counter()
    sample = subsample(data, params.s, params.seed)
    seeds = seed_components(
        model,
        data,
        sample,
        params.tau,
        params.k,
        sample_features=features[sample.indices],
    )
    timings["seed"] = time.perf_counter() - tic

    tic = time.perf_counter()
    labels0 = assign_by_mass(model, data, seeds, features=features)
    timings["assign"] = time.perf_counter() - tic

    tic = time.perf_counter()
    result = refine(model, data, labels0, params.max_refine_iters, features=features)
    timings["refine"] = time.perf_counter() - tic

    result.stage_seconds = timings
    result.params = params
    return result


def run_mmc(data, params, model=None):
    """Mass-maximization clustering end to end with an isolation kernel.

    Fits the kernel on the full dataset, seeds on a subsample, assigns by
    mass, refines. Deterministic per (data, params). A prefitted model may be
    passed to skip the fit stage.
    """
    params.validate()
    if params.kernel_kind not in ("ik_voronoi", "ik_hypersphere"):
        raise ConfigError(
            f"run_mmc needs an isolation kernel_kind, got {params.kernel_kind!r}"
        )
    return _run_pipeline(data, params, model=model)


def run_dmc(data, params, model=None):
    """Density-maximization clustering: the same pipeline, Gaussian kernel."""
    params.validate()
    if params.kernel_kind != "gaussian_nystrom":
        raise ConfigError(
            f"run_dmc needs kernel_kind='gaussian_nystrom', got {params.kernel_kind!r}"
        )
    return _run_pipeline(data, params, model=model)


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamGrid:
    """A kernel-parameter axis crossed with a tau axis."""

    kernel_values: tuple
    taus: tuple

    def __post_init__(self):
        if len(self.kernel_values) < 1 or len(self.taus) < 1:
            raise ConfigError("grid axes must be non-empty")
        object.__setattr__(self, "kernel_values", tuple(self.kernel_values))
        object.__setattr__(self, "taus", tuple(float(v) for v in self.taus))


def _default_taus():
    return tuple(np.round(np.arange(1, 20) * 0.05, 2))


def default_mmc_grid():
    """psi in {2,4,6,8,16,24,32,64,128,256} crossed with tau in 0.05..0.95."""
    return ParamGrid((2, 4, 6, 8, 16, 24, 32, 64, 128, 256), _default_taus())


def default_dmc_grid():
    """sigma in {2^-5 .. 2^5} crossed with tau in 0.05..0.95."""
    return ParamGrid(tuple(float(2.0**i) for i in range(-5, 6)), _default_taus())


@dataclass
class GridCellResult:
    """Outcomes of all trials at one (kernel value, tau) cell."""

    kernel_param: str
    kernel_value: float
    tau: float
    f1_by_trial: list
    ami_by_trial: list
    objective_per_point_by_trial: list
    errors_by_trial: list

    @property
    def n_failed(self):
        return sum(e is not None for e in self.errors_by_trial)

    @property
    def succeeded(self):
        return self.n_failed < len(self.errors_by_trial)

    def _mean(self, values):
        ok = [v for v in values if v is not None]
        return float(np.mean(ok)) if ok else None

    @property
    def mean_f1(self):
        return self._mean(self.f1_by_trial)

    @property
    def mean_ami(self):
        return self._mean(self.ami_by_trial)

    @property
    def mean_objective_per_point(self):
        return self._mean(self.objective_per_point_by_trial)


@dataclass
class GridSearchResult:
    """Full table of grid cells plus the winning cell and its assignment."""

    algorithm: str
    trials: int
    cells: list
    best_cell: GridCellResult
    best: ClusterAssignment
    scored_by: str  # "f1" or "objective"


def trial_seed(seed, trial):
    """Stable per-trial seed derived from the base seed."""
    state = np.random.SeedSequence((int(seed), int(trial))).generate_state(1)
    return int(state[0])


def _params_for(base, algorithm, kernel_value, tau, seed):
    if algorithm == "mmc":
        return replace(base, psi=int(kernel_value), tau=tau, seed=seed)
    return replace(base, sigma=float(kernel_value), tau=tau, seed=seed)


def _sweep_taus(data, base, algorithm, kernel_value, seed, taus):
    """Fit one kernel, embed once, then run the pipeline at every tau."""
    first = _params_for(base, algorithm, kernel_value, taus[0], seed)
    model = build_model(data, first)
    features = model.embed(data.points)
    sample = subsample(data, base.s, seed)
    sample_sims = model.features_pairwise(features[sample.indices])
    outcomes = []
    for tau in taus:
        params = _params_for(base, algorithm, kernel_value, tau, seed)
        try:
            seeds = seed_components(
                model, data, sample, tau, base.k, sample_sims=sample_sims
            )
            labels0 = assign_by_mass(model, data, seeds, features=features)
            result = refine(
                model, data, labels0, base.max_refine_iters, features=features
            )
        except SeedingError as exc:
            outcomes.append((tau, None, None, None, str(exc)))
            continue
        f1 = ami = None
        if data.labels is not None:
            f1 = f1_score(result.labels, data.labels)
            ami = ami_score(result.labels, data.labels)
        outcomes.append((tau, f1, ami, result.objective_per_point, None))
    return outcomes


def _sweep_task(args):
    (points, labels, name, base, algorithm, kernel_value, seed, taus) = args
    data = Dataset(points, labels, name)
    return _sweep_taus(data, base, algorithm, kernel_value, seed, taus)


def grid_search(data, algorithm, base, grid=None, trials=5, workers=1):
    """Evaluate a (kernel value x tau) grid over several trial seeds.

    Parameters
    ----------
    data : Dataset
    algorithm : {"mmc", "dmc"}
        Chooses the kernel axis meaning: psi for mmc, sigma for dmc. For mmc
        the mechanism comes from base.kernel_kind.
    base : ClusterParams
        Fixed fields (k, s, t, landmarks, seed, max_refine_iters); psi or
        sigma and tau are overridden per cell, the seed per trial.
    grid : ParamGrid, optional
        Defaults to the standard grid of the chosen algorithm.
    trials : int
        Trial count; each trial reseeds sampling and kernel fitting.
    workers : int
        Process count for parallel (kernel value, trial) sweeps. Results are
        identical for any worker count.

    Returns
    -------
    GridSearchResult
        Cells are scored by mean F1 when the dataset has labels, else by mean
        per-point objective; the best cell's best trial is re-run to produce
        the returned assignment. Raises GridSearchError if every cell failed.
    """
    if algorithm not in ("mmc", "dmc"):
        raise ConfigError(f"algorithm must be 'mmc' or 'dmc', got {algorithm!r}")
    if algorithm == "mmc" and base.kernel_kind not in ("ik_voronoi", "ik_hypersphere"):
        raise ConfigError("mmc grid search needs an isolation kernel_kind in base")
    if algorithm == "dmc" and base.kernel_kind != "gaussian_nystrom":
        raise ConfigError("dmc grid search needs kernel_kind='gaussian_nystrom'")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if grid is None:
        grid = default_mmc_grid() if algorithm == "mmc" else default_dmc_grid()
    # probe-validate one cell's params before any expensive work
    _params_for(base, algorithm, grid.kernel_values[0], grid.taus[0], 0).validate()

    seeds = [trial_seed(base.seed, r) for r in range(trials)]
    tasks = [
        (kv, r)
        for kv in grid.kernel_values
        for r in range(trials)
    ]
    sweeps = {}
    if workers > 1:
        payloads = [
            (data.points, data.labels, data.name, base, algorithm, kv, seeds[r], grid.taus)
            for kv, r in tasks
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (kv, r), outcome in zip(tasks, pool.map(_sweep_task, payloads)):
                sweeps[(kv, r)] = outcome
    else:
        for kv, r in tasks:
            sweeps[(kv, r)] = _sweep_taus(
                data, base, algorithm, kv, seeds[r], grid.taus
            )

    param_name = "psi" if algorithm == "mmc" else "sigma"
    cells = []
    for kv in grid.kernel_values:
        for ti, tau in enumerate(grid.taus):
            rows = [sweeps[(kv, r)][ti] for r in range(trials)]
            cells.append(
                GridCellResult(
                    kernel_param=param_name,
                    kernel_value=float(kv),
                    tau=float(tau),
                    f1_by_trial=[row[1] for row in rows],
                    ami_by_trial=[row[2] for row in rows],
                    objective_per_point_by_trial=[row[3] for row in rows],
                    errors_by_trial=[row[4] for row in rows],
                )
            )

    scored_by = "f1" if data.labels is not None else "objective"
    live = [c for c in cells if c.succeeded]
    if not live:
        raise GridSearchError(cells)

    def score(cell):
        return cell.mean_f1 if scored_by == "f1" else cell.mean_objective_per_point

    best_cell = max(live, key=score)  # max keeps the first of equals

    # rerun the best cell's best trial to materialize its assignment
    per_trial = [
        (cell_trial_value, r)
        for r, cell_trial_value in enumerate(
            best_cell.f1_by_trial if scored_by == "f1"
            else best_cell.objective_per_point_by_trial
        )
        if cell_trial_value is not None
    ]
    best_value, best_trial = max(per_trial, key=lambda v: (v[0], -v[1]))
    params = _params_for(
        base, algorithm, best_cell.kernel_value, best_cell.tau, seeds[best_trial]
    )
    runner = run_mmc if algorithm == "mmc" else run_dmc
    best = runner(data, params)
    return GridSearchResult(
        algorithm=algorithm,
        trials=trials,
        cells=cells,
        best_cell=best_cell,
        best=best,
        scored_by=scored_by,
    )
