"""Command-line front end: cluster, grid, analyze, benchmark, generate.

Artifact conventions, shared by all subcommands:

- every file is written atomically (temp file in the target directory, then
  rename), so interrupted runs never leave partial files under final names;
- labels are CSV with header ``point_index,label``;
- manifests and metrics are ``key: value`` text with schema_version 1 and a
  fixed key order, so reruns diff cleanly; the manifest records every input
  (parameters, seeds, dataset hash) needed to reproduce a run exactly;
- series data (grid tables, curves, timing ladders) are plain CSV.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 algorithm
failure (for example a seeding threshold leaving fewer than k components).
The MASSCLUSTER_WORKERS environment variable, when set, overrides the
--workers flag.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .analysis import (
    check_condition_one,
    check_condition_two,
    cohesiveness_curve,
    correction_curve,
    scaleup,
    spearman,
)
from .clustering import (
    ClusterParams,
    ParamGrid,
    default_dmc_grid,
    default_mmc_grid,
    grid_search,
    run_dmc,
    run_mmc,
)
from .data import (
    SYNTHETIC_FAMILIES,
    Dataset,
    generate_synthetic,
    load_csv,
    normalize_minmax,
    save_csv,
)
from .errors import AlgorithmError, ConfigError, DataError, GridSearchError
from .kernels import GaussianKernelExact, fit_ik, fit_nystrom
from .metrics import ami_score, f1_score

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ALGORITHM = 4


# ---------------------------------------------------------------------------
# Artifact helpers
# ---------------------------------------------------------------------------


def _write_text_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value):
    if value is None:
        return "none"
    if isinstance(value, float):
        return f"{value:.10g}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def _kv_text(pairs):
    return "".join(f"{k}: {_fmt(v)}\n" for k, v in pairs)


def _dataset_sha256(data):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.points).tobytes())
    if data.labels is not None:
        h.update(repr(list(data.labels)).encode())
    return h.hexdigest()


def _write_labels_csv(path, labels):
    lines = ["point_index,label"]
    lines += [f"{i},{lab}" for i, lab in enumerate(labels)]
    _write_text_atomic(path, "\n".join(lines) + "\n")


def _csv_text(header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Shared argument plumbing
# ---------------------------------------------------------------------------


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from exc


def _add_data_args(p, generated_only=False):
    if not generated_only:
        p.add_argument("--data", help="input CSV of points (optionally labeled)")
        p.add_argument(
            "--label-column",
            help="label column in --data, by header name or zero-based index",
        )
    p.add_argument(
        "--family",
        choices=SYNTHETIC_FAMILIES,
        help="synthetic dataset family to generate instead of reading --data",
    )
    p.add_argument("--n", type=int, help="synthetic dataset size")
    p.add_argument(
        "--d-noise",
        type=int,
        default=10,
        help="per-cluster spread dimensions for subspace_gaussian (dataset has 2x this)",
    )
    p.add_argument(
        "--no-normalize",
        action="store_true",
        help="skip per-dimension min-max normalization of the inputs",
    )


def _load_dataset(args):
    has_path = getattr(args, "data", None) is not None
    has_family = args.family is not None
    if has_path == has_family:
        raise ConfigError("provide exactly one of --data or --family")
    if has_family:
        if args.n is None:
            raise ConfigError("--family needs --n")
        data = generate_synthetic(args.family, args.n, args.seed, d_noise=args.d_noise)
        source = [("data_source", "generated"), ("family", args.family),
                  ("generator_n", args.n), ("d_noise", args.d_noise)]
    else:
        label_column = args.label_column
        if label_column is not None and label_column.lstrip("-").isdigit():
            label_column = int(label_column)
        data = load_csv(args.data, label_column=label_column)
        source = [("data_source", os.path.abspath(args.data)),
                  ("family", None), ("generator_n", None), ("d_noise", None)]
    if not args.no_normalize:
        data = normalize_minmax(data)
    source.append(("normalized", not args.no_normalize))
    return data, source


def _workers(args):
    env = os.environ.get("MASSCLUSTER_WORKERS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"MASSCLUSTER_WORKERS must be an integer, got {env!r}") from exc
    return max(1, args.workers)


def _kernel_kind(args):
    if args.algo == "mmc":
        if args.psi is None:
            raise ConfigError("--psi is required with --algo mmc")
        if args.sigma is not None:
            raise ConfigError("--sigma applies only to --algo dmc")
        return "ik_voronoi" if args.mechanism == "voronoi" else "ik_hypersphere"
    if args.sigma is None:
        raise ConfigError("--sigma is required with --algo dmc")
    if args.psi is not None:
        raise ConfigError("--psi applies only to --algo mmc")
    return "gaussian_nystrom"


def _params_from_args(args, kernel_kind):
    return ClusterParams(
        k=args.k,
        s=args.s,
        tau=args.tau,
        kernel_kind=kernel_kind,
        psi=args.psi,
        sigma=args.sigma,
        t=args.t,
        landmarks=args.landmarks,
        seed=args.seed,
        max_refine_iters=args.max_refine_iters,
    )


def _manifest_pairs(command, args, data, source, extra=()):
    pairs = [
        ("schema_version", SCHEMA_VERSION),
        ("tool", "masscluster"),
        ("tool_version", __version__),
        ("command", command),
    ]
    pairs += source
    pairs += [
        ("n", data.n),
        ("d", data.d),
        ("labeled", data.labels is not None),
        ("dataset_sha256", _dataset_sha256(data)),
        ("seed", args.seed),
    ]
    pairs += list(extra)
    return pairs


def _metrics_pairs(result, data):
    f1 = ami = None
    if data.labels is not None:
        f1 = f1_score(result.labels, data.labels)
        ami = ami_score(result.labels, data.labels)
    return [
        ("schema_version", SCHEMA_VERSION),
        ("f1", f1),
        ("ami", ami),
        ("objective", result.objective),
        ("objective_per_point", result.objective_per_point),
        ("refine_iters_used", result.refine_iters_used),
        ("cluster_sizes", result.per_cluster_sizes),
    ]


def _params_pairs(params):
    return [
        ("algorithm_kernel", params.kernel_kind),
        ("psi", params.psi),
        ("sigma", params.sigma),
        ("t", params.t),
        ("landmarks", params.landmarks),
        ("k", params.k),
        ("s", params.s),
        ("tau", params.tau),
        ("max_refine_iters", params.max_refine_iters),
    ]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_cluster(args):
    data, source = _load_dataset(args)
    kind = _kernel_kind(args)
    params = _params_from_args(args, kind)
    runner = run_mmc if args.algo == "mmc" else run_dmc
    result = runner(data, params)
    out = args.out
    _write_labels_csv(os.path.join(out, "labels.csv"), result.labels)
    manifest = _manifest_pairs(
        "cluster", args, data, source,
        extra=[("algorithm", args.algo)] + _params_pairs(params),
    )
    _write_text_atomic(os.path.join(out, "manifest.txt"), _kv_text(manifest))
    _write_text_atomic(
        os.path.join(out, "metrics.txt"), _kv_text(_metrics_pairs(result, data))
    )
    sizes = ",".join(str(int(v)) for v in result.per_cluster_sizes)
    print(f"clustered n={data.n} into k={params.k} (sizes {sizes}), "
          f"objective {result.objective:.6g}; artifacts in {out}")
    return EXIT_OK


def _grid_from_args(args):
    taus = args.tau_grid
    if args.algo == "mmc":
        default = default_mmc_grid()
        kernel_values = args.psi_grid or default.kernel_values
        if args.sigma_grid is not None:
            raise ConfigError("--sigma-grid applies only to --algo dmc")
    else:
        default = default_dmc_grid()
        kernel_values = args.sigma_grid or default.kernel_values
        if args.psi_grid is not None:
            raise ConfigError("--psi-grid applies only to --algo mmc")
    return ParamGrid(kernel_values, taus or default.taus)


def _grid_table_rows(cells, trials):
    rows = []
    for c in cells:
        rows.append(
            (c.kernel_param, c.kernel_value, c.tau, c.mean_f1, c.mean_ami,
             c.mean_objective_per_point, c.n_failed, trials)
        )
    return rows


_GRID_HEADER = (
    "kernel_param", "kernel_value", "tau", "mean_f1", "mean_ami",
    "mean_objective_per_point", "n_failed", "trials",
)


def cmd_grid(args):
    data, source = _load_dataset(args)
    if args.algo == "mmc":
        kind = "ik_voronoi" if args.mechanism == "voronoi" else "ik_hypersphere"
        base_kernel = {"psi": 2, "sigma": None}
    else:
        kind = "gaussian_nystrom"
        base_kernel = {"psi": None, "sigma": 1.0}
    base = ClusterParams(
        k=args.k, s=args.s, tau=0.5, kernel_kind=kind, t=args.t,
        landmarks=args.landmarks, seed=args.seed,
        max_refine_iters=args.max_refine_iters, **base_kernel,
    )
    grid = _grid_from_args(args)
    out = args.out
    try:
        result = grid_search(
            data, args.algo, base, grid=grid, trials=args.trials, workers=_workers(args)
        )
    except GridSearchError as exc:
        table = _csv_text(_GRID_HEADER, _grid_table_rows(exc.cells, args.trials))
        _write_text_atomic(os.path.join(out, "grid_table.csv"), table)
        raise
    table = _csv_text(_GRID_HEADER, _grid_table_rows(result.cells, args.trials))
    _write_text_atomic(os.path.join(out, "grid_table.csv"), table)
    _write_labels_csv(os.path.join(out, "labels.csv"), result.best.labels)
    best = result.best_cell
    manifest = _manifest_pairs(
        "grid", args, data, source,
        extra=[("algorithm", args.algo), ("trials", args.trials),
               ("grid_kernel_values", grid.kernel_values),
               ("grid_taus", grid.taus)]
        + _params_pairs(result.best.params),
    )
    _write_text_atomic(os.path.join(out, "manifest.txt"), _kv_text(manifest))
    metrics = _metrics_pairs(result.best, data)
    metrics += [
        ("scored_by", result.scored_by),
        ("best_kernel_param", best.kernel_param),
        ("best_kernel_value", best.kernel_value),
        ("best_tau", best.tau),
        ("best_mean_f1", best.mean_f1),
        ("best_mean_ami", best.mean_ami),
        ("best_mean_objective_per_point", best.mean_objective_per_point),
    ]
    _write_text_atomic(os.path.join(out, "metrics.txt"), _kv_text(metrics))
    shown = best.mean_f1 if result.scored_by == "f1" else best.mean_objective_per_point
    print(f"best cell {best.kernel_param}={best.kernel_value:g} tau={best.tau:g} "
          f"(mean {result.scored_by} {shown:.4f} over {args.trials} trials); "
          f"artifacts in {out}")
    return EXIT_OK


def _analysis_model(args, data):
    if args.kernel == "gaussian":
        if args.sigma is None:
            raise ConfigError("--sigma is required with --kernel gaussian")
        return GaussianKernelExact(args.sigma)
    if args.kernel == "gaussian-nystrom":
        if args.sigma is None:
            raise ConfigError("--sigma is required with --kernel gaussian-nystrom")
        return fit_nystrom(data, min(args.landmarks, data.n), args.sigma, args.seed)
    if args.psi is None:
        raise ConfigError("--psi is required with --kernel ik")
    return fit_ik(data, args.psi, args.t, args.mechanism, args.seed)


def cmd_analyze(args):
    data, source = _load_dataset(args)
    model = _analysis_model(args, data)
    out = args.out
    manifest = _manifest_pairs(
        f"analyze {args.study}", args, data, source,
        extra=[("kernel", args.kernel), ("psi", args.psi), ("sigma", args.sigma),
               ("t", args.t), ("mechanism", args.mechanism)],
    )
    _write_text_atomic(os.path.join(out, "manifest.txt"), _kv_text(manifest))

    if args.study == "cohesiveness":
        curve = cohesiveness_curve(model, data, args.tau_grid)
        rows = []
        for rec in curve.records:
            for rank, (m, sbar) in enumerate(zip(rec.members, rec.sbar)):
                rows.append((rec.tau, rank, m.size, None if np.isnan(sbar) else sbar))
        _write_text_atomic(
            os.path.join(out, "cohesiveness.csv"),
            _csv_text(("tau", "component_rank", "size", "mean_similarity"), rows),
        )
        counts = ",".join(str(c) for c in curve.component_counts)
        summary = f"tau grid of {curve.tau_grid.size} values; component counts: {counts}\n"
        _write_text_atomic(os.path.join(out, "summary.txt"), summary)
        print(summary, end="")
        return EXIT_OK

    if args.study == "condition1":
        rep = check_condition_one(data, model)
        pairs = [
            ("schema_version", SCHEMA_VERSION),
            ("sparse_label", rep.sparse_label),
            ("dense_labels", rep.dense_labels),
            ("sparse_peak_index", rep.sparse_peak),
            ("dense_peak_indices", rep.dense_peaks),
            ("sparse_peak_max_similarity", rep.s_alpha_hat),
            ("dense_pair_bottleneck", rep.bottleneck),
            ("failure_condition_holds", rep.holds),
        ]
        _write_text_atomic(os.path.join(out, "condition1.txt"), _kv_text(pairs))
        verdict = "holds" if rep.holds else "does not hold"
        print(f"condition 1 {verdict}: sparse-peak max similarity "
              f"{rep.s_alpha_hat:.4f} vs dense bottleneck {rep.bottleneck:.4f}")
        return EXIT_OK

    if args.study == "condition2":
        rep = check_condition_two(data, model, threshold=args.ratio_threshold)
        pairs = [
            ("schema_version", SCHEMA_VERSION),
            ("dense_label", rep.dense_label),
            ("sparse_label", rep.sparse_label),
            ("dense_min_neighbor_similarity", rep.dense_min),
            ("sparse_min_neighbor_similarity", rep.sparse_min),
            ("ratio", rep.ratio),
            ("ratio_threshold", rep.threshold),
            ("failure_condition_holds", rep.holds),
        ]
        _write_text_atomic(os.path.join(out, "condition2.txt"), _kv_text(pairs))
        verdict = "holds" if rep.holds else "does not hold"
        print(f"condition 2 {verdict}: ratio {rep.ratio:.3f} "
              f"(threshold {rep.threshold:g})")
        return EXIT_OK

    # correction
    curve = correction_curve(data, model, args.batch, args.seed)
    rows = [(p.corrected, p.objective, p.ami) for p in curve.points]
    _write_text_atomic(
        os.path.join(out, "correction.csv"),
        _csv_text(("corrected", "objective", "ami"), rows),
    )
    rho = spearman(curve.column("objective"), curve.column("ami"))
    summary = (
        f"correction curve with batch {curve.batch}: Spearman(objective, ami) = {rho:.4f}\n"
        "note: the Spearman statistic is a chosen operationalization of the\n"
        "objective-tracks-correctness claim, not a quantity with a canonical threshold\n"
    )
    _write_text_atomic(os.path.join(out, "summary.txt"), summary)
    print(summary, end="")
    return EXIT_OK


def cmd_benchmark(args):
    kind = "ik_voronoi" if args.mechanism == "voronoi" else "ik_hypersphere"
    params = ClusterParams(
        k=args.k, s=args.s, tau=args.tau, kernel_kind=kind, psi=args.psi,
        t=args.t, seed=args.seed, max_refine_iters=args.max_refine_iters,
    )
    report = scaleup(args.family, args.sizes, params, seed=args.seed)
    out = args.out
    stage_names = sorted(report.stage_seconds[0])
    rows = []
    for i, n in enumerate(report.sizes):
        stages = report.stage_seconds[i]
        rows.append((int(n), *(stages[s] for s in stage_names),
                     report.total_seconds[i], bool(report.flagged[i])))
    _write_text_atomic(
        os.path.join(out, "scaleup.csv"),
        _csv_text(("n", *stage_names, "total_seconds", "flagged"), rows),
    )
    pairs = [
        ("schema_version", SCHEMA_VERSION),
        ("family", report.family),
        ("sizes", report.sizes),
        ("fitted_sizes", report.fitted_sizes),
        ("slope", report.slope),
        ("notes", "; ".join(report.notes) if report.notes else None),
    ]
    _write_text_atomic(os.path.join(out, "summary.txt"), _kv_text(pairs))
    print(f"log-log slope {report.slope:.3f} over n={list(map(int, report.fitted_sizes))}")
    return EXIT_OK


def cmd_generate(args):
    data = generate_synthetic(args.family, args.n, args.seed, d_noise=args.d_noise)
    if not args.no_normalize:
        data = normalize_minmax(data)
    save_csv(data, args.out_file)
    print(f"wrote {data.n} x {data.d} points ({args.family}) to {args.out_file}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common_cluster_args(p):
    p.add_argument("--k", type=int, required=True, help="number of clusters")
    p.add_argument("--s", type=int, required=True, help="seeding subsample size")
    p.add_argument("--t", type=int, default=200,
                   help="isolation-kernel partitioning count (default 200)")
    p.add_argument("--landmarks", type=int, default=256,
                   help="Nystrom landmark count for the Gaussian kernel")
    p.add_argument("--seed", type=int, default=0, help="base random seed")
    p.add_argument("--max-refine-iters", type=int, default=100)
    p.add_argument("--mechanism", choices=("voronoi", "hypersphere"),
                   default="voronoi", help="isolation-kernel partitioning mechanism")
    p.add_argument("--out", default=".", help="output directory for artifacts")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="masscluster",
        description="Mass-based clustering with isolation kernels and a Gaussian density twin.",
    )
    parser.add_argument("--version", action="version", version=f"masscluster {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("cluster", help="run one clustering configuration")
    _add_data_args(p)
    _add_common_cluster_args(p)
    p.add_argument("--algo", choices=("mmc", "dmc"), required=True,
                   help="mmc: isolation-kernel mass; dmc: Gaussian-kernel density")
    p.add_argument("--psi", type=int, help="isolation-kernel sample size per partitioning")
    p.add_argument("--sigma", type=float, help="Gaussian kernel bandwidth")
    p.add_argument("--tau", type=float, required=True, help="seeding similarity threshold")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("grid", help="search a (kernel value x tau) grid, averaged over trials")
    _add_data_args(p)
    _add_common_cluster_args(p)
    p.add_argument("--algo", choices=("mmc", "dmc"), required=True)
    p.add_argument("--psi-grid", type=_int_list, help="comma-separated psi values (mmc)")
    p.add_argument("--sigma-grid", type=_float_list, help="comma-separated sigma values (dmc)")
    p.add_argument("--tau-grid", type=_float_list, help="comma-separated tau values")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--workers", type=int, default=1,
                   help="parallel processes (MASSCLUSTER_WORKERS overrides)")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("analyze", help="cohesiveness, failure-condition, and correction studies")
    p.add_argument("study", choices=("cohesiveness", "condition1", "condition2", "correction"))
    _add_data_args(p)
    p.add_argument("--kernel", choices=("ik", "gaussian", "gaussian-nystrom"),
                   required=True, help="similarity used by the study")
    p.add_argument("--psi", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--t", type=int, default=200)
    p.add_argument("--landmarks", type=int, default=256)
    p.add_argument("--mechanism", choices=("voronoi", "hypersphere"), default="voronoi")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau-grid", type=_float_list,
                   default=tuple(np.round(np.arange(1, 20) * 0.05, 2)),
                   help="cohesiveness thresholds (default 0.05..0.95)")
    p.add_argument("--ratio-threshold", type=float, default=4.0,
                   help="condition2 'much greater' ratio")
    p.add_argument("--batch", type=int, default=50, help="correction batch size")
    p.add_argument("--out", default=".", help="output directory for artifacts")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("benchmark", help="wall-clock scaling ladder")
    p.add_argument("study", choices=("scaleup",))
    p.add_argument("--family", choices=SYNTHETIC_FAMILIES, default="scaleup_arc_mix")
    p.add_argument("--sizes", type=_int_list, required=True,
                   help="comma-separated dataset sizes, ascending, spanning >= 2 decades")
    p.add_argument("--psi", type=int, default=32)
    p.add_argument("--t", type=int, default=50)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--s", type=int, default=256)
    p.add_argument("--tau", type=float, default=0.4)
    p.add_argument("--mechanism", choices=("voronoi", "hypersphere"), default="voronoi")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-refine-iters", type=int, default=5)
    p.add_argument("--out", default=".", help="output directory for artifacts")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("generate", help="write a synthetic dataset to CSV")
    p.add_argument("--family", choices=SYNTHETIC_FAMILIES, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d-noise", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--out-file", required=True, help="destination CSV path")
    p.set_defaults(func=cmd_generate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AlgorithmError as exc:
        print(f"algorithm failure: {exc}", file=sys.stderr)
        return EXIT_ALGORITHM


if __name__ == "__main__":
    sys.exit(main())
