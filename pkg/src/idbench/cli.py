"""Command-line entry point: ``idbench <command> [options]``.

Exit status is 0 on success, 1 for usage errors and 2 for runtime failures.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .analysis import covariance_stats
from .errors import IdBenchError, InvalidParameterError
from .estimators import EstimatorConfig, Method
from .fractal import box_count_dimension, fractal_lid_suite, hofstadter_cloud
from .harness import (
    SweepConfig,
    csv_header,
    estimate_record,
    record_to_csv_row,
    record_to_json,
    run_sweep,
)
from .linalg import derive_stream
from .manifolds import Family, ManifoldSpec, export_csv, load_cloud, sample, save_cloud
from .neighbors import THREADS_ENV
from .perturb import NoiseKind, NoiseSpec, add_noise, squeeze

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None,
                   help="master seed (default 0, or the seed a loaded cloud was drawn with)")
    p.add_argument("--threads", type=int, default=None, help=f"worker cap (default ${THREADS_ENV} or 1)")
    p.add_argument("--out", type=Path, default=None, help="output path (default stdout where sensible)")
    p.add_argument("--format", choices=("csv", "jsonl"), default="jsonl", help="record format")
    return p


def _add_spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", required=True, choices=[f.value for f in Family])
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--k1", type=int)
    p.add_argument("--k2", type=int)
    p.add_argument("--d-i", type=int, help="intrinsic dimension (baseline families)")
    p.add_argument("--d-a", type=int, help="ambient dimension after isometric padding")
    p.add_argument("--N", type=int, required=True, help="number of points")


def _add_estimator_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", required=True, choices=[m.value for m in Method])
    p.add_argument("--k", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--k1", type=int)
    p.add_argument("--k2", type=int)
    p.add_argument("--calib-sets", type=int)
    p.add_argument("--pairs", choices=("all", "distinct"))


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="idbench", description="Intrinsic-dimension benchmark tools.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="sample a point cloud")
    _add_spec_args(g)
    g.add_argument("--csv", type=Path, help="also export the points as CSV")

    p = sub.add_parser("perturb", parents=[common], help="squeeze or add noise to a cloud file")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--squeeze", type=float, help="squeezing parameter epsilon in [0, 2]")
    p.add_argument("--noise-kind", choices=[k.value for k in NoiseKind])
    p.add_argument("--sigma2", type=float)

    e = sub.add_parser("estimate", parents=[common], help="run one estimator on a cloud file")
    e.add_argument("--in", dest="input", type=Path, required=True)
    _add_estimator_args(e)
    e.add_argument("--timing", action="store_true", help="fill wall_ms")

    s = sub.add_parser("sweep", parents=[common], help="run a JSON-configured sweep")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--timing", action="store_true", help="fill wall_ms (output is then not reproducible)")
    s.add_argument("--no-resume", action="store_true", help="overwrite instead of skipping finished cells")

    f = sub.add_parser("fractal", parents=[common], help="butterfly box counting and LID suite")
    f.add_argument("--q-max", type=int, default=50)
    f.add_argument("--k-grid", type=int, default=8)
    f.add_argument("--j-min", type=int, default=3)
    f.add_argument("--j-max", type=int, default=8)
    f.add_argument("--suite", action="store_true", help="also run MLE, ABID and CorrInt")
    f.add_argument("--n-subsample", type=int, default=1000)
    f.add_argument("--ks", type=int, nargs="+", default=[5, 10, 20, 50, 100])
    f.add_argument("--save", type=Path, help="write the butterfly as a cloud file")

    st = sub.add_parser("stats", parents=[common], help="covariance statistics of a cloud file")
    st.add_argument("--in", dest="input", type=Path, required=True)
    return parser


def _emit(lines: list[str], out: Path | None) -> None:
    text = "".join(lines)
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)


def _records(records: list[dict], fmt: str) -> list[str]:
    if fmt == "jsonl":
        return [record_to_json(r) for r in records]
    return [csv_header()] + [record_to_csv_row(r) for r in records]


def _seed(a, cloud=None) -> int:
    if a.seed is not None:
        return a.seed
    head = cloud.lineage.split(":", 1)[0] if cloud is not None else ""
    return int(head) if head.lstrip("-").isdigit() else 0


def _cmd_generate(a) -> int:
    if a.out is None:
        raise UsageError("generate needs --out")
    spec = ManifoldSpec(a.family, n=a.n, k=a.k, k1=a.k1, k2=a.k2, d_i_override=a.d_i, ambient_target=a.d_a)
    cloud = sample(spec, a.N, derive_stream(_seed(a), f"cloud/{spec.label}"))
    save_cloud(cloud, a.out)
    if a.csv:
        export_csv(cloud, a.csv)
    return EXIT_OK


def _cmd_perturb(a) -> int:
    if a.out is None:
        raise UsageError("perturb needs --out")
    if (a.squeeze is None) == (a.noise_kind is None):
        raise UsageError("give exactly one of --squeeze or --noise-kind")
    cloud = load_cloud(a.input)
    # same stream labels as the sweep harness, so results line up with sweep cells
    label = cloud.spec.label if isinstance(cloud.spec, ManifoldSpec) else cloud.lineage
    if a.squeeze is not None:
        cloud = squeeze(cloud, a.squeeze, derive_stream(_seed(a, cloud), f"squeeze/{label}"))
    else:
        if a.sigma2 is None:
            raise UsageError("--noise-kind needs --sigma2")
        s = derive_stream(_seed(a, cloud), f"noise/{label}/{a.noise_kind}")
        cloud = add_noise(cloud, NoiseSpec(a.noise_kind, a.sigma2), s)
    save_cloud(cloud, a.out)
    return EXIT_OK


def _cmd_estimate(a) -> int:
    params = {name: getattr(a, name) for name in ("k", "epsilon", "alpha", "k1", "k2", "calib_sets", "pairs")}
    config = EstimatorConfig(a.method, **{k: v for k, v in params.items() if v is not None})
    cloud = load_cloud(a.input)
    rec = estimate_record(cloud, config, _seed(a, cloud), a.threads, a.timing)
    _emit(_records([rec], a.format), a.out)
    return EXIT_OK


def _cmd_sweep(a) -> int:
    config = SweepConfig.load(a.config)
    if a.seed is not None:
        config.seeds = [a.seed]
    out = a.out or (Path(config.output) if config.output else None)
    if out is None:
        recs = run_sweep(config, None, a.format, a.threads, a.timing)
        _emit(_records(recs, a.format), None)
    else:
        run_sweep(config, out, a.format, a.threads, a.timing, resume=not a.no_resume)
    return EXIT_OK


def _cmd_fractal(a) -> int:
    cloud = hofstadter_cloud(a.q_max, a.k_grid)
    box = box_count_dimension(cloud.unit_square(), a.j_min, a.j_max)
    rows = [{
        "kind": "box_count", "q_max": a.q_max, "k_grid": a.k_grid, "points": int(cloud.points.shape[0]),
        "scales": box.scales.tolist(), "counts": box.counts.tolist(), "dimension": box.dimension,
        "fit_residual": box.fit_residual, "excluded_extremes": box.excluded_extremes,
    }]
    if a.suite:
        s = derive_stream(_seed(a), "fractal")
        for r in fractal_lid_suite(cloud.points, tuple(a.ks), a.n_subsample, s=s):
            rows.append({"kind": "lid", "method": r.method, "k": r.k, "mean": r.mean, "std": r.std,
                         "defined": r.defined})
    if a.save:
        save_cloud(cloud.to_point_cloud(box.dimension), a.save)
    if a.format == "jsonl":
        _emit([json.dumps(r) + "\n" for r in rows], a.out)
    else:
        lines = ["kind,method,k,value,std\n", f"box_count,,,{box.dimension!r},\n"]
        lines += [f"lid,{r['method']},{r['k']},{r['mean']!r},{r['std']!r}\n" for r in rows[1:]]
        _emit(lines, a.out)
    return EXIT_OK


def _cmd_stats(a) -> int:
    cloud = load_cloud(a.input)
    st = covariance_stats(cloud)
    row = {"N": cloud.N, "d_a": cloud.d_a, "d_i": cloud.d_i, "trace": st.trace, "vdi": st.vdi, "r2": st.r2_mean}
    if a.format == "jsonl":
        _emit([json.dumps(row) + "\n"], a.out)
    else:
        _emit([",".join(row) + "\n", ",".join(repr(v) for v in row.values()) + "\n"], a.out)
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "perturb": _cmd_perturb,
    "estimate": _cmd_estimate,
    "sweep": _cmd_sweep,
    "fractal": _cmd_fractal,
    "stats": _cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be positive")
            os.environ[THREADS_ENV] = str(args.threads)
        return _COMMANDS[args.command](args)
    except (UsageError, InvalidParameterError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (IdBenchError, OSError, ValueError, KeyError) as exc:
        print(f"idbench: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
