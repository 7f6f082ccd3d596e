"""Command-line interface: ``nmfrank fit | select-rank | simulate``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""

import argparse
import csv
import dataclasses
import datetime
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import write_sample
from .data import DataMatrix, Family, Method, SelectionConfig, load_matrix, write_matrix
from .deconvolution import write_density
from .exceptions import ConfigError, DataError, DeconvolutionError, FitError
from .nmf import kl_divergence, multi_start_fit, squared_error
from .selection import select_rank
from .simulate import read_scenario_file, run_scenario, scenario_features, summarize

log = logging.getLogger("nmfrank")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("NMFRANK_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"NMFRANK_SEED must be an integer, got {env!r}") from None


def _display(path, base):
    path = Path(path)
    return path.relative_to(base).as_posix() if path.is_relative_to(base) else str(path)


class _Manifest:
    """Run record written next to the outputs; the only file that carries
    timestamps and timings."""

    def __init__(self, args, command):
        self.record = {
            "command": command,
            "argv": sys.argv[1:],
            "version": __version__,
            "threads": args.threads,
            "started": _now(),
        }
        self._t0 = time.perf_counter()

    def write(self, out_dir, outputs, **extra):
        self.record.update(extra)
        self.record["finished"] = _now()
        self.record["elapsed_seconds"] = round(time.perf_counter() - self._t0, 3)
        self.record["outputs"] = {_display(p, out_dir): _sha256(p) for p in sorted(outputs)}
        _dump_json(self.record, Path(out_dir) / "manifest.json")


def _factor_labels(data, k):
    names = [f"feature{j + 1}" for j in range(k)]
    if data.row_labels is None and data.col_labels is None:
        return None, None
    rows = data.row_labels or [f"row{i + 1}" for i in range(data.p)]
    cols = data.col_labels or [f"col{j + 1}" for j in range(data.n)]
    return (rows, names), (names, cols)


def cmd_fit(args):
    manifest = _Manifest(args, "fit")
    data = load_matrix(args.input, args.format)
    family = Family(args.model)
    seed = _seed(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = multi_start_fit(data.values, args.rank, family, args.starts, seed,
                          workers=args.threads)
    fit = res.best
    t_labels, w_labels = _factor_labels(data, args.rank)
    write_matrix(DataMatrix(fit.T, *(t_labels or (None, None))), out / "T.csv")
    write_matrix(DataMatrix(fit.W, *(w_labels or (None, None))), out / "W.csv")
    summary = {
        "model": family.value,
        "rank": args.rank,
        "loglik": fit.loglik,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "starts": args.starts,
        "best_start": res.best_index,
        "start_logliks": list(res.all_logliks),
        "removed_rows": list(data.removed_rows),
    }
    if family is Family.POISSON:
        summary["kl_divergence"] = kl_divergence(np.rint(data.values), fit.mean)
    else:
        summary["squared_error"] = squared_error(data.values, fit.mean)
        summary["variance"] = fit.model.variance
    _dump_json(summary, out / "summary.json")
    manifest.write(out, [out / "T.csv", out / "W.csv", out / "summary.json"],
                   seed=seed, input_sha256=_sha256(args.input),
                   config={"rank": args.rank, "model": family.value, "starts": args.starts})
    print(f"rank {args.rank} loglik {fit.loglik:.6f} -> {out}")
    return 0


def _export_densities(report, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for step in report.steps:
        if step.lr_sample is not None:
            written.append(directory / f"k{step.k}_lr_sample.csv")
            write_sample(step.lr_sample, written[-1])
        if step.error_sample is not None:
            written.append(directory / f"k{step.k}_error_sample.csv")
            write_sample(step.error_sample, written[-1])
        if step.density is not None:
            written.append(directory / f"k{step.k}_density.csv")
            write_density(step.density, written[-1])
    return written


def _selection_config(args, model):
    return SelectionConfig(model=model, alpha=args.alpha, B=args.bootstrap, m=args.starts,
                           k_start=args.k_start, k_max=args.k_max, seed=_seed(args),
                           method=args.method)


def cmd_select_rank(args):
    manifest = _Manifest(args, "select-rank")
    data = load_matrix(args.input, args.format)
    config = _selection_config(args, args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kwargs = {}
    if config.method is Method.IMPUTE:
        kwargs = {"mask_fraction": args.mask_fraction, "repeats": args.repeats}
    report = select_rank(data, config, workers=args.threads, **kwargs)
    d = report.to_dict()
    d["removed_rows"] = list(data.removed_rows)
    _dump_json(d, out / "report.json")
    outputs = [out / "report.json"]
    if args.export_densities:
        outputs += _export_densities(report, args.export_densities)
    for step in report.steps:
        for w in step.warnings:
            log.warning("k=%d: %s", step.k, w)
    manifest.write(out, outputs,
                   seed=config.seed, input_sha256=_sha256(args.input),
                   config=report.config.to_dict(),
                   timings={str(s.k): round(s.wallclock, 3) for s in report.steps})
    cap = " (cap reached)" if report.capped else ""
    print(f"selected rank {report.selected_rank}{cap} -> {out / 'report.json'}")
    return 0


def cmd_simulate(args):
    manifest = _Manifest(args, "simulate")
    scenario, config = read_scenario_file(args.scenario)
    if args.seed is not None or "NMFRANK_SEED" in os.environ:
        config = dataclasses.replace(config, seed=_seed(args))
    try:
        methods = [Method(m.strip()) for m in args.methods.split(",") if m.strip()]
    except ValueError as exc:
        raise ConfigError(f"--methods: {exc}") from None
    if not methods:
        raise ConfigError("--methods must name at least one method")
    out = Path(args.out)
    (out / "data").mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    outputs = []
    written = set()

    def on_report(r, data, report):
        data_path = out / "data" / f"replicate{r:03d}.csv"
        if r not in written:
            written.add(r)
            write_matrix(data, data_path)
            outputs.append(data_path)
        path = out / "reports" / f"replicate{r:03d}_{report.method.value}.json"
        _dump_json(report.to_dict(), path)
        outputs.append(path)

    rows = run_scenario(scenario, methods, args.replicates, config, workers=args.threads,
                        on_report=on_report)
    with open(out / "selections.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, ["replicate", "method", "selected_rank", "capped", "digest"],
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, ["method", "replicates", "correct", "mean", "sd"],
                                lineterminator="\n")
        writer.writeheader()
        for row in summarize(rows, scenario.true_rank):
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    outputs += [out / "selections.csv", out / "summary.csv"]
    _, meta = scenario_features(scenario)
    scenario_record = {k: (v.value if hasattr(v, "value") else v)
                       for k, v in dataclasses.asdict(scenario).items()}
    manifest.write(out, outputs, seed=config.seed, input_sha256=_sha256(args.scenario),
                   config=config.to_dict(), scenario=scenario_record, scenario_meta=meta,
                   methods=[m.value for m in methods], replicates=args.replicates)
    print(f"{args.replicates} replicates x {len(methods)} methods -> {out / 'summary.csv'}")
    return 0


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="nmfrank", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=_positive_int,
                        default=int(os.environ.get("NMFRANK_THREADS", "1")),
                        help="worker processes; results do not depend on it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (default: $NMFRANK_SEED or 0)")

    def data_args(p):
        p.add_argument("--input", required=True, help="CSV/TSV matrix, variables in rows")
        p.add_argument("--format", choices=["csv", "tsv"], default=None,
                       help="default: from the file extension")
        p.add_argument("--model", choices=[f.value for f in Family], required=True)

    p = sub.add_parser("fit", help="fit one rank-k factorization")
    data_args(p)
    p.add_argument("--rank", type=_positive_int, required=True)
    p.add_argument("--starts", type=_positive_int, default=1)
    p.add_argument("--out", default=".", help="output directory")
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select-rank", help="sequential rank selection")
    data_args(p)
    p.add_argument("--method", choices=[m.value for m in Method], default="decon")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--bootstrap", type=int, default=50, help="bootstrap size B")
    p.add_argument("--starts", type=_positive_int, default=50, help="starts per fit m")
    p.add_argument("--k-start", type=_positive_int, default=1)
    p.add_argument("--k-max", type=_positive_int, default=None)
    p.add_argument("--mask-fraction", type=float, default=0.3, help="impute only")
    p.add_argument("--repeats", type=_positive_int, default=10, help="impute only")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--export-densities", metavar="DIR", default=None,
                   help="write per-k LR sample, error sample and density CSVs")
    common(p)
    p.set_defaults(func=cmd_select_rank)

    p = sub.add_parser("simulate", help="run a simulation scenario")
    p.add_argument("--scenario", required=True, help="INI scenario file")
    p.add_argument("--replicates", type=_positive_int, required=True)
    p.add_argument("--methods", default="decon,impute", help="comma-separated")
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"nmfrank: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"nmfrank: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, DeconvolutionError, FloatingPointError) as exc:
        print(f"nmfrank: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
