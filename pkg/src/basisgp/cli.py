"""Command-line interface.

Subcommands: synth, train, predict, eval, benchmark, kernel-grid.
Exit codes: 0 success, 1 I/O failure, 2 validation/config error,
3 numerical failure. Errors print as a single machine-parsable line on
stderr: "error: <kind>: <message>".

Heavy imports happen inside the handlers, after the BLAS thread count
from the config has been pinned into the environment; importing numpy
first would lock in whatever the environment default happens to be.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        self.code = code
        self.kind = kind
        super().__init__(message)


def _fail(code: int, kind: str, message: str) -> CliError:
    return CliError(code, kind, message)


def _pin_threads(threads: int) -> None:
    for var in (
        "OPENBLAS_NUM_THREADS",
        "OMP_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(var, str(threads))


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise _fail(EXIT_IO, "io", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise _fail(EXIT_VALIDATION, "config", f"invalid JSON in {path}: {exc}") from None


def _load_run_config(path):
    from .config import ConfigError, run_config_from_dict

    try:
        return run_config_from_dict(_read_json(path))
    except ConfigError as exc:
        raise _fail(EXIT_VALIDATION, "config", str(exc)) from None


def _load_dataset(path, target: str, ignore: tuple[str, ...]):
    from . import data as data_mod

    try:
        return data_mod.load_csv(path, target, ignore_columns=ignore)
    except FileNotFoundError:
        raise _fail(EXIT_IO, "io", f"file not found: {path}") from None
    except data_mod.DataError as exc:
        raise _fail(EXIT_VALIDATION, "data", str(exc)) from None


def cmd_synth(args) -> int:
    from . import data as data_mod

    if args.n < 1:
        raise _fail(EXIT_VALIDATION, "flags", "--n must be >= 1")
    if args.noise_var < 0:
        raise _fail(EXIT_VALIDATION, "flags", "--noise-var must be >= 0")
    if args.kind != "step1d":
        raise _fail(EXIT_VALIDATION, "flags", f"unknown --kind {args.kind!r}")
    exclude = None
    if args.exclude:
        try:
            lo, hi = (float(v) for v in args.exclude.split(":"))
        except ValueError:
            raise _fail(
                EXIT_VALIDATION, "flags", "--exclude must look like lo:hi"
            ) from None
        exclude = (lo, hi)
    dataset = data_mod.gen_step1d(args.n, args.noise_var, args.seed, exclude=exclude)
    try:
        data_mod.dataset_to_csv(args.out, dataset)
    except OSError as exc:
        raise _fail(EXIT_IO, "io", str(exc)) from None
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_run_config(args.config)
    _pin_threads(config.threads)
    from . import data as data_mod
    from . import evalbench, models
    from .training import NonFiniteError

    ignore = tuple(args.ignore) if args.ignore else ("f_gt",)
    train = _load_dataset(args.data, args.target, ignore)
    val = None
    if args.val:
        val = _load_dataset(args.val, args.target, ignore)
    if config.patience is not None and val is None:
        raise _fail(
            EXIT_VALIDATION,
            "config",
            "early stopping (patience) requires --val validation data",
        )
    if config.normalize:
        train, stats = data_mod.normalize(train)
        if val is not None:
            val = data_mod.apply_normalization(val, stats)
    try:
        model, result = evalbench.train_model(config, train, val)
    except NonFiniteError as exc:
        raise _fail(EXIT_NUMERICAL, "training", str(exc)) from None
    log_path = args.log or (str(args.out) + ".log.jsonl")
    try:
        models.save_model(args.out, model)
        with open(log_path, "w", encoding="utf-8") as handle:
            for record in result.log:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
    except OSError as exc:
        raise _fail(EXIT_IO, "io", str(exc)) from None
    return EXIT_OK


def cmd_predict(args) -> int:
    _pin_threads(args.threads)
    import numpy as np

    from . import data as data_mod
    from . import models
    from .predictive import pointwise_nll

    try:
        model = models.load_model(args.model)
    except FileNotFoundError:
        raise _fail(EXIT_IO, "io", f"file not found: {args.model}") from None
    except models.ModelFormatError as exc:
        raise _fail(EXIT_VALIDATION, "model", str(exc)) from None
    ignore = tuple(args.ignore) if args.ignore else ("f_gt",)
    try:
        dataset = _load_dataset(args.data, args.target, ignore)
        x, targets = dataset.x, dataset.y
    except CliError as exc:
        if exc.kind != "data" or "target column" not in str(exc):
            raise
        # unlabeled data: predict without the target and NLL columns
        try:
            x, _ = data_mod.load_features_csv(args.data, ignore)
        except data_mod.DataError as err:
            raise _fail(EXIT_VALIDATION, "data", str(err)) from None
        targets = None
    pred = model.predict(x)
    columns = {
        "row_index": np.arange(x.shape[0], dtype=np.float64),
        "mean": pred.mean,
        "variance": pred.variance,
    }
    if targets is not None:
        columns["target"] = targets
        columns["nll"] = pointwise_nll(pred, targets)
    try:
        data_mod.write_csv(args.out, columns)
    except OSError as exc:
        raise _fail(EXIT_IO, "io", str(exc)) from None
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import data as data_mod
    from . import evalbench
    from .predictive import PredictiveDistribution

    preds = _load_dataset(args.preds, "target", ("row_index", "nll"))
    names = preds.feature_names
    if "mean" not in names or "variance" not in names:
        raise _fail(
            EXIT_VALIDATION, "data", "predictions file needs mean and variance columns"
        )
    pred = PredictiveDistribution(
        mean=preds.x[:, names.index("mean")],
        variance=preds.x[:, names.index("variance")],
    )
    try:
        report = evalbench.metrics(pred, preds.y)
    except evalbench.NonPositiveVariance as exc:
        raise _fail(EXIT_VALIDATION, "data", str(exc)) from None
    try:
        with open(args.out, "w", encoding="utf-8") as handle:
            json.dump(report, handle, sort_keys=True)
            handle.write("\n")
    except OSError as exc:
        raise _fail(EXIT_IO, "io", str(exc)) from None
    return EXIT_OK


def cmd_benchmark(args) -> int:
    doc = _read_json(args.config)
    from .config import ConfigError, run_config_from_dict

    known = {"sizes", "methods", "seeds", "noise_var", "test_n", "val_n", "parallel"}
    bench_keys = {k: doc.pop(k) for k in list(doc) if k in known}
    try:
        base = run_config_from_dict(doc)
    except ConfigError as exc:
        raise _fail(EXIT_VALIDATION, "config", str(exc)) from None
    sizes = bench_keys.get("sizes")
    methods = bench_keys.get("methods")
    if not sizes or not methods:
        raise _fail(
            EXIT_VALIDATION, "config", "benchmark config needs sizes and methods"
        )
    _pin_threads(base.threads)
    from . import evalbench

    os.makedirs(args.out, exist_ok=True)
    jsonl = os.path.join(args.out, "results.jsonl")
    options = {
        k: bench_keys[k] for k in ("noise_var", "test_n", "val_n") if k in bench_keys
    }
    rows = evalbench.run_scaling(
        sizes,
        methods,
        base,
        jsonl,
        seeds=tuple(bench_keys.get("seeds", [base.seed])),
        parallel=bool(bench_keys.get("parallel", False)),
        **options,
    )
    evalbench.summarize_csv(rows, os.path.join(args.out, "results.csv"))
    return EXIT_OK


def cmd_kernel_grid(args) -> int:
    _pin_threads(args.threads)
    import numpy as np

    from . import evalbench, models

    try:
        model = models.load_model(args.model)
    except FileNotFoundError:
        raise _fail(EXIT_IO, "io", f"file not found: {args.model}") from None
    except models.ModelFormatError as exc:
        raise _fail(EXIT_VALIDATION, "model", str(exc)) from None

    def parse_grid(spec: str) -> np.ndarray:
        try:
            lo, hi, count = spec.split(":")
            return np.linspace(float(lo), float(hi), int(count))[:, None]
        except ValueError:
            raise _fail(
                EXIT_VALIDATION, "flags", f"grid spec {spec!r} must be lo:hi:count"
            ) from None

    grid = parse_grid(args.grid)
    xs = parse_grid(args.probes) if args.probes else grid
    values = evalbench.kernel_grid(model, xs, grid)
    try:
        evalbench.write_kernel_grid_csv(args.out, xs, grid, values)
    except OSError as exc:
        raise _fail(EXIT_IO, "io", str(exc)) from None
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="basisgp",
        description="Low-rank basis-kernel GP regression: train, predict, benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    p.add_argument("--kind", default="step1d")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise-var", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exclude", default=None, help="lo:hi interval to leave out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--target", default="y")
    p.add_argument("--ignore", action="append", default=None,
                   help="columns to skip (default: f_gt)")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--log", default=None, help="training-log JSONL path (default: OUT.log.jsonl)"
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", default="y")
    p.add_argument("--ignore", action="append", default=None,
                   help="columns to skip (default: f_gt)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a predictions CSV")
    p.add_argument("--preds", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", help="run the scaling benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("kernel-grid", help="export kernel values on a grid")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", required=True, help="lo:hi:count")
    p.add_argument("--probes", default=None, help="lo:hi:count for the probe axis")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kernel_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad flags, which matches our contract
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
