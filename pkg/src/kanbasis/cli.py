"""Command-line entry point: ``kanbasis {fit-basis,bench,train,gradcheck}``.

Every command writes its outputs plus a ``manifest.json`` into ``--out``
(default ``$KANBASIS_OUT/<command>``, or ``./out/<command>``). Anything that
varies between identical runs (wall-clock times) lives only in the manifest.

Exit codes: 0 success, 1 check failure, 2 usage error, 3 data error,
4 numeric abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .basis import BSplineBasis, GaussianRBFBasis, GridSpec
from .basisfit import emit_fit_curves, fit_transform
from .bench import MODES, BenchConfig, emit_bench, format_table, run_bench
from .data import SYNTH_TASKS, load_mnist, subset, synth_regression, train_val_split, xor
from .errors import ConfigError, DataError, FormatError, NumericError, SingularMatrixError
from .gradcheck import DEFAULT_TOLERANCE, run_suite
from .network import NORM_PLACEMENTS, NetworkSpec, TrainConfig, build, evaluate, save, train

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
OUT_ENV = "KANBASIS_OUT"

log = logging.getLogger("kanbasis")


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


class Run:
    """Collects outputs of one command and writes the manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.out = Path(args.out) if args.out else Path(os.environ.get(OUT_ENV, "out")) / command
        self.out.mkdir(parents=True, exist_ok=True)
        self.config = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
        self.started = datetime.now(timezone.utc)
        self.t0 = time.perf_counter()
        self.outputs: list[str] = []
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(name)
        return p

    def finish(self):
        manifest = {
            "command": self.command,
            "config": self.config,
            "seed": self.config.get("seed"),
            "version": __version__,
            "started": self.started.isoformat(),
            "duration_s": time.perf_counter() - self.t0,
            "outputs": self.outputs,
            **self.extra,
        }
        _write_json(self.out / "manifest.json", manifest)


# ------------------------------------------------------------- commands


def cmd_fit_basis(args) -> int:
    run = Run("fit-basis", args)
    lo, hi = args.range
    spline = BSplineBasis(GridSpec(lo, hi, args.grids, args.order))
    rbf = GaussianRBFBasis(GridSpec(lo, hi, args.centers), args.bandwidth)
    margin = args.fit_margin * spline.grid.spacing
    report = fit_transform(spline, rbf, args.samples, lo - margin, hi + margin)
    emit_fit_curves(report, spline, rbf, run.path("fit_curves.csv"))
    _write_json(run.path("fit_report.json"), report.to_dict())
    run.finish()
    print(f"max_abs_error {report.max_abs_error:.6g}  rms_error {report.rms_error:.6g}  "
          f"transform {report.transform.shape[0]}x{report.transform.shape[1]}  -> {run.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    run = Run("bench", args)
    modes = MODES if args.mode == "both" else (args.mode,)
    cfg = BenchConfig(args.in_dim, args.out_dim, args.basis_count, args.batch, args.rounds, args.repeats,
                      modes, (args.baseline, args.candidate), args.warmup)
    report = run_bench(cfg, args.seed, pin=not args.no_pin)
    emit_bench(report, run.path("bench.csv"))
    run.outputs.append("bench.txt")
    run.extra["report"] = report.to_dict()
    run.finish()
    sys.stdout.write(format_table(report))
    return EXIT_OK


def _load_training_data(args):
    if args.synth == "xor":
        ds = xor()
        return ds, ds, "cross_entropy"
    if args.synth:
        n = args.subset or 1000
        return synth_regression(args.synth, n, args.seed), synth_regression(args.synth, max(n // 4, 1), args.seed + 1), "mse"
    if not args.mnist_dir:
        raise DataError("no data: pass --mnist-dir DIR (containing train-images-idx3-ubyte etc.) or --synth NAME")
    full = load_mnist(args.mnist_dir, "train")
    try:
        val = load_mnist(args.mnist_dir, "test")
        tr = full
    except DataError:
        # 10000 of MNIST's 60000; small fixture sets keep the same ratio
        holdout = min(10_000, max(len(full) // 6, 1))
        log.info("no test split found; holding out %d training rows for validation", holdout)
        tr, val = train_val_split(full, args.seed, holdout)
    if args.subset:
        tr = subset(tr, args.subset, args.seed)
    if args.val_subset:
        val = subset(val, args.val_subset, args.seed)
    return tr, val, "cross_entropy"


def cmd_train(args) -> int:
    widths = tuple(args.arch)
    spec = NetworkSpec(widths, family=args.family, basis_count=args.basis_count, layernorm=args.layernorm,
                       linear_head=args.linear_head, seed=args.seed)
    data, val, loss = _load_training_data(args)
    cfg = TrainConfig(args.epochs, args.batch, args.lr, args.optimizer, args.seed, loss)
    net = build(spec)
    run = Run("train", args)
    csv_path = run.path("epochs.csv")
    wall = []
    with csv_path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
        pre_loss, pre_acc = evaluate(net, val, loss)
        w.writerow([0, "", repr(pre_loss), "" if pre_acc is None else repr(pre_acc)])

        def emit(rec):
            w.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss),
                        "" if rec.val_accuracy is None else repr(rec.val_accuracy)])
            f.flush()
            wall.append(rec.wall_time)

        try:
            records = train(net, data, cfg, val=val, on_epoch=emit)
        except NumericError:
            run.extra["epoch_wall_time_s"] = wall
            run.finish()
            raise
    save(net, run.path("model.kanf"))
    run.extra["epoch_wall_time_s"] = wall
    run.finish()
    final = records[-1]
    if final.val_accuracy is not None:
        print(f"final val_accuracy {final.val_accuracy:.4f}  val_loss {final.val_loss:.6g}  -> {run.out}")
    else:
        print(f"final val_loss {final.val_loss:.6g}  -> {run.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    families = (args.family,) if args.family else ("spline", "rbf")
    results = run_suite(families, include_shared=args.family is None, seed=args.seed)
    worst_name, worst_err = None, -1.0
    for r in results:
        key, err = r.worst
        status = "ok" if err <= args.tolerance else "FAIL"
        print(f"{r.name:28s} max rel err {err:.3e} ({key})  {status}")
        if err > worst_err:
            worst_name, worst_err = f"{r.name}:{key}", err
    if worst_err > args.tolerance:
        print(f"gradcheck failed: worst offender {worst_name} ({worst_err:.3e} > {args.tolerance:g})")
        return EXIT_CHECK
    print(f"gradcheck passed (tolerance {args.tolerance:g})")
    return EXIT_OK


# --------------------------------------------------------------- parser


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(s):
    v = float(s)
    if not (np.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {s}")
    return v


def _nonneg_float(s):
    v = float(s)
    if not (np.isfinite(v) and v >= 0):
        raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
    return v


def _widths(s):
    try:
        widths = [int(w) for w in s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None
    if len(widths) < 2 or min(widths) < 1:
        raise argparse.ArgumentTypeError(f"need at least two positive widths, got {s!r}")
    return widths


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kanbasis", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-basis", help="fit Gaussian RBFs to a B-spline basis")
    p.add_argument("--grids", type=_positive_int, default=5, help="spline knot intervals G")
    p.add_argument("--order", type=_positive_int, default=3, help="spline order k")
    p.add_argument("--centers", type=_positive_int, default=8, help="RBF centers N")
    p.add_argument("--bandwidth", type=_positive_float, default=None, help="RBF width h (default: center spacing)")
    p.add_argument("--range", type=float, nargs=2, default=[-2.0, 2.0], metavar=("LO", "HI"))
    p.add_argument("--samples", type=_positive_int, default=1000)
    p.add_argument("--fit-margin", type=_nonneg_float, default=0.0,
                   help="widen the sampled interval by this many knot spacings per side")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_basis)

    p = sub.add_parser("bench", help="time forward / forward+backward of one layer per family")
    p.add_argument("--in-dim", type=_positive_int, default=100)
    p.add_argument("--out-dim", type=_positive_int, default=100)
    p.add_argument("--basis-count", type=_positive_int, default=8)
    p.add_argument("--batch", type=_positive_int, default=1)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--repeats", type=_positive_int, default=1000)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--mode", choices=(*MODES, "both"), default="both")
    p.add_argument("--baseline", choices=("spline", "rbf"), default="spline")
    p.add_argument("--candidate", choices=("spline", "rbf"), default="rbf")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-pin", action="store_true", help="do not pin to a single CPU")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", help="train a KAN on MNIST or a synthetic task")
    p.add_argument("--arch", type=_widths, default=[784, 64, 10], help="comma-separated widths")
    p.add_argument("--family", choices=("rbf", "spline"), default="rbf")
    p.add_argument("--basis-count", type=_positive_int, default=8)
    p.add_argument("--layernorm", choices=NORM_PLACEMENTS, default="auto")
    p.add_argument("--linear-head", action="store_true")
    p.add_argument("--epochs", type=_positive_int, default=20)
    p.add_argument("--lr", type=_nonneg_float, default=1e-3)
    p.add_argument("--batch", type=_positive_int, default=64)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mnist-dir")
    p.add_argument("--subset", type=_positive_int, help="stratified training subset size")
    p.add_argument("--val-subset", type=_positive_int, help="stratified validation subset size")
    p.add_argument("--synth", choices=("xor", *SYNTH_TASKS))
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    p.add_argument("--family", choices=("spline", "rbf"))
    p.add_argument("--tolerance", type=_positive_float, default=DEFAULT_TOLERANCE)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "fit-basis" and not args.range[0] < args.range[1]:
        parser.error(f"--range needs LO < HI, got {args.range[0]} {args.range[1]}")
    if args.command == "bench" and args.rounds < 2:
        parser.error("--rounds must be >= 2 (standard deviation needs two rounds)")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"kanbasis: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, OSError) as exc:
        print(f"kanbasis: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, SingularMatrixError) as exc:
        print(f"kanbasis: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
