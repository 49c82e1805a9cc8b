"""Micro-benchmark of one KAN layer per basis family.

Protocol: build a layer per slot with seeded weights, feed one fixed random
input, warm up, then time ``rounds`` rounds of ``repeats`` calls each. The
clock is read once per round, and the per-call time of a round is its elapsed
time divided by ``repeats``. Mean and sample standard deviation are taken
across round means. Rounds of the two slots are interleaved so slow drift in
machine load affects both equally.
"""

from __future__ import annotations

import csv
import os
import time
from contextlib import contextmanager, nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .basis import FAMILIES, make_basis
from .errors import ConfigError
from .layers import KanLayer

MODES = ("forward", "forward_backward")
# Rounds shorter than this are dominated by timer overhead and resolution.
MIN_ROUND_SECONDS = 1e-3

REFERENCE_V100 = (
    "reference V100 float32 timings: spline 742±186 us fwd, 1160±18.8 us fwd+bwd; "
    "rbf 223±19 us fwd, 925±13.6 us fwd+bwd (3.33x, 1.25x)"
)


@dataclass(frozen=True)
class BenchConfig:
    in_dim: int = 100
    out_dim: int = 100
    basis_count: int = 8
    batch: int = 1
    rounds: int = 10
    repeats: int = 1000
    modes: tuple[str, ...] = MODES
    # (baseline, candidate); speedup = baseline mean / candidate mean
    families: tuple[str, str] = ("spline", "rbf")
    warmup: int = 100

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "families", tuple(self.families))
        if self.rounds < 2:
            raise ConfigError(f"rounds must be >= 2 to estimate a standard deviation, got {self.rounds}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if min(self.in_dim, self.out_dim, self.basis_count, self.batch) < 1:
            raise ConfigError("dimensions, basis count and batch must all be >= 1")
        if self.warmup < 0:
            raise ConfigError("warmup must be >= 0")
        if not self.modes or any(m not in MODES for m in self.modes):
            raise ConfigError(f"modes must be a non-empty subset of {MODES}, got {self.modes}")
        if len(self.families) != 2 or any(f not in FAMILIES for f in self.families):
            raise ConfigError(f"families must be a (baseline, candidate) pair from {FAMILIES}")


@dataclass(frozen=True)
class Timing:
    mean_us: float
    std_us: float
    round_us: tuple[float, ...]


@dataclass
class BenchRow:
    implementation: str
    family: str
    timings: dict[str, Timing] = field(default_factory=dict)
    # baseline mean / this row's mean, per mode
    acceleration: dict[str, float] = field(default_factory=dict)


@dataclass
class BenchReport:
    config: BenchConfig
    seed: int
    rows: list[BenchRow]
    warnings: list[str]
    checksum: float
    sink_value: float = 0.0
    reference: str = REFERENCE_V100

    def speedup(self, mode: str) -> float:
        """Baseline mean over candidate mean for ``mode``."""
        return self.rows[1].acceleration[mode]

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "seed": self.seed,
            "rows": [
                {
                    "implementation": r.implementation,
                    "family": r.family,
                    "timings": {m: asdict(t) for m, t in r.timings.items()},
                    "acceleration": r.acceleration,
                }
                for r in self.rows
            ],
            "warnings": self.warnings,
            "checksum": self.checksum,
            "reference": self.reference,
        }


class Sink:
    """Folds one element of every result into a running value the caller keeps."""

    __slots__ = ("value",)

    def __init__(self):
        self.value = 0.0

    def consume(self, out):
        self.value += out.flat[0]


@contextmanager
def _pinned():
    if not hasattr(os, "sched_getaffinity"):
        yield
        return
    before = os.sched_getaffinity(0)
    try:
        os.sched_setaffinity(0, {min(before)})
    except OSError:
        yield
        return
    try:
        yield
    finally:
        os.sched_setaffinity(0, before)


def _callable(layer: KanLayer, x: np.ndarray, grad: np.ndarray, mode: str):
    if mode == "forward":
        return lambda: layer.forward(x)

    def fwd_bwd():
        layer.forward(x)
        return layer.backward(grad)

    return fwd_bwd


def build_slots(cfg: BenchConfig, seed: int):
    """The benchmarked layers (no layer normalization) and their shared input."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=(cfg.batch, cfg.in_dim))
    grad = rng.standard_normal((cfg.batch, cfg.out_dim))
    layers = [
        KanLayer(cfg.in_dim, cfg.out_dim, make_basis(fam, cfg.basis_count), rng=np.random.default_rng([seed, i]))
        for i, fam in enumerate(cfg.families)
    ]
    return layers, x, grad


def _labels(families):
    if families[0] == families[1]:
        return [f"{families[0]}-a", f"{families[1]}-b"]
    return list(families)


def run_bench(cfg: BenchConfig = BenchConfig(), seed: int = 0, pin: bool = True) -> BenchReport:
    layers, x, grad = build_slots(cfg, seed)
    rows = [BenchRow(label, fam) for label, fam in zip(_labels(cfg.families), cfg.families)]
    sink = Sink()
    warnings = []
    checksum = 0.0
    with _pinned() if pin else nullcontext():
        for mode in cfg.modes:
            fns = [_callable(layer, x, grad, mode) for layer in layers]
            for fn in fns:
                checksum += float(np.sum(fn()))
                for _ in range(cfg.warmup):
                    sink.consume(fn())
            per_round = [[], []]
            for _ in range(cfg.rounds):
                for slot, fn in enumerate(fns):
                    t0 = time.perf_counter()
                    for _ in range(cfg.repeats):
                        sink.consume(fn())
                    elapsed = time.perf_counter() - t0
                    if elapsed < MIN_ROUND_SECONDS:
                        warnings.append(
                            f"{rows[slot].implementation}/{mode}: round took {elapsed * 1e6:.1f} us, "
                            f"below the {MIN_ROUND_SECONDS * 1e6:.0f} us timing floor; increase repeats"
                        )
                    per_round[slot].append(elapsed / cfg.repeats * 1e6)
            for row, samples in zip(rows, per_round):
                a = np.array(samples)
                row.timings[mode] = Timing(float(a.mean()), float(a.std(ddof=1)), tuple(samples))
            base = rows[0].timings[mode].mean_us
            for row in rows:
                row.acceleration[mode] = base / row.timings[mode].mean_us
    # dedupe warnings while keeping order
    warnings = list(dict.fromkeys(warnings))
    return BenchReport(cfg, seed, rows, warnings, checksum, sink.value)


_MODE_HEADERS = {"forward": ("Fwd. (us)", "Fwd. acc."), "forward_backward": ("Fwd. + Bwd. (us)", "Fwd. + Bwd. acc.")}
_MODE_COLUMNS = {"forward": "fwd", "forward_backward": "fwd_bwd"}


def table_rows(report: BenchReport) -> list[list[str]]:
    """Header and data rows in the layout implementation / time / acceleration per mode."""
    header = ["Implementation"]
    for mode in report.config.modes:
        header += list(_MODE_HEADERS[mode])
    out = [header]
    for row in report.rows:
        cells = [row.implementation]
        for mode in report.config.modes:
            t = row.timings[mode]
            cells += [f"{t.mean_us:.1f}±{t.std_us:.1f}", f"{row.acceleration[mode]:.2f}"]
        out.append(cells)
    return out


def format_table(report: BenchReport) -> str:
    rows = table_rows(report)
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    c = report.config
    lines.append("")
    lines.append(
        f"layer {c.in_dim}->{c.out_dim}, {c.basis_count} basis functions, batch {c.batch}, "
        f"{c.rounds} rounds x {c.repeats} repeats, float64 CPU"
    )
    lines.append(report.reference)
    lines += [f"warning: {w}" for w in report.warnings]
    return "\n".join(lines) + "\n"


def csv_header(modes) -> list[str]:
    header = ["implementation", "family"]
    for mode in modes:
        p = _MODE_COLUMNS[mode]
        header += [f"{p}_mean_us", f"{p}_std_us", f"{p}_acc"]
    return header


def emit_bench(report: BenchReport, path) -> tuple[Path, Path]:
    """Write ``path`` (CSV, full precision) and a sibling ``.txt`` table."""
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(csv_header(report.config.modes))
        for row in report.rows:
            cells = [row.implementation, row.family]
            for mode in report.config.modes:
                t = row.timings[mode]
                cells += [repr(t.mean_us), repr(t.std_us), repr(row.acceleration[mode])]
            w.writerow(cells)
    txt = path.with_suffix(".txt")
    txt.write_text(format_table(report))
    return path, txt
