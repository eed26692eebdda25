"""``poissonmat`` command: ingest, split, sweep, write results.csv/json.

Exit codes: 0 success, 1 invalid arguments, 2 unreadable or unparsable
input.  Both result files appear together or not at all.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .algorithms import ALL_KINDS, RecommenderKind
from .core import TrainConfig
from .eval import DEFAULT_GRID, DEFAULT_PROBE_USERS, EvalReport, LearningRateGrid, grid_search
from .ingest import DatasetError, load_dataset, synth_zipf_dataset, train_test_split

FORMATS = ("movielens1m", "comoda", "csv", "synthetic")
CSV_HEADER = ("algorithm", "learning_rate", "mae", "rmse", "fairness", "train_seconds", "seed", "status")


class SpecError(ValueError):
    """Invalid experiment settings (exit code 1)."""


@dataclass
class ExperimentSpec:
    format: str = "synthetic"
    dataset_path: Optional[str] = None
    synth_users: int = 500
    synth_items: int = 200
    synth_ratings_per_user: int = 20
    algorithms: list[str] = field(default_factory=lambda: [str(k) for k in ALL_KINDS])
    grid: list[float] = field(default_factory=lambda: list(DEFAULT_GRID))
    split_fraction: float = 0.2
    latent_dim: int = 10
    seed: int = 0
    output_dir: str = "results"
    probe_users: int = DEFAULT_PROBE_USERS
    record_timings: bool = False

    def validate(self) -> None:
        if self.format not in FORMATS:
            raise SpecError(f"unknown format {self.format!r}; expected one of {FORMATS}")
        if self.format == "synthetic":
            if self.dataset_path:
                raise SpecError("--dataset cannot be combined with --format synthetic")
            if min(self.synth_users, self.synth_items, self.synth_ratings_per_user) < 1:
                raise SpecError("synthetic counts must be >= 1")
            if self.synth_ratings_per_user > self.synth_items:
                raise SpecError("--synth-ratings-per-user cannot exceed --synth-items")
        elif not self.dataset_path:
            raise SpecError(f"--dataset is required for --format {self.format}")
        if not self.algorithms:
            raise SpecError("no algorithms given")
        try:
            for a in self.algorithms:
                RecommenderKind.parse(a)
            LearningRateGrid(tuple(self.grid))
            TrainConfig(latent_dim=self.latent_dim, seed=self.seed)
        except ValueError as exc:
            raise SpecError(str(exc)) from None
        if not 0.0 < self.split_fraction < 1.0:
            raise SpecError("--split must lie in (0, 1)")
        if self.probe_users < 2:
            raise SpecError("--probe-users must be >= 2")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _sorted_rows(report: EvalReport):
    return sorted(report.rows, key=lambda r: (r.algorithm, -1.0 if r.learning_rate is None else r.learning_rate))


def plot_csv_text(report: EvalReport) -> str:
    if not report.rows:
        raise ValueError("empty report")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in _sorted_rows(report):
        writer.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])
    return buf.getvalue()


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_plot_csv(report: EvalReport, path: str) -> None:
    """Metric-vs-learning-rate table, one row per cell, sorted by (algorithm, rate)."""
    _atomic_write(path, plot_csv_text(report))


def results_json_text(report: EvalReport, spec: ExperimentSpec) -> str:
    rows = [{**{name: getattr(r, name) for name in CSV_HEADER}, "best": r.best}
            for r in _sorted_rows(report)]
    best = {alg: {"learning_rate": r.learning_rate, "mae": r.mae}
            for alg, r in sorted(report.best_rows().items())}
    doc = {"spec": asdict(spec), "rows": rows, "best_per_algorithm": best}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def summary_table(report: EvalReport) -> str:
    lines = [f"{'algorithm':<20} {'best_lr':>10} {'mae':>10} {'fairness':>10}"]
    best = report.best_rows()
    for alg in dict.fromkeys(r.algorithm for r in report.rows):
        r = best.get(alg)
        if r is None:
            lines.append(f"{alg:<20} {'-':>10} {'failed':>10} {'-':>10}")
        else:
            lr = "-" if r.learning_rate is None else f"{r.learning_rate:.3g}"
            lines.append(f"{alg:<20} {lr:>10} {r.mae:>10.4f} {r.fairness:>10.4f}")
    return "\n".join(lines)


def load_spec_dataset(spec: ExperimentSpec):
    if spec.format == "synthetic":
        return synth_zipf_dataset(spec.synth_users, spec.synth_items,
                                  spec.synth_ratings_per_user, spec.seed)
    return load_dataset(spec.dataset_path, spec.format)


def run_experiment(spec: ExperimentSpec, out=None) -> EvalReport:
    """Ingest, split, sweep and write both result files into ``spec.output_dir``."""
    spec.validate()
    dataset = load_spec_dataset(spec)
    train_set, test_set = train_test_split(dataset, spec.split_fraction, spec.seed)
    config = TrainConfig(latent_dim=spec.latent_dim, seed=spec.seed)
    report = grid_search(spec.algorithms, LearningRateGrid(tuple(spec.grid)), train_set, test_set,
                         config, probe_users=spec.probe_users, record_timings=spec.record_timings)
    csv_text = plot_csv_text(report)
    json_text = results_json_text(report, spec)
    os.makedirs(spec.output_dir, exist_ok=True)
    csv_path = os.path.join(spec.output_dir, "results.csv")
    json_path = os.path.join(spec.output_dir, "results.json")
    # stage both before publishing either
    staged = []
    try:
        for path, text in ((csv_path, csv_text), (json_path, json_text)):
            fd, tmp = tempfile.mkstemp(dir=spec.output_dir, prefix=".tmp-")
            staged.append(tmp)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        os.replace(staged[0], csv_path)
        os.replace(staged[1], json_path)
    finally:
        for tmp in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
    print(summary_table(report), file=out if out is not None else sys.stdout)
    return report


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    d = ExperimentSpec()
    p = _Parser(prog="poissonmat", description="Learning-rate sweep over PoissonMat and baseline recommenders.")
    p.add_argument("--dataset", dest="dataset_path", help="ratings file (not used with --format synthetic)")
    p.add_argument("--format", default=d.format, choices=FORMATS)
    p.add_argument("--algos", dest="algorithms", type=_names, default=d.algorithms,
                   help="comma list, e.g. poissonmat,poissonmat_hybrid,random (default: all nine)")
    p.add_argument("--grid", type=_floats, default=d.grid, help="comma list of learning rates")
    p.add_argument("--split", dest="split_fraction", type=float, default=d.split_fraction)
    p.add_argument("--dim", dest="latent_dim", type=int, default=d.latent_dim)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--out", dest="output_dir", default=d.output_dir)
    p.add_argument("--synth-users", type=int, default=d.synth_users)
    p.add_argument("--synth-items", type=int, default=d.synth_items)
    p.add_argument("--synth-ratings-per-user", type=int, default=d.synth_ratings_per_user)
    p.add_argument("--probe-users", type=int, default=d.probe_users,
                   help="users sampled for the fairness metric")
    p.add_argument("--timings", dest="record_timings", action="store_true",
                   help="record wall-clock training time (makes output non-reproducible)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExperimentSpec(**vars(args))
    try:
        spec.validate()
    except SpecError as exc:
        print(f"poissonmat: invalid spec: {exc}", file=sys.stderr)
        return 1
    try:
        run_experiment(spec)
    except (OSError, DatasetError, UnicodeDecodeError) as exc:
        print(f"poissonmat: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
