"""Multi-seed hard-vs-soft comparison.

One image pool is generated once; every experiment seed draws a fresh
train/val/test permutation over that pool and trains one model per label
mode with identical initialisation, batch order and schedule, so runs within
a seed differ only in their training targets.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import metrics
from .errors import ValidationError
from .nnet import TrainConfig, make_targets, predict, save_model, train
from .nnet.train import TARGET_MODES, write_log
from .synth import DatasetManifest, generate_dataset, split_assignment, write_dataset

log = logging.getLogger(__name__)

RESULTS_HEADER = (
    "label_mode",
    "n_seeds",
    "macro_acc_mean",
    "macro_acc_std",
    "mean_kl_mean",
    "mean_kl_std",
    "ece_mean",
    "ece_std",
)
PROVENANCE_HEADER = ("run_id", "seed", "label_mode", "dataset_sha256", "split_sha256", "targets_sha256")


@dataclass(frozen=True)
class ExperimentSpec:
    manifest: DatasetManifest = field(default_factory=lambda: DatasetManifest(count=6000))
    train: TrainConfig = field(default_factory=TrainConfig)
    modes: tuple[str, ...] = ("gt-soft", "gt-hard")
    n_seeds: int = 3
    out_dir: str = "experiment"

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if self.n_seeds < 1:
            raise ValidationError("n_seeds must be >= 1")
        if len(set(self.modes)) < 2:
            raise ValidationError("an experiment compares at least two label modes")
        bad = [m for m in self.modes if m not in TARGET_MODES]
        if bad:
            raise ValidationError(f"unknown label modes {bad}")

    def to_json(self) -> str:
        data = asdict(self)
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class ResultRow:
    label_mode: str
    n_seeds: int
    macro_acc: tuple[float, float]
    mean_kl: tuple[float, float]
    ece: tuple[float, float]

    def cells(self) -> tuple[str, ...]:
        return (self.label_mode, str(self.n_seeds)) + tuple(
            f"{v:.6f}" for pair in (self.macro_acc, self.mean_kl, self.ece) for v in pair
        )


@dataclass
class ResultsTable:
    rows: list[ResultRow]
    reports: dict[tuple[int, str], metrics.EvalReport]

    def row(self, mode: str) -> ResultRow:
        return next(r for r in self.rows if r.label_mode == mode)

    def verdict(self) -> str:
        soft = next((m for m in (r.label_mode for r in self.rows) if m.endswith("soft")), None)
        hard = next((m for m in (r.label_mode for r in self.rows) if m.endswith("hard")), None)
        if soft is None or hard is None:
            return "verdict: needs one soft and one hard mode"
        s, h = self.row(soft), self.row(hard)
        d_acc = 100.0 * (s.macro_acc[0] - h.macro_acc[0])
        ratio = s.mean_kl[0] / h.mean_kl[0] if h.mean_kl[0] > 0 else float("inf")
        acc_word = "better" if d_acc > 0 else "not better"
        kl_word = "lower" if ratio < 1 else "not lower"
        return (
            f"verdict: {soft} vs {hard}: macro ACC {d_acc:+.2f} pp ({acc_word}), "
            f"KL ratio {ratio:.3f} ({kl_word})"
        )


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def run_experiment(spec: ExperimentSpec, progress: Callable[[str], None] | None = None) -> ResultsTable:
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(spec.to_json(), encoding="utf-8")
    say = progress or log.info

    dataset = generate_dataset(spec.manifest)
    dataset_path = out / "dataset.sld"
    write_dataset(dataset_path, dataset)
    dataset_hash = _sha256(dataset_path.read_bytes())
    say(f"dataset: {len(dataset)} images, sha256 {dataset_hash[:16]}")

    runs_path = out / "runs.csv"
    prov_path = out / "provenance.csv"
    _write_csv(runs_path, metrics.REPORT_HEADER, [])
    _write_csv(prov_path, PROVENANCE_HEADER, [])

    reports: dict[tuple[int, str], metrics.EvalReport] = {}
    for i in range(spec.n_seeds):
        seed = spec.train.seed + i
        splits = split_assignment(len(dataset), spec.manifest.split_fractions, spec.manifest.seed, seed)
        ds = dataset.with_splits(splits)
        train_idx, test_idx = ds.indices("train"), ds.indices("test")
        for mode in spec.modes:
            run_id = f"seed{seed}-{mode}"
            config = replace(spec.train, seed=seed, target_mode=mode)
            targets = make_targets(ds.labels[train_idx], mode, config.annotators, seed, config.flip_rate)
            net, records = train(ds, config, targets=targets)
            save_model(out / f"{run_id}.slm", net)
            write_log(out / f"{run_id}.log.csv", records)
            probs, _ = predict(net, ds.images[test_idx])
            report = metrics.evaluate(probs, ds.labels[test_idx])
            reports[(seed, mode)] = report
            # appended run by run so finished runs survive a later failure
            with open(runs_path, "a", encoding="utf-8", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(report.row(run_id, seed, mode))
            with open(prov_path, "a", encoding="utf-8", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(
                    (run_id, seed, mode, dataset_hash, _sha256(splits.tobytes()), _sha256(targets.tobytes()))
                )
            say(
                f"{run_id}: macro_acc {report.macro_acc:.4f} mean_kl {report.mean_kl:.4f} ece {report.ece:.4f}"
            )

    rows = []
    for mode in spec.modes:
        reps = [reports[(spec.train.seed + i, mode)] for i in range(spec.n_seeds)]
        rows.append(
            ResultRow(
                mode,
                spec.n_seeds,
                metrics.summarize([r.macro_acc for r in reps]),
                metrics.summarize([r.mean_kl for r in reps]),
                metrics.summarize([r.ece for r in reps]),
            )
        )
    table = ResultsTable(rows, reports)
    _write_csv(out / "results.csv", RESULTS_HEADER, [r.cells() for r in rows])
    verdict = table.verdict()
    (out / "verdict.txt").write_text(verdict + "\n", encoding="utf-8")
    say(verdict)
    return table


def read_results(path) -> dict[str, dict[str, float]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return {
            row["label_mode"]: {k: float(v) for k, v in row.items() if k != "label_mode"}
            for row in csv.DictReader(fh)
        }
