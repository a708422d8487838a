"""Command line interface: ``softlab <command> [flags]``.

Every subcommand accepts ``--config FILE``, a JSON object whose keys mirror
the long flag names (``"pure-frac": 0.4``). Explicit flags win over the
config file, which wins over built-in defaults.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 malformed file,
5 numeric failure, 6 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import embed, labels, metrics, plots, synth
from .errors import SoftlabError, ValidationError
from .experiment import ExperimentSpec, run_experiment
from .nnet import TrainConfig, load_model, predict, save_model, train
from .nnet.train import TARGET_MODES, make_targets, write_log

log = logging.getLogger("softlab")

EXIT_IO = 6

LABEL_CHOICES = TARGET_MODES


def _fractions(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in str(text).split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return tuple(parts)


def _modes(text) -> tuple[str, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(text)
    return tuple(m.strip() for m in str(text).split(",") if m.strip())


def _add_generate(sub):
    p = sub.add_parser("generate", help="render the synthetic dataset")
    p.add_argument("--out", required=True, help="dataset file (SLD1); manifest is written next to it")
    p.add_argument("--count", type=int, default=15000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pure-frac", type=float, default=0.4)
    p.add_argument("--split", type=_fractions, default=(0.6, 0.2, 0.2))
    p.add_argument("--size", type=int, default=32)
    p.set_defaults(func=cmd_generate)


def _add_annotate(sub):
    p = sub.add_parser("annotate", help="simulate annotators for every item of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--annotators", type=int, default=15)
    p.add_argument("--flip-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="annotation table (CSV)")
    p.set_defaults(func=cmd_annotate)


def _add_train(sub):
    p = sub.add_parser("train", help="train a classifier on hard or soft targets")
    p.add_argument("--dataset", required=True)
    p.add_argument("--labels", choices=LABEL_CHOICES, default="gt-soft")
    p.add_argument("--annotators", type=int, default=15)
    p.add_argument("--annotations", help="annotation table for sim-* modes (default: simulate)")
    p.add_argument("--flip-rate", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--wd", type=float, default=0.0005)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--restart-epochs", type=int, default=None, help="cosine warm-restart period in epochs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model file (SLM1)")
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.set_defaults(func=cmd_train)


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a model on one split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=synth.SPLITS, default="test")
    p.add_argument("--out", required=True, help="report table; one row is appended")
    p.add_argument("--run-id", help="default: model file stem")
    p.add_argument("--seed", type=int, default=0, help="recorded in the report row")
    p.add_argument("--label-mode", default="", help="recorded in the report row")
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_eval)


def _add_embed(sub):
    p = sub.add_parser("embed", help="t-SNE of GAP features plus SVG scatter")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=synth.SPLITS, default="test")
    p.add_argument("--sample", type=int, default=1000)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--tsne-lr", type=float, default=200.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-svg", required=True)
    p.set_defaults(func=cmd_embed)


def _add_experiment(sub):
    p = sub.add_parser("experiment", help="multi-seed hard-vs-soft comparison")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=6000)
    p.add_argument("--dataset-seed", type=int, default=0)
    p.add_argument("--pure-frac", type=float, default=0.4)
    p.add_argument("--split", type=_fractions, default=(0.6, 0.2, 0.2))
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--modes", type=_modes, default=("gt-soft", "gt-hard"))
    p.add_argument("--seeds", type=int, default=3, help="number of resplit seeds")
    p.add_argument("--seed", type=int, default=0, help="first experiment seed")
    p.add_argument("--annotators", type=int, default=15)
    p.add_argument("--flip-rate", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--wd", type=float, default=0.0005)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--restart-epochs", type=int, default=None)
    p.set_defaults(func=cmd_experiment)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_generate, _add_annotate, _add_train, _add_eval, _add_embed, _add_experiment):
        add(sub)
    for p in sub.choices.values():
        p.add_argument("--config", help="JSON file with defaults keyed by flag name")
    return parser


def _config_defaults(parser: argparse.ArgumentParser, command: str, path: str) -> None:
    """Install the JSON file's values as defaults of ``command``'s parser."""
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    sub = parser._subparsers._group_actions[0].choices[command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise ValidationError(f"{path}: unknown option {key!r}")
        action = known[dest]
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        if action.type is not None and isinstance(value, str):
            value = action.type(value)
        defaults[dest] = value
        # a value from the file satisfies a required flag
        action.required = False
    sub.set_defaults(**defaults)


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    # find the command and --config before the full parse so that config
    # values can stand in for required flags
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("command", nargs="?")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command in parser._subparsers._group_actions[0].choices:
        _config_defaults(parser, known.command, known.config)
    return parser.parse_args(argv)


def _load_dataset(path) -> synth.SyntheticDataset:
    return synth.read_dataset(path)


def cmd_generate(args) -> None:
    manifest = synth.DatasetManifest(
        seed=args.seed,
        count=args.count,
        pure_fraction=args.pure_frac,
        split_fractions=args.split,
        image_size=(args.size, args.size),
    )
    ds = synth.generate_dataset(manifest)
    synth.write_dataset(args.out, ds)
    sizes = np.bincount(ds.splits, minlength=3)
    print(f"wrote {len(ds)} samples to {args.out} (train/val/test {sizes[0]}/{sizes[1]}/{sizes[2]})")


def cmd_annotate(args) -> None:
    ds = _load_dataset(args.dataset)
    votes = labels.simulate_annotation_matrix(ds.labels.astype(np.float64), args.annotators, args.seed, args.flip_rate)
    labels.write_annotations(args.out, votes)
    print(f"wrote {votes.size} annotations for {len(votes)} items to {args.out}")


def cmd_train(args) -> None:
    ds = _load_dataset(args.dataset)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        base_lr=args.lr,
        weight_decay=args.wd,
        momentum=args.momentum,
        restart_epochs=args.restart_epochs,
        seed=args.seed,
        target_mode=args.labels,
        annotators=args.annotators,
        flip_rate=args.flip_rate,
    )
    train_idx = ds.indices("train")
    targets = None
    if args.annotations:
        if not args.labels.startswith("sim-"):
            raise ValidationError("--annotations only applies to sim-soft / sim-hard")
        sets = labels.read_annotations(args.annotations, ds.labels.shape[1])
        if len(sets) != len(ds):
            raise ValidationError(f"annotation table covers {len(sets)} items, dataset has {len(ds)}")
        votes = labels.stack_sets(sets[i] for i in train_idx)
        targets = labels.aggregate_matrix(votes, ds.labels.shape[1], args.labels[4:])
    else:
        targets = make_targets(ds.labels[train_idx], args.labels, args.annotators, args.seed, args.flip_rate)

    def report(rec):
        log.info("epoch %d train_loss %.4f val_macro_acc %.4f", rec.epoch, rec.train_loss, rec.val_macro_acc)

    net, records = train(ds, config, targets=targets, on_epoch=report)
    save_model(args.out, net)
    log_path = args.log or f"{args.out}.log.csv"
    write_log(log_path, records)
    print(f"saved model to {args.out}, log to {log_path}")


def cmd_eval(args) -> None:
    ds = _load_dataset(args.dataset)
    net = load_model(args.model, num_classes=ds.labels.shape[1])
    idx = ds.indices(args.split)
    if len(idx) == 0:
        raise ValidationError(f"split {args.split!r} is empty")
    probs, _ = predict(net, ds.images[idx])
    report = metrics.evaluate(probs, ds.labels[idx], args.bins)
    run_id = args.run_id or Path(args.model).stem
    out = Path(args.out)
    new = not out.exists() or out.stat().st_size == 0
    with open(out, "a", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(metrics.REPORT_HEADER)
        writer.writerow(report.row(run_id, args.seed, args.label_mode))
    print(",".join(report.row(run_id, args.seed, args.label_mode)))


def cmd_embed(args) -> None:
    ds = _load_dataset(args.dataset)
    net = load_model(args.model, num_classes=ds.labels.shape[1])
    split_idx = ds.indices(args.split)
    pick = split_idx[embed.subsample(len(split_idx), args.sample, args.seed)]
    feats = embed.extract_embeddings(net, ds.images[pick])
    config = embed.TsneConfig(
        perplexity=args.perplexity, iterations=args.iters, learning_rate=args.tsne_lr, seed=args.seed
    )
    result = embed.tsne(feats, config)
    item_labels = ds.labels[pick].astype(np.float64)
    embed.write_embedding_table(args.out_csv, pick, result.points, item_labels)
    title = f"{Path(args.model).stem} / {args.split} / perplexity {args.perplexity:g}"
    Path(args.out_svg).write_text(plots.scatter_svg(result.points, item_labels, title), encoding="utf-8")
    print(f"embedded {len(pick)} points; final KL {result.objective_trace[-1]:.4f}")


def spec_from_args(args) -> ExperimentSpec:
    manifest = synth.DatasetManifest(
        seed=args.dataset_seed,
        count=args.count,
        pure_fraction=args.pure_frac,
        split_fractions=args.split,
        image_size=(args.size, args.size),
    )
    template = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        base_lr=args.lr,
        weight_decay=args.wd,
        momentum=args.momentum,
        restart_epochs=args.restart_epochs,
        seed=args.seed,
        annotators=args.annotators,
        flip_rate=args.flip_rate,
    )
    return ExperimentSpec(manifest, template, _modes(args.modes), args.seeds, str(args.out))


def cmd_experiment(args) -> None:
    table = run_experiment(spec_from_args(args), progress=print)
    for row in table.rows:
        print(",".join(row.cells()))


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SoftlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        args.func(args)
    except SoftlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
