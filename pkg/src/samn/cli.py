"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric divergence.
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines.nets import load_network, save_network
from .baselines.svm import grid_search_cv, load_svm, save_svm
from .dataio import load_dataset, load_svmlight, standardize_apply, standardize_fit, stratified_split
from .errors import ConfigError, DataError, NumericError, StateError
from .harness.experiment import MODELS, ExperimentConfig, SvcClassifier, run_experiment, run_repetition
from .harness.tables import emit_table, summary_markdown
from .model import load_checkpoint, read_checkpoint, save_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _label_col(value):
    try:
        return int(value)
    except ValueError:
        return value


def _add_data_args(p):
    p.add_argument("--dataset", required=True, help="CSV or svmlight file")
    p.add_argument("--format", choices=("csv", "svmlight"), default=None, help="default: guessed from extension")
    p.add_argument("--label-col", type=_label_col, default=-1, help="column index or header name (CSV only)")


def build_parser():
    parser = _Parser(prog="samn", description="Sample attention memory network and baselines")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model on one seeded split and save a checkpoint")
    _add_data_args(p)
    p.add_argument("--model", choices=MODELS, default="samn")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="results")

    p = sub.add_parser("experiment", help="run repeated splits from a JSON config")
    p.add_argument("--config", required=True)

    p = sub.add_parser("predict", help="predict class names for the rows of a file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("csv", "svmlight"), default=None)
    p.add_argument("--label-col", type=_label_col, default=-1,
                   help="label column to drop when the file has one more column than the model's features")

    p = sub.add_parser("gridsearch", help="cross-validated (gamma, C) selection for the kernel SVM")
    _add_data_args(p)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--folds", type=int, default=5)
    return parser


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_train(args):
    dataset = load_dataset(args.dataset, args.format, args.label_col)
    config = ExperimentConfig(
        args.dataset, args.format, args.label_col, args.model, args.epochs, args.lr, args.batch_size,
        seeds=[args.seed], out_dir=args.out,
    )
    row, _, trained = run_repetition(config, dataset, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"{dataset.name}_{args.model}_seed{args.seed}.npz"
    std, names = trained.standardization, dataset.class_names
    if args.model == "svc":
        save_svm(ckpt, trained.model.svm, std, names)
    elif args.model in ("cenet", "dnmsvm"):
        save_network(ckpt, trained.model, std, names)
    else:
        save_checkpoint(ckpt, trained.model, std, names)
    emit_table([row], out, f"{dataset.name}_{args.model}_seed{args.seed}")
    report = {
        "dataset": dataset.name, "model": args.model, "seed": args.seed, "best_epoch": trained.best_epoch,
        "accuracy": row.accuracy, "precision": row.precision, "recall": row.recall, "f1": row.f1,
        "selected": trained.selected, "checkpoint": str(ckpt),
    }
    print(json.dumps(report, indent=2))


def cmd_experiment(args):
    config = ExperimentConfig.from_file(args.config)
    report = run_experiment(config)
    print(summary_markdown(report.rows), end="")


def _load_any(path):
    try:
        meta, _ = read_checkpoint(path)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    kind = meta.get("kind")
    if kind == "samn":
        return load_checkpoint(path)
    if kind == "svc":
        svm, std, names = load_svm(path)
        return SvcClassifier(svm), std, names
    if kind in ("cenet", "dnmsvm"):
        return load_network(path)
    raise StateError(f"unknown checkpoint kind {kind!r}")


def _n_features(model):
    if isinstance(model, SvcClassifier):
        return model.svm.support_vectors.shape[1]
    params = model.params
    return params["W1"].shape[0] if "W1" in params else params["w"].shape[0]


def read_rows(path, fmt, n_features, label_col):
    """Feature matrix of ``path`` plus raw labels when a label column is present."""
    if fmt == "svmlight" or (fmt is None and Path(path).suffix in {".svm", ".libsvm", ".svmlight", ".txt"}):
        ds = load_svmlight(path, n_features=n_features)
        return ds.features, [ds.class_names[i] for i in ds.labels]
    if not Path(path).is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [[c.strip() for c in r] for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: no rows")
    header = None
    try:
        [float(c) for c in rows[0] if c]
        if isinstance(label_col, str):
            raise ValueError
    except ValueError:
        header, rows = rows[0], rows[1:]
    width = len(rows[0]) if rows else 0
    labels = None
    if width == n_features + 1:
        if isinstance(label_col, str):
            if header is None or label_col not in header:
                raise DataError(f"{path}: label column {label_col!r} not found")
            col = header.index(label_col)
        else:
            col = label_col % width
        labels = [r[col] for r in rows]
        rows = [r[:col] + r[col + 1:] for r in rows]
    elif width != n_features:
        raise DataError(f"{path}: expected {n_features} or {n_features + 1} columns, found {width}")
    try:
        x = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric feature value ({exc})") from None
    return x, labels


def cmd_predict(args):
    model, std, names = _load_any(args.checkpoint)
    x, labels = read_rows(args.input, args.format, _n_features(model), args.label_col)
    if std is not None:
        x = standardize_apply(std, x)
    pred = model.predict(x)
    out = [names[i] if names else str(i) for i in pred]
    print("\n".join(out))
    if labels is not None:
        acc = np.mean([a == b for a, b in zip(out, labels)])
        print(f"accuracy {acc:.4f} on {len(labels)} labeled rows", file=sys.stderr)


def cmd_gridsearch(args):
    dataset = load_dataset(args.dataset, args.format, args.label_col)
    if dataset.n_classes != 2:
        raise DataError(f"the kernel SVM is binary-only; dataset has {dataset.n_classes} classes")
    split = stratified_split(dataset, args.seed)
    rows = np.concatenate([split.train, split.val])
    std = standardize_fit(dataset.features[rows])
    y = np.where(dataset.labels[rows] == 1, 1.0, -1.0)
    gamma, C, acc = grid_search_cv(standardize_apply(std, dataset.features[rows]), y, folds=args.folds, seed=args.seed)
    print(json.dumps({"gamma": gamma, "C": C, "cv_accuracy": acc}))


COMMANDS = {"train": cmd_train, "experiment": cmd_experiment, "predict": cmd_predict, "gridsearch": cmd_gridsearch}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, StateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        epoch = getattr(exc, "epoch", None)
        where = f" (epoch {epoch})" if epoch is not None else ""
        print(f"error: training diverged{where}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
