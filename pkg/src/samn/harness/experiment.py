"""Repeated split / standardize / train / evaluate runs and their bookkeeping.

The default seed list is ``1..5``; set ``SAMN_SEEDS`` (comma-separated
integers, e.g. ``SAMN_SEEDS=1,2,3``) to override it.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..baselines.nets import CenetModel, DnmsvmModel
from ..baselines.svm import Kernel, grid_search_cv, smo_train, svm_decision
from ..dataio import load_dataset, standardize_apply, standardize_fit, stratified_split
from ..errors import ConfigError, DataError
from ..model import SamnConfig, SamnModel
from .metrics import aggregate, compute_metrics
from .tables import ResultRow, atomic_write, emit_table, rows_to_csv
from .training import fit_network

log = logging.getLogger(__name__)

MODELS = ("samn", "san", "mbn", "cenet", "dnmsvm", "svc")
BINARY_ONLY = ("dnmsvm", "svc")
DNMSVM_PENALTIES = (0.1, 1.0, 10.0)
SEEDS_ENV = "SAMN_SEEDS"


def default_seeds():
    raw = os.environ.get(SEEDS_ENV, "").strip()
    if not raw:
        return [1, 2, 3, 4, 5]
    try:
        return [int(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"{SEEDS_ENV} must be comma-separated integers, got {raw!r}") from None


@dataclass
class ExperimentConfig:
    dataset: str
    format: str = None
    label_col: object = -1
    model: str = "samn"
    epochs: int = 1000
    lr: float = 0.01
    batch_size: int = 64
    repetitions: int = None
    test_ratio: float = 0.2
    val_ratio: float = 0.2
    seeds: list = None
    out_dir: str = "results"
    layers: int = 3
    blocknum: int = 1
    hidden: int = None
    activation: str = "tanh"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.seeds is None:
            self.seeds = default_seeds()
        self.seeds = [int(s) for s in self.seeds]
        if self.repetitions is None:
            self.repetitions = len(self.seeds)
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.repetitions > len(self.seeds):
            raise ConfigError(f"{self.repetitions} repetitions but only {len(self.seeds)} seeds")
        self.seeds = self.seeds[: self.repetitions]
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        for name in ("test_ratio", "val_ratio"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path):
        """Read a JSON object whose keys are field names."""
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(raw)


# ----------------------------------------------------------------------------
# training one repetition
# ----------------------------------------------------------------------------

class SvcClassifier:
    """Binary kernel SVM exposing class ids; class 1 is the +1 side."""

    def __init__(self, svm):
        self.svm = svm

    def predict(self, x):
        return (svm_decision(self.svm, x)[1] > 0).astype(np.int64)


@dataclass
class TrainedModel:
    model: object
    kind: str
    best_epoch: int = None
    val_accuracy: list = field(default_factory=list)
    selected: dict = field(default_factory=dict)
    standardization: object = None

    def predict(self, x):
        return self.model.predict(x)


def build_network(config, n_features, n_classes, seed, penalty=1.0):
    if config.model in ("samn", "san", "mbn"):
        variant = {"samn": "full", "san": "san", "mbn": "mbn"}[config.model]
        cfg = SamnConfig(
            n_features, n_classes, layers=config.layers, blocknum=config.blocknum,
            hidden=config.hidden, activation=config.activation, variant=variant,
        )
        return SamnModel(cfg, seed=seed)
    if config.model == "cenet":
        return CenetModel(n_features, n_classes, config.layers, config.hidden, config.activation, seed)
    if config.model == "dnmsvm":
        return DnmsvmModel(n_features, config.layers, config.hidden, config.activation, penalty, seed)
    raise ConfigError(f"{config.model!r} is not a network model")


def run_training(config, x_train, y_train, x_val, y_val, n_classes, seed):
    """Train the configured model on already-standardized features."""
    if config.model in BINARY_ONLY and n_classes != 2:
        raise DataError(f"{config.model} is binary-only; dataset has {n_classes} classes")
    fit = dict(epochs=config.epochs, lr=config.lr, batch_size=config.batch_size, seed=seed)

    if config.model == "svc":
        x = np.vstack([x_train, x_val])
        y = np.where(np.concatenate([y_train, y_val]) == 1, 1.0, -1.0)
        gamma, C, cv_acc = grid_search_cv(x, y, seed=seed)
        svm = smo_train(x, y, Kernel("rbf", gamma), C)
        return TrainedModel(SvcClassifier(svm), "svc", selected={"gamma": gamma, "C": C, "cv_accuracy": cv_acc})

    if config.model == "dnmsvm":
        best = None
        for penalty in DNMSVM_PENALTIES:
            net = build_network(config, x_train.shape[1], n_classes, seed, penalty)
            result = fit_network(net, x_train, y_train, x_val, y_val, **fit)
            if best is None or result.best_val_accuracy > best[1].best_val_accuracy:
                best = (net, result, penalty)
        net, result, penalty = best
        return TrainedModel(net, "dnmsvm", result.best_epoch, result.val_accuracy, {"C": penalty})

    net = build_network(config, x_train.shape[1], n_classes, seed)
    result = fit_network(net, x_train, y_train, x_val, y_val, **fit)
    return TrainedModel(net, config.model, result.best_epoch, result.val_accuracy)


# ----------------------------------------------------------------------------
# full experiment
# ----------------------------------------------------------------------------

@dataclass
class AuditRecord:
    """Which dataset rows fed each stage of one repetition."""

    seed: int
    standardization: np.ndarray
    training: np.ndarray
    selection: np.ndarray
    test: np.ndarray

    def check(self):
        test = set(self.test.tolist())
        for stage in ("standardization", "training", "selection"):
            if test & set(getattr(self, stage).tolist()):
                raise DataError(f"seed {self.seed}: test rows leaked into {stage}")


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list
    audits: list
    trained: list = field(default_factory=list)

    @property
    def summary(self):
        return aggregate([asdict(r) for r in self.rows])


def run_repetition(config, dataset, seed, repetition=1):
    split = stratified_split(dataset, seed, config.test_ratio, config.val_ratio, repetition)
    split.check_disjoint(dataset.n_samples)
    std = standardize_fit(dataset.features[split.train])
    f = lambda idx: standardize_apply(std, dataset.features[idx])  # noqa: E731
    trained = run_training(
        config, f(split.train), dataset.labels[split.train], f(split.val), dataset.labels[split.val],
        dataset.n_classes, seed,
    )
    pred = trained.predict(f(split.test))
    metrics = compute_metrics(pred, dataset.labels[split.test], dataset.n_classes)
    audit = AuditRecord(seed, split.train, np.concatenate([split.train, split.val]), split.val, split.test)
    audit.check()
    trained.standardization = std
    return ResultRow(dataset.name, config.model, seed, **metrics), audit, trained


def run_experiment(config, dataset=None, keep_models=False):
    """Run every repetition, writing the per-repetition CSV after each one.

    If a repetition fails, rows finished so far are already on disk.
    """
    if dataset is None:
        dataset = load_dataset(config.dataset, config.format, config.label_col)
    out = Path(config.out_dir)
    stem = f"{dataset.name}_{config.model}"
    rows, audits, models = [], [], []
    for rep, seed in enumerate(config.seeds, start=1):
        row, audit, trained = run_repetition(config, dataset, seed, rep)
        rows.append(row)
        audits.append(audit)
        if keep_models:
            models.append(trained)
        atomic_write(out / f"{stem}.partial.csv", rows_to_csv(rows))
        log.info("%s %s seed %d: accuracy %.4f", dataset.name, config.model, seed, row.accuracy)
    emit_table(rows, out, stem)
    (out / f"{stem}.partial.csv").unlink(missing_ok=True)
    return ExperimentReport(config, rows, audits, models)
