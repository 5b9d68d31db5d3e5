"""Loading, standardizing, splitting and batching tabular datasets."""
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: tuple
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "features", np.array(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.array(self.labels, dtype=np.int64))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        if len(self.labels) != self.features.shape[0]:
            raise DataError(f"{len(self.labels)} labels for {self.features.shape[0]} rows")
        present = np.unique(self.labels)
        if len(present) != self.n_classes or (len(present) and (present[0] != 0 or present[-1] != self.n_classes - 1)):
            raise DataError("labels must use every class id in 0..C-1")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return len(self.class_names)

    def subset(self, idx):
        """Rows ``idx`` as (features, labels) arrays."""
        return self.features[idx], self.labels[idx]


def _canonical_label(token):
    """'+1', '1' and '1.0' all name the same class."""
    try:
        x = float(token)
    except ValueError:
        return token
    if math.isfinite(x) and x == int(x):
        return str(int(x))
    return repr(x)


def encode_labels(raw):
    """Dense ids in first-appearance order."""
    names, ids = {}, []
    for token in raw:
        key = _canonical_label(token)
        ids.append(names.setdefault(key, len(names)))
    return np.asarray(ids, dtype=np.int64), tuple(names)


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, label_col=-1, name=None):
    """Read a comma-separated file.

    The first line is a header when ``label_col`` is a column name or when
    any of its feature cells is non-numeric.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")

    width = len(rows[0])
    if isinstance(label_col, str):
        header = [c.strip() for c in rows[0]]
        if label_col not in header:
            raise DataError(f"{path}: label column {label_col!r} not in header {header}")
        col = header.index(label_col)
        body, first_line = rows[1:], 2
    else:
        col = label_col % width if -width <= label_col < width else None
        if col is None:
            raise DataError(f"{path}: label column {label_col} out of range for {width} columns")
        has_header = any(not _is_number(c) for j, c in enumerate(rows[0]) if j != col)
        body, first_line = (rows[1:], 2) if has_header else (rows, 1)
    if not body:
        raise DataError(f"{path}: no data rows")

    feats = np.empty((len(body), width - 1))
    raw_labels = []
    for i, row in enumerate(body):
        line = first_line + i
        if len(row) != width:
            raise DataError(f"{path}:{line}: expected {width} cells, found {len(row)}")
        cells = [c.strip() for c in row]
        if any(c == "" or c == "?" for c in cells):
            raise DataError(f"{path}:{line}: missing value")
        raw_labels.append(cells[col])
        k = 0
        for j, cell in enumerate(cells):
            if j == col:
                continue
            try:
                feats[i, k] = float(cell)
            except ValueError:
                raise DataError(f"{path}:{line}: column {j + 1} is not numeric: {cell!r}") from None
            k += 1
    if not np.all(np.isfinite(feats)):
        raise DataError(f"{path}: non-finite feature values")
    labels, names = encode_labels(raw_labels)
    return Dataset(feats, labels, names, name or path.stem)


def load_svmlight(path, n_features=None, name=None):
    """Read ``<label> <idx>:<val> ...`` lines with 1-based indices into a dense matrix."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    raw_labels, entries = [], []
    max_idx = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            raw_labels.append(tokens[0])
            row, last = [], 0
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: malformed token {tok!r}") from None
                if idx <= last:
                    raise DataError(f"{path}:{lineno}: indices must be 1-based and strictly increasing at {tok!r}")
                last = idx
                row.append((idx - 1, val))
            max_idx = max(max_idx, last)
            entries.append(row)
    if not entries:
        raise DataError(f"{path}: no data rows")
    width = max_idx if n_features is None else n_features
    if width < max_idx:
        raise DataError(f"{path}: index {max_idx} exceeds n_features={n_features}")
    feats = np.zeros((len(entries), width))
    for i, row in enumerate(entries):
        for j, v in row:
            feats[i, j] = v
    if not np.all(np.isfinite(feats)):
        raise DataError(f"{path}: non-finite feature values")
    labels, names = encode_labels(raw_labels)
    return Dataset(feats, labels, names, name or path.stem)


def save_svmlight(dataset, path):
    """Write ``dataset`` sparsely (zeros omitted), using the original label names."""
    with open(path, "w") as fh:
        for x, y in zip(dataset.features, dataset.labels):
            cells = " ".join(f"{j + 1}:{v!r}" for j, v in enumerate(x.tolist()) if v != 0.0)
            fh.write(f"{dataset.class_names[y]} {cells}".rstrip() + "\n")


def load_dataset(path, fmt=None, label_col=-1):
    fmt = fmt or ("svmlight" if Path(path).suffix in {".svm", ".libsvm", ".svmlight", ".txt"} else "csv")
    if fmt == "csv":
        return load_csv(path, label_col)
    if fmt == "svmlight":
        return load_svmlight(path)
    raise ConfigError(f"unknown dataset format {fmt!r}")


# ----------------------------------------------------------------------------
# standardization
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardizationParams:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # features whose std was clamped


def standardize_fit(train_features):
    x = np.asarray(train_features, dtype=np.float64)
    if x.shape[0] == 0:
        raise DataError("cannot standardize an empty training set")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    constant = sd < STD_FLOOR
    return StandardizationParams(mu, np.maximum(sd, STD_FLOOR), constant)


def standardize_apply(params, features):
    z = (np.asarray(features, dtype=np.float64) - params.mean) / params.std
    z[:, params.constant] = 0.0
    return z


# ----------------------------------------------------------------------------
# splitting and batching
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    seed: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    repetition: int = 1

    def check_disjoint(self, n_samples=None):
        """Raise if partitions overlap or (given ``n_samples``) fail to cover every row."""
        sets = [set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise DataError(f"split for seed {self.seed} has overlapping partitions")
        if n_samples is not None and set().union(*sets) != set(range(n_samples)):
            raise DataError(f"split for seed {self.seed} does not cover all {n_samples} rows")


def _take(n, ratio):
    return max(1, int(math.floor(ratio * n)))


def stratified_split(dataset, seed, test_ratio=0.2, val_ratio=0.2, repetition=1):
    """Per-class shuffled partition into train/val/test.

    ``test_ratio`` is taken from each class, then ``val_ratio`` of what is
    left; every partition receives at least one member of every class.
    """
    if not (0 < test_ratio < 1 and 0 < val_ratio < 1):
        raise ConfigError(f"ratios must lie in (0, 1), got test={test_ratio} val={val_ratio}")
    labels = np.asarray(dataset.labels)
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for c in range(dataset.n_classes):
        members = np.flatnonzero(labels == c)
        if len(members) < 3:
            raise DataError(f"class {dataset.class_names[c]!r} has {len(members)} samples; need at least 3")
        members = rng.permutation(members)
        n_test = _take(len(members), test_ratio)
        rest = members[n_test:]
        n_val = _take(len(rest), val_ratio)
        test.append(members[:n_test])
        val.append(rest[:n_val])
        train.append(rest[n_val:])
    plan = SplitPlan(
        seed,
        np.sort(np.concatenate(train)),
        np.sort(np.concatenate(val)),
        np.sort(np.concatenate(test)),
        repetition,
    )
    plan.check_disjoint(dataset.n_samples)
    return plan


@dataclass(frozen=True)
class Batch:
    """A mini-batch with rows ordered by class.

    ``indices`` are dataset rows; ``groups[c]`` holds the positions within
    the batch (not dataset rows) whose label is ``c``.
    """

    indices: np.ndarray
    labels: np.ndarray
    groups: dict = field(default_factory=dict)

    @property
    def classes(self):
        return sorted(self.groups)


def class_grouped_batches(dataset, indices, batch_size, seed):
    """Shuffle ``indices`` with ``seed``, cut consecutive batches, and group each by class.

    ``dataset`` may also be a bare label array.
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    labels = np.asarray(getattr(dataset, "labels", dataset))
    order = np.random.default_rng(seed).permutation(np.asarray(indices))
    batches = []
    for lo in range(0, len(order), batch_size):
        chunk = order[lo:lo + batch_size]
        chunk_labels = labels[chunk]
        # stable sort keeps shuffled order within each class
        pos = np.argsort(chunk_labels, kind="stable")
        chunk, chunk_labels = chunk[pos], chunk_labels[pos]
        groups = {int(c): np.flatnonzero(chunk_labels == c) for c in np.unique(chunk_labels)}
        batches.append(Batch(chunk, chunk_labels, groups))
    return batches
