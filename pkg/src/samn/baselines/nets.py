"""Network baselines trained with the same Adam loop as SAMN.

``CenetModel`` is a fully connected classifier with a softmax
cross-entropy head.  ``DnmsvmModel`` maps inputs through the same kind of
extractor and puts a single linear unit on top, trained with the
squared-hinge primal SVM objective::

    1/2 ||w||^2 + C * sum_i max(0, 1 - y_i (w . phi(x_i) + b))^2
"""
import json

import numpy as np

from .. import numerics as nx
from ..errors import ConfigError, DataError, StateError


def _dense_stack(rng, n_in, hidden, layers):
    params = {}
    width = n_in
    for j in range(1, layers + 1):
        params[f"W{j}"] = nx.glorot_uniform(rng, width, hidden)
        params[f"b{j}"] = np.zeros((1, hidden))
        width = hidden
    return params, width


def extract(params, x, layers, activation):
    act = nx.activation(activation)
    h = x
    for j in range(1, layers + 1):
        h = act(nx.matmul(h, params[f"W{j}"]) + params[f"b{j}"])
    return h


class _Network:
    def end_epoch(self):
        pass

    def snapshot(self):
        return {k: v.copy() for k, v in self.params.items()}

    def restore(self, snap):
        self.params = {k: v.copy() for k, v in snap.items()}


# ----------------------------------------------------------------------------
# CENet
# ----------------------------------------------------------------------------

def cenet_logits(params, x, layers, activation):
    return nx.matmul(extract(params, x, layers, activation), params["Wo"]) + params["bo"]


def cenet_loss(params, x, labels, layers=3, activation="tanh"):
    """Mean negative log-likelihood of the true class under a softmax head."""
    labels = np.asarray(labels)
    probs = nx.row_softmax(cenet_logits(params, x, layers, activation))
    onehot = np.zeros(probs.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return nx.scale(nx.total(nx.log(probs) * onehot), -1.0 / len(labels))


class CenetModel(_Network):
    def __init__(self, n_features, n_classes, layers=3, hidden=None, activation="tanh", seed=0):
        if n_classes < 2:
            raise ConfigError("CENet needs at least 2 classes")
        self.layers, self.activation = layers, activation
        self.hidden = hidden or n_features
        rng = np.random.default_rng(seed)
        self.params, width = _dense_stack(rng, n_features, self.hidden, layers)
        self.params["Wo"] = nx.glorot_uniform(rng, width, n_classes)
        self.params["bo"] = np.zeros((1, n_classes))

    def batch_loss(self, leaves, x, batch):
        return cenet_loss(leaves, x, batch.labels, self.layers, self.activation), lambda: None

    def predict(self, x):
        return np.argmax(cenet_logits(self.params, x, self.layers, self.activation).value, axis=1)


# ----------------------------------------------------------------------------
# DNMSVM
# ----------------------------------------------------------------------------

def to_signed(labels):
    """Class ids {0, 1} -> {-1, +1}."""
    labels = np.asarray(labels)
    if not np.all(np.isin(labels, (0, 1))):
        raise DataError("DNMSVM is binary; labels must be class ids 0 and 1")
    return np.where(labels == 1, 1.0, -1.0)


def dnmsvm_scores(params, x, layers, activation):
    return nx.matmul(extract(params, x, layers, activation), params["w"]) + params["b"]


def dnmsvm_loss(params, x, y_signed, C=1.0, layers=3, activation="tanh"):
    """Squared-hinge objective over the batch plus half the squared head norm."""
    y = np.asarray(y_signed, dtype=np.float64).reshape(-1, 1)
    scores = dnmsvm_scores(params, x, layers, activation)
    slack = nx.relu(nx.sub(1.0, nx.mul(scores, y)))
    w = params["w"]
    return nx.scale(nx.total(nx.mul(w, w)), 0.5) + nx.scale(nx.total(nx.mul(slack, slack)), C)


class DnmsvmModel(_Network):
    """``layers=0`` gives an identity extractor, i.e. a linear squared-hinge SVM."""

    def __init__(self, n_features, layers=3, hidden=None, activation="tanh", C=1.0, seed=0):
        if not C > 0:
            raise ConfigError(f"penalty C must be positive, got {C}")
        self.layers, self.activation, self.C = layers, activation, C
        self.hidden = hidden or n_features
        rng = np.random.default_rng(seed)
        self.params, width = _dense_stack(rng, n_features, self.hidden, layers)
        self.params["w"] = nx.glorot_uniform(rng, width, 1)
        self.params["b"] = np.zeros((1, 1))

    def batch_loss(self, leaves, x, batch):
        y = to_signed(batch.labels)
        return dnmsvm_loss(leaves, x, y, self.C, self.layers, self.activation), lambda: None

    def decision(self, x):
        return dnmsvm_scores(self.params, x, self.layers, self.activation).value[:, 0]

    def predict(self, x):
        return (self.decision(x) >= 0).astype(np.int64)


# ----------------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------------

def save_network(path, model, standardization=None, class_names=None):
    """Write a CENet or DNMSVM model (and optional standardization) to ``.npz``."""
    kind = "cenet" if isinstance(model, CenetModel) else "dnmsvm"
    meta = {
        "kind": kind,
        "version": 1,
        "layers": model.layers,
        "hidden": model.hidden,
        "activation": model.activation,
        "C": getattr(model, "C", None),
        "class_names": list(class_names) if class_names is not None else None,
    }
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    if standardization is not None:
        arrays.update({
            "std/mean": standardization.mean,
            "std/std": standardization.std,
            "std/constant": standardization.constant,
        })
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_network(path):
    """Inverse of :func:`save_network`; returns ``(model, standardization, class_names)``."""
    from ..dataio import StandardizationParams

    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
    n_features = params["W1"].shape[0] if meta["layers"] else params["w"].shape[0]
    if meta["kind"] == "cenet":
        model = CenetModel(n_features, params["Wo"].shape[1], meta["layers"], meta["hidden"], meta["activation"])
    elif meta["kind"] == "dnmsvm":
        model = DnmsvmModel(n_features, meta["layers"], meta["hidden"], meta["activation"], meta["C"])
    else:
        raise StateError(f"{path} holds a {meta['kind']!r} checkpoint, not a network baseline")
    model.params = params
    std = None
    if "std/mean" in arrays:
        std = StandardizationParams(arrays["std/mean"], arrays["std/std"], arrays["std/constant"])
    return model, std, meta.get("class_names")
