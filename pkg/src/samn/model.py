"""Sample attention memory network.

A batch flows through ``k0 = K - 1`` extraction layers, then each class
group attends over its own rows (``A = softmax(X X^T)``, ``X <- A X``,
repeated ``blocknum`` times).  The attended class mean drives a recurrent
memory cell whose output is the class prototype::

    h_c <- sigmoid(h_c W_h + b_h + mean(X_c) W_x + b_x)
    S_c <- tanh(h_c W_s + b_s)

The attended rows pass through the last extraction layer to give refined
representations ``m``.  The loss is cross-entropy over softmax-normalized
cosine similarities between ``m`` and every prototype (inner term) plus the
mean pairwise cosine among prototypes (inter term).  At test time a sample
is assigned the class whose prototype is most cosine-similar to ``m``.

Matrices are row-major with samples as rows, so a layer computes
``act(h @ W + b)`` with ``W`` of shape ``(in, out)``.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigError, StateError

VARIANTS = ("full", "san", "mbn")
MEMORY_KEYS = ("Wh", "bh", "Wx", "bx", "Ws", "bs")
QKV_KEYS = ("Wq", "Wk", "Wv")


@dataclass
class SamnConfig:
    n_features: int
    n_classes: int
    layers: int = 3
    blocknum: int = 1
    hidden: int = None
    activation: str = "tanh"
    variant: str = "full"
    eps: float = nx.COS_EPS
    learned_qkv: bool = False

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = self.n_features
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "mbn":
            self.blocknum = 0
        elif self.blocknum < 1:
            raise ConfigError(f"blocknum must be >= 1 for variant {self.variant!r}")
        if self.layers < 2:
            raise ConfigError(f"need at least 2 extraction layers (K >= 2), got {self.layers}")
        if self.hidden < 1 or self.n_features < 1:
            raise ConfigError("hidden width and feature count must be >= 1")
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        nx.activation(self.activation)

    @property
    def k0(self):
        return self.layers - 1

    @property
    def uses_memory(self):
        return self.variant != "san"


def init_params(config, rng):
    """Glorot-uniform weights and zero biases."""
    d = config.hidden
    params = {}
    width_in = config.n_features
    for j in range(1, config.layers + 1):
        params[f"W{j}"] = nx.glorot_uniform(rng, width_in, d)
        params[f"b{j}"] = np.zeros((1, d))
        width_in = d
    if config.uses_memory:
        for name in ("h", "x", "s"):
            params[f"W{name}"] = nx.glorot_uniform(rng, d, d)
            params[f"b{name}"] = np.zeros((1, d))
    if config.learned_qkv and config.blocknum > 0:
        for key in QKV_KEYS:
            params[key] = nx.glorot_uniform(rng, d, d)
    return params


@dataclass
class PrototypeState:
    """Per-class memory ``h`` and prototype ``S`` (rows indexed by class id)."""

    h: np.ndarray
    S: np.ndarray
    seen: np.ndarray
    updated_at: np.ndarray
    batches: int = 0
    # SAN only: running sums of batch class means over the current epoch
    epoch_sum: np.ndarray = None
    epoch_count: np.ndarray = None

    @classmethod
    def initial(cls, config):
        C, d = config.n_classes, config.hidden
        return cls(
            h=np.zeros((C, d)),
            S=np.zeros((C, d)),
            seen=np.zeros(C, dtype=bool),
            updated_at=np.full(C, -1, dtype=np.int64),
            epoch_sum=np.zeros((C, d)),
            epoch_count=np.zeros(C, dtype=np.int64),
        )

    def copy(self):
        return PrototypeState(
            self.h.copy(), self.S.copy(), self.seen.copy(), self.updated_at.copy(), self.batches,
            self.epoch_sum.copy(), self.epoch_count.copy(),
        )

    @property
    def ready(self):
        return bool(self.seen.all())

    def commit(self, fwd):
        """Store the memory and prototypes produced by a forward pass."""
        for c, S_c in fwd.prototypes.items():
            self.S[c] = S_c
            if c in fwd.memory:
                self.h[c] = fwd.memory[c]
            self.seen[c] = True
            self.updated_at[c] = self.batches
        for c, xbar in fwd.class_means.items():
            self.epoch_sum[c] += xbar
            self.epoch_count[c] += 1
        self.batches += 1

    def end_epoch(self, config):
        """For SAN, replace prototypes by this epoch's average batch class mean."""
        if not config.uses_memory:
            have = self.epoch_count > 0
            self.S[have] = self.epoch_sum[have] / self.epoch_count[have, None]
        self.epoch_sum[:] = 0.0
        self.epoch_count[:] = 0


@dataclass
class BatchForward:
    attended: dict
    class_means: dict
    memory: dict
    prototypes: dict
    refined: nx.Var
    inner: nx.Var
    inter: nx.Var
    total: nx.Var
    attention: dict = field(default_factory=dict)


def extract(params, x, config, first, last):
    """Apply extraction layers ``first..last`` (1-based, inclusive)."""
    if not 1 <= first <= last <= config.layers:
        raise ConfigError(f"layer range {first}..{last} outside 1..{config.layers}")
    act = nx.activation(config.activation)
    h = x
    for j in range(first, last + 1):
        h = act(nx.matmul(h, params[f"W{j}"]) + params[f"b{j}"])
    return h


def sample_attention_block(X, params=None):
    """One round of attention among the rows of ``X``.

    Returns ``(A @ V, A)`` with ``A = row_softmax(Q K^T)``.  Q, K and V are
    ``X`` itself unless ``params`` carries learned projections.
    """
    if params is not None and "Wq" in params:
        Q, K, V = (nx.matmul(X, params[k]) for k in QKV_KEYS)
    else:
        Q = K = V = X
    A = nx.row_softmax(nx.matmul(Q, nx.transpose(K)))
    return nx.matmul(A, V), A


def class_means(groups):
    """``{c: row_mean(X_c)}`` for every class group present."""
    return {c: nx.row_mean(X) for c, X in groups.items() if X.shape[0] > 0}


def memory_update(h_prev, xbar, params):
    """One step of the memory cell; ``h_prev`` is a constant (no gradient)."""
    h_prev = nx.as_var(np.asarray(h_prev).reshape(1, -1))
    pre = nx.matmul(h_prev, params["Wh"]) + params["bh"] + nx.matmul(xbar, params["Wx"]) + params["bx"]
    h = nx.sigmoid(pre)
    S = nx.tanh(nx.matmul(h, params["Ws"]) + params["bs"])
    return h, S


def inner_loss(m, labels, S, eps=nx.COS_EPS):
    """Mean cross-entropy of softmax(cos(m_i, S_c)) against the true class.

    Returns ``(loss, probabilities)``.
    """
    labels = np.asarray(labels)
    S = nx.as_var(S)
    sims = nx.cosine_matrix(m, S, eps)
    probs = nx.row_softmax(sims)
    onehot = np.zeros(probs.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    loss = nx.scale(nx.total(nx.log(probs) * onehot), -1.0 / len(labels))
    return loss, probs


def inter_loss(S, eps=nx.COS_EPS):
    """Mean cosine similarity over all unordered pairs of prototypes."""
    S = nx.as_var(S)
    C = S.shape[0]
    if C < 2:
        raise ConfigError("inter-class loss needs at least 2 prototypes")
    upper = np.triu(np.ones((C, C)), k=1)
    return nx.scale(nx.total(nx.cosine_matrix(S, S, eps) * upper), 2.0 / (C * (C - 1)))


def forward_batch(params, state, x, batch, config):
    """Training-time forward pass for one class-grouped batch.

    ``params`` may hold arrays or :class:`~samn.numerics.Var` leaves.  Rows
    of ``x`` must be ordered like ``batch.indices``.  Nothing in ``state``
    is modified; call :meth:`PrototypeState.commit` with the result.
    """
    h = extract(params, x, config, 1, config.k0)
    attended, attention, means, memory, protos = {}, {}, {}, {}, {}
    for c in batch.classes:
        X_c = nx.take_rows(h, batch.groups[c])
        attention[c] = []
        for _ in range(config.blocknum):
            X_c, A = sample_attention_block(X_c, params if config.learned_qkv else None)
            attention[c].append(A)
        attended[c] = X_c
        means[c] = nx.row_mean(X_c)
        if config.uses_memory:
            h_c, protos[c] = memory_update(state.h[c], means[c], params)
            memory[c] = h_c
        else:
            protos[c] = means[c]

    missing = [c for c in range(config.n_classes) if c not in protos and not state.seen[c]]
    if missing:
        raise StateError(f"no prototype yet for classes {missing}; run a warm-up pass first")

    m = extract(params, nx.vstack([attended[c] for c in batch.classes]), config, config.k0 + 1, config.layers)
    S_all = nx.vstack([protos[c] if c in protos else state.S[c] for c in range(config.n_classes)])
    L_inner, _ = inner_loss(m, batch.labels, S_all, config.eps)
    L_inter = inter_loss(S_all, config.eps)
    return BatchForward(
        attended=attended,
        class_means={c: v.value[0].copy() for c, v in means.items()},
        memory={c: v.value[0].copy() for c, v in memory.items()},
        prototypes={c: v.value[0].copy() for c, v in protos.items()},
        refined=m,
        inner=L_inner,
        inter=L_inter,
        total=L_inner + L_inter,
        attention=attention,
    )


def similarity_scores(params, state, x, config):
    """Cosine similarity of each refined sample to each stored prototype."""
    if not state.ready:
        raise StateError("model has no prototypes for some classes; train it first")
    m = extract(params, x, config, 1, config.layers)
    return nx.cosine_matrix(m, state.S, config.eps).value


def predict(params, state, x, config):
    """Class ids (argmax cosine, lowest id on ties) and the score matrix."""
    scores = similarity_scores(params, state, x, config)
    return np.argmax(scores, axis=1), scores


class SamnModel:
    """Parameters, prototype memory and config bundled for training loops."""

    def __init__(self, config, seed=0):
        self.config = config
        self.params = init_params(config, np.random.default_rng(seed))
        self.state = PrototypeState.initial(config)

    def warm_up(self, xs, batches):
        """Fill every prototype once without touching parameters.

        ``xs[i]`` holds the feature rows of ``batches[i]``.
        """
        for batch, xb in zip(batches, xs):
            self.state.commit(forward_batch(self.params, self.state, xb, batch, self.config))
        self.state.end_epoch(self.config)

    def batch_loss(self, leaves, x, batch):
        fwd = forward_batch(leaves, self.state, x, batch, self.config)
        return fwd.total, lambda: self.state.commit(fwd)

    def end_epoch(self):
        self.state.end_epoch(self.config)

    def predict(self, x):
        return predict(self.params, self.state, x, self.config)[0]

    def snapshot(self):
        return {k: v.copy() for k, v in self.params.items()}, self.state.copy()

    def restore(self, snap):
        params, state = snap
        self.params = {k: v.copy() for k, v in params.items()}
        self.state = state.copy()


# ----------------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model, standardization=None, class_names=None):
    """Write config, parameters, prototypes and standardization to an ``.npz`` file."""
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    st = model.state
    arrays.update({"state/h": st.h, "state/S": st.S, "state/seen": st.seen, "state/updated_at": st.updated_at})
    if standardization is not None:
        arrays.update({
            "std/mean": standardization.mean,
            "std/std": standardization.std,
            "std/constant": standardization.constant,
        })
    meta = {
        "kind": "samn",
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "batches": st.batches,
        "class_names": list(class_names) if class_names is not None else None,
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def read_checkpoint(path):
    """Return ``(meta, arrays)`` for any checkpoint written by this package."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise StateError(f"unsupported checkpoint version {meta.get('version')}")
    return meta, arrays


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, standardization, class_names)``."""
    from .dataio import StandardizationParams

    meta, arrays = read_checkpoint(path)
    if meta["kind"] != "samn":
        raise StateError(f"{path} holds a {meta['kind']!r} checkpoint, not samn")
    config = SamnConfig(**meta["config"])
    model = SamnModel.__new__(SamnModel)
    model.config = config
    model.params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
    model.state = PrototypeState.initial(config)
    model.state.h = arrays["state/h"]
    model.state.S = arrays["state/S"]
    model.state.seen = arrays["state/seen"]
    model.state.updated_at = arrays["state/updated_at"]
    model.state.batches = meta["batches"]
    std = None
    if "std/mean" in arrays:
        std = StandardizationParams(arrays["std/mean"], arrays["std/std"], arrays["std/constant"])
    return model, std, meta.get("class_names")
