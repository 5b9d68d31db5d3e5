"""Kernel SVM trained by sequential minimal optimization.

The dual is solved in the LIBSVM form: minimize ``1/2 a^T Q a - e^T a``
subject to ``0 <= a_i <= C`` and ``y^T a = 0`` where ``Q_ij = y_i y_j k(x_i, x_j)``.
Each iteration picks the maximal violating pair (with second-order gain
for the partner) and solves the two-variable subproblem analytically.  The
whole kernel matrix is cached; there is no shrinking.

The trained decision function is a weighted vote over training samples,

    f(x) = sum_i y_i a_i k(x_i, x) + b,

so ``y_i a_i`` acts as a fixed attention weight on training sample ``i``.
"""
import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError, DimensionError, StateError

log = logging.getLogger(__name__)

TAU = 1e-12
SV_THRESHOLD = 1e-8
GAMMA_GRID = tuple(2.0**k for k in range(-15, 4, 2))
C_GRID = tuple(2.0**k for k in range(-5, 16, 2))


@dataclass(frozen=True)
class Kernel:
    kind: str = "rbf"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ConfigError(f"kernel must be 'linear' or 'rbf', got {self.kind!r}")
        if self.kind == "rbf" and not self.gamma > 0:
            raise ConfigError(f"rbf gamma must be positive, got {self.gamma}")

    def __call__(self, a, b):
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        b = np.atleast_2d(np.asarray(b, dtype=np.float64))
        if a.shape[1] != b.shape[1]:
            raise DimensionError(f"kernel inputs have {a.shape[1]} and {b.shape[1]} features")
        if self.kind == "linear":
            return a @ b.T
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
        return np.exp(-self.gamma * np.maximum(sq, 0.0))


@dataclass
class SvmModel:
    kernel: Kernel
    C: float
    support_vectors: np.ndarray
    alpha: np.ndarray
    y: np.ndarray
    b: float
    n_train: int = 0
    iterations: int = 0
    converged: bool = True
    support_index: np.ndarray = None  # rows of the training set kept as support vectors

    @property
    def coef(self):
        """``y_i * alpha_i`` per support vector."""
        return self.y * self.alpha

    def primal_weights(self):
        """``w = sum_i y_i a_i x_i``; only defined for the linear kernel."""
        if self.kernel.kind != "linear":
            raise StateError("primal weights exist only for the linear kernel")
        return self.coef @ self.support_vectors


def _check_labels(y):
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError("SVM labels must be +1 or -1")
    if len(np.unique(y)) != 2:
        raise DataError("SVM training needs both classes present")
    return y


def smo_train(X, y, kernel=Kernel(), C=1.0, tol=1e-3, max_iter=200_000):
    """Solve the soft-margin dual to tolerance ``tol`` on the maximal KKT violation."""
    if not C > 0:
        raise ConfigError(f"C must be positive, got {C}")
    if not tol > 0:
        raise ConfigError(f"tol must be positive, got {tol}")
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    n = len(y)
    K = kernel(X, X)
    if not np.all(np.isfinite(K)):
        raise DataError("kernel matrix has non-finite entries")
    Q = (y[:, None] * y[None, :]) * K
    diag = np.diag(Q).copy()

    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of the dual objective: Q a - e
    it = 0
    converged = False
    while it < max_iter:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        score = -y * G
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        m_up = score[i]
        M_low = score[low].min()
        if m_up - M_low < tol:
            converged = True
            break
        # second-order choice of j among violating low candidates
        cand = np.flatnonzero(low & (score < m_up))
        grad_diff = m_up - score[cand]
        quad = diag[i] + diag[cand] - 2.0 * y[i] * y[cand] * Q[i, cand]
        quad = np.where(quad > 0, quad, TAU)
        j = int(cand[np.argmax(grad_diff * grad_diff / quad)])
        it += 1

        a_i, a_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad_ij = max(diag[i] + diag[j] + 2.0 * Q[i, j], TAU)
            delta = (-G[i] - G[j]) / quad_ij
            diff = a_i - a_j
            a_i += delta
            a_j += delta
            if diff > 0 and a_j < 0:
                a_j, a_i = 0.0, diff
            elif diff <= 0 and a_i < 0:
                a_i, a_j = 0.0, -diff
            if diff > 0 and a_i > C:
                a_i, a_j = C, C - diff
            elif diff <= 0 and a_j > C:
                a_j, a_i = C, C + diff
        else:
            quad_ij = max(diag[i] + diag[j] - 2.0 * Q[i, j], TAU)
            delta = (G[i] - G[j]) / quad_ij
            total = a_i + a_j
            a_i -= delta
            a_j += delta
            if total > C and a_i > C:
                a_i, a_j = C, total - C
            elif total <= C and a_j < 0:
                a_j, a_i = 0.0, total
            if total > C and a_j > C:
                a_j, a_i = C, total - C
            elif total <= C and a_i < 0:
                a_i, a_j = 0.0, total
        d_i, d_j = a_i - alpha[i], a_j - alpha[j]
        alpha[i], alpha[j] = a_i, a_j
        G += Q[:, i] * d_i + Q[:, j] * d_j

    if not converged:
        warnings.warn(f"SMO stopped after {max_iter} iterations without reaching tol={tol}", RuntimeWarning)

    b = -_rho(alpha, y, G, C)
    keep = alpha > SV_THRESHOLD
    return SvmModel(
        kernel, C, X[keep].copy(), alpha[keep].copy(), y[keep].copy(), b, n, it, converged, np.flatnonzero(keep)
    )


def _rho(alpha, y, G, C):
    yG = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yG[free].mean())
    # no free vectors: midpoint of the interval the optimality conditions allow
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2.0)


def svm_decision(model, X):
    """Signed scores and +1/-1 labels (score 0 maps to +1)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.support_vectors.shape[1]:
        raise DimensionError(f"model expects {model.support_vectors.shape[1]} features, got {X.shape[1]}")
    scores = model.kernel(X, model.support_vectors) @ model.coef + model.b
    return scores, np.where(scores >= 0, 1, -1)


def attention_decision(model, x):
    """Score of one sample as an explicit sum over support vectors."""
    x = np.asarray(x, dtype=np.float64).ravel()
    total = 0.0
    for sv, weight in zip(model.support_vectors, model.coef):
        total += weight * model.kernel(sv, x)[0, 0]
    return total + model.b


def primal_decision(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return X @ model.primal_weights() + model.b


def dual_objective(model_or_alpha, X=None, y=None, kernel=None):
    """``sum a - 1/2 a^T Q a`` (the maximized form)."""
    if isinstance(model_or_alpha, SvmModel):
        m = model_or_alpha
        K = m.kernel(m.support_vectors, m.support_vectors)
        c = m.coef
        return float(m.alpha.sum() - 0.5 * c @ K @ c)
    alpha = np.asarray(model_or_alpha, dtype=np.float64)
    c = alpha * y
    return float(alpha.sum() - 0.5 * c @ kernel(X, X) @ c)


def kkt_residuals(model, X, y):
    """Per-sample violation of the KKT conditions on the training set.

    Zero where a sample satisfies its condition; otherwise how far
    ``y f(x)`` lies on the wrong side of the bound its multiplier implies.
    """
    y = np.asarray(y, dtype=np.float64)
    alpha = np.zeros(len(y))
    alpha[model.support_index] = model.alpha
    margin = y * svm_decision(model, X)[0]
    below = np.maximum(0.0, 1.0 - margin)  # alpha == 0 needs margin >= 1
    above = np.maximum(0.0, margin - 1.0)  # alpha == C needs margin <= 1
    at_zero = alpha <= SV_THRESHOLD
    at_c = alpha >= model.C - SV_THRESHOLD
    return np.where(at_zero, below, np.where(at_c, above, np.abs(margin - 1.0)))


# ----------------------------------------------------------------------------
# model selection
# ----------------------------------------------------------------------------

def stratified_folds(y, folds, seed):
    """Assign each sample a fold id in ``0..folds-1``, balanced per class."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    smallest = min(np.sum(y == c) for c in np.unique(y))
    if smallest < folds:
        warnings.warn(f"smallest class has {smallest} samples; reducing folds from {folds} to {smallest}", RuntimeWarning)
        folds = int(smallest)
    if folds < 2:
        raise DataError("cannot build at least 2 folds")
    assign = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == c))
        assign[members] = (np.arange(len(members)) + offset) % folds
        offset += len(members)
    return assign, folds


def grid_search_cv(X, y, gammas=GAMMA_GRID, Cs=C_GRID, folds=5, seed=0, kind="rbf", tol=1e-3):
    """Pick ``(gamma, C)`` maximizing mean fold accuracy.

    Ties go to the smaller C, then the smaller gamma.  Returns
    ``(gamma, C, accuracy)``; gamma is ``None`` for the linear kernel.
    """
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    if not len(Cs) or (kind == "rbf" and not len(gammas)):
        raise ConfigError("grid must be nonempty")
    assign, folds = stratified_folds(y, folds, seed)
    gammas = sorted(gammas) if kind == "rbf" else [None]
    best = None
    for C in sorted(Cs):
        for gamma in gammas:
            kernel = Kernel(kind, gamma if gamma is not None else 1.0)
            correct = []
            for k in range(folds):
                tr, te = assign != k, assign == k
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    model = smo_train(X[tr], y[tr], kernel, C, tol)
                correct.append(np.mean(svm_decision(model, X[te])[1] == y[te]))
            acc = float(np.mean(correct))
            log.debug("C=%g gamma=%s acc=%.4f", C, gamma, acc)
            if best is None or acc > best[2]:
                best = (gamma, C, acc)
    return best


# ----------------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------------

def save_svm(path, model, standardization=None, class_names=None):
    """Write kernel spec, support vectors, coefficients and bias to ``.npz``."""
    meta = {
        "kind": "svc",
        "version": 1,
        "kernel": {"kind": model.kernel.kind, "gamma": model.kernel.gamma},
        "C": model.C,
        "b": model.b,
        "n_train": model.n_train,
        "iterations": model.iterations,
        "converged": model.converged,
        "class_names": list(class_names) if class_names is not None else None,
    }
    arrays = {"sv": model.support_vectors, "alpha": model.alpha, "y": model.y, "support_index": model.support_index}
    if standardization is not None:
        arrays.update({
            "std/mean": standardization.mean,
            "std/std": standardization.std,
            "std/constant": standardization.constant,
        })
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_svm(path):
    """Inverse of :func:`save_svm`; returns ``(model, standardization, class_names)``."""
    from ..dataio import StandardizationParams

    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        arrays = {k: z[k] for k in z.files}
    if meta.get("kind") != "svc":
        raise StateError(f"{path} is not an SVM checkpoint")
    model = SvmModel(
        Kernel(meta["kernel"]["kind"], meta["kernel"]["gamma"]),
        meta["C"], arrays["sv"], arrays["alpha"], arrays["y"], meta["b"],
        meta["n_train"], meta["iterations"], meta["converged"], arrays["support_index"],
    )
    std = None
    if "std/mean" in arrays:
        std = StandardizationParams(arrays["std/mean"], arrays["std/std"], arrays["std/constant"])
    return model, std, meta.get("class_names")
