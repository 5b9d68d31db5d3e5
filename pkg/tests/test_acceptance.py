"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the pytest terminal
summary.  Criterion 5 trains 11 five-repetition experiments on the bundled
datasets and dominates the runtime (several minutes on one core).
"""
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import minimize

from samn import numerics as nx
from samn.baselines.nets import CenetModel, DnmsvmModel, cenet_loss, dnmsvm_loss, dnmsvm_scores
from samn.baselines.svm import Kernel, attention_decision, dual_objective, kkt_residuals, primal_decision, smo_train
from samn.dataio import class_grouped_batches, load_csv, stratified_split
from samn.harness.experiment import ExperimentConfig, run_experiment, run_repetition
from samn.harness.synthetic import gaussian_blobs
from samn.model import SamnConfig, SamnModel, forward_batch, inner_loss, inter_loss, memory_update, sample_attention_block

from .acceptance_log import record
from .gradcheck import numeric_grad, rel_err

DATA = Path(__file__).resolve().parent.parent / "data"
SEEDS = [1, 2, 3, 4, 5]
N_INSTANCES = 10
GRAD_TOL = 1e-4


# ----------------------------------------------------------------------------
# 1. gradient integrity
# ----------------------------------------------------------------------------

def _check(fn, inputs):
    """Largest relative error between tape and central differences for ``sum(fn(*inputs) * probe)``."""
    names = [f"x{i}" for i in range(len(inputs))]
    arrays = dict(zip(names, inputs))
    out_shape = fn(*inputs).shape
    probe = np.random.default_rng(len(inputs) + inputs[0].size).normal(size=out_shape)

    def f(p):
        return nx.total(fn(*(p[k] for k in names)) * probe)

    leaves = {k: nx.Var(v, requires_grad=True) for k, v in arrays.items()}
    nx.backward(f(leaves))
    num = numeric_grad(lambda p: f(p).value[0, 0], arrays)
    return max(rel_err(leaves[k].grad, num[k]) for k in names)


def _away_from_zero(rng, shape):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 0.05, 0.5, x)


OPS = {
    "add": lambda r: (nx.add, [r.normal(size=(3, 4)), r.normal(size=(1, 4))]),
    "sub": lambda r: (nx.sub, [r.normal(size=(3, 4)), r.normal(size=(3, 4))]),
    "mul": lambda r: (nx.mul, [r.normal(size=(3, 4)), r.normal(size=(3, 1))]),
    "scale": lambda r: (lambda a: nx.scale(a, -1.7), [r.normal(size=(2, 3))]),
    "transpose": lambda r: (nx.transpose, [r.normal(size=(2, 5))]),
    "matmul": lambda r: (nx.matmul, [r.normal(size=(3, 4)), r.normal(size=(4, 2))]),
    "sigmoid": lambda r: (nx.sigmoid, [r.normal(size=(3, 3)) * 3]),
    "tanh": lambda r: (nx.tanh, [r.normal(size=(3, 3)) * 2]),
    "relu": lambda r: (nx.relu, [_away_from_zero(r, (3, 3))]),
    "identity": lambda r: (nx.identity, [r.normal(size=(3, 3))]),
    "row_softmax": lambda r: (nx.row_softmax, [r.normal(size=(4, 5)) * 2]),
    "row_mean": lambda r: (nx.row_mean, [r.normal(size=(4, 3))]),
    "total": lambda r: (nx.total, [r.normal(size=(4, 3))]),
    "mean": lambda r: (nx.mean, [r.normal(size=(4, 3))]),
    "log": lambda r: (nx.log, [r.uniform(0.05, 0.95, size=(3, 3))]),
    "cosine_matrix": lambda r: (nx.cosine_matrix, [r.normal(size=(4, 3)), r.normal(size=(5, 3))]),
    "cosine": lambda r: (nx.cosine, [r.normal(size=(1, 4)), r.normal(size=(1, 4))]),
    "take_rows": lambda r: (lambda a: nx.take_rows(a, [2, 0, 2]), [r.normal(size=(3, 3))]),
    "vstack": lambda r: (lambda a, b: nx.vstack([a, b]), [r.normal(size=(2, 3)), r.normal(size=(1, 3))]),
    "attention": lambda r: (lambda a: sample_attention_block(a)[0], [r.normal(size=(4, 3))]),
}


def _samn_instance(variant, seed):
    rng = np.random.default_rng(seed)
    labels = np.arange(6) % 2
    x = rng.normal(size=(6, 3)) + labels[:, None]
    cfg = SamnConfig(3, 2, variant=variant)
    batch = class_grouped_batches(labels, np.arange(6), 64, seed)[0]
    xb = x[batch.indices]
    model = SamnModel(cfg, seed=seed)
    model.warm_up([xb], [batch])
    params = {k: v + 0.05 * rng.normal(size=v.shape) for k, v in model.params.items()}
    return params, lambda p: forward_batch(p, model.state, xb, batch, cfg).total


def _cenet_instance(seed):
    rng = np.random.default_rng(seed)
    params = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in CenetModel(4, 3, seed=seed).params.items()}
    x, labels = rng.normal(size=(7, 4)), rng.integers(0, 3, 7)
    return params, lambda p: cenet_loss(p, x, labels)


def _dnmsvm_instance(seed):
    rng = np.random.default_rng(seed)
    params = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in DnmsvmModel(4, C=2.0, seed=seed).params.items()}
    x, y = rng.normal(size=(7, 4)), np.where(rng.random(7) < 0.5, 1.0, -1.0)
    keep = np.abs(y * dnmsvm_scores(params, x, 3, "tanh").value[:, 0] - 1) > 1e-3
    return params, lambda p: dnmsvm_loss(p, x[keep], y[keep], 2.0)


MODELS = {
    "samn-full": lambda s: _samn_instance("full", s),
    "samn-san": lambda s: _samn_instance("san", s),
    "samn-mbn": lambda s: _samn_instance("mbn", s),
    "cenet": _cenet_instance,
    "dnmsvm": _dnmsvm_instance,
}


def test_criterion_1_gradient_integrity():
    start = time.perf_counter()
    worst, failures, checks = 0.0, [], 0
    for name, make in OPS.items():
        for seed in range(N_INSTANCES):
            fn, inputs = make(np.random.default_rng(seed))
            err = _check(fn, inputs)
            checks += 1
            worst = max(worst, err)
            if err > GRAD_TOL:
                failures.append(f"{name}/{seed}")
    for name, make in MODELS.items():
        for seed in range(N_INSTANCES):
            params, loss = make(seed)
            leaves = {k: nx.Var(v, requires_grad=True) for k, v in params.items()}
            nx.backward(loss(leaves))
            num = numeric_grad(lambda p: loss(p).value[0, 0], params)
            err = max(rel_err(leaves[k].grad, num[k]) for k in params)
            checks += 1
            worst = max(worst, err)
            if err > GRAD_TOL:
                failures.append(f"{name}/{seed}")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 60
    record(1, "gradient integrity", ok,
           f"{checks} checks ({len(OPS)} ops + {len(MODELS)} losses x {N_INSTANCES} seeds), "
           f"max rel err {worst:.2e}, {elapsed:.1f}s" + (f", failed: {failures}" if failures else ""))
    assert ok


# ----------------------------------------------------------------------------
# 2. SVM correctness
# ----------------------------------------------------------------------------

def _separable(seed, n=8):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=2)
    w /= np.linalg.norm(w)
    pts = []
    while len(pts) < n:
        p = rng.uniform(-3, 3, size=2)
        if abs(p @ w) > 0.5:
            pts.append(p)
    X = np.array(pts)
    y = np.where(X @ w > 0, 1.0, -1.0)
    if len(np.unique(y)) < 2:
        X[0], y[0] = -X[0], -y[0]
    return X, y


def _qp_optimum(X, y, kernel, C):
    Q = (y[:, None] * y[None, :]) * kernel(X, X)
    res = minimize(
        lambda a: 0.5 * a @ Q @ a - a.sum(), np.full(len(y), 0.5), jac=lambda a: Q @ a - 1.0,
        bounds=[(0.0, C)] * len(y), constraints=[{"type": "eq", "fun": lambda a: a @ y, "jac": lambda a: y}],
        method="SLSQP", options={"ftol": 1e-14, "maxiter": 1000},
    )
    return -res.fun


def test_criterion_2_svm_correctness():
    start = time.perf_counter()
    details, ok = [], True
    kernel, C = Kernel("linear"), 100.0
    gap = kkt = form = 0.0
    for seed in range(5):
        X, y = _separable(seed)
        m = smo_train(X, y, kernel, C, tol=1e-6)
        gap = max(gap, abs(dual_objective(m) - _qp_optimum(X, y, kernel, C)))
        kkt = max(kkt, kkt_residuals(m, X, y).max())
        xs = np.random.default_rng(seed).normal(size=(100, 2)) * 3
        summed = np.array([attention_decision(m, x) for x in xs])
        form = max(form, np.abs(summed - primal_decision(m, xs)).max())
    ok &= gap <= 1e-3 and kkt <= 1e-3 and form <= 1e-9
    details.append(f"dual gap {gap:.1e}, KKT {kkt:.1e}, sum-vs-primal {form:.1e}")

    toy = smo_train(np.array([[1.0, 1.0], [-1.0, -1.0]]), np.array([1.0, -1.0]), kernel, 1e3)
    w = toy.primal_weights()
    toy_err = max(np.abs(w - 0.5).max(), abs(toy.b), np.abs(toy.alpha - 0.25).max())
    ok &= toy_err <= 1e-6
    details.append(f"toy w={np.round(w, 9).tolist()} b={toy.b:.1e}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    record(2, "SVM correctness", ok, "; ".join(details) + f", {elapsed:.1f}s")
    assert ok


# ----------------------------------------------------------------------------
# 3. structural invariants
# ----------------------------------------------------------------------------

def test_criterion_3_structural_invariants():
    start = time.perf_counter()
    problems = []
    rng = np.random.default_rng(0)
    for trial in range(200):
        n, d = rng.integers(1, 10), rng.integers(1, 6)
        X = nx.Var(rng.normal(size=(n, d)) * 3)
        for _ in range(rng.integers(1, 4)):
            X_new, A = sample_attention_block(X)
            if np.any(A.value < 0) or np.abs(A.value.sum(1) - 1).max() > 1e-9:
                problems.append("attention not row-stochastic")
            if X_new.shape != X.shape:
                problems.append("attention changed shape")
            X = X_new
        single = nx.Var(rng.normal(size=(1, d)))
        if not np.array_equal(sample_attention_block(single)[0].value, single.value):
            problems.append("singleton attention is not identity")

        C = int(rng.integers(2, 6))
        S = rng.normal(size=(C, d))
        loss, probs = inner_loss(nx.Var(rng.normal(size=(5, d))), rng.integers(0, C, 5), S)
        if np.abs(probs.value.sum(1) - 1).max() > 1e-9 or loss.value[0, 0] < 0:
            problems.append("class probabilities not normalized or inner loss negative")
        if not -1 <= inter_loss(S).value[0, 0] <= 1:
            problems.append("inter loss outside [-1, 1]")

    cfg = SamnConfig(4, 3)
    model = SamnModel(cfg, seed=3)
    h = np.zeros(4)
    for _ in range(100):
        hv, Sv = memory_update(h, nx.Var(rng.normal(size=(1, 4)) * 5), model.params)
        h = hv.value[0]
        if not (np.all((h > 0) & (h < 1)) and np.all(np.abs(Sv.value) < 1)):
            problems.append("prototype memory out of range")

    def trajectory():
        ds = gaussian_blobs(n_samples=60, seed=5)
        split = stratified_split(ds, 5)
        m = SamnModel(SamnConfig(2, 3), seed=5)
        batches = class_grouped_batches(ds, split.train, 16, 5)
        m.warm_up([ds.features[b.indices] for b in batches], batches)
        state, losses = nx.AdamState(), []
        for b in batches * 3:
            leaves = {k: nx.Var(v, requires_grad=True) for k, v in m.params.items()}
            loss, commit = m.batch_loss(leaves, ds.features[b.indices], b)
            nx.backward(loss)
            nx.adam_step(m.params, {k: v.grad for k, v in leaves.items()}, state, 0.01)
            commit()
            losses.append(loss.value[0, 0])
        return losses, split

    (l1, s1), (l2, s2) = trajectory(), trajectory()
    if l1 != l2 or not np.array_equal(s1.test, s2.test):
        problems.append("training trajectory or split not deterministic")

    elapsed = time.perf_counter() - start
    ok = not problems and elapsed < 60
    record(3, "structural invariants", ok, f"{elapsed:.1f}s" + (f", {sorted(set(problems))}" if problems else ""))
    assert ok


# ----------------------------------------------------------------------------
# 4. synthetic end-to-end
# ----------------------------------------------------------------------------

def test_criterion_4_synthetic_blobs(tmp_path):
    seed = 1  # first entry of the default seed list; used for data, split and initialization
    start = time.perf_counter()
    ds = gaussian_blobs(n_samples=300, n_classes=3, separation=6.0, sigma=1.0, seed=seed)
    cfg = ExperimentConfig("blobs", epochs=200, lr=0.01, batch_size=64, layers=3, blocknum=1, seeds=[seed],
                           out_dir=str(tmp_path))
    row, audit, trained = run_repetition(cfg, ds, seed)
    elapsed = time.perf_counter() - start
    ok = row.accuracy >= 0.99 and elapsed < 60
    record(4, "synthetic 3-blob", ok,
           f"test accuracy {row.accuracy:.4f} (best epoch {trained.best_epoch}), {elapsed:.1f}s")
    assert ok


# ----------------------------------------------------------------------------
# 5 and 6. desk-scale reproduction and protocol audit
# ----------------------------------------------------------------------------

RUNS = [
    ("iris", "samn"), ("iris", "cenet"), ("wine", "samn"), ("heart", "samn"), ("sonar", "samn"),
    ("ionosphere", "samn"), ("ionosphere", "san"), ("ionosphere", "mbn"),
    ("breast", "samn"), ("breast", "san"), ("breast", "mbn"),
]


@pytest.fixture(scope="module")
def reproduction(tmp_path_factory):
    out = tmp_path_factory.mktemp("reproduction")
    reports, datasets = {}, {}
    start = time.perf_counter()
    for name, model in RUNS:
        if name not in datasets:
            datasets[name] = load_csv(DATA / f"{name}.csv", "label")
        cfg = ExperimentConfig(name, model=model, seeds=SEEDS, out_dir=str(out))
        reports[name, model] = run_experiment(cfg, datasets[name], keep_models=True)
    return reports, datasets, time.perf_counter() - start


def _acc(reports, name, model):
    return 100 * reports[name, model].summary.mean["accuracy"]


def test_criterion_5_reproduction(reproduction):
    reports, _, elapsed = reproduction
    a = lambda name, model="samn": _acc(reports, name, model)  # noqa: E731
    checks = {
        f"iris {a('iris'):.2f} in 94.0±4": abs(a("iris") - 94.0) <= 4,
        f"iris samn {a('iris'):.2f} > cenet {a('iris', 'cenet'):.2f}": a("iris") > a("iris", "cenet"),
        f"wine {a('wine'):.2f} >= 95": a("wine") >= 95,
        f"heart {a('heart'):.2f} in 84.44±5": abs(a("heart") - 84.44) <= 5,
        f"sonar {a('sonar'):.2f} in 85.24±6": abs(a("sonar") - 85.24) <= 6,
    }
    ablation_hits = []
    for name in ("ionosphere", "breast"):
        full, san, mbn = a(name), a(name, "san"), a(name, "mbn")
        hit = full >= san and full >= mbn
        ablation_hits.append(hit)
        checks[f"{name} samn {full:.2f} vs san {san:.2f} / mbn {mbn:.2f}"] = hit
    # the third ablation dataset is not bundled, so both available ones must show the trend
    ablation_ok = sum(ablation_hits) >= 2
    ok = all(v for k, v in checks.items() if "vs san" not in k) and ablation_ok and elapsed < 30 * 60
    detail = "; ".join(("" if v else "MISS ") + k for k, v in checks.items())
    record(5, "desk-scale reproduction", ok, f"{detail}; {elapsed / 60:.1f} min")
    assert ok


def test_criterion_6_protocol_audit(reproduction):
    reports, datasets, _ = reproduction
    problems, audited = [], 0
    for (name, model), report in reports.items():
        ds = datasets[name]
        for audit, trained in zip(report.audits, report.trained):
            audited += 1
            test = set(audit.test.tolist())
            for stage in ("standardization", "training", "selection"):
                if test & set(getattr(audit, stage).tolist()):
                    problems.append(f"{name}/{model}/seed {audit.seed}: test rows in {stage}")
            # the stored scaler must be exactly the one fit on the training rows
            expect = ds.features[audit.standardization].mean(axis=0)
            if not np.array_equal(trained.standardization.mean, expect):
                problems.append(f"{name}/{model}/seed {audit.seed}: scaler not fit on training rows")
            split = stratified_split(ds, audit.seed)
            if not np.array_equal(split.test, audit.test):
                problems.append(f"{name}/{model}/seed {audit.seed}: test split not reproducible")
    ok = not problems and audited == len(RUNS) * len(SEEDS)
    record(6, "protocol audit", ok, f"{audited} runs audited" + (f", {problems}" if problems else ""))
    assert ok
