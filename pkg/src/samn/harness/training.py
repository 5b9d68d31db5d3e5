"""Mini-batch Adam loop shared by every network model.

A model is any object with ``params`` (name -> array), ``batch_loss``,
``end_epoch``, ``predict``, ``snapshot`` and ``restore``; ``warm_up`` is
called once before the first epoch when present.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nx
from ..dataio import class_grouped_batches
from ..errors import DivergenceError, NumericError

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    best_epoch: int
    best_val_accuracy: float
    val_accuracy: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)


def epoch_batches(labels, batch_size, seed, epoch):
    return class_grouped_batches(labels, np.arange(len(labels)), batch_size, [seed, epoch])


def fit_network(model, x_train, y_train, x_val, y_val, *, epochs=1000, lr=0.01, batch_size=64, seed=0):
    """Train ``model`` in place and leave it at its best-validation snapshot.

    Validation accuracy is measured after every epoch; the latest epoch
    reaching the running maximum is kept.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train)
    adam = nx.AdamState()
    result = TrainResult(best_epoch=0, best_val_accuracy=-1.0)
    best = None

    if hasattr(model, "warm_up"):
        batches = epoch_batches(y_train, batch_size, seed, 0)
        try:
            model.warm_up([x_train[b.indices] for b in batches], batches)
        except NumericError as exc:
            raise DivergenceError(f"non-finite value during warm-up (epoch 0): {exc}", epoch=0) from exc

    for epoch in range(1, epochs + 1):
        losses = []
        for batch in epoch_batches(y_train, batch_size, seed, epoch):
            leaves = {k: nx.Var(v, requires_grad=True, name=k) for k, v in model.params.items()}
            try:
                loss, commit = model.batch_loss(leaves, x_train[batch.indices], batch)
                nx.backward(loss)
            except NumericError as exc:
                raise DivergenceError(f"non-finite value in epoch {epoch}: {exc}", epoch=epoch) from exc
            nx.adam_step(model.params, {k: v.grad for k, v in leaves.items()}, adam, lr)
            commit()
            losses.append(loss.value[0, 0])
        model.end_epoch()
        if not all(np.isfinite(model.params[k]).all() for k in model.params):
            raise DivergenceError(f"parameters became non-finite in epoch {epoch}", epoch=epoch)

        acc = float(np.mean(model.predict(x_val) == np.asarray(y_val)))
        result.val_accuracy.append(acc)
        result.train_loss.append(float(np.mean(losses)))
        if acc >= result.best_val_accuracy:
            result.best_val_accuracy, result.best_epoch = acc, epoch
            best = model.snapshot()
        if epoch % 100 == 0:
            log.debug("epoch %d loss %.4f val %.4f", epoch, result.train_loss[-1], acc)

    model.restore(best)
    return result
