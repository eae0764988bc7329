"""Mini-batch training with periodic validation and patience-based stopping."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .layers import softmax_xent
from .optim import Sgdm, SgdmConfig
from .tensor import derive_stream, seed_sequence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 40
    max_epochs: int = 30
    validation_frequency: int = 50
    validation_patience: int = 5
    seed: int = 0
    sgdm: SgdmConfig = field(default_factory=SgdmConfig)

    def __post_init__(self):
        for name in ("batch_size", "max_epochs", "validation_frequency", "validation_patience"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def to_dict(self):
        return {
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "validation_frequency": self.validation_frequency,
            "validation_patience": self.validation_patience,
            "seed": int(self.seed),
            "learn_rate": self.sgdm.learn_rate,
            "momentum": self.sgdm.momentum,
            "l2": self.sgdm.l2,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        sgdm = SgdmConfig(
            learn_rate=d.pop("learn_rate", 0.01),
            momentum=d.pop("momentum", 0.9),
            l2=d.pop("l2", 0.0001),
        )
        return cls(sgdm=sgdm, **d)


@dataclass
class TrainOutcome:
    epochs_run: int
    iterations_run: int
    best_validation_loss: float
    best_iteration: int
    stop_reason: str
    loss_curve: list

    def write_loss_curve(self, path):
        """CSV ``iteration,train_loss,val_loss``; val_loss empty when not validated."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "train_loss", "val_loss"])
            for it, tl, vl in self.loss_curve:
                w.writerow([it, repr(tl), "" if vl is None else repr(vl)])


def run_streams(seed, *prefix):
    """``(init, shuffle)`` seed sequences for one training run."""
    return seed_sequence(seed, *prefix, 0), seed_sequence(seed, *prefix, 1)


def _check_dataset(dataset, n_classes, what):
    if dataset is None or len(dataset.labels) == 0:
        raise DataError(f"{what} set is empty")
    labels = np.asarray(dataset.labels)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise DataError(f"{what} labels must lie in [0, {n_classes})")


def evaluate(net, dataset, batch_size=500):
    """``(accuracy, mean_loss, confusion)``; rows are true labels."""
    k = net.n_classes
    _check_dataset(dataset, k, "evaluation")
    images, labels = dataset.images, np.asarray(dataset.labels)
    n = len(labels)
    confusion = np.zeros((k, k), dtype=np.int64)
    total_loss = 0.0
    for start in range(0, n, batch_size):
        y = labels[start:start + batch_size]
        loss, probs, _ = softmax_xent(net.forward(images[start:start + batch_size]), y)
        total_loss += loss * len(y)
        np.add.at(confusion, (y, probs.argmax(axis=1)), 1)
    return float(np.trace(confusion) / n), total_loss / n, confusion


def train(net, train_set, val_set, cfg, shuffle_seed=None):
    """Train ``net`` in place; returns ``(net, outcome)``.

    The returned network carries the parameters from the validation check
    with the lowest loss.  ``shuffle_seed`` (int or ``SeedSequence``) drives
    the per-epoch permutations and defaults to the shuffle stream of
    ``cfg.seed``.
    """
    k = net.n_classes
    _check_dataset(train_set, k, "training")
    _check_dataset(val_set, k, "validation")
    if shuffle_seed is None:
        shuffle_seed = run_streams(cfg.seed)[1]
    rng = derive_stream(shuffle_seed)

    images, labels = train_set.images, np.asarray(train_set.labels)
    n = len(labels)
    opt = Sgdm(net.parameters(), cfg.sgdm, owners=net.parameter_owners())

    curve = []
    best_loss, best_it, best_state = np.inf, 0, None
    bad_checks = 0
    it = 0
    epoch = 0
    stop_reason = "max_epochs"

    def validate():
        nonlocal best_loss, best_it, best_state, bad_checks
        _, val_loss, _ = evaluate(net, val_set)
        if not np.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at iteration {it}")
        if val_loss < best_loss:
            best_loss, best_it, best_state = val_loss, it, net.get_state()
            bad_checks = 0
        else:
            bad_checks += 1
        log.debug("iteration %d: validation loss %.6f (bad checks %d)", it, val_loss, bad_checks)
        return val_loss

    while epoch < cfg.max_epochs and stop_reason == "max_epochs":
        epoch += 1
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            logits = net.forward(images[idx], train=True)
            loss, _, grad = softmax_xent(logits, labels[idx])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at iteration {it + 1}")
            grads, _ = net.backward(grad)
            try:
                opt.step(grads)
            except NumericError as exc:
                raise NumericError(f"{exc} at iteration {it + 1}") from None
            it += 1
            val_loss = validate() if it % cfg.validation_frequency == 0 else None
            curve.append((it, loss, val_loss))
            if bad_checks >= cfg.validation_patience:
                stop_reason = "patience"
                break

    if curve[-1][2] is None:
        curve[-1] = (curve[-1][0], curve[-1][1], validate())

    net.set_state(best_state)
    net.clear_cache()
    outcome = TrainOutcome(
        epochs_run=epoch,
        iterations_run=it,
        best_validation_loss=float(best_loss),
        best_iteration=best_it,
        stop_reason=stop_reason,
        loss_curve=curve,
    )
    log.info(
        "trained %s: %d epochs, %d iterations, best val loss %.5f at %d (%s)",
        net.spec.name, epoch, it, best_loss, best_it, stop_reason,
    )
    return net, outcome
