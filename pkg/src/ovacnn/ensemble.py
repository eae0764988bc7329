"""One-versus-all ensembles of binary CNNs.

Member ``i`` is a two-output network trained to answer "is this digit i?"
(output 0 = yes, output 1 = no).  A sample is assigned to the member whose
positive-class probability is largest.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import N_CLASSES
from .errors import ConfigError, DataError, FormatError, OvaCnnError, StateError
from .network import Network, architecture
from .training import run_streams, train

log = logging.getLogger(__name__)

POSITIVE, NEGATIVE = 0, 1
ENSEMBLE_ARCHS = ("bccnn", "bccnn_modified")
MANIFEST = "manifest.json"


class OvaLabeledView:
    """Binary relabelling of a dataset around one target class.

    Shares the underlying image array; only the label vector is derived.
    """

    def __init__(self, dataset, target_class):
        if not 0 <= int(target_class) < N_CLASSES:
            raise ConfigError(f"target class must lie in [0, {N_CLASSES - 1}], got {target_class}")
        self.dataset = dataset
        self.target_class = int(target_class)
        self.labels = np.where(np.asarray(dataset.labels) == self.target_class, POSITIVE, NEGATIVE)

    @property
    def images(self):
        return self.dataset.images

    def __len__(self):
        return len(self.labels)

    @property
    def positive_count(self):
        return int(np.count_nonzero(self.labels == POSITIVE))


def ova_relabel(dataset, target_class):
    view = OvaLabeledView(dataset, target_class)
    if view.positive_count == 0:
        log.warning("class %d absent from dataset; all labels negative", view.target_class)
    return view


def vote(scores):
    """Index of the largest score per row; ties go to the smallest index."""
    scores = np.asarray(scores)
    return scores.argmax(axis=-1)


def default_jobs():
    return max(1, min(os.cpu_count() or 1, N_CLASSES))


@dataclass
class OvaEnsemble:
    members: list
    arch: str
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.arch not in ENSEMBLE_ARCHS:
            raise ConfigError(f"ensemble architecture must be one of {ENSEMBLE_ARCHS}")
        if len(self.members) != N_CLASSES:
            raise StateError(f"ensemble needs {N_CLASSES} members, has {len(self.members)}")
        for i, m in enumerate(self.members):
            if m is None:
                raise StateError(f"ensemble member {i} is missing")
            if m.n_classes != 2:
                raise StateError(f"member {i} has {m.n_classes} outputs, expected 2")

    @property
    def n_classes(self):
        return len(self.members)

    def scores(self, images, batch_size=500):
        """``[n, 10]`` positive-class probabilities, one column per member."""
        images = np.asarray(images, dtype=np.float64)
        return np.stack(
            [m.predict_proba(images, batch_size)[:, POSITIVE] for m in self.members], axis=1
        )

    def predict_batch(self, images):
        s = self.scores(images)
        return vote(s), s

    def predict(self, x):
        """Class and the 10 member scores for one ``[1, 28, 28]`` image."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.members[0].spec.input_shape:
            raise ValueError(f"expected one image of shape {self.members[0].spec.input_shape}")
        cls, s = self.predict_batch(x[None])
        return int(cls[0]), s[0]

    def digest(self):
        return config_digest(self.config)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for i, m in enumerate(self.members):
            m.save(directory / f"member_{i}.ovanet")
        manifest = {
            "architecture": self.arch,
            "seed": int(self.seed),
            "n_members": len(self.members),
            "config": self.config,
            "config_digest": self.digest(),
        }
        (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        try:
            manifest = json.loads((directory / MANIFEST).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"unreadable ensemble manifest: {exc}", path=directory) from None
        members = [
            Network.load(directory / f"member_{i}.ovanet") for i in range(manifest["n_members"])
        ]
        return cls(members, manifest["architecture"], manifest["seed"], manifest.get("config", {}))


def config_digest(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class MemberTrainingError(OvaCnnError):
    def __init__(self, class_index, cause):
        super().__init__(f"ensemble member {class_index}: {cause}")
        self.class_index = class_index
        self.__cause__ = cause


def train_member(class_index, train_set, val_set, arch, cfg):
    """Train the binary network for one class; returns ``(net, outcome, seconds)``."""
    init_seq, shuffle_seq = run_streams(cfg.seed, class_index)
    net = Network.from_spec(architecture(arch), seed=init_seq)
    start = time.perf_counter()
    try:
        net, outcome = train(
            net,
            ova_relabel(train_set, class_index),
            ova_relabel(val_set, class_index),
            cfg,
            shuffle_seed=shuffle_seq,
        )
    except OvaCnnError as exc:
        raise MemberTrainingError(class_index, exc) from exc
    return net, outcome, time.perf_counter() - start


def train_ensemble(train_set, val_set, arch, cfg, parallelism=None):
    """Train all ten members, ``parallelism`` at a time.

    Every member draws its randomness from streams keyed by its class
    index, so the result does not depend on worker count or scheduling.
    Returns ``(ensemble, outcomes, member_seconds)`` in class order.
    """
    if arch not in ENSEMBLE_ARCHS:
        raise ConfigError(f"ensemble architecture must be one of {ENSEMBLE_ARCHS}")
    parallelism = default_jobs() if parallelism is None else int(parallelism)
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    classes = range(N_CLASSES)
    if parallelism == 1:
        results = [train_member(i, train_set, val_set, arch, cfg) for i in classes]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(train_member, i, train_set, val_set, arch, cfg) for i in classes]
            results = [f.result() for f in futures]
    members, outcomes, seconds = zip(*results)
    config = {"architecture": arch, **cfg.to_dict()}
    ensemble = OvaEnsemble(list(members), arch, int(cfg.seed), config)
    return ensemble, list(outcomes), list(seconds)


def evaluate_ensemble(ensemble, dataset):
    """``(accuracy, confusion)`` of the score vote on ``dataset``."""
    if dataset is None or len(dataset.labels) == 0:
        raise DataError("evaluation set is empty")
    labels = np.asarray(dataset.labels)
    predicted, _ = ensemble.predict_batch(dataset.images)
    k = ensemble.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, predicted), 1)
    return float(np.trace(confusion) / len(labels)), confusion
