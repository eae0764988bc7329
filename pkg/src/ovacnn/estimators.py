"""scikit-learn compatible wrappers around the network and the ensemble.

``X`` may be ``[n, 784]``, ``[n, 28, 28]`` or ``[n, 1, 28, 28]`` with pixels
in [0, 1].  Labels can be any hashable values; they are encoded in sorted
order, so class ``classes_[k]`` is trained as index ``k``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import N_CLASSES, SIDE, LabeledDataset
from .ensemble import ENSEMBLE_ARCHS, train_ensemble, vote
from .errors import ConfigError
from .network import Network, mcnn_spec
from .optim import SgdmConfig
from .tensor import derive_stream
from .training import TrainConfig, run_streams, train


def _images(X):
    X = check_array(X, allow_nd=True, dtype=np.float64)
    n = X.shape[0]
    if X.size != n * SIDE * SIDE:
        raise ValueError(f"each sample must hold {SIDE * SIDE} pixels, got shape {X.shape}")
    return X.reshape(n, 1, SIDE, SIDE)


class _Base(ClassifierMixin, BaseEstimator):
    def _train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            validation_frequency=self.validation_frequency,
            validation_patience=self.validation_patience,
            seed=self.random_state,
            sgdm=SgdmConfig(self.learn_rate, self.momentum, self.l2),
        )

    def _datasets(self, X, y, X_val, y_val):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        images = _images(X)
        self._encoder = LabelEncoder().fit(y if y_val is None else np.concatenate([y, y_val]))
        self.classes_ = self._encoder.classes_
        if len(self.classes_) > N_CLASSES:
            raise ValueError(f"at most {N_CLASSES} classes are supported")
        codes = self._encoder.transform(y)
        if X_val is None:
            if not 0 < self.validation_fraction < 1:
                raise ConfigError("validation_fraction must lie in (0, 1) when no validation set is given")
            perm = derive_stream(self.random_state, 2).permutation(len(codes))
            n_val = max(1, int(round(self.validation_fraction * len(codes))))
            va, tr = perm[:n_val], perm[n_val:]
            return (
                LabeledDataset(images[tr], codes[tr], "estimator"),
                LabeledDataset(images[va], codes[va], "estimator"),
            )
        X_val, y_val = check_X_y(X_val, y_val, allow_nd=True, dtype=np.float64)
        return (
            LabeledDataset(images, codes, "estimator"),
            LabeledDataset(_images(X_val), self._encoder.transform(y_val), "estimator"),
        )

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[vote(scores)]


class CNNClassifier(_Base):
    """Single multi-class network with a softmax head of ``len(classes_)`` outputs."""

    def __init__(self, learn_rate=0.01, momentum=0.9, l2=1e-4, batch_size=40, max_epochs=30,
                 validation_frequency=50, validation_patience=5, validation_fraction=0.2,
                 random_state=0):
        self.learn_rate = learn_rate
        self.momentum = momentum
        self.l2 = l2
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.validation_frequency = validation_frequency
        self.validation_patience = validation_patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y, X_val=None, y_val=None):
        train_set, val_set = self._datasets(X, y, X_val, y_val)
        cfg = self._train_config()
        init_seq, shuffle_seq = run_streams(cfg.seed)
        net = Network.from_spec(mcnn_spec(n_classes=len(self.classes_)), seed=init_seq)
        self.network_, self.outcome_ = train(net, train_set, val_set, cfg, shuffle_seed=shuffle_seq)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return self.network_.predict_proba(_images(X))

    def decision_function(self, X):
        return self.predict_proba(X)


class OvaCNNClassifier(_Base):
    """One binary network per class; the largest positive score wins.

    Exactly ten classes are required.  ``predict_proba`` normalises the
    member scores per row; ``decision_function`` returns them raw.
    """

    def __init__(self, architecture="bccnn", learn_rate=0.01, momentum=0.9, l2=1e-4,
                 batch_size=40, max_epochs=30, validation_frequency=50, validation_patience=5,
                 validation_fraction=0.2, n_jobs=None, random_state=0):
        self.architecture = architecture
        self.learn_rate = learn_rate
        self.momentum = momentum
        self.l2 = l2
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.validation_frequency = validation_frequency
        self.validation_patience = validation_patience
        self.validation_fraction = validation_fraction
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, X, y, X_val=None, y_val=None):
        if self.architecture not in ENSEMBLE_ARCHS:
            raise ConfigError(f"architecture must be one of {ENSEMBLE_ARCHS}")
        train_set, val_set = self._datasets(X, y, X_val, y_val)
        if len(self.classes_) != N_CLASSES:
            raise ValueError(f"one-versus-all ensemble needs exactly {N_CLASSES} classes, got {len(self.classes_)}")
        self.ensemble_, self.outcomes_, _ = train_ensemble(
            train_set, val_set, self.architecture, self._train_config(), self.n_jobs
        )
        return self

    def decision_function(self, X):
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.scores(_images(X))

    def predict_proba(self, X):
        s = self.decision_function(X)
        total = s.sum(axis=1, keepdims=True)
        return np.divide(s, total, out=np.full_like(s, 1.0 / s.shape[1]), where=total > 0)
