"""NumPy CNN training engine with one-versus-all binary CNN ensembles."""

from .data import LabeledDataset, SplitSpec, load_csv, load_idx, load_image_dir, load_mnist, split
from .ensemble import OvaEnsemble, evaluate_ensemble, train_ensemble
from .errors import (
    ConfigError, DataError, FormatError, NumericError, OvaCnnError, ShapeError, StateError,
)
from .estimators import CNNClassifier, OvaCNNClassifier
from .network import Network, NetworkSpec, architecture
from .optim import SgdmConfig
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "CNNClassifier", "ConfigError", "DataError", "FormatError", "LabeledDataset", "Network",
    "NetworkSpec", "NumericError", "OvaCNNClassifier", "OvaCnnError", "OvaEnsemble", "SgdmConfig",
    "ShapeError", "SplitSpec", "StateError", "TrainConfig", "architecture", "evaluate",
    "evaluate_ensemble", "load_csv", "load_idx", "load_image_dir", "load_mnist", "split", "train",
    "train_ensemble",
]
