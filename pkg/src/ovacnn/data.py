"""Dataset ingestion and seeded train/validation/test splitting.

Every loader returns a :class:`LabeledDataset` whose images are float64
``[n, 1, 28, 28]`` arrays scaled to ``[0, 1]``.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .tensor import DTYPE, derive_stream

SIDE = 28
N_CLASSES = 10
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

IMAGE_SUFFIXES = {".png", ".pgm", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff"}


@dataclass
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    provenance: str = "memory"
    indices: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim == 3:
            self.images = self.images[:, None]
        n = len(self.labels)
        if n < 1:
            raise DataError("dataset must contain at least one sample")
        if self.images.shape != (n, 1, SIDE, SIDE):
            raise DataError(
                f"images must be [{n}, 1, {SIDE}, {SIDE}], got {list(self.images.shape)}"
            )
        if self.labels.min() < 0 or self.labels.max() >= N_CLASSES:
            raise DataError(f"labels must lie in [0, {N_CLASSES - 1}]")
        if self.images.min() < 0 or self.images.max() > 1:
            raise DataError("pixel values must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        base = self.indices if self.indices is not None else np.arange(len(self))
        return LabeledDataset(self.images[idx], self.labels[idx], self.provenance, base[idx])

    def class_counts(self):
        return np.bincount(self.labels, minlength=N_CLASSES)


@dataclass(frozen=True)
class SplitSpec:
    train_size: int
    val_size: int
    test_size: int
    seed: int = 0

    def __post_init__(self):
        for name in ("train_size", "val_size", "test_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def total(self):
        return self.train_size + self.val_size + self.test_size


def split_indices(n, spec):
    if spec.total > n:
        raise ConfigError(f"split needs {spec.total} samples but dataset has {n}")
    perm = derive_stream(spec.seed).permutation(n)
    a = spec.train_size
    b = a + spec.val_size
    return perm[:a], perm[a:b], perm[b:spec.total]


def split(dataset, spec):
    """Disjoint seeded (train, validation, test) subsets."""
    return tuple(dataset.subset(idx) for idx in split_indices(len(dataset), spec))


# --------------------------------------------------------------------------
# Resizing
# --------------------------------------------------------------------------


def _interp_matrix(n_out, n_in):
    # Half-pixel-centre bilinear weights; each row sums to 1.
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.minimum(np.floor(src).astype(int), n_in - 2)
    frac = src - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m


def resize_bilinear(images, size=(SIDE, SIDE)):
    """Bilinear resize of ``[..., h, w]`` images to ``size``."""
    images = np.asarray(images, dtype=DTYPE)
    h, w = images.shape[-2:]
    if (h, w) == tuple(size):
        return images.copy()
    rh = _interp_matrix(size[0], h)
    rw = _interp_matrix(size[1], w)
    out = np.einsum("ij,...jk,lk->...il", rh, images, rw)
    return np.clip(out, 0.0, 1.0)


# --------------------------------------------------------------------------
# IDX
# --------------------------------------------------------------------------


def _read_bytes(path):
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def parse_idx(data, expected_magic, path=None):
    """Parse one IDX buffer into a uint8 array."""
    if len(data) < 4:
        raise FormatError("file too short for IDX magic", path=path, offset=0)
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise FormatError(
            f"bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}", path=path, offset=0
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError("truncated IDX header", path=path, offset=len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims))
    if len(data) < header + count:
        raise FormatError(
            f"truncated IDX payload: need {count} bytes, have {len(data) - header}",
            path=path,
            offset=len(data),
        )
    if len(data) > header + count:
        raise FormatError("trailing bytes after IDX payload", path=path, offset=header + count)
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)


def idx_bytes(array):
    """Serialise a uint8 array ([n] labels or [n, rows, cols] images) as IDX."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def load_idx(images_path, labels_path, provenance="mnist"):
    images = parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if images.ndim != 3:
        raise FormatError("IDX images must be 3-dimensional", path=images_path, offset=3)
    if len(images) != len(labels):
        raise FormatError(
            f"image count {len(images)} != label count {len(labels)}", path=labels_path, offset=4
        )
    if labels.size and labels.max() >= N_CLASSES:
        bad = int(np.argmax(labels >= N_CLASSES))
        raise FormatError("label outside [0, 9]", path=labels_path, offset=8 + bad)
    pixels = images.astype(DTYPE) / 255.0
    if pixels.shape[1:] != (SIDE, SIDE):
        pixels = resize_bilinear(pixels)
    return LabeledDataset(pixels, labels, provenance)


def dataset_to_idx(dataset):
    """Re-emit ``(images_bytes, labels_bytes)`` for a dataset of /255 pixels."""
    pixels = np.rint(dataset.images[:, 0] * 255.0).astype(np.uint8)
    return idx_bytes(pixels), idx_bytes(dataset.labels.astype(np.uint8))


def write_idx(dataset, images_path, labels_path):
    img, lab = dataset_to_idx(dataset)
    Path(images_path).write_bytes(img)
    Path(labels_path).write_bytes(lab)


_MNIST_FILES = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
]


def _find(root, stem):
    for name in (stem, stem.replace("-idx", ".idx")):
        for suffix in ("", ".gz"):
            p = root / (name + suffix)
            if p.exists():
                return p
    return None


def load_mnist(root):
    """Load and concatenate the MNIST train and test IDX pairs under ``root``."""
    root = Path(root)
    parts = []
    for img_stem, lab_stem in _MNIST_FILES:
        img, lab = _find(root, img_stem), _find(root, lab_stem)
        if img is None or lab is None:
            continue
        parts.append(load_idx(img, lab))
    if not parts:
        raise DataError(f"no MNIST IDX files found under {root}")
    return LabeledDataset(
        np.concatenate([p.images for p in parts]),
        np.concatenate([p.labels for p in parts]),
        "mnist",
    )


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def load_csv(path, provenance="usps"):
    """Rows of ``label, p0, ..., p255`` (16x16) or ``label, p0, ..., p783``."""
    images, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) not in (257, 785):
                raise FormatError(
                    f"expected 257 or 785 fields, got {len(fields)}", path=path, line=lineno
                )
            try:
                label = int(fields[0])
                pixels = np.array(fields[1:], dtype=DTYPE)
            except ValueError as exc:
                raise FormatError(f"unparsable value: {exc}", path=path, line=lineno) from None
            if not 0 <= label < N_CLASSES:
                raise FormatError(f"label {label} outside [0, 9]", path=path, line=lineno)
            if not (np.all(pixels >= 0) and np.all(pixels <= 1)):
                raise FormatError("pixel value outside [0, 1]", path=path, line=lineno)
            side = 16 if pixels.size == 256 else SIDE
            img = pixels.reshape(side, side)
            images.append(resize_bilinear(img) if side != SIDE else img)
            labels.append(label)
    if not labels:
        raise DataError(f"{path} holds no samples")
    return LabeledDataset(np.stack(images), np.array(labels), provenance)


def write_csv(path, images, labels):
    """Write flat pixel rows (values in [0, 1]) with shortest round-trip floats."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for img, label in zip(images, labels):
            flat = np.asarray(img, dtype=DTYPE).ravel()
            fh.write(str(int(label)) + "," + ",".join(repr(float(v)) for v in flat) + "\n")


def convert_usps(source, dest):
    """Convert a USPS container to the canonical 16x16 CSV; returns sample count.

    Accepted sources: ``usps_all.mat`` (``data`` of shape 256x1100x10 uint8,
    slot ``j`` holding digit ``(j + 1) % 10``) and ``usps.h5`` (``train`` and
    ``test`` groups with ``data`` in [0, 1] and integer ``target``).
    """
    source = Path(source)
    if source.suffix == ".mat":
        from scipy.io import loadmat

        raw = loadmat(source)["data"]
        if raw.shape[0] != 256 or raw.ndim != 3:
            raise FormatError(f"unexpected USPS data shape {raw.shape}", path=source)
        images, labels = [], []
        for slot in range(raw.shape[2]):
            block = raw[:, :, slot].T.astype(DTYPE) / 255.0
            images.append(block)
            labels.append(np.full(len(block), (slot + 1) % 10))
        images = np.concatenate(images)
        labels = np.concatenate(labels)
    elif source.suffix in (".h5", ".hdf5"):
        import h5py

        images, labels = [], []
        with h5py.File(source, "r") as fh:
            for group in ("train", "test"):
                if group in fh:
                    images.append(np.asarray(fh[group]["data"], dtype=DTYPE).reshape(-1, 256))
                    labels.append(np.asarray(fh[group]["target"], dtype=np.int64))
        if not images:
            raise FormatError("no train/test groups", path=source)
        images = np.clip(np.concatenate(images), 0.0, 1.0)
        labels = np.concatenate(labels)
    else:
        raise FormatError(f"unsupported USPS container {source.suffix!r}", path=source)
    write_csv(dest, images, labels)
    return len(labels)


# --------------------------------------------------------------------------
# Image directories
# --------------------------------------------------------------------------


def load_image_dir(root, provenance="imagedir"):
    """Load ``root/<digit>/<image>`` trees in lexicographic order."""
    from PIL import Image

    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    images, labels = [], []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        if sub.name not in {str(d) for d in range(N_CLASSES)}:
            raise FormatError(f"unexpected class directory {sub.name!r}", path=sub)
        for f in sorted(p for p in sub.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
            try:
                with Image.open(f) as im:
                    arr = np.asarray(im.convert("L"), dtype=DTYPE) / 255.0
            except OSError as exc:
                raise FormatError(f"unreadable image: {exc}", path=f) from None
            images.append(resize_bilinear(arr))
            labels.append(int(sub.name))
    if not labels:
        raise DataError(f"no images found under {root}")
    return LabeledDataset(np.stack(images), np.array(labels), provenance)
