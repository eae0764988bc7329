"""Sequential networks: declarative specs, the canonical digit architectures,
parameter initialisation and the ``OVANET1`` binary model format.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from .errors import FormatError, ShapeError
from .tensor import DTYPE, child_sequence, derive_stream

MAGIC = b"OVANET1"
INPUT_SHAPE = (1, 28, 28)

_KIND_TAGS = {"conv2d": 1, "relu": 2, "maxpool2d": 3, "fc": 4, "softmax": 5}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_shape: tuple = INPUT_SHAPE
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if not self.layers or not isinstance(self.layers[-1], L.SoftmaxClassifier):
            raise ShapeError("a network spec must end with SoftmaxClassifier")
        if any(isinstance(s, L.SoftmaxClassifier) for s in self.layers[:-1]):
            raise ShapeError("SoftmaxClassifier may only appear last")

    def shape_trace(self):
        """Per-layer output shapes, starting with the input shape."""
        shapes = [self.input_shape]
        for i, spec in enumerate(self.layers):
            try:
                shapes.append(tuple(spec.output_shape(shapes[-1])))
            except (ShapeError, ValueError) as exc:
                raise ShapeError(f"layer {i} ({spec.kind}): {exc}") from exc
        return shapes

    @property
    def n_classes(self):
        return self.shape_trace()[-1][0]


def conv_stack():
    """Shared convolutional trunk: 28 -> 28 -> 14 -> 14 -> 7 -> 7."""
    return [
        L.Conv2D(8, 3, 3, stride=1, padding=1),
        L.ReLU(),
        L.MaxPool2D(2, 2, stride=2),
        L.Conv2D(16, 3, 3, stride=1, padding=1),
        L.ReLU(),
        L.MaxPool2D(2, 2, stride=2),
        L.Conv2D(32, 3, 3, stride=1, padding=1),
        L.ReLU(),
    ]


def mcnn_spec(n_classes=10, input_shape=INPUT_SHAPE):
    return NetworkSpec(
        conv_stack() + [L.FullyConnected(n_classes), L.SoftmaxClassifier()],
        input_shape,
        name="mcnn",
    )


def bccnn_spec(input_shape=INPUT_SHAPE):
    return NetworkSpec(
        conv_stack() + [L.FullyConnected(2), L.SoftmaxClassifier()],
        input_shape,
        name="bccnn",
    )


def bccnn_modified_spec(input_shape=INPUT_SHAPE):
    return NetworkSpec(
        conv_stack() + [L.FullyConnected(8), L.FullyConnected(2), L.SoftmaxClassifier()],
        input_shape,
        name="bccnn_modified",
    )


ARCHITECTURES = {
    "mcnn": mcnn_spec,
    "bccnn": bccnn_spec,
    "bccnn_modified": bccnn_modified_spec,
}


def architecture(tag, **kwargs):
    try:
        return ARCHITECTURES[tag](**kwargs)
    except KeyError:
        raise ValueError(f"unknown architecture {tag!r}; choose from {sorted(ARCHITECTURES)}") from None


@dataclass
class Network:
    """Instantiated :class:`NetworkSpec` with parameters and caches."""

    spec: NetworkSpec
    layers: list = field(init=False)

    def __post_init__(self):
        trace = self.spec.shape_trace()
        self.layers = [L.build_layer(s, trace[i]) for i, s in enumerate(self.spec.layers)]

    @classmethod
    def from_spec(cls, spec, seed=None):
        net = cls(spec)
        if seed is not None:
            net.initialize(seed)
        return net

    @property
    def n_classes(self):
        return self.layers[-1].out_shape[0]

    def initialize(self, seed):
        """He-uniform weights and zero biases; layer ``i`` draws from child stream ``i``.

        ``seed`` is an int or a ``numpy.random.SeedSequence``.
        """
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(int(seed))
        for i, layer in enumerate(self.layers):
            if not layer.params:
                continue
            rng = derive_stream(child_sequence(seed, i))
            limit = np.sqrt(6.0 / layer.fan_in)
            layer.weight[...] = rng.uniform(-limit, limit, size=layer.weight.shape)
            layer.bias[...] = 0.0
        return self

    def parameters(self):
        """Flat list of parameter arrays (views, not copies), in layer order."""
        return [p for layer in self.layers for p in layer.parameters()]

    def parameter_owners(self):
        """Layer index for each entry of :meth:`parameters`."""
        return [i for i, layer in enumerate(self.layers) for _ in layer.params]

    def get_state(self):
        return [p.copy() for p in self.parameters()]

    def set_state(self, state):
        params = self.parameters()
        if len(state) != len(params):
            raise ShapeError(f"expected {len(params)} parameter arrays, got {len(state)}")
        for p, s in zip(params, state):
            if p.shape != s.shape:
                raise ShapeError(f"parameter shape {list(s.shape)} != {list(p.shape)}")
            p[...] = s

    def clear_cache(self):
        for layer in self.layers:
            layer.cache = None

    def forward(self, x, train=False):
        """Logits for the batch ``x`` of shape [b, *input_shape]."""
        x = np.asarray(x, dtype=DTYPE)
        if tuple(x.shape[1:]) != self.spec.input_shape:
            raise ShapeError(
                f"network expects [b,{list(self.spec.input_shape)}], got {list(x.shape)}"
            )
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train=train)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.spec.kind}): {exc}") from exc
        return x

    def backward(self, grad_logits):
        """Gradients for every parameter, aligned with :meth:`parameters`.

        Also returns the gradient with respect to the network input.
        """
        grads_by_layer = [None] * len(self.layers)
        g = grad_logits
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            try:
                g, pg = layer.backward(g)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.spec.kind}): {exc}") from exc
            grads_by_layer[i] = pg
        return [p for pg in grads_by_layer for p in pg], g

    def predict_proba(self, x, batch_size=500):
        x = np.asarray(x, dtype=DTYPE)
        out = [L.softmax(self.forward(x[i:i + batch_size])) for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    # ---------------------------------------------------------------- I/O
    def to_bytes(self):
        buf = io.BytesIO()
        buf.write(MAGIC)
        shp = self.spec.input_shape
        buf.write(struct.pack("<I", len(shp)))
        buf.write(struct.pack(f"<{len(shp)}I", *shp))
        name = self.spec.name.encode("utf-8")
        buf.write(struct.pack("<I", len(name)))
        buf.write(name)
        buf.write(struct.pack("<I", len(self.layers)))
        for layer in self.layers:
            ints = layer.spec.ints()
            buf.write(struct.pack("<BI", _KIND_TAGS[layer.spec.kind], len(ints)))
            buf.write(struct.pack(f"<{len(ints)}i", *ints))
            params = layer.parameters()
            buf.write(struct.pack("<I", len(params)))
            for p in params:
                buf.write(struct.pack("<I", p.ndim))
                buf.write(struct.pack(f"<{p.ndim}I", *p.shape))
                buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return buf.getvalue()

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data, path=None):
        reader = _Reader(data, path)
        if reader.take(len(MAGIC)) != MAGIC:
            raise FormatError("bad model magic", path=path, offset=0)
        ndim = reader.unpack("<I")[0]
        input_shape = reader.unpack(f"<{ndim}I")
        try:
            name = reader.take(reader.unpack("<I")[0]).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("model name is not UTF-8", path=path) from None
        n_layers = reader.unpack("<I")[0]
        specs, payloads = [], []
        for _ in range(n_layers):
            offset = reader.pos
            tag, n_ints = reader.unpack("<BI")
            ints = reader.unpack(f"<{n_ints}i")
            try:
                specs.append(L.SPEC_TYPES[_TAG_KINDS[tag]](*ints))
            except (KeyError, TypeError, ShapeError) as exc:
                raise FormatError(f"bad layer record: {exc}", path=path, offset=offset) from None
            arrays = []
            for _ in range(reader.unpack("<I")[0]):
                nd = reader.unpack("<I")[0]
                shape = reader.unpack(f"<{nd}I")
                count = int(np.prod(shape))
                raw = reader.take(8 * count)
                arrays.append(np.frombuffer(raw, dtype="<f8").astype(DTYPE).reshape(shape))
            payloads.append(arrays)
        if reader.pos != len(data):
            raise FormatError("trailing bytes after model", path=path, offset=reader.pos)
        try:
            net = cls(NetworkSpec(specs, input_shape, name=name))
            for layer, arrays in zip(net.layers, payloads):
                if len(arrays) != len(layer.params):
                    raise ShapeError(f"{layer.spec.kind} expects {len(layer.params)} arrays")
                for pname, arr in zip(layer.params, arrays):
                    target = getattr(layer, pname)
                    if target.shape != arr.shape:
                        raise ShapeError(f"{pname} shape {list(arr.shape)} != {list(target.shape)}")
                    target[...] = arr
        except ShapeError as exc:
            raise FormatError(f"inconsistent model: {exc}", path=path) from None
        return net

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes(), path=path)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("truncated model file", path=self.path, offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))
