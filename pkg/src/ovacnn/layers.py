"""Layer descriptors and their forward/backward passes.

All arrays are float64 in NCHW layout.  Each parameterised layer object owns
its ``weight`` and ``bias`` arrays and, after a training-mode forward pass,
a ``cache`` holding what the backward pass needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, ShapeError, StateError
from .tensor import DTYPE


def output_extent(size, kernel, stride, padding):
    """Spatial output size of a window op, or ShapeError if it is below 1."""
    span = size + 2 * padding - kernel
    if span < 0:
        raise ShapeError(
            f"window {kernel} (pad {padding}) does not fit input extent {size}"
        )
    return span // stride + 1


# --------------------------------------------------------------------------
# Specs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv2D:
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    kind = "conv2d"

    def __post_init__(self):
        if min(self.out_channels, self.kernel_h, self.kernel_w, self.stride) < 1:
            raise ShapeError(f"invalid {self}")
        if self.padding < 0:
            raise ShapeError(f"negative padding in {self}")

    def ints(self):
        return (self.out_channels, self.kernel_h, self.kernel_w, self.stride, self.padding)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (
            self.out_channels,
            output_extent(h, self.kernel_h, self.stride, self.padding),
            output_extent(w, self.kernel_w, self.stride, self.padding),
        )


@dataclass(frozen=True)
class ReLU:
    kind = "relu"

    def ints(self):
        return ()

    def output_shape(self, in_shape):
        return tuple(in_shape)


@dataclass(frozen=True)
class MaxPool2D:
    pool_h: int
    pool_w: int
    stride: int

    kind = "maxpool2d"

    def __post_init__(self):
        if min(self.pool_h, self.pool_w, self.stride) < 1:
            raise ShapeError(f"invalid {self}")

    def ints(self):
        return (self.pool_h, self.pool_w, self.stride)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (
            c,
            output_extent(h, self.pool_h, self.stride, 0),
            output_extent(w, self.pool_w, self.stride, 0),
        )


@dataclass(frozen=True)
class FullyConnected:
    out_neurons: int

    kind = "fc"

    def __post_init__(self):
        if self.out_neurons < 1:
            raise ShapeError(f"invalid {self}")

    def ints(self):
        return (self.out_neurons,)

    def output_shape(self, in_shape):
        return (self.out_neurons,)


@dataclass(frozen=True)
class SoftmaxClassifier:
    """Terminal loss head; the class count is the width of the layer below."""

    kind = "softmax"

    def ints(self):
        return ()

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError("softmax head must follow a fully connected layer")
        return tuple(in_shape)


SPEC_TYPES = {cls.kind: cls for cls in (Conv2D, ReLU, MaxPool2D, FullyConnected, SoftmaxClassifier)}


# --------------------------------------------------------------------------
# Convolution
# --------------------------------------------------------------------------


def im2col(x, kh, kw, stride, padding):
    """Unfold ``x`` [b,c,h,w] into patch rows [b*oh*ow, c*kh*kw]."""
    b, c, h, w = x.shape
    oh = output_extent(h, kh, stride, padding)
    ow = output_extent(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :oh, :ow]
    # [b,c,oh,ow,kh,kw] -> [b,oh,ow,c,kh,kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
    return cols, oh, ow


def col2im(cols, x_shape, kh, kw, stride, padding, oh, ow):
    """Adjoint of :func:`im2col`: scatter-add patch rows back to an image."""
    b, c, h, w = x_shape
    patches = cols.reshape(b, oh, ow, c, kh, kw)
    out = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=DTYPE)
    hi = stride * (oh - 1) + 1
    wi = stride * (ow - 1) + 1
    for u in range(kh):
        for v in range(kw):
            out[:, :, u:u + hi:stride, v:v + wi:stride] += patches[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return out


def conv2d_forward(x, weight, bias, stride=1, padding=0):
    """Cross-correlation plus bias.  Returns ``(out, cache)``."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [b,c,h,w], got {list(x.shape)}")
    oc, ic, kh, kw = weight.shape
    if x.shape[1] != ic:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[1]}, weight {ic}")
    cols, oh, ow = im2col(x, kh, kw, stride, padding)
    out = cols @ weight.reshape(oc, -1).T
    out += bias
    out = out.reshape(x.shape[0], oh, ow, oc).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (cols, x.shape, oh, ow)


def conv2d_backward(grad_out, cache, weight, stride=1, padding=0):
    """Returns ``(grad_in, grad_w, grad_b)`` for :func:`conv2d_forward`."""
    if cache is None:
        raise StateError("conv2d backward called without a training forward pass")
    cols, x_shape, oh, ow = cache
    oc, ic, kh, kw = weight.shape
    expected = (x_shape[0], oc, oh, ow)
    if grad_out.shape != expected:
        raise ShapeError(f"conv2d grad shape {list(grad_out.shape)} != {list(expected)}")
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, oc)
    grad_w = (g.T @ cols).reshape(weight.shape)
    grad_b = g.sum(axis=0)
    grad_cols = g @ weight.reshape(oc, -1)
    grad_in = col2im(grad_cols, x_shape, kh, kw, stride, padding, oh, ow)
    return grad_in, grad_w, grad_b


# --------------------------------------------------------------------------
# ReLU / pooling / FC
# --------------------------------------------------------------------------


def relu_forward(x):
    mask = x > 0
    return np.maximum(x, 0.0), mask


def relu_backward(grad_out, mask):
    if mask is None:
        raise StateError("relu backward called without a training forward pass")
    if grad_out.shape != mask.shape:
        raise ShapeError("relu grad shape mismatch")
    return grad_out * mask


def _window_slices(pool_h, pool_w, stride, oh, ow):
    hi = stride * (oh - 1) + 1
    wi = stride * (ow - 1) + 1
    for u in range(pool_h):
        for v in range(pool_w):
            yield u * pool_w + v, (slice(None), slice(None), slice(u, u + hi, stride), slice(v, v + wi, stride))


def maxpool_forward(x, pool_h, pool_w, stride):
    """Window max; ties resolve to the first row-major position.

    The cache holds the flat in-window offset (``u * pool_w + v``) of each max.
    """
    b, c, h, w = x.shape
    oh = output_extent(h, pool_h, stride, 0)
    ow = output_extent(w, pool_w, stride, 0)
    out = None
    arg = np.zeros((b, c, oh, ow), dtype=np.intp)
    for k, sl in _window_slices(pool_h, pool_w, stride, oh, ow):
        cand = x[sl]
        if out is None:
            out = cand.copy()
            continue
        better = cand > out
        np.copyto(out, cand, where=better)
        np.copyto(arg, k, where=better)
    return out, (arg, x.shape)


def maxpool_backward(grad_out, cache, pool_h, pool_w, stride):
    if cache is None:
        raise StateError("maxpool backward called without a training forward pass")
    arg, x_shape = cache
    if grad_out.shape != arg.shape:
        raise ShapeError("maxpool grad shape mismatch")
    oh, ow = arg.shape[2:]
    grad_in = np.zeros(x_shape, dtype=DTYPE)
    for k, sl in _window_slices(pool_h, pool_w, stride, oh, ow):
        grad_in[sl] += grad_out * (arg == k)
    return grad_in


def fc_forward(x, weight, bias):
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"fc expects [b,{weight.shape[1]}], got {list(x.shape)}"
        )
    return x @ weight.T + bias, x


def fc_backward(grad_out, x, weight):
    if x is None:
        raise StateError("fc backward called without a training forward pass")
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns ``(loss, probs, grad_logits)`` where ``grad_logits`` is the
    gradient of the batch-mean loss.
    """
    logits = np.asarray(logits, dtype=DTYPE)
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise DataError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k})")
    labels = labels.astype(np.intp)
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    log_p = z - log_norm[:, None]
    probs = np.exp(log_p)
    rows = np.arange(b)
    loss = float(-log_p[rows, labels].mean())
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    grad /= b
    return loss, probs, grad


# --------------------------------------------------------------------------
# Stateful layer objects
# --------------------------------------------------------------------------


class Layer:
    """A spec bound to concrete input shape, parameters and cache."""

    params = ()

    def __init__(self, spec, in_shape):
        self.spec = spec
        self.in_shape = tuple(in_shape)
        self.out_shape = spec.output_shape(self.in_shape)
        self.cache = None

    def parameters(self):
        return [getattr(self, name) for name in self.params]

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad_out):
        """Return ``(grad_in, [grad per parameter])``."""
        raise NotImplementedError


class Conv2DLayer(Layer):
    params = ("weight", "bias")

    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        if len(self.in_shape) != 3:
            raise ShapeError(f"conv2d needs a [c,h,w] input, got {list(in_shape)}")
        self.weight = np.zeros(
            (spec.out_channels, self.in_shape[0], spec.kernel_h, spec.kernel_w), dtype=DTYPE
        )
        self.bias = np.zeros(spec.out_channels, dtype=DTYPE)

    @property
    def fan_in(self):
        return int(np.prod(self.weight.shape[1:]))

    def forward(self, x, train=False):
        out, cache = conv2d_forward(x, self.weight, self.bias, self.spec.stride, self.spec.padding)
        self.cache = cache if train else None
        return out

    def backward(self, grad_out):
        gi, gw, gb = conv2d_backward(
            grad_out, self.cache, self.weight, self.spec.stride, self.spec.padding
        )
        return gi, [gw, gb]


class ReLULayer(Layer):
    def forward(self, x, train=False):
        out, mask = relu_forward(x)
        self.cache = mask if train else None
        return out

    def backward(self, grad_out):
        return relu_backward(grad_out, self.cache), []


class MaxPool2DLayer(Layer):
    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        if len(self.in_shape) != 3:
            raise ShapeError(f"maxpool needs a [c,h,w] input, got {list(in_shape)}")

    def forward(self, x, train=False):
        s = self.spec
        out, cache = maxpool_forward(x, s.pool_h, s.pool_w, s.stride)
        self.cache = cache if train else None
        return out

    def backward(self, grad_out):
        s = self.spec
        return maxpool_backward(grad_out, self.cache, s.pool_h, s.pool_w, s.stride), []


class FullyConnectedLayer(Layer):
    """Dense layer; flattens any [b, ...] input to [b, in]."""

    params = ("weight", "bias")

    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        self.n_in = int(np.prod(self.in_shape))
        self.weight = np.zeros((spec.out_neurons, self.n_in), dtype=DTYPE)
        self.bias = np.zeros(spec.out_neurons, dtype=DTYPE)

    @property
    def fan_in(self):
        return self.n_in

    def forward(self, x, train=False):
        if tuple(x.shape[1:]) != self.in_shape:
            raise ShapeError(f"fc expects [b,{list(self.in_shape)}], got {list(x.shape)}")
        flat = x.reshape(x.shape[0], self.n_in)
        out, cached = fc_forward(flat, self.weight, self.bias)
        self.cache = cached if train else None
        return out

    def backward(self, grad_out):
        gi, gw, gb = fc_backward(grad_out, self.cache, self.weight)
        return gi.reshape((grad_out.shape[0],) + self.in_shape), [gw, gb]


class SoftmaxClassifierLayer(Layer):
    """Identity on logits; the loss itself is computed by :func:`softmax_xent`."""

    def forward(self, x, train=False):
        return x

    def backward(self, grad_out):
        return grad_out, []


LAYER_TYPES = {
    Conv2D: Conv2DLayer,
    ReLU: ReLULayer,
    MaxPool2D: MaxPool2DLayer,
    FullyConnected: FullyConnectedLayer,
    SoftmaxClassifier: SoftmaxClassifierLayer,
}


def build_layer(spec, in_shape):
    return LAYER_TYPES[type(spec)](spec, in_shape)
