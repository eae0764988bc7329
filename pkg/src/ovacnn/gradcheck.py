"""Central finite-difference gradient checks for layers and whole networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .network import Network, NetworkSpec, bccnn_spec, conv_stack

STEP = 1e-5
LAYER_TOL = 1e-6
NETWORK_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    kink_fallbacks: int = 0

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def rel_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def central_difference(f, x, h=STEP):
    """Numerical gradient of the scalar function ``f()`` w.r.t. ``x``, perturbed in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def _gather_pool(x, arg, spec):
    oh, ow = arg.shape[2:]
    out = np.zeros(arg.shape, dtype=x.dtype)
    for k, sl in L._window_slices(spec.pool_h, spec.pool_w, spec.stride, oh, ow):
        out += x[sl] * (arg == k)
    return out


def _run(layers, start, x, labels, frozen=None):
    """Loss of ``layers[start:]`` on activation ``x`` plus the activation pattern.

    With ``frozen`` the ReLU masks and pooling winners are taken from it
    instead of recomputed, which evaluates the loss on one linear piece.
    """
    pattern = {}
    for i in range(start, len(layers)):
        layer = layers[i]
        if isinstance(layer, L.ReLULayer):
            mask = x > 0
            pattern[i] = mask
            x = x * (frozen[i] if frozen else mask)
        elif isinstance(layer, L.MaxPool2DLayer):
            s = layer.spec
            out, (arg, _) = L.maxpool_forward(x, s.pool_h, s.pool_w, s.stride)
            pattern[i] = arg
            x = _gather_pool(x, frozen[i], s) if frozen else out
        else:
            x = layer.forward(x)
    return L.softmax_xent(x, labels)[0], pattern


def _same(p, q):
    return all(np.array_equal(p[k], q[k]) for k in p)


def _kink_aware_difference(run, x, base_pattern, h):
    """Central differences; coordinates whose step changes the pattern are redone frozen."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    fallbacks = 0
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp, pp = run(None)
        flat[i] = old - h
        fm, pm = run(None)
        if not (_same(pp, base_pattern) and _same(pm, base_pattern)):
            fallbacks += 1
            flat[i] = old + h
            fp = run(base_pattern)[0]
            flat[i] = old - h
            fm = run(base_pattern)[0]
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad, fallbacks


def check_network(net, x, labels, h=STEP, tol=NETWORK_TOL):
    """Compare backprop against finite differences for every parameter and the input.

    Each perturbation re-runs the network from the perturbed layer onward.
    A step that flips a ReLU sign or a pooling winner straddles a kink, where
    the difference quotient is not the derivative; those coordinates are
    re-differenced with the activation pattern of the unperturbed point held
    fixed, and counted in ``kink_fallbacks``.
    """
    x = np.array(x, dtype=np.float64)
    layers = net.layers
    _, _, g = L.softmax_xent(net.forward(x, train=True), labels)
    grads, grad_in = net.backward(g)
    net.clear_cache()

    acts = [x]
    for layer in layers[:-1]:
        acts.append(layer.forward(acts[-1]))
    _, full_pattern = _run(layers, 0, x, labels)

    results = []
    grads = iter(grads)
    for li, layer in enumerate(layers):
        if not layer.params:
            continue
        base = {k: v for k, v in full_pattern.items() if k >= li}

        def run(frozen, li=li):
            return _run(layers, li, acts[li], labels, frozen)

        for pname in layer.params:
            numeric, kinks = _kink_aware_difference(run, getattr(layer, pname), base, h)
            name = f"layer{li}.{layer.spec.kind}.{pname}"
            results.append(CheckResult(name, rel_error(next(grads), numeric), tol, kinks))
    numeric, kinks = _kink_aware_difference(lambda fr: _run(layers, 0, x, labels, fr), x, full_pattern, h)
    results.append(CheckResult("input", rel_error(grad_in, numeric), tol, kinks))
    return results


def _projected(forward, out_shape, rng):
    proj = rng.normal(size=out_shape)
    return proj, lambda: float((forward() * proj).sum())


def check_layers(seed=0, h=STEP, tol=LAYER_TOL):
    """Single-layer checks for each layer kind on small random instances."""
    rng = np.random.default_rng(seed)
    results = []

    x = rng.normal(size=(2, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out, cache = L.conv2d_forward(x, w, b, 1, 1)
    proj, f = _projected(lambda: L.conv2d_forward(x, w, b, 1, 1)[0], out.shape, rng)
    gi, gw, gb = L.conv2d_backward(proj, cache, w, 1, 1)
    for name, ga, arr in (("input", gi, x), ("weight", gw, w), ("bias", gb, b)):
        results.append(CheckResult(f"conv2d.{name}", rel_error(ga, central_difference(f, arr, h)), tol))

    x = rng.normal(size=(2, 3, 4, 4))
    x[np.abs(x) < 1e-2] = 0.5
    _, mask = L.relu_forward(x)
    proj, f = _projected(lambda: L.relu_forward(x)[0], x.shape, rng)
    results.append(CheckResult("relu.input", rel_error(L.relu_backward(proj, mask), central_difference(f, x, h)), tol))

    x = rng.permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) * 0.01
    out, cache = L.maxpool_forward(x, 2, 2, 2)
    proj, f = _projected(lambda: L.maxpool_forward(x, 2, 2, 2)[0], out.shape, rng)
    results.append(
        CheckResult("maxpool2d.input", rel_error(L.maxpool_backward(proj, cache, 2, 2, 2), central_difference(f, x, h)), tol)
    )

    x = rng.normal(size=(3, 7))
    w = rng.normal(size=(4, 7))
    b = rng.normal(size=4)
    out, cache = L.fc_forward(x, w, b)
    proj, f = _projected(lambda: L.fc_forward(x, w, b)[0], out.shape, rng)
    gi, gw, gb = L.fc_backward(proj, cache, w)
    for name, ga, arr in (("input", gi, x), ("weight", gw, w), ("bias", gb, b)):
        results.append(CheckResult(f"fc.{name}", rel_error(ga, central_difference(f, arr, h)), tol))

    logits = rng.normal(size=(4, 3))
    labels = rng.integers(0, 3, size=4)
    _, _, g = L.softmax_xent(logits, labels)
    results.append(
        CheckResult("softmax_xent.logits", rel_error(g, central_difference(lambda: L.softmax_xent(logits, labels)[0], logits, h)), tol)
    )
    return results


def miniature_bccnn(side=8):
    """The canonical trunk and BCCNN head on a ``side x side`` input."""
    return NetworkSpec(
        conv_stack() + [L.FullyConnected(2), L.SoftmaxClassifier()],
        (1, side, side),
        name=f"bccnn_{side}x{side}",
    )


def run_all(seed=0, sizes=(8, 28), batch=4):
    """Layer checks plus whole-network checks of the BCCNN stack at each input size."""
    results = check_layers(seed)
    rng = np.random.default_rng(seed + 1)
    for side in sizes:
        spec = bccnn_spec() if side == 28 else miniature_bccnn(side)
        net = Network.from_spec(spec, seed=seed)
        for p in net.parameters():
            if p.ndim == 1:
                p[...] = rng.normal(scale=0.1, size=p.shape)
        x = rng.uniform(size=(batch, 1, side, side))
        labels = rng.integers(0, 2, size=batch)
        for r in check_network(net, x, labels):
            r.name = f"{spec.name}.{r.name}"
            results.append(r)
    return results
