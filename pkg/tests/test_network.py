import struct

import numpy as np
import pytest

from ovacnn import layers as L
from ovacnn.errors import FormatError, ShapeError
from ovacnn.gradcheck import NETWORK_TOL, check_network, miniature_bccnn
from ovacnn.network import (
    MAGIC,
    Network,
    NetworkSpec,
    architecture,
    bccnn_modified_spec,
    bccnn_spec,
    mcnn_spec,
)


def test_canonical_shape_trace():
    trace = mcnn_spec().shape_trace()
    spatial = [s[1] for s in trace[:9]]
    assert spatial == [28, 28, 28, 14, 14, 14, 7, 7, 7]
    # distinct spatial extents in order
    assert [k for i, k in enumerate(spatial) if i == 0 or k != spatial[i - 1]] == [28, 14, 7]
    assert trace[8] == (32, 7, 7)
    assert trace[-1] == (10,)


@pytest.mark.parametrize(
    "spec,width", [(mcnn_spec(), 10), (bccnn_spec(), 2), (bccnn_modified_spec(), 2)]
)
def test_heads_map_digits_to_classes(spec, width, rng):
    net = Network.from_spec(spec, seed=0)
    out = net.forward(rng.uniform(size=(3, 1, 28, 28)))
    assert out.shape == (3, width)
    assert net.n_classes == width


def test_variants_share_trunk():
    a, b, c = mcnn_spec().layers, bccnn_spec().layers, bccnn_modified_spec().layers
    assert a[:8] == b[:8] == c[:8]
    assert c[8:] == (L.FullyConnected(8), L.FullyConnected(2), L.SoftmaxClassifier())


def test_head_only_network_is_fc_softmax(rng):
    spec = NetworkSpec([L.FullyConnected(3), L.SoftmaxClassifier()], (1, 4, 4))
    net = Network.from_spec(spec, seed=1)
    x = rng.uniform(size=(2, 1, 4, 4))
    fc = net.layers[0]
    expected = x.reshape(2, 16) @ fc.weight.T + fc.bias
    np.testing.assert_allclose(net.forward(x), expected, atol=1e-14)


def test_spec_validation():
    with pytest.raises(ShapeError):
        NetworkSpec([L.FullyConnected(2)])
    with pytest.raises(ShapeError):
        NetworkSpec([L.SoftmaxClassifier(), L.FullyConnected(2), L.SoftmaxClassifier()])
    bad = NetworkSpec([L.Conv2D(4, 5, 5), L.MaxPool2D(2, 2, 2), L.FullyConnected(2), L.SoftmaxClassifier()], (1, 4, 4))
    with pytest.raises(ShapeError, match="layer 0"):
        bad.shape_trace()
    with pytest.raises(ValueError):
        architecture("resnet")


def test_forward_rejects_wrong_input():
    net = Network.from_spec(bccnn_spec(), seed=0)
    with pytest.raises(ShapeError):
        net.forward(np.zeros((1, 1, 27, 28)))


def test_infer_forward_is_pure(rng):
    net = Network.from_spec(mcnn_spec(), seed=3)
    x = rng.uniform(size=(4, 1, 28, 28))
    a = net.forward(x)
    b = net.forward(x)
    assert np.array_equal(a, b)
    assert all(layer.cache is None for layer in net.layers)


def test_cache_only_after_training_forward(rng):
    net = Network.from_spec(bccnn_spec(), seed=3)
    net.forward(rng.uniform(size=(2, 1, 28, 28)), train=True)
    assert all(layer.cache is not None for layer in net.layers if layer.params)


def test_he_uniform_init_bounds_and_determinism():
    a = Network.from_spec(mcnn_spec(), seed=11)
    b = Network.from_spec(mcnn_spec(), seed=11)
    c = Network.from_spec(mcnn_spec(), seed=12)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa, pb)
    assert not np.array_equal(a.parameters()[0], c.parameters()[0])
    for layer in a.layers:
        if layer.params:
            limit = np.sqrt(6.0 / layer.fan_in)
            assert np.abs(layer.weight).max() <= limit
            assert not layer.bias.any()


def test_backward_gives_one_gradient_per_parameter(rng):
    net = Network.from_spec(bccnn_modified_spec(), seed=0)
    x = rng.uniform(size=(2, 1, 28, 28))
    _, _, g = L.softmax_xent(net.forward(x, train=True), [0, 1])
    grads, grad_in = net.backward(g)
    assert [gg.shape for gg in grads] == [p.shape for p in net.parameters()]
    assert grad_in.shape == x.shape


def test_miniature_network_gradcheck(rng):
    net = Network.from_spec(miniature_bccnn(8), seed=5)
    for p in net.parameters():
        if p.ndim == 1:
            p[...] = rng.normal(scale=0.1, size=p.shape)
    x = rng.uniform(size=(4, 1, 8, 8))
    results = check_network(net, x, [0, 1, 1, 0])
    worst = max(r.max_rel_error for r in results)
    assert worst < NETWORK_TOL, [(r.name, r.max_rel_error) for r in results]


def test_serialization_round_trip(tmp_path, rng):
    net = Network.from_spec(bccnn_modified_spec(), seed=9)
    path = tmp_path / "m.ovanet"
    net.save(path)
    data = path.read_bytes()
    assert data.startswith(MAGIC)
    back = Network.load(path)
    assert back.spec == net.spec
    assert back.to_bytes() == data
    x = rng.uniform(size=(2, 1, 28, 28))
    assert np.array_equal(back.forward(x), net.forward(x))


def test_serialization_reproducible_for_fixed_seed():
    assert Network.from_spec(mcnn_spec(), seed=4).to_bytes() == Network.from_spec(mcnn_spec(), seed=4).to_bytes()


def test_serialization_layout():
    spec = NetworkSpec([L.FullyConnected(1), L.SoftmaxClassifier()], (1, 1, 2))
    net = Network(spec)
    net.layers[0].weight[...] = [[1.5, -2.0]]
    expected = (
        b"OVANET1"
        + struct.pack("<I3I", 3, 1, 1, 2)
        + struct.pack("<I", 6) + b"custom"
        + struct.pack("<I", 2)
        + struct.pack("<BIi", 4, 1, 1)
        + struct.pack("<I", 2)
        + struct.pack("<I2I2d", 2, 1, 2, 1.5, -2.0)
        + struct.pack("<I1Id", 1, 1, 0.0)
        + struct.pack("<BI", 5, 0)
        + struct.pack("<I", 0)
    )
    assert net.to_bytes() == expected


def test_load_rejects_corruption(tmp_path):
    data = Network.from_spec(bccnn_spec(), seed=0).to_bytes()
    with pytest.raises(FormatError, match="magic"):
        Network.from_bytes(b"NOTANET" + data[7:])
    with pytest.raises(FormatError, match="truncated"):
        Network.from_bytes(data[:-5])
    with pytest.raises(FormatError, match="trailing"):
        Network.from_bytes(data + b"\x00")
