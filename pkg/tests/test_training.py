import csv

import numpy as np
import pytest

from ovacnn.data import LabeledDataset
from ovacnn.errors import ConfigError, DataError
from ovacnn.network import Network, mcnn_spec
from ovacnn.optim import SgdmConfig
from ovacnn.training import TrainConfig, evaluate, run_streams, train

from synthetic import blocks


def fresh(seed=0):
    return Network.from_spec(mcnn_spec(), seed=run_streams(seed)[0])


@pytest.fixture(scope="module")
def tiny():
    return blocks(80, seed=1), blocks(40, seed=2)


@pytest.mark.parametrize("field", ["max_epochs", "batch_size", "validation_frequency", "validation_patience"])
def test_nonpositive_config_rejected(field):
    with pytest.raises(ConfigError):
        TrainConfig(**{field: 0})


def test_config_dict_round_trip():
    cfg = TrainConfig(batch_size=7, seed=3, sgdm=SgdmConfig(learn_rate=0.005))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_empty_validation_rejected(tiny):
    with pytest.raises(DataError):
        train(fresh(), tiny[0], None, TrainConfig())


def test_max_epochs_stop_when_patience_never_fires(tiny):
    tr, va = tiny
    cfg = TrainConfig(max_epochs=2, batch_size=40, validation_frequency=1, validation_patience=10**6)
    _, out = train(fresh(), tr, va, cfg)
    assert out.stop_reason == "max_epochs"
    assert out.epochs_run == 2
    assert out.iterations_run == 4


def test_final_short_batch_kept(tiny):
    tr, va = tiny
    cfg = TrainConfig(max_epochs=1, batch_size=30, validation_frequency=100)
    _, out = train(fresh(), tr, va, cfg)
    assert out.iterations_run == 3
    # Last iteration validated even though it is not a multiple of the frequency.
    assert out.loss_curve[-1][2] is not None
    assert out.best_iteration == 3


def test_every_sample_seen_once_per_epoch(tiny):
    tr, va = tiny
    net = fresh()
    orig_forward = net.forward
    batches = []

    def forward(x, train=False):
        if train:
            batches.append(x.copy())
        return orig_forward(x, train)

    net.forward = forward
    cfg = TrainConfig(max_epochs=2, batch_size=25, validation_frequency=1000)
    train(net, tr, va, cfg)
    # 80 samples at batch 25: 25, 25, 25, 5 per epoch.
    assert [len(b) for b in batches] == [25, 25, 25, 5] * 2
    for epoch in range(2):
        stacked = np.concatenate(batches[4 * epoch:4 * epoch + 4]).reshape(80, -1)
        want = tr.images.reshape(80, -1)
        # Each epoch is a permutation of the training set.
        order = np.lexsort(stacked.T[::-1])
        ref = np.lexsort(want.T[::-1])
        assert np.array_equal(stacked[order], want[ref])


def test_same_seed_same_result(tiny):
    tr, va = tiny
    cfg = TrainConfig(max_epochs=1, batch_size=20, validation_frequency=2, seed=5)
    a, oa = train(fresh(5), tr, va, cfg)
    b, ob = train(fresh(5), tr, va, cfg)
    assert a.to_bytes() == b.to_bytes()
    assert oa.loss_curve == ob.loss_curve
    c, _ = train(fresh(5), tr, va, TrainConfig(max_epochs=1, batch_size=20, validation_frequency=2, seed=6))
    assert c.to_bytes() != a.to_bytes()


def test_patience_bound_and_best_checkpoint_restored(tiny):
    tr, va = tiny
    # Scrambled validation labels: validation loss rises once training fits.
    va = LabeledDataset(va.images, np.roll(va.labels, 1))
    cfg = TrainConfig(max_epochs=50, batch_size=10, validation_frequency=2, validation_patience=3)
    net, out = train(fresh(), tr, va, cfg)
    assert out.stop_reason == "patience"
    assert out.iterations_run - out.best_iteration <= cfg.validation_frequency * cfg.validation_patience
    val_losses = [v for _, _, v in out.loss_curve if v is not None]
    assert out.best_validation_loss == min(val_losses)
    assert evaluate(net, va)[1] == pytest.approx(out.best_validation_loss, rel=0, abs=1e-12)


def test_loss_curve_csv(tmp_path, tiny):
    tr, va = tiny
    _, out = train(fresh(), tr, va, TrainConfig(max_epochs=1, batch_size=20, validation_frequency=2))
    path = tmp_path / "curve.csv"
    out.write_loss_curve(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["iteration", "train_loss", "val_loss"]
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4]
    assert [r[2] == "" for r in rows[1:]] == [True, False, True, False]
    assert float(rows[2][2]) == out.loss_curve[1][2]


def test_learns_separable_blocks():
    tr, va, te = blocks(300, seed=3), blocks(100, seed=4), blocks(100, seed=5)
    before = evaluate(fresh(), te)[1]
    net, _ = train(fresh(), tr, va, TrainConfig(max_epochs=3, batch_size=20, validation_frequency=5))
    acc, loss, _ = evaluate(net, te)
    assert loss < before
    assert acc > 0.9


class _Fixed:
    """Network stand-in that emits preset logits."""

    def __init__(self, logits):
        self.logits = logits
        self.n_classes = logits.shape[1]

    def forward(self, x, train=False):
        return self.logits[: len(x)]


def test_evaluate_accounting():
    labels = np.array([0, 1, 2, 2])
    ds = LabeledDataset(np.zeros((4, 1, 28, 28)), labels)
    logits = np.full((4, 10), -5.0)
    logits[[0, 1, 2, 3], [0, 1, 2, 9]] = 5.0
    acc, _, conf = evaluate(_Fixed(logits), ds, batch_size=500)
    assert acc == 0.75
    assert conf.sum() == 4 and conf[2, 9] == 1 and np.trace(conf) == 3
    logits[3, 9], logits[3, 2] = -5.0, 5.0
    assert evaluate(_Fixed(logits), ds)[0] == 1.0


def test_mnist_sanity_descent(mnist):
    tr = mnist.subset(np.arange(200))
    va = mnist.subset(np.arange(200, 300))
    initial = evaluate(fresh(7), tr)[1]
    cfg = TrainConfig(max_epochs=3, validation_frequency=5, validation_patience=10**6, seed=7)
    _, out = train(fresh(7), tr, va, cfg)
    # 200 samples at batch 40: iterations 11-15 form epoch 3.
    epoch3 = [tl for it, tl, _ in out.loss_curve if 11 <= it <= 15]
    assert len(epoch3) == 5
    assert np.mean(epoch3) < initial
