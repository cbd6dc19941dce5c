import hashlib
import os
import struct

import numpy as np
import pytest

from hurdle_imdl import network
from hurdle_imdl.errors import (CheckpointError, DivergenceError, DomainError,
                                StaleActivationError, VersionMismatchError)
from hurdle_imdl.hurdle_dist import MarginalPrior
from hurdle_imdl.losses import HurdleObjective, MSEObjective, WeightScheme

DATA = os.path.join(os.path.dirname(__file__), "data")
PRIOR = MarginalPrior(0.46, 1.28, 0.217)


def small_problem(n, seed):
    rng = np.random.default_rng(seed)
    y = np.where(rng.random(n) < 0.25, 0.0, np.exp(rng.normal(0.46, 1.28, n)))
    x = np.stack([-10 * np.log1p(y) + rng.normal(0, 3, n), rng.normal(size=n)], axis=1)
    return x, y


def tiny_net(seed=0, heads="joint"):
    return network.MLP(network.NetConfig(2, (8, 6), seed=seed, heads=heads))


def test_config_validation():
    with pytest.raises(DomainError):
        network.NetConfig(0)
    with pytest.raises(DomainError):
        network.NetConfig(2, heads="triple")
    with pytest.raises(DomainError):
        network.TrainConfig(max_epochs=3, patience=4)
    with pytest.raises(DomainError):
        network.TrainConfig(learning_rate=0.0)
    with pytest.raises(DomainError):
        network.TrainConfig(sigma=1e-4)
    assert network.NetConfig(3, heads="joint").n_outputs == 2
    assert network.NetConfig(3, heads="p_only").n_outputs == 1


def test_zero_network_gives_half_and_zero():
    net = tiny_net()
    net.params = [np.zeros_like(p) for p in net.params]
    p, mu = network.heads(net, net.forward(np.ones((4, 2))))
    np.testing.assert_array_equal(p, 0.5)
    np.testing.assert_array_equal(mu, 0.0)


def test_forward_deterministic_and_rowwise(rng):
    x = rng.normal(size=(16, 2))
    a = tiny_net(3).forward(x)
    b = tiny_net(3).forward(x)
    np.testing.assert_array_equal(a, b)
    net = tiny_net(3)
    rows = np.vstack([net.forward(x[i:i + 1]) for i in range(16)])
    np.testing.assert_allclose(rows, a, rtol=1e-14, atol=1e-15)


def test_forward_dimension_mismatch():
    with pytest.raises(DomainError):
        tiny_net().forward(np.ones((3, 5)))


def test_sigmoid_range_and_stability():
    z = np.array([-1000.0, -30.0, 0.0, 30.0, 1000.0])
    s = network.sigmoid(z)
    assert np.all(np.isfinite(s)) and s[2] == 0.5
    assert np.all((s >= 0) & (s <= 1))
    mid = network.sigmoid(np.linspace(-30, 30, 101))
    assert np.all((mid > 0) & (mid < 1))


def test_backward_zero_and_linearity(rng):
    net = tiny_net(1)
    x = rng.normal(size=(10, 2))
    net.forward(x)
    zero = net.backward(x, np.zeros((10, 2)))
    assert all(np.all(g == 0) for g in zero)
    g = rng.normal(size=(10, 2))
    one = net.backward(x, g)
    two = net.backward(x, 2 * g)
    for a, b in zip(one, two):
        np.testing.assert_array_equal(2 * a, b)


def test_backward_requires_matching_forward(rng):
    net = tiny_net()
    x = rng.normal(size=(4, 2))
    with pytest.raises(StaleActivationError):
        net.backward(x, np.zeros((4, 2)))
    net.forward(x)
    with pytest.raises(StaleActivationError):
        net.backward(x + 1, np.zeros((4, 2)))
    with pytest.raises(DomainError):
        net.backward(x, np.zeros((4, 1)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_backward_matches_finite_differences(seed):
    x, y = small_problem(40, seed)
    mean, std = network.fit_normalizer(x)
    x = (x - mean) / std
    net = tiny_net(seed)
    assert 80 <= net.n_params <= 120
    # nonzero biases keep every pre-activation away from the ReLU kink
    brng = np.random.default_rng(100 + seed)
    for b in net.params[1::2]:
        b += brng.uniform(0.05, 0.3, b.shape) * brng.choice([-1, 1], b.shape)
    net.forward(x)
    assert all(np.min(np.abs(z)) > 1e-4 for z in net._cache[2])
    obj = HurdleObjective(PRIOR, 0.5)

    def loss():
        return obj(net.forward(x), y)[0]

    _, g_out = obj(net.forward(x), y)
    grads = net.backward(x, g_out)
    h = 1e-6
    for p, g in zip(net.params, grads):
        flat, gflat = p.ravel(), g.ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            fd = (up - down) / (2 * h)
            assert abs(fd - gflat[i]) <= 1e-3 * max(abs(fd), abs(gflat[i])) + 1e-8


def test_adam_first_step_is_signed_lr():
    p = [np.array([1.0, -2.0, 3.0])]
    opt = network.Adam(p, lr=0.1)
    opt.step(p, [np.array([0.5, -4.0, 0.0])])
    np.testing.assert_allclose(p[0], [0.9, -1.9, 3.0], atol=1e-8)


def test_train_is_deterministic():
    x, y = small_problem(600, 5)
    cfg = network.TrainConfig(batch_size=64, max_epochs=4, patience=2)
    a = network.train(tiny_net(4), (x[:400], y[:400]), (x[400:], y[400:]), cfg,
                      HurdleObjective(PRIOR, 0.5))
    b = network.train(tiny_net(4), (x[:400], y[:400]), (x[400:], y[400:]), cfg,
                      HurdleObjective(PRIOR, 0.5))
    assert a == b
    c = network.train(tiny_net(5), (x[:400], y[:400]), (x[400:], y[400:]), cfg,
                      HurdleObjective(PRIOR, 0.5))
    assert a != c


def test_patience_zero_stops_after_first_non_improvement():
    x, y = small_problem(600, 6)
    cfg = network.TrainConfig(batch_size=32, max_epochs=50, patience=0, learning_rate=5e-2)
    ck = network.train(tiny_net(0), (x[:400], y[:400]), (x[400:], y[400:]), cfg,
                       HurdleObjective(PRIOR, 0.5))
    flags = [h["improved"] for h in ck.history]
    assert flags[-1] is False and all(flags[:-1])
    assert ck.meta["best_epoch"] == len(flags) - 1


def test_early_stopping_returns_best():
    x, y = small_problem(600, 7)
    cfg = network.TrainConfig(batch_size=32, max_epochs=12, patience=3, learning_rate=3e-2)
    ck = network.train(tiny_net(0), (x[:400], y[:400]), (x[400:], y[400:]), cfg,
                       HurdleObjective(PRIOR, 0.5))
    best = min(h["val_loss"] for h in ck.history)
    assert ck.meta["best_val_loss"] == best
    obj = HurdleObjective(PRIOR, 0.5)
    assert obj.evaluate(ck.outputs(x[400:]), y[400:]) == pytest.approx(best, rel=1e-12)


def test_all_dry_training_drives_p_to_one():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(512, 2))
    y = np.zeros(512)
    cfg = network.TrainConfig(batch_size=128, max_epochs=60, patience=60, learning_rate=5e-2)
    ck = network.train(tiny_net(0), (x, y), (x, y), cfg, HurdleObjective(PRIOR, 0.5))
    p, _ = network.heads("joint", ck.outputs(x))
    assert p.min() > 0.99
    assert ck.meta["best_val_loss"] < 1e-2


class _Exploding:
    n_outputs = 2

    def __call__(self, outputs, labels):
        return float("nan"), np.zeros_like(outputs)

    def per_sample(self, outputs, labels):
        return (np.zeros(len(labels)),)


def test_divergence_reports_epoch_and_batch():
    x, y = small_problem(100, 9)
    with pytest.raises(DivergenceError) as info:
        network.train(tiny_net(), (x, y), (x, y), network.TrainConfig(max_epochs=2, patience=1),
                      _Exploding())
    assert info.value.epoch == 1 and info.value.batch == 0


def test_train_rejects_head_mismatch_and_empty_sets():
    x, y = small_problem(50, 1)
    with pytest.raises(DomainError):
        network.train(tiny_net(heads="mu_only"), (x, y), (x, y), network.TrainConfig(),
                      HurdleObjective(PRIOR, 0.5))
    with pytest.raises(DomainError):
        network.train(tiny_net(), (x[:0], y[:0]), (x, y), network.TrainConfig(),
                      HurdleObjective(PRIOR, 0.5))


def test_mse_baseline_trains():
    x, y = small_problem(800, 10)
    s = WeightScheme("nwmse").fit(y[:600])
    ck = network.train(tiny_net(0, "mu_only"), (x[:600], y[:600]), (x[600:], y[600:]),
                       network.TrainConfig(batch_size=64, max_epochs=5, patience=5),
                       MSEObjective(s))
    assert ck.history[-1]["val_loss"] < ck.history[0]["val_loss"] * 1.5
    assert ck.meta["objective"]["objective"] == "mse"


def test_normalization_statistics_reproduce_training_inputs():
    x, y = small_problem(300, 11)
    ck = network.train(tiny_net(), (x, y), (x, y), network.TrainConfig(max_epochs=1, patience=0),
                       HurdleObjective(PRIOR, 0.5))
    mean, std = network.fit_normalizer(x)
    np.testing.assert_array_equal(ck.normalize(x), (x - mean) / std)


def test_two_model_training():
    x, y = small_problem(600, 12)
    cfg = network.TrainConfig(batch_size=64, max_epochs=3, patience=3)
    seen = []

    ck_p, ck_mu = network.two_model_train(tiny_net(0, "p_only"), tiny_net(1, "mu_only"),
                                          (x[:400], y[:400]), (x[400:], y[400:]), cfg, PRIOR,
                                          log=seen.append)
    assert ck_p.meta["objective"]["parts"] == "p"
    assert ck_mu.meta["objective"]["parts"] == "mu"
    assert ck_p.net_config.heads == "p_only" and ck_mu.net_config.heads == "mu_only"
    assert len(seen) == len(ck_p.history) + len(ck_mu.history)
    joint = network.train(tiny_net(0), (x[:400], y[:400]), (x[400:], y[400:]), cfg,
                          HurdleObjective(PRIOR, 0.5))
    assert joint != ck_p and joint != ck_mu
    with pytest.raises(DomainError):
        network.two_model_train(tiny_net(0), tiny_net(1, "mu_only"), (x, y), (x, y), cfg, PRIOR)


def test_two_model_mu_net_sees_only_wet_samples(monkeypatch):
    x, y = small_problem(300, 13)
    calls = []
    real = network.train

    def spy(net, train_set, val_set, config, objective, log=None):
        calls.append((objective.parts, train_set[1], val_set[1]))
        return real(net, train_set, val_set, config, objective, log)

    monkeypatch.setattr(network, "train", spy)
    network.two_model_train(tiny_net(0, "p_only"), tiny_net(1, "mu_only"), (x, y), (x, y),
                            network.TrainConfig(max_epochs=1, patience=0), PRIOR)
    (pp, ptr, _), (mp, mtr, mva) = calls
    assert pp == "p" and np.any(ptr == 0)
    assert mp == "mu" and np.all(mtr > 0) and np.all(mva > 0)
    assert mtr.size == np.sum(y > 0)


def _trained(tmp_path):
    x, y = small_problem(200, 14)
    ck = network.train(tiny_net(2), (x, y), (x, y), network.TrainConfig(max_epochs=2, patience=1),
                       HurdleObjective(PRIOR, 0.5))
    path = tmp_path / "c.ckpt"
    network.save(ck, path)
    return ck, path


def test_checkpoint_round_trip(tmp_path):
    ck, path = _trained(tmp_path)
    back = network.load(path)
    assert back == ck
    network.save(back, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_corruption_detected(tmp_path):
    _, path = _trained(tmp_path)
    blob = bytearray(path.read_bytes())
    bad_magic = tmp_path / "magic.ckpt"
    bad_magic.write_bytes(b"XXXXXXXX" + bytes(blob[8:]))
    with pytest.raises(CheckpointError):
        network.load(bad_magic)
    flipped = bytearray(blob)
    flipped[-3] ^= 0xFF
    bad_payload = tmp_path / "payload.ckpt"
    bad_payload.write_bytes(bytes(flipped))
    with pytest.raises(CheckpointError):
        network.load(bad_payload)
    truncated = tmp_path / "short.ckpt"
    truncated.write_bytes(bytes(blob[:-8]))
    with pytest.raises(CheckpointError):
        network.load(truncated)


def test_checkpoint_version_mismatch(tmp_path):
    _, path = _trained(tmp_path)
    blob = bytearray(path.read_bytes())
    blob[8:12] = struct.pack("<I", 99)
    future = tmp_path / "future.ckpt"
    future.write_bytes(bytes(blob))
    with pytest.raises(VersionMismatchError):
        network.load(future)


def test_committed_fixture_loads_with_identical_weights():
    path = os.path.join(DATA, "mlp_2x8x6_seed7.ckpt")
    ck = network.load(path)
    fresh = network.MLP(network.NetConfig(2, (8, 6), seed=7, heads="joint"))
    assert len(ck.params) == len(fresh.params)
    for a, b in zip(ck.params, fresh.params):
        assert a.tobytes() == b.tobytes()
    np.testing.assert_array_equal(ck.norm_mean, [0.5, -1.0])
    np.testing.assert_array_equal(ck.norm_std, [2.0, 3.0])
    assert ck.meta == {"fixture": True}
    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    assert digest == "ec6b778dd3b34dc7bb615f5561a8ee29ff0e7da96f3e8beb4645ccbac02930d2"
