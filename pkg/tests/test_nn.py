"""Q-network substrate: forward pass, exact gradients, replay, checkpoints."""

import numpy as np
import pytest

from axsched.nn import (
    CheckpointError,
    EmptyBufferError,
    ReplayBuffer,
    Transition,
    TwoBranchMlp,
    load_checkpoint,
    save_checkpoint,
)


def _random_net(rng, csi_dim=5, buf_dim=3, n_actions=4):
    return TwoBranchMlp.create(csi_dim, buf_dim, n_actions,
                               branch_hidden=(6,), fusion_hidden=(8, 5), rng=rng)


def _reference_forward(net, csi, buf):
    """Independent loop-based evaluation of the same parameters."""
    x = np.asarray(csi, dtype=float)
    for w, b in net.csi_layers:
        x = np.maximum(w @ x + b, 0.0)
    y = np.asarray(buf, dtype=float)
    for w, b in net.buf_layers:
        y = np.maximum(w @ y + b, 0.0)
    z = np.concatenate([x, y])
    for i, (w, b) in enumerate(net.fusion_layers):
        z = w @ z + b
        if i != len(net.fusion_layers) - 1:
            z = np.maximum(z, 0.0)
    return z


def test_zero_weights_give_zero_output():
    net = _random_net(np.random.default_rng(0))
    for p in net.parameters():
        p[:] = 0.0
    out = net.forward(np.ones(5), np.ones(3))
    np.testing.assert_array_equal(out, np.zeros(4))


def test_identity_construction_passes_input_through():
    # branches copy their (non-negative) inputs, fusion picks the csi slice
    net = TwoBranchMlp.create(3, 2, 3, branch_hidden=(3,), fusion_hidden=(5,), rng=1)
    for p in net.parameters():
        p[:] = 0.0
    net.csi_layers[0][0][:3, :3] = np.eye(3)
    net.buf_layers[0][0][:2, :2] = np.eye(2)
    net.fusion_layers[0][0][:3, :3] = np.eye(3) * 2  # hidden: doubles csi part
    net.fusion_layers[1][0][:3, :3] = np.eye(3) * 0.5
    csi = np.array([0.3, 0.0, 1.5])
    out = net.forward(csi, np.array([1.0, 2.0]))
    np.testing.assert_allclose(out, csi, rtol=1e-12)


def test_forward_matches_reference_implementation():
    rng = np.random.default_rng(2)
    for _ in range(20):
        net = _random_net(rng)
        csi = rng.standard_normal(5)
        buf = rng.standard_normal(3)
        np.testing.assert_allclose(net.forward(csi, buf), _reference_forward(net, csi, buf),
                                   rtol=1e-12)


def test_forward_is_pure():
    rng = np.random.default_rng(3)
    net = _random_net(rng)
    csi, buf = rng.standard_normal(5), rng.standard_normal(3)
    a = net.forward(csi, buf)
    b = net.forward(csi, buf)
    np.testing.assert_array_equal(a, b)


def test_forward_dim_mismatch_raises():
    net = _random_net(np.random.default_rng(4))
    with pytest.raises(ValueError):
        net.forward(np.ones(6), np.ones(3))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    eps = 1e-5
    for _ in range(10):
        net = _random_net(rng, csi_dim=4, buf_dim=2, n_actions=3)
        batch = 6
        csi = rng.standard_normal((batch, 4))
        buf = rng.standard_normal((batch, 2))
        actions = rng.integers(0, 3, batch)
        targets = rng.standard_normal(batch)

        def loss_fn():
            q = net.forward(csi, buf)
            picked = q[np.arange(batch), actions]
            return float(((picked - targets) ** 2).mean())

        loss, grads = net.flat_gradients(csi, buf, actions, targets)
        np.testing.assert_allclose(loss, loss_fn(), rtol=1e-12)
        for param, grad in zip(net.parameters(), grads):
            flat_p = param.ravel()
            flat_g = grad.ravel()
            idx = rng.integers(0, flat_p.size, size=min(6, flat_p.size))
            for i in idx:
                orig = flat_p[i]
                flat_p[i] = orig + eps
                up = loss_fn()
                flat_p[i] = orig - eps
                down = loss_fn()
                flat_p[i] = orig
                fd = (up - down) / (2 * eps)
                scale = max(abs(fd), abs(flat_g[i]), 1e-8)
                assert abs(fd - flat_g[i]) / scale < 1e-4


def test_sgd_zero_learning_rate_is_noop():
    rng = np.random.default_rng(6)
    net = _random_net(rng)
    before = [p.copy() for p in net.parameters()]
    net.sgd_step(rng.standard_normal((4, 5)), rng.standard_normal((4, 3)),
                 rng.integers(0, 4, 4), rng.standard_normal(4), learning_rate=0.0)
    for p, q in zip(net.parameters(), before):
        np.testing.assert_array_equal(p, q)


def test_sgd_descends_on_fixed_batch():
    rng = np.random.default_rng(7)
    net = _random_net(rng)
    csi = rng.standard_normal((8, 5))
    buf = rng.standard_normal((8, 3))
    actions = rng.integers(0, 4, 8)
    targets = rng.standard_normal(8)
    losses = [net.sgd_step(csi, buf, actions, targets, 1e-3) for _ in range(60)]
    for a, b in zip(losses, losses[1:]):
        assert b <= a + 1e-10
    assert losses[-1] < losses[0]


def test_replay_single_item():
    buf = ReplayBuffer(4)
    t = Transition((np.zeros(1), np.zeros(1), None), 0, 1.0, (np.zeros(1), np.zeros(1), None), False)
    buf.push(t)
    assert buf.sample(1, np.random.default_rng(0)) == [t]


def test_replay_fifo_eviction():
    buf = ReplayBuffer(3)
    items = [Transition(i, i, float(i), i, False) for i in range(4)]
    for t in items:
        buf.push(t)
    assert len(buf) == 3
    stored = {t.action for t in buf.sample(200, np.random.default_rng(1))}
    assert 0 not in stored
    assert stored == {1, 2, 3}


def test_replay_sampling_uniform():
    buf = ReplayBuffer(10)
    for i in range(10):
        buf.push(Transition(i, i, 0.0, i, False))
    rng = np.random.default_rng(2)
    n = 100_000
    counts = np.zeros(10)
    for t in buf.sample(n, rng):
        counts[t.action] += 1
    p = 1 / 10
    sigma = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(counts / n - p) < 4 * sigma)


def test_replay_empty_raises():
    with pytest.raises(EmptyBufferError):
        ReplayBuffer(2).sample(1, np.random.default_rng(0))


def test_replay_sampling_deterministic_per_rng():
    buf = ReplayBuffer(8)
    for i in range(8):
        buf.push(Transition(i, i, 0.0, i, False))
    a = [t.action for t in buf.sample(16, np.random.default_rng(9))]
    b = [t.action for t in buf.sample(16, np.random.default_rng(9))]
    assert a == b


def test_checkpoint_roundtrip_lossless(tmp_path):
    rng = np.random.default_rng(8)
    nets = {"master": _random_net(rng), "sub0": _random_net(rng, 2, 2, 5)}
    path = tmp_path / "nets.bin"
    save_checkpoint(path, nets)
    back = load_checkpoint(path)
    assert set(back) == {"master", "sub0"}
    for name in nets:
        for p, q in zip(nets[name].parameters(), back[name].parameters()):
            np.testing.assert_array_equal(p, q)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX" + b"\0" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    rng = np.random.default_rng(9)
    path = tmp_path / "trunc.bin"
    save_checkpoint(path, {"master": _random_net(rng)})
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
