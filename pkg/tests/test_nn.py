"""Neural kernel: forward oracles, gradient checks, training behavior."""

import numpy as np
import pytest

from weldwatch import nn


def tiny_classifier(seed=0, D=3, H=3):
    spec = nn.ClassifierSpec(input_dim=D, hidden=H)
    return spec, nn.init_classifier(spec, seed=seed)


# ---------------------------------------------------------------------------
# dense / lstm primitives


def test_dense_zero_and_identity():
    x = np.array([0.3, -0.7])
    assert np.allclose(nn.dense_forward(np.zeros((2, 2)), np.zeros(2), x, "tanh"), 0.0)
    assert np.allclose(nn.dense_forward(np.eye(2), np.zeros(2), x, "linear"), x)


def test_dense_hand_example():
    W = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([1.0, 1.0])
    out = nn.dense_forward(W, b, np.array([1.0, 1.0]), "linear")
    assert np.allclose(out, [4.0, 8.0])


def test_dense_shape_mismatch():
    with pytest.raises(nn.ShapeMismatch):
        nn.dense_forward(np.zeros((2, 3)), np.zeros(2), np.zeros(2))


def test_lstm_zero_params_fixed_point():
    H = 4
    h, c = nn.lstm_step(np.zeros((4 * H, 2)), np.zeros((4 * H, H)), np.zeros(4 * H),
                        np.array([5.0, -3.0]), np.zeros(H), np.zeros(H))
    assert np.all(h == 0.0) and np.all(c == 0.0)


def test_lstm_saturated_forget_gate_keeps_cell():
    H = 2
    b = np.zeros(4 * H)
    b[H:2 * H] = 50.0  # forget gate saturates to 1
    c_prev = np.array([0.7, -1.2])
    _, c = nn.lstm_step(np.zeros((4 * H, 1)), np.zeros((4 * H, H)), b,
                        np.array([1.0]), np.zeros(H), c_prev)
    assert np.allclose(c, c_prev, atol=1e-12)


def test_lstm_scalar_oracle():
    """Vectorized step equals an independent scalar-by-scalar recomputation."""
    rng = np.random.Generator(np.random.PCG64(7))
    H, D = 3, 2
    Wx = rng.normal(size=(4 * H, D))
    Wh = rng.normal(size=(4 * H, H))
    b = rng.normal(size=4 * H)
    x = rng.normal(size=D)
    h_prev = rng.normal(size=H)
    c_prev = rng.normal(size=H)

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    h_ref = np.zeros(H)
    c_ref = np.zeros(H)
    for u in range(H):
        zi = sum(Wx[u, j] * x[j] for j in range(D)) + sum(Wh[u, j] * h_prev[j] for j in range(H)) + b[u]
        zf = sum(Wx[H + u, j] * x[j] for j in range(D)) + sum(Wh[H + u, j] * h_prev[j] for j in range(H)) + b[H + u]
        zg = sum(Wx[2 * H + u, j] * x[j] for j in range(D)) + sum(Wh[2 * H + u, j] * h_prev[j] for j in range(H)) + b[2 * H + u]
        zo = sum(Wx[3 * H + u, j] * x[j] for j in range(D)) + sum(Wh[3 * H + u, j] * h_prev[j] for j in range(H)) + b[3 * H + u]
        c_ref[u] = sig(zf) * c_prev[u] + sig(zi) * np.tanh(zg)
        h_ref[u] = sig(zo) * np.tanh(c_ref[u])
    h, c = nn.lstm_step(Wx, Wh, b, x, h_prev, c_prev)
    assert np.allclose(h, h_ref, atol=1e-12)
    assert np.allclose(c, c_ref, atol=1e-12)


# ---------------------------------------------------------------------------
# classifier forward


def test_classifier_zero_params():
    spec, params = tiny_classifier()
    params = nn.zeros_like_params(params)
    logits = nn.classifier_forward(params, np.ones((2, 5, 3)))
    assert np.allclose(logits, 0.0)
    assert np.allclose(nn.softmax(logits), 0.5)


def test_softmax_normalization():
    rng = np.random.Generator(np.random.PCG64(0))
    p = nn.softmax(rng.normal(scale=5.0, size=(50, 2)))
    assert np.all(p > 0) and np.all(p < 1)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_classifier_step_by_step_oracle():
    spec, params = tiny_classifier(seed=3)
    rng = np.random.Generator(np.random.PCG64(4))
    X = rng.normal(size=(5, spec.input_dim))
    h = np.zeros(spec.hidden)
    c = np.zeros(spec.hidden)
    for t in range(5):
        h, c = nn.lstm_step(params["lstm.Wx"], params["lstm.Wh"], params["lstm.b"],
                            X[t], h, c)
    ref = h @ params["head.W"].T + params["head.b"]
    got = nn.classifier_forward(params, X[None])[0]
    assert np.allclose(got, ref, atol=1e-10)


def test_classifier_input_dim_mismatch():
    _, params = tiny_classifier()
    with pytest.raises(nn.ShapeMismatch):
        nn.classifier_forward(params, np.ones((1, 4, 5)))


# ---------------------------------------------------------------------------
# gradients


def test_autoencoder_grad_check():
    spec = nn.AutoencoderSpec(input_dim=6, bottleneck=2, hidden=4)
    params = nn.init_autoencoder(spec, seed=1)
    rng = np.random.Generator(np.random.PCG64(2))
    x = rng.normal(size=(4, 6))
    report = nn.grad_check(lambda p: nn.autoencoder_loss_and_grads(p, x), params)
    assert report.passed, report


def test_classifier_grad_check():
    spec, params = tiny_classifier(seed=5)
    rng = np.random.Generator(np.random.PCG64(6))
    X = rng.normal(size=(3, 5, spec.input_dim))
    y = np.array([0, 1, 0])
    report = nn.grad_check(lambda p: nn.classifier_loss_and_grads(p, X, y), params)
    assert report.passed, report


def test_grad_check_catches_corruption():
    spec = nn.AutoencoderSpec(input_dim=4, bottleneck=2, hidden=3)
    params = nn.init_autoencoder(spec, seed=0)
    x = np.random.Generator(np.random.PCG64(0)).normal(size=(2, 4))

    def corrupted(p):
        loss, g = nn.autoencoder_loss_and_grads(p, x)
        g["enc1.W"] = g["enc1.W"] * 2.0
        return loss, g

    assert not nn.grad_check(corrupted, params).passed


def test_grad_check_refuses_large_models():
    spec = nn.AutoencoderSpec(input_dim=64, bottleneck=8, hidden=64)
    params = nn.init_autoencoder(spec, seed=0)
    with pytest.raises(ValueError):
        nn.grad_check(lambda p: nn.autoencoder_loss_and_grads(p, np.ones((1, 64))), params)


def test_mean_reduction_batch_invariance():
    spec, params = tiny_classifier(seed=8)
    rng = np.random.Generator(np.random.PCG64(9))
    X = rng.normal(size=(3, 4, spec.input_dim))
    y = np.array([0, 1, 1])
    l1, g1 = nn.classifier_loss_and_grads(params, X, y)
    l2, g2 = nn.classifier_loss_and_grads(params, np.tile(X, (2, 1, 1)),
                                          np.tile(y, 2))
    assert l1 == pytest.approx(l2)
    for k in g1:
        assert np.allclose(g1[k], g2[k], atol=1e-12)


# ---------------------------------------------------------------------------
# training


def test_zero_lr_is_noop():
    spec = nn.AutoencoderSpec(input_dim=6, bottleneck=2, hidden=4)
    params = nn.init_autoencoder(spec, seed=0)
    before = nn.copy_params(params)
    nn.train_autoencoder(params, np.ones((8, 6)),
                         nn.TrainConfig(lr=0.0, epochs=3, seed=0))
    for k in params:
        assert np.array_equal(params[k], before[k])


def test_training_determinism():
    spec = nn.AutoencoderSpec(input_dim=6, bottleneck=2, hidden=4)
    x = np.random.Generator(np.random.PCG64(3)).normal(size=(32, 6))
    cfg = nn.TrainConfig(epochs=5, seed=42)
    p1 = nn.init_autoencoder(spec, seed=1)
    h1 = nn.train_autoencoder(p1, x, cfg)
    p2 = nn.init_autoencoder(spec, seed=1)
    h2 = nn.train_autoencoder(p2, x, cfg)
    assert h1 == h2
    for k in p1:
        assert np.array_equal(p1[k], p2[k])


def test_autoencoder_learns_on_synthetic_windows():
    rng = np.random.Generator(np.random.PCG64(0))
    t = np.linspace(0, 1, 32)
    x = np.stack([np.sin(2 * np.pi * (2 + rng.random() * 2) * t) for _ in range(200)])
    spec = nn.AutoencoderSpec(input_dim=32, bottleneck=4, hidden=24)
    params = nn.init_autoencoder(spec, seed=0)
    initial, _ = nn.autoencoder_loss_and_grads(params, x)
    nn.train_autoencoder(params, x, nn.TrainConfig(epochs=10, lr=1e-2, batch_size=32, seed=0))
    final, _ = nn.autoencoder_loss_and_grads(params, x)
    assert final <= initial / 5


def test_autoencoder_capacity_on_low_rank_data():
    """Data on a d-dim subspace is reconstructed near-exactly with bottleneck d."""
    rng = np.random.Generator(np.random.PCG64(1))
    z = rng.normal(size=(10, 3)) * 0.1
    A = rng.normal(size=(3, 6))
    x = z @ A
    spec = nn.AutoencoderSpec(input_dim=6, bottleneck=3, hidden=16)
    params = nn.init_autoencoder(spec, seed=0)
    cfg = nn.TrainConfig(epochs=2000, lr=1e-2, batch_size=10, seed=0)
    nn.train_autoencoder(params, x, cfg)
    loss, _ = nn.autoencoder_loss_and_grads(params, x)
    assert loss < 1e-6


def test_empty_dataset_rejected():
    spec = nn.AutoencoderSpec(input_dim=4, bottleneck=2, hidden=3)
    params = nn.init_autoencoder(spec, seed=0)
    with pytest.raises(nn.EmptyDataset):
        nn.train_autoencoder(params, np.zeros((0, 4)), nn.TrainConfig())


def test_spec_validation():
    with pytest.raises(ValueError):
        nn.AutoencoderSpec(input_dim=4, bottleneck=4)
    with pytest.raises(ValueError):
        nn.TrainConfig(lr=-1.0)


# ---------------------------------------------------------------------------
# scaler / encoder


def test_channel_scaler_round_trip():
    rng = np.random.Generator(np.random.PCG64(2))
    w = rng.normal(loc=[[100.0], [30.0]], scale=[[20.0], [3.0]], size=(50, 2, 16))
    sc = nn.ChannelScaler.fit(w)
    z = sc.transform(w)
    assert abs(z[:, 0].mean()) < 1e-9 and abs(z[:, 0].std() - 1.0) < 1e-9
    back = nn.ChannelScaler.from_dict(sc.to_dict())
    assert np.array_equal(back.mean, sc.mean)


def test_encoder_shape_checks():
    spec = nn.AutoencoderSpec(input_dim=32, bottleneck=4, hidden=8)
    enc = nn.Encoder(nn.init_autoencoder(spec, seed=0), spec, nn.ChannelScaler.identity())
    out = enc(np.ones((2, 16)))
    assert out.shape == (4,)
    assert np.array_equal(out, enc(np.ones((2, 16))))  # deterministic
    with pytest.raises(nn.ShapeMismatch):
        enc(np.ones((2, 17)))


def test_encoder_continuity():
    spec = nn.AutoencoderSpec(input_dim=32, bottleneck=4, hidden=8)
    enc = nn.Encoder(nn.init_autoencoder(spec, seed=0), spec, nn.ChannelScaler.identity())
    w = np.random.Generator(np.random.PCG64(0)).normal(size=(2, 16))
    assert np.max(np.abs(enc(w) - enc(w + 1e-7))) < 1e-4
