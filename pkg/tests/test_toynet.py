import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phased_dmd.toynet import (
    CKPT_MAGIC,
    AdamState,
    TimeConditionedNet,
    adam_step,
    grad_check,
    load_checkpoint,
    save_checkpoint,
    time_features,
)


def small_net(seed=0, **kw):
    kw.setdefault("hidden", 16)
    kw.setdefault("depth", 2)
    return TimeConditionedNet.create(rng=seed, **kw)


def batch(n=7, d=1, seed=1):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.uniform(size=n)


def test_default_layout():
    net = TimeConditionedNet.create(data_dim=1, rng=0)
    assert net.dims == [17, 256, 256, 256, 1]
    assert all(np.all(b == 0) for b in net.biases)


def test_time_features_shape_and_range():
    f = time_features(np.linspace(0, 1, 5), 16)
    assert f.shape == (5, 16)
    assert np.all(np.abs(f) <= 1)
    with pytest.raises(ValueError):
        time_features(np.zeros(2), 15)


def test_zero_weights_give_output_bias():
    net = small_net()
    for w in net.weights:
        w[...] = 0
    net.biases[-1][...] = 0.25
    x, t = batch()
    np.testing.assert_array_equal(net(x, t), np.full((7, 1), 0.25))


def test_forward_deterministic_and_finite():
    x, t = batch(200)
    a = small_net(3)(x, t)
    b = small_net(3)(x, t)
    np.testing.assert_array_equal(a, b)
    assert np.all(np.isfinite(a))


def test_shape_checks():
    net = small_net()
    with pytest.raises(ValueError):
        net(np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        net.backward(np.zeros((3, 1)), np.zeros(3), np.zeros((4, 1)))


def test_zero_upstream_zero_grads():
    net = small_net()
    x, t = batch()
    grads, dx = net.backward(x, t, np.zeros((7, 1)))
    assert all(np.all(g == 0) for g in grads)
    assert np.all(dx == 0)
    assert [g.shape for g in grads] == [p.shape for p in net.params]


def test_backward_linear_in_upstream():
    net = small_net(depth=3)
    x, t = batch()
    rng = np.random.default_rng(5)
    u1, u2 = rng.standard_normal((2, 7, 1))
    g1, d1 = net.backward(x, t, u1)
    g2, d2 = net.backward(x, t, u2)
    g12, d12 = net.backward(x, t, u1 + u2)
    for a, b, c in zip(g1, g2, g12):
        np.testing.assert_allclose(a + b, c, rtol=0, atol=1e-12)
    np.testing.assert_allclose(d1 + d2, d12, rtol=0, atol=1e-12)


@pytest.mark.parametrize("depth, hidden, d", [(1, 8, 1), (2, 16, 1), (3, 12, 2)])
def test_grad_check(depth, hidden, d):
    net = small_net(seed=depth, depth=depth, hidden=hidden, data_dim=d)
    x, t = batch(5, d)
    assert grad_check(net, x, t, n_coords=256) < 1e-5


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 3), st.integers(4, 24), st.integers(1, 2), st.integers(0, 2 ** 32 - 1))
def test_grad_check_property(depth, hidden, d, seed):
    net = TimeConditionedNet.create(data_dim=d, hidden=hidden, depth=depth, n_time_features=8, rng=seed)
    x, t = batch(4, d, seed=seed)
    assert grad_check(net, x, t, n_coords=200, rng=seed) < 1e-5


def test_float32_net_runs_in_float32():
    net = small_net(dtype=np.float32)
    x, t = batch()
    assert net(x, t).dtype == np.float32
    grads, dx = net.backward(x, t, np.ones((7, 1)))
    assert all(g.dtype == np.float32 for g in grads) and dx.dtype == np.float64
    np.testing.assert_allclose(net(x, t), net.astype(np.float64)(x, t), rtol=1e-4, atol=1e-5)


def test_adam_zero_grads_no_change():
    p = [np.array([1.0, -2.0])]
    st_ = AdamState.for_params(p)
    adam_step(st_, p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_hand_computed():
    p = [np.array([0.5])]
    st_ = AdamState.for_params(p, lr=1e-3, betas=(0.0, 0.999), eps=1e-8)
    adam_step(st_, p, [np.array([1.0])])
    # v_hat = 1, so the step is lr * 1 / (1 + eps)
    assert p[0][0] == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)
    adam_step(st_, p, [np.array([1.0])])
    assert p[0][0] == pytest.approx(0.5 - 2e-3, abs=1e-10)
    assert st_.step == 2


def test_adam_with_momentum_matches_reference():
    rng = np.random.default_rng(0)
    p = [rng.standard_normal(5)]
    ref = p[0].copy()
    st_ = AdamState.for_params(p, lr=1e-2, betas=(0.9, 0.99), eps=1e-8, weight_decay=0.1)
    m = np.zeros(5)
    v = np.zeros(5)
    for k in range(1, 6):
        g = rng.standard_normal(5)
        adam_step(st_, p, [g])
        ref *= 1 - 1e-2 * 0.1
        m = 0.9 * m + 0.1 * g
        v = 0.99 * v + 0.01 * g * g
        ref -= 1e-2 * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.99 ** k)) + 1e-8)
    np.testing.assert_allclose(p[0], ref, rtol=0, atol=1e-12)


def test_adam_decoupled_weight_decay():
    p = [np.array([2.0])]
    st_ = AdamState.for_params(p, lr=0.1, weight_decay=0.5)
    for _ in range(3):
        adam_step(st_, p, [np.zeros(1)])
    assert p[0][0] == pytest.approx(2.0 * (1 - 0.05) ** 3, abs=1e-14)


def test_adam_rejects_nan_and_leaves_params():
    p = [np.array([1.0, 2.0]), np.array([3.0])]
    st_ = AdamState.for_params(p)
    with pytest.raises(FloatingPointError, match="param 1"):
        adam_step(st_, p, [np.ones(2), np.array([np.nan])])
    np.testing.assert_array_equal(p[0], [1.0, 2.0])
    assert st_.step == 0


def test_checkpoint_roundtrip(tmp_path):
    net = small_net(prediction_kind="sample", data_dim=2)
    path = tmp_path / "net.pdmd"
    save_checkpoint(net, path)
    blob = path.read_bytes()
    assert blob[:4] == CKPT_MAGIC
    back = load_checkpoint(path)
    assert back.dims == net.dims and back.prediction_kind == "sample"
    for a, b in zip(back.params, net.params):
        np.testing.assert_array_equal(a, b)
    x, t = batch(3, 2)
    np.testing.assert_array_equal(back(x, t), net(x, t))


def test_checkpoint_layout(tmp_path):
    net = TimeConditionedNet.create(data_dim=1, hidden=2, depth=1, n_time_features=2, rng=0)
    path = tmp_path / "tiny.pdmd"
    save_checkpoint(net, path)
    blob = path.read_bytes()
    header = np.frombuffer(blob[4:], dtype="<u4", count=6)
    assert header.tolist() == [1, 0, 3, 3, 2, 1]
    values = np.frombuffer(blob, dtype="<f8", offset=4 + 4 * 6)
    expected = np.concatenate([net.weights[0].ravel(), net.biases[0], net.weights[1].ravel(), net.biases[1]])
    np.testing.assert_array_equal(values, expected)


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.pdmd"
    bad.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError):
        load_checkpoint(bad)
    net = small_net()
    good = tmp_path / "good.pdmd"
    save_checkpoint(net, good)
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ValueError, match="expected"):
        load_checkpoint(good)
    save_checkpoint(net, good)
    blob = bytearray(good.read_bytes())
    blob[8:12] = (7).to_bytes(4, "little")
    good.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="prediction kind"):
        load_checkpoint(good)


def test_checkpoint_deterministic_bytes(tmp_path):
    save_checkpoint(small_net(9), tmp_path / "a")
    save_checkpoint(small_net(9), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_copy_is_independent():
    net = small_net()
    twin = net.copy()
    twin.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != twin.weights[0][0, 0]
    net.load_params_from(twin)
    assert net.weights[0][0, 0] == twin.weights[0][0, 0]
    with pytest.raises(ValueError):
        net.load_params_from(small_net(hidden=4))
