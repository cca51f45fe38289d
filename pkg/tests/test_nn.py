import numpy as np
import pytest

from enginediag import nn
from enginediag.errors import AllMasked, NonFiniteGradient, ShapeMismatch

from conftest import brute_conv2d


def rng64():
    return np.random.default_rng(1234)


class TestConv1d:
    def test_hand_example(self):
        conv = nn.Conv1d(1, 1, 3, 1, rng=rng64(), dtype=np.float64)
        conv.weight.data = np.array([[[1.0, 0.0, -1.0]]])
        conv.bias.data = np.zeros(1)
        out = conv.forward(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
        np.testing.assert_allclose(out, [[[-2.0, -2.0]]])

    def test_identity_kernel(self):
        conv = nn.Conv1d(1, 1, 1, 1, rng=rng64(), dtype=np.float64)
        conv.weight.data = np.ones((1, 1, 1))
        conv.bias.data = np.zeros(1)
        x = rng64().standard_normal((2, 1, 9))
        np.testing.assert_allclose(conv.forward(x), x)

    def test_kernel_longer_than_input(self):
        conv = nn.Conv1d(1, 1, 80, 4, rng=rng64())
        with pytest.raises(ShapeMismatch):
            conv.forward(np.zeros((1, 1, 64), dtype=np.float32))

    def test_stride_output_width(self):
        conv = nn.Conv1d(2, 3, 80, 4, rng=rng64(), dtype=np.float64)
        out = conv.forward(rng64().standard_normal((1, 2, 1000)))
        assert out.shape == (1, 3, (1000 - 80) // 4 + 1)


class TestConv2d:
    def test_sum_kernel(self):
        conv = nn.Conv2d(1, 1, 2, rng=rng64(), dtype=np.float64)
        conv.weight.data = np.ones((1, 1, 2, 2))
        conv.bias.data = np.zeros(1)
        out = conv.forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        np.testing.assert_allclose(out, [[[[10.0]]]])

    def test_unit_kernel_identity(self):
        conv = nn.Conv2d(1, 1, 1, rng=rng64(), dtype=np.float64)
        conv.weight.data = np.ones((1, 1, 1, 1))
        conv.bias.data = np.zeros(1)
        x = rng64().standard_normal((2, 1, 4, 5))
        np.testing.assert_allclose(conv.forward(x), x)

    def test_matches_brute_force(self):
        rng = rng64()
        conv = nn.Conv2d(2, 3, 3, 1, rng=rng, dtype=np.float64)
        x = rng.standard_normal((2, 2, 8, 8))
        out = conv.forward(x)
        assert out.shape == (2, 3, 6, 6)
        oracle = brute_conv2d(x, conv.weight.data, conv.bias.data, 1)
        np.testing.assert_allclose(out, oracle, atol=1e-6)

    def test_kernel_too_large(self):
        conv = nn.Conv2d(1, 1, 3, rng=rng64())
        with pytest.raises(ShapeMismatch):
            conv.forward(np.zeros((1, 1, 2, 5), dtype=np.float32))


class TestNllLoss:
    def test_uniform(self):
        lp = np.log(np.full((1, 4), 0.25))
        loss, _ = nn.nll_loss(lp, np.array([1]))
        assert loss == pytest.approx(np.log(4.0), abs=1e-12)

    def test_confident(self):
        p = np.full(3, 1e-7)
        p[0] = 1.0 - 2e-7
        loss, _ = nn.nll_loss(np.log(p)[None, :], np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_mask_excludes_sample(self):
        lp = np.log(np.array([[0.9, 0.1], [0.2, 0.8]]))
        loss, grad = nn.nll_loss(lp, np.array([0, 1]),
                                 mask=np.array([True, False]))
        assert loss == pytest.approx(-np.log(0.9))
        assert np.all(grad[1] == 0.0)

    def test_all_masked(self):
        with pytest.raises(AllMasked):
            nn.nll_loss(np.zeros((2, 2)), np.array([0, 1]),
                        mask=np.array([False, False]))

    def test_bad_target(self):
        with pytest.raises(ShapeMismatch):
            nn.nll_loss(np.zeros((1, 2)), np.array([5]))


class TestAdam:
    def test_first_step_closed_form(self):
        p = nn.Parameter("x", np.array([1.0]))
        opt = nn.Adam([p], lr=0.001)
        p.grad = np.array([1.0])
        opt.step()
        assert 1.0 - p.data[0] == pytest.approx(0.001, abs=1e-6)

    def test_zero_gradient_no_move(self):
        p = nn.Parameter("x", np.array([3.0]))
        opt = nn.Adam([p], lr=0.1)
        for _ in range(5):
            p.grad = np.zeros(1)
            opt.step()
        assert p.data[0] == 3.0

    def test_quadratic_descent(self):
        p = nn.Parameter("x", np.array([1.0]))
        opt = nn.Adam([p], lr=0.05)
        losses = []
        for _ in range(200):
            losses.append(p.data[0] ** 2)
            p.grad = 2.0 * p.data
            opt.step()
        assert abs(p.data[0]) < 0.05
        # loss decreases over the long run (monotone in coarse windows)
        assert np.mean(losses[-20:]) < np.mean(losses[:20]) / 100

    def test_nonfinite_gradient(self):
        p = nn.Parameter("x", np.array([1.0]))
        opt = nn.Adam([p], lr=0.1)
        p.grad = np.array([np.nan])
        with pytest.raises(NonFiniteGradient):
            opt.step()


class TestLayerBehaviors:
    def test_batchnorm_normalizes(self):
        rng = rng64()
        bn = nn.BatchNorm(3, dtype=np.float64)
        x = rng.standard_normal((8, 3, 50)) * 4.0 + 2.0
        out = bn.forward(x, training=True)
        mean = out.mean(axis=(0, 2))
        var = out.var(axis=(0, 2))
        assert np.all(np.abs(mean) < 1e-5)
        assert np.all(np.abs(var - 1.0) < 1e-4)

    def test_batchnorm_eval_uses_running_stats(self):
        rng = rng64()
        bn = nn.BatchNorm(2, dtype=np.float64)
        for _ in range(400):
            bn.forward(rng.standard_normal((16, 2, 10)) * 3.0 + 1.0, training=True)
        out = bn.forward(np.full((4, 2, 10), 1.0), training=False)
        # running mean ~1, running var ~9: (1-1)/3 = 0
        assert np.all(np.abs(out) < 0.05)

    def test_dropout_train_fraction_and_scale(self):
        drop = nn.Dropout(0.5)
        drop.reseed(7)
        x = np.ones((100, 100), dtype=np.float32)
        out = drop.forward(x, training=True)
        zero_fraction = np.mean(out == 0.0)
        assert 0.45 <= zero_fraction <= 0.55
        survivors = out[out != 0.0]
        np.testing.assert_allclose(survivors, 2.0, atol=1e-6)

    def test_dropout_eval_identity(self):
        drop = nn.Dropout(0.5)
        x = rng64().standard_normal((5, 5))
        np.testing.assert_array_equal(drop.forward(x, training=False), x)

    def test_maxpool_routes_to_single_position(self):
        pool = nn.MaxPool1d(4)
        x = np.array([[[1.0, 5.0, 5.0, 2.0, 0.0, 1.0, 7.0, 3.0]]])
        out = pool.forward(x)
        np.testing.assert_allclose(out, [[[5.0, 7.0]]])
        dout = np.array([[[1.0, 2.0]]])
        dx = pool.backward(dout)
        # first-max tie break: position 1 (not 2) receives the gradient
        np.testing.assert_allclose(dx, [[[0, 1.0, 0, 0, 0, 0, 2.0, 0]]])
        assert dx.sum() == dout.sum()

    def test_maxpool2d_window_clamp(self):
        pool = nn.MaxPool2d(2)
        x = rng64().standard_normal((1, 1, 30, 1))
        out = pool.forward(x)
        assert out.shape == (1, 1, 15, 1)
        dx = pool.backward(np.ones_like(out))
        assert dx.shape == x.shape
        assert dx.sum() == out.size

    def test_log_softmax_rows_normalized(self):
        ls = nn.LogSoftmax()
        out = ls.forward(rng64().standard_normal((6, 9)) * 5.0)
        logsumexp = np.log(np.exp(out).sum(axis=1))
        assert np.all(np.abs(logsumexp) < 1e-6)

    def test_global_avg_pool(self):
        gap = nn.GlobalAvgPool()
        x = rng64().standard_normal((2, 3, 4, 5))
        np.testing.assert_allclose(gap.forward(x), x.mean(axis=(2, 3)))


def _layer_grad_check(layer, x, rng, training=True):
    proj = rng.standard_normal(layer.forward(x, training=training).shape)

    def loss_fn():
        return float((layer.forward(x, training=training) * proj).sum())

    loss_fn()
    for p in layer.params():
        p.zero_grad()
    layer.backward(proj)
    return nn.grad_check(loss_fn, layer.params(), rng=rng)


def _input_grad_check(make_layer, x, rng, training=True):
    """Check dx of a parameterless layer through an upstream linear map."""
    shape = x.shape
    flat = x.reshape(shape[0], -1)
    lin = nn.Linear(flat.shape[1], flat.shape[1], rng=rng, dtype=np.float64)
    layer = make_layer()

    def fwd():
        h = lin.forward(flat)
        return layer.forward(h.reshape(shape), training=training)

    proj = rng.standard_normal(fwd().shape)

    def loss_fn():
        return float((fwd() * proj).sum())

    loss_fn()
    for p in lin.params():
        p.zero_grad()
    dx = layer.backward(proj)
    lin.backward(dx.reshape(shape[0], -1))
    return nn.grad_check(loss_fn, lin.params(), rng=rng)


class TestGradients:
    def test_conv1d(self):
        rng = rng64()
        layer = nn.Conv1d(2, 3, 5, 2, rng=rng, dtype=np.float64)
        assert _layer_grad_check(layer, rng.standard_normal((3, 2, 40)), rng) < 1e-4

    def test_conv1d_wide_kernel(self):
        rng = rng64()
        layer = nn.Conv1d(1, 2, 80, 4, rng=rng, dtype=np.float64)
        assert _layer_grad_check(layer, rng.standard_normal((2, 1, 400)), rng) < 1e-4

    def test_conv2d(self):
        rng = rng64()
        layer = nn.Conv2d(2, 4, 3, 1, rng=rng, dtype=np.float64)
        assert _layer_grad_check(layer, rng.standard_normal((2, 2, 10, 8)), rng) < 1e-4

    def test_linear(self):
        rng = rng64()
        layer = nn.Linear(7, 4, rng=rng, dtype=np.float64)
        assert _layer_grad_check(layer, rng.standard_normal((5, 7)), rng) < 1e-4

    def test_batchnorm_1d_and_2d(self):
        rng = rng64()
        assert _layer_grad_check(nn.BatchNorm(3, dtype=np.float64),
                                 rng.standard_normal((8, 3, 12)), rng) < 1e-4
        assert _layer_grad_check(nn.BatchNorm(2, dtype=np.float64),
                                 rng.standard_normal((6, 2, 5, 4)), rng) < 1e-4

    def test_parameterless_layers(self):
        rng = rng64()
        assert _input_grad_check(lambda: nn.ReLU(),
                                 rng.standard_normal((3, 2, 9)), rng) < 1e-3
        assert _input_grad_check(lambda: nn.MaxPool1d(3),
                                 rng.standard_normal((2, 2, 13)), rng) < 1e-3
        assert _input_grad_check(lambda: nn.MaxPool2d(2),
                                 rng.standard_normal((2, 2, 6, 7)), rng) < 1e-3
        assert _input_grad_check(lambda: nn.GlobalAvgPool(),
                                 rng.standard_normal((3, 2, 9)), rng) < 1e-3
        assert _input_grad_check(lambda: nn.LogSoftmax(),
                                 rng.standard_normal((4, 5)), rng) < 1e-3

    def test_frozen_parameter_skipped(self):
        rng = rng64()
        layer = nn.Linear(3, 2, rng=rng, dtype=np.float64)
        layer.weight.requires_grad = False
        x = rng.standard_normal((4, 3))
        proj = rng.standard_normal((4, 2))

        def loss_fn():
            return float((layer.forward(x) * proj).sum())

        loss_fn()
        for p in layer.params():
            p.zero_grad()
        layer.backward(proj)
        # corrupt the frozen weight's stored grad: must not affect result
        layer.weight.grad = layer.weight.grad * 100.0
        assert nn.grad_check(loss_fn, layer.params(), rng=rng) < 1e-4


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = rng64()
        arrays = {"trunk.0.weight": rng.standard_normal((3, 2, 5)).astype(np.float32),
                  "trunk.0.bias": np.zeros(3, dtype=np.float32)}
        state = {"step": 12, "lr": 0.001, "beta1": 0.9, "beta2": 0.999,
                 "eps": 1e-8,
                 "moments": {"trunk.0.weight": tuple(
                     rng.standard_normal((3, 2, 5)).astype(np.float32)
                     for _ in range(3))}}
        path = tmp_path / "model.ckpt"
        nn.write_checkpoint(path, {"architecture": "parallel"}, arrays, state)
        desc, back, opt = nn.read_checkpoint(path)
        assert desc == {"architecture": "parallel"}
        assert set(back) == set(arrays)
        for name in arrays:
            np.testing.assert_array_equal(back[name], arrays[name])
        assert opt["step"] == 12
        np.testing.assert_array_equal(opt["moments"]["trunk.0.weight"][2],
                                      state["moments"]["trunk.0.weight"][2])

    def test_magic_and_version(self, tmp_path):
        path = tmp_path / "model.ckpt"
        nn.write_checkpoint(path, {}, {}, None)
        assert path.read_bytes()[:4] == b"CMCK"
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            nn.read_checkpoint(bad)
