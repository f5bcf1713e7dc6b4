import numpy as np
import numpy.testing as npt
import pytest

from transformpc import layers as L
from transformpc.transforms import TransformKind, TransformSpec, dwht_naive, hadamard_matrix


def rand(shape, seed=0, scale=1.0):
    return scale * np.random.default_rng(seed).standard_normal(shape)


def numeric_grad(f, x, step=1e-6):
    """Central differences of a scalar function over every entry of x."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g


def check_layer_grads(layer, x, training=True, tol=1e-7, seed=5):
    """Backward vs central differences for the input and all parameters."""
    proj = rand(layer.forward(x, training).shape, seed=seed)

    def loss():
        return float((layer.forward(x, training) * proj).sum())

    out = layer.forward(x, training)
    dx = layer.backward(proj)
    npt.assert_allclose(dx, numeric_grad(loss, x), atol=tol, rtol=1e-5)
    for p in layer.params():
        if not p.learnable:
            continue
        npt.assert_allclose(
            p.grad, numeric_grad(loss, p.values), atol=tol, rtol=1e-5,
            err_msg=p.name,
        )
    return out


class TestDepthwiseConv:
    def test_center_one_kernel_is_identity(self):
        layer = L.DepthwiseConv3x3("dw", 3)
        layer.weight.values[...] = 0.0
        layer.weight.values[:, 1, 1] = 1.0
        x = rand((2, 3, 5, 5))
        npt.assert_allclose(layer.forward(x, False), x)

    def test_box_kernel_on_constant_input(self):
        layer = L.DepthwiseConv3x3("dw", 2)
        layer.weight.values[...] = 1.0
        c = 0.5
        out = layer.forward(np.full((1, 2, 6, 6), c), False)
        npt.assert_allclose(out[:, :, 1:-1, 1:-1], 9 * c)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_matches_loop_reference(self, stride):
        b, c, h, w = 2, 3, 5, 4
        x = rand((b, c, h, w), seed=1)
        layer = L.DepthwiseConv3x3("dw", c, stride=stride,
                                   rng=np.random.default_rng(2))
        out = layer.forward(x, False)
        ho, wo = -(-h // stride), -(-w // stride)
        ref = np.zeros((b, c, ho, wo))
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        for bi in range(b):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        for u in range(3):
                            for v in range(3):
                                ref[bi, ci, i, j] += (
                                    layer.weight.values[ci, u, v]
                                    * xp[bi, ci, i * stride + u, j * stride + v]
                                )
        npt.assert_allclose(out, ref, atol=1e-10)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradients(self, stride):
        layer = L.DepthwiseConv3x3("dw", 3, stride=stride,
                                   rng=np.random.default_rng(3))
        check_layer_grads(layer, rand((2, 3, 5, 5), seed=4))

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            L.DepthwiseConv3x3("dw", 4).forward(rand((1, 3, 4, 4)), False)


class TestConv3x3:
    @pytest.mark.parametrize("stride", [1, 2])
    def test_matches_loop_reference(self, stride):
        b, cin, cout, h, w = 2, 3, 4, 5, 5
        x = rand((b, cin, h, w), seed=1)
        layer = L.Conv3x3("conv", cin, cout, stride=stride,
                          rng=np.random.default_rng(2))
        out = layer.forward(x, False)
        ho, wo = -(-h // stride), -(-w // stride)
        ref = np.zeros((b, cout, ho, wo))
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        for bi in range(b):
            for mo in range(cout):
                for i in range(ho):
                    for j in range(wo):
                        ref[bi, mo, i, j] = np.sum(
                            layer.weight.values[mo]
                            * xp[bi, :, i * stride : i * stride + 3,
                                 j * stride : j * stride + 3]
                        )
        npt.assert_allclose(out, ref, atol=1e-10)

    def test_gradients(self):
        layer = L.Conv3x3("conv", 2, 3, rng=np.random.default_rng(0))
        check_layer_grads(layer, rand((2, 2, 4, 4), seed=6))


class TestPointwiseConv:
    def test_identity_weights(self):
        layer = L.PointwiseConv("pc", 3, 3, weights=np.eye(3))
        x = rand((2, 3, 4, 4))
        npt.assert_allclose(layer.forward(x, False), x)

    def test_hadamard_weights_match_transform(self):
        d = 3
        n = 1 << d
        layer = L.PointwiseConv("pc", n, n, weights=hadamard_matrix(d).astype(float))
        x = rand((2, n, 3, 3), seed=7)
        out = layer.forward(x, False)
        spec = TransformSpec(TransformKind.DWHT, n, n)
        want = np.moveaxis(dwht_naive(np.moveaxis(x, 1, -1), spec), -1, 1)
        npt.assert_allclose(out, want, atol=1e-10)

    def test_hand_dot_products(self):
        layer = L.PointwiseConv("pc", 2, 2, weights=np.array([[1.0, 1], [1, -1]]))
        x = np.array([3.0, 5.0]).reshape(1, 2, 1, 1)
        npt.assert_allclose(layer.forward(x, False).ravel(), [8, -2])

    def test_gradients(self):
        layer = L.PointwiseConv("pc", 3, 5, rng=np.random.default_rng(1))
        check_layer_grads(layer, rand((2, 3, 3, 3), seed=8))

    def test_frozen_weights_accumulate_no_grad(self):
        layer = L.PointwiseConv("pc", 3, 3, learnable=False,
                                rng=np.random.default_rng(2))
        out = layer.forward(rand((1, 3, 2, 2)), False)
        layer.backward(np.ones_like(out))
        npt.assert_array_equal(layer.weight.grad, 0.0)


class TestTransformPC:
    def test_dwht_delta_gives_ones(self):
        layer = L.TransformPC("tpc", TransformSpec(TransformKind.DWHT, 4, 4))
        x = np.zeros((1, 4, 1, 1))
        x[0, 0] = 1.0
        npt.assert_array_equal(layer.forward(x, False).ravel(), [1, 1, 1, 1])

    def test_dct_constant_concentrates(self):
        layer = L.TransformPC("tpc", TransformSpec(TransformKind.DCT, 8, 8))
        out = layer.forward(np.ones((1, 8, 1, 1)), False).ravel()
        npt.assert_allclose(out[0], 8.0, rtol=1e-12)
        npt.assert_allclose(out[1:], 0.0, atol=1e-9)

    def test_contributes_zero_parameters(self):
        layer = L.TransformPC("tpc", TransformSpec(TransformKind.DWHT, 8, 8))
        assert layer.params() == []

    @pytest.mark.parametrize("kind", [TransformKind.DWHT, TransformKind.DCT])
    @pytest.mark.parametrize("n,m", [(8, 8), (4, 8), (8, 4)])
    def test_adjoint_identity(self, kind, n, m):
        spec = TransformSpec(kind, n, m)
        layer = L.TransformPC("tpc", spec)
        rng = np.random.default_rng(9)
        for _ in range(50):
            x = rng.standard_normal((1, n, 2, 2))
            y = rng.standard_normal((1, m, 2, 2))
            fx = layer.forward(x, False)
            ty = layer.backward(y)
            assert abs(np.vdot(fx, y) - np.vdot(x, ty)) < 1e-10 * max(
                1.0, abs(np.vdot(fx, y))
            )

    def test_dwht_backward_equals_forward_when_square(self):
        spec = TransformSpec(TransformKind.DWHT, 8, 8)
        layer = L.TransformPC("tpc", spec)
        g = rand((2, 8, 2, 2), seed=10)
        layer.forward(rand((2, 8, 2, 2)), False)
        npt.assert_allclose(layer.backward(g), layer.forward(g, False), atol=1e-10)

    @pytest.mark.parametrize("kind", [TransformKind.DWHT, TransformKind.DCT])
    def test_jacobian_vector_product(self, kind):
        spec = TransformSpec(kind, 4, 4)
        layer = L.TransformPC("tpc", spec)
        x = rand((1, 4, 2, 2), seed=11)
        proj = rand((1, 4, 2, 2), seed=12)

        def loss():
            return float((layer.forward(x, False) * proj).sum())

        layer.forward(x, False)
        dx = layer.backward(proj)
        num = numeric_grad(loss, x, step=1e-5)
        rel = np.abs(dx - num) / np.maximum(np.abs(num), 1e-3)
        assert rel.max() < 1e-6


class TestBatchNorm:
    def test_train_output_normalized(self):
        bn = L.BatchNorm("bn", 4)
        x = rand((8, 4, 5, 5), seed=13, scale=3.0) + 2.0
        out = bn.forward(x, True)
        npt.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        npt.assert_allclose(out.std(axis=(0, 2, 3)), 1.0, atol=1e-3)

    def test_eval_uses_running_stats(self):
        bn = L.BatchNorm("bn", 2)
        x = rand((16, 2, 4, 4), seed=14) * 2 + 1
        for _ in range(200):
            bn.forward(x, True)
        out = bn.forward(x, False)
        # after convergence of running stats the two modes nearly agree
        npt.assert_allclose(out, bn.forward(x, True), atol=1e-2)

    def test_gradients_train_mode(self):
        bn = L.BatchNorm("bn", 3)
        bn.gamma.values[...] = rand(3, seed=15) + 1.5
        bn.beta.values[...] = rand(3, seed=16)
        check_layer_grads(bn, rand((4, 3, 3, 3), seed=17), training=True, tol=1e-6)

    def test_gradients_eval_mode(self):
        bn = L.BatchNorm("bn", 3)
        bn.running_mean[...] = rand(3, seed=18)
        bn.running_var[...] = np.abs(rand(3, seed=19)) + 0.5
        check_layer_grads(bn, rand((2, 3, 3, 3), seed=20), training=False)


class TestSimpleLayers:
    def test_relu_example(self):
        relu = L.ReLU()
        out = relu.forward(np.array([[-1.0, 0.0, 2.0]])[:, :, None, None], False)
        npt.assert_array_equal(out.ravel(), [0, 0, 2])

    def test_relu_gradients(self):
        relu = L.ReLU()
        x = rand((2, 3, 4, 4), seed=21) + 0.05  # keep clear of the kink
        check_layer_grads(relu, x)

    def test_shuffle_then_inverse_is_identity(self):
        sh = L.ChannelShuffle(8, groups=2)
        x = rand((2, 8, 3, 3), seed=22)
        out = sh.forward(x, False)
        npt.assert_array_equal(out[:, sh.inv_perm], x)
        npt.assert_array_equal(sh.backward(out), x)

    def test_shuffle_interleaves_groups(self):
        sh = L.ChannelShuffle(4, groups=2)
        x = np.arange(4.0).reshape(1, 4, 1, 1)
        npt.assert_array_equal(sh.forward(x, False).ravel(), [0, 2, 1, 3])

    def test_split_concat_roundtrip(self):
        x = rand((2, 6, 2, 2), seed=23)
        a, b = L.channel_split(x)
        npt.assert_array_equal(L.concat_channels(a, b), x)

    def test_split_rejects_odd(self):
        with pytest.raises(ValueError):
            L.channel_split(rand((1, 3, 2, 2)))

    def test_global_avg_pool(self):
        pool = L.GlobalAvgPool()
        x = rand((2, 3, 4, 4), seed=24)
        npt.assert_allclose(pool.forward(x, False), x.mean(axis=(2, 3)))
        g = rand((2, 3), seed=25)
        npt.assert_allclose(pool.backward(g), g[:, :, None, None] / 16 * np.ones((2, 3, 4, 4)))

    def test_fully_connected_grads(self):
        fc = L.FullyConnected("fc", 5, 3, rng=np.random.default_rng(4))
        x = rand((4, 5), seed=26)
        proj = rand((4, 3), seed=27)

        def loss():
            return float((fc.forward(x, True) * proj).sum())

        fc.forward(x, True)
        dx = fc.backward(proj)
        npt.assert_allclose(dx, numeric_grad(loss, x), atol=1e-7)
        npt.assert_allclose(fc.weight.grad, numeric_grad(loss, fc.weight.values), atol=1e-7)
        npt.assert_allclose(fc.bias.grad, numeric_grad(loss, fc.bias.values), atol=1e-7)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, grad = L.softmax_cross_entropy(np.zeros((2, 4)), np.array([0, 3]))
        npt.assert_allclose(loss, np.log(4))

    def test_gradient_matches_fd(self):
        logits = rand((3, 5), seed=28)
        labels = np.array([0, 2, 4])
        loss, grad = L.softmax_cross_entropy(logits, labels)

        def f():
            return L.softmax_cross_entropy(logits, labels)[0]

        npt.assert_allclose(grad, numeric_grad(f, logits), atol=1e-8)
