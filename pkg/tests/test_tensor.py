import numpy as np
import pytest

from osxray import tensor as T
from osxray.errors import ContractError, DomainError, ShapeError


def brute_conv2d(x, k, bias=None, stride=1, padding=0):
    """Sliding-window sum oracle, deliberately loop-based."""
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[ni, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[ni, oi, i, j] = np.sum(patch * k[oi])
            if bias is not None:
                out[ni, oi] += bias[oi]
    return out


def tie_free_tensor(shape, rng):
    """Values with pairwise gaps well above 2*eps, so no pooling argmax can
    flip inside the central-difference window."""
    n = int(np.prod(shape))
    vals = rng.permutation(n) * 0.01 + rng.uniform(0, 0.003, n)
    return T.Tensor(vals.reshape(shape), requires_grad=True)


def brute_max_pool(x, window, stride):
    n, c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    out[ni, ci, i, j] = x[ni, ci, i * stride:i * stride + window,
                                          j * stride:j * stride + window].max()
    return out


class TestFactories:
    def test_zeros(self):
        t = T.zeros([2, 2])
        assert t.shape == (2, 2)
        assert np.array_equal(t.data.reshape(-1), [0, 0, 0, 0])

    def test_constant_fill(self):
        assert np.array_equal(T.full([3], 5).data, [5, 5, 5])

    def test_seeded_uniform_is_bit_identical(self):
        a = T.uniform([4], 0, 1, seed=7)
        b = T.uniform([4], 0, 1, seed=7)
        assert np.array_equal(a.data, b.data)

    def test_seeded_gaussian_is_bit_identical(self):
        a = T.gaussian([3, 3], 0, 1, seed=11)
        b = T.gaussian([3, 3], 0, 1, seed=11)
        assert np.array_equal(a.data, b.data)

    def test_zero_extent_rejected(self):
        with pytest.raises(ShapeError):
            T.zeros([0, 3])
        with pytest.raises(ShapeError):
            T.ones([2, -1])

    def test_bad_uniform_bounds(self):
        with pytest.raises(DomainError):
            T.uniform([2], 1.0, 1.0, seed=0)

    def test_negative_sigma_rejected(self):
        with pytest.raises(DomainError):
            T.gaussian([2], 0.0, -0.5, seed=0)

    def test_dtype_is_float32(self):
        assert T.ones([2]).data.dtype == np.float32


class TestMatmul:
    def test_identity(self):
        a = T.Tensor([[1, 2], [3, 4]])
        eye = T.Tensor(np.eye(2))
        assert np.allclose(T.matmul(a, eye).data, a.data)

    def test_hand_product(self):
        a = T.Tensor([[1, 2], [3, 4]])
        b = T.Tensor([[5, 6], [7, 8]])
        assert np.array_equal(T.matmul(a, b).data, [[19, 22], [43, 50]])

    def test_zero_annihilator(self):
        a = T.Tensor([[1, 2], [3, 4]])
        z = T.zeros([2, 3])
        assert np.array_equal(T.matmul(a, z).data, np.zeros((2, 3)))

    def test_inner_extent_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(T.ones([2, 3]), T.ones([2, 3]))

    def test_associativity(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = T.Tensor(rng.uniform(-1, 1, (4, 8)))
            b = T.Tensor(rng.uniform(-1, 1, (8, 5)))
            c = T.Tensor(rng.uniform(-1, 1, (5, 6)))
            left = T.matmul(T.matmul(a, b), c).data
            right = T.matmul(a, T.matmul(b, c)).data
            assert np.max(np.abs(left - right)) < 1e-4


class TestConv2d:
    def test_hand_case_and_oracle(self):
        x = np.arange(1, 10, dtype=np.float32).reshape(1, 1, 3, 3)
        k = np.array([[1, 0], [0, 1]], dtype=np.float32).reshape(1, 1, 2, 2)
        out = T.conv2d(T.Tensor(x), T.Tensor(k)).data
        assert np.array_equal(out[0, 0], [[6, 8], [12, 14]])
        assert np.allclose(out, brute_conv2d(x, k))

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = T.Tensor(rng.uniform(0, 1, (2, 3, 5, 5)))
        k = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for c in range(3):
            k[c, c, 0, 0] = 1.0
        out = T.conv2d(x, T.Tensor(k))
        assert np.array_equal(out.data, x.data)

    def test_zero_kernel(self):
        x = T.ones([1, 2, 4, 4])
        out = T.conv2d(x, T.zeros([3, 2, 2, 2]))
        assert not out.data.any()

    def test_matches_oracle_with_stride_and_padding(self):
        rng = np.random.default_rng(5)
        for stride, padding in [(1, 0), (1, 1), (2, 0), (2, 1), (3, 2)]:
            x = rng.standard_normal((2, 3, 7, 8)).astype(np.float32)
            k = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
            b = rng.standard_normal(4).astype(np.float32)
            got = T.conv2d(T.Tensor(x), T.Tensor(k), T.Tensor(b), stride, padding).data
            want = brute_conv2d(x, k, b, stride, padding)
            assert np.allclose(got, want, atol=1e-4)

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(ShapeError):
            T.conv2d(T.ones([1, 1, 3, 3]), T.ones([1, 1, 5, 5]))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.conv2d(T.ones([1, 2, 4, 4]), T.ones([1, 3, 2, 2]))


class TestMaxPool:
    def test_max_of_four(self):
        x = T.Tensor([[1, 2], [3, 4]]).reshape(1, 1, 2, 2)
        assert T.max_pool2d(x, 2, 2).data.reshape(-1)[0] == 4

    def test_constant_input(self):
        x = T.full([1, 1, 4, 4], 3.5)
        out = T.max_pool2d(x, 2, 2)
        assert np.all(out.data == 3.5)

    def test_tie_routes_to_first_occurrence(self):
        x = T.Tensor(np.array([[1, 5], [5, 2]], dtype=np.float32).reshape(1, 1, 2, 2))
        x.requires_grad = True
        out = T.max_pool2d(x, 2, 2)
        T.backward(out.sum())
        assert np.array_equal(x.grad.reshape(2, 2), [[0, 1], [0, 0]])

    def test_matches_oracle(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((2, 2, 6, 6)).astype(np.float32)
        for window, stride in [(2, 2), (3, 1), (2, 1), (3, 3)]:
            got = T.max_pool2d(T.Tensor(x), window, stride).data
            assert np.array_equal(got, brute_max_pool(x, window, stride))

    def test_window_exceeds_extent(self):
        with pytest.raises(ShapeError):
            T.max_pool2d(T.ones([1, 1, 2, 2]), 3, 1)


class TestActivations:
    def test_sigmoid_at_zero(self):
        assert T.sigmoid(T.zeros([1])).item() == pytest.approx(0.5)

    def test_relu_negative(self):
        assert T.relu(T.Tensor([-3.0])).item() == 0.0

    def test_leaky_relu_definition(self):
        assert T.leaky_relu(T.Tensor([-2.0]), 0.1).item() == pytest.approx(-0.2)

    def test_leaky_slope_domain(self):
        with pytest.raises(DomainError):
            T.leaky_relu(T.ones([1]), 1.5)

    def test_sigmoid_range_and_finiteness(self):
        x = T.Tensor(np.linspace(-200, 200, 101))
        y = T.sigmoid(x).data
        assert np.all(np.isfinite(y))
        assert np.all((y >= 0) & (y <= 1))

    def test_activation_dispatch(self):
        x = T.Tensor([-1.0, 2.0])
        assert np.allclose(T.activation(x, "tanh").data, np.tanh(x.data))
        with pytest.raises(DomainError):
            T.activation(x, "softmax")


class TestReduce:
    def test_sum(self):
        assert T.reduce(T.Tensor([1, 2, 3]), "sum").item() == 6

    def test_mean(self):
        assert T.reduce(T.Tensor([2, 4]), "mean").item() == 3

    def test_sum_of_zeros(self):
        assert T.reduce(T.zeros([5]), "sum").item() == 0

    def test_axis_sum(self):
        x = T.Tensor([[1, 2], [3, 4]])
        assert np.array_equal(x.sum(axis=1).data, [3, 7])
        assert np.array_equal(x.sum(axis=0).data, [4, 6])


class TestBackward:
    def test_square_sum_gradient(self):
        x = T.Tensor([1, 2, 3], requires_grad=True)
        loss = (x * x).sum()
        T.backward(loss)
        assert np.allclose(x.grad, [2, 4, 6])

    def test_sigmoid_gradient_at_zero(self):
        w = T.zeros([1], requires_grad=True)
        T.backward(T.sigmoid(w).sum())
        assert w.grad[0] == pytest.approx(0.25)

    def test_non_scalar_loss_rejected(self):
        x = T.Tensor([1, 2], requires_grad=True)
        with pytest.raises(ContractError):
            T.backward(x * x)

    def test_repeated_backward_without_reset_rejected(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        T.backward((x * x).sum())
        with pytest.raises(ContractError):
            T.backward((x * x).sum())
        T.zero_grads([x])
        T.backward((x * x).sum())  # fine after reset

    def test_conv_loss_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        x = T.Tensor(rng.uniform(-1, 1, (1, 2, 5, 5)), requires_grad=True)
        k = T.Tensor(rng.uniform(-1, 1, (2, 2, 3, 3)), requires_grad=True)
        b = T.Tensor(rng.uniform(-1, 1, 2), requires_grad=True)

        def f(x, k, b):
            return T.sigmoid(T.conv2d(x, k, b, stride=1, padding=1)).sum()

        assert T.grad_check(f, [x, k, b]) <= 1e-2

    def test_graph_trace_is_topological(self):
        x = T.Tensor([1.0], requires_grad=True)
        y = x * x
        z = (y + x).sum()
        graph = T.Graph.trace(z)
        pos = {id(node): i for i, node in enumerate(graph.nodes)}
        for node in graph.nodes:
            for parent in node._parents:
                assert pos[id(parent)] < pos[id(node)]


class TestOptimizers:
    def test_sgd_definition(self):
        w = T.Tensor([1.0], requires_grad=True)
        w.grad = np.array([0.5], dtype=np.float32)
        T.SGD([w], lr=0.1).step()
        assert w.data[0] == pytest.approx(0.95)

    def test_zero_gradient_is_identity(self):
        for make in (lambda p: T.SGD(p, lr=0.1), lambda p: T.Adam(p, lr=0.1)):
            w = T.Tensor([1.0, -2.0], requires_grad=True)
            before = w.data.copy()
            w.grad = np.zeros_like(w.data)
            make([w]).step()
            assert np.array_equal(w.data, before)

    def test_adam_first_step_hand_recurrence(self):
        # t=1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps) ~= lr
        w = T.Tensor([1.0], requires_grad=True)
        w.grad = np.array([0.5], dtype=np.float32)
        T.Adam([w], lr=0.001).step()
        assert w.data[0] == pytest.approx(0.999, abs=1e-6)

    def test_missing_grad_rejected(self):
        w = T.Tensor([1.0], requires_grad=True)
        with pytest.raises(ContractError):
            T.SGD([w], lr=0.1).step()

    def test_step_counter_and_grad_clearing(self):
        w = T.Tensor([1.0], requires_grad=True)
        opt = T.Adam([w])
        for t in range(1, 4):
            w.grad = np.array([0.1], dtype=np.float32)
            opt.step()
            assert opt.t == t
            assert w.grad is None


class TestGradCheckSuite:
    def test_constant_gradient(self):
        x = T.Tensor(np.random.default_rng(0).uniform(-1, 1, 6), requires_grad=True)
        assert T.grad_check(lambda x: x.sum(), [x]) < 1e-5

    def test_matmul_chain(self):
        rng = np.random.default_rng(1)
        a = T.Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
        b = T.Tensor(rng.uniform(-1, 1, (4, 5)), requires_grad=True)
        c = T.Tensor(rng.uniform(-1, 1, (5, 2)), requires_grad=True)
        err = T.grad_check(lambda a, b, c: T.matmul(T.matmul(a, b), c).sum(), [a, b, c])
        assert err <= 1e-3

    @pytest.mark.parametrize("seed", range(10))
    def test_every_op_small_shapes(self, seed):
        rng = np.random.default_rng(seed)

        cases = [
            (lambda x: (x * x).sum(), [(2, 2, 8, 8)]),
            (lambda x, y: (x + y * 2.0).sum(), [(2, 3), (2, 3)]),
            (lambda x, y: (x * y).mean(), [(4, 4), (4, 4)]),
            (lambda x: T.relu(x).sum(), [(2, 2, 4, 4)]),
            (lambda x: T.leaky_relu(x, 0.1).sum(), [(3, 5)]),
            (lambda x: T.sigmoid(x).sum(), [(2, 6)]),
            (lambda x: T.tanh(x).sum(), [(2, 6)]),
            (lambda x: T.sqrt(x * x + T.full(x.shape, 1.0)).sum(), [(3, 3)]),
            (lambda x: x.abs().sum(), [(2, 5)]),
            (lambda x, y: T.matmul(x, y).sum(), [(3, 4), (4, 2)]),
            (lambda x, k: T.conv2d(x, k, stride=1, padding=1).sum(), [(2, 2, 6, 6), (3, 2, 3, 3)]),
            (lambda x, k: T.conv2d(x, k, stride=2, padding=0).sum(), [(1, 2, 8, 8), (2, 2, 2, 2)]),
            (lambda x: T.upsample2d(x, 2).sum(), [(1, 2, 3, 3)]),
            (lambda x: x.reshape(2, -1).sum(axis=1).sum(), [(2, 2, 2, 2)]),
            (lambda x, y: T.concat([x, y], axis=1).mean(), [(2, 3), (2, 2)]),
            (lambda x: T.bce_with_logits(x, 1).sum(), [(2, 4)]),
            (lambda x: T.bce_with_logits(x, 0).mean(), [(2, 4)]),
        ]
        for f, shapes in cases:
            # keep values away from relu/abs kinks for clean differences
            inputs = [T.Tensor(rng.uniform(0.1, 1.0, s) * rng.choice([-1, 1], s),
                               requires_grad=True) for s in shapes]
            assert T.grad_check(f, inputs) <= 1e-2

        pooled = tie_free_tensor((2, 2, 6, 6), rng)
        assert T.grad_check(lambda x: T.max_pool2d(x, 2, 2).sum(), [pooled]) <= 1e-2


class TestFiniteness:
    def test_public_ops_stay_finite(self):
        rng = np.random.default_rng(8)
        x = T.Tensor(rng.uniform(-50, 50, (2, 2, 4, 4)))
        k = T.Tensor(rng.uniform(-5, 5, (2, 2, 3, 3)))
        outs = [
            T.conv2d(x, k, padding=1),
            T.max_pool2d(x, 2, 2),
            T.sigmoid(x),
            T.tanh(x),
            T.bce_with_logits(x * 100.0, 1),
            (x * x).sqrt(),
        ]
        for out in outs:
            assert np.all(np.isfinite(out.data))
