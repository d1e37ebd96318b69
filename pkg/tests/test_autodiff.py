"""
自動微分：運算、反向傳播與梯度檢查
"""

import numpy as np
import pytest

from autodiff import Tensor, backward, no_grad, ops
from autodiff.gradcheck import directional_gradient_error, max_gradient_error
from errors import ContractError, DimensionError, DomainError, NumericError


def param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestForward:
    def test_matmul_identity(self):
        eye = Tensor(np.eye(2))
        np.testing.assert_array_equal(ops.matmul(eye, eye).data, np.eye(2))

    def test_matmul_hand_computed(self):
        out = ops.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_matmul_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_conv_identity_kernel(self, rng):
        x = Tensor(rng.standard_normal((2, 1, 5, 5)))
        out = ops.conv2d(x, Tensor(np.ones((1, 1, 1, 1))))
        np.testing.assert_allclose(out.data, x.data)

    def test_conv_hand_computed(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        out = ops.conv2d(x, Tensor(np.ones((1, 1, 2, 2))))
        np.testing.assert_array_equal(out.data, [[[[10.0]]]])

    def test_conv_non_positive_extent(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))

    def test_relu_and_exp(self):
        np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
        assert ops.exp(Tensor([0.0])).data[0] == 1.0

    def test_log_of_non_positive(self):
        with pytest.raises(DomainError):
            ops.log(Tensor([1.0, 0.0]))

    def test_pools(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        assert ops.maxpool2d(x, 2).data.ravel().tolist() == [4.0]
        constant = Tensor(np.full((2, 3, 4, 4), 0.25))
        np.testing.assert_allclose(ops.global_avg_pool(constant).data, np.full((2, 3), 0.25))

    def test_pool_window_too_large(self):
        with pytest.raises(DimensionError):
            ops.maxpool2d(Tensor(np.ones((1, 1, 2, 2))), 3)

    def test_l2_normalize(self):
        out = ops.l2_normalize(Tensor([[3.0, 4.0], [0.0, 1.0]]))
        np.testing.assert_allclose(out.data, [[0.6, 0.8], [0.0, 1.0]])

    def test_l2_normalize_zero_row_is_finite(self):
        out = ops.l2_normalize(Tensor(np.zeros((1, 3))))
        assert np.all(np.isfinite(out.data))

    def test_check_finite(self):
        with pytest.raises(NumericError):
            ops.check_finite(Tensor([1.0, np.nan]), "x")


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = param(rng, 3, 4)
        ops.sum(x).backward()
        np.testing.assert_array_equal(x.grad.data, np.ones((3, 4)))

    def test_sum_of_squares(self, rng):
        x = param(rng, 5)
        ops.sum(ops.mul(x, x)).backward()
        np.testing.assert_allclose(x.grad.data, 2 * x.data)

    def test_shared_subexpression_accumulates(self, rng):
        x = param(rng, 4)
        y = ops.relu(x)
        ops.sum(ops.add(y, y)).backward()
        np.testing.assert_allclose(x.grad.data, 2.0 * (x.data > 0))

    def test_non_scalar_loss(self, rng):
        with pytest.raises(ContractError):
            backward(param(rng, 2, 2))

    def test_no_grad_builds_no_graph(self, rng):
        x = param(rng, 3)
        with no_grad():
            y = ops.sum(ops.mul(x, x))
        assert not y.requires_grad


class TestGradientCheck:
    """解析梯度與中央差分的相對誤差 < 1e-4（float64）"""

    def test_matmul_bias(self, rng):
        a, b, bias = param(rng, 3, 4), param(rng, 4, 2), param(rng, 2)
        weights = rng.standard_normal((3, 2))
        fn = lambda: ops.sum(ops.mul(ops.bias_add(ops.matmul(a, b), bias), Tensor(weights)))  # noqa: E731
        assert max_gradient_error(fn, [a, b, bias]) < 1e-4

    def test_logsumexp_and_gather(self, rng):
        x = param(rng, 4, 4)
        mask = ~np.eye(4, dtype=bool)
        fn = lambda: ops.mean(ops.sub(ops.logsumexp_rows(x, mask),  # noqa: E731
                                      ops.gather_cols(x, np.array([1, 0, 3, 2]))))
        assert max_gradient_error(fn, [x]) < 1e-4

    def test_normalize_and_losses(self, rng):
        x = param(rng, 4, 3)
        labels = np.array([0, 2, 1, 2])
        fn = lambda: ops.softmax_cross_entropy(ops.l2_normalize(x), labels)  # noqa: E731
        assert max_gradient_error(fn, [x]) < 1e-4
        targets = rng.integers(0, 2, (4, 3)).astype(float)
        assert max_gradient_error(lambda: ops.sigmoid_bce(x, targets), [x]) < 1e-4

    def test_conv(self, rng):
        x, w, bias = param(rng, 2, 2, 5, 5), param(rng, 3, 2, 3, 3), param(rng, 3)
        weights = Tensor(rng.standard_normal((2, 3, 3, 3)))
        fn = lambda: ops.sum(ops.mul(ops.conv2d(x, w, stride=2, padding=1, bias=bias), weights))  # noqa: E731
        assert max_gradient_error(fn, [x, w, bias]) < 1e-4

    def test_pool_relu_directional(self, rng):
        x = param(rng, 1, 2, 4, 4)
        weights = Tensor(rng.standard_normal((1, 2)))
        fn = lambda: ops.sum(ops.mul(ops.global_avg_pool(ops.maxpool2d(ops.relu(x), 2)), weights))  # noqa: E731
        errors = [directional_gradient_error(fn, [x], rng) for _ in range(5)]
        measured = [e for e in errors if e is not None]
        assert measured and max(measured) < 1e-4
