import numpy as np
import pytest

from fibernle.nn import autodiff as ad
from fibernle.nn import gradcheck
from fibernle.nn.autodiff import ShapeError, Tensor


class TestForward:
    def test_relu_values_and_gradient(self):
        x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
        y = ad.relu(x)
        assert list(y.data) == [0.0, 0.0, 2.0]
        ad.sum_(y).backward()
        assert list(x.grad) == [0.0, 0.0, 1.0]

    def test_softmax_rows_sum_to_one(self):
        x = np.random.default_rng(0).normal(size=(6, 9)) * 30
        assert np.allclose(ad.softmax(Tensor(x), -1).data.sum(axis=-1), 1.0, atol=1e-9)

    def test_layer_norm_moments(self):
        x = np.random.default_rng(1).normal(3.0, 5.0, size=(8, 32))
        y = ad.layer_norm(Tensor(x), -1, 1e-5).data
        assert np.max(np.abs(y.mean(axis=-1))) < 1e-9
        assert np.allclose(y.var(axis=-1), 1.0, atol=1e-6)

    def test_mse(self):
        assert ad.mse_loss(Tensor([1.0, 0.0]), Tensor([1.0, 0.0])).data == 0.0
        assert ad.mse_loss(Tensor([1.0, 0.0]), Tensor([0.0, 0.0])).data == pytest.approx(0.5)

    def test_mse_gradient_formula(self):
        y = np.array([[1.0, -2.0], [0.5, 0.0]])
        a = Tensor(np.array([[0.0, 1.0], [2.0, 2.0]]), requires_grad=True)
        ad.mse_loss(Tensor(y), a).backward()
        assert np.allclose(a.grad, 2 * (a.data - y) / y.size)

    def test_linear_matches_matmul_plus_bias(self):
        rng = np.random.default_rng(2)
        x, w, b = rng.normal(size=(4, 3, 5)), rng.normal(size=(5, 2)), rng.normal(size=2)
        assert np.allclose(ad.linear(Tensor(x), Tensor(w), Tensor(b)).data, x @ w + b, atol=1e-14)


class TestDropout:
    def test_fraction_and_scaling(self):
        x = Tensor(np.ones((400, 500)))
        y = ad.dropout(x, 0.1, np.random.default_rng(0), training=True).data
        dropped = np.mean(y == 0)
        assert abs(dropped - 0.1) <= 0.02
        assert np.allclose(y[y != 0], 1 / 0.9)

    def test_eval_is_identity(self):
        x = Tensor(np.random.default_rng(1).normal(size=(5, 7)))
        assert ad.dropout(x, 0.5, None, training=False) is x

    def test_training_needs_rng(self):
        with pytest.raises(ValueError):
            ad.dropout(Tensor(np.ones(3)), 0.1, None, training=True)

    @pytest.mark.parametrize("p", [-0.1, 1.0])
    def test_bad_probability(self, p):
        with pytest.raises(ValueError):
            ad.dropout(Tensor(np.ones(3)), p, np.random.default_rng(0), training=True)


class TestGraph:
    def test_gradient_accumulates_over_reuse(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        y = ad.add(ad.mul(x, x), x)  # x^2 + x
        ad.sum_(y).backward()
        assert np.allclose(x.grad, 2 * x.data + 1)

    def test_no_graph_without_grad(self):
        y = ad.mul(Tensor(np.ones(3)), 2.0)
        assert not y.requires_grad and y._parents == ()

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            ad.mul(x, 2.0).backward()

    def test_deep_chain_is_iterative(self):
        x = Tensor(np.array(1.0), requires_grad=True)
        y = x
        for _ in range(5000):
            y = ad.add(y, 0.0)
        y.backward()
        assert x.grad == 1.0


class TestShapeErrors:
    @pytest.mark.parametrize(
        "fn, shapes, name",
        [
            (ad.add, [(2, 3), (4, 3)], "add"),
            (ad.mul, [(2, 3), (2, 4)], "mul"),
            (ad.matmul, [(2, 3), (4, 5)], "matmul"),
            (ad.mse_loss, [(2, 2), (2, 3)], "mse_loss"),
        ],
    )
    def test_message_names_op_and_shapes(self, fn, shapes, name):
        args = [Tensor(np.zeros(s)) for s in shapes]
        with pytest.raises(ShapeError, match=name) as err:
            fn(*args)
        assert str(shapes[0]) in str(err.value)

    def test_reshape_and_transpose(self):
        with pytest.raises(ShapeError, match="reshape"):
            ad.reshape(Tensor(np.zeros((2, 3))), (4, 2))
        with pytest.raises(ShapeError, match="transpose"):
            ad.transpose(Tensor(np.zeros((2, 3))), (0, 0))


class TestDtype:
    def test_float32_context(self):
        with ad.default_dtype("float32"):
            t = ad.mul(Tensor(np.ones(3)), 2.0)
            assert t.data.dtype == np.float32
        assert Tensor(np.ones(3)).data.dtype == np.float64

    def test_rejects_other_types(self):
        with pytest.raises(ValueError):
            with ad.default_dtype("int32"):
                pass


class TestGradientSuite:
    """Central differences (h = 1e-4, double precision) against backward()."""

    @pytest.fixture(scope="class")
    @staticmethod
    def op_errors():
        return gradcheck.op_gradient_errors(seed=0)

    @pytest.mark.parametrize(
        "op",
        ["add", "add_broadcast", "neg", "mul", "mul_broadcast", "matmul", "matmul_shared", "matmul_batched",
         "linear", "relu", "softmax", "softmax_axis0", "layer_norm", "dropout", "reshape", "transpose", "sum",
         "mean", "mse_loss"],
    )
    def test_op(self, op_errors, op):
        assert op_errors[op] < 1e-4

    def test_layers(self):
        errors = gradcheck.layer_gradient_errors(seed=1)
        assert max(errors.values()) < 1e-4, errors

    def test_numerical_grad_oracle(self):
        # the oracle itself on a function with a known gradient
        x = np.array([0.3, -1.2, 2.0])
        g = ad.numerical_grad(lambda: np.sum(np.sin(x)), x)
        assert np.allclose(g, np.cos(x), atol=1e-8)

    def test_relative_error_floor(self):
        assert ad.relative_error(np.zeros(3), np.zeros(3)) == 0.0
        assert ad.relative_error(np.zeros(3), np.full(3, 1e-12), floor=1e-6) < 1e-5
