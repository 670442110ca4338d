"""Tensor primitives: forward values, gradients, and graph behavior."""

import math

import numpy as np
import pytest

from panact import tensor as T
from panact.tensor import (
    NumericError,
    ShapeError,
    Tensor,
    concat,
    gather_rows,
    grad_check,
    set_debug_checks,
)


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestForwardValues:
    def test_matmul_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = a @ Tensor(np.eye(2))
        assert np.array_equal(out.data, a.data)

    def test_mean(self):
        assert Tensor([2.0, 4.0, 6.0]).mean().item() == 4.0

    def test_sigmoid_zero(self):
        assert Tensor([0.0]).sigmoid().data[0] == 0.5

    def test_sigmoid_no_overflow(self):
        out = Tensor([-1000.0, 1000.0]).sigmoid().data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(0.0, abs=1e-12)
        assert out[1] == pytest.approx(1.0, abs=1e-12)

    def test_relu(self):
        out = Tensor([-2.0, 0.0, 3.0]).relu().data
        assert np.array_equal(out, [0.0, 0.0, 3.0])

    def test_scalar_arithmetic(self):
        x = Tensor([1.0, 2.0])
        assert np.array_equal((2.0 * x + 1.0).data, [3.0, 5.0])
        assert np.array_equal((1.0 - x).data, [0.0, -1.0])


class TestSoftmax:
    def test_symmetry(self):
        out = Tensor([0.0, 0.0]).softmax().data
        assert np.array_equal(out, [0.5, 0.5])

    def test_stability_under_shift(self):
        out = Tensor([1000.0, 1000.0]).softmax().data
        assert np.array_equal(out, [0.5, 0.5])

    def test_hand_value(self):
        out = Tensor([0.0, math.log(3.0)]).softmax().data
        assert np.allclose(out, [0.25, 0.75], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(7, 11)) * 10)
        rows = x.softmax(axis=-1).data.sum(axis=-1)
        assert np.all(np.abs(rows - 1.0) < 1e-9)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 5))
        a = Tensor(x).softmax(axis=-1).data
        b = Tensor(x + 3.7).softmax(axis=-1).data
        assert np.all(np.abs(a - b) < 1e-12)


class TestShapeErrors:
    def test_add_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4, 5)))

    def test_matmul_mismatch(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    def test_backward_requires_scalar(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            (x + 1.0).backward()


class TestGradCheck:
    """Every primitive matches central finite differences below 1e-6."""

    H = 1e-5
    TOL = 1e-6

    def check(self, f, params):
        assert grad_check(f, params, h=self.H) < self.TOL

    def test_sum_of_squares_hand_case(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        err = grad_check(lambda: (x * x).sum(), [x], h=1e-5)
        x.zero_grad()
        loss = (x * x).sum()
        loss.backward()
        assert np.allclose(x.grad, [2.0, 4.0])
        assert err < 1e-7

    def test_linear_function_is_exact(self):
        x = Tensor([0.3, -0.7, 1.1], requires_grad=True)
        w = Tensor([2.0, -1.0, 0.5])
        assert grad_check(lambda: (x * w).sum(), [x], h=1e-5) < 1e-9

    @pytest.mark.parametrize("name", [
        "add", "sub", "mul", "div", "neg", "matmul", "batched_matmul",
        "transpose", "reshape", "slice", "gather", "concat", "sum_axis",
        "mean_axis", "broadcast", "exp", "log", "sqrt", "pow", "relu",
        "sigmoid", "softmax", "clip",
    ])
    def test_primitive(self, name):
        rng = np.random.default_rng(hash(name) % 2**32)
        w = Tensor(rng.normal(size=(3, 4)))  # fixed mixing weights
        a = leaf(rng, 3, 4)
        b = leaf(rng, 3, 4)
        if name == "add":
            f = lambda: ((a + b) * w).sum()
        elif name == "sub":
            f = lambda: ((a - b) * w).sum()
        elif name == "mul":
            f = lambda: ((a * b) * w).sum()
        elif name == "div":
            b.data = np.abs(b.data) + 0.5
            f = lambda: ((a / b) * w).sum()
        elif name == "neg":
            f = lambda: ((-a) * w).sum()
        elif name == "matmul":
            b = leaf(rng, 4, 2)
            mix = Tensor(rng.normal(size=(3, 2)))
            f = lambda: ((a @ b) * mix).sum()
        elif name == "batched_matmul":
            a = leaf(rng, 2, 3, 4)
            b = leaf(rng, 2, 4, 3)
            mix = Tensor(rng.normal(size=(2, 3, 3)))
            f = lambda: ((a @ b) * mix).sum()
        elif name == "transpose":
            a = leaf(rng, 2, 3, 4)
            mix = Tensor(rng.normal(size=(4, 2, 3)))
            f = lambda: (a.transpose((2, 0, 1)) * mix).sum()
        elif name == "reshape":
            mix = Tensor(rng.normal(size=(2, 6)))
            f = lambda: (a.reshape(2, 6) * mix).sum()
        elif name == "slice":
            mix = Tensor(rng.normal(size=(2, 2)))
            f = lambda: (a[1:, :2] * mix).sum()
        elif name == "gather":
            idx = np.array([2, 0, 2, 1])
            mix = Tensor(rng.normal(size=(4, 4)))
            f = lambda: (gather_rows(a, idx) * mix).sum()
        elif name == "concat":
            mix = Tensor(rng.normal(size=(6, 4)))
            f = lambda: (concat([a, b], axis=0) * mix).sum()
        elif name == "sum_axis":
            mix = Tensor(rng.normal(size=(4,)))
            f = lambda: (a.sum(axis=0) * mix).sum()
        elif name == "mean_axis":
            a = leaf(rng, 2, 3, 4)
            mix = Tensor(rng.normal(size=(3,)))
            f = lambda: (a.mean(axis=(0, 2)) * mix).sum()
        elif name == "broadcast":
            a = leaf(rng, 1, 4)
            mix = Tensor(rng.normal(size=(3, 4)))
            f = lambda: (a.broadcast_to((3, 4)) * mix).sum()
        elif name == "exp":
            f = lambda: ((a * 0.3).exp() * w).sum()
        elif name == "log":
            a.data = np.abs(a.data) + 0.5
            f = lambda: (a.log() * w).sum()
        elif name == "sqrt":
            a.data = np.abs(a.data) + 0.5
            f = lambda: (a.sqrt() * w).sum()
        elif name == "pow":
            a.data = np.abs(a.data) + 0.5
            f = lambda: (a.pow(-0.5) * w).sum()
        elif name == "relu":
            a.data = np.where(np.abs(a.data) < 0.1, 0.5, a.data)  # stay off the kink
            f = lambda: (a.relu() * w).sum()
        elif name == "sigmoid":
            f = lambda: (a.sigmoid() * w).sum()
        elif name == "softmax":
            f = lambda: (a.softmax(axis=-1) * w).sum()
        elif name == "clip":
            a.data = np.clip(a.data, -0.8, 0.8)  # interior of the clip range
            f = lambda: (a.clip(-1.0, 1.0) * w).sum()
        else:
            raise AssertionError(name)
        self.check(f, [a, b] if b.requires_grad else [a])

    def test_broadcast_add_gradients(self):
        rng = np.random.default_rng(5)
        a = leaf(rng, 3, 4)
        bias = leaf(rng, 4)
        mix = Tensor(rng.normal(size=(3, 4)))
        self.check(lambda: ((a + bias) * mix).sum(), [a, bias])

    def test_repeated_use_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * x + x  # dy/dx = 2x + 1 = 5
        y.backward()
        assert np.allclose(x.grad, [5.0])


class TestGraphBehavior:
    def test_gradients_unaffected_by_unrelated_graph(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        loss1 = (x * x).sum()
        loss1.backward()
        g1 = x.grad.copy()
        x.zero_grad()
        unrelated = (Tensor(np.ones(5), requires_grad=True).exp()).sum()
        loss2 = (x * x).sum()
        loss2.backward()
        assert np.array_equal(g1, x.grad)
        assert unrelated.item() > 0

    def test_backward_is_deterministic(self):
        rng = np.random.default_rng(9)
        data = rng.normal(size=(5, 5))
        grads = []
        for _ in range(2):
            x = Tensor(data.copy(), requires_grad=True)
            ((x @ x).softmax(axis=-1).mean()).backward()
            grads.append(x.grad.copy())
        assert np.array_equal(grads[0], grads[1])

    def test_detach_blocks_gradient(self):
        x = Tensor([3.0], requires_grad=True)
        y = x.detach() * 2.0
        assert not y.requires_grad

    def test_no_grad_tracking_without_requires_grad(self):
        out = Tensor([1.0]) + Tensor([2.0])
        assert out._parents == ()


class TestDebugChecks:
    def test_nan_raises_with_op_name(self):
        set_debug_checks(True)
        try:
            with np.errstate(invalid="ignore"):
                with pytest.raises(NumericError, match="log"):
                    Tensor([-1.0]).log()
        finally:
            set_debug_checks(False)

    def test_disabled_by_default(self):
        with np.errstate(invalid="ignore"):
            out = Tensor([-1.0]).log()
        assert np.isnan(out.data[0])
