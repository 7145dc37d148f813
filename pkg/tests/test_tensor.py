"""Engine-level checks: frozen small cases, finite-difference oracle over the
whole op registry, and the bookkeeping invariants of the tape."""

import numpy as np
import pytest

from ila.gradcheck import check_function, run_op_suite
from ila.tensor import (
    NonFinite,
    NotScalar,
    OPS,
    ShapeMismatch,
    Tape,
    Tensor,
    concat,
    const,
    matmul,
    param,
)


class TestForwardValues:
    def test_matmul_identity(self):
        a = const([[1.0, 2.0], [3.0, 4.0]])
        eye = const(np.eye(2))
        assert np.array_equal(matmul(a, eye).data, a.data)

    def test_mean_simple(self):
        assert const([1.0, 2.0, 3.0, 4.0]).mean().item() == 2.5

    def test_concat_shape(self):
        out = concat([const(np.zeros((2, 4))), const(np.ones((2, 4)))], axis=1)
        assert out.shape == (2, 8)
        assert out.data[0, 0] == 0.0 and out.data[0, 7] == 1.0

    def test_scalar_arithmetic(self):
        x = const([1.0, -2.0])
        assert np.allclose((2.0 * x + 1.0).data, [3.0, -3.0])
        assert np.allclose((x / 2.0).data, [0.5, -1.0])
        assert np.allclose((1.0 - x).data, [0.0, 3.0])

    def test_relu_kink_value(self):
        x = const([-1.0, 0.0, 2.0])
        assert np.array_equal(x.relu().data, [0.0, 0.0, 2.0])


class TestBackwardValues:
    def test_sum_grad_is_ones(self):
        x = param(np.arange(6.0).reshape(2, 3))
        with Tape() as tape:
            loss = x.sum()
        g = tape.backward(loss)[x].data
        assert np.array_equal(g, np.ones((2, 3)))

    def test_dot_grad_is_other_vector(self):
        x = param([1.0, 1.0])
        y = const([2.0, 4.0])
        with Tape() as tape:
            loss = (x * y).sum()
        assert np.array_equal(tape.backward(loss)[x].data, [2.0, 4.0])

    def test_fanout_accumulates(self):
        x = param([3.0])
        with Tape() as tape:
            loss = (x * x).sum()
        assert tape.backward(loss)[x].data[0] == 6.0

    def test_relu_kink_subgradient_zero(self):
        x = param([-1.0, 0.0, 2.0])
        with Tape() as tape:
            loss = x.relu().sum()
        assert np.array_equal(tape.backward(loss)[x].data, [0.0, 0.0, 1.0])

    def test_broadcast_backward_sums(self):
        x = param(np.ones((3, 1)))
        with Tape() as tape:
            loss = x.broadcast_to((2, 3, 4)).sum()
        assert np.array_equal(tape.backward(loss)[x].data, np.full((3, 1), 8.0))

    def test_backward_bit_identical_twice(self):
        rng = np.random.default_rng(7)
        a = param(rng.standard_normal((4, 4)))
        b = param(rng.standard_normal((4, 4)))
        with Tape() as tape:
            loss = (matmul(a, b).tanh() * matmul(b, a).sigmoid()).mean()
        g1 = tape.backward(loss)
        g2 = tape.backward(loss)
        assert np.array_equal(g1[a].data, g2[a].data)
        assert np.array_equal(g1[b].data, g2[b].data)

    def test_backward_linearity(self):
        rng = np.random.default_rng(3)
        x = param(rng.standard_normal(5))

        def grad_of(ca, cb):
            with Tape() as tape:
                loss = ca * x.tanh().sum() + cb * (x * x).sum()
            return tape.backward(loss)[x].data

        combined = grad_of(2.0, -3.0)
        parts = 2.0 * grad_of(1.0, 0.0) - 3.0 * grad_of(0.0, 1.0)
        assert np.allclose(combined, parts, atol=1e-12)

    def test_constant_inputs_get_no_grad(self):
        x = param([1.0])
        c = const([5.0])
        with Tape() as tape:
            loss = (x * c).sum()
        grads = tape.backward(loss)
        assert c not in grads

    def test_detach_blocks_gradient(self):
        x = param([2.0])
        with Tape() as tape:
            loss = (x * x.detach()).sum()
        assert tape.backward(loss)[x].data[0] == 2.0


class TestErrors:
    def test_no_implicit_broadcast(self):
        with pytest.raises(ShapeMismatch):
            const(np.zeros((2, 3))) + const(np.zeros((3,)))
        with pytest.raises(ShapeMismatch):
            const(np.zeros((2, 3))) * const(np.zeros((2, 1)))

    def test_matmul_shape_errors(self):
        with pytest.raises(ShapeMismatch):
            matmul(const(np.zeros((2, 3))), const(np.zeros((4, 5))))
        with pytest.raises(ShapeMismatch):
            matmul(const(np.zeros((2, 2, 3))), const(np.zeros((3, 3, 5))))

    def test_nonfinite_detected(self):
        with pytest.raises(NonFinite):
            const([1.0]) / const([0.0])
        with pytest.raises(NonFinite):
            const([1000.0]).exp()
        with pytest.raises(NonFinite):
            const([-1.0]).log()

    def test_backward_rejects_non_scalar(self):
        x = param(np.ones(3))
        with Tape() as tape:
            y = x * x
        with pytest.raises(NotScalar):
            tape.backward(y)

    def test_mixed_dtype_rejected(self):
        a = const(np.zeros(3), dtype=np.float64)
        b = const(np.zeros(3), dtype=np.float32)
        with pytest.raises(ValueError):
            a + b


class TestGradientOracle:
    def test_every_registered_op_matches_finite_differences(self):
        results = run_op_suite(seed=0, tol=1e-4)
        assert {r.kind for r in results} == set(OPS)
        bad = [r for r in results if not r.ok]
        assert not bad, f"ops failing FD check: {[(r.kind, r.max_rel_err) for r in bad]}"

    def test_composite_directional_derivative(self):
        rng = np.random.default_rng(11)
        w = param(rng.standard_normal((6, 6)))
        b = param(rng.standard_normal(6))

        def f():
            x = const(np.linspace(-1.0, 1.0, 18).reshape(3, 6))
            h = matmul(x, w) + b.reshape(1, 6).broadcast_to((3, 6))
            return (h.tanh() * h.sigmoid()).mean()

        assert check_function(f, [w, b], rng) < 1e-6


class TestDtypes:
    def test_float32_pipeline(self):
        rng = np.random.default_rng(0)
        x = param(rng.standard_normal((3, 3)), dtype=np.float32)
        with Tape() as tape:
            loss = matmul(x, x).tanh().mean()
        g = tape.backward(loss)[x]
        assert g.data.dtype == np.float32
        assert g.shape == (3, 3)

    def test_default_dtype_is_float64(self):
        assert const([1.0]).data.dtype == np.float64
