import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egmf.errors import (
    ConfigError,
    ContractError,
    FiniteValueError,
    GraphConsumedError,
    ShapeError,
)
from egmf.gradcheck import check_gradients
from egmf.rng import RngState
from egmf.tensor import (
    Parameter,
    Tensor,
    activation,
    add,
    concat,
    gather_rows,
    gelu,
    init_parameter,
    log,
    log_softmax,
    matmul,
    mish,
    mul,
    power,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    softmax,
    softplus,
    stack_rows,
    sub,
    swish,
    tanh,
    tensor,
    tmean,
    transpose,
    tsum,
)


class TestTensorBasics:
    def test_flat_data_matches_shape(self):
        t = tensor([[1.0, 2.0], [3.0, 4.0]])
        assert t.shape == (2, 2)
        assert t.data.tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_constructor_rejects_non_finite(self):
        with pytest.raises(FiniteValueError):
            tensor([1.0, float("nan")])
        with pytest.raises(FiniteValueError):
            tensor([float("inf")])

    def test_matmul_shape_error_names_both_shapes(self):
        a = tensor(np.zeros((2, 3)))
        b = tensor(np.zeros((4, 2)))
        with pytest.raises(ShapeError) as exc:
            matmul(a, b)
        assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


class TestSoftmax:
    def test_uniform_on_equal_inputs(self):
        out = softmax(tensor([0.0, 0.0, 0.0]), axis=0).values
        np.testing.assert_allclose(out, [1 / 3] * 3, atol=1e-15)

    def test_stable_under_large_offsets(self):
        out = softmax(tensor([1000.0, 1000.0]), axis=0).values
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-15)

    def test_matches_extended_precision_formula(self):
        import mpmath

        mpmath.mp.dps = 50
        xs = [1.0, 2.0, 3.0]
        exps = [mpmath.e ** x for x in xs]
        total = sum(exps)
        expected = np.array([float(e / total) for e in exps])
        out = softmax(tensor(xs), axis=0).values
        np.testing.assert_allclose(out, expected, rtol=1e-14)

    def test_nan_input_raises(self):
        t = Tensor(np.array([1.0, float("nan")]))
        with pytest.raises(FiniteValueError):
            softmax(t, axis=0)

    def test_invalid_axis(self):
        with pytest.raises(ShapeError):
            softmax(tensor([1.0, 2.0]), axis=2)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(min_value=-750, max_value=750), min_size=1, max_size=12))
    def test_rows_sum_to_one_beyond_exp_range(self, row):
        out = softmax(tensor(row), axis=0).values
        assert abs(out.sum() - 1.0) <= 1e-12
        assert np.all(out >= 0.0)


class TestActivations:
    def test_all_vanish_at_origin(self):
        z = tensor([0.0])
        assert mish(z).values[0] == 0.0
        assert swish(z).values[0] == 0.0
        assert gelu(z).values[0] == 0.0

    def test_swish_matches_scalar_formula(self):
        # independent evaluation of x * (1 / (1 + e^-x)) at x = 1
        expected = 1.0 * (1.0 / (1.0 + math.exp(-1.0)))
        assert abs(swish(tensor([1.0])).values[0] - expected) < 1e-15

    def test_mish_matches_scalar_formula(self):
        x = 0.7
        expected = x * math.tanh(math.log1p(math.exp(x)))
        assert abs(mish(tensor([x])).values[0] - expected) < 1e-12

    def test_gelu_asymptote(self):
        assert abs(gelu(tensor([10.0])).values[0] - 10.0) < 1e-6

    def test_gelu_exact_gaussian_cdf_form(self):
        x = 0.5
        expected = x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
        assert abs(gelu(tensor([x])).values[0] - expected) < 1e-15

    def test_unknown_kind_is_config_error(self):
        with pytest.raises(ConfigError):
            activation(tensor([1.0]), "elu")

    def test_dispatch_matches_direct_calls(self):
        x = tensor([-1.5, 0.3, 2.0])
        np.testing.assert_array_equal(activation(x, "mish").values, mish(x).values)
        np.testing.assert_array_equal(activation(x, "GELU").values, gelu(x).values)


class TestBackward:
    def test_linear_case_grad_equals_input(self):
        x = np.array([1.5, -2.0, 3.25])
        w = tensor(np.array([0.1, 0.2, 0.3]), requires_grad=True)
        loss = tsum(mul(w, tensor(x)))
        loss.backward()
        np.testing.assert_array_equal(w.grad, x)

    def test_grad_accumulates_across_backwards(self):
        w = tensor([2.0], requires_grad=True)
        for _ in range(3):
            tsum(mul(w, w)).backward()
        np.testing.assert_allclose(w.grad, [12.0])

    def test_frozen_parameter_receives_no_grad(self):
        frozen = Parameter(tensor(np.ones((2, 2))), frozen=True)
        live = Parameter(tensor(np.full((2, 2), 0.5)))
        out = tsum(matmul(frozen.tensor, live.tensor))
        out.backward()
        assert frozen.grad is None
        assert live.grad is not None

    def test_backward_on_non_scalar_raises(self):
        w = tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            mul(w, w).backward()

    def test_second_backward_raises_graph_consumed(self):
        w = tensor(np.ones(3), requires_grad=True)
        loss = tsum(mul(w, w))
        loss.backward()
        with pytest.raises(GraphConsumedError):
            loss.backward()

    def test_backward_through_shared_subexpression(self):
        # d/dx of (x*x + x*x) = 4x
        x = tensor([3.0], requires_grad=True)
        sq = mul(x, x)
        loss = tsum(add(sq, sq))
        loss.backward()
        np.testing.assert_allclose(x.grad, [12.0])


def _rand(rng, shape, spread=1.0):
    return rng.normal(shape) * spread


class TestGradCheckPerOp:
    """Finite-difference checks for every differentiable primitive."""

    @pytest.mark.parametrize("seed", range(3))
    def test_matmul(self, seed):
        rng = RngState(seed)
        a = tensor(_rand(rng, (3, 4)), requires_grad=True)
        b = tensor(_rand(rng, (4, 2)), requires_grad=True)
        c = tensor(_rand(rng, (3, 2)))
        check_gradients(lambda: tsum(mul(matmul(a, b), c)), [a, b], rng=rng)

    @pytest.mark.parametrize(
        "op",
        [tanh, sigmoid, softplus, relu, lambda t: power(t, 3.0), mish, gelu, swish],
        ids=["tanh", "sigmoid", "softplus", "relu", "cube", "mish", "gelu", "swish"],
    )
    def test_elementwise(self, op):
        rng = RngState(17)
        # offset away from relu's kink at 0
        x = tensor(_rand(rng, (4, 5)) + 0.3, requires_grad=True)
        c = tensor(_rand(rng, (4, 5)))
        check_gradients(lambda: tsum(mul(op(x), c)), [x], rng=rng)

    def test_exp_log(self):
        rng = RngState(5)
        x = tensor(np.abs(_rand(rng, (3, 3))) + 0.5, requires_grad=True)
        from egmf.tensor import exp

        check_gradients(lambda: tsum(exp(x)), [x], rng=rng)
        check_gradients(lambda: tsum(log(x)), [x], rng=rng)

    def test_softmax_and_log_softmax(self):
        rng = RngState(6)
        x = tensor(_rand(rng, (3, 5), 2.0), requires_grad=True)
        c = tensor(_rand(rng, (3, 5)))
        check_gradients(lambda: tsum(mul(softmax(x, axis=1), c)), [x], rng=rng)
        check_gradients(lambda: tsum(mul(log_softmax(x, axis=1), c)), [x], rng=rng)

    def test_reductions_and_reshapes(self):
        rng = RngState(8)
        x = tensor(_rand(rng, (4, 6)), requires_grad=True)
        c = tensor(_rand(rng, (4, 1)))
        d = tensor(_rand(rng, (6, 4)))
        check_gradients(lambda: tsum(mul(tmean(x, axis=1, keepdims=True), c)), [x], rng=rng)
        check_gradients(lambda: tsum(mul(reshape(x, (6, 4)), d)), [x], rng=rng)
        check_gradients(lambda: tsum(mul(transpose(x), d)), [x], rng=rng)
        check_gradients(lambda: tsum(sub(tsum(x, axis=0), tensor(np.ones(6)))), [x], rng=rng)

    def test_broadcast_add_mul(self):
        rng = RngState(9)
        x = tensor(_rand(rng, (4, 6)), requires_grad=True)
        b = tensor(_rand(rng, (6,)), requires_grad=True)
        c = tensor(_rand(rng, (4, 6)))
        check_gradients(lambda: tsum(mul(add(x, b), c)), [x, b], rng=rng)
        check_gradients(lambda: tsum(mul(mul(x, b), c)), [x, b], rng=rng)

    def test_concat_slice_gather(self):
        rng = RngState(10)
        a = tensor(_rand(rng, (2, 3)), requires_grad=True)
        b = tensor(_rand(rng, (2, 3)), requires_grad=True)
        c = tensor(_rand(rng, (4, 3)))
        check_gradients(lambda: tsum(mul(concat([a, b], axis=0), c)), [a, b], rng=rng)
        check_gradients(
            lambda: tsum(slice_axis(concat([a, b], axis=1), 1, 1, 5)), [a, b], rng=rng
        )
        table = tensor(_rand(rng, (5, 3)), requires_grad=True)
        ids = [0, 2, 2, 4]
        check_gradients(lambda: tsum(power(gather_rows(table, ids), 2.0)), [table], rng=rng)

    def test_stack_rows(self):
        rng = RngState(11)
        u = tensor(_rand(rng, (4,)), requires_grad=True)
        v = tensor(_rand(rng, (4,)), requires_grad=True)
        c = tensor(_rand(rng, (2, 4)))
        check_gradients(lambda: tsum(mul(stack_rows([u, v]), c)), [u, v], rng=rng)


class TestGatherRows:
    def test_rows_match_table(self):
        table = tensor(RngState(1).normal((6, 4)))
        out = gather_rows(table, [3, 0, 3])
        np.testing.assert_array_equal(out.values[0], table.values[3])
        np.testing.assert_array_equal(out.values[1], table.values[0])
        assert out.values[0].tobytes() == out.values[2].tobytes()

    def test_scatter_add_on_repeated_ids(self):
        table = tensor(np.zeros((3, 2)), requires_grad=True)
        out = gather_rows(table, [1, 1, 1])
        tsum(out).backward()
        np.testing.assert_array_equal(table.grad[1], [3.0, 3.0])
        np.testing.assert_array_equal(table.grad[0], [0.0, 0.0])


class TestInitParameter:
    def test_zeros_and_ones(self):
        assert init_parameter((2, 2), "zeros").values.tolist() == [[0, 0], [0, 0]]
        assert init_parameter((3,), "ones").values.tolist() == [1, 1, 1]

    def test_xavier_deterministic(self):
        a = init_parameter((100, 100), "xavier_uniform", RngState(7))
        b = init_parameter((100, 100), "xavier_uniform", RngState(7))
        assert a.values.tobytes() == b.values.tobytes()

    def test_xavier_bound(self):
        v = init_parameter((1000, 1000), "xavier_uniform", RngState(3))
        bound = math.sqrt(6.0 / 2000.0)
        assert np.abs(v.values).max() <= bound

    def test_unknown_scheme(self):
        with pytest.raises(ConfigError):
            init_parameter((2,), "kaiming")

    def test_empty_shape_rejected(self):
        with pytest.raises(ConfigError):
            init_parameter((), "zeros")


class TestDeterminism:
    def test_forward_backward_bit_identical_across_runs(self):
        def run():
            rng = RngState(2024)
            w1 = tensor(rng.normal((6, 6)), requires_grad=True)
            w2 = tensor(rng.normal((6, 6)), requires_grad=True)
            x = tensor(rng.normal((3, 6)))
            h = gelu(matmul(x, w1))
            out = softmax(matmul(h, w2), axis=1)
            loss = tsum(mul(out, out))
            loss.backward()
            return out.values.tobytes(), w1.grad.tobytes(), w2.grad.tobytes()

        assert run() == run()
