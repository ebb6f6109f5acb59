import numpy as np
import pytest

from igaf.errors import NumericalError
from igaf.gradcheck import grad_check
from igaf.tensor import Tensor, conv2d, dropout, global_avg_pool, leaky_relu, linear, mul, relu, sigmoid


def away_from_zero(rng, shape, margin=1e-3):
    x = rng.uniform(-2, 2, size=shape)
    x[np.abs(x) < margin] = margin * 2
    return Tensor(x)


def test_identity():
    x = Tensor(np.random.default_rng(0).normal(size=(1, 1, 3, 3)))
    assert grad_check(lambda t: t, [x]) < 1e-10


def test_leaky_relu_away_from_kink():
    x = away_from_zero(np.random.default_rng(1), (1, 2, 4, 4))
    assert grad_check(lambda t: leaky_relu(t, 0.1), [x]) < 1e-7


@pytest.mark.parametrize(
    "make",
    [
        lambda r: (lambda x, w, b: conv2d(x, w, b, padding=2, dilation=2), [r((1, 2, 5, 5)), r((3, 2, 3, 3)), r((3,))]),
        lambda r: (lambda x, w, b: linear(x, w, b), [r((1, 3, 2, 2)), r((2, 3)), r((2,))]),
        lambda r: (sigmoid, [r((1, 2, 3, 3))]),
        lambda r: (relu, [r((1, 2, 3, 3))]),
        lambda r: (global_avg_pool, [r((2, 3, 3, 4))]),
        lambda r: (lambda a, g: mul(a, g), [r((1, 3, 3, 3)), r((1, 3, 1, 1))]),
    ],
    ids=["conv2d", "linear", "sigmoid", "relu", "pool", "gate_mul"],
)
def test_ops(make):
    rng = np.random.default_rng(2)
    f, inputs = make(lambda shape: away_from_zero(rng, shape))
    assert grad_check(f, inputs) < 1e-5


def test_seeded_dropout_is_deterministic_enough():
    x = away_from_zero(np.random.default_rng(3), (1, 1, 4, 4))
    f = lambda t: dropout(t, 0.5, True, np.random.default_rng(9))  # noqa: E731
    assert grad_check(f, [x]) < 1e-8


def test_detects_nondeterminism():
    x = Tensor(np.ones((1, 1, 2, 2)))
    rng = np.random.default_rng(0)
    with pytest.raises(NumericalError):
        grad_check(lambda t: dropout(t, 0.5, True, rng), [x])


def test_inputs_restored():
    x = away_from_zero(np.random.default_rng(4), (1, 1, 3, 3))
    before = x.data.copy()
    grad_check(sigmoid, [x])
    np.testing.assert_array_equal(x.data, before)
