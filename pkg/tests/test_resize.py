import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igaf.resize import bicubic_resize, cubic_kernel
from igaf.tensor import Tensor


def interior(n_in, n_out):
    """Output indices whose four taps all fall inside [0, n_in)."""
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    base = np.floor(src)
    return np.nonzero((base - 1 >= 0) & (base + 2 <= n_in - 1))[0]


def test_kernel_partition_of_unity():
    t = np.linspace(0, 1, 11)
    total = sum(cubic_kernel(t - off) for off in (-1, 0, 1, 2))
    np.testing.assert_allclose(total, 1.0, atol=1e-15)


@given(
    value=st.floats(-1e4, 1e4, allow_nan=False),
    h=st.integers(1, 12),
    w=st.integers(1, 12),
    oh=st.integers(1, 30),
    ow=st.integers(1, 30),
)
@settings(max_examples=60, deadline=None)
def test_constant_exact(value, h, w, oh, ow):
    for dtype in (np.float32, np.float64):
        x = np.full((1, 1, h, w), value, dtype=dtype)
        out = bicubic_resize(x, oh, ow)
        assert out.dtype == dtype
        assert (out == dtype(value)).all()


@pytest.mark.parametrize("n_in,n_out", [(16, 32), (16, 64), (32, 16), (64, 16)])
def test_linear_ramp_reproduced(n_in, n_out):
    ramp = np.tile(0.25 * np.arange(n_in, dtype=np.float64) + 3.0, (1, 1, 6, 1))
    out = bicubic_resize(ramp, 6, n_out)
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    cols = interior(n_in, n_out)
    assert len(cols) > 0
    np.testing.assert_allclose(out[0, 0][:, cols], np.broadcast_to(0.25 * src[cols] + 3.0, (6, len(cols))), atol=1e-5)


def test_vertical_ramp():
    ramp = np.tile(np.arange(16.0)[:, None], (1, 1, 1, 5))
    out = bicubic_resize(ramp, 64, 5)
    rows = interior(16, 64)
    src = (np.arange(64) + 0.5) / 4 - 0.5
    np.testing.assert_allclose(out[0, 0, rows, 0], src[rows], atol=1e-5)


def test_same_size_identity():
    x = np.random.default_rng(0).normal(size=(2, 3, 9, 7))
    np.testing.assert_allclose(bicubic_resize(x, 9, 7), x, atol=1e-6)


def test_round_trip_beats_nearest():
    yy, xx = np.mgrid[0:64, 0:64] / 64.0
    img = np.sin(2 * np.pi * xx) * np.cos(np.pi * yy) + 0.5 * xx
    img = img[None, None]
    bic = bicubic_resize(bicubic_resize(img, 16, 16), 64, 64)
    nearest_small = img[..., 1::4, 1::4]
    nearest = np.repeat(np.repeat(nearest_small, 4, axis=2), 4, axis=3)
    err_bic = np.sqrt(np.mean((bic - img) ** 2))
    err_nn = np.sqrt(np.mean((nearest - img) ** 2))
    assert err_bic < err_nn


def test_tensor_in_tensor_out():
    out = bicubic_resize(Tensor(np.ones((1, 1, 4, 4), dtype=np.float32)), 8, 8)
    assert isinstance(out, Tensor) and out.shape == (1, 1, 8, 8) and not out.requires_grad


def test_bad_size():
    with pytest.raises(ValueError):
        bicubic_resize(np.ones((1, 1, 4, 4)), 0, 3)
