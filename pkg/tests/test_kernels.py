import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dppn.engine import activate
from dppn.genome import Transfer
from dppn.kernels import CODES, transfer_values, vexp, vsin, vtanh

SPECIAL = np.array([0.0, -0.0, 1e-300, -1e-300, 708.5, 709.5, 709.9, 710.0, -708.5, -720.0,
                    -745.5, -800.0, 1e5, -1e5, 1e5 + 1, 3e7, np.inf, -np.inf, np.nan])


def sample(seed):
    rng = np.random.default_rng(seed)
    scales = 10.0 ** rng.uniform(-12, 3, 4000)
    return np.concatenate([rng.normal(size=4000) * scales, SPECIAL])


def run(fn, x, *extra):
    out = np.empty_like(x)
    fn(x, out, x.size, *extra)
    return out


def same_non_finite(a, b):
    return np.array_equal(np.isnan(a), np.isnan(b)) and np.array_equal(np.isposinf(a), np.isposinf(b)) \
        and np.array_equal(np.isneginf(a), np.isneginf(b))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_exp_and_tanh_within_few_ulp(seed):
    x = sample(seed)
    k = np.empty(x.size, np.int64)
    with np.errstate(over="ignore"):
        for got, ref in ((run(vexp, x, k), np.exp(x)), (run(vtanh, x, k), np.tanh(x))):
            assert same_non_finite(got, ref)
            f = np.isfinite(ref) & (ref != 0)
            assert np.max(np.abs(got[f] - ref[f]) / np.abs(ref[f])) < 1e-15
            assert np.array_equal(got[ref == 0], ref[ref == 0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_sin_cos_absolute_error(seed):
    x = sample(seed)
    with np.errstate(invalid="ignore"):
        refs = ((0, np.sin(x)), (1, np.cos(x)))
    for shift, ref in refs:
        got = run(vsin, x, shift)
        assert same_non_finite(got, ref)
        f = np.isfinite(ref)
        assert np.max(np.abs(got[f] - ref[f])) < 5e-16


def test_tanh_keeps_sign_of_zero_and_tiny_values():
    x = np.array([0.0, -0.0, 1e-20, -3e-200])
    got = run(vtanh, x, np.empty(4, np.int64))
    assert np.array_equal(got, x) and np.array_equal(np.signbit(got), np.signbit(x))


@pytest.mark.parametrize("tag", list(Transfer))
def test_kernel_transfer_matches_reference(tag):
    x = sample(1)
    with np.errstate(all="ignore"):
        ref = activate(tag, x)
    got = transfer_values(CODES[tag], x)
    assert same_non_finite(got, ref)
    f = np.isfinite(ref)
    assert np.allclose(got[f], ref[f], rtol=1e-15, atol=1e-300)
