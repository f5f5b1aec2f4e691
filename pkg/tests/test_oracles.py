import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from piengine.builders import gaussian_basis
from piengine.errors import BudgetExceededError, ShapeMismatchError
from piengine.oracles import (
    oracle_attention,
    oracle_gating,
    oracle_harmonic,
    oracle_multiply_bruteforce,
    oracle_se3_attention,
    oracle_selective_injection,
    oracle_ssm,
    oracle_tfn,
    oracle_xcorr2d,
    oracle_xcorr2d_scatter,
)
from piengine.representations import random_real_field


def test_delta_kernel_is_identity(rng):
    X = rng.normal(size=(4, 5))
    K = np.zeros((3, 3))
    K[1, 1] = 1.0
    assert_allclose(oracle_xcorr2d(X, K), X)


def test_cyclic_offset_kernel_rolls(rng):
    X = rng.normal(size=(4, 5))
    K = np.zeros((3, 3))
    K[2, 1] = 1.0
    assert_allclose(oracle_xcorr2d(X, K, "cyclic"), np.roll(X, -1, axis=0))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["zero", "cyclic"]))
def test_xcorr_loop_orderings_agree(seed, boundary):
    rng = np.random.default_rng(seed)
    X = rng.integers(-5, 6, size=(5, 4)).astype(float)
    K = rng.integers(-3, 4, size=(3, 3)).astype(float)
    assert np.array_equal(oracle_xcorr2d(X, K, boundary), oracle_xcorr2d_scatter(X, K, boundary))


def test_identity_gate_with_unit_weights():
    X, Y = np.array([1.0, -2.0]), np.array([3.0, 4.0])
    assert_allclose(oracle_gating(X, Y, np.eye(2), "identity"), X * Y)


def test_single_token_attention_returns_its_value(rng):
    x = rng.normal(size=(1, 3))
    Wq, Wk, Wv = (rng.normal(size=(3, 3)) for _ in range(3))
    assert_allclose(oracle_attention(x, Wq, Wk, Wv), (Wv @ x[0])[None, :])


def test_zero_queries_average_the_visible_values(rng):
    tokens = rng.normal(size=(4, 2))
    Wv = rng.normal(size=(2, 2))
    out = oracle_attention(tokens, np.zeros((2, 2)), rng.normal(size=(2, 2)), Wv)
    values = tokens @ Wv.T
    expected = np.cumsum(values, axis=0) / np.arange(1, 5)[:, None]
    assert_allclose(out, expected)


def test_ssm_cumulative_sum():
    inputs = np.array([[1.0], [2.0], [-0.5]])
    states, outputs = oracle_ssm(inputs, np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1)), dt=1.0)
    assert_allclose(outputs[:, 0], [1.0, 3.0, 2.5])
    assert states.shape == (3, 1, 1)


def test_selective_injection_with_neutral_gate(rng):
    x = rng.normal(size=2)
    WB = rng.normal(size=(3, 2))
    out = oracle_selective_injection(x, WB, np.zeros((2, 2)), np.zeros(2))
    assert_allclose(out, 0.5 * np.outer(x, WB @ x))


def test_bruteforce_b2_is_elementwise(rng):
    lam = np.zeros((3, 3, 3))
    for a in range(3):
        lam[a, a, a] = 1.0
    x, y = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    assert_allclose(oracle_multiply_bruteforce(x, y, [lam, lam]), x * y)


def test_bruteforce_limits():
    lam = np.zeros((50, 50, 50))
    big = np.zeros((50, 50, 50))
    with pytest.raises(BudgetExceededError):
        oracle_multiply_bruteforce(big, big, [lam, lam, lam])
    with pytest.raises(ShapeMismatchError):
        oracle_multiply_bruteforce(np.zeros(2), np.zeros(3), [np.zeros((2, 2, 2))])


def test_scalar_harmonic_pair(rng):
    features = rng.normal(size=(2, 1)) + 1j * rng.normal(size=(2, 1))
    positions = np.array([[0.0, 0.0], [0.6, 0.8]])
    radial = rng.normal(size=(1, 3))
    out = oracle_harmonic(features, positions, radial, 0)
    profile = gaussian_basis(np.array([1.0]), 3, 2.0)[0] @ radial[0]
    assert_allclose(out[0, 0], profile * features[1, 0])
    assert_allclose(out[1, 0], profile * features[0, 0])


def test_tfn_with_zero_radial_is_zero(rng):
    features = random_real_field(rng, 3, 1)
    out = oracle_tfn(features, rng.normal(size=(3, 3)), np.zeros((2, 3)), 1)
    assert_allclose(out, 0.0)


def test_se3_empty_neighbourhood_gives_zero(rng):
    features = random_real_field(rng, 3, 1)
    positions = rng.normal(size=(3, 3))
    out = oracle_se3_attention(features, positions, {0: (), 1: (2,), 2: (1,)}, rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), rng.normal(size=2), 1)
    assert_allclose(out[0], 0.0)
    assert np.any(out[1] != 0)
