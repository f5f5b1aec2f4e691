import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from piengine.builders import (
    attention_weights,
    build_attention,
    build_conv2d,
    build_gating,
    build_harmonic,
    build_se3_attention,
    build_tfn,
    build_tpa,
    conv_offsets,
    gaussian_basis,
    tpa_weights,
)
from piengine.errors import (
    InvalidDimensionError,
    MissingBlockError,
    ShapeMismatchError,
    TruncationError,
)
from piengine.oracles import (
    oracle_attention,
    oracle_gating,
    oracle_harmonic,
    oracle_se3_attention,
    oracle_tfn,
    oracle_tpa,
    oracle_xcorr2d,
)
from piengine.representations import random_real_field

seeds = st.integers(min_value=0, max_value=2**31 - 1)


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(3, 7), st.integers(3, 7), st.sampled_from([1, 2, 3]), st.sampled_from(["zero", "cyclic"]))
def test_conv_matches_cross_correlation(seed, height, width, kernel_size, boundary):
    rng = np.random.default_rng(seed)
    X, K = rng.normal(size=(height, width)), rng.normal(size=(kernel_size, kernel_size))
    expr = build_conv2d(height, width, kernel_size, kernel_size, boundary=boundary, kernel=K)
    assert_allclose(expr(X=X), oracle_xcorr2d(X, K, boundary), atol=1e-12)


def test_free_conv_starts_at_the_shift_constraints(rng):
    X, K = rng.normal(size=(5, 6)), rng.normal(size=(3, 3))
    free = build_conv2d(5, 6, 3, 3, constraint="free", kernel=K)
    assert {"kernel", "conv_lambda_row", "conv_lambda_col"} <= set(free.parameters)
    assert_allclose(free(X=X), oracle_xcorr2d(X, K), atol=1e-12)
    noisy = build_conv2d(5, 6, 3, 3, constraint="free", kernel=K, lambda_noise=0.5, rng=rng)
    assert np.max(np.abs(noisy(X=X) - oracle_xcorr2d(X, K))) > 1e-3


def test_regularized_conv_registers_blocks(rng):
    expr = build_conv2d(4, 4, 3, 3, constraint="regularized", rng=rng)
    assert set(expr.meta["regularized_blocks"]) == {"conv_lambda_row", "conv_lambda_col"}
    assert expr.order("X") == 1


def test_conv_argument_errors():
    with pytest.raises(ValueError):
        build_conv2d(4, 4, 3, 3, constraint="tied")
    with pytest.raises(ValueError):
        build_conv2d(4, 4, 3, 3, boundary="reflect")
    with pytest.raises(ShapeMismatchError):
        build_conv2d(4, 4, 3, 3, kernel=np.ones((2, 2)))


def test_conv_offsets_are_centred():
    assert conv_offsets(3).tolist() == [-1, 0, 1]
    assert conv_offsets(4).tolist() == [-2, -1, 0, 1]


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(1, 6), st.sampled_from(["identity", "exp", "sigmoid", "elu", "relu"]))
def test_gating_matches_oracle(seed, dim, F):
    rng = np.random.default_rng(seed)
    X, Y, W = rng.normal(size=dim), rng.normal(size=dim), rng.normal(size=(dim, dim))
    expr = build_gating(dim, W=W, F=F)
    assert_allclose(expr(X=X, Y=Y), oracle_gating(X, Y, W, F), atol=1e-12)
    assert expr.manifest()["orders"] == {"X": 1, "Y": 1}


@settings(max_examples=12, deadline=None)
@given(seeds, st.sampled_from([1, 2]), st.sampled_from([1, 2]), st.booleans())
def test_attention_matches_oracle(seed, heads, rank, causal):
    rng = np.random.default_rng(seed)
    n, d = 4, 4
    weights = attention_weights(d, heads, rank, rng)
    tokens = rng.normal(size=(n, d))
    expr = build_attention(n, d, heads, rank, causal=causal, weights=weights)
    expected = oracle_attention(tokens, weights["Wq"], weights["Wk"], weights["Wv"], "exp", causal, True)
    assert_allclose(expr(X=tokens), expected, atol=1e-10)
    assert expr.order("X") == 3


def test_cross_attention_orders(rng):
    weights = attention_weights(3, 1, 1, rng)
    tokens, keys = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    expr = build_attention(3, 3, cross=True, weights=weights)
    expected = oracle_attention(tokens, weights["Wq"], weights["Wk"], weights["Wv"], "exp", False, True, keys=keys)
    assert_allclose(expr(X=tokens, Y=keys), expected, atol=1e-10)
    assert expr.manifest()["orders"] == {"X": 1, "Y": 2}


def test_unnormalized_attention(rng):
    weights = attention_weights(3, 1, 1, rng)
    tokens = rng.normal(size=(4, 3))
    expr = build_attention(4, 3, F="sigmoid", normalize=False, weights=weights)
    expected = oracle_attention(tokens, weights["Wq"], weights["Wk"], weights["Wv"], "sigmoid", True, False)
    assert_allclose(expr(X=tokens), expected, atol=1e-10)


def test_attention_is_causal(rng):
    expr = build_attention(5, 2, rng=rng)
    tokens = rng.normal(size=(5, 2))
    perturbed = tokens.copy()
    perturbed[-1] += 1.0
    assert np.array_equal(expr(X=tokens)[:-1], expr(X=perturbed)[:-1])


def test_attention_argument_errors():
    with pytest.raises(InvalidDimensionError):
        build_attention(3, 3, heads=2)
    with pytest.raises(InvalidDimensionError):
        build_attention(3, 2, rank=3)
    with pytest.raises(ShapeMismatchError):
        build_attention(3, 2, n_kv=4)


def test_tpa_matches_oracle_and_has_order_six(rng):
    n, heads, head_dim = 4, 2, 2
    d = heads * head_dim
    weights = tpa_weights(d, heads, head_dim, (2, 1, 2), rng)
    tokens = rng.normal(size=(n, d))
    expr = build_tpa(n, d, heads, head_dim, ranks=(2, 1, 2), weights=weights)
    assert_allclose(expr(X=tokens), oracle_tpa(tokens, weights, heads, head_dim), atol=1e-10)
    assert expr.order("X") == 6


def test_gaussian_basis_layout():
    values = gaussian_basis(np.array([0.0, 2.0]), 3, 2.0)
    assert values.shape == (2, 3)
    assert values[0, 0] == pytest.approx(1.0)
    assert values[1, 2] == pytest.approx(1.0)
    assert values[0, 1] == pytest.approx(np.exp(-(1.0 / (2.0 / 3.0)) ** 2))


def test_harmonic_matches_oracle(rng):
    n, n_max = 5, 2
    features = rng.normal(size=(n, 5)) + 1j * rng.normal(size=(n, 5))
    positions = rng.normal(size=(n, 2))
    radial = rng.normal(size=(5, 3))
    expr = build_harmonic(n, n_max, radial=radial)
    assert_allclose(expr(X=(features, positions)), oracle_harmonic(features, positions, radial, n_max), atol=1e-10)
    assert expr.order("X") == 1


def test_anisotropic_harmonic_matches_shifted_oracle(rng):
    features = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
    positions = rng.normal(size=(4, 2))
    radial = rng.normal(size=(3, 3))
    expr = build_harmonic(4, 1, radial=radial, anisotropy=(0.3, -0.2))
    expected = oracle_harmonic(features, positions, radial, 1, anisotropy=(0.3, -0.2))
    assert_allclose(expr(X=(features, positions)), expected, atol=1e-10)


def test_harmonic_radial_shape():
    with pytest.raises(ShapeMismatchError):
        build_harmonic(3, 1, radial=np.ones((2, 3)))


def test_tfn_matches_oracle(rng):
    n, l_max = 4, 2
    features = random_real_field(rng, n, l_max)
    positions = rng.normal(size=(n, 3))
    radial = rng.normal(size=(l_max + 1, 3))
    expr = build_tfn(n, l_max, radial=radial)
    assert_allclose(expr(X=(features, positions)), oracle_tfn(features, positions, radial, l_max), atol=1e-10)
    assert expr.order("X") == 1


def test_tfn_strict_policy_refuses_overflowing_couplings():
    with pytest.raises(TruncationError):
        build_tfn(3, 1, policy="strict")


def test_tfn_anisotropy_changes_the_name(rng):
    assert build_tfn(3, 1, anisotropy=(0.3, -0.2, 0.1), rng=rng).name == "tfn[anisotropic]"


@pytest.mark.parametrize("radius", [10.0, 1.0])
def test_se3_attention_matches_oracle(radius):
    rng = np.random.default_rng(3)
    n, l_max = 4, 1
    features = random_real_field(rng, n, l_max)
    positions = rng.normal(size=(n, 3))
    rk, rv = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    wq = rng.normal(size=2)
    expr = build_se3_attention(n, l_max, positions=positions, radius=radius, radial_key=rk, radial_value=rv, query_weights=wq)
    expected = oracle_se3_attention(features, positions, expr.meta["neighbourhoods"], rk, rv, wq, l_max)
    assert_allclose(expr(X=(features, positions)), expected, atol=1e-9)
    assert expr.order("X") == 3


def test_se3_attention_needs_neighbourhoods():
    with pytest.raises(MissingBlockError):
        build_se3_attention(3, 1)


def test_se3_attention_on_a_single_point_is_zero(rng):
    features = random_real_field(rng, 1, 1)
    expr = build_se3_attention(1, 1, positions=np.zeros((1, 3)), radius=1.0, rng=rng)
    assert expr.meta["neighbourhoods"] == {0: ()}
    assert_allclose(expr(X=(features, np.zeros((1, 3)))), np.zeros((1, 4)))


def test_se3_attention_with_every_neighbourhood_empty(rng):
    positions = 10.0 * np.eye(3)
    features = random_real_field(rng, 3, 1)
    expr = build_se3_attention(3, 1, positions=positions, radius=0.5, rng=rng)
    assert all(not neighbours for neighbours in expr.meta["neighbourhoods"].values())
    assert_allclose(expr(X=(features, positions)), np.zeros((3, 4)))


def test_anisotropic_se3_attention_matches_shifted_oracle():
    rng = np.random.default_rng(5)
    n, l_max, offset = 3, 1, (0.3, -0.2, 0.1)
    features = random_real_field(rng, n, l_max)
    positions = rng.normal(size=(n, 3))
    rk, rv = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    wq = rng.normal(size=2)
    expr = build_se3_attention(
        n, l_max, positions=positions, radius=10.0, radial_key=rk, radial_value=rv, query_weights=wq, anisotropy=offset
    )
    assert expr.name == "se3_attention[anisotropic]"
    table = expr.meta["neighbourhoods"]
    expected = oracle_se3_attention(features, positions, table, rk, rv, wq, l_max, anisotropy=offset)
    assert_allclose(expr(X=(features, positions)), expected, atol=1e-9)
