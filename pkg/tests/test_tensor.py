import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from piengine.algebra import make_b1, make_b2, make_generic
from piengine.errors import (
    BudgetExceededError,
    IndexOutOfRangeError,
    ShapeMismatchError,
    SpaceMismatchError,
    TruncationError,
)
from piengine.oracles import oracle_multiply_bruteforce
from piengine.tensor import (
    TensorElement,
    dump_element,
    embed_field3d,
    embed_hidden,
    embed_image2d,
    embed_sequence,
    load_element,
    multiply,
    read_sequence,
    readout,
    tensor_space,
)


def _random_algebra(rng, dim):
    idx = rng.integers(0, dim, size=(2 * dim, 3))
    return make_generic(dim, [(i, j, k, rng.normal()) for i, j, k in idx])


def test_budget_is_enforced():
    big = make_b2(100)
    with pytest.raises(BudgetExceededError):
        tensor_space([big, big, big], budget=10**5)


def test_default_roles():
    space = tensor_space([make_b1(2), make_b2(2)])
    assert space.roles == ("positional", "feature")
    assert space.shape == (3, 2)
    with pytest.raises(ShapeMismatchError):
        tensor_space([make_b1(2)], roles=["positional", "feature"])


def test_sparse_storage_for_few_nonzeros():
    space = tensor_space([make_b2(10), make_b2(10)])
    one = TensorElement.from_entries(space, {(3, 4): 2.0})
    assert one.storage == "sparse"
    assert readout(one, (3, 4)) == 2.0
    assert readout(one, (4, 3)) == 0.0
    assert one.to_dense().storage == "dense"
    with pytest.raises(IndexOutOfRangeError):
        readout(one, (10, 0))


def test_product_of_embedded_tokens():
    space = tensor_space([make_b1(3), make_b1(3), make_b2(2)])
    tokens = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    x = embed_sequence(tokens, space)
    assert_allclose(read_sequence(x, 3, [0, 1]), tokens)
    # f_k f_k = f_0 on the token factor, f_0 f_0 = f_0 on the hidden factor
    square = multiply(x, x)
    assert readout(square, (0, 0, 0)) == pytest.approx(1 + 9 + 25)
    assert readout(square, (0, 0, 1)) == pytest.approx(4 + 16 + 36)
    assert readout(square, (1, 0, 0)) == 0.0


def test_multiply_rejects_foreign_spaces():
    a = tensor_space([make_b2(2)])
    b = tensor_space([make_b2(2)])
    with pytest.raises(SpaceMismatchError):
        multiply(TensorElement(a, [1.0, 0.0]), TensorElement(b, [1.0, 0.0]))


def test_zero_operand_gives_zero():
    space = tensor_space([make_b1(2), make_b2(2)])
    x = TensorElement(space, np.ones(space.size))
    assert multiply(x, TensorElement(space)).nnz == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.floats(min_value=0.0, max_value=0.7))
def test_multiply_matches_bruteforce(seed, drop):
    rng = np.random.default_rng(seed)
    factors = [_random_algebra(rng, d) for d in (2, 3, 2)]
    space = tensor_space(factors)
    x = rng.normal(size=space.shape) * (rng.random(space.shape) > drop)
    y = rng.normal(size=space.shape) * (rng.random(space.shape) > drop)
    got = multiply(TensorElement(space, x), TensorElement(space, y)).values
    expected = oracle_multiply_bruteforce(x, y, [f.dense() for f in factors])
    assert_allclose(got, expected, atol=1e-12)


def test_positions_must_agree():
    space = tensor_space([make_b1(2), make_b1(2), make_b2(1)])
    features = np.ones((2, 1))
    a = embed_field3d(features, np.zeros((2, 3)), space)
    b = embed_field3d(features, np.ones((2, 3)), space)
    with pytest.raises(SpaceMismatchError):
        multiply(a, b)
    assert_allclose(multiply(a, a).positions, np.zeros((2, 3)))


def test_embed_image_and_hidden():
    space = tensor_space([make_b2(3), make_b2(4)], roles=["positional", "positional"])
    image = np.arange(12.0).reshape(3, 4)
    assert_allclose(embed_image2d(image, space).values, image)
    with pytest.raises(ShapeMismatchError):
        embed_image2d(np.ones(3), space)

    hidden = tensor_space([make_b2(2), make_b2(3)], roles=["hidden", "feature"])
    x = embed_hidden(np.array([1.0, 2.0]), hidden, channels=[0, 2])
    # g0 spreads the vector over every hidden slot
    assert_allclose(x.values, [[1.0, 0.0, 2.0], [1.0, 0.0, 2.0]])


def test_embedding_shape_errors():
    space = tensor_space([make_b1(2), make_b1(2), make_b2(2)])
    with pytest.raises(ShapeMismatchError):
        embed_sequence(np.ones((3, 2)), space)
    with pytest.raises(ShapeMismatchError):
        embed_sequence(np.ones(2), space)
    with pytest.raises(ShapeMismatchError):
        embed_field3d(np.ones((2, 2)), np.ones((3, 3)), space)


def test_element_text_round_trip():
    space = tensor_space([make_b1(2), make_b1(2), make_b2(2)])
    x = embed_field3d(np.array([[0.1, -2.0], [1.0 / 3.0, 4.0]]), np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.5]]), space)
    again = load_element(dump_element(x), space)
    assert np.array_equal(again.values, x.values)
    assert np.array_equal(again.positions, x.positions)


def test_linear_structure():
    space = tensor_space([make_b2(2), make_b2(2)])
    x = TensorElement(space, [[1.0, 2.0], [3.0, 4.0]])
    y = TensorElement(space, [[1.0, 1.0], [1.0, 1.0]])
    assert_allclose((x - y).values, [[0.0, 1.0], [2.0, 3.0]])
    assert_allclose((2.0 * x + (-y)).values, [[1.0, 3.0], [5.0, 7.0]])
    with pytest.raises(ShapeMismatchError):
        TensorElement(space, np.ones(3))


def test_dense_elementwise_product_in_large_b2_cube(rng):
    b2 = make_b2(40)
    space = tensor_space([b2, b2, b2])
    x = rng.normal(size=space.shape)
    y = rng.normal(size=space.shape)
    got = multiply(TensorElement(space, x), TensorElement(space, y))
    assert_allclose(got.values, x * y, atol=1e-12)


def test_strict_factor_reports_truncation():
    alg = make_generic(2, [(0, 0, 0, 1.0)], overflow_pairs={(1, 1)}, policy="strict")
    space = tensor_space([make_b2(2), alg])
    x = TensorElement(space, [[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(TruncationError):
        multiply(x, x)
    # the B2 factor kills g1 g2 before the truncated factor is reached
    y = TensorElement(space, [[0.0, 0.0], [0.0, 1.0]])
    assert multiply(x, y).nnz == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_multiply_is_bilinear(seed):
    rng = np.random.default_rng(seed)
    factors = [_random_algebra(rng, d) for d in (3, 2, 2)]
    space = tensor_space(factors)
    x1, x2, y1, y2 = (rng.normal(size=space.shape) for _ in range(4))
    a, b = rng.normal(size=2)

    def mul(u, v):
        return multiply(TensorElement(space, u), TensorElement(space, v)).values

    assert_allclose(mul(a * x1 + b * x2, y1), a * mul(x1, y1) + b * mul(x2, y1), atol=1e-12)
    assert_allclose(mul(x1, a * y1 + b * y2), a * mul(x1, y1) + b * mul(x1, y2), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.floats(min_value=0.0, max_value=0.9))
def test_sparse_and_dense_storage_multiply_identically(seed, drop):
    rng = np.random.default_rng(seed)
    factors = [_random_algebra(rng, d) for d in (2, 3, 2)]
    space = tensor_space(factors)
    x = rng.normal(size=space.shape) * (rng.random(space.shape) > drop)
    y = rng.normal(size=space.shape) * (rng.random(space.shape) > drop)
    dense = multiply(TensorElement(space, x, storage="dense"), TensorElement(space, y, storage="dense"))
    sparse = multiply(TensorElement(space, x, storage="sparse"), TensorElement(space, y, storage="sparse"))
    mixed = multiply(TensorElement(space, x, storage="sparse"), TensorElement(space, y, storage="dense"))
    assert np.array_equal(dense.values, sparse.values)
    assert np.array_equal(dense.values, mixed.values)
