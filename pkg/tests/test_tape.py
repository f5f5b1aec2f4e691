import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from piengine import tape as ops
from piengine.autodiff import value_and_grad
from piengine.errors import UnsupportedOpError
from piengine.tape import Tape


def test_plain_arrays_are_not_recorded():
    out = ops.mul(np.array([1.0, 2.0]), 3.0)
    assert not ops.is_tracked(out)
    assert_allclose(out, [3.0, 6.0])


def test_exp_times_identity_gradient():
    tape = Tape()
    x = tape.leaf([0.3, -1.2, 2.0])
    y = ops.total(ops.mul(ops.exp(x), x))
    (g,) = tape.gradient(y, [x])
    xs = np.array([0.3, -1.2, 2.0])
    assert_allclose(g, np.exp(xs) * (1.0 + xs), rtol=1e-14)


def test_replay_matches_recorded_values():
    tape = Tape()
    x = tape.leaf([0.5, -0.5])
    ops.sigmoid(ops.add(ops.mul(x, x), 1.0))
    values = tape.replay()
    for entry, value in zip(tape.entries, values):
        assert_allclose(value, entry.value)


def test_gather_scatter_adjoints():
    tape = Tape()
    x = tape.leaf([1.0, 2.0, 3.0])
    moved = ops.scatter_add(ops.gather(x, [2, 0, 2]), [0, 1, 1], 2)
    assert_allclose(moved.value, [3.0, 4.0])
    (g,) = tape.gradient(ops.total(moved), [x])
    assert_allclose(g, [1.0, 0.0, 2.0])


def test_complex_constant_gives_real_gradient():
    c = 0.6 - 0.8j

    def objective(p):
        return ops.abs2_sum(ops.mul(p["x"], c))

    loss, grads = value_and_grad(objective, {"x": np.array([1.0, -2.0])})
    assert loss == pytest.approx(5.0)
    assert not np.iscomplexobj(grads["x"])
    assert_allclose(grads["x"], [2.0, -4.0], atol=1e-14)


def test_unreachable_leaf_gets_zeros():
    tape = Tape()
    x = tape.leaf([1.0])
    unused = tape.leaf([4.0, 5.0])
    gx, gu = tape.gradient(ops.total(ops.mul(x, x)), [x, unused])
    assert_allclose(gx, [2.0])
    assert_allclose(gu, [0.0, 0.0])


def test_support_tracks_structural_zeros():
    tape = Tape()
    x = tape.leaf([1.0, 2.0])
    masked = ops.mul(x, np.array([0.0, 1.0]))
    assert masked.support.tolist() == [False, True]


def test_mixed_tapes_rejected():
    a, b = Tape().leaf([1.0]), Tape().leaf([2.0])
    with pytest.raises(UnsupportedOpError):
        ops.add(a, b)


def test_unsupported_ufunc_rejected():
    x = Tape().leaf([1.0])
    with pytest.raises(UnsupportedOpError):
        np.sin(x)


def test_real_only_activations_reject_complex():
    with pytest.raises(UnsupportedOpError):
        ops.relu(np.array([1.0 + 1.0j]))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3.0, 3.0), min_size=1, max_size=6), st.sampled_from(["sigmoid", "elu", "exp"]))
def test_activation_gradients_match_finite_differences(xs, name):
    activation = ops.ACTIVATIONS[name]
    x = np.array(xs)
    tape = Tape()
    leaf = tape.leaf(x)
    (g,) = tape.gradient(ops.total(activation(leaf)), [leaf])
    h = 1e-6
    numeric = (np.asarray(activation(x + h)) - np.asarray(activation(x - h))) / (2 * h)
    # elu has a kink at zero
    smooth = np.abs(x) > 1e-4
    assert_allclose(g[smooth], numeric[smooth], rtol=1e-5, atol=1e-7)
