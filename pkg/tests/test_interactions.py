import numpy as np
import pytest
from numpy.testing import assert_allclose

from piengine.algebra import make_b2
from piengine.errors import (
    SpaceMismatchError,
    UnboundSlotError,
    UnknownOccurrenceError,
    UnknownSlotError,
)
from piengine.interactions import (
    Constant,
    InteractionExpr,
    Mult,
    MultiplicationOperator,
    Slot,
    activation,
    add,
    apply_mult,
    compose_filter,
    compose_input,
    expr_from_operator,
    occurrences,
    replace_slot,
    self_interaction_order,
)
from piengine.tensor import TensorElement, tensor_space


@pytest.fixture
def space():
    return tensor_space([make_b2(4)])


def _element(space, values):
    return TensorElement(space, np.asarray(values, dtype=np.float64))


def _square(space):
    x = Slot("X")
    return InteractionExpr(Mult(x, x), space, name="square", encoders={"X": lambda v: _element(space, v)})


def test_square_evaluates_and_has_order_two(space):
    expr = _square(space)
    assert_allclose(expr(X=[1.0, -2.0, 3.0, 0.5]).values, [1.0, 4.0, 9.0, 0.25])
    assert expr.order("X") == 2
    assert expr.slots == ["X"]


def test_order_rules(space):
    x = Slot("X")
    assert self_interaction_order(activation("exp", x)) == 1
    assert self_interaction_order(add(Mult(x, x), x)) == 2
    assert self_interaction_order(Mult(Mult(x, x), activation("sigmoid", Mult(x, x)))) == 4
    k = Constant("K", space, value=_element(space, np.ones(4)))
    assert self_interaction_order(Mult(k, x)) == 1
    with pytest.raises(UnknownSlotError):
        self_interaction_order(Mult(k, x), "Y")


def test_shared_nodes_count_every_path(space):
    x = Slot("X")
    shared = Mult(x, x)
    root = Mult(shared, shared)
    assert len(occurrences(root, "X")) == 4
    assert self_interaction_order(root) == 4


def test_replace_slot_lowers_order_and_keeps_original(space):
    expr = _square(space)
    replaced = replace_slot(expr, 0, _element(space, [2.0, 2.0, 2.0, 2.0]), name="K")
    assert replaced.order("X") == 1
    assert expr.order("X") == 2
    assert_allclose(replaced(X=[1.0, 2.0, 3.0, 4.0]).values, [2.0, 4.0, 6.0, 8.0])
    assert "K" in replaced.parameters
    assert replaced.meta["replaced"] == 0


def test_replaced_constant_reads_parameter_block(space):
    replaced = replace_slot(_square(space), 1, name="K")
    out = replaced(params={"K": np.array([1.0, 0.0, -1.0, 3.0])}, X=[1.0, 1.0, 1.0, 1.0])
    assert_allclose(out.values, [1.0, 0.0, -1.0, 3.0])


def test_replace_unknown_occurrence(space):
    with pytest.raises(UnknownOccurrenceError):
        replace_slot(_square(space), 2)


def test_unbound_slots(space):
    expr = _square(space)
    with pytest.raises(UnboundSlotError):
        expr()
    with pytest.raises(UnboundSlotError):
        expr.evaluate({})


def test_add_with_coefficients(space):
    x = Slot("X")
    expr = InteractionExpr(add(Mult(x, x), x, coefficients=[1.0, -1.0]), space)
    out = expr.evaluate({"X": _element(space, [1.0, 2.0, 3.0, 4.0])})
    assert_allclose(out.values, [0.0, 2.0, 6.0, 12.0])


def test_multiplication_operator_composition(space):
    k1 = _element(space, [1.0, 2.0, 3.0, 4.0])
    k2 = _element(space, [0.5, 0.5, 0.5, 0.5])
    x = _element(space, [1.0, -1.0, 2.0, 0.0])
    assert_allclose(apply_mult(MultiplicationOperator(k1), x).values, [1.0, -2.0, 6.0, 0.0])

    inner = expr_from_operator(MultiplicationOperator(k1), space)
    fed = compose_input(MultiplicationOperator(k2), inner)
    assert fed.order("X") == 1
    assert_allclose(fed.evaluate({"X": x}).values, [0.5, -1.0, 3.0, 0.0])

    as_filter = compose_filter(MultiplicationOperator(k2), inner)
    assert as_filter.order("X") == 2
    assert_allclose(as_filter.evaluate({"X": x}).values, [1.0, 2.0, 12.0, 0.0])


def test_filter_slot_must_be_bound(space):
    with pytest.raises(UnboundSlotError):
        apply_mult(MultiplicationOperator("K"), _element(space, np.ones(4)))


def test_filter_space_must_match(space):
    other = tensor_space([make_b2(4)])
    with pytest.raises(SpaceMismatchError):
        apply_mult(MultiplicationOperator(_element(other, np.ones(4))), _element(space, np.ones(4)))


def test_manifest_lists_orders_and_parameters(space):
    replaced = replace_slot(_square(space), 0, name="K")
    manifest = replaced.manifest()
    assert manifest["orders"] == {"X": 1}
    assert manifest["parameters"] == {"K": [4]}
    assert manifest["shape"] == [4]
