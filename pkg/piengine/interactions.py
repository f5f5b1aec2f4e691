"""
Multiplication operators and product-interaction expressions

An expression is a DAG whose leaves are input slots and constants and whose
inner nodes are multiplication operators X -> L1(K L2(X)), structural
operators, activations and linear combinations. This module evaluates such
DAGs, measures their self-interaction order and applies the replacement
principle.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from lightrag.utils import logger

from . import tape as ops
from .errors import (
    SpaceMismatchError,
    UnboundSlotError,
    UnknownOccurrenceError,
    UnknownSlotError,
)
from .structural import Activation, Identity, StructuralOperator
from .tensor import ProductAlgebra, TensorElement, merge_positions, multiply

IDENTITY = Identity()


# Nodes
# ---


class Node:
    """Base class of expression nodes; nodes are immutable and may be shared"""

    def children(self) -> Tuple["Node", ...]:
        return ()

    def rebuild(self, children: Sequence["Node"]) -> "Node":
        return self


@dataclass(frozen=True, eq=False)
class Slot(Node):
    """Named input slot bound at evaluation time"""

    name: str

    def __repr__(self) -> str:
        return f"Slot({self.name})"


@dataclass
class EvalContext:
    """What constant materializers may read while an expression is evaluated"""

    params: Dict[str, Any]
    bindings: Dict[str, TensorElement]

    def positions(self, slot: Optional[str] = None) -> Optional[np.ndarray]:
        if slot is not None:
            return self.bindings[slot].positions
        for element in self.bindings.values():
            if element.positions is not None:
                return element.positions
        return None


@dataclass(frozen=True, eq=False)
class Constant(Node):
    """
    Fixed or trainable tensor element

    Either ``value`` is given, or ``build`` materializes the element from the
    evaluation context (parameter blocks, sample positions of the inputs), or
    ``block`` names a parameter block holding the flat coefficients.
    """

    name: str
    space: ProductAlgebra
    value: Optional[TensorElement] = None
    build: Optional[Callable[[EvalContext], TensorElement]] = None
    block: Optional[str] = None

    @property
    def trainable(self) -> bool:
        return self.block is not None or self.build is not None

    def materialize(self, ctx: EvalContext) -> TensorElement:
        if self.block is not None and self.block in ctx.params:
            return TensorElement(self.space, ctx.params[self.block], positions=ctx.positions())
        if self.build is not None:
            return self.build(ctx)
        if self.value is None:
            raise UnboundSlotError(f"Constant '{self.name}' has no value and parameter block '{self.block}' is missing")
        return self.value

    def __repr__(self) -> str:
        return f"Constant({self.name})"


@dataclass(frozen=True, eq=False)
class Mult(Node):
    """Multiplication operator node: post(filter * pre(input))"""

    filter: Node
    input: Node
    pre: StructuralOperator = IDENTITY
    post: StructuralOperator = IDENTITY

    def children(self):
        return (self.filter, self.input)

    def rebuild(self, children):
        return replace(self, filter=children[0], input=children[1])


@dataclass(frozen=True, eq=False)
class Structural(Node):
    """Structural operator (or activation) applied to one node"""

    op: StructuralOperator
    arg: Node

    def children(self):
        return (self.arg,)

    def rebuild(self, children):
        return replace(self, arg=children[0])

    @property
    def is_activation(self) -> bool:
        return isinstance(self.op, Activation)


@dataclass(frozen=True, eq=False)
class Add(Node):
    """Linear combination sum_t coef_t * node_t"""

    terms: Tuple[Tuple[complex, Node], ...]

    def children(self):
        return tuple(node for _, node in self.terms)

    def rebuild(self, children):
        return replace(self, terms=tuple((coef, node) for (coef, _), node in zip(self.terms, children)))


def activation(name: str, arg: Node) -> Structural:
    return Structural(Activation(name), arg)


def structural(op: StructuralOperator, arg: Node) -> Structural:
    return Structural(op, arg)


def add(*nodes: Node, coefficients: Optional[Sequence[complex]] = None) -> Add:
    coefficients = coefficients if coefficients is not None else [1.0] * len(nodes)
    return Add(tuple(zip(coefficients, nodes)))


def chain(node: Node, *operators: StructuralOperator) -> Node:
    """Apply structural operators left to right"""
    for op in operators:
        node = Structural(op, node)
    return node


# Expressions
# ---


@dataclass
class InteractionExpr:
    """
    Product-interaction expression with its space, parameters and codecs

    Attributes:
        root: Output node of the DAG
        space: Product space every node lives in
        name: Builder name used in manifests
        parameters: Initial values of the parameter blocks the DAG reads
        encoders: Raw input -> element, one per slot
        decoder: Output element -> raw output
        meta: Builder-specific details reported in manifests
    """

    root: Node
    space: ProductAlgebra
    name: str = "expr"
    parameters: Dict[str, np.ndarray] = field(default_factory=dict)
    encoders: Dict[str, Callable[..., TensorElement]] = field(default_factory=dict)
    decoder: Optional[Callable[[TensorElement], Any]] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def slots(self) -> List[str]:
        return sorted({node.name for node, _ in _walk(self.root) if isinstance(node, Slot)})

    def evaluate(self, bindings: Dict[str, TensorElement], params: Optional[Dict[str, Any]] = None) -> TensorElement:
        merged = dict(self.parameters)
        merged.update(params or {})
        return evaluate(self.root, bindings, merged)

    def __call__(self, params: Optional[Dict[str, Any]] = None, **raw: Any) -> Any:
        """Encode raw inputs, evaluate and decode the output"""
        bindings = {}
        for slot in self.slots:
            if slot not in raw:
                raise UnboundSlotError(f"Expression '{self.name}' needs input '{slot}'")
            bindings[slot] = self.encoders[slot](raw[slot])
        out = self.evaluate(bindings, params)
        return self.decoder(out) if self.decoder is not None else out

    def order(self, slot: str = "X") -> int:
        return self_interaction_order(self, slot)

    def manifest(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "space": self.space.name,
            "shape": list(self.space.shape),
            "orders": {slot: self.order(slot) for slot in self.slots},
            "parameters": {name: list(np.shape(value)) for name, value in self.parameters.items()},
            **{key: value for key, value in self.meta.items() if isinstance(value, (int, float, str, bool, list))},
        }


def _walk(node: Node) -> Iterator[Tuple[Node, int]]:
    """Depth-first visit of the tree unfolding (filter before input)"""
    stack = [(node, 0)]
    while stack:
        current, depth = stack.pop()
        yield current, depth
        for child in reversed(current.children()):
            stack.append((child, depth + 1))


def evaluate(
    root: Node,
    bindings: Dict[str, TensorElement],
    params: Optional[Dict[str, Any]] = None,
) -> TensorElement:
    """
    Evaluate a DAG; shared nodes are computed once

    Raises:
        UnboundSlotError: If a slot has no binding
        SpaceMismatchError: If two combined elements live in different spaces
    """
    ctx = EvalContext(params or {}, bindings)
    memo: Dict[int, TensorElement] = {}

    def visit(node: Node) -> TensorElement:
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Slot):
            if node.name not in bindings:
                raise UnboundSlotError(f"Slot '{node.name}' is not bound")
            result = bindings[node.name]
        elif isinstance(node, Constant):
            result = node.materialize(ctx)
        elif isinstance(node, Mult):
            kernel = visit(node.filter)
            signal = node.pre.apply(visit(node.input), ctx.params)
            result = node.post.apply(multiply(kernel, signal, ctx.params), ctx.params)
        elif isinstance(node, Structural):
            result = node.op.apply(visit(node.arg), ctx.params)
        elif isinstance(node, Add):
            parts = [visit(child) for _, child in node.terms]
            space = parts[0].space
            positions = None
            total: Any = None
            for (coef, _), part in zip(node.terms, parts):
                if part.space != space:
                    raise SpaceMismatchError("Linear combination mixes spaces")
                positions = merge_positions(positions, part.positions)
                term = part.flat if coef == 1.0 else ops.mul(part.flat, coef)
                total = term if total is None else ops.add(total, term)
            result = TensorElement(space, total, positions=positions)
        else:
            raise TypeError(f"Unknown node type {type(node).__name__}")
        memo[key] = result
        return result

    return visit(root)


# Order analysis
# ---


def _degree(node: Node, slot: str, memo: Dict[int, int]) -> int:
    key = id(node)
    if key in memo:
        return memo[key]
    if isinstance(node, Slot):
        degree = 1 if node.name == slot else 0
    elif isinstance(node, Constant):
        degree = 0
    elif isinstance(node, Mult):
        degree = _degree(node.filter, slot, memo) + _degree(node.input, slot, memo)
    elif isinstance(node, Structural):
        degree = _degree(node.arg, slot, memo)
    elif isinstance(node, Add):
        degree = max(_degree(child, slot, memo) for _, child in node.terms)
    else:
        raise TypeError(f"Unknown node type {type(node).__name__}")
    memo[key] = degree
    return degree


def _root_of(expr: Any) -> Node:
    if isinstance(expr, Node):
        return expr
    if isinstance(expr, InteractionExpr):
        return expr.root
    update = getattr(expr, "update", None)
    if isinstance(update, InteractionExpr):
        return update.root
    raise TypeError(f"Not an expression: {type(expr).__name__}")


def self_interaction_order(expr: Any, slot_name: str = "X") -> int:
    """
    Polynomial degree of a slot in an expression

    Multiplication adds degrees, structural operators and activations keep the
    degree of their argument and linear combinations take the maximum.

    Raises:
        UnknownSlotError: If the expression has no slot with that name
    """
    root = _root_of(expr)
    if not any(isinstance(node, Slot) and node.name == slot_name for node, _ in _walk(root)):
        raise UnknownSlotError(f"Expression has no slot '{slot_name}'")
    return _degree(root, slot_name, {})


@dataclass(frozen=True)
class Occurrence:
    id: int
    slot: str
    depth: int


def occurrences(expr: Any, slot_name: Optional[str] = None) -> List[Occurrence]:
    """Slot visits in depth-first order; ids index this list"""
    found = []
    for node, depth in _walk(_root_of(expr)):
        if isinstance(node, Slot):
            found.append(Occurrence(len(found), node.name, depth))
    if slot_name is not None:
        found = [occ for occ in found if occ.slot == slot_name]
    return found


def _replace(node: Node, target: int, replacement: Node, counter: List[int]) -> Node:
    if isinstance(node, Slot):
        index = counter[0]
        counter[0] += 1
        return replacement if index == target else node
    children = node.children()
    if not children:
        return node
    new_children = [_replace(child, target, replacement, counter) for child in children]
    if all(a is b for a, b in zip(children, new_children)):
        return node
    return node.rebuild(new_children)


def replace_slot(expr: Any, occurrence_id: int, trainable_constant: Union[TensorElement, Constant, np.ndarray, None] = None, name: Optional[str] = None):
    """
    Bind one slot occurrence to a fresh trainable constant

    Args:
        expr: InteractionExpr or DynamicsSpec (acts on its update expression)
        occurrence_id: Index into ``occurrences(expr)``
        trainable_constant: Initial value (element or flat array); zeros if omitted
        name: Parameter block name for the constant

    Returns:
        A new expression of the same type; the original is unchanged

    Raises:
        UnknownOccurrenceError: If the occurrence does not exist
    """
    target_expr = expr if isinstance(expr, InteractionExpr) else expr.update
    visits = occurrences(target_expr)
    if not 0 <= occurrence_id < len(visits):
        raise UnknownOccurrenceError(f"Occurrence {occurrence_id} not found, expression has {len(visits)}")
    slot = visits[occurrence_id].slot
    block = name or f"replaced_{slot}_{occurrence_id}"
    space = target_expr.space
    if isinstance(trainable_constant, Constant):
        node = trainable_constant
        initial = None
    else:
        if trainable_constant is None:
            initial = np.zeros(space.size, dtype=space.dtype)
        elif isinstance(trainable_constant, TensorElement):
            initial = np.array(ops.primal(trainable_constant.flat))
        else:
            initial = np.asarray(trainable_constant).ravel()
        node = Constant(block, space, block=block)
    root = _replace(target_expr.root, occurrence_id, node, [0])
    parameters = dict(target_expr.parameters)
    if initial is not None:
        parameters[block] = initial
    new_expr = replace(target_expr, root=root, parameters=parameters, meta={**target_expr.meta, "replaced": occurrence_id})
    logger.debug(f"Replaced occurrence {occurrence_id} of '{slot}' in '{target_expr.name}' by constant '{block}'")
    if isinstance(expr, InteractionExpr):
        return new_expr
    return replace(expr, update=new_expr)


# Multiplication operators and composition
# ---


@dataclass
class MultiplicationOperator:
    """O_K(X) = post(K pre(X)); the filter is an element, a node or a slot name"""

    filter: Union[TensorElement, Node, str]
    pre: StructuralOperator = IDENTITY
    post: StructuralOperator = IDENTITY

    def filter_node(self, space: ProductAlgebra) -> Node:
        if isinstance(self.filter, Node):
            return self.filter
        if isinstance(self.filter, str):
            return Slot(self.filter)
        if self.filter.space != space:
            raise SpaceMismatchError(f"Filter lives in '{self.filter.space.name}', expected '{space.name}'")
        return Constant("K", space, value=self.filter)

    def node(self, input_node: Node, space: ProductAlgebra) -> Mult:
        return Mult(self.filter_node(space), input_node, self.pre, self.post)


def apply_mult(
    op: MultiplicationOperator,
    x: TensorElement,
    params: Optional[Dict[str, Any]] = None,
    bindings: Optional[Dict[str, TensorElement]] = None,
) -> TensorElement:
    """
    Apply O_K to an element: post(multiply(K, pre(x)))

    Raises:
        UnboundSlotError: If the filter is a slot without a binding
        SpaceMismatchError: If the filter and the input live in different spaces
    """
    bindings = dict(bindings or {})
    if isinstance(op.filter, str) and op.filter not in bindings:
        raise UnboundSlotError(f"Filter slot '{op.filter}' is not bound")
    node = op.node(Slot("__input__"), x.space)
    bindings["__input__"] = x
    return evaluate(node, bindings, params)


def _check_spaces(space: ProductAlgebra, inner: InteractionExpr) -> None:
    if inner.space != space:
        raise SpaceMismatchError(f"Cannot compose across spaces '{space.name}' and '{inner.space.name}'")


def compose_filter(
    outer: MultiplicationOperator,
    inner: InteractionExpr,
    input_slot: str = "X",
    name: Optional[str] = None,
) -> InteractionExpr:
    """Use ``inner``'s output as the filter of ``outer``: X -> O_{inner}(X)"""
    if isinstance(outer.filter, TensorElement):
        _check_spaces(outer.filter.space, inner)
    root = Mult(inner.root, Slot(input_slot), outer.pre, outer.post)
    return replace(inner, root=root, name=name or f"filter({inner.name})")


def compose_input(
    outer: MultiplicationOperator,
    inner: InteractionExpr,
    name: Optional[str] = None,
) -> InteractionExpr:
    """Feed ``inner``'s output into ``outer``: O_Z(inner)"""
    root = outer.node(inner.root, inner.space)
    return replace(inner, root=root, name=name or f"input({inner.name})")


def expr_from_operator(op: MultiplicationOperator, space: ProductAlgebra, input_slot: str = "X", name: str = "mult") -> InteractionExpr:
    """Single multiplication operator as an expression of its input slot"""
    return InteractionExpr(op.node(Slot(input_slot), space), space, name=name)
