"""
Reverse-mode gradient tape over tracked coefficient arrays

Each tape entry records one scalar primitive applied elementwise to a flat
coefficient array (add, mul, exp, sigmoid, elu, relu, reciprocal, conj, real)
or one index primitive (gather, scatter-add, total sum) that moves scalars
between coefficient positions.  The engine's contractions are written with
these primitives only, so evaluation runs unchanged on plain ``numpy`` arrays
or on tracked arrays.

Complex values follow the conjugate convention: the adjoint stored for a
complex value ``z`` is ``dL/dRe(z) + i dL/dIm(z)``, so the gradient of a real
loss with respect to a real leaf is the real part of its adjoint.
"""

from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import UnsupportedOpError

ArrayLike = Union[np.ndarray, "TArray", float, complex, int]


def _scatter(values: np.ndarray, index: np.ndarray, size: int) -> np.ndarray:
    """Sum ``values`` into ``size`` bins; bincount keeps the summation order fixed"""
    if values.size == 0:
        return np.zeros(size, dtype=values.dtype if values.dtype.kind == "c" else np.float64)
    if np.iscomplexobj(values):
        re = np.bincount(index, weights=values.real, minlength=size)
        im = np.bincount(index, weights=values.imag, minlength=size)
        return re + 1j * im
    return np.bincount(index, weights=values, minlength=size)


def _reduce_like(grad: np.ndarray, like: np.ndarray) -> np.ndarray:
    if grad.shape != like.shape:
        grad = np.sum(grad).reshape(like.shape) if like.size == 1 else grad.reshape(like.shape)
    if not np.iscomplexobj(like) and np.iscomplexobj(grad):
        grad = grad.real
    return grad


def _require_real(name: str, value: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(value):
        if value.size and np.max(np.abs(value.imag)) > 1e-12:
            raise UnsupportedOpError(f"{name} is only defined for real coefficients")
        return value.real
    return value


def _sigmoid(x: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(x):
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _elu(x: np.ndarray) -> np.ndarray:
    x = _require_real("elu", x)
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _relu(x: np.ndarray) -> np.ndarray:
    x = _require_real("relu", x)
    return np.where(x > 0, x, 0.0)


# op name -> forward(values..., **static) ; shared by recording and replay
_FORWARD: Dict[str, Callable[..., np.ndarray]] = {
    "add": lambda a, b: a + b,
    "mul": lambda a, b: a * b,
    "exp": np.exp,
    "sigmoid": _sigmoid,
    "elu": _elu,
    "relu": _relu,
    "reciprocal": lambda a: 1.0 / a,
    "conj": np.conj,
    "real": lambda a: np.real(a).copy(),
    "gather": lambda a, index: a[index],
    "scatter_add": lambda a, index, size: _scatter(a, index, size),
    "sum": lambda a: np.sum(a),
}


def _vjp(op: str, g: np.ndarray, inputs: Sequence[np.ndarray], out: np.ndarray, static: Dict[str, Any]):
    if op == "add":
        return g, g
    if op == "mul":
        a, b = inputs
        return g * np.conj(b), g * np.conj(a)
    if op == "exp":
        return (g * np.conj(out),)
    if op == "sigmoid":
        return (g * np.conj(out * (1.0 - out)),)
    if op == "elu":
        x = np.real(inputs[0])
        return (g * np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0))),)
    if op == "relu":
        x = np.real(inputs[0])
        return (g * (x > 0),)
    if op == "reciprocal":
        return (g * np.conj(-out * out),)
    if op == "conj":
        return (np.conj(g),)
    if op == "real":
        return (np.real(g),)
    if op == "gather":
        return (_scatter(g, static["index"], inputs[0].size),)
    if op == "scatter_add":
        return (g[static["index"]],)
    if op == "sum":
        return (np.broadcast_to(g, inputs[0].shape),)
    raise UnsupportedOpError(f"no adjoint rule for '{op}'")


def _support(op: str, supports: Sequence[np.ndarray], out: np.ndarray, static: Dict[str, Any]) -> np.ndarray:
    if op in ("add", "mul"):
        a, b = (np.broadcast_to(s, out.shape) for s in supports)
        return np.logical_or(a, b) if op == "add" else np.logical_and(a, b)
    if op in ("elu", "relu", "conj", "real"):
        return supports[0]
    if op == "gather":
        return supports[0][static["index"]]
    if op == "scatter_add":
        return np.bincount(static["index"], weights=supports[0].astype(np.float64), minlength=static["size"]) > 0
    if op == "sum":
        return np.array(bool(np.any(supports[0])))
    return np.ones(out.shape, dtype=bool)


@dataclass
class _Entry:
    op: str
    parents: Tuple[Optional[int], ...]
    constants: Tuple[Optional[np.ndarray], ...]
    static: Dict[str, Any]
    value: np.ndarray


class Tape:
    """Records primitives in execution order and replays or differentiates them"""

    def __init__(self):
        self.entries: List[_Entry] = []
        self.supports: List[np.ndarray] = []
        self.names: Dict[int, str] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def leaf(self, value: Any, name: Optional[str] = None) -> "TArray":
        """Register an input array (a parameter block) as a differentiable leaf"""
        array = np.array(value, dtype=np.complex128 if np.iscomplexobj(value) else np.float64)
        self.entries.append(_Entry("leaf", (), (), {}, array))
        self.supports.append(np.ones(array.shape, dtype=bool))
        index = len(self.entries) - 1
        if name is not None:
            self.names[index] = name
        return TArray(self, index)

    def record(self, op: str, operands: Sequence[ArrayLike], **static) -> "TArray":
        parents: List[Optional[int]] = []
        constants: List[Optional[np.ndarray]] = []
        values: List[np.ndarray] = []
        supports: List[np.ndarray] = []
        for operand in operands:
            if isinstance(operand, TArray):
                if operand.tape is not self:
                    raise UnsupportedOpError("tracked arrays from different tapes cannot be mixed")
                parents.append(operand.index)
                constants.append(None)
                values.append(operand.value)
                supports.append(self.supports[operand.index])
            else:
                array = np.asarray(operand)
                parents.append(None)
                constants.append(array)
                values.append(array)
                supports.append(array != 0)
        out = np.asarray(_FORWARD[op](*values, **static))
        self.entries.append(_Entry(op, tuple(parents), tuple(constants), static, out))
        self.supports.append(_support(op, supports, out, static))
        return TArray(self, len(self.entries) - 1)

    def _values_of(self, entry: _Entry, values: List[np.ndarray]) -> List[np.ndarray]:
        return [
            values[parent] if parent is not None else constant
            for parent, constant in zip(entry.parents, entry.constants)
        ]

    def replay(self) -> List[np.ndarray]:
        """Recompute every recorded value from the leaves, in recording order"""
        values: List[np.ndarray] = []
        for entry in self.entries:
            if entry.op == "leaf":
                values.append(entry.value.copy())
            else:
                inputs = self._values_of(entry, values)
                values.append(np.asarray(_FORWARD[entry.op](*inputs, **entry.static)))
        return values

    def backward(self, output: "TArray") -> List[Optional[np.ndarray]]:
        """
        Propagate adjoints from ``output`` back to every recorded entry

        Returns:
            List of adjoints indexed like the tape (None where unreachable)
        """
        if output.tape is not self:
            raise UnsupportedOpError("output belongs to a different tape")
        adjoints: List[Optional[np.ndarray]] = [None] * len(self.entries)
        adjoints[output.index] = np.ones_like(output.value)
        values = [entry.value for entry in self.entries]
        for index in range(output.index, -1, -1):
            g = adjoints[index]
            entry = self.entries[index]
            if g is None or entry.op == "leaf":
                continue
            inputs = self._values_of(entry, values)
            grads = _vjp(entry.op, g, inputs, entry.value, entry.static)
            for parent, grad in zip(entry.parents, grads):
                if parent is None:
                    continue
                grad = _reduce_like(np.asarray(grad), values[parent])
                adjoints[parent] = grad if adjoints[parent] is None else adjoints[parent] + grad
        return adjoints

    def gradient(self, output: "TArray", leaves: Sequence["TArray"]) -> List[np.ndarray]:
        """Adjoints of ``output`` with respect to the given leaves (zeros if unreachable)"""
        adjoints = self.backward(output)
        result = []
        for leaf in leaves:
            g = adjoints[leaf.index]
            result.append(np.zeros_like(leaf.value) if g is None else g)
        return result


class TArray:
    """Flat coefficient array whose operations are recorded on a tape"""

    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.entries[self.index].value

    @property
    def support(self) -> np.ndarray:
        return self.tape.supports[self.index]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def dtype(self):
        return self.value.dtype

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"TArray(#{self.index}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, TArray):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other))

    def __getitem__(self, index):
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return gather(self, index)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method == "__call__" and not kwargs:
            if ufunc is np.add:
                return add(*inputs)
            if ufunc is np.multiply:
                return mul(*inputs)
            if ufunc is np.subtract:
                return sub(*inputs)
            if ufunc is np.negative:
                return mul(inputs[0], -1.0)
            if ufunc is np.exp:
                return exp(inputs[0])
            if ufunc is np.conjugate:
                return conj(inputs[0])
        raise UnsupportedOpError(f"operation '{ufunc.__name__}' is not supported on the tape")


def is_tracked(value: Any) -> bool:
    return isinstance(value, TArray)


def primal(value: ArrayLike) -> np.ndarray:
    """The plain numeric value behind a possibly tracked array"""
    return value.value if isinstance(value, TArray) else np.asarray(value)


def support(value: ArrayLike) -> np.ndarray:
    """Structural nonzero pattern: every entry that may carry a gradient"""
    return value.support if isinstance(value, TArray) else np.asarray(value) != 0


def _tape_of(*operands) -> Optional[Tape]:
    for operand in operands:
        if isinstance(operand, TArray):
            return operand.tape
    return None


def add(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    tape = _tape_of(a, b)
    return tape.record("add", (a, b)) if tape else np.asarray(a) + np.asarray(b)


def sub(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    return add(a, mul(b, -1.0))


def mul(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    tape = _tape_of(a, b)
    return tape.record("mul", (a, b)) if tape else np.asarray(a) * np.asarray(b)


def _unary(op: str, a: ArrayLike) -> ArrayLike:
    if isinstance(a, TArray):
        return a.tape.record(op, (a,))
    return np.asarray(_FORWARD[op](np.asarray(a)))


def exp(a: ArrayLike) -> ArrayLike:
    return _unary("exp", a)


def sigmoid(a: ArrayLike) -> ArrayLike:
    return _unary("sigmoid", a)


def elu(a: ArrayLike) -> ArrayLike:
    return _unary("elu", a)


def relu(a: ArrayLike) -> ArrayLike:
    return _unary("relu", a)


def reciprocal(a: ArrayLike) -> ArrayLike:
    return _unary("reciprocal", a)


def conj(a: ArrayLike) -> ArrayLike:
    return _unary("conj", a)


def real(a: ArrayLike) -> ArrayLike:
    return _unary("real", a)


def total(a: ArrayLike) -> ArrayLike:
    return _unary("sum", a)


def gather(a: ArrayLike, index: np.ndarray) -> ArrayLike:
    index = np.asarray(index, dtype=np.int64)
    if isinstance(a, TArray):
        return a.tape.record("gather", (a,), index=index)
    return np.asarray(a)[index]


def scatter_add(a: ArrayLike, index: np.ndarray, size: int) -> ArrayLike:
    index = np.asarray(index, dtype=np.int64)
    if isinstance(a, TArray):
        return a.tape.record("scatter_add", (a,), index=index, size=int(size))
    return _scatter(np.asarray(a), index, int(size))


def abs2_sum(a: ArrayLike) -> ArrayLike:
    """Σ|a|², the usual real loss reducer for possibly complex coefficients"""
    if np.iscomplexobj(primal(a)):
        return real(total(mul(a, conj(a))))
    return total(mul(a, a))


ACTIVATIONS: Dict[str, Callable[[ArrayLike], ArrayLike]] = {
    "identity": lambda a: a,
    "exp": exp,
    "sigmoid": sigmoid,
    "elu": elu,
    "relu": relu,
}
