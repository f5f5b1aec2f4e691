"""
Structural operators on tensor elements

Linear maps acting on designated factors (flip, index projections, causal and
neighbourhood projections, factor-wise linear maps, hadamard scaling, row
normalization, the hidden-slot flip) and pointwise activations. Every
operator works on plain and on tracked coefficient arrays.
"""

from functools import reduce
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from . import tape as ops
from .errors import ChainTypeError, FactorRoleError, MissingBlockError, ShapeMismatchError
from .tensor import ProductAlgebra, TensorElement

Params = Optional[Dict[str, Any]]


def _grid(shape: Tuple[int, ...]) -> np.ndarray:
    return np.arange(int(np.prod(shape, dtype=np.int64))).reshape(shape)


def _moved(shape: Tuple[int, ...], factor: int, source: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Flat (src, dst) pairs moving factor index source[t] to target[t] at every other index"""
    grid = np.moveaxis(_grid(shape), factor, 0)
    src = grid[source].reshape(len(source), -1)
    dst = grid[target].reshape(len(target), -1)
    return src.ravel(), dst.ravel()


class StructuralOperator:
    """Base class: a linear map on designated factors, or a pointwise activation"""

    kind = "identity"
    linear = True

    def requirements(self) -> Dict[int, int]:
        """Factor -> dim the operator needs (used to type-check chains)"""
        return {}

    def check(self, space: ProductAlgebra) -> None:
        for factor, dim in self.requirements().items():
            if factor >= space.arity:
                raise ChainTypeError(f"{self.kind} names factor {factor}, space has {space.arity}")
            if dim is not None and space.shape[factor] != dim:
                raise ChainTypeError(f"{self.kind} needs dim {dim} on factor {factor}, space has {space.shape[factor]}")

    def _map(self, x: TensorElement, params: Params):
        return x.flat

    def apply(self, x: TensorElement, params: Params = None) -> TensorElement:
        self.check(x.space)
        return x.with_coeff(self._map(x, params))

    def __call__(self, x: TensorElement, params: Params = None) -> TensorElement:
        return self.apply(x, params)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.kind})"


class Identity(StructuralOperator):
    pass


class Flip(StructuralOperator):
    """Swap two factors of equal dim: f_i (x) f_j -> f_j (x) f_i"""

    kind = "flip"

    def __init__(self, factor_a: int = 0, factor_b: int = 1):
        self.factor_a = factor_a
        self.factor_b = factor_b

    def requirements(self):
        return {self.factor_a: None, self.factor_b: None}

    def check(self, space):
        super().check(space)
        if space.shape[self.factor_a] != space.shape[self.factor_b]:
            raise ChainTypeError(
                f"flip needs equal dims, factors {self.factor_a} and {self.factor_b} have "
                f"{space.shape[self.factor_a]} and {space.shape[self.factor_b]}"
            )

    def _map(self, x, params):
        source = np.swapaxes(_grid(x.space.shape), self.factor_a, self.factor_b).ravel()
        return ops.gather(x.flat, source)


class IndexProjection(StructuralOperator):
    """Zero every coefficient whose index on ``factor`` lies outside ``kept``"""

    kind = "index_proj"

    def __init__(self, factor: int, kept: Sequence[int], role: Optional[str] = None):
        self.factor = factor
        self.kept = np.asarray(sorted(set(int(k) for k in kept)), dtype=np.int64)
        self.role = role

    def check(self, space):
        super().check(space)
        if self.factor >= space.arity:
            raise ChainTypeError(f"{self.kind} names factor {self.factor}, space has {space.arity}")
        if self.role is not None and space.roles[self.factor] != self.role:
            raise FactorRoleError(f"{self.kind} must act on a {self.role} factor, factor {self.factor} is {space.roles[self.factor]}")
        if self.kept.size and self.kept[-1] >= space.shape[self.factor]:
            raise ChainTypeError(f"{self.kind} keeps index {self.kept[-1]} beyond dim {space.shape[self.factor]}")

    def mask(self, space: ProductAlgebra) -> np.ndarray:
        keep = np.zeros(space.shape[self.factor], dtype=bool)
        keep[self.kept] = True
        shape = [1] * space.arity
        shape[self.factor] = -1
        return np.broadcast_to(keep.reshape(shape), space.shape).ravel().astype(np.float64)

    def _map(self, x, params):
        return ops.mul(x.flat, self.mask(x.space))


def scalar_proj(feature_factor: int) -> IndexProjection:
    """Projection onto the scalar feature e_0"""
    op = IndexProjection(feature_factor, [0], role="feature")
    op.kind = "scalar_proj"
    return op


def rank_proj(feature_factor: int, rank: int) -> IndexProjection:
    """Projection keeping the first ``rank`` feature indices"""
    op = IndexProjection(feature_factor, range(rank), role="feature")
    op.kind = "rank_proj"
    return op


def slot_proj(factor: int, kept: Sequence[int] = (0,)) -> IndexProjection:
    """Keep the listed slots of a positional or hidden factor (read-out collapse)"""
    op = IndexProjection(factor, kept)
    op.kind = "slot_proj"
    return op


class _PairProjection(StructuralOperator):
    """Shared logic of the causal and neighbourhood projections"""

    def __init__(self, factor_a: int, factor_b: int, collapse: bool):
        self.factor_a = factor_a
        self.factor_b = factor_b
        self.collapse = collapse

    def check(self, space):
        for factor in (self.factor_a, self.factor_b):
            if factor >= space.arity:
                raise ChainTypeError(f"{self.kind} names factor {factor}, space has {space.arity}")
            if space.roles[factor] != "positional":
                raise FactorRoleError(f"{self.kind} acts only on positional factors, factor {factor} is {space.roles[factor]}")

    def allowed(self, space: ProductAlgebra) -> np.ndarray:
        raise NotImplementedError

    def _map(self, x, params):
        space = x.space
        allowed = self.allowed(space)
        if not self.collapse:
            shape = [1] * space.arity
            shape[self.factor_a] = allowed.shape[0]
            shape[self.factor_b] = allowed.shape[1]
            if self.factor_a > self.factor_b:
                allowed = allowed.T
            mask = np.broadcast_to(allowed.reshape(shape), space.shape).ravel().astype(np.float64)
            return ops.mul(x.flat, mask)
        # kept (a, b) coefficients move to (a, g0) = (a, every slot)
        grid = np.moveaxis(_grid(space.shape), (self.factor_a, self.factor_b), (0, 1))
        a_idx, b_idx = np.nonzero(allowed)
        if a_idx.size == 0:
            # every neighbourhood is empty
            return ops.mul(x.flat, np.zeros(space.size))
        n_b = space.shape[self.factor_b]
        src = np.repeat(grid[a_idx, b_idx].reshape(a_idx.size, -1), n_b, axis=0)
        dst = grid[np.repeat(a_idx, n_b), np.tile(np.arange(n_b), a_idx.size)].reshape(a_idx.size * n_b, -1)
        src, dst = src.ravel(), dst.ravel()
        live = ops.support(x.flat)[src]
        return ops.scatter_add(ops.gather(x.flat, src[live]), dst[live], space.size)


class CausalProjection(_PairProjection):
    """Keep coefficients whose second positional index does not exceed the first"""

    kind = "causal_proj"

    def __init__(self, factor_a: int = 0, factor_b: int = 1, collapse: bool = False):
        super().__init__(factor_a, factor_b, collapse)

    def allowed(self, space):
        n_a, n_b = space.shape[self.factor_a], space.shape[self.factor_b]
        return np.arange(n_b)[None, :] <= np.arange(n_a)[:, None]


class NeighbourhoodProjection(_PairProjection):
    """Keep coefficients (a, b) with b in the neighbourhood N(a)"""

    kind = "neighbourhood_proj"

    def __init__(self, table: Dict[int, Sequence[int]], factor_a: int = 0, factor_b: int = 1, collapse: bool = True):
        super().__init__(factor_a, factor_b, collapse)
        self.table = {int(a): tuple(int(b) for b in bs) for a, bs in table.items()}

    def allowed(self, space):
        n_a, n_b = space.shape[self.factor_a], space.shape[self.factor_b]
        allowed = np.zeros((n_a, n_b), dtype=bool)
        for a, neighbours in self.table.items():
            if a >= n_a or any(b >= n_b for b in neighbours):
                raise ChainTypeError(f"Neighbourhood of {a} leaves the {n_a}x{n_b} index range")
            allowed[a, list(neighbours)] = True
        return allowed


class FactorLinear(StructuralOperator):
    """
    Contract one factor's index with a square matrix

    The matrix is either a constant, or a parameter block looked up at apply
    time. A block covers the whole dim x dim matrix (row-major) unless
    ``rows``/``cols``/``index`` name the matrix entries it drives.
    """

    kind = "factor_linear"

    def __init__(
        self,
        factor: int,
        matrix: Optional[np.ndarray] = None,
        block: Optional[str] = None,
        dim: Optional[int] = None,
        rows: Optional[Sequence[int]] = None,
        cols: Optional[Sequence[int]] = None,
        index: Optional[Sequence[int]] = None,
    ):
        if matrix is None and block is None:
            raise MissingBlockError("factor_linear needs a matrix or a parameter block")
        self.factor = factor
        self.matrix = None if matrix is None else np.asarray(matrix)
        self.block = block
        self.dim = dim if dim is not None else (self.matrix.shape[0] if self.matrix is not None else None)
        if self.matrix is not None and self.matrix.shape != (self.dim, self.dim):
            raise ShapeMismatchError(f"factor_linear matrix must be square, got {self.matrix.shape}")
        if block is not None and rows is None:
            rows, cols = np.divmod(np.arange(self.dim * self.dim), self.dim)
            index = np.arange(self.dim * self.dim)
        self.rows = None if rows is None else np.asarray(rows, dtype=np.int64)
        self.cols = None if cols is None else np.asarray(cols, dtype=np.int64)
        self.index = None if index is None else np.asarray(index, dtype=np.int64)

    def requirements(self):
        return {self.factor: self.dim}

    def _map(self, x, params):
        if self.block is not None:
            if not params or self.block not in params:
                raise MissingBlockError(f"factor_linear needs parameter block '{self.block}'")
            rows, cols = self.rows, self.cols
            weights = ops.gather(params[self.block], self.index)
        else:
            rows, cols = np.nonzero(self.matrix)
            weights = self.matrix[rows, cols]
        src, dst = _moved(x.space.shape, self.factor, cols, rows)
        per_entry = src.size // max(rows.size, 1)
        entry = np.repeat(np.arange(rows.size), per_entry)
        live = ops.support(x.flat)[src]
        product = ops.mul(ops.gather(x.flat, src[live]), ops.gather(weights, entry[live]))
        return ops.scatter_add(product, dst[live], x.space.size)


class Hadamard(StructuralOperator):
    """
    Coefficient-wise scaling by a constant array, optionally with trainable entries

    With ``transform`` the scaling array is ``transform(scale * w)``; the zero-order
    hold decay exp(dt * lambda) uses ``transform='exp'``.
    """

    kind = "hadamard"

    def __init__(
        self,
        weights: np.ndarray,
        block: Optional[str] = None,
        positions: Optional[np.ndarray] = None,
        flat_index: Optional[np.ndarray] = None,
        scale: float = 1.0,
        transform: Optional[str] = None,
    ):
        if transform is not None and transform not in ops.ACTIVATIONS:
            raise ValueError(f"Unknown hadamard transform '{transform}'")
        self.weights = np.asarray(weights).ravel()
        self.block = block
        self.positions = None if positions is None else np.asarray(positions, dtype=np.int64)
        self.flat_index = None if flat_index is None else np.asarray(flat_index, dtype=np.int64)
        self.scale = scale
        self.transform = transform

    def check(self, space):
        if self.weights.size != space.size:
            raise ChainTypeError(f"hadamard weights have {self.weights.size} entries, space has {space.size}")

    def effective(self, params: Params):
        weights = self.weights
        if self.block is not None and params and self.block in params:
            frozen = self.weights.copy()
            frozen[self.positions] = 0.0
            trained = ops.scatter_add(ops.gather(params[self.block], self.flat_index), self.positions, self.weights.size)
            weights = ops.add(frozen, trained)
        if self.scale != 1.0:
            weights = ops.mul(weights, self.scale)
        if self.transform is not None:
            weights = ops.ACTIVATIONS[self.transform](weights)
        return weights

    def _map(self, x, params):
        return ops.mul(x.flat, self.effective(params))


class Activation(StructuralOperator):
    """Pointwise nonlinearity applied to every coefficient"""

    kind = "activation"
    linear = False

    def __init__(self, name: str = "identity"):
        if name not in ops.ACTIVATIONS:
            raise ValueError(f"Unknown activation '{name}', expected one of {sorted(ops.ACTIVATIONS)}")
        self.name = name

    def _map(self, x, params):
        return ops.ACTIVATIONS[self.name](x.flat)

    def __repr__(self):
        return f"Activation({self.name})"


class Normalize(StructuralOperator):
    """
    Divide every row by its sum over the listed slots of ``factor``

    Entries outside the slots are zeroed; rows summing to zero stay zero.
    """

    kind = "normalize"

    def __init__(self, factor: int, slots: Sequence[int]):
        self.factor = factor
        self.slots = np.asarray(sorted(set(int(s) for s in slots)), dtype=np.int64)

    def check(self, space):
        if self.factor >= space.arity:
            raise ChainTypeError(f"normalize names factor {self.factor}, space has {space.arity}")
        if self.slots.size and self.slots[-1] >= space.shape[self.factor]:
            raise ChainTypeError(f"normalize slot {self.slots[-1]} beyond dim {space.shape[self.factor]}")

    def _map(self, x, params):
        space = x.space
        grid = np.moveaxis(_grid(space.shape), self.factor, -1)
        n_rows = grid[..., 0].size
        flat_index = grid[..., self.slots].reshape(n_rows, -1)
        row = np.repeat(np.arange(n_rows), self.slots.size)
        flat_index = flat_index.ravel()
        live = ops.support(x.flat)[flat_index]
        flat_index, row = flat_index[live], row[live]
        values = ops.gather(x.flat, flat_index)
        sums = ops.scatter_add(values, row, n_rows)
        denominator = ops.add(sums, (ops.primal(sums) == 0).astype(np.float64))
        scale = ops.gather(ops.reciprocal(denominator), row)
        return ops.scatter_add(ops.mul(values, scale), flat_index, space.size)


class HiddenFlip(StructuralOperator):
    """
    Flip a channel onto its hidden slot: g_c (x) e_ch(a) -> delta_ca g_a (x) e_target

    On the all-ones expansion of g_0 this realizes g_0 (x) e_a -> g_a (x) e_target.
    """

    kind = "hidden_flip"

    def __init__(self, hidden_factor: int, feature_factor: int, channel_map: Sequence[int], target: int):
        self.hidden_factor = hidden_factor
        self.feature_factor = feature_factor
        self.channel_map = np.asarray(channel_map, dtype=np.int64)
        self.target = int(target)

    def requirements(self):
        return {self.hidden_factor: None, self.feature_factor: None}

    def check(self, space):
        super().check(space)
        if space.roles[self.hidden_factor] != "hidden":
            raise FactorRoleError(f"hidden_flip needs a hidden factor, factor {self.hidden_factor} is {space.roles[self.hidden_factor]}")
        if space.shape[self.hidden_factor] < self.channel_map.size:
            raise ChainTypeError(
                f"hidden_flip needs {self.channel_map.size} hidden slots, factor has {space.shape[self.hidden_factor]}"
            )

    def _map(self, x, params):
        space = x.space
        grid = np.moveaxis(_grid(space.shape), (self.hidden_factor, self.feature_factor), (0, 1))
        alpha = np.arange(self.channel_map.size)
        src = grid[alpha, self.channel_map].ravel()
        dst = grid[alpha, np.full_like(alpha, self.target)].ravel()
        live = ops.support(x.flat)[src]
        return ops.scatter_add(ops.gather(x.flat, src[live]), dst[live], space.size)


class Composite(StructuralOperator):
    """Left-to-right chain of operators"""

    kind = "compose"

    def __init__(self, chain: Sequence[StructuralOperator]):
        self.chain = tuple(chain)
        self.linear = all(op.linear for op in self.chain)

    def requirements(self):
        merged: Dict[int, int] = {}
        for op in self.chain:
            for factor, dim in op.requirements().items():
                if dim is None:
                    continue
                if merged.get(factor, dim) != dim:
                    raise ChainTypeError(
                        f"Chain disagrees on factor {factor}: dims {merged[factor]} and {dim}"
                    )
                merged[factor] = dim
        return merged

    def check(self, space):
        for op in self.chain:
            op.check(space)

    def apply(self, x, params=None):
        return reduce(lambda acc, op: op.apply(acc, params), self.chain, x)

    def __repr__(self):
        return "Composite(" + ", ".join(repr(op) for op in self.chain) + ")"


def compose(chain: Sequence[StructuralOperator]) -> StructuralOperator:
    """
    Chain operators left to right: compose([a, b])(x) == b(a(x))

    Raises:
        ChainTypeError: If two operators require different dims on one factor
    """
    composite = Composite(chain)
    composite.requirements()
    return composite


def apply(op: StructuralOperator, x: TensorElement, params: Params = None) -> TensorElement:
    return op.apply(x, params)


OPERATOR_KINDS = {
    "identity": Identity,
    "flip": Flip,
    "index_proj": IndexProjection,
    "scalar_proj": scalar_proj,
    "rank_proj": rank_proj,
    "slot_proj": slot_proj,
    "causal_proj": CausalProjection,
    "neighbourhood_proj": NeighbourhoodProjection,
    "factor_linear": FactorLinear,
    "hadamard": Hadamard,
    "activation": Activation,
    "normalize": Normalize,
    "hidden_flip": HiddenFlip,
}


def make_operator(kind: str, **kwargs) -> StructuralOperator:
    """Build an operator from its kind name and keyword parameters"""
    try:
        factory = OPERATOR_KINDS[kind]
    except KeyError:
        raise ValueError(f"Unknown structural operator '{kind}', expected one of {sorted(OPERATOR_KINDS)}")
    return factory(**kwargs)


# Neighbourhood tables
# ---


def neighbourhood_table(
    positions: np.ndarray,
    radius: Optional[float] = None,
    k: Optional[int] = None,
    include_self: bool = False,
) -> Dict[int, Tuple[int, ...]]:
    """
    Neighbourhoods from sample positions by a radius or k-nearest rule

    Args:
        positions: (N, dim) sample positions
        radius: Include every point within this distance
        k: Include the k nearest other points
        include_self: Whether a point belongs to its own neighbourhood

    Returns:
        Dict mapping each point index to a sorted tuple of neighbour indices
    """
    positions = np.asarray(positions, dtype=np.float64)
    if (radius is None) == (k is None):
        raise ValueError("Give exactly one of radius or k")
    tree = cKDTree(positions)
    table: Dict[int, Tuple[int, ...]] = {}
    for a, point in enumerate(positions):
        if radius is not None:
            found = tree.query_ball_point(point, radius)
        else:
            count = min(k + 1, len(positions))
            _, found = tree.query(point, k=count)
            found = np.atleast_1d(found).tolist()
        members = {int(b) for b in found if include_self or int(b) != a}
        if radius is None:
            ordered = sorted(members, key=lambda b: (np.linalg.norm(positions[b] - point), b))
            members = set(ordered[:k])
        table[a] = tuple(sorted(members))
    return table


def load_adjacency(path: Union[str, Path]) -> Dict[int, Tuple[int, ...]]:
    """Read a whitespace-separated adjacency file: '<a> <b1> <b2> ...' per line"""
    table: Dict[int, Tuple[int, ...]] = {}
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            parts = [int(token) for token in line.split()]
        except ValueError:
            raise ShapeMismatchError(f"{path}:{number}: adjacency entries must be integers")
        table[parts[0]] = tuple(sorted(parts[1:]))
    return table
