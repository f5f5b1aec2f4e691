"""
Tensor products of algebras and embedded signals

Contains the product space type, the coefficient container for embedded
signals, the factor-by-factor product and the embedding/readout helpers.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from lightrag.utils import logger

from . import tape as ops
from .algebra import Algebra, format_number
from .config import get_engine_config
from .errors import (
    BudgetExceededError,
    IndexOutOfRangeError,
    InvalidDimensionError,
    ShapeMismatchError,
    SpaceMismatchError,
    TruncationError,
)

ROLES = ("positional", "hidden", "feature")


class ProductAlgebra:
    """Ordered tensor product of algebras with the componentwise product rule"""

    def __init__(
        self,
        factors: Sequence[Algebra],
        roles: Sequence[str],
        name: Optional[str] = None,
    ):
        self.factors: Tuple[Algebra, ...] = tuple(factors)
        self.roles: Tuple[str, ...] = tuple(roles)
        self.name = name or "(x)".join(f.name for f in self.factors)
        self.shape: Tuple[int, ...] = tuple(f.dim for f in self.factors)
        self.size = int(np.prod(self.shape, dtype=np.int64))
        self.field = "complex" if any(f.field == "complex" for f in self.factors) else "real"

    @property
    def dtype(self):
        return np.complex128 if self.field == "complex" else np.float64

    @property
    def arity(self) -> int:
        return len(self.factors)

    def factors_with_role(self, role: str) -> List[int]:
        return [a for a, r in enumerate(self.roles) if r == role]

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, ProductAlgebra):
            return NotImplemented
        return (
            len(self.factors) == len(other.factors)
            and all(a is b for a, b in zip(self.factors, other.factors))
            and self.roles == other.roles
        )

    def __hash__(self) -> int:
        return hash((tuple(id(f) for f in self.factors), self.roles))

    def __repr__(self) -> str:
        return f"ProductAlgebra({self.name}, shape={self.shape}, roles={self.roles})"


def tensor_space(
    factors: Sequence[Algebra],
    roles: Optional[Sequence[str]] = None,
    name: Optional[str] = None,
    budget: Optional[int] = None,
) -> ProductAlgebra:
    """
    Build an ordered tensor product space

    Args:
        factors: Algebras in factor order
        roles: One of 'positional', 'hidden', 'feature' per factor; by default the
            last factor is the feature factor and the others are positional
        name: Optional space name
        budget: Maximum coefficient count (defaults to the engine budget)

    Returns:
        ProductAlgebra: The space

    Raises:
        BudgetExceededError: If the product of factor dims exceeds the budget
    """
    if not factors:
        raise InvalidDimensionError("A tensor space needs at least one factor")
    if roles is None:
        roles = ["positional"] * (len(factors) - 1) + ["feature"]
    if len(roles) != len(factors):
        raise ShapeMismatchError(f"{len(roles)} roles given for {len(factors)} factors")
    for role in roles:
        if role not in ROLES:
            raise ValueError(f"Unknown factor role '{role}', expected one of {ROLES}")
    budget = budget if budget is not None else get_engine_config().budget
    size = 1
    for factor in factors:
        size *= factor.dim
    if size > budget:
        raise BudgetExceededError(
            f"Tensor space with shape {tuple(f.dim for f in factors)} needs {size} coefficients, budget is {budget}"
        )
    space = ProductAlgebra(factors, roles, name=name)
    logger.debug(f"Built tensor space {space!r}")
    return space


class TensorElement:
    """
    Coefficients of a signal in a product space

    Plain elements are stored dense or, when at most ``sparse_threshold`` of the
    coefficients are nonzero, as a sorted coordinate list. Tracked elements
    (coefficients recorded on a gradient tape) are always dense.
    """

    def __init__(
        self,
        space: ProductAlgebra,
        coeff: Any = None,
        positions: Optional[np.ndarray] = None,
        storage: Optional[str] = None,
    ):
        self.space = space
        self.positions = None if positions is None else np.asarray(positions, dtype=np.float64)
        self._coords: Optional[Tuple[np.ndarray, np.ndarray]] = None
        if coeff is None:
            coeff = np.zeros(space.size, dtype=space.dtype)
        if ops.is_tracked(coeff):
            if coeff.size != space.size:
                raise ShapeMismatchError(f"Tracked coefficients have {coeff.size} entries, space needs {space.size}")
            self._dense = coeff
            return
        array = np.asarray(coeff)
        if array.shape not in ((space.size,), space.shape):
            raise ShapeMismatchError(f"Coefficient shape {array.shape} does not match space shape {space.shape}")
        array = np.array(array.ravel(), dtype=np.result_type(array.dtype, space.dtype))
        if space.field == "real":
            if np.iscomplexobj(array) and np.any(array.imag != 0):
                raise ShapeMismatchError(f"Real space '{space.name}' received complex coefficients")
            array = np.real(array)
        self._dense = array
        if storage is None:
            threshold = get_engine_config().sparse_threshold
            storage = "sparse" if np.count_nonzero(array) <= threshold * array.size else "dense"
        if storage == "sparse":
            self._to_sparse()

    def _to_sparse(self) -> None:
        index = np.flatnonzero(self._dense)
        self._coords = (index, self._dense[index])
        self._dense = None

    @classmethod
    def from_coords(
        cls,
        space: ProductAlgebra,
        index: np.ndarray,
        values: np.ndarray,
        positions: Optional[np.ndarray] = None,
    ) -> "TensorElement":
        """Build an element from flat indices and values; duplicates are summed"""
        dense = ops.scatter_add(np.asarray(values, dtype=space.dtype), np.asarray(index, dtype=np.int64), space.size)
        if space.field == "real":
            dense = np.real(dense)
        return cls(space, dense, positions=positions)

    @classmethod
    def from_entries(
        cls,
        space: ProductAlgebra,
        entries: Dict[Tuple[int, ...], complex],
        positions: Optional[np.ndarray] = None,
    ) -> "TensorElement":
        """Build an element from a multi-index -> coefficient mapping"""
        if not entries:
            return cls(space, positions=positions)
        keys = list(entries)
        for key in keys:
            _check_probe(space, key)
        index = np.ravel_multi_index(tuple(np.array(keys).T), space.shape)
        return cls.from_coords(space, index, np.array([entries[k] for k in keys]), positions)

    # Storage
    # ---
    @property
    def storage(self) -> str:
        return "sparse" if self._coords is not None else "dense"

    @property
    def is_tracked(self) -> bool:
        return ops.is_tracked(self._dense)

    @property
    def flat(self):
        """Flat coefficient array (tracked elements return their tracked array)"""
        if self._coords is not None:
            dense = np.zeros(self.space.size, dtype=self._coords[1].dtype)
            dense[self._coords[0]] = self._coords[1]
            return dense
        return self._dense

    @property
    def values(self) -> np.ndarray:
        """Plain coefficient array in the space's shape"""
        return ops.primal(self.flat).reshape(self.space.shape)

    def coords(self) -> Tuple[np.ndarray, Any]:
        """Structural support as sorted flat indices with the matching values"""
        if self._coords is not None:
            return self._coords
        index = np.flatnonzero(ops.support(self._dense))
        return index, ops.gather(self._dense, index)

    @property
    def nnz(self) -> int:
        if self._coords is not None:
            return int(self._coords[0].size)
        return int(np.count_nonzero(ops.support(self._dense)))

    def to_dense(self) -> "TensorElement":
        return TensorElement(self.space, self.flat, positions=self.positions, storage="dense")

    def to_sparse(self) -> "TensorElement":
        if self.is_tracked:
            return self
        return TensorElement(self.space, self.flat, positions=self.positions, storage="sparse")

    def with_coeff(self, coeff: Any) -> "TensorElement":
        """New element in the same space (and with the same positions)"""
        return TensorElement(self.space, coeff, positions=self.positions)

    # Linear structure
    # ---
    def _check_space(self, other: "TensorElement") -> Optional[np.ndarray]:
        if other.space != self.space:
            raise SpaceMismatchError(f"Elements of '{self.space.name}' and '{other.space.name}' cannot be combined")
        return merge_positions(self.positions, other.positions)

    def __add__(self, other: "TensorElement") -> "TensorElement":
        positions = self._check_space(other)
        return TensorElement(self.space, ops.add(self.flat, other.flat), positions=positions)

    def __sub__(self, other: "TensorElement") -> "TensorElement":
        positions = self._check_space(other)
        return TensorElement(self.space, ops.sub(self.flat, other.flat), positions=positions)

    def __mul__(self, scalar: Any) -> "TensorElement":
        if isinstance(scalar, TensorElement):
            return multiply(self, scalar)
        return self.with_coeff(ops.mul(self.flat, scalar))

    def __rmul__(self, scalar: Any) -> "TensorElement":
        return self.with_coeff(ops.mul(self.flat, scalar))

    def __neg__(self) -> "TensorElement":
        return self.with_coeff(ops.mul(self.flat, -1.0))

    def __getitem__(self, probe: Tuple[int, ...]):
        return readout(self, probe)

    def __repr__(self) -> str:
        return f"TensorElement({self.space.name}, nnz={self.nnz}, storage={self.storage})"


def merge_positions(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """Positions carried by a combination of two elements; both must agree when present"""
    if a is None:
        return b
    if b is None or a is b:
        return a
    if a.shape != b.shape or not np.array_equal(a, b):
        raise SpaceMismatchError("Elements carry different sample positions")
    return a


def zeros(space: ProductAlgebra, positions: Optional[np.ndarray] = None) -> TensorElement:
    return TensorElement(space, positions=positions)


def _expand_runs(sorted_keys: np.ndarray, query: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Match every query against a run of equal sorted keys

    Returns the query id and key position of every match; a query matching a
    run of length r appears r times.
    """
    start = np.searchsorted(sorted_keys, query, side="left")
    stop = np.searchsorted(sorted_keys, query, side="right")
    counts = stop - start
    query_id = np.repeat(np.arange(query.size), counts)
    if query_id.size == 0:
        return query_id, query_id
    first = np.cumsum(counts) - counts
    position = start[query_id] + (np.arange(query_id.size) - first[query_id])
    return query_id, position


def _factor_table(algebra: Algebra) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Left index, right index and entry id of every product a factor can form

    Under the strict policy the overflow pairs are listed too, with entry id -1.
    """
    left, right = algebra.ii, algebra.jj
    entry = np.arange(algebra.nnz)
    if algebra.policy == "strict" and algebra.overflow_pairs:
        overflow = np.array(sorted(algebra.overflow_pairs), dtype=np.int64).reshape(-1, 2)
        left = np.concatenate([left, overflow[:, 0]])
        right = np.concatenate([right, overflow[:, 1]])
        entry = np.concatenate([entry, np.full(overflow.shape[0], -1)])
        order = np.argsort(left * algebra.dim + right, kind="stable")
        left, right, entry = left[order], right[order], entry[order]
    return left, right, entry


def multiply(
    x: TensorElement,
    y: TensorElement,
    params: Optional[Dict[str, Any]] = None,
) -> TensorElement:
    """
    Product of two elements of one space

    The operands are joined one factor at a time. Each nonzero coefficient of
    x is extended only by the right indices its factor can multiply with, and
    a partial index survives only while some nonzero coefficient of y shares
    it, so the work follows the number of nonzero products rather than the
    number of coefficient pairs.

    Args:
        x: Left operand
        y: Right operand
        params: Parameter blocks for algebras with learnable structure constants

    Returns:
        TensorElement: The product in the same space

    Raises:
        SpaceMismatchError: If the operands live in different spaces or carry
            different sample positions
        TruncationError: Under the strict policy, when a surviving product
            leaves a truncated factor basis
    """
    if x.space != y.space:
        raise SpaceMismatchError(f"Cannot multiply elements of '{x.space.name}' and '{y.space.name}'")
    space = x.space
    positions = merge_positions(x.positions, y.positions)
    x_index, x_values = x.coords()
    y_index, y_values = y.coords()
    if x_index.size == 0 or y_index.size == 0:
        return TensorElement(space, positions=positions)
    x_multi = np.unravel_index(x_index, space.shape)
    strides = np.cumprod((space.shape + (1,))[::-1])[::-1][1:]

    px = np.arange(x_index.size)
    prefix = np.zeros(px.size, dtype=np.int64)
    out = np.zeros(px.size, dtype=np.int64)
    entries: List[np.ndarray] = []
    for a, algebra in enumerate(space.factors):
        left, right, entry_id = _factor_table(algebra)
        row, position = _expand_runs(left, x_multi[a][px])
        px, out = px[row], out[row]
        prefix = prefix[row] * algebra.dim + right[position]
        entry_id = entry_id[position]
        alive = np.isin(prefix, np.unique(y_index // strides[a]))
        overflow = alive & (entry_id < 0)
        if np.any(overflow):
            first = int(np.argmax(overflow))
            raise TruncationError(
                f"Product of {algebra.labels[x_multi[a][px[first]]]} and {algebra.labels[right[position[first]]]} "
                f"leaves the truncated basis of '{algebra.name}'"
            )
        px, prefix, out, entry_id = px[alive], prefix[alive], out[alive], entry_id[alive]
        out = out * algebra.dim + algebra.kk[entry_id]
        entries = [e[row][alive] for e in entries] + [entry_id]
        if px.size == 0:
            return TensorElement(space, positions=positions)

    y_order = np.argsort(y_index, kind="stable")
    py = y_order[np.searchsorted(y_index[y_order], prefix)]

    weight: Any = np.ones(px.size)
    tracked_lambdas = []
    for algebra, entry in zip(space.factors, entries):
        lam = algebra.effective_values(params)
        if ops.is_tracked(lam):
            tracked_lambdas.append(ops.gather(lam, entry))
        else:
            weight = weight * lam[entry]
    for lam in tracked_lambdas:
        weight = ops.mul(weight, lam)
    contribution = ops.mul(ops.mul(weight, ops.gather(x_values, px)), ops.gather(y_values, py))
    result = ops.scatter_add(contribution, out, space.size)
    if not ops.is_tracked(result) and space.field == "real" and np.iscomplexobj(result):
        result = np.real(result)
    return TensorElement(space, result, positions=positions)


# Embedding
# ---


@dataclass
class EmbeddingSpec:
    """
    How raw data axes land on the factors of a product space

    The data array has one axis per positional factor followed by an optional
    channel axis. Hidden factors receive the hidden-slot element: index 0 for
    a B1-type factor, every slot (the all-ones g0) for a B2-type factor.
    """

    kind: str
    positional: Tuple[int, ...] = ()
    """Factor receiving each positional data axis."""

    position_maps: Tuple[np.ndarray, ...] = ()
    """For each positional axis, raw index -> factor basis index."""

    feature: Optional[int] = None
    """Factor receiving the channel axis (None for scalar signals)."""

    channels: Tuple[np.ndarray, ...] = ()
    """Channel index -> feature basis index; several blocks replicate the data."""

    hidden: Tuple[int, ...] = ()
    """Factors that receive the hidden-slot element."""

    def __post_init__(self):
        self.positional = tuple(self.positional)
        self.hidden = tuple(self.hidden)
        self.position_maps = tuple(np.asarray(m, dtype=np.int64) for m in self.position_maps)
        self.channels = tuple(np.asarray(c, dtype=np.int64) for c in self.channels)
        if len(self.position_maps) != len(self.positional):
            raise ShapeMismatchError("Every positional axis needs an index map")
        if len(set(self.hidden)) != len(self.hidden):
            raise ShapeMismatchError("Hidden-slot rule names a factor twice")
        claimed = list(self.positional) + list(self.hidden) + ([self.feature] if self.feature is not None else [])
        if len(set(claimed)) != len(claimed):
            raise ShapeMismatchError(f"Embedding assigns a factor twice: {claimed}")
        if self.feature is not None and not self.channels:
            raise ShapeMismatchError("A feature factor needs a channel map")

    @property
    def data_rank(self) -> int:
        return len(self.positional) + (1 if self.feature is not None else 0)


def _hidden_indices(algebra: Algebra) -> np.ndarray:
    if algebra.meta.get("kind") == "b2":
        return np.arange(algebra.dim)
    return np.array([0])


def embed(
    data: np.ndarray,
    space: ProductAlgebra,
    spec: EmbeddingSpec,
    positions: Optional[np.ndarray] = None,
) -> TensorElement:
    """
    Place raw data into a product space following an embedding spec

    Raises:
        ShapeMismatchError: If the data shape does not fit the spec
    """
    data = np.asarray(data)
    if data.ndim != spec.data_rank:
        raise ShapeMismatchError(f"{spec.kind} embedding expects rank {spec.data_rank} data, got shape {data.shape}")
    for axis, index_map in enumerate(spec.position_maps):
        if data.shape[axis] != index_map.size:
            raise ShapeMismatchError(
                f"{spec.kind} embedding axis {axis} has {data.shape[axis]} entries, expected {index_map.size}"
            )
    if spec.feature is not None:
        for block in spec.channels:
            if data.shape[-1] != block.size:
                raise ShapeMismatchError(f"{spec.kind} embedding expects {block.size} channels, got {data.shape[-1]}")
    assigned = set(spec.positional) | set(spec.hidden) | ({spec.feature} if spec.feature is not None else set())
    if assigned != set(range(space.arity)):
        raise ShapeMismatchError(f"{spec.kind} embedding leaves factors {sorted(set(range(space.arity)) - assigned)} unassigned")

    grid = np.indices(data.shape).reshape(data.ndim, -1)
    values = data.ravel()
    blocks = spec.channels if spec.feature is not None else (None,)
    all_index, all_values = [], []
    for block in blocks:
        columns: List[np.ndarray] = [None] * space.arity
        for axis, (factor, index_map) in enumerate(zip(spec.positional, spec.position_maps)):
            columns[factor] = index_map[grid[axis]]
        if block is not None:
            columns[spec.feature] = block[grid[-1]]
        rows = values
        for factor in spec.hidden:
            slots = _hidden_indices(space.factors[factor])
            repeat = slots.size
            rows = np.repeat(rows, repeat)
            columns = [None if c is None else np.repeat(c, repeat) for c in columns]
            columns[factor] = np.tile(slots, rows.size // repeat)
        for factor, column in enumerate(columns):
            if np.any(column < 0) or np.any(column >= space.shape[factor]):
                raise IndexOutOfRangeError(f"{spec.kind} embedding maps outside factor {factor}")
        all_index.append(np.ravel_multi_index(tuple(columns), space.shape))
        all_values.append(rows)
    return TensorElement.from_coords(space, np.concatenate(all_index), np.concatenate(all_values), positions)


def read_embedded(element: TensorElement, spec: EmbeddingSpec, block: int = 0) -> np.ndarray:
    """Inverse of embed: read the raw data back from the first hidden slot"""
    values = element.values
    selector: List[Any] = [None] * element.space.arity
    for factor, index_map in zip(spec.positional, spec.position_maps):
        selector[factor] = index_map
    for factor in spec.hidden:
        selector[factor] = np.array([_hidden_indices(element.space.factors[factor])[0]])
    if spec.feature is not None:
        selector[spec.feature] = spec.channels[block]
    out = values[np.ix_(*selector)]
    keep = [a for a in range(element.space.arity) if a not in spec.hidden]
    return out.reshape(tuple(out.shape[a] for a in keep))


def sequence_spec(
    space: ProductAlgebra,
    n_tokens: int,
    channels: Union[Sequence[int], Sequence[Sequence[int]]],
    token_offset: Optional[int] = None,
) -> EmbeddingSpec:
    """Token k on the first factor, hidden slot on the second, channels on the third"""
    first = space.factors[0]
    if token_offset is None:
        token_offset = 1 if first.meta.get("kind") == "b1" else 0
    blocks = channels if np.ndim(channels[0]) else (channels,)
    return EmbeddingSpec(
        kind="sequence",
        positional=(0,),
        position_maps=(np.arange(n_tokens) + token_offset,),
        feature=2,
        channels=tuple(blocks),
        hidden=(1,),
    )


def embed_sequence(
    tokens: np.ndarray,
    space: ProductAlgebra,
    channels: Optional[Union[Sequence[int], Sequence[Sequence[int]]]] = None,
) -> TensorElement:
    """
    Embed an n x d token matrix as sum_k,a x_a^(k) f_k (x) f_0 (x) e_a

    Args:
        tokens: Token matrix, one row per token
        space: A three-factor positional x positional x feature space
        channels: Feature indices receiving the d channels (default 0..d-1);
            a list of blocks replicates the tokens into every block

    Returns:
        TensorElement: The embedded sequence
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ShapeMismatchError(f"Token matrix must be 2-D, got shape {tokens.shape}")
    if space.arity != 3:
        raise ShapeMismatchError(f"Sequence embedding needs a 3-factor space, got {space.arity}")
    if channels is None:
        channels = np.arange(tokens.shape[1])
    spec = sequence_spec(space, tokens.shape[0], channels)
    if spec.position_maps[0].size and spec.position_maps[0][-1] >= space.shape[0]:
        raise ShapeMismatchError(f"{tokens.shape[0]} tokens do not fit factor of dim {space.shape[0]}")
    return embed(tokens, space, spec)


def read_sequence(element: TensorElement, n_tokens: int, channels: Sequence[int]) -> np.ndarray:
    return read_embedded(element, sequence_spec(element.space, n_tokens, channels))


def embed_image2d(
    image: np.ndarray,
    space: ProductAlgebra,
    row_map: Optional[Sequence[int]] = None,
    col_map: Optional[Sequence[int]] = None,
) -> TensorElement:
    """Embed an image as sum_ij X_ij e_i (x) e_j"""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ShapeMismatchError(f"Image must be 2-D, got shape {image.shape}")
    spec = EmbeddingSpec(
        kind="image2d",
        positional=(0, 1),
        position_maps=(
            np.arange(image.shape[0]) if row_map is None else row_map,
            np.arange(image.shape[1]) if col_map is None else col_map,
        ),
    )
    return embed(image, space, spec)


def embed_field3d(
    features: np.ndarray,
    positions: np.ndarray,
    space: ProductAlgebra,
    channels: Optional[Sequence[int]] = None,
) -> TensorElement:
    """
    Embed per-point features as sum_a s(r_a) f_a (x) f_0 (x) e

    The sample positions travel with the element.
    """
    features = np.asarray(features)
    positions = np.asarray(positions, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeMismatchError(f"Field features must be 2-D, got shape {features.shape}")
    if positions.ndim != 2 or positions.shape[0] != features.shape[0]:
        raise ShapeMismatchError(
            f"{features.shape[0]} feature rows but positions have shape {positions.shape}"
        )
    if channels is None:
        channels = np.arange(features.shape[1])
    spec = sequence_spec(space, features.shape[0], channels)
    spec.kind = "field3d"
    return embed(features, space, spec, positions=positions)


def embed_hidden(
    x: np.ndarray,
    space: ProductAlgebra,
    channels: Sequence[int],
    hidden_factor: int = 0,
    feature_factor: int = 1,
) -> TensorElement:
    """Embed a channel vector on the hidden-augmented space: sum_a x_a g_0 (x) e_a"""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ShapeMismatchError(f"Hidden-augmented input must be 1-D, got shape {x.shape}")
    spec = EmbeddingSpec(
        kind="hidden-augmented",
        feature=feature_factor,
        channels=(np.asarray(channels),),
        hidden=(hidden_factor,),
    )
    return embed(x, space, spec)


def _check_probe(space: ProductAlgebra, probe: Sequence[int]) -> None:
    if len(probe) != space.arity:
        raise IndexOutOfRangeError(f"Probe {tuple(probe)} has arity {len(probe)}, space has {space.arity}")
    for axis, (index, dim) in enumerate(zip(probe, space.shape)):
        if not 0 <= int(index) < dim:
            raise IndexOutOfRangeError(f"Probe index {index} on factor {axis} outside [0, {dim})")


def readout(element: TensorElement, probe: Sequence[int]):
    """Coefficient at a basis multi-index (inner product with that basis vector)"""
    _check_probe(element.space, probe)
    flat = int(np.ravel_multi_index(tuple(int(p) for p in probe), element.space.shape))
    if element._coords is not None:
        index, values = element._coords
        hit = np.searchsorted(index, flat)
        if hit < index.size and index[hit] == flat:
            return values[hit]
        return element.space.dtype(0)
    return ops.primal(element.flat)[flat]


# Serialization
# ---


def dump_element(element: TensorElement) -> str:
    """Serialize an element: header, optional positions, one line per nonzero"""
    lines = [f"element {element.space.name.replace(' ', '_')}"]
    if element.positions is not None:
        for point in element.positions:
            lines.append("position " + " ".join(format_number(c) for c in point))
    flat = ops.primal(element.flat)
    for index in np.flatnonzero(flat):
        value = complex(flat[index])
        multi = np.unravel_index(index, element.space.shape)
        lines.append(
            " ".join(str(int(i)) for i in multi) + f" {format_number(value.real)} {format_number(value.imag)}"
        )
    return "\n".join(lines) + "\n"


def load_element(text: str, space: ProductAlgebra) -> TensorElement:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or not lines[0].startswith("element "):
        raise ValueError("Element text must start with an 'element' header line")
    positions, entries = [], {}
    for number, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if parts[0] == "position":
            positions.append([float(p) for p in parts[1:]])
            continue
        if len(parts) != space.arity + 2:
            raise ShapeMismatchError(f"Line {number}: expected {space.arity} indices and two numbers")
        multi = tuple(int(p) for p in parts[: space.arity])
        re, im = float(parts[-2]), float(parts[-1])
        entries[multi] = complex(re, im) if space.field == "complex" else re
    return TensorElement.from_entries(space, entries, positions=np.array(positions) if positions else None)
