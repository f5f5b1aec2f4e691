"""
Finite-dimensional algebras defined by structure constants

An algebra is a basis together with sparse structure constants
``e_i e_j = sum_k lambda[i, j, k] e_k``.  This module builds the positional
algebras used throughout the engine, checks declared axioms eagerly and
serializes algebras to a plain-text format.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from lightrag.utils import logger

from . import tape as ops
from .errors import (
    AlgebraMismatchError,
    AxiomViolationError,
    FieldMismatchError,
    IndexOutOfRangeError,
    InvalidDimensionError,
    TruncationError,
)

FIELDS = ("real", "complex")
AXIOM_TOL = 1e-12
DENSE_PRODUCT_DIM = 8
DENSE_AXIOM_DIM = 16

Entry = Tuple[int, int, int, complex]


@dataclass(frozen=True)
class AxiomFlags:
    """Axioms an algebra declares; every declared axiom is verified at construction"""

    associative: bool = False
    commutative: bool = False
    unit: Optional[int] = None

    def describe(self) -> str:
        parts = []
        if self.associative:
            parts.append("associative")
        if self.commutative:
            parts.append("commutative")
        if self.unit is not None:
            parts.append(f"unit:{self.unit}")
        return ",".join(parts) if parts else "none"

    @classmethod
    def parse(cls, text: str) -> "AxiomFlags":
        flags: Dict[str, Any] = {}
        for part in text.split(","):
            part = part.strip()
            if not part or part == "none":
                continue
            if part == "associative":
                flags["associative"] = True
            elif part == "commutative":
                flags["commutative"] = True
            elif part.startswith("unit:"):
                flags["unit"] = int(part.split(":", 1)[1])
            else:
                raise ValueError(f"Unknown axiom flag: {part}")
        return cls(**flags)


@dataclass(frozen=True)
class ParamLink:
    """Binds a set of structure-constant entries to entries of a parameter block"""

    block: str
    positions: np.ndarray
    """Indices into the algebra's sorted entry arrays."""

    flat_index: np.ndarray
    """Matching flat indices into the parameter block."""


class Algebra:
    """
    Finite-dimensional algebra over the reals or the complex numbers

    Instances are immutable; derived algebras (parameter-linked, with a
    representation) are new objects.
    """

    def __init__(
        self,
        name: str,
        dim: int,
        ii: np.ndarray,
        jj: np.ndarray,
        kk: np.ndarray,
        values: np.ndarray,
        field: str = "real",
        flags: AxiomFlags = AxiomFlags(),
        labels: Optional[Sequence[str]] = None,
        links: Tuple[ParamLink, ...] = (),
        overflow_pairs: FrozenSet[Tuple[int, int]] = frozenset(),
        policy: Optional[str] = None,
        representation: Optional[Callable[[Any], np.ndarray]] = None,
        meta: Optional[Dict[str, Any]] = None,
    ):
        if dim < 1:
            raise InvalidDimensionError(f"Algebra '{name}' needs dim >= 1, got {dim}")
        if field not in FIELDS:
            raise FieldMismatchError(f"Unknown field '{field}', expected one of {FIELDS}")
        self.name = name
        self.dim = int(dim)
        self.field = field
        self.flags = flags
        self.labels = tuple(labels) if labels is not None else tuple(f"e{i}" for i in range(dim))
        if len(self.labels) != self.dim:
            raise InvalidDimensionError(
                f"Algebra '{name}' has {len(self.labels)} labels for dim {dim}"
            )
        order = np.lexsort((kk, jj, ii))
        self.ii = np.asarray(ii, dtype=np.int64)[order]
        self.jj = np.asarray(jj, dtype=np.int64)[order]
        self.kk = np.asarray(kk, dtype=np.int64)[order]
        self.values = np.asarray(values, dtype=self.dtype)[order]
        for arr in (self.ii, self.jj, self.kk):
            arr.setflags(write=False)
        self.values.setflags(write=False)
        if order.size and not np.array_equal(order, np.arange(order.size)) and links:
            inverse = np.empty_like(order)
            inverse[order] = np.arange(order.size)
            links = tuple(
                ParamLink(link.block, inverse[link.positions], link.flat_index) for link in links
            )
        self.links = links
        self.overflow_pairs = frozenset(overflow_pairs)
        self.policy = policy
        self.representation = representation
        self.meta = dict(meta or {})
        self._lambda_map: Optional[Dict[Tuple[int, int], List[Tuple[int, complex]]]] = None

    # Basic properties
    # ---
    @property
    def dtype(self):
        return np.complex128 if self.field == "complex" else np.float64

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def trainable(self) -> np.ndarray:
        """Boolean mask over entries: True where a parameter block drives the constant"""
        mask = np.zeros(self.nnz, dtype=bool)
        for link in self.links:
            mask[link.positions] = True
        return mask

    @property
    def lambda_map(self) -> Dict[Tuple[int, int], List[Tuple[int, complex]]]:
        if self._lambda_map is None:
            table: Dict[Tuple[int, int], List[Tuple[int, complex]]] = {}
            for i, j, k, v in zip(self.ii, self.jj, self.kk, self.values):
                table.setdefault((int(i), int(j)), []).append((int(k), v))
            self._lambda_map = table
        return self._lambda_map

    def constant(self, i: int, j: int, k: int) -> complex:
        for kk, value in self.lambda_map.get((i, j), []):
            if kk == k:
                return value
        return 0.0

    def dense(self) -> np.ndarray:
        """Structure constants as a dim x dim x dim array"""
        tensor = np.zeros((self.dim,) * 3, dtype=self.dtype)
        np.add.at(tensor, (self.ii, self.jj, self.kk), self.values)
        return tensor

    def effective_values(self, params: Optional[Dict[str, Any]] = None):
        """
        Structure-constant values with linked parameter blocks substituted

        Args:
            params: Mapping from block name to a flat array (plain or tracked)

        Returns:
            Values aligned with ``ii/jj/kk``; tracked when any linked block is tracked
        """
        if not self.links or not params:
            return self.values
        linked = [link for link in self.links if link.block in params]
        if not linked:
            return self.values
        frozen_mask = np.ones(self.nnz, dtype=bool)
        for link in linked:
            frozen_mask[link.positions] = False
        result = self.values * frozen_mask
        for link in linked:
            block = params[link.block]
            if ops.is_tracked(block) or any(ops.is_tracked(params[l.block]) for l in linked):
                result = ops.add(result, ops.scatter_add(ops.gather(block, link.flat_index), link.positions, self.nnz))
            else:
                result = np.array(result, dtype=np.result_type(result, np.asarray(block)))
                result[link.positions] = np.asarray(block).ravel()[link.flat_index]
        return result

    def with_links(self, links: Iterable[ParamLink]) -> "Algebra":
        """Copy of this algebra whose listed entries follow parameter blocks"""
        return Algebra(
            self.name,
            self.dim,
            self.ii,
            self.jj,
            self.kk,
            self.values,
            field=self.field,
            flags=self.flags,
            labels=self.labels,
            links=tuple(self.links) + tuple(links),
            overflow_pairs=self.overflow_pairs,
            policy=self.policy,
            representation=self.representation,
            meta=self.meta,
        )

    def with_representation(self, representation: Callable[[Any], np.ndarray]) -> "Algebra":
        copy = self.with_links(())
        copy.representation = representation
        return copy

    def entry_position(self, i: int, j: int, k: int) -> int:
        """Index of the stored entry (i, j, k); raises if the entry is not stored"""
        hits = np.flatnonzero((self.ii == i) & (self.jj == j) & (self.kk == k))
        if hits.size == 0:
            raise IndexOutOfRangeError(f"Entry ({i}, {j}, {k}) is not stored in '{self.name}'")
        return int(hits[0])

    def __repr__(self) -> str:
        return (
            f"Algebra(name={self.name!r}, dim={self.dim}, field={self.field}, "
            f"nnz={self.nnz}, flags={self.flags.describe()})"
        )


def _first_witness(rows: np.ndarray, cols: np.ndarray, data: np.ndarray, tol: float) -> Optional[Tuple[int, int]]:
    """Lexicographically smallest (row, col) whose value exceeds tol in magnitude"""
    bad = np.abs(data) > tol
    if not np.any(bad):
        return None
    rows, cols = rows[bad], cols[bad]
    first = np.lexsort((cols, rows))[0]
    return int(rows[first]), int(cols[first])


def _sparse_defect(shape, rows_a, cols_a, data_a, rows_b, cols_b, data_b) -> sparse.coo_matrix:
    a = sparse.coo_matrix((data_a, (rows_a, cols_a)), shape=shape).tocsr()
    b = sparse.coo_matrix((data_b, (rows_b, cols_b)), shape=shape).tocsr()
    return (a - b).tocoo()


def _check_axioms_dense(algebra: Algebra, flags: AxiomFlags, tol: float) -> None:
    lam = algebra.dense()
    d = algebra.dim
    if flags.commutative:
        bad = np.argwhere(np.abs(lam - lam.transpose(1, 0, 2)) > tol)
        if bad.size:
            i, j, k = (int(v) for v in bad[0])
            raise AxiomViolationError("commutative", (i, j, k))
    if flags.unit is not None:
        u = flags.unit
        eye = np.eye(d, dtype=lam.dtype)
        for side, block in (("left", lam[u, :, :]), ("right", lam[:, u, :])):
            bad = np.argwhere(np.abs(block - eye) > tol)
            if bad.size:
                n, m = (int(v) for v in bad[0])
                raise AxiomViolationError("unit", (u, n, m), f"Unit {u} fails on the {side} at ({n}, {m})")
    if flags.associative:
        left = np.einsum("ijm,mkn->ijkn", lam, lam)
        right = np.einsum("jkp,ipn->ijkn", lam, lam)
        defect = np.max(np.abs(left - right), axis=3)
        bad = np.argwhere(defect > tol)
        if bad.size:
            i, j, k = (int(v) for v in bad[0])
            raise AxiomViolationError("associative", (i, j, k))


def _check_axioms_sparse(algebra: Algebra, flags: AxiomFlags, tol: float) -> None:
    d = algebra.dim
    ii, jj, kk = algebra.ii, algebra.jj, algebra.kk
    values = np.asarray(algebra.values)
    if flags.commutative:
        # rows (i, j) flattened, columns k
        defect = _sparse_defect((d * d, d), ii * d + jj, kk, values, jj * d + ii, kk, values)
        witness = _first_witness(defect.row, defect.col, defect.data, tol)
        if witness is not None:
            row, k = witness
            raise AxiomViolationError("commutative", (row // d, row % d, k))
    if flags.unit is not None:
        u = flags.unit
        diag = np.arange(d)
        for side, mask, other in (("left", ii == u, jj), ("right", jj == u, ii)):
            defect = _sparse_defect(
                (d, d), other[mask], kk[mask], values[mask], diag, diag, np.ones(d, dtype=values.dtype)
            )
            witness = _first_witness(defect.row, defect.col, defect.data, tol)
            if witness is not None:
                n, m = witness
                raise AxiomViolationError("unit", (u, n, m), f"Unit {u} fails on the {side} at ({n}, {m})")
    if flags.associative:
        # (e_i e_j) e_k: rows (i, j) x columns m, times rows m x columns (k, n)
        pair_to_out = sparse.csr_matrix((values, (ii * d + jj, kk)), shape=(d * d, d))
        out_to_kn = sparse.csr_matrix((values, (ii, jj * d + kk)), shape=(d, d * d))
        left = (pair_to_out @ out_to_kn).tocoo()
        # e_i (e_j e_k): rows (j, k) x columns p, times rows p x columns (i, n)
        in_to_in = sparse.csr_matrix((values, (jj, ii * d + kk)), shape=(d, d * d))
        right = (pair_to_out @ in_to_in).tocoo()
        j, k = right.row // d, right.row % d
        i, n = right.col // d, right.col % d
        defect = _sparse_defect(
            (d * d, d * d), left.row, left.col, left.data, i * d + j, k * d + n, right.data
        )
        witness = _first_witness(defect.row, defect.col // d, defect.data, tol)
        if witness is not None:
            row, k = witness
            raise AxiomViolationError("associative", (row // d, row % d, k))


def check_axioms(algebra: Algebra, flags: Optional[AxiomFlags] = None, tol: float = AXIOM_TOL) -> None:
    """
    Verify declared axioms exhaustively on basis triples

    Small algebras are checked on the dense structure tensor; larger ones work
    on the stored entries so memory follows the number of nonzero products.

    Raises:
        AxiomViolationError: With the lexicographically first failing witness
    """
    flags = flags or algebra.flags
    if flags.unit is not None and not 0 <= flags.unit < algebra.dim:
        raise IndexOutOfRangeError(f"Unit index {flags.unit} outside [0, {algebra.dim})")
    if algebra.dim <= DENSE_AXIOM_DIM:
        _check_axioms_dense(algebra, flags, tol)
    else:
        _check_axioms_sparse(algebra, flags, tol)


def _collect(dim: int, entries: Iterable[Entry], field: str):
    table: Dict[Tuple[int, int, int], complex] = {}
    for entry in entries:
        if len(entry) != 4:
            raise ValueError(f"Structure constant entries are (i, j, k, value), got {entry!r}")
        i, j, k, value = entry
        for name, idx in (("i", i), ("j", j), ("k", k)):
            if not 0 <= int(idx) < dim:
                raise IndexOutOfRangeError(f"Index {name}={idx} outside [0, {dim})")
        if field == "real" and abs(complex(value).imag) > 0:
            raise FieldMismatchError(f"Real algebra received complex constant {value!r}")
        key = (int(i), int(j), int(k))
        table[key] = table.get(key, 0.0) + value
    keys = sorted(table)
    ii = np.array([key[0] for key in keys], dtype=np.int64)
    jj = np.array([key[1] for key in keys], dtype=np.int64)
    kk = np.array([key[2] for key in keys], dtype=np.int64)
    dtype = np.complex128 if field == "complex" else np.float64
    values = np.array([table[key] for key in keys], dtype=dtype)
    if field == "real":
        values = np.real(values)
    return ii, jj, kk, values


def make_generic(
    dim: int,
    lambda_entries: Iterable[Entry],
    field: str = "real",
    axiom_flags: Optional[AxiomFlags] = None,
    name: str = "generic",
    labels: Optional[Sequence[str]] = None,
    trainable: Optional[Union[str, Iterable[Tuple[int, int, int]]]] = None,
    param_block: Optional[str] = None,
    **kwargs,
) -> Algebra:
    """
    Build an algebra from explicit structure constants

    Args:
        dim: Number of basis vectors
        lambda_entries: Iterable of (i, j, k, value); duplicates are summed
        field: 'real' or 'complex'
        axiom_flags: Axioms to verify eagerly
        name: Algebra name used in logs and serialization
        labels: Optional basis labels
        trainable: 'all' or the (i, j, k) triples whose constants are learnable
        param_block: Parameter block name driving the trainable entries

    Returns:
        Algebra: The validated algebra
    """
    if dim < 1:
        raise InvalidDimensionError(f"Algebra dim must be >= 1, got {dim}")
    if field not in FIELDS:
        raise FieldMismatchError(f"Unknown field '{field}'")
    ii, jj, kk, values = _collect(dim, lambda_entries, field)
    flags = axiom_flags or AxiomFlags()
    links: Tuple[ParamLink, ...] = ()
    if trainable is not None:
        if param_block is None:
            raise ValueError("Trainable structure constants need a parameter block name")
        if trainable == "all":
            positions = np.arange(ii.size)
        else:
            positions = np.array(
                sorted(
                    int(np.flatnonzero((ii == i) & (jj == j) & (kk == k))[0])
                    for i, j, k in trainable
                ),
                dtype=np.int64,
            )
        links = (ParamLink(param_block, positions, np.arange(positions.size)),)
    algebra = Algebra(name, dim, ii, jj, kk, values, field=field, flags=flags, labels=labels, links=links, **kwargs)
    check_axioms(algebra)
    logger.debug(f"Built algebra {algebra!r}")
    return algebra


def link_entries(
    algebra: Algebra,
    block: str,
    triples: Sequence[Tuple[int, int, int]],
    flat_index: Optional[Sequence[int]] = None,
) -> Algebra:
    """
    Bind stored entries (i, j, k) to a parameter block

    Args:
        algebra: Algebra whose entries become trainable
        block: Parameter block name
        triples: Entries to bind, each of which must be stored
        flat_index: Flat block index per triple (defaults to 0..len-1)

    Returns:
        Algebra: Copy with the new parameter link
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    d = algebra.dim
    keys = (algebra.ii * d + algebra.jj) * d + algebra.kk
    wanted = (triples[:, 0] * d + triples[:, 1]) * d + triples[:, 2]
    positions = np.searchsorted(keys, wanted)
    missing = (positions >= keys.size) | (keys[np.minimum(positions, keys.size - 1)] != wanted)
    if np.any(missing):
        i, j, k = triples[np.argmax(missing)]
        raise IndexOutOfRangeError(f"Entry ({i}, {j}, {k}) is not stored in '{algebra.name}'")
    if flat_index is None:
        flat_index = np.arange(positions.size)
    return algebra.with_links([ParamLink(block, positions, np.asarray(flat_index, dtype=np.int64))])


def make_b1(n_positions: int) -> Algebra:
    """First auxiliary structural algebra: f_i f_j = delta_ij f_0 with f_0 the unit"""
    if n_positions < 1:
        raise InvalidDimensionError(f"B1 needs n_positions >= 1, got {n_positions}")
    entries: List[Entry] = [(0, 0, 0, 1.0)]
    for i in range(1, n_positions + 1):
        entries += [(0, i, i, 1.0), (i, 0, i, 1.0), (i, i, 0, 1.0)]
    return make_generic(
        n_positions + 1,
        entries,
        axiom_flags=AxiomFlags(commutative=True, unit=0),
        name=f"B1({n_positions})",
        labels=[f"f{i}" for i in range(n_positions + 1)],
        meta={"kind": "b1"},
    )


def make_b2(n_slots: int) -> Algebra:
    """Second auxiliary structural algebra: g_a g_b = delta_ab g_a"""
    if n_slots < 1:
        raise InvalidDimensionError(f"B2 needs n_slots >= 1, got {n_slots}")
    entries = [(a, a, a, 1.0) for a in range(n_slots)]
    return make_generic(
        n_slots,
        entries,
        axiom_flags=AxiomFlags(associative=True, commutative=True),
        name=f"B2({n_slots})",
        labels=[f"g{a + 1}" for a in range(n_slots)],
        meta={"kind": "b2"},
    )


def make_direct_sum(components: Sequence[Algebra], name: Optional[str] = None) -> Algebra:
    """
    Block-diagonal direct sum; products across components vanish

    Parameter links of the components are carried over with shifted positions.
    """
    if not components:
        raise InvalidDimensionError("Direct sum needs at least one component")
    fields = {c.field for c in components}
    if len(fields) != 1:
        raise FieldMismatchError(f"Direct sum components mix fields {sorted(fields)}")
    field = fields.pop()
    offset = 0
    entry_offset = 0
    ii, jj, kk, values, labels, links = [], [], [], [], [], []
    for c_index, comp in enumerate(components):
        ii.append(comp.ii + offset)
        jj.append(comp.jj + offset)
        kk.append(comp.kk + offset)
        values.append(comp.values)
        labels += [f"{c_index}:{label}" for label in comp.labels]
        links += [
            ParamLink(link.block, link.positions + entry_offset, link.flat_index) for link in comp.links
        ]
        offset += comp.dim
        entry_offset += comp.nnz
    flags = AxiomFlags(
        associative=all(c.flags.associative for c in components),
        commutative=all(c.flags.commutative for c in components),
    )
    algebra = Algebra(
        name or "+".join(c.name for c in components),
        offset,
        np.concatenate(ii),
        np.concatenate(jj),
        np.concatenate(kk),
        np.concatenate(values),
        field=field,
        flags=flags,
        labels=labels,
        links=tuple(links),
        meta={"kind": "direct_sum", "blocks": [c.dim for c in components]},
    )
    return algebra


@dataclass
class AlgebraElement:
    """Element of a single algebra as a dense coefficient vector"""

    algebra: Algebra
    coeff: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.coeff is None:
            self.coeff = np.zeros(self.algebra.dim, dtype=self.algebra.dtype)
        coeff = np.asarray(self.coeff)
        if coeff.shape != (self.algebra.dim,):
            raise InvalidDimensionError(
                f"Coefficient length {coeff.shape} does not match dim {self.algebra.dim}"
            )
        if self.algebra.field == "real":
            if np.iscomplexobj(coeff) and np.any(coeff.imag != 0):
                raise FieldMismatchError(f"Real algebra '{self.algebra.name}' rejects complex coefficients")
            coeff = np.real(coeff)
        self.coeff = np.array(coeff, dtype=self.algebra.dtype)

    def _check(self, other: "AlgebraElement") -> None:
        if other.algebra is not self.algebra:
            raise AlgebraMismatchError(
                f"Elements of '{self.algebra.name}' and '{other.algebra.name}' cannot be combined"
            )

    def __add__(self, other: "AlgebraElement") -> "AlgebraElement":
        self._check(other)
        return AlgebraElement(self.algebra, self.coeff + other.coeff)

    def __sub__(self, other: "AlgebraElement") -> "AlgebraElement":
        self._check(other)
        return AlgebraElement(self.algebra, self.coeff - other.coeff)

    def __mul__(self, scalar: complex) -> "AlgebraElement":
        return AlgebraElement(self.algebra, self.coeff * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "AlgebraElement":
        return AlgebraElement(self.algebra, -self.coeff)


def basis(algebra: Algebra, index: int) -> AlgebraElement:
    if not 0 <= index < algebra.dim:
        raise IndexOutOfRangeError(f"Basis index {index} outside [0, {algebra.dim})")
    coeff = np.zeros(algebra.dim, dtype=algebra.dtype)
    coeff[index] = 1.0
    return AlgebraElement(algebra, coeff)


def element(algebra: Algebra, coeff: Sequence[complex]) -> AlgebraElement:
    return AlgebraElement(algebra, np.asarray(coeff))


def g0(algebra: Algebra) -> AlgebraElement:
    """The all-ones element sum_a g_a of a B2 algebra"""
    return AlgebraElement(algebra, np.ones(algebra.dim, dtype=algebra.dtype))


def product(algebra: Algebra, x: AlgebraElement, y: AlgebraElement) -> AlgebraElement:
    """
    Product of two elements: (xy)_k = sum_ij x_i y_j lambda[i, j, k]

    Small algebras contract against the dense constant tensor; larger ones
    scatter the sparse entry list.
    """
    for operand in (x, y):
        if operand.algebra is not algebra:
            raise AlgebraMismatchError(
                f"Operand of '{operand.algebra.name}' used with algebra '{algebra.name}'"
            )
    if algebra.policy == "strict" and algebra.overflow_pairs:
        nx, ny = np.flatnonzero(x.coeff), np.flatnonzero(y.coeff)
        support_y = set(ny.tolist())
        for i in nx:
            for j in support_y:
                if (int(i), j) in algebra.overflow_pairs:
                    raise TruncationError(
                        f"Product of {algebra.labels[i]} and {algebra.labels[j]} leaves the truncated basis"
                    )
    if algebra.dim <= DENSE_PRODUCT_DIM:
        out = np.einsum("i,j,ijk->k", x.coeff, y.coeff, algebra.dense())
    else:
        out = ops.scatter_add(algebra.values * x.coeff[algebra.ii] * y.coeff[algebra.jj], algebra.kk, algebra.dim)
    if algebra.field == "real":
        out = np.real(out)
    return AlgebraElement(algebra, out)


# Serialization
# ---


def format_number(value: float) -> str:
    """Decimal with 17 significant digits: enough for a bit-exact round trip"""
    return format(float(value), ".17g")


def dump_algebra(algebra: Algebra) -> str:
    """Serialize an algebra to the plain-text format"""
    header = (
        f"algebra {algebra.name.replace(' ', '_')} dim={algebra.dim} "
        f"field={algebra.field} flags={algebra.flags.describe()}"
    )
    if algebra.labels != tuple(f"e{i}" for i in range(algebra.dim)):
        header += " labels=" + ",".join(algebra.labels)
    lines = [header]
    for i, j, k, value in zip(algebra.ii, algebra.jj, algebra.kk, algebra.values):
        value = complex(value)
        lines.append(f"{i} {j} {k} {format_number(value.real)} {format_number(value.imag)}")
    return "\n".join(lines) + "\n"


def load_algebra(text: str, check: bool = True) -> Algebra:
    """
    Parse the plain-text algebra format

    Args:
        text: Serialized algebra
        check: Whether to verify the declared axiom flags

    Returns:
        Algebra: The reconstructed algebra
    """
    lines = [line for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if not lines or not lines[0].startswith("algebra "):
        raise ValueError("Algebra text must start with an 'algebra' header line")
    tokens = lines[0].split()
    name = tokens[1]
    options = dict(token.split("=", 1) for token in tokens[2:])
    dim = int(options["dim"])
    field = options.get("field", "real")
    flags = AxiomFlags.parse(options.get("flags", "none"))
    labels = options["labels"].split(",") if "labels" in options else None
    entries = []
    for number, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"Line {number}: expected '<i> <j> <k> <re> <im>', got {line!r}")
        i, j, k = (int(p) for p in parts[:3])
        re, im = float(parts[3]), float(parts[4])
        entries.append((i, j, k, complex(re, im) if field == "complex" else re))
        if field == "real" and im != 0.0:
            raise FieldMismatchError(f"Line {number}: real algebra with imaginary part {im}")
    ii, jj, kk, values = _collect(dim, entries, field)
    algebra = Algebra(name, dim, ii, jj, kk, values, field=field, flags=flags, labels=labels)
    if check:
        check_axioms(algebra)
    return algebra
