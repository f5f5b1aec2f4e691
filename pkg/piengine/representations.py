"""
Group machinery for the symmetry principle

Contains group elements (grid translations, SO(2), SO(3)), Clebsch-Gordan
coefficients, Wigner-D matrices, complex spherical harmonics, the SO(2) and
SO(3) feature algebras, lifted actions on tensor elements and the numeric
equivariance / product-compatibility checkers.

Conventions: complex spherical harmonics with the Condon-Shortley phase,
z-y-z Euler angles, active rotations, D(R) = exp(-i theta n.L) with index
m + l. Under a rotation R the sample positions are rotated and the SO(3)
feature coefficients transform as conj(D(R)) c.
"""

import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from lightrag.utils import logger
from scipy.linalg import block_diag, expm
from scipy.spatial.transform import Rotation
from scipy.special import gammaln, lpmv

from .algebra import Algebra, AxiomFlags, basis, element, make_generic, product
from .config import get_engine_config
from .errors import (
    IndexOutOfRangeError,
    InvalidDimensionError,
    LiftInapplicableError,
    PointSetMismatchError,
)
from .tensor import ProductAlgebra, TensorElement

MAX_L = 10
UNIT_TOL = 1e-9
POINT_SET_TOL = 1e-9


# Group elements
# ---


@dataclass(frozen=True)
class GroupElement:
    """Translation (a, b), planar rotation theta, or z-y-z Euler rotation (alpha, beta, gamma)"""

    kind: str
    params: Tuple[float, ...]

    def __post_init__(self):
        expected = {"translation": 2, "so2": 1, "so3": 3}
        if self.kind not in expected:
            raise ValueError(f"Unknown group kind '{self.kind}'")
        if len(self.params) != expected[self.kind]:
            raise ValueError(f"{self.kind} needs {expected[self.kind]} parameters, got {len(self.params)}")
        if not all(np.isfinite(p) for p in self.params):
            raise ValueError(f"Group parameters must be finite, got {self.params}")
        if self.kind == "translation" and any(int(p) != p for p in self.params):
            raise ValueError(f"Translations take integer shifts, got {self.params}")

    @classmethod
    def translation(cls, a: int, b: int) -> "GroupElement":
        return cls("translation", (int(a), int(b)))

    @classmethod
    def so2(cls, theta: float) -> "GroupElement":
        return cls("so2", (float(theta),))

    @classmethod
    def so3(cls, alpha: float, beta: float, gamma: float) -> "GroupElement":
        return cls("so3", (float(alpha), float(beta), float(gamma)))

    @classmethod
    def identity(cls, kind: str) -> "GroupElement":
        return cls(kind, {"translation": (0, 0), "so2": (0.0,), "so3": (0.0, 0.0, 0.0)}[kind])

    @classmethod
    def from_rotation(cls, rotation: Rotation) -> "GroupElement":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            angles = rotation.as_euler("ZYZ")
        return cls.so3(*angles)

    def rotation(self) -> Rotation:
        if self.kind != "so3":
            raise LiftInapplicableError(f"{self.kind} element has no 3-D rotation")
        return Rotation.from_euler("ZYZ", self.params)

    def matrix(self) -> np.ndarray:
        """Rotation matrix acting on positions (2x2 for SO(2), 3x3 for SO(3))"""
        if self.kind == "so2":
            c, s = np.cos(self.params[0]), np.sin(self.params[0])
            return np.array([[c, -s], [s, c]])
        return self.rotation().as_matrix()

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        """Group product self * other (other acts first)"""
        if other.kind != self.kind:
            raise ValueError(f"Cannot compose {self.kind} with {other.kind}")
        if self.kind == "translation":
            return GroupElement.translation(self.params[0] + other.params[0], self.params[1] + other.params[1])
        if self.kind == "so2":
            return GroupElement.so2(self.params[0] + other.params[0])
        return GroupElement.from_rotation(self.rotation() * other.rotation())

    def inverse(self) -> "GroupElement":
        if self.kind == "translation":
            return GroupElement.translation(-self.params[0], -self.params[1])
        if self.kind == "so2":
            return GroupElement.so2(-self.params[0])
        return GroupElement.from_rotation(self.rotation().inv())


def random_so3(rng: np.random.Generator) -> GroupElement:
    return GroupElement.from_rotation(Rotation.random(random_state=rng))


def random_so2(rng: np.random.Generator) -> GroupElement:
    return GroupElement.so2(rng.uniform(-np.pi, np.pi))


def random_translation(rng: np.random.Generator, height: int, width: int) -> GroupElement:
    return GroupElement.translation(int(rng.integers(0, height)), int(rng.integers(0, width)))


# Clebsch-Gordan coefficients
# ---


def _check_lm(l: int, m: int) -> None:
    if l < 0 or abs(m) > l:
        raise IndexOutOfRangeError(f"Need |m| <= l with l >= 0, got l={l}, m={m}")


@lru_cache(maxsize=None)
def cg(l1: int, m1: int, l2: int, m2: int, l: int, m: int) -> float:
    """
    Clebsch-Gordan coefficient <l1 m1; l2 m2 | l m> in the Condon-Shortley convention

    Racah's closed-form sum evaluated with log-factorials. Selection-rule
    violations return exactly 0.
    """
    for ll, mm in ((l1, m1), (l2, m2), (l, m)):
        _check_lm(ll, mm)
    if m != m1 + m2 or not abs(l1 - l2) <= l <= l1 + l2:
        return 0.0

    def lf(n: int) -> float:
        return float(gammaln(n + 1))

    log_prefactor = 0.5 * (
        np.log(2 * l + 1)
        + lf(l + l1 - l2)
        + lf(l - l1 + l2)
        + lf(l1 + l2 - l)
        - lf(l1 + l2 + l + 1)
        + lf(l + m)
        + lf(l - m)
        + lf(l1 - m1)
        + lf(l1 + m1)
        + lf(l2 - m2)
        + lf(l2 + m2)
    )
    k_min = max(0, l2 - l - m1, l1 - l + m2)
    k_max = min(l1 + l2 - l, l1 - m1, l2 + m2)
    total = 0.0
    for k in range(k_min, k_max + 1):
        log_den = (
            lf(k)
            + lf(l1 + l2 - l - k)
            + lf(l1 - m1 - k)
            + lf(l2 + m2 - k)
            + lf(l - l2 + m1 + k)
            + lf(l - l1 - m2 + k)
        )
        total += (-1) ** k * np.exp(log_prefactor - log_den)
    return float(total)


@dataclass
class CGTable:
    """All nonzero coefficients with l1, l2, l <= l_max"""

    l_max: int
    entries: Dict[Tuple[int, int, int, int, int, int], float] = field(default_factory=dict)

    def __getitem__(self, key: Tuple[int, int, int, int, int, int]) -> float:
        return self.entries.get(key, 0.0)

    def block(self, l1: int, l2: int, l: int) -> np.ndarray:
        """C[m1 + l1, m2 + l2, m + l]"""
        out = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l + 1))
        for m1 in range(-l1, l1 + 1):
            for m2 in range(-l2, l2 + 1):
                m = m1 + m2
                if abs(m) <= l:
                    out[m1 + l1, m2 + l2, m + l] = self[(l1, m1, l2, m2, l, m)]
        return out


@lru_cache(maxsize=None)
def cg_table(l_max: int) -> CGTable:
    if l_max < 0 or l_max > MAX_L:
        raise IndexOutOfRangeError(f"l_max must lie in [0, {MAX_L}], got {l_max}")
    table = CGTable(l_max)
    for l1 in range(l_max + 1):
        for l2 in range(l_max + 1):
            for l in range(abs(l1 - l2), min(l1 + l2, l_max) + 1):
                for m1 in range(-l1, l1 + 1):
                    for m2 in range(-l2, l2 + 1):
                        m = m1 + m2
                        if abs(m) > l:
                            continue
                        value = cg(l1, m1, l2, m2, l, m)
                        if value != 0.0:
                            table.entries[(l1, m1, l2, m2, l, m)] = value
    logger.debug(f"Built Clebsch-Gordan table for l_max={l_max} with {len(table.entries)} entries")
    return table


def cg_orthogonality_defect(l1: int, l2: int) -> float:
    """Max deviation of the coupling matrix from orthogonality, both ways"""
    rows = []
    for l in range(abs(l1 - l2), l1 + l2 + 1):
        for m in range(-l, l + 1):
            row = [cg(l1, m1, l2, m2, l, m) for m1 in range(-l1, l1 + 1) for m2 in range(-l2, l2 + 1)]
            rows.append(row)
    matrix = np.array(rows)
    eye = np.eye(matrix.shape[0])
    return float(max(np.max(np.abs(matrix @ matrix.T - eye)), np.max(np.abs(matrix.T @ matrix - eye))))


# Wigner-D matrices and spherical harmonics
# ---


@lru_cache(maxsize=None)
def angular_momentum(l: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Lx, Ly, Lz) for weight l in the basis m = -l..l"""
    m = np.arange(-l, l + 1)
    raise_coef = np.sqrt(l * (l + 1) - m[:-1] * (m[:-1] + 1))
    l_plus = np.diag(raise_coef, k=-1).astype(np.complex128)
    l_minus = l_plus.conj().T
    lx = (l_plus + l_minus) / 2
    ly = (l_plus - l_minus) / 2j
    lz = np.diag(m).astype(np.complex128)
    return lx, ly, lz


def wigner_d(l: int, g: GroupElement) -> np.ndarray:
    """
    Wigner-D matrix D^(l)(R) = exp(-i theta n.L), rows and columns indexed by m + l

    Raises:
        IndexOutOfRangeError: If l is negative or above the supported maximum
    """
    if l < 0 or l > MAX_L:
        raise IndexOutOfRangeError(f"l must lie in [0, {MAX_L}], got {l}")
    if g.kind != "so3":
        raise LiftInapplicableError(f"Wigner-D needs an SO(3) element, got {g.kind}")
    if l == 0:
        return np.ones((1, 1), dtype=np.complex128)
    rotvec = g.rotation().as_rotvec()
    lx, ly, lz = angular_momentum(l)
    return expm(-1j * (rotvec[0] * lx + rotvec[1] * ly + rotvec[2] * lz))


def _directions(direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    direction = np.atleast_2d(np.asarray(direction, dtype=np.float64))
    norms = np.linalg.norm(direction, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ValueError(f"Spherical harmonics need unit directions, got norms {norms}")
    cos_theta = np.clip(direction[:, 2], -1.0, 1.0)
    phi = np.arctan2(direction[:, 1], direction[:, 0])
    return cos_theta, phi


def _ylm(l: int, m: int, cos_theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    am = abs(m)
    norm = np.sqrt((2 * l + 1) / (4 * np.pi) * np.exp(gammaln(l - am + 1) - gammaln(l + am + 1)))
    value = norm * lpmv(am, l, cos_theta) * np.exp(1j * am * phi)
    if m < 0:
        value = (-1) ** am * np.conj(value)
    return value


def sph_harm(l: int, m: int, direction: np.ndarray) -> complex:
    """Complex spherical harmonic Y_l^m at a unit direction (Condon-Shortley phase)"""
    _check_lm(l, m)
    cos_theta, phi = _directions(direction)
    return complex(_ylm(l, m, cos_theta, phi)[0])


def so3_index(l: int, m: int) -> int:
    return l * l + m + l


def so3_labels(l_max: int) -> List[str]:
    return [f"Y{l},{m}" for l in range(l_max + 1) for m in range(-l, l + 1)]


def sph_harm_all(l_max: int, directions: np.ndarray) -> np.ndarray:
    """Y_l^m for every l <= l_max at each direction, columns in feature-algebra order"""
    cos_theta, phi = _directions(directions)
    columns = [_ylm(l, m, cos_theta, phi) for l in range(l_max + 1) for m in range(-l, l + 1)]
    return np.stack(columns, axis=-1)


def degree_of_index(l_max: int) -> np.ndarray:
    return np.concatenate([np.full(2 * l + 1, l) for l in range(l_max + 1)])


# Feature algebras
# ---


def so3_representation(l_max: int) -> Callable[[GroupElement], np.ndarray]:
    def rho(g: GroupElement) -> np.ndarray:
        return block_diag(*[wigner_d(l, g) for l in range(l_max + 1)])

    return rho


def so2_representation(n_max: int) -> Callable[[GroupElement], np.ndarray]:
    def rho(g: GroupElement) -> np.ndarray:
        if g.kind != "so2":
            raise LiftInapplicableError(f"SO(2) representation needs an so2 element, got {g.kind}")
        return np.diag(np.exp(1j * np.arange(-n_max, n_max + 1) * g.params[0]))

    return rho


def _policy(policy: Optional[str], default: str) -> str:
    policy = policy or default
    if policy not in ("drop", "strict"):
        raise ValueError(f"Truncation policy must be 'drop' or 'strict', got '{policy}'")
    return policy


def make_so3_algebra(l_max: int, policy: Optional[str] = None) -> Algebra:
    """
    Feature algebra with basis e^l_m and Clebsch-Gordan structure constants

    Products whose coupled degree exceeds l_max are dropped, or rejected by
    ``product`` under the strict policy.
    """
    if l_max < 0:
        raise InvalidDimensionError(f"l_max must be >= 0, got {l_max}")
    policy = _policy(policy, get_engine_config().so3_policy)
    table = cg_table(l_max)
    entries = [
        (so3_index(l1, m1), so3_index(l2, m2), so3_index(l, m), value)
        for (l1, m1, l2, m2, l, m), value in table.entries.items()
    ]
    overflow = set()
    for l1 in range(l_max + 1):
        for l2 in range(l_max + 1):
            for m1 in range(-l1, l1 + 1):
                for m2 in range(-l2, l2 + 1):
                    m = m1 + m2
                    for l in range(max(l_max + 1, abs(m)), l1 + l2 + 1):
                        if cg(l1, m1, l2, m2, l, m) != 0.0:
                            overflow.add((so3_index(l1, m1), so3_index(l2, m2)))
                            break
    algebra = make_generic(
        (l_max + 1) ** 2,
        entries,
        field="complex",
        name=f"so3(l<={l_max})",
        labels=so3_labels(l_max),
        overflow_pairs=frozenset(overflow),
        policy=policy,
        representation=so3_representation(l_max),
        meta={
            "kind": "so3",
            "l_max": l_max,
            "policy": policy,
            "blocks": [list(range(l * l, (l + 1) ** 2)) for l in range(l_max + 1)],
        },
    )
    logger.debug(f"SO(3) algebra l_max={l_max}: {algebra.nnz} constants, {len(overflow)} overflowing pairs ({policy})")
    return algebra


def make_so2_algebra(n_max: int, policy: Optional[str] = None) -> Algebra:
    """Fourier feature algebra e_n e_m = e_(n+m) for |n|, |m|, |n+m| <= n_max"""
    if n_max < 0:
        raise InvalidDimensionError(f"n_max must be >= 0, got {n_max}")
    policy = _policy(policy, get_engine_config().so2_policy)
    entries, overflow = [], set()
    for n in range(-n_max, n_max + 1):
        for m in range(-n_max, n_max + 1):
            if abs(n + m) <= n_max:
                entries.append((n + n_max, m + n_max, n + m + n_max, 1.0))
            else:
                overflow.add((n + n_max, m + n_max))
    return make_generic(
        2 * n_max + 1,
        entries,
        field="complex",
        axiom_flags=AxiomFlags(commutative=True, unit=n_max),
        name=f"so2(|n|<={n_max})",
        labels=[f"e{n}" for n in range(-n_max, n_max + 1)],
        overflow_pairs=frozenset(overflow),
        policy=policy,
        representation=so2_representation(n_max),
        meta={"kind": "so2", "n_max": n_max, "policy": policy, "blocks": [[i] for i in range(2 * n_max + 1)]},
    )


def random_real_field(rng: np.random.Generator, n_points: int, l_max: int) -> np.ndarray:
    """Coefficients of real functions: c_(l,-m) = (-1)^m conj(c_(l,m)), c_(l,0) real"""
    out = np.zeros((n_points, (l_max + 1) ** 2), dtype=np.complex128)
    for l in range(l_max + 1):
        out[:, so3_index(l, 0)] = rng.normal(size=n_points)
        for m in range(1, l + 1):
            value = rng.normal(size=n_points) + 1j * rng.normal(size=n_points)
            out[:, so3_index(l, m)] = value
            out[:, so3_index(l, -m)] = (-1) ** m * np.conj(value)
    return out


# Lifted actions
# ---


@dataclass
class LiftedTransform:
    """
    A group element lifted to one product space

    Attributes:
        group: The group element
        space: Space the transform acts on
        feature_matrix: Action on the feature factor (None when trivial)
        position_matrix: Action on the sample positions (None when trivial)
        permutation: Action on positional indices as a flat source index
            (None when trivial); out[k] = x[permutation[k]]
        valid: Flat mask of coefficients that stay inside the grid
    """

    group: GroupElement
    space: ProductAlgebra
    feature_factor: Optional[int] = None
    feature_matrix: Optional[np.ndarray] = None
    position_matrix: Optional[np.ndarray] = None
    permutation: Optional[np.ndarray] = None
    valid: Optional[np.ndarray] = None

    def apply(self, x: TensorElement) -> TensorElement:
        if x.space != self.space:
            raise LiftInapplicableError(f"Transform lifted to '{self.space.name}' applied to '{x.space.name}'")
        values = x.values
        if self.feature_matrix is not None:
            values = np.moveaxis(np.tensordot(self.feature_matrix, values, axes=([1], [self.feature_factor])), 0, self.feature_factor)
        flat = values.ravel()
        if self.permutation is not None:
            flat = flat[self.permutation]
            if self.valid is not None:
                flat = np.where(self.valid, flat, 0.0)
        positions = x.positions
        if self.position_matrix is not None:
            if positions is None:
                raise LiftInapplicableError(f"{self.group.kind} action needs sample positions")
            positions = positions @ self.position_matrix.T
        return TensorElement(self.space, flat, positions=positions)

    __call__ = apply


def _feature_factor(space: ProductAlgebra, kind: str) -> int:
    for index in space.factors_with_role("feature"):
        if space.factors[index].meta.get("kind") == kind:
            return index
    raise LiftInapplicableError(f"Space '{space.name}' has no {kind} feature factor")


def lift(
    g: GroupElement,
    space: ProductAlgebra,
    positions: Optional[np.ndarray] = None,
    wrap: bool = True,
    convention: str = "rotate",
) -> LiftedTransform:
    """
    Lift a group element to a transform on a product space

    Args:
        g: Group element
        space: Space of the elements to transform
        positions: Sample positions (needed by the 'set' convention)
        wrap: Translations wrap around the grid (otherwise shifted-out
            coefficients are dropped)
        convention: 'rotate' rotates the sample positions; 'set' maps sample a
            to the index of R r_a and requires the rotated set to coincide
            with the original one

    Raises:
        LiftInapplicableError: If the space cannot carry this action
        PointSetMismatchError: Under the 'set' convention when R r_a is not a sample
    """
    if g.kind == "translation":
        positional = space.factors_with_role("positional")
        if len(positional) < 2:
            raise LiftInapplicableError(f"Translations need two positional factors, '{space.name}' has {len(positional)}")
        fa, fb = positional[:2]
        grid = np.indices(space.shape)
        target_a = grid[fa] + g.params[0]
        target_b = grid[fb] + g.params[1]
        valid = None
        if wrap:
            target_a %= space.shape[fa]
            target_b %= space.shape[fb]
        else:
            valid_grid = (target_a >= 0) & (target_a < space.shape[fa]) & (target_b >= 0) & (target_b < space.shape[fb])
            target_a = np.clip(target_a, 0, space.shape[fa] - 1)
            target_b = np.clip(target_b, 0, space.shape[fb] - 1)
        index = list(grid)
        index[fa], index[fb] = target_a, target_b
        target = np.ravel_multi_index(tuple(index), space.shape).ravel()
        permutation = np.empty(space.size, dtype=np.int64)
        if wrap:
            permutation[target] = np.arange(space.size)
        else:
            keep = valid_grid.ravel()
            permutation[:] = 0
            permutation[target[keep]] = np.arange(space.size)[keep]
            valid = np.zeros(space.size, dtype=bool)
            valid[target[keep]] = True
        return LiftedTransform(g, space, permutation=permutation, valid=valid)

    kind = "so2" if g.kind == "so2" else "so3"
    factor = _feature_factor(space, kind)
    algebra = space.factors[factor]
    rho = algebra.representation(g)
    feature_matrix = rho if kind == "so2" else np.conj(rho)
    rotation = g.matrix()
    transform = LiftedTransform(g, space, feature_factor=factor, feature_matrix=feature_matrix, position_matrix=rotation)
    if convention == "rotate":
        return transform
    if convention != "set":
        raise ValueError(f"Unknown convention '{convention}'")
    if positions is None:
        raise LiftInapplicableError("The set convention needs sample positions")
    rotated = positions @ rotation.T
    distance = np.linalg.norm(rotated[:, None, :] - positions[None, :, :], axis=-1)
    match = np.argmin(distance, axis=1)
    if np.any(distance[np.arange(len(positions)), match] > POINT_SET_TOL) or len(set(match.tolist())) != len(match):
        raise PointSetMismatchError("Rotated sample positions do not coincide with the original set")
    moved = np.indices(space.shape)
    for axis in space.factors_with_role("positional"):
        if space.shape[axis] == len(positions):
            index_map = match
        elif space.shape[axis] == len(positions) + 1:
            index_map = np.concatenate([[0], match + 1])
        else:
            continue
        moved[axis] = index_map[moved[axis]]
    # sample a moves to match[a], so the value at match[a] comes from a
    target = np.ravel_multi_index(tuple(moved), space.shape).ravel()
    permutation = np.empty(space.size, dtype=np.int64)
    permutation[target] = np.arange(space.size)
    transform.position_matrix = None
    transform.permutation = permutation
    return transform


# Checkers
# ---


@dataclass
class EquivarianceReport:
    """Outcome of a numeric equivariance check"""

    defects: List[float] = field(default_factory=list)
    tol: float = 0.0

    @property
    def max_defect(self) -> float:
        return max(self.defects) if self.defects else 0.0

    @property
    def passed(self) -> bool:
        return self.max_defect <= self.tol

    def summary(self) -> str:
        return f"{len(self.defects)} trials, max defect {self.max_defect:.3e} (tol {self.tol:.1e}): {'pass' if self.passed else 'FAIL'}"


def check_equivariance(
    op: Callable[[TensorElement], TensorElement],
    group_sampler: Callable[[np.random.Generator], GroupElement],
    input_sampler: Callable[[np.random.Generator], TensorElement],
    n_trials: int,
    tol: float,
    rng: Optional[np.random.Generator] = None,
    wrap: bool = True,
    mask: Optional[Callable[[TensorElement], np.ndarray]] = None,
) -> EquivarianceReport:
    """
    Max over trials of |op(T_g x) - T_g op(x)|

    Args:
        op: Element -> element map under test (an expression bound to its input)
        group_sampler: Draws a group element
        input_sampler: Draws an input element
        n_trials: Number of (g, x) draws
        tol: Pass threshold
        rng: Random generator shared by both samplers
        wrap: Translation boundary handling
        mask: Optional flat mask restricting the comparison (interior outputs)

    Returns:
        EquivarianceReport: Per-trial defects and the verdict
    """
    rng = rng if rng is not None else np.random.default_rng(get_engine_config().seed)
    report = EquivarianceReport(tol=tol)
    for _ in range(n_trials):
        g = group_sampler(rng)
        x = input_sampler(rng)
        y = op(x)
        transform_in = lift(g, x.space, positions=x.positions, wrap=wrap)
        transform_out = lift(g, y.space, positions=y.positions, wrap=wrap)
        lhs = op(transform_in(x)).values.ravel()
        rhs = transform_out(y).values.ravel()
        difference = np.abs(lhs - rhs)
        if mask is not None:
            difference = difference[mask(y)]
        report.defects.append(float(np.max(difference)) if difference.size else 0.0)
    return report


@dataclass
class CompatibilityReport:
    """Outcome of the product / representation compatibility check"""

    defects: List[float] = field(default_factory=list)
    skipped: int = 0
    tol: float = 0.0

    @property
    def max_defect(self) -> float:
        return max(self.defects) if self.defects else 0.0

    @property
    def passed(self) -> bool:
        return self.max_defect <= self.tol

    def summary(self) -> str:
        return (
            f"{len(self.defects)} checked, {self.skipped} skipped for truncation, "
            f"max defect {self.max_defect:.3e} (tol {self.tol:.1e})"
        )


def check_product_compat(
    algebra: Algebra,
    n_trials: int,
    tol: float,
    rng: Optional[np.random.Generator] = None,
    group_sampler: Optional[Callable[[np.random.Generator], GroupElement]] = None,
) -> CompatibilityReport:
    """
    Max defect of (rho(g) e_i)(rho(g) e_j) = rho(g)(e_i e_j) on random basis pairs

    Pairs whose product can leave the truncated basis are skipped and counted.
    """
    if algebra.representation is None:
        raise LiftInapplicableError(f"Algebra '{algebra.name}' has no representation installed")
    rng = rng if rng is not None else np.random.default_rng(get_engine_config().seed)
    if group_sampler is None:
        group_sampler = random_so3 if algebra.meta.get("kind") == "so3" else random_so2
    blocks = algebra.meta.get("blocks") or [list(range(algebra.dim))]
    block_of = np.zeros(algebra.dim, dtype=np.int64)
    for b, members in enumerate(blocks):
        block_of[members] = b
    report = CompatibilityReport(tol=tol)
    for _ in range(n_trials):
        i, j = (int(v) for v in rng.integers(0, algebra.dim, size=2))
        if any(
            (p, q) in algebra.overflow_pairs
            for p in blocks[block_of[i]]
            for q in blocks[block_of[j]]
        ):
            report.skipped += 1
            continue
        rho = algebra.representation(group_sampler(rng))
        left = product(algebra, element(algebra, rho[:, i]), element(algebra, rho[:, j])).coeff
        right = rho @ product(algebra, basis(algebra, i), basis(algebra, j)).coeff
        report.defects.append(float(np.max(np.abs(left - right))))
    return report
