"""
Gradients, finite-difference checks and training for parameter blocks

Parameter blocks are registered as tape leaves, the expression is evaluated
on the tracked blocks and the scalar loss is differentiated in reverse mode.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from lightrag.utils import logger

from . import tape as ops
from .algebra import format_number
from .errors import DivergenceError, MissingBlockError, ShapeMismatchError
from .interactions import InteractionExpr
from .tape import Tape
from .tensor import TensorElement

Objective = Callable[[Dict[str, Any]], Any]

FD_STEPS = (1e-4, 1e-5, 1e-6)


# Parameter store
# ---


@dataclass
class ParamStore:
    """
    Named flat parameter blocks with their latest gradients

    Attributes:
        values: Block name -> flat array
        grads: Block name -> gradient of the same shape (after a step)
        seed: Seed the blocks were initialised from
    """

    values: Dict[str, np.ndarray] = field(default_factory=dict)
    grads: Dict[str, np.ndarray] = field(default_factory=dict)
    seed: Optional[int] = None

    @classmethod
    def from_expr(cls, expr: Any, seed: Optional[int] = None) -> "ParamStore":
        """Copy the initial blocks of an InteractionExpr or DynamicsSpec"""
        parameters = expr.parameters
        return cls({name: np.array(value).ravel() for name, value in parameters.items()}, seed=seed)

    def copy(self) -> "ParamStore":
        return ParamStore(
            {k: v.copy() for k, v in self.values.items()},
            {k: v.copy() for k, v in self.grads.items()},
            self.seed,
        )

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.values:
            raise MissingBlockError(f"Parameter block '{name}' is not in the store")
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> List[str]:
        return sorted(self.values)

    def set_grads(self, grads: Dict[str, np.ndarray]) -> None:
        for name, grad in grads.items():
            if np.shape(grad) != np.shape(self.values[name]):
                raise ShapeMismatchError(f"Gradient of '{name}' has shape {np.shape(grad)}, block has {np.shape(self.values[name])}")
            self.grads[name] = np.array(grad)

    def dumps(self) -> str:
        """Serialize in the algebra text number format"""
        lines = [f"params seed={self.seed if self.seed is not None else 'none'}"]
        for name in self.names():
            value = self.values[name]
            kind = "complex" if np.iscomplexobj(value) else "real"
            lines.append(f"block {name} size={value.size} field={kind}")
            for index, entry in enumerate(value):
                entry = complex(entry)
                lines.append(f"{index} {format_number(entry.real)} {format_number(entry.imag)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ParamStore":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines or not lines[0].startswith("params"):
            raise ValueError("Parameter checkpoint must start with a 'params' header line")
        seed_text = dict(token.split("=", 1) for token in lines[0].split()[1:]).get("seed", "none")
        store = cls(seed=None if seed_text == "none" else int(seed_text))
        current: Optional[str] = None
        for number, line in enumerate(lines[1:], start=2):
            parts = line.split()
            if parts[0] == "block":
                options = dict(token.split("=", 1) for token in parts[2:])
                current = parts[1]
                dtype = np.complex128 if options.get("field") == "complex" else np.float64
                store.values[current] = np.zeros(int(options["size"]), dtype=dtype)
                continue
            if current is None or len(parts) != 3:
                raise ValueError(f"Line {number}: expected '<index> <re> <im>' inside a block, got {line!r}")
            block = store.values[current]
            re, im = float(parts[1]), float(parts[2])
            block[int(parts[0])] = complex(re, im) if np.iscomplexobj(block) else re
        return store

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ParamStore":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


# Reverse mode
# ---


def value_and_grad(
    objective: Objective,
    params: Dict[str, Any],
    blocks: Optional[Iterable[str]] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Evaluate a scalar objective and its gradient with respect to parameter blocks

    Args:
        objective: Maps a parameter dict (some entries tracked) to a real scalar
        params: Parameter blocks
        blocks: Blocks to differentiate (default: all)

    Returns:
        Tuple of (loss, gradients); gradients of real blocks are real
    """
    tape = Tape()
    tracked = dict(params)
    leaves = {}
    for name in blocks if blocks is not None else params:
        if name not in params:
            raise MissingBlockError(f"Parameter block '{name}' is not available")
        leaves[name] = tape.leaf(params[name], name)
        tracked[name] = leaves[name]
    out = objective(tracked)
    value = float(np.real(np.sum(ops.primal(out))))
    if not ops.is_tracked(out):
        return value, {name: np.zeros(np.shape(params[name])) for name in leaves}
    adjoints = tape.gradient(out, list(leaves.values()))
    grads = {}
    for (name, leaf), adjoint in zip(leaves.items(), adjoints):
        grads[name] = adjoint if np.iscomplexobj(leaf.value) else np.real(adjoint)
    return value, grads


def grad(
    expr: InteractionExpr,
    loss: Optional[Callable[[TensorElement], Any]] = None,
    params: Optional[Dict[str, Any]] = None,
    bindings: Optional[Dict[str, TensorElement]] = None,
    blocks: Optional[Iterable[str]] = None,
) -> Dict[str, np.ndarray]:
    """
    Gradients of loss(expr(bindings)) with respect to parameter blocks

    The loss defaults to the squared norm of the output coefficients.
    """
    loss = loss or (lambda out: ops.abs2_sum(out.flat))
    merged = {**expr.parameters, **(params or {})}
    _, grads = value_and_grad(lambda p: loss(expr.evaluate(bindings or {}, p)), merged, blocks)
    return grads


# Finite differences
# ---


@dataclass
class GradientCheck:
    """Reverse-mode vs central finite differences on sampled coordinates"""

    samples: List[Dict[str, Any]] = field(default_factory=list)
    max_rel_error: float = 0.0

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol

    def summary(self) -> str:
        return f"{len(self.samples)} coordinates checked, max relative error {self.max_rel_error:.3e}"


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps vanishing gradients absolute"""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def central_difference(objective: Objective, params: Dict[str, Any], block: str, index: int, h: float) -> float:
    shifted = {name: np.array(value, copy=True) for name, value in params.items()}
    base = shifted[block].flat[index]
    shifted[block].flat[index] = base + h
    plus = float(np.real(np.sum(ops.primal(objective(shifted)))))
    shifted[block].flat[index] = base - h
    minus = float(np.real(np.sum(ops.primal(objective(shifted)))))
    return (plus - minus) / (2 * h)


def check_gradients(
    objective: Objective,
    params: Dict[str, Any],
    blocks: Optional[Sequence[str]] = None,
    n_samples: int = 20,
    rng: Optional[Union[int, np.random.Generator]] = None,
    steps: Sequence[float] = FD_STEPS,
) -> GradientCheck:
    """
    Compare reverse-mode gradients with central differences

    Coordinates are sampled uniformly over the chosen real blocks. Each is
    checked with h = 1e-5 first; if that misses, the step sweep keeps the best.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    params = {name: np.array(value, copy=True) for name, value in params.items()}
    blocks = list(blocks if blocks is not None else params)
    _, grads = value_and_grad(objective, params, blocks)
    coordinates = [(name, i) for name in blocks for i in range(np.size(params[name]))]
    chosen = rng.choice(len(coordinates), size=min(n_samples, len(coordinates)), replace=False)
    report = GradientCheck()
    for position in sorted(chosen):
        name, index = coordinates[position]
        analytic = float(np.real(grads[name].ravel()[index]))
        best_error, best_numeric, best_h = np.inf, 0.0, 1e-5
        for h in [1e-5] + [s for s in steps if s != 1e-5]:
            numeric = central_difference(objective, params, name, index, h)
            error = relative_error(analytic, numeric)
            if error < best_error:
                best_error, best_numeric, best_h = error, numeric, h
            if best_error <= 1e-7:
                break
        report.samples.append(
            {"block": name, "index": int(index), "analytic": analytic, "numeric": best_numeric, "h": best_h, "rel_error": best_error}
        )
        report.max_rel_error = max(report.max_rel_error, best_error)
    logger.debug(f"Gradient check: {report.summary()}")
    return report


# Symmetry regularizer
# ---


@lru_cache(maxsize=32)
def _shift_pairs(n_offsets: int, n_positions: int) -> Tuple[np.ndarray, np.ndarray]:
    """Flat indices of (k, i + a, n) and (k, i, n - a) for every in-range a != 0"""
    left, right = [], []
    P = n_positions
    for k in range(n_offsets):
        for i in range(P):
            for n in range(P):
                for a in range(-(P - 1), P):
                    if a == 0 or not (0 <= i + a < P and 0 <= n - a < P):
                        continue
                    left.append((k * P + i + a) * P + n)
                    right.append((k * P + i) * P + n - a)
    return np.array(left, dtype=np.int64), np.array(right, dtype=np.int64)


def symmetry_regularizer(block: Any, shape: Optional[Tuple[int, int, int]] = None) -> Any:
    """
    Sum of (lambda[k, i + a, n] - lambda[k, i, n - a])^2 over in-range (k, i, n, a)

    Zero exactly when the shift constraints hold on the range. The block is
    indexed [k, i, n] (offset, position, target); a tracked flat block needs
    its ``shape``.

    Raises:
        ShapeMismatchError: If the block is not (n_offsets, P, P)
    """
    if shape is None:
        shape = np.shape(ops.primal(block))
    if len(shape) != 3 or shape[1] != shape[2]:
        raise ShapeMismatchError(f"Regularizer needs an (n_offsets, P, P) block, got shape {shape}")
    flat = block if ops.is_tracked(block) else np.asarray(block, dtype=np.float64).ravel()
    if np.size(ops.primal(flat)) != int(np.prod(shape)):
        raise ShapeMismatchError(f"Block of size {np.size(ops.primal(flat))} does not have shape {shape}")
    left, right = _shift_pairs(int(shape[0]), int(shape[1]))
    if left.size == 0:
        return ops.mul(ops.total(flat), 0.0)
    diff = ops.sub(ops.gather(flat, left), ops.gather(flat, right))
    return ops.total(ops.mul(diff, diff))


# Optimization
# ---


@dataclass
class SGD:
    """
    Plain gradient descent with optional heavy-ball momentum

    With ``clip`` set, the gradients of all blocks are rescaled together so
    their joint norm does not exceed it before momentum is applied.
    """

    lr: float = 0.05
    momentum: float = 0.0
    clip: Optional[float] = None
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, values: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        if self.clip is not None and grads:
            norm = float(np.sqrt(sum(np.sum(np.abs(g) ** 2) for g in grads.values())))
            if norm > self.clip:
                grads = {name: g * (self.clip / norm) for name, g in grads.items()}
        for name, g in grads.items():
            if self.momentum:
                v = self.momentum * self.velocity.get(name, np.zeros_like(g)) + g
                self.velocity[name] = v
                g = v
            values[name] = values[name] - self.lr * g


@dataclass
class TrainingTrace:
    """Loss per step plus auxiliary metrics"""

    steps: List[int] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    metrics: List[Dict[str, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def final_loss(self) -> Optional[float]:
        return self.losses[-1] if self.losses else None

    def summary(self) -> str:
        if not self.losses:
            return "empty trace"
        return f"{len(self.losses)} steps, loss {self.losses[0]:.4e} -> {self.losses[-1]:.4e}"

    def to_dict(self) -> Dict[str, Any]:
        return {"steps": list(self.steps), "losses": list(self.losses), "metrics": list(self.metrics)}


def dataset_objective(
    expr: InteractionExpr,
    dataset: Sequence[Tuple[Dict[str, Any], Any]],
    loss: Callable[[Any, Any], Any],
) -> Objective:
    """Mean of loss(decoded output element, target) over raw (inputs, target) pairs"""
    encoded = [({slot: expr.encoders[slot](value) for slot, value in inputs.items()}, target) for inputs, target in dataset]

    def objective(params: Dict[str, Any]) -> Any:
        total = None
        for bindings, target in encoded:
            term = loss(expr.evaluate(bindings, params), target)
            total = term if total is None else ops.add(total, term)
        return ops.mul(total, 1.0 / len(encoded))

    return objective


def train(
    objective: Objective,
    store: ParamStore,
    steps: int,
    optimizer: Optional[SGD] = None,
    blocks: Optional[Sequence[str]] = None,
    metrics: Optional[Callable[[Dict[str, np.ndarray]], Dict[str, float]]] = None,
    log_every: int = 0,
) -> TrainingTrace:
    """
    Gradient descent on the store's blocks

    The store is updated in place. Identical inputs give bit-identical traces.

    Raises:
        DivergenceError: If the loss stops being finite
    """
    optimizer = optimizer or SGD()
    blocks = list(blocks if blocks is not None else store.names())
    trace = TrainingTrace()
    for step in range(steps):
        loss, grads = value_and_grad(objective, store.values, blocks)
        if not np.isfinite(loss):
            logger.error(f"Training diverged at step {step}")
            raise DivergenceError(step, f"Loss became {loss} at step {step}")
        store.set_grads(grads)
        trace.steps.append(step)
        trace.losses.append(loss)
        trace.metrics.append(metrics(store.values) if metrics is not None else {})
        optimizer.step(store.values, grads)
        if log_every and step % log_every == 0:
            logger.debug(f"step {step}: loss {loss:.6e}")
    logger.info(f"Training finished: {trace.summary()}")
    return trace
