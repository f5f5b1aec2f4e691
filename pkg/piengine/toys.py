"""
Toy experiments for the design principles

symreg-conv: free vs symmetry-regularized structure constants of a conv layer
rankR-copy: rank-1 vs rank-2 attention on a two-token copy task
replacement-mamba: replacing the gate slot vs the injection slot of Mamba

Each task trains small models with plain SGD and reports directional trend
metrics; ``run_toy_task`` repeats a task over seeds and takes a majority vote.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from lightrag.utils import logger
from tqdm import tqdm

from . import tape as ops
from .autodiff import SGD, ParamStore, TrainingTrace, symmetry_regularizer, train
from .builders import build_attention, build_conv2d
from .dynamics import READOUT, DynamicsSpec, build_mamba, run_dynamics
from .errors import MissingBlockError, UnknownOccurrenceError
from .interactions import Constant, replace_slot
from .oracles import oracle_xcorr2d

TOY_TASKS = ("symreg-conv", "rankR-copy", "replacement-mamba")

# steps, learning rate, momentum and gradient-norm clip per task
TOY_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "symreg-conv": {"steps": 200, "lr": 0.05, "momentum": 0.0, "clip": 1.0},
    "rankR-copy": {"steps": 100, "lr": 2.0, "momentum": 0.9, "clip": 1.0},
    "replacement-mamba": {"steps": 100, "lr": 0.1, "momentum": 0.9, "clip": None},
}


@dataclass
class ToyResult:
    """Metrics and traces of one task run with one seed"""

    task: str
    seed: int
    metrics: Dict[str, float] = field(default_factory=dict)
    traces: Dict[str, TrainingTrace] = field(default_factory=dict)
    trend_passed: bool = False

    def summary(self) -> str:
        shown = ", ".join(f"{k}={v:.4g}" for k, v in sorted(self.metrics.items()))
        return f"{self.task} seed={self.seed}: {shown} ({'trend ok' if self.trend_passed else 'trend missed'})"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task": self.task,
            "seed": self.seed,
            "metrics": {k: float(v) for k, v in self.metrics.items()},
            "trend_passed": bool(self.trend_passed),
            "traces": {name: trace.to_dict() for name, trace in self.traces.items()},
        }


@dataclass
class ToyReport:
    """All seeds of one task and the majority verdict"""

    task: str
    results: List[ToyResult] = field(default_factory=list)
    required: int = 0

    @property
    def votes(self) -> int:
        return sum(bool(r.trend_passed) for r in self.results)

    @property
    def passed(self) -> bool:
        return bool(self.results) and self.votes >= self.required

    def summary(self) -> str:
        return f"{self.task}: trend held in {self.votes}/{len(self.results)} seeds (need {self.required})"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task": self.task,
            "votes": self.votes,
            "required": self.required,
            "passed": bool(self.passed),
            "seeds": [r.to_dict() for r in self.results],
        }


def _squared_error(flat: Any, index: np.ndarray, target: np.ndarray) -> Any:
    """Mean over the read outputs, so step sizes do not scale with the output count"""
    target = np.asarray(target, dtype=np.float64).ravel()
    return ops.mul(ops.abs2_sum(ops.sub(ops.gather(flat, index), target)), 1.0 / target.size)


def _mean(terms: List[Any]) -> Any:
    total = terms[0]
    for term in terms[1:]:
        total = ops.add(total, term)
    return ops.mul(total, 1.0 / len(terms))


def _store_for(expr: Any, seed: int, blocks: Sequence[str]) -> ParamStore:
    store = ParamStore.from_expr(expr, seed=seed)
    missing = [b for b in blocks if b not in store]
    if missing:
        raise MissingBlockError(f"Toy model is missing blocks {missing}")
    return store


# symreg-conv
# ---


def symreg_conv(
    seed: int,
    steps: int = 200,
    lr: float = 0.05,
    momentum: float = 0.0,
    clip: Optional[float] = 1.0,
    size: int = 6,
    n_train: int = 2,
    n_val: int = 8,
    lambda_noise: float = 0.1,
    reg_weight: float = 1.0,
) -> ToyResult:
    """
    Fit a hidden 3x3 cross-correlation with trainable shift constants

    Both models start from the same kernel and the same perturbed shift
    constants; the regularized one adds the symmetry regularizer of both
    axes to its loss. Trend: lower validation loss with the regularizer,
    and the regularizer itself shrinks at least 100-fold.
    """
    rng = np.random.default_rng(seed)
    hidden_kernel = rng.normal(size=(3, 3))
    images = rng.normal(size=(n_train + n_val, size, size))
    targets = np.array([oracle_xcorr2d(image, hidden_kernel) for image in images])
    start_kernel = 0.5 * rng.normal(size=(3, 3))
    lambda_seed = int(rng.integers(2**31))

    result = ToyResult("symreg-conv", seed)
    for constraint in ("free", "regularized"):
        expr = build_conv2d(
            size,
            size,
            3,
            3,
            constraint=constraint,
            kernel=start_kernel,
            lambda_noise=lambda_noise,
            rng=np.random.default_rng(lambda_seed),
        )
        out_index = np.ravel_multi_index(np.indices((size, size)).reshape(2, -1), expr.space.shape)
        encoded = [expr.encoders["X"](image) for image in images]
        shapes = {"conv_lambda_row": (3, size, size), "conv_lambda_col": (3, size, size)}

        def regularizer(params: Dict[str, Any]) -> Any:
            return ops.add(
                symmetry_regularizer(params["conv_lambda_row"], shapes["conv_lambda_row"]),
                symmetry_regularizer(params["conv_lambda_col"], shapes["conv_lambda_col"]),
            )

        def data_loss(params: Dict[str, Any], which: range) -> Any:
            return _mean([_squared_error(expr.evaluate({"X": encoded[i]}, params).flat, out_index, targets[i]) for i in which])

        train_range, val_range = range(n_train), range(n_train, n_train + n_val)

        def objective(params: Dict[str, Any]) -> Any:
            loss = data_loss(params, train_range)
            if constraint == "regularized":
                loss = ops.add(loss, ops.mul(regularizer(params), reg_weight))
            return loss

        store = _store_for(expr, seed, ["kernel", "conv_lambda_row", "conv_lambda_col"])
        initial_reg = float(regularizer(store.values))
        trace = train(objective, store, steps, SGD(lr, momentum, clip=clip))
        result.traces[constraint] = trace
        result.metrics[f"val_{constraint}"] = float(data_loss(store.values, val_range))
        result.metrics[f"reg_initial_{constraint}"] = initial_reg
        result.metrics[f"reg_final_{constraint}"] = float(regularizer(store.values))

    final = result.metrics["reg_final_regularized"]
    drop = result.metrics["reg_initial_regularized"] / final if final > 0 else np.inf
    result.metrics["reg_drop"] = float(drop)
    result.trend_passed = bool(result.metrics["val_regularized"] < result.metrics["val_free"] and drop >= 100.0)
    return result


# rankR-copy
# ---


def copy_task_data(rng: np.random.Generator, n_sequences: int, length: int = 16, vocab: int = 8) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Token one-hots with position one-hots, and two-block targets

    The target at position k holds onehot(token[k-1]) in its first block and
    onehot(token[k-2]) in its second; positions without a predecessor stay zero.
    """
    d = vocab + length
    tokens = rng.integers(vocab, size=(n_sequences, length))
    inputs = np.zeros((n_sequences, length, d))
    targets = np.zeros((n_sequences, length, d))
    for s in range(n_sequences):
        for k in range(length):
            inputs[s, k, tokens[s, k]] = 1.0
            inputs[s, k, vocab + k] = 1.0
            if k >= 1:
                targets[s, k, tokens[s, k - 1]] = 1.0
            if k >= 2:
                targets[s, k, vocab + tokens[s, k - 2]] = 1.0
    return tokens, inputs, targets


def copy_accuracy(outputs: np.ndarray, tokens: np.ndarray, vocab: int) -> float:
    """Share of (position >= 2, block) reads whose argmax is the copied token"""
    hits, total = 0, 0
    for s in range(tokens.shape[0]):
        for k in range(2, tokens.shape[1]):
            hits += int(np.argmax(outputs[s, k, :vocab]) == tokens[s, k - 1])
            hits += int(np.argmax(outputs[s, k, vocab : 2 * vocab]) == tokens[s, k - 2])
            total += 2
    return hits / total if total else 0.0


def rank_copy(
    seed: int,
    steps: int = 100,
    lr: float = 2.0,
    momentum: float = 0.9,
    clip: Optional[float] = 1.0,
    length: int = 16,
    vocab: int = 8,
    n_sequences: int = 3,
    ranks: Sequence[int] = (1, 2),
) -> ToyResult:
    """
    Train causal softmax attention of rank 1 and rank 2 on the copy task

    A single softmax distribution must split its mass between the two source
    positions, while two score slots can each attend to one. Trend: rank-2
    accuracy beats rank-1 by at least 0.1.
    """
    rng = np.random.default_rng(seed)
    tokens, inputs, targets = copy_task_data(rng, n_sequences, length, vocab)
    d = vocab + length
    weight_seed = int(rng.integers(2**31))
    result = ToyResult("rankR-copy", seed)
    for rank in ranks:
        expr = build_attention(length, d, heads=1, rank=rank, rng=np.random.default_rng(weight_seed))
        tok, ch = np.meshgrid(np.arange(length) + 1, rank + np.arange(d), indexing="ij")
        out_index = np.ravel_multi_index((tok.ravel(), np.zeros(tok.size, dtype=np.int64), ch.ravel()), expr.space.shape)
        encoded = [expr.encoders["X"](sequence) for sequence in inputs]

        def objective(params: Dict[str, Any]) -> Any:
            return _mean([_squared_error(expr.evaluate({"X": x}, params).flat, out_index, t) for x, t in zip(encoded, targets)])

        store = _store_for(expr, seed, ["score", "value"])
        trace = train(objective, store, steps, SGD(lr, momentum, clip=clip))
        outputs = np.array([np.real(ops.primal(expr.evaluate({"X": x}, store.values).flat))[out_index].reshape(length, d) for x in encoded])
        result.traces[f"rank{rank}"] = trace
        result.metrics[f"acc_rank{rank}"] = copy_accuracy(outputs, tokens, vocab)
        result.metrics[f"loss_rank{rank}"] = trace.final_loss if trace.final_loss is not None else float(objective(store.values))

    low, high = min(ranks), max(ranks)
    result.trend_passed = bool(result.metrics[f"acc_rank{high}"] - result.metrics[f"acc_rank{low}"] >= 0.1)
    return result


# replacement-mamba
# ---


def recall_task_data(rng: np.random.Generator, n_sequences: int, length: int = 10, mark_rate: float = 0.3) -> Tuple[np.ndarray, np.ndarray]:
    """
    Channel 0 carries values, channel 1 marks steps to remember

    The target at step t is the value at the most recent marked step (the
    first step is always marked).
    """
    inputs = np.zeros((n_sequences, length, 2))
    targets = np.zeros((n_sequences, length))
    for s in range(n_sequences):
        remembered = 0.0
        for t in range(length):
            value = rng.normal()
            marked = t == 0 or rng.random() < mark_rate
            inputs[s, t] = (value, 1.0 if marked else 0.0)
            if marked:
                remembered = value
            targets[s, t] = remembered
    return inputs, targets


def replace_role(spec: DynamicsSpec, role: str, initial: np.ndarray, block: Optional[str] = None) -> DynamicsSpec:
    """
    Replace every X occurrence playing ``role`` by one shared trainable constant

    Occurrences are replaced from the last to the first so earlier ids stay valid.
    """
    roles = spec.occurrence_roles()
    ids = [i for i, r in enumerate(roles) if r == role]
    if not ids:
        raise UnknownOccurrenceError(f"{spec.name} has no '{role}' occurrence")
    block = block or f"replaced_{role}"
    node = Constant(block, spec.space, block=block)
    for occurrence in sorted(ids, reverse=True):
        spec = replace_slot(spec, occurrence, node)
    update = replace(spec.update, parameters={**spec.update.parameters, block: np.asarray(initial).ravel().copy()})
    kept = [r for i, r in enumerate(roles) if i not in ids]
    return replace(spec, update=update, meta={**spec.meta, "occurrence_roles": kept, "replaced_role": role})


def replacement_mamba(
    seed: int,
    steps: int = 100,
    lr: float = 0.1,
    momentum: float = 0.9,
    clip: Optional[float] = None,
    d: int = 2,
    N: int = 3,
    length: int = 8,
    n_sequences: int = 4,
    discretization: str = "selective-zoh",
) -> ToyResult:
    """
    Train full Mamba, Mamba with the gate slot replaced and with the injection
    filter slot replaced on the selective recall task

    Trend: replacing the gate hurts the final loss more than replacing the
    injection filter.
    """
    rng = np.random.default_rng(seed)
    inputs, targets = recall_task_data(rng, n_sequences, length)
    model_seed = int(rng.integers(2**31))
    base = build_mamba(d, N, discretization=discretization, rng=np.random.default_rng(model_seed))
    constant_init = 0.1 * np.random.default_rng(model_seed + 1).normal(size=base.space.size)
    variants = {
        "full": base,
        "gate_replaced": replace_role(base, "gate", constant_init),
        "injection_replaced": replace_role(base, "injection", constant_init),
    }
    out_index = np.array([np.ravel_multi_index((0, READOUT), base.space.shape)])
    result = ToyResult("replacement-mamba", seed)
    for name, spec in variants.items():

        def objective(params: Dict[str, Any], spec: DynamicsSpec = spec) -> Any:
            terms = []
            for sequence, target in zip(inputs, targets):
                _, outputs = run_dynamics(spec, sequence, params)
                terms += [_squared_error(y.flat, out_index, target[t : t + 1]) for t, y in enumerate(outputs)]
            return _mean(terms)

        store = ParamStore.from_expr(spec, seed=seed)
        trace = train(objective, store, steps, SGD(lr, momentum, clip=clip))
        result.traces[name] = trace
        result.metrics[f"loss_{name}"] = float(objective(store.values))

    result.trend_passed = bool(result.metrics["loss_gate_replaced"] > result.metrics["loss_injection_replaced"])
    return result


TOY_RUNNERS: Dict[str, Callable[..., ToyResult]] = {
    "symreg-conv": symreg_conv,
    "rankR-copy": rank_copy,
    "replacement-mamba": replacement_mamba,
}


def run_toy_task(
    task: str,
    seeds: Sequence[int],
    steps: Optional[int] = None,
    lr: Optional[float] = None,
    momentum: Optional[float] = None,
    show_progress: bool = True,
    required: Optional[int] = None,
) -> ToyReport:
    """
    Run one toy task over several seeds

    The trend holds for the task when it holds in at least ``required`` seeds
    (default: a strict majority).
    """
    if task not in TOY_RUNNERS:
        raise ValueError(f"Unknown toy task '{task}', expected one of {TOY_TASKS}")
    options = dict(TOY_DEFAULTS[task])
    for key, value in (("steps", steps), ("lr", lr), ("momentum", momentum)):
        if value is not None:
            options[key] = value
    report = ToyReport(task, required=required if required is not None else len(seeds) // 2 + 1)
    for seed in tqdm(list(seeds), desc=task, disable=not show_progress):
        result = TOY_RUNNERS[task](int(seed), **options)
        logger.info(result.summary())
        report.results.append(result)
    logger.info(report.summary())
    return report
