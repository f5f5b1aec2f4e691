"""
State-space dynamics as product interactions

The hidden state lives in B2(d) (x) A with feature basis {e_0 readout, e_u unit}
+ channels + hidden indices. One step of the discretized system is an
InteractionExpr of slots X (input) and H (previous state); the readout is a
second expression. SSMs use fixed injection/readout rules with learnable
B, C; Mamba makes those rules learnable (W^B, W^C) and gates the update with
Delta = sigmoid(W^g x + b).
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from lightrag.utils import logger

from . import tape as ops
from .algebra import link_entries, make_b2, make_generic
from .errors import InvalidDimensionError, MissingBlockError, NonFiniteStateError, ShapeMismatchError
from .interactions import Constant, EvalContext, InteractionExpr, Mult, Node, Slot, Structural, _walk, add, chain
from .structural import Activation, FactorLinear, Hadamard, HiddenFlip, IndexProjection
from .tensor import ProductAlgebra, TensorElement, embed_hidden, tensor_space

SSM_DISCRETIZATIONS = ("euler", "zoh")
MAMBA_DISCRETIZATIONS = ("euler", "selective-euler", "selective-zoh")

READOUT = 0
UNIT = 1


def channel_index(d: int) -> np.ndarray:
    return 2 + np.arange(d)


def hidden_index(d: int, N: int) -> np.ndarray:
    return 2 + d + np.arange(N)


@dataclass
class DynamicsSpec:
    """
    A discretized algebraic dynamical system

    Attributes:
        name: System name used in logs and manifests
        space: Hidden-augmented space B2(d) (x) A
        update: Expression of slots X and H giving the next state
        readout: Expression of H (and X for Mamba) giving y at feature e_0
        discretization: One of the builder's discretization names
        dt: Step size (Euler and SSM zero-order hold)
        d: Number of channels
        N: Hidden size per channel
        meta: Builder details, including the role of every X occurrence
    """

    name: str
    space: ProductAlgebra
    update: InteractionExpr
    readout: InteractionExpr
    discretization: str
    dt: float
    d: int
    N: int
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def parameters(self) -> Dict[str, np.ndarray]:
        return {**self.readout.parameters, **self.update.parameters}

    @property
    def channels(self) -> np.ndarray:
        return channel_index(self.d)

    @property
    def hidden(self) -> np.ndarray:
        return hidden_index(self.d, self.N)

    def encode_input(self, x: np.ndarray) -> TensorElement:
        return embed_hidden(x, self.space, self.channels)

    def encode_state(self, h: Optional[np.ndarray] = None) -> TensorElement:
        if h is None:
            return TensorElement(self.space)
        h = np.asarray(h, dtype=np.float64)
        if h.shape != (self.d, self.N):
            raise ShapeMismatchError(f"State has shape {h.shape}, expected {(self.d, self.N)}")
        coeff = np.zeros(self.space.shape)
        coeff[:, self.hidden] = h
        return TensorElement(self.space, coeff)

    def state_values(self, state: TensorElement) -> np.ndarray:
        return state.values[:, self.hidden]

    def output_values(self, output: TensorElement) -> np.ndarray:
        return output.values[:, READOUT]

    def order(self, slot: str = "X") -> int:
        return self.update.order(slot)

    def occurrence_roles(self) -> List[str]:
        return list(self.meta.get("occurrence_roles", []))

    def manifest(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "space": self.space.name,
            "shape": list(self.space.shape),
            "discretization": self.discretization,
            "dt": self.dt,
            "orders": {"X": self.order("X"), "H": self.order("H")},
            "occurrence_roles": self.occurrence_roles(),
            "parameters": {name: list(np.shape(value)) for name, value in self.parameters.items()},
        }


@dataclass
class Trajectory:
    """States (T, d, N) and outputs (T, d) of a run"""

    states: np.ndarray
    outputs: np.ndarray

    def __len__(self) -> int:
        return int(self.outputs.shape[0])


def _hidden_positions(space: ProductAlgebra, d: int, N: int) -> np.ndarray:
    """Flat index of (alpha, hid i), alpha-major to match a (d, N) block"""
    return np.ravel_multi_index((np.repeat(np.arange(d), N), np.tile(hidden_index(d, N), d)), space.shape)


def _block_constant(space: ProductAlgebra, block: str, flat_positions: np.ndarray) -> Constant:
    def materialize(ctx: EvalContext) -> TensorElement:
        if block not in ctx.params:
            raise MissingBlockError(f"Parameter block '{block}' is missing")
        return TensorElement(space, ops.scatter_add(ctx.params[block], flat_positions, space.size))

    return Constant(block, space, build=materialize)


def _feature_labels(d: int, N: int) -> List[str]:
    return ["e0", "u"] + [f"c{a}" for a in range(d)] + [f"h{i}" for i in range(N)]


def _roles(root: Node, tagged: Dict[int, str]) -> List[str]:
    """Role of every slot occurrence in depth-first order"""
    return [tagged.get(id(node), node.name) for node, _ in _walk(root) if isinstance(node, Slot)]


def _check_block(name: str, value: Optional[np.ndarray], shape: Tuple[int, ...], rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    if value is None:
        return rng.normal(scale=scale, size=shape)
    value = np.asarray(value, dtype=np.float64)
    if value.shape != shape:
        raise ShapeMismatchError(f"{name} has shape {value.shape}, expected {shape}")
    return value


def _generator(rng: np.random.Generator, d: int, N: int) -> np.ndarray:
    """Stable diagonal generator: lambda in [-1, -0.1]"""
    return -rng.uniform(0.1, 1.0, size=(d, N))


def build_ssm(
    d: int,
    N: int,
    discretization: str = "euler",
    dt: float = 0.05,
    Lambda: Optional[np.ndarray] = None,
    B: Optional[np.ndarray] = None,
    C: Optional[np.ndarray] = None,
    rng: Optional[Union[int, np.random.Generator]] = None,
) -> DynamicsSpec:
    """
    Diagonal SSM h <- h + dt (lambda h + B x), y = sum_i C h

    The feature rules e_hid(j) e_0 = delta e_hid(j) and e_hid(i) e_hid(j) = delta e_0
    make the injection K_B T(X) and the readout K_C H plain products.
    ``zoh`` uses h <- exp(dt lambda) h + dt B x.
    """
    if discretization not in SSM_DISCRETIZATIONS:
        raise ValueError(f"Unknown SSM discretization '{discretization}', expected one of {SSM_DISCRETIZATIONS}")
    if d < 1 or N < 1:
        raise InvalidDimensionError(f"SSM needs d, N >= 1, got {d}, {N}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    Lambda = _generator(rng, d, N) if Lambda is None else _check_block("Lambda", Lambda, (d, N), rng)
    B = _check_block("B", B, (d, N), rng)
    C = _check_block("C", C, (d, N), rng)

    hid = hidden_index(d, N)
    entries = [(int(h), READOUT, int(h), 1.0) for h in hid] + [(int(h), int(h), READOUT, 1.0) for h in hid]
    feature = make_generic(2 + d + N, entries, name=f"ssm(d={d},N={N})", labels=_feature_labels(d, N))
    space = tensor_space([make_b2(d), feature], roles=("hidden", "feature"), name=f"ssm(d={d},N={N})")
    positions = _hidden_positions(space, d, N)

    X, H = Slot("X"), Slot("H")
    injection = Mult(_block_constant(space, "ssm_B", positions), X, pre=HiddenFlip(0, 1, channel_index(d), READOUT))
    if discretization == "euler":
        generator = Hadamard(np.zeros(space.size), block="ssm_Lambda", positions=positions, flat_index=np.arange(d * N))
        root = add(H, Structural(generator, H), injection, coefficients=[1.0, dt, dt])
    else:
        decay = Hadamard(
            np.zeros(space.size),
            block="ssm_Lambda",
            positions=positions,
            flat_index=np.arange(d * N),
            scale=dt,
            transform="exp",
        )
        root = add(Structural(decay, H), injection, coefficients=[1.0, dt])

    parameters = {"ssm_Lambda": Lambda.ravel().copy(), "ssm_B": B.ravel().copy()}
    update = InteractionExpr(root, space, name=f"ssm[{discretization}].update", parameters=parameters)
    readout = InteractionExpr(
        Mult(_block_constant(space, "ssm_C", positions), H),
        space,
        name="ssm.readout",
        parameters={"ssm_C": C.ravel().copy()},
    )
    spec = DynamicsSpec(
        f"ssm[{discretization}]",
        space,
        update,
        readout,
        discretization,
        dt,
        d,
        N,
        meta={"occurrence_roles": _roles(root, {})},
    )
    logger.info(f"Built {spec.name}: d={d}, N={N}, dt={dt}")
    return spec


def build_mamba(
    d: int,
    N: int,
    discretization: str = "selective-zoh",
    dt: float = 0.05,
    Lambda: Optional[np.ndarray] = None,
    WB: Optional[np.ndarray] = None,
    WC: Optional[np.ndarray] = None,
    Wg: Optional[np.ndarray] = None,
    b: Optional[np.ndarray] = None,
    rng: Optional[Union[int, np.random.Generator]] = None,
) -> DynamicsSpec:
    """
    Mamba: input-dependent injection and readout with a selective step size

    Learnable structure constants lambda^(hid i)_(ch b, 0) = W^B_ib and
    lambda^0_(ch c, hid i) = W^C_ic turn X T(X) into (W^B x)_i x_a and X H into
    sum_i (W^C x)_i h_ai. The gate G = P_u(sigmoid(W^g T(X) + b)) carries
    Delta_a on the unit e_u, so G Y scales Y by Delta.

    Discretizations:
        euler: h <- h + dt (lambda h + (W^B x) x)
        selective-euler: h <- h + Delta lambda h + Delta (W^B x) x
        selective-zoh: h <- exp(Delta lambda) h + Delta (W^B x) x
    """
    if discretization not in MAMBA_DISCRETIZATIONS:
        raise ValueError(f"Unknown Mamba discretization '{discretization}', expected one of {MAMBA_DISCRETIZATIONS}")
    if d < 1 or N < 1:
        raise InvalidDimensionError(f"Mamba needs d, N >= 1, got {d}, {N}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    Lambda = _generator(rng, d, N) if Lambda is None else _check_block("Lambda", Lambda, (d, N), rng)
    WB = _check_block("WB", WB, (N, d), rng, scale=1.0 / np.sqrt(d))
    WC = _check_block("WC", WC, (N, d), rng, scale=1.0 / np.sqrt(d))
    selective = discretization.startswith("selective")
    if selective:
        Wg = _check_block("Wg", Wg, (d, d), rng, scale=1.0 / np.sqrt(d))
        b = _check_block("b", b, (d,), rng)

    ch, hid = channel_index(d), hidden_index(d, N)
    dim = 2 + d + N
    entries, wb_triples, wb_flat, wc_triples, wc_flat = [], [], [], [], []
    for i in range(N):
        for beta in range(d):
            triple = (int(ch[beta]), READOUT, int(hid[i]))
            entries.append((*triple, WB[i, beta]))
            wb_triples.append(triple)
            wb_flat.append(i * d + beta)
            triple = (int(ch[beta]), int(hid[i]), READOUT)
            entries.append((*triple, WC[i, beta]))
            wc_triples.append(triple)
            wc_flat.append(i * d + beta)
        entries.append((int(hid[i]), int(hid[i]), int(hid[i]), 1.0))
    entries += [(UNIT, n, n, 1.0) for n in range(dim)]
    feature = make_generic(dim, entries, name=f"mamba(d={d},N={N})", labels=_feature_labels(d, N))
    feature = link_entries(feature, "mamba_WB", wb_triples, wb_flat)
    feature = link_entries(feature, "mamba_WC", wc_triples, wc_flat)
    space = tensor_space([make_b2(d), feature], roles=("hidden", "feature"), name=f"mamba(d={d},N={N})")
    positions = _hidden_positions(space, d, N)
    flip = HiddenFlip(0, 1, ch, READOUT)

    X_gate, X_filter, X_input, H = Slot("X"), Slot("X"), Slot("X"), Slot("H")
    tagged = {id(X_gate): "gate", id(X_filter): "injection", id(X_input): "input", id(H): "state"}
    injection = Mult(X_filter, X_input, pre=flip)
    generator = Hadamard(np.zeros(space.size), block="mamba_Lambda", positions=positions, flat_index=np.arange(d * N))
    parameters = {"mamba_Lambda": Lambda.ravel().copy(), "mamba_WB": WB.ravel().copy()}

    if not selective:
        root = add(H, Structural(generator, H), injection, coefficients=[1.0, dt, dt])
    else:
        to_unit = np.zeros((dim, dim))
        to_unit[UNIT, READOUT] = 1.0
        bias_positions = np.ravel_multi_index((np.arange(d), np.full(d, UNIT)), space.shape)
        gate = chain(
            add(
                chain(X_gate, flip, FactorLinear(0, block="mamba_Wg", dim=d), FactorLinear(1, matrix=to_unit)),
                _block_constant(space, "mamba_b", bias_positions),
            ),
            Activation("sigmoid"),
            IndexProjection(1, [UNIT], role="feature"),
        )
        parameters.update({"mamba_Wg": Wg.ravel().copy(), "mamba_b": b.copy()})
        gated_injection = Mult(gate, injection)
        if discretization == "selective-euler":
            root = add(H, Mult(gate, Structural(generator, H)), gated_injection)
        else:
            decay = chain(
                Mult(gate, _block_constant(space, "mamba_Lambda", positions)),
                Activation("exp"),
                IndexProjection(1, hid, role="feature"),
            )
            root = add(Mult(decay, H), gated_injection)

    update = InteractionExpr(root, space, name=f"mamba[{discretization}].update", parameters=parameters)
    readout = InteractionExpr(Mult(Slot("X"), Slot("H")), space, name="mamba.readout", parameters={"mamba_WC": WC.ravel().copy()})
    meta: Dict[str, Any] = {"occurrence_roles": _roles(root, tagged)}
    if selective:
        meta["gated_injection"] = InteractionExpr(gated_injection, space, name="mamba.gated_injection", parameters=parameters)
    spec = DynamicsSpec(
        f"mamba[{discretization}]",
        space,
        update,
        readout,
        discretization,
        dt,
        d,
        N,
        meta=meta,
    )
    logger.info(f"Built {spec.name}: d={d}, N={N}, order {spec.order('X')} in X")
    return spec


def run_dynamics(
    spec: DynamicsSpec,
    inputs: np.ndarray,
    params: Optional[Dict[str, Any]] = None,
    h0: Optional[np.ndarray] = None,
) -> Tuple[List[TensorElement], List[TensorElement]]:
    """
    Step the system and keep the raw elements (tracked when ``params`` are)

    Returns:
        Tuple of (states, outputs), one element per input step

    Raises:
        NonFiniteStateError: If a state stops being finite
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.size and (inputs.ndim != 2 or inputs.shape[1] != spec.d):
        raise ShapeMismatchError(f"Inputs must have shape (T, {spec.d}), got {inputs.shape}")
    state = spec.encode_state(h0)
    states, outputs = [], []
    for step, x in enumerate(inputs.reshape(-1, spec.d)):
        X = spec.encode_input(x)
        state = spec.update.evaluate({"X": X, "H": state}, params)
        if not np.all(np.isfinite(ops.primal(state.flat))):
            raise NonFiniteStateError(step, f"{spec.name} state is not finite")
        states.append(state)
        outputs.append(spec.readout.evaluate({"X": X, "H": state}, params))
    return states, outputs


def step_dynamics(
    spec: DynamicsSpec,
    inputs: np.ndarray,
    params: Optional[Dict[str, Any]] = None,
    h0: Optional[np.ndarray] = None,
) -> Trajectory:
    """
    Trajectory of states and outputs under the spec's discretization

    Deterministic given inputs and parameters; an empty input sequence gives
    an empty trajectory.
    """
    states, outputs = run_dynamics(spec, inputs, params, h0)
    return Trajectory(
        states=np.array([spec.state_values(s) for s in states]).reshape(len(states), spec.d, spec.N),
        outputs=np.array([spec.output_values(y) for y in outputs]).reshape(len(outputs), spec.d),
    )
