"""
Architecture builders

Each builder returns an InteractionExpr whose space, structure constants,
structural operators and parameter blocks realize one architecture as a
product interaction: convolution, gating, attention (causal, softmax,
multi-head, rank-R, cross), tensor-product attention, harmonic networks,
tensor field networks and SE(3)-attention. Every expression carries raw-data
encoders for its slots and a decoder for its output.
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from lightrag.utils import logger

from . import tape as ops
from .algebra import Algebra, link_entries, make_b1, make_b2, make_generic
from .errors import (
    InvalidDimensionError,
    MissingBlockError,
    ShapeMismatchError,
    TruncationError,
)
from .interactions import (
    Constant,
    EvalContext,
    InteractionExpr,
    Mult,
    MultiplicationOperator,
    Slot,
    Structural,
    add,
    chain,
    compose_input,
)
from .representations import (
    degree_of_index,
    make_so2_algebra,
    make_so3_algebra,
    sph_harm_all,
)
from .structural import (
    Activation,
    CausalProjection,
    FactorLinear,
    Flip,
    IndexProjection,
    NeighbourhoodProjection,
    Normalize,
    neighbourhood_table,
    slot_proj,
)
from .tensor import (
    ProductAlgebra,
    TensorElement,
    embed_field3d,
    embed_image2d,
    embed_sequence,
    tensor_space,
)

CONV_CONSTRAINTS = ("symmetric", "free", "regularized")
CONV_BOUNDARIES = ("zero", "cyclic")


def _rng(rng: Optional[Union[int, np.random.Generator]]) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def gaussian_basis(distance: np.ndarray, n_basis: int, cutoff: float) -> np.ndarray:
    """
    Gaussian radial basis: exp(-((r - mu_j) / width)^2)

    Centres mu_j are evenly spaced on [0, cutoff] and width = cutoff / n_basis.
    Returns an array of shape (len(distance), n_basis).
    """
    distance = np.asarray(distance, dtype=np.float64)
    centres = np.linspace(0.0, cutoff, n_basis)
    width = cutoff / n_basis
    return np.exp(-(((distance[:, None] - centres[None, :]) / width) ** 2))


def _ordered_pairs(n: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.nonzero(~np.eye(n, dtype=bool))


def _edge_kernel(
    space: ProductAlgebra,
    weights: Any,
    rows: np.ndarray,
    cols: np.ndarray,
    distance: np.ndarray,
    angular: np.ndarray,
    degree: np.ndarray,
    n_basis: int,
    cutoff: float,
):
    """
    Flat coefficients of sum_edges sum_f R_deg(f)(|r|) angular_f f_row (x) f_col (x) e_f

    ``weights`` holds the radial profiles as a flat (n_degrees, n_basis) block and
    may be tracked; the angular part is a fixed (n_edges, n_features) array.
    """
    n_edges, n_features = angular.shape
    radial = gaussian_basis(distance, n_basis, cutoff)
    coef = angular[:, :, None] * radial[:, None, :]
    weight_index = np.broadcast_to(
        degree[None, :, None] * n_basis + np.arange(n_basis)[None, None, :], coef.shape
    ).ravel()
    feature = np.broadcast_to(np.arange(n_features)[None, :, None], coef.shape)
    target = np.ravel_multi_index(
        (
            np.broadcast_to(rows[:, None, None], coef.shape).ravel(),
            np.broadcast_to(cols[:, None, None], coef.shape).ravel(),
            feature.ravel(),
        ),
        space.shape,
    )
    contribution = ops.mul(ops.gather(weights, weight_index), coef.ravel())
    return ops.scatter_add(contribution, target, space.size)


def _positions_of(ctx: EvalContext, name: str) -> np.ndarray:
    positions = ctx.positions()
    if positions is None:
        raise MissingBlockError(f"'{name}' kernel needs sample positions on its input")
    return positions


# Convolution
# ---


def conv_offsets(kernel_size: int) -> np.ndarray:
    """Kernel offsets of a centred kernel: index a holds offset a - kernel_size // 2"""
    return np.arange(kernel_size) - kernel_size // 2


def _shift_algebra(
    n_positions: int,
    kernel_size: int,
    boundary: str,
    trainable: bool,
    block: str,
) -> Tuple[Algebra, np.ndarray, Optional[np.ndarray]]:
    """
    Per-axis shift algebra e_k e_i = e_(i-k) and where the kernel offsets live

    Returns the algebra, the basis index of each kernel offset and, for a
    trainable algebra, the initial (n_offsets, P, P) block indexed [k, i, n].
    """
    offsets = conv_offsets(kernel_size)
    P = n_positions
    if boundary == "cyclic":
        if kernel_size > P:
            raise InvalidDimensionError(f"Cyclic kernel of size {kernel_size} does not fit {P} positions")
        dim = P
        kernel_index = offsets % P
        labels = [f"p{i}" for i in range(P)]
    else:
        dim = P + offsets.size
        kernel_index = P + np.arange(offsets.size)
        labels = [f"p{i}" for i in range(P)] + [f"k{o}" for o in offsets]

    def target(i: int, k: int) -> Optional[int]:
        n = i - k
        if boundary == "cyclic":
            return n % P
        return n if 0 <= n < P else None

    entries, triples, flat = [], [], []
    shift = np.zeros((offsets.size, P, P))
    for k_pos, k in enumerate(offsets):
        for i in range(P):
            n_hit = target(i, int(k))
            if n_hit is not None:
                shift[k_pos, i, n_hit] = 1.0
            if trainable:
                for n in range(P):
                    entries.append((int(kernel_index[k_pos]), i, n, shift[k_pos, i, n]))
                    triples.append((int(kernel_index[k_pos]), i, n))
                    flat.append((k_pos * P + i) * P + n)
            elif n_hit is not None:
                entries.append((int(kernel_index[k_pos]), i, n_hit, 1.0))
    algebra = make_generic(
        dim,
        entries,
        name=f"shift({P},{kernel_size},{boundary})",
        labels=labels,
        meta={"kind": "shift", "boundary": boundary, "offsets": offsets.tolist()},
    )
    if not trainable:
        return algebra, kernel_index, None
    return link_entries(algebra, block, triples, flat), kernel_index, shift


def build_conv2d(
    height: int,
    width: int,
    kernel_height: int,
    kernel_width: int,
    constraint: str = "symmetric",
    boundary: str = "zero",
    kernel: Optional[np.ndarray] = None,
    lambda_noise: float = 0.0,
    rng: Optional[Union[int, np.random.Generator]] = None,
    budget: Optional[int] = None,
) -> InteractionExpr:
    """
    2-D convolution as a single multiplication operator O_K(X) = K X

    With ``constraint='symmetric'`` the shift constraints are hardwired and the
    expression evaluates the cross-correlation
    out[n, m] = sum_ij X[i, j] K[i - n, j - m] (kernel offsets centred, zero
    padding or a cyclic grid). ``free`` makes every structure constant of the
    shift algebras trainable (blocks ``conv_lambda_row``/``conv_lambda_col``,
    indexed [k, i, n]); ``regularized`` is ``free`` plus the symmetry
    regularizer registered in ``meta['regularized_blocks']``.

    Args:
        height: Image rows
        width: Image columns
        kernel_height: Kernel rows
        kernel_width: Kernel columns
        constraint: 'symmetric', 'free' or 'regularized'
        boundary: 'zero' (zero padding) or 'cyclic'
        kernel: Initial kernel (random normal by default)
        lambda_noise: Standard deviation of the noise added to trainable constants
        rng: Seed or generator for the random initial values
        budget: Coefficient budget for the space

    Returns:
        InteractionExpr: Expression of slot X, decoding to a (height, width) array
    """
    if constraint not in CONV_CONSTRAINTS:
        raise ValueError(f"Unknown conv constraint '{constraint}', expected one of {CONV_CONSTRAINTS}")
    if boundary not in CONV_BOUNDARIES:
        raise ValueError(f"Unknown conv boundary '{boundary}', expected one of {CONV_BOUNDARIES}")
    rng = _rng(rng)
    trainable = constraint != "symmetric"
    row_alg, row_kernel, row_shift = _shift_algebra(height, kernel_height, boundary, trainable, "conv_lambda_row")
    col_alg, col_kernel, col_shift = _shift_algebra(width, kernel_width, boundary, trainable, "conv_lambda_col")
    space = tensor_space([row_alg, col_alg], roles=("positional", "positional"), name="conv2d", budget=budget)

    kernel = rng.normal(size=(kernel_height, kernel_width)) if kernel is None else np.asarray(kernel, dtype=np.float64)
    if kernel.shape != (kernel_height, kernel_width):
        raise ShapeMismatchError(f"Kernel has shape {kernel.shape}, expected {(kernel_height, kernel_width)}")
    kernel_flat = np.ravel_multi_index(
        (np.repeat(row_kernel, kernel_width), np.tile(col_kernel, kernel_height)), space.shape
    )

    def materialize_kernel(ctx: EvalContext) -> TensorElement:
        return TensorElement(space, ops.scatter_add(ctx.params["kernel"], kernel_flat, space.size))

    parameters: Dict[str, np.ndarray] = {"kernel": kernel.ravel().copy()}
    regularized: Dict[str, Tuple[int, int, int]] = {}
    if trainable:
        for name, shift in (("conv_lambda_row", row_shift), ("conv_lambda_col", col_shift)):
            initial = shift + lambda_noise * rng.normal(size=shift.shape)
            parameters[name] = initial.ravel()
            if constraint == "regularized":
                regularized[name] = shift.shape

    root = Mult(Constant("K", space, build=materialize_kernel), Slot("X"))
    expr = InteractionExpr(
        root,
        space,
        name=f"conv2d[{constraint}]",
        parameters=parameters,
        encoders={"X": lambda image: embed_image2d(image, space)},
        decoder=lambda out: out.values[:height, :width],
        meta={
            "constraint": constraint,
            "boundary": boundary,
            "kernel_shape": [kernel_height, kernel_width],
            "regularized_blocks": regularized,
        },
    )
    logger.info(f"Built {expr.name}: {height}x{width} image, {kernel_height}x{kernel_width} kernel, {boundary} boundary")
    return expr


# Gating
# ---


def build_gating(
    slot_dim: int,
    W: Optional[np.ndarray] = None,
    F: str = "sigmoid",
    rng: Optional[Union[int, np.random.Generator]] = None,
) -> InteractionExpr:
    """
    Gating sum_a F(sum_b W_ab Y_b) X_a g_a in B2

    The filter F(W(Y)) gates the input X through the second composition rule.
    Slots X and Y take length ``slot_dim`` vectors.
    """
    if W is None:
        W = _rng(rng).normal(size=(slot_dim, slot_dim))
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (slot_dim, slot_dim):
        raise ShapeMismatchError(f"Gate matrix has shape {W.shape}, expected {(slot_dim, slot_dim)}")
    space = tensor_space([make_b2(slot_dim)], roles=("positional",), name="gating")

    def encode(vector: np.ndarray) -> TensorElement:
        return TensorElement(space, np.asarray(vector, dtype=np.float64))

    gate = Structural(Activation(F), Structural(FactorLinear(0, block="gate_W", dim=slot_dim), Slot("Y")))
    inner = InteractionExpr(
        Slot("X"),
        space,
        name="gating",
        parameters={"gate_W": W.ravel().copy()},
        encoders={"X": encode, "Y": encode},
        decoder=lambda out: out.values.copy(),
        meta={"activation": F},
    )
    return compose_input(MultiplicationOperator(gate), inner, name="gating")


# Attention
# ---


def attention_weights(
    d: int,
    heads: int = 1,
    rank: int = 1,
    rng: Optional[Union[int, np.random.Generator]] = None,
) -> Dict[str, np.ndarray]:
    """Random Wq, Wk, Wv of shape (heads, rank, d // heads, d)"""
    rng = _rng(rng)
    d_head = d // heads
    shape = (heads, rank, d_head, d)
    scale = 1.0 / np.sqrt(d)
    return {name: rng.normal(scale=scale, size=shape) for name in ("Wq", "Wk", "Wv")}


def _attention_algebra(score: np.ndarray, value: np.ndarray) -> Algebra:
    """
    Direct sum of head blocks {score slots} + {channels}

    Score constants e_ch(a) e_ch(b) -> e_r follow block ``score`` (h, R, d, d);
    value constants e_r e_ch(eta) -> e_ch(theta) follow block ``value`` (h, R, d_h, d).
    """
    heads, rank, d, _ = score.shape
    d_head = value.shape[2]
    block_dim = rank + d
    entries, score_triples, score_flat, value_triples, value_flat = [], [], [], [], []
    labels: List[str] = []
    for h in range(heads):
        base = h * block_dim
        labels += [f"h{h}:s{r}" for r in range(rank)] + [f"h{h}:c{a}" for a in range(d)]
        for r in range(rank):
            for a in range(d):
                for b in range(d):
                    triple = (base + rank + a, base + rank + b, base + r)
                    entries.append((*triple, score[h, r, a, b]))
                    score_triples.append(triple)
                    score_flat.append(((h * rank + r) * d + a) * d + b)
            for theta in range(d_head):
                for eta in range(d):
                    triple = (base + r, base + rank + eta, base + rank + theta)
                    entries.append((*triple, value[h, r, theta, eta]))
                    value_triples.append(triple)
                    value_flat.append(((h * rank + r) * d_head + theta) * d + eta)
    algebra = make_generic(
        heads * block_dim,
        entries,
        name=f"attn(h={heads},R={rank},d={d})",
        labels=labels,
        meta={"kind": "attention", "heads": heads, "rank": rank, "block_dim": block_dim},
    )
    algebra = link_entries(algebra, "score", score_triples, score_flat)
    return link_entries(algebra, "value", value_triples, value_flat)


def attention_constants(weights: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Score constants Wq^T Wk / sqrt(d_h) and value constants Wv per head and rank"""
    Wq, Wk, Wv = (np.asarray(weights[k], dtype=np.float64) for k in ("Wq", "Wk", "Wv"))
    d_head = Wq.shape[2]
    score = np.einsum("hrqa,hrqb->hrab", Wq, Wk) / np.sqrt(d_head)
    return {"score": score, "value": Wv}


def build_attention(
    n: int,
    d: int,
    heads: int = 1,
    rank: int = 1,
    F: str = "exp",
    normalize: bool = True,
    causal: Optional[bool] = None,
    cross: bool = False,
    n_kv: Optional[int] = None,
    weights: Optional[Dict[str, np.ndarray]] = None,
    rng: Optional[Union[int, np.random.Generator]] = None,
) -> InteractionExpr:
    """
    Attention as the cubic product interaction O_(P(F(P X T(X))))(X)

    Tokens x^(k) embed as f_k (x) f_0 (x) e_a in B1 (x) B1 (x) A. The feature
    algebra holds, per head, ``rank`` score slots and the d channels; each head
    reads the tokens from its own replicated channel block.

    Variants:
        causal-unnormalized: ``F`` any activation, ``normalize=False``
        causal-softmax: ``F='exp'``, ``normalize=True`` (default)
        multihead: ``heads`` > 1, head dim d // heads
        rank-R: ``rank`` = R independent score/value pairs summed over r
        cross: ``cross=True``; keys and values come from slot Y, (X Y^t) Y^t

    Args:
        n: Number of query tokens
        d: Token dimension
        heads: Number of heads (must divide d)
        rank: Score slots per head (at most d)
        F: Activation applied to the scores
        normalize: Divide by the row sum over key tokens (softmax with F = exp)
        causal: Keep only keys l <= k (default: True unless cross)
        cross: Take keys and values from a second input Y
        n_kv: Number of key tokens for cross attention (defaults to n)
        weights: Wq, Wk, Wv of shape (heads, rank, d // heads, d)
        rng: Seed or generator for random weights

    Returns:
        InteractionExpr: Decodes to an (n, heads * d_h) array
    """
    if heads < 1 or d % heads:
        raise InvalidDimensionError(f"{heads} heads do not divide token dim {d}")
    if rank < 1 or rank > d:
        raise InvalidDimensionError(f"Rank {rank} must lie in [1, {d}]")
    n_kv = n if n_kv is None else n_kv
    causal = not cross if causal is None else causal
    if not cross and n_kv != n:
        raise ShapeMismatchError("Self-attention uses the same tokens as keys")
    d_head = d // heads
    weights = weights if weights is not None else attention_weights(d, heads, rank, rng)
    missing = [name for name in ("Wq", "Wk", "Wv") if name not in weights]
    if missing:
        raise MissingBlockError(f"Attention needs weight blocks {missing}")
    for name in ("Wq", "Wk", "Wv"):
        if np.shape(weights[name]) != (heads, rank, d_head, d):
            raise ShapeMismatchError(f"{name} has shape {np.shape(weights[name])}, expected {(heads, rank, d_head, d)}")
    constants = attention_constants(weights)
    feature = _attention_algebra(constants["score"], constants["value"])
    n_pos = max(n, n_kv)
    b1 = make_b1(n_pos)
    space = tensor_space([b1, b1, feature], name=f"attention(n={n_pos})")

    block_dim = rank + d
    score_slots = [h * block_dim + r for h in range(heads) for r in range(rank)]
    channel_blocks = [h * block_dim + rank + np.arange(d) for h in range(heads)]
    out_channels = np.concatenate([h * block_dim + rank + np.arange(d_head) for h in range(heads)])

    queries = Slot("X")
    keys = Slot("Y") if cross else queries
    supports = [
        IndexProjection(2, score_slots, role="feature"),
        IndexProjection(0, range(1, n + 1)),
        IndexProjection(1, range(1, n_kv + 1)),
    ]
    scores = Mult(queries, keys, pre=Flip(0, 1))
    attn = chain(scores, *supports, Activation(F), *supports)
    if causal:
        attn = chain(attn, CausalProjection(0, 1, collapse=False))
    if normalize:
        attn = chain(attn, Normalize(1, range(1, n_kv + 1)))
    root = Mult(attn, keys, pre=Flip(0, 1), post=slot_proj(1, [0]))

    encoders = {"X": lambda tokens: embed_sequence(tokens, space, channel_blocks)}
    if cross:
        encoders["Y"] = lambda tokens: embed_sequence(tokens, space, channel_blocks)
    variant = "cross" if cross else ("causal" if causal else "full")
    expr = InteractionExpr(
        root,
        space,
        name=f"attention[{variant},{'softmax' if normalize and F == 'exp' else F}]",
        parameters={"score": constants["score"].ravel().copy(), "value": constants["value"].ravel().copy()},
        encoders=encoders,
        decoder=lambda out: out.values[1 : n + 1, 0][:, out_channels],
        meta={"heads": heads, "rank": rank, "d": d, "causal": causal, "normalize": normalize, "activation": F},
    )
    logger.info(f"Built {expr.name}: n={n}, d={d}, heads={heads}, rank={rank}")
    return expr


# Tensor-product attention
# ---


def tpa_weights(
    d: int,
    heads: int,
    head_dim: int,
    ranks: Tuple[int, int, int] = (1, 1, 1),
    rng: Optional[Union[int, np.random.Generator]] = None,
) -> Dict[str, np.ndarray]:
    """Random factor maps: tpa_<s>_a (heads, R_s, d) and tpa_<s>_b (R_s, head_dim, d)"""
    rng = _rng(rng)
    scale = 1.0 / np.sqrt(d)
    weights = {}
    for s, rank in zip("qkv", ranks):
        weights[f"tpa_{s}_a"] = rng.normal(scale=1.0, size=(heads, rank, d))
        weights[f"tpa_{s}_b"] = rng.normal(scale=scale, size=(rank, head_dim, d))
    return weights


def build_tpa(
    n: int,
    d: int,
    heads: int = 2,
    head_dim: int = 2,
    ranks: Union[int, Tuple[int, int, int]] = 1,
    weights: Optional[Dict[str, np.ndarray]] = None,
    rng: Optional[Union[int, np.random.Generator]] = None,
) -> InteractionExpr:
    """
    Tensor-product attention as a two-level, order-6 product interaction

    Level two forms Q, K and V by the quadratic interaction O_(Wa(X))(Wb(X)):
    head i receives (1/R) sum_r a_ri(x) b_r(x) with a_r(x) = Wa_r x (one scalar
    per head) and b_r(x) = Wb_r x (shared over heads). Level one is causal
    softmax attention per head with the 1/sqrt(head_dim) scale and the causal
    collapse onto g_0.

    The space is B2(n) (x) B2(n) (x) A with head blocks
    {e_0} + channels(d) + a-range(R) + b-range(R * head_dim) + q-range(head_dim).
    """
    if isinstance(ranks, int):
        ranks = (ranks, ranks, ranks)
    if len(ranks) != 3 or min(ranks) < 1:
        raise InvalidDimensionError(f"TPA needs three positive ranks, got {ranks}")
    weights = weights if weights is not None else tpa_weights(d, heads, head_dim, ranks, rng)
    for s, rank in zip("qkv", ranks):
        for part, shape in (("a", (heads, rank, d)), ("b", (rank, head_dim, d))):
            name = f"tpa_{s}_{part}"
            if name not in weights:
                raise MissingBlockError(f"TPA needs factor map '{name}'")
            if np.shape(weights[name]) != shape:
                raise ShapeMismatchError(f"{name} has shape {np.shape(weights[name])}, expected {shape}")

    r_max = max(ranks)
    ch0, a0 = 1, 1 + d
    b0 = a0 + r_max
    q0 = b0 + r_max * head_dim
    block_dim = q0 + head_dim
    inv_sqrt = 1.0 / np.sqrt(head_dim)
    entries, labels = [], []
    for h in range(heads):
        o = h * block_dim
        labels += (
            [f"h{h}:e0"]
            + [f"h{h}:c{a}" for a in range(d)]
            + [f"h{h}:a{r}" for r in range(r_max)]
            + [f"h{h}:b{r},{q}" for r in range(r_max) for q in range(head_dim)]
            + [f"h{h}:q{q}" for q in range(head_dim)]
        )
        for q in range(head_dim):
            for r in range(r_max):
                entries.append((o + a0 + r, o + b0 + r * head_dim + q, o + q0 + q, 1.0))
            entries.append((o + q0 + q, o + q0 + q, o, inv_sqrt))
            entries.append((o, o + q0 + q, o + q0 + q, 1.0))
    feature = make_generic(
        heads * block_dim,
        entries,
        name=f"tpa(h={heads},dh={head_dim})",
        labels=labels,
        meta={"kind": "tpa", "block_dim": block_dim},
    )
    b2 = make_b2(n)
    space = tensor_space([b2, b2, feature], name=f"tpa(n={n})")
    dim = feature.dim

    def factor_maps(s: str, rank: int) -> Tuple[FactorLinear, FactorLinear]:
        a_rows, b_rows, a_cols, b_cols, a_index, b_index = [], [], [], [], [], []
        for h in range(heads):
            o = h * block_dim
            for r in range(rank):
                for alpha in range(d):
                    a_rows.append(o + a0 + r)
                    a_cols.append(o + ch0 + alpha)
                    a_index.append((h * rank + r) * d + alpha)
                    for q in range(head_dim):
                        b_rows.append(o + b0 + r * head_dim + q)
                        b_cols.append(o + ch0 + alpha)
                        b_index.append((r * head_dim + q) * d + alpha)
        return (
            FactorLinear(2, block=f"tpa_{s}_a", dim=dim, rows=a_rows, cols=a_cols, index=a_index),
            FactorLinear(2, block=f"tpa_{s}_b", dim=dim, rows=b_rows, cols=b_cols, index=b_index),
        )

    X = Slot("X")
    projected = {}
    for s, rank in zip("qkv", ranks):
        map_a, map_b = factor_maps(s, rank)
        projected[s] = add(Mult(Structural(map_a, X), X, pre=map_b), coefficients=[1.0 / rank])

    scalar = IndexProjection(2, [h * block_dim for h in range(heads)], role="feature")
    attn = chain(
        Mult(projected["q"], projected["k"], pre=Flip(0, 1)),
        scalar,
        Activation("exp"),
        scalar,
        CausalProjection(0, 1, collapse=False),
        Normalize(1, range(n)),
    )
    root = Mult(attn, projected["v"], pre=Flip(0, 1), post=CausalProjection(0, 1, collapse=True))

    channel_blocks = [h * block_dim + ch0 + np.arange(d) for h in range(heads)]
    out_channels = np.concatenate([h * block_dim + q0 + np.arange(head_dim) for h in range(heads)])
    expr = InteractionExpr(
        root,
        space,
        name="tpa",
        parameters={name: np.asarray(value, dtype=np.float64).ravel().copy() for name, value in weights.items()},
        encoders={"X": lambda tokens: embed_sequence(tokens, space, channel_blocks)},
        decoder=lambda out: out.values[:n, 0][:, out_channels],
        meta={"heads": heads, "head_dim": head_dim, "ranks": list(ranks), "channel_offset": ch0, "block_dim": block_dim},
    )
    logger.info(f"Built tpa: n={n}, d={d}, heads={heads}, head_dim={head_dim}, ranks={ranks}")
    return expr


# Harmonic networks
# ---


def build_harmonic(
    n_points: int,
    n_max: int,
    n_basis: int = 3,
    cutoff: float = 2.0,
    radial: Optional[np.ndarray] = None,
    anisotropy: Optional[Sequence[float]] = None,
    policy: Optional[str] = None,
    rng: Optional[Union[int, np.random.Generator]] = None,
) -> InteractionExpr:
    """
    Planar rotation-equivariant operator with kernels K_n(r) = R_n(|r|) e^(i n phi)

    The kernel sums over ordered pairs a != b of sample points with
    r = r_a - r_b; radial profiles are Gaussian-RBF expansions held in block
    ``harmonic_radial`` (2 n_max + 1, n_basis). A nonzero ``anisotropy``
    evaluates the kernel at r - c for a fixed offset c, which breaks the
    symmetry (negative control).
    """
    feature = make_so2_algebra(n_max, policy)
    b1 = make_b1(n_points)
    space = tensor_space([b1, b1, feature], name=f"harmonic(N={n_points})")
    radial = _rng(rng).normal(size=(2 * n_max + 1, n_basis)) if radial is None else np.asarray(radial, dtype=np.float64)
    if radial.shape != (2 * n_max + 1, n_basis):
        raise ShapeMismatchError(f"Radial block has shape {radial.shape}, expected {(2 * n_max + 1, n_basis)}")
    offset = np.zeros(2) if anisotropy is None else np.asarray(anisotropy, dtype=np.float64)
    charges = np.arange(-n_max, n_max + 1)
    rows, cols = _ordered_pairs(n_points)

    def materialize_kernel(ctx: EvalContext) -> TensorElement:
        positions = _positions_of(ctx, "harmonic")
        vectors = positions[rows] - positions[cols] - offset
        angle = np.arctan2(vectors[:, 1], vectors[:, 0])
        angular = np.exp(1j * charges[None, :] * angle[:, None])
        coeff = _edge_kernel(
            space,
            ctx.params["harmonic_radial"],
            rows + 1,
            cols + 1,
            np.linalg.norm(vectors, axis=1),
            angular,
            charges + n_max,
            n_basis,
            cutoff,
        )
        return TensorElement(space, coeff, positions=positions)

    kernel = Constant("K_harmonic", space, build=materialize_kernel)
    root = Mult(kernel, Slot("X"), pre=Flip(0, 1), post=slot_proj(1, [0]))
    channels = np.arange(2 * n_max + 1)
    return InteractionExpr(
        root,
        space,
        name="harmonic" if anisotropy is None else "harmonic[anisotropic]",
        parameters={"harmonic_radial": radial.ravel().copy()},
        encoders={"X": lambda data: embed_field3d(data[0], data[1], space, channels)},
        decoder=lambda out: out.values[1 : n_points + 1, 0, :],
        meta={"n_max": n_max, "n_basis": n_basis, "cutoff": cutoff, "policy": feature.policy},
    )


# Tensor field networks
# ---


def build_tfn(
    n_points: int,
    l_max: int,
    n_basis: int = 3,
    cutoff: float = 2.0,
    radial: Optional[np.ndarray] = None,
    anisotropy: Optional[Sequence[float]] = None,
    policy: Optional[str] = None,
    rng: Optional[Union[int, np.random.Generator]] = None,
) -> InteractionExpr:
    """
    Tensor field network layer as one multiplication operator

    out^l_m(r_a) = sum_(b != a) sum C^(lm)_(l1 m1, l2 m2) K^l1_m1(r_a - r_b) s^l2_m2(r_b)
    with K^l_m(r) = R^l(|r|) Y^l_m(r / |r|); the radial profiles R^l are Gaussian-RBF
    expansions held in block ``tfn_radial`` (l_max + 1, n_basis). A nonzero
    ``anisotropy`` offset c evaluates the kernels at r - c (negative control).

    Raises:
        TruncationError: Under the strict policy when degree couplings leave l <= l_max
    """
    feature = make_so3_algebra(l_max, policy)
    if feature.policy == "strict" and feature.overflow_pairs:
        raise TruncationError(
            f"TFN products of degree <= {l_max} couple beyond l_max; use the drop policy or raise l_max"
        )
    b1 = make_b1(n_points)
    space = tensor_space([b1, b1, feature], name=f"tfn(N={n_points},l<={l_max})")
    radial = _rng(rng).normal(size=(l_max + 1, n_basis)) if radial is None else np.asarray(radial, dtype=np.float64)
    if radial.shape != (l_max + 1, n_basis):
        raise ShapeMismatchError(f"Radial block has shape {radial.shape}, expected {(l_max + 1, n_basis)}")
    rows, cols = _ordered_pairs(n_points)
    degree = degree_of_index(l_max)
    offset = np.zeros(3) if anisotropy is None else np.asarray(anisotropy, dtype=np.float64)

    def materialize_kernel(ctx: EvalContext) -> TensorElement:
        positions = _positions_of(ctx, "tfn")
        vectors = positions[rows] - positions[cols] - offset
        distance = np.linalg.norm(vectors, axis=1)
        angular = sph_harm_all(l_max, vectors / distance[:, None])
        coeff = _edge_kernel(space, ctx.params["tfn_radial"], rows + 1, cols + 1, distance, angular, degree, n_basis, cutoff)
        return TensorElement(space, coeff, positions=positions)

    root = Mult(Constant("K_tfn", space, build=materialize_kernel), Slot("X"), pre=Flip(0, 1), post=slot_proj(1, [0]))
    channels = np.arange(feature.dim)
    return InteractionExpr(
        root,
        space,
        name="tfn" if anisotropy is None else "tfn[anisotropic]",
        parameters={"tfn_radial": radial.ravel().copy()},
        encoders={"X": lambda data: embed_field3d(data[0], data[1], space, channels)},
        decoder=lambda out: out.values[1 : n_points + 1, 0, :],
        meta={"l_max": l_max, "n_basis": n_basis, "cutoff": cutoff, "policy": feature.policy},
    )


# SE(3)-attention
# ---


def build_se3_attention(
    n_points: int,
    l_max: int,
    neighbourhoods: Optional[Dict[int, Sequence[int]]] = None,
    positions: Optional[np.ndarray] = None,
    radius: Optional[float] = None,
    n_basis: int = 3,
    cutoff: float = 2.0,
    radial_key: Optional[np.ndarray] = None,
    radial_value: Optional[np.ndarray] = None,
    query_weights: Optional[np.ndarray] = None,
    policy: Optional[str] = None,
    anisotropy: Optional[Sequence[float]] = None,
    rng: Optional[Union[int, np.random.Generator]] = None,
) -> InteractionExpr:
    """
    SE(3)-attention as a two-level, order-3 product interaction

    Level two: queries S^Q = U W^Q(S) node-wise (one weight per degree, block
    ``se3_wq``), keys and values S^K = W^K T(S), S^V = W^V T(S) from TFN edge
    kernels (blocks ``se3_radial_K``/``se3_radial_V``). Level one:
    A = P0(exp(P0(S^Q S^K))) masked to the neighbourhoods and normalized over
    them, then the neighbourhood collapse of A S^V.

    The neighbourhood table is given explicitly or computed from ``positions``
    and ``radius`` (self excluded).
    An ``anisotropy`` offset c evaluates the edge kernels at r - c (negative
    control); the neighbourhood table is unaffected.

    Raises:
        MissingBlockError: If neither a table nor positions and a radius are given
    """
    if neighbourhoods is None:
        if positions is None or radius is None:
            raise MissingBlockError("SE(3)-attention needs a neighbourhood table or positions and a radius")
        neighbourhoods = neighbourhood_table(positions, radius=radius)
    rng = _rng(rng)
    feature = make_so3_algebra(l_max, policy)
    b2 = make_b2(n_points)
    space = tensor_space([b2, b2, feature], name=f"se3attn(N={n_points},l<={l_max})")
    F = feature.dim
    degree = degree_of_index(l_max)
    shape = (l_max + 1, n_basis)
    radial_key = rng.normal(size=shape) if radial_key is None else np.asarray(radial_key, dtype=np.float64)
    radial_value = rng.normal(size=shape) if radial_value is None else np.asarray(radial_value, dtype=np.float64)
    query_weights = rng.normal(size=l_max + 1) if query_weights is None else np.asarray(query_weights, dtype=np.float64)
    for name, value, expected in (
        ("radial_key", radial_key, shape),
        ("radial_value", radial_value, shape),
        ("query_weights", query_weights, (l_max + 1,)),
    ):
        if value.shape != expected:
            raise ShapeMismatchError(f"{name} has shape {value.shape}, expected {expected}")
    rows, cols = _ordered_pairs(n_points)
    offset = np.zeros(3) if anisotropy is None else np.asarray(anisotropy, dtype=np.float64)

    def edge_kernel(block: str) -> Constant:
        def materialize(ctx: EvalContext) -> TensorElement:
            points = _positions_of(ctx, "se3-attention")
            vectors = points[rows] - points[cols] - offset
            distance = np.linalg.norm(vectors, axis=1)
            angular = sph_harm_all(l_max, vectors / distance[:, None])
            coeff = _edge_kernel(space, ctx.params[block], rows, cols, distance, angular, degree, n_basis, cutoff)
            return TensorElement(space, coeff, positions=points)

        return Constant(block, space, build=materialize)

    slots = np.arange(n_points)
    unit_index = np.ravel_multi_index((np.repeat(slots, n_points), np.tile(slots, n_points), np.zeros(n_points**2, dtype=np.int64)), space.shape)
    unit = Constant("U", space, value=TensorElement.from_coords(space, unit_index, np.ones(unit_index.size)))
    query_map = FactorLinear(2, block="se3_wq", dim=F, rows=np.arange(F), cols=np.arange(F), index=degree)

    S = Slot("X")
    queries = Mult(unit, S, pre=query_map)
    keys = Mult(edge_kernel("se3_radial_K"), S, pre=Flip(0, 1))
    values = Mult(edge_kernel("se3_radial_V"), S, pre=Flip(0, 1))
    scalar = IndexProjection(2, [0], role="feature")
    attn = chain(
        Mult(queries, keys),
        scalar,
        Activation("exp"),
        scalar,
        NeighbourhoodProjection(neighbourhoods, 0, 1, collapse=False),
        Normalize(1, slots),
    )
    root = Mult(attn, values, post=NeighbourhoodProjection(neighbourhoods, 0, 1, collapse=True))
    channels = np.arange(F)
    expr = InteractionExpr(
        root,
        space,
        name="se3_attention" if anisotropy is None else "se3_attention[anisotropic]",
        parameters={
            "se3_wq": query_weights.copy(),
            "se3_radial_K": radial_key.ravel().copy(),
            "se3_radial_V": radial_value.ravel().copy(),
        },
        encoders={"X": lambda data: embed_field3d(data[0], data[1], space, channels)},
        decoder=lambda out: out.values[:, 0, :],
        meta={"l_max": l_max, "n_basis": n_basis, "cutoff": cutoff, "neighbourhoods": neighbourhoods},
    )
    logger.info(f"Built se3_attention: {n_points} points, l_max={l_max}, {sum(len(v) for v in neighbourhoods.values())} edges")
    return expr
