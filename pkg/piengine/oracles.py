"""
Reference implementations

Deliberately naive loops over raw numpy arrays. Nothing here touches
TensorElement, structure constants or the expression DAG, so a fault in the
algebra engine cannot leak into the values these functions produce. Speed is
not a concern.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import BudgetExceededError, ShapeMismatchError
from .representations import cg, sph_harm

BRUTEFORCE_LIMIT = 100_000


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


ORACLE_ACTIVATIONS: Dict[str, Callable[[Any], Any]] = {
    "identity": lambda x: x,
    "exp": np.exp,
    "sigmoid": _sigmoid,
    "elu": lambda x: np.where(x > 0, x, np.exp(np.minimum(x, 0)) - 1.0),
    "relu": lambda x: np.maximum(x, 0),
}


@dataclass
class OracleCase:
    """One equivalence check: raw inputs, the builder it mirrors and its tolerance"""

    name: str
    builder: str
    inputs: Dict[str, Any] = field(default_factory=dict)
    tolerance: float = 1e-10
    seed: Optional[int] = None


# Convolution
# ---


def oracle_xcorr2d(X: np.ndarray, K: np.ndarray, boundary: str = "zero") -> np.ndarray:
    """out[n, m] = sum_ab X[n + a - ch, m + b - cw] K[a, b] with a centred kernel"""
    X, K = np.asarray(X, dtype=np.float64), np.asarray(K, dtype=np.float64)
    H, W = X.shape
    kh, kw = K.shape
    ch, cw = kh // 2, kw // 2
    out = np.zeros((H, W))
    for n in range(H):
        for m in range(W):
            acc = 0.0
            for a in range(kh):
                for b in range(kw):
                    i, j = n + a - ch, m + b - cw
                    if boundary == "cyclic":
                        i, j = i % H, j % W
                    elif not (0 <= i < H and 0 <= j < W):
                        continue
                    acc += X[i, j] * K[a, b]
            out[n, m] = acc
    return out


def oracle_xcorr2d_scatter(X: np.ndarray, K: np.ndarray, boundary: str = "zero") -> np.ndarray:
    """Same map as oracle_xcorr2d, looping over input pixels and scattering"""
    X, K = np.asarray(X, dtype=np.float64), np.asarray(K, dtype=np.float64)
    H, W = X.shape
    kh, kw = K.shape
    out = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            for n in range(H):
                for m in range(W):
                    di, dj = i - n, j - m
                    if boundary == "cyclic":
                        # smallest representative that lands inside the kernel window
                        di = (di + kh // 2) % H - kh // 2
                        dj = (dj + kw // 2) % W - kw // 2
                    a, b = di + kh // 2, dj + kw // 2
                    if 0 <= a < kh and 0 <= b < kw:
                        out[n, m] += X[i, j] * K[a, b]
    return out


# Gating
# ---


def oracle_gating(X: np.ndarray, Y: np.ndarray, W: np.ndarray, F: str = "sigmoid") -> np.ndarray:
    X, Y, W = (np.asarray(a, dtype=np.float64) for a in (X, Y, W))
    out = np.zeros_like(X)
    for a in range(X.size):
        pre = 0.0
        for b in range(Y.size):
            pre += W[a, b] * Y[b]
        out[a] = ORACLE_ACTIVATIONS[F](pre) * X[a]
    return out


# Attention
# ---


def _as_heads(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim == 2:
        return W[None, None]
    if W.ndim == 3:
        return W[:, None]
    return W


def oracle_attention(
    tokens: np.ndarray,
    Wq: np.ndarray,
    Wk: np.ndarray,
    Wv: np.ndarray,
    F: str = "exp",
    causal: bool = True,
    normalize: bool = True,
    keys: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Scores, mask, activation, optional row normalization, value sum

    Weights may be (d_h, d), (heads, d_h, d) or (heads, rank, d_h, d); rank
    terms are summed, heads concatenated. Key l is visible to query k when
    l <= k under ``causal``.
    """
    queries = np.asarray(tokens, dtype=np.float64)
    keys = queries if keys is None else np.asarray(keys, dtype=np.float64)
    Wq, Wk, Wv = _as_heads(Wq), _as_heads(Wk), _as_heads(Wv)
    heads, rank, d_head, _ = Wq.shape
    n, n_kv = queries.shape[0], keys.shape[0]
    act = ORACLE_ACTIVATIONS[F]
    out = np.zeros((n, heads * d_head))
    for h in range(heads):
        for r in range(rank):
            for k in range(n):
                q = Wq[h, r] @ queries[k]
                weights = np.zeros(n_kv)
                for l in range(n_kv):
                    if causal and l > k:
                        continue
                    weights[l] = act(np.dot(q, Wk[h, r] @ keys[l]) / np.sqrt(d_head))
                if normalize:
                    total = weights.sum()
                    if total != 0:
                        weights = weights / total
                for l in range(n_kv):
                    out[k, h * d_head : (h + 1) * d_head] += weights[l] * (Wv[h, r] @ keys[l])
    return out


def oracle_tpa(tokens: np.ndarray, weights: Dict[str, np.ndarray], heads: int, head_dim: int) -> np.ndarray:
    """
    Tensor-product attention with factorized Q, K, V

    Head i of Q at token k is (1/R) sum_r (A_r x_k)_i (B_r x_k), then causal
    softmax attention per head with scale 1/sqrt(head_dim).
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    n = tokens.shape[0]
    proj = {}
    for s in "qkv":
        A = np.asarray(weights[f"tpa_{s}_a"], dtype=np.float64)
        B = np.asarray(weights[f"tpa_{s}_b"], dtype=np.float64)
        rank = A.shape[1]
        values = np.zeros((n, heads, head_dim))
        for k in range(n):
            for h in range(heads):
                for r in range(rank):
                    values[k, h] += (A[h, r] @ tokens[k]) * (B[r] @ tokens[k])
        proj[s] = values / rank
    out = np.zeros((n, heads * head_dim))
    for h in range(heads):
        for k in range(n):
            scores = np.array([np.exp(np.dot(proj["q"][k, h], proj["k"][l, h]) / np.sqrt(head_dim)) for l in range(k + 1)])
            scores = scores / scores.sum()
            for l in range(k + 1):
                out[k, h * head_dim : (h + 1) * head_dim] += scores[l] * proj["v"][l, h]
    return out


# State-space recurrences
# ---


def oracle_ssm(
    inputs: np.ndarray,
    Lambda: np.ndarray,
    B: np.ndarray,
    C: np.ndarray,
    dt: float,
    discretization: str = "euler",
    h0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Diagonal SSM, one channel at a time

    euler: h <- h + dt (lambda h + B x); zoh: h <- exp(dt lambda) h + dt B x;
    y_a = sum_i C_ai h_ai after each update.

    Returns:
        (states (T, d, N), outputs (T, d))
    """
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1, np.shape(Lambda)[0])
    d, N = np.shape(Lambda)
    h = np.zeros((d, N)) if h0 is None else np.array(h0, dtype=np.float64)
    states, outputs = np.zeros((len(inputs), d, N)), np.zeros((len(inputs), d))
    for t, x in enumerate(inputs):
        for a in range(d):
            for i in range(N):
                if discretization == "zoh":
                    h[a, i] = np.exp(dt * Lambda[a, i]) * h[a, i] + dt * B[a, i] * x[a]
                else:
                    h[a, i] = h[a, i] + dt * (Lambda[a, i] * h[a, i] + B[a, i] * x[a])
            outputs[t, a] = sum(C[a, i] * h[a, i] for i in range(N))
        states[t] = h
    return states, outputs


def oracle_selective_injection(x: np.ndarray, WB: np.ndarray, Wg: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Delta_a (W^B x)_i x_a with Delta = sigmoid(W^g x + b), shape (d, N)"""
    x = np.asarray(x, dtype=np.float64)
    d, N = x.size, np.shape(WB)[0]
    out = np.zeros((d, N))
    for a in range(d):
        delta = _sigmoid(sum(Wg[a, e] * x[e] for e in range(d)) + b[a])
        for i in range(N):
            out[a, i] = delta * sum(WB[i, beta] * x[beta] for beta in range(d)) * x[a]
    return out


def oracle_selective_scan(
    inputs: np.ndarray,
    Lambda: np.ndarray,
    WB: np.ndarray,
    WC: np.ndarray,
    dt: float = 0.05,
    discretization: str = "selective-zoh",
    Wg: Optional[np.ndarray] = None,
    b: Optional[np.ndarray] = None,
    h0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mamba recurrence with input-dependent B(x) = W^B x and C(x) = W^C x

    euler: h <- h + dt (lambda h + B(x) x)
    selective-euler: h <- h + Delta lambda h + Delta B(x) x
    selective-zoh: h <- exp(Delta lambda) h + Delta B(x) x
    with Delta = sigmoid(W^g x + b); y_a = sum_i C(x)_i h_ai.
    """
    d, N = np.shape(Lambda)
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1, d)
    h = np.zeros((d, N)) if h0 is None else np.array(h0, dtype=np.float64)
    states, outputs = np.zeros((len(inputs), d, N)), np.zeros((len(inputs), d))
    for t, x in enumerate(inputs):
        Bx = [sum(WB[i, beta] * x[beta] for beta in range(d)) for i in range(N)]
        Cx = [sum(WC[i, g] * x[g] for g in range(d)) for i in range(N)]
        for a in range(d):
            if discretization == "euler":
                for i in range(N):
                    h[a, i] = h[a, i] + dt * (Lambda[a, i] * h[a, i] + Bx[i] * x[a])
                continue
            delta = _sigmoid(sum(Wg[a, e] * x[e] for e in range(d)) + b[a])
            for i in range(N):
                if discretization == "selective-zoh":
                    h[a, i] = np.exp(delta * Lambda[a, i]) * h[a, i] + delta * Bx[i] * x[a]
                else:
                    h[a, i] = h[a, i] + delta * Lambda[a, i] * h[a, i] + delta * Bx[i] * x[a]
        for a in range(d):
            outputs[t, a] = sum(Cx[i] * h[a, i] for i in range(N))
        states[t] = h
    return states, outputs


# Point-cloud layers
# ---


def _radial(weights: np.ndarray, distance: float, cutoff: float) -> float:
    n_basis = len(weights)
    width = cutoff / n_basis
    total = 0.0
    for j in range(n_basis):
        centre = cutoff * j / (n_basis - 1) if n_basis > 1 else 0.0
        total += weights[j] * np.exp(-(((distance - centre) / width) ** 2))
    return total


def _lm_pairs(l_max: int):
    return [(l, m) for l in range(l_max + 1) for m in range(-l, l + 1)]


def _tfn_message(
    target: np.ndarray,
    source: np.ndarray,
    feature: np.ndarray,
    radial: np.ndarray,
    l_max: int,
    cutoff: float,
) -> np.ndarray:
    """sum C(l1 m1, l2 m2 | l m) R^l1(|r|) Y^l1_m1(r) s_(l2 m2) with r = target - source"""
    vector = np.asarray(target, dtype=np.float64) - np.asarray(source, dtype=np.float64)
    distance = np.sqrt(np.sum(vector**2))
    direction = vector / distance
    basis = _lm_pairs(l_max)
    out = np.zeros(len(basis), dtype=np.complex128)
    for o, (l, m) in enumerate(basis):
        for l1, m1 in basis:
            kernel = _radial(radial[l1], distance, cutoff) * sph_harm(l1, m1, direction)
            for s, (l2, m2) in enumerate(basis):
                coupling = cg(l1, m1, l2, m2, l, m)
                if coupling != 0.0:
                    out[o] += coupling * kernel * feature[s]
    return out


def oracle_tfn(
    features: np.ndarray,
    positions: np.ndarray,
    radial: np.ndarray,
    l_max: int,
    cutoff: float = 2.0,
) -> np.ndarray:
    """out_a = sum_(b != a) TFN message from b to a; couplings above l_max are dropped"""
    features = np.asarray(features)
    n_points = features.shape[0]
    out = np.zeros(features.shape, dtype=np.complex128)
    for a in range(n_points):
        for b in range(n_points):
            if a != b:
                out[a] += _tfn_message(positions[a], positions[b], features[b], radial, l_max, cutoff)
    return out


def oracle_harmonic(
    features: np.ndarray,
    positions: np.ndarray,
    radial: np.ndarray,
    n_max: int,
    cutoff: float = 2.0,
    anisotropy: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """out_a[n + m] = sum_(b != a) R_n(|r|) e^(i n phi(r)) s_b[m], r = r_a - r_b - c, |n + m| <= n_max"""
    features = np.asarray(features)
    offset = np.zeros(2) if anisotropy is None else np.asarray(anisotropy, dtype=np.float64)
    n_points = features.shape[0]
    out = np.zeros(features.shape, dtype=np.complex128)
    for a in range(n_points):
        for b in range(n_points):
            if a == b:
                continue
            vector = positions[a] - positions[b] - offset
            distance = np.hypot(vector[0], vector[1])
            angle = np.arctan2(vector[1], vector[0])
            for n in range(-n_max, n_max + 1):
                kernel = _radial(radial[n + n_max], distance, cutoff) * np.exp(1j * n * angle)
                for m in range(-n_max, n_max + 1):
                    if abs(n + m) <= n_max:
                        out[a, n + m + n_max] += kernel * features[b, m + n_max]
    return out


def oracle_se3_attention(
    features: np.ndarray,
    positions: np.ndarray,
    neighbourhoods: Dict[int, Sequence[int]],
    radial_key: np.ndarray,
    radial_value: np.ndarray,
    query_weights: np.ndarray,
    l_max: int,
    cutoff: float = 2.0,
    anisotropy: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """
    Attention over each neighbourhood with edge keys and values

    q_a = W^Q_l s_a per degree; k_ab and v_ab are TFN messages from b to a;
    score_ab = sum C(l m, l' m' | 0 0) q_a(l m) k_ab(l' m'); softmax over N(a).
    An empty neighbourhood gives zero. An ``anisotropy`` offset c shifts every
    edge vector to r - c.
    """
    features = np.asarray(features)
    offset = np.zeros(3) if anisotropy is None else np.asarray(anisotropy, dtype=np.float64)
    basis = _lm_pairs(l_max)
    n_points = features.shape[0]
    out = np.zeros(features.shape, dtype=np.complex128)
    for a in range(n_points):
        neighbours = [b for b in neighbourhoods.get(a, ()) if b != a]
        if not neighbours:
            continue
        query = np.array([query_weights[l] * features[a, o] for o, (l, _) in enumerate(basis)])
        scores, values = [], []
        for b in neighbours:
            key = _tfn_message(positions[a] - offset, positions[b], features[b], radial_key, l_max, cutoff)
            score = 0.0
            for o1, (l1, m1) in enumerate(basis):
                for o2, (l2, m2) in enumerate(basis):
                    coupling = cg(l1, m1, l2, m2, 0, 0)
                    if coupling != 0.0:
                        score += coupling * query[o1] * key[o2]
            scores.append(np.exp(score))
            values.append(_tfn_message(positions[a] - offset, positions[b], features[b], radial_value, l_max, cutoff))
        total = sum(scores)
        for weight, value in zip(scores, values):
            out[a] += weight / total * value
    return out


# Brute-force multiplication
# ---


def oracle_multiply_bruteforce(x: np.ndarray, y: np.ndarray, constants: Sequence[np.ndarray]) -> np.ndarray:
    """
    Product over every multi-index pair

    out[k1..kp] = sum_(i, j) x[i] y[j] prod_f lambda_f[i_f, j_f, k_f], with one
    dense (d, d, d) structure-constant array per factor.

    Raises:
        BudgetExceededError: If the space holds more than 10^5 coefficients
    """
    x, y = np.asarray(x), np.asarray(y)
    shape = tuple(np.shape(c)[0] for c in constants)
    if x.shape != shape or y.shape != shape:
        raise ShapeMismatchError(f"Operands {x.shape}, {y.shape} do not match factor dims {shape}")
    size = int(np.prod(shape))
    if size > BRUTEFORCE_LIMIT:
        raise BudgetExceededError(f"Brute-force product limited to {BRUTEFORCE_LIMIT} coefficients, got {size}")
    out = np.zeros(shape, dtype=np.result_type(x, y, *constants))
    for i in np.ndindex(*shape):
        if x[i] == 0:
            continue
        for j in np.ndindex(*shape):
            if y[j] == 0:
                continue
            weight = x[i] * y[j]
            for k in np.ndindex(*shape):
                coef = weight
                for f, lam in enumerate(constants):
                    coef = coef * lam[i[f], j[f], k[f]]
                    if coef == 0:
                        break
                out[k] += coef
    return out
