"""
Verification suites

A suite is a list of cases. Each case computes one scalar (a max abs error,
an equivariance defect or an order mismatch) and compares it with its
threshold; negative controls must land at or above theirs. SuiteRunner
executes the cases concurrently, records failures instead of aborting and
assembles a report whose case order does not depend on scheduling.
"""

import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from functools import partial, reduce
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from lightrag.utils import logger
from tqdm import tqdm

from . import tape as ops
from .algebra import AxiomFlags, check_axioms, make_b1, make_b2, make_generic
from .autodiff import check_gradients, symmetry_regularizer
from .builders import (
    attention_weights,
    build_attention,
    build_conv2d,
    build_gating,
    build_harmonic,
    build_se3_attention,
    build_tfn,
    build_tpa,
    tpa_weights,
)
from .config import RunConfig
from .dynamics import build_mamba, build_ssm, run_dynamics, step_dynamics
from .errors import AxiomViolationError, ConfigError
from .interactions import InteractionExpr, Mult, Slot, occurrences, replace_slot
from .oracles import (
    ORACLE_ACTIVATIONS,
    oracle_attention,
    oracle_gating,
    oracle_harmonic,
    oracle_multiply_bruteforce,
    oracle_se3_attention,
    oracle_selective_injection,
    oracle_selective_scan,
    oracle_ssm,
    oracle_tfn,
    oracle_tpa,
    oracle_xcorr2d,
    oracle_xcorr2d_scatter,
)
from .representations import (
    GroupElement,
    cg_orthogonality_defect,
    check_equivariance,
    check_product_compat,
    make_so2_algebra,
    make_so3_algebra,
    random_real_field,
    random_so2,
    random_so3,
    random_translation,
    wigner_d,
)
from .tensor import TensorElement, multiply, tensor_space
from .toys import replace_role

SCHEMA_VERSION = "1.0"


@dataclass
class Case:
    """
    One verification case

    Attributes:
        name: Case name reported in the suite report
        seed: Seed of the random draws
        tol: Threshold the measured value is compared with
        run: Computes the measured value
        expect: 'below' (value <= tol passes) or 'above' for negative controls
    """

    name: str
    seed: int
    tol: float
    run: Callable[[], float]
    expect: str = "below"


@dataclass
class CaseResult:
    """Outcome of one case"""

    name: str
    seed: int
    max_abs_err: Optional[float]
    tol: float
    passed: bool
    wall_ms: float
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        entry = {
            "name": self.name,
            "seed": self.seed,
            "max_abs_err": self.max_abs_err,
            "tol": self.tol,
            "pass": self.passed,
            "wall_ms": round(self.wall_ms, 3),
        }
        if self.error is not None:
            entry["error"] = self.error
        return entry


@dataclass
class SuiteReport:
    """Result of running one suite"""

    suite: str
    cases: List[CaseResult] = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.cases)

    @property
    def failed(self) -> int:
        return sum(not case.passed for case in self.cases)

    @property
    def passed(self) -> bool:
        return self.total > 0 and self.failed == 0

    def summary(self) -> str:
        lines = [
            f"Suite '{self.suite}':",
            f"  Total cases: {self.total}",
            f"  Passed: {self.total - self.failed}",
            f"  Failed: {self.failed}",
        ]
        failures = [case for case in self.cases if not case.passed]
        if failures:
            lines.append("  Failed cases:")
            for case in failures:
                detail = case.error or f"value {case.max_abs_err!r} vs tol {case.tol:.1e}"
                lines.append(f"    - {case.name}: {detail}")
        return "\n".join(lines)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "suite": self.suite,
            "cases": [case.to_dict() for case in self.cases],
            "summary": {"total": self.total, "passed": self.total - self.failed, "failed": self.failed},
        }


class SuiteRunner:
    """Runs the cases of a suite with a bounded worker pool"""

    def __init__(self, jobs: int = 1, show_progress: bool = True):
        if jobs < 1:
            raise ConfigError("jobs must be at least 1", key="jobs")
        self.jobs = jobs
        self.show_progress = show_progress

    @staticmethod
    def run_case(case: Case) -> CaseResult:
        start = time.perf_counter()
        value: Optional[float] = None
        error = None
        try:
            value = float(case.run())
        except Exception as e:
            error = f"{type(e).__name__}: {e}"
        wall_ms = (time.perf_counter() - start) * 1000.0
        if value is None or not np.isfinite(value):
            passed = False
            error = error or f"non-finite value {value}"
            value = None
        elif case.expect == "above":
            passed = value >= case.tol
        else:
            passed = value <= case.tol
        return CaseResult(case.name, case.seed, value, case.tol, passed, wall_ms, error)

    def run(self, suite: str, cases: List[Case]) -> SuiteReport:
        """
        Run every case and collect the results in case order

        Args:
            suite: Suite name for the report
            cases: Cases to run

        Returns:
            SuiteReport: One result per case
        """
        logger.info(f"Running suite '{suite}': {len(cases)} cases, {self.jobs} workers")
        results: List[Optional[CaseResult]] = [None] * len(cases)
        with ThreadPoolExecutor(max_workers=self.jobs) as executor:
            futures = {executor.submit(self.run_case, case): i for i, case in enumerate(cases)}
            with tqdm(total=len(cases), desc=f"verify {suite}", unit="case", disable=not self.show_progress) as pbar:
                for future in as_completed(futures):
                    index = futures[future]
                    result = future.result()
                    results[index] = result
                    if not result.passed:
                        logger.error(f"Case {result.name} failed: {result.error or result.max_abs_err}")
                    pbar.update(1)
        report = SuiteReport(suite, [r for r in results if r is not None])
        logger.info(report.summary())
        return report


# Helpers
# ---


def _max_err(a: Any, b: Any) -> float:
    difference = np.abs(np.asarray(a) - np.asarray(b))
    return float(np.max(difference)) if difference.size else 0.0


def _seeds(cfg: RunConfig, count: Optional[int] = None) -> List[int]:
    n = int(cfg.get("run", "cases")) if count is None else count
    return [cfg.seed + i for i in range(n)]


def _sum(terms: List[Any]) -> Any:
    return reduce(ops.add, terms)


# Oracle self-checks
# ---


def _oracle_loop_orderings(seed: int) -> float:
    # integer data keeps both loop orders exact
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(20):
        X = rng.integers(-5, 6, size=(8, 8)).astype(np.float64)
        K = rng.integers(-5, 6, size=(3, 3)).astype(np.float64)
        boundary = "cyclic" if trial % 2 else "zero"
        worst = max(worst, _max_err(oracle_xcorr2d(X, K, boundary), oracle_xcorr2d_scatter(X, K, boundary)))
    return worst


def _oracle_delta(seed: int) -> float:
    K = np.random.default_rng(seed).normal(size=(3, 3))
    X = np.zeros((5, 5))
    X[2, 2] = 1.0
    expected = np.zeros((5, 5))
    expected[1:4, 1:4] = K[::-1, ::-1]
    return _max_err(oracle_xcorr2d(X, K), expected)


def _oracle_single_token(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 4))
    Wq, Wk, Wv = (rng.normal(size=(4, 4)) for _ in range(3))
    return _max_err(oracle_attention(x, Wq, Wk, Wv)[0], Wv @ x[0])


def _oracle_zero_values(seed: int) -> float:
    rng = np.random.default_rng(seed)
    tokens = rng.normal(size=(5, 4))
    Wq, Wk = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    return float(np.max(np.abs(oracle_attention(tokens, Wq, Wk, np.zeros((4, 4))))))


def _oracle_permutation(seed: int) -> float:
    rng = np.random.default_rng(seed)
    tokens = rng.normal(size=(6, 4))
    Wq, Wk, Wv = (rng.normal(scale=0.5, size=(4, 4)) for _ in range(3))
    perm = rng.permutation(6)
    permuted = oracle_attention(tokens[perm], Wq, Wk, Wv, causal=False)
    return _max_err(permuted, oracle_attention(tokens, Wq, Wk, Wv, causal=False)[perm])


def _oracle_ssm_zero_input(seed: int) -> float:
    rng = np.random.default_rng(seed)
    Lambda, B, C = -rng.uniform(0.1, 1.0, size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    states, outputs = oracle_ssm(np.zeros((10, 3)), Lambda, B, C, 0.05, "zoh")
    return max(float(np.max(np.abs(states))), float(np.max(np.abs(outputs))))


def _oracle_cumulative_sum(seed: int) -> float:
    rng = np.random.default_rng(seed)
    inputs = rng.normal(size=(12, 2))
    B = rng.normal(size=(2, 3))
    dt = 0.1
    states, _ = oracle_ssm(inputs, np.zeros((2, 3)), B, np.ones((2, 3)), dt, "euler")
    expected = dt * np.cumsum(inputs, axis=0)[:, :, None] * B[None]
    return _max_err(states, expected)


def _oracle_zoh_limit(seed: int) -> float:
    """|ratio - 4| for the ZOH/Euler gap at dt and dt/2 (second-order agreement)"""
    rng = np.random.default_rng(seed)
    Lambda = -rng.uniform(0.5, 1.0, size=(1, 1))
    ones = np.ones((1, 1))

    def gap(dt: float) -> float:
        zoh, _ = oracle_ssm(np.zeros((10, 1)), Lambda, ones, ones, dt, "zoh", h0=ones)
        euler, _ = oracle_ssm(np.zeros((10, 1)), Lambda, ones, ones, dt, "euler", h0=ones)
        return float(abs(zoh[-1, 0, 0] - euler[-1, 0, 0]))

    return abs(gap(1e-3) / gap(5e-4) - 4.0)


def _oracle_empty_neighbourhood(seed: int) -> float:
    rng = np.random.default_rng(seed)
    features = random_real_field(rng, 3, 1)
    out = oracle_se3_attention(
        features,
        rng.normal(size=(3, 3)),
        {a: () for a in range(3)},
        rng.normal(size=(2, 3)),
        rng.normal(size=(2, 3)),
        rng.normal(size=2),
        l_max=1,
    )
    return float(np.max(np.abs(out)))


def _oracle_scalar_attention(seed: int) -> float:
    """l_max = 0 reduces SE(3)-attention to a softmax-weighted mean of scalars"""
    rng = np.random.default_rng(seed)
    n, cutoff = 4, 2.0
    s = rng.normal(size=n)
    positions = rng.normal(size=(n, 3))
    rk, rv, wq = rng.normal(size=(1, 3)), rng.normal(size=(1, 3)), rng.normal(size=1)
    y00 = 0.5 / np.sqrt(np.pi)
    centres, width = np.linspace(0.0, cutoff, 3), cutoff / 3

    def radial(w: np.ndarray, r: float) -> float:
        return float(w[0] @ np.exp(-(((r - centres) / width) ** 2)))

    expected = np.zeros(n)
    for a in range(n):
        others = [b for b in range(n) if b != a]
        dist = [np.linalg.norm(positions[a] - positions[b]) for b in others]
        scores = np.array([np.exp(wq[0] * s[a] * radial(rk, r) * y00 * s[b]) for b, r in zip(others, dist)])
        values = np.array([radial(rv, r) * y00 * s[b] for b, r in zip(others, dist)])
        expected[a] = scores @ values / scores.sum()
    table = {a: tuple(b for b in range(n) if b != a) for a in range(n)}
    got = oracle_se3_attention(s[:, None], positions, table, rk, rv, wq, l_max=0, cutoff=cutoff)
    return _max_err(got[:, 0], expected)


def _b1_constants(n: int) -> np.ndarray:
    lam = np.zeros((n + 1, n + 1, n + 1))
    lam[0, 0, 0] = 1.0
    for i in range(1, n + 1):
        lam[0, i, i] = lam[i, 0, i] = lam[i, i, 0] = 1.0
    return lam


def _oracle_b1_pair(seed: int) -> float:
    lam = _b1_constants(2)
    e1 = np.array([0.0, 1.0, 0.0])
    e0 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 0.0, 1.0])
    return max(
        _max_err(oracle_multiply_bruteforce(e1, e1, [lam]), e0),
        _max_err(oracle_multiply_bruteforce(e1, e2, [lam]), np.zeros(3)),
    )


def _oracle_zero_operand(seed: int) -> float:
    lam = _b1_constants(3)
    x = np.random.default_rng(seed).normal(size=4)
    return float(np.max(np.abs(oracle_multiply_bruteforce(x, np.zeros(4), [lam]))))


def oracles_self_suite(cfg: RunConfig) -> List[Case]:
    checks = [
        ("xcorr-loop-orderings", _oracle_loop_orderings, cfg.scaled(1e-15)),
        ("xcorr-delta", _oracle_delta, cfg.scaled(1e-15)),
        ("attention-single-token", _oracle_single_token, cfg.tolerance("attention")),
        ("attention-zero-values", _oracle_zero_values, 0.0),
        ("attention-permutation", _oracle_permutation, cfg.tolerance("attention")),
        ("ssm-zero-input", _oracle_ssm_zero_input, 0.0),
        ("ssm-cumulative-sum", _oracle_cumulative_sum, cfg.tolerance("ssm")),
        ("ssm-zoh-euler-limit", _oracle_zoh_limit, cfg.scaled(0.05)),
        ("se3-empty-neighbourhood", _oracle_empty_neighbourhood, 0.0),
        ("se3-scalar-mean", _oracle_scalar_attention, cfg.tolerance("se3")),
        ("bruteforce-b1-pair", _oracle_b1_pair, 0.0),
        ("bruteforce-zero-operand", _oracle_zero_operand, 0.0),
    ]
    seed = cfg.seed
    return [Case(f"oracles-self/{name}", seed, tol, partial(fn, seed)) for name, fn, tol in checks]


# Algebra and tensor products
# ---


def _axioms(make: Callable[[], Any]) -> float:
    check_axioms(make())
    return 0.0


def _b1_nonassociative() -> float:
    """B1 with two positions violates associativity first at (1, 1, 2)"""
    try:
        check_axioms(make_b1(2), AxiomFlags(associative=True))
    except AxiomViolationError as e:
        return 0.0 if e.witness == (1, 1, 2) else 1.0
    return 1.0


def _bruteforce_product(seed: int) -> float:
    rng = np.random.default_rng(seed)
    entries = [(i, j, k, rng.normal()) for i, j, k in np.ndindex(3, 3, 3) if rng.random() < 0.4]
    generic = make_generic(3, entries, name="random3")
    space = tensor_space([make_b1(2), make_b2(2), generic], name="bruteforce")
    x, y = rng.normal(size=space.size), rng.normal(size=space.size)
    x[rng.random(space.size) < 0.5] = 0.0
    product = multiply(TensorElement(space, x), TensorElement(space, y))
    constants = [factor.dense() for factor in space.factors]
    expected = oracle_multiply_bruteforce(x.reshape(space.shape), y.reshape(space.shape), constants)
    return _max_err(product.values, expected)


def algebra_suite(cfg: RunConfig) -> List[Case]:
    seed = cfg.seed
    tol = cfg.tolerance("algebra")
    cases = [
        Case("algebra/axioms-b1", seed, tol, partial(_axioms, lambda: make_b1(4))),
        Case("algebra/axioms-b2", seed, tol, partial(_axioms, lambda: make_b2(4))),
        Case("algebra/axioms-so3", seed, tol, partial(_axioms, lambda: make_so3_algebra(2))),
        Case("algebra/axioms-so2", seed, tol, partial(_axioms, lambda: make_so2_algebra(3))),
        Case("algebra/b1-nonassociative-witness", seed, 0.0, _b1_nonassociative),
    ]
    for s in _seeds(cfg, 10):
        cases.append(Case(f"algebra/bruteforce-product[{s}]", s, cfg.tolerance("tensor"), partial(_bruteforce_product, s)))
    return cases


# Builder equivalences
# ---


def _conv_case(cfg: RunConfig, seed: int, boundary: str) -> float:
    rng = np.random.default_rng(seed)
    H, W = cfg.get("conv", "height"), cfg.get("conv", "width")
    kh, kw = cfg.get("conv", "kernel_height"), cfg.get("conv", "kernel_width")
    X, K = rng.normal(size=(H, W)), rng.normal(size=(kh, kw))
    expr = build_conv2d(H, W, kh, kw, boundary=boundary, kernel=K)
    return _max_err(expr(X=X), oracle_xcorr2d(X, K, boundary))


def conv_suite(cfg: RunConfig) -> List[Case]:
    tol = cfg.tolerance("conv")
    cases = [Case(f"conv/zero[{s}]", s, tol, partial(_conv_case, cfg, s, "zero")) for s in _seeds(cfg)]
    cases += [Case(f"conv/cyclic[{s}]", s, tol, partial(_conv_case, cfg, s, "cyclic")) for s in _seeds(cfg, 3)]
    return cases


def _gating_case(seed: int, F: str) -> float:
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(2, 7))
    X, Y, W = rng.normal(size=dim), rng.normal(size=dim), rng.normal(size=(dim, dim))
    return _max_err(build_gating(dim, W=W, F=F)(X=X, Y=Y), oracle_gating(X, Y, W, F))


def gating_suite(cfg: RunConfig) -> List[Case]:
    activations = sorted(ORACLE_ACTIVATIONS)
    return [
        Case(f"gating/{activations[i % len(activations)]}[{s}]", s, cfg.tolerance("gating"), partial(_gating_case, s, activations[i % len(activations)]))
        for i, s in enumerate(_seeds(cfg))
    ]


def _attention_case(
    cfg: RunConfig,
    seed: int,
    heads: int,
    rank: int = 1,
    F: str = "exp",
    normalize: bool = True,
    causal: bool = True,
    cross: bool = False,
) -> float:
    rng = np.random.default_rng(seed)
    n, d = cfg.get("attention", "n"), cfg.get("attention", "d")
    weights = attention_weights(d, heads, rank, rng)
    tokens = rng.normal(size=(n, d))
    expr = build_attention(n, d, heads, rank, F=F, normalize=normalize, causal=causal, cross=cross, weights=weights)
    if cross:
        keys = rng.normal(size=(n, d))
        got = expr(X=tokens, Y=keys)
        expected = oracle_attention(tokens, weights["Wq"], weights["Wk"], weights["Wv"], F, causal, normalize, keys=keys)
    else:
        got = expr(X=tokens)
        expected = oracle_attention(tokens, weights["Wq"], weights["Wk"], weights["Wv"], F, causal, normalize)
    return _max_err(got, expected)


def _attention_causality(cfg: RunConfig, seed: int) -> float:
    """Changing the last token must leave every earlier output bit-identical"""
    rng = np.random.default_rng(seed)
    n, d = cfg.get("attention", "n"), cfg.get("attention", "d")
    expr = build_attention(n, d, weights=attention_weights(d, 1, 1, rng))
    tokens = rng.normal(size=(n, d))
    perturbed = tokens.copy()
    perturbed[-1] += rng.normal(size=d)
    return _max_err(expr(X=tokens)[:-1], expr(X=perturbed)[:-1])


def attention_suite(cfg: RunConfig) -> List[Case]:
    tol = cfg.tolerance("attention")
    heads = list(cfg.get("attention", "heads"))
    d = cfg.get("attention", "d")
    cases = []
    for i, s in enumerate(_seeds(cfg)):
        h = heads[i % len(heads)]
        cases.append(Case(f"attention/softmax[h={h}][{s}]", s, tol, partial(_attention_case, cfg, s, h)))
    seed = cfg.seed
    if d >= 2:
        cases.append(Case("attention/rank2", seed, tol, partial(_attention_case, cfg, seed, 1, rank=2)))
    cases += [
        Case("attention/cross", seed, tol, partial(_attention_case, cfg, seed, 1, causal=False, cross=True)),
        Case("attention/full", seed, tol, partial(_attention_case, cfg, seed, 1, causal=False)),
        Case("attention/unnormalized-sigmoid", seed, tol, partial(_attention_case, cfg, seed, 1, F="sigmoid", normalize=False)),
        Case("attention/causality", seed, 0.0, partial(_attention_causality, cfg, seed)),
    ]
    return cases


def _ssm_case(cfg: RunConfig, seed: int, discretization: str) -> float:
    rng = np.random.default_rng(seed)
    d, N = cfg.get("ssm", "d"), cfg.get("ssm", "hidden")
    steps, dt = cfg.get("ssm", "steps"), cfg.get("ssm", "dt")
    Lambda = -rng.uniform(0.1, 1.0, size=(d, N))
    B, C = rng.normal(size=(d, N)), rng.normal(size=(d, N))
    inputs = rng.normal(size=(steps, d))
    trajectory = step_dynamics(build_ssm(d, N, discretization, dt, Lambda, B, C), inputs)
    states, outputs = oracle_ssm(inputs, Lambda, B, C, dt, discretization)
    return max(_max_err(trajectory.states, states), _max_err(trajectory.outputs, outputs))


def ssm_suite(cfg: RunConfig) -> List[Case]:
    tol = cfg.tolerance("ssm")
    cases = []
    for i, s in enumerate(_seeds(cfg, 20)):
        scheme = ("euler", "zoh")[i % 2]
        cases.append(Case(f"ssm/{scheme}[{s}]", s, tol, partial(_ssm_case, cfg, s, scheme)))
    return cases


def _mamba_params(rng: np.random.Generator, d: int, N: int) -> Dict[str, np.ndarray]:
    return {
        "Lambda": -rng.uniform(0.1, 1.0, size=(d, N)),
        "WB": rng.normal(scale=1.0 / np.sqrt(d), size=(N, d)),
        "WC": rng.normal(scale=1.0 / np.sqrt(d), size=(N, d)),
        "Wg": rng.normal(scale=1.0 / np.sqrt(d), size=(d, d)),
        "b": rng.normal(size=d),
    }


def _mamba_case(cfg: RunConfig, seed: int, discretization: str) -> float:
    rng = np.random.default_rng(seed)
    d, N = cfg.get("mamba", "d"), cfg.get("mamba", "hidden")
    steps, dt = cfg.get("mamba", "steps"), cfg.get("mamba", "dt")
    p = _mamba_params(rng, d, N)
    inputs = rng.normal(size=(steps, d))
    spec = build_mamba(d, N, discretization, dt, **p)
    trajectory = step_dynamics(spec, inputs)
    states, outputs = oracle_selective_scan(inputs, p["Lambda"], p["WB"], p["WC"], dt, discretization, p["Wg"], p["b"])
    return max(_max_err(trajectory.states, states), _max_err(trajectory.outputs, outputs))


def _mamba_gating_identity(cfg: RunConfig, seed: int) -> float:
    """The gated injection term equals Delta_a (W^B x)_i x_a"""
    rng = np.random.default_rng(seed)
    d, N = cfg.get("mamba", "d"), cfg.get("mamba", "hidden")
    p = _mamba_params(rng, d, N)
    spec = build_mamba(d, N, "selective-euler", cfg.get("mamba", "dt"), **p)
    x = rng.normal(size=d)
    out = spec.meta["gated_injection"].evaluate({"X": spec.encode_input(x)})
    return _max_err(spec.state_values(out), oracle_selective_injection(x, p["WB"], p["Wg"], p["b"]))


def mamba_suite(cfg: RunConfig) -> List[Case]:
    tol = cfg.tolerance("mamba")
    schemes = ("euler", "selective-euler", "selective-zoh")
    cases = []
    for i, s in enumerate(_seeds(cfg, 21)):
        scheme = schemes[i % 3]
        cases.append(Case(f"mamba/{scheme}[{s}]", s, tol, partial(_mamba_case, cfg, s, scheme)))
    for s in _seeds(cfg, 5):
        cases.append(Case(f"mamba/gating-identity[{s}]", s, cfg.scaled(1e-10), partial(_mamba_gating_identity, cfg, s)))
    return cases


def _tpa_case(cfg: RunConfig, seed: int) -> float:
    rng = np.random.default_rng(seed)
    n, heads = cfg.get("tpa", "n"), cfg.get("tpa", "heads")
    head_dim, rank = cfg.get("tpa", "head_dim"), cfg.get("tpa", "rank")
    d = heads * head_dim
    weights = tpa_weights(d, heads, head_dim, (rank, rank, rank), rng)
    tokens = rng.normal(size=(n, d))
    expr = build_tpa(n, d, heads, head_dim, ranks=rank, weights=weights)
    return _max_err(expr(X=tokens), oracle_tpa(tokens, weights, heads, head_dim))


def tpa_suite(cfg: RunConfig) -> List[Case]:
    return [Case(f"tpa[{s}]", s, cfg.tolerance("tpa"), partial(_tpa_case, cfg, s)) for s in _seeds(cfg, 10)]


def _harmonic_case(cfg: RunConfig, seed: int) -> float:
    rng = np.random.default_rng(seed)
    n, n_max = cfg.get("harmonic", "points"), cfg.get("harmonic", "n_max")
    features = rng.normal(size=(n, 2 * n_max + 1)) + 1j * rng.normal(size=(n, 2 * n_max + 1))
    positions = rng.normal(size=(n, 2))
    radial = rng.normal(size=(2 * n_max + 1, 3))
    expr = build_harmonic(n, n_max, radial=radial)
    return _max_err(expr(X=(features, positions)), oracle_harmonic(features, positions, radial, n_max))


def harmonic_suite(cfg: RunConfig) -> List[Case]:
    return [Case(f"harmonic[{s}]", s, cfg.tolerance("so2"), partial(_harmonic_case, cfg, s)) for s in _seeds(cfg, 10)]


def _tfn_case(cfg: RunConfig, seed: int) -> float:
    rng = np.random.default_rng(seed)
    n, l_max, n_basis = cfg.get("tfn", "points"), cfg.get("tfn", "l_max"), cfg.get("tfn", "radial_basis")
    features = random_real_field(rng, n, l_max)
    positions = rng.normal(size=(n, 3))
    radial = rng.normal(size=(l_max + 1, n_basis))
    expr = build_tfn(n, l_max, n_basis=n_basis, radial=radial)
    return _max_err(expr(X=(features, positions)), oracle_tfn(features, positions, radial, l_max))


def tfn_suite(cfg: RunConfig) -> List[Case]:
    return [Case(f"tfn[{s}]", s, cfg.tolerance("tfn"), partial(_tfn_case, cfg, s)) for s in _seeds(cfg, 10)]


def _se3_case(cfg: RunConfig, seed: int, radius: float) -> float:
    rng = np.random.default_rng(seed)
    n, l_max = cfg.get("se3", "points"), cfg.get("se3", "l_max")
    features = random_real_field(rng, n, l_max)
    positions = rng.normal(size=(n, 3))
    rk, rv = rng.normal(size=(l_max + 1, 3)), rng.normal(size=(l_max + 1, 3))
    wq = rng.normal(size=l_max + 1)
    expr = build_se3_attention(n, l_max, positions=positions, radius=radius, radial_key=rk, radial_value=rv, query_weights=wq)
    expected = oracle_se3_attention(features, positions, expr.meta["neighbourhoods"], rk, rv, wq, l_max)
    return _max_err(expr(X=(features, positions)), expected)


def se3_suite(cfg: RunConfig) -> List[Case]:
    radii = (cfg.get("se3", "radius"), 1.0)
    return [
        Case(f"se3[r={radii[i % 2]}][{s}]", s, cfg.tolerance("se3"), partial(_se3_case, cfg, s, radii[i % 2]))
        for i, s in enumerate(_seeds(cfg, 10))
    ]


# Representations
# ---


def _cg_orthogonality(l_max: int) -> float:
    return max(cg_orthogonality_defect(l1, l2) for l1 in range(l_max + 1) for l2 in range(l_max + 1))


def _wigner_unitarity(seed: int, l_max: int, trials: int) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        g = random_so3(rng)
        for l in range(l_max + 1):
            D = wigner_d(l, g)
            worst = max(worst, _max_err(D @ D.conj().T, np.eye(2 * l + 1)))
    return worst


def _wigner_homomorphism(seed: int, l_max: int, trials: int) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        g1, g2 = random_so3(rng), random_so3(rng)
        for l in range(l_max + 1):
            worst = max(worst, _max_err(wigner_d(l, g1 * g2), wigner_d(l, g1) @ wigner_d(l, g2)))
    return worst


def _compat(seed: int, make: Callable[[], Any], tol: float) -> float:
    return check_product_compat(make(), n_trials=50, tol=tol, rng=np.random.default_rng(seed)).max_defect


def representations_suite(cfg: RunConfig) -> List[Case]:
    seed = cfg.seed
    tol = cfg.tolerance("representations")
    return [
        Case("representations/cg-orthogonality", seed, cfg.scaled(1e-12), partial(_cg_orthogonality, 3)),
        Case("representations/wigner-unitarity", seed, cfg.scaled(1e-10), partial(_wigner_unitarity, seed, 3, 50)),
        Case("representations/wigner-homomorphism", seed, cfg.scaled(1e-9), partial(_wigner_homomorphism, seed, 3, 50)),
        Case("representations/compat-so3", seed, tol, partial(_compat, seed, lambda: make_so3_algebra(2), tol)),
        Case("representations/compat-so2", seed, tol, partial(_compat, seed, lambda: make_so2_algebra(3), tol)),
    ]


# Gradients
# ---


def _expr_objective(expr: InteractionExpr, raw: Dict[str, Any]) -> Callable[[Dict[str, Any]], Any]:
    bindings = {slot: expr.encoders[slot](value) for slot, value in raw.items()}
    return lambda p: ops.abs2_sum(expr.evaluate(bindings, p).flat)


def _gradient_fixture(name: str, rng: np.random.Generator):
    """(objective, parameters) of a small instance of one builder"""
    if name == "conv":
        expr = build_conv2d(5, 5, 3, 3, rng=rng)
        return _expr_objective(expr, {"X": rng.normal(size=(5, 5))}), expr.parameters
    if name == "conv-free":
        expr = build_conv2d(4, 4, 3, 3, constraint="free", lambda_noise=0.1, rng=rng)
        return _expr_objective(expr, {"X": rng.normal(size=(4, 4))}), expr.parameters
    if name == "regularizer":
        block = rng.normal(size=(3, 4, 4))
        return (lambda p: symmetry_regularizer(p["lam"], (3, 4, 4))), {"lam": block.ravel()}
    if name == "gating":
        expr = build_gating(4, rng=rng)
        return _expr_objective(expr, {"X": rng.normal(size=4), "Y": rng.normal(size=4)}), expr.parameters
    if name == "attention":
        expr = build_attention(4, 4, heads=2, rng=rng)
        return _expr_objective(expr, {"X": rng.normal(size=(4, 4))}), expr.parameters
    if name == "attention-rank2":
        expr = build_attention(3, 3, rank=2, rng=rng)
        return _expr_objective(expr, {"X": rng.normal(size=(3, 3))}), expr.parameters
    if name == "tpa":
        expr = build_tpa(3, 4, heads=2, head_dim=2, rng=rng)
        return _expr_objective(expr, {"X": rng.normal(size=(3, 4))}), expr.parameters
    if name == "harmonic":
        expr = build_harmonic(4, 1, rng=rng)
        features = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
        return _expr_objective(expr, {"X": (features, rng.normal(size=(4, 2)))}), expr.parameters
    if name == "tfn":
        expr = build_tfn(3, 1, rng=rng)
        return _expr_objective(expr, {"X": (random_real_field(rng, 3, 1), rng.normal(size=(3, 3)))}), expr.parameters
    if name == "se3":
        positions = rng.normal(size=(3, 3))
        expr = build_se3_attention(3, 1, positions=positions, radius=10.0, rng=rng)
        return _expr_objective(expr, {"X": (random_real_field(rng, 3, 1), positions)}), expr.parameters
    if name in ("ssm", "mamba"):
        spec = build_ssm(2, 2, "zoh", rng=rng) if name == "ssm" else build_mamba(2, 2, "selective-zoh", rng=rng)
        inputs = rng.normal(size=(5, 2))

        def objective(p: Dict[str, Any]) -> Any:
            _, outputs = run_dynamics(spec, inputs, p)
            return _sum([ops.abs2_sum(y.flat) for y in outputs])

        return objective, spec.parameters
    raise ValueError(f"No gradient fixture for '{name}'")


GRADIENT_FIXTURES = (
    "conv",
    "conv-free",
    "regularizer",
    "gating",
    "attention",
    "attention-rank2",
    "tpa",
    "harmonic",
    "tfn",
    "se3",
    "ssm",
    "mamba",
)


def _gradient_case(name: str, seed: int) -> float:
    rng = np.random.default_rng(seed)
    objective, params = _gradient_fixture(name, rng)
    return check_gradients(objective, params, n_samples=20, rng=rng).max_rel_error


def gradients_suite(cfg: RunConfig) -> List[Case]:
    seed = cfg.seed
    tol = cfg.tolerance("gradients")
    return [Case(f"gradients/{name}", seed, tol, partial(_gradient_case, name, seed)) for name in GRADIENT_FIXTURES]


# Self-interaction order
# ---


def quadratic_expr() -> InteractionExpr:
    space = tensor_space([make_b2(2)], name="quad")
    return InteractionExpr(Mult(Slot("X"), Slot("X")), space, name="quad")


ORDER_TABLE: Dict[str, tuple] = {
    "conv": (lambda: build_conv2d(4, 4, 3, 3, rng=0), 1),
    "gating": (lambda: build_gating(3, rng=0), 1),
    "quad": (quadratic_expr, 2),
    "ssm": (lambda: build_ssm(2, 2, rng=0), 1),
    "attention": (lambda: build_attention(3, 2, rng=0), 3),
    "mamba-selective-euler": (lambda: build_mamba(2, 2, "selective-euler", rng=0), 3),
    "mamba-selective-zoh": (lambda: build_mamba(2, 2, "selective-zoh", rng=0), 3),
    "se3-attention": (lambda: build_se3_attention(3, 1, positions=np.eye(3), radius=10.0, rng=0), 3),
    "tpa": (lambda: build_tpa(3, 4, heads=2, head_dim=2, rng=0), 6),
}


def _order_mismatch(make: Callable[[], Any], expected: int) -> float:
    return float(abs(make().order("X") - expected))


def _replacement_mismatch(make: Callable[[], Any], expected: int) -> float:
    """Every single X occurrence replaced in turn lowers the order by one"""
    expr = make()
    worst = 0
    for occurrence in occurrences(expr, "X"):
        worst = max(worst, abs(replace_slot(expr, occurrence.id).order("X") - (expected - 1)))
    return float(worst)


def _role_replacement_mismatch(role: str) -> float:
    spec = build_mamba(2, 2, "selective-zoh", rng=0)
    replaced = replace_role(spec, role, np.zeros(spec.space.size))
    return float(abs(replaced.order("X") - 2))


def order_suite(cfg: RunConfig) -> List[Case]:
    seed = cfg.seed
    cases = [Case(f"order/{name}", seed, 0.0, partial(_order_mismatch, make, expected)) for name, (make, expected) in ORDER_TABLE.items()]
    for name in ("attention", "tpa"):
        make, expected = ORDER_TABLE[name]
        cases.append(Case(f"order/replace-each-{name}", seed, 0.0, partial(_replacement_mismatch, make, expected)))
    for role in ("gate", "injection"):
        cases.append(Case(f"order/replace-role-{role}", seed, 0.0, partial(_role_replacement_mismatch, role)))
    return cases


# Equivariance
# ---


def _expr_op(expr: InteractionExpr) -> Callable[[TensorElement], TensorElement]:
    return lambda x: expr.evaluate({"X": x})


def _translation_defect(cfg: RunConfig, seed: int, trials: int, tol: float, constraint: str = "symmetric", identity: bool = False) -> float:
    rng = np.random.default_rng(seed)
    H, W = cfg.get("conv", "height"), cfg.get("conv", "width")
    kh, kw = cfg.get("conv", "kernel_height"), cfg.get("conv", "kernel_width")
    expr = build_conv2d(H, W, kh, kw, constraint=constraint, boundary="cyclic", lambda_noise=0.5, rng=rng)
    sampler = (lambda r: GroupElement.identity("translation")) if identity else (lambda r: random_translation(r, H, W))
    report = check_equivariance(
        _expr_op(expr),
        sampler,
        lambda r: expr.encoders["X"](r.normal(size=(H, W))),
        trials,
        tol,
        rng=rng,
    )
    return report.max_defect


def _so2_defect(cfg: RunConfig, seed: int, trials: int, tol: float, anisotropy: Optional[tuple] = None) -> float:
    rng = np.random.default_rng(seed)
    n, n_max = cfg.get("harmonic", "points"), cfg.get("harmonic", "n_max")
    expr = build_harmonic(n, n_max, anisotropy=anisotropy, rng=rng)
    width = 2 * n_max + 1

    def sample(r: np.random.Generator) -> TensorElement:
        features = r.normal(size=(n, width)) + 1j * r.normal(size=(n, width))
        return expr.encoders["X"]((features, r.normal(size=(n, 2))))

    return check_equivariance(_expr_op(expr), random_so2, sample, trials, tol, rng=rng).max_defect


def _so3_defect(cfg: RunConfig, seed: int, trials: int, tol: float, layer: str, anisotropy: Optional[tuple] = None) -> float:
    rng = np.random.default_rng(seed)
    if layer == "tfn":
        n, l_max = cfg.get("tfn", "points"), cfg.get("tfn", "l_max")
        expr = build_tfn(n, l_max, n_basis=cfg.get("tfn", "radial_basis"), anisotropy=anisotropy, rng=rng)
    else:
        n, l_max = cfg.get("se3", "points"), cfg.get("se3", "l_max")
        positions = rng.normal(size=(n, 3))
        expr = build_se3_attention(
            n, l_max, positions=positions, radius=cfg.get("se3", "radius"), anisotropy=anisotropy, rng=rng
        )

    def sample(r: np.random.Generator) -> TensorElement:
        return expr.encoders["X"]((random_real_field(r, n, l_max), r.normal(size=(n, 3))))

    return check_equivariance(_expr_op(expr), random_so3, sample, trials, tol, rng=rng).max_defect


def equivariance_suite(cfg: RunConfig) -> List[Case]:
    """Symmetry checks per layer plus negative controls that must break them"""
    seed = cfg.seed
    rotations = cfg.get("equivariance", "rotations")
    translations = cfg.get("equivariance", "translations")
    t_tol, so2_tol, so3_tol = cfg.tolerance("translation"), cfg.tolerance("so2"), cfg.tolerance("so3")
    control = cfg.tolerance("negative_control")
    return [
        Case("equivariance/identity", seed, 0.0, partial(_translation_defect, cfg, seed, 3, 0.0, identity=True)),
        Case("equivariance/conv-translation", seed, t_tol, partial(_translation_defect, cfg, seed, translations, t_tol)),
        Case("equivariance/harmonic-so2", seed, so2_tol, partial(_so2_defect, cfg, seed, rotations, so2_tol)),
        Case("equivariance/tfn-so3", seed, so3_tol, partial(_so3_defect, cfg, seed, rotations, so3_tol, "tfn")),
        Case("equivariance/se3-attention-so3", seed, so3_tol, partial(_so3_defect, cfg, seed, rotations, so3_tol, "se3")),
        Case(
            "equivariance/control-conv-free",
            seed,
            control,
            partial(_translation_defect, cfg, seed, translations, control, constraint="free"),
            expect="above",
        ),
        Case(
            "equivariance/control-harmonic-anisotropic",
            seed,
            control,
            partial(_so2_defect, cfg, seed, rotations, control, anisotropy=(0.3, -0.2)),
            expect="above",
        ),
        Case(
            "equivariance/control-tfn-anisotropic",
            seed,
            control,
            partial(_so3_defect, cfg, seed, rotations, control, "tfn", anisotropy=(0.3, -0.2, 0.1)),
            expect="above",
        ),
        Case(
            "equivariance/control-se3-attention-anisotropic",
            seed,
            control,
            partial(_so3_defect, cfg, seed, rotations, control, "se3", anisotropy=(0.3, -0.2, 0.1)),
            expect="above",
        ),
    ]


# Registry
# ---


SUITES: Dict[str, Callable[[RunConfig], List[Case]]] = {
    "oracles-self": oracles_self_suite,
    "algebra": algebra_suite,
    "conv": conv_suite,
    "gating": gating_suite,
    "attention": attention_suite,
    "ssm": ssm_suite,
    "mamba": mamba_suite,
    "tpa": tpa_suite,
    "harmonic": harmonic_suite,
    "tfn": tfn_suite,
    "se3": se3_suite,
    "representations": representations_suite,
    "gradients": gradients_suite,
    "order": order_suite,
    "equivariance": equivariance_suite,
}

# 'all' covers the verification suites; equivariance runs on its own command
ALL_SUITES = tuple(name for name in SUITES if name != "equivariance")


def build_cases(suite: str, cfg: RunConfig) -> List[Case]:
    """
    Cases of a named suite ('all' concatenates every verification suite)

    Raises:
        ConfigError: If the suite is unknown
    """
    if suite == "all":
        return [case for name in ALL_SUITES for case in SUITES[name](cfg)]
    if suite not in SUITES:
        raise ConfigError(f"unknown suite '{suite}', expected 'all' or one of {sorted(SUITES)}", key="suite")
    return SUITES[suite](cfg)


def run_suite(suite: str, cfg: RunConfig, runner: Optional[SuiteRunner] = None) -> SuiteReport:
    runner = runner or SuiteRunner(jobs=cfg.jobs, show_progress=cfg.show_progress)
    return runner.run(suite, build_cases(suite, cfg))
