import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from piengine import tape as ops
from piengine.autodiff import check_gradients
from piengine.dynamics import build_mamba, build_ssm, run_dynamics, step_dynamics
from piengine.errors import InvalidDimensionError, NonFiniteStateError, ShapeMismatchError
from piengine.oracles import oracle_selective_injection, oracle_selective_scan, oracle_ssm

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def _mamba_blocks(rng, d, N):
    return {
        "Lambda": -rng.uniform(0.1, 1.0, size=(d, N)),
        "WB": rng.normal(scale=1.0 / np.sqrt(d), size=(N, d)),
        "WC": rng.normal(scale=1.0 / np.sqrt(d), size=(N, d)),
        "Wg": rng.normal(scale=1.0 / np.sqrt(d), size=(d, d)),
        "b": rng.normal(size=d),
    }


@settings(max_examples=10, deadline=None)
@given(seeds, st.sampled_from(["euler", "zoh"]))
def test_ssm_matches_recurrence(seed, discretization):
    rng = np.random.default_rng(seed)
    d, N, dt = 3, 4, 0.05
    Lambda = -rng.uniform(0.1, 1.0, size=(d, N))
    B, C = rng.normal(size=(d, N)), rng.normal(size=(d, N))
    inputs = rng.normal(size=(20, d))
    trajectory = step_dynamics(build_ssm(d, N, discretization, dt, Lambda, B, C), inputs)
    states, outputs = oracle_ssm(inputs, Lambda, B, C, dt, discretization)
    assert_allclose(trajectory.states, states, atol=1e-9)
    assert_allclose(trajectory.outputs, outputs, atol=1e-9)


def test_ssm_initial_state(rng):
    d, N = 2, 3
    spec = build_ssm(d, N, "zoh", rng=rng)
    h0 = rng.normal(size=(d, N))
    inputs = rng.normal(size=(5, d))
    Lambda, B, C = (spec.parameters[name].reshape(d, N) for name in ("ssm_Lambda", "ssm_B", "ssm_C"))
    states, outputs = oracle_ssm(inputs, Lambda, B, C, spec.dt, "zoh", h0=h0)
    trajectory = step_dynamics(spec, inputs, h0=h0)
    assert_allclose(trajectory.states, states, atol=1e-12)
    assert_allclose(trajectory.outputs, outputs, atol=1e-12)


@settings(max_examples=9, deadline=None)
@given(seeds, st.sampled_from(["euler", "selective-euler", "selective-zoh"]))
def test_mamba_matches_selective_scan(seed, discretization):
    rng = np.random.default_rng(seed)
    d, N, dt = 2, 3, 0.05
    p = _mamba_blocks(rng, d, N)
    inputs = rng.normal(size=(15, d))
    trajectory = step_dynamics(build_mamba(d, N, discretization, dt, **p), inputs)
    states, outputs = oracle_selective_scan(inputs, p["Lambda"], p["WB"], p["WC"], dt, discretization, p["Wg"], p["b"])
    assert_allclose(trajectory.states, states, atol=1e-9)
    assert_allclose(trajectory.outputs, outputs, atol=1e-9)


def test_gated_injection_term(rng):
    p = _mamba_blocks(rng, 3, 2)
    spec = build_mamba(3, 2, "selective-euler", **p)
    x = rng.normal(size=3)
    out = spec.meta["gated_injection"].evaluate({"X": spec.encode_input(x)})
    assert_allclose(spec.state_values(out), oracle_selective_injection(x, p["WB"], p["Wg"], p["b"]), atol=1e-12)


def test_orders_and_roles(rng):
    assert build_ssm(2, 2, rng=rng).order("X") == 1
    assert build_ssm(2, 2, rng=rng).order("H") == 1
    assert build_mamba(2, 2, "euler", rng=rng).order("X") == 2
    assert build_mamba(2, 2, "selective-euler", rng=rng).order("X") == 3
    spec = build_mamba(2, 2, "selective-zoh", rng=rng)
    assert spec.order("X") == 3
    assert {"gate", "injection", "input", "state"} <= set(spec.occurrence_roles())


def test_manifest(rng):
    manifest = build_mamba(2, 3, "selective-zoh", rng=rng).manifest()
    assert manifest["orders"] == {"X": 3, "H": 1}
    assert manifest["discretization"] == "selective-zoh"
    assert manifest["parameters"]["mamba_WB"] == [6]


def test_empty_input_gives_empty_trajectory(rng):
    trajectory = step_dynamics(build_ssm(2, 3, rng=rng), np.zeros((0, 2)))
    assert len(trajectory) == 0
    assert trajectory.states.shape == (0, 2, 3)
    assert trajectory.outputs.shape == (0, 2)


def test_non_finite_state_is_reported(rng):
    spec = build_ssm(2, 2, rng=rng)
    with pytest.raises(NonFiniteStateError) as info:
        step_dynamics(spec, np.array([[1.0, 1.0], [np.inf, 0.0]]))
    assert info.value.step == 1


def test_shape_and_argument_errors(rng):
    spec = build_ssm(2, 2, rng=rng)
    with pytest.raises(ShapeMismatchError):
        step_dynamics(spec, np.ones((4, 3)))
    with pytest.raises(ShapeMismatchError):
        spec.encode_state(np.ones((3, 2)))
    with pytest.raises(ShapeMismatchError):
        build_ssm(2, 2, B=np.ones((2, 3)))
    with pytest.raises(ValueError):
        build_ssm(2, 2, "rk4")
    with pytest.raises(ValueError):
        build_mamba(2, 2, "zoh")
    with pytest.raises(InvalidDimensionError):
        build_mamba(0, 2)


def test_steps_are_deterministic(rng):
    spec = build_mamba(2, 2, rng=rng)
    inputs = rng.normal(size=(6, 2))
    first, second = step_dynamics(spec, inputs), step_dynamics(spec, inputs)
    assert np.array_equal(first.states, second.states)
    assert np.array_equal(first.outputs, second.outputs)


def test_mamba_gradients(rng):
    spec = build_mamba(2, 2, "selective-zoh", rng=rng)
    inputs = rng.normal(size=(4, 2))

    def objective(p):
        _, outputs = run_dynamics(spec, inputs, p)
        total = None
        for y in outputs:
            term = ops.abs2_sum(y.flat)
            total = term if total is None else ops.add(total, term)
        return total

    check = check_gradients(objective, spec.parameters, n_samples=15, rng=rng)
    assert check.max_rel_error <= 1e-5, check.summary()
