import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from piengine import tape as ops
from piengine.autodiff import (
    SGD,
    ParamStore,
    check_gradients,
    grad,
    relative_error,
    symmetry_regularizer,
    train,
    value_and_grad,
)
from piengine.builders import build_gating
from piengine.errors import DivergenceError, MissingBlockError, ShapeMismatchError


def _quadratic(p):
    return ops.total(ops.mul(ops.sub(p["w"], 1.0), ops.sub(p["w"], 1.0)))


def test_value_and_grad_quadratic():
    loss, grads = value_and_grad(_quadratic, {"w": np.array([0.0, 3.0])})
    assert loss == pytest.approx(5.0)
    assert_allclose(grads["w"], [-2.0, 4.0])


def test_missing_block():
    with pytest.raises(MissingBlockError):
        value_and_grad(_quadratic, {"w": np.zeros(2)}, blocks=["v"])
    with pytest.raises(MissingBlockError):
        ParamStore({"w": np.zeros(2)})["v"]


def test_grad_matches_finite_differences_on_gating(rng):
    expr = build_gating(3, rng=rng)
    x, y = rng.normal(size=3), rng.normal(size=3)
    bindings = {"X": expr.encoders["X"](x), "Y": expr.encoders["Y"](y)}
    analytic = grad(expr, bindings=bindings)

    def objective(p):
        return ops.abs2_sum(expr.evaluate(bindings, p).flat)

    check = check_gradients(objective, expr.parameters, n_samples=12, rng=rng)
    assert check.passed(1e-5), check.summary()
    for sample in check.samples:
        assert analytic[sample["block"]].ravel()[sample["index"]] == pytest.approx(sample["analytic"])


def test_relative_error_floor():
    assert relative_error(0.0, 1e-6) == pytest.approx(1e-3)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


def test_symmetry_regularizer_vanishes_on_shift_invariant_block():
    k, i, n = np.meshgrid(np.arange(2), np.arange(4), np.arange(4), indexing="ij")
    invariant = np.sin(k + 0.7 * (i - n))
    assert symmetry_regularizer(invariant) == pytest.approx(0.0, abs=1e-24)


def test_symmetry_regularizer_positive_and_differentiable(rng):
    block = rng.normal(size=(2, 3, 3))
    assert float(symmetry_regularizer(block)) > 0.0
    check = check_gradients(lambda p: symmetry_regularizer(p["lam"], (2, 3, 3)), {"lam": block.ravel()}, rng=rng)
    assert check.max_rel_error <= 1e-6


def test_symmetry_regularizer_shape_checks():
    with pytest.raises(ShapeMismatchError):
        symmetry_regularizer(np.zeros((2, 3, 4)))
    with pytest.raises(ShapeMismatchError):
        symmetry_regularizer(np.zeros(10), (2, 3, 3))


def test_sgd_momentum():
    opt = SGD(lr=0.1, momentum=0.5)
    values = {"w": np.array([1.0])}
    opt.step(values, {"w": np.array([1.0])})
    opt.step(values, {"w": np.array([1.0])})
    # velocities 1.0 then 1.5
    assert_allclose(values["w"], [1.0 - 0.1 - 0.15])


def test_train_is_deterministic_and_decreasing():
    traces = []
    for _ in range(2):
        store = ParamStore({"w": np.array([4.0, -2.0])}, seed=0)
        traces.append(train(_quadratic, store, steps=20, optimizer=SGD(lr=0.1)))
    assert traces[0].losses == traces[1].losses
    assert traces[0].losses[-1] < traces[0].losses[0]
    assert len(traces[0]) == 20


def test_train_raises_on_divergence():
    store = ParamStore({"w": np.array([1.0])})
    with pytest.raises(DivergenceError) as info:
        train(lambda p: ops.total(ops.mul(p["w"], np.inf)), store, steps=3)
    assert info.value.step == 0


def test_param_store_checkpoint(tmp_path):
    store = ParamStore({"a": np.array([0.1, -2.5]), "b": np.array([1.0 + 2.0j])}, seed=5)
    path = tmp_path / "params.txt"
    store.save(path)
    loaded = ParamStore.load(path)
    assert loaded.seed == 5
    assert loaded.names() == ["a", "b"]
    assert_allclose(loaded["a"], store["a"])
    assert_allclose(loaded["b"], store["b"])


def test_set_grads_checks_shape():
    store = ParamStore({"w": np.zeros(3)})
    with pytest.raises(ShapeMismatchError):
        store.set_grads({"w": np.zeros(2)})


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=3), st.integers(min_value=1, max_value=5), st.data())
def test_symmetry_regularizer_single_violation(n_offsets, P, data):
    k = data.draw(st.integers(min_value=0, max_value=n_offsets - 1))
    x = data.draw(st.integers(min_value=0, max_value=P - 1))
    y = data.draw(st.integers(min_value=0, max_value=P - 1))
    eps = 1e-3
    block = np.zeros((n_offsets, P, P))
    block[k, x, y] = eps
    pairs = 0
    for i in range(P):
        for n in range(P):
            for a in range(-(P - 1), P):
                if a == 0 or not (0 <= i + a < P and 0 <= n - a < P):
                    continue
                if (i + a, n) == (x, y) or (i, n - a) == (x, y):
                    pairs += 1
    assert float(symmetry_regularizer(block)) == pytest.approx(pairs * eps**2, rel=1e-12, abs=1e-30)


def test_train_with_no_steps_leaves_the_store_alone():
    store = ParamStore({"w": np.array([0.0, 3.0])})
    trace = train(_quadratic, store, steps=0)
    assert len(trace) == 0
    assert trace.final_loss is None
    assert trace.summary() == "empty trace"
    assert_allclose(store["w"], [0.0, 3.0])


def test_sgd_clips_the_joint_gradient_norm():
    values = {"a": np.zeros(1), "b": np.zeros(1)}
    SGD(lr=1.0, clip=1.0).step(values, {"a": np.array([3.0]), "b": np.array([4.0])})
    assert_allclose(values["a"], [-0.6])
    assert_allclose(values["b"], [-0.8])
    small = {"a": np.zeros(1)}
    SGD(lr=1.0, clip=1.0).step(small, {"a": np.array([0.5])})
    assert_allclose(small["a"], [-0.5])
