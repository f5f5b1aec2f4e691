import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from piengine.algebra import make_b1
from piengine.builders import build_conv2d, build_harmonic, build_tfn
from piengine.errors import IndexOutOfRangeError, LiftInapplicableError, PointSetMismatchError
from piengine.representations import (
    GroupElement,
    cg,
    cg_orthogonality_defect,
    check_equivariance,
    check_product_compat,
    lift,
    make_so2_algebra,
    make_so3_algebra,
    random_real_field,
    random_so2,
    random_so3,
    random_translation,
    sph_harm,
    sph_harm_all,
    wigner_d,
)
from piengine.tensor import TensorElement, tensor_space

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def test_clebsch_gordan_values():
    assert cg(0, 0, 2, 1, 2, 1) == pytest.approx(1.0)
    assert cg(1, 0, 1, 0, 0, 0) == pytest.approx(-1 / np.sqrt(3))
    assert cg(1, 1, 1, -1, 0, 0) == pytest.approx(1 / np.sqrt(3))
    assert cg(1, 1, 1, 1, 2, 2) == pytest.approx(1.0)
    assert cg(1, 1, 1, 0, 1, 0) == 0.0
    assert cg(1, 0, 1, 0, 3, 0) == 0.0


@pytest.mark.parametrize("l1, l2", [(1, 1), (2, 1), (2, 2), (3, 2)])
def test_clebsch_gordan_orthogonality(l1, l2):
    assert cg_orthogonality_defect(l1, l2) < 1e-12


def test_clebsch_gordan_rejects_bad_indices():
    with pytest.raises(IndexOutOfRangeError):
        cg(1, 2, 1, 0, 1, 2)
    with pytest.raises(IndexOutOfRangeError):
        cg(-1, 0, 1, 0, 1, 0)


@settings(max_examples=10, deadline=None)
@given(seeds, st.integers(min_value=0, max_value=3))
def test_wigner_d_is_a_unitary_representation(seed, l):
    rng = np.random.default_rng(seed)
    g, h = random_so3(rng), random_so3(rng)
    D = wigner_d(l, g)
    assert_allclose(D @ D.conj().T, np.eye(2 * l + 1), atol=1e-10)
    assert_allclose(wigner_d(l, g * h), D @ wigner_d(l, h), atol=1e-9)
    assert_allclose(wigner_d(l, g.inverse()), D.conj().T, atol=1e-9)


def test_wigner_d_identity_and_errors():
    assert_allclose(wigner_d(2, GroupElement.identity("so3")), np.eye(5), atol=1e-12)
    with pytest.raises(IndexOutOfRangeError):
        wigner_d(-1, GroupElement.identity("so3"))
    with pytest.raises(LiftInapplicableError):
        wigner_d(1, GroupElement.so2(0.3))


def test_spherical_harmonic_values():
    z = np.array([0.0, 0.0, 1.0])
    assert sph_harm(0, 0, z) == pytest.approx(1 / np.sqrt(4 * np.pi))
    assert sph_harm(1, 0, z) == pytest.approx(np.sqrt(3 / (4 * np.pi)))
    assert sph_harm(1, 1, z) == pytest.approx(0.0)
    x = np.array([1.0, 0.0, 0.0])
    assert sph_harm(1, 1, x) == pytest.approx(-np.sqrt(3 / (8 * np.pi)))
    assert sph_harm(1, -1, x) == pytest.approx(np.sqrt(3 / (8 * np.pi)))
    with pytest.raises(ValueError):
        sph_harm(1, 0, np.array([0.0, 0.0, 2.0]))


def test_real_field_coefficients_give_real_functions(rng):
    coeffs = random_real_field(rng, 4, 2)
    directions = rng.normal(size=(6, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    values = sph_harm_all(2, directions) @ coeffs.T
    assert np.max(np.abs(values.imag)) < 1e-12


def test_group_elements():
    t = GroupElement.translation(1, 2) * GroupElement.translation(3, -1)
    assert t.params == (4, 1)
    assert GroupElement.so2(0.5).inverse().params == (-0.5,)
    with pytest.raises(ValueError):
        GroupElement("affine", (1.0,))
    with pytest.raises(ValueError):
        GroupElement("translation", (0.5, 1))
    with pytest.raises(ValueError):
        GroupElement.so2(0.1) * GroupElement.translation(0, 0)


def test_translation_lift_rolls_the_grid(rng):
    expr = build_conv2d(3, 4, 3, 3, boundary="cyclic", rng=rng)
    image = rng.normal(size=(3, 4))
    x = expr.encoders["X"](image)
    moved = lift(GroupElement.translation(1, 0), expr.space)(x)
    assert_allclose(moved.values, np.roll(image, 1, axis=0))
    clipped = lift(GroupElement.translation(1, 0), expr.space, wrap=False)(x)
    assert_allclose(clipped.values[0], 0.0)
    assert_allclose(clipped.values[1:], image[:2])


def test_lift_errors(rng):
    b1_space = tensor_space([make_b1(3)])
    with pytest.raises(LiftInapplicableError):
        lift(GroupElement.translation(1, 1), b1_space)
    with pytest.raises(LiftInapplicableError):
        lift(GroupElement.identity("so3"), b1_space)
    so3_space = tensor_space([make_b1(3), make_so3_algebra(1)])
    with pytest.raises(LiftInapplicableError):
        lift(GroupElement.identity("so3"), so3_space, convention="set")
    with pytest.raises(LiftInapplicableError):
        lift(GroupElement.identity("so3"), so3_space)(TensorElement(so3_space))
    positions = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(PointSetMismatchError):
        lift(GroupElement.so3(0.3, 0.0, 0.0), so3_space, positions=positions, convention="set")


def test_set_convention_permutes_samples():
    space = tensor_space([make_b1(4), make_so3_algebra(0)])
    positions = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    coeff = np.zeros(space.shape)
    coeff[1:, 0] = [1.0, 2.0, 3.0, 4.0]
    quarter = lift(GroupElement.so3(np.pi / 2, 0.0, 0.0), space, positions=positions, convention="set")
    moved = quarter(TensorElement(space, coeff))
    assert_allclose(moved.values[1:, 0], [4.0, 1.0, 2.0, 3.0], atol=1e-12)


def test_cyclic_symmetric_conv_is_translation_equivariant(rng):
    expr = build_conv2d(5, 4, 3, 3, constraint="symmetric", boundary="cyclic", rng=rng)
    report = check_equivariance(
        lambda x: expr.evaluate({"X": x}),
        lambda r: random_translation(r, 5, 4),
        lambda r: expr.encoders["X"](r.normal(size=(5, 4))),
        n_trials=4,
        tol=1e-10,
        rng=rng,
    )
    assert report.passed, report.summary()
    assert len(report.defects) == 4


def test_position_dependent_map_is_not_equivariant(rng):
    expr = build_conv2d(5, 4, 3, 3, constraint="symmetric", boundary="cyclic", rng=rng)
    weights = rng.uniform(0.5, 2.0, size=expr.space.shape)
    report = check_equivariance(
        lambda x: TensorElement(x.space, x.values * weights),
        lambda r: GroupElement.translation(1, 2),
        lambda r: expr.encoders["X"](r.normal(size=(5, 4))),
        n_trials=3,
        tol=1e-10,
        rng=rng,
    )
    assert not report.passed


def test_harmonic_layer_is_rotation_equivariant(rng):
    expr = build_harmonic(5, 2, rng=rng)

    def sample(r):
        features = r.normal(size=(5, 5)) + 1j * r.normal(size=(5, 5))
        return expr.encoders["X"]((features, r.normal(size=(5, 2))))

    report = check_equivariance(lambda x: expr.evaluate({"X": x}), random_so2, sample, 3, 1e-9, rng=rng)
    assert report.passed, report.summary()


def test_tfn_is_rotation_equivariant(rng):
    expr = build_tfn(4, 1, rng=rng)
    report = check_equivariance(
        lambda x: expr.evaluate({"X": x}),
        random_so3,
        lambda r: expr.encoders["X"]((random_real_field(r, 4, 1), r.normal(size=(4, 3)))),
        3,
        1e-9,
        rng=rng,
    )
    assert report.passed, report.summary()


@pytest.mark.parametrize("l_max", [1, 2])
def test_so3_product_compatibility(rng, l_max):
    report = check_product_compat(make_so3_algebra(l_max), 40, 1e-10, rng=rng)
    assert report.passed, report.summary()
    assert len(report.defects) + report.skipped == 40


def test_so2_product_compatibility(rng):
    report = check_product_compat(make_so2_algebra(3), 40, 1e-12, rng=rng)
    assert report.passed, report.summary()
    assert report.skipped > 0


def test_product_compatibility_needs_a_representation(rng):
    with pytest.raises(LiftInapplicableError):
        check_product_compat(make_b1(3), 5, 1e-10, rng=rng)
