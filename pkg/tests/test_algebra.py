import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from piengine.algebra import (
    AxiomFlags,
    basis,
    check_axioms,
    dump_algebra,
    element,
    g0,
    link_entries,
    load_algebra,
    make_b1,
    make_b2,
    make_direct_sum,
    make_generic,
    product,
)
from piengine.algebra import _check_axioms_dense, _check_axioms_sparse
from piengine.errors import (
    AlgebraMismatchError,
    AxiomViolationError,
    FieldMismatchError,
    IndexOutOfRangeError,
    InvalidDimensionError,
)


def test_b1_product_rule():
    b1 = make_b1(3)
    assert b1.dim == 4
    assert_allclose(product(b1, basis(b1, 2), basis(b1, 2)).coeff, basis(b1, 0).coeff)
    assert_allclose(product(b1, basis(b1, 1), basis(b1, 3)).coeff, np.zeros(4))
    for i in range(4):
        assert_allclose(product(b1, basis(b1, 0), basis(b1, i)).coeff, basis(b1, i).coeff)


def test_b1_is_not_associative():
    with pytest.raises(AxiomViolationError) as info:
        check_axioms(make_b1(2), AxiomFlags(associative=True))
    assert info.value.witness == (1, 1, 2)


def test_b2_idempotents_and_g0():
    b2 = make_b2(3)
    for a in range(3):
        assert_allclose(product(b2, basis(b2, a), basis(b2, a)).coeff, basis(b2, a).coeff)
    assert_allclose(product(b2, g0(b2), g0(b2)).coeff, np.ones(3))
    assert_allclose(product(b2, basis(b2, 0), basis(b2, 1)).coeff, np.zeros(3))


def test_declared_commutativity_is_verified():
    with pytest.raises(AxiomViolationError) as info:
        make_generic(2, [(0, 1, 0, 1.0)], axiom_flags=AxiomFlags(commutative=True))
    assert info.value.axiom == "commutative"
    assert info.value.witness == (0, 1, 0)


def test_declared_unit_is_verified():
    with pytest.raises(AxiomViolationError):
        make_generic(2, [(0, 0, 0, 1.0), (0, 1, 1, 1.0)], axiom_flags=AxiomFlags(unit=0))


def test_construction_errors():
    with pytest.raises(InvalidDimensionError):
        make_generic(0, [])
    with pytest.raises(IndexOutOfRangeError):
        make_generic(2, [(0, 2, 0, 1.0)])
    with pytest.raises(FieldMismatchError):
        make_generic(2, [(0, 0, 0, 1.0j)])
    with pytest.raises(InvalidDimensionError):
        make_b1(0)


def test_duplicate_entries_are_summed():
    alg = make_generic(1, [(0, 0, 0, 1.0), (0, 0, 0, 0.5)])
    assert alg.nnz == 1
    assert alg.constant(0, 0, 0) == pytest.approx(1.5)


def test_elements_of_different_algebras_do_not_mix():
    with pytest.raises(AlgebraMismatchError):
        basis(make_b2(2), 0) + basis(make_b2(2), 0)
    with pytest.raises(FieldMismatchError):
        element(make_b2(2), [1.0j, 0.0])


def test_linked_entries_follow_parameter_block():
    alg = make_generic(2, [(0, 0, 0, 1.0), (1, 1, 0, 3.0)], trainable=[(1, 1, 0)], param_block="lam")
    assert alg.trainable.tolist() == [False, True]
    assert_allclose(alg.effective_values({"lam": np.array([7.0])}), [1.0, 7.0])
    assert_allclose(alg.effective_values(), [1.0, 3.0])
    relinked = link_entries(make_b2(2), "w", [(1, 1, 1)])
    assert_allclose(relinked.effective_values({"w": np.array([-2.0])}), [1.0, -2.0])
    with pytest.raises(IndexOutOfRangeError):
        link_entries(make_b2(2), "w", [(0, 1, 1)])


def test_direct_sum_blocks_do_not_interact():
    total = make_direct_sum([make_b2(2), make_b1(1)])
    assert total.dim == 4
    lam = total.dense()
    assert np.all(lam[:2, 2:, :] == 0)
    assert np.all(lam[2:, :2, :] == 0)
    assert lam[3, 3, 2] == 1.0


def test_text_format_round_trip():
    b1 = make_b1(2)
    loaded = load_algebra(dump_algebra(b1))
    assert loaded.labels == b1.labels
    assert_allclose(loaded.dense(), b1.dense())
    assert loaded.flags == b1.flags

    cplx = make_generic(2, [(0, 1, 1, 0.1 + 1.0 / 3.0j), (1, 1, 0, -2.5)], field="complex")
    again = load_algebra(dump_algebra(cplx))
    assert np.array_equal(again.dense(), cplx.dense())


def test_load_rejects_malformed_lines():
    with pytest.raises(ValueError):
        load_algebra("algebra a dim=1 field=real flags=none\n0 0 0 1.0\n")
    with pytest.raises(FieldMismatchError):
        load_algebra("algebra a dim=1 field=real flags=none\n0 0 0 1.0 0.5\n")


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=9, max_value=12), st.integers(min_value=0, max_value=2**31 - 1))
def test_sparse_product_matches_dense_contraction(dim, seed):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, dim, size=(3 * dim, 3))
    alg = make_generic(dim, [(i, j, k, rng.normal()) for i, j, k in idx])
    x, y = rng.normal(size=dim), rng.normal(size=dim)
    expected = np.einsum("i,j,ijk->k", x, y, alg.dense())
    assert_allclose(product(alg, element(alg, x), element(alg, y)).coeff, expected, atol=1e-12)


def test_large_structural_algebras_build_without_densifying():
    b2 = make_b2(500)
    b1 = make_b1(500)
    assert b2.dim == 500 and b2.nnz == 500
    assert b1.dim == 501 and b1.nnz == 1 + 3 * 500
    assert_allclose(product(b2, basis(b2, 499), basis(b2, 499)).coeff, basis(b2, 499).coeff)
    assert_allclose(product(b1, basis(b1, 250), basis(b1, 250)).coeff, basis(b1, 0).coeff)
    check_axioms(b2)
    check_axioms(b1)


def test_large_b1_reports_first_associativity_witness():
    with pytest.raises(AxiomViolationError) as info:
        check_axioms(make_b1(40), AxiomFlags(associative=True))
    assert info.value.witness == (1, 1, 2)


def _witness(check, alg, flags):
    try:
        check(alg, flags, 1e-12)
    except AxiomViolationError as exc:
        return exc.axiom, exc.witness
    return None


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=2**31 - 1))
def test_entry_based_axiom_check_agrees_with_dense(dim, seed):
    rng = np.random.default_rng(seed)
    entries = [(0, i, i, 1.0) for i in range(dim)] + [(i, 0, i, 1.0) for i in range(1, dim)]
    idx = rng.integers(1, dim, size=(dim, 3))
    entries += [(int(i), int(j), int(k), float(rng.integers(-2, 3))) for i, j, k in idx]
    alg = make_generic(dim, entries)
    for flags in (
        AxiomFlags(commutative=True),
        AxiomFlags(unit=0),
        AxiomFlags(associative=True),
        AxiomFlags(associative=True, commutative=True, unit=0),
    ):
        assert _witness(_check_axioms_sparse, alg, flags) == _witness(_check_axioms_dense, alg, flags)
