import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roughflow.errors import NotLieElementError, ShapeMismatchError
from roughflow.pathspace import StoppedPath
from roughflow.roughpath import lift_piecewise_linear
from roughflow.tensor_lie import (
    LyndonBasis,
    TensorElement,
    TensorShape,
    bracket_word_expansion,
    bracketing,
    dump,
    index_word,
    lie_bracket,
    lyndon_coords,
    lyndon_words,
    parse_dump,
    tensor_exp,
    tensor_log,
    tensor_mul,
    witt_dimension,
    word_index,
)


def word_poly_mul(a, b, depth):
    # dict {word: coeff} product, truncated
    out = {}
    for wa, ca in a.items():
        for wb, cb in b.items():
            w = wa + wb
            if len(w) <= depth:
                out[w] = out.get(w, 0.0) + ca * cb
    return out


def word_poly_exp(a, depth):
    out = {(): 1.0}
    term = {(): 1.0}
    for k in range(1, depth + 1):
        term = {w: c / k for w, c in word_poly_mul(term, a, depth).items()}
        for w, c in term.items():
            out[w] = out.get(w, 0.0) + c
    return out


def as_element(poly, shape):
    return TensorElement.from_words(shape, {w: c for w, c in poly.items() if w})


def random_lie(rng, shape, scale=0.5):
    x = TensorElement.from_vector(shape, scale * rng.standard_normal(shape.alphabet_size))
    y = TensorElement.from_vector(shape, scale * rng.standard_normal(shape.alphabet_size))
    return x + lie_bracket(x, y) * 0.7 + lie_bracket(y, lie_bracket(x, y)) * 0.3


def test_word_index_round_trip():
    for n in range(1, 4):
        for w in itertools.product(range(1, 4), repeat=n):
            assert index_word(word_index(w, 3), n, 3) == w


def test_product_of_letters():
    shape = TensorShape(2, 2)
    one = TensorElement.unit(shape)
    a = one + TensorElement.letter(shape, 1)
    b = one + TensorElement.letter(shape, 2)
    prod = tensor_mul(a, b)
    expected = TensorElement.from_words(shape, {(1,): 1.0, (2,): 1.0, (1, 2): 1.0}) + one
    assert prod.allclose(expected, atol=0.0)


def test_unit_is_neutral():
    rng = np.random.default_rng(1)
    shape = TensorShape(3, 3)
    a = TensorElement(shape, [np.ones(1)] + [rng.standard_normal(shape.level_size(n)) for n in (1, 2, 3)])
    assert (a @ TensorElement.unit(shape)).allclose(a, atol=0.0)
    assert (TensorElement.unit(shape) @ a).allclose(a, atol=0.0)


def test_one_letter_exponentials_commute():
    shape = TensorShape(2, 3)
    e1 = TensorElement.letter(shape, 1)
    lhs = tensor_exp(e1 * 0.3) @ tensor_exp(e1 * -1.1)
    assert lhs.allclose(tensor_exp(e1 * -0.8), atol=1e-12)


def test_exp_of_letter_depth_two():
    shape = TensorShape(2, 2)
    g = tensor_exp(TensorElement.letter(shape, 1))
    expected = TensorElement.unit(shape) + TensorElement.from_words(shape, {(1,): 1.0, (1, 1): 0.5})
    assert g.allclose(expected, atol=1e-15)


def test_exp_zero_and_log_unit():
    shape = TensorShape(3, 4)
    assert tensor_exp(TensorElement.zero(shape)).allclose(TensorElement.unit(shape), atol=0.0)
    assert tensor_log(TensorElement.unit(shape)).allclose(TensorElement.zero(shape), atol=0.0)


def test_exp_matches_word_polynomial_series():
    shape = TensorShape(2, 3)
    lie = {(1,): 1.0, (1, 2): 1.0, (2, 1): -1.0}
    expected = as_element(word_poly_exp(lie, 3), shape) + TensorElement.unit(shape)
    got = tensor_exp(TensorElement.from_words(shape, lie))
    assert got.allclose(expected, atol=1e-14)
    # a few frozen coefficients of that series
    assert got.coefficient((1, 1, 1)) == pytest.approx(1 / 6, abs=1e-15)
    assert got.coefficient((1, 1, 2)) == pytest.approx(0.5, abs=1e-15)
    assert got.coefficient((1, 2, 1)) == pytest.approx(0.0, abs=1e-15)
    assert got.coefficient((2, 1, 1)) == pytest.approx(-0.5, abs=1e-15)


def test_log_level_two_is_antisymmetric_area():
    # for (1, X, XX) weak geometric, level 2 of log is XX - X (x) X / 2
    t = np.linspace(0, 1, 6)
    rng = np.random.default_rng(5)
    X = lift_piecewise_linear(StoppedPath(t, rng.standard_normal((6, 2))), 2)
    g = X.query(0.0, 1.0)
    x1 = g.level_tensor(1)
    x2 = g.level_tensor(2)
    lg = tensor_log(g).level_tensor(2)
    assert np.allclose(lg, x2 - 0.5 * np.outer(x1, x1), atol=1e-14)
    assert np.allclose(lg, -lg.T, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(ell=st.integers(1, 3), depth=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_log_exp_round_trip(ell, depth, seed):
    rng = np.random.default_rng(seed)
    shape = TensorShape(ell, depth)
    a = random_lie(rng, shape)
    assert (tensor_log(tensor_exp(a)) - a).max_abs() <= 1e-12


@settings(max_examples=40, deadline=None)
@given(ell=st.integers(1, 3), depth=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_product_is_associative(ell, depth, seed):
    rng = np.random.default_rng(seed)
    shape = TensorShape(ell, depth)
    a, b, c = (
        TensorElement(shape, [np.ones(1)] + [rng.standard_normal(shape.level_size(n)) for n in range(1, depth + 1)])
        for _ in range(3)
    )
    assert ((a @ b) @ c - a @ (b @ c)).max_abs() <= 1e-10 * max(1.0, (a @ b @ c).max_abs())


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_bracket_antisymmetry_and_jacobi(seed):
    rng = np.random.default_rng(seed)
    shape = TensorShape(3, 4)
    a, b, c = (random_lie(rng, shape) for _ in range(3))
    assert (lie_bracket(a, b) + lie_bracket(b, a)).max_abs() <= 1e-13
    jac = lie_bracket(a, lie_bracket(b, c)) + lie_bracket(b, lie_bracket(c, a)) + lie_bracket(c, lie_bracket(a, b))
    assert jac.max_abs() <= 1e-12


def test_bracket_word_expansions():
    shape = TensorShape(3, 3)
    assert bracket_word_expansion((1,), shape).allclose(TensorElement.letter(shape, 1), atol=0.0)
    e12 = bracket_word_expansion((1, 2), shape)
    assert e12.allclose(TensorElement.from_words(shape, {(1, 2): 1.0, (2, 1): -1.0}), atol=0.0)
    e123 = bracket_word_expansion((1, 2, 3), shape)
    expected = {(1, 2, 3): 1.0, (1, 3, 2): -1.0, (2, 3, 1): -1.0, (3, 2, 1): 1.0}
    assert dict(e123.items()) == expected


def test_lyndon_words_and_witt_dimensions():
    # ordered by length, then lexicographically
    assert lyndon_words(2, 3) == [(1,), (2,), (1, 2), (1, 1, 2), (1, 2, 2)]
    for ell, dims in [(2, [2, 1, 2, 3]), (3, [3, 3, 8, 18])]:
        assert [witt_dimension(ell, n) for n in range(1, 5)] == dims
        words = lyndon_words(ell, 4)
        assert [sum(len(w) == n for w in words) for n in range(1, 5)] == dims


def test_standard_bracketing():
    assert bracketing((1, 1, 2)) == (1, (1, 2))
    assert bracketing((1, 2, 2)) == ((1, 2), 2)


def test_lyndon_coords_simple():
    shape = TensorShape(2, 2)
    basis = LyndonBasis(shape)
    c = lyndon_coords(TensorElement.letter(shape, 1), basis)
    assert dict(zip(basis.words, c.coefficients))[(1,)] == 1.0
    assert c.residual == 0.0
    area = TensorElement.from_words(shape, {(1, 2): 0.37, (2, 1): -0.37})
    c = lyndon_coords(area, basis)
    assert dict(zip(basis.words, c.coefficients))[(1, 2)] == pytest.approx(0.37, abs=1e-15)


def test_lyndon_coords_of_signature_log():
    rng = np.random.default_rng(3)
    t = np.linspace(0, 1, 9)
    X = lift_piecewise_linear(StoppedPath(t, rng.standard_normal((9, 3))), 3)
    lam = tensor_log(X.query(0.0, 1.0))
    basis = LyndonBasis(TensorShape(3, 3))
    c = lyndon_coords(lam, basis)
    assert c.residual <= 1e-10
    assert (basis.element(c.coefficients) - lam).max_abs() <= 1e-12


def test_lyndon_coords_rejects_non_lie():
    shape = TensorShape(2, 2)
    sym = TensorElement.from_words(shape, {(1, 2): 1.0, (2, 1): 1.0})
    with pytest.raises(NotLieElementError):
        lyndon_coords(sym, LyndonBasis(shape))


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        tensor_mul(TensorElement.unit(TensorShape(2, 2)), TensorElement.unit(TensorShape(3, 2)))


def test_dump_round_trip_is_exact():
    rng = np.random.default_rng(8)
    shape = TensorShape(2, 3)
    a = TensorElement(shape, [np.ones(1)] + [rng.standard_normal(shape.level_size(n)) for n in (1, 2, 3)])
    b = parse_dump(dump(a).splitlines(), shape)
    assert (a - b).max_abs() == 0.0
