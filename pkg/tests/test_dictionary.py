import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddcontrol.dictionary import (
    BasisFunction,
    BoxSet,
    Dictionary,
    DictionaryError,
    JacobianBound,
    bound_jacobian,
    eval_Z,
    jac_Z,
    parse_term,
)


def test_eval_cosine_at_origin():
    d = Dictionary.from_json('{"n":4,"terms":["cos(x1)"]}')
    assert np.allclose(eval_Z(d, np.zeros(4)), [0, 0, 0, 0, 1])


def test_eval_powers_of_one():
    d = Dictionary.from_json('{"n":2,"terms":["x1^2","x1^3"]}')
    assert np.allclose(eval_Z(d, np.array([1.0, -1.0])), [1, -1, 1, 1])


def test_eval_mixed_terms_direct_oracle():
    d = Dictionary.from_json('{"n":4,"terms":["cos(x1)","x1^2","sin(x2)"]}')
    x = np.array([np.pi, 1.0, 0.0, 0.0])
    # independent direct evaluation of each entry
    expected = [np.pi, 1.0, 0.0, 0.0, np.cos(np.pi), np.pi**2, np.sin(1.0)]
    assert np.allclose(eval_Z(d, x), expected, rtol=0, atol=1e-15)
    assert eval_Z(d, x)[4] == -1.0


def test_jac_top_block_is_identity():
    d = Dictionary.from_json('{"n":3,"terms":["x1*x2","sin(x3)"]}')
    x = np.array([0.3, -1.2, 2.0])
    J = jac_Z(d, x)
    assert np.array_equal(J[:3], np.eye(3))


def test_jac_cosine_row():
    d = Dictionary.from_json('{"n":4,"terms":["cos(x1)"]}')
    J = jac_Z(d, np.array([np.pi / 2, 0, 0, 0]))
    assert np.allclose(J[4], [-1, 0, 0, 0])


def test_coordinate_gradient_is_basis_vector():
    f = BasisFunction.coordinate(2)
    for x in np.random.default_rng(0).uniform(-2, 2, (5, 4)):
        assert np.array_equal(f.grad(x), np.eye(4)[2])


TERMS = ["cos(x1)", "sin(x2)", "x1^2", "x2^3", "x1*x3", "x3^2"]


@settings(max_examples=60, deadline=None)
@given(
    idx=st.lists(st.integers(0, len(TERMS) - 1), min_size=1, max_size=4, unique=True),
    x=st.lists(st.floats(-2, 2), min_size=3, max_size=3),
)
def test_gradients_match_finite_differences(idx, x):
    d = Dictionary.from_json(json.dumps({"n": 3, "terms": [TERMS[i] for i in idx]}))
    x = np.asarray(x)
    J = jac_Z(d, x)
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (eval_Z(d, x + e) - eval_Z(d, x - e)) / (2 * h)
        scale = np.maximum(np.abs(J[:, k]), 1.0)
        assert np.max(np.abs(fd - J[:, k]) / scale) <= 1e-6


def test_eval_is_pure_and_vectorized():
    d = Dictionary.from_json('{"n":2,"terms":["x1^2"]}')
    X = np.random.default_rng(1).uniform(-1, 1, (7, 2))
    batch = eval_Z(d, X)
    for i in range(7):
        assert np.array_equal(batch[i], eval_Z(d, X[i]))


def test_dimension_mismatch_raises():
    d = Dictionary.from_json('{"n":3,"terms":[]}')
    with pytest.raises(DictionaryError):
        eval_Z(d, np.zeros(4))
    with pytest.raises(DictionaryError):
        jac_Z(d, np.zeros(2))


# -- growth bounds -----------------------------------------------------------


def test_bound_cosine_on_unbounded_set():
    d = Dictionary.from_json('{"n":4,"terms":["cos(x1)"]}')
    b = bound_jacobian(d, BoxSet.full(4))
    assert np.allclose(b.R, np.diag([1.0, 0, 0, 0]))


def test_bound_surge_monomials():
    d = Dictionary.from_json('{"n":2,"terms":["x1^2","x1^3"]}')
    for w in (0.5, 1.0, 2.0):
        b = bound_jacobian(d, BoxSet.from_bounds([[-w, w], None]))
        assert np.allclose(b.R, np.diag([np.sqrt(4 * w**2 + 9 * w**4), 0.0]))


def test_bound_mixed_library():
    d = Dictionary.from_json('{"n":4,"terms":["cos(x1)","x1^2","sin(x2)"]}')
    b = bound_jacobian(d, BoxSet.from_bounds([[-1, 1], None, None, None]))
    assert np.allclose(b.R, np.diag([np.sqrt(5.0), 1.0, 0.0, 0.0]))


@pytest.mark.parametrize(
    "terms,bounds",
    [
        (["x1^2", "x1^3"], [[-0.7, 0.7], [-2, 2]]),
        (["cos(x1)", "sin(x2)", "x1*x2"], [[-1.5, 0.5], [-1, 2]]),
        (["x2^3", "x1*x2"], [[-0.2, 1.1], [-0.4, 0.9]]),
    ],
)
def test_bound_dominates_sampled_gram(terms, bounds):
    d = Dictionary.from_json(json.dumps({"n": 2, "terms": terms}))
    box = BoxSet.from_bounds(bounds)
    bound = bound_jacobian(d, box)
    X = np.random.default_rng(3).uniform(box.lo, box.hi, (10_000, 2))
    J = d.jac_Q(X)
    gram = np.einsum("nki,nkj->nij", J, J)
    gap = np.linalg.eigvalsh(gram - bound.gram)[..., -1]
    assert gap.max() <= 1e-9


def test_unbounded_polynomial_raises():
    d = Dictionary.from_json('{"n":2,"terms":["x1^2"]}')
    with pytest.raises(DictionaryError, match="no finite bound"):
        bound_jacobian(d, BoxSet.full(2))


def test_jacobian_bound_gram_psd():
    b = JacobianBound(np.diag([2.0, 0.5]))
    assert np.linalg.eigvalsh(b.gram)[0] >= 0


# -- JSON grammar -------------------------------------------------------------


def test_json_round_trip():
    src = {"n": 4, "terms": ["cos(x1)", "x1^2", "sin(x2)", "x1*x3"]}
    d = Dictionary.from_json(json.dumps(src))
    assert json.loads(d.to_json()) == src
    assert Dictionary.from_json(d.to_json()) == d


@pytest.mark.parametrize("bad", ["cos(x0)", "x1^-1", "exp(x1)", "x1*x1*x2", "x1**2"])
def test_grammar_rejects(bad):
    with pytest.raises(DictionaryError):
        Dictionary.from_json(json.dumps({"n": 2, "terms": [bad]}))


def test_coordinate_term_rejected_in_q():
    with pytest.raises(DictionaryError, match="implicit"):
        Dictionary.from_json('{"n":2,"terms":["x2"]}')


def test_linear_monomial_rejected():
    with pytest.raises(DictionaryError):
        Dictionary(2, (BasisFunction.monomial({0: 1}),))


def test_out_of_range_coordinate_rejected():
    with pytest.raises(DictionaryError):
        Dictionary.from_json('{"n":2,"terms":["sin(x3)"]}')


def test_parse_term_coordinate():
    f = parse_term("x3")
    assert f.kind == "coordinate" and f.index == 2


def test_box_validation():
    with pytest.raises(DictionaryError):
        BoxSet((0.0, 1.0), (1.0, 0.0))
    box = BoxSet.from_bounds([[-1, 1], None])
    assert not box.is_bounded
    assert box.truncate(5.0).is_bounded
    assert box.contains(np.array([0.0, 100.0]))
    assert not box.contains(np.array([2.0, 0.0]))
