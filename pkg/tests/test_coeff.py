import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divjump.coeff import (CoefficientField, candidate_vectors, check_ellipticity, hat_tensor, omega,
                           parameterize, pf_seed, select_parameters, validate_hat_definite)
from divjump.errors import NoParameters, NonPositiveBracket, NotSymmetricError, ValidationError

S = 1 / math.sqrt(2)
INDEFINITE_3D = [[1, -S, 0.1], [-S, 1, -S], [0.1, -S, 1]]


def brackets(a, r):
    """Hand-rolled ``a_ii - sum_m (r_i / r_m) |a_im|``."""
    a = np.asarray(a)
    d = len(a)
    return [a[i, i] - sum(r[i] / r[m] * abs(a[i, m]) for m in range(d) if m != i) for i in range(d)]


def test_hat_tensor():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_array_equal(hat_tensor(a), [[2.0, -0.5], [-0.5, 1.0]])


def test_asymmetric_tensor_rejected():
    with pytest.raises(NotSymmetricError):
        CoefficientField.constant([[1.0, 0.2], [0.1, 1.0]])


def test_indefinite_auxiliary_tensor_rejected_with_witness():
    rep = validate_hat_definite(CoefficientField.constant(INDEFINITE_3D))
    assert not rep.passed
    assert rep.min_eigenvalue == pytest.approx(np.linalg.eigvalsh(hat_tensor(np.array(INDEFINITE_3D)))[0])
    assert rep.min_eigenvalue < 0
    assert rep.witness is not None and rep.witness.shape == (3,)
    assert "FAIL" in str(rep)


def test_ellipticity_bounds():
    fld = CoefficientField.constant([[2.0, 0.0], [0.0, 0.5]], md=0.5, mg=2.0)
    assert check_ellipticity(fld) == pytest.approx((0.5, 2.0))
    with pytest.raises(ValidationError):
        check_ellipticity(CoefficientField.constant([[1.0, 0.0], [0.0, 1.0]], md=2.0))
    with pytest.raises(ValidationError):
        check_ellipticity(CoefficientField.constant([[1.0, 2.0], [2.0, 1.0]]))


@pytest.mark.parametrize("r", [(1, 1), (3, 1), (1, 2), (5, 2)])
def test_omega_constant_matches_hand_brackets(r):
    a = [[0.1, 0.02], [0.02, 1.0]]
    fld = CoefficientField.constant(a)
    assert omega(fld, 0, r) == pytest.approx(min(brackets(a, r)), abs=1e-15)


def test_candidate_order():
    got = list(candidate_vectors(2, 2))
    assert got == [(1, 1), (1, 2), (2, 1), (2, 2)]


@pytest.mark.parametrize("a", [[[0.1, 0.1], [0.1, 0.4]], [[0.1, 0.2], [0.2, 1.0]], [[1.0, -0.9], [-0.9, 1.0]]])
def test_pf_seed_balances_brackets(a):
    r = pf_seed(hat_tensor(np.array(a)))
    assert r is not None
    assert min(brackets(a, r)) > 0
    assert math.gcd(*r) == 1


def test_pf_seed_symmetric_pair():
    assert pf_seed(hat_tensor(np.array([[1.0, 0.5], [0.5, 1.0]]))) == (1, 1)


def test_pf_seed_gives_up_beyond_r_max():
    # eigenvector ratio near 45 cannot be represented with components <= 16
    assert pf_seed(hat_tensor(np.array([[0.1, 0.02], [0.02, 1.0]]))) is None
    assert select_parameters(CoefficientField.constant([[0.1, 0.02], [0.02, 1.0]]), 0) == (1, 1)


def test_pf_seed_none_when_indefinite():
    assert pf_seed(hat_tensor(np.array(INDEFINITE_3D))) is None


def test_select_parameters_first_in_order():
    fld = CoefficientField.constant([[0.1, 0.2], [0.2, 1.0]])
    r = select_parameters(fld, 0)
    assert min(brackets(fld.cells[0].tensor, r)) > 0
    for c in candidate_vectors(2, max(r)):
        if c == r:
            break
        assert min(brackets(fld.cells[0].tensor, c)) <= 0


@st.composite
def tensors_2d(draw):
    a11 = draw(st.floats(0.2, 2.0))
    a22 = draw(st.floats(0.2, 2.0))
    rho = draw(st.floats(-0.9, 0.9))
    a12 = rho * math.sqrt(a11 * a22)
    return np.array([[a11, a12], [a12, a22]])


@given(tensors_2d())
@settings(max_examples=60, deadline=None)
def test_search_finds_positive_brackets_in_2d(a):
    fld = parameterize(CoefficientField.constant(a))
    r = fld.cells[0].r
    assert min(brackets(a, r)) > 0
    assert fld.cells[0].signs[0, 1] == (1 if a[0, 1] >= -1e-14 else -1)


def test_fixed_parameters_checked_not_searched():
    fld = CoefficientField.constant([[0.1, 0.2], [0.2, 1.0]], r=(1, 1))
    with pytest.raises(NonPositiveBracket) as info:
        parameterize(fld)
    assert info.value.value == pytest.approx(-0.1)
    ok = parameterize(CoefficientField.constant([[0.1, 0.2], [0.2, 1.0]], r=(1, 3)))
    assert ok.cells[0].r == (1, 3)
    with pytest.raises(NonPositiveBracket):
        parameterize(CoefficientField.constant([[0.1, 0.2], [0.2, 1.0]], r=(3, 1)))


def test_no_parameters_for_indefinite_3d():
    with pytest.raises(NoParameters):
        parameterize(CoefficientField.constant(INDEFINITE_3D), r_max=6)


def test_piecewise_json_round_trip(tmp_path, block_doc):
    fld = CoefficientField.from_dict(block_doc)
    path = tmp_path / "f.json"
    path.write_text(json.dumps(fld.to_dict()))
    back = CoefficientField.from_json(path)
    assert back.to_dict() == block_doc
    assert len(back.cells) == 2
    assert back.cell_of(np.array([[0.5, 0.5], [0.1, 0.1], [0.75, 0.5]])).tolist() == [0, 1, 1]


def test_overlapping_blocks_rejected():
    doc = {"dim": 1, "blocks": [{"rects": [[[0, 0.6]]], "tensor": [[1]]}, {"rects": [[[0.5, 1]]], "tensor": [[2]]}],
           "background": {"tensor": [[1]]}}
    with pytest.raises(ValidationError):
        CoefficientField.from_dict(doc)


def test_interface_detection(block_field):
    hit = block_field.touches_interface(np.array([[0.5, 0.5], [0.26, 0.5], [0.1, 0.1], [0.74, 0.74]]), 0.02)
    assert hit.tolist() == [False, True, False, True]


def test_callable_sign_change_is_split():
    def a_fn(x):
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = 1.0
        out[:, 0, 1] = out[:, 1, 0] = 0.3 * np.sin(6 * x[:, 0])
        return out

    fld = parameterize(CoefficientField.from_callable(a_fn, dim=2, window=[[0, 1], [0, 1]]), h=1 / 32)
    assert len(fld.cells) > 2
    for c in fld.cells[:-1]:
        assert c.r is not None and c.signs is not None


def test_callable_curved_sign_set_fails():
    # zero set of sin(6xy) is curved: no axis plane separates the signs
    def a_fn(x):
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = out[:, 1, 1] = 1.0
        out[:, 0, 1] = out[:, 1, 0] = 0.3 * np.sin(6 * x[:, 0] * x[:, 1])
        return out

    fld = CoefficientField.from_callable(a_fn, dim=2, window=[[0, 1], [0, 1]])
    try:
        out = parameterize(fld, h=1 / 32, max_depth=3)
    except NoParameters:
        return
    assert all(c.r is not None for c in out.cells)
