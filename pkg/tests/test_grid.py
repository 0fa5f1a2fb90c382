import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divjump.grid import (BoxDomain, GridFunction, GridSpec, backward_diff, domain_mask, forward_diff, prolong,
                          restrict)


def test_dyadic_spacing_is_exact():
    spec = GridSpec.dyadic(5, [[0, 1], [-1, 1]])
    assert spec.h == 2.0**-5
    assert spec.shape == (33, 65)
    assert spec.level == 5
    np.testing.assert_array_equal(spec.box, [[0, 1], [-1, 1]])


def test_misaligned_box_rejected():
    with pytest.raises(ValueError):
        GridSpec.dyadic(2, [[0, 0.3]])


def test_flat_order_first_axis_fastest():
    spec = GridSpec.dyadic(1, [[0, 1], [0, 1]])
    k = spec.indices()
    np.testing.assert_array_equal(k[:4], [[0, 0], [1, 0], [2, 0], [0, 1]])


@given(st.integers(1, 3), st.integers(0, 4))
@settings(max_examples=25, deadline=None)
def test_flat_index_bijection(dim, level):
    spec = GridSpec.dyadic(level, [[-1, 1]] * dim)
    flat = np.arange(spec.size)
    np.testing.assert_array_equal(spec.flat_index(spec.multi_index(flat)), flat)


def test_flat_index_outside_is_minus_one():
    spec = GridSpec.dyadic(2, [[0, 1]])
    assert spec.flat_index([[5]])[0] == -1
    assert not spec.contains([[-1]])[0]


def test_restrict_examples():
    spec = GridSpec.dyadic(1, [[0, 1], [0, 1]])
    ones = restrict(lambda x: np.ones(len(x)), spec)
    assert np.all(ones.values == 1)
    lin = restrict(lambda x: x[:, 0], spec)
    np.testing.assert_allclose(lin.values, spec.h * spec.indices()[:, 0])
    spec = GridSpec.dyadic(2, [[0, 1], [0, 1]])
    u = restrict(lambda x: x[:, 0] * x[:, 1], spec)
    assert u.at([1, 1]) == pytest.approx(1 / 16)


def test_forward_diff_hand_value():
    spec = GridSpec.dyadic(2, [[0, 1]])
    d = forward_diff(restrict(lambda x: x[:, 0] ** 2, spec), 0, 1)
    assert d.at([2]) == pytest.approx(5 / 4)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_forward_diff_exact_on_linear(r):
    spec = GridSpec.dyadic(3, [[0, 1], [0, 1]])
    d = forward_diff(restrict(lambda x: 2 * x[:, 1] - x[:, 0], spec), 1, r)
    np.testing.assert_allclose(d.values[d.valid], 2.0)
    assert not d.valid.all()
    assert np.all(d.values[~d.valid] == 0)


def test_forward_diff_annihilates_constants():
    spec = GridSpec.dyadic(3, [[0, 1]])
    d = forward_diff(restrict(lambda x: 3.0 + 0 * x[:, 0], spec), 0)
    assert np.all(d.values == 0)


def test_forward_diff_bad_axis():
    spec = GridSpec.dyadic(2, [[0, 1]])
    with pytest.raises(ValueError):
        forward_diff(restrict(lambda x: x[:, 0], spec), 1)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
@settings(max_examples=30, deadline=None)
def test_difference_operators_are_negative_adjoints(seed, r):
    # supports kept r knots from the box edge mimic the infinite lattice
    rng = np.random.default_rng(seed)
    spec = GridSpec.uniform(12, [[0, 1], [0, 1]])
    k = spec.indices()
    inner = np.all((k >= 2 * r) & (k <= 12 - 2 * r), axis=1)
    u = GridFunction(spec, np.where(inner, rng.normal(size=spec.size), 0))
    v = GridFunction(spec, np.where(inner, rng.normal(size=spec.size), 0))
    for axis in range(2):
        lhs = v.values @ forward_diff(u, axis, r).values
        rhs = -backward_diff(v, axis, r).values @ u.values
        assert lhs == pytest.approx(rhs, abs=1e-9)


def test_prolong_tent():
    spec = GridSpec.dyadic(2, [[0, 1], [0, 1]])
    e = np.zeros(spec.size)
    e[spec.flat_index([2, 2])] = 1
    phi = prolong(GridFunction(spec, e))
    assert phi(np.array([0.5, 0.5])) == pytest.approx(1.0)
    assert phi(np.array([0.5 + 0.125, 0.5])) == pytest.approx(0.5)
    assert phi(np.array([0.5 + 0.125, 0.5 + 0.125])) == pytest.approx(0.25)
    assert phi(np.array([0.5 + 0.25, 0.5])) == pytest.approx(0.0)


def test_prolong_reproduces_affine():
    spec = GridSpec.dyadic(3, [[0, 1], [0, 1]])
    f = lambda x: 1 + 2 * x[:, 0] - x[:, 1]  # noqa: E731
    phi = prolong(restrict(f, spec))
    pts = np.random.default_rng(0).uniform(0, 1, size=(50, 2))
    np.testing.assert_allclose(phi(pts), f(pts), atol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_restrict_prolong_identity_and_sup_norm(seed):
    rng = np.random.default_rng(seed)
    spec = GridSpec.dyadic(2, [[0, 1], [0, 1]])
    u = GridFunction(spec, rng.normal(size=spec.size))
    phi = prolong(u)
    np.testing.assert_allclose(restrict(phi, spec).values, u.values, atol=1e-12)
    pts = rng.uniform(-0.3, 1.3, size=(400, 2))
    assert np.max(np.abs(phi(pts))) <= u.sup_norm() + 1e-12


def test_prolong_support_ring():
    spec = GridSpec.dyadic(2, [[0, 1]])
    phi = prolong(GridFunction(spec, np.ones(spec.size)))
    assert phi(np.array([[-0.125]]))[0] == pytest.approx(0.5)
    assert phi(np.array([[-0.25]]))[0] == 0.0


def test_csv_and_npz_round_trip(tmp_path):
    spec = GridSpec.dyadic(2, [[0, 1], [0, 0.5]])
    u = GridFunction(spec, np.arange(spec.size) * 0.1)
    u.to_csv(tmp_path / "u.csv")
    back = GridFunction.from_csv(tmp_path / "u.csv")
    assert back.spec == spec
    np.testing.assert_array_equal(back.values, u.values)
    u.to_npz(tmp_path / "u.npz")
    np.testing.assert_array_equal(GridFunction.from_npz(tmp_path / "u.npz").values, u.values)


def test_grid_function_rejects_wrong_length():
    with pytest.raises(ValueError):
        GridFunction(GridSpec.dyadic(1, [[0, 1]]), [1.0, 2.0])


def test_as_array_axis_order():
    spec = GridSpec.dyadic(1, [[0, 1], [0, 1]])
    u = restrict(lambda x: x[:, 0] + 10 * x[:, 1], spec)
    assert u.as_array()[2, 0] == pytest.approx(1.0)
    assert u.as_array()[0, 2] == pytest.approx(10.0)


def test_domain_mask_open_box():
    spec = GridSpec.dyadic(2, [[0, 1]])
    np.testing.assert_array_equal(domain_mask(spec, [[0, 1]]), [False, True, True, True, False])
    assert BoxDomain([[0, 1]])(np.array([[0.5]]))[0]
    mask = np.zeros(spec.size, dtype=bool)
    assert domain_mask(spec, mask) is mask
    with pytest.raises(ValueError):
        domain_mask(spec, np.zeros(3, dtype=bool))
