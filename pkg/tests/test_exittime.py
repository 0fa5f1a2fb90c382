import numpy as np
import pytest

from divjump.coeff import CoefficientField
from divjump.errors import SolverError, ValidationError
from divjump.exittime import DIRECT_LIMIT, mean_exit_dual, restrict_to_domain, solve_exit_moments
from divjump.generator import assemble
from divjump.grid import GridSpec

from oracles import exit_mean_interval, exit_mean_square, exit_var_interval


def interval(m, a=0.5, b=None):
    spec = GridSpec.uniform(m, [[0, 1]])
    return assemble(CoefficientField.constant([[a]], b=b), spec)


def test_interval_system_shape():
    sys = restrict_to_domain(interval(4), [[0, 1]])
    assert sys.size == 3
    A = sys.A.toarray()
    assert np.count_nonzero(A) == 7
    assert np.all(A.sum(axis=1)[[0, 2]] > 0)
    assert A.sum(axis=1)[1] == pytest.approx(0, abs=1e-12)


def test_square_system_shape():
    G = assemble(CoefficientField.constant(np.eye(2)), GridSpec.uniform(4, [[0, 1], [0, 1]]))
    sys = restrict_to_domain(G, [[0, 1], [0, 1]])
    assert sys.size == 9
    assert sys.symmetric
    assert np.count_nonzero(sys.A.toarray()) == 9 + 2 * 12


def test_empty_domain():
    with pytest.raises(ValidationError):
        restrict_to_domain(interval(4), [[0.3, 0.4]])


@pytest.mark.parametrize("m", [16, 64, 256])
@pytest.mark.parametrize("x0", [0.5, 0.25])
def test_interval_closed_form(m, x0):
    E, V = solve_exit_moments(restrict_to_domain(interval(m), [[0, 1]]), [x0])
    assert E == pytest.approx(exit_mean_interval(x0, 0.5), rel=1e-10)
    assert V == pytest.approx(exit_var_interval(x0, 0.5), rel=4 / m**2 + 1e-10)


def test_square_series_oracle():
    G = assemble(CoefficientField.constant(0.5 * np.eye(2)), GridSpec.uniform(64, [[0, 1], [0, 1]]))
    res = solve_exit_moments(restrict_to_domain(G, [[0, 1], [0, 1]]), [0.5, 0.5])
    want = exit_mean_square(0.5, 0.5)
    assert res.E == pytest.approx(want, rel=2e-4)
    assert res.solver == "splu"


def test_snap_and_report(block_field):
    G = assemble(block_field, GridSpec.uniform(20, [[0, 1], [0, 1]]))
    sys = restrict_to_domain(G, [[0, 1], [0, 1]])
    res = solve_exit_moments(sys, [0.51, 0.5], keep=True)
    assert res.knot == (10, 10)
    assert res.snap_distance == pytest.approx(0.01)
    assert max(res.residuals) <= 1e-10
    assert res.u.min() >= 0 and res.v.min() >= 0
    E, V = res
    assert E > 0 and V >= 0
    assert set(res.to_dict(include_timings=False)) == {"E", "Var", "knot", "snap_distance", "residuals", "solver"}
    with pytest.raises(ValidationError):
        solve_exit_moments(sys, [0.0, 0.5])
    with pytest.raises(ValidationError):
        solve_exit_moments(sys, [0.5])


def test_iterative_path_matches_direct(block_field):
    G = assemble(block_field, GridSpec.uniform(128, [[0, 1], [0, 1]]))
    sys = restrict_to_domain(G, [[0, 1], [0, 1]])
    assert sys.size > DIRECT_LIMIT
    it = solve_exit_moments(sys, [0.5, 0.5])
    assert it.solver == "cg+jacobi"
    import scipy.sparse.linalg as spla
    lu = spla.splu(sys.A.tocsc())
    b = np.zeros(sys.size)
    b[sys.unknown([0.5, 0.5])[0]] = 1 / G.spec.h**2
    u = lu.solve(b)
    assert it.E == pytest.approx(G.spec.h**2 * u.sum(), rel=1e-8)


def test_stencil_row_count_block_field(block_field):
    G = assemble(block_field, GridSpec.uniform(200, [[0, 1], [0, 1]]))
    sys = restrict_to_domain(G, [[0, 1], [0, 1]])
    assert sys.size == 199**2
    assert np.diff(sys.A.indptr).max() <= 8


def test_duality_symmetric(block_field):
    G = assemble(block_field, GridSpec.uniform(40, [[0, 1], [0, 1]]))
    sys = restrict_to_domain(G, [[0, 1], [0, 1]])
    E, _ = solve_exit_moments(sys, [0.5, 0.5])
    assert abs(mean_exit_dual(sys, [0.5, 0.5]) - E) <= 1e-8 * E


@pytest.mark.parametrize("m", [64, 128])
def test_duality_with_drift_uses_transpose(m):
    G = interval(m, a=0.5, b=[1.5])
    sys = restrict_to_domain(G, [[0, 1]])
    assert not sys.symmetric
    E, _ = solve_exit_moments(sys, [0.3])
    assert abs(mean_exit_dual(sys, [0.3]) - E) <= 1e-8 * E
    # the untransposed adjoint would give a different number
    import scipy.sparse.linalg as spla
    wrong = spla.spsolve(sys.A.tocsc(), np.ones(sys.size))[sys.unknown([0.3])[0]]
    assert abs(wrong - E) > 1e-3 * E


def test_drift_shifts_mean():
    E0, _ = solve_exit_moments(restrict_to_domain(interval(64), [[0, 1]]), [0.5])
    E1, _ = solve_exit_moments(restrict_to_domain(interval(64, b=[2.0]), [[0, 1]]), [0.5])
    assert E1 < E0


def test_solver_error_on_tiny_tolerance(block_field):
    G = assemble(block_field, GridSpec.uniform(10, [[0, 1], [0, 1]]))
    with pytest.raises(SolverError):
        solve_exit_moments(restrict_to_domain(G, [[0, 1], [0, 1]]), [0.5, 0.5], rtol=1e-30)
