import numpy as np
import pytest
import scipy.sparse as sp
from scipy.linalg import expm

from divjump.coeff import CoefficientField
from divjump.errors import NotAGenerator, NumericalError
from divjump.experiment import bump
from divjump.generator import assemble
from divjump.grid import GridFunction, GridSpec, restrict
from divjump.semigroup import EvolveParams, convergence_gap, evolve, poisson_terms

from oracles import heat_solution


def conservative(G):
    """Generator with the leak to outside the box put back on the diagonal."""
    return (G.Q + sp.diags(G.leak)).tocsr()


def test_params_validation():
    with pytest.raises(ValueError):
        EvolveParams(t=-1)
    with pytest.raises(ValueError):
        EvolveParams(t=1, tol=0)


def test_poisson_terms_tail():
    from scipy.stats import poisson
    j = poisson_terms(50.0, 1e-12)
    assert poisson.sf(j, 50.0) <= 1e-12 < poisson.sf(j - 1, 50.0)
    assert poisson_terms(0.0, 1e-12) == 0


def test_matches_dense_expm():
    spec = GridSpec.dyadic(3, [[0, 1], [0, 1]])
    G = assemble(CoefficientField.constant([[1.0, 0.3], [0.3, 0.5]]), spec)
    f = restrict(lambda x: np.sin(3 * x[:, 0]) + x[:, 1], spec)
    got = evolve(G, f, EvolveParams(0.01, tol=1e-13)).values
    want = expm(G.Q.toarray() * 0.01) @ f.values
    assert np.max(np.abs(got - want)) <= 1e-12


def test_rejects_non_generator():
    spec = GridSpec.dyadic(2, [[0, 1]])
    with pytest.raises(NotAGenerator):
        evolve(sp.identity(spec.size, format="csr"), GridFunction(spec, np.ones(spec.size)), EvolveParams(1.0))
    bad = sp.csr_matrix(np.array([[-1.0, -0.5], [0.5, -0.5]]))
    with pytest.raises(NotAGenerator):
        evolve(bad, GridFunction(GridSpec.dyadic(0, [[0, 1]]), [1.0, 1.0]), EvolveParams(1.0))


def test_max_terms_guard():
    spec = GridSpec.dyadic(6, [[0, 1]])
    G = assemble(CoefficientField.constant([[1.0]]), spec)
    with pytest.raises(NumericalError):
        evolve(G, GridFunction(spec, np.ones(spec.size)), EvolveParams(10.0, max_terms=100))


def test_constants_preserved_and_contraction(block_field, rng):
    spec = GridSpec.uniform(20, [[0, 1], [0, 1]])
    G = assemble(block_field, spec)
    Q = conservative(G)
    one = evolve(Q, GridFunction(spec, np.ones(spec.size)), EvolveParams(0.05))
    assert np.max(np.abs(one.values - 1)) <= 1e-12
    for _ in range(10):
        f = GridFunction(spec, rng.uniform(-1, 1, spec.size))
        assert evolve(G, f, EvolveParams(0.02)).sup_norm() <= f.sup_norm() + 1e-12


def test_positivity_preserved():
    spec = GridSpec.dyadic(4, [[0, 1]])
    G = assemble(CoefficientField.constant([[1.0]]), spec)
    e = np.zeros(spec.size)
    e[8] = 1
    out = evolve(G, GridFunction(spec, e), EvolveParams(0.01)).values
    assert out.min() >= -1e-14


def test_heat_oracle_errors_decrease():
    f = bump([0.0], 1.0)
    errs = []
    for n in (5, 6, 7):
        spec = GridSpec.dyadic(n, [[-4, 4]])
        u = evolve(assemble(CoefficientField.constant([[1.0]], window=[[-4, 4]]), spec), restrict(f, spec),
                   EvolveParams(0.1, tol=1e-12))
        x = np.linspace(-1.5, 1.5, 13)
        k = np.rint(x / spec.h).astype(int)
        errs.append(np.max(np.abs(u.at(k[:, None]) - heat_solution(f, x, 0.1))))
    assert errs[0] > errs[1] > errs[2]
    # second-order scheme: each halving of h cuts the error about four times
    assert errs[1] / errs[2] > 3


def test_cauchy_gaps_decrease(block_field):
    f = bump([0.5, 0.5], 0.3)
    g1 = convergence_gap(block_field, f, 0.05, 4, 5)
    g2 = convergence_gap(block_field, f, 0.05, 5, 6)
    assert g2 < g1


def test_gap_argument_check(block_field):
    with pytest.raises(ValueError):
        convergence_gap(block_field, bump([0.5, 0.5], 0.3), 0.05, 5, 5)
