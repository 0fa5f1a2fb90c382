"""Action of ``exp(Q t)`` on grid functions by uniformization.

With ``L = max_k |Q_kk|`` and the substochastic matrix ``P = I + Q / L``,

    exp(Q t) f = sum_j Poisson(j; L t) P^j f,

a convex combination of contractions. Truncating after ``J`` terms costs at
most ``||f||_inf * P(N > J)``, which fixes ``J`` from the Poisson tail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from .coeff import CoefficientField, parameterize
from .errors import NotAGenerator, NumericalError
from .generator import SparseGenerator, assemble
from .grid import GridFunction, GridSpec, prolong, restrict

__all__ = ["EvolveParams", "evolve", "poisson_terms", "convergence_gap", "check_generator"]


@dataclass(frozen=True)
class EvolveParams:
    """Time horizon, sup-norm tolerance and a cap on the series length."""

    t: float
    tol: float = 1e-12
    max_terms: int = 10_000_000

    def __post_init__(self):
        if not self.t >= 0:
            raise ValueError("t must be non-negative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


def check_generator(Q, tol=1e-12):
    """Raise NotAGenerator unless off-diagonals are >= 0 and row sums <= 0."""
    Q = sp.csr_matrix(Q)
    diag = Q.diagonal()
    off = Q - sp.diags(diag)
    if off.nnz and off.data.min() < 0:
        raise NotAGenerator(f"negative off-diagonal rate {off.data.min():.6g}")
    sums = np.asarray(Q.sum(axis=1)).ravel()
    scale = np.maximum(np.abs(diag), 1.0)
    if np.any(sums > tol * scale):
        raise NotAGenerator(f"positive row sum {sums.max():.6g}")
    return Q


def poisson_terms(mu, rel_tol):
    """Number of terms ``J`` with ``P(N > J) <= rel_tol`` for ``N ~ Poisson(mu)``."""
    if mu == 0:
        return 0
    j = int(poisson.isf(rel_tol, mu))
    while poisson.sf(j, mu) > rel_tol:
        j += 1
    return j


def evolve(Q, f: GridFunction, params: EvolveParams) -> GridFunction:
    """``exp(Q t) f`` to sup-norm accuracy ``params.tol``.

    Parameters
    ----------
    Q : SparseGenerator or sparse matrix
        A SparseGenerator is converted with ``Q = -A``.
    """
    if isinstance(Q, SparseGenerator):
        Q = Q.Q
    Q = check_generator(Q)
    fv = np.asarray(f.values, dtype=float)
    fmax = float(np.max(np.abs(fv))) if fv.size else 0.0
    lam = float(np.max(np.abs(Q.diagonal()))) if Q.shape[0] else 0.0
    if params.t == 0 or fmax == 0 or lam == 0:
        return GridFunction(f.spec, fv)
    mu = lam * params.t
    J = poisson_terms(mu, params.tol / fmax)
    if J > params.max_terms:
        raise NumericalError(f"uniformization needs {J} terms, above max_terms={params.max_terms}")
    P = (sp.identity(Q.shape[0], format="csr") + Q / lam).tocsr()
    # start the weighted sum where the Poisson mass begins to matter
    j0 = max(0, int(poisson.ppf(params.tol / fmax * 1e-3, mu)) - 1)
    weights = poisson.pmf(np.arange(j0, J + 1), mu)
    v = fv.copy()
    for _ in range(j0):
        v = P @ v
    out = weights[0] * v
    for w in weights[1:]:
        v = P @ v
        out += w * v
    return GridFunction(f.spec, out)


def convergence_gap(fld: CoefficientField, f, t: float, n: int, n_fine: int, box=None,
                    tol: float = 1e-10, margin: int = 5) -> float:
    """Sup over coarse knots of ``|Phi u_fine(t) - u_coarse(t)|``.

    Both levels use the same (absorbing) box; only knots at least
    ``margin`` coarse cells from its edge enter the sup.
    """
    if n_fine <= n:
        raise ValueError("n_fine must exceed n")
    if box is None:
        box = fld.window
    sols = []
    for level in (n, n_fine):
        spec = GridSpec.dyadic(level, box)
        G = assemble(parameterize(fld, h=spec.h) if not fld.parameterized else fld, spec)
        sols.append(evolve(G, restrict(f, spec), EvolveParams(t, tol)))
    coarse, fine = sols
    spec = coarse.spec
    k = spec.indices()
    inner = np.all((k - np.asarray(spec.lo) >= margin) & (np.asarray(spec.hi) - k >= margin), axis=1)
    x = spec.positions()[inner]
    return float(np.max(np.abs(prolong(fine)(x) - coarse.values[inner]))) if inner.any() else 0.0
