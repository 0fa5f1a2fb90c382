"""First-exit-time moments from two Dirichlet solves.

With ``A_D`` the generator matrix restricted to the knots of the open
domain ``D`` (rates into the complement are dropped, which is absorption),

    A_D u = h^-d e_k0,    A_D v = u,
    E[theta] = h^d sum(u),    Var[theta] = 2 h^d sum(v) - E[theta]^2.

``u`` is the discrete Green function of the start knot; ``h^d sum(u)`` is
the occupation time of ``D`` and ``2 h^d sum(v)`` the second moment.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError, SolverError, ValidationError
from .generator import SparseGenerator
from .grid import GridFunction, GridSpec, domain_mask

__all__ = [
    "DirichletSystem",
    "ExitMoments",
    "restrict_to_domain",
    "solve_exit_moments",
    "mean_exit_dual",
    "DIRECT_LIMIT",
    "RTOL",
]

DIRECT_LIMIT = 10_000
RTOL = 1e-10
VAR_SLACK = 1e-8


@dataclass(frozen=True, eq=False)
class DirichletSystem:
    """Generator rows and columns of the knots inside ``D``.

    Attributes
    ----------
    knots : ndarray of int
        Flat indices (in the parent grid) of the unknowns, increasing.
    A : csr_matrix
        ``A_D``, a nonsingular M-matrix when ``D`` is connected.
    position : ndarray of int
        Parent flat index to unknown number, -1 outside ``D``.
    """

    spec: GridSpec
    knots: np.ndarray
    A: sp.csr_matrix
    position: np.ndarray
    symmetric: bool

    @property
    def size(self):
        return len(self.knots)

    def unknown(self, x0):
        """Snap ``x0`` to the nearest knot; return ``(row, knot, distance)``."""
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.size != self.spec.dim:
            raise ValidationError(f"x0 has {x0.size} coordinates, grid has {self.spec.dim}")
        k = self.spec.nearest_knot(x0)
        row = int(self.position[self.spec.flat_index(k)])
        if row < 0:
            raise ValidationError(f"start point {x0.tolist()} does not snap to a knot inside the domain")
        return row, k, float(np.linalg.norm(k * self.spec.h - x0))

    def to_grid(self, values) -> GridFunction:
        full = np.zeros(self.spec.size)
        full[self.knots] = values
        return GridFunction(self.spec, full)


@dataclass(frozen=True)
class ExitMoments:
    """Deterministic exit-time moments. Unpacks as ``E, Var``."""

    E: float
    Var: float
    knot: tuple
    snap_distance: float
    residuals: tuple
    solver: str
    wall_time: float
    u: np.ndarray | None = None
    v: np.ndarray | None = None

    def __iter__(self):
        return iter((self.E, self.Var))

    def to_dict(self, include_timings=True):
        out = {"E": self.E, "Var": self.Var, "knot": list(self.knot), "snap_distance": self.snap_distance,
               "residuals": list(self.residuals), "solver": self.solver}
        if include_timings:
            out["wall_time"] = self.wall_time
        return out


def restrict_to_domain(G: SparseGenerator, D) -> DirichletSystem:
    """Keep the rows and columns of knots inside ``D``.

    ``D`` is box bounds, a predicate on positions or a knot mask. Mass
    that pointed outside ``D`` (or outside the grid box) is dropped, so
    rows next to the boundary have strictly positive sums.
    """
    spec = G.spec
    try:
        mask = domain_mask(spec, D)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    knots = np.flatnonzero(mask)
    if knots.size == 0:
        raise ValidationError("the domain contains no knots")
    A = G.A[knots][:, knots].tocsr()
    A.sort_indices()
    position = np.full(spec.size, -1, dtype=np.int64)
    position[knots] = np.arange(knots.size)
    diff = abs(A - A.T)
    scale = float(np.max(np.abs(A.diagonal())))
    symmetric = diff.nnz == 0 or float(diff.max()) <= 1e-12 * scale
    return DirichletSystem(spec, knots, A, position, bool(symmetric))


def _jacobi(A):
    inv = 1.0 / A.diagonal()
    return spla.LinearOperator(A.shape, matvec=lambda x: inv * x, dtype=float)


def _relres(A, x, b):
    return float(np.linalg.norm(A @ x - b) / np.linalg.norm(b))


class _Solver:
    """Factor or precondition once, then solve several right-hand sides."""

    def __init__(self, A, symmetric, rtol=RTOL):
        self.A = A
        self.rtol = rtol
        self.symmetric = symmetric
        self._lu = None
        if A.shape[0] < DIRECT_LIMIT:
            self._factor()
            self.name = "splu"
        elif symmetric:
            self._M = _jacobi(A)
            self.name = "cg+jacobi"
        else:
            try:
                ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=10)
                self._M = spla.LinearOperator(A.shape, matvec=ilu.solve, dtype=float)
            except RuntimeError:
                self._M = _jacobi(A)
            self.name = "bicgstab+ilu"

    def _factor(self):
        try:
            self._lu = spla.splu(self.A.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc

    def __call__(self, b, transpose=False):
        if self._lu is None:
            # tighten slightly so the true residual meets rtol after rounding
            kw = dict(rtol=0.1 * self.rtol, atol=0.0, maxiter=20 * self.A.shape[0])
            if self.symmetric:
                x, info = spla.cg(self.A, b, M=self._M, **kw)
            elif not transpose:
                x, info = spla.bicgstab(self.A, b, M=self._M, **kw)
            else:
                x, info = spla.bicgstab(self.A.T.tocsr(), b, M=_jacobi(self.A), **kw)
            A = self.A.T if transpose else self.A
            if info == 0 and _relres(A, x, b) <= self.rtol:
                return x
            # Krylov stalled: fall back to a direct solve
            self._factor()
            self.name += "->splu"
        x = self._lu.solve(b, trans="T" if transpose else "N")
        A = self.A.T if transpose else self.A
        res = _relres(A, x, b)
        if not res <= self.rtol:
            raise SolverError(f"relative residual {res:.3g} above {self.rtol:.1e}")
        return x


def solve_exit_moments(sys: DirichletSystem, x0, rtol: float = RTOL, keep: bool = False) -> ExitMoments:
    """Mean and variance of the exit time from the knot nearest ``x0``.

    Raises
    ------
    SolverError
        If a solve misses the residual tolerance.
    NumericalError
        If the variance is negative beyond ``1e-8 E^2`` or ``u``, ``v``
        lose their sign (the system is then not an M-matrix).
    """
    t0 = time.perf_counter()
    row, k, dist = sys.unknown(x0)
    hd = sys.spec.h ** sys.spec.dim
    solve = _Solver(sys.A, sys.symmetric, rtol)
    b = np.zeros(sys.size)
    b[row] = 1.0 / hd
    u = solve(b)
    v = solve(u)
    res = (_relres(sys.A, u, b), _relres(sys.A, v, u))
    # sign loss beyond solver noise means inconsistent input
    for name, w in (("u", u), ("v", v)):
        floor = -1e3 * rtol * float(np.max(np.abs(w)))
        if w.min() < floor:
            raise NumericalError(f"{name} has negative entries ({w.min():.3g}); A_D is not an M-matrix")
    E = hd * float(np.sum(u))
    second = 2.0 * hd * float(np.sum(v))
    var = second - E * E
    if not E > 0:
        raise NumericalError(f"non-positive mean exit time {E:.6g}")
    if var < -VAR_SLACK * E * E:
        raise NumericalError(f"negative variance {var:.6g} beyond tolerance")
    var = max(var, 0.0)
    wall = time.perf_counter() - t0
    return ExitMoments(E, var, tuple(int(c) for c in k), dist, res, solve.name, wall,
                       u if keep else None, v if keep else None)


def mean_exit_dual(sys: DirichletSystem, x0, rtol: float = RTOL) -> float:
    """``m[k0]`` from the adjoint solve ``A_D^T m = 1``.

    ``<A_D^-1 delta, 1> = <delta, A_D^-T 1>``, so this equals the mean from
    :func:`solve_exit_moments` up to solver tolerance, drift or not.
    """
    row, _, _ = sys.unknown(x0)
    solve = _Solver(sys.A, sys.symmetric, rtol)
    m = solve(np.ones(sys.size), transpose=True)
    return float(m[row])
