"""Assembly of positive-type matrices and Markov-jump generators.

The diffusion part ``A_n`` is assembled edge by edge from a weighted graph
on the lattice: every undirected edge ``{p, q}`` with weight ``w`` adds
``w`` to both diagonals and ``-w`` to both off-diagonals, so ``A_n`` is
symmetric with zero row sums by construction. In two dimensions each knot
``x`` owns the lattice rectangle spanned by ``r_i e_i`` and ``r_j g`` (``g``
chosen by the sign of ``a_ij`` on its cell) and contributes

* base weights ``a_ii / (d - 1)`` on the unit edges of the coordinate
  directions, taken at the midpoint of the adjacent unit square;
* ``|a_ij| / (r_i r_j)`` on the diagonal of its rectangle, taken at the
  rectangle centre, with ``r_i / r_j |a_ij|`` and ``r_j / r_i |a_ij|``
  removed from the unit edges it starts.

For constant coefficients this reproduces the classical stencil exactly.
Off-diagonal terms are dropped where the rectangle's support box meets a
cell boundary. Drift enters through the upwind matrix ``B_n``; the
generator is ``Q = -(A_n + B_n)``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .coeff import CoefficientField, hat_tensor, parameterize
from .errors import NonPositiveBracket, PositiveTypeViolation, ValidationError
from .grid import GridFunction, GridSpec, forward_diff

__all__ = [
    "SparseGenerator",
    "Polynomial",
    "ConsistencyDefect",
    "build_constant",
    "build_1d",
    "build_2d",
    "build_nd",
    "build_diffusion",
    "build_drift",
    "assemble",
    "consistency_defect",
    "dirichlet_energy",
    "grad_norm_sq",
]

_CLIP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SparseGenerator:
    """Positive-type matrix ``A = A_n + B_n`` on a grid box.

    Attributes
    ----------
    spec : GridSpec
    A : scipy.sparse.csr_matrix
        Positive-type matrix, rows and columns in flat knot order.
    leak : ndarray
        Rate from each row to knots outside the box; the row sum of ``A``.
    cell_ids : ndarray
        Partition cell id of each knot.
    boundary : ndarray of bool
        Rows whose stencil reach ``r`` leaves the box.
    interface : ndarray of bool
        Rows within reach of a cell boundary, whose entries may differ
        from the constant-coefficient stencil of their cell.
    sigma0 : float
        ``h**2`` times the smallest coordinate-direction rate.
    mg_prime : float
        Upper energy constant, see :func:`dirichlet_energy`.
    """

    spec: GridSpec
    A: sp.csr_matrix
    leak: np.ndarray
    cell_ids: np.ndarray
    boundary: np.ndarray
    interface: np.ndarray
    sigma0: float
    mg_prime: float
    irreducible: bool
    symmetric: bool

    @property
    def Q(self):
        """Generator ``-A``; off-diagonal rates are non-negative."""
        return (-self.A).tocsr()

    @property
    def size(self):
        return self.A.shape[0]

    @property
    def diagonal(self):
        return self.A.diagonal()

    @property
    def interior(self):
        return ~self.boundary & (self.leak == 0)

    @property
    def md_prime(self):
        """Lower energy constant: coordinate rates are at least ``sigma0 / h**2``."""
        return self.sigma0

    def row_sums(self):
        return np.asarray(self.A.sum(axis=1)).ravel()

    def neighborhood(self, k):
        """Offsets ``l - k`` of the non-zero entries in the row of knot ``k``."""
        row = int(self.spec.flat_index(np.asarray(k)))
        if row < 0:
            raise IndexError(f"knot {k} outside the grid")
        cols = self.A.indices[self.A.indptr[row]:self.A.indptr[row + 1]]
        return self.spec.multi_index(cols) - np.asarray(k)

    def neighborhood_sizes(self):
        """Number of stored entries per row, diagonal included."""
        return np.diff(self.A.indptr)

    def offsets(self):
        """Distinct off-diagonal offsets and the largest rate at each."""
        coo = self.A.tocoo()
        off = coo.row != coo.col
        v = self.spec.multi_index(coo.col[off]) - self.spec.multi_index(coo.row[off])
        uniq, inv = np.unique(v, axis=0, return_inverse=True)
        rates = np.zeros(len(uniq))
        np.maximum.at(rates, inv.ravel(), -coo.data[off])
        return uniq, rates

    # export

    def _meta(self):
        return {"format": "divjump.generator", **self.spec.to_dict(), "sigma0": self.sigma0,
                "mg_prime": self.mg_prime, "irreducible": self.irreducible, "symmetric": self.symmetric}

    def to_coo_text(self, path):
        """Coordinate text dump: one ``row col value`` line per entry."""
        coo = self.A.tocoo()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# " + json.dumps(self._meta()) + "\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {float(v)!r}\n")

    def to_npz(self, path):
        A = self.A
        np.savez(path, meta=np.array(json.dumps(self._meta())), data=A.data, indices=A.indices,
                 indptr=A.indptr, leak=self.leak, cell_ids=self.cell_ids, boundary=self.boundary,
                 interface=self.interface)

    @classmethod
    def from_npz(cls, path):
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            spec = GridSpec.from_dict(meta)
            A = sp.csr_matrix((z["data"], z["indices"], z["indptr"]), shape=(spec.size, spec.size))
            return cls(spec, A, z["leak"], z["cell_ids"], z["boundary"], z["interface"], meta["sigma0"],
                       meta["mg_prime"], meta["irreducible"], meta["symmetric"])


# finalization shared by all builders

def _finalize(spec, off, leak, cell_ids, boundary, interface, check=True):
    """Turn an off-diagonal matrix and leak vector into a SparseGenerator."""
    off = off.tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel() + leak
    if off.nnz:
        rows = np.repeat(np.arange(spec.size), np.diff(off.indptr))
        bad = off.data > 0
        if bad.any():
            scale = np.maximum(np.abs(diag[rows[bad]]), 1e-300)
            ratio = off.data[bad] / scale
            if check and ratio.max() > _CLIP_TOL:
                worst = np.flatnonzero(bad)[np.argmax(ratio)]
                raise PositiveTypeViolation(int(rows[worst]), f"positive off-diagonal {off.data[worst]:.6g} "
                                            f"in column {int(off.indices[worst])}")
            off.data[bad] = 0.0
        off.eliminate_zeros()
        diag = -np.asarray(off.sum(axis=1)).ravel() + leak
    if check and np.any(leak < -_CLIP_TOL * np.maximum(np.abs(diag), 1.0)):
        row = int(np.argmin(leak))
        raise PositiveTypeViolation(row, f"negative row sum {leak[row]:.6g}")
    leak = np.maximum(leak, 0.0)
    A = (off + sp.diags(diag)).tocsr()
    A.sort_indices()
    sigma0, witness = _sigma0(spec, A)
    if check and sigma0 <= 0:
        axis, row = witness
        raise NonPositiveBracket(axis, sigma0, spec.multi_index(row))
    pattern = off.copy()
    pattern.data[:] = 1.0
    ncomp, _ = connected_components(pattern, directed=True, connection="strong")
    sym = (abs(A - A.T)).max() == 0 if A.nnz else True
    gen = SparseGenerator(spec, A, leak, cell_ids, boundary, interface, sigma0, 0.0, ncomp == 1, bool(sym))
    uniq, rates = gen.offsets()
    mg = 0.0
    if len(uniq):
        l1 = np.abs(uniq).sum(axis=1)
        mg = 0.5 * spec.h ** 2 * float(np.max(((rates * l1)[:, None] * np.abs(uniq)).sum(axis=0)))
    object.__setattr__(gen, "mg_prime", mg)
    return gen


def _sigma0(spec, A):
    """``h**2`` times the smallest rate to a coordinate neighbour inside the box."""
    k = spec.indices()
    best, witness = math.inf, (0, 0)
    for i in range(spec.dim):
        for sgn in (1, -1):
            t = k.copy()
            t[:, i] += sgn
            col = spec.flat_index(t)
            ok = col >= 0
            if not ok.any():
                continue
            rows = np.flatnonzero(ok)
            vals = -np.asarray(A[rows, col[ok]]).ravel()
            j = int(np.argmin(vals))
            if vals[j] < best:
                best, witness = float(vals[j]), (i, int(rows[j]))
    if best is math.inf:
        return 0.0, witness
    return best * spec.h ** 2, witness


def _boundary_rows(spec, reach):
    """Rows whose stencil reach (per row and axis) leaves the box."""
    k = spec.indices()
    lo = np.asarray(spec.lo)
    hi = np.asarray(spec.hi)
    return np.any((k - lo < reach) | (hi - k < reach), axis=1)


# constant-coefficient stencil

def _stencil(a, r):
    """Offsets and rates (times ``h**2``) of the constant-coefficient stencil."""
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    r = np.asarray(r, dtype=np.int64)
    offsets, rates = [], []
    for i in range(d):
        bracket = a[i, i] - sum(r[i] / r[m] * abs(a[i, m]) for m in range(d) if m != i)
        if bracket <= 0:
            raise NonPositiveBracket(i, bracket)
        e = np.zeros(d, dtype=np.int64)
        e[i] = 1
        offsets += [e, -e]
        rates += [bracket, bracket]
    for i, j in itertools.combinations(range(d), 2):
        if a[i, j] == 0:
            continue
        w = np.zeros(d, dtype=np.int64)
        w[i] = r[i]
        w[j] = r[j] if a[i, j] > 0 else -r[j]
        c = abs(a[i, j]) / (r[i] * r[j])
        offsets += [w, -w]
        rates += [c, c]
    return np.array(offsets), np.array(rates)


def build_constant(a, r, spec: GridSpec) -> SparseGenerator:
    """Direct stencil for a constant tensor.

    Rates to ``+-e_i`` are ``(a_ii - sum_m (r_i / r_m) |a_im|) / h**2``;
    rates to ``+-(r_i e_i + sign(a_ij) r_j e_j)`` are
    ``|a_ij| / (h**2 r_i r_j)``; the diagonal balances the row.

    Raises
    ------
    NonPositiveBracket
        If a coordinate bracket is not strictly positive.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    hat_tensor(a)  # rejects non-symmetric input
    offsets, rates = _stencil(a, r)
    rates = rates / spec.h ** 2
    k = spec.indices()
    n = spec.size
    rows, cols, vals = [], [], []
    leak = np.zeros(n)
    for v, q in zip(offsets, rates):
        col = spec.flat_index(k + v)
        inside = col >= 0
        rows.append(np.flatnonzero(inside))
        cols.append(col[inside])
        vals.append(np.full(inside.sum(), -q))
        leak[~inside] += q
    off = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    reach = np.broadcast_to(np.asarray(r, dtype=np.int64), (n, spec.dim))
    return _finalize(spec, off, leak, np.zeros(n, dtype=np.int64), _boundary_rows(spec, reach),
                     np.zeros(n, dtype=bool))


# variable-coefficient assembly

def _require_parameters(fld, spec):
    if not fld.parameterized:
        fld = parameterize(fld, h=spec.h)
    return fld


def _owner_grid(spec, ext):
    lo = np.asarray(spec.lo) - ext
    shape = np.asarray(spec.shape) + 2 * ext
    owners = GridSpec(spec.h, tuple(lo), tuple(shape))
    return owners.indices()


def _pair_edges(fld: CoefficientField, spec: GridSpec):
    """Edge list ``(p, q, w)`` of the diffusion graph, ``w`` in units of 1/h**2."""
    d = spec.dim
    h = spec.h
    r_cells = fld.cell_r()
    s_cells = fld.cell_signs()
    ext = int(r_cells.max()) + 1
    x = _owner_grid(spec, ext)
    which = fld.cell_of(h * x)
    r = r_cells[which]
    P, Qe, W = [], [], []

    def at(offset2):
        # points given in half-lattice units relative to the owner
        return 0.5 * h * (2 * x + offset2)

    def add(p, q, w):
        P.append(p)
        Qe.append(q)
        W.append(w)

    if d == 1:
        a = fld.eval_a(at(np.ones((len(x), 1))))[:, 0, 0]
        add(x, x + 1, a)
    for i, j in itertools.combinations(range(d), 2):
        ei = np.zeros(d, dtype=np.int64)
        ej = np.zeros(d, dtype=np.int64)
        ei[i] = 1
        ej[j] = 1
        g = -s_cells[which, i, j]                      # +1 or -1 along axis j
        gv = g[:, None] * ej
        ri = r[:, i]
        rj = r[:, j]
        a_ii = fld.eval_a(at(ei + gv))[:, i, i]
        a_jj = fld.eval_a(at(ei + ej))[:, j, j]
        zr = ri[:, None] * ei + rj[:, None] * gv
        c = np.abs(fld.eval_a(at(zr))[:, i, j])
        if fld.cells[:-1]:
            c[fld.touches_interface(at(zr), h * r)] = 0.0
        add(x, x + ei, a_ii / (d - 1) - (ri / rj) * c)
        add(x, x + ej, a_jj / (d - 1))
        add(x, x + gv, -(rj / ri) * c)
        add(x + ri[:, None] * ei, x + rj[:, None] * gv, c / (ri * rj))
    return np.concatenate(P), np.concatenate(Qe), np.concatenate(W) / h ** 2


def _edges_to_generator(fld, spec, p, q, w, check=True):
    n = spec.size
    fp = spec.flat_index(p)
    fq = spec.flat_index(q)
    keep = (w != 0) & ((fp >= 0) | (fq >= 0))
    fp, fq, w = fp[keep], fq[keep], w[keep]
    both = (fp >= 0) & (fq >= 0)
    rows = np.concatenate([fp[both], fq[both]])
    cols = np.concatenate([fq[both], fp[both]])
    vals = -np.concatenate([w[both], w[both]])
    off = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    leak = np.zeros(n)
    one = ~both
    inner = np.where(fp[one] >= 0, fp[one], fq[one])
    np.add.at(leak, inner, w[one])
    return _finalize(spec, off, leak, *_row_meta(fld, spec), check=check)


def _row_meta(fld, spec):
    x = spec.positions()
    which = fld.cell_of(x)
    ids = np.array([c.id for c in fld.cells], dtype=np.int64)[which]
    r = fld.cell_r()[which]
    boundary = _boundary_rows(spec, np.maximum(r, 1))
    # a row collects edges from owners up to r away, whose cross terms
    # switch off when the box of half-width r around the long-edge midpoint
    # meets the interface: rows farther than 1.5 r + 1 from it are untouched
    reach = spec.h * (1.5 * fld.cell_r().max(axis=0) + 1)
    interface = fld.touches_interface(x, reach) if fld.cells[:-1] else np.zeros(spec.size, dtype=bool)
    return ids, boundary, interface


def build_1d(fld: CoefficientField, spec: GridSpec) -> SparseGenerator:
    """Three-point divergence scheme with ``a`` taken at half-knots."""
    if fld.dim != 1 or spec.dim != 1:
        raise ValidationError("build_1d needs a one-dimensional field and grid")
    fld = _require_parameters(fld, spec)
    return _edges_to_generator(fld, spec, *_pair_edges(fld, spec))


def build_2d(fld: CoefficientField, spec: GridSpec) -> SparseGenerator:
    """Seven-point positive-type discretization of a planar field."""
    if fld.dim != 2 or spec.dim != 2:
        raise ValidationError("build_2d needs a two-dimensional field and grid")
    fld = _require_parameters(fld, spec)
    return _edges_to_generator(fld, spec, *_pair_edges(fld, spec))


def build_nd(fld: CoefficientField, spec: GridSpec) -> SparseGenerator:
    """Sum of planar schemes over coordinate pairs, diagonals split ``1/(d-1)``.

    Positive type is checked on the sum only.
    """
    if fld.dim < 3 or spec.dim != fld.dim:
        raise ValidationError("build_nd needs dimension >= 3")
    fld = _require_parameters(fld, spec)
    return _edges_to_generator(fld, spec, *_pair_edges(fld, spec))


def build_diffusion(fld: CoefficientField, spec: GridSpec) -> SparseGenerator:
    if fld.dim != spec.dim:
        raise ValidationError(f"field dimension {fld.dim} does not match grid dimension {spec.dim}")
    if fld.dim == 1:
        return build_1d(fld, spec)
    if fld.dim == 2:
        return build_2d(fld, spec)
    return build_nd(fld, spec)


def _drift_parts(fld, spec):
    n = spec.size
    d = spec.dim
    b = fld.eval_b(spec.positions())
    k = spec.indices()
    rows, cols, vals = [], [], []
    leak = np.zeros(n)
    for i in range(d):
        bi = b[:, i]
        for sel, step in ((bi < 0, 1), (bi > 0, -1)):
            if not sel.any():
                continue
            src = np.flatnonzero(sel)
            t = k[src].copy()
            t[:, i] += step
            col = spec.flat_index(t)
            rate = np.abs(bi[src]) / spec.h
            inside = col >= 0
            rows.append(src[inside])
            cols.append(col[inside])
            vals.append(-rate[inside])
            np.add.at(leak, src[~inside], rate[~inside])
    if rows:
        off = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    else:
        off = sp.coo_matrix((n, n))
    return off, leak


def build_drift(fld: CoefficientField, spec: GridSpec) -> SparseGenerator:
    """Upwind matrix: ``|b_i| / h`` towards ``-sign(b_i) e_i``, balanced on the diagonal."""
    off, leak = _drift_parts(fld, spec)
    n = spec.size
    return _finalize(spec, off, leak, np.zeros(n, dtype=np.int64), np.zeros(n, dtype=bool),
                     np.zeros(n, dtype=bool), check=False)


def assemble(fld: CoefficientField, spec: GridSpec) -> SparseGenerator:
    """Positive-type matrix ``A_n + B_n``; its negative is the jump generator.

    Raises
    ------
    PositiveTypeViolation
        With the worst row, if an off-diagonal is positive or a row sum
        negative beyond rounding.
    NonPositiveBracket
        If some coordinate-direction rate vanishes.
    """
    if fld.dim != spec.dim:
        raise ValidationError(f"field dimension {fld.dim} does not match grid dimension {spec.dim}")
    fld = _require_parameters(fld, spec)
    p, q, w = _pair_edges(fld, spec)
    diff = _edges_to_generator(fld, spec, p, q, w)
    if not fld.has_drift:
        return diff
    off_b, leak_b = _drift_parts(fld, spec)
    off = diff.A - sp.diags(diff.A.diagonal()) + off_b.tocsr()
    return _finalize(spec, off, diff.leak + leak_b, diff.cell_ids, diff.boundary, diff.interface)


# consistency

@dataclass(frozen=True)
class Polynomial:
    """Quadratic ``p(x) = c0 + grad . x + x^T hess x / 2``."""

    c0: float
    grad: np.ndarray
    hess: np.ndarray
    label: str = ""

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.c0 + x @ self.grad + 0.5 * np.einsum("ni,ij,nj->n", x, self.hess, x)

    @classmethod
    def monomial(cls, exponents):
        """Monomial ``prod x_i**e_i`` of total degree at most two."""
        e = np.asarray(exponents, dtype=np.int64)
        if np.any(e < 0) or e.sum() > 2:
            raise ValueError(f"monomial {tuple(e)} has degree above 2")
        d = len(e)
        grad = np.zeros(d)
        hess = np.zeros((d, d))
        nz = np.flatnonzero(e)
        if e.sum() == 1:
            grad[nz[0]] = 1.0
        elif len(nz) == 1 and e.sum() == 2:
            hess[nz[0], nz[0]] = 2.0
        elif len(nz) == 2:
            hess[nz[0], nz[1]] = hess[nz[1], nz[0]] = 1.0
        label = "*".join(f"x{i + 1}^{e[i]}" if e[i] > 1 else f"x{i + 1}" for i in nz) or "1"
        return cls(1.0 if e.sum() == 0 else 0.0, grad, hess, label)

    @classmethod
    def basis(cls, d):
        """``1``, ``x_i``, ``x_i x_j`` and ``x_i**2``."""
        out = [cls.monomial([0] * d)]
        for i in range(d):
            out.append(cls.monomial(np.eye(d, dtype=np.int64)[i]))
        for i, j in itertools.combinations_with_replacement(range(d), 2):
            e = np.zeros(d, dtype=np.int64)
            e[i] += 1
            e[j] += 1
            out.append(cls.monomial(e))
        return out


@dataclass(frozen=True)
class ConsistencyDefect:
    """Pointwise defect ``A(x) p(x) - (A_n p_n)(x)`` at a set of knots."""

    knots: np.ndarray
    polynomial: Polynomial
    exact: np.ndarray
    discrete: np.ndarray

    @property
    def defect(self):
        return self.exact - self.discrete

    @property
    def sup(self):
        return float(np.max(np.abs(self.defect))) if self.defect.size else 0.0


def _div_a(fld, x, step=1e-5):
    """``sum_i d a_ij / d x_i`` by central differences; zero on constant cells."""
    out = np.zeros_like(x)
    which = fld.cell_of(x)
    for pos, c in enumerate(fld.cells):
        sel = which == pos
        if c.is_constant or not sel.any():
            continue
        xs = x[sel]
        for i in range(fld.dim):
            dx = np.zeros(fld.dim)
            dx[i] = step * max(1.0, float(np.max(np.abs(xs[:, i]))))
            ap = np.asarray(c.tensor(xs + dx)).reshape(-1, fld.dim, fld.dim)
            am = np.asarray(c.tensor(xs - dx)).reshape(-1, fld.dim, fld.dim)
            out[sel] += (ap[:, i, :] - am[:, i, :]) / (2 * dx[i])
    return out


def apply_operator(fld: CoefficientField, p: Polynomial, x):
    """Continuum ``A p = -div(a grad p) + b . grad p`` at points ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = fld.eval_a(x)
    b = fld.eval_b(x)
    gp = p.grad + x @ p.hess
    return -np.einsum("nj,nj->n", _div_a(fld, x), gp) - np.einsum("nij,ij->n", a, p.hess) + np.einsum("ni,ni->n", b, gp)


def consistency_defect(G: SparseGenerator, fld: CoefficientField, p: Polynomial, knots=None) -> ConsistencyDefect:
    """Consistency defect of ``G`` against the operator of ``fld``.

    Parameters
    ----------
    knots : array_like, optional
        Multi-indices; defaults to every interior row of ``G``.

    Raises
    ------
    ValueError
        If ``p`` has degree above two or a knot is not interior.
    """
    if not isinstance(p, Polynomial):
        raise ValueError("p must be a Polynomial of degree at most 2")
    spec = G.spec
    if knots is None:
        rows = np.flatnonzero(G.interior)
    else:
        rows = spec.flat_index(np.atleast_2d(knots))
        if np.any(rows < 0) or not np.all(G.interior[rows]):
            raise ValueError("consistency is only defined at interior knots")
    pn = p(spec.positions())
    discrete = (G.A @ pn)[rows]
    exact = apply_operator(fld, p, spec.positions()[rows])
    return ConsistencyDefect(spec.multi_index(rows), p, exact, discrete)


# energy

def grad_norm_sq(u: GridFunction) -> float:
    """``sum_i ||U_i u||_2**2`` with forward difference quotients ``U_i``."""
    return float(sum(np.sum(forward_diff(u, i).values ** 2) for i in range(u.spec.dim)))


def dirichlet_energy(G: SparseGenerator, u: GridFunction) -> float:
    """Quadratic form ``<u, A u>``.

    For symmetric ``A`` and ``u`` supported away from the box edge,
    ``md_prime * S <= <u, A u> <= mg_prime * S`` with
    ``S = sum_i ||U_i u||**2``.

    Raises
    ------
    ValidationError
        If the support of ``u`` reaches a boundary row.
    """
    if u.spec != G.spec:
        raise ValidationError("grid function lives on a different grid")
    support = u.values != 0
    if np.any(support & ~G.interior):
        raise ValidationError("support of u touches the boundary")
    return float(u.values @ (G.A @ u.values))
