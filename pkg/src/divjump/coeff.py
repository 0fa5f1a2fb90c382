"""Coefficient data, partition cells, validation and parameter selection.

A :class:`CoefficientField` holds a diffusion tensor ``a(x)`` and a drift
``b(x)`` on a partition of space into cells. Blocks are finite unions of
axis-aligned rectangles ``[lo, hi)``; the background cell covers everything
not claimed by a block. Each cell carries a constant tensor or a callable,
the sign pattern of its off-diagonal entries and, once parameterized, the
integer vector ``r`` that shapes the lattice neighbourhood.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import NoParameters, NonPositiveBracket, NotSymmetricError, ValidationError

__all__ = [
    "R_MAX",
    "hat_tensor",
    "PartitionCell",
    "CoefficientField",
    "HatReport",
    "validate_hat_definite",
    "check_ellipticity",
    "omega",
    "select_parameters",
    "parameterize",
    "pf_seed",
    "candidate_vectors",
]

R_MAX = 16
SAMPLE_DENSITY = 4
MAX_DEPTH = 6
_SYM_TOL = 1e-12
_ZERO_TOL = 1e-14
_GEOM_TOL = 1e-9


def _check_symmetric(a, what="tensor"):
    a = np.asarray(a, dtype=float)
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - np.swapaxes(a, -1, -2)), initial=0.0) > _SYM_TOL * scale:
        raise NotSymmetricError(f"{what} is not symmetric")
    return a


def hat_tensor(a):
    """Auxiliary tensor with the same diagonal and off-diagonals ``-|a_ij|``.

    Accepts a single ``(d, d)`` matrix or a stack ``(..., d, d)``.
    """
    a = _check_symmetric(a)
    out = -np.abs(a)
    d = a.shape[-1]
    idx = np.arange(d)
    out[..., idx, idx] = a[..., idx, idx]
    return out


def _rect_array(rect, dim):
    r = np.asarray(rect, dtype=float).reshape(dim, 2)
    if np.any(r[:, 1] <= r[:, 0]):
        raise ValidationError(f"degenerate rectangle {r.tolist()}")
    return r


@dataclass(frozen=True, eq=False)
class PartitionCell:
    """One cell ``D_l`` of the partition.

    Parameters
    ----------
    id : int
        Cell label.
    rects : tuple of ndarray
        Rectangles ``(d, 2)`` whose union is the cell. Empty for the
        background cell.
    tensor : ndarray or callable
        Constant ``(d, d)`` tensor, or a function mapping ``(N, d)`` points
        to ``(N, d, d)`` tensors.
    drift : ndarray, callable or None
        Constant ``(d,)`` drift or a function ``(N, d) -> (N, d)``.
    signs : ndarray or None
        ``(d, d)`` matrix of +1/-1, the sign of ``a_ij`` on the cell
        (zero counts as +1).
    r : tuple of int or None
        Neighbourhood parameters ``r(l)``.
    r_fixed : bool
        True when ``r`` came from user input rather than the search.
    """

    id: int
    rects: tuple
    tensor: object
    drift: object = None
    signs: np.ndarray | None = None
    r: tuple | None = None
    r_fixed: bool = False
    depth: int = 0

    @property
    def is_constant(self):
        return not callable(self.tensor)

    @property
    def is_background(self):
        return len(self.rects) == 0

    def contains(self, x):
        x = np.atleast_2d(x)
        out = np.zeros(len(x), dtype=bool)
        for rect in self.rects:
            tol = _GEOM_TOL * np.maximum(1.0, np.abs(rect))
            out |= np.all((x >= rect[:, 0] - tol[:, 0]) & (x < rect[:, 1] - tol[:, 1]), axis=1)
        return out

    def bounding_box(self, window):
        if self.is_background:
            return np.asarray(window, dtype=float)
        rs = np.stack(self.rects)
        return np.stack([rs[:, :, 0].min(axis=0), rs[:, :, 1].max(axis=0)], axis=1)


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Piecewise-defined diffusion tensor and drift.

    ``cells`` lists the blocks followed by exactly one background cell.
    ``window`` is the region used when sampling callable coefficients.
    """

    dim: int
    cells: tuple
    window: np.ndarray
    md: float | None = None
    mg: float | None = None
    source: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        window = np.asarray(self.window, dtype=float).reshape(self.dim, 2)
        object.__setattr__(self, "window", window)
        if not self.cells or not self.cells[-1].is_background:
            raise ValidationError("the last cell must be the background cell")
        if any(c.is_background for c in self.cells[:-1]):
            raise ValidationError("only one background cell is allowed")
        rects = [r for c in self.cells[:-1] for r in c.rects]
        for p, q in itertools.combinations(rects, 2):
            overlap = np.minimum(p[:, 1], q[:, 1]) - np.maximum(p[:, 0], q[:, 0])
            if np.all(overlap > _GEOM_TOL):
                raise ValidationError("block rectangles must not overlap")

    # constructors

    @classmethod
    def constant(cls, a, b=None, window=None, r=None, md=None, mg=None):
        a = _check_symmetric(np.atleast_2d(np.asarray(a, dtype=float)))
        d = a.shape[0]
        if window is None:
            window = [[0.0, 1.0]] * d
        cell = PartitionCell(0, (), a, _as_drift(b, d), r=_as_r(r, d), r_fixed=r is not None)
        return cls(d, (cell,), window, md, mg)

    @classmethod
    def from_callable(cls, a_fn, b_fn=None, dim=None, window=None, md=None, mg=None):
        if dim is None:
            dim = np.asarray(window).shape[0]
        if window is None:
            window = [[0.0, 1.0]] * dim
        cell = PartitionCell(0, (), a_fn, b_fn)
        return cls(dim, (cell,), window, md, mg)

    @classmethod
    def piecewise(cls, blocks: Sequence[dict], background: dict, window, md=None, mg=None, source=None):
        """Build from block dictionaries with keys ``rects``, ``tensor``,
        optional ``drift`` and ``r``."""
        window = np.asarray(window, dtype=float)
        d = window.shape[0]
        cells = []
        for spec_ in list(blocks) + [background]:
            rects = tuple(_rect_array(r, d) for r in spec_.get("rects", ()))
            if spec_ is not background and not rects:
                raise ValidationError("a block needs at least one rectangle")
            tensor = spec_["tensor"]
            if not callable(tensor):
                tensor = _check_symmetric(np.atleast_2d(np.asarray(tensor, dtype=float)))
                if tensor.shape != (d, d):
                    raise ValidationError(f"tensor shape {tensor.shape} for dimension {d}")
            r = spec_.get("r")
            cells.append(PartitionCell(len(cells), rects, tensor, _as_drift(spec_.get("drift"), d),
                                       r=_as_r(r, d), r_fixed=r is not None))
        return cls(d, tuple(cells), window, md, mg, source)

    @classmethod
    def from_dict(cls, doc):
        """Ingest the JSON coefficient document."""
        d = int(doc["dim"])
        window = doc.get("window", [[0.0, 1.0]] * d)
        ell = doc.get("ellipticity", {})
        return cls.piecewise(doc.get("blocks", []), doc["background"], window,
                             ell.get("md"), ell.get("mg"), source=doc)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        if self.source is not None:
            return json.loads(json.dumps(self.source))
        if any(not c.is_constant or callable(c.drift) for c in self.cells):
            raise ValidationError("callable coefficients cannot be serialized")

        def block(c):
            out = {"tensor": np.asarray(c.tensor).tolist()}
            if c.rects:
                out["rects"] = [r.tolist() for r in c.rects]
            if c.drift is not None:
                out["drift"] = np.asarray(c.drift).tolist()
            if c.r_fixed:
                out["r"] = list(c.r)
            return out

        doc = {"dim": self.dim, "window": self.window.tolist(),
               "blocks": [block(c) for c in self.cells[:-1]], "background": block(self.cells[-1])}
        if self.md is not None or self.mg is not None:
            doc["ellipticity"] = {"md": self.md, "mg": self.mg}
        return doc

    # queries

    @property
    def background(self):
        return self.cells[-1]

    @property
    def is_piecewise_constant(self):
        return all(c.is_constant for c in self.cells)

    @property
    def has_drift(self):
        for c in self.cells:
            if callable(c.drift):
                return True
            if c.drift is not None and np.any(np.asarray(c.drift) != 0):
                return True
        return False

    @property
    def parameterized(self):
        return all(c.r is not None and c.signs is not None for c in self.cells)

    def cell(self, cell_id):
        for c in self.cells:
            if c.id == cell_id:
                return c
        raise KeyError(cell_id)

    def cell_of(self, x):
        """Index into ``cells`` (not the id) of the cell containing each point."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.full(len(x), len(self.cells) - 1, dtype=np.int64)
        free = np.ones(len(x), dtype=bool)
        for pos, c in enumerate(self.cells[:-1]):
            hit = free & c.contains(x)
            out[hit] = pos
            free &= ~hit
        return out

    def eval_a(self, x):
        """Tensor at points ``x`` of shape ``(N, d)``; returns ``(N, d, d)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        which = self.cell_of(x)
        out = np.empty((len(x), self.dim, self.dim))
        for pos, c in enumerate(self.cells):
            sel = which == pos
            if not sel.any():
                continue
            if c.is_constant:
                out[sel] = c.tensor
            else:
                out[sel] = np.asarray(c.tensor(x[sel]), dtype=float).reshape(-1, self.dim, self.dim)
        return out

    def eval_b(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        which = self.cell_of(x)
        out = np.zeros((len(x), self.dim))
        for pos, c in enumerate(self.cells):
            if c.drift is None:
                continue
            sel = which == pos
            if not sel.any():
                continue
            if callable(c.drift):
                out[sel] = np.asarray(c.drift(x[sel]), dtype=float).reshape(-1, self.dim)
            else:
                out[sel] = c.drift
        return out

    def touches_interface(self, center, half):
        """True where the closed box ``center +- half`` meets a cell boundary.

        A box meets the interface set when it intersects the closure of a
        block rectangle without lying in its interior. Seams between
        rectangles of the same block count as interface (conservative).
        """
        center = np.atleast_2d(center)
        half = np.broadcast_to(half, center.shape)
        lo, hi = center - half, center + half
        out = np.zeros(len(center), dtype=bool)
        for c in self.cells[:-1]:
            for rect in c.rects:
                tol = _GEOM_TOL * np.maximum(1.0, np.abs(rect))
                meets = np.all((lo <= rect[:, 1] + tol[:, 1]) & (hi >= rect[:, 0] - tol[:, 0]), axis=1)
                inside = np.all((lo > rect[:, 0] + tol[:, 0]) & (hi < rect[:, 1] - tol[:, 1]), axis=1)
                out |= meets & ~inside
        return out

    def cell_r(self):
        """``(ncells, d)`` array of parameters, in ``cells`` order."""
        if not self.parameterized:
            raise ValidationError("field has not been parameterized")
        return np.array([c.r for c in self.cells], dtype=np.int64)

    def cell_signs(self):
        if not self.parameterized:
            raise ValidationError("field has not been parameterized")
        return np.stack([c.signs for c in self.cells]).astype(np.int64)

    def with_cells(self, cells):
        return replace(self, cells=tuple(cells))


def _as_drift(b, d):
    if b is None or callable(b):
        return b
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.shape != (d,):
        raise ValidationError(f"drift shape {b.shape} for dimension {d}")
    return b


def _as_r(r, d):
    if r is None:
        return None
    r = tuple(int(v) for v in np.atleast_1d(r))
    if len(r) != d or min(r) < 1:
        raise ValidationError(f"r must be {d} positive integers, got {r}")
    return r


# sampling helpers

def _sample_axes(box, h, density):
    """Sample coordinates aligned with the lattice ``h Z`` at spacing ``h/density``."""
    axes = []
    for lo, hi in box:
        k0 = math.floor(lo / h + _GEOM_TOL)
        k1 = math.ceil(hi / h - _GEOM_TOL)
        axes.append(h * np.arange(k0 * density, k1 * density + 1) / density)
    return axes


def _cell_samples(fld: CoefficientField, pos: int, h, density):
    """Sample a cell on a lattice-aligned grid; returns axes, points, mask, tensors."""
    c = fld.cells[pos]
    box = c.bounding_box(fld.window)
    box = np.stack([np.maximum(box[:, 0], fld.window[:, 0]), np.minimum(box[:, 1], fld.window[:, 1])], axis=1)
    axes = _sample_axes(box, h, density)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    mask = fld.cell_of(pts) == pos
    a = np.zeros((len(pts), fld.dim, fld.dim))
    if mask.any():
        if c.is_constant:
            a[mask] = c.tensor
        else:
            a[mask] = np.asarray(c.tensor(pts[mask]), dtype=float).reshape(-1, fld.dim, fld.dim)
    return axes, pts, mask, a


def _sign_matrix(a_samples):
    """Sign pattern of off-diagonals; None when some entry changes sign."""
    d = a_samples.shape[-1]
    s = np.ones((d, d), dtype=np.int64)
    for i, j in itertools.combinations(range(d), 2):
        v = a_samples[:, i, j]
        pos = np.any(v > _ZERO_TOL)
        neg = np.any(v < -_ZERO_TOL)
        if pos and neg:
            return None
        s[i, j] = s[j, i] = -1 if neg else 1
    return s


def cell_signs(fld: CoefficientField, pos: int, h=None, density=SAMPLE_DENSITY):
    c = fld.cells[pos]
    if c.is_constant:
        return _sign_matrix(np.asarray(c.tensor)[None])
    _, _, mask, a = _cell_samples(fld, pos, h if h is not None else _default_h(fld), density)
    return _sign_matrix(a[mask]) if mask.any() else np.ones((fld.dim, fld.dim), dtype=np.int64)


def _default_h(fld):
    return float(np.min(fld.window[:, 1] - fld.window[:, 0])) / 32


# validation

@dataclass(frozen=True)
class HatReport:
    """Outcome of the auxiliary-tensor definiteness scan."""

    passed: bool
    min_eigenvalue: float
    witness: np.ndarray | None
    cell_id: int | None

    def __str__(self):
        state = "pass" if self.passed else "FAIL"
        where = "" if self.witness is None else f" at x={np.round(self.witness, 6).tolist()} (cell {self.cell_id})"
        return f"hat-definiteness {state}: min eigenvalue {self.min_eigenvalue:.6g}{where}"


def _representative(fld, pos):
    c = fld.cells[pos]
    if not c.is_background:
        return c.rects[0].mean(axis=1)
    axes = [np.linspace(lo, hi, 9) for lo, hi in fld.window]
    pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    hit = pts[fld.cell_of(pts) == pos]
    return hit[len(hit) // 2] if len(hit) else fld.window.mean(axis=1)


def _scan(fld, pos, samples, transform):
    """Minimum of ``transform(tensors)`` over a cell with its arg-min point."""
    c = fld.cells[pos]
    if c.is_constant:
        vals = transform(np.asarray(c.tensor)[None])
        return float(vals[0]), _representative(fld, pos)
    axes = [np.linspace(max(lo, wlo), min(hi, whi), samples)
            for (lo, hi), (wlo, whi) in zip(c.bounding_box(fld.window), fld.window)]
    pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    pts = pts[fld.cell_of(pts) == pos]
    if len(pts) == 0:
        return math.inf, None
    a = _check_symmetric(np.asarray(c.tensor(pts), dtype=float).reshape(-1, fld.dim, fld.dim), "sampled tensor")
    vals = transform(a)
    k = int(np.argmin(vals))
    return float(vals[k]), pts[k]


def validate_hat_definite(fld: CoefficientField, samples: int = 33) -> HatReport:
    """Scan the smallest eigenvalue of the auxiliary tensor over all cells.

    Constant cells are exact; callable cells are sampled on ``samples``
    points per axis of their bounding box.
    """
    worst = (math.inf, None, None)
    for pos, c in enumerate(fld.cells):
        val, x = _scan(fld, pos, samples, lambda a: np.linalg.eigvalsh(hat_tensor(a))[:, 0])
        if val < worst[0]:
            worst = (val, x, c.id)
    return HatReport(worst[0] > 0, worst[0], None if worst[1] is None else np.asarray(worst[1]), worst[2])


def check_ellipticity(fld: CoefficientField, samples: int = 33):
    """Observed ellipticity bounds ``(lam_min, lam_max)``.

    Raises
    ------
    ValidationError
        If the tensor is not positive definite somewhere, or the declared
        bounds ``md``/``mg`` do not enclose the observed ones.
    """
    lo, hi = math.inf, -math.inf
    for pos in range(len(fld.cells)):
        vmin, x = _scan(fld, pos, samples, lambda a: np.linalg.eigvalsh(a)[:, 0])
        vmax, _ = _scan(fld, pos, samples, lambda a: -np.linalg.eigvalsh(a)[:, -1])
        lo, hi = min(lo, vmin), max(hi, -vmax)
        if vmin <= 0:
            raise ValidationError(f"tensor not positive definite at x={np.asarray(x).tolist()} "
                                  f"(eigenvalue {vmin:.6g})")
    tol = 1e-12 * max(1.0, hi)
    if fld.md is not None and fld.md > lo + tol:
        raise ValidationError(f"declared md={fld.md} exceeds observed minimum eigenvalue {lo:.6g}")
    if fld.mg is not None and fld.mg < hi - tol:
        raise ValidationError(f"declared mg={fld.mg} below observed maximum eigenvalue {hi:.6g}")
    return lo, hi


# bracket and parameter search

def _brackets_const(a, r):
    r = np.asarray(r, dtype=float)
    ratio = r[:, None] / r[None, :]
    off = np.abs(a) * ratio
    np.fill_diagonal(off, 0.0)
    return np.diag(a) - off.sum(axis=1)


def omega(fld: CoefficientField, cell: int, r, h=None, density: int = SAMPLE_DENSITY) -> float:
    """Worst coordinate-direction bracket of a cell for parameters ``r``.

    For every knot ``x`` of the cell and axis ``i`` the bracket is the
    infimum of ``a_ii`` minus ``sum_m (r_i / r_m) sup |a_im|``, both taken
    over the box ``S_n(r, x)`` intersected with the cell. Exact for
    constant cells, sampled at ``h / density`` otherwise.

    Parameters
    ----------
    cell : int
        Position of the cell in ``fld.cells``.
    """
    c = fld.cells[cell]
    r = np.asarray(r, dtype=np.int64)
    if c.is_constant:
        return float(np.min(_brackets_const(np.asarray(c.tensor), r)))
    if h is None:
        h = _default_h(fld)
    return _omega_sampled(_SampledCell.build(fld, cell, h, density), r)


@dataclass
class _SampledCell:
    shape: tuple
    mask: np.ndarray
    a: np.ndarray
    knots: np.ndarray
    density: int

    @classmethod
    def build(cls, fld, pos, h, density):
        axes, pts, mask, a = _cell_samples(fld, pos, h, density)
        shape = tuple(len(ax) for ax in axes)
        # sample points that are lattice knots and lie in the cell
        on_lattice = np.ones(shape, dtype=bool)
        for i, n in enumerate(shape):
            sl = [np.newaxis] * len(shape)
            sl[i] = slice(None)
            on_lattice &= (np.arange(n) % density == 0)[tuple(sl)]
        knots = on_lattice.ravel() & mask
        return cls(shape, mask.reshape(shape), a.reshape(shape + a.shape[1:]), knots.reshape(shape), density)


def _omega_sampled(s: _SampledCell, r):
    d = len(s.shape)
    if not s.knots.any():
        return math.inf
    size = tuple(int(2 * ri * s.density + 1) for ri in r)
    worst = math.inf
    sups = {}
    for i in range(d):
        aii = np.where(s.mask, s.a[..., i, i], np.inf)
        inf_aii = ndimage.minimum_filter(aii, size=size, mode="constant", cval=np.inf)
        val = inf_aii
        for m in range(d):
            if m == i:
                continue
            key = (min(i, m), max(i, m))
            if key not in sups:
                aim = np.where(s.mask, np.abs(s.a[..., key[0], key[1]]), 0.0)
                sups[key] = ndimage.maximum_filter(aim, size=size, mode="constant", cval=0.0)
            val = val - (r[i] / r[m]) * sups[key]
        worst = min(worst, float(np.min(val[s.knots])))
    return worst


def _cell_hat_envelope(fld, pos, h, density):
    """Worst-case constant auxiliary tensor: inf diagonal, sup |off-diagonal|."""
    c = fld.cells[pos]
    if c.is_constant:
        return hat_tensor(c.tensor)
    _, _, mask, a = _cell_samples(fld, pos, h, density)
    a = a[mask]
    if len(a) == 0:
        return np.eye(fld.dim)
    env = -np.abs(a).max(axis=0)
    idx = np.arange(fld.dim)
    env[idx, idx] = a[:, idx, idx].min(axis=0)
    return env


def pf_seed(ahat, r_max: int = R_MAX):
    """Parameter guess from the Perron-Frobenius eigenvector of ``ahat``.

    For each irreducible block of the off-diagonal pattern, the eigenvector
    ``q`` of the smallest eigenvalue is positive and ``r_i ~ 1 / q_i``
    makes every bracket equal that eigenvalue. The ratios are scaled by
    ``s = 1, 2, ...`` and rounded; the first integer vector whose brackets
    on ``ahat`` are positive is kept. Returns None when the block is not
    definite or no such vector stays within ``r_max``.
    """
    ahat = np.asarray(ahat, dtype=float)
    d = ahat.shape[0]
    off = np.abs(ahat) > _ZERO_TOL
    np.fill_diagonal(off, False)
    ncomp, labels = connected_components(csr_matrix(off), directed=False)
    r = np.ones(d, dtype=np.int64)
    for comp in range(ncomp):
        idx = np.flatnonzero(labels == comp)
        if len(idx) == 1:
            continue
        sub = ahat[np.ix_(idx, idx)]
        w, v = np.linalg.eigh(sub)
        if w[0] <= 0:
            return None
        q = np.abs(v[:, 0])
        ratio = q.max() / q
        for s_ in range(1, r_max + 1):
            ints = np.maximum(np.rint(s_ * ratio), 1).astype(np.int64)
            if ints.max() > r_max:
                return None
            if np.min(_brackets_const(sub, ints)) > 0:
                g = math.gcd(*(int(x) for x in ints))
                r[idx] = ints // g
                break
        else:
            return None
    return tuple(int(v) for v in r)


def candidate_vectors(d: int, r_max: int = R_MAX):
    """All ``r`` in ``{1..r_max}^d`` ordered by max component, then lexicographically."""
    for top in range(1, r_max + 1):
        for r in itertools.product(range(1, top + 1), repeat=d):
            if max(r) == top:
                yield r


def select_parameters(fld: CoefficientField, cell: int, h=None, r_max: int = R_MAX,
                      density: int = SAMPLE_DENSITY):
    """First ``r`` in canonical order with ``omega > 0``.

    The Perron-Frobenius guess is tried first; when it certifies, the
    search is capped at its largest component, since a solution at that
    level is known to exist.

    Raises
    ------
    NoParameters
        If no vector up to ``r_max`` gives a positive bracket.
    """
    c = fld.cells[cell]
    if h is None:
        h = _default_h(fld)
    sampled = None if c.is_constant else _SampledCell.build(fld, cell, h, density)

    def w(r):
        if sampled is None:
            return float(np.min(_brackets_const(np.asarray(c.tensor), r)))
        return _omega_sampled(sampled, np.asarray(r))

    limit = r_max
    seed = pf_seed(_cell_hat_envelope(fld, cell, h, density), r_max)
    if seed is not None and w(seed) > 0:
        limit = max(seed)
    best = -math.inf
    for r in candidate_vectors(fld.dim, limit):
        val = w(r)
        if val > 0:
            return r
        best = max(best, val)
    raise NoParameters(c.id, best, r_max)


def _split_plane(fld, pos, h, density):
    """Axis and coordinate separating the signs of an off-diagonal entry.

    Looks for an axis-aligned plane with all samples of one sign on each
    side; returns None when the sign set is not separable that way.
    """
    _, pts, mask, a = _cell_samples(fld, pos, h, density)
    pts, a = pts[mask], a[mask]
    box = fld.cells[pos].bounding_box(fld.window)
    order = np.argsort(-(box[:, 1] - box[:, 0]), kind="stable")
    for i, j in itertools.combinations(range(fld.dim), 2):
        v = a[:, i, j]
        if not (np.any(v > _ZERO_TOL) and np.any(v < -_ZERO_TOL)):
            continue
        for axis in order:
            u, inv = np.unique(pts[:, axis], return_inverse=True)
            top = np.full(len(u), -np.inf)
            bot = np.full(len(u), np.inf)
            np.maximum.at(top, inv, v)
            np.minimum.at(bot, inv, v)
            for lo_ok, hi_ok in ((bot >= -_ZERO_TOL, top <= _ZERO_TOL), (top <= _ZERO_TOL, bot >= -_ZERO_TOL)):
                left = np.cumprod(lo_ok).astype(bool)
                right = np.cumprod(hi_ok[::-1]).astype(bool)[::-1]
                cuts = np.flatnonzero(left[:-1] & right[1:])
                if len(cuts):
                    k = cuts[np.argmin(np.abs(cuts - len(u) / 2))]
                    return int(axis), 0.5 * (u[k] + u[k + 1])
        return None
    return None


def _bisect(c: PartitionCell, box, next_id, plane=None):
    """Split a cell by ``plane`` or along the longest axis of ``box``."""
    box = np.asarray(box, dtype=float)
    if plane is None:
        axis = int(np.argmax(box[:, 1] - box[:, 0]))
        mid = 0.5 * (box[axis, 0] + box[axis, 1])
    else:
        axis, mid = plane
    rects = c.rects if c.rects else (box,)
    kids = []
    for side in (0, 1):
        part = []
        for rect in rects:
            q = rect.copy()
            if side == 0:
                q[axis, 1] = min(q[axis, 1], mid)
            else:
                q[axis, 0] = max(q[axis, 0], mid)
            if q[axis, 1] - q[axis, 0] > _GEOM_TOL:
                part.append(q)
        if part:
            kids.append(replace(c, id=next_id + side, rects=tuple(part), depth=c.depth + 1))
    return kids


def parameterize(fld: CoefficientField, h=None, r_max: int = R_MAX, density: int = SAMPLE_DENSITY,
                 max_depth: int = MAX_DEPTH) -> CoefficientField:
    """Attach sign data and parameters ``r`` to every cell.

    User-fixed ``r`` are checked, not searched. Callable cells whose signs
    vary or whose search fails are bisected (up to ``max_depth`` levels);
    constant cells cannot be helped by refinement and fail at once. A
    callable background is refined only when it is the sole cell, by
    tiling the window with blocks.

    Raises
    ------
    NonPositiveBracket
        A user-fixed ``r`` gives a non-positive bracket.
    NoParameters
        The search failed after refinement.
    """
    if h is None:
        h = _default_h(fld)
    cur = fld
    next_id = max(c.id for c in fld.cells) + 1
    pos = 0
    tiled = False
    while pos < len(cur.cells):
        c = cur.cells[pos]
        signs = None
        if tiled and c.is_background:
            # only the outside of the window is left; every owner there sits
            # on the interface, so its off-diagonal terms vanish anyway
            cells = list(cur.cells)
            cells[pos] = replace(c, signs=np.ones((fld.dim, fld.dim), dtype=np.int64), r=(1,) * fld.dim)
            cur = cur.with_cells(cells)
            pos += 1
            continue
        try:
            signs = cell_signs(cur, pos, h, density)
            if signs is None:
                raise NoParameters(c.id, -math.inf, r_max)
            if c.r_fixed:
                if omega(cur, pos, c.r, h, density) <= 0:
                    raise NonPositiveBracket(*_worst_axis(cur, pos, c.r, h, density))
                r = c.r
            else:
                r = select_parameters(cur, pos, h, r_max, density)
        except NoParameters:
            if c.is_constant or c.r_fixed or c.depth >= max_depth:
                raise
            if c.is_background and len(cur.cells) > 1:
                raise
            plane = _split_plane(cur, pos, h, density) if signs is None else None
            kids = _bisect(c, c.bounding_box(cur.window), next_id, plane)
            next_id += 2
            cells = list(cur.cells)
            if c.is_background:
                # the window is now tiled by blocks; the background only
                # covers the outside, where it is never sampled
                cells[pos:pos] = kids
                tiled = True
            else:
                cells[pos:pos + 1] = kids
            cur = cur.with_cells(cells)
            continue
        cells = list(cur.cells)
        cells[pos] = replace(c, signs=signs, r=tuple(int(v) for v in r))
        cur = cur.with_cells(cells)
        pos += 1
    return cur


def _worst_axis(fld, pos, r, h, density):
    c = fld.cells[pos]
    if c.is_constant:
        br = _brackets_const(np.asarray(c.tensor), r)
        i = int(np.argmin(br))
        return i, float(br[i])
    return 0, omega(fld, pos, r, h, density)
