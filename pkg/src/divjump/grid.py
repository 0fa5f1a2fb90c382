"""Lattice geometry, grid functions and the hat-function embedding.

A :class:`GridSpec` is a finite window of the lattice ``h * Z^d``. Knots
are addressed either by integer multi-indices ``k`` (position ``h * k``) or
by a flat index; flat order is lexicographic over ``(k_d, ..., k_1)`` with
``k_1`` running fastest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

__all__ = [
    "GridSpec",
    "GridFunction",
    "BoxDomain",
    "restrict",
    "forward_diff",
    "backward_diff",
    "prolong",
    "domain_mask",
]

_ALIGN_TOL = 1e-9


def _as_box(box, dim=None):
    box = np.asarray(box, dtype=float)
    if box.ndim == 1:
        box = box.reshape(1, 2)
    if box.ndim != 2 or box.shape[1] != 2:
        raise ValueError(f"box must have shape (d, 2), got {box.shape}")
    if dim is not None and box.shape[0] != dim:
        raise ValueError(f"box has dimension {box.shape[0]}, expected {dim}")
    if np.any(box[:, 1] < box[:, 0]):
        raise ValueError("box upper bounds must not be below lower bounds")
    return box


@dataclass(frozen=True)
class GridSpec:
    """Finite box of the lattice ``h * Z^d``.

    Parameters
    ----------
    h : float
        Lattice spacing.
    lo : tuple of int
        Multi-index of the lower box corner.
    shape : tuple of int
        Number of knots along each axis.
    level : int or None
        Refinement level ``n`` when ``h == 2**-n``.
    """

    h: float
    lo: tuple
    shape: tuple
    level: int | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("spacing must be positive")
        if len(self.lo) != len(self.shape) or len(self.shape) == 0:
            raise ValueError("lo and shape must have the same positive length")
        if any(s < 1 for s in self.shape):
            raise ValueError("every axis needs at least one knot")
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))

    @classmethod
    def from_spacing(cls, h, box, level=None):
        box = _as_box(box)
        scaled = box / h
        idx = np.rint(scaled)
        if np.any(np.abs(scaled - idx) > _ALIGN_TOL * np.maximum(1.0, np.abs(scaled))):
            raise ValueError(f"box corners {box.tolist()} are not multiples of h={h}")
        idx = idx.astype(np.int64)
        return cls(h=float(h), lo=tuple(idx[:, 0]), shape=tuple(idx[:, 1] - idx[:, 0] + 1), level=level)

    @classmethod
    def dyadic(cls, level, box):
        """Grid with spacing ``2**-level`` covering ``box``."""
        if level < 0:
            raise ValueError("level must be non-negative")
        return cls.from_spacing(2.0 ** -level, box, level=int(level))

    @classmethod
    def uniform(cls, divisions, box):
        """Grid with spacing ``1 / divisions`` covering ``box``."""
        return cls.from_spacing(1.0 / divisions, box)

    @property
    def dim(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def hi(self):
        return tuple(l + s - 1 for l, s in zip(self.lo, self.shape))

    @property
    def box(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        return np.stack([lo * self.h, hi * self.h], axis=1)

    @property
    def strides(self):
        return np.concatenate([[1], np.cumprod(self.shape[:-1])]).astype(np.int64)

    def flat_index(self, k):
        """Flat index of multi-index array ``k`` (shape ``(..., d)``); -1 outside."""
        k = np.asarray(k, dtype=np.int64)
        rel = k - np.asarray(self.lo, dtype=np.int64)
        inside = np.all((rel >= 0) & (rel < np.asarray(self.shape)), axis=-1)
        flat = rel @ self.strides
        return np.where(inside, flat, -1)

    def multi_index(self, flat):
        flat = np.asarray(flat, dtype=np.int64)
        out = np.empty(flat.shape + (self.dim,), dtype=np.int64)
        rem = flat.copy()
        for i, n in enumerate(self.shape):
            out[..., i] = rem % n + self.lo[i]
            rem = rem // n
        return out

    def indices(self):
        """All knot multi-indices in flat order, shape ``(size, d)``."""
        return self.multi_index(np.arange(self.size))

    def positions(self):
        return self.indices() * self.h

    def contains(self, k):
        return self.flat_index(k) >= 0

    def nearest_knot(self, x):
        k = np.rint(np.asarray(x, dtype=float) / self.h).astype(np.int64)
        return np.clip(k, self.lo, self.hi)

    def to_dict(self):
        return {"h": self.h, "lo": list(self.lo), "shape": list(self.shape), "level": self.level}

    @classmethod
    def from_dict(cls, doc):
        return cls(h=float(doc["h"]), lo=tuple(doc["lo"]), shape=tuple(doc["shape"]), level=doc.get("level"))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real values attached to the knots of a grid.

    ``valid`` marks entries that carry meaningful data; finite differences
    clear it where the shifted knot leaves the box.
    """

    spec: GridSpec
    values: np.ndarray
    valid: np.ndarray | None = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.spec.size:
            raise ValueError(f"{values.size} values for {self.spec.size} knots")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.valid is not None:
            valid = np.array(self.valid, dtype=bool).reshape(-1)
            valid.setflags(write=False)
            object.__setattr__(self, "valid", valid)

    def __len__(self):
        return self.values.size

    def at(self, k):
        flat = self.spec.flat_index(k)
        if np.any(flat < 0):
            raise IndexError(f"knot {k} outside the grid")
        return self.values[flat]

    def sup_norm(self):
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def as_array(self):
        """Values as an array indexed ``[k_1, ..., k_d]`` (relative to ``lo``)."""
        return self.values.reshape(self.spec.shape[::-1]).transpose()

    def _header(self):
        return json.dumps({"format": "divjump.gridfunction", **self.spec.to_dict(), "dim": self.spec.dim,
                           "box": self.spec.box.tolist()})

    def to_csv(self, path):
        k = self.spec.indices()
        cols = [f"k{i + 1}" for i in range(self.spec.dim)] + ["value"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# " + self._header() + "\n")
            fh.write(",".join(cols) + "\n")
            for row, v in zip(k, self.values):
                fh.write(",".join(str(int(c)) for c in row) + "," + repr(float(v)) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline()[1:].strip())
            spec = GridSpec.from_dict(header)
            data = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
        values = np.zeros(spec.size)
        flat = spec.flat_index(data[:, :-1].astype(np.int64))
        if np.any(flat < 0):
            raise ValueError("csv row outside the declared grid")
        values[flat] = data[:, -1]
        return cls(spec, values)

    def to_npz(self, path):
        np.savez(path, header=np.array(self._header()), values=self.values)

    @classmethod
    def from_npz(cls, path):
        with np.load(path) as z:
            spec = GridSpec.from_dict(json.loads(str(z["header"])))
            return cls(spec, z["values"])


def restrict(f: Callable, spec: GridSpec) -> GridFunction:
    """Sample ``f`` at every knot. ``f`` maps an ``(N, d)`` array to ``(N,)``."""
    x = spec.positions()
    values = np.broadcast_to(np.asarray(f(x), dtype=float), (spec.size,))
    return GridFunction(spec, values)


def forward_diff(u: GridFunction, axis: int, r: int = 1) -> GridFunction:
    """Difference quotient ``(u[k + r e_axis] - u[k]) / (r h)``.

    ``r`` may be negative, which gives the backward quotient. Entries whose
    shifted knot falls outside the box are 0 and flagged invalid.
    """
    spec = u.spec
    if not 0 <= axis < spec.dim:
        raise ValueError(f"axis {axis} out of range for dimension {spec.dim}")
    if r == 0:
        raise ValueError("shift must be non-zero")
    k = spec.indices()
    k[:, axis] += r
    target = spec.flat_index(k)
    valid = target >= 0
    out = np.zeros(spec.size)
    out[valid] = (u.values[target[valid]] - u.values[valid]) / (r * spec.h)
    if u.valid is not None:
        valid = valid & u.valid
        valid[target >= 0] &= u.valid[target[target >= 0]]
    return GridFunction(spec, out, valid)


def backward_diff(u: GridFunction, axis: int, r: int = 1) -> GridFunction:
    return forward_diff(u, axis, -r)


def prolong(u: GridFunction) -> Callable[[np.ndarray], np.ndarray]:
    """Multilinear hat-function interpolant of ``u``.

    Knots outside the box count as zero, so the interpolant is supported
    within one lattice cell of the box.
    """
    spec = u.spec
    axes = [spec.h * np.arange(l - 1, l + n + 1) for l, n in zip(spec.lo, spec.shape)]
    padded = np.pad(u.as_array(), 1)
    interp = RegularGridInterpolator(axes, padded, method="linear", bounds_error=False, fill_value=0.0)

    def evaluate(points):
        pts = np.asarray(points, dtype=float)
        scalar = pts.ndim == 1 and spec.dim > 1 or pts.ndim == 0
        pts = np.atleast_2d(pts)
        if spec.dim == 1 and pts.shape[-1] != 1:
            pts = pts.reshape(-1, 1)
        out = interp(pts)
        return out[0] if scalar else out

    return evaluate


@dataclass(frozen=True)
class BoxDomain:
    """Open axis-aligned box ``prod (lo_i, hi_i)``."""

    bounds: tuple

    def __post_init__(self):
        b = _as_box(self.bounds)
        object.__setattr__(self, "bounds", tuple(tuple(float(v) for v in row) for row in b))

    def __call__(self, x):
        b = np.asarray(self.bounds)
        x = np.atleast_2d(x)
        return np.all((x > b[:, 0]) & (x < b[:, 1]), axis=-1)


def domain_mask(spec: GridSpec, domain) -> np.ndarray:
    """Boolean mask of knots lying in ``domain``.

    ``domain`` is a predicate on positions, box bounds ``(d, 2)`` (read as
    the open box) or an existing boolean mask over the knots.
    """
    if isinstance(domain, np.ndarray) and domain.dtype == bool:
        if domain.shape != (spec.size,):
            raise ValueError(f"domain mask has shape {domain.shape}, expected ({spec.size},)")
        return domain
    if not callable(domain):
        domain = BoxDomain(domain)
    return np.asarray(domain(spec.positions()), dtype=bool).reshape(-1)
