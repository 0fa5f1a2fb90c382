"""Experiment configuration and the end-to-end runs behind the CLI.

A configuration is one JSON document::

    {
      "coefficients": {"dim": 2, "window": [[0, 1], [0, 1]],
                       "blocks": [{"rects": [[[0.25, 0.75], [0.25, 0.75]]],
                                   "tensor": [[0.1, 0.02], [0.02, 1.0]]}],
                       "background": {"tensor": [[0.1, 0.0], [0.0, 1.0]]}},
      "grid": {"divisions": 200},
      "domain": [[0, 1], [0, 1]],
      "x0": [0.5, 0.5],
      "r": [3, 1],
      "paths": 20000,
      "seed": 1
    }

``grid`` takes either ``divisions`` (``h = 1/divisions``) or ``level``
(``h = 2**-level``). The grid box defaults to the closure of ``domain``.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import mjp
from .coeff import CoefficientField, check_ellipticity, parameterize, validate_hat_definite
from .errors import DivJumpError, NonPositiveBracket, NoParameters, PositiveTypeViolation, ValidationError
from .exittime import mean_exit_dual, restrict_to_domain, solve_exit_moments
from .generator import Polynomial, SparseGenerator, assemble, consistency_defect
from .grid import GridSpec
from .semigroup import convergence_gap

__all__ = [
    "ExperimentConfig",
    "Check",
    "ValidationReport",
    "CompareReport",
    "run_validate",
    "run_build",
    "run_solve",
    "run_simulate",
    "run_compare",
    "run_semigroup",
    "run_bench",
    "bump",
]

CONSISTENCY_TOL = 1e-10


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run."""

    coefficients: dict
    domain: list
    x0: list
    grid: dict = field(default_factory=lambda: {"divisions": 64})
    box: list | None = None
    r: list | None = None
    paths: int = 20000
    seed: int = 0
    max_jumps: int = mjp.MAX_JUMPS
    threads: int | None = None
    rtol: float = 1e-10
    semigroup: dict | None = None
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        d = int(self.coefficients.get("dim", 0))
        if d < 1:
            raise ValidationError("coefficients.dim must be a positive integer")
        if np.asarray(self.domain, dtype=float).shape != (d, 2):
            raise ValidationError(f"domain must have shape ({d}, 2)")
        if len(self.x0) != d:
            raise ValidationError(f"x0 must have {d} coordinates")
        if self.r is not None and len(self.r) != d:
            raise ValidationError(f"r must have {d} entries")
        if ("divisions" in self.grid) == ("level" in self.grid):
            raise ValidationError("grid needs exactly one of 'divisions' or 'level'")
        if self.paths < 2:
            raise ValidationError("paths must be at least 2")

    @property
    def dim(self):
        return int(self.coefficients["dim"])

    # serialization

    def to_dict(self):
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValidationError(f"unknown config keys: {sorted(extra)}")
        missing = {"coefficients", "domain", "x0"} - set(doc)
        if missing:
            raise ValidationError(f"missing config keys: {sorted(missing)}")
        return cls(**copy.deepcopy(doc))

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)

    # derived objects

    def field(self) -> CoefficientField:
        doc = copy.deepcopy(self.coefficients)
        if self.r is not None:
            for block in doc.get("blocks", []):
                block["r"] = list(self.r)
            doc["background"]["r"] = list(self.r)
        return CoefficientField.from_dict(doc)

    def spec(self) -> GridSpec:
        box = self.box if self.box is not None else self.domain
        try:
            if "level" in self.grid:
                return GridSpec.dyadic(int(self.grid["level"]), box)
            return GridSpec.uniform(int(self.grid["divisions"]), box)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc


# validation

@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""
    witness: dict | None = None


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return bool(self.checks) and all(c.passed for c in self.checks)

    @property
    def failed(self):
        return next((c for c in self.checks if not c.passed), None)

    def to_dict(self):
        return {"passed": self.passed, "checks": [asdict(c) for c in self.checks]}

    def __str__(self):
        return "\n".join(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<14} {c.detail}" for c in self.checks)


def _consistency_check(G: SparseGenerator, fld: CoefficientField):
    if not fld.is_piecewise_constant:
        return Check("consistency", True, "skipped: variable coefficients are consistent only to O(h)")
    rows = np.flatnonzero(G.interior & ~G.interface)
    if rows.size == 0:
        return Check("consistency", True, "skipped: no interior knots away from interfaces")
    knots = G.spec.multi_index(rows)
    worst, where, label = 0.0, None, ""
    for p in Polynomial.basis(fld.dim):
        res = consistency_defect(G, fld, p, knots)
        scale = max(float(np.max(np.abs(res.exact))), max(float(np.max(np.abs(c.tensor))) for c in fld.cells))
        err = np.abs(res.defect) / scale
        i = int(np.argmax(err))
        if err[i] > worst:
            worst, where, label = float(err[i]), res.knots[i].tolist(), p.label
    ok = worst <= CONSISTENCY_TOL
    return Check("consistency", ok, f"max relative defect {worst:.3g} over {rows.size} knots",
                 None if ok else {"knot": where, "polynomial": label, "defect": worst})


def run_validate(cfg: ExperimentConfig) -> tuple[ValidationReport, SparseGenerator | None]:
    """Coefficient checks, parameter selection, assembly and consistency.

    Stops at the first failing stage, since later stages depend on it.
    """
    rep = ValidationReport()
    try:
        fld = cfg.field()
        spec = cfg.spec()
    except DivJumpError as exc:
        rep.checks.append(Check("config", False, str(exc)))
        return rep, None
    rep.checks.append(Check("config", True, f"d={fld.dim}, h={spec.h:.6g}, {spec.size} knots"))

    try:
        lo, hi = check_ellipticity(fld)
        rep.checks.append(Check("ellipticity", True, f"eigenvalues in [{lo:.6g}, {hi:.6g}]"))
    except ValidationError as exc:
        rep.checks.append(Check("ellipticity", False, str(exc)))
        return rep, None

    hat = validate_hat_definite(fld)
    rep.checks.append(Check("hat_definite", hat.passed, str(hat),
                            None if hat.passed else {"min_eigenvalue": hat.min_eigenvalue, "cell": hat.cell_id,
                                                     "x": None if hat.witness is None else hat.witness.tolist()}))
    if not hat.passed:
        return rep, None

    try:
        fld = parameterize(fld, h=spec.h)
        rs = sorted({tuple(c.r) for c in fld.cells})
        rep.checks.append(Check("omega", True, f"parameters r in {rs}"))
    except NonPositiveBracket as exc:
        rep.checks.append(Check("omega", False, str(exc), {"axis": exc.axis, "value": exc.value}))
        return rep, None
    except NoParameters as exc:
        rep.checks.append(Check("omega", False, str(exc), {"cell": exc.cell_id, "best": exc.best_omega}))
        return rep, None

    try:
        G = assemble(fld, spec)
    except PositiveTypeViolation as exc:
        rep.checks.append(Check("positive_type", False, str(exc), {"row": exc.row}))
        return rep, None
    except NonPositiveBracket as exc:
        rep.checks.append(Check("positive_type", False, str(exc), {"axis": exc.axis, "value": exc.value}))
        return rep, None
    sizes = np.unique(G.neighborhood_sizes()[G.interior])
    rep.checks.append(Check("positive_type", True,
                            f"sigma0={G.sigma0:.6g}, mg'={G.mg_prime:.6g}, row sizes {sizes.tolist()}"))
    rep.checks.append(Check("irreducible", G.irreducible,
                            "strongly connected" if G.irreducible else "jump graph is not strongly connected"))
    rep.checks.append(_consistency_check(G, fld))
    return rep, G


def _require(cfg):
    rep, G = run_validate(cfg)
    if not rep.passed:
        bad = rep.failed
        raise ValidationError(f"{bad.name}: {bad.detail}")
    return G


# single runs

def run_build(cfg: ExperimentConfig) -> tuple[SparseGenerator, dict]:
    t0 = time.perf_counter()
    fld = parameterize(cfg.field(), h=cfg.spec().h)
    G = assemble(fld, cfg.spec())
    wall = time.perf_counter() - t0
    sizes, counts = np.unique(G.neighborhood_sizes()[G.interior], return_counts=True)
    info = {"h": G.spec.h, "knots": G.size, "nnz": int(G.A.nnz), "sigma0": G.sigma0, "mg_prime": G.mg_prime,
            "irreducible": G.irreducible, "symmetric": G.symmetric,
            "interior_row_sizes": {int(s): int(c) for s, c in zip(sizes, counts)},
            "r": sorted({tuple(c.r) for c in fld.cells}), "assembly_time": wall}
    return G, info


def run_solve(cfg: ExperimentConfig, G: SparseGenerator | None = None, x0=None):
    if G is None:
        G = _require(cfg)
    x0 = cfg.x0 if x0 is None else x0
    t0 = time.perf_counter()
    sys = restrict_to_domain(G, cfg.domain)
    res = solve_exit_moments(sys, x0, rtol=cfg.rtol)
    t_det = time.perf_counter() - t0
    dual = mean_exit_dual(sys, x0, rtol=cfg.rtol)
    out = res.to_dict()
    out.update(unknowns=sys.size, duality_gap=abs(dual - res.E) / res.E, wall_time=t_det)
    return res, out


def run_simulate(cfg: ExperimentConfig, G: SparseGenerator | None = None, keep_samples=False):
    if G is None:
        G = _require(cfg)
    mjp.warm_up()
    return mjp.estimate_moments(G, cfg.x0, cfg.domain, cfg.paths, cfg.seed, threads=cfg.threads,
                                max_jumps=cfg.max_jumps, keep_samples=keep_samples)


# comparison

@dataclass(frozen=True)
class CompareReport:
    """Deterministic versus Monte Carlo exit-time moments.

    ``eps_exp = (E_det - E_sim) / E_det`` and likewise ``eps_var``;
    ``ratio = t_det / t_sim``.
    """

    h: float
    N: int
    seed: int
    E_det: float
    Var_det: float
    E_sim: float
    Var_sim: float
    se_E_sim: float
    se_Var_sim: float
    eps_exp: float
    eps_var: float
    censored: int
    total_jumps: int
    solver: str
    t_det: float
    t_sim: float
    threads: int

    @property
    def ratio(self):
        return self.t_det / self.t_sim if self.t_sim > 0 else math.inf

    _TIMINGS = ("t_det", "t_sim", "threads")

    def to_dict(self, include_timings=True):
        out = asdict(self)
        if include_timings:
            out["ratio"] = self.ratio
        else:
            for k in self._TIMINGS:
                out.pop(k)
        return out

    def to_json(self, include_timings=True):
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True)

    def table(self):
        head = f"{'h':>10} {'eps_exp':>9} {'eps_var':>9} {'r':>7}"
        row = f"{'1/%d' % round(1 / self.h):>10} {self.eps_exp:>9.3f} {self.eps_var:>9.3f} {self.ratio:>7.2f}"
        return head + "\n" + row

    def write_plot_data(self, path):
        """gnuplot-readable columns, one row per run (append to accumulate)."""
        with open(path, "a", encoding="utf-8") as fh:
            if fh.tell() == 0:
                fh.write("# h eps_exp eps_var ratio E_det E_sim Var_det Var_sim\n")
            fh.write(f"{self.h!r} {self.eps_exp!r} {self.eps_var!r} {self.ratio!r} "
                     f"{self.E_det!r} {self.E_sim!r} {self.Var_det!r} {self.Var_sim!r}\n")


def run_compare(cfg: ExperimentConfig, G: SparseGenerator | None = None) -> CompareReport:
    """Solve and simulate on the same generator; time both.

    Compilation is excluded from ``t_sim`` by a warm-up run; ``t_det``
    covers the restriction to ``D`` and both linear solves.
    """
    if G is None:
        G = _require(cfg)
    t0 = time.perf_counter()
    sys = restrict_to_domain(G, cfg.domain)
    det = solve_exit_moments(sys, cfg.x0, rtol=cfg.rtol)
    t_det = time.perf_counter() - t0
    mc = run_simulate(cfg, G)
    return CompareReport(h=G.spec.h, N=mc.n, seed=cfg.seed, E_det=det.E, Var_det=det.Var, E_sim=mc.mean,
                         Var_sim=mc.variance, se_E_sim=mc.se_mean, se_Var_sim=mc.se_variance,
                         eps_exp=(det.E - mc.mean) / det.E, eps_var=(det.Var - mc.variance) / det.Var,
                         censored=mc.censored, total_jumps=mc.total_jumps, solver=det.solver,
                         t_det=t_det, t_sim=mc.wall_time, threads=mc.threads)


# semigroup diagnostics

def bump(center, width):
    """Product of ``(1 - ((x_i - c_i) / w)**2)_+**3``; smooth enough, compactly supported."""
    c = np.asarray(center, dtype=float)

    def f(x):
        s = np.clip(1.0 - ((np.atleast_2d(x) - c) / width) ** 2, 0.0, None) ** 3
        return np.prod(s, axis=1)

    return f


def run_semigroup(cfg: ExperimentConfig) -> dict:
    """Cauchy gaps ``sup |Phi u_{n+1}(t) - u_n(t)|`` between successive levels."""
    sg = cfg.semigroup or {}
    t = float(sg.get("t", 0.05))
    levels = [int(n) for n in sg.get("levels", [5, 6, 7])]
    f = bump(sg.get("center", cfg.x0), float(sg.get("width", 0.3)))
    box = cfg.box if cfg.box is not None else cfg.domain
    fld = cfg.field()
    gaps = []
    for n, m in zip(levels, levels[1:]):
        gaps.append({"levels": [n, m], "gap": convergence_gap(fld, f, t, n, m, box=box)})
    return {"t": t, "gaps": gaps, "monotone": all(a["gap"] > b["gap"] for a, b in zip(gaps, gaps[1:]))}


# benchmarking

def run_bench(cfg: ExperimentConfig, threads=None) -> dict:
    """Assembly, solve and simulation timings, simulation over several thread counts."""
    t0 = time.perf_counter()
    G, info = run_build(cfg)
    t_build = time.perf_counter() - t0
    _, solve = run_solve(cfg, G)
    if threads is None:
        cap = mjp.numba.config.NUMBA_NUM_THREADS
        threads = sorted({1, cap} | {2 ** i for i in range(1, 8) if 2 ** i < cap})
    mjp.warm_up()
    runs = []
    ref = None
    for th in threads:
        est = mjp.estimate_moments(G, cfg.x0, cfg.domain, cfg.paths, cfg.seed, threads=th, max_jumps=cfg.max_jumps)
        if ref is None:
            ref = est
        runs.append({"threads": est.threads, "wall_time": est.wall_time,
                     "jumps_per_second": est.total_jumps / est.wall_time if est.wall_time > 0 else math.inf,
                     "mean": est.mean, "variance": est.variance,
                     "identical": est.to_dict(False) == ref.to_dict(False)})
    return {"knots": G.size, "assembly_time": t_build, "solve_time": solve["wall_time"], "solver": solve["solver"],
            "paths": cfg.paths, "simulate": runs, "interior_row_sizes": info["interior_row_sizes"]}

