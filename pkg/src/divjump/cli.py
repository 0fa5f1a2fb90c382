"""Command-line entry point: ``divjump <command> --config run.json``.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

import numpy as np

from . import mjp
from .errors import NumericalError, ValidationError
from .experiment import (ExperimentConfig, run_bench, run_build, run_compare, run_semigroup, run_simulate,
                         run_solve, run_validate)

log = logging.getLogger("divjump")

OK, INVALID, NUMERICAL = 0, 2, 3


def _emit(doc, out=None):
    text = json.dumps(doc, indent=2, sort_keys=True, default=_jsonable)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def _parse_point(text):
    return [float(v) for v in text.split(",")]


def _load(args):
    cfg = ExperimentConfig.from_json(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "paths", None) is not None:
        cfg.paths = args.paths
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    if getattr(args, "x0", None) is not None:
        cfg.x0 = _parse_point(args.x0)
    # config-level output paths apply when the flags are absent
    if not args.out:
        args.out = cfg.outputs.get(args.command)
    if getattr(args, "plot", "") is None:
        args.plot = cfg.outputs.get("plot")
    return cfg


def cmd_validate(args):
    rep, _ = run_validate(_load(args))
    print(rep)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(rep.to_dict(), fh, indent=2, default=_jsonable)
    return OK if rep.passed else INVALID


def cmd_build(args):
    G, info = run_build(_load(args))
    if args.dump_matrix:
        if args.dump_matrix.endswith(".npz"):
            G.to_npz(args.dump_matrix)
        else:
            G.to_coo_text(args.dump_matrix)
    _emit(info, args.out)
    return OK


def cmd_simulate(args):
    cfg = _load(args)
    est = run_simulate(cfg, keep_samples=bool(args.out))
    if args.out:
        mjp.write_samples(args.out, est, cfg.spec())
    _emit(est.to_dict(include_timings=not args.no_timings))
    return OK


def cmd_solve(args):
    cfg = _load(args)
    _, doc = run_solve(cfg)
    if args.no_timings:
        doc.pop("wall_time", None)
    _emit(doc, args.out)
    return OK


def cmd_compare(args):
    cfg = _load(args)
    rep = run_compare(cfg)
    text = rep.to_json(include_timings=not args.no_timings)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    if args.plot:
        rep.write_plot_data(args.plot)
    print(rep.table(), file=sys.stderr)
    print(text)
    return OK


def cmd_semigroup(args):
    _emit(run_semigroup(_load(args)), args.out)
    return OK


def cmd_bench(args):
    cfg = _load(args)
    threads = None if args.thread_list is None else [int(t) for t in args.thread_list.split(",")]
    _emit(run_bench(cfg, threads), args.out)
    return OK


def build_parser():
    p = argparse.ArgumentParser(prog="divjump", description="Jump-process approximation of divergence-form "
                                "diffusions: assembly, validation, exit-time moments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help_, seed=False, paths=False, x0=False):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="experiment JSON")
        s.add_argument("--out", help="output path")
        s.add_argument("--threads", type=int, help="worker threads (overrides DIVJUMP_THREADS)")
        if seed:
            s.add_argument("--seed", type=int, help="U64 seed")
        if paths:
            s.add_argument("--paths", type=int, help="number of replicates N")
        if x0:
            s.add_argument("--x0", help="start point, comma separated")
        s.set_defaults(fn=fn)
        return s

    command("validate", cmd_validate, "check coefficients and the assembled generator")
    b = command("build", cmd_build, "assemble the generator and summarize it")
    b.add_argument("--dump-matrix", help="write the matrix (.npz binary CSR, otherwise COO text)")
    s = command("simulate", cmd_simulate, "Monte Carlo exit-time moments", seed=True, paths=True, x0=True)
    s.add_argument("--no-timings", action="store_true")
    s = command("solve", cmd_solve, "deterministic exit-time moments", x0=True)
    s.add_argument("--no-timings", action="store_true")
    c = command("compare", cmd_compare, "deterministic versus Monte Carlo", seed=True, paths=True)
    c.add_argument("--plot", help="append a gnuplot data row to this file")
    c.add_argument("--no-timings", action="store_true", help="omit timings so output is reproducible")
    command("semigroup", cmd_semigroup, "Cauchy gaps of the semigroup across levels")
    b = command("bench", cmd_bench, "timing profile", seed=True, paths=True)
    b.add_argument("--thread-list", help="comma-separated thread counts")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    # numba falls back from an old TBB to its own pool; the notice is noise here
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    try:
        mjp.set_threads(args.threads)
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID


if __name__ == "__main__":
    sys.exit(main())
