"""Command-line entry point ``lvlmc``.

Exit codes: 0 success, 2 invalid input or config, 3 numerical failure,
4 file system error.
"""

import argparse
import contextlib
import os
import sys

from threadpoolctl import threadpool_limits

from . import __version__
from . import io as lio
from .config import load_config
from .exceptions import NumericalError, ValidationError
from .workflow import (
    FACTORS,
    FIELD_GRID,
    FIELD_SAMPLES,
    StageError,
    _grid,
    _now,
    run_cluster,
    run_export_ellipses,
    run_interpolate,
    run_pipeline,
    run_simulate,
    run_transform,
    run_validate,
    write_manifest,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _globals(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", metavar="PATH", default=d(None), help="INI config file")
    parser.add_argument("--seed", type=int, default=d(None), help="master seed override")
    parser.add_argument("--out", metavar="DIR", default=d(None), help="output directory")
    parser.add_argument("--threads", type=int, default=d(None), help="BLAS thread limit")
    parser.add_argument("--dry-run", action="store_true", default=d(False),
                        help="validate config and inputs, compute nothing")


def build_parser():
    p = argparse.ArgumentParser(prog="lvlmc", description="Locally varying LMC toolkit")
    p.add_argument("--version", action="version", version=f"lvlmc {__version__}")
    _globals(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("transform", parents=[common],
                   help="log-ratio, local scores, correlation field, factors, variogram")
    s = sub.add_parser("interpolate", parents=[common], help="correlation field on the grid")
    s.add_argument("--field", metavar="PATH", help=f"sample field [OUT/{FIELD_SAMPLES}]")
    s = sub.add_parser("simulate", parents=[common],
                       help="simulate, recorrelate and back-transform")
    s.add_argument("--n-real", type=int, help="override [simulation] n_real")
    s = sub.add_parser("cluster", parents=[common], help="K-means on a correlation field")
    s.add_argument("--field", metavar="PATH", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--init", choices=["random", "farthest"], default="random")
    s.add_argument("--max-iter", type=int, default=100)
    s = sub.add_parser("validate", parents=[common], help="accuracy plot on held-out samples")
    s.add_argument("--radius", type=float, help="override [data] link_radius")
    s.add_argument("--test", metavar="PATH", help="override [data] test_samples")
    s = sub.add_parser("export-ellipses", parents=[common], help="ellipse descriptors")
    s.add_argument("--field", metavar="PATH", required=True)
    s.add_argument("--dims", type=int, choices=[2, 3], default=3)
    sub.add_parser("run", parents=[common], help="all pipeline stages")
    return p


def _dry_run(args, cfg, out):
    """Parse every input the command would read."""
    cmd = args.command
    if cmd in ("transform", "simulate", "run"):
        t = lio.read_samples(cfg["data"]["samples"], cfg["data"]["variables"]) \
            if cfg["data"]["samples"] else None
        if t is None:
            raise ValidationError("[data] samples is required")
        if cfg["neighborhood"]["l"] > t.n:
            raise ValidationError(f"[neighborhood] l={cfg['neighborhood']['l']} exceeds "
                                  f"{t.n} samples")
        print(f"samples: {t.n} rows, variables {', '.join(t.names)}")
    if cmd in ("interpolate", "simulate", "run"):
        print(f"grid: {_grid(cfg).n_nodes} nodes")
    if cmd in ("cluster", "export-ellipses") or (cmd == "interpolate" and args.field):
        f = lio.read_field(args.field)
        print(f"field: {len(f)} sites, p={f.p}")
    if cmd == "validate":
        path = args.test or cfg["data"]["test_samples"]
        if not path:
            raise ValidationError("validate needs [data] test_samples or --test")
        print(f"test samples: {lio.read_samples(path).n} rows")
    print("dry run: inputs valid")


def _execute(args, cfg, out, seed):
    cmd = args.command
    inputs = [cfg["data"]["samples"]]
    if cmd == "transform":
        files = run_transform(cfg, out)
    elif cmd == "interpolate":
        files = run_interpolate(cfg, out, args.field)
        inputs = [args.field or os.path.join(out, FIELD_SAMPLES)]
    elif cmd == "simulate":
        if args.n_real is not None:
            cfg["simulation"]["n_real"] = args.n_real
        files = run_simulate(cfg, out, seed)
        inputs += [os.path.join(out, FIELD_GRID), os.path.join(out, FACTORS)]
    elif cmd == "cluster":
        files = run_cluster(args.field, args.k, seed, out, args.init, args.max_iter)
        inputs = [args.field]
    elif cmd == "validate":
        files = run_validate(cfg, out, args.radius, args.test)
        inputs = [args.test or cfg["data"]["test_samples"]]
    elif cmd == "export-ellipses":
        files = run_export_ellipses(args.field, args.dims, out)
        inputs = [args.field]
    else:
        arts = run_pipeline(cfg, out, seed)
        print(f"run complete: {sum(len(v) for v in arts.values())} files in {out}")
        return
    print(f"{cmd}: wrote {len(files)} file(s) to {out}")
    return files, inputs


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = args.out or cfg["output"]["dir"]
        if args.out:
            cfg["output"]["dir"] = os.path.abspath(args.out)
        seed = cfg["simulation"]["seed"] if args.seed is None else args.seed
        cfg["simulation"]["seed"] = seed
        if args.dry_run:
            _dry_run(args, cfg, out)
            return EXIT_OK
        os.makedirs(out, exist_ok=True)
        limits = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
        started = _now()
        with limits:
            res = _execute(args, cfg, out, seed)
        if res is not None:
            files, inputs = res
            write_manifest(out, args.command, cfg, seed, inputs, files, started)
        return EXIT_OK
    except StageError as exc:
        print(f"lvlmc: error: {exc}", file=sys.stderr)
        return _code(exc.cause) or EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        code = _code(exc)
        if code is None:
            raise
        print(f"lvlmc: error: {exc}", file=sys.stderr)
        return code


def _code(exc):
    if isinstance(exc, ValidationError):
        return EXIT_INPUT
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC
    if isinstance(exc, OSError):
        return EXIT_IO
    return None


if __name__ == "__main__":
    sys.exit(main())
