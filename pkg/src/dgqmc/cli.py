"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import logging
import math
import sys
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dgfem import SolveError, dg_norm
from .experiment import (ConfigError, ExperimentConfig, IPDGSampler, build_sampler,
                         emit_table, fit_rate, read_table, run_convergence)
from .lattice import save_generating_vector
from .mesh import build_structured_mesh, mesh_quality_report
from .random_field import RandomFieldSpec
from .theory import affine_b, cbc_construct, weights_affine, weights_for, weights_lognormal

log = logging.getLogger("dgqmc")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

CONFIG_KEYS = {f.name for f in fields(ExperimentConfig)}


def parse_config(path) -> ExperimentConfig:
    """Read a YAML mapping of config keys; missing keys take their defaults."""
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown keys: {', '.join(unknown)}")
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(path: Path, manifest: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def cmd_qmc_run(args) -> int:
    config = parse_config(args.config)
    if args.out:
        config.out = args.out
    out = Path(config.out)
    inputs = {str(args.config): _digest(args.config)}
    if config.vector != "cbc":
        inputs[config.vector] = _digest(config.vector)
    manifest = {"config": config.to_dict(), "seed": config.seed, "version": __version__,
                "threads": args.threads, "start": _now(), "end": None, "inputs": inputs}
    manifest_path = out.with_name(out.name + ".manifest.json")
    _write_manifest(manifest_path, manifest)
    report = run_convergence(config, threads=args.threads)
    emit_table(report, out)
    manifest["end"] = _now()
    _write_manifest(manifest_path, manifest)
    print(f"C={float(report.fit.C)!r} r={float(report.fit.rate)!r}")
    return EXIT_OK


def cmd_solve_one(args) -> int:
    config = parse_config(args.config)
    y = np.zeros(config.s)
    if args.y:
        vals = [float(v) for v in args.y.split(",")]
        y[:len(vals)] = vals
    sampler = build_sampler(config)
    u = sampler.solve(y)
    if isinstance(sampler, IPDGSampler):
        eta = sampler.eta(y)
        norm = dg_norm(sampler.space, u, _coef(sampler.spec, y), eta)
        print(f"dg_norm={float(norm)!r} eta={float(eta)!r}")
    else:
        print(f"l2_norm={math.sqrt(float(sampler.mass_norm_sq(u)))!r}")
    text = "".join(f"{float(v)!r}\n" for v in u)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _coef(spec: RandomFieldSpec, y):
    return lambda x: spec.combine(spec.a0_values(x), spec.basis_values(x) @ y)


def _spec_from_args(args) -> RandomFieldSpec:
    if getattr(args, "config", None):
        return parse_config(args.config).field_spec()
    return RandomFieldSpec(mode=args.mode, s=args.s, decay=args.decay, a0=args.a0)


def _weights(args, spec):
    if args.lam is None:
        return weights_for(spec)
    if spec.mode == "affine":
        return weights_affine(affine_b(spec), args.lam)
    return weights_lognormal(spec.amplitudes, args.lam)


def cmd_cbc(args) -> int:
    spec = _spec_from_args(args)
    gv = cbc_construct(args.n, spec.s, _weights(args, spec), max_order=args.max_order)
    save_generating_vector(gv, args.out, pairs=args.pairs)
    print(f"e2={float(gv.errors[-1])!r}")
    return EXIT_OK


def cmd_weights(args) -> int:
    spec = _spec_from_args(args)
    w = _weights(args, spec)
    dims = min(args.dims, spec.s)
    print(f"# lambda={w.lam!r}")
    for order in range(1, args.max_order + 1):
        for u in itertools.combinations(range(dims), order):
            print(" ".join(str(j + 1) for j in u), repr(float(w.gamma(u))))
    if args.out:
        Path(args.out).write_text("".join(f"{j + 1} {float(v)!r}\n" for j, v in enumerate(w.dim_factors)))
    return EXIT_OK


def cmd_mesh_info(args) -> int:
    mesh = build_structured_mesh(args.m)
    q = mesh_quality_report(mesh)
    print(f"vertices={len(mesh.vertices)} elements={mesh.n_elements} faces={mesh.n_faces} "
          f"boundary_faces={int(mesh.boundary_mask.sum())} h={mesh.h!r}")
    print(f"min_angle={q.min_angle!r} max_diameter_ratio={q.max_diameter_ratio!r} ok={q.ok}")
    if args.dump:
        Path(args.dump).write_text(mesh.dump())
    return EXIT_OK


def cmd_rates(args) -> int:
    fit = fit_rate(read_table(args.table))
    print(f"C={float(fit.C)!r} r={float(fit.rate)!r} residual={float(fit.residual)!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dgqmc", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="worker threads for PDE solves")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("qmc-run", help="run a convergence study and write the error table")
    s.add_argument("config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_qmc_run)

    s = sub.add_parser("solve-one", help="solve for a single parameter vector")
    s.add_argument("config")
    s.add_argument("--y", help="comma-separated leading parameters, the rest are zero")
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve_one)

    for name, func, help_ in (("cbc", cmd_cbc, "construct a generating vector"),
                              ("weights", cmd_weights, "print POD weights")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config")
        s.add_argument("--mode", default="affine")
        s.add_argument("--s", type=int, default=100)
        s.add_argument("--decay", type=float, default=1.3)
        s.add_argument("--a0", type=float)
        s.add_argument("--lam", type=float)
        s.set_defaults(func=func)
        if name == "cbc":
            s.add_argument("--n", type=int, required=True)
            s.add_argument("--max-order", type=int, default=8)
            s.add_argument("--pairs", action="store_true", help="write 'index value' lines")
            s.add_argument("--out", required=True)
        else:
            s.add_argument("--max-order", type=int, default=3)
            s.add_argument("--dims", type=int, default=6)
            s.add_argument("--out", help="also write per-dimension factors")

    s = sub.add_parser("mesh-info", help="mesh statistics and quality")
    s.add_argument("--m", type=int, default=16)
    s.add_argument("--dump")
    s.set_defaults(func=cmd_mesh_info)

    s = sub.add_parser("rates", help="fit C n^r to an existing table")
    s.add_argument("table")
    s.set_defaults(func=cmd_rates)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (SolveError, RuntimeError, ArithmeticError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
