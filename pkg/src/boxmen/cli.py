"""Command-line driver: config -> precompute -> parallel sweep -> CSV/Touchstone."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import yaml

from .aperture import ApertureError
from .config import ConfigError, load_config
from .geometry import GeometryError, Sweep
from .men import MenError
from .output import write_csv, write_touchstone
from .sweep import SweepError, run_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("boxmen")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="boxmen",
        description="Multimode equivalent network analysis of a shielded planar circuit.",
    )
    p.add_argument("--config", required=True, metavar="PATH", help="YAML circuit description")
    p.add_argument("--fmin-ghz", type=float, help="override sweep start frequency")
    p.add_argument("--fmax-ghz", type=float, help="override sweep stop frequency")
    p.add_argument("--npoints", type=int, help="override number of sweep points")
    p.add_argument("--nbasis", type=int, help="number of aperture basis functions N_b")
    p.add_argument("--nstatic", type=int, help="static kernel terms M_static")
    p.add_argument("--ndynamic", type=int, help="dynamic kernel terms M_dynamic")
    p.add_argument("--naccessible", type=int, help="accessible modes N")
    p.add_argument("--grid", type=int, help="aperture raster cells per side")
    p.add_argument("--threads", type=int, help="worker threads for the sweep (default: all cores)")
    p.add_argument("--out-csv", metavar="PATH", help="write S-parameters as CSV")
    p.add_argument("--out-touchstone", metavar="PATH", help="write a Touchstone .s1p/.s2p file")
    p.add_argument("--cache-dir", metavar="PATH", help="directory for precompute cache files")
    p.add_argument("--verbose", "-v", action="count", default=0, help="more logging (-vv for debug)")
    return p


def apply_overrides(spec, args):
    num = {}
    for flag, key in (
        ("nbasis", "n_basis"),
        ("nstatic", "n_kernel_static"),
        ("ndynamic", "n_kernel_dynamic"),
        ("naccessible", "n_accessible"),
    ):
        if getattr(args, flag) is not None:
            num[key] = getattr(args, flag)
    if args.grid is not None:
        num["grid_nx"] = num["grid_ny"] = args.grid
    numerics = dataclasses.replace(spec.numerics, **num) if num else spec.numerics
    sweep = spec.sweep
    if args.fmin_ghz is not None or args.fmax_ghz is not None or args.npoints is not None:
        base = sweep or Sweep(1e9, 1e9, 1)
        sweep = Sweep(
            args.fmin_ghz * 1e9 if args.fmin_ghz is not None else base.f_start,
            args.fmax_ghz * 1e9 if args.fmax_ghz is not None else base.f_stop,
            args.npoints if args.npoints is not None else base.n_points,
        )
    return dataclasses.replace(spec, numerics=numerics, sweep=sweep)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = apply_overrides(load_config(args.config), args)
        if spec.sweep is None:
            raise ConfigError("sweep: missing (give a sweep section or --fmin-ghz/--fmax-ghz/--npoints)")
        if args.out_touchstone and sum(p.role == "external" for p in spec.ports) > 2:
            raise ConfigError("Touchstone v1 output supports at most 2 external ports; use --out-csv")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except (ConfigError, GeometryError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_sweep(spec, threads=args.threads, cache_dir=args.cache_dir)
    except (SweepError, MenError, ApertureError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    try:
        if args.out_csv:
            write_csv(result, args.out_csv)
        if args.out_touchstone:
            write_touchstone(result, args.out_touchstone)
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info(
        "precompute %.2f s, sweep of %d points %.2f s (%.1f ms/point)",
        result.precompute_seconds,
        len(result.frequencies),
        result.total_seconds - result.precompute_seconds,
        float(result.point_ms.mean()),
    )
    if not args.out_csv and not args.out_touchstone:
        print(f"# {len(result.frequencies)} points, ports {list(result.port_ids)}")
        for f, S in zip(result.frequencies, result.S):
            print(f"{f / 1e9:.6g} GHz  |S11| = {abs(S[0, 0]):.6f}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
