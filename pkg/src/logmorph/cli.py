"""Command line entry point: ``logmorph run|sample|compare|gen-mesh``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .case import ConfigError, compare_runs, format_report, line_sample, load_config, run_case, write_line_csv
from .mesh import MeshError, load_field, load_mesh, mini_stirrer, save_mesh
from .stabilization import SCHEMES, StabConfig

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_CONFIG = 2


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.scheme:
        cfg.stabilization = StabConfig(**{**asdict(cfg.stabilization), "scheme": args.scheme})
    strict = True if args.strict else (False if args.tolerant else None)
    res = run_case(cfg, args.out, strict=strict)
    print(json.dumps(res.metrics_dict, indent=2))
    effective_strict = cfg.solver.strict if strict is None else strict
    if res.diverged or (effective_strict and not res.metrics_dict["all_converged"]):
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_sample(args) -> int:
    mesh = load_mesh(args.mesh)
    names, _, values = load_field(args.field)
    cols = args.columns or names
    missing = [c for c in cols if c not in names]
    if missing:
        raise ConfigError(f"columns not in field file: {missing}")
    idx = [names.index(c) for c in cols]
    s, smp = line_sample(mesh, values[:, idx], args.p0, args.p1, args.n)
    write_line_csv(args.out, s, smp, cols)
    return EXIT_OK


def _run_files(path, field):
    """Metrics file and final field of a run given as a directory or a metrics file."""
    p = Path(path)
    if p.is_dir():
        if field is None and (p / "field_final.csv").exists():
            field = str(p / "field_final.csv")
        p = p / "metrics.json"
    try:
        return json.loads(p.read_text()), field
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p} is not a metrics file: {exc}") from None


def _cmd_compare(args) -> int:
    ma, fa = _run_files(args.a, args.field_a)
    mb, fb = _run_files(args.b, args.field_b)
    rep = compare_runs(ma, mb, fa, fb)
    print(format_report(rep))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rep, fh, indent=2)
    return EXIT_OK


def _cmd_gen_mesh(args) -> int:
    mesh = mini_stirrer(args.n, tuple(args.beam_half_cells), args.r_interface)
    save_mesh(args.out, mesh)
    print(f"wrote {args.out}: {mesh.n_nodes} nodes, {mesh.n_elements} elements")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="logmorph", description="Log-morphology RBC deformation solver")
    ap.add_argument("-v", "--verbose", action="store_true", help="print Newton iterations")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a case from a YAML config")
    r.add_argument("config")
    r.add_argument("--out", default="out", help="output directory")
    r.add_argument("--scheme", choices=SCHEMES, help="override the stabilization scheme")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--strict", action="store_true", help="exit 1 when any step fails to converge")
    g.add_argument("--tolerant", action="store_true", help="record unconverged steps and continue")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sample", help="sample field columns along a line")
    s.add_argument("--mesh", required=True)
    s.add_argument("--field", required=True)
    s.add_argument("--p0", type=float, nargs="+", required=True)
    s.add_argument("--p1", type=float, nargs="+", required=True)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--columns", nargs="*")
    s.add_argument("--out", default="line_sample.csv")
    s.set_defaults(func=_cmd_sample)

    c = sub.add_parser("compare", help="compare two metrics files")
    c.add_argument("a", help="run directory or metrics.json")
    c.add_argument("b", help="run directory or metrics.json")
    c.add_argument("--field-a")
    c.add_argument("--field-b")
    c.add_argument("--json", help="also write the report as JSON")
    c.set_defaults(func=_cmd_compare)

    m = sub.add_parser("gen-mesh", help="write the mini-stirrer mesh")
    m.add_argument("--n", type=int, default=44)
    m.add_argument("--beam-half-cells", type=int, nargs=2, default=(2, 12))
    m.add_argument("--r-interface", type=float, default=0.375)
    m.add_argument("--out", default="mini_stirrer.mesh")
    m.set_defaults(func=_cmd_gen_mesh)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    handler = logging.StreamHandler()
    handler.setLevel(logging.INFO if args.verbose else logging.WARNING)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logging.getLogger().addHandler(handler)
    try:
        return args.func(args)
    except (ConfigError, MeshError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        logging.getLogger().removeHandler(handler)


if __name__ == "__main__":
    sys.exit(main())
