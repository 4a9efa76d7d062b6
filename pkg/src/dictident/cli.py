"""Command-line driver.

Usage::

    dictident {deltaf,localmin,outliers,samplen,report} --config FILE
              [--seed N] [--out PATH] [--threads N] [--format csv|json]

Exit status: 0 on completion, 2 on a configuration error, 3 when the
fraction of cells whose solver did not converge exceeds ``failure_fraction``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

from . import __version__
from .config import load_config
from .errors import ConfigError
from .experiments import (
    SCHEMAS,
    nonconverged_fraction,
    run_delta_F,
    run_local_min_search,
    run_outlier_sweep,
    run_sample_complexity_sweep,
)
from .theorems import theorem_report

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 2, 3

RUNNERS = {
    "deltaf": run_delta_F,
    "localmin": run_local_min_search,
    "outliers": run_outlier_sweep,
    "samplen": run_sample_complexity_sweep,
}

REPORT_COLUMNS = ["kind", "name", "lhs", "rhs", "relation", "satisfied", "value"]


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if hasattr(v, "item"):  # numpy scalars
        return _json_safe(v.item())
    return v


def report_rows(rep) -> list:
    """Flatten a theorem report into CSV rows."""
    rows = [dict(kind="condition", name=c.name, lhs=c.lhs, rhs=c.rhs, relation=c.relation, satisfied=c.satisfied)
            for c in rep.conditions]
    for name, v in rep.constants.items():
        if name == "radius_interval":
            rows.append(dict(kind="constant", name="radius_lower", value=v[0]))
            rows.append(dict(kind="constant", name="radius_upper", value=v[1]))
        else:
            rows.append(dict(kind="constant", name=name, value=v))
    for section in ("finite_sample", "outlier"):
        for name, v in (getattr(rep, section) or {}).items():
            rows.append(dict(kind=section, name=name, value=v))
    return rows


def write_rows(rows, columns, fmt, fh) -> None:
    if fmt == "json":
        json.dump(_json_safe(rows), fh, indent=2)
        fh.write("\n")
        return
    w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dictident", description="Local identifiability experiments for sparse coding dictionaries.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "deltaf": "objective differences on spheres around the reference",
        "localmin": "alternating minimization started near the reference",
        "outliers": "sphere positivity under growing outlier energy",
        "samplen": "failure rate of sphere positivity versus the number of signals",
        "report": "conditions and constants for the configured instance",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="key = value configuration file")
        p.add_argument("--seed", type=int, default=None, help="base seed (overrides the config)")
        p.add_argument("--out", default=None, help="output file (default: standard output)")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        conf = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "report":
        r = conf.radii[0] if "radii" in conf.raw else None
        n_in = conf.n if "n" in conf.raw else None
        rep = theorem_report(conf.D0, conf.model, conf.lam, r=r, x=conf.x, n_in=n_in)
        if args.format == "json":
            payload = rep.to_dict()
            payload.update(seed=conf.seed, config_hash=conf.config_hash, version=__version__)
            rows, columns = payload, None
        else:
            rows, columns = report_rows(rep), REPORT_COLUMNS
        status = EXIT_OK
    else:
        rows = RUNNERS[args.command](conf, threads=args.threads)
        columns = SCHEMAS[args.command]
        frac = nonconverged_fraction(rows)
        status = EXIT_NONCONVERGED if frac > conf.failure_fraction else EXIT_OK
        if status:
            print(f"solver did not converge in {frac:.1%} of cells", file=sys.stderr)

    buf = io.StringIO()
    write_rows(rows, columns, args.format, buf)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
