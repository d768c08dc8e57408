"""Command-line entry point: ``mirake {simulate,nwts,oracle,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .designs import GRIDS, make_scenario
from .errors import ConfigError, DataError, InvalidInput, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("mirake")

SIM_SCENARIOS = ("case-control", "surrogate-additive", "surrogate-multiplicative")


def _grid_point(kind, row):
    grid = GRIDS[kind]
    if not 0 <= row < len(grid):
        raise ConfigError(f"grid row must lie in 0..{len(grid) - 1} for {kind}")
    return grid[row]


def _common(p):
    p.add_argument("--reps", type=int, default=None, help="Monte Carlo replicates K")
    p.add_argument("--imputations", type=int, default=None, help="imputations M")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--estimators", default=None, help="comma-separated report labels")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--config", default=None, help="INI file; flags override its values")


def build_parser():
    ap = argparse.ArgumentParser(prog="mirake", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte Carlo study on a simulation scenario")
    s.add_argument("--scenario", choices=SIM_SCENARIOS, default=None)
    s.add_argument("--grid-row", type=int, action="append", default=None,
                   help="row of the scenario grid (repeatable; default all rows)")
    s.add_argument("--bootstrap", type=int, default=None, help="bootstrap reps B for the GOF test")
    s.add_argument("--diagnostics", default=None, help="comma-separated subset of mp,gof")
    s.add_argument("--null-reps", type=int, default=None)
    s.add_argument("--gof-scope", choices=("cohort", "phase2"), default=None,
                   help="units the lack-of-fit test sees (default: cohort for case-control)")
    _common(s)

    n = sub.add_parser("nwts", help="resampling study on the NWTS cohort")
    n.add_argument("--data", default=None, help="NWTS csv file")
    _common(n)

    o = sub.add_parser("oracle", help="print the pseudo-true parameters")
    o.add_argument("--scenario", choices=SIM_SCENARIOS, required=True)
    o.add_argument("--grid-row", type=int, action="append", default=None)
    o.add_argument("--method", choices=("default", "quadrature"), default="default")

    r = sub.add_parser("report", help="render a stored report")
    r.add_argument("--in", dest="indir", required=True)
    r.add_argument("--format", choices=("csv", "md"), default="md")
    return ap


def _config(args, kind):
    base = {}
    if args.config:
        cfg = harness.ExperimentConfig.from_ini(args.config)
        base = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
        if kind is None:
            kind = cfg.scenario
    if kind is None:
        raise ConfigError("a scenario is required (flag or config file)")
    kind = harness.normalise_kind(kind)
    if base and base.get("scenario") != kind:
        base["grid"] = ()
    base["scenario"] = kind
    if getattr(args, "grid_row", None):
        base["grid"] = tuple(_grid_point(kind, i) for i in args.grid_row)
    flags = {
        "K": args.reps, "M": args.imputations, "seed": args.seed, "workers": args.workers,
        "out": args.out, "B": getattr(args, "bootstrap", None),
        "null_reps": getattr(args, "null_reps", None), "nwts_data": getattr(args, "data", None),
        "gof_scope": getattr(args, "gof_scope", None),
    }
    base.update({k: v for k, v in flags.items() if v is not None})
    if args.estimators:
        base["estimators"] = tuple(e.strip() for e in args.estimators.split(",") if e.strip())
    if getattr(args, "diagnostics", None) is not None:
        base["diagnostics"] = tuple(d.strip() for d in args.diagnostics.split(",") if d.strip())
    return harness.ExperimentConfig(**base)


def _run(cfg):
    def progress(i, n):
        log.info("grid point %d/%d done", i + 1, n)

    report = harness.run_monte_carlo(cfg, progress=progress)
    if cfg.out:
        for p in harness.emit_report(report, cfg.out):
            log.info("wrote %s", p)
        Path(cfg.out, "config.json").write_text(json.dumps(harness.config_dict(cfg), indent=2) + "\n")
    sys.stdout.write(harness.report_to_markdown(report))
    return EXIT_OK


def cmd_simulate(args):
    return _run(_config(args, args.scenario))


def cmd_nwts(args):
    return _run(_config(args, "nwts"))


def cmd_oracle(args):
    kind = harness.normalise_kind(args.scenario)
    rows = args.grid_row or range(len(GRIDS[kind]))
    method = None if args.method == "default" else "quadrature"
    print("beta0,delta0,alpha_star,beta_star")
    for i in rows:
        b, d = _grid_point(kind, i)
        a_s, b_s = np.asarray(harness.pseudo_true_oracle(make_scenario(kind, b, d), method=method))[:2]
        print(f"{b!r},{d!r},{a_s:.6f},{b_s:.6f}")
    return EXIT_OK


def cmd_report(args):
    path = Path(args.indir)
    path = path / "report.csv" if path.is_dir() else path
    if not path.exists():
        raise DataError(f"no report found at {path}")
    report = harness.read_report_csv(path.read_text())
    if args.format == "csv":
        sys.stdout.write(harness.report_to_csv(report))
    else:
        sys.stdout.write(harness.report_to_markdown(report))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "nwts": cmd_nwts, "oracle": cmd_oracle, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidInput as exc:
        # bad report files and similar inputs
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
