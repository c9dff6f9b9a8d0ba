"""Command-line entry point: ``eemgrid run|compare|validate-feeder|gen-scenario``.

Exit codes: 0 success, 1 invalid input, 2 a run failed.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .exceptions import FeederValidationError, ScenarioError
from .experiment import (PRESETS, comparison_table, format_table, load_config, preset,
                         run_experiment)
from .feeder import builtin_sce56, load_feeder
from .scenario import gen_synthetic, write_trace

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


def _err(msg):
    prefix = "error: " if os.environ.get("NO_COLOR") is not None or not sys.stderr.isatty() \
        else "\033[31merror:\033[0m "
    print(prefix + msg, file=sys.stderr)


def _resolve_config(args):
    if args.config and args.preset:
        raise UsageError("--config and --preset are mutually exclusive")
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        raise UsageError("one of --config or --preset is required")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "replicas", None) is not None:
        cfg = replace(cfg, replicas=args.replicas)
    return cfg


def _out_dir(args, cfg):
    return Path(args.out or cfg.output_dir or f"runs/{cfg.name}")


def _execute(cfg, out, jobs):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")
    results = run_experiment(cfg, out_dir=out, jobs=jobs)
    rows = comparison_table(cfg, results)
    with open(out / "table.json", "w") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
    print(format_table(rows))
    failed = [r for r in results if r.error]
    for r in failed:
        _err(f"{r.controller.label} replica {r.replica}: {r.error}")
    print(f"outputs written to {out}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_run(args):
    cfg = _resolve_config(args)
    return _execute(cfg, _out_dir(args, cfg), args.jobs)


def cmd_compare(args):
    cfg = _resolve_config(args)
    if len(cfg.controllers) < 2:
        raise UsageError("compare needs at least two controllers in the config")
    return _execute(cfg, _out_dir(args, cfg), args.jobs)


def cmd_validate_feeder(args):
    try:
        tree = builtin_sce56() if args.path in (None, "sce56") else load_feeder(args.path)
    except (FeederValidationError, ValueError, OSError) as exc:
        print(f"INVALID: {exc}")
        return EXIT_INVALID
    info = tree.summary()
    print(f"feeder {info['name']}: valid")
    print(f"  buses {info['n_buses']}, lines {info['n_lines']}, depth {info['max_depth']}")
    print(f"  base {info['v_base_kv']} kV, {info['s_base_mva']} MVA")
    print(f"  PV buses {len(info['pv_buses'])}: {info['pv_buses']}")
    print(f"  capacitor buses {len(info['capacitor_buses'])}: {info['capacitor_buses']}")
    print(f"  load buses {info['load_buses']}")
    print(f"  r p.u. range {info['r_pu_range']}, x p.u. range {info['x_pu_range']}")
    for b in info["suspect_buses"]:
        spec = tree.bus_specs[tree.index_of(b)]
        print(f"  SUSPECT bus {b}: printed peak load {spec.peak_load} MVA flagged as doubtful")
    for row in info["suspect_rows"]:
        print(f"  SUSPECT row: {row}")
    return EXIT_OK


def cmd_gen_scenario(args):
    cfg = _resolve_config(args)
    tree = cfg.build_feeder()
    if not hasattr(cfg.scenario, "noise_std_fraction"):
        raise UsageError("gen-scenario needs a synthetic scenario")
    slots = gen_synthetic(tree, replace(cfg.scenario, seed=cfg.seed))
    out = _out_dir(args, cfg)
    paths = write_trace(slots, tree, out)
    for kind, p in paths.items():
        print(f"{kind}: {p}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="eemgrid", description="Distribution-feeder energy management runs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, replicas=True):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--preset", choices=sorted(PRESETS), help="bundled experiment")
        sp.add_argument("--seed", type=int, help="base seed (replica r uses seed + r)")
        sp.add_argument("--out", help="output directory (default runs/<name>)")
        if replicas:
            sp.add_argument("--replicas", type=int, help="override the replica count")
            sp.add_argument("--jobs", type=int, default=1, help="parallel replica workers")

    sp = sub.add_parser("run", help="run every controller in a config")
    common(sp)
    sp.set_defaults(func=cmd_run)
    sp = sub.add_parser("compare", help="compare two or more controllers on common scenario draws")
    common(sp)
    sp.set_defaults(func=cmd_compare)
    sp = sub.add_parser("validate-feeder", help="check a feeder JSON file")
    sp.add_argument("path", nargs="?", help="feeder JSON (default: the bundled sce56)")
    sp.set_defaults(func=cmd_validate_feeder)
    sp = sub.add_parser("gen-scenario", help="write a synthetic scenario as trace CSVs")
    common(sp, replicas=False)
    sp.set_defaults(func=cmd_gen_scenario)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _err(str(exc))
        return EXIT_INVALID
    except (FeederValidationError, ScenarioError, ValueError, TypeError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    except Exception as exc:  # anything else is a failed run
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
