"""Command-line entry point: ``dmanc {run,sweep,compare,analyze}``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import experiments
from .analysis import bounds_report, complexity, estimate_wiener, write_json
from .dsp import make_source
from .errors import DmancError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3


def _common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="scenario JSON file")
    p.add_argument("--preset", choices=sorted(experiments.PRESETS), help="defaults layered under the config")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", help="output directory")


def _parser():
    ap = argparse.ArgumentParser(prog="dmanc", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate every algorithm of a scenario")
    _common(p)

    p = sub.add_parser("sweep", help="repeat a scenario along one axis")
    _common(p)
    p.add_argument("--axis", required=True, choices=("H", "mu", "delta"))
    p.add_argument("--values", help="comma-separated values (H defaults to the config's H_sweep)")

    p = sub.add_parser("compare", help="compare algorithm results")
    _common(p, config_required=False)
    p.add_argument("records", nargs="*", help="record.json files; with --config the scenario is run instead")
    p.add_argument("--mode", default="steady-state-weights", choices=("steady-state-weights", "nse-curves"))

    p = sub.add_parser("analyze", help="step bounds, complexity and Wiener NSE for a scenario")
    _common(p)
    p.add_argument("--delays", default="0", help="comma-separated delays in samples for the delayed bound")
    p.add_argument("--wiener", action="store_true", help="also solve the coupled Wiener problem")
    return ap


def _parse_values(text, axis):
    if not text:
        return None
    conv = float if axis == "mu" else int
    try:
        return [conv(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise experiments.ConfigError(f"bad --values: {exc}") from exc


def _emit(obj, out, name):
    print(json.dumps(obj, indent=2, sort_keys=True))
    if out:
        os.makedirs(out, exist_ok=True)
        write_json(obj, os.path.join(out, name))


def _cmd_run(args):
    sc = experiments.load_scenario(args.config, args.preset, args.seed, args.out)
    rec = experiments.run(sc)
    for alg, res in rec.results.items():
        print(json.dumps(res.summary(), sort_keys=True))
    return EXIT_OK


def _cmd_sweep(args):
    sc = experiments.load_scenario(args.config, args.preset, args.seed, args.out)
    res = experiments.sweep(sc, args.axis, _parse_values(args.values, args.axis))
    print(json.dumps(res.to_json(), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_compare(args):
    if args.config:
        sc = experiments.load_scenario(args.config, args.preset, args.seed, args.out)
        records = [experiments.run(sc)]
    else:
        if not args.records:
            raise experiments.ConfigError("compare needs record files or --config")
        records = []
        for path in args.records:
            with open(path) as fh:
                records.append(experiments.RunRecord.from_json(json.load(fh)))
    _emit(experiments.compare(records, args.mode), args.out, "compare.json")
    return EXIT_OK


def _cmd_analyze(args):
    sc = experiments.load_scenario(args.config, args.preset, args.seed, args.out)
    scene = experiments.build_scene(sc)
    noise = dict(sc.noise)
    noise.setdefault("seed", sc.seed + 1)
    source = make_source(noise, sc.fs)
    try:
        delays = [int(v) for v in args.delays.split(",") if v.strip()]
    except ValueError as exc:
        raise experiments.ConfigError(f"bad --delays: {exc}") from exc
    H = int(sc.compensation.get("H", 16))
    report = {
        "scenario_hash": sc.digest(),
        "bounds": bounds_report(scene, sc.N, delays, source),
        "complexity": {k: {"mults": m, "adds": a} for k, (m, a) in complexity(scene.K, sc.N, scene.L, H).items()},
    }
    if args.wiener:
        sol = estimate_wiener(scene, sc.N, make_source(noise, sc.fs))
        report["wiener_nse_db"] = sol.nse_db
    _emit(report, args.out, "analysis.json")
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "compare": _cmd_compare, "analyze": _cmd_analyze}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DmancError as exc:
        print(f"dmanc: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"dmanc: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
