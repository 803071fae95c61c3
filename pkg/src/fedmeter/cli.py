"""Command-line entry point.

Subcommands: synth-data, train, attack-eval, federate, sweep, report.
Exit codes: 0 success, 2 config error, 3 numeric failure (non-finite loss),
4 I/O error.  Relative output directories resolve under $FEDMETER_OUTPUT_ROOT
when it is set.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

from .data import DataError, synthesize_household
from .experiment import (ConfigError, apply_override, config_from_dict,
                         run_experiment)
from .models import NumericError
from .seeding import derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmeter",
        description="Federated smart-meter anomaly detection under adversarial attacks")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth-data", help="write a synthetic hourly-readings CSV")
    synth.add_argument("--households", type=int, default=19)
    synth.add_argument("--days", type=int, default=365)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="output CSV path")
    synth.set_defaults(func=cmd_synth_data)

    for name, helptext in (
            ("train", "clean training and clean-test evaluation"),
            ("attack-eval", "train clean, evaluate under inference-time attack"),
            ("federate", "federated run, poisoned when an attack is configured"),
            ("sweep", "magnitude sweeps over epsilon or malicious fraction")):
        cmd = sub.add_parser(name, help=helptext)
        cmd.add_argument("--config", help="experiment config JSON")
        cmd.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override a config entry, e.g. train.epochs=20")
        cmd.add_argument("--model", choices=["lstm", "transformer"])
        cmd.add_argument("--setting", choices=["central", "federated"])
        cmd.add_argument("--seed", type=int, help="master seed")
        cmd.add_argument("--out", help="output directory")
        if name == "sweep":
            cmd.add_argument("--axis", choices=["epsilon", "malicious"],
                             required=True)
    sub.choices["train"].set_defaults(func=cmd_train)
    sub.choices["attack-eval"].set_defaults(func=cmd_attack_eval)
    sub.choices["federate"].set_defaults(func=cmd_federate)
    sub.choices["sweep"].set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="combine metrics.csv files from run dirs")
    report.add_argument("runs", nargs="+", help="run directories")
    report.add_argument("--out", help="combined CSV path (default: stdout)")
    report.set_defaults(func=cmd_report)
    return parser


def _config_from_args(args) -> "ExperimentConfig":
    raw = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: not valid JSON ({exc})") from None
    for override in args.set or []:
        if "=" not in override:
            raise ConfigError(f"--set expects KEY=VALUE, got {override!r}")
        key, value = override.split("=", 1)
        apply_override(raw, key, value)
    if args.model:
        raw["model"] = args.model
    if args.setting:
        raw["setting"] = args.setting
    if args.seed is not None:
        raw["master_seed"] = args.seed
    if args.out:
        raw["output_dir"] = args.out
    return config_from_dict(raw)


def cmd_synth_data(args) -> int:
    rows = 0
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["household_id", "timestamp", "kwh"])
        for h in range(args.households):
            hid = f"h{h:02d}"
            series = synthesize_household(
                args.days, seed=derive_seed(args.seed, "data", h), household_id=hid)
            for ts, kwh in zip(series.timestamps, series.kwh):
                writer.writerow([hid, str(ts), f"{kwh:.12g}"])
                rows += 1
    print(f"wrote {rows} readings for {args.households} household(s) to {args.out}")
    return EXIT_OK


def _run(cfg) -> int:
    result = run_experiment(cfg)
    print(f"run '{cfg.name}': {len(result.rows)} metrics row(s) -> {result.output_dir}")
    for row in result.rows:
        print("  " + ", ".join(row))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = replace(_config_from_args(args), protocol="baseline")
    return _run(cfg)


def cmd_attack_eval(args) -> int:
    cfg = replace(_config_from_args(args), protocol="inference_attack")
    return _run(cfg)


def cmd_federate(args) -> int:
    cfg = _config_from_args(args)
    protocol = "training_attack" if cfg.attack.family != "none" else "baseline"
    cfg = replace(cfg, setting="federated", protocol=protocol)
    return _run(cfg)


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    protocol = "sweep_epsilon" if args.axis == "epsilon" else "sweep_malicious"
    cfg = replace(cfg, setting="federated", protocol=protocol)
    return _run(cfg)


def cmd_report(args) -> int:
    combined = [["run", "setting", "attack", "acc", "prec", "rec", "f1", "asr"]]
    for run_dir in args.runs:
        path = os.path.join(run_dir, "metrics.csv")
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)  # header
            for row in reader:
                combined.append([os.path.basename(os.path.normpath(run_dir))] + row)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(combined)
        print(f"wrote {len(combined) - 1} row(s) to {args.out}")
    else:
        for row in combined:
            print(",".join(row))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
