"""Command line entry point: run, list-scenarios, validate."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, ExperimentConfig
from .scenarios import SCENARIOS, OutputConflict, ScenarioFailure, get_scenario, run_scenario

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="paramhom", description="Parametric multiscale elasticity studies")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and write its CSVs")
    run.add_argument("scenario")
    run.add_argument("--config", help="INI file; defaults are used for missing keys")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                     help="override one config key (repeatable)")
    run.add_argument("--out", help="output directory (default: run.out)")
    run.add_argument("--deterministic", action="store_true", help="sequential evaluation of independent items")
    run.add_argument("--force", action="store_true", help="overwrite a run made with a different config")
    sub.add_parser("list-scenarios", help="list scenario names")
    val = sub.add_parser("validate", help="check a config file without running it")
    val.add_argument("--config", required=True)
    val.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    show = sub.add_parser("show-config", help="print the default config of a scenario")
    show.add_argument("scenario")
    return ap


def _load(scenario: str | None, path: str | None, overrides) -> ExperimentConfig:
    if path:
        cfg = ExperimentConfig.from_file(path, scenario)
    else:
        cfg = ExperimentConfig.defaults(scenario)
    return cfg.with_overrides(overrides).validate()


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-scenarios":
            for name, sc in SCENARIOS.items():
                print(f"{name:18s} {sc.description}")
            return EXIT_OK
        if args.command == "show-config":
            get_scenario(args.scenario)
            print(ExperimentConfig.defaults(args.scenario).to_text(), end="")
            return EXIT_OK
        if args.command == "validate":
            cfg = _load(None, args.config, args.overrides)
            print(f"ok: scenario {cfg.scenario}, config hash {cfg.hash()}")
            return EXIT_OK
        get_scenario(args.scenario)
        cfg = _load(args.scenario, args.config, args.overrides)
        if args.deterministic:
            cfg = cfg.with_overrides(["run.deterministic=true"])
        res = run_scenario(cfg, args.out, args.force)
        for c in res.checks:
            print(f"PASS criterion {c.criterion}: {c.name} = {c.value:.6g}")
        print(f"{res.scenario}: wrote {', '.join(res.files)} to {res.out_dir} ({res.wall_time:.1f} s)")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OutputConflict as exc:
        print(f"refusing to overwrite: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioFailure as exc:
        for c in exc.failed:
            print(f"FAIL criterion {c.criterion}: {c.name} = {c.value:.6g} (need {c.relation} {c.limit:.4g})",
                  file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
