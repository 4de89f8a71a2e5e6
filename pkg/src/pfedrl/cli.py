"""Command-line entry point: ``pfedrl run | sweep | check``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .checks import SUITES, run_checks
from .harness import SWEEP_METRICS, ConfigError, load_config, run_experiment, sweep_agents

ENV_SEED = "PFEDRL_SEED"
ENV_OUT = "PFEDRL_OUT"

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("pfedrl")


def _agent_list(text: str) -> list[int]:
    try:
        counts = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not counts or any(n < 1 for n in counts):
        raise argparse.ArgumentTypeError("agent counts must be positive")
    return counts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfedrl", description="Federated TD/Q learning with a shared representation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one configuration and write metrics")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None, help=f"overrides the config; env {ENV_SEED}")
    run.add_argument("--out", default=None, help=f"output directory; env {ENV_OUT}")

    sweep = sub.add_parser("sweep", help="rounds-to-threshold across agent counts")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--agents", type=_agent_list, required=True)
    sweep.add_argument("--threshold", type=float, required=True)
    sweep.add_argument("--seeds", type=int, default=5)
    sweep.add_argument("--metric", choices=SWEEP_METRICS, default="tracking")
    sweep.add_argument("--out", default=None, help="write the table as JSON here")

    check = sub.add_parser("check", help="run the property suites")
    check.add_argument("--only", choices=sorted(SUITES), action="append")
    return parser


def _resolve(flag, env_name, cast=str):
    if flag is not None:
        return flag
    raw = os.environ.get(env_name)
    if raw is None or raw == "":
        return None
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"{env_name}={raw!r} is not a valid value", field=env_name) from None


def _cmd_run(args) -> int:
    config = load_config(args.config)
    seed = _resolve(args.seed, ENV_SEED, int)
    if seed is not None:
        config = config.replace(seed=seed)
    out = _resolve(args.out, ENV_OUT) or config.output
    summary = run_experiment(config, out)
    print(json.dumps({k: summary[k] for k in ("variant", "seed", "final_value_mse", "episodes_to_epsilon")}))
    print(f"wrote {out}/metrics.csv and {out}/summary.json")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    if args.seeds < 1:
        raise ConfigError("--seeds must be positive", field="seeds")
    table = sweep_agents(config, args.agents, args.threshold, seeds=range(args.seeds), metric=args.metric)
    print(f"{'N':>4} {'rounds':>8} {'speedup':>8}  censored")
    for row in table:
        print(f"{row['agents']:>4} {row['rounds']:>8.1f} {row['speedup']:>8.3f}  {row['censored']}")
    out = _resolve(args.out, ENV_OUT)
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "sweep.json"), "w") as fh:
            json.dump(table, fh, indent=1)
    return EXIT_OK


def _cmd_check(args) -> int:
    results = run_checks(args.only)
    for res in results:
        print(res.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "check": _cmd_check}
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as err:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
