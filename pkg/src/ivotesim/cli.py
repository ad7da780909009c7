"""``ivotesim`` command line: simulate, attack, bench, scan.

Settings come from built-in defaults, then command-line flags, then the
``--config`` JSON file; a later source overrides an earlier one.

Exit codes: 0 success, 1 scenario failure or unmet prerequisite,
2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import certscan, sim
from .bruteforce import available_backends, benchmark
from .errors import BudgetExceeded, IVoteError, PreconditionError, ValidationError

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_output(p):
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.add_argument("--out", metavar="PATH", help="also write the JSON report to PATH")


def _add_election(p):
    p.add_argument("--config", metavar="PATH", help="JSON settings file (overrides flags)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--voters", type=int, default=10)
    p.add_argument("--pin-digits", type=int, default=6)
    p.add_argument("--id-digits", type=int, default=8)
    p.add_argument("--iterations", type=int, default=8000, help="PBKDF2 iterations")
    p.add_argument("--workers", type=int, default=1, help="brute-force worker threads")
    p.add_argument("--proxy", choices=sim.PROXY_MODES, default=None,
                   help="proxy position between voters and server")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ivotesim", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run a seeded election end to end")
    _add_election(p)
    _add_output(p)

    p = sub.add_parser("attack", help="run an attack scenario against a seeded election")
    p.add_argument("scenario", choices=sim.SCENARIOS)
    _add_election(p)
    p.add_argument("--targets", type=int, default=5, help="sessions to attack")
    p.add_argument("--full-space", action="store_true",
                   help="crack without knowing the iVoteID")
    p.add_argument("--via", choices=("inject", "crack"), default="inject",
                   help="how substitute obtains credentials")
    p.add_argument("--budget", type=float, default=None, metavar="SECONDS",
                   help="time budget for each crack")
    _add_output(p)

    p = sub.add_parser("bench", help="measure PBKDF2 search throughput")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--backend", choices=available_backends(), default=None)
    p.add_argument("--iterations", type=int, default=8000)
    p.add_argument("--sample", type=int, default=64, help="initial candidates per timed run")
    p.add_argument("--min-seconds", type=float, default=1.0)
    _add_output(p)

    p = sub.add_parser("scan", help="cluster TLS endpoints by certificate")
    p.add_argument("endpoints", help="file with one host[:port] per line")
    p.add_argument("--target", required=True, help="domain whose coverage is checked")
    p.add_argument("--parallelism", type=int, default=8)
    p.add_argument("--timeout", type=float, default=5.0)
    p.add_argument("--forbid-coverage", action="store_true",
                   help="exit 1 if any endpoint's certificate covers the target")
    _add_output(p)
    return parser


def run_config(args) -> sim.RunConfig:
    cfg = sim.RunConfig(seed=args.seed, voters=args.voters, pin_digits=args.pin_digits,
                        id_digits=args.id_digits, iterations=args.iterations,
                        workers=args.workers, proxy=args.proxy, out=args.out, json=args.json)
    if args.command == "attack":
        cfg.targets = args.targets
        cfg.known_id = not args.full_space
        cfg.substitute_via = args.via
        cfg.crack_budget_seconds = args.budget
    if args.config:
        try:
            cfg = sim.load_config_file(args.config, cfg)
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}") from None
    return cfg.validate()


def cmd_simulate(cfg: sim.RunConfig) -> tuple:
    report = sim.simulate(cfg)
    return report, EXIT_OK if report["ok"] else EXIT_FAILURE


def cmd_attack(cfg: sim.RunConfig, scenario: str) -> tuple:
    report = sim.attack(cfg, scenario)
    return report, EXIT_OK if report["ok"] else EXIT_FAILURE


def cmd_bench(args) -> tuple:
    if args.workers < 1 or args.iterations < 1 or args.sample < 1:
        raise ValidationError("workers, iterations and sample must be positive")
    rep = benchmark(args.workers, args.sample, backend=args.backend, iterations=args.iterations,
                    min_seconds=args.min_seconds)
    return {"command": "bench", **rep.as_dict()}, EXIT_OK


def cmd_scan(args) -> tuple:
    if args.parallelism < 1:
        raise ValidationError("parallelism must be positive")
    try:
        endpoints = certscan.load_endpoints(args.endpoints)
    except OSError as exc:
        raise ValidationError(f"cannot read endpoints: {exc}") from None
    report = certscan.footprint_report(endpoints, args.target, args.parallelism, args.timeout)
    out = {"command": "scan", **report.to_dict()}
    code = EXIT_FAILURE if args.forbid_coverage and report.coverage else EXIT_OK
    return out, code


def _human(report: dict) -> str:
    lines = []
    for key, value in report.items():
        if key in ("results", "certificates", "handshake_rtt_ms"):
            lines.append(f"{key}: {len(value)} entries (see --json)")
        elif isinstance(value, dict):
            lines.append(f"{key}:")
            lines.extend(f"  {k}: {v}" for k, v in value.items())
        elif isinstance(value, list) and len(value) > 8:
            lines.append(f"{key}: {len(value)} items")
        else:
            lines.append(f"{key}: {value}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            report, code = cmd_simulate(run_config(args))
        elif args.command == "attack":
            report, code = cmd_attack(run_config(args), args.scenario)
        elif args.command == "bench":
            report, code = cmd_bench(args)
        else:
            report, code = cmd_scan(args)
    except ValidationError as exc:
        print(f"ivotesim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, BudgetExceeded) as exc:
        print(f"ivotesim: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except IVoteError as exc:
        print(f"ivotesim: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text if args.json else _human(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
