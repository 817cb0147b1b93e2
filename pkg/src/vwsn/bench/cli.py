"""Measurement CLI.

    vwsn-bench vscd --mode warm|cold --iterations 50 --profile p.json \
               --topology t.json --out warm.csv
    vwsn-bench vsst --iterations 50 --profile p.json --topology t.json --out vsst.csv
    vwsn-bench scenario smart-home --topology t.json [--out events.csv]

Without --service the harness self-hosts the service (topology + profile)
on a loopback port. Exit code 0 iff every assertion passed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import VwsnError
from ..profiles import ScenarioConfig, load_scenario
from .client import ApiClient, EmbeddedService
from .runner import ExperimentConfig, run_vscd, run_vsst
from .scenario import run_smart_home
from .stats import summary_line

log = logging.getLogger(__name__)


def _add_common(sub: argparse.ArgumentParser, with_profile: bool = True,
                topology_required: bool = False) -> None:
    sub.add_argument("--topology", required=topology_required,
                     help="topology JSON file (needed unless --service is given)")
    if with_profile:
        sub.add_argument("--profile", help="delay/energy profile JSON (scenario schema)")
    sub.add_argument("--service", help="use an already-running service at this URL "
                                       "instead of self-hosting")
    sub.add_argument("--out", help="CSV output path")
    sub.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vwsn-bench")
    subs = parser.add_subparsers(dest="command", required=True)

    vscd = subs.add_parser("vscd", help="measure VS creation delay")
    vscd.add_argument("--mode", choices=("warm", "cold"), required=True)
    vscd.add_argument("--iterations", type=int, default=50)
    vscd.add_argument("--seed", type=int, default=0)
    _add_common(vscd)

    vsst = subs.add_parser("vsst", help="measure VS start time")
    vsst.add_argument("--iterations", type=int, default=50)
    vsst.add_argument("--seed", type=int, default=0)
    _add_common(vsst)

    scen = subs.add_parser("scenario", help="run an end-to-end scenario")
    scen.add_argument("name", choices=("smart-home",))
    scen.add_argument("--negative-control", action="store_true",
                      help="thresholds outside the signal range; expect zero events")
    # the scenario needs the topology either way: it is the crossing oracle's input
    _add_common(scen, with_profile=False, topology_required=True)
    return parser


def _with_client(args, fn):
    scenario = load_scenario(args.profile) if getattr(args, "profile", None) else ScenarioConfig()
    if args.service:
        client = ApiClient(args.service)
        try:
            return fn(client)
        finally:
            client.close()
    with EmbeddedService(args.topology, scenario=scenario) as hosted:
        client = hosted.client()
        try:
            return fn(client)
        finally:
            client.close()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if not args.service and not args.topology:
        print("need --topology (to self-host) or --service URL", file=sys.stderr)
        return 2
    try:
        if args.command == "vscd":
            cfg = ExperimentConfig(mode=f"vscd_{args.mode}", iterations=args.iterations,
                                   seed=args.seed, out_csv=args.out)
            result = _with_client(args, lambda c: run_vscd(c, cfg))
            print(summary_line(result))
            return 0
        if args.command == "vsst":
            cfg = ExperimentConfig(mode="vsst", iterations=args.iterations,
                                   seed=args.seed, out_csv=args.out)
            result = _with_client(args, lambda c: run_vsst(c, cfg))
            print(summary_line(result))
            return 0
        if args.command == "scenario":
            def go(client: ApiClient):
                return run_smart_home(client, args.topology,
                                      negative_control=args.negative_control)

            report = _with_client(args, go)
            sys.stdout.write(report.render())
            if args.out:
                Path(args.out).write_text(report.events_csv(), encoding="utf-8")
            return 0
    except VwsnError as e:
        print(f"FAIL [{e.code}] {e}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
