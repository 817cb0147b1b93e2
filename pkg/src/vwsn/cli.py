"""Service entry point: ``vwsn-service --topology t.json --listen 127.0.0.1:8080``."""

from __future__ import annotations

import argparse
import logging
import sys

import uvicorn

from .api import build_app
from .service import Service


def parse_listen(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"--listen wants host:port, got {value!r}")
    return host, int(port)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="vwsn-service",
                                     description="Run the virtualized WSN IaaS service.")
    parser.add_argument("--topology", required=True, help="topology JSON file")
    parser.add_argument("--listen", type=parse_listen, default=("127.0.0.1", 8080),
                        help="address:port to serve on (default 127.0.0.1:8080)")
    parser.add_argument("--scenario", help="delay/energy scenario JSON file")
    parser.add_argument("--realtime", action="store_true",
                        help="pace the virtual clock against wall time")
    parser.add_argument("--snapshot", help="write a registry snapshot here after boot")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")

    service = Service.build(args.topology, scenario=args.scenario,
                            realtime=args.realtime, forward_data=True)
    if args.snapshot:
        service.write_snapshot(args.snapshot)
    service.start()
    app = build_app(service)
    host, port = args.listen
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        service.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
