"""Command line client.

Experiments run in-process by default; with ``--server URL`` the
configuration is posted to a running service and the returned files are
written locally, byte for byte.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from scipy import fft as sfft

from .experiments import EXIT_CONFIG, SUBCOMMANDS, Outcome, dispatch, write_outputs


class _Parser(argparse.ArgumentParser):
    # usage errors exit with the configuration status, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sdflab", description="Surface diffusion flow experiments.")
    sub = parser.add_subparsers(dest="command", metavar="{run,stability,identity,probe,serve}", parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="key = value configuration file")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--server", default=None, help="base URL of a running service")
        p.add_argument("--workers", type=int, default=1, help="FFT worker threads (results do not depend on it)")
    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _remote(server: str, command: str, text: str, out: Path) -> int:
    import httpx

    try:
        resp = httpx.post(f"{server.rstrip('/')}/{command}", json={"config": text}, timeout=None)
    except httpx.HTTPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if resp.status_code == 400:
        print(f"error: {resp.json()['detail']}", file=sys.stderr)
        return EXIT_CONFIG
    resp.raise_for_status()
    body = resp.json()
    write_outputs(Outcome(body["exit_code"], body["files"], body["summary"]), out)
    if body.get("message"):
        print(body["message"], file=sys.stderr)
    return body["exit_code"]


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a subcommand is required")
    if args.command == "serve":
        from .service import serve

        serve(args.host, args.port)
        return 0
    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        parser.error("--workers must be positive")
    if args.server:
        return _remote(args.server, args.command, text, args.out)
    with sfft.set_workers(args.workers):
        return dispatch(args.command, text, args.out)


if __name__ == "__main__":
    sys.exit(main())
