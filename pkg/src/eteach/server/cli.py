"""eteach-server: run the classroom server from the command line."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
from pathlib import Path

from eteach.server.config import ServerConfig
from eteach.server.core import ServerCore


def _addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eteach-server",
                                description="Virtual-classroom server")
    p.add_argument("--listen", type=_addr, default=("127.0.0.1", 8710),
                   metavar="HOST:PORT", help="TCP listener (default 127.0.0.1:8710)")
    p.add_argument("--gateway", default="127.0.0.1:8711", metavar="HOST:PORT|off",
                   help="WebSocket gateway for the browser UI (default 127.0.0.1:8711)")
    p.add_argument("--repo-dir", type=Path, default=Path("data/repo"))
    p.add_argument("--users", type=Path, default=Path("data/users.json"))
    p.add_argument("--bookmarks", type=Path, default=Path("data/bookmarks.json"))
    p.add_argument("--idle-threshold-secs", type=float, default=300.0)
    p.add_argument("--sweep-secs", type=float, default=10.0)
    p.add_argument("--enable-fault-hooks", action="store_true",
                   help="allow data-manager fault injection (test/ops builds)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    gateway_on = args.gateway != "off"
    gw_host, gw_port = _addr(args.gateway) if gateway_on else ("127.0.0.1", 0)
    config = ServerConfig(
        repo_dir=args.repo_dir,
        users_path=args.users,
        bookmarks_path=args.bookmarks,
        listen_host=args.listen[0],
        listen_port=args.listen[1],
        gateway_host=gw_host,
        gateway_port=gw_port,
        idle_threshold=args.idle_threshold_secs,
        sweep_interval=args.sweep_secs,
        enable_fault_hooks=args.enable_fault_hooks,
        enable_gateway=gateway_on,
    )
    core = ServerCore(config)
    try:
        core.start()
    except Exception as exc:
        print(f"eteach-server: {exc}", file=sys.stderr)
        return 2
    host, port = core.listen_addr
    print(f"listening on {host}:{port}")
    if core.gateway_addr:
        gh, gp = core.gateway_addr
        print(f"websocket gateway on ws://{gh}:{gp}")
    done = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: done.set())
    signal.signal(signal.SIGTERM, lambda *_: done.set())
    done.wait()
    core.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
