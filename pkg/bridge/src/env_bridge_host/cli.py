"""Command-line entry point: host an environment on a port."""

from __future__ import annotations

import argparse
import sys

from .adapters import REGISTRY
from .server import DEFAULT_PORT, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="env-bridge-host")
    parser.add_argument("--env", default="dummy",
                        help=f"environment id; known: {sorted(REGISTRY)}")
    parser.add_argument("--port", type=int, default=DEFAULT_PORT)
    parser.add_argument("--host", default="127.0.0.1")
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        serve(args.env, port=args.port, host=args.host)
    except KeyError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
