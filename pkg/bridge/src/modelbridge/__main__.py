"""CLI entry point: python3 -m modelbridge --checkpoint DIR [options]."""

from __future__ import annotations

import argparse
import sys

from .checkpoint import CheckpointRuntime
from .server import serve_socket, serve_stdio


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="modelbridge",
        description="Serve a causal LM checkpoint over line-delimited JSON.",
    )
    parser.add_argument("--checkpoint", required=True,
                        help="directory of a saved model + tokenizer")
    parser.add_argument("--transport", choices=("stdio", "socket"),
                        default="stdio")
    parser.add_argument("--layer-index", type=int, default=-2,
                        help="hidden-state layer served by hidden/embed "
                             "(default: penultimate)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=0,
                        help="socket port; 0 picks a free one (printed "
                             "to stderr)")
    args = parser.parse_args(argv)

    try:
        runtime = CheckpointRuntime.load(args.checkpoint, args.layer_index)
    except Exception as exc:  # noqa: BLE001 - report and exit, don't trace
        print(f"failed to load checkpoint: {exc}", file=sys.stderr)
        return 2
    if args.transport == "stdio":
        serve_stdio(runtime)
    else:
        serve_socket(runtime, args.host, args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
