"""Request loop: one JSON object per line in, one per line out.

Every response carries the request's id and either `ok: true` with a
`result` object or `ok: false` with an `error` string. A line that is
not a JSON object cannot yield an id, so the error response echoes the
offending line instead. The loop never raises; any failure becomes an
error response and the next line is read.
"""

from __future__ import annotations

import json
import socket
import sys

from .checkpoint import CheckpointRuntime

_MAX_ECHO = 512  # cap echoed garbage so one bad line cannot flood the log


def _dispatch(runtime: CheckpointRuntime, request: dict) -> dict:
    kind = request.get("kind")
    if kind == "meta":
        return runtime.meta()
    if kind == "logits":
        return {"logprobs": runtime.next_token_logprobs(request.get("tokens"))}
    if kind == "tokenize":
        return {"tokens": runtime.tokenize(request.get("text"))}
    if kind == "detokenize":
        return {"text": runtime.detokenize(request.get("tokens"))}
    if kind == "hidden":
        return runtime.hidden(request.get("text"))
    if kind == "embed":
        return {"vector": runtime.embed(request.get("text"))}
    if kind == "extract":
        return {"spans": runtime.extract(request.get("answer"))}
    raise ValueError(f"unknown kind {kind!r}")


def handle_line(runtime: CheckpointRuntime, line: str) -> dict:
    """Turn one raw request line into one response object."""
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"id": None, "ok": False, "error": f"malformed JSON: {exc}",
                "line": line.rstrip("\n")[:_MAX_ECHO]}
    if not isinstance(request, dict):
        return {"id": None, "ok": False, "error": "request must be a JSON object",
                "line": line.rstrip("\n")[:_MAX_ECHO]}
    req_id = request.get("id")
    try:
        result = _dispatch(runtime, request)
    except Exception as exc:  # noqa: BLE001 - the loop must survive anything
        return {"id": req_id, "ok": False, "error": str(exc)}
    return {"id": req_id, "ok": True, "result": result}


def serve_stream(runtime: CheckpointRuntime, reader, writer) -> None:
    for line in reader:
        if not line.strip():
            continue
        response = handle_line(runtime, line)
        writer.write(json.dumps(response) + "\n")
        writer.flush()


def serve_stdio(runtime: CheckpointRuntime) -> None:
    serve_stream(runtime, sys.stdin, sys.stdout)


def serve_socket(runtime: CheckpointRuntime, host: str, port: int) -> None:
    """Accept localhost connections one at a time, same line protocol."""
    with socket.create_server((host, port)) as server:
        bound = server.getsockname()[1]
        print(f"listening on {host}:{bound}", file=sys.stderr, flush=True)
        while True:
            conn, _ = server.accept()
            with conn, conn.makefile("rw", encoding="utf-8", newline="\n") as stream:
                try:
                    serve_stream(runtime, stream, stream)
                except (BrokenPipeError, ConnectionResetError):
                    continue
