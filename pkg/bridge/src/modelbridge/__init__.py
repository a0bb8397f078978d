"""Serve a transformer checkpoint over line-delimited JSON.

One process wraps one checkpoint and answers stateless requests for
next-token log-probabilities, hidden states, pooled embeddings, token
round trips, and key-phrase extraction, over stdio pipes or a localhost
socket.
"""

from .checkpoint import CheckpointRuntime
from .server import handle_line, serve_socket, serve_stdio

__all__ = ["CheckpointRuntime", "handle_line", "serve_socket", "serve_stdio"]
