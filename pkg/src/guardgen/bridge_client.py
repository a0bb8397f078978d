"""Client for a served model speaking line-delimited JSON.

The server (a separate process, typically wrapping a real checkpoint) is
reached over stdio pipes or a localhost socket. Every request is one JSON
object on one line carrying an `id` and a `kind`; the response echoes the
id and carries either `ok: true` with a `result` or `ok: false` with an
`error`. Adapters below present the wire as the same LanguageModel /
Tokenizer / Embedder protocols the toy backends implement, so the rest of
the system cannot tell the difference.

Request kinds: meta, logits, tokenize, detokenize, hidden, embed,
extract.
"""

from __future__ import annotations

import json
import socket
import string
import subprocess
from typing import Optional, Sequence

import numpy as np

from .core import InvalidInput
from .embedding import mean_pool


class BridgeError(RuntimeError):
    """Transport failure or an error response from the server."""


class BridgeConnection:
    """One live session with a served model."""

    def __init__(self, reader, writer, process: Optional[subprocess.Popen] = None) -> None:
        self._reader = reader
        self._writer = writer
        self._process = process
        self._next_id = 0
        self._meta: Optional[dict] = None

    @classmethod
    def spawn(cls, command: Sequence[str], cwd: Optional[str] = None) -> "BridgeConnection":
        proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            cwd=cwd,
            text=True,
            bufsize=1,  # line buffered
        )
        return cls(reader=proc.stdout, writer=proc.stdin, process=proc)

    @classmethod
    def connect(cls, host: str, port: int) -> "BridgeConnection":
        sock = socket.create_connection((host, port))
        stream = sock.makefile("rw", encoding="utf-8", newline="\n")
        return cls(reader=stream, writer=stream)

    def request(self, kind: str, **payload) -> dict:
        self._next_id += 1
        req_id = self._next_id
        message = {"id": req_id, "kind": kind, **payload}
        try:
            self._writer.write(json.dumps(message) + "\n")
            self._writer.flush()
            line = self._reader.readline()
        except (BrokenPipeError, ValueError, OSError) as exc:
            raise BridgeError(f"transport failed during {kind}: {exc}") from exc
        if not line:
            raise BridgeError(f"server closed the stream during {kind}")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeError(f"unparseable response to {kind}: {line!r}") from exc
        if response.get("id") != req_id:
            raise BridgeError(
                f"response id {response.get('id')} does not match request {req_id}"
            )
        if not response.get("ok"):
            raise BridgeError(f"{kind} failed: {response.get('error', 'unknown error')}")
        result = response.get("result")
        if not isinstance(result, dict):
            raise BridgeError(f"{kind} returned no result object")
        return result

    def meta(self) -> dict:
        if self._meta is None:
            self._meta = self.request("meta")
        return self._meta

    def close(self) -> None:
        try:
            if self._writer is not None:
                self._writer.close()
        except OSError:
            pass
        if self._process is not None:
            try:
                self._process.terminate()
                self._process.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._process.kill()

    def __enter__(self) -> "BridgeConnection":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class BridgeModel:
    """LanguageModel over the wire, with a small response cache so
    repeated contexts (common inside beam search) cost one round trip."""

    _CACHE_LIMIT = 4096

    def __init__(self, conn: BridgeConnection) -> None:
        self._conn = conn
        self._vocab_size = int(conn.meta()["vocab_size"])
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    @property
    def eos_token_id(self) -> int:
        return int(self._conn.meta()["eos_token_id"])

    def next_token_logprobs(self, context: Sequence[int]) -> np.ndarray:
        key = tuple(int(t) for t in context)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        result = self._conn.request("logits", tokens=list(key))
        row = np.asarray(result["logprobs"], dtype=np.float64)
        if row.shape != (self._vocab_size,):
            raise BridgeError(f"logprob vector has shape {row.shape}")
        row.setflags(write=False)
        if len(self._cache) >= self._CACHE_LIMIT:
            self._cache.clear()
        self._cache[key] = row
        return row


class BridgeTokenizer:
    """Tokenizer over the wire.

    Subword vocabularies complete a word only when the next token starts
    a new one (or ends the sequence), so `completed_word` compares the
    decoded text before and after the candidate token.
    """

    def __init__(self, conn: BridgeConnection) -> None:
        self._conn = conn
        meta = conn.meta()
        self._vocab_size = int(meta["vocab_size"])
        self._eos = int(meta["eos_token_id"])
        self._detok_cache: dict[tuple[int, ...], str] = {}

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def tokenize(self, text: str) -> list[int]:
        return [int(t) for t in self._conn.request("tokenize", text=text)["tokens"]]

    def _detokenize_cached(self, tokens: tuple[int, ...]) -> str:
        hit = self._detok_cache.get(tokens)
        if hit is None:
            hit = str(self._conn.request("detokenize", tokens=list(tokens))["text"])
            if len(self._detok_cache) >= 4096:
                self._detok_cache.clear()
            self._detok_cache[tokens] = hit
        return hit

    def detokenize(self, tokens: Sequence[int]) -> str:
        return self._detokenize_cached(tuple(int(t) for t in tokens))

    def completed_word(self, prev: Sequence[int], next_id: int) -> Optional[str]:
        prev_t = tuple(int(t) for t in prev)
        before = self._detokenize_cached(prev_t).split()
        if int(next_id) == self._eos:
            return before[-1].strip(string.punctuation) if before else None
        after = self._detokenize_cached(prev_t + (int(next_id),)).split()
        if len(after) > len(before) and len(after) >= 2:
            return after[-2].strip(string.punctuation)
        return None


class BridgeEmbedder:
    """Embeds text server-side (pooled hidden states of the checkpoint)."""

    def __init__(self, conn: BridgeConnection) -> None:
        self._conn = conn
        self._dim = int(conn.meta()["dimension"])

    @property
    def dimension(self) -> int:
        return self._dim

    def embed_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise InvalidInput("cannot embed empty text")
        vec = np.asarray(self._conn.request("embed", text=text)["vector"], dtype=np.float64)
        if vec.shape != (self._dim,):
            raise BridgeError(f"embedding has shape {vec.shape}, expected ({self._dim},)")
        return vec


class PooledHiddenEmbedder:
    """Fetches raw hidden states and pools them client-side; useful when
    the pooling itself is under test."""

    def __init__(self, conn: BridgeConnection) -> None:
        self._conn = conn
        self._dim = int(conn.meta()["dimension"])

    @property
    def dimension(self) -> int:
        return self._dim

    def embed_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise InvalidInput("cannot embed empty text")
        result = self._conn.request("hidden", text=text)
        states = np.asarray(result["states"], dtype=np.float64)
        return mean_pool(states, result["mask"])


class BridgeExtractor:
    """External span extractor backed by the server."""

    def __init__(self, conn: BridgeConnection) -> None:
        self._conn = conn

    def __call__(self, answer: str) -> list[str]:
        return [str(s) for s in self._conn.request("extract", answer=answer)["spans"]]
