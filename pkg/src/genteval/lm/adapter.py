"""Line protocol for plugging in externally hosted language models.

The wire format is text, one request per line, over stdio pipes or a
TCP socket:

    SCORE <ctx ids>|<seq ids>   ->  OK <logprob>
    DIST <ctx ids>              ->  OK <p0> <p1> ... <p_{V-1}>

Ids are space-separated decimals; the context part may be empty. Any
failure is answered with ``ERR <message>`` and the connection stays
usable. Floats are rendered with repr-level precision so a served model
round-trips its probabilities exactly enough for scoring (1e-12).

:class:`ExternalLM` is the client side and satisfies the LanguageModel
contract; :func:`serve_lines` is a reference server that exposes any
local model, which doubles as the executable definition of the format.
"""

from __future__ import annotations

import socket
import subprocess
from typing import IO, Sequence

import numpy as np

from ..corpus import Vocab
from ..errors import ConfigError, DataError
from .base import as_ids


def _format_floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _parse_ids(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split())


def serve_lines(model, rfile: IO[str], wfile: IO[str]) -> None:
    """Answer protocol requests from ``rfile`` until EOF."""
    for line in rfile:
        line = line.strip()
        if not line:
            continue
        try:
            verb, _, rest = line.partition(" ")
            if verb == "DIST":
                dist = model.next_dist(_parse_ids(rest))
                reply = f"OK {_format_floats(dist)}"
            elif verb == "SCORE":
                if "|" not in rest:
                    raise ValueError("SCORE needs '<ctx>|<seq>'")
                ctx_part, _, seq_part = rest.partition("|")
                seq = _parse_ids(seq_part)
                if not seq:
                    raise ValueError("SCORE needs a non-empty sequence")
                reply = f"OK {repr(float(model.score(seq, _parse_ids(ctx_part))))}"
            else:
                raise ValueError(f"unknown verb {verb!r}")
        except Exception as exc:  # noqa: BLE001 - protocol boundary
            reply = f"ERR {exc}"
        wfile.write(reply + "\n")
        wfile.flush()


class ExternalLM:
    """LanguageModel backed by a remote process speaking the line protocol."""

    backend = "external"

    def __init__(self, vocab: Vocab, rfile: IO[str], wfile: IO[str]) -> None:
        self.vocab = vocab
        self._rfile = rfile
        self._wfile = wfile

    @classmethod
    def connect_tcp(cls, host: str, port: int, vocab: Vocab) -> "ExternalLM":
        sock = socket.create_connection((host, port))
        return cls(vocab, sock.makefile("r"), sock.makefile("w"))

    @classmethod
    def spawn(cls, argv: list[str], vocab: Vocab) -> "ExternalLM":
        proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True
        )
        lm = cls(vocab, proc.stdout, proc.stdin)
        lm._proc = proc
        return lm

    def _request(self, line: str) -> str:
        self._wfile.write(line + "\n")
        self._wfile.flush()
        reply = self._rfile.readline()
        if not reply:
            raise DataError("external model closed the connection")
        reply = reply.strip()
        if reply.startswith("OK"):
            return reply[2:].strip()
        if reply.startswith("ERR"):
            raise DataError(f"external model error: {reply[3:].strip()}")
        raise DataError(f"malformed reply: {reply!r}")

    def next_dist(self, context: Sequence[int]) -> np.ndarray:
        body = self._request("DIST " + " ".join(str(i) for i in as_ids(context)))
        dist = np.array([float(v) for v in body.split()])
        if dist.size != self.vocab.size:
            raise ConfigError(
                f"external model returned {dist.size} probabilities, vocab is {self.vocab.size}"
            )
        return dist

    def score(self, seq, context: Sequence[int] = ()) -> float:
        ctx = " ".join(str(i) for i in as_ids(context))
        ids = " ".join(str(i) for i in as_ids(seq))
        return float(self._request(f"SCORE {ctx}|{ids}"))
