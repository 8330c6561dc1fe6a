"""Line-delimited JSON wire protocol for serving and querying a model.

One request per line: {"id": n, "shape": [c,h,w], "pixels": [...]}.
One response per line: {"id": n, "topk": [{"label": l, "score": s}, ...]}.
Malformed requests get {"error": msg} and the connection stays open.
"""

from __future__ import annotations

import json
import socket
import socketserver
import sys
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .api import Preprocessor, QueryLedger, TopKResponse, top_k_entries

_EXCERPT = 200


class ProtocolError(ValueError):
    """A line on the wire violated the protocol."""

    def __init__(self, msg: str, payload: str = ""):
        if payload:
            msg = f"{msg} (payload: {payload[:_EXCERPT]!r})"
        super().__init__(msg)


class TransportError(RuntimeError):
    """The peer hung up or answered with garbage."""


def encode_request(qid: int, x: np.ndarray) -> str:
    x = np.asarray(x, dtype=np.float64)
    return json.dumps(
        {"id": int(qid), "shape": list(x.shape), "pixels": x.reshape(-1).tolist()}
    )


def decode_request(line: str) -> tuple[int, np.ndarray]:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"request is not valid JSON: {e}", line) from e
    if not isinstance(doc, dict):
        raise ProtocolError("request must be a JSON object", line)
    try:
        qid = int(doc["id"])
        shape = tuple(int(s) for s in doc["shape"])
        pixels = np.array(doc["pixels"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"request missing or malformed field: {e}", line) from e
    if len(shape) != 3 or any(s <= 0 for s in shape):
        raise ProtocolError(f"request shape {shape} is not (c, h, w)", line)
    if pixels.ndim != 1 or pixels.size != int(np.prod(shape)):
        raise ProtocolError("request pixel count does not match shape", line)
    return qid, pixels.reshape(shape)


def encode_response(qid: int, entries) -> str:
    return json.dumps(
        {
            "id": int(qid),
            "topk": [
                {"label": int(lbl), "score": float(score)} for lbl, score in entries
            ],
        }
    )


def decode_response(line: str) -> tuple[int, tuple]:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"response is not valid JSON: {e}", line) from e
    if not isinstance(doc, dict):
        raise ProtocolError("response must be a JSON object", line)
    if "error" in doc:
        raise ProtocolError(f"server error: {doc['error']}", line)
    try:
        qid = int(doc["id"])
        entries = tuple(
            (int(e["label"]), float(e["score"])) for e in doc["topk"]
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"response missing or malformed field: {e}", line) from e
    if not entries:
        raise ProtocolError("response topk is empty", line)
    return qid, entries


# ---------------------------------------------------------------------------
# client

class StreamTransport:
    """Transport over a pair of text file objects (pipes, test doubles)."""

    def __init__(self, rfile, wfile):
        self.rfile = rfile
        self.wfile = wfile

    def send_line(self, line: str) -> None:
        self.wfile.write(line + "\n")
        self.wfile.flush()

    def recv_line(self):
        line = self.rfile.readline()
        return line.rstrip("\n") if line else None

    def close(self) -> None:
        for fh in (self.rfile, self.wfile):
            try:
                fh.close()
            except OSError:
                pass


class TcpTransport(StreamTransport):
    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        super().__init__(
            self.sock.makefile("r", encoding="utf-8"),
            self.sock.makefile("w", encoding="utf-8"),
        )

    def close(self) -> None:
        super().close()
        try:
            self.sock.close()
        except OSError:
            pass


@dataclass
class RemoteApi:
    """Queries a served model over a transport; same surface as PredictionApi.

    The ledger is client-side bookkeeping: remote queries cost real money
    in the setting this simulates, so the cap lives with the attacker.
    """

    transport: StreamTransport
    ledger: QueryLedger = field(default_factory=QueryLedger)
    _next_id: int = 0

    def query(self, x: np.ndarray) -> TopKResponse:
        self.ledger.charge()
        qid = self._next_id
        self._next_id += 1
        self.transport.send_line(encode_request(qid, x))
        line = self.transport.recv_line()
        if line is None:
            raise TransportError("connection closed by server")
        try:
            rid, entries = decode_response(line)
        except ProtocolError as e:
            raise TransportError(str(e)) from e
        if rid != qid:
            raise TransportError(f"response id {rid} does not match request {qid}")
        return TopKResponse(entries=entries)

    def close(self) -> None:
        self.transport.close()


def connect(host: str, port: int, budget: int | None = None,
            timeout: float = 30.0) -> RemoteApi:
    return RemoteApi(
        transport=TcpTransport(host, port, timeout=timeout),
        ledger=QueryLedger(budget=budget),
    )


# ---------------------------------------------------------------------------
# server

def handle_stream(model: nn.Network, pre: Preprocessor, k: int,
                  rfile, wfile, log=None) -> int:
    """Serve one connection until EOF; returns the number answered."""
    answered = 0
    for raw in rfile:
        line = raw.strip()
        if not line:
            continue
        try:
            qid, x = decode_request(line)
            probs = nn.forward(model, pre.apply(x))
            entries = top_k_entries(probs, k)
            out = encode_response(qid, entries)
            answered += 1
        except (ProtocolError, ValueError) as e:
            out = json.dumps({"error": str(e)})
        wfile.write(out + "\n")
        wfile.flush()
    if log is not None:
        print(f"connection closed after {answered} queries", file=log)
    return answered


class ModelServer(socketserver.ThreadingTCPServer):
    """TCP server answering top-k queries for one local model."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, model: nn.Network, pre: Preprocessor, k: int,
                 host: str = "127.0.0.1", port: int = 0, log=None):
        if k < 1 or k > model.n_classes:
            raise ValueError(f"k must be in [1, {model.n_classes}]")
        self.model = model
        self.pre = pre
        self.k = k
        self.log = log
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        srv = self.server
        reader = (line.decode("utf-8") for line in self.rfile)
        writer = _ByteWriter(self.wfile)
        handle_stream(srv.model, srv.pre, srv.k, reader, writer, log=srv.log)


class _ByteWriter:
    def __init__(self, wfile):
        self.wfile = wfile

    def write(self, text: str) -> None:
        self.wfile.write(text.encode("utf-8"))

    def flush(self) -> None:
        self.wfile.flush()


def serve_stdio(model: nn.Network, pre: Preprocessor, k: int) -> int:
    """Answer queries on stdin/stdout until EOF."""
    if k < 1 or k > model.n_classes:
        raise ValueError(f"k must be in [1, {model.n_classes}]")
    return handle_stream(model, pre, k, sys.stdin, sys.stdout, log=sys.stderr)
