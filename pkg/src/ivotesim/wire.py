"""Line-delimited JSON transport, endpoint names and the simulated clock.

A request is one JSON line ``{"endpoint", "voter_keys_id", "body", "cookies"}``;
a response is ``{"status": "ok", "body", "set_cookies"}`` or
``{"status": "error", "error": {"code", "message"}}``. Transports move raw
lines, so a proxy can sit on the byte stream.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading

from .errors import IVoteError, TransportError, ValidationError, error_from_code

REGISTER = "registration/register"
LOGIN_PAGE = "ivote-cvs/login"
LOGIN = "vote-encoder/login"
TOKEN = "vote-encoder/token/{voter_keys_id}?v={v}"
PARTIAL_VOTE = "vote-encoder/partial_vote/{voter_keys_id}?v={v}"
VOTE = "vote-encoder/vote/{voter_keys_id}?v={v}"
READBACK = "verification/readback"


def token_endpoint(voter_keys_id, v="1"):
    return TOKEN.format(voter_keys_id=voter_keys_id, v=v)


def partial_vote_endpoint(voter_keys_id, v="1"):
    return PARTIAL_VOTE.format(voter_keys_id=voter_keys_id, v=v)


def vote_endpoint(voter_keys_id, v="1"):
    return VOTE.format(voter_keys_id=voter_keys_id, v=v)


def endpoint_kind(endpoint: str) -> str:
    """``vote-encoder/token/abc?v=1`` -> ``vote-encoder/token``."""
    path = endpoint.split("?", 1)[0]
    for prefix in ("vote-encoder/token/", "vote-encoder/partial_vote/", "vote-encoder/vote/"):
        if path.startswith(prefix):
            return prefix.rstrip("/")
    return path


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"


def encode_request(endpoint, body=None, voter_keys_id=None, cookies=None) -> bytes:
    return _dumps({"endpoint": endpoint, "voter_keys_id": voter_keys_id,
                   "body": body if body is not None else {}, "cookies": cookies or {}})


def decode_request(raw: bytes) -> dict:
    try:
        msg = json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ValidationError(f"request is not JSON: {exc}") from None
    if not isinstance(msg, dict) or not isinstance(msg.get("endpoint"), str):
        raise ValidationError("request envelope lacks an endpoint")
    msg.setdefault("body", {})
    msg.setdefault("cookies", {})
    msg.setdefault("voter_keys_id", None)
    return msg


def encode_response(body=None, set_cookies=None) -> bytes:
    return _dumps({"status": "ok", "body": body if body is not None else {},
                   "set_cookies": set_cookies or {}})


def encode_error(exc: IVoteError) -> bytes:
    return _dumps({"status": "error", "error": {"code": exc.code, "message": str(exc)}})


def decode_response(raw: bytes) -> dict:
    """Parse a response envelope, re-raising a wire error as its exception class."""
    try:
        msg = json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise TransportError(f"response is not JSON: {exc}") from None
    if not isinstance(msg, dict):
        raise TransportError("response envelope is not an object")
    if msg.get("status") == "error":
        err = msg.get("error") or {}
        raise error_from_code(err.get("code", "error"), err.get("message", ""))
    msg.setdefault("body", {})
    msg.setdefault("set_cookies", {})
    return msg


class SimClock:
    """Manually advanced clock shared by browsers and the proxy."""

    def __init__(self, start=0.0):
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self):
        with self._lock:
            return self._now

    def advance(self, seconds):
        if seconds < 0:
            raise ValueError("clock cannot go backwards")
        with self._lock:
            self._now += seconds
            return self._now


class LocalTransport:
    """In-process transport: request bytes straight into ``server.handle_raw``."""

    def __init__(self, server):
        self.server = server

    def exchange(self, raw: bytes) -> bytes:
        return self.server.handle_raw(raw)


class SocketTransport:
    """One persistent TCP connection speaking the line protocol."""

    def __init__(self, host, port, timeout=10.0):
        self.address = (host, port)
        self.timeout = timeout
        self._sock = None
        self._file = None
        self._lock = threading.Lock()

    def _connect(self):
        self._sock = socket.create_connection(self.address, timeout=self.timeout)
        self._file = self._sock.makefile("rb")

    def exchange(self, raw: bytes) -> bytes:
        with self._lock:
            try:
                if self._sock is None:
                    self._connect()
                self._sock.sendall(raw if raw.endswith(b"\n") else raw + b"\n")
                line = self._file.readline()
            except OSError as exc:
                self.close()
                raise TransportError(f"transport failure: {exc}") from None
            if not line:
                self.close()
                raise TransportError("connection closed by peer")
            return line

    def close(self):
        for obj in (self._file, self._sock):
            if obj is not None:
                try:
                    obj.close()
                except OSError:
                    pass
        self._sock = self._file = None


class _LineHandler(socketserver.StreamRequestHandler):
    def handle(self):
        target = self.server.target
        # a proxy hands out one relay session per client connection
        peer = target.connect() if hasattr(target, "connect") else target
        while True:
            line = self.rfile.readline()
            if not line:
                return
            self.wfile.write(peer.exchange(line))


class LineServer(socketserver.ThreadingTCPServer):
    """Serve any object with ``exchange(bytes) -> bytes`` (a server or a proxy) over TCP."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, target, host="127.0.0.1", port=0):
        self.target = target
        super().__init__((host, port), _LineHandler)

    def start(self):
        thread = threading.Thread(target=self.serve_forever, name="line-server", daemon=True)
        thread.start()
        return thread

    def stop(self):
        self.shutdown()
        self.server_close()
