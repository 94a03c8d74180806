"""TCP stream bridge: NDJSON sessions over concurrent client connections.

Each connection is one session: a hello/config handshake, then eeg chunks
flow through a per-connection pipeline thread that pushes decision messages
back and persists the session log. Clock-offset probes and malformed input
are answered without disturbing the stream.
"""
from __future__ import annotations

import json
import logging
import os
import queue
import socket
import socketserver
import threading
import time
import uuid
from pathlib import Path

from . import protocol
from .adapt import AdaptationDecision
from .dsp import EegChunk
from .errors import NeuroloopError, ProtocolError
from .session import SessionConfig, SessionPipeline

logger = logging.getLogger(__name__)

LOG_DIR_ENV = "NEUROLOOP_LOG_DIR"
DEFAULT_LOG_DIR = "logs"

# Backpressure: buffered eeg beyond this triggers a lag event.
MAX_QUEUE_SECONDS = 10.0

_SHUTDOWN = object()


def resolve_log_dir(log_dir: str | os.PathLike | None = None) -> Path:
    chosen = log_dir or os.environ.get(LOG_DIR_ENV) or DEFAULT_LOG_DIR
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _now_us() -> int:
    return time.monotonic_ns() // 1000


class BridgeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], config_defaults: SessionConfig,
                 log_dir: str | os.PathLike | None = None):
        self.config_defaults = config_defaults
        self.log_dir = resolve_log_dir(log_dir)
        super().__init__(address, _SessionHandler)


class _SessionHandler(socketserver.StreamRequestHandler):
    """One connected client; reader here, pipeline on a worker thread."""

    server: BridgeServer

    def setup(self):
        super().setup()
        self.session_id: str | None = None
        self.config: SessionConfig | None = None
        self.pipeline: SessionPipeline | None = None
        self.clock_offset_us = 0.0
        self.queue: queue.Queue = queue.Queue()
        self.queued_seconds = 0.0
        self.queue_lock = threading.Lock()
        self.lagging = False
        self.write_lock = threading.Lock()
        self.worker: threading.Thread | None = None
        self.log_file = None
        self.closing = False

    def handle(self):
        byte_offset = 0
        while not self.closing:
            try:
                line = self.rfile.readline()
            except (ConnectionError, OSError):
                break
            if not line:
                break
            line_start = byte_offset
            byte_offset += len(line)
            if not line.strip():
                continue
            try:
                message = json.loads(line)
                if not isinstance(message, dict):
                    raise ValueError("message must be a JSON object")
            except (json.JSONDecodeError, UnicodeDecodeError, ValueError) as exc:
                self._send(protocol.error_message(
                    f"malformed JSON line: {exc}", byte_offset=line_start))
                continue
            try:
                self._dispatch(message)
            except ProtocolError as exc:
                self._send(protocol.error_message(str(exc)))
                break
            except NeuroloopError as exc:
                self._send(protocol.error_message(str(exc)))
                break

    def finish(self):
        self._stop_worker()
        if self.log_file is not None:
            self.log_file.close()
            self.log_file = None
        super().finish()

    # -- message dispatch ---------------------------------------------------

    def _dispatch(self, message: dict) -> None:
        mtype = message.get("type")
        if mtype == "hello":
            self._on_hello(message)
        elif mtype == "eeg":
            self._on_eeg(message)
        elif mtype == "time_req":
            self._on_time_req(message)
        elif mtype == "bye":
            self._on_bye()
        elif mtype in protocol.MESSAGE_TYPES:
            raise ProtocolError(f"client must not send {mtype!r} messages")
        else:
            raise ProtocolError(f"unknown message type {mtype!r}")

    def _on_hello(self, message: dict) -> None:
        if self.session_id is not None:
            raise ProtocolError("duplicate hello on an open session")
        overrides = message.get("payload") or {}
        if not isinstance(overrides, dict):
            raise ProtocolError("hello payload must be an object")
        self.config = self.server.config_defaults.with_overrides(overrides)
        self.session_id = (str(overrides.get("session_id"))
                           if overrides.get("session_id")
                           else uuid.uuid4().hex[:12])
        self.pipeline = SessionPipeline(self.config)
        self.log_file = open(self.server.log_dir / f"{self.session_id}.jsonl", "w")
        self.worker = threading.Thread(target=self._pipeline_worker,
                                       name=f"pipeline-{self.session_id}",
                                       daemon=True)
        self.worker.start()
        self._send({"type": "config", "session_id": self.session_id,
                    "payload": self.config.to_payload()})

    def _on_eeg(self, message: dict) -> None:
        if self.session_id is None:
            raise ProtocolError("eeg before hello")
        if message.get("session_id") != self.session_id:
            raise ProtocolError("eeg message carries a foreign session_id")
        try:
            chunk = protocol.chunk_from_message(message)
        except (KeyError, TypeError, ValueError, NeuroloopError) as exc:
            raise ProtocolError(f"invalid eeg payload: {exc}") from None
        if chunk.n_channels != len(self.config.montage):
            raise ProtocolError(
                f"eeg carries {chunk.n_channels} channels, session config "
                f"has {len(self.config.montage)}")
        if self.clock_offset_us:
            chunk = EegChunk(
                chunk.start_time - self.clock_offset_us / 1e6,
                chunk.sample_rate, chunk.channel_labels, chunk.samples)
        with self.queue_lock:
            self.queued_seconds += chunk.duration
            lagging_now = self.queued_seconds > MAX_QUEUE_SECONDS
        if lagging_now and not self.lagging:
            self.lagging = True
            self._send(protocol.event_message(
                {"event": "lag", "buffered_seconds": round(self.queued_seconds, 3)},
                self.session_id))
        elif not lagging_now:
            self.lagging = False
        self.queue.put(chunk)

    def _on_time_req(self, message: dict) -> None:
        try:
            t1 = int(message["t1"])
        except (KeyError, TypeError, ValueError):
            raise ProtocolError("time_req requires an integer t1") from None
        t2 = _now_us()
        t3 = _now_us()
        self._send({"type": "time_resp",
                    "session_id": message.get("session_id"),
                    "t1": t1, "t2": t2, "t3": t3})

    def _on_bye(self) -> None:
        self._stop_worker()
        self._send({"type": "bye", "session_id": self.session_id})
        self.closing = True

    # -- pipeline worker ----------------------------------------------------

    def _pipeline_worker(self) -> None:
        while True:
            chunk = self.queue.get()
            if chunk is _SHUTDOWN:
                return
            with self.queue_lock:
                self.queued_seconds -= chunk.duration
            try:
                decisions = self.pipeline.feed(chunk)
            except NeuroloopError as exc:
                self._send(protocol.error_message(str(exc)))
                self.closing = True
                try:
                    self.connection.shutdown(socket.SHUT_RD)
                except OSError:
                    pass
                return
            for decision in decisions:
                self._emit_decision(decision)

    def _emit_decision(self, decision: AdaptationDecision) -> None:
        record = decision.as_dict()
        if self.log_file is not None:
            self.log_file.write(json.dumps(record, separators=(",", ":")) + "\n")
            self.log_file.flush()
        self._send(protocol.decision_message(record, self.session_id))

    def _stop_worker(self) -> None:
        if self.worker is not None and self.worker.is_alive():
            self.queue.put(_SHUTDOWN)
            self.worker.join(timeout=30.0)
        self.worker = None

    def _send(self, message: dict) -> None:
        data = protocol.encode_message(message)
        with self.write_lock:
            try:
                self.wfile.write(data)
                self.wfile.flush()
            except (ConnectionError, OSError):
                self.closing = True


def start_server(config_defaults: SessionConfig,
                 bind: tuple[str, int] = ("127.0.0.1", 0),
                 log_dir: str | os.PathLike | None = None) -> BridgeServer:
    """Start a bridge server on a background thread; caller shuts it down."""
    server = BridgeServer(bind, config_defaults, log_dir=log_dir)
    thread = threading.Thread(target=server.serve_forever,
                              name="bridge-server", daemon=True)
    thread.start()
    return server


def serve(config_defaults: SessionConfig,
          bind: tuple[str, int] = ("127.0.0.1", 8765),
          log_dir: str | os.PathLike | None = None) -> None:
    """Run the bridge server until interrupted."""
    server = BridgeServer(bind, config_defaults, log_dir=log_dir)
    host, port = server.server_address[:2]
    logger.info("bridge listening on %s:%d", host, port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()


class BridgeClient:
    """Minimal blocking client for tests and command-line streaming."""

    def __init__(self, address: tuple[str, int], timeout: float = 30.0):
        self.sock = socket.create_connection(address, timeout=timeout)
        self.rfile = self.sock.makefile("rb")
        self.session_id: str | None = None

    def close(self) -> None:
        try:
            self.rfile.close()
        finally:
            self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def send_raw(self, data: bytes) -> None:
        self.sock.sendall(data)

    def send(self, message: dict) -> None:
        self.send_raw(protocol.encode_message(message))

    def recv(self) -> dict:
        line = self.rfile.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return json.loads(line)

    def hello(self, **overrides) -> dict:
        self.send({"type": "hello", "payload": overrides})
        reply = self.recv()
        if reply.get("type") != "config":
            raise ProtocolError(f"expected config echo, got {reply}")
        self.session_id = reply["session_id"]
        return reply

    def send_chunk(self, chunk: EegChunk) -> None:
        self.send(protocol.chunk_to_message(chunk, self.session_id))

    def sync_clock(self) -> protocol.ClockSync:
        t1 = _now_us()
        self.send({"type": "time_req", "session_id": self.session_id, "t1": t1})
        reply = self.recv()
        if reply.get("type") != "time_resp":
            raise ProtocolError(f"expected time_resp, got {reply}")
        t4 = _now_us()
        return protocol.estimate_offset(reply["t1"], reply["t2"],
                                        reply["t3"], t4)

    def drain_until_bye(self) -> list[dict]:
        """Send bye and collect every remaining message through the ack."""
        self.send({"type": "bye", "session_id": self.session_id})
        messages = []
        while True:
            message = self.recv()
            if message.get("type") == "bye":
                return messages
            messages.append(message)
