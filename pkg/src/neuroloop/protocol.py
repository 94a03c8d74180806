"""Line-delimited JSON message protocol and clock-offset estimation.

Every message is one UTF-8 JSON object per line with a ``type`` field; eeg
payloads carry samples as a flat row-major (channel-major) array and
timestamps as integer microseconds on the session's monotonic clock.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dsp import EegChunk
from .errors import ClockAnomalyError, ProtocolError

MESSAGE_TYPES = frozenset(
    {"hello", "config", "eeg", "decision", "event", "time_req", "time_resp",
     "bye", "error"})

MICROSECONDS = 1_000_000


def encode_message(message: Mapping) -> bytes:
    """Serialize one message as a JSON line."""
    return json.dumps(message, separators=(",", ":")).encode() + b"\n"


def seconds_to_us(t: float) -> int:
    return round(t * MICROSECONDS)


def us_to_seconds(t: int) -> float:
    return t / MICROSECONDS


def chunk_to_message(chunk: EegChunk, session_id: str) -> dict:
    """The ``eeg`` wire form of a chunk (flat row-major samples)."""
    return {
        "type": "eeg",
        "session_id": session_id,
        "t": seconds_to_us(chunk.start_time),
        "sample_rate": chunk.sample_rate,
        "channels": list(chunk.channel_labels),
        "samples": chunk.samples.reshape(-1).tolist(),
    }


def chunk_from_message(message: Mapping) -> EegChunk:
    """Rebuild a chunk from its ``eeg`` wire form."""
    if message.get("type") != "eeg":
        raise ProtocolError(f"expected an eeg message, got {message.get('type')!r}")
    labels = tuple(message["channels"])
    flat = np.asarray(message["samples"], dtype=np.float64)
    if not labels:
        raise ProtocolError("eeg message carries no channels")
    if flat.ndim != 1 or flat.size % len(labels) != 0:
        raise ProtocolError(
            f"flat sample array of {flat.size} values does not divide into "
            f"{len(labels)} channels")
    samples = flat.reshape(len(labels), -1)
    return EegChunk(start_time=us_to_seconds(int(message["t"])),
                    sample_rate=float(message["sample_rate"]),
                    channel_labels=labels, samples=samples)


def decision_message(decision_dict: Mapping, session_id: str) -> dict:
    return {"type": "decision", "session_id": session_id,
            "payload": dict(decision_dict)}


def event_message(payload: Mapping, session_id: str) -> dict:
    return {"type": "event", "session_id": session_id,
            "payload": dict(payload)}


def error_message(message: str, **context) -> dict:
    return {"type": "error", "error": message, **context}


@dataclass(frozen=True)
class ClockSync:
    """A four-timestamp exchange and the offset it implies.

    ``offset`` is the server clock minus the client clock; under symmetric
    network delay it is exact, and in general the true offset lies within
    ``round_trip / 2`` of the estimate.
    """

    t1: int
    t2: int
    t3: int
    t4: int
    offset: float
    round_trip: int


def estimate_offset(t1: int, t2: int, t3: int, t4: int) -> ClockSync:
    """Offset/round-trip from the classic four-timestamp exchange.

    ``t1``: client send, ``t2``: server receive, ``t3``: server send,
    ``t4``: client receive; all integer microseconds.
    """
    t1, t2, t3, t4 = int(t1), int(t2), int(t3), int(t4)
    if t4 < t1 or t3 < t2:
        raise ClockAnomalyError(
            f"timestamps out of order: t1={t1}, t2={t2}, t3={t3}, t4={t4}")
    round_trip = (t4 - t1) - (t3 - t2)
    if round_trip < 0:
        raise ClockAnomalyError(
            f"negative round trip {round_trip} us from t1={t1}, t2={t2}, "
            f"t3={t3}, t4={t4}")
    offset = ((t2 - t1) + (t3 - t4)) / 2.0
    return ClockSync(t1=t1, t2=t2, t3=t3, t4=t4, offset=offset,
                     round_trip=round_trip)
