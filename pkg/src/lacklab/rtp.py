"""RTP-style packet stream synthesis and the receiver playout deadline rule.

Packets carry opaque payload bytes (audio content is out of scope); what
matters for the covert channel is sequence numbering, timestamps, and the
de-jitter buffer's accept/too-late decision.  Packet event logs serialize as
JSON lines and are the trace format the warden consumes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .quality import CodecProfile

__all__ = [
    "SEQ_MOD",
    "PacketRecord",
    "JitterBufferConfig",
    "BufferVerdict",
    "generate_stream",
    "payload_block",
    "buffer_decide",
    "PlayoutBuffer",
    "wire_image",
    "unwrap_sequences",
    "TraceEvent",
    "write_trace",
    "read_trace",
    "VERDICT_PLAYED",
    "VERDICT_LATE",
    "VERDICT_LOST",
]

SEQ_MOD = 1 << 16

VERDICT_PLAYED = "played"
VERDICT_LATE = "late"
VERDICT_LOST = "lost"


@dataclass
class PacketRecord:
    """One RTP packet of the call.

    steg_marked is sender-side bookkeeping only and never reaches the wire;
    see wire_image().
    """

    ssrc: int
    seq: int
    timestamp_ms: float
    payload: bytes
    steg_marked: bool = False


@dataclass(frozen=True)
class JitterBufferConfig:
    """De-jitter buffer: packets later than its depth are treated as lost."""

    size_ms: float = 60.0
    adaptive: bool = False

    def __post_init__(self) -> None:
        if not 10.0 <= self.size_ms <= 500.0:
            raise ValueError("buffer size must be within [10, 500] ms")


class BufferVerdict(Enum):
    PLAY = "play"
    LATE = "late"


def payload_block(key: int, index: int, nbytes: int) -> bytes:
    """Deterministic opaque payload bytes for packet number `index`.

    Derived from (key, index) so payloads can be reproduced lazily without
    materializing a whole stream.
    """
    return np.random.default_rng([key & (2**63 - 1), index]).bytes(nbytes)


def generate_stream(
    codec: CodecProfile,
    call_seconds: float,
    ssrc: int,
    voice_rng: np.random.Generator,
) -> list[PacketRecord]:
    """Synthesize the packet stream of one call.

    ceil(call_seconds * 1000 / frame_ms) packets, timestamps at i*frame_ms,
    sequence numbers contiguous from a random start (mod 2**16).
    """
    if call_seconds <= 0:
        raise ValueError("call_seconds must be > 0")
    n = math.ceil(call_seconds * 1000.0 / codec.frame_ms)
    start_seq = int(voice_rng.integers(0, SEQ_MOD))
    key = int(voice_rng.integers(0, 2**63))
    nbytes = codec.payload_bytes
    return [
        PacketRecord(
            ssrc=ssrc,
            seq=(start_seq + i) % SEQ_MOD,
            timestamp_ms=i * codec.frame_ms,
            payload=payload_block(key, i, nbytes),
        )
        for i in range(n)
    ]


def buffer_decide(
    cfg: JitterBufferConfig,
    packet: PacketRecord,
    arrival_ms: float,
    reference_delay_ms: float,
) -> BufferVerdict:
    """Fixed-buffer playout decision.

    The deadline is timestamp + reference delay + buffer depth, where the
    reference delay is the stream's base network delay estimate.  Arrival
    exactly on the deadline plays (documented tie-break).
    """
    if arrival_ms < packet.timestamp_ms:
        raise ValueError("packet cannot arrive before it was timestamped")
    deadline = packet.timestamp_ms + reference_delay_ms + cfg.size_ms
    return BufferVerdict.PLAY if arrival_ms <= deadline else BufferVerdict.LATE


class PlayoutBuffer:
    """Per-call buffer front-end; in adaptive mode the reference delay is an
    exponentially weighted estimate of observed one-way delays."""

    #: EWMA weight for the adaptive delay estimate.
    ADAPT_WEIGHT = 1.0 / 16.0

    def __init__(self, cfg: JitterBufferConfig, reference_delay_ms: float):
        self.cfg = cfg
        self.reference_delay_ms = reference_delay_ms

    def decide(self, packet: PacketRecord, arrival_ms: float) -> BufferVerdict:
        verdict = buffer_decide(self.cfg, packet, arrival_ms, self.reference_delay_ms)
        if self.cfg.adaptive:
            observed = arrival_ms - packet.timestamp_ms
            w = self.ADAPT_WEIGHT
            self.reference_delay_ms = (1.0 - w) * self.reference_delay_ms + w * observed
        return verdict


def wire_image(packet: PacketRecord) -> bytes:
    """Serialized packet as an observer on the wire sees it.

    Carries ssrc, sequence number, timestamp (microseconds) and payload;
    deliberately no trace of the steg flag.
    """
    header = struct.pack(
        ">IHQ",
        packet.ssrc & 0xFFFFFFFF,
        packet.seq & 0xFFFF,
        int(round(packet.timestamp_ms * 1000.0)),
    )
    return header + packet.payload


def unwrap_sequences(seqs: Sequence[int]) -> list[int]:
    """Map wrapping 16-bit sequence numbers to monotone extended integers.

    Input order is the observation order; jumps beyond half the sequence
    space are treated as wraparound (forward) or stragglers from the previous
    epoch (backward).
    """
    out: list[int] = []
    epoch = 0
    prev = None
    for seq in seqs:
        if prev is not None:
            if seq < prev - SEQ_MOD // 2:
                epoch += 1
            elif seq > prev + SEQ_MOD // 2 and epoch > 0:
                epoch -= 1
            else:
                pass
        ext = seq + epoch * SEQ_MOD
        out.append(ext)
        prev = seq
    return out


@dataclass(frozen=True)
class TraceEvent:
    """One packet's observable outcome; arrival_ms is None for packets that
    never reached the receiver."""

    ssrc: int
    seq: int
    ts_ms: float
    sent_ms: float
    arrival_ms: float | None
    verdict: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "ssrc": self.ssrc,
                "seq": self.seq,
                "ts_ms": self.ts_ms,
                "sent_ms": self.sent_ms,
                "arrival_ms": self.arrival_ms,
                "verdict": self.verdict,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        d = json.loads(line)
        return cls(
            ssrc=d["ssrc"],
            seq=d["seq"],
            ts_ms=d["ts_ms"],
            sent_ms=d["sent_ms"],
            arrival_ms=d["arrival_ms"],
            verdict=d["verdict"],
        )


def write_trace(path, events: Iterable[TraceEvent]) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")


def read_trace(path) -> list[TraceEvent]:
    with open(path) as fh:
        return [TraceEvent.from_json(line) for line in fh if line.strip()]
