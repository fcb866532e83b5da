"""Covert sender and receivers built on intentional packet lateness.

The sender substitutes the payload of selected packets with steganogram
chunks and holds those packets back long enough that every receiver buffer
treats them as lost.  An unaware receiver simply discards them; an aware
receiver harvests the payload of every too-late packet instead.  No in-band
marker distinguishes carrier packets (a marker would break invisibility), so
genuinely network-late packets inject garbage bits; the length-prefix framing
bounds the damage and the harness measures it as steganogram bit errors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

from .rtp import BufferVerdict, JitterBufferConfig, PacketRecord, buffer_decide, unwrap_sequences

__all__ = [
    "LENGTH_PREFIX_BYTES",
    "ChunkSizeError",
    "LackSenderConfig",
    "Steganogram",
    "negotiate_delay",
    "chunk_message",
    "embed",
    "sender_transmit_time",
    "ReceiverEvent",
    "receive_aware",
    "receive_unaware",
    "ReassemblyResult",
    "reassemble",
    "missing_chunk_extents",
    "extraction_report",
]

#: The first chunk opens with a big-endian 16-bit message length, so the
#: receiver can strip the final chunk's zero padding.
LENGTH_PREFIX_BYTES = 2


class ChunkSizeError(ValueError):
    """A chunk does not match the codec payload size."""


@dataclass(frozen=True)
class LackSenderConfig:
    """Sender-side delay parameters.

    d_lack_ms must exceed the peer's buffer depth or delayed packets would
    still play out.
    """

    d_lack_ms: float
    peer_buffer_ms: float
    margin_ms: float

    def __post_init__(self) -> None:
        if min(self.d_lack_ms, self.peer_buffer_ms) <= 0 or self.margin_ms < 0:
            raise ValueError("delays must be positive (margin may be zero)")
        if self.d_lack_ms <= self.peer_buffer_ms:
            raise ValueError("d_lack_ms must exceed the peer buffer depth")


@dataclass(frozen=True)
class Steganogram:
    """A hidden message and its payload-sized chunking."""

    message: bytes
    chunks: tuple[bytes, ...]

    @classmethod
    def for_codec(cls, message: bytes, chunk_bytes: int) -> "Steganogram":
        return cls(message=message, chunks=tuple(chunk_message(message, chunk_bytes)))


def negotiate_delay(buffer_a_ms: float, buffer_b_ms: float, margin_ms: float) -> float:
    """Smallest sender delay guaranteeing lateness at both ends, plus a
    jitter margin.  Zero margin risks boundary plays and is the caller's
    informed choice."""
    if min(buffer_a_ms, buffer_b_ms, margin_ms) < 0 or buffer_a_ms <= 0 or buffer_b_ms <= 0:
        raise ValueError("buffer sizes must be > 0 and margin >= 0")
    return max(buffer_a_ms, buffer_b_ms) + margin_ms


def chunk_message(message: bytes, chunk_bytes: int) -> list[bytes]:
    """Split a length-prefixed message into payload-sized chunks.

    The final chunk is zero-padded to the full payload size.
    """
    if chunk_bytes <= LENGTH_PREFIX_BYTES:
        raise ChunkSizeError("payload too small to carry the length prefix")
    if len(message) >= 1 << (8 * LENGTH_PREFIX_BYTES):
        raise ChunkSizeError(
            f"message of {len(message)} bytes exceeds the "
            f"{(1 << (8 * LENGTH_PREFIX_BYTES)) - 1}-byte framing limit"
        )
    framed = len(message).to_bytes(LENGTH_PREFIX_BYTES, "big") + message
    chunks = []
    for off in range(0, len(framed), chunk_bytes):
        piece = framed[off : off + chunk_bytes]
        if len(piece) < chunk_bytes:
            piece = piece + bytes(chunk_bytes - len(piece))
        chunks.append(piece)
    return chunks


def embed(packet: PacketRecord, chunk: bytes) -> PacketRecord:
    """Substitute the packet's voice payload with a steganogram chunk.

    The packet count, sequence number and timestamp are untouched; only the
    payload changes and the sender-side steg flag is set.
    """
    if len(chunk) != len(packet.payload):
        raise ChunkSizeError(
            f"chunk of {len(chunk)} bytes does not fill a {len(packet.payload)}-byte payload"
        )
    return replace(packet, payload=chunk, steg_marked=True)


def sender_transmit_time(packet: PacketRecord, cfg: LackSenderConfig) -> float:
    """When the sender puts the packet on the wire: marked packets are held
    back by the negotiated extra delay."""
    if packet.steg_marked:
        return packet.timestamp_ms + cfg.d_lack_ms
    return packet.timestamp_ms


class ReceiverEvent(Enum):
    PLAY = "play"
    EXTRACT = "extract"
    DROP = "drop"


def receive_aware(
    packet: PacketRecord,
    arrival_ms: float,
    cfg: JitterBufferConfig,
    base_delay_ms: float,
) -> tuple[ReceiverEvent, bytes | None]:
    """Aware receiver: plays on-time packets, harvests every late payload."""
    verdict = buffer_decide(cfg, packet, arrival_ms, base_delay_ms)
    if verdict is BufferVerdict.PLAY:
        return ReceiverEvent.PLAY, None
    return ReceiverEvent.EXTRACT, packet.payload


def receive_unaware(
    packet: PacketRecord,
    arrival_ms: float,
    cfg: JitterBufferConfig,
    base_delay_ms: float,
) -> ReceiverEvent:
    """Unaware receiver: late packets are silently discarded."""
    verdict = buffer_decide(cfg, packet, arrival_ms, base_delay_ms)
    return ReceiverEvent.PLAY if verdict is BufferVerdict.PLAY else ReceiverEvent.DROP


@dataclass(frozen=True)
class ReassemblyResult:
    """What the aware receiver could reconstruct.

    expected_chunks is None when the opening chunk (and with it the length
    prefix) never arrived; missing_chunks is then a lower bound of zero.
    """

    message: bytes
    expected_bytes: int | None
    expected_chunks: int | None
    received_chunks: int
    complete: bool

    @property
    def missing_chunks(self) -> int:
        if self.expected_chunks is None:
            return 0
        return max(0, self.expected_chunks - self.received_chunks)


def reassemble(extracted: Iterable[tuple[int, bytes]]) -> ReassemblyResult:
    """Rebuild the message from extracted (sequence number, payload) pairs.

    Payloads are ordered by wrap-aware sequence number, concatenated, and the
    final padding is stripped using the 16-bit length prefix.  When chunks
    are missing the partial reconstruction is returned with the deficit
    reported; the receiver alone cannot localize which chunks were lost.
    """
    pairs = list(extracted)
    if not pairs:
        return ReassemblyResult(b"", None, None, 0, False)
    ext = unwrap_sequences([seq for seq, _ in pairs])
    ordered = [pair[1] for _, pair in sorted(zip(ext, pairs), key=lambda x: x[0])]
    chunk_bytes = len(ordered[0])
    blob = b"".join(ordered)
    declared = int.from_bytes(blob[:LENGTH_PREFIX_BYTES], "big")
    body = blob[LENGTH_PREFIX_BYTES:]
    expected_chunks = -(-(declared + LENGTH_PREFIX_BYTES) // chunk_bytes)
    message = body[:declared]
    complete = len(body) >= declared and len(pairs) >= expected_chunks
    return ReassemblyResult(
        message=message,
        expected_bytes=declared,
        expected_chunks=expected_chunks,
        received_chunks=len(pairs),
        complete=complete,
    )


def missing_chunk_extents(
    chunk_seqs: Sequence[int], extracted_seqs: Iterable[int]
) -> list[tuple[int, int]]:
    """Localize lost chunks using the sender's chunk -> sequence mapping.

    Returns inclusive (first_chunk, last_chunk) index ranges that never
    reached the extractor.  This needs sender-side knowledge; the receiver's
    own view only exposes a count deficit (see reassemble()).
    """
    got = set(extracted_seqs)
    extents: list[tuple[int, int]] = []
    run_start = None
    for idx, seq in enumerate(chunk_seqs):
        if seq not in got:
            if run_start is None:
                run_start = idx
        elif run_start is not None:
            extents.append((run_start, idx - 1))
            run_start = None
    if run_start is not None:
        extents.append((run_start, len(chunk_seqs) - 1))
    return extents


def extraction_report(bits_sent: int, bits_recovered: int, gaps: list[tuple[int, int]]) -> dict:
    """JSON-ready summary of one steganogram transfer."""
    ber = 0.0 if bits_sent == 0 else 1.0 - bits_recovered / bits_sent
    return {
        "bits_sent": int(bits_sent),
        "bits_recovered": int(bits_recovered),
        "ber": ber,
        "gaps": [[int(a), int(b)] for a, b in gaps],
    }
