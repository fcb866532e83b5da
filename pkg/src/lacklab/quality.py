"""Voice-quality estimation and codec loss budgets.

MOS is modeled as an exponential function of total packet loss; the extra
loss imposed by the covert channel adds to network loss inside the exponent.
Codec profiles carry the loss-tolerance budgets that cap how much of that
extra loss is acceptable, and the packet-rate/payload-size constants that
convert between an insertion rate in bits per second and a per-packet loss
fraction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources

__all__ = [
    "MosParams",
    "SKYPE_MOS_PARAMS",
    "CodecProfile",
    "QualityInfeasibleError",
    "builtin_codecs",
    "codec_profile",
    "mos",
    "max_p_lack",
    "loss_budget",
    "ir_to_p_lack",
    "p_lack_to_ir",
    "mos_timeline",
]


class QualityInfeasibleError(ValueError):
    """The requested MOS floor cannot be met even with zero covert loss."""


@dataclass(frozen=True)
class MosParams:
    """Parameters of the exponential MOS-vs-loss model.

    mos = alpha * exp(beta * p_total) + gamma, with beta < 0, so quality
    decays from alpha + gamma at zero loss toward the floor gamma.
    """

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.beta >= 0:
            raise ValueError("beta must be < 0")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1 (MOS scale floor)")
        if self.alpha + self.gamma > 5 + 1e-12:
            raise ValueError("alpha + gamma must not exceed the MOS ceiling of 5")


#: Parameters measured for Skype telephony.
SKYPE_MOS_PARAMS = MosParams(alpha=3.0829, beta=-4.6446, gamma=1.07)


@dataclass(frozen=True)
class CodecProfile:
    """Voice codec constants relevant to loss budgeting and packetization."""

    name: str
    bitrate: float
    frame_ms: float
    payload_bits: float
    packets_per_second: float
    loss_tolerance: float
    plc_loss_tolerance: float

    def __post_init__(self) -> None:
        if self.bitrate <= 0 or self.frame_ms <= 0:
            raise ValueError("bitrate and frame_ms must be > 0")
        if not math.isclose(self.packets_per_second, 1000.0 / self.frame_ms, rel_tol=1e-9):
            raise ValueError("packets_per_second must equal 1000/frame_ms")
        if not math.isclose(self.payload_bits, self.bitrate * self.frame_ms / 1000.0, rel_tol=1e-9):
            raise ValueError("payload_bits must equal bitrate*frame_ms/1000")
        if not (0 < self.loss_tolerance <= self.plc_loss_tolerance < 1):
            raise ValueError("need 0 < loss_tolerance <= plc_loss_tolerance < 1")

    @property
    def payload_bytes(self) -> int:
        # wire payloads are whole bytes; exact for G.711/G.729A, rounded up
        # for codecs whose frame is not byte-aligned
        return math.ceil(self.payload_bits / 8.0)

    @property
    def channel_bits_per_second(self) -> float:
        """packets_per_second * payload_bits; equals the codec bitrate."""
        return self.packets_per_second * self.payload_bits


def codec_profile(name: str, **overrides) -> CodecProfile:
    """Build a codec profile from the built-in table, with optional overrides.

    Overridable keys: bitrate, frame_ms, loss_tolerance, plc_loss_tolerance.
    """
    table = _raw_codec_table()
    if name not in table:
        raise KeyError(f"unknown codec {name!r}; built-ins: {sorted(table)}")
    entry = dict(table[name])
    unknown = set(overrides) - set(entry)
    if unknown:
        raise ValueError(f"unknown codec override(s): {sorted(unknown)}")
    entry.update(overrides)
    return CodecProfile(
        name=name,
        bitrate=float(entry["bitrate"]),
        frame_ms=float(entry["frame_ms"]),
        payload_bits=float(entry["bitrate"]) * float(entry["frame_ms"]) / 1000.0,
        packets_per_second=1000.0 / float(entry["frame_ms"]),
        loss_tolerance=float(entry["loss_tolerance"]),
        plc_loss_tolerance=float(entry["plc_loss_tolerance"]),
    )


def builtin_codecs() -> dict[str, CodecProfile]:
    return {name: codec_profile(name) for name in _raw_codec_table()}


def _raw_codec_table() -> dict:
    with resources.files("lacklab.data").joinpath("codecs.json").open("r") as fh:
        return json.load(fh)


def mos(params: MosParams, p_loss: float, p_lack: float = 0.0) -> float:
    """Estimated MOS under network loss p_loss plus covert loss p_lack."""
    for value, label in ((p_loss, "p_loss"), (p_lack, "p_lack")):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{label} must be within [0, 1], got {value}")
    return params.alpha * math.exp(params.beta * (p_loss + p_lack)) + params.gamma


def max_p_lack(params: MosParams, p_loss: float, mos_floor: float) -> float:
    """Largest covert loss fraction keeping MOS at or above mos_floor.

    Closed-form inversion of the MOS model, clamped to [0, 1].
    """
    if not 0.0 <= p_loss <= 1.0:
        raise ValueError("p_loss must be within [0, 1]")
    if mos_floor <= params.gamma:
        raise ValueError("mos_floor must exceed the model floor gamma")
    best = mos(params, p_loss, 0.0)
    if mos_floor > best + 1e-12:
        raise QualityInfeasibleError(
            f"MOS floor {mos_floor} unreachable: even p_lack=0 gives {best:.4f}"
        )
    p = math.log((mos_floor - params.gamma) / params.alpha) / params.beta - p_loss
    return min(max(p, 0.0), 1.0)


def loss_budget(codec: CodecProfile, plc_enabled: bool, p_network: float) -> float:
    """Loss headroom the covert channel may consume for this codec.

    The codec tolerates loss up to its (PLC-dependent) tolerance; whatever the
    network already consumes is subtracted.
    """
    if not 0.0 <= p_network <= 1.0:
        raise ValueError("p_network must be within [0, 1]")
    tolerance = codec.plc_loss_tolerance if plc_enabled else codec.loss_tolerance
    return max(0.0, tolerance - p_network)


def ir_to_p_lack(codec: CodecProfile, ir: float) -> float:
    """Convert an insertion rate in bits/s to the packet-loss fraction it causes."""
    return ir / codec.channel_bits_per_second


def p_lack_to_ir(codec: CodecProfile, p_lack: float) -> float:
    """Convert a covert packet-loss fraction to the insertion rate it carries."""
    return p_lack * codec.channel_bits_per_second


def mos_timeline(params, codec, p_loss, ir_series):
    """Map a series of (t, insertion_rate) points to (t, MOS) points."""
    out = []
    for t, ir in ir_series:
        if ir < 0:
            raise ValueError("insertion rate must be >= 0")
        p_lack = ir_to_p_lack(codec, ir)
        if p_lack > 1.0:
            raise ValueError(f"insertion rate {ir} b/s exceeds the codec bit budget")
        out.append((t, mos(params, p_loss, p_lack)))
    return out
