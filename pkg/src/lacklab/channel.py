"""Stochastic network impairment: base delay, non-negative jitter, random loss.

Jitter draws are non-negative by construction so causality (arrival at or
after send + base delay) always holds; reordering emerges naturally when
draws cross.  Losses are independent Bernoulli per packet, a documented
model limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ChannelConfig", "JITTER_LAWS", "transmit", "transmit_many"]

JITTER_LAWS = ("truncated-normal", "gamma")

# scale factor putting the standard deviation of |N(0, c*sd)| at exactly sd
_HALF_NORMAL_SCALE = 1.0 / math.sqrt(1.0 - 2.0 / math.pi)


@dataclass(frozen=True)
class ChannelConfig:
    base_delay_ms: float = 20.0
    jitter_sd_ms: float = 0.0
    jitter_law: str = "truncated-normal"
    p_loss: float = 0.0
    #: shape of the gamma jitter law; scale is derived from jitter_sd_ms
    gamma_shape: float = 2.0

    def __post_init__(self) -> None:
        if self.base_delay_ms < 0 or self.jitter_sd_ms < 0:
            raise ValueError("delays must be >= 0")
        if self.jitter_law not in JITTER_LAWS:
            raise ValueError(f"jitter_law must be one of {JITTER_LAWS}")
        if not 0.0 <= self.p_loss < 1.0:
            raise ValueError("p_loss must be within [0, 1)")
        if self.gamma_shape <= 0:
            raise ValueError("gamma_shape must be > 0")


def _jitter(cfg: ChannelConfig, rng: np.random.Generator, size):
    if cfg.jitter_sd_ms == 0.0:
        return np.zeros(size) if size is not None else 0.0
    if cfg.jitter_law == "truncated-normal":
        # zero-truncated normal, scale calibrated so the realized standard
        # deviation matches jitter_sd_ms
        return np.abs(rng.normal(0.0, cfg.jitter_sd_ms * _HALF_NORMAL_SCALE, size))
    return rng.gamma(cfg.gamma_shape, cfg.jitter_sd_ms / math.sqrt(cfg.gamma_shape), size)


def transmit(cfg: ChannelConfig, send_ms: float, rng: np.random.Generator) -> float | None:
    """Send one packet; returns the arrival time in ms, or None when lost."""
    if send_ms < 0:
        raise ValueError("send_ms must be >= 0")
    lost = rng.random() < cfg.p_loss
    jitter = _jitter(cfg, rng, None)
    if lost:
        return None
    return send_ms + cfg.base_delay_ms + float(jitter)


def transmit_many(
    cfg: ChannelConfig, send_ms: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized transmit: (arrival_ms with NaN where lost, lost mask)."""
    send_ms = np.asarray(send_ms, dtype=float)
    if np.any(send_ms < 0):
        raise ValueError("send_ms must be >= 0")
    lost = rng.random(send_ms.shape) < cfg.p_loss
    jitter = _jitter(cfg, rng, send_ms.shape)
    arrival = send_ms + cfg.base_delay_ms + jitter
    arrival[lost] = np.nan
    return arrival, lost
