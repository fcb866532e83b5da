"""Steganalysis against the delay-based covert channel.

Three detectors: a passive per-call loss-ratio scan, a passive
population-level goodness-of-fit test on call durations, and an active
in-path filter that erases or drops packets arriving far behind the stream's
playout frontier.  The passive detectors consume the JSON-lines packet
traces; the active filter sits inline and keeps per-stream state.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .durations import DurationModel
from .rtp import VERDICT_PLAYED, TraceEvent, unwrap_sequences

__all__ = [
    "InsufficientDataError",
    "CallLossStats",
    "ScanRecord",
    "ScanReport",
    "loss_stats",
    "passive_loss_scan",
    "FitTestResult",
    "duration_fit_test",
    "ActiveWardenConfig",
    "WardenAction",
    "ActiveWarden",
    "roc_points",
    "write_verdict_csv",
    "write_warden_summary",
]


class InsufficientDataError(ValueError):
    """Not enough samples for a meaningful statistical verdict."""


@dataclass(frozen=True)
class CallLossStats:
    """Per-call loss statistics as reconstructed from an observed trace.

    packets_expected spans the wrap-aware min..max sequence numbers actually
    observed; packets_seen counts packets usable for playout, so late
    arrivals count toward loss exactly as the de-jitter rule treats them.
    """

    ssrc: int
    packets_expected: int
    packets_seen: int
    loss_ratio: float
    duration_s: float


def loss_stats(events: Sequence[TraceEvent]) -> CallLossStats:
    observed = [ev for ev in events if ev.arrival_ms is not None]
    if len(observed) < 2:
        raise InsufficientDataError("trace has fewer than 2 observed packets")
    ext = unwrap_sequences([ev.seq for ev in observed])
    expected = max(ext) - min(ext) + 1
    seen = sum(1 for ev in events if ev.verdict == VERDICT_PLAYED)
    ts = [ev.ts_ms for ev in observed]
    return CallLossStats(
        ssrc=observed[0].ssrc,
        packets_expected=expected,
        packets_seen=seen,
        loss_ratio=min(1.0, max(0.0, 1.0 - seen / expected)),
        duration_s=(max(ts) - min(ts)) / 1000.0,
    )


@dataclass(frozen=True)
class ScanRecord:
    ssrc: int
    loss_ratio: float
    duration_s: float
    flagged: bool


@dataclass(frozen=True)
class ScanReport:
    records: tuple[ScanRecord, ...]
    warnings: tuple[str, ...]
    threshold: float


def passive_loss_scan(
    traces: Iterable[Sequence[TraceEvent]],
    threshold: float | None = None,
    sigma: float | None = None,
) -> ScanReport:
    """Flag calls whose loss ratio exceeds a threshold.

    The threshold is either absolute or derived from the scanned population
    as mean + sigma * sd of the per-call loss ratios.  Calls with fewer than
    two observed packets are excluded with a warning record.
    """
    if (threshold is None) == (sigma is None):
        raise ValueError("give exactly one of threshold= or sigma=")
    stats_list: list[CallLossStats] = []
    warnings: list[str] = []
    for i, events in enumerate(traces):
        try:
            stats_list.append(loss_stats(events))
        except InsufficientDataError as exc:
            warnings.append(f"trace {i}: {exc}")
    if not stats_list:
        raise InsufficientDataError("no usable traces")
    ratios = np.array([s.loss_ratio for s in stats_list])
    if threshold is None:
        threshold = float(ratios.mean() + sigma * ratios.std())
    records = tuple(
        ScanRecord(s.ssrc, s.loss_ratio, s.duration_s, s.loss_ratio > threshold)
        for s in stats_list
    )
    return ScanReport(records=records, warnings=tuple(warnings), threshold=threshold)


@dataclass(frozen=True)
class FitTestResult:
    statistic: float
    p_value: float
    rejected: bool


def duration_fit_test(
    durations: Sequence[float], reference: DurationModel, alpha: float = 0.05
) -> FitTestResult:
    """One-sample Kolmogorov-Smirnov test of call durations against a model.

    Rejection at the chosen significance level marks the population as not
    following the reference law.
    """
    durations = np.asarray(durations, dtype=float)
    if durations.size < 20:
        raise InsufficientDataError(f"need >= 20 durations, got {durations.size}")

    def cdf(x):
        return 1.0 - np.asarray(reference.survival(np.maximum(x, 0.0)))

    res = stats.kstest(durations, cdf)
    return FitTestResult(
        statistic=float(res.statistic),
        p_value=float(res.pvalue),
        rejected=bool(res.pvalue < alpha),
    )


@dataclass(frozen=True)
class ActiveWardenConfig:
    """In-path filter: packets later than window_ms behind the playout
    frontier get their payload erased, or are dropped outright."""

    window_ms: float
    action: str = "erase"

    def __post_init__(self) -> None:
        if self.window_ms <= 0:
            raise ValueError("window_ms must be > 0")
        if self.action not in ("erase", "drop"):
            raise ValueError("action must be 'erase' or 'drop'")


class WardenAction(Enum):
    PASS = "pass"
    ERASE = "erase"
    DROP = "drop"


@dataclass
class _StreamTrack:
    min_delay_ms: float = float("inf")
    max_ts_ms: float = float("-inf")
    max_arrival_ms: float = float("-inf")


class ActiveWarden:
    """Stateful filter over one or more RTP streams, fed in arrival order.

    Lateness is judged against the stream's playout frontier, estimated from
    the smallest one-way delay observed so far (the receiver's true buffer
    depth is unknown to the warden, hence the independent window parameter).
    """

    def __init__(self, cfg: ActiveWardenConfig):
        self.cfg = cfg
        self.counts = {"erased": 0, "dropped": 0, "passed": 0}
        self._tracks: dict[int, _StreamTrack] = {}

    def filter(self, ssrc: int, timestamp_ms: float, arrival_ms: float) -> WardenAction:
        track = self._tracks.setdefault(ssrc, _StreamTrack())
        delay = arrival_ms - timestamp_ms
        track.min_delay_ms = min(track.min_delay_ms, delay)
        track.max_ts_ms = max(track.max_ts_ms, timestamp_ms)
        track.max_arrival_ms = max(track.max_arrival_ms, arrival_ms)
        lateness = delay - track.min_delay_ms
        if lateness > self.cfg.window_ms:
            if self.cfg.action == "drop":
                self.counts["dropped"] += 1
                return WardenAction.DROP
            self.counts["erased"] += 1
            return WardenAction.ERASE
        self.counts["passed"] += 1
        return WardenAction.PASS

    def filter_stream(self, timestamps_ms: np.ndarray, arrivals_ms: np.ndarray) -> np.ndarray:
        """Vectorized filter over one stream already sorted by arrival.

        Returns a boolean mask of packets acted upon (erase/drop per config);
        the running minimum delay matches the per-packet filter() exactly.
        """
        delays = np.asarray(arrivals_ms, dtype=float) - np.asarray(timestamps_ms, dtype=float)
        lateness = delays - np.minimum.accumulate(delays)
        acted = lateness > self.cfg.window_ms
        key = "dropped" if self.cfg.action == "drop" else "erased"
        self.counts[key] += int(acted.sum())
        self.counts["passed"] += int((~acted).sum())
        return acted


def roc_points(
    scores: Sequence[float], labels: Sequence[bool], thresholds: Sequence[float]
) -> list[tuple[float, float, float]]:
    """(threshold, fpr, tpr) sweep for a score-above-threshold detector."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    pos = labels.sum()
    neg = (~labels).sum()
    if pos == 0 or neg == 0:
        raise ValueError("need both positive and negative calls for a ROC sweep")
    out = []
    for thr in thresholds:
        flagged = scores > thr
        tpr = float((flagged & labels).sum() / pos)
        fpr = float((flagged & ~labels).sum() / neg)
        out.append((float(thr), fpr, tpr))
    return out


def write_verdict_csv(path, records: Iterable[ScanRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ssrc", "loss_ratio", "duration_s", "flagged"])
        for rec in records:
            writer.writerow([rec.ssrc, repr(rec.loss_ratio), repr(rec.duration_s), rec.flagged])


def write_warden_summary(path, erased: int, dropped: int, passed: int, collateral: int) -> None:
    with open(path, "w") as fh:
        json.dump(
            {"erased": erased, "dropped": dropped, "passed": passed, "collateral": collateral},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
