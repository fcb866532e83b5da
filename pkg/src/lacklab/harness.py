"""End-to-end experiment orchestration.

A call runs sender -> channel -> optional warden -> receiver in arrival
order, fully deterministically: every random stream derives from the
experiment seed and the call index, so any experiment is a pure function of
its configuration and calls can be executed in any order (or in parallel)
with identical results.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from . import quality
from .channel import ChannelConfig, transmit_many
from .durations import (
    DurationModel,
    SampleModel,
    WeibullModel,
    empirical_voip_model,
    fit_weibull,
    conditional_mean_bounds,
)
from .endpoint import chunk_message, missing_chunk_extents, negotiate_delay, LENGTH_PREFIX_BYTES
from .quality import CodecProfile, MosParams, SKYPE_MOS_PARAMS, codec_profile, mos
from .rtp import (
    SEQ_MOD,
    TraceEvent,
    VERDICT_LATE,
    VERDICT_LOST,
    VERDICT_PLAYED,
)
from .scheduler import (
    SchedulerState,
    _heun_step,
    build_schedule,
    cap_from_quality,
    expected_duration_given_elapsed,
)
from .warden import ActiveWarden, ActiveWardenConfig

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "CallMetrics",
    "CallResult",
    "ExperimentReport",
    "model_from_spec",
    "run_call",
    "run_experiment",
    "write_calls_csv",
    "write_summary_json",
    "write_duration_curves",
    "write_schedule_curve",
    "write_mos_curves",
    "CALL_CSV_COLUMNS",
]


class ConfigError(ValueError):
    """The experiment configuration is malformed or inconsistent."""


def model_from_spec(spec: dict) -> DurationModel:
    """Build a duration model from its JSON description.

    Kinds: weibull {k, lambda}, exponential {mean}, weibull_fit {mean, cv},
    empirical (built-in piecewise fit), samples {values}.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("duration_model needs a 'kind' field")
    kind = spec["kind"]
    try:
        if kind == "weibull":
            return WeibullModel(float(spec["k"]), float(spec["lambda"]))
        if kind == "exponential":
            return WeibullModel(1.0, float(spec["mean"]))
        if kind == "weibull_fit":
            return fit_weibull(float(spec["mean"]), float(spec["cv"]))
        if kind == "empirical":
            return empirical_voip_model()
        if kind == "samples":
            return SampleModel([float(v) for v in spec["values"]])
    except KeyError as exc:
        raise ConfigError(f"duration_model kind {kind!r} is missing field {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad duration_model: {exc}") from exc
    raise ConfigError(f"unknown duration_model kind {kind!r}")


def _model_label(spec: dict) -> str:
    kind = spec["kind"]
    if kind == "weibull":
        return f"weibull_k{spec['k']:g}"
    if kind == "exponential":
        return f"exponential_{spec['mean']:g}"
    if kind == "weibull_fit":
        return f"weibull_cv{spec['cv']:g}"
    if kind == "samples":
        return "samples"
    return kind


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; see FORMATS.md for the JSON schema."""

    seed: int
    n_calls: int
    lack_fraction: float
    model_spec: dict
    model: DurationModel
    codec: CodecProfile
    channel: ChannelConfig
    mos_params: MosParams
    s_bits: int
    mode: str
    selection: str
    mos_floor: float | None
    plc: bool
    ir_cap: float | None
    report_interval_s: float
    buffer_ms: float
    d_lack_ms: float | None
    margin_ms: float | None
    warden_kind: str
    warden_threshold: float | None
    warden_sigma: float | None
    warden_window_ms: float | None
    warden_action: str
    keep_traces: bool

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            return cls._parse(raw)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def _parse(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("experiment config must be a JSON object")
        n_calls = int(raw.get("n_calls", 1))
        if n_calls < 1:
            raise ConfigError("n_calls must be >= 1")
        lack_fraction = float(raw.get("lack_fraction", 1.0))
        if not 0.0 <= lack_fraction <= 1.0:
            raise ConfigError("lack_fraction must be within [0, 1]")

        model_spec = raw.get("duration_model", {"kind": "exponential", "mean": 117.31})
        model = model_from_spec(model_spec)

        codec_name = raw.get("codec", "G.711")
        try:
            codec = codec_profile(codec_name, **raw.get("codec_overrides", {}))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad codec: {exc}") from exc

        ch = raw.get("channel", {})
        try:
            channel = ChannelConfig(
                base_delay_ms=float(ch.get("base_delay_ms", 20.0)),
                jitter_sd_ms=float(ch.get("jitter_sd_ms", 0.0)),
                jitter_law=ch.get("jitter_law", "truncated-normal"),
                p_loss=float(ch.get("p_loss", 0.0)),
                gamma_shape=float(ch.get("gamma_shape", 2.0)),
            )
        except ValueError as exc:
            raise ConfigError(f"bad channel: {exc}") from exc

        mp = raw.get("mos", {})
        try:
            mos_params = MosParams(
                alpha=float(mp.get("alpha", SKYPE_MOS_PARAMS.alpha)),
                beta=float(mp.get("beta", SKYPE_MOS_PARAMS.beta)),
                gamma=float(mp.get("gamma", SKYPE_MOS_PARAMS.gamma)),
            )
        except ValueError as exc:
            raise ConfigError(f"bad mos parameters: {exc}") from exc

        sch = raw.get("scheduler", {})
        s_bits = int(sch.get("s_bits", 1000))
        if s_bits < 0 or s_bits % 8 != 0:
            raise ConfigError("scheduler.s_bits must be a non-negative multiple of 8")
        mode = sch.get("mode", "distribution")
        if mode not in ("distribution", "approx-cv", "online"):
            raise ConfigError(f"unknown scheduler mode {mode!r}")
        selection = sch.get("selection", "bernoulli")
        if selection not in ("bernoulli", "paced"):
            raise ConfigError(f"unknown selection policy {selection!r}")
        mos_floor = sch.get("mos_floor")
        mos_floor = float(mos_floor) if mos_floor is not None else None
        ir_cap = sch.get("ir_cap")
        ir_cap = float(ir_cap) if ir_cap is not None else None
        report_interval_s = float(sch.get("report_interval_s", 5.0))
        if report_interval_s <= 0:
            raise ConfigError("scheduler.report_interval_s must be > 0")

        rcv = raw.get("receiver", {})
        buffer_ms = float(rcv.get("buffer_ms", 60.0))
        if not 10.0 <= buffer_ms <= 500.0:
            raise ConfigError("receiver.buffer_ms must be within [10, 500]")

        lk = raw.get("lack", {})
        d_lack_ms = lk.get("d_lack_ms")
        d_lack_ms = float(d_lack_ms) if d_lack_ms is not None else None
        margin_ms = lk.get("margin_ms")
        margin_ms = float(margin_ms) if margin_ms is not None else None

        wd = raw.get("warden", {"kind": "none"})
        warden_kind = wd.get("kind", "none")
        if warden_kind not in ("none", "passive", "active"):
            raise ConfigError(f"unknown warden kind {warden_kind!r}")
        warden_threshold = wd.get("threshold")
        warden_threshold = float(warden_threshold) if warden_threshold is not None else None
        warden_sigma = wd.get("sigma")
        warden_sigma = float(warden_sigma) if warden_sigma is not None else None
        if warden_kind == "passive" and (warden_threshold is None) == (warden_sigma is None):
            raise ConfigError("passive warden needs exactly one of threshold or sigma")
        warden_window_ms = wd.get("window_ms")
        warden_window_ms = float(warden_window_ms) if warden_window_ms is not None else None
        warden_action = wd.get("action", "erase")
        if warden_kind == "active":
            if warden_window_ms is None or warden_window_ms <= 0:
                raise ConfigError("active warden needs window_ms > 0")
            if warden_action not in ("erase", "drop"):
                raise ConfigError("active warden action must be 'erase' or 'drop'")

        return cls(
            seed=int(raw.get("seed", 0)),
            n_calls=n_calls,
            lack_fraction=lack_fraction,
            model_spec=model_spec,
            model=model,
            codec=codec,
            channel=channel,
            mos_params=mos_params,
            s_bits=s_bits,
            mode=mode,
            selection=selection,
            mos_floor=mos_floor,
            plc=bool(sch.get("plc", False)),
            ir_cap=ir_cap,
            report_interval_s=report_interval_s,
            buffer_ms=buffer_ms,
            d_lack_ms=d_lack_ms,
            margin_ms=margin_ms,
            warden_kind=warden_kind,
            warden_threshold=warden_threshold,
            warden_sigma=warden_sigma,
            warden_window_ms=warden_window_ms,
            warden_action=warden_action,
            keep_traces=bool(raw.get("traces", False)),
        )

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def effective_margin_ms(self) -> float:
        if self.margin_ms is not None:
            return self.margin_ms
        return max(1.0, 3.0 * self.channel.jitter_sd_ms)

    def effective_d_lack_ms(self) -> float:
        if self.d_lack_ms is not None:
            return self.d_lack_ms
        return negotiate_delay(self.buffer_ms, self.buffer_ms, self.effective_margin_ms())

    def effective_ir_cap(self) -> float:
        if self.ir_cap is not None:
            return self.ir_cap
        if self.mos_floor is None:
            return math.inf
        return cap_from_quality(
            self.codec, self.mos_params, self.channel.p_loss, self.mos_floor, self.plc
        )


CALL_CSV_COLUMNS = [
    "call_index",
    "ssrc",
    "lack",
    "duration_s",
    "steg_bits_sent",
    "steg_bits_recovered",
    "steg_ber",
    "voice_loss_ratio_network",
    "voice_loss_ratio_total",
    "mos_final",
    "warden_flagged",
    "warden_collateral",
]


@dataclass
class CallMetrics:
    call_index: int
    ssrc: int
    lack: bool
    duration_s: float
    steg_bits_sent: int
    steg_bits_recovered: int
    steg_ber: float
    voice_loss_ratio_network: float
    voice_loss_ratio_total: float
    mos_final: float
    warden_flagged: bool
    warden_collateral: int


@dataclass
class CallResult:
    metrics: CallMetrics
    observed_loss_ratio: float
    observed_duration_s: float
    gaps: list[tuple[int, int]]
    warden_counts: dict
    trace: list[TraceEvent] | None


def _call_streams(seed: int, call_index: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence([seed & (2**63 - 1), call_index])
    return [np.random.default_rng(child) for child in ss.spawn(5)]


def _matching_bits(a: bytes, b: bytes) -> int:
    if not a:
        return 0
    x = int.from_bytes(a, "big") ^ int.from_bytes(b, "big")
    return 8 * len(a) - x.bit_count()


def _chunk_message_spans(n_chunks: int, chunk_bytes: int, message_len: int) -> list[int]:
    """Message bytes carried by each chunk of the length-prefixed framing."""
    spans = []
    lo_msg, hi_msg = LENGTH_PREFIX_BYTES, LENGTH_PREFIX_BYTES + message_len
    for c in range(n_chunks):
        lo = c * chunk_bytes
        hi = lo + chunk_bytes
        spans.append(max(0, min(hi, hi_msg) - max(lo, lo_msg)))
    return spans


def _chunk_message_slice(chunk: bytes, c: int, chunk_bytes: int, message_len: int) -> bytes:
    lo_msg, hi_msg = LENGTH_PREFIX_BYTES, LENGTH_PREFIX_BYTES + message_len
    lo = c * chunk_bytes
    start = max(0, lo_msg - lo)
    stop = min(chunk_bytes, hi_msg - lo)
    return chunk[start:stop] if stop > start else b""


def _plan_block(model, mode, s_start, t_start, n_steps, step_s, cap):
    """Rates and remaining budget at n_steps+1 grid points from t_start."""
    state = SchedulerState(
        s_total=max(s_start, 1e-9), s_remaining=max(s_start, 0.0),
        elapsed=0.0, model=model, mode="approx-cv" if mode == "approx-cv" else "distribution",
        ir_cap=cap, step_s=step_s,
    )
    ts = t_start + np.arange(n_steps + 1) * step_s
    expected = np.asarray(expected_duration_given_elapsed(state, ts), dtype=float)
    ir = np.empty(n_steps + 1)
    s_rem = np.empty(n_steps + 1)
    s = float(s_start)
    for i in range(n_steps + 1):
        s_rem[i] = s
        ir[i] = min(cap, s / expected[i]) if s > 0 else 0.0
        if i < n_steps:
            s = _heun_step(s, expected[i], expected[i + 1], step_s, cap)
    return ir, s_rem


def run_call(cfg: ExperimentConfig, call_index: int, keep_trace: bool | None = None) -> CallResult:
    """Simulate one call end to end; deterministic in (cfg, call_index)."""
    if not 0 <= call_index < cfg.n_calls:
        raise ValueError("call_index out of range")
    keep_trace = cfg.keep_traces if keep_trace is None else keep_trace
    rng_dur, rng_voice, rng_sched, rng_chan, rng_msg = _call_streams(cfg.seed, call_index)

    codec = cfg.codec
    frame_ms = codec.frame_ms
    frame_s = frame_ms / 1000.0
    duration_s = float(cfg.model.sample(rng_dur))
    n = max(1, math.ceil(duration_s * 1000.0 / frame_ms))

    ts_ms = np.arange(n) * frame_ms
    seq0 = int(rng_voice.integers(0, SEQ_MOD))
    seqs = (seq0 + np.arange(n)) % SEQ_MOD
    ssrc = int(rng_voice.integers(0, 2**32))
    voice_key = int(rng_voice.integers(0, 2**63))

    lack = call_index < round(cfg.lack_fraction * cfg.n_calls)
    message = rng_msg.bytes(cfg.s_bits // 8) if (lack and cfg.s_bits) else b""

    chunk_bytes = codec.payload_bytes
    chunks: list[bytes] = chunk_message(message, chunk_bytes) if message else []

    steg_mask = np.zeros(n, dtype=bool)
    chunk_packet: list[int] = []
    if chunks:
        try:
            cap = cfg.effective_ir_cap()
        except quality.QualityInfeasibleError as exc:
            raise quality.QualityInfeasibleError(f"call {call_index}: {exc}") from exc
        p_bits = codec.channel_bits_per_second
        if cfg.mode == "online":
            block = max(1, int(round(cfg.report_interval_s / frame_s)))
        else:
            block = n
        s_cur = float(cfg.s_bits)
        planned_sent_offset = 0.0
        next_chunk = 0
        sel_indices: list[int] = []
        played_so_far = 0
        expected_so_far = 0
        blocks = [(i, min(i + block, n)) for i in range(0, n, block)]
        block_arrivals: list[np.ndarray] = []
        block_lost: list[np.ndarray] = []
        cap_cur = cap
        d_lack = cfg.effective_d_lack_ms()
        base_est = cfg.channel.base_delay_ms
        for lo, hi in blocks:
            m = hi - lo
            ir, s_rem = _plan_block(
                cfg.model, cfg.mode, s_cur, lo * frame_s, m, frame_s, cap_cur
            )
            p = np.clip(ir[:m] / p_bits, 0.0, 1.0)
            p[s_rem[:m] < 1.0] = 0.0
            if cfg.selection == "bernoulli":
                draws = rng_sched.random(m)
                hits = np.nonzero(draws < p)[0]
                for h in hits:
                    if next_chunk >= len(chunks):
                        break
                    sel_indices.append(lo + int(h))
                    next_chunk += 1
            else:
                planned = planned_sent_offset + (s_cur - s_rem[:m])
                while next_chunk < len(chunks):
                    thr = next_chunk * codec.payload_bits
                    pos = int(np.searchsorted(planned, thr, side="left"))
                    if pos >= m:
                        break
                    idx = lo + pos
                    if sel_indices and idx <= sel_indices[-1]:
                        idx = sel_indices[-1] + 1
                    if idx >= n:
                        break
                    sel_indices.append(idx)
                    next_chunk += 1
            planned_sent_offset += s_cur - float(s_rem[m])
            s_cur = float(s_rem[m])
            # transmit this block now so online mode can read back the loss
            block_steg = np.zeros(m, dtype=bool)
            for idx in sel_indices:
                if lo <= idx < hi:
                    block_steg[idx - lo] = True
            send = ts_ms[lo:hi] + d_lack * block_steg
            arr, lost_blk = transmit_many(cfg.channel, send, rng_chan)
            block_arrivals.append(arr)
            block_lost.append(lost_blk)
            if cfg.mode == "online" and hi < n:
                deadline = ts_ms[lo:hi] + base_est + cfg.buffer_ms
                with np.errstate(invalid="ignore"):
                    played_blk = (~lost_blk) & (arr <= deadline)
                played_so_far += int(played_blk.sum())
                expected_so_far += m
                observed = 1.0 - played_so_far / expected_so_far
                try:
                    if cfg.ir_cap is not None:
                        cap_cur = cfg.ir_cap
                    elif cfg.mos_floor is not None:
                        cap_cur = cap_from_quality(
                            codec, cfg.mos_params, min(observed, 1.0), cfg.mos_floor, cfg.plc
                        )
                except quality.QualityInfeasibleError:
                    cap_cur = 0.0
        arrivals = np.concatenate(block_arrivals)
        lost = np.concatenate(block_lost)
        steg_mask[sel_indices] = True
        chunk_packet = sel_indices
    else:
        d_lack = cfg.effective_d_lack_ms()
        send = ts_ms.copy()
        arrivals, lost = transmit_many(cfg.channel, send, rng_chan)

    # --- active warden, processing survivors in (arrival, seq) order -------
    dropped = np.zeros(n, dtype=bool)
    erased = np.zeros(n, dtype=bool)
    warden_counts = {"erased": 0, "dropped": 0, "passed": 0}
    if cfg.warden_kind == "active":
        aw = ActiveWarden(ActiveWardenConfig(cfg.warden_window_ms, cfg.warden_action))
        alive_idx = np.nonzero(~lost)[0]
        order = np.lexsort((seqs[alive_idx], arrivals[alive_idx]))
        ordered_idx = alive_idx[order]
        acted = aw.filter_stream(ts_ms[ordered_idx], arrivals[ordered_idx])
        target = dropped if cfg.warden_action == "drop" else erased
        target[ordered_idx[acted]] = True
        warden_counts = dict(aw.counts)

    # --- receiver ------------------------------------------------------------
    base_est = cfg.channel.base_delay_ms
    deadline = ts_ms + base_est + cfg.buffer_ms
    arrived = (~lost) & (~dropped)
    with np.errstate(invalid="ignore"):
        played = arrived & (arrivals <= deadline)
    late = arrived & ~played

    # --- steganogram accounting ---------------------------------------------
    bits_sent = 0
    bits_recovered = 0
    delivered_bits = 0
    gaps: list[tuple[int, int]] = []
    if chunks and chunk_packet:
        spans = _chunk_message_spans(len(chunks), chunk_bytes, len(message))
        embedded = list(range(len(chunk_packet)))
        bits_sent = 8 * sum(spans[c] for c in embedded)
        extracted_flags = []
        for c, idx in enumerate(chunk_packet):
            got = bool(late[idx])
            extracted_flags.append(got)
            if got:
                delivered_bits += 8 * spans[c]
                original = _chunk_message_slice(chunks[c], c, chunk_bytes, len(message))
                received = bytes(len(original)) if erased[idx] else original
                bits_recovered += _matching_bits(received, original)
        gaps = missing_chunk_extents(
            list(range(len(chunk_packet))),
            [c for c, got in enumerate(extracted_flags) if got],
        )
    steg_ber = 0.0 if delivered_bits == 0 else 1.0 - bits_recovered / delivered_bits

    # --- voice metrics --------------------------------------------------------
    loss_network = float(lost.mean())
    loss_total = 1.0 - float(played.mean())
    mos_final = mos(cfg.mos_params, min(loss_total, 1.0), 0.0)

    arrived_idx = np.nonzero(arrived)[0]
    if arrived_idx.size >= 2:
        expected_obs = int(arrived_idx[-1] - arrived_idx[0] + 1)
        observed_loss = max(0.0, 1.0 - float(played.sum()) / expected_obs)
        observed_duration = float(ts_ms[arrived_idx[-1]] - ts_ms[arrived_idx[0]]) / 1000.0
    else:
        observed_loss = 1.0
        observed_duration = 0.0

    flagged = False
    if cfg.warden_kind == "passive" and cfg.warden_threshold is not None:
        flagged = observed_loss > cfg.warden_threshold

    trace = None
    if keep_trace:
        trace = []
        send_all = ts_ms + d_lack * steg_mask
        for i in range(n):
            if lost[i] or dropped[i]:
                verdict, arr_val = VERDICT_LOST, None
            elif played[i]:
                verdict, arr_val = VERDICT_PLAYED, float(arrivals[i])
            else:
                verdict, arr_val = VERDICT_LATE, float(arrivals[i])
            trace.append(
                TraceEvent(
                    ssrc=ssrc,
                    seq=int(seqs[i]),
                    ts_ms=float(ts_ms[i]),
                    sent_ms=float(send_all[i]),
                    arrival_ms=arr_val,
                    verdict=verdict,
                )
            )

    metrics = CallMetrics(
        call_index=call_index,
        ssrc=ssrc,
        lack=bool(lack),
        duration_s=duration_s,
        steg_bits_sent=bits_sent,
        steg_bits_recovered=bits_recovered,
        steg_ber=steg_ber,
        voice_loss_ratio_network=loss_network,
        voice_loss_ratio_total=loss_total,
        mos_final=mos_final,
        warden_flagged=flagged,
        warden_collateral=int(((dropped | erased) & ~steg_mask).sum()),
    )
    return CallResult(
        metrics=metrics,
        observed_loss_ratio=observed_loss,
        observed_duration_s=observed_duration,
        gaps=gaps,
        warden_counts=warden_counts,
        trace=trace,
    )


@dataclass
class ExperimentReport:
    config_seed: int
    calls: list[CallMetrics]
    traces: list[list[TraceEvent]] | None
    aggregate: dict


def run_experiment(cfg: ExperimentConfig, call_order: Iterable[int] | None = None) -> ExperimentReport:
    """Run every call and aggregate; results are merged in call_index order
    regardless of the execution order."""
    order = list(call_order) if call_order is not None else list(range(cfg.n_calls))
    if sorted(order) != list(range(cfg.n_calls)):
        raise ValueError("call_order must be a permutation of range(n_calls)")
    results: dict[int, CallResult] = {i: run_call(cfg, i) for i in order}
    ordered = [results[i] for i in range(cfg.n_calls)]

    # population-level passive threshold (sigma mode needs the whole scan)
    if cfg.warden_kind == "passive":
        ratios = np.array([r.observed_loss_ratio for r in ordered])
        if cfg.warden_sigma is not None:
            threshold = float(ratios.mean() + cfg.warden_sigma * ratios.std())
        else:
            threshold = cfg.warden_threshold
        for r in ordered:
            r.metrics.warden_flagged = bool(r.observed_loss_ratio > threshold)
    else:
        threshold = None

    calls = [r.metrics for r in ordered]
    aggregate = _aggregate(cfg, ordered, threshold)
    traces = [r.trace for r in ordered] if cfg.keep_traces else None
    return ExperimentReport(config_seed=cfg.seed, calls=calls, traces=traces, aggregate=aggregate)


_NUMERIC_FIELDS = [
    "duration_s",
    "steg_bits_sent",
    "steg_bits_recovered",
    "steg_ber",
    "voice_loss_ratio_network",
    "voice_loss_ratio_total",
    "mos_final",
    "warden_collateral",
]


def _aggregate(cfg: ExperimentConfig, results: list[CallResult], threshold: float | None) -> dict:
    calls = [r.metrics for r in results]
    metrics = {}
    for name in _NUMERIC_FIELDS:
        vals = np.array([getattr(c, name) for c in calls], dtype=float)
        metrics[name] = {"mean": float(vals.mean()), "sd": float(vals.std())}
    total_duration = sum(c.duration_s for c in calls)
    bandwidth = sum(c.steg_bits_recovered for c in calls) / total_duration if total_duration else 0.0

    lack_flags = np.array([c.lack for c in calls], dtype=bool)
    flagged = np.array([c.warden_flagged for c in calls], dtype=bool)
    warden: dict = {"kind": cfg.warden_kind}
    if cfg.warden_kind == "passive":
        warden["threshold"] = threshold
        n_pos = int(lack_flags.sum())
        n_neg = int((~lack_flags).sum())
        warden["tpr"] = float((flagged & lack_flags).sum() / n_pos) if n_pos else None
        warden["fpr"] = float((flagged & ~lack_flags).sum() / n_neg) if n_neg else None
        warden["flagged"] = int(flagged.sum())
    if cfg.warden_kind == "active":
        totals = {"erased": 0, "dropped": 0, "passed": 0}
        for r in results:
            for key in totals:
                totals[key] += r.warden_counts.get(key, 0)
        totals["collateral"] = int(sum(c.warden_collateral for c in calls))
        warden["summary"] = totals

    return {
        "n_calls": cfg.n_calls,
        "seed": cfg.seed,
        "lack_calls": int(lack_flags.sum()),
        "metrics": metrics,
        "steg_bandwidth_bps": bandwidth,
        "warden": warden,
    }


def write_calls_csv(path, calls: Iterable[CallMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CALL_CSV_COLUMNS)
        for c in calls:
            writer.writerow(
                [
                    c.call_index,
                    c.ssrc,
                    int(c.lack),
                    repr(c.duration_s),
                    c.steg_bits_sent,
                    c.steg_bits_recovered,
                    repr(c.steg_ber),
                    repr(c.voice_loss_ratio_network),
                    repr(c.voice_loss_ratio_total),
                    repr(c.mos_final),
                    int(c.warden_flagged),
                    c.warden_collateral,
                ]
            )


def write_calls_jsonl(path, calls: Iterable[CallMetrics]) -> None:
    with open(path, "w") as fh:
        for c in calls:
            fh.write(json.dumps(asdict(c), sort_keys=True, separators=(",", ":")) + "\n")


def write_summary_json(path, aggregate: dict) -> None:
    with open(path, "w") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- curve sweeps -------------------------------------------------------------


def write_duration_curves(model: DurationModel, ts: np.ndarray, path) -> None:
    """CSV of survival/density/conditional-mean curves with their brackets."""
    ts = np.asarray(ts, dtype=float)
    if np.any(ts < 0):
        raise ValueError("grid must be non-negative")
    if model.support_end is not None and np.any(ts > model.support_end):
        raise ValueError("grid extends beyond the model support")
    surv = np.asarray(model.survival(ts), dtype=float)
    dens = np.asarray(model.density(ts), dtype=float)
    cond = np.asarray(model.conditional_mean(ts), dtype=float)
    lo, hi = conditional_mean_bounds(model, ts)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "survival", "density", "cond_mean", "lo", "hi"])
        for i in range(ts.size):
            writer.writerow(
                [repr(ts[i]), repr(surv[i]), repr(dens[i]), repr(cond[i]), repr(float(np.asarray(lo)[i])), repr(float(np.asarray(hi)[i]))]
            )


def write_schedule_curve(
    model: DurationModel,
    s_bits: float,
    path,
    *,
    t_end: float,
    step_s: float = 0.1,
    mode: str = "distribution",
    ir_cap: float = math.inf,
) -> None:
    """CSV of the rate trajectory: t, ir, s_remaining, x_t, cond_mean."""
    sched = build_schedule(model, s_bits, t_end=t_end, step_s=step_s, mode=mode, ir_cap=ir_cap)
    if mode == "approx-cv":
        cv = model.moments().cv
        cond = 60.0 * (1.32 * cv + (sched.t / 60.0) * math.sqrt(cv) + 0.59)
    else:
        cond = np.asarray(model.conditional_mean(sched.t), dtype=float)
    ir0 = sched.ir[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "ir", "s_remaining", "x_t", "cond_mean"])
        for i in range(sched.t.size):
            writer.writerow(
                [
                    repr(float(sched.t[i])),
                    repr(float(sched.ir[i])),
                    repr(float(sched.s_remaining[i])),
                    repr(float(ir0 - sched.ir[i])),
                    repr(float(cond[i])),
                ]
            )


def write_mos_curves(params: MosParams, codec: CodecProfile | None, p_losses, p_lacks, path) -> None:
    """CSV of the MOS family: one curve per covert-loss level."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p_loss", "p_lack", "mos"])
        for p_lack in p_lacks:
            for p_loss in p_losses:
                writer.writerow([repr(float(p_loss)), repr(float(p_lack)), repr(mos(params, float(p_loss), float(p_lack)))])
