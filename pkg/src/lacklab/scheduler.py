"""Time-dependent insertion-rate control for the covert channel.

The controller divides the remaining hidden-data budget by the expected total
call duration given the elapsed time, so the rate decays as the call ages and
never needs the call to be stretched.  The budget itself evolves by
integrating the rate, which couples the two; stepping is explicit trapezoidal
(Heun) on a fixed sub-step grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from . import quality
from .durations import DurationModel, approx_conditional_mean_min
from .quality import CodecProfile, MosParams

__all__ = [
    "MODES",
    "SchedulerState",
    "RateSchedule",
    "initial_rate",
    "expected_duration_given_elapsed",
    "rate_at",
    "advance",
    "build_schedule",
    "rate_reduction",
    "selection_probability",
    "select_for_embedding",
    "cap_from_quality",
    "with_cap",
]

#: Supported denominators for the rate rule: the model's conditional mean,
#: the cv-based closed-form stand-in, or conditional mean with the quality
#: cap refreshed from online receiver reports.
MODES = ("distribution", "approx-cv", "online")


@dataclass(frozen=True)
class SchedulerState:
    """Immutable controller state; advance() returns updated copies."""

    s_total: float
    s_remaining: float
    elapsed: float
    model: DurationModel
    mode: str = "distribution"
    ir_cap: float = math.inf
    step_s: float = 0.02

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 <= self.s_remaining <= self.s_total:
            raise ValueError("need 0 <= s_remaining <= s_total")
        if self.elapsed < 0:
            raise ValueError("elapsed must be >= 0")
        if self.ir_cap < 0:
            raise ValueError("ir_cap must be >= 0")
        if self.step_s <= 0:
            raise ValueError("step_s must be > 0")


def initial_rate(s_total: float, model: DurationModel) -> float:
    """Rate at call start: the whole budget spread over the mean duration."""
    if s_total < 0:
        raise ValueError("s_total must be >= 0")
    return s_total / model.moments().mean


def expected_duration_given_elapsed(state: SchedulerState, t: float | None = None):
    """The denominator of the rate rule at elapsed time t (seconds)."""
    if t is None:
        t = state.elapsed
    if state.mode == "approx-cv":
        cv = state.model.moments().cv
        t_arr = np.asarray(t, dtype=float)
        out = 60.0 * (1.32 * cv + (t_arr / 60.0) * math.sqrt(cv) + 0.59)
        return float(out) if out.ndim == 0 else out
    return state.model.conditional_mean(t)


def rate_at(state: SchedulerState) -> float:
    """Current insertion rate: min(cap, s_remaining / E(D | D > elapsed))."""
    if state.s_remaining <= 0:
        return 0.0
    expected = expected_duration_given_elapsed(state)
    return min(state.ir_cap, state.s_remaining / expected)


def _heun_step(s_rem: float, e0: float, e1: float, h: float, cap: float) -> float:
    """One trapezoidal predictor-corrector step of the budget integral."""
    ir0 = min(cap, s_rem / e0) if s_rem > 0 else 0.0
    predicted = max(0.0, s_rem - h * ir0)
    ir1 = min(cap, predicted / e1) if predicted > 0 else 0.0
    spent = min(s_rem, h * (ir0 + ir1) / 2.0)
    return s_rem - spent


def advance(state: SchedulerState, dt: float) -> SchedulerState:
    """Step the state forward by dt seconds, draining the budget by the
    integral of the rate over [elapsed, elapsed + dt]."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    t = state.elapsed
    end = state.elapsed + dt
    s_rem = state.s_remaining
    while t < end - 1e-12:
        h = min(state.step_s, end - t)
        e0 = expected_duration_given_elapsed(state, t)
        e1 = expected_duration_given_elapsed(state, t + h)
        s_rem = _heun_step(s_rem, float(e0), float(e1), h, state.ir_cap)
        t += h
    return replace(state, s_remaining=s_rem, elapsed=end)


@dataclass(frozen=True)
class RateSchedule:
    """Sampled rate trajectory: times, rates, and remaining budget."""

    t: np.ndarray
    ir: np.ndarray
    s_remaining: np.ndarray

    def __post_init__(self) -> None:
        if not (len(self.t) == len(self.ir) == len(self.s_remaining)):
            raise ValueError("schedule arrays must have equal length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("schedule times must be strictly increasing")

    def ir_at(self, t: float) -> float:
        if not self.t[0] <= t <= self.t[-1]:
            raise ValueError(f"t={t} outside schedule range [{self.t[0]}, {self.t[-1]}]")
        return float(np.interp(t, self.t, self.ir))


def build_schedule(
    model: DurationModel,
    s_total: float,
    *,
    t_end: float,
    step_s: float = 0.02,
    mode: str = "distribution",
    ir_cap: float = math.inf,
) -> RateSchedule:
    """Sample the rate trajectory on a uniform grid of step_s over [0, t_end].

    Uses the same trapezoidal stepping as advance(), with the conditional
    means evaluated in one vectorized pass.
    """
    state = SchedulerState(
        s_total=s_total, s_remaining=s_total, elapsed=0.0,
        model=model, mode=mode, ir_cap=ir_cap, step_s=step_s,
    )
    n = int(round(t_end / step_s))
    ts = np.arange(n + 1) * step_s
    expected = np.asarray(expected_duration_given_elapsed(state, ts), dtype=float)
    s_rem = np.empty(n + 1)
    ir = np.empty(n + 1)
    s = float(s_total)
    for i in range(n + 1):
        s_rem[i] = s
        ir[i] = min(ir_cap, s / expected[i]) if s > 0 else 0.0
        if i < n:
            s = _heun_step(s, expected[i], expected[i + 1], step_s, ir_cap)
    return RateSchedule(t=ts, ir=ir, s_remaining=s_rem)


def rate_reduction(schedule: RateSchedule, t: float) -> float:
    """How far the rate has come down from its initial value at time t."""
    return float(schedule.ir[0]) - schedule.ir_at(t)


def selection_probability(state: SchedulerState, codec: CodecProfile) -> float:
    """Per-packet embedding probability: the covert loss fraction at this instant."""
    if state.s_remaining < 1.0:
        return 0.0
    p = quality.ir_to_p_lack(codec, rate_at(state))
    return min(max(p, 0.0), 1.0)


def select_for_embedding(state: SchedulerState, codec: CodecProfile, rng: np.random.Generator) -> bool:
    """Bernoulli draw deciding whether the current packet carries hidden data."""
    p = selection_probability(state, codec)
    if p <= 0.0:
        return False
    return bool(rng.random() < p)


def cap_from_quality(
    codec: CodecProfile,
    mos_params: MosParams,
    p_network: float,
    mos_floor: float,
    plc: bool,
) -> float:
    """Rate cap binding the codec loss budget and the MOS floor.

    A mos_floor at or below the model floor gamma expresses "no MOS
    constraint"; the codec budget alone then binds.  Raises
    QualityInfeasibleError when the floor is unreachable even without
    covert loss.
    """
    budget = quality.loss_budget(codec, plc, p_network)
    if mos_floor > mos_params.gamma:
        budget = min(budget, quality.max_p_lack(mos_params, p_network, mos_floor))
    return quality.p_lack_to_ir(codec, budget)


def with_cap(state: SchedulerState, ir_cap: float) -> SchedulerState:
    """Copy of the state with a new rate cap (online quality feedback)."""
    return replace(state, ir_cap=ir_cap)
