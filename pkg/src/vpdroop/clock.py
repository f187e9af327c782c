"""Common-clock model for the isochronous architecture.

Every inverter derives its reference phase from a shared timing signal.  A
clock can lose the shared signal (holdover on its local oscillator, which may
drift), regain it (the accumulated error is slewed out over one fundamental
cycle), or be given a deliberate phase offset.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

EVENT_KINDS = ("loss", "restore", "set_offset")


@dataclass(frozen=True)
class ClockModel:
    """Phase source of one inverter.

    Parameters
    ----------
    phase_offset : float
        Lead of this clock relative to the common frame (rad).
    drift_rate : float
        Relative frequency error of the local oscillator, used only while in
        holdover.
    holdover : bool
        True while the shared timing signal is unavailable.
    holdover_start : float
        Time at which holdover began (s).
    holdover_phase : float
        Unwrapped phase at `holdover_start` (rad).
    slew_start, slew_delta :
        A pending correction: ``slew_delta`` (rad) is removed linearly over
        one fundamental cycle starting at ``slew_start``.
    """

    phase_offset: float = 0.0
    drift_rate: float = 0.0
    holdover: bool = False
    holdover_start: float = 0.0
    holdover_phase: float = 0.0
    slew_start: float = 0.0
    slew_delta: float = 0.0

    def __post_init__(self):
        if not abs(self.phase_offset) < math.pi:
            raise ValueError("phase_offset must lie in (-pi, pi)")
        if self.drift_rate < 0:
            raise ValueError("drift_rate must be non-negative")


@dataclass(frozen=True)
class ClockEvent:
    time: float
    inverter_index: int
    kind: str
    value: float = 0.0  # new offset (rad) for set_offset

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("event time must be non-negative")
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown clock event kind {self.kind!r}")


def _slew(clock: ClockModel, t: float, omega0: float) -> float:
    if clock.slew_delta == 0.0 or t < clock.slew_start:
        return 0.0
    frac = (t - clock.slew_start) * omega0 / TWO_PI
    return clock.slew_delta * max(0.0, 1.0 - frac)


def unwrapped_phase(clock: ClockModel, t: float, omega0: float) -> float:
    """Phase without wrapping; see `phase_at`."""
    if clock.holdover:
        dt = t - clock.holdover_start
        return clock.holdover_phase + omega0 * (1.0 + clock.drift_rate) * dt
    return omega0 * t + clock.phase_offset + _slew(clock, t, omega0)


def phase_at(clock: ClockModel, t: float, omega0: float) -> float:
    """Reference phase of `clock` at time `t`, wrapped to [0, 2*pi)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return float(np.mod(unwrapped_phase(clock, t, omega0), TWO_PI))


def phases_at(clocks, t: float, omega0: float) -> np.ndarray:
    """Unwrapped phases of several clocks (used inside the simulator)."""
    return np.array([unwrapped_phase(c, t, omega0) for c in clocks])


def apply_event(clocks: list[ClockModel], event: ClockEvent, omega0: float) -> list[ClockModel]:
    """Return a new clock list with `event` applied.

    Every transition keeps the phase continuous: a restore or an offset change
    is slewed over one fundamental cycle instead of being applied as a jump.
    """
    if not 0 <= event.inverter_index < len(clocks):
        raise IndexError(f"clock index {event.inverter_index} out of range")
    out = list(clocks)
    c = clocks[event.inverter_index]
    t = event.time
    now = unwrapped_phase(c, t, omega0)

    if event.kind == "loss":
        if c.holdover:
            return out
        c = replace(c, holdover=True, holdover_start=t, holdover_phase=now)
    elif event.kind == "restore":
        if not c.holdover:
            log.warning("clock %d: restore without prior loss ignored", event.inverter_index)
            return out
        target = omega0 * t + c.phase_offset
        c = replace(c, holdover=False, slew_start=t, slew_delta=now - target)
    else:
        if c.holdover:
            # offset is taken into account when the clock is restored
            c = replace(c, phase_offset=event.value)
        else:
            target = omega0 * t + event.value
            c = replace(c, phase_offset=event.value, slew_start=t, slew_delta=now - target)
    out[event.inverter_index] = c
    return out
