"""Outer droop laws.

The voltage/active-power droop (VP-D) sets only the reference magnitude,

    E_k = E* - n_k (P_k - P*_k),

while the phase comes from the common clock.  A conventional full droop
(P-V plus Q-f with an integrated phase) is kept as a comparison baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# Nominal inner voltage-loop bandwidth used to sanity-check the power filter.
VOLTAGE_LOOP_BANDWIDTH = TWO_PI * 600.0

CLAMP_LOW, CLAMP_HIGH = 0.5, 1.5


@dataclass(frozen=True)
class DroopParams:
    """VP-D gains of one inverter.

    droop_coefficient is in V/W, active_power_reference in W, nominal_voltage
    is the amplitude E* in V, and power_filter_bandwidth is in rad/s.
    """

    droop_coefficient: float
    active_power_reference: float
    nominal_voltage: float
    power_filter_bandwidth: float = TWO_PI * 1.0

    def __post_init__(self):
        if self.droop_coefficient < 0:
            raise ValueError("droop_coefficient must be non-negative")
        if self.nominal_voltage <= 0:
            raise ValueError("nominal_voltage must be positive")
        wp = self.power_filter_bandwidth
        if not 0 < wp < VOLTAGE_LOOP_BANDWIDTH / 50:
            raise ValueError(
                f"power_filter_bandwidth {wp:g} rad/s must be positive and "
                f"below {VOLTAGE_LOOP_BANDWIDTH / 50:.1f} rad/s")


@dataclass(frozen=True)
class FullDroopParams(DroopParams):
    """P-V / Q-f baseline gains.  q_droop_coefficient is in rad/s per var."""

    q_droop_coefficient: float = 0.0
    reactive_power_reference: float = 0.0
    nominal_frequency: float = TWO_PI * 60.0

    def __post_init__(self):
        super().__post_init__()
        if self.q_droop_coefficient <= 0:
            raise ValueError("q_droop_coefficient must be positive")

    @staticmethod
    def q_gain_for(rated_apparent_power: float, shift_hz: float = 0.5) -> float:
        """Q-f gain that moves the frequency by `shift_hz` at rated reactive power."""
        return TWO_PI * shift_hz / rated_apparent_power


@dataclass(frozen=True)
class DroopState:
    filtered_active_power: float
    commanded_magnitude: float


def lpf_gain(bandwidth: float, dt: float) -> float:
    """Exact exponential-hold coefficient of a first-order low-pass filter."""
    return -math.expm1(-bandwidth * dt)


def power_filter_step(state: DroopState, instantaneous_power: float, dt: float,
                      params: DroopParams) -> DroopState:
    """Advance the active-power low-pass filter by one step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if params.power_filter_bandwidth * dt >= 0.1:
        raise ValueError("dt too large for the power filter (need dt*w_P < 0.1)")
    a = lpf_gain(params.power_filter_bandwidth, dt)
    p = state.filtered_active_power + a * (instantaneous_power - state.filtered_active_power)
    return DroopState(p, state.commanded_magnitude)


def droop_magnitude(nominal, coefficient, power, reference, clamp=True):
    """Vectorised VP-D law; works on scalars and numpy arrays."""
    e = nominal - coefficient * (power - reference)
    if clamp:
        e = np.clip(e, CLAMP_LOW * nominal, CLAMP_HIGH * nominal)
    return e


def vpd_voltage(state: DroopState, params: DroopParams, clamp: bool = True) -> float:
    """Commanded amplitude E_k for the filtered power held in `state`."""
    return float(droop_magnitude(params.nominal_voltage, params.droop_coefficient,
                                 state.filtered_active_power,
                                 params.active_power_reference, clamp))


def reference_voltage(state: DroopState, clock_phase: float) -> float:
    return state.commanded_magnitude * math.sin(clock_phase)


@dataclass(frozen=True)
class FullDroopOutput:
    E_k: float
    frequency: float
    accumulated_phase: float


def full_droop_update(phase: float, P: float, Q: float, dt: float,
                      params: FullDroopParams) -> FullDroopOutput:
    """One step of the P-V / Q-f baseline.

    The frequency ``w* + m (Q* - Q)`` is integrated into the phase; this
    integrator is what distinguishes the baseline from the clock-driven VP-D.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = float(droop_magnitude(params.nominal_voltage, params.droop_coefficient, P,
                              params.active_power_reference))
    w = params.nominal_frequency + params.q_droop_coefficient * (
        params.reactive_power_reference - Q)
    return FullDroopOutput(e, w, float(np.mod(phase + w * dt, TWO_PI)))
