"""Electrical description of a single-PCC microgrid and its admittance algebra.

N inverters, each an LC filter behind a branch (resistance ``r_k`` plus an
optional series inductance), feed one common load at the point of common
coupling (PCC).  All voltages are sinusoid amplitudes (peak values).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from .clock import ClockModel
from .droop import DroopParams, FullDroopParams

if TYPE_CHECKING:
    from .controller import ControllerSet

OMEGA0 = 2.0 * math.pi * 60.0
LOAD_KINDS = ("resistive", "series-rl", "complex-at-w0")


class DomainError(ValueError):
    """A computation was asked for outside the domain where it is defined."""


@dataclass(frozen=True)
class InverterElectrical:
    filter_inductance: float = 0.063e-3
    filter_esr: float = 0.014
    filter_capacitance: float = 1e-6
    virtual_resistance: float = 0.2
    branch_resistance: float = 0.2
    rated_apparent_power: float = 600.0
    dc_link_voltage: float = 250.0
    branch_inductance: float = 0.0

    def __post_init__(self):
        for name in ("filter_inductance", "filter_capacitance", "branch_resistance",
                     "rated_apparent_power", "dc_link_voltage"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        for name in ("virtual_resistance", "filter_esr", "branch_inductance"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be non-negative and finite, got {v}")

    def branch_impedance(self, omega: float = OMEGA0) -> complex:
        return complex(self.branch_resistance, omega * self.branch_inductance)

    def rated_current(self, nominal_voltage: float) -> float:
        """Rated current amplitude for a nominal voltage amplitude."""
        return 2.0 * self.rated_apparent_power / nominal_voltage


@dataclass(frozen=True)
class LoadModel:
    """Common load.

    ``kind`` is ``resistive``, ``series-rl`` (R in series with L) or
    ``complex-at-w0`` (a fixed impedance ``resistance + j reactance`` that is
    only meaningful at ``reference_frequency``).
    """

    kind: str = "resistive"
    resistance: float = 24.0
    inductance: float = 0.0
    reactance: float = 0.0
    reference_frequency: float = OMEGA0

    def __post_init__(self):
        kind = self.kind.lower().replace("_", "-")
        if kind in ("series-r-l", "rl"):
            kind = "series-rl"
        if kind == "complex-at-ω0":
            kind = "complex-at-w0"
        if kind not in LOAD_KINDS:
            raise ValueError(f"unknown load kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not (self.resistance > 0 and math.isfinite(self.resistance)):
            raise ValueError("load resistance must be positive")
        if self.inductance < 0:
            raise ValueError("load inductance must be non-negative")
        if kind != "series-rl" and self.inductance != 0:
            raise ValueError("inductance only applies to a series-rl load")
        if kind != "complex-at-w0" and self.reactance != 0:
            raise ValueError("reactance only applies to a complex-at-w0 load")

    @classmethod
    def from_power(cls, apparent_power: float, power_factor: float, rms_voltage: float,
                   omega0: float = OMEGA0) -> "LoadModel":
        """Series R-L load drawing `apparent_power` at `rms_voltage` (lagging pf)."""
        if not 0 < power_factor <= 1:
            raise ValueError("power factor must lie in (0, 1]")
        z = rms_voltage ** 2 / apparent_power
        x = z * math.sqrt(1.0 - power_factor ** 2)
        if x == 0:
            return cls("resistive", z * power_factor)
        return cls("series-rl", z * power_factor, x / omega0, reference_frequency=omega0)

    @property
    def impedance(self) -> complex:
        return load_impedance_at(self, self.reference_frequency)

    @property
    def power_factor_angle(self) -> float:
        return math.atan2(self.impedance.imag, self.impedance.real)

    def as_series_rl(self) -> "LoadModel":
        """Equivalent series R-L circuit at the reference frequency."""
        if self.kind != "complex-at-w0":
            return self
        if self.reactance < 0:
            raise DomainError("capacitive fixed impedance has no series R-L equivalent")
        if self.reactance == 0:
            return LoadModel("resistive", self.resistance)
        return LoadModel("series-rl", self.resistance, self.reactance / self.reference_frequency,
                         reference_frequency=self.reference_frequency)


def load_impedance_at(load: LoadModel, angular_frequency: float) -> complex:
    if not angular_frequency > 0:
        raise DomainError("angular frequency must be positive")
    if load.kind == "resistive":
        return complex(load.resistance, 0.0)
    if load.kind == "series-rl":
        return complex(load.resistance, angular_frequency * load.inductance)
    if not math.isclose(angular_frequency, load.reference_frequency, rel_tol=1e-12):
        raise DomainError("fixed-impedance load is only defined at its reference frequency")
    return complex(load.resistance, load.reactance)


@dataclass(frozen=True)
class MicrogridConfig:
    inverters: tuple
    load: LoadModel
    nominal_voltage_magnitude: float
    nominal_frequency: float = OMEGA0
    droop: tuple = ()
    clocks: tuple = ()
    controllers: Optional["ControllerSet"] = None

    def __post_init__(self):
        object.__setattr__(self, "inverters", tuple(self.inverters))
        n = len(self.inverters)
        if n < 1:
            raise ValueError("at least one inverter is required")
        if not self.droop:
            object.__setattr__(self, "droop", tuple(
                DroopParams(0.0, 0.0, self.nominal_voltage_magnitude) for _ in range(n)))
        if not self.clocks:
            object.__setattr__(self, "clocks", tuple(ClockModel() for _ in range(n)))
        object.__setattr__(self, "droop", tuple(self.droop))
        object.__setattr__(self, "clocks", tuple(self.clocks))
        if len(self.droop) != n or len(self.clocks) != n:
            raise ValueError("inverters, droop and clocks must have equal length")
        if not self.nominal_frequency > 0:
            raise ValueError("nominal_frequency must be positive")
        if not self.nominal_voltage_magnitude > 0:
            raise ValueError("nominal_voltage_magnitude must be positive")
        for d in self.droop:
            if not math.isclose(d.nominal_voltage, self.nominal_voltage_magnitude, rel_tol=1e-12):
                raise ValueError("droop nominal voltage must equal the config nominal voltage")

    @property
    def n(self) -> int:
        return len(self.inverters)

    @property
    def full_droop(self) -> bool:
        """True when every inverter runs the P-V / Q-f baseline."""
        return all(isinstance(d, FullDroopParams) for d in self.droop)

    def controller_set(self):
        from .controller import simulation_controllers
        return self.controllers if self.controllers is not None else simulation_controllers()

    def controller_for(self, k: int):
        return replace(self.controller_set(), virtual_resistance=self.inverters[k].virtual_resistance)

    def with_(self, **changes) -> "MicrogridConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class AdmittanceModel:
    lambda_v: np.ndarray
    h_inv: complex
    alpha: complex
    nu: complex
    xi: np.ndarray
    load_impedance: complex
    angular_frequency: float
    branch_admittance: np.ndarray = field(repr=False, default=None)

    @property
    def Lambda_v(self) -> np.ndarray:
        return np.diag(self.lambda_v)

    @property
    def lambda_sum(self) -> complex:
        return complex(np.sum(self.lambda_v))

    def output_admittance_matrix(self) -> np.ndarray:
        """(Y^-1 + R_v I)^-1 = Lambda_v - alpha lambda_v lambda_v^T."""
        return self.Lambda_v - self.alpha * np.outer(self.lambda_v, self.lambda_v)

    def network_admittance_matrix(self) -> np.ndarray:
        """Y = Lambda - h lambda lambda^T, built from the physical branches only."""
        lam = self.branch_admittance
        return np.diag(lam) - np.outer(lam, lam) / self.h_inv


def build_admittance(config: MicrogridConfig, angular_frequency: float | None = None,
                     include_branch_inductance: bool = False) -> AdmittanceModel:
    """Admittance quantities of the star network seen from the inverter references.

    By default branches are purely resistive (``r_k + R_vk``), which is the
    setting of the closed-form theory; `include_branch_inductance` adds the
    line reactances.
    """
    w = config.nominal_frequency if angular_frequency is None else angular_frequency
    zl = load_impedance_at(config.load, w)
    if zl == 0:
        raise DomainError("load impedance is zero")
    zb = np.array([inv.branch_impedance(w) if include_branch_inductance
                   else complex(inv.branch_resistance) for inv in config.inverters])
    rv = np.array([inv.virtual_resistance for inv in config.inverters])
    lam = 1.0 / (zb + rv)
    lam_b = 1.0 / zb
    total = complex(lam.sum())
    if total == 0:
        raise DomainError("zero total source admittance")
    alpha = 1.0 / (1.0 / zl + total)
    nu = alpha * total
    xi = lam / total
    if np.all(np.imag(zb) == 0) and zl.imag == 0:
        lam, lam_b, xi = lam.real.astype(complex), lam_b.real.astype(complex), xi.real.astype(complex)
        alpha, nu = complex(alpha.real), complex(nu.real)
    return AdmittanceModel(lam, complex(1.0 / zl + lam_b.sum()), complex(alpha), complex(nu), xi,
                           zl, w, lam_b)
