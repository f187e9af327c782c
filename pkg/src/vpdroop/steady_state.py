"""Sinusoidal steady state of the VP-D network.

Under the inner-loop identity ``v_k = v_ref,k - R_vk i_k`` (which holds at
the fundamental when the voltage controller carries the resonant internal
model) every inverter looks like a source ``E_k`` behind ``r_k + R_vk``.  The
closed forms below follow from a Woodbury reduction of that star network; a
dense nodal solve is kept as an independent oracle.

Phasor convention: ``x(t) = Im(X exp(j w0 t)) = |X| sin(w0 t + angle X)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .droop import CLAMP_HIGH, CLAMP_LOW
from .net_model import AdmittanceModel, DomainError, MicrogridConfig, build_admittance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhasorSolution:
    references: np.ndarray          # complex E_k e^{j theta_k}
    current_amplitude: np.ndarray
    current_phase: np.ndarray
    voltage_amplitude: np.ndarray
    voltage_phase: np.ndarray
    active_power: np.ndarray
    reactive_power: np.ndarray
    pcc_voltage: complex
    load_current: complex
    intermediate: AdmittanceModel
    beta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray

    @property
    def n(self) -> int:
        return len(self.current_amplitude)

    @property
    def currents(self) -> np.ndarray:
        return self.current_amplitude * np.exp(1j * self.current_phase)

    @property
    def voltages(self) -> np.ndarray:
        return self.voltage_amplitude * np.exp(1j * self.voltage_phase)

    @property
    def complex_power(self) -> np.ndarray:
        return self.active_power + 1j * self.reactive_power

    def kcl_residual(self) -> float:
        i = self.currents
        return float(abs(i.sum() - self.load_current) / max(np.abs(i).sum(), 1e-300))

    def as_records(self) -> list[dict]:
        return [dict(inverter=k + 1, E=abs(self.references[k]), I=self.current_amplitude[k],
                     phi=self.current_phase[k], V=self.voltage_amplitude[k],
                     psi=self.voltage_phase[k], P=self.active_power[k], Q=self.reactive_power[k],
                     pcc_re=self.pcc_voltage.real, pcc_im=self.pcc_voltage.imag)
                for k in range(self.n)]


def _references(E, config: MicrogridConfig) -> np.ndarray:
    E = np.atleast_1d(np.asarray(E))
    if E.shape != (config.n,):
        raise ValueError(f"expected {config.n} reference magnitudes, got shape {E.shape}")
    if np.iscomplexobj(E):
        return E.astype(complex)
    if np.any(E <= 0):
        raise DomainError("reference magnitudes must be positive")
    theta = np.array([c.phase_offset for c in config.clocks])
    return E * np.exp(1j * theta)


def _assemble(Eref, I, vpcc, config, adm, il) -> PhasorSolution:
    rv = np.array([inv.virtual_resistance for inv in config.inverters])
    V = Eref - rv * I
    S = 0.5 * V * np.conj(I)
    lam_e = complex(adm.lambda_v @ Eref)
    if lam_e == 0:
        raise DomainError("zero net source excitation")
    beta = Eref / lam_e
    gamma = np.abs(beta - adm.alpha)
    estar = config.nominal_voltage_magnitude
    delta = (np.abs(Eref) - estar) / estar
    return PhasorSolution(Eref, np.abs(I), np.angle(I), np.abs(V), np.angle(V),
                          S.real, S.imag, complex(vpcc), complex(il), adm, beta, gamma, delta)


def solve_closed_form(E, config: MicrogridConfig) -> PhasorSolution:
    """Closed-form phasors for resistive branches ``r_k + R_vk``.

    The current amplitude and phase come from ``beta_k``, ``gamma_k`` and
    ``alpha``; the capacitor voltage uses the general (cos/sin phi_k) form of
    ``V_k = E_k - R_vk I_k``.
    """
    Eref = _references(E, config)
    adm = build_admittance(config)
    lam = adm.lambda_v
    lam_e = complex(lam @ Eref)
    if lam_e == 0:
        raise DomainError("zero net source excitation")
    alpha = adm.alpha
    beta = Eref / lam_e
    amag, aang = abs(alpha), math.atan2(alpha.imag, alpha.real)
    # gamma_k and phi_k written out for real beta; the complex form covers
    # clock offsets (beta_k complex) with the same algebra
    re = beta.real - amag * math.cos(aang)
    im = beta.imag - amag * math.sin(aang)
    gamma = np.hypot(re, im)
    I_amp = np.abs(lam) * abs(lam_e) * gamma
    phi = np.arctan2(im, re) + np.angle(lam_e) + np.angle(lam)
    I = I_amp * np.exp(1j * phi)

    rv = np.array([inv.virtual_resistance for inv in config.inverters])
    Emag, Eang = np.abs(Eref), np.angle(Eref)
    rel = phi - Eang
    a = Emag - rv * I_amp * np.cos(rel)
    b = -rv * I_amp * np.sin(rel)
    V = np.hypot(a, b) * np.exp(1j * (np.arctan2(b, a) + Eang))
    vpcc = alpha * lam_e
    S = 0.5 * V * np.conj(I)
    estar = config.nominal_voltage_magnitude
    return PhasorSolution(Eref, I_amp, np.angle(I), np.abs(V), np.angle(V), S.real, S.imag,
                          complex(vpcc), complex(vpcc / adm.load_impedance), adm, beta, gamma,
                          (Emag - estar) / estar)


def theorem_statement_voltage(E_k: float, R_vk: float, I_k: float) -> float:
    """``sqrt((E - R_v I)^2 + (R_v I)^2)``, the capacitor-voltage magnitude as
    stated alongside the closed forms.

    It disagrees with ``|E_k - R_vk I_k e^{j phi_k}|`` even for a resistive
    load; kept only so the discrepancy can be reported.
    """
    return math.hypot(E_k - R_vk * I_k, R_vk * I_k)


def solve_brute_force(E, config: MicrogridConfig, include_branch_inductance: bool = True
                      ) -> PhasorSolution:
    """Dense nodal solve of the (N+1)-unknown complex system.

    Unknowns are the branch currents and the PCC voltage.  Branch impedances
    may be complex (line inductance is included by default).
    """
    Eref = _references(E, config)
    n = config.n
    adm = build_admittance(config, include_branch_inductance=include_branch_inductance)
    w = config.nominal_frequency
    zb = np.array([(inv.branch_impedance(w) if include_branch_inductance
                    else complex(inv.branch_resistance)) + inv.virtual_resistance
                   for inv in config.inverters])
    A = np.zeros((n + 1, n + 1), complex)
    rhs = np.zeros(n + 1, complex)
    A[np.arange(n), np.arange(n)] = zb
    A[:n, n] = 1.0
    rhs[:n] = Eref
    A[n, :n] = 1.0
    A[n, n] = -1.0 / adm.load_impedance
    try:
        x = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise DomainError(f"singular network: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise DomainError("singular network")
    I, vpcc = x[:n], x[n]
    return _assemble(Eref, I, vpcc, config, adm, vpcc / adm.load_impedance)


class DegenerateGeometryError(ArithmeticError):
    pass


def _relative_coords(solution: PhasorSolution, k: int, j: int):
    adm = solution.intermediate
    lam1 = adm.lambda_sum
    delta = solution.delta
    xi = adm.xi
    denom = 1.0 + complex(xi @ delta)
    bk = (1.0 + delta[k]) / denom
    bj = (1.0 + delta[j]) / denom
    return adm.nu, bk, bj, lam1


def phase_difference_exact(solution: PhasorSolution, k: int, j: int) -> float:
    """phi_k - phi_j from the closed-form tan expression in nu, delta and xi.

    The tangent's numerator and denominator are kept separately so the
    quadrant is resolved like atan2 of the phasor ratio ``I_k / I_j``.
    """
    n = solution.n
    if not (0 <= k < n and 0 <= j < n):
        raise IndexError("inverter index out of range")
    nu, bk, bj, _ = _relative_coords(solution, k, j)
    num = nu.imag * (bk - bj).real
    den = (nu.real - bk.real) * (nu.real - bj.real) + nu.imag ** 2
    if abs(den) < 1e-14 and abs(num) < 1e-14:
        raise DegenerateGeometryError("phase difference undefined (zero currents)")
    if abs(den) < 1e-14:
        raise DegenerateGeometryError("denominator of the phase-difference formula vanishes")
    principal = math.atan(num / den)
    # lift the principal value to the branch that atan2 would pick
    return math.atan2(num, den) if den < 0 else principal


@dataclass(frozen=True)
class ApproxPhaseDifference:
    value: float
    warning: str | None = None

    def __float__(self):
        return self.value


def load_coupling(config: MicrogridConfig) -> complex:
    """Z_L lambda_v^T 1, the size of the load relative to the source branches."""
    adm = build_admittance(config)
    return adm.load_impedance * adm.lambda_sum


def phase_difference_approx(config: MicrogridConfig, delta_k: float, delta_j: float
                            ) -> ApproxPhaseDifference:
    """Small-deviation, heavy-coupling estimate of phi_k - phi_j.

    ``tan(phi_k - phi_j) ~ sum_m(|Z_L| sin theta_L / (r_m + R_vm)) (delta_k - delta_j)``
    """
    adm = build_admittance(config)
    zl = adm.load_impedance
    coupling = abs(zl * adm.lambda_sum)
    warning = None
    if coupling <= 10:
        warning = f"|Z_L lambda^T 1| = {coupling:.3g} <= 10: estimate not applicable"
    elif coupling < 50:
        warning = f"|Z_L lambda^T 1| = {coupling:.3g} < 50: estimate may be inaccurate"
    if warning:
        log.warning(warning)
    t = adm.lambda_sum.real * abs(zl) * math.sin(config.load.power_factor_angle) * (delta_k - delta_j)
    return ApproxPhaseDifference(math.atan(t), warning)


def delta_budget(config: MicrogridConfig, epsilon: float, form: str = "printed") -> float:
    """Admissible |delta_k - delta_j| for a target phase difference `epsilon`.

    ``form="printed"`` returns ``epsilon sum_m(1/(r_m+R_vm)) / (|Z_L| sin theta_L)``
    as stated in the design remark.  ``form="corollary"`` inverts the
    small-deviation estimate instead, ``epsilon / (|Z_L| sin theta_L sum_m 1/(r_m+R_vm))``.
    """
    theta = config.load.power_factor_angle
    if theta <= 0:
        if theta == 0:
            return math.inf
        raise DomainError("delta budget needs an inductive load (theta_L > 0)")
    adm = build_admittance(config)
    lam1 = adm.lambda_sum.real
    zs = abs(adm.load_impedance) * math.sin(theta)
    if form == "printed":
        return epsilon * lam1 / zs
    if form == "corollary":
        return epsilon / (zs * lam1)
    raise ValueError(f"unknown form {form!r}")


def circulating_current(solution: PhasorSolution, k: int, j: int) -> complex:
    """Half the phasor difference of two branch currents."""
    i = solution.currents
    return complex((i[k] - i[j]) / 2.0)


class EquilibriumError(RuntimeError):
    def __init__(self, message, last_iterate, residual_history):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_history = residual_history


@dataclass(frozen=True)
class DroopEquilibrium:
    voltage_magnitudes: np.ndarray
    solution: PhasorSolution
    iterations: int
    residual: float
    residual_history: tuple = field(default=(), repr=False)


def droop_map(E: np.ndarray, config: MicrogridConfig) -> tuple[np.ndarray, PhasorSolution]:
    """One evaluation of E -> E* - n (P(E) - P*), clamped."""
    sol = solve_brute_force(E, config)
    estar = config.nominal_voltage_magnitude
    n = np.array([d.droop_coefficient for d in config.droop])
    pstar = np.array([d.active_power_reference for d in config.droop])
    e_new = np.clip(estar - n * (sol.active_power - pstar), CLAMP_LOW * estar, CLAMP_HIGH * estar)
    return e_new, sol


def droop_equilibrium(config: MicrogridConfig, damping: float = 0.5, tol: float = 1e-10,
                      max_iter: int = 1000, initial=None) -> DroopEquilibrium:
    """Self-consistent reference magnitudes under the VP-D law (damped Picard)."""
    estar = config.nominal_voltage_magnitude
    E = np.full(config.n, estar) if initial is None else np.array(initial, float)
    history = []
    for it in range(1, max_iter + 1):
        e_new, sol = droop_map(E, config)
        res = float(np.max(np.abs(e_new - E)))
        history.append(res)
        if not np.isfinite(res):
            break
        if res < tol:
            return DroopEquilibrium(E.copy(), sol, it, res, tuple(history))
        E = (1.0 - damping) * E + damping * e_new
    # strong droop gains make the damped iteration oscillate; fall back to a
    # quasi-Newton solve of E = map(E) from the nominal voltage
    start = np.full(config.n, estar) if initial is None else np.array(initial, float)
    fixed = optimize.root(lambda e: droop_map(e, config)[0] - e, start, method="hybr", tol=tol * 1e-2)
    if fixed.success:
        e_new, sol = droop_map(fixed.x, config)
        res = float(np.max(np.abs(e_new - fixed.x)))
        if res < tol:
            history.append(res)
            return DroopEquilibrium(fixed.x.copy(), sol, max_iter + int(fixed.nfev), res, tuple(history))
    raise EquilibriumError(f"droop equilibrium did not converge in {max_iter} iterations "
                           f"(last residual {history[-1]:.3g} V)", E, history)


def sharing_ratios(solution: PhasorSolution, k: int = 0, j: int = 1) -> tuple[float, float]:
    """(P_k/P_j, Q_k/Q_j)."""
    p, q = solution.active_power, solution.reactive_power
    return float(p[k] / p[j]), float(q[k] / q[j])
