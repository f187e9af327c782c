"""Inner voltage/current controllers.

Transfer functions are stored as expanded real polynomials (descending powers
of s).  The closed loop follows the cascaded structure used in the hardware:

    e      = v_ref - R_v i - v
    i_ref  = K_vol(e) + i                 (line-current feed-forward)
    v_inv  = K_cur(i_ref - i_L) + v       (capacitor-voltage feed-forward)

With ``K_vol = n_v/d_v`` and ``K_cur = n_c/d_c`` this gives

    D(s) = C s d_v [d_c (L s + R) + n_c] + n_c n_v
    G    = n_c n_v / D
    Z    = G R_v + (L s + R) d_c d_v / D

so that ``v = G v_ref - Z i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, signal

from .net_model import InverterElectrical

OMEGA0 = 2.0 * math.pi * 60.0

# Factored controllers as printed for the prototype.
PRINTED_KVOL_GAIN = 1.0 / 1492.75
PRINTED_KVOL_ZEROS = (0.0, -3139.0, -1172.0)
PRINTED_KVOL_ZERO_QUADRATIC = (1.0, 3328.0, 8.895e6)
PRINTED_KVOL_POLES = (-5390.0, -1406.0)
PRINTED_KCUR_GAIN = 38403.0
PRINTED_KCUR_ZEROS = (-1406.0, -222.0)
PRINTED_KCUR_POLES = (-6468.0,)

# Scalar gain factors that bring the printed controllers to the stated
# closed-loop bandwidths (980 Hz current, 600 Hz voltage) on the default
# plant; reproduced by `tune_bandwidths`.
KCUR_BANDWIDTH_FACTOR = 0.041034124
KVOL_BANDWIDTH_FACTOR = 0.00086772737

TARGET_CURRENT_BANDWIDTH_HZ = 980.0
TARGET_VOLTAGE_BANDWIDTH_HZ = 600.0

# Roll-off added to the improper voltage controller before realization.
DEFAULT_ROLLOFF = 2.0 * math.pi * 10e3

# Gains of the resonant design used for simulation (see `simulation_controllers`).
SIM_KP_CURRENT = 0.40242878605
SIM_KP_VOLTAGE = 0.00095010880477
SIM_RESONANT_HZ = 1000.0


class UnboundedValueError(ArithmeticError):
    """Raised when a transfer function is evaluated at one of its poles."""


def _trim(c) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return np.zeros(1)
    return c[nz[0]:]


@dataclass(frozen=True)
class RationalTransferFunction:
    numerator_coefficients: tuple
    denominator_coefficients: tuple

    def __post_init__(self):
        num = tuple(float(x) for x in _trim(self.numerator_coefficients))
        den = tuple(float(x) for x in _trim(self.denominator_coefficients))
        if den == (0.0,):
            raise ValueError("denominator must be nonzero")
        if not all(map(math.isfinite, num + den)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "numerator_coefficients", num)
        object.__setattr__(self, "denominator_coefficients", den)

    @classmethod
    def from_factors(cls, gain, zeros=(), poles=(), num_polys=(), den_polys=()):
        """Build from a gain, real/complex roots, and extra polynomial factors."""
        num = np.real_if_close(np.poly(zeros)) if len(zeros) else np.ones(1)
        den = np.real_if_close(np.poly(poles)) if len(poles) else np.ones(1)
        for p in num_polys:
            num = np.polymul(num, p)
        for p in den_polys:
            den = np.polymul(den, p)
        return cls(tuple(gain * np.real(num)), tuple(np.real(den)))

    @property
    def num(self) -> np.ndarray:
        return np.array(self.numerator_coefficients)

    @property
    def den(self) -> np.ndarray:
        return np.array(self.denominator_coefficients)

    @property
    def relative_degree(self) -> int:
        return len(self.denominator_coefficients) - len(self.numerator_coefficients)

    @property
    def is_proper(self) -> bool:
        return self.relative_degree >= 0

    def zeros(self) -> np.ndarray:
        return np.roots(self.num)

    def poles(self) -> np.ndarray:
        return np.roots(self.den)

    def scaled(self, k: float) -> "RationalTransferFunction":
        return RationalTransferFunction(tuple(k * self.num), self.denominator_coefficients)

    def __mul__(self, other: "RationalTransferFunction") -> "RationalTransferFunction":
        return RationalTransferFunction(tuple(np.polymul(self.num, other.num)),
                                        tuple(np.polymul(self.den, other.den)))

    def __call__(self, s):
        return evaluate(self, s)


def _near_root(poly: np.ndarray, s: complex, tol: float) -> bool:
    if len(poly) < 2:
        return False
    scale = np.polyval(np.abs(poly), abs(s))
    if abs(np.polyval(poly, s)) <= tol * scale:
        return True
    r = np.roots(poly)
    return bool(np.any(np.abs(r - s) <= tol * np.maximum(1.0, np.abs(r))))


def evaluate(tf: RationalTransferFunction, s: complex, allow_infinite: bool = False) -> complex:
    """num(s)/den(s) by Horner's rule.

    Raises `UnboundedValueError` when `s` lies within 1e-12 (relative) of a
    pole, unless `allow_infinite` is set, in which case complex infinity is
    returned.
    """
    s = complex(s)
    if _near_root(tf.den, s, 1e-12):
        if allow_infinite:
            return complex(math.inf, math.inf)
        raise UnboundedValueError(f"s={s} is a pole of the transfer function")
    return complex(np.polyval(tf.num, s) / np.polyval(tf.den, s))


@dataclass(frozen=True)
class ControllerSet:
    voltage_controller: RationalTransferFunction
    current_controller: RationalTransferFunction
    virtual_resistance: float = 0.2
    rolloff: float = DEFAULT_ROLLOFF  # rad/s; 0 disables

    def __post_init__(self):
        if self.virtual_resistance < 0:
            raise ValueError("virtual_resistance must be non-negative")
        if self.rolloff < 0:
            raise ValueError("rolloff must be non-negative")

    def realized_voltage_controller(self) -> RationalTransferFunction:
        """K_vol as simulated: an improper controller gets first-order roll-offs."""
        k = self.voltage_controller
        while not k.is_proper:
            if self.rolloff <= 0:
                raise ValueError("improper voltage controller needs a roll-off")
            k = k * RationalTransferFunction((self.rolloff,), (1.0, self.rolloff))
        return k

    def realized(self) -> "ControllerSet":
        return replace(self, voltage_controller=self.realized_voltage_controller(), rolloff=0.0)


@dataclass(frozen=True)
class ClosedLoopBlocks:
    G_k: complex
    S_k: complex
    T_k: complex
    Z_k: complex


@dataclass(frozen=True)
class ClosedLoopPolynomials:
    """Polynomials of v = (G_num/D) v_ref - (Z_num/D) i."""

    D: np.ndarray
    G_num: np.ndarray
    Z_num: np.ndarray
    S_num: np.ndarray


def closed_loop_polynomials(plant: InverterElectrical, ctrl: ControllerSet) -> ClosedLoopPolynomials:
    nv, dv = ctrl.voltage_controller.num, ctrl.voltage_controller.den
    nc, dc = ctrl.current_controller.num, ctrl.current_controller.den
    Ls_R = np.array([plant.filter_inductance, plant.filter_esr])
    inner = np.polyadd(np.polymul(dc, Ls_R), nc)
    S_num = np.polymul(np.polymul([plant.filter_capacitance, 0.0], dv), inner)
    G_num = np.polymul(nc, nv)
    D = np.polyadd(S_num, G_num)
    Z_num = np.polyadd(ctrl.virtual_resistance * G_num, np.polymul(Ls_R, np.polymul(dc, dv)))
    return ClosedLoopPolynomials(_trim(D), _trim(G_num), _trim(Z_num), _trim(S_num))


def closed_loop_blocks(plant: InverterElectrical, ctrl: ControllerSet, s: complex) -> ClosedLoopBlocks:
    """Closed-loop tracking G, sensitivity S = 1 - G, T = G and output impedance Z."""
    p = closed_loop_polynomials(plant, ctrl)
    s = complex(s)
    if _near_root(p.D, s, 1e-12):
        raise UnboundedValueError(f"s={s} is a closed-loop pole")
    d = np.polyval(p.D, s)
    g = np.polyval(p.G_num, s) / d
    sens = np.polyval(p.S_num, s) / d
    z = np.polyval(p.Z_num, s) / d
    return ClosedLoopBlocks(complex(g), complex(sens), complex(1.0 - sens), complex(z))


def closed_loop_poles(plant: InverterElectrical, ctrl: ControllerSet) -> np.ndarray:
    return np.roots(closed_loop_polynomials(plant, ctrl).D)


def printed_controllers(virtual_resistance: float = 0.2, omega0: float = OMEGA0) -> ControllerSet:
    """The prototype's controllers exactly as printed (factored form expanded)."""
    res = [1.0, 0.0, omega0 ** 2]
    kvol = RationalTransferFunction.from_factors(
        PRINTED_KVOL_GAIN, PRINTED_KVOL_ZEROS, PRINTED_KVOL_POLES,
        num_polys=[PRINTED_KVOL_ZERO_QUADRATIC], den_polys=[res])
    kcur = RationalTransferFunction.from_factors(
        PRINTED_KCUR_GAIN, PRINTED_KCUR_ZEROS, PRINTED_KCUR_POLES, den_polys=[res])
    return ControllerSet(kvol, kcur, virtual_resistance)


def default_controllers(virtual_resistance: float = 0.2, bandwidth_matched: bool = True,
                        omega0: float = OMEGA0) -> ControllerSet:
    """Default controller pair.

    The printed pole/zero structure is kept.  With ``bandwidth_matched`` (the
    default) the two scalar gains are rescaled so that the closed loops on the
    default plant have the stated 980 Hz / 600 Hz bandwidths; the printed
    gains give roughly 6 kHz and 150 kHz instead.
    """
    c = printed_controllers(virtual_resistance, omega0)
    if not bandwidth_matched:
        return c
    return replace(c, voltage_controller=c.voltage_controller.scaled(KVOL_BANDWIDTH_FACTOR),
                   current_controller=c.current_controller.scaled(KCUR_BANDWIDTH_FACTOR))


def proportional_resonant(kp: float, kr: float, omega0: float = OMEGA0) -> RationalTransferFunction:
    """kp + kr s / (s^2 + omega0^2)."""
    return RationalTransferFunction((kp, kr, kp * omega0 ** 2), (1.0, 0.0, omega0 ** 2))


def simulation_controllers(virtual_resistance: float = 0.2, omega0: float = OMEGA0,
                           kp_current: float = SIM_KP_CURRENT, kp_voltage: float = SIM_KP_VOLTAGE,
                           resonant_hz: float = SIM_RESONANT_HZ) -> ControllerSet:
    """Controller pair used by the simulator and the small-signal model.

    The voltage controller is proportional-resonant (so it keeps the
    +-j omega0 internal model) and the current controller is proportional.
    Gains give 980 Hz / 600 Hz closed-loop bandwidths on the default plant.
    Unlike the printed pair, this design is biproper and stays stable when the
    inverter is loaded or paralleled; the bandwidth-matched printed pair is
    not (see `loaded_poles`).
    """
    kv = proportional_resonant(kp_voltage, kp_voltage * 2.0 * math.pi * resonant_hz, omega0)
    kc = RationalTransferFunction((kp_current,), (1.0,))
    return ControllerSet(kv, kc, virtual_resistance, rolloff=0.0)


def design_simulation_gains(plant: InverterElectrical, current_hz: float = TARGET_CURRENT_BANDWIDTH_HZ,
                            voltage_hz: float = TARGET_VOLTAGE_BANDWIDTH_HZ,
                            resonant_hz: float = SIM_RESONANT_HZ, omega0: float = OMEGA0
                            ) -> tuple[float, float]:
    """(kp_current, kp_voltage) of `simulation_controllers` for the given targets."""
    def cur_err(lk):
        c = simulation_controllers(kp_current=math.exp(lk), omega0=omega0, resonant_hz=resonant_hz)
        return bandwidth(lambda s: current_loop_response(plant, c, s)) - current_hz

    kpc = math.exp(optimize.brentq(cur_err, math.log(1e-4), math.log(1e2), xtol=1e-13))

    def vol_err(lk):
        c = simulation_controllers(kp_current=kpc, kp_voltage=math.exp(lk), omega0=omega0,
                                   resonant_hz=resonant_hz)
        return bandwidth(lambda s: voltage_loop_response(plant, c, s)) - voltage_hz

    kpv = math.exp(optimize.brentq(vol_err, math.log(1e-6), math.log(1.0), xtol=1e-13))
    return kpc, kpv


def loaded_poles(plant: InverterElectrical, ctrl: ControllerSet, load_resistance: float) -> np.ndarray:
    """Closed-loop poles with a resistor across the capacitor (i = v / R)."""
    p = closed_loop_polynomials(plant, ctrl)
    return np.roots(np.polyadd(load_resistance * p.D, p.Z_num))


def current_loop_response(plant: InverterElectrical, ctrl: ControllerSet, s):
    """Inner loop i_L/i_ref = n_c / (d_c (L s + R) + n_c)."""
    nc, dc = ctrl.current_controller.num, ctrl.current_controller.den
    den = np.polyadd(np.polymul(dc, [plant.filter_inductance, plant.filter_esr]), nc)
    return np.polyval(nc, s) / np.polyval(den, s)


def voltage_loop_response(plant: InverterElectrical, ctrl: ControllerSet, s):
    p = closed_loop_polynomials(plant, ctrl)
    return np.polyval(p.G_num, s) / np.polyval(p.D, s)


def bandwidth(response, f_min: float = 70.0, f_max: float = 1e6, points: int = 4000) -> float:
    """First frequency (Hz) above `f_min` where |response(j 2 pi f)| drops below 1/sqrt(2).

    `f_min` sits above the fundamental so that the resonant notch region
    around 60 Hz is not mistaken for the roll-off.
    """
    f = np.geomspace(f_min, f_max, points)
    m = np.abs(response(2j * np.pi * f)) - 1.0 / math.sqrt(2.0)
    idx = np.flatnonzero(m < 0)
    if idx.size == 0:
        return math.inf
    i = idx[0]
    if i == 0:
        return f_min
    g = lambda lf: abs(response(2j * np.pi * math.exp(lf))) - 1.0 / math.sqrt(2.0)
    return math.exp(optimize.brentq(g, math.log(f[i - 1]), math.log(f[i]), xtol=1e-12))


def loop_bandwidths(plant: InverterElectrical, ctrl: ControllerSet) -> tuple[float, float]:
    """(current, voltage) closed-loop bandwidths in Hz."""
    return (bandwidth(lambda s: current_loop_response(plant, ctrl, s)),
            bandwidth(lambda s: voltage_loop_response(plant, ctrl, s)))


def tune_bandwidths(plant: InverterElectrical, base: ControllerSet,
                    current_hz: float = TARGET_CURRENT_BANDWIDTH_HZ,
                    voltage_hz: float = TARGET_VOLTAGE_BANDWIDTH_HZ) -> tuple[float, float]:
    """Scalar factors (k_cur, k_vol) on `base` that hit the target bandwidths."""
    def cur_err(lk):
        c = replace(base, current_controller=base.current_controller.scaled(math.exp(lk)))
        return bandwidth(lambda s: current_loop_response(plant, c, s)) - current_hz

    lkc = optimize.brentq(cur_err, math.log(1e-4), math.log(1e2), xtol=1e-12)
    tuned = replace(base, current_controller=base.current_controller.scaled(math.exp(lkc)))

    def vol_err(lk):
        c = replace(tuned, voltage_controller=tuned.voltage_controller.scaled(math.exp(lk)))
        return bandwidth(lambda s: voltage_loop_response(plant, c, s)) - voltage_hz

    lkv = optimize.brentq(vol_err, math.log(1e-6), math.log(1.0), xtol=1e-12)
    return math.exp(lkc), math.exp(lkv)


@dataclass(frozen=True)
class InternalModelCheck:
    ok: bool
    residual: float

    def __bool__(self):
        return self.ok


def verify_internal_model(ctrl: ControllerSet, omega0: float = OMEGA0) -> InternalModelCheck:
    """Check that (s^2 + omega0^2) divides the voltage-controller denominator."""
    den = ctrl.voltage_controller.den
    if len(den) < 3:
        return InternalModelCheck(False, 1.0)
    _, rem = np.polydiv(den, [1.0, 0.0, omega0 ** 2])
    # compare with the size of the dividend terms that produced the remainder
    scale = np.linalg.norm(den * np.power(omega0, np.arange(len(den))[::-1] - 2.0))
    residual = float(np.linalg.norm(rem * np.power(omega0, np.arange(len(rem))[::-1] - 2.0)) / scale)
    return InternalModelCheck(residual < 1e-6, residual)


@dataclass
class DiscreteRealization:
    """x[k+1] = A x[k] + B u[k],  y[k] = C x[k] + D u[k]."""

    state_update_matrix: np.ndarray
    input_map: np.ndarray
    output_map: np.ndarray
    feedthrough: float
    sample_time: float
    poles: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))

    def __post_init__(self):
        n = self.state_dimension
        self.state_update_matrix = np.asarray(self.state_update_matrix, float).reshape(n, n)
        self.input_map = np.asarray(self.input_map, float).reshape(n)
        self.output_map = np.asarray(self.output_map, float).reshape(n)
        self.feedthrough = float(np.asarray(self.feedthrough).reshape(-1)[0]) if np.size(self.feedthrough) else 0.0
        if self.sample_time <= 0:
            raise ValueError("sample_time must be positive")

    @property
    def state_dimension(self) -> int:
        return int(np.asarray(self.state_update_matrix).shape[0]) if np.size(self.state_update_matrix) else 0

    def spectral_radius(self) -> float:
        if self.state_dimension == 0:
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvals(self.state_update_matrix))))

    def step(self, x: np.ndarray, u: float):
        y = self.output_map @ x + self.feedthrough * u
        return self.state_update_matrix @ x + self.input_map * u, y

    def frequency_response(self, omega: float) -> complex:
        z = np.exp(1j * omega * self.sample_time)
        n = self.state_dimension
        if n == 0:
            return complex(self.feedthrough)
        x = np.linalg.solve(z * np.eye(n) - self.state_update_matrix, self.input_map)
        return complex(self.output_map @ x + self.feedthrough)


def _bilinear(q: np.ndarray, K: float) -> np.ndarray:
    return (K + q) / (K - q)


def discretize(tf: RationalTransferFunction, sample_time: float,
               prewarp_frequency: float = OMEGA0) -> DiscreteRealization:
    """Prewarped bilinear (Tustin) discretization in controllable canonical form.

    Poles and zeros are mapped individually, which keeps the mapping accurate
    for the widely spread roots of the controllers.  Continuous poles on the
    imaginary axis are snapped onto the unit circle so the discrete internal
    model stays exact.
    """
    if sample_time <= 0:
        raise ValueError("sample_time must be positive")
    if not tf.is_proper:
        raise ValueError("transfer function must be proper to be realized")
    if prewarp_frequency <= 0 or prewarp_frequency * sample_time >= math.pi:
        raise ValueError("prewarp_frequency must lie in (0, pi/Ts)")
    K = prewarp_frequency / math.tan(prewarp_frequency * sample_time / 2.0)
    num, den = tf.num, tf.den
    if len(den) == 1:
        return DiscreteRealization(np.zeros((0, 0)), np.zeros(0), np.zeros(0),
                                   num[0] / den[0], sample_time)
    if len(num) == 1 and num[0] == 0.0:
        n = len(den) - 1
        return DiscreteRealization(np.zeros((n, n)), np.zeros(n), np.zeros(n), 0.0, sample_time)
    zs, ps = np.roots(num), np.roots(den)
    zd, pd = _bilinear(zs, K), _bilinear(ps, K)
    on_axis = np.abs(ps.real) <= 1e-9 * np.maximum(1.0, np.abs(ps))
    pd[on_axis] /= np.abs(pd[on_axis])
    gain = num[0] / den[0] * np.prod(K - zs) / np.prod(K - ps)
    extra = len(ps) - len(zs)
    zd = np.concatenate([zd, -np.ones(extra)])
    bz = np.real(gain) * np.real(np.poly(zd))
    az = np.real(np.poly(pd))
    A, B, C, D = signal.tf2ss(bz, az)
    return DiscreteRealization(A, B.reshape(-1), C.reshape(-1), D.reshape(-1)[0],
                               sample_time, poles=pd)


def stack_realizations(reals: list[DiscreteRealization]):
    """Block-diagonal stacking so that N controllers advance with one product."""
    from scipy.linalg import block_diag
    n = [r.state_dimension for r in reals]
    A = block_diag(*[r.state_update_matrix for r in reals]) if sum(n) else np.zeros((0, 0))
    B = np.zeros((sum(n), len(reals)))
    C = np.zeros((len(reals), sum(n)))
    o = 0
    for k, r in enumerate(reals):
        B[o:o + n[k], k] = r.input_map
        C[k, o:o + n[k]] = r.output_map
        o += n[k]
    D = np.array([r.feedthrough for r in reals])
    return A, B, C, D
