"""Complex-envelope small-signal model of the VP-D network.

Every stationary-frame signal is written ``x(t) = Im(X(t) e^{j w0 t})``.  A
linear block ``x' = A x + B u`` then becomes ``X' = (A - j w0) X + B U``,
so sinusoidal steady states are fixed points and ordinary linearization
applies.  Complex envelopes are expanded into real and imaginary parts; the
filtered active power ``P_k`` is a real state driven by ``Re(V I*)/2``.

The system matrix is obtained by central finite differences.  For inductive
branches feeding a resistive load it is also assembled from per-inverter
blocks in their own clock frames, rotated by ``T_theta`` and coupled through
``v_pcc = R_L sum_k i_k``.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy import signal

from .controller import RationalTransferFunction
from .droop import CLAMP_HIGH, CLAMP_LOW
from .net_model import LoadModel, MicrogridConfig
from .steady_state import DroopEquilibrium, droop_equilibrium
from .timedomain import plant_matrices

EIGEN_SCHEMA_VERSION = 1
SWEEP_AXES = ("clock_angle", "droop_gain", "virtual_resistance", "load_pf")


class OperatingPointError(RuntimeError):
    pass


class EigenError(RuntimeError):
    def __init__(self, message, matrix):
        super().__init__(message + "\n" + np.array2string(matrix, threshold=10_000))
        self.matrix = matrix


def _continuous_ss(tf: RationalTransferFunction):
    if len(tf.den) == 1:
        return np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), np.array([[tf.num[-1] / tf.den[0]]])
    return signal.tf2ss(tf.num, tf.den)


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------- model

class EnvelopeModel:
    """Index bookkeeping and right-hand side of the envelope ODE.

    Real state layout: per inverter ``iL, v, [i], xv..., xc..., P`` (complex
    slots take two entries, ``.re`` then ``.im``), followed by the load
    current envelope for an R-L load.
    """

    def __init__(self, config: MicrogridConfig):
        self.config = config
        n = self.n = config.n
        self.w0 = config.nominal_frequency
        load = config.load.as_series_rl()
        self.load = load
        pm = plant_matrices(config, load, [True] * n)
        self.case = pm.case
        d = pm.A.shape[0]
        inductive = [inv.branch_inductance > 0 for inv in config.inverters]
        self.inductive = inductive
        rl = load.kind == "series-rl"
        # reduced plant coordinates: drop unused slots, and in the all-inductor
        # case the load current, which equals the sum of branch currents
        used = list(range(n)) + list(range(n, 2 * n)) + [2 * n + k for k in range(n) if inductive[k]]
        keep_load = rl and pm.case != "B"
        if keep_load:
            used.append(3 * n)
        emb = np.zeros((d, len(used)))
        emb[used, np.arange(len(used))] = 1.0
        if pm.case == "B":
            for k in range(n):
                if inductive[k]:
                    emb[3 * n, used.index(2 * n + k)] = 1.0
        self.Ap = pm.A[used] @ emb
        self.Bp = pm.B[used]
        self.Ci = pm.current_rows @ emb
        self.pcc_row = pm.pcc_row @ emb
        self.plant_dim = len(used)

        ctrls = [config.controller_for(k).realized() for k in range(n)]
        self.kv = [_continuous_ss(c.voltage_controller) for c in ctrls]
        self.kc = [_continuous_ss(c.current_controller) for c in ctrls]
        self.rv = np.array([inv.virtual_resistance for inv in config.inverters])
        self.estar = config.nominal_voltage_magnitude
        self.ndroop = np.array([dp.droop_coefficient for dp in config.droop])
        self.pstar = np.array([dp.active_power_reference for dp in config.droop])
        self.wp = np.array([dp.power_filter_bandwidth for dp in config.droop])
        self.theta = np.array([c.phase_offset for c in config.clocks], float)

        # slot layout
        labels: list[str] = []
        slot_of_plant = np.empty(self.plant_dim, int)
        self.v_slots = [[] for _ in range(n)]
        self.c_slots = [[] for _ in range(n)]
        self.p_index = np.empty(n, int)
        self.block = []
        names = {k: f"iL{k + 1}" for k in range(n)}
        names.update({n + k: f"v{k + 1}" for k in range(n)})
        names.update({2 * n + k: f"i{k + 1}" for k in range(n)})
        names[3 * n] = "iload"

        def add_complex(name):
            labels.extend([name + ".re", name + ".im"])
            return len(labels) - 2

        for k in range(n):
            start = len(labels)
            for j, g in enumerate(used):
                if g < 3 * n and g % n == k:
                    slot_of_plant[j] = add_complex(names[g])
            for m in range(self.kv[k][0].shape[0]):
                self.v_slots[k].append(add_complex(f"xv{k + 1}_{m + 1}"))
            for m in range(self.kc[k][0].shape[0]):
                self.c_slots[k].append(add_complex(f"xc{k + 1}_{m + 1}"))
            self.p_index[k] = len(labels)
            labels.append(f"P{k + 1}")
            self.block.append(np.arange(start, len(labels)))
        if keep_load:
            slot_of_plant[used.index(3 * n)] = add_complex(names[3 * n])
        self.labels = tuple(labels)
        self.dim = len(labels)
        self.plant_slots = slot_of_plant
        self.load_slots = np.arange(self.block[-1][-1] + 1, self.dim)
        self.complex_slots = np.array(sorted(
            list(slot_of_plant) + [s for v in self.v_slots for s in v] + [s for c in self.c_slots for s in c]))
        self.v_index = np.array([used.index(n + k) for k in range(n)])
        self.iL_index = np.arange(n)

    # -- packing
    def unpack(self, x):
        x = np.asarray(x, float)
        Xp = x[self.plant_slots] + 1j * x[self.plant_slots + 1]
        Xv = [x[np.array(s, int)] + 1j * x[np.array(s, int) + 1] for s in self.v_slots]
        Xc = [x[np.array(s, int)] + 1j * x[np.array(s, int) + 1] for s in self.c_slots]
        return Xp, Xv, Xc, x[self.p_index]

    def pack(self, Xp, Xv, Xc, P) -> np.ndarray:
        x = np.empty(self.dim)
        x[self.plant_slots], x[self.plant_slots + 1] = Xp.real, Xp.imag
        for k in range(self.n):
            for s, val in zip(self.v_slots[k], Xv[k]):
                x[s], x[s + 1] = val.real, val.imag
            for s, val in zip(self.c_slots[k], Xc[k]):
                x[s], x[s + 1] = val.real, val.imag
        x[self.p_index] = P
        return x

    # -- dynamics
    def magnitudes(self, P) -> np.ndarray:
        return np.clip(self.estar - self.ndroop * (P - self.pstar), CLAMP_LOW * self.estar,
                       CLAMP_HIGH * self.estar)

    def outputs(self, Xp):
        """(capacitor voltages, branch currents, PCC voltage) envelopes."""
        return Xp[self.v_index], self.Ci @ Xp, complex(self.pcc_row @ Xp)

    def derivative(self, x) -> np.ndarray:
        Xp, Xv, Xc, P = self.unpack(x)
        jw = 1j * self.w0
        V, I, _ = self.outputs(Xp)
        IL = Xp[self.iL_index]
        vref = self.magnitudes(P) * np.exp(1j * self.theta)
        U = np.empty(self.n, complex)
        dXv, dXc = [], []
        for k in range(self.n):
            Av, Bv, Cv, Dv = self.kv[k]
            Ac, Bc, Cc, Dc = self.kc[k]
            e = vref[k] - self.rv[k] * I[k] - V[k]
            dXv.append(Av @ Xv[k] - jw * Xv[k] + Bv[:, 0] * e)
            iref = complex(Cv[0] @ Xv[k] + Dv[0, 0] * e) + I[k]
            ec = iref - IL[k]
            dXc.append(Ac @ Xc[k] - jw * Xc[k] + Bc[:, 0] * ec)
            U[k] = complex(Cc[0] @ Xc[k] + Dc[0, 0] * ec) + V[k]
        dXp = self.Ap @ Xp - jw * Xp + self.Bp @ U
        dP = self.wp * (0.5 * np.real(V * np.conj(I)) - P)
        return self.pack(dXp, dXv, dXc, dP)


def envelope_dynamics(envelope_state, config: MicrogridConfig, model: EnvelopeModel | None = None
                      ) -> np.ndarray:
    """Time derivative of the real-expanded envelope state."""
    return (model or EnvelopeModel(config)).derivative(envelope_state)


def jacobian(f, x, step_scale: float = 1e-6, floor: float = 1e-9) -> np.ndarray:
    """Central differences with step ``max(step_scale |x_i|, floor)``."""
    x = np.asarray(x, float)
    J = np.empty((len(f(x)), len(x)))
    for i in range(len(x)):
        h = max(step_scale * abs(x[i]), floor)
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (f(xp) - f(xm)) / (2 * h)
    return J


# ---------------------------------------------------------------- operating point

@dataclass(frozen=True)
class OperatingPoint:
    state: np.ndarray
    labels: tuple
    rotation_angles: np.ndarray
    residual: float
    equilibrium: DroopEquilibrium
    newton_iterations: int

    def envelope(self, name: str) -> complex:
        """Complex envelope of a slot (``"v1"``, ``"iL2"``) or a real state (``"P1"``)."""
        if name in self.labels:
            return complex(self.state[self.labels.index(name)])
        i = self.labels.index(name + ".re")
        return complex(self.state[i], self.state[i + 1])


def relative_residual(f_x: np.ndarray, J: np.ndarray, x: np.ndarray) -> float:
    """max_i |f_i| over the size of the terms summed into f_i.

    Row-wise, because the power-filter rows are many orders of magnitude
    smaller than the electrical ones.
    """
    scale = np.abs(J) @ np.abs(x)
    floor = 1e-12 * float(np.max(scale)) if np.any(scale > 0) else 1.0
    return float(np.max(np.abs(f_x) / np.maximum(scale, floor)))


def operating_point(config: MicrogridConfig, tol: float = 1e-8, max_iter: int = 20,
                    model: EnvelopeModel | None = None, target: float = 1e-12) -> OperatingPoint:
    """Envelope fixed point, found by Newton from the droop equilibrium.

    Iterates toward `target` (the scaled residual is lenient, so stopping at
    `tol` leaves ~1e-6 relative error in the phasors) and accepts anything
    below `tol` once Newton stalls.
    """
    if config.full_droop:
        raise OperatingPointError("the small-signal model covers VP-D only")
    model = model or EnvelopeModel(config)
    eq = droop_equilibrium(config)
    x = np.zeros(model.dim)
    x[model.p_index] = eq.solution.active_power
    f = model.derivative
    res = math.inf
    best = (math.inf, x, 0)
    for it in range(1, max_iter + 1):
        J = jacobian(f, x)
        x = x - np.linalg.solve(J, f(x))
        res = relative_residual(f(x), J, x)
        if res < best[0]:
            best = (res, x, it)
        elif best[0] < tol:
            break
        if res < target:
            break
    res, x, it = best
    if not res < tol:
        raise OperatingPointError(f"Newton did not converge (relative residual {res:.3g})")
    return OperatingPoint(x, model.labels, model.theta.copy(), res, eq, it)


# ---------------------------------------------------------------- linearization

@dataclass(frozen=True)
class LinearModel:
    system_matrix: np.ndarray
    state_labels: tuple
    A_blocks: tuple
    B_blocks: tuple
    rotation_maps: tuple
    assembly: str  # "structured" or "direct"
    step_scale: float = 1e-6


def _local_block(model: EnvelopeModel, k: int, x_loc: np.ndarray, u_loc: complex, step_scale: float):
    """(A_k, B_k) of inverter k in its own frame with the PCC voltage as input."""
    inv = model.config.inverters[k]
    Av, Bv, Cv, Dv = model.kv[k]
    Ac, Bc, Cc, Dc = model.kc[k]
    nv, nc = Av.shape[0], Ac.shape[0]
    w0 = model.w0
    L, R, C = inv.filter_inductance, inv.filter_esr, inv.filter_capacitance
    Lb, rb = inv.branch_inductance, inv.branch_resistance
    rv = model.rv[k]

    def f(z):
        c = z[:-1:2] + 1j * z[1:-1:2]  # iL, v, i, xv..., xc..., then P
        iL, v, i = c[0], c[1], c[2]
        xv, xc = c[3:3 + nv], c[3 + nv:3 + nv + nc]
        vp = z[-3] + 1j * z[-2]
        P = z[-1]
        E = float(np.clip(model.estar - model.ndroop[k] * (P - model.pstar[k]),
                          CLAMP_LOW * model.estar, CLAMP_HIGH * model.estar))
        e = E - rv * i - v
        iref = complex(Cv[0] @ xv + Dv[0, 0] * e) + i
        ec = iref - iL
        u = complex(Cc[0] @ xc + Dc[0, 0] * ec) + v
        jw = 1j * w0
        d = np.concatenate([
            [(u - R * iL - v) / L - jw * iL, (iL - i) / C - jw * v, (v - rb * i - vp) / Lb - jw * i],
            Av @ xv - jw * xv + Bv[:, 0] * e, Ac @ xc - jw * xc + Bc[:, 0] * ec])
        out = np.empty(2 * len(d) + 1)
        out[:-1:2], out[1:-1:2] = d.real, d.imag
        out[-1] = model.wp[k] * (0.5 * (v * np.conj(i)).real - P)
        return out

    z = np.concatenate([x_loc[:-1], [u_loc.real, u_loc.imag], x_loc[-1:]])
    # input entries sit just before P so that f's slicing stays uniform
    J = jacobian(f, z, step_scale)
    m = len(x_loc)
    cols = list(range(m - 1)) + [m + 1]
    return J[:, cols], J[:, [m - 1, m]]


def _block_rotation(model: EnvelopeModel, k: int, theta: float) -> np.ndarray:
    size = len(model.block[k])
    T = np.eye(size)
    r = rotation(theta)
    for s in range(0, size - 1, 2):
        T[s:s + 2, s:s + 2] = r
    return T


def structured_assembly_applies(config: MicrogridConfig) -> bool:
    return (config.load.as_series_rl().kind == "resistive"
            and all(inv.branch_inductance > 0 for inv in config.inverters))


def linearize(point: OperatingPoint, config: MicrogridConfig, step_scale: float = 1e-6,
              structured: bool | None = None, tol: float = 1e-8) -> LinearModel:
    """Linear model about `point`; structured assembly when the topology allows it."""
    if not point.residual < tol:
        raise OperatingPointError(f"operating point residual {point.residual:.3g} exceeds {tol:g}")
    model = EnvelopeModel(config)
    if model.labels != point.labels:
        raise OperatingPointError("operating point does not belong to this configuration")
    x0 = point.state
    rot = tuple(rotation(t) for t in model.theta)
    use_struct = structured_assembly_applies(config) if structured is None else structured
    if use_struct and not structured_assembly_applies(config):
        raise ValueError("structured assembly needs inductive branches and a resistive load")
    if not use_struct:
        A = jacobian(model.derivative, x0, step_scale)
        blocks = tuple(A[np.ix_(b, b)] for b in model.block)
        return LinearModel(A, model.labels, blocks, (), rot, "direct", step_scale)

    n = model.n
    RL = model.load.resistance
    _, I, vpcc = model.outputs(model.unpack(x0)[0])
    A = np.zeros((model.dim, model.dim))
    Ak, Bk, Tk, Ck = [], [], [], []
    for k in range(n):
        T = _block_rotation(model, k, model.theta[k])
        x_loc = T.T @ x0[model.block[k]]
        u_loc = vpcc * np.exp(-1j * model.theta[k])
        a, b = _local_block(model, k, x_loc, u_loc, step_scale)
        Ak.append(a)
        Bk.append(b)
        Tk.append(T)
        c = np.zeros((2, len(model.block[k])))
        c[:, 4:6] = np.eye(2)  # branch current slot in block coordinates
        Ck.append(c)
    for k in range(n):
        bk = model.block[k]
        A[np.ix_(bk, bk)] += Tk[k] @ Ak[k] @ Tk[k].T
        for j in range(n):
            bj = model.block[j]
            A[np.ix_(bk, bj)] += RL * Tk[k] @ Bk[k] @ rot[k].T @ Ck[j]
    return LinearModel(A, model.labels, tuple(Ak), tuple(Bk), rot, "structured", step_scale)


# ---------------------------------------------------------------- eigenvalues

@dataclass(frozen=True)
class EigenReport:
    eigenvalues: np.ndarray
    spectral_abscissa: float
    dominant_mode_label: str
    stable: bool
    labels: tuple = ()          # most-participating state per eigenvalue
    participation: np.ndarray = field(default=None, repr=False)

    @property
    def dominant_eigenvalue(self) -> complex:
        ev = self.eigenvalues
        top = ev.real.max()
        cands = ev[np.isclose(ev.real, top, rtol=0, atol=1e-9 * max(1.0, abs(top)))]
        return complex(cands[np.argmax(cands.imag)])


def eigen_report(model) -> EigenReport:
    """Eigenvalues, participation factors and stability of a linear model (or matrix)."""
    A = model.system_matrix if isinstance(model, LinearModel) else np.asarray(model, float)
    names = model.state_labels if isinstance(model, LinearModel) else tuple(f"x{i + 1}" for i in range(len(A)))
    if not np.all(np.isfinite(A)):
        raise EigenError("system matrix has non-finite entries", A)
    try:
        w, vl, vr = scipy.linalg.eig(A, left=True, right=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenError(f"eigensolver failed: {exc}", A) from exc
    part = np.abs(vl.conj() * vr)
    part /= np.maximum(part.sum(axis=0), 1e-300)
    labels = tuple(names[i] for i in np.argmax(part, axis=0))
    sa = float(w.real.max())
    dom = int(np.argmax(w.real + 1e-12 * (w.imag >= 0)))
    return EigenReport(w, sa, labels[dom], sa < 0, labels, part)


def analyze(config: MicrogridConfig, step_scale: float = 1e-6) -> tuple[OperatingPoint, LinearModel, EigenReport]:
    op = operating_point(config)
    lm = linearize(op, config, step_scale)
    return op, lm, eigen_report(lm)


# ---------------------------------------------------------------- sweeps

def apply_axis(config: MicrogridConfig, axis: str, value: float, index: int | None = None
               ) -> MicrogridConfig:
    """Configuration at one grid point.

    clock_angle: offset (degrees) of inverter `index` (default: the last one).
    droop_gain: factor applied to every droop coefficient.
    virtual_resistance: R_v of every inverter (ohm).
    load_pf: lagging power factor, keeping the load's apparent power at the
    nominal voltage.
    """
    if axis == "clock_angle":
        k = config.n - 1 if index is None else index
        clocks = list(config.clocks)
        clocks[k] = replace(clocks[k], phase_offset=math.radians(value))
        return config.with_(clocks=tuple(clocks))
    if axis == "droop_gain":
        return config.with_(droop=tuple(replace(d, droop_coefficient=d.droop_coefficient * value)
                                        for d in config.droop))
    if axis == "virtual_resistance":
        return config.with_(inverters=tuple(replace(inv, virtual_resistance=value)
                                            for inv in config.inverters))
    if axis == "load_pf":
        z = abs(config.load.impedance)
        vrms = config.nominal_voltage_magnitude / math.sqrt(2)
        return config.with_(load=LoadModel.from_power(vrms ** 2 / z, value, vrms, config.nominal_frequency))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


@dataclass(frozen=True)
class SweepPoint:
    axis: str
    value: float
    report: EigenReport | None
    error: str | None = None


def _sweep_one(args) -> SweepPoint:
    config, axis, value, index = args
    try:
        _, _, rep = analyze(apply_axis(config, axis, value, index))
        return SweepPoint(axis, value, rep)
    except Exception as exc:  # per-point failures are recorded, the sweep goes on
        return SweepPoint(axis, value, None, f"{type(exc).__name__}: {exc}")


def stability_sweep(config: MicrogridConfig, axis: str, grid, index: int | None = None,
                    parallel: int = 1) -> list[SweepPoint]:
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    grid = list(grid)
    if not grid:
        raise ValueError("sweep grid is empty")
    jobs = [(config, axis, float(v), index) for v in grid]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_sweep_one, jobs))
    return [_sweep_one(j) for j in jobs]


def eigen_csv(points, axis: str = "none") -> str:
    """Stacked eigenvalue table: parameter, re, im, label, stable."""
    buf = io.StringIO()
    buf.write(f"# vpdroop-eigen schema={EIGEN_SCHEMA_VERSION} axis={axis}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "re", "im", "label", "stable", "error"])
    for p in points:
        value, rep, err = (p.value, p.report, p.error) if isinstance(p, SweepPoint) else (math.nan, p, None)
        if rep is None:
            w.writerow([repr(value), "", "", "", "", err])
            continue
        order = np.lexsort((rep.eigenvalues.imag, -rep.eigenvalues.real))
        for i in order:
            ev = rep.eigenvalues[i]
            w.writerow([repr(value), f"{ev.real:.12g}", f"{ev.imag:.12g}", rep.labels[i],
                        int(rep.stable), ""])
    return buf.getvalue()


def read_eigen_csv(text: str) -> list[dict]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# vpdroop-eigen schema="):
        raise ValueError("not an eigenvalue CSV")
    return list(csv.DictReader(lines[1:]))
