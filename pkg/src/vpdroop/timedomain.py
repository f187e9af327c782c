"""Fixed-step simulation of the averaged multi-inverter network.

Continuous states are, per inverter, the filter inductor current ``iL_k``,
the capacitor voltage ``v_k`` and (for branches with series inductance) the
branch current ``i_k``; an R-L load adds the load current.  The PCC voltage
is eliminated algebraically.  Between control updates the inverter voltage
is held constant, so the plant is a linear system driven by a piecewise
constant input.  It can be advanced exactly (matrix exponential, the
default) or with classical RK4.

Controllers are discrete realizations clocked at the simulation step,
wired as
    e = v_ref - R_v i - v,  i_ref = K_vol e + i,  v_inv = K_cur (i_ref - iL) + v.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
from scipy.linalg import expm
from scipy.ndimage import maximum_filter1d

from . import clock as clk
from .controller import discretize, stack_realizations
from .droop import CLAMP_HIGH, CLAMP_LOW, FullDroopParams, lpf_gain
from .net_model import LoadModel, MicrogridConfig
from .steady_state import droop_equilibrium

log = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = 1
EVENT_KINDS = ("connect", "disconnect", "enable", "load_step", "clock_event",
               "set_power_reference")
METHODS = ("exact", "rk4")


class SimulationError(RuntimeError):
    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot
        self.partial_trace = None


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    index: int | None = None
    payload: object = None

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("event time must be non-negative")
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind in ("connect", "disconnect", "enable", "clock_event",
                         "set_power_reference") and self.index is None:
            raise ValueError(f"{self.kind} event needs an inverter index")
        if self.kind == "load_step" and not isinstance(self.payload, LoadModel):
            raise ValueError("load_step payload must be a LoadModel")
        if self.kind == "clock_event":
            kind, _ = self.payload
            if kind not in clk.EVENT_KINDS:
                raise ValueError(f"unknown clock event {kind!r}")


@dataclass(frozen=True)
class Scenario:
    config: MicrogridConfig
    duration: float
    time_step: float = 1e-5
    events: tuple = ()
    initially_connected: tuple | None = None
    initially_enabled: tuple | None = None
    initial: str = "equilibrium"      # or "zero"
    decimate: int = 1
    method: str = "exact"

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        n = self.config.n
        if self.initially_connected is None:
            object.__setattr__(self, "initially_connected", (True,) * n)
        if self.initially_enabled is None:
            object.__setattr__(self, "initially_enabled", (True,) * n)
        object.__setattr__(self, "initially_connected", tuple(map(bool, self.initially_connected)))
        object.__setattr__(self, "initially_enabled", tuple(map(bool, self.initially_enabled)))
        if len(self.initially_connected) != n or len(self.initially_enabled) != n:
            raise ValueError("initial flags must have one entry per inverter")
        if not self.time_step > 0:
            raise ValueError("time_step must be positive")
        times = [e.time for e in self.events]
        if times != sorted(times):
            raise ValueError("events must be sorted by time")
        if times and self.duration < times[-1]:
            raise ValueError("duration must cover every event")
        for e in self.events:
            if e.index is not None and not 0 <= e.index < n:
                raise ValueError(f"event index {e.index} out of range")
        if self.initial not in ("equilibrium", "zero"):
            raise ValueError("initial must be 'equilibrium' or 'zero'")
        if self.decimate < 1:
            raise ValueError("decimate must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.time_step))


# ---------------------------------------------------------------- plant

@dataclass(frozen=True)
class PlantMatrices:
    A: np.ndarray
    B: np.ndarray
    pcc_row: np.ndarray        # v_pcc = pcc_row @ x
    current_rows: np.ndarray   # i = current_rows @ x
    load_row: np.ndarray       # load current
    case: str


class PlantLayout:
    """Index bookkeeping: [iL (N), v (N), i_branch (N), i_load]."""

    def __init__(self, n: int):
        self.n = n
        self.iL = np.arange(n)
        self.v = np.arange(n, 2 * n)
        self.ib = np.arange(2 * n, 3 * n)
        self.il = 3 * n
        self.dim = 3 * n + 1


def plant_matrices(config: MicrogridConfig, load: LoadModel, connected) -> PlantMatrices:
    """Continuous-time plant ``x' = A x + B v_inv`` for one topology."""
    n = config.n
    lay = PlantLayout(n)
    load = load.as_series_rl()
    rl = load.kind == "series-rl"
    invs = config.inverters
    conn = np.asarray(connected, bool)
    ind = np.array([inv.branch_inductance > 0 for inv in invs]) & conn
    res = conn & ~ind
    A = np.zeros((lay.dim, lay.dim))
    B = np.zeros((lay.dim, n))
    cp = np.zeros(lay.dim)

    g_res = sum(1.0 / invs[k].branch_resistance for k in np.flatnonzero(res))
    g_tot = g_res + (0.0 if rl else 1.0 / load.resistance)
    if g_tot > 0:
        case = "A"
        for k in np.flatnonzero(res):
            cp[lay.v[k]] = 1.0 / invs[k].branch_resistance / g_tot
        for k in np.flatnonzero(ind):
            cp[lay.ib[k]] = 1.0 / g_tot
        if rl:
            cp[lay.il] = -1.0 / g_tot
    elif rl and ind.any():
        case = "B"
        den = sum(1.0 / invs[k].branch_inductance for k in np.flatnonzero(ind)) + 1.0 / load.inductance
        for k in np.flatnonzero(ind):
            lk = invs[k].branch_inductance
            cp[lay.v[k]] = 1.0 / lk / den
            cp[lay.ib[k]] = -invs[k].branch_resistance / lk / den
        cp[lay.il] = load.resistance / load.inductance / den
    else:
        case = "C"

    Ci = np.zeros((n, lay.dim))
    for k in range(n):
        if res[k]:
            Ci[k, lay.v[k]] = 1.0
            Ci[k] -= cp
            Ci[k] /= invs[k].branch_resistance
        elif ind[k]:
            Ci[k, lay.ib[k]] = 1.0

    for k, inv in enumerate(invs):
        A[lay.iL[k], lay.iL[k]] = -inv.filter_esr / inv.filter_inductance
        A[lay.iL[k], lay.v[k]] = -1.0 / inv.filter_inductance
        B[lay.iL[k], k] = 1.0 / inv.filter_inductance
        A[lay.v[k], lay.iL[k]] = 1.0 / inv.filter_capacitance
        A[lay.v[k]] -= Ci[k] / inv.filter_capacitance
        if ind[k]:
            row = -cp.copy()
            row[lay.v[k]] += 1.0
            row[lay.ib[k]] -= inv.branch_resistance
            A[lay.ib[k]] = row / inv.branch_inductance
    if rl:
        row = cp.copy()
        row[lay.il] -= load.resistance
        A[lay.il] = row / load.inductance
        load_row = np.zeros(lay.dim)
        load_row[lay.il] = 1.0
    else:
        load_row = cp / load.resistance
    return PlantMatrices(A, B, cp, Ci, load_row, case)


def zoh_discretize(A: np.ndarray, B: np.ndarray, dt: float):
    """Exact discretization for an input held over each step."""
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A * dt
    M[:n, n:] = B * dt
    E = expm(M)
    return E[:n, :n], E[:n, n:]


def rk4_step(A, B, x, u0, uh, u1, dt):
    k1 = A @ x + B @ u0
    k2 = A @ (x + 0.5 * dt * k1) + B @ uh
    k3 = A @ (x + 0.5 * dt * k2) + B @ uh
    k4 = A @ (x + dt * k3) + B @ u1
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_matrices(A, B, dt):
    """RK4 with a held input written as x+ = Phi x + Gamma u."""
    n = A.shape[0]
    h = A * dt
    I = np.eye(n)
    h2 = h @ h
    phi = I + h + h2 / 2 + h2 @ h / 6 + h2 @ h2 / 24
    gam = (I + h / 2 + h2 / 6 + h2 @ h / 24) @ B * dt
    return phi, gam


def integrate_plant(config: MicrogridConfig, x0, u_of_t, t_end: float, dt: float,
                    method: str = "rk4", connected=None, load=None) -> np.ndarray:
    """Open-loop plant integration with a continuous input ``u_of_t(t)``.

    With ``rk4`` the input is sampled at the stage times, which gives the
    classical fourth-order method; ``exact`` holds it over each step.
    """
    conn = [True] * config.n if connected is None else connected
    pm = plant_matrices(config, load or config.load, conn)
    x = np.array(x0, float)
    steps = int(round(t_end / dt))
    if method == "exact":
        phi, gam = zoh_discretize(pm.A, pm.B, dt)
    for s in range(steps):
        t = s * dt
        if method == "rk4":
            x = rk4_step(pm.A, pm.B, x, u_of_t(t), u_of_t(t + dt / 2), u_of_t(t + dt), dt)
        else:
            x = phi @ x + gam @ u_of_t(t)
    return x


def derivatives(state: "SimulationState", config: MicrogridConfig, t: float | None = None) -> np.ndarray:
    """Plant state derivative at `state` with the inverter voltage it holds."""
    pm = plant_matrices(config, state.load or config.load, state.connected)
    return pm.A @ state.x + pm.B @ state.v_inv


# ---------------------------------------------------------------- state

@dataclass
class SimulationState:
    """Snapshot of everything that evolves during a run."""

    time: float
    x: np.ndarray
    xv: np.ndarray
    xc: np.ndarray
    filtered_power: np.ndarray
    magnitude: np.ndarray
    v_hat: np.ndarray
    i_hat: np.ndarray
    droop_phase: np.ndarray
    ramp_start: np.ndarray
    enabled: np.ndarray
    connected: np.ndarray
    power_reference: np.ndarray
    clocks: list
    load: LoadModel | None = None
    v_inv: np.ndarray | None = None
    step_index: int = 0

    def copy(self) -> "SimulationState":
        return SimulationState(self.time, self.x.copy(), self.xv.copy(), self.xc.copy(),
                               self.filtered_power.copy(), self.magnitude.copy(),
                               self.v_hat.copy(), self.i_hat.copy(), self.droop_phase.copy(),
                               self.ramp_start.copy(), self.enabled.copy(), self.connected.copy(),
                               self.power_reference.copy(), list(self.clocks), self.load,
                               None if self.v_inv is None else self.v_inv.copy(), self.step_index)

    def capacitor_voltage(self, n: int) -> np.ndarray:
        return self.x[n:2 * n]

    def inductor_current(self, n: int) -> np.ndarray:
        return self.x[:n]


# ---------------------------------------------------------------- trace

@dataclass
class SimulationTrace:
    time: np.ndarray
    columns: dict
    n: int
    nominal_frequency: float
    nominal_voltage: float
    sample_time: float
    event_times: tuple = ()
    extras: dict = field(default_factory=dict)

    @staticmethod
    def column_names(n: int) -> list[str]:
        names = ["t", "v_pcc"]
        for k in range(1, n + 1):
            names += [f"v{k}", f"i{k}", f"iL{k}", f"E{k}", f"P{k}", f"Q{k}"]
        names += [f"icirc_{j}{k}" for j, k in combinations(range(1, n + 1), 2)]
        return names

    def __getitem__(self, name: str) -> np.ndarray:
        if name == "t":
            return self.time
        return self.columns[name]

    def matrix(self, prefix: str) -> np.ndarray:
        """Stack per-inverter columns, e.g. ``matrix('v')`` -> shape (samples, N)."""
        return np.column_stack([self.columns[f"{prefix}{k}"] for k in range(1, self.n + 1)])

    def to_csv(self, fh) -> None:
        names = self.column_names(self.n)
        fh.write(f"# vpdroop-trace schema={TRACE_SCHEMA_VERSION} n={self.n} "
                 f"f0={self.nominal_frequency / (2 * math.pi):.12g} "
                 f"E0={self.nominal_voltage:.12g} dt={self.sample_time:.12g}\n")
        fh.write(",".join(names) + "\n")
        data = np.column_stack([self[c] for c in names])
        np.savetxt(fh, data, fmt="%.9g", delimiter=",")

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, fh) -> "SimulationTrace":
        header = fh.readline()
        if not header.startswith("# vpdroop-trace"):
            raise ValueError("not a trace file")
        meta = dict(item.split("=") for item in header[1:].split()[1:])
        if int(meta["schema"]) != TRACE_SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema {meta['schema']}")
        names = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
        cols = {name: data[:, i] for i, name in enumerate(names) if name != "t"}
        return cls(data[:, 0], cols, int(meta["n"]), 2 * math.pi * float(meta["f0"]),
                   float(meta["E0"]), float(meta["dt"]))


# ---------------------------------------------------------------- simulator

class Simulator:
    """Owns the discretized controllers and plant matrices of one scenario."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        cfg = scenario.config
        self.config = cfg
        self.n = n = cfg.n
        self.dt = dt = scenario.time_step
        self.layout = PlantLayout(n)
        w0 = cfg.nominal_frequency
        self.w0 = w0
        kv, kc = [], []
        for k in range(n):
            c = cfg.controller_for(k).realized()
            kv.append(discretize(c.voltage_controller, dt, w0))
            kc.append(discretize(c.current_controller, dt, w0))
        self.Av, self.Bv, self.Cv, self.Dv = stack_realizations(kv)
        self.Ac, self.Bc, self.Cc, self.Dc = stack_realizations(kc)
        self.owner_v = np.repeat(np.arange(n), [r.state_dimension for r in kv])
        self.owner_c = np.repeat(np.arange(n), [r.state_dimension for r in kc])
        invs = cfg.inverters
        self.rv = np.array([inv.virtual_resistance for inv in invs])
        self.vdc = np.array([inv.dc_link_voltage for inv in invs])
        self.estar = cfg.nominal_voltage_magnitude
        self.ndroop = np.array([d.droop_coefficient for d in cfg.droop])
        self.full = cfg.full_droop
        wp = np.array([d.power_filter_bandwidth for d in cfg.droop])
        if np.any(wp * dt >= 0.1):
            raise ValueError("time step too large for the power filter")
        self.a_lpf = -np.expm1(-wp * dt)
        if self.full:
            self.mq = np.array([d.q_droop_coefficient for d in cfg.droop])
            self.qstar = np.array([d.reactive_power_reference for d in cfg.droop])
            self.wstar = np.array([d.nominal_frequency for d in cfg.droop])
        self._cache = {}

    # -- plant matrices per topology and load
    def discrete_plant(self, load: LoadModel, connected) -> tuple:
        key = (load, tuple(bool(c) for c in connected))
        hit = self._cache.get(key)
        if hit is None:
            pm = plant_matrices(self.config, load, connected)
            if self.scenario.method == "exact":
                phi, gam = zoh_discretize(pm.A, pm.B, self.dt)
            else:
                phi, gam = rk4_matrices(pm.A, pm.B, self.dt)
            hit = (pm, phi, gam)
            self._cache[key] = hit
        return hit

    # -- initial conditions
    def _blank_state(self) -> SimulationState:
        n, sc = self.n, self.scenario
        cfg = self.config
        return SimulationState(
            time=0.0, x=np.zeros(self.layout.dim), xv=np.zeros(self.Av.shape[0]),
            xc=np.zeros(self.Ac.shape[0]),
            filtered_power=np.array([d.active_power_reference for d in cfg.droop]),
            magnitude=np.full(n, self.estar), v_hat=np.zeros(n, complex), i_hat=np.zeros(n, complex),
            droop_phase=np.array([c.phase_offset for c in cfg.clocks], float),
            ramp_start=np.zeros(n), enabled=np.array(sc.initially_enabled),
            connected=np.array(sc.initially_connected) & np.array(sc.initially_enabled),
            power_reference=np.array([d.active_power_reference for d in cfg.droop]),
            clocks=list(cfg.clocks), load=cfg.load.as_series_rl(), v_inv=np.zeros(n))

    def initial_state(self) -> SimulationState:
        st = self._blank_state()
        if self.scenario.initial == "zero":
            return st
        st.ramp_start[:] = -math.inf
        conn = st.connected
        E = np.full(self.n, self.estar)
        if conn.any():
            idx = np.flatnonzero(conn)
            sub = replace(self.config, inverters=[self.config.inverters[k] for k in idx],
                          droop=[self.config.droop[k] for k in idx],
                          clocks=[self.config.clocks[k] for k in idx])
            eq = droop_equilibrium(sub)
            E[idx] = eq.voltage_magnitudes
        st.magnitude = E
        theta = np.array([c.phase_offset for c in self.config.clocks])
        R = np.where(st.enabled, E * np.exp(1j * theta), 0.0)
        z = self.periodic_steady_state(st, R)
        d = self.layout.dim
        nv = self.Av.shape[0]
        st.x = z[:d].imag.copy()
        st.xv = z[d:d + nv].imag.copy()
        st.xc = z[d + nv:].imag.copy()
        lay = self.layout
        V = z[lay.v]
        pm, _, _ = self.discrete_plant(st.load, conn)
        I = pm.current_rows @ z[:d]
        S = 0.5 * V * np.conj(I)
        st.filtered_power = np.where(conn, S.real, st.power_reference)
        st.v_hat = V * np.exp(-1j * theta)
        st.i_hat = I * np.exp(-1j * theta)
        st.magnitude = np.where(conn, np.clip(self.estar - self.ndroop * (st.filtered_power - st.power_reference),
                                              CLAMP_LOW * self.estar, CLAMP_HIGH * self.estar), self.estar)
        st.v_inv = self._control(st, update=False)
        return st

    def linear_step_matrices(self, st: SimulationState):
        """Closed-loop map z+ = M z + N v_ref for fixed topology, no droop or clamp."""
        pm, phi, gam = self.discrete_plant(st.load, st.connected)
        d, nv, nc = self.layout.dim, self.Av.shape[0], self.Ac.shape[0]
        lay = self.layout
        Ci = pm.current_rows
        Vsel = np.zeros((self.n, d))
        Vsel[np.arange(self.n), lay.v] = 1.0
        Lsel = np.zeros((self.n, d))
        Lsel[np.arange(self.n), lay.iL] = 1.0
        en = st.enabled.astype(float)
        # e = vref - Rv i - v
        Ez = np.hstack([-(self.rv[:, None] * Ci) - Vsel, np.zeros((self.n, nv + nc))])
        Er = np.eye(self.n)
        # i_ref = Cv xv + Dv e + i
        Irz = self.Dv[:, None] * Ez + np.hstack([Ci, self.Cv, np.zeros((self.n, nc))])
        Irr = self.Dv[:, None] * Er
        Ecz = Irz - np.hstack([Lsel, np.zeros((self.n, nv + nc))])
        Ecr = Irr
        Uz = self.Dc[:, None] * Ecz + np.hstack([Vsel, np.zeros((self.n, nv)), self.Cc])
        Ur = self.Dc[:, None] * Ecr
        Uz *= en[:, None]
        Ur *= en[:, None]
        m = d + nv + nc
        M = np.zeros((m, m))
        N = np.zeros((m, self.n))
        M[:d] = np.hstack([phi, np.zeros((d, nv + nc))]) + gam @ Uz
        N[:d] = gam @ Ur
        M[d:d + nv] = self.Bv @ Ez + np.hstack([np.zeros((nv, d)), self.Av, np.zeros((nv, nc))])
        N[d:d + nv] = self.Bv @ Er
        M[d + nv:] = self.Bc @ Ecz + np.hstack([np.zeros((nc, d + nv)), self.Ac])
        N[d + nv:] = self.Bc @ Ecr
        mv = en[self.owner_v]
        mc = en[self.owner_c]
        M[d:d + nv] *= mv[:, None]
        N[d:d + nv] *= mv[:, None]
        M[d + nv:] *= mc[:, None]
        N[d + nv:] *= mc[:, None]
        return M, N

    def periodic_steady_state(self, st: SimulationState, R: np.ndarray) -> np.ndarray:
        """Complex amplitude Z with z_n = Im(Z e^{j w0 n dt}) for v_ref = Im(R e^{j w0 t})."""
        M, N = self.linear_step_matrices(st)
        lam = np.exp(1j * self.w0 * self.dt)
        return np.linalg.solve(lam * np.eye(M.shape[0]) - M, N @ R)

    # -- one step
    def _phases(self, st: SimulationState, t: float) -> np.ndarray:
        if self.full:
            return st.droop_phase
        return np.array([clk.unwrapped_phase(c, t, self.w0) for c in st.clocks])

    def _control(self, st: SimulationState, update: bool = True) -> np.ndarray:
        """Controller outputs at the current sample; advances controller states if `update`."""
        pm, _, _ = self.discrete_plant(st.load, st.connected)
        lay = self.layout
        x = st.x
        v = x[lay.v]
        iL = x[lay.iL]
        i = pm.current_rows @ x
        th = self._phases(st, st.time)
        ramp = np.clip((st.time - st.ramp_start) * self.w0 / (2 * math.pi), 0.0, 1.0) * st.enabled
        vref = st.magnitude * ramp * np.sin(th)
        e = vref - self.rv * i - v
        iref = self.Cv @ st.xv + self.Dv * e + i
        ec = iref - iL
        vinv = self.Cc @ st.xc + self.Dc * ec + v
        vinv = np.clip(vinv, -self.vdc, self.vdc) * st.enabled
        if update:
            st.xv = (self.Av @ st.xv + self.Bv @ e) * st.enabled[self.owner_v]
            st.xc = (self.Ac @ st.xc + self.Bc @ ec) * st.enabled[self.owner_c]
            # measurements
            p = v * i
            a = self.a_lpf
            st.filtered_power = np.where(st.connected, st.filtered_power + a * (p - st.filtered_power),
                                         st.power_reference)
            rot = 2j * np.exp(-1j * th)
            st.v_hat = st.v_hat + a * (rot * v - st.v_hat)
            st.i_hat = st.i_hat + a * (rot * i - st.i_hat)
            st.magnitude = np.clip(self.estar - self.ndroop * (st.filtered_power - st.power_reference),
                                   CLAMP_LOW * self.estar, CLAMP_HIGH * self.estar)
            if self.full:
                q = 0.5 * np.imag(st.v_hat * np.conj(st.i_hat))
                w = self.wstar + self.mq * (self.qstar - q)
                st.droop_phase = st.droop_phase + w * self.dt
        return vinv

    def advance(self, st: SimulationState) -> None:
        """In-place single step (events at this instant must already be applied)."""
        vinv = self._control(st, update=True)
        _, phi, gam = self.discrete_plant(st.load, st.connected)
        st.x = phi @ st.x + gam @ vinv
        st.v_inv = vinv
        st.step_index += 1
        st.time = st.step_index * self.dt
        if not (np.all(np.isfinite(st.x)) and np.all(np.isfinite(st.xv)) and np.all(np.isfinite(st.xc))):
            raise SimulationError(f"non-finite state at t={st.time:.6g}s")

    def step(self, st: SimulationState) -> SimulationState:
        new = st.copy()
        try:
            self.advance(new)
        except SimulationError as exc:
            exc.snapshot = st
            raise
        return new

    # -- events
    def apply_event(self, st: SimulationState, ev: Event) -> None:
        k = ev.index
        t = st.time
        lay = self.layout
        if ev.kind in ("enable", "connect") and not st.enabled[k]:
            st.enabled[k] = True
            st.ramp_start[k] = t
            st.xv[self.owner_v == k] = 0.0
            st.xc[self.owner_c == k] = 0.0
        if ev.kind == "connect":
            st.connected[k] = True
            st.x[lay.ib[k]] = 0.0
        elif ev.kind == "disconnect":
            st.connected[k] = False
            st.x[lay.ib[k]] = 0.0
            st.filtered_power[k] = st.power_reference[k]
        elif ev.kind == "load_step":
            st.load = ev.payload.as_series_rl()
            if st.load.kind != "series-rl":
                st.x[lay.il] = 0.0
        elif ev.kind == "clock_event":
            kind, value = ev.payload
            st.clocks = clk.apply_event(st.clocks, clk.ClockEvent(t, k, kind, value), self.w0)
        elif ev.kind == "set_power_reference":
            st.power_reference[k] = float(ev.payload)
            if not st.connected[k]:
                st.filtered_power[k] = st.power_reference[k]
        pm, _, _ = self.discrete_plant(st.load, st.connected)
        if pm.case == "B":
            # all PCC currents are inductor states: keep them consistent with the load
            st.x[lay.il] = st.x[lay.ib][st.connected].sum()

    # -- full run
    def run(self, state: SimulationState | None = None) -> SimulationTrace:
        # divergence is reported through SimulationError, not numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            return self._run(state)

    def _run(self, state: SimulationState | None) -> SimulationTrace:
        sc = self.scenario
        st = self.initial_state() if state is None else state.copy()
        n = self.n
        steps = sc.steps
        dec = sc.decimate
        pending = sorted(sc.events, key=lambda e: e.time)
        ev_steps = [int(round(e.time / self.dt)) for e in pending]
        samples = steps // dec + 1
        lay = self.layout
        out_v = np.empty((samples, n))
        out_i = np.empty((samples, n))
        out_iL = np.empty((samples, n))
        out_E = np.empty((samples, n))
        out_P = np.empty((samples, n))
        out_Q = np.empty((samples, n))
        out_pcc = np.empty(samples)
        out_vinv = np.empty((samples, n))
        out_il = np.empty(samples)

        def assemble(j):
            t = np.arange(j) * self.dt * dec
            cols = {"v_pcc": out_pcc[:j]}
            for k in range(n):
                cols[f"v{k + 1}"] = out_v[:j, k]
                cols[f"i{k + 1}"] = out_i[:j, k]
                cols[f"iL{k + 1}"] = out_iL[:j, k]
                cols[f"E{k + 1}"] = out_E[:j, k]
                cols[f"P{k + 1}"] = out_P[:j, k]
                cols[f"Q{k + 1}"] = out_Q[:j, k]
            for a, b in combinations(range(n), 2):
                cols[f"icirc_{a + 1}{b + 1}"] = 0.5 * (out_i[:j, a] - out_i[:j, b])
            return SimulationTrace(t, cols, n, self.w0, self.estar, self.dt * dec,
                                   tuple(e.time for e in pending),
                                   {"v_inv": out_vinv[:j], "i_load": out_il[:j]})

        ei = 0
        j = 0
        last_good = st.copy()
        try:
            for s in range(steps + 1):
                while ei < len(pending) and ev_steps[ei] == s:
                    self.apply_event(st, pending[ei])
                    ei += 1
                pm, phi, gam = self.discrete_plant(st.load, st.connected)
                if s % dec == 0:
                    x = st.x
                    out_v[j] = x[lay.v]
                    out_i[j] = pm.current_rows @ x
                    out_iL[j] = x[lay.iL]
                    out_E[j] = st.magnitude
                    out_P[j] = st.filtered_power
                    out_Q[j] = 0.5 * np.imag(st.v_hat * np.conj(st.i_hat))
                    out_pcc[j] = pm.pcc_row @ x
                    out_il[j] = pm.load_row @ x
                if s == steps:
                    if s % dec == 0:
                        out_vinv[j] = self._control(st, update=False)
                        j += 1
                    break
                vinv = self._control(st, update=True)
                if s % dec == 0:
                    out_vinv[j] = vinv
                    j += 1
                st.x = phi @ st.x + gam @ vinv
                st.v_inv = vinv
                st.step_index += 1
                st.time = st.step_index * self.dt
                if not np.all(np.isfinite(st.x)):
                    raise SimulationError(f"non-finite state at t={st.time:.6g}s", last_good)
                if s % 1000 == 0:
                    last_good = st
                    st = st.copy()
        except SimulationError as exc:
            exc.partial_trace = assemble(j)
            raise
        self.final_state = st
        return assemble(j)


def run(scenario: Scenario) -> SimulationTrace:
    return Simulator(scenario).run()


def step(state: SimulationState, config: MicrogridConfig, dt: float, method: str = "exact",
         simulator: Simulator | None = None) -> SimulationState:
    """Advance `state` by one step of length `dt` (pure: returns a new state)."""
    sim = simulator or Simulator(Scenario(config, duration=dt, time_step=dt, method=method,
                                          initially_connected=tuple(state.connected),
                                          initially_enabled=tuple(state.enabled)))
    if not math.isclose(sim.dt, dt, rel_tol=1e-12):
        raise ValueError("dt must equal the scenario time step")
    return sim.step(state)


# ---------------------------------------------------------------- metrics

def _snap_periods(window: float, dt: float, f0: float) -> tuple[int, int]:
    """Largest usable number of whole periods within `window` and its sample count.

    Among the candidates, prefer the count of periods that spans the closest
    to an integer number of samples.
    """
    T = 1.0 / f0
    m_max = int(math.floor(window / T + 1e-9))
    if m_max < 1:
        raise ValueError("window shorter than one fundamental period")
    best = None
    for m in range(m_max, 0, -1):
        ns = m * T / dt
        err = abs(ns - round(ns))
        if best is None or err < best[2] - 1e-9:
            best = (m, int(round(ns)), err)
        if err < 1e-6:
            break
    return best[0], best[1]


def harmonic_phasors(x: np.ndarray, dt: float, f0: float, periods: int) -> np.ndarray:
    """Sine-convention harmonic phasors c_h (h = 0..) of the last `periods` periods."""
    ns = int(round(periods / f0 / dt))
    seg = x[-ns:]
    spec = np.fft.rfft(seg) / ns
    # x = Im(X e^{j h w t}) -> rfft bin = -j X/2 ... up to the window start phase
    return spec[::periods] * 2j


def thd(x: np.ndarray, dt: float, f0: float = 60.0, periods: int | None = None) -> float:
    """Total harmonic distortion over an integer number of periods."""
    if periods is None:
        periods, _ = _snap_periods(len(x) * dt, dt, f0)
    c = harmonic_phasors(np.asarray(x, float), dt, f0, periods)
    fund = abs(c[1])
    if fund == 0:
        raise ValueError("signal has no fundamental component")
    return float(np.sqrt(np.sum(np.abs(c[2:]) ** 2)) / fund)


def fundamental_phasor(t: np.ndarray, x: np.ndarray, omega0: float) -> complex:
    """Least-squares phasor X with x ~ Im(X e^{j w0 t}) over the given samples."""
    s, c = np.sin(omega0 * t), np.cos(omega0 * t)
    return complex(2.0 * np.mean(x * s), 2.0 * np.mean(x * c))


def zero_crossing_frequency(t: np.ndarray, x: np.ndarray) -> float:
    """Frequency from upward zero crossings (linear interpolation)."""
    idx = np.flatnonzero((x[:-1] < 0) & (x[1:] >= 0))
    if len(idx) < 2:
        return math.nan
    tc = t[idx] - x[idx] * (t[idx + 1] - t[idx]) / (x[idx + 1] - x[idx])
    return (len(tc) - 1) / (tc[-1] - tc[0])


def frequency_track(trace: SimulationTrace, column: str, cycles: int = 10,
                    hop_cycles: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Sliding zero-crossing frequency estimate over `cycles` periods."""
    f0 = trace.nominal_frequency / (2 * math.pi)
    dt = trace.sample_time
    win = int(round(cycles / f0 / dt))
    hop = max(1, int(round(hop_cycles / f0 / dt)))
    x = trace[column]
    t = trace.time
    ends, freqs = [], []
    for end in range(win, len(t) + 1, hop):
        ends.append(t[end - 1])
        freqs.append(zero_crossing_frequency(t[end - win:end], x[end - win:end]))
    return np.array(ends), np.array(freqs)


def cycle_envelope(x: np.ndarray, samples_per_period: int) -> np.ndarray:
    """Trailing one-period maximum of |x|."""
    w = max(1, samples_per_period)
    return maximum_filter1d(np.abs(x), size=w, origin=(w - 1) // 2, mode="nearest")


def settling_time(t: np.ndarray, x: np.ndarray, event_time: float, f0: float,
                  band: float = 0.1, end_time: float | None = None) -> float:
    """Time after `event_time` until the cycle-peak envelope of |x| stays within
    `band` (fraction) of its final value up to `end_time`."""
    dt = t[1] - t[0]
    spp = int(round(1.0 / f0 / dt))
    stop = len(t) if end_time is None else int(np.searchsorted(t, end_time, side="right"))
    env = cycle_envelope(x[:stop], spp)
    tt = t[:stop]
    final = float(np.mean(env[-spp:]))
    after = tt >= event_time - 1e-12
    outside = np.flatnonzero(after & (np.abs(env - final) > band * abs(final)))
    if outside.size == 0:
        return 0.0
    last = outside[-1]
    if last + 1 >= len(tt):
        return math.inf
    return float(tt[last + 1] - event_time)


@dataclass
class MetricsReport:
    P: np.ndarray
    Q: np.ndarray
    voltage_phasors: np.ndarray
    current_phasors: np.ndarray
    pcc_phasor: complex
    pcc_regulation_error: float
    p_share: dict
    q_share: dict
    circulating: dict
    thd: dict
    frequency: np.ndarray
    settling_time: dict
    window: tuple
    synchronous: bool = True

    def as_dict(self) -> dict:
        d = {"window_start": self.window[0], "window_end": self.window[1],
             "pcc_regulation_error": self.pcc_regulation_error,
             "pcc_magnitude": abs(self.pcc_phasor), "synchronous": float(self.synchronous)}
        for k in range(len(self.P)):
            d[f"P{k + 1}"] = self.P[k]
            d[f"Q{k + 1}"] = self.Q[k]
            d[f"V{k + 1}"] = abs(self.voltage_phasors[k])
            d[f"I{k + 1}"] = abs(self.current_phasors[k])
            d[f"f{k + 1}"] = self.frequency[k]
        for (a, b), v in self.p_share.items():
            d[f"p_share_{a}{b}"] = v
        for (a, b), v in self.q_share.items():
            d[f"q_share_{a}{b}"] = v
        for (a, b), v in self.circulating.items():
            d[f"icirc_{a}{b}"] = v
        for key, v in self.thd.items():
            d[f"thd_{key}"] = v
        for key, v in self.settling_time.items():
            d[f"settling_{key}"] = v
        return d

    def report(self) -> str:
        return "\n".join(f"{k}={v:.9g}" for k, v in self.as_dict().items())


def measure_metrics(trace: SimulationTrace, window: float, end_time: float | None = None,
                    event_time: float | None = None, band: float = 0.1,
                    sync_tolerance: float = 1e-3) -> MetricsReport:
    """Cycle-averaged steady-state metrics over `window` seconds ending at `end_time`.

    Energized inverters whose measured frequencies differ by more than
    `sync_tolerance` (relative) have no common steady state; their settling
    times are infinite.
    """
    f0 = trace.nominal_frequency / (2 * math.pi)
    dt = trace.sample_time
    periods, ns = _snap_periods(window, dt, f0)
    if not math.isclose(periods / f0, window, rel_tol=1e-9):
        warnings.warn(f"window {window:g}s snapped down to {periods} periods", stacklevel=2)
    stop = len(trace.time) if end_time is None else int(np.searchsorted(trace.time, end_time + 1e-12))
    if stop < ns:
        raise ValueError("trace shorter than the metrics window")
    sl = slice(stop - ns, stop)
    t = trace.time[sl]
    w0 = trace.nominal_frequency
    n = trace.n
    v = trace.matrix("v")[sl]
    i = trace.matrix("i")[sl]
    V = np.array([fundamental_phasor(t, v[:, k], w0) for k in range(n)])
    I = np.array([fundamental_phasor(t, i[:, k], w0) for k in range(n)])
    P = np.mean(v * i, axis=0)
    Q = 0.5 * np.imag(V * np.conj(I))
    pcc = fundamental_phasor(t, trace["v_pcc"][sl], w0)
    pairs = list(combinations(range(1, n + 1), 2))
    p_share = {(a, b): float(P[a - 1] / P[b - 1]) if P[b - 1] != 0 else math.nan for a, b in pairs}
    q_share = {(a, b): float(Q[a - 1] / Q[b - 1]) if Q[b - 1] != 0 else math.nan for a, b in pairs}
    circ = {(a, b): abs(I[a - 1] - I[b - 1]) / 2 for a, b in pairs}
    th = {}
    for k in range(n):
        seg = v[:, k]
        th[f"v{k + 1}"] = thd(seg, dt, f0, periods) if abs(V[k]) > 0 else math.nan
    th["v_pcc"] = thd(trace["v_pcc"][sl], dt, f0, periods) if abs(pcc) > 0 else math.nan
    fwin = int(round(min(10, max(2, periods)) / f0 / dt))
    freq = np.array([zero_crossing_frequency(trace.time[stop - fwin:stop], trace[f"v{k + 1}"][stop - fwin:stop])
                     for k in range(n)])
    live = freq[np.isfinite(freq)]
    synchronous = bool(live.size == 0 or np.ptp(live) <= sync_tolerance * f0)
    st = {}
    if event_time is not None:
        for k in range(n):
            st[f"i{k + 1}"] = (settling_time(trace.time[:stop], trace[f"i{k + 1}"][:stop], event_time, f0, band)
                               if synchronous else math.inf)
    return MetricsReport(P, Q, V, I, pcc, abs(pcc) / trace.nominal_voltage - 1.0, p_share, q_share,
                         circ, th, freq, st, (float(t[0]), float(t[-1])), synchronous)
