"""Executable acceptance checks, one function per criterion.

Every check returns a :class:`CheckResult`; `run_all` runs a selection and
`format_table` renders the pass/fail table printed by ``vpdroop verify``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .config import ScenarioFile, parse_config
from .controller import closed_loop_blocks, printed_controllers
from .droop import DroopParams
from .net_model import InverterElectrical, LoadModel, MicrogridConfig
from .smallsignal import analyze, apply_axis, linearize, operating_point, stability_sweep
from .steady_state import (droop_equilibrium, phase_difference_approx, phase_difference_exact,
                           solve_brute_force, solve_closed_form)
from .timedomain import (Event, Scenario, Simulator, frequency_track, integrate_plant,
                         measure_metrics, plant_matrices, thd)

SEED = 20240607


@dataclass(frozen=True)
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    runtime: float
    limit: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:>2} {self.name}: {self.detail} ({self.runtime:.1f}s / {self.limit:g}s)"


def scenario_text(name: str) -> str:
    return resources.files("vpdroop").joinpath("scenarios", f"{name}.cfg").read_text()


def load_scenario(name: str, overrides=()) -> ScenarioFile:
    return parse_config(scenario_text(name), overrides)


def _timed(number: int, name: str, limit: float, fn) -> CheckResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    rt = time.perf_counter() - t0
    if rt >= limit:
        ok = False
        detail += f"; runtime {rt:.1f}s over the {limit:g}s budget"
    return CheckResult(number, name, bool(ok), detail, rt, limit)


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def _wrap(x):
    return (np.asarray(x) + math.pi) % (2 * math.pi) - math.pi


# ---------------------------------------------------------------- 1

def check_internal_model_identity() -> tuple[bool, str]:
    plant = InverterElectrical()
    ctrl = printed_controllers()
    blk = closed_loop_blocks(plant, ctrl, 1j * 2 * math.pi * 60)
    eg = abs(blk.G_k - 1.0)
    ez = abs(blk.Z_k - ctrl.virtual_resistance)
    return eg < 1e-6 and ez < 1e-6, f"|G-1|={eg:.2e}, |Z-Rv|={ez:.2e} ohm"


# ---------------------------------------------------------------- 2

def random_config(rng: np.random.Generator, n: int, load_kind: str = "any") -> MicrogridConfig:
    """Random resistive-branch network around the prototype values."""
    estar = 120 * math.sqrt(2)
    invs = tuple(InverterElectrical(branch_resistance=rng.uniform(0.02, 1.0),
                                    virtual_resistance=rng.uniform(0.0, 0.6))
                 for _ in range(n))
    kind = load_kind if load_kind != "any" else rng.choice(["resistive", "series-rl", "complex-at-w0"])
    r = rng.uniform(2.0, 60.0)
    if kind == "resistive":
        load = LoadModel("resistive", r)
    elif kind == "series-rl":
        load = LoadModel("series-rl", r, rng.uniform(1e-3, 0.05))
    else:
        load = LoadModel("complex-at-w0", r, reactance=rng.uniform(-20.0, 20.0))
    droop = tuple(DroopParams(rng.uniform(0.0, 5e-4), rng.uniform(100, 800), estar) for _ in range(n))
    return MicrogridConfig(invs, load, estar, droop=droop)


def _solution_error(a, b) -> float:
    return max(_rel(a.currents, b.currents), _rel(a.voltages, b.voltages),
               _rel(a.complex_power, b.complex_power),
               abs(a.pcc_voltage - b.pcc_voltage) / abs(b.pcc_voltage))


def check_oracle_equivalence(count: int = 100, seed: int = SEED) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    sizes = (1, 2, 3, 5, 8)
    worst = 0.0
    for c in range(count):
        cfg = random_config(rng, sizes[c % len(sizes)])
        E = cfg.nominal_voltage_magnitude * rng.uniform(0.9, 1.1, cfg.n)
        worst = max(worst, _solution_error(solve_closed_form(E, cfg), solve_brute_force(E, cfg)))
    return worst < 1e-10, f"{count} configs, max relative error {worst:.2e}"


# ---------------------------------------------------------------- 3

def exact_phase_error(count: int = 100, seed: int = SEED) -> float:
    rng = np.random.default_rng(seed + 1)
    sizes = (2, 3, 5, 8)
    worst = 0.0
    for c in range(count):
        cfg = random_config(rng, sizes[c % len(sizes)],
                            load_kind=("series-rl", "complex-at-w0")[c % 2])
        E = cfg.nominal_voltage_magnitude * rng.uniform(0.9, 1.1, cfg.n)
        sol = solve_brute_force(E, cfg)
        I = sol.currents
        for k in range(cfg.n):
            for j in range(k + 1, cfg.n):
                ref = float(np.angle(I[k] / I[j]))
                worst = max(worst, abs(float(_wrap(phase_difference_exact(sol, k, j) - ref))))
    return worst


def corollary_error(count: int = 100, seed: int = SEED) -> tuple[float, int]:
    """Worst relative error of the small-deviation estimate in its stated regime."""
    rng = np.random.default_rng(seed + 2)
    estar = 120 * math.sqrt(2)
    worst, used = 0.0, 0
    while used < count:
        n = int(rng.choice([2, 3, 5]))
        invs = tuple(InverterElectrical(branch_resistance=rng.uniform(0.05, 0.3),
                                        virtual_resistance=rng.uniform(0.05, 0.3)) for _ in range(n))
        load = LoadModel("series-rl", rng.uniform(5.0, 40.0), rng.uniform(5e-3, 0.05))
        cfg = MicrogridConfig(invs, load, estar)
        adm = solve_brute_force(np.full(n, estar), cfg, include_branch_inductance=False).intermediate
        if abs(adm.load_impedance * adm.lambda_sum) < 50:
            continue
        delta = rng.uniform(-0.01, 0.01, n)
        if abs(delta[0] - delta[1]) < 2e-3:
            continue
        sol = solve_brute_force(estar * (1 + delta), cfg, include_branch_inductance=False)
        exact = phase_difference_exact(sol, 0, 1)
        approx = phase_difference_approx(cfg, delta[0], delta[1]).value
        worst = max(worst, abs(approx - exact) / abs(exact))
        used += 1
    return worst, used


def check_phase_difference() -> tuple[bool, str]:
    e = exact_phase_error()
    c, used = corollary_error()
    return e < 1e-9 and c < 0.05, (f"exact formula max error {e:.2e} rad; "
                                   f"approximation max relative error {c:.3g} over {used} configs")


# ---------------------------------------------------------------- simulation helpers

def simulate(sf: ScenarioFile, **changes):
    sc = replace(sf.scenario, **changes) if changes else sf.scenario
    return Simulator(sc).run()


def _metrics(trace, sf: ScenarioFile, end_time=None, window=None):
    m = sf.metrics
    return measure_metrics(trace, window or m.window, end_time if end_time is not None else m.end_time,
                           m.event_time, m.band)


# ---------------------------------------------------------------- 4

def check_resistive_reactive() -> tuple[bool, str]:
    sf = load_scenario("q_zero_resistive")
    rep = _metrics(simulate(sf), sf)
    rated = np.array([inv.rated_apparent_power for inv in sf.config.inverters])
    frac = np.abs(rep.Q) / rated
    return bool(np.all(frac < 0.005)), (f"|Q| = {', '.join(f'{q:.3g}' for q in np.abs(rep.Q))} var "
                                        f"(max {100 * frac.max():.3g}% of rated)")


# ---------------------------------------------------------------- 5

def equilibrium_agreement(trace, sf: ScenarioFile, rep=None) -> tuple[float, float]:
    """Worst amplitude (relative) and phase (rad) gap between a trace and the equilibrium."""
    rep = rep or _metrics(trace, sf)
    sol = droop_equilibrium(sf.config).solution
    amp, ph = 0.0, 0.0
    for sim, eq in ((rep.voltage_phasors, sol.voltages), (rep.current_phasors, sol.currents),
                    (np.array([rep.pcc_phasor]), np.array([sol.pcc_voltage]))):
        amp = max(amp, float(np.max(np.abs(np.abs(sim) - np.abs(eq)) / np.abs(eq))))
        ph = max(ph, float(np.max(np.abs(_wrap(np.angle(sim) - np.angle(eq))))))
    return amp, ph


def check_fig4() -> tuple[bool, str]:
    sf = load_scenario("fig4")
    tr = simulate(sf)
    rep = _metrics(tr, sf)
    ps, qs = rep.p_share[(1, 2)], rep.q_share[(1, 2)]
    dev = rep.pcc_regulation_error
    amp, ph = equilibrium_agreement(tr, sf, rep)
    ok = (1.02 <= ps <= 1.12 and 0.83 <= qs <= 0.93 and -0.01 <= dev <= 0.0
          and amp < 0.01 and math.degrees(ph) < 0.5)
    return ok, (f"P share {ps:.4f} (want 1.02..1.12), Q share {qs:.4f} (want 0.83..0.93), "
                f"PCC deviation {100 * dev:.3f}% (want -1..0), equilibrium gap "
                f"{100 * amp:.3f}% / {math.degrees(ph):.3f} deg")


# ---------------------------------------------------------------- 6

def mismatched_line_sweep(ratios, sf: ScenarioFile | None = None) -> np.ndarray:
    sf = sf or load_scenario("mismatched_lines")
    cfg = sf.config
    r1 = cfg.inverters[0].branch_resistance
    out = []
    for ratio in ratios:
        invs = (cfg.inverters[0], replace(cfg.inverters[1], branch_resistance=r1 * ratio))
        sol = droop_equilibrium(cfg.with_(inverters=invs)).solution
        out.append(sol.reactive_power[0] / sol.reactive_power[1])
    return np.array(out)


def check_mismatched_lines() -> tuple[bool, str]:
    band = np.linspace(1.0, 0.6, 9)
    q_band = mismatched_line_sweep(band)
    q_half, q_tenth = mismatched_line_sweep([0.5, 0.1])
    dense = mismatched_line_sweep(np.linspace(1.0, 0.1, 46))
    monotone = bool(np.all(np.diff(dense) < 0))
    ok = (np.all((q_band >= 0.9) & (q_band <= 1.03)) and abs(q_half - 0.868) <= 0.05
          and abs(q_tenth - 0.735) <= 0.07 and monotone)
    return bool(ok), (f"Q share {q_band.min():.3f}..{q_band.max():.3f} for r2/r1 in [0.6, 1] "
                      f"(want 0.9..1.03), {q_half:.3f} at 0.5 (want 0.868+-0.05), "
                      f"{q_tenth:.3f} at 0.1 (want 0.735+-0.07), monotone={monotone}")


# ---------------------------------------------------------------- 7

def stage_windows(sf: ScenarioFile) -> list[tuple[float, list[int]]]:
    """End time of every stage and the inverters connected during it."""
    sc = sf.scenario
    connected = set(np.flatnonzero(sc.initially_connected))
    stages = []
    for ev in sc.events:
        if ev.kind in ("connect", "disconnect", "load_step"):
            stages.append((ev.time, sorted(connected)))
        if ev.kind == "connect":
            connected.add(ev.index)
        elif ev.kind == "disconnect":
            connected.discard(ev.index)
    stages.append((sc.duration, sorted(connected)))
    return [(t, c) for t, c in stages if len(c) > 1]


def frequency_excursion(trace, sf: ScenarioFile, guard_cycles: int = 10) -> float:
    """Largest relative deviation from nominal of the sliding zero-crossing
    frequency of every energized voltage, skipping windows that touch an event."""
    f0 = trace.nominal_frequency / (2 * math.pi)
    span = guard_cycles / f0
    events = np.array([e.time for e in sf.scenario.events])
    worst = 0.0
    for col in ["v_pcc"] + [f"v{k + 1}" for k in range(trace.n)]:
        ends, f = frequency_track(trace, col, cycles=guard_cycles)
        clean = np.ones(len(ends), bool)
        for te in events:
            clean &= ~((ends >= te) & (ends - span <= te + 1.0 / f0))
        sel = clean & np.isfinite(f)
        if np.any(sel):
            worst = max(worst, float(np.max(np.abs(f[sel] / f0 - 1.0))))
    return worst


def check_plug_and_play() -> tuple[bool, str]:
    sf = load_scenario("plug_and_play")
    tr = simulate(sf)
    rated = 2 * np.array([inv.rated_apparent_power for inv in sf.config.inverters]) / sf.config.nominal_voltage_magnitude
    ok = True
    parts = []
    for end, conn in stage_windows(sf):
        rep = measure_metrics(tr, sf.metrics.window, end)
        P, Q, I = rep.P[conn], rep.Q[conn], rep.current_phasors[conn]
        p_dev = float(np.max(np.abs(P / P.mean() - 1.0)))
        q_ratio = float(Q.min() / Q.max())
        circ = max(abs(I[a] - I[b]) / 2 / rated[conn[a]] for a in range(len(conn)) for b in range(a + 1, len(conn)))
        ok &= p_dev <= 0.02 and q_ratio > 0.95 and circ < 0.05
        parts.append(f"t={end:g}s P dev {100 * p_dev:.2f}% Q ratio {q_ratio:.4f} circ {100 * circ:.2f}%")
    fx = frequency_excursion(tr, sf)
    ok &= fx <= 1e-4
    parts.append(f"max frequency deviation {fx:.1e} (relative)")
    return bool(ok), "; ".join(parts)


# ---------------------------------------------------------------- 8

def comparison_settling() -> tuple[dict, dict]:
    out = []
    for name in ("comparison_vpd", "comparison_full"):
        sf = load_scenario(name)
        rep = _metrics(simulate(sf), sf)
        out.append((rep.settling_time, rep.synchronous))
    return out[0], out[1]


def check_comparison() -> tuple[bool, str]:
    (vpd, _), (full, sync) = comparison_settling()
    t_vpd = max(vpd.values())
    t_full = max(full.values())
    ok = t_vpd <= 0.04 and t_full > t_vpd
    note = "" if sync else " (baseline never re-synchronizes)"
    return ok, f"VP-D settling {t_vpd:.4f}s (want <= 0.04), full droop {t_full:.4g}s{note}"


# ---------------------------------------------------------------- 9

def decay_rate(trace, column: str, event_time: float, start: float = 0.15, stop: float = 0.6) -> float:
    """Exponential decay rate of the cycle-averaged deviation from the final value."""
    f0 = trace.nominal_frequency / (2 * math.pi)
    spp = int(round(1.0 / f0 / trace.sample_time))
    x, t = trace[column], trace.time
    m = len(x) // spp
    xm = x[:m * spp].reshape(m, spp).mean(axis=1)
    tm = t[:m * spp].reshape(m, spp).mean(axis=1)
    final = xm[-5:].mean()
    sel = (tm > event_time + start) & (tm < event_time + stop)
    slope = np.polyfit(tm[sel], np.log(np.abs(xm[sel] - final)), 1)[0]
    return float(-slope)


def check_small_signal() -> tuple[bool, str]:
    sf = load_scenario("fig5_eigen")
    _, _, rep = analyze(sf.config)
    clock = stability_sweep(sf.config, "clock_angle", np.linspace(-5, 5, 11))
    clock_ok = all(p.report is not None and p.report.stable for p in clock)
    pf = stability_sweep(sf.config, "load_pf", np.linspace(1.0, 0.7, 7))
    sa = np.array([p.report.spectral_abscissa if p.report else math.nan for p in pf])
    monotone = bool(np.all(np.diff(sa) > 0))
    ev = sf.scenario.events[0].time
    measured = decay_rate(simulate(sf), "P1", ev)
    predicted = -rep.dominant_eigenvalue.real
    gap = abs(measured - predicted) / predicted
    ok = rep.stable and clock_ok and monotone and gap <= 0.2
    return ok, (f"abscissa {rep.spectral_abscissa:.4g} (dominant {rep.dominant_mode_label}); "
                f"clock sweep stable={clock_ok}; pf sweep abscissa {sa[0]:.4g}..{sa[-1]:.4g} "
                f"monotone={monotone}; decay {measured:.3f} vs {predicted:.3f} 1/s ({100 * gap:.1f}%)")


# ---------------------------------------------------------------- 10

def rk4_order_ratio(dt: float = 2e-7, t_end: float = 5e-4) -> float:
    """Terminal error ratio of the open-loop plant under RK4 for dt and dt/2."""
    cfg = MicrogridConfig((InverterElectrical(), InverterElectrical(branch_resistance=0.3)),
                          LoadModel("series-rl", 11.52, 0.02293), 120 * math.sqrt(2))
    w0 = cfg.nominal_frequency

    def u(t):
        return np.array([170 * math.sin(w0 * t), 165 * math.sin(w0 * t + 0.1)])

    x0 = np.zeros(plant_matrices(cfg, cfg.load, [True] * cfg.n).A.shape[0])
    ref = integrate_plant(cfg, x0, u, t_end, dt / 16, "rk4")
    e1 = np.linalg.norm(integrate_plant(cfg, x0, u, t_end, dt, "rk4") - ref)
    e2 = np.linalg.norm(integrate_plant(cfg, x0, u, t_end, dt / 2, "rk4") - ref)
    return float(e1 / e2)


def linearization_step_change(config: MicrogridConfig | None = None, step: float = 1e-6) -> float:
    cfg = config or load_scenario("fig5_eigen").config
    op = operating_point(cfg)
    a = linearize(op, cfg, step).system_matrix
    b = linearize(op, cfg, step / 2).system_matrix
    return _rel(b, a)


def thd_errors() -> tuple[float, float]:
    dt = 1e-5
    t = np.arange(int(round(10 / 60 / dt))) * dt
    w = 2 * math.pi * 60
    pure = thd(np.sin(w * t), dt)
    third = thd(np.sin(w * t) + 0.1 * np.sin(3 * w * t + 0.4), dt)
    return pure, abs(third - 0.1)


def rerun_identical() -> bool:
    sf = load_scenario("fig5_eigen")
    sc = replace(sf.scenario, duration=0.15)
    a, b = Simulator(sc).run(), Simulator(sc).run()
    return all(np.array_equal(a[c], b[c]) for c in a.column_names(a.n)) and np.array_equal(
        a.extras["v_inv"], b.extras["v_inv"])


def check_numerics() -> tuple[bool, str]:
    ratio = rk4_order_ratio()
    lin = linearization_step_change()
    pure, third = thd_errors()
    same = rerun_identical()
    ok = 12 <= ratio <= 20 and lin < 1e-4 and pure < 1e-9 and third <= 1e-6 and same
    return ok, (f"RK4 ratio {ratio:.2f} (want 12..20); linearization change {lin:.1e}; "
                f"THD pure {pure:.1e}, 10% third error {third:.1e}; bit-identical={same}")


# ---------------------------------------------------------------- registry

CHECKS = {
    1: ("internal-model identity", 1.0, check_internal_model_identity),
    2: ("closed form vs nodal oracle", 5.0, check_oracle_equivalence),
    3: ("phase-difference formula", 5.0, check_phase_difference),
    4: ("zero reactive power on resistive network", 60.0, check_resistive_reactive),
    5: ("two-inverter sharing scenario", 120.0, check_fig4),
    6: ("mismatched-line sweep", 30.0, check_mismatched_lines),
    7: ("plug-and-play", 180.0, check_plug_and_play),
    8: ("VP-D vs full droop settling", 180.0, check_comparison),
    9: ("small-signal stability", 120.0, check_small_signal),
    10: ("numerical hygiene", 120.0, check_numerics),
}


def run_check(number: int) -> CheckResult:
    name, limit, fn = CHECKS[number]
    try:
        return _timed(number, name, limit, fn)
    except Exception as exc:  # a crashing check is a failing check
        return CheckResult(number, name, False, f"error: {type(exc).__name__}: {exc}", math.nan, limit)


def run_all(numbers=None) -> list[CheckResult]:
    return [run_check(k) for k in (numbers or sorted(CHECKS))]


def format_table(results) -> str:
    return "\n".join(r.line() for r in results)
