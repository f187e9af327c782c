import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import E0, W0
from oracles import millman
from vpdroop.clock import ClockModel
from vpdroop.droop import DroopParams
from vpdroop.net_model import DomainError, InverterElectrical, LoadModel, MicrogridConfig
from vpdroop.steady_state import (EquilibriumError, circulating_current, delta_budget, droop_equilibrium,
                                  phase_difference_approx, phase_difference_exact, sharing_ratios,
                                  solve_brute_force, solve_closed_form, theorem_statement_voltage)

FIELDS = ("current_amplitude", "current_phase", "voltage_amplitude", "voltage_phase", "active_power",
          "reactive_power")


def config(rs, rvs, load, droop=(), clocks=()):
    invs = tuple(InverterElectrical(branch_resistance=r, virtual_resistance=v) for r, v in zip(rs, rvs))
    return MicrogridConfig(invs, load, E0, droop=droop, clocks=clocks)


def assert_solutions_equal(a, b, rel=1e-10):
    scale = max(np.max(np.abs(a.currents)), 1e-300)
    assert np.max(np.abs(a.currents - b.currents)) <= rel * scale
    assert np.max(np.abs(a.voltages - b.voltages)) <= rel * E0
    sscale = max(np.max(np.abs(a.complex_power)), 1e-300)
    assert np.max(np.abs(a.complex_power - b.complex_power)) <= rel * sscale
    assert abs(a.pcc_voltage - b.pcc_voltage) <= rel * E0


@given(st.sampled_from([1, 2, 3, 5, 8]), st.integers(0, 2**31),
       st.sampled_from(["resistive", "series-rl"]))
def test_closed_form_equals_brute_force(n, seed, kind):
    rng = np.random.default_rng(seed)
    load = LoadModel(kind, rng.uniform(2, 80), rng.uniform(0, 0.05) if kind == "series-rl" else 0.0)
    cfg = config(rng.uniform(0.02, 2, n), rng.uniform(0, 1, n), load)
    E = E0 * rng.uniform(0.9, 1.1, n)
    a, b = solve_closed_form(E, cfg), solve_brute_force(E, cfg)
    assert_solutions_equal(a, b)
    assert a.kcl_residual() < 1e-9 and b.kcl_residual() < 1e-9


def test_brute_force_matches_millman():
    rng = np.random.default_rng(3)
    cfg = config(rng.uniform(0.05, 1, 4), rng.uniform(0, 0.5, 4), LoadModel("series-rl", 12, 0.03))
    E = E0 * rng.uniform(0.95, 1.05, 4)
    sol = solve_brute_force(E, cfg)
    z = [i.branch_resistance + i.virtual_resistance for i in cfg.inverters]
    v, I = millman(E, z, sol.intermediate.load_impedance)
    assert sol.pcc_voltage == pytest.approx(v, rel=1e-12)
    assert np.allclose(sol.currents, I, rtol=1e-12, atol=0)


def test_table_case_matches_oracle(table_pair):
    E = np.array([169.7, 169.7])
    assert_solutions_equal(solve_closed_form(E, table_pair), solve_brute_force(E, table_pair))


def test_resistive_load_zero_phases():
    cfg = config([0.1, 0.5, 0.3], [0.2, 0.0, 0.4], LoadModel("resistive", 20.0))
    sol = solve_closed_form(E0 * np.array([1.0, 0.998, 1.002]), cfg)
    assert np.all(sol.currents.real > 0)
    assert np.allclose(sol.current_phase, 0, atol=1e-12)
    assert np.allclose(sol.voltage_phase, 0, atol=1e-12)


def test_symmetric_pair_current():
    cfg = config([0.2, 0.2], [0.2, 0.2], LoadModel("resistive", 24.0))
    sol = solve_closed_form([E0, E0], cfg)
    assert sol.current_amplitude == pytest.approx([E0 / (0.4 + 2 * 24)] * 2, rel=1e-12)


def test_single_inverter_divider():
    cfg = MicrogridConfig((InverterElectrical(branch_resistance=0.5, virtual_resistance=0.5),),
                          LoadModel("resistive", 9.0), 100.0)
    sol = solve_brute_force([100.0], cfg)
    assert sol.current_amplitude[0] == pytest.approx(10.0)
    assert sol.pcc_voltage == pytest.approx(90.0)


def test_reactive_load_currents_lag_by_quarter_cycle():
    cfg = config([0.2, 0.3], [0.0, 0.0], LoadModel("complex-at-w0", 1e-12, reactance=10.0))
    sol = solve_brute_force([E0, E0], cfg)
    lag = np.angle(sol.pcc_voltage / sol.load_current)
    assert lag == pytest.approx(math.pi / 2, abs=1e-9)


def test_invalid_inputs():
    cfg = config([0.2], [0.2], LoadModel())
    with pytest.raises(DomainError):
        solve_closed_form([-1.0], cfg)
    with pytest.raises(ValueError):
        solve_brute_force([1.0, 2.0], cfg)


def test_general_voltage_form_on_resistive_load():
    cfg = config([0.2, 0.2], [0.2, 0.2], LoadModel("resistive", 24.0))
    sol = solve_closed_form([E0, 0.99 * E0], cfg)
    for k in range(2):
        e, i = abs(sol.references[k]), sol.current_amplitude[k]
        assert sol.voltage_amplitude[k] == pytest.approx(e - 0.2 * i, rel=1e-12)
        stated = theorem_statement_voltage(e, 0.2, i)
        assert stated == pytest.approx(math.hypot(e - 0.2 * i, 0.2 * i))
        assert stated > sol.voltage_amplitude[k]


@given(st.integers(0, 2**31))
def test_phase_difference_exact_matches_phasors(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    cfg = config(rng.uniform(0.05, 1, n), rng.uniform(0, 0.5, n),
                 LoadModel("series-rl", rng.uniform(2, 40), rng.uniform(0.001, 0.05)))
    sol = solve_brute_force(E0 * rng.uniform(0.9, 1.1, n), cfg)
    for k in range(n):
        for j in range(n):
            want = np.angle(sol.currents[k] / sol.currents[j])
            got = phase_difference_exact(sol, k, j)
            assert abs((got - want + math.pi) % (2 * math.pi) - math.pi) < 1e-9


def test_phase_difference_examples(table_pair):
    sol = solve_brute_force([169.7, 169.7], table_pair)
    assert phase_difference_exact(sol, 0, 1) == pytest.approx(0, abs=1e-14)
    res = config([0.2, 0.5], [0.2, 0.2], LoadModel("resistive", 24.0))
    sol = solve_brute_force([E0, 0.999 * E0], res)
    assert phase_difference_exact(sol, 0, 1) == pytest.approx(0, abs=1e-14)
    # a branch absorbing power sits half a turn away
    sol = solve_brute_force([E0, 0.95 * E0], res)
    assert abs(phase_difference_exact(sol, 0, 1)) == pytest.approx(math.pi, abs=1e-14)
    sol = solve_brute_force([171.0, 168.0], table_pair)
    want = np.angle(sol.currents[0] / sol.currents[1])
    assert phase_difference_exact(sol, 0, 1) == pytest.approx(want, abs=1e-9)
    with pytest.raises(IndexError):
        phase_difference_exact(sol, 0, 2)


def test_phase_difference_approx_examples(table_pair):
    assert float(phase_difference_approx(table_pair, 0.01, 0.01)) == 0.0
    res = config([0.2, 0.2], [0.2, 0.2], LoadModel("resistive", 24.0))
    assert float(phase_difference_approx(res, 0.01, -0.01)) == 0.0


def test_phase_difference_approx_warning():
    weak = config([0.2, 0.2], [0.2, 0.2], LoadModel("series-rl", 0.5, 0.001))
    assert phase_difference_approx(weak, 0.01, 0.0).warning is not None
    strong = config([0.01, 0.01], [0.0, 0.0], LoadModel("series-rl", 20, 0.02))
    assert phase_difference_approx(strong, 0.01, 0.0).warning is None


def test_delta_budget(table_pair):
    eps = 0.087
    zl = complex(11.52, W0 * 0.02293)
    want = eps * (2 / 0.4) / abs(zl) / math.sin(math.atan2(zl.imag, zl.real))
    assert delta_budget(table_pair, eps) == pytest.approx(want, rel=1e-12)
    doubled = config([0.4, 0.4], [0.4, 0.4], table_pair.load)
    assert delta_budget(doubled, eps) == pytest.approx(want / 2, rel=1e-12)
    assert delta_budget(config([0.2], [0.2], LoadModel("resistive", 24)), eps) == math.inf
    assert delta_budget(table_pair, eps, form="corollary") == pytest.approx(
        eps / (abs(zl) * math.sin(math.atan2(zl.imag, zl.real)) * 5), rel=1e-12)


@given(st.integers(0, 2**31))
def test_power_balance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    rs = rng.uniform(0.05, 1, n)
    cfg = config(rs, rng.uniform(0, 0.5, n), LoadModel("series-rl", rng.uniform(2, 40), rng.uniform(0, 0.05)))
    sol = solve_brute_force(E0 * rng.uniform(0.9, 1.1, n), cfg)
    pcc = 0.5 * sol.pcc_voltage * np.conj(sol.load_current)
    line = 0.5 * np.sum(rs * sol.current_amplitude ** 2)
    total = sol.complex_power.sum()
    assert abs(total - (pcc + line)) <= 1e-9 * abs(total)


@given(st.integers(0, 2**31))
def test_resistive_load_no_reactive_power(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    cfg = config(rng.uniform(0.05, 1, n), rng.uniform(0, 0.5, n), LoadModel("resistive", rng.uniform(2, 60)))
    sol = solve_closed_form(E0 * rng.uniform(0.8, 1.2, n), cfg)
    assert np.all(np.abs(sol.reactive_power) <= 1e-9 * 600)


def droop_config(pstars, n=2e-4, load=LoadModel("series-rl", 11.52, 0.02293)):
    return config([0.2] * len(pstars), [0.2] * len(pstars), load,
                  droop=tuple(DroopParams(n, p, E0) for p in pstars))


def test_equilibrium_exact_fixed_point():
    base = droop_config([0.0, 0.0], n=0.0)
    p = solve_brute_force([E0, E0], base).active_power
    eq = droop_equilibrium(droop_config(list(p)))
    assert eq.iterations == 1
    assert eq.voltage_magnitudes == pytest.approx([E0, E0], abs=1e-9)


def test_equilibrium_satisfies_droop_law(resistive_pair):
    eq = droop_equilibrium(resistive_pair)
    P = eq.solution.active_power
    for k, d in enumerate(resistive_pair.droop):
        assert eq.voltage_magnitudes[k] == pytest.approx(
            E0 - d.droop_coefficient * (P[k] - d.active_power_reference), abs=1e-9)
    assert eq.residual < 1e-10


@given(st.floats(100, 800), st.floats(1, 200))
def test_equilibrium_monotone_in_reference(p1, dp):
    a = droop_equilibrium(droop_config([p1, 400.0], n=5e-3))
    b = droop_equilibrium(droop_config([p1 + dp, 400.0], n=5e-3))
    assert b.voltage_magnitudes[0] > a.voltage_magnitudes[0]
    assert b.solution.active_power[0] > a.solution.active_power[0]


def test_equilibrium_failure_carries_history():
    with pytest.raises(EquilibriumError) as info:
        droop_equilibrium(droop_config([600.0, 0.0], n=0.05), max_iter=2, tol=0.0)
    err = info.value
    assert len(err.residual_history) >= 2 and len(err.last_iterate) == 2


def test_circulating_current_examples():
    sym = config([0.2, 0.2], [0.2, 0.2], LoadModel("series-rl", 11.52, 0.02293))
    sol = solve_brute_force([E0, E0], sym)
    assert abs(circulating_current(sol, 0, 1)) < 1e-12
    res = config([0.2, 0.2], [0.2, 0.2], LoadModel("resistive", 24.0))
    sol = solve_brute_force([E0, 0.98 * E0], res)
    c = circulating_current(sol, 0, 1)
    assert abs(c) > 0.01
    assert abs((c / sol.currents[0]).imag) < 1e-12


def test_clock_offset_rotates_reference():
    cfg = config([0.2, 0.2], [0.2, 0.2], LoadModel("resistive", 24.0),
                 clocks=(ClockModel(math.radians(5)), ClockModel()))
    sol = solve_closed_form([E0, E0], cfg)
    assert np.angle(sol.references[0]) == pytest.approx(math.radians(5))
    assert_solutions_equal(sol, solve_brute_force([E0, E0], cfg))


def test_sharing_ratios(table_pair):
    sol = solve_brute_force([E0, 0.99 * E0], table_pair)
    p, q = sharing_ratios(sol)
    assert p == pytest.approx(sol.active_power[0] / sol.active_power[1])
    assert q == pytest.approx(sol.reactive_power[0] / sol.reactive_power[1])
