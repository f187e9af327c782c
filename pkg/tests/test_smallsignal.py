import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import E0, W0
from vpdroop.acceptance import linearization_step_change, load_scenario
from vpdroop.controller import loaded_poles
from vpdroop.droop import DroopParams, FullDroopParams
from vpdroop.net_model import InverterElectrical, LoadModel, MicrogridConfig
from vpdroop.smallsignal import (EnvelopeModel, OperatingPointError, _block_rotation, analyze, apply_axis,
                                 eigen_csv, eigen_report, envelope_dynamics, linearize, operating_point,
                                 read_eigen_csv, rotation, stability_sweep)
from vpdroop.steady_state import solve_brute_force


def fig5():
    return load_scenario("fig5_eigen").config


def rl_pair():
    return MicrogridConfig((InverterElectrical(), InverterElectrical(branch_resistance=0.3)),
                           LoadModel("series-rl", 11.52, 0.02293), E0,
                           droop=(DroopParams(2e-4, 700, E0), DroopParams(2e-4, 500, E0)))


def single(n=0.0, load=LoadModel("resistive", 24.0), r=0.2):
    return MicrogridConfig((InverterElectrical(branch_resistance=r),), load, E0,
                           droop=(DroopParams(n, 500.0, E0),))


def match_distance(a, b):
    """Largest distance from any point of `a` to its nearest point in `b`, relative."""
    a, b = np.asarray(a), np.asarray(b)
    d = np.abs(a[:, None] - b[None, :]).min(axis=1)
    return float(np.max(d / np.maximum(1.0, np.abs(a))))


@pytest.mark.parametrize("make", [fig5, rl_pair], ids=["inductive-lines", "rl-load"])
def test_fixed_point_matches_phasor_solution(make):
    cfg = make()
    op = operating_point(cfg)
    E = op.equilibrium.voltage_magnitudes
    sol = solve_brute_force(E, cfg)
    for k in range(cfg.n):
        assert op.envelope(f"v{k + 1}") == pytest.approx(sol.voltages[k], rel=1e-8)
        assert op.envelope(f"iL{k + 1}") == pytest.approx(
            sol.currents[k] + 1j * W0 * cfg.inverters[k].filter_capacitance * sol.voltages[k], rel=1e-8)
        assert op.envelope(f"P{k + 1}").real == pytest.approx(sol.active_power[k], rel=1e-8)
    assert op.residual < 1e-8
    assert np.max(np.abs(envelope_dynamics(op.state, cfg))) < 1e-6 * np.max(np.abs(op.state))


def test_symmetric_no_droop_at_nominal():
    cfg = MicrogridConfig((InverterElectrical(),) * 2, LoadModel("resistive", 24.0), E0)
    op = operating_point(cfg)
    assert op.equilibrium.voltage_magnitudes == pytest.approx([E0, E0])


def test_single_inverter_eigenvalues_are_shifted_closed_loop_poles():
    cfg = single()
    _, lm, rep = analyze(cfg)
    ctrl = cfg.controller_for(0).realized()
    poles = loaded_poles(cfg.inverters[0], ctrl, 24.0 + 0.2)
    want = np.concatenate([poles - 1j * W0, poles + 1j * W0, [-cfg.droop[0].power_filter_bandwidth]])
    assert len(rep.eigenvalues) == len(want)
    assert match_distance(rep.eigenvalues, want) < 1e-4
    assert match_distance(want, rep.eigenvalues) < 1e-4


def test_lpf_eigenvalue_near_filter_bandwidth():
    _, _, rep = analyze(fig5())
    wp = 2 * math.pi
    near = rep.eigenvalues[np.abs(rep.eigenvalues.imag) < 1e-6]
    near = near[np.abs(near.real + wp) < 0.2 * wp]
    assert len(near) == 2


def test_open_load_limit_of_single_inverter():
    cfg = single(load=LoadModel("resistive", 1e9))
    _, _, rep = analyze(cfg)
    ctrl = cfg.controller_for(0).realized()
    poles = loaded_poles(cfg.inverters[0], ctrl, 1e12)
    want = np.concatenate([poles - 1j * W0, poles + 1j * W0, [-2 * math.pi]])
    assert match_distance(rep.eigenvalues, want) < 1e-4


def test_weak_lines_decouple_inverters():
    far = 1e7
    pair = MicrogridConfig((InverterElectrical(branch_resistance=far),) * 2, LoadModel("resistive", 24.0), E0)
    alone = MicrogridConfig((InverterElectrical(branch_resistance=far),), LoadModel("resistive", 24.0), E0)
    ev_pair = analyze(pair)[2].eigenvalues
    ev_alone = analyze(alone)[2].eigenvalues
    assert len(ev_pair) == 2 * len(ev_alone)
    assert match_distance(ev_pair, ev_alone) < 1e-4


@given(st.floats(-math.pi, math.pi))
def test_rotations_orthonormal(theta):
    r = rotation(theta)
    assert np.allclose(r.T @ r, np.eye(2), atol=1e-12)
    model = EnvelopeModel(fig5())
    T = _block_rotation(model, 0, theta)
    assert np.allclose(T.T @ T, np.eye(len(T)), atol=1e-12)


def test_zero_angle_rotation_is_identity():
    assert np.array_equal(rotation(0.0), np.eye(2))
    _, lm, _ = analyze(fig5())
    assert all(np.array_equal(r, np.eye(2)) for r in lm.rotation_maps)


def test_structured_and_direct_assembly_agree():
    cfg = apply_axis(fig5(), "clock_angle", 3.0)
    op = operating_point(cfg)
    a = linearize(op, cfg, structured=True)
    b = linearize(op, cfg, structured=False)
    assert a.assembly == "structured" and b.assembly == "direct"
    ea, eb = np.linalg.eigvals(a.system_matrix), np.linalg.eigvals(b.system_matrix)
    assert match_distance(ea, eb) < 1e-6
    with pytest.raises(ValueError):
        linearize(operating_point(rl_pair()), rl_pair(), structured=True)


def test_step_halving_is_consistent():
    assert linearization_step_change() < 1e-4


def test_fig5_config_stable_and_clock_sweep():
    cfg = fig5()
    assert analyze(cfg)[2].stable
    pts = stability_sweep(cfg, "clock_angle", [-5.0, 0.0, 5.0])
    assert all(p.report is not None and p.report.stable for p in pts)


def test_droop_gain_to_zero_limit():
    cfg = fig5()
    small = analyze(apply_axis(cfg, "droop_gain", 1e-9))[2].eigenvalues
    none = analyze(apply_axis(cfg, "droop_gain", 0.0))[2].eigenvalues
    assert match_distance(small, none) < 1e-6


def test_diagonal_matrix_report():
    rep = eigen_report(np.diag([-1.0, -2.0]))
    assert sorted(rep.eigenvalues.real) == [-2.0, -1.0]
    assert rep.stable and rep.spectral_abscissa == -1.0 and rep.dominant_mode_label == "x1"
    assert not eigen_report(np.diag([1.0, -2.0])).stable


def test_sweep_records_failures_and_continues():
    pts = stability_sweep(fig5(), "virtual_resistance", [0.2, -1.0, 0.3])
    assert pts[0].report is not None and pts[2].report is not None
    assert pts[1].report is None and "ValueError" in pts[1].error
    with pytest.raises(ValueError):
        stability_sweep(fig5(), "bogus", [1.0])
    with pytest.raises(ValueError):
        stability_sweep(fig5(), "droop_gain", [])


def test_eigen_csv_round_trip():
    pts = stability_sweep(fig5(), "load_pf", [1.0, 0.8])
    rows = read_eigen_csv(eigen_csv(pts, "load_pf"))
    assert len(rows) == sum(len(p.report.eigenvalues) for p in pts)
    ev = np.array([complex(float(r["re"]), float(r["im"])) for r in rows if float(r["parameter"]) == 0.8])
    want = pts[1].report.eigenvalues
    assert len(ev) == len(want)
    assert match_distance(ev, want) < 1e-10 and match_distance(want, ev) < 1e-10
    with pytest.raises(ValueError):
        read_eigen_csv("re,im\n")


def test_load_pf_axis_keeps_apparent_power():
    cfg = fig5()
    z = abs(cfg.load.impedance)
    out = apply_axis(cfg, "load_pf", 0.8)
    assert abs(out.load.impedance) == pytest.approx(z, rel=1e-12)
    assert math.cos(out.load.power_factor_angle) == pytest.approx(0.8)


def test_full_droop_has_no_envelope_model():
    base = fig5()
    droop = tuple(FullDroopParams(d.droop_coefficient, d.active_power_reference, E0, q_droop_coefficient=1e-3)
                  for d in base.droop)
    with pytest.raises(OperatingPointError):
        operating_point(base.with_(droop=droop))
