import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import W0
from oracles import bilinear, inverter_phasor_response
from vpdroop.controller import (ControllerSet, RationalTransferFunction, SIM_KP_CURRENT, SIM_KP_VOLTAGE,
                                UnboundedValueError, closed_loop_blocks, closed_loop_polynomials,
                                default_controllers, design_simulation_gains, discretize, evaluate,
                                loaded_poles, loop_bandwidths, printed_controllers, simulation_controllers,
                                verify_internal_model)
from vpdroop.net_model import InverterElectrical

TF = RationalTransferFunction
PLANT = InverterElectrical()


def test_evaluate_examples():
    assert evaluate(TF((1,), (1, 1)), 0) == 1
    assert evaluate(TF((1, 2), (1, 1)), 1) == pytest.approx(1.5)
    with pytest.raises(UnboundedValueError):
        evaluate(printed_controllers().current_controller, 1j * W0)
    assert math.isinf(evaluate(TF((1,), (1, 1)), -1, allow_infinite=True).real)


def test_printed_factors():
    c = printed_controllers()
    kv, kc = c.voltage_controller, c.current_controller
    zeros = np.sort_complex(kv.zeros())
    quad = np.roots([1, 3328, 8.895e6])
    want = np.sort_complex(np.concatenate([[0, -3139, -1172], quad]))
    assert np.allclose(zeros, want, rtol=1e-6, atol=1e-6)
    poles = kc.poles()
    assert np.min(np.abs(poles + 6468)) < 1e-6 * 6468
    assert np.min(np.abs(poles - 1j * W0)) < 1e-6 * W0
    assert np.min(np.abs(poles + 1j * W0)) < 1e-6 * W0
    assert kc.num[0] == pytest.approx(38403, rel=1e-12)
    assert not kv.is_proper


def test_printed_identity_at_fundamental():
    blk = closed_loop_blocks(PLANT, printed_controllers(), 1j * W0)
    assert abs(blk.G_k - 1) < 1e-6
    assert abs(blk.Z_k - 0.2) < 1e-6
    blk0 = closed_loop_blocks(PLANT, printed_controllers(virtual_resistance=0.0), 1j * W0)
    assert abs(blk0.Z_k) < 1e-6


@pytest.mark.parametrize("ctrl", [printed_controllers(), default_controllers(), simulation_controllers()],
                         ids=["printed", "retuned", "simulation"])
def test_blocks_match_loop_equation_oracle(ctrl):
    for s in (1j * W0 * 1.3, 500 + 2000j, 1j * 2 * math.pi * 3000):
        blk = closed_loop_blocks(PLANT, ctrl, s)
        g = inverter_phasor_response(PLANT.filter_inductance, PLANT.filter_esr, PLANT.filter_capacitance,
                                     ctrl.virtual_resistance, ctrl.voltage_controller,
                                     ctrl.current_controller, s, 1.0, 0.0)
        z = -inverter_phasor_response(PLANT.filter_inductance, PLANT.filter_esr, PLANT.filter_capacitance,
                                      ctrl.virtual_resistance, ctrl.voltage_controller,
                                      ctrl.current_controller, s, 0.0, 1.0)
        assert blk.G_k == pytest.approx(g, rel=1e-9)
        assert blk.Z_k == pytest.approx(z, rel=1e-9)
        assert blk.T_k == pytest.approx(1 - blk.S_k, abs=1e-15)


def test_retuned_printed_bandwidths():
    cur, vol = loop_bandwidths(PLANT, default_controllers())
    assert cur == pytest.approx(980, rel=0.15)
    assert vol == pytest.approx(600, rel=0.15)
    # the printed gains themselves are far off the stated bandwidths
    cur_p, vol_p = loop_bandwidths(PLANT, printed_controllers())
    assert cur_p > 3 * 980 and vol_p > 3 * 600


def test_retuned_printed_roots_unchanged():
    p, d = printed_controllers(), default_controllers()
    assert np.allclose(np.sort_complex(p.voltage_controller.zeros()),
                       np.sort_complex(d.voltage_controller.zeros()), rtol=1e-6)
    assert np.allclose(np.sort_complex(p.current_controller.poles()),
                       np.sort_complex(d.current_controller.poles()), rtol=1e-6)


def test_retuned_printed_set_unstable_under_resistive_load():
    poles = loaded_poles(PLANT, default_controllers(), 24.0)
    assert poles.real.max() > 0


def test_simulation_controllers():
    c = simulation_controllers()
    assert verify_internal_model(c)
    cur, vol = loop_bandwidths(PLANT, c)
    assert cur == pytest.approx(980, rel=1e-3)
    assert vol == pytest.approx(600, rel=1e-3)
    blk = closed_loop_blocks(PLANT, c, 1j * W0)
    assert abs(blk.G_k - 1) < 1e-12 and abs(blk.Z_k - 0.2) < 1e-12
    for r in np.geomspace(0.01, 1e5, 30):
        assert loaded_poles(PLANT, c, r).real.max() < 0


def test_design_reproduces_shipped_gains():
    kpc, kpv = design_simulation_gains(PLANT)
    assert kpc == pytest.approx(SIM_KP_CURRENT, rel=1e-9)
    assert kpv == pytest.approx(SIM_KP_VOLTAGE, rel=1e-9)


def test_verify_internal_model_examples():
    assert verify_internal_model(printed_controllers())
    assert not verify_internal_model(ControllerSet(TF((1,), (1, 1)), TF((1,), (1,))))
    assert not verify_internal_model(printed_controllers(omega0=2 * math.pi * 50), W0)
    assert not verify_internal_model(printed_controllers(), 2 * math.pi * 50)


def random_resonant_controller(rng):
    kv = TF.from_factors(rng.uniform(1e-4, 1e-2), zeros=-rng.uniform(100, 5000, 2),
                         poles=[-rng.uniform(1e3, 2e4)], den_polys=[[1, 0, W0 ** 2]])
    kc = TF.from_factors(rng.uniform(0.1, 5), zeros=[-rng.uniform(100, 5000)], poles=[-rng.uniform(1e3, 2e4)])
    return ControllerSet(kv, kc, rng.uniform(0, 0.5))


@pytest.mark.parametrize("seed", range(20))
def test_internal_model_identity_randomized(seed):
    rng = np.random.default_rng(seed)
    ctrl = random_resonant_controller(rng)
    plant = InverterElectrical(filter_inductance=rng.uniform(0.03e-3, 3e-3), filter_esr=rng.uniform(0, 0.2),
                               filter_capacitance=rng.uniform(0.5e-6, 50e-6))
    blk = closed_loop_blocks(plant, ctrl, 1j * W0)
    assert abs(blk.G_k - 1) < 1e-9
    assert abs(blk.Z_k - ctrl.virtual_resistance) < 1e-9
    p = closed_loop_polynomials(plant, ctrl)
    _, rem = np.polydiv(p.S_num, np.polymul([1, 0], [1, 0, W0 ** 2]))
    assert np.linalg.norm(rem) < 1e-6 * np.linalg.norm(p.S_num) * W0 ** 2


def test_discretize_static_gain():
    d = discretize(TF((3.0,), (1.0,)), 1e-5)
    assert d.state_dimension == 0 and d.feedthrough == 3.0


def test_discretize_resonant_poles_on_unit_circle():
    Ts = 1e-5
    d = discretize(TF((1, 0), (1, 0, W0 ** 2)), Ts, W0)
    poles = np.linalg.eigvals(d.state_update_matrix)
    assert np.allclose(np.abs(poles), 1, atol=1e-12)
    assert np.sort(np.abs(np.angle(poles))) == pytest.approx([W0 * Ts, W0 * Ts], rel=1e-9)


def test_discretize_first_order_pole():
    Ts = 1e-5
    d = discretize(TF((1000,), (1, 1000)), Ts, W0)
    pole = np.linalg.eigvals(d.state_update_matrix)[0]
    assert pole == pytest.approx(bilinear(-1000, Ts, W0), rel=1e-12)
    assert pole == pytest.approx((1 - 0.005) / (1 + 0.005), rel=1e-6)


def test_discretize_rejects_improper():
    with pytest.raises(ValueError):
        discretize(printed_controllers().voltage_controller, 1e-5)


@pytest.mark.parametrize("ctrl", [simulation_controllers(), printed_controllers().realized()],
                         ids=["simulation", "printed"])
def test_discretize_matches_at_prewarp_and_radius(ctrl):
    for tf in (ctrl.voltage_controller, ctrl.current_controller):
        d = discretize(tf, 1e-5, W0)
        assert d.spectral_radius() <= 1 + 1e-9
        w = 2 * math.pi * 2500.0  # away from the resonant poles
        near = discretize(tf, 1e-5, w)
        assert near.frequency_response(w) == pytest.approx(evaluate(tf, 1j * w), rel=1e-9)


@given(st.floats(10, 1e4), st.floats(10, 1e4), st.floats(0.1, 10))
def test_discretize_preserves_dc_gain(z, p, k):
    tf = TF.from_factors(k, zeros=[-z], poles=[-p, -2 * p])
    d = discretize(tf, 1e-5, W0)
    dc = d.frequency_response(0.0)
    assert dc == pytest.approx(evaluate(tf, 0.0), rel=1e-7)  # discrete poles sit near z = 1
