import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btbsim.devices import (DieselGen, GflInverter, GfmInverter, Reference, diesel_step, gfl_step, gfm_step,
                            power_sharing_check)
from btbsim.engine import Event, SimConfig, Simulation
from conftest import VLN, one_bus

V_BAL = tuple(VLN * cmath.exp(1j * a) for a in (0.0, -2 * math.pi / 3, 2 * math.pi / 3))


def test_gfm_frequency_at_reference_is_nominal():
    g = GfmInverter("g", "b", 3e6, VLN, p_ref=0.7e6)
    assert g.frequency(0.7e6) == 60.0


def test_gfm_droop_hand_value():
    g = GfmInverter("g", "b", 3e6, VLN, m_p=0.01)
    assert g.frequency(1.5e6) == pytest.approx(59.70, abs=1e-12)


@settings(max_examples=100)
@given(p1=st.floats(-3e6, 3e6), p2=st.floats(-3e6, 3e6))
def test_gfm_droop_monotone(p1, p2):
    g = GfmInverter("g", "b", 3e6, VLN)
    if p1 < p2:
        assert g.frequency(p1) >= g.frequency(p2)


def test_gfm_overload_event_fires_once():
    g = GfmInverter("g", "b", 1e6, VLN)
    g.p_f = 1.3e6
    assert [e.kind for e in g.discrete_update(0.0, 1e-3, V_BAL)] == ["OVERLOAD"]
    assert g.discrete_update(1e-3, 1e-3, V_BAL) == []


def test_gfm_null_equilibrium():
    # no load, EMF in phase with the terminal: zero power, nominal frequency
    g = GfmInverter("g", "b", 3e6, VLN)
    s = gfm_step(g, V_BAL, 1e-3)
    assert abs(s) < 1e-6
    assert g.frequency() == 60.0 and g.emf_magnitude() == pytest.approx(VLN)


def test_gfl_zero_command_zero_current():
    pv = GflInverter("pv", "b", 1.6e6, VLN)
    assert np.all(gfl_step(pv, V_BAL, 1e-3) == 0)


def test_gfl_ramp_oracle():
    pv = GflInverter("pv", "b", 1.6e6, VLN, ramp=160e3)
    pv.p_schedule.set(0.0, 1.6e6)
    dt = 1e-3
    for k in range(12_000):
        gfl_step(pv, V_BAL, dt, k * dt)
        t = (k + 1) * dt
        assert pv.p_out == pytest.approx(min(160e3 * t, 1.6e6), rel=1e-9, abs=1e-6)


def test_gfl_idle_on_dead_bus():
    pv = GflInverter("pv", "b", 1.6e6, VLN, p_cmd=1e6)
    events = pv.discrete_update(0.0, 1e-3, (0j, 0j, 0j))
    assert [e.kind for e in events] == ["IDLE"]
    assert pv.power() == 0


def test_gfl_current_limit_edge_triggered():
    pv = GflInverter("pv", "b", 1.6e6, VLN, p_cmd=1.6e6)
    low = tuple(0.8 * v for v in V_BAL)
    kinds = [e.kind for k in range(5) for e in pv.discrete_update(k * 1e-3, 1e-3, low)]
    assert kinds == ["CURRENT_LIMIT"]
    assert abs(pv.power()) == pytest.approx(3 * pv.i_limit * 0.8 * VLN)
    kinds = [e.kind for e in pv.discrete_update(1.0, 1e-3, V_BAL)]
    assert kinds == ["CURRENT_LIMIT_CLEAR"]


@settings(max_examples=50, deadline=None)
@given(target=st.floats(-1.6e6, 1.6e6), ramp=st.floats(1e4, 1e7), steps=st.integers(1, 300))
def test_gfl_ramp_rate_never_exceeded(target, ramp, steps):
    pv = GflInverter("pv", "b", 1.6e6, VLN, ramp=ramp)
    pv.p_schedule.set(0.0, target)
    prev = 0.0
    for k in range(steps):
        pv.discrete_update(k * 1e-3, 1e-3, V_BAL)
        assert abs(pv.p_out - prev) <= ramp * 1e-3 * (1 + 1e-12)
        prev = pv.p_out


@settings(max_examples=100)
@given(t0=st.floats(0, 10), span=st.floats(0.1, 10), a=st.floats(-1e6, 1e6), b=st.floats(-1e6, 1e6),
       t=st.floats(-1, 25))
def test_reference_ramp_piecewise_linear(t0, span, a, b, t):
    r = Reference()
    r.ramp(t0, t0 + span, a, b)
    v = r(t)
    assert min(a, b) - 1e-6 <= v <= max(a, b) + 1e-6
    if t >= t0 + span:
        assert v == b


def test_diesel_equilibrium_holds():
    g = DieselGen("dg", "b", 3e6, VLN)
    g.synchronize(V_BAL)
    x0 = g.state()
    diesel_step(g, V_BAL, 1e-3)
    assert g.state() == pytest.approx(x0, abs=1e-12)


def test_diesel_trip_beyond_speed_band():
    g = DieselGen("dg", "b", 3e6, VLN)
    g.dw = 0.051
    assert [e.kind for e in g.discrete_update(0.0, 1e-3, V_BAL)] == ["TRIP"]
    assert not g.online


def test_swing_oracle_without_damping():
    # small-signal: delta'' = -w0 * K / (2H) * delta with K = 1/xd on the device base at E = V
    g = DieselGen("dg", "b", 3e6, VLN, d=0.0, r=1e9)
    g.delta = 0.01
    dt = 1e-3
    deltas = []
    for _ in range(5000):
        diesel_step(g, V_BAL, dt)
        deltas.append(g.delta)
    up = np.flatnonzero(np.diff(np.sign(deltas)) > 0)
    period = float(np.mean(np.diff(up))) * dt
    oracle = 2 * math.pi / math.sqrt(g.w0 / g.xd_pu / (2 * g.h))
    assert period == pytest.approx(oracle, rel=1e-2)
    # lossless swing: the amplitude neither grows nor decays appreciably
    assert max(np.abs(deltas[-300:])) == pytest.approx(0.01, rel=0.02)


def test_isolated_diesel_governor_droop():
    dg = DieselGen("dg", "b", 3e6, VLN, r=0.03)
    sim = Simulation(one_bus(300), [dg], [], [Event(1.0, "energize", "ld")],
                     SimConfig(duration=30.0, decimation=100))
    rec = sim.run().record
    # steady-state governor algebra: -R * dP / rating * f0
    assert rec["dg.f"][-1] - 60.0 == pytest.approx(-0.03 * 300e3 / 3e6 * 60.0, abs=1e-4)
    assert rec["dg.f"][-1] - 60.0 == pytest.approx(-0.18, abs=1e-4)


def test_power_sharing_single_device_consistent():
    g = GfmInverter("g", "b", 3e6, VLN)
    assert power_sharing_check([g], {"g": 1.234e6}).consistent


def test_inverse_droop_sharing_algebra_and_simulation():
    bess = GfmInverter("bess", "b", 3e6, VLN, m_p=0.01)
    dg = DieselGen("dg", "b", 3e6, VLN, r=0.03)
    # common frequency: dP_i = rating_i / droop_i * df / f0  -> shares 3:1
    share = {"bess": 400e3 * (1 / 0.01) / (1 / 0.01 + 1 / 0.03), "dg": 400e3 * (1 / 0.03) / (1 / 0.01 + 1 / 0.03)}
    assert share["bess"] == pytest.approx(300e3) and share["dg"] == pytest.approx(100e3)
    assert power_sharing_check([bess, dg], share).consistent
    assert not power_sharing_check([bess, dg], {"bess": 200e3, "dg": 200e3}).consistent
    sim = Simulation(one_bus(400), [bess, dg], [], [Event(1.0, "energize", "ld")],
                     SimConfig(duration=30.0, decimation=100))
    rec = sim.run().record
    assert rec["bess.P"][-1] == pytest.approx(300e3, rel=1e-4)
    assert rec["dg.P"][-1] == pytest.approx(100e3, rel=1e-4)
    assert power_sharing_check([bess, dg], {"bess": rec["bess.P"][-1], "dg": rec["dg.P"][-1]}).consistent
