import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btbsim.feeder import build_two_microgrid_system, read_feeder
from btbsim.netmodel import (PHASE_SHIFT, Branch, Bus, ConstantPowerLoad, DeviceInjections, NetworkModel,
                             PhasorSolver, RegulatorController, RegulatorSpec, TopologyError,
                             assemble_admittance, branch_losses, regulator_update, solve_network)

ABC = ("A", "B", "C")
Y_SRC = 1e4  # stiff Norton source admittance, siemens per phase


def _balanced(mag):
    return np.array([mag * PHASE_SHIFT[p] for p in ABC])


def two_bus(load_w, load_var=0.0, z=1 + 1j, closed=True):
    buses = (Bus("s", ABC, 2400.0, "device"), Bus("m", ABC, 2400.0, "load"))
    line = Branch("l", "s", "m", "line", ABC, z * np.eye(3), None)
    sw = Branch("sw", "s", "m", "switch", ABC, closed=False) if not closed else None
    loads = (ConstantPowerLoad("ld", "m", (complex(load_w, load_var) / 3,) * 3),)
    return NetworkModel(buses, (line,) + ((sw,) if sw else ()), loads)


def solve_two_bus(net, vs=2400.0, tol=1e-4):
    system = assemble_admittance(net, sources={"s": Y_SRC})
    inj = DeviceInjections.zeros(len(net.nodes))
    inj.source_current[net.bus_nodes("s")] = Y_SRC * _balanced(vs)
    for ld in net.loads:
        inj.load[net.bus_nodes(ld.bus)] += np.array(ld.power)
    return solve_network(system, inj, tol=tol)


def fixed_point_oracle(vs, z, s_phase, tol=1e-9):
    """V <- Vs - Z*conj(S/V) for one phase of a balanced radial pair."""
    v = complex(vs)
    for _ in range(10_000):
        nxt = vs - z * (s_phase / v).conjugate()
        if abs(nxt - v) < tol:
            return nxt
        v = nxt
    raise AssertionError("oracle did not converge")


def test_two_bus_matches_fixed_point_oracle():
    net = two_bus(100e3)
    sol = solve_two_bus(net)
    # source impedance 1/Y_SRC sits in series with the line
    z = (1 + 1j) + 1 / Y_SRC
    vm = fixed_point_oracle(2400.0, z, 100e3 / 3)
    assert sol.converged
    np.testing.assert_allclose(sol.bus_voltages("m"), vm * _balanced(1.0), rtol=1e-8)
    i_line = sol.branch_currents("l")
    np.testing.assert_allclose(i_line, np.conj(100e3 / 3 / (vm * _balanced(1.0))), rtol=1e-7)


@settings(max_examples=25, deadline=None)
@given(p=st.floats(0, 400e3), q=st.floats(-200e3, 200e3))
def test_two_bus_oracle_property(p, q):
    net = two_bus(p, q)
    sol = solve_two_bus(net)
    vm = fixed_point_oracle(2400.0, (1 + 1j) + 1 / Y_SRC, complex(p, q) / 3)
    np.testing.assert_allclose(sol.voltage("m", "A"), vm, rtol=1e-7)
    # consumed + lost equals injected by the ideal source
    v_s = sol.bus_voltages("s")
    i_src = Y_SRC * (_balanced(2400.0) - v_s)
    s_in = np.sum(v_s * np.conj(i_src))
    assert abs(s_in - complex(p, q) - branch_losses(sol)) < 1.0


def test_no_load_voltages_equal_source():
    net = two_bus(0.0)
    sol = solve_two_bus(net)
    np.testing.assert_allclose(np.abs(sol.voltages), 2400.0, rtol=1e-12)
    assert np.allclose(sol.branch_currents("l"), 0, atol=1e-9)


def test_closed_switch_merges_buses_and_open_splits():
    buses = (Bus("a", ABC, 2400.0), Bus("b", ABC, 2400.0))
    net = NetworkModel(buses, (Branch("sw", "a", "b", "switch", ABC),))
    closed = assemble_admittance(net)
    assert closed.n_islands == 1
    assert abs(closed.Y[0, 0]) >= 1e6
    opened = assemble_admittance(net, switches={"sw": False})
    assert opened.n_islands == 2


def test_dead_island_with_load_is_rejected():
    net = two_bus(10e3)
    system = assemble_admittance(net)  # no sources anywhere
    inj = DeviceInjections.zeros(len(net.nodes))
    inj.load[net.bus_nodes("m")] = 1e3
    with pytest.raises(TopologyError):
        PhasorSolver(system).solve(inj)


def test_chord_and_full_newton_agree():
    net = two_bus(300e3, 100e3)
    system = assemble_admittance(net, sources={"s": Y_SRC})
    inj = DeviceInjections.zeros(len(net.nodes))
    inj.source_current[net.bus_nodes("s")] = Y_SRC * _balanced(2400.0)
    inj.load[net.bus_nodes("m")] = 100e3 + 33e3j
    a = PhasorSolver(system, tol=1e-4).solve(inj)
    b = PhasorSolver(system, tol=1e-4, reuse_jacobian=False).solve(inj)
    np.testing.assert_allclose(a.voltages, b.voltages, rtol=1e-9)


def test_two_microgrid_topology():
    net = build_two_microgrid_system()
    # 13-node feeder copies with two laterals removed plus one mid-line node, and two BTB boundary nodes
    assert len(net.buses) == 28
    assert {"btb0", "btb1"} <= {b.id for b in net.buses}
    assert net.bus("634").nominal_voltage * math.sqrt(3) == pytest.approx(480.0)
    assert net.bus("6341").nominal_voltage * math.sqrt(3) == pytest.approx(480.0)
    xfm = net.branch("xfm1").transformer
    assert xfm.rating == 1e6 and xfm.ratio == pytest.approx(4160 / 480)
    islands = net.islands()
    assert len(islands) == 2  # tie closed: MG0 side and MG1 side
    btb_isl = [i for i in islands if "btb0" in i or "btb1" in i]
    assert all(not ({"btb0", "btb1"} <= i) for i in btb_isl)
    assert len(net.islands({"tie1": False})) == 3


def test_bundled_load_totals():
    data = read_feeder()
    assert sum(ld["kw"] for ld in data["loads"]) == pytest.approx(2598.0)
    assert sum(ld["kvar"] for ld in data["loads"]) == pytest.approx(1528.0)
    net = build_two_microgrid_system()
    mg0 = sum(ld.total for ld in net.loads if not ld.id.endswith("1"))
    assert mg0 == pytest.approx(complex(2598e3, 1528e3))


# regulator -----------------------------------------------------------------

def reg_network(load_w=30e3):
    buses = (Bus("s", ABC, 2400.0, "device"), Bus("m", ABC, 2400.0, "load"))
    spec = RegulatorSpec("r", "m", band_center=2400.0, band_width=0.1 * 2400.0, dwell=30.0)
    net = NetworkModel(buses, (Branch("r", "s", "m", "regulator", ABC),),
                       (ConstantPowerLoad("ld", "m", (load_w / 3,) * 3),), (), (spec,))
    return net, spec


def solve_reg(net, tap, vs):
    system = assemble_admittance(net, taps={"r": tap}, sources={"s": Y_SRC})
    inj = DeviceInjections.zeros(len(net.nodes))
    inj.source_current[net.bus_nodes("s")] = Y_SRC * _balanced(vs)
    inj.load[net.bus_nodes("m")] = np.array(net.loads[0].power)
    # the near-ideal regulator admittance sets a round-off floor around 1e-3 VA
    return PhasorSolver(system, tol=0.05).solve(inj)


def test_regulator_dead_band_no_tap():
    net, spec = reg_network()
    ctl = RegulatorController(spec)
    sol = solve_reg(net, 0, 2400.0)
    for _ in range(100):
        assert regulator_update(sol, spec, ctl, 1.0) == 0
    assert ctl.tap == 0


def test_regulator_taps_after_dwell_and_raises_voltage():
    net, spec = reg_network()
    vs = 0.93 * 2400.0  # 2% below the 0.95 pu lower band edge
    ctl = RegulatorController(spec)
    sol = solve_reg(net, 0, vs)
    v0 = float(np.mean(np.abs(sol.bus_voltages("m"))))
    assert v0 < 0.95 * 2400.0
    dt = 0.1
    changes = [regulator_update(sol, spec, ctl, dt) for _ in range(int(round(spec.dwell / dt)))]
    assert changes[:-1] == [0] * (len(changes) - 1) and changes[-1] == 1
    sol1 = solve_reg(net, ctl.tap, vs)
    v1 = float(np.mean(np.abs(sol1.bus_voltages("m"))))
    assert v1 / v0 - 1 == pytest.approx(spec.tap_step, rel=0.02)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.8, 1.2), min_size=1, max_size=400))
def test_regulator_never_exceeds_range_or_chatters(vs):
    spec = RegulatorSpec("r", "m", 1.0, 0.1, tap_range=3, dwell=2.0)
    ctl = RegulatorController(spec)
    last = None  # (time, direction)
    for k, v in enumerate(vs):
        ch = ctl.update(v, 0.5)
        assert abs(ctl.tap) <= spec.tap_range
        if ch:
            t = k * 0.5
            if last is not None and ch != last[1]:
                assert t - last[0] >= spec.dwell - 1e-9
            last = (t, ch)
