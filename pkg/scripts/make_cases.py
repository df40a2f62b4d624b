"""Regenerate the bundled built-in case files under src/btbsim/data/cases/."""
import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "btbsim" / "data" / "cases"
SCHEMA = "btbsim-scenario/1"
# grid-forming voltage set-point; nominal leaves the far feeder ends near 0.92 pu at rated load
V_SET = 1.05
MG1_LOADS = ("load6341", "load6701", "load6751", "load6801")


def mg0_devices():
    return [
        {"type": "gfm", "id": "bess0", "bus": "680", "rating": 3e6, "m_p": 0.01, "e0_pu": V_SET},
        {"type": "diesel", "id": "dg0", "bus": "633", "rating": 3e6, "r": 0.03},
        {"type": "gfl", "id": "pv0", "bus": "675", "rating": 1.6e6, "p_cmd": 1.6e6},
    ]


def mg1_devices(bess_online, pv_online=False):
    return [
        {"type": "gfm", "id": "bess1", "bus": "6801", "rating": 3e6, "m_p": 0.01, "e0_pu": V_SET, "online": bess_online},
        {"type": "diesel", "id": "dg1", "bus": "6331", "rating": 3e6, "r": 0.03, "online": False},
        {"type": "gfl", "id": "pv1", "bus": "6751", "rating": 1.6e6, "online": pv_online},
    ]


def network(tie_closed):
    return {"feeder": "two_microgrid",
            "modifications": {"loads": {lid: {"energized": False} for lid in MG1_LOADS},
                              "switches": {"tie1": tie_closed}}}


RECORDERS = {"aliases": {"f_MG0": "bess0.f", "f_MG1": "bess1.f", "P_BTB": "btb.P_B", "Vdc_pu": "btb.Vdc_pu"}}


def flexible_exchange():
    ev = []
    steps = [(5, "load6341", 400e3), (10, "load6751", 1243e3), (15, "load6801", 2398e3), (20, "load6701", 2598e3)]
    for t, load, p in steps:
        ev.append({"time": t, "action": "energize", "target": load})
        ev.append({"time": t, "action": "set_reference", "target": "btb", "value": p})
    ev += [
        {"time": 25, "action": "connect", "target": "pv1"},
        {"time": 25, "action": "set_reference", "target": "pv1", "value": 800e3},
        {"time": 25, "action": "ramp_reference", "target": "pv1", "value": 1600e3, "end_time": 30},
        {"time": 25, "action": "set_reference", "target": "btb", "value": 1798e3},
        {"time": 25, "action": "ramp_reference", "target": "btb", "value": 998e3, "end_time": 30},
        {"time": 30, "action": "ramp_reference", "target": "btb", "value": 0.0, "end_time": 35},
        {"time": 40, "action": "set_reference", "target": "btb", "value": -1000e3},
    ]
    return {
        "schema": SCHEMA, "name": "flexible_exchange",
        "description": "MG0 feeds MG1's load pickups through the BTB; MG1 PV then takes over and MG1 exports.",
        "network": network(True),
        "devices": mg0_devices() + mg1_devices(True),
        "btb": [{"id": "btb", "bus_a": "btb0", "bus_b": "btb1", "regulating": "A", "power_mode": "gfl",
                 "ramp": 3.6e6}],
        "events": ev, "recorders": RECORDERS, "sim": {"dt": 1e-3, "duration": 50.0, "decimation": 10},
    }


def _mg1_pickup(ev):
    for t, load in ((7, "load6341"), (9, "load6701"), (11, "load6751"), (13, "load6801")):
        ev.append({"time": t, "action": "energize", "target": load})


def dynamic_decoupling():
    ev = [{"time": 4, "action": "connect", "target": "bess1"},
          {"time": 4, "action": "close", "target": "tie1"}]
    _mg1_pickup(ev)
    ev += [
        {"time": 9, "action": "connect", "target": "pv1"},
        {"time": 9, "action": "set_reference", "target": "pv1", "value": 800e3},
        {"time": 11, "action": "set_reference", "target": "pv1", "value": 1600e3},
    ]
    ev.sort(key=lambda e: e["time"])
    return {
        "schema": SCHEMA, "name": "dynamic_decoupling",
        "description": "Zero scheduled exchange; MG1 picks up load on its own BESS and PV.",
        "network": network(False),
        "devices": mg0_devices() + mg1_devices(False) + [
            {"type": "gfm", "id": "seed1", "bus": "btb1", "rating": 100.0, "m_p": 0.01, "e0_pu": V_SET}],
        "btb": [{"id": "btb", "bus_a": "btb0", "bus_b": "btb1", "regulating": "A", "power_mode": "gfl"}],
        "events": ev, "recorders": RECORDERS, "sim": {"dt": 1e-3, "duration": 45.0, "decimation": 10},
    }


def black_start():
    ev = [{"time": 4, "action": "connect", "target": "bess1"},
          {"time": 4, "action": "close", "target": "tie1"}]
    _mg1_pickup(ev)
    for t, p in ((7, 400e3), (9, 600e3), (11, 1443e3), (13, 2598e3)):
        ev.append({"time": t, "action": "set_reference", "target": "btb", "value": p})
    ev.sort(key=lambda e: e["time"])
    return {
        "schema": SCHEMA, "name": "black_start",
        "description": "MG1 without generation is energized and supplied from MG0 through a grid-forming BTB.",
        "network": network(False),
        "devices": mg0_devices() + mg1_devices(False),
        "btb": [{"id": "btb", "bus_a": "btb0", "bus_b": "btb1", "regulating": "A", "power_mode": "gfm",
                 "m_p": 0.01, "e0_pu": V_SET}],
        "events": ev, "recorders": RECORDERS, "sim": {"dt": 1e-3, "duration": 45.0, "decimation": 10},
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for fn in (flexible_exchange, dynamic_decoupling, black_start):
        doc = fn()
        (OUT / f"{doc['name']}.json").write_text(json.dumps(doc, indent=2) + "\n")
        print("wrote", OUT / f"{doc['name']}.json")


if __name__ == "__main__":
    main()
