"""Reader for the bundled feeder data file and the two-microgrid builder."""
from __future__ import annotations

import json
import os
from importlib import resources
from pathlib import Path

import numpy as np

from .netmodel import (Branch, Bus, ConstantPowerLoad, NetworkModel, RegulatorSpec, ShuntCapacitor,
                       TransformerSpec, FT_PER_MILE)

DATA_ENV = "BTBSIM_DATA"
FEEDER_FILE = "ieee13_modified.json"


def data_dir() -> Path:
    override = os.environ.get(DATA_ENV)
    if override:
        return Path(override)
    return Path(str(resources.files("btbsim") / "data"))


def read_feeder(path: str | Path | None = None) -> dict:
    path = Path(path) if path else data_dir() / FEEDER_FILE
    if not path.exists():
        raise FileNotFoundError(f"feeder data file not found: {path}")
    with open(path) as fh:
        return json.load(fh)


def _ln(kv_ll: float) -> float:
    return float(kv_ll * 1e3 / np.sqrt(3))


def feeder_elements(data: dict, suffix: str = "") -> tuple[list, list, list, list, list]:
    """Buses, branches, loads, shunts, regulators of one feeder instance.

    ``suffix`` is appended to every node and element id (the MG1 copy uses "1").
    """
    def nid(x):
        return f"{x}{suffix}"

    buses = [Bus(nid(b["id"]), tuple(b["phases"]), _ln(b["kv_ll"]), b.get("kind", "node"))
             for b in data["buses"]]
    branches = []
    for ln in data.get("lines", []):
        cfg = data["line_configs"][ln["config"]]
        miles = ln["length_ft"] / FT_PER_MILE
        z = (np.array(cfg["r_ohm_per_mile"]) + 1j * np.array(cfg["x_ohm_per_mile"])) * miles
        y = 1j * np.array(cfg["b_us_per_mile"]) * 1e-6 * miles
        branches.append(Branch(nid(ln["id"]), nid(ln["from"]), nid(ln["to"]), "line",
                               tuple(cfg["phases"]), z, y))
    for tx in data.get("transformers", []):
        spec = TransformerSpec(tx["kva"] * 1e3, tx["kv_primary"] * 1e3, tx["kv_secondary"] * 1e3,
                               tx["r_pct"] / 100, tx["x_pct"] / 100)
        branches.append(Branch(nid(tx["id"]), nid(tx["from"]), nid(tx["to"]), "transformer",
                               ("A", "B", "C"), transformer=spec))
    regulators = []
    vn = {b["id"]: _ln(b["kv_ll"]) for b in data["buses"]}
    for rg in data.get("regulators", []):
        branches.append(Branch(nid(rg["id"]), nid(rg["from"]), nid(rg["to"]), "regulator", ("A", "B", "C")))
        v = vn[rg["monitored_bus"]]
        regulators.append(RegulatorSpec(nid(rg["id"]), nid(rg["monitored_bus"]),
                                        rg["band_center_pu"] * v, rg["band_width_pu"] * v,
                                        rg["tap_step"], rg["tap_range"], rg["dwell_s"]))
    for sw in data.get("switches", []):
        branches.append(Branch(nid(sw["id"]), nid(sw["from"]), nid(sw["to"]), "switch", ("A", "B", "C"),
                               closed=sw.get("closed", True)))
    phases = {b["id"]: b["phases"] for b in data["buses"]}
    loads = []
    for ld in data.get("loads", []):
        k = len(phases[ld["bus"]])
        s = complex(ld["kw"], ld["kvar"]) * 1e3 / k
        loads.append(ConstantPowerLoad(nid(ld["id"]), nid(ld["bus"]), (s,) * k, ld.get("energized", True)))
    shunts = [ShuntCapacitor(nid(c["id"]), nid(c["bus"]), c["kvar"]) for c in data.get("shunts", [])]
    return buses, branches, loads, shunts, regulators


def build_feeder(data: dict | None = None, suffix: str = "") -> NetworkModel:
    buses, branches, loads, shunts, regs = feeder_elements(data or read_feeder(), suffix)
    return NetworkModel(tuple(buses), tuple(branches), tuple(loads), tuple(shunts), tuple(regs))


BTB_NODES = ("btb0", "btb1")
TIE_SWITCH = "tie1"


def build_two_microgrid_system(data: dict | None = None, tie_closed: bool = True) -> NetworkModel:
    """MG0 and MG1 feeder copies with a BTB boundary node upstream of each 650.

    MG0's boundary node hangs off 650 through a closed stub switch; MG1's
    boundary node reaches 6501 through the inter-tie switch.  There is no AC
    path between the two boundary nodes.
    """
    data = data or read_feeder()
    parts = [feeder_elements(data, ""), feeder_elements(data, "1")]
    buses, branches, loads, shunts, regs = ([x for p in parts for x in p[k]] for k in range(5))
    head = next(b for b in data["buses"] if b["id"] == "650")
    v = _ln(head["kv_ll"])
    buses += [Bus("btb0", ("A", "B", "C"), v, "device"), Bus("btb1", ("A", "B", "C"), v, "device")]
    branches += [Branch("tie0", "btb0", "650", "switch", ("A", "B", "C"), closed=True),
                 Branch(TIE_SWITCH, "btb1", "6501", "switch", ("A", "B", "C"), closed=tie_closed)]
    return NetworkModel(tuple(buses), tuple(branches), tuple(loads), tuple(shunts), tuple(regs))
