"""Scenario documents: versioned JSON with network, devices, BTB, events,
recorders and solver settings.

A document either references the bundled feeder (``"feeder": "two_microgrid"``
or ``"ieee13"``) or carries feeder data inline under ``network.data`` in the
same format as the bundled file.  Parsing collects every problem it finds
rather than stopping at the first.
"""
from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .btb import BtbConverter, DcLinkState
from .devices import DieselGen, GflInverter, GfmInverter
from .engine import ACTIONS, Event, SimConfig, Simulation
from .feeder import build_feeder, build_two_microgrid_system, data_dir, read_feeder
from .netmodel import NetworkError, NetworkModel

SCHEMA = "btbsim-scenario/1"
CASES = ("flexible_exchange", "dynamic_decoupling", "black_start")
SECTIONS = ("network", "devices", "btb", "events", "recorders", "sim")

_DEVICE_TYPES = {"gfm": GfmInverter, "gfl": GflInverter, "diesel": DieselGen}
# runtime state, not configuration
_STATE_FIELDS = {"theta", "p_f", "q_f", "energy", "overloaded", "p_schedule", "idle", "p_out", "q_out",
                 "delta", "dw", "pm", "phi", "v_nominal", "id", "bus", "xi", "schedule", "enabled",
                 "tripped", "saturated", "engaged", "gfm", "dc", "bus_a", "bus_b", "v_nominal_a", "v_nominal_b"}
_BTB_EXTRA = {"capacitance", "vdc_nominal", "vdc0", "trip_band", "p_ref"}
_SIM_FIELDS = {f.name for f in dataclasses.fields(SimConfig)}
_EVENT_FIELDS = {"time", "action", "target", "value", "q", "end_time", "start"}


class ScenarioError(Exception):
    """Carries every problem found; ``kind`` is "syntax" or "validation"."""

    def __init__(self, errors: list[str], kind: str = "validation"):
        self.errors = list(errors)
        self.kind = kind
        super().__init__("; ".join(self.errors))


def _params(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)} - _STATE_FIELDS


@dataclass
class ScenarioDoc:
    name: str
    network: dict
    devices: list[dict] = field(default_factory=list)
    btb: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    recorders: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    description: str = ""
    schema: str = SCHEMA

    def to_dict(self) -> dict:
        return {"schema": self.schema, "name": self.name, "description": self.description,
                "network": self.network, "devices": self.devices, "btb": self.btb,
                "events": self.events, "recorders": self.recorders, "sim": self.sim}

    def sim_config(self, **overrides) -> SimConfig:
        kw = dict(self.sim)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return SimConfig(**kw)


def serialize(doc: ScenarioDoc) -> str:
    return json.dumps(doc.to_dict(), indent=2) + "\n"


def parse_scenario(text: str) -> ScenarioDoc:
    """Parse and validate a scenario document; raises ScenarioError with all problems."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"], "syntax") from None
    if not isinstance(raw, dict):
        raise ScenarioError(["document root must be an object"])
    errors = []
    if raw.get("schema") != SCHEMA:
        errors.append(f"schema: expected {SCHEMA!r}, got {raw.get('schema')!r}")
    unknown = set(raw) - set(SECTIONS) - {"schema", "name", "description"}
    errors += [f"{k}: unknown top-level key" for k in sorted(unknown)]
    if "network" not in raw:
        errors.append("network: required section missing")
    kinds = {"network": dict, "devices": list, "btb": list, "events": list, "recorders": dict, "sim": dict}
    for k, typ in kinds.items():
        if k in raw and not isinstance(raw[k], typ):
            errors.append(f"{k}: must be {'an object' if typ is dict else 'a list'}")
    if errors:
        raise ScenarioError(errors)
    doc = ScenarioDoc(name=str(raw.get("name", "unnamed")), network=raw["network"],
                      devices=raw.get("devices", []), btb=raw.get("btb", []), events=raw.get("events", []),
                      recorders=raw.get("recorders", {}), sim=raw.get("sim", {}),
                      description=str(raw.get("description", "")))
    validate(doc)
    return doc


def load_scenario(path) -> ScenarioDoc:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([f"{path}: cannot read ({exc.strerror})"], "syntax") from None
    return parse_scenario(text)


def _network_from_section(net: dict) -> NetworkModel:
    feeder = net.get("feeder")
    data = net.get("data")
    if data is None:
        data = read_feeder(net["data_file"]) if "data_file" in net else read_feeder()
    if feeder == "two_microgrid":
        model = build_two_microgrid_system(data, tie_closed=True)
    else:
        model = build_feeder(data)
    return _apply_modifications(model, net.get("modifications", {}))


def _apply_modifications(model: NetworkModel, mods: dict) -> NetworkModel:
    loads = tuple(dataclasses.replace(ld, energized=mods.get("loads", {}).get(ld.id, {}).get(
        "energized", ld.energized)) for ld in model.loads)
    sw = mods.get("switches", {})
    branches = tuple(dataclasses.replace(b, closed=sw[b.id]) if b.id in sw else b for b in model.branches)
    rmods = mods.get("regulators", {})
    regs = []
    for r in model.regulators:
        m = rmods.get(r.location, {})
        v = model.bus(r.monitored_bus).nominal_voltage
        regs.append(dataclasses.replace(
            r,
            band_center=m.get("band_center_pu", r.band_center / v) * v,
            band_width=m.get("band_width_pu", r.band_width / v) * v,
            dwell=m.get("dwell_s", r.dwell),
            tap_range=m.get("tap_range", r.tap_range)))
    return dataclasses.replace(model, loads=loads, branches=branches, regulators=tuple(regs))


def validate(doc: ScenarioDoc) -> NetworkModel:
    """Check every cross-reference and parameter; returns the built network."""
    errors = []
    net = doc.network
    model = None
    if isinstance(net.get("data"), dict):
        errors += _check_feeder_refs(net["data"])
    if net.get("feeder") not in (None, "two_microgrid", "ieee13"):
        errors.append(f"network.feeder: unknown feeder {net.get('feeder')!r}")
    elif not errors:
        try:
            model = _network_from_section(net)
            model.validate()
        except FileNotFoundError as exc:
            errors.append(f"network: {exc}")
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"network.data: malformed feeder data ({exc!r})")
        except NetworkError as exc:
            errors.append(f"network: {exc}")
    # without a network every bus reference would be reported again; the network error suffices
    buses = {b.id for b in model.buses} if model else None
    if model:
        mods = net.get("modifications", {})
        load_ids = {ld.id for ld in model.loads}
        sw_ids = {b.id for b in model.branches if b.kind == "switch"}
        for lid in mods.get("loads", {}):
            if lid not in load_ids:
                errors.append(f"network.modifications.loads.{lid}: unknown load")
        for sid in mods.get("switches", {}):
            if sid not in sw_ids:
                errors.append(f"network.modifications.switches.{sid}: unknown switch")
        for rid in mods.get("regulators", {}):
            if rid not in {r.location for r in model.regulators}:
                errors.append(f"network.modifications.regulators.{rid}: unknown regulator")
    ids = set()
    for i, d in enumerate(doc.devices):
        path = f"devices[{i}]"
        if not isinstance(d, dict):
            errors.append(f"{path}: must be an object")
            continue
        typ = d.get("type")
        if typ not in _DEVICE_TYPES:
            errors.append(f"{path}.type: must be one of {sorted(_DEVICE_TYPES)}")
            continue
        errors += _check_common(d, path, buses, ids, ("bus",))
        allowed = _params(_DEVICE_TYPES[typ]) | {"type", "id", "bus"}
        errors += [f"{path}.{k}: unknown parameter for {typ}" for k in sorted(set(d) - allowed)]
    for i, b in enumerate(doc.btb):
        path = f"btb[{i}]"
        if not isinstance(b, dict):
            errors.append(f"{path}: must be an object")
            continue
        errors += _check_common(b, path, buses, ids, ("bus_a", "bus_b"))
        allowed = _params(BtbConverter) | _BTB_EXTRA | {"id", "bus_a", "bus_b"}
        errors += [f"{path}.{k}: unknown parameter" for k in sorted(set(b) - allowed)]
        if b.get("regulating", "A") not in ("A", "B"):
            errors.append(f"{path}.regulating: must be 'A' or 'B'")
        if b.get("power_mode", "gfl") not in ("gfl", "gfm"):
            errors.append(f"{path}.power_mode: must be 'gfl' or 'gfm'")
        for k in ("capacitance", "vdc_nominal", "vdc0"):
            if k in b and not _positive(b[k]):
                errors.append(f"{path}.{k}: must be positive")
    try:
        cfg = doc.sim_config()
    except (TypeError, ValueError) as exc:
        errors.append(f"sim: {exc}")
        cfg = None
    errors += [f"sim.{k}: unknown setting" for k in sorted(set(doc.sim) - _SIM_FIELDS)]
    targets = set(ids)
    if model:
        targets |= {ld.id for ld in model.loads} | {b.id for b in model.branches if b.kind == "switch"}
    for i, ev in enumerate(doc.events):
        path = f"events[{i}]"
        if not isinstance(ev, dict):
            errors.append(f"{path}: must be an object")
            continue
        errors += [f"{path}.{k}: unknown field" for k in sorted(set(ev) - _EVENT_FIELDS)]
        if ev.get("action") not in ACTIONS:
            errors.append(f"{path}.action: must be one of {list(ACTIONS)}")
        t = ev.get("time")
        if not isinstance(t, (int, float)) or isinstance(t, bool):
            errors.append(f"{path}.time: must be a number")
        elif cfg is not None and not 0 <= t <= cfg.duration:
            errors.append(f"{path}.time: {t} outside [0, {cfg.duration}]")
        if model and ev.get("target") not in targets:
            errors.append(f"{path}.target: unknown target {ev.get('target')!r}")
        if ev.get("action") in ACTIONS and isinstance(t, (int, float)):
            try:
                Event(**ev)
            except (TypeError, ValueError) as exc:
                errors.append(f"{path}: {exc}")
    rec = doc.recorders
    if not isinstance(rec.get("aliases", {}), dict):
        errors.append("recorders.aliases: must be an object")
    if not isinstance(rec.get("channels", []), list):
        errors.append("recorders.channels: must be a list")
    if errors:
        raise ScenarioError(errors)
    return model


def _check_feeder_refs(data: dict) -> list[str]:
    errs = []
    buses = data.get("buses")
    if not isinstance(buses, list) or not buses:
        return ["network.data.buses: at least one bus required"]
    ids = {b.get("id") for b in buses if isinstance(b, dict)}
    for i, b in enumerate(buses):
        if not isinstance(b, dict) or not isinstance(b.get("id"), str):
            errs.append(f"network.data.buses[{i}].id: required string")
        elif not _positive(b.get("kv_ll")):
            errs.append(f"network.data.buses[{i}].kv_ll: must be positive")
    configs = data.get("line_configs", {})
    for section, keys in (("lines", ("from", "to")), ("transformers", ("from", "to")),
                          ("regulators", ("from", "to", "monitored_bus")), ("switches", ("from", "to")),
                          ("loads", ("bus",)), ("shunts", ("bus",))):
        for i, el in enumerate(data.get(section, [])):
            for k in keys:
                if el.get(k) not in ids:
                    errs.append(f"network.data.{section}[{i}].{k}: unknown bus {el.get(k)!r}")
            if section == "lines" and el.get("config") not in configs:
                errs.append(f"network.data.lines[{i}].config: unknown line config {el.get('config')!r}")
    return errs


def _positive(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and x > 0


def _check_common(d: dict, path: str, buses: set, ids: set, bus_keys) -> list[str]:
    errs = []
    did = d.get("id")
    if not isinstance(did, str) or not did:
        errs.append(f"{path}.id: required string")
    elif did in ids:
        errs.append(f"{path}.id: duplicate id {did!r}")
    else:
        ids.add(did)
    for k in bus_keys:
        if buses is not None and d.get(k) not in buses:
            errs.append(f"{path}.{k}: unknown bus {d.get(k)!r}")
    for k in ("rating", "rating_a", "rating_b"):
        if k in d and not _positive(d[k]):
            errs.append(f"{path}.{k}: must be positive")
    if "bus" in bus_keys and "rating" not in d:
        errs.append(f"{path}.rating: required")
    return errs


def build_simulation(doc: ScenarioDoc, config: SimConfig | None = None) -> Simulation:
    model = validate(doc)
    devices = []
    for d in doc.devices:
        cls = _DEVICE_TYPES[d["type"]]
        kw = {k: v for k, v in d.items() if k != "type"}
        devices.append(cls(v_nominal=model.bus(d["bus"]).nominal_voltage, **kw))
    btbs = []
    for b in doc.btb:
        kw = {k: v for k, v in b.items() if k not in _BTB_EXTRA}
        c = b.get("capacitance", 5e-3)
        vnom = b.get("vdc_nominal", 8000.0)
        dc = DcLinkState(b.get("vdc0", vnom), c, vnom, tuple(b.get("trip_band", (0.8, 1.2))))
        conv = BtbConverter(v_nominal_a=model.bus(b["bus_a"]).nominal_voltage,
                            v_nominal_b=model.bus(b["bus_b"]).nominal_voltage, dc=dc, **kw)
        conv.schedule.set(0.0, b.get("p_ref", 0.0))
        btbs.append(conv)
    cfg = config or doc.sim_config()
    # a shortened run simply never reaches the later events
    events = [Event(**ev) for ev in doc.events if ev["time"] <= cfg.duration]
    return Simulation(model, devices, btbs, events, cfg, aliases=doc.recorders.get("aliases"),
                      channels=doc.recorders.get("channels") or None)


def case_path(name: str) -> Path:
    return data_dir() / "cases" / f"{name}.json"


def builtin_case(name: str) -> ScenarioDoc:
    if name not in CASES:
        raise ValueError(f"unknown built-in case {name!r}; choose from {', '.join(CASES)}")
    return load_scenario(case_path(name))


def build_two_microgrid() -> NetworkModel:
    return build_two_microgrid_system()
