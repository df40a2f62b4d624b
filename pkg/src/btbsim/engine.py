"""Fixed-step hybrid simulation loop.

Each step: apply due events, discrete device updates, Heun predictor pass,
network solve, corrector pass, network re-solve, record.
"""
from __future__ import annotations

import cmath
import io
import logging
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .btb import BtbConverter
from .devices import DeviceEvent, DieselGen, GflInverter, GfmInverter, Reference, positive_sequence
from .netmodel import (S_BASE, ConvergenceError, DeviceInjections, NetworkError, NetworkModel, NetworkSolution,
                       PhasorSolver, RegulatorController, assemble_admittance, load_power_drawn)

log = logging.getLogger(__name__)

ACTIONS = ("energize", "deenergize", "open", "close", "set_reference", "ramp_reference", "connect", "disconnect")


class SimulationError(Exception):
    pass


@dataclass
class SimConfig:
    dt: float = 1e-3
    duration: float = 10.0
    tol: float = 1e-6 * S_BASE
    max_iter: int = 50
    decimation: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.duration < self.dt:
            raise ValueError("duration must be at least one step")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class Event:
    time: float
    action: str
    target: str
    value: float | None = None  # W for references
    q: float | None = None  # VAR for references
    end_time: float | None = None  # ramp end
    start: float | None = None  # ramp start value (defaults to current reference)

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown event action {self.action!r}")
        if self.action == "ramp_reference" and (self.end_time is None or self.end_time <= self.time):
            raise ValueError("ramp_reference needs end_time after time")
        if self.action in ("set_reference", "ramp_reference") and self.value is None and self.q is None:
            raise ValueError(f"{self.action} needs a value")

    def describe(self) -> str:
        parts = [self.action, self.target]
        if self.value is not None:
            parts.append(f"P={self.value:g}")
        if self.q is not None:
            parts.append(f"Q={self.q:g}")
        if self.end_time is not None:
            parts.append(f"until={self.end_time:g}")
        return " ".join(parts)


@dataclass
class TimeSeriesRecord:
    time: np.ndarray
    channels: dict[str, np.ndarray]

    def __post_init__(self):
        for name, values in self.channels.items():
            if len(values) != len(self.time):
                raise ValueError(f"channel {name} length mismatch")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def __contains__(self, name: str) -> bool:
        return name in self.channels

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    def at(self, name: str, t: float) -> float:
        """Sample value at the recorded time nearest to t."""
        return float(self.channels[name][int(np.argmin(np.abs(self.time - t)))])

    def window(self, name: str, t0: float, t1: float) -> np.ndarray:
        m = (self.time >= t0 - 1e-9) & (self.time <= t1 + 1e-9)
        return self.channels[name][m]

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO(newline="")
        buf.write(",".join(["time"] + self.names) + "\n")
        cols = [self.time] + [self.channels[n] for n in self.names]
        for row in zip(*cols):
            buf.write(",".join(f"{v:.9g}" for v in row) + "\n")
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_bytes(text.encode())
        return text

    @classmethod
    def from_csv(cls, src) -> "TimeSeriesRecord":
        text = Path(src).read_text() if not isinstance(src, io.IOBase) else src.read()
        lines = text.strip("\n").split("\n")
        header = lines[0].split(",")
        if not header or header[0] != "time":
            raise ValueError("record CSV must start with a 'time' column")
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(header))
        return cls(data[:, 0], {h: data[:, i] for i, h in enumerate(header) if i})


@dataclass
class RunResult:
    record: TimeSeriesRecord
    events: list[str]
    wall_time: float = 0.0
    bases: dict[str, float] = field(default_factory=dict)  # per-unit base of each channel

    def per_unit_change(self, other: "RunResult") -> dict[str, float]:
        """Max-norm difference per channel against another run on the same grid, in per unit."""
        if len(self.record.time) != len(other.record.time) or np.any(self.record.time != other.record.time):
            raise ValueError("records are on different time grids")
        return {n: float(np.max(np.abs(self.record[n] - other.record[n]))) / self.bases[n]
                for n in self.record.names}


def _getter(idx):
    if len(idx) == 1:
        return lambda seq, i=idx[0]: (seq[i],)
    return operator.itemgetter(*idx)


def _mean_abs(v) -> float:
    return sum(abs(x) for x in v) / len(v)


def _sorted_events(events):
    # stable sort keeps declaration order for ties
    return sorted(events, key=lambda e: e.time)


class Simulation:
    """One simulation instance; owns its devices and mutable network state."""

    def __init__(self, network: NetworkModel, devices: list, btbs: list[BtbConverter],
                 events: list[Event] = (), config: SimConfig | None = None,
                 aliases: dict[str, str] | None = None, channels: list[str] | None = None):
        self.network = network
        self.devices = list(devices)
        self.btbs = list(btbs)
        self.config = config or SimConfig()
        self.events = _sorted_events(list(events))
        for ev in self.events:
            if not 0 <= ev.time <= self.config.duration:
                raise SimulationError(f"event at t={ev.time} outside [0, {self.config.duration}]")
        self.aliases = dict(aliases or {})
        self.channel_filter = channels
        self.switches = network.initial_switches()
        self.regulators = {r.location: RegulatorController(r) for r in network.regulators}
        self.load_on = {ld.id: ld.energized for ld in network.loads}
        self.t = 0.0
        self.log: list[str] = []
        self._by_id = {d.id: d for d in self.devices}
        self._by_id.update({b.id: b for b in self.btbs})
        ids = [d.id for d in self.devices] + [b.id for b in self.btbs]
        if len(set(ids)) != len(ids):
            raise SimulationError("duplicate device ids")
        for d in self.devices:
            if d.bus not in {b.id for b in network.buses}:
                raise SimulationError(f"device {d.id} on unknown bus {d.bus}")
            if len(network.bus(d.bus).phases) != 3:
                raise SimulationError(f"device {d.id}: bus {d.bus} must be three-phase")
        for b in self.btbs:
            self._check_btb(b)
        n = len(network.nodes)
        self._n = n
        self._nodes = {b.id: np.array(network.bus_nodes(b.id)) for b in network.buses}
        self._getters = {b.id: _getter(network.bus_nodes(b.id)) for b in network.buses}
        # three-phase buses occupy consecutive node indices
        self._first = {b.id: network.bus_nodes(b.id)[0] for b in network.buses}
        self._gfl = [d for d in self.devices if isinstance(d, GflInverter)]
        self._thev = []
        self._check = True
        self._vnom = network.nominal
        self._load_vec = np.zeros(n, complex)
        self._refresh_loads()
        self.system = None
        self.solver = None
        self.solution: NetworkSolution | None = None

    # ------------------------------------------------------------------ setup
    def _check_btb(self, b: BtbConverter):
        for bus in (b.bus_a, b.bus_b):
            if len(self._nodes_of(bus)) != 3:
                raise SimulationError(f"BTB {b.id}: bus {bus} must be three-phase")
        for isl in self.network.islands({k: True for k in self.switches}):
            if b.bus_a in isl and b.bus_b in isl:
                raise SimulationError(f"BTB {b.id}: sides share an AC path")

    def _nodes_of(self, bus):
        return self.network.bus_nodes(bus)

    def _refresh_loads(self):
        self._load_vec[:] = 0
        for ld in self.network.loads:
            if self.load_on[ld.id]:
                self._load_vec[self._nodes[ld.bus]] += np.array(ld.power)

    def thevenin_devices(self):
        out = [d for d in self.devices if d.thevenin and d.online]
        out += [b.gfm for b in self.btbs if b.gfm is not None and b.online and not b.tripped and b.enabled]
        return out

    def _rebuild(self, sources=None):
        if sources is None:
            sources = {}
            for d in self.thevenin_devices():
                sources[d.bus] = sources.get(d.bus, 0j) + d.y
        taps = {k: c.tap for k, c in self.regulators.items()}
        self.system = assemble_admittance(self.network, self.switches, taps, sources)
        self._thev = self.thevenin_devices()
        for b in self.btbs:
            if self.system.island_of(b.bus_a) is self.system.island_of(b.bus_b):
                raise SimulationError(f"BTB {b.id}: AC path between its sides")
        self.solver = PhasorSolver(self.system, tol=self.config.tol, max_iter=self.config.max_iter)
        self._check = True

    def _bus_v(self, sol: NetworkSolution, bus: str) -> tuple:
        vl = getattr(sol, "_vlist", None)
        if vl is None:
            vl = sol._vlist = sol.voltages.tolist()
        return self._getters[bus](vl)

    def _live(self, bus: str) -> bool:
        return bool(self.system.live[self._nodes[bus][0]])

    # ------------------------------------------------------------- injections
    def _injections(self) -> DeviceInjections:
        src = [0j] * self._n
        pw = [0j] * self._n
        first = self._first
        for d in self._thev:
            y = d.y
            a = first[d.bus]
            e = d.emf()
            src[a] += y * e[0]
            src[a + 1] += y * e[1]
            src[a + 2] += y * e[2]
        for d in self._gfl:
            s = d.power()
            if s:
                a = first[d.bus]
                s /= 3
                pw[a] += s
                pw[a + 1] += s
                pw[a + 2] += s
        for b in self.btbs:
            p_reg = b.regulator_command() if self._live(b.reg_bus) else 0.0
            s = b.power_side_output()
            for bus, val in ((b.reg_bus, -p_reg / 3), (b.pow_bus, s / 3)):
                if val:
                    a = first[bus]
                    pw[a] += val
                    pw[a + 1] += val
                    pw[a + 2] += val
        return DeviceInjections(np.array(src), np.array(pw), self._load_vec)

    def _solve(self) -> NetworkSolution:
        guess = self.solution.voltages if self.solution is not None else None
        try:
            sol = self.solver.solve(self._injections(), guess, check=self._check)
            self._check = False
        except ConvergenceError as exc:
            raise SimulationError(f"t={self.t:.6f}: network solve failed: {exc}") from exc
        except NetworkError as exc:
            raise SimulationError(f"t={self.t:.6f}: {exc}") from exc
        self.solution = sol
        return sol

    # --------------------------------------------------------- initialization
    def initialize(self) -> NetworkSolution:
        """Solve t = 0 and place every dynamic state at equilibrium.

        Configured set-points are left untouched; the island frequency offset
        and source angles are iterated until each source sits on its droop
        line. One grid-forming source per island holds angle zero.
        """
        self.t = 0.0
        for b in self.btbs:
            b.p_out = b.schedule(0.0) if b.enabled else 0.0
            if b.gfm is not None:
                b.gfm.p_ref = b.schedule(0.0)
        for d in self.devices:
            if isinstance(d, (GfmInverter, DieselGen)) and d.p_schedule is not None:
                d.p_ref = d.p_schedule(0.0)
        thev = self.thevenin_devices()
        self._rebuild()
        islands = self.system.islands
        ref = {}
        for isl in islands:
            pool = [d for d in thev if d.bus in isl]
            gfms = [d for d in pool if isinstance(d, GfmInverter)]
            if gfms or pool:
                ref[isl] = max(gfms or pool, key=lambda d: d.rating)
        island_of = {id(d): next(i for i in islands if d.bus in i) for d in thev}
        for d in self.devices:
            if isinstance(d, GflInverter):
                d.p_cmd = max(-d.rating, min(d.rating, d.p_schedule(0.0)))
                live = d.online and self._live(d.bus)
                d.p_out = d.p_cmd if live else 0.0
                d.q_out = d.q_cmd if live else 0.0
                d.idle = not live
        df = {isl: 0.0 for isl in islands}
        for d in thev:
            if isinstance(d, GfmInverter):
                d.set_state([0.0, d.p_ref, d.q_ref, 0.0])
            else:
                d.delta, d.dw, d.pm = 0.0, 0.0, d.p_ref
        sol = None
        for _ in range(300):
            for b in self.btbs:
                if not (b.enabled and b.online and not b.tripped):
                    continue
                if b.gfm is not None:
                    p_pow = b.gfm.p_f
                else:
                    p_pow = b.p_out
                b.xi = self._reg_draw_for(b, p_pow) if self._live(b.reg_bus) else 0.0
            try:
                sol = self.solver.solve(self._injections(), None if sol is None else sol.voltages)
            except NetworkError as exc:
                raise SimulationError(f"initialization failed: {exc}") from exc
            worst = 0.0
            for isl, r in ref.items():
                s = r.terminal_power(self._bus_v(sol, r.bus))
                droop = r.m_p if isinstance(r, GfmInverter) else r.r
                df[isl] = -r.f0 * droop * (s.real - r.p_ref) / r.rating
            for d in thev:
                v = self._bus_v(sol, d.bus)
                s = d.terminal_power(v)
                isl = island_of[id(d)]
                droop = d.m_p if isinstance(d, GfmInverter) else d.r
                target = d.p_ref - df[isl] / d.f0 / droop * d.rating
                if isinstance(d, GfmInverter):
                    worst = max(worst, abs(s.imag - d.q_f), abs(s.real - d.p_f))
                    e = d.emf_magnitude()
                    theta = d.theta
                    if d is not ref[isl]:
                        k = 3 * e * abs(positive_sequence(v)) / d.x_ohm
                        theta += (target - s.real) / k
                        worst = max(worst, abs(target - s.real))
                    d.set_state([theta, s.real, s.imag, 0.0])
                else:
                    worst = max(worst, abs(s.real - d.pm))
                    if d is not ref[isl]:
                        k = 3 * d.e_mag * abs(positive_sequence(v)) / d.x_ohm
                        d.delta += (target - s.real) / k
                        worst = max(worst, abs(target - s.real))
                    d.pm = s.real
            if worst < 1e-3:
                break
        else:
            raise SimulationError(f"initialization did not reach an equilibrium (residual {worst:.3g} W)")
        for d in thev:
            isl = island_of[id(d)]
            if isinstance(d, DieselGen):
                d.dw = df[isl] / d.f0
                d.pm = d.terminal_power(self._bus_v(sol, d.bus)).real
                d.phi = cmath.phase(positive_sequence(self._bus_v(sol, d.bus))) - d.dw * d.w0 * d.t_w
        for b in self.btbs:
            if b.gfm is not None and b.enabled and b.online:
                b.xi = self._reg_draw_for(b, b.gfm.p_f) if self._live(b.reg_bus) else 0.0
        self.solution = None
        sol = self._solve()
        self._pending = [DeviceEvent(0.0, "engine", "INIT", f"converged mismatch={sol.mismatch:.3g} VA")]
        return sol

    def _reg_draw_for(self, b: BtbConverter, p_pow: float) -> float:
        dc = b._from_dc(p_pow)
        keep = 1 - b.loss_fraction
        return dc / keep if dc >= 0 else dc * keep

    # ----------------------------------------------------------------- events
    def apply_event(self, ev: Event):
        t = ev.time
        topo = False
        if ev.action in ("energize", "deenergize"):
            if ev.target not in self.load_on:
                raise SimulationError(f"unknown load {ev.target}")
            want = ev.action == "energize"
            if self.load_on[ev.target] == want:
                self.log.append(f"{t:.6f} WARN {ev.action} {ev.target}: already in that state")
                return False
            self.load_on[ev.target] = want
            self._refresh_loads()
            self._check = True
        elif ev.action in ("open", "close"):
            if ev.target not in self.switches:
                raise SimulationError(f"unknown switch {ev.target}")
            want = ev.action == "close"
            if self.switches[ev.target] == want:
                self.log.append(f"{t:.6f} WARN {ev.action} {ev.target}: already in that state")
                return False
            self.switches[ev.target] = want
            topo = True
        elif ev.action in ("set_reference", "ramp_reference"):
            dev = self._by_id.get(ev.target)
            if dev is None:
                raise SimulationError(f"unknown device {ev.target}")
            sched = self._schedule_of(dev)
            if ev.value is not None:
                if ev.action == "set_reference":
                    sched.set(t, ev.value)
                else:
                    sched.ramp(t, ev.end_time, ev.start, ev.value)
            if ev.q is not None:
                if isinstance(dev, BtbConverter):
                    dev.q_pow = ev.q
                elif isinstance(dev, GflInverter):
                    dev.q_cmd = ev.q
                elif isinstance(dev, GfmInverter):
                    dev.q_ref = ev.q
        elif ev.action in ("connect", "disconnect"):
            dev = self._by_id.get(ev.target)
            if dev is None:
                raise SimulationError(f"unknown device {ev.target}")
            want = ev.action == "connect"
            if dev.online == want:
                self.log.append(f"{t:.6f} WARN {ev.action} {ev.target}: already in that state")
                return False
            dev.online = want
            if want and hasattr(dev, "synchronize"):
                v = self._bus_v(self.solution, dev.bus) if self.solution is not None else np.zeros(3)
                dev.synchronize(v)
            if isinstance(dev, GflInverter):
                dev.p_out = dev.q_out = 0.0
            topo = dev.thevenin if not isinstance(dev, BtbConverter) else dev.gfm is not None
        self.log.append(f"{t:.6f} EVENT {ev.describe()}")
        return topo

    @staticmethod
    def _schedule_of(dev) -> Reference:
        if isinstance(dev, BtbConverter):
            return dev.schedule
        if isinstance(dev, (GfmInverter, DieselGen)):
            if dev.p_schedule is None:
                dev.p_schedule = Reference()
                dev.p_schedule.set(0.0, dev.p_ref)
            return dev.p_schedule
        return dev.p_schedule

    # ------------------------------------------------------------------- step
    def _discrete(self, t, dt, sol):
        events = []
        for d in self.devices:
            if d.online:
                events += d.discrete_update(t, dt, self._bus_v(sol, d.bus))
        for b in self.btbs:
            events += b.discrete_update(t, dt, self._live(b.reg_bus), self._live(b.pow_bus))
        topo = False
        for ev in events:
            self.log.append(ev.line())
            if ev.kind in ("TRIP", "ENABLE"):
                topo = True
        for loc, ctl in self.regulators.items():
            spec = ctl.spec
            if not self._live(spec.monitored_bus):
                continue
            v = _mean_abs(self._bus_v(sol, spec.monitored_bus))
            change = ctl.update(v, dt)
            if change:
                self.log.append(f"{t:.6f} TAP {loc} {ctl.tap:+d}")
                topo = True
        return topo

    def _dynamic(self):
        return [d for d in self.devices if d.thevenin and d.online] + [b for b in self.btbs if b.online]

    def _derivs(self, dyn, xs, sol, t):
        out = []
        for d, x in zip(dyn, xs):
            if isinstance(d, BtbConverter):
                live_reg = self._live(d.reg_bus)
                p_reg = d.regulator_command(x) if live_reg else 0.0
                if d.gfm is not None:
                    v_pow = self._bus_v(sol, d.pow_bus)
                    p_pow = d.gfm.terminal_power(v_pow, x[2:]).real if d.enabled else 0.0
                else:
                    v_pow = None
                    p_pow = d.power_side_output().real
                out.append(d.derivatives(x, p_reg, v_pow, p_pow, t))
            else:
                out.append(d.derivatives(x, self._bus_v(sol, d.bus), t))
        return out

    def run(self, progress=None) -> RunResult:
        import time as _time

        wall = _time.perf_counter()
        cfg = self.config
        if self.solution is None:
            self.initialize()
        dt = cfg.dt
        n_steps = cfg.n_steps
        channels = self._channel_table()
        n_rec = n_steps // cfg.decimation + 1
        data = np.empty((n_rec, len(channels)))
        times = np.empty(n_rec)
        times[0] = 0.0
        data[0] = [fn() for _, fn, _ in channels]
        for ev in getattr(self, "_pending", []):
            self.log.append(ev.line())
        ei = 0
        events = self.events
        rec = 1
        for k in range(n_steps):
            t = k * dt
            self.t = t
            topo = False
            while ei < len(events) and events[ei].time <= t + 0.5 * dt:
                self.t = events[ei].time
                topo |= bool(self.apply_event(events[ei]))
                ei += 1
            self.t = t
            if topo:
                self._rebuild()
                self._solve()
            sol = self.solution
            if self._discrete(t, dt, sol):
                self._rebuild()
                sol = self._solve()
            dyn = self._dynamic()
            x0 = [d.state() for d in dyn]
            k1 = self._derivs(dyn, x0, sol, t)
            xp = [[a + dt * b for a, b in zip(x, kk)] for x, kk in zip(x0, k1)]
            for d, x in zip(dyn, xp):
                d.set_state(x)
            solp = self._solve()
            k2 = self._derivs(dyn, xp, solp, t + dt)
            for d, x, ka, kb in zip(dyn, x0, k1, k2):
                d.set_state([a + 0.5 * dt * (b + c) for a, b, c in zip(x, ka, kb)])
            self.t = t + dt
            self._solve()
            if (k + 1) % cfg.decimation == 0:
                times[rec] = (k + 1) * dt
                data[rec] = [fn() for _, fn, _ in channels]
                rec += 1
                if progress is not None:
                    progress(self.t)
        record = TimeSeriesRecord(times[:rec], {name: data[:rec, j] for j, (name, _, _) in enumerate(channels)})
        bases = {name: base for name, _, base in channels}
        return RunResult(record, list(self.log), _time.perf_counter() - wall, bases)

    # -------------------------------------------------------------- recording
    def device_power(self, dev, sol=None) -> complex:
        sol = sol or self.solution
        if isinstance(dev, (GfmInverter, DieselGen)):
            if not dev.online:
                return 0j
            return dev.terminal_power(self._bus_v(sol, dev.bus))
        if isinstance(dev, GflInverter):
            return dev.power()
        raise TypeError(dev)

    def btb_powers(self, b: BtbConverter, sol=None) -> tuple[complex, complex]:
        """(AC power drawn at the regulating side, AC power delivered at the power side)."""
        sol = sol or self.solution
        p_reg = b.regulator_command() if self._live(b.reg_bus) else 0.0
        if b.gfm is not None:
            pow_s = b.gfm.terminal_power(self._bus_v(sol, b.pow_bus)) if (b.enabled and not b.tripped) else 0j
        else:
            pow_s = b.power_side_output()
        return complex(p_reg, 0.0), pow_s

    def balance_residual(self, sol=None) -> complex:
        """Injected minus consumed minus network-absorbed complex power (VA)."""
        from .netmodel import branch_losses

        sol = sol or self.solution
        inj = 0j
        for d in self.devices:
            inj += self.device_power(d, sol)
        for b in self.btbs:
            reg, pw = self.btb_powers(b, sol)
            inj += pw - reg
        drawn = complex(np.sum(load_power_drawn(sol.voltages[self.system.live], self._load_vec[self.system.live],
                                                self._vnom[self.system.live])))
        return inj - drawn - branch_losses(sol)

    def _channel_table(self):
        """(name, sampler, per-unit base) for every recorded channel."""
        chans = []

        def add(name, fn, base):
            chans.append((name, fn, float(base)))

        for d in self.devices:
            if isinstance(d, (GfmInverter, DieselGen)):
                add(f"{d.id}.P", lambda d=d: self.device_power(d).real, d.rating)
                add(f"{d.id}.Q", lambda d=d: self.device_power(d).imag, d.rating)
                add(f"{d.id}.f", lambda d=d: d.frequency() if d.online else 0.0, d.f0)
            else:
                add(f"{d.id}.P", lambda d=d: d.power().real, d.rating)
                add(f"{d.id}.Q", lambda d=d: d.power().imag, d.rating)
            add(f"{d.id}.V", lambda d=d: _mean_abs(self._bus_v(self.solution, d.bus)), d.v_nominal)
        for b in self.btbs:
            a_is_reg = b.regulating == "A"
            add(f"{b.id}.P_A", lambda b=b, r=a_is_reg: (self.btb_powers(b)[0].real if r
                                                       else -self.btb_powers(b)[1].real), b.rating_a)
            add(f"{b.id}.Q_A", lambda b=b, r=a_is_reg: (0.0 if r else -self.btb_powers(b)[1].imag), b.rating_a)
            add(f"{b.id}.P_B", lambda b=b, r=a_is_reg: (self.btb_powers(b)[1].real if r
                                                       else -self.btb_powers(b)[0].real), b.rating_b)
            add(f"{b.id}.Q_B", lambda b=b, r=a_is_reg: (self.btb_powers(b)[1].imag if r else 0.0), b.rating_b)
            add(f"{b.id}.Vdc", lambda b=b: b.dc.vdc, b.dc.vdc_nominal)
            add(f"{b.id}.Vdc_pu", lambda b=b: b.dc.vdc_pu, 1.0)
            if b.gfm is not None:
                add(f"{b.id}.f_B", lambda b=b: b.gfm.frequency(), b.gfm.f0)
        for ld in self.network.loads:
            base = abs(ld.total) or S_BASE
            add(f"{ld.id}.P", lambda ld=ld: self._load_drawn(ld).real, base)
            add(f"{ld.id}.Q", lambda ld=ld: self._load_drawn(ld).imag, base)
        for loc, ctl in self.regulators.items():
            add(f"{loc}.tap", lambda loc=loc: float(self.regulators[loc].tap), max(ctl.spec.tap_range, 1))
        add("residual_VA", lambda: abs(self.balance_residual()), S_BASE)
        table = {name: (fn, base) for name, fn, base in chans}
        for alias, target in self.aliases.items():
            if target not in table:
                raise SimulationError(f"alias {alias} -> unknown channel {target}")
            chans.append((alias, *table[target]))
        if self.channel_filter:
            keep = set(self.channel_filter)
            unknown = keep - {c[0] for c in chans}
            if unknown:
                raise SimulationError(f"unknown recorder channels: {sorted(unknown)}")
            chans = [c for c in chans if c[0] in keep]
        return chans

    def _load_drawn(self, ld) -> complex:
        if not self.load_on[ld.id]:
            return 0j
        idx = self._nodes[ld.bus]
        v = self.solution.voltages[idx]
        if not np.any(v):
            return 0j
        return complex(np.sum(load_power_drawn(v, np.array(ld.power), self._vnom[idx])))


def init_steady_state(sim: Simulation) -> NetworkSolution:
    return sim.initialize()


def run(sim: Simulation, config: SimConfig | None = None) -> RunResult:
    if config is not None:
        sim.config = config
    return sim.run()


def apply_event(sim: Simulation, event: Event) -> bool:
    """Apply one event; returns True when the admittance must be reassembled."""
    return bool(sim.apply_event(event))
