"""Electro-mechanical DER models exchanged with the network each step.

Thevenin devices (grid-forming inverter, diesel generator) expose an EMF
behind a coupling admittance; grid-following devices expose a constant
complex power.  Continuous states are plain lists of floats so the engine
can integrate them generically; ramp limiters and flags are discrete and
advance once per step.
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .netmodel import PHASE_SHIFT

log = logging.getLogger(__name__)

F0 = 60.0
TWO_PI = 2 * math.pi
_SEQ = (complex(PHASE_SHIFT["A"]), complex(PHASE_SHIFT["B"]), complex(PHASE_SHIFT["C"]))
_A2, _A1 = _SEQ[1], _SEQ[2]


def _balanced(phasor: complex) -> tuple[complex, complex, complex]:
    return (phasor, phasor * _A2, phasor * _A1)


def _power_into(v, e, y: complex) -> complex:
    """Power delivered to terminal v from EMF e behind admittance y (three phases)."""
    return (v[0] * (y * (e[0] - v[0])).conjugate() + v[1] * (y * (e[1] - v[1])).conjugate()
            + v[2] * (y * (e[2] - v[2])).conjugate())


def positive_sequence(v) -> complex:
    """Positive-sequence phasor of a three-phase set (A, B, C order)."""
    return (v[0] + v[1] / _SEQ[1] + v[2] / _SEQ[2]) / 3


def wrap_angle(a: float) -> float:
    return (a + math.pi) % TWO_PI - math.pi


@dataclass
class Reference:
    """Piecewise-linear set-point: a held value, optionally ramping over [t0, t1]."""

    value0: float = 0.0
    t0: float = 0.0
    t1: float = 0.0
    value1: float = 0.0

    def set(self, t: float, value: float):
        self.value0 = self.value1 = value
        self.t0 = self.t1 = t

    def ramp(self, t0: float, t1: float, start: float | None, end: float):
        self.value0 = self(t0) if start is None else start
        self.value1 = end
        self.t0, self.t1 = t0, t1

    def __call__(self, t: float) -> float:
        if t >= self.t1:
            return self.value1
        if t <= self.t0:
            return self.value0
        return self.value0 + (self.value1 - self.value0) * (t - self.t0) / (self.t1 - self.t0)


@dataclass
class DeviceEvent:
    time: float
    device: str
    kind: str
    detail: str = ""

    def line(self) -> str:
        return f"{self.time:.6f} {self.kind} {self.device} {self.detail}".rstrip()


class Device:
    """Common surface used by the engine."""

    id: str
    bus: str
    rating: float
    online: bool
    thevenin = False
    v_nominal: float  # line-to-neutral at the terminal

    def state(self) -> list[float]:
        return []

    def set_state(self, x: list[float]):
        pass

    def derivatives(self, x: list[float], v, t: float) -> list[float]:
        return []

    def discrete_update(self, t: float, dt: float, v) -> list[DeviceEvent]:
        return []


@dataclass(eq=False)
class GfmInverter(Device):
    """Grid-forming inverter: P-f and Q-V droop on an EMF behind a reactance.

    States: angle, filtered P, filtered Q, delivered energy (J).
    """

    id: str
    bus: str
    rating: float
    v_nominal: float
    f0: float = F0
    m_p: float = 0.01
    m_q: float = 0.05
    p_ref: float = 0.0
    q_ref: float = 0.0
    t_f: float = 0.05
    x_pu: float = 0.1
    overload: float = 1.2
    e0: float | None = None
    e0_pu: float = 1.0
    online: bool = True
    theta: float = 0.0
    p_f: float = 0.0
    q_f: float = 0.0
    energy: float = 0.0
    p_schedule: Reference | None = None
    overloaded: bool = field(default=False, repr=False)
    thevenin = True

    def __post_init__(self):
        if not 0 < self.m_p <= 0.1:
            raise ValueError(f"{self.id}: P-f droop must lie in (0, 0.1]")
        if not self.rating > 0:
            raise ValueError(f"{self.id}: rating must be positive")
        if self.e0 is None:
            self.e0 = self.e0_pu * self.v_nominal
        # coupling reactance on device base, three-phase rating
        self.x_ohm = self.x_pu * 3 * self.v_nominal**2 / self.rating
        self.y = 1 / complex(0, self.x_ohm)

    def state(self):
        return [self.theta, self.p_f, self.q_f, self.energy]

    def set_state(self, x):
        self.theta, self.p_f, self.q_f, self.energy = x

    def frequency(self, p_f: float | None = None) -> float:
        p_f = self.p_f if p_f is None else p_f
        return self.f0 * (1 - self.m_p * (p_f - self.p_ref) / self.rating)

    def emf_magnitude(self, q_f: float | None = None) -> float:
        q_f = self.q_f if q_f is None else q_f
        return self.e0 * (1 - self.m_q * (q_f - self.q_ref) / self.rating)

    def emf(self, x=None) -> tuple[complex, complex, complex]:
        theta, _, q_f, _ = self.state() if x is None else x
        return _balanced(self.emf_magnitude(q_f) * cmath.exp(1j * theta))

    def terminal_power(self, v, x=None) -> complex:
        return complex(_power_into(v, self.emf(x), self.y))

    def derivatives(self, x, v, t):
        theta, p_f, q_f, _ = x
        s = _power_into(v, self.emf(x), self.y)
        f = self.f0 * (1 - self.m_p * (p_f - self.p_ref) / self.rating)
        return [TWO_PI * (f - self.f0), (s.real - p_f) / self.t_f, (s.imag - q_f) / self.t_f, s.real]

    def discrete_update(self, t, dt, v):
        if self.p_schedule is not None:
            self.p_ref = self.p_schedule(t)
        over = abs(self.p_f) > self.overload * self.rating
        events = []
        if over and not self.overloaded:
            events.append(DeviceEvent(t, self.id, "OVERLOAD", f"P_f={self.p_f:.0f} W"))
        self.overloaded = over
        return events

    def synchronize(self, v):
        """Align the EMF with an energized terminal (or zero angle on a dead bus)."""
        vp = positive_sequence(v)
        self.theta = cmath.phase(vp) if abs(vp) > 1e-3 * self.v_nominal else 0.0
        self.p_f = self.q_f = 0.0

    def step(self, v_terminal, dt: float) -> complex:
        """Advance one Heun step against a fixed terminal voltage; returns injected power."""
        v = np.asarray(v_terminal, dtype=complex)
        x0 = self.state()
        k1 = self.derivatives(x0, v, 0.0)
        xp = [a + dt * b for a, b in zip(x0, k1)]
        k2 = self.derivatives(xp, v, dt)
        self.set_state([a + 0.5 * dt * (b + c) for a, b, c in zip(x0, k1, k2)])
        return self.terminal_power(v)


@dataclass(eq=False)
class GflInverter(Device):
    """Grid-following inverter injecting ramp-limited commanded power."""

    id: str
    bus: str
    rating: float
    v_nominal: float
    p_cmd: float = 0.0
    q_cmd: float = 0.0
    ramp: float | None = None  # W/s, None for unlimited
    i_limit: float | None = None  # amps per phase
    online: bool = True
    v_sync_pu: float = 0.7
    p_out: float = 0.0
    q_out: float = 0.0
    p_schedule: Reference = field(default_factory=Reference)
    idle: bool = field(default=False, repr=False)
    limited: bool = field(default=False, repr=False)

    def __post_init__(self):
        if not self.rating > 0:
            raise ValueError(f"{self.id}: rating must be positive")
        if self.i_limit is None:
            self.i_limit = 1.1 * self.rating / (3 * self.v_nominal)
        self.p_schedule.set(0.0, self.p_cmd)

    def command(self, t: float) -> complex:
        return complex(self.p_schedule(t), self.q_cmd)

    def power(self) -> complex:
        return complex(self.p_out, self.q_out) if (self.online and not self.idle) else 0j

    def discrete_update(self, t, dt, v):
        events = []
        vmag = sum(abs(x) for x in v) / len(v)
        dead = vmag < self.v_sync_pu * self.v_nominal
        if not self.online or dead:
            if dead and self.online and not self.idle and (self.p_cmd or self.q_cmd):
                events.append(DeviceEvent(t, self.id, "IDLE", "terminal below sync threshold"))
            self.idle = dead
            self.p_out = self.q_out = 0.0
            return events
        self.idle = False
        self.p_cmd = max(-self.rating, min(self.rating, self.p_schedule(t)))
        step = math.inf if self.ramp is None else self.ramp * dt
        self.p_out += max(-step, min(step, self.p_cmd - self.p_out))
        q_room = math.sqrt(max(self.rating**2 - self.p_out**2, 0.0))
        self.q_out = max(-q_room, min(q_room, self.q_cmd))
        s_max = 3 * self.i_limit * vmag
        s = math.hypot(self.p_out, self.q_out)
        limited = s > s_max
        if limited:
            scale = s_max / s
            self.p_out *= scale
            self.q_out *= scale
        if limited != self.limited:
            events.append(DeviceEvent(t, self.id, "CURRENT_LIMIT" if limited else "CURRENT_LIMIT_CLEAR"))
        self.limited = limited
        return events

    def injection_current(self, v) -> np.ndarray:
        """Per-phase injected current for a terminal voltage (zero on an idle device)."""
        s = self.power() / 3
        v = np.asarray(v, dtype=complex)
        return np.conj(s / v) if s else np.zeros(3, complex)

    def step(self, v_terminal, dt: float, t: float = 0.0) -> np.ndarray:
        self.discrete_update(t, dt, np.asarray(v_terminal, dtype=complex))
        return self.injection_current(v_terminal)


@dataclass(eq=False)
class DieselGen(Device):
    """Synchronous genset: classical EMF behind transient reactance, swing
    equation, and a first-order governor with speed droop.

    Damping acts on rotor slip relative to a washout estimate of terminal
    frequency, so it adds no steady-state droop.
    States: rotor angle, speed deviation (pu), mechanical power, filtered
    terminal angle.
    """

    id: str
    bus: str
    rating: float
    v_nominal: float
    f0: float = F0
    h: float = 1.5
    d: float = 1.0
    r: float = 0.03
    t_g: float = 0.5
    xd_pu: float = 0.25
    t_w: float = 0.02
    p_ref: float = 0.0
    trip_pu: float = 0.05
    online: bool = True
    e_mag: float | None = None
    delta: float = 0.0
    dw: float = 0.0
    pm: float = 0.0
    phi: float = 0.0
    p_schedule: Reference | None = None
    thevenin = True

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"{self.id}: governor droop must be positive")
        if not self.rating > 0:
            raise ValueError(f"{self.id}: rating must be positive")
        if self.e_mag is None:
            self.e_mag = self.v_nominal
        self.x_ohm = self.xd_pu * 3 * self.v_nominal**2 / self.rating
        self.y = 1 / complex(0, self.x_ohm)
        self.w0 = TWO_PI * self.f0

    def state(self):
        return [self.delta, self.dw, self.pm, self.phi]

    def set_state(self, x):
        self.delta, self.dw, self.pm, self.phi = x

    def frequency(self, dw: float | None = None) -> float:
        return self.f0 * (1 + (self.dw if dw is None else dw))

    def emf(self, x=None) -> tuple[complex, complex, complex]:
        delta = self.delta if x is None else x[0]
        return _balanced(self.e_mag * cmath.exp(1j * delta))

    def terminal_power(self, v, x=None) -> complex:
        return complex(_power_into(v, self.emf(x), self.y))

    def derivatives(self, x, v, t):
        delta, dw, pm, phi = x
        pe = _power_into(v, self.emf(x), self.y).real
        theta_v = phi + wrap_angle(cmath.phase(positive_sequence(v)) - phi)
        w_term = (theta_v - phi) / (self.t_w * self.w0)
        ddw = ((pm - pe) / self.rating - self.d * (dw - w_term)) / (2 * self.h)
        dpm = (self.p_ref - dw / self.r * self.rating - pm) / self.t_g
        if (pm >= self.rating and dpm > 0) or (pm <= 0 and dpm < 0):
            dpm = 0.0
        return [self.w0 * dw, ddw, dpm, (theta_v - phi) / self.t_w]

    def discrete_update(self, t, dt, v):
        if self.p_schedule is not None:
            self.p_ref = self.p_schedule(t)
        if abs(self.dw) > self.trip_pu:
            self.online = False
            return [DeviceEvent(t, self.id, "TRIP", f"speed deviation {self.dw:+.4f} pu")]
        return []

    def synchronize(self, v):
        vp = positive_sequence(v)
        self.delta = cmath.phase(vp) if abs(vp) > 1e-3 * self.v_nominal else 0.0
        self.phi = self.delta
        self.e_mag = max(abs(vp), self.v_nominal)
        self.dw = 0.0
        self.pm = 0.0

    def step(self, v_terminal, dt: float) -> complex:
        v = np.asarray(v_terminal, dtype=complex)
        x0 = self.state()
        k1 = self.derivatives(x0, v, 0.0)
        xp = [a + dt * b for a, b in zip(x0, k1)]
        k2 = self.derivatives(xp, v, dt)
        self.set_state([a + 0.5 * dt * (b + c) for a, b, c in zip(x0, k1, k2)])
        return self.terminal_power(v)


def gfm_step(dev: GfmInverter, terminal, dt: float) -> complex:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return dev.step(terminal, dt)


def gfl_step(dev: GflInverter, terminal, dt: float, t: float = 0.0) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return dev.step(terminal, dt, t)


def diesel_step(dev: DieselGen, terminal, dt: float) -> complex:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return dev.step(terminal, dt)


@dataclass
class SharingReport:
    devices: list[str]
    normalized: list[float]  # (P - P_ref) * droop / rating
    spread: float

    @property
    def consistent(self) -> bool:
        return self.spread <= 1e-3 * max(abs(x) for x in self.normalized) + 1e-12


def power_sharing_check(devices, powers: dict[str, float]) -> SharingReport:
    """Normalized droop loading of each source given its measured active power.

    At a common steady-state frequency every entry equals -(f - f0)/f0.
    """
    ids, vals = [], []
    for dev in devices:
        droop = dev.m_p if isinstance(dev, GfmInverter) else dev.r
        ids.append(dev.id)
        vals.append((powers[dev.id] - dev.p_ref) * droop / dev.rating)
    spread = max(vals) - min(vals) if vals else 0.0
    return SharingReport(ids, vals, spread)
