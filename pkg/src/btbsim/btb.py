"""Back-to-back AC-DC-AC converter: two AC terminals joined only by a DC link.

One side regulates the DC-link voltage (grid-following, PI on Vdc error);
the other controls transferred power, either grid-following with a ramped
schedule or grid-forming with the schedule as its droop power reference.
Sign convention: ``p_reg`` is power drawn from the regulating side's AC
network into the link, ``p_pow`` is power delivered from the link into the
power side's AC network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .devices import DeviceEvent, GfmInverter, Reference

VDC_NOMINAL = 8000.0


class BtbFault(Exception):
    pass


@dataclass
class DcLinkState:
    vdc: float
    capacitance: float = 5e-3
    vdc_nominal: float = VDC_NOMINAL
    trip_band: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        if not self.vdc > 0:
            raise ValueError("DC-link voltage must be positive")
        if not self.capacitance > 0:
            raise ValueError("DC-link capacitance must be positive")

    @property
    def energy(self) -> float:
        return 0.5 * self.capacitance * self.vdc**2

    @property
    def vdc_pu(self) -> float:
        return self.vdc / self.vdc_nominal

    def in_band(self) -> bool:
        lo, hi = self.trip_band
        return lo <= self.vdc_pu <= hi


def vdc_from_energy(energy: float, capacitance: float) -> float:
    return math.sqrt(2 * max(energy, 0.0) / capacitance)


def dc_link_step(state: DcLinkState, p_in: float, p_out: float, dt: float, p_loss: float = 0.0) -> DcLinkState:
    """Integrate C*Vdc*dVdc/dt = P_in - P_out - P_loss over dt (exact for constant powers).

    Raises BtbFault if the result leaves the protection band.
    """
    if dt <= 0 or state.vdc <= 0:
        raise ValueError("need dt > 0 and Vdc > 0")
    energy = state.energy + (p_in - p_out - p_loss) * dt
    if energy <= 0:
        raise BtbFault("DC link fully discharged")
    new = DcLinkState(vdc_from_energy(energy, state.capacitance), state.capacitance,
                      state.vdc_nominal, state.trip_band)
    if not new.in_band():
        raise BtbFault(f"Vdc {new.vdc_pu:.3f} pu outside protection band")
    return new


def charge_time(capacitance: float, v0: float, v1: float, power: float) -> float:
    """Time to move the link from v0 to v1 at constant net power."""
    return capacitance * (v1**2 - v0**2) / (2 * power)


@dataclass(eq=False)
class BtbConverter:
    """Two 3-phase AC/DC stages sharing a DC capacitor.

    Continuous states: link energy, PI integrator, then the grid-forming
    power side's states when ``power_mode == "gfm"``.
    """

    id: str
    bus_a: str
    bus_b: str
    rating_a: float = 3e6
    rating_b: float = 3e6
    v_nominal_a: float = 4160 / math.sqrt(3)
    v_nominal_b: float = 4160 / math.sqrt(3)
    regulating: str = "A"
    power_mode: str = "gfl"
    dc: DcLinkState = field(default_factory=lambda: DcLinkState(VDC_NOMINAL))
    kp: float | None = None
    ki: float | None = None
    loss_fraction: float = 0.0
    ramp: float | None = None  # W/s for the grid-following power side
    q_pow: float = 0.0
    precharge_limit: float = 100e3
    precharge_tau: float = 0.02
    m_p: float = 0.01
    m_q: float = 0.05
    e0_pu: float = 1.0
    online: bool = True
    xi: float = 0.0
    p_out: float = 0.0
    schedule: Reference = field(default_factory=Reference)
    enabled: bool = True
    tripped: bool = False
    saturated: bool = field(default=False, repr=False)
    # PI in charge of the link; until then the precharge law holds it at nominal
    engaged: bool = field(default=False, repr=False)
    gfm: GfmInverter | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.regulating not in ("A", "B"):
            raise ValueError("regulating side must be 'A' or 'B'")
        if self.power_mode not in ("gfl", "gfm"):
            raise ValueError("power mode must be 'gfl' or 'gfm'")
        if self.bus_a == self.bus_b:
            raise ValueError("BTB sides must attach to distinct buses")
        if self.kp is None:
            self.kp = 2 * self.reg_rating / self.dc.vdc_nominal
        if self.ki is None:
            self.ki = self.kp / 0.1
        if self.ramp is None:
            self.ramp = self.pow_rating  # 1 pu/s
        self.enabled = abs(self.dc.vdc_pu - 1) < 0.01
        self.engaged = self.enabled
        if self.power_mode == "gfm":
            self.gfm = GfmInverter(f"{self.id}.gfm", self.pow_bus, self.pow_rating, self.pow_v_nominal,
                                   m_p=self.m_p, m_q=self.m_q, e0_pu=self.e0_pu)

    # side bookkeeping
    @property
    def reg_bus(self) -> str:
        return self.bus_a if self.regulating == "A" else self.bus_b

    @property
    def pow_bus(self) -> str:
        return self.bus_b if self.regulating == "A" else self.bus_a

    @property
    def reg_rating(self) -> float:
        return self.rating_a if self.regulating == "A" else self.rating_b

    @property
    def pow_rating(self) -> float:
        return self.rating_b if self.regulating == "A" else self.rating_a

    @property
    def pow_v_nominal(self) -> float:
        return self.v_nominal_b if self.regulating == "A" else self.v_nominal_a

    @property
    def duties(self) -> dict[str, str]:
        """Role per side; exactly one side regulates the link."""
        other = "B" if self.regulating == "A" else "A"
        return {self.regulating: "vdc", other: "power-" + self.power_mode}

    # states
    def state(self) -> list[float]:
        x = [self.dc.energy, self.xi]
        if self.gfm is not None:
            x += self.gfm.state()
        return x

    def set_state(self, x):
        self.dc.vdc = vdc_from_energy(x[0], self.dc.capacitance)
        self.xi = x[1]
        if self.gfm is not None:
            self.gfm.set_state(x[2:])

    def vdc_of(self, x) -> float:
        return vdc_from_energy(x[0], self.dc.capacitance)

    def regulator_command(self, x=None) -> float:
        """Power the regulating side draws from its AC network."""
        if self.tripped or not self.online:
            return 0.0
        if x is None:
            x = self.state()
        vdc = self.vdc_of(x)
        if not self.engaged:
            return self._precharge_command(x[0])
        u = self.kp * (self.dc.vdc_nominal - vdc) + x[1]
        return max(-self.reg_rating, min(self.reg_rating, u))

    def _precharge_command(self, energy: float) -> float:
        w_nom = 0.5 * self.dc.capacitance * self.dc.vdc_nominal**2
        return max(0.0, min(self.precharge_limit, (w_nom - energy) / self.precharge_tau))

    def _engage(self):
        # bumpless: the PI starts from the precharge command
        u = self._precharge_command(self.dc.energy)
        self.xi = u - self.kp * (self.dc.vdc_nominal - self.dc.vdc)
        self.engaged = True

    def power_side_output(self) -> complex:
        """Complex power the grid-following power side injects."""
        if self.tripped or not self.online or not self.enabled or self.power_mode != "gfl":
            return 0j
        return complex(self.p_out, self.q_pow)

    def _to_dc(self, p_ac_drawn: float) -> float:
        keep = 1 - self.loss_fraction
        return p_ac_drawn * keep if p_ac_drawn >= 0 else p_ac_drawn / keep

    def _from_dc(self, p_ac_out: float) -> float:
        keep = 1 - self.loss_fraction
        return p_ac_out / keep if p_ac_out >= 0 else p_ac_out * keep

    def derivatives(self, x, p_reg: float, v_pow, p_pow: float, t: float) -> list[float]:
        """p_reg: AC power actually drawn by the regulating side; p_pow: AC power
        actually delivered by the power side (measured for grid-forming)."""
        if self.tripped or not self.online:
            d = [0.0, 0.0]
            if self.gfm is not None:
                d += [0.0] * 4
            return d
        dw = self._to_dc(p_reg) - self._from_dc(p_pow)
        dxi = 0.0
        if self.engaged:
            e = self.dc.vdc_nominal - self.vdc_of(x)
            u = self.kp * e + x[1]
            if not ((u >= self.reg_rating and e > 0) or (u <= -self.reg_rating and e < 0)):
                dxi = self.ki * e
        d = [dw, dxi]
        if self.gfm is not None:
            d += self.gfm.derivatives(x[2:], v_pow, t) if self.enabled else [0.0] * 4
        return d

    def discrete_update(self, t: float, dt: float, reg_live: bool, pow_live: bool) -> list[DeviceEvent]:
        events = []
        if self.tripped or not self.online:
            return events
        if not self.enabled:
            if abs(self.dc.vdc_pu - 1) < 0.01:
                self.enabled = True
                if self.power_mode == "gfm":
                    self._engage()
                events.append(DeviceEvent(t, self.id, "ENABLE", f"Vdc={self.dc.vdc:.1f} V"))
            return events
        if not self.dc.in_band():
            self.tripped = True
            self.p_out = 0.0
            return [DeviceEvent(t, self.id, "TRIP", f"Vdc {self.dc.vdc_pu:.4f} pu outside band")]
        u = self.kp * (self.dc.vdc_nominal - self.dc.vdc) + self.xi
        sat = abs(u) >= self.reg_rating
        if sat and not self.saturated:
            events.append(DeviceEvent(t, self.id, "SATURATION", "regulating side at rating"))
        self.saturated = sat
        step = self.ramp * dt
        target = max(-self.pow_rating, min(self.pow_rating, self.schedule(t)))
        if not self.engaged and target:
            self._engage()
        if self.power_mode == "gfl":
            target = target if pow_live else 0.0
            self.p_out += max(-step, min(step, target - self.p_out))
            if not pow_live:
                self.p_out = 0.0
        else:
            # the grid-forming droop reference follows the schedule through the same ramp limiter
            self.gfm.p_ref += max(-step, min(step, target - self.gfm.p_ref))
            events += self.gfm.discrete_update(t, dt, None)
        return events


def vdc_regulator_step(conv: BtbConverter, dt: float, p_pow: float | None = None) -> float:
    """Advance the link and PI one Heun step with the regulating AC side stiff.

    ``p_pow`` is the power-side delivery (defaults to its current output).
    Returns the regulating side's power command after the step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    p_out = conv.power_side_output().real if p_pow is None else p_pow
    x0 = conv.state()
    k1 = conv.derivatives(x0, conv.regulator_command(x0), None, p_out, 0.0)
    xp = [a + dt * b for a, b in zip(x0, k1)]
    k2 = conv.derivatives(xp, conv.regulator_command(xp), None, p_out, dt)
    conv.set_state([a + 0.5 * dt * (b + c) for a, b, c in zip(x0, k1, k2)])
    return conv.regulator_command()


def power_side_step(conv: BtbConverter, terminal, dt: float, t: float = 0.0) -> np.ndarray:
    """Ramp the grid-following power side toward its schedule; returns per-phase current."""
    if conv.power_mode != "gfl":
        raise ValueError("power_side_step drives the grid-following mode; grid-forming is a Thevenin source")
    v = np.asarray(terminal, dtype=complex)
    live = float(np.mean(np.abs(v))) > 0.7 * conv.pow_v_nominal
    conv.discrete_update(t, dt, True, live)
    s = conv.power_side_output()
    return np.conj(s / 3 / v) if s else np.zeros(3, complex)


@dataclass
class PrechargeResult:
    time: np.ndarray
    vdc: np.ndarray
    enable_time: float | None


def precharge(conv: BtbConverter, vdc0: float, dt: float = 1e-3, timeout: float = 30.0,
              source_rating: float = 100.0) -> PrechargeResult:
    """Charge the link from vdc0 through the regulating side under its power limit.

    The power side is held idle (energized only by a small grid-forming source
    of ``source_rating`` W, which carries no transfer).  Transfer is enabled once
    Vdc is within 1% of nominal.
    """
    if not vdc0 > 0:
        raise ValueError("initial Vdc must be positive")
    if not source_rating > 0:
        raise ValueError("the power-side source must exist to energize the terminal")
    conv.dc.vdc = vdc0
    conv.xi = 0.0
    conv.enabled = abs(vdc0 / conv.dc.vdc_nominal - 1) < 0.01
    conv.engaged = conv.enabled
    conv.tripped = False
    times, vs = [0.0], [vdc0]
    enable_time = 0.0 if conv.enabled else None
    n = int(round(timeout / dt))
    for k in range(n):
        t = (k + 1) * dt
        x0 = conv.state()
        k1 = conv.derivatives(x0, conv.regulator_command(x0), None, 0.0, t - dt)
        xp = [a + dt * b for a, b in zip(x0, k1)]
        k2 = conv.derivatives(xp, conv.regulator_command(xp), None, 0.0, t)
        conv.set_state([a + 0.5 * dt * (b + c) for a, b, c in zip(x0, k1, k2)])
        times.append(t)
        vs.append(conv.dc.vdc)
        if enable_time is None and abs(conv.dc.vdc_pu - 1) < 0.01:
            conv.enabled = True
            enable_time = t
        if enable_time is not None and t >= enable_time + 0.5:
            break
    if enable_time is None:
        raise BtbFault(f"precharge timed out after {timeout} s at Vdc={conv.dc.vdc:.1f} V")
    return PrechargeResult(np.array(times), np.array(vs), enable_time)
