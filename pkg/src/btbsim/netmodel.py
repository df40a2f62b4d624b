"""Three-phase unbalanced network model and phasor solver.

Everything is in SI units: volts line-to-neutral, amps, watts, VAR.  Node
voltages are complex phasors in a frame rotating at nominal frequency.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit

log = logging.getLogger(__name__)

PHASES = ("A", "B", "C")
PHASE_SHIFT = {"A": 1.0 + 0j, "B": np.exp(-2j * np.pi / 3), "C": np.exp(2j * np.pi / 3)}
S_BASE = 1e6
SWITCH_ADMITTANCE = 1e6
LOW_VOLTAGE_PU = 0.5
FT_PER_MILE = 5280.0


class NetworkError(Exception):
    pass


class TopologyError(NetworkError):
    pass


class ConvergenceError(NetworkError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]
    nominal_voltage: float  # line-to-neutral
    kind: str = "node"

    def __post_init__(self):
        if not self.phases or any(p not in PHASES for p in self.phases):
            raise ValueError(f"bus {self.id}: bad phases {self.phases!r}")
        if not self.nominal_voltage > 0:
            raise ValueError(f"bus {self.id}: nominal voltage must be positive")
        if self.kind not in ("device", "load", "node"):
            raise ValueError(f"bus {self.id}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class TransformerSpec:
    rating: float
    primary_voltage: float  # line-to-line
    secondary_voltage: float
    r_pu: float
    x_pu: float

    def __post_init__(self):
        if not (self.rating > 0 and self.primary_voltage > 0 and self.secondary_voltage > 0):
            raise ValueError("transformer rating and voltages must be positive")

    @property
    def ratio(self) -> float:
        return self.primary_voltage / self.secondary_voltage

    def secondary_impedance(self) -> complex:
        """Series impedance referred to the secondary side, ohms per phase."""
        return complex(self.r_pu, self.x_pu) * self.secondary_voltage**2 / self.rating


@dataclass(frozen=True)
class RegulatorSpec:
    location: str  # branch id
    monitored_bus: str
    band_center: float  # volts line-to-neutral
    band_width: float  # volts, full width
    tap_step: float = 0.00625
    tap_range: int = 16
    dwell: float = 30.0

    def __post_init__(self):
        if not self.band_width > 0:
            raise ValueError("regulator band width must be positive")
        if self.tap_range < 0 or not self.tap_step > 0:
            raise ValueError("bad regulator tap settings")


@dataclass(frozen=True, eq=False)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    kind: str  # line | transformer | regulator | switch
    phases: tuple[str, ...]
    series_impedance: np.ndarray | None = None  # k x k ohms
    shunt_admittance: np.ndarray | None = None  # k x k siemens, total
    closed: bool = True  # initial state for switches
    transformer: TransformerSpec | None = None

    def __post_init__(self):
        if self.kind not in ("line", "transformer", "regulator", "switch"):
            raise ValueError(f"branch {self.id}: unknown kind {self.kind!r}")
        k = len(self.phases)
        if self.kind == "line":
            z = self.series_impedance
            if z is None or z.shape != (k, k):
                raise ValueError(f"branch {self.id}: impedance must be {k}x{k}")
            if not np.allclose(z, z.T):
                raise ValueError(f"branch {self.id}: line impedance not symmetric")
        if self.kind == "transformer" and self.transformer is None:
            raise ValueError(f"branch {self.id}: transformer spec missing")

    def primitive(self, tap: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Branch admittance blocks (Yff, Yft, Ytf, Ytt) for a closed branch."""
        k = len(self.phases)
        eye = np.eye(k, dtype=complex)
        if self.kind == "line":
            ys = np.linalg.inv(self.series_impedance)
            ysh = self.shunt_admittance / 2 if self.shunt_admittance is not None else 0 * eye
            return ys + ysh, -ys, -ys, ys + ysh
        if self.kind == "switch":
            ys = SWITCH_ADMITTANCE * eye
            return ys, -ys, -ys, ys
        if self.kind == "transformer":
            y = 1 / self.transformer.secondary_impedance()
            n = self.transformer.ratio
            return y / n**2 * eye, -y / n * eye, -y / n * eye, y * eye
        # regulator: ideal ratio 1:tap then a negligible series impedance
        y = SWITCH_ADMITTANCE * eye
        return tap**2 * y, -tap * y, -tap * y, y


@dataclass(frozen=True)
class ConstantPowerLoad:
    id: str
    bus: str
    power: tuple[complex, ...]  # per phase, in bus phase order
    energized: bool = True

    @property
    def total(self) -> complex:
        return complex(sum(self.power))


@dataclass(frozen=True)
class ShuntCapacitor:
    id: str
    bus: str
    kvar: float  # total at nominal voltage


@dataclass(frozen=True, eq=False)
class NetworkModel:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    loads: tuple[ConstantPowerLoad, ...] = ()
    shunts: tuple[ShuntCapacitor, ...] = ()
    regulators: tuple[RegulatorSpec, ...] = ()
    nodes: tuple[tuple[str, str], ...] = field(init=False, repr=False)
    node_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        nodes = tuple((b.id, p) for b in self.buses for p in b.phases)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "node_index", {n: i for i, n in enumerate(nodes)})
        self.validate()

    def validate(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate bus ids")
        bus = {b.id: b for b in self.buses}
        br_ids = [br.id for br in self.branches]
        if len(set(br_ids)) != len(br_ids):
            raise TopologyError("duplicate branch ids")
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in bus:
                    raise TopologyError(f"branch {br.id} references unknown bus {end}")
                missing = set(br.phases) - set(bus[end].phases)
                if missing:
                    raise TopologyError(f"branch {br.id}: phases {sorted(missing)} absent at bus {end}")
        for ld in list(self.loads) + list(self.shunts):
            if ld.bus not in bus:
                raise TopologyError(f"{ld.id} references unknown bus {ld.bus}")
        for ld in self.loads:
            if len(ld.power) != len(bus[ld.bus].phases):
                raise TopologyError(f"load {ld.id}: one power entry per bus phase expected")
        branch_ids = set(br_ids)
        for reg in self.regulators:
            if reg.location not in branch_ids or reg.monitored_bus not in bus:
                raise TopologyError(f"regulator on {reg.location}: dangling reference")

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def branch(self, branch_id: str) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(branch_id)

    def bus_nodes(self, bus_id: str) -> list[int]:
        b = self.bus(bus_id)
        return [self.node_index[(bus_id, p)] for p in b.phases]

    @property
    def nominal(self) -> np.ndarray:
        vn = {b.id: b.nominal_voltage for b in self.buses}
        return np.array([vn[b] for b, _ in self.nodes])

    def initial_switches(self) -> dict[str, bool]:
        return {br.id: br.closed for br in self.branches if br.kind == "switch"}

    def islands(self, switches: dict[str, bool] | None = None) -> list[frozenset[str]]:
        """Connected bus groups given switch states (open switches separate)."""
        switches = switches or self.initial_switches()
        parent = {b.id: b.id for b in self.buses}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for br in self.branches:
            if br.kind == "switch" and not switches.get(br.id, br.closed):
                continue
            a, b = find(br.from_bus), find(br.to_bus)
            if a != b:
                parent[b] = a
        groups: dict[str, set] = {}
        for b in self.buses:
            groups.setdefault(find(b.id), set()).add(b.id)
        return [frozenset(g) for g in groups.values()]


@dataclass(eq=False)
class AdmittanceSystem:
    """Nodal admittance for one topology, with source admittances folded in."""

    network: NetworkModel
    switches: dict[str, bool]
    taps: dict[str, int]
    Y: sp.csr_matrix
    islands: list[frozenset[str]]
    live: np.ndarray  # bool per node: belongs to an island with a source
    source_buses: frozenset[str]

    @property
    def n_islands(self) -> int:
        return len(self.islands)

    def tap_ratio(self, branch_id: str) -> float:
        reg = next(r for r in self.network.regulators if r.location == branch_id)
        return 1.0 + reg.tap_step * self.taps.get(branch_id, 0)

    def island_of(self, bus_id: str) -> frozenset[str]:
        return next(isl for isl in self.islands if bus_id in isl)

    def branch_table(self) -> dict:
        """Closed branches: id -> (from nodes, to nodes, Yff, Yft, Ytf, Ytt), cached."""
        if getattr(self, "_branch_table", None) is None:
            idx = self.network.node_index
            table = {}
            for br in self.network.branches:
                if br.kind == "switch" and not self.switches[br.id]:
                    continue
                tap = self.tap_ratio(br.id) if br.kind == "regulator" else 1.0
                fi = np.array([idx[(br.from_bus, p)] for p in br.phases])
                ti = np.array([idx[(br.to_bus, p)] for p in br.phases])
                table[br.id] = (fi, ti, *br.primitive(tap))
            self._branch_table = table
        return self._branch_table


def assemble_admittance(network: NetworkModel, switches: dict[str, bool] | None = None,
                        taps: dict[str, int] | None = None,
                        sources: dict[str, complex] | None = None) -> AdmittanceSystem:
    """Build the nodal admittance matrix.

    ``sources`` maps bus id to the per-phase Norton admittance of every
    voltage-establishing device at that bus; those buses make their island live.
    Shunt capacitors are constant admittances sized at nominal voltage.
    """
    switches = {**network.initial_switches(), **(switches or {})}
    taps = dict(taps or {})
    sources = sources or {}
    idx = network.node_index
    rows, cols, vals = [], [], []

    def stamp(ia, ib, block):
        for r, i in enumerate(ia):
            for c, j in enumerate(ib):
                if block[r, c] != 0:
                    rows.append(i)
                    cols.append(j)
                    vals.append(block[r, c])

    reg_step = {r.location: r.tap_step for r in network.regulators}
    for br in network.branches:
        if br.kind == "switch" and not switches[br.id]:
            continue
        tap = 1.0 + reg_step.get(br.id, 0.0) * taps.get(br.id, 0)
        yff, yft, ytf, ytt = br.primitive(tap)
        fi = [idx[(br.from_bus, p)] for p in br.phases]
        ti = [idx[(br.to_bus, p)] for p in br.phases]
        stamp(fi, fi, yff)
        stamp(fi, ti, yft)
        stamp(ti, fi, ytf)
        stamp(ti, ti, ytt)
    for cap in network.shunts:
        b = network.bus(cap.bus)
        y = 1j * cap.kvar * 1e3 / len(b.phases) / b.nominal_voltage**2
        for p in b.phases:
            rows.append(idx[(cap.bus, p)])
            cols.append(idx[(cap.bus, p)])
            vals.append(y)
    for bus_id, y in sources.items():
        for i in network.bus_nodes(bus_id):
            rows.append(i)
            cols.append(i)
            vals.append(y)
    n = len(network.nodes)
    Y = sp.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()

    islands = network.islands(switches)
    live_buses = set()
    for isl in islands:
        if isl & set(sources):
            live_buses |= isl
    live = np.array([b in live_buses for b, _ in network.nodes], dtype=bool)
    return AdmittanceSystem(network, switches, taps, Y, islands, live, frozenset(sources))


@dataclass(eq=False)
class DeviceInjections:
    """Per-node injections seen by the solver.

    ``source_current`` is the Norton current of Thevenin devices (their
    admittance already lives in the system).  ``power`` is constant-power
    injection from grid-following devices.  ``load`` is constant-power
    consumption that falls back to constant impedance at low voltage.
    """

    source_current: np.ndarray
    power: np.ndarray
    load: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DeviceInjections":
        return cls(np.zeros(n, complex), np.zeros(n, complex), np.zeros(n, complex))


@dataclass(eq=False)
class NetworkSolution:
    system: AdmittanceSystem
    voltages: np.ndarray  # complex per node, zero on dead nodes
    converged: bool
    iterations: int
    mismatch: float  # sum of per-node complex power mismatch magnitudes, VA

    def voltage(self, bus_id: str, phase: str) -> complex:
        return complex(self.voltages[self.system.network.node_index[(bus_id, phase)]])

    def bus_voltages(self, bus_id: str) -> np.ndarray:
        return self.voltages[self.system.network.bus_nodes(bus_id)]

    def branch_currents(self, branch_id: str) -> np.ndarray:
        """Currents entering the branch at its from-bus, one per branch phase."""
        return branch_flows(self, branch_id)[0]

    def node_voltage_map(self) -> dict[tuple[str, str], complex]:
        return {n: complex(v) for n, v in zip(self.system.network.nodes, self.voltages)}


def branch_flows(solution: NetworkSolution, branch_id: str) -> tuple[np.ndarray, np.ndarray]:
    """Terminal currents (from-end, to-end) of one branch, computed from its primitive."""
    entry = solution.system.branch_table().get(branch_id)
    if entry is None:
        k = len(solution.system.network.branch(branch_id).phases)
        return np.zeros(k, complex), np.zeros(k, complex)
    fi, ti, yff, yft, ytf, ytt = entry
    vf, vt = solution.voltages[fi], solution.voltages[ti]
    return yff @ vf + yft @ vt, ytf @ vf + ytt @ vt


def branch_losses(solution: NetworkSolution) -> complex:
    """Complex power absorbed by all branches and shunt capacitors."""
    net = solution.system.network
    v = solution.voltages
    total = 0j
    for fi, ti, yff, yft, ytf, ytt in solution.system.branch_table().values():
        vf, vt = v[fi], v[ti]
        total += vf @ np.conj(yff @ vf + yft @ vt) + vt @ np.conj(ytf @ vf + ytt @ vt)
    for cap in net.shunts:
        b = net.bus(cap.bus)
        y = 1j * cap.kvar * 1e3 / len(b.phases) / b.nominal_voltage**2
        vc = solution.bus_voltages(cap.bus)
        total += np.sum(vc * np.conj(y * vc))
    return complex(total)


def load_currents(v: np.ndarray, s: np.ndarray, vnom: np.ndarray) -> np.ndarray:
    """Constant-power load current, constant impedance below the low-voltage threshold."""
    vlow = LOW_VOLTAGE_PU * vnom
    low = np.abs(v) < vlow
    with np.errstate(divide="ignore", invalid="ignore"):
        i = np.conj(s / v)
    if low.any():
        i[low] = np.conj(s[low]) / vlow[low] ** 2 * v[low]
    return i


def load_power_drawn(v: np.ndarray, s: np.ndarray, vnom: np.ndarray) -> np.ndarray:
    return v * np.conj(load_currents(v, s, vnom))


@njit(cache=True)
def _chord_newton(Y, Jinv, v, isrc, spow, sload, vnom, tol, max_iter, stall):
    """Chord-Newton iterations with a fixed inverse Jacobian.

    Returns (mismatch, iterations, status): 0 converged, 1 out of iterations,
    2 stalled (Jacobian should be refreshed). ``v`` is updated in place.
    """
    n = v.shape[0]
    r = np.empty(2 * n)
    vlow = LOW_VOLTAGE_PU * vnom
    last = np.inf
    it = 0
    while True:
        f = np.dot(Y, v) - isrc
        mismatch = 0.0
        for i in range(n):
            vi = v[i]
            if abs(vi) < vlow[i]:
                f[i] += np.conj(sload[i]) / (vlow[i] * vlow[i]) * vi
            else:
                f[i] += np.conj(sload[i] / vi)
            f[i] -= np.conj(spow[i] / vi)
            mismatch += abs(vi * np.conj(f[i]))
        if mismatch <= tol:
            return mismatch, it, 0
        if not np.isfinite(mismatch) or it >= max_iter:
            return mismatch, it, 1
        if it > 0 and mismatch > stall * last:
            return mismatch, it, 2
        last = mismatch
        for i in range(n):
            r[i] = f[i].real
            r[i + n] = f[i].imag
        dx = np.dot(Jinv, r)
        for i in range(n):
            v[i] -= complex(dx[i], dx[i + n])
        it += 1


class PhasorSolver:
    """Newton current-injection solver in rectangular coordinates.

    The inverse Jacobian is reused between calls (chord iterations) while
    convergence stays fast; it is recomputed when an iteration stalls.
    One instance serves one topology.
    """

    def __init__(self, system: AdmittanceSystem, tol: float = 1e-6 * S_BASE, max_iter: int = 50,
                 reuse_jacobian: bool = True):
        self.system = system
        self.tol = tol
        self.max_iter = max_iter
        self.reuse = reuse_jacobian
        self.live_idx = np.flatnonzero(system.live)
        li = self.live_idx
        self.n = len(li)
        self.Y = np.ascontiguousarray(system.Y[li][:, li].toarray()) if self.n else np.zeros((0, 0), complex)
        self.vnom = system.network.nominal[li]
        self._jinv = None
        self.refreshes = 0

    def check_sources(self, inj: DeviceInjections):
        dead = ~self.system.live
        if np.any(inj.load[dead] != 0):
            nodes = [self.system.network.nodes[i] for i in np.flatnonzero(dead & (inj.load != 0))]
            raise TopologyError(f"island with energized load but no source: {sorted({b for b, _ in nodes})}")

    def _residual(self, v, isrc, spow, sload):
        return self.Y @ v - isrc + load_currents(v, sload, self.vnom) - np.conj(spow / v)

    def jacobian(self, v, spow, sload) -> np.ndarray:
        """Real 2n x 2n Jacobian of the current mismatch w.r.t. (Re v, Im v)."""
        n = self.n
        G, B = self.Y.real, self.Y.imag
        vlow = LOW_VOLTAGE_PU * self.vnom
        low = np.abs(v) < vlow
        # dI/de for constant power consumption s: -conj(s)/conj(v)^2; dI/df = -j * dI/de
        s_cp = np.where(low, 0, sload) - spow
        d_e = -np.conj(s_cp) / np.conj(v) ** 2
        d_f = -1j * d_e
        y_low = np.where(low, np.conj(sload) / vlow**2, 0)
        d_e = d_e + y_low
        d_f = d_f + 1j * y_low
        J = np.empty((2 * n, 2 * n))
        J[:n, :n] = G
        J[:n, n:] = -B
        J[n:, :n] = B
        J[n:, n:] = G
        r = np.arange(n)
        J[r, r] += d_e.real
        J[r, r + n] += d_f.real
        J[r + n, r] += d_e.imag
        J[r + n, r + n] += d_f.imag
        return J

    def solve(self, inj: DeviceInjections, guess: np.ndarray | None = None, check: bool = True) -> NetworkSolution:
        if check:
            self.check_sources(inj)
        li = self.live_idx
        n_all = len(self.system.network.nodes)
        out = np.zeros(n_all, complex)
        if self.n == 0:
            return NetworkSolution(self.system, out, True, 0, 0.0)
        if guess is None:
            v = self._flat_start()
        else:
            v = np.array(guess[li], dtype=complex)
            bad = np.abs(v) < 1e-3 * self.vnom
            if bad.any():
                v[bad] = self._flat_start()[bad]
        isrc = np.ascontiguousarray(inj.source_current[li])
        spow = np.ascontiguousarray(inj.power[li])
        sload = np.ascontiguousarray(inj.load[li])
        total = 0
        stall = 0.25 if self.reuse else -1.0
        while True:
            if self._jinv is None or not self.reuse:
                self._jinv = np.linalg.inv(self.jacobian(v, spow, sload))
                self.refreshes += 1
            mismatch, its, status = _chord_newton(self.Y, self._jinv, v, isrc, spow, sload, self.vnom,
                                                  self.tol, self.max_iter - total, stall)
            total += its
            if status == 0:
                out[li] = v
                return NetworkSolution(self.system, out, True, total, mismatch)
            if status == 1:
                out[li] = v
                sol = NetworkSolution(self.system, out, False, total, mismatch)
                raise ConvergenceError(f"no convergence after {total} iterations, mismatch {mismatch:.3g} VA", sol)
            self._jinv = None

    def _flat_start(self) -> np.ndarray:
        net = self.system.network
        return np.array([net.bus(b).nominal_voltage * PHASE_SHIFT[p]
                         for b, p in (net.nodes[i] for i in self.live_idx)])


def solve_network(system: AdmittanceSystem, injections: DeviceInjections,
                  guess: NetworkSolution | None = None, tol: float = 1e-6 * S_BASE,
                  max_iter: int = 50) -> NetworkSolution:
    """One-shot solve; raises ConvergenceError carrying the last iterate."""
    solver = PhasorSolver(system, tol=tol, max_iter=max_iter, reuse_jacobian=False)
    return solver.solve(injections, None if guess is None else guess.voltages)


class RegulatorController:
    """Dead-band tap changer with a dwell timer."""

    def __init__(self, spec: RegulatorSpec, tap: int = 0):
        self.spec = spec
        self.tap = tap
        self.timer = 0.0
        self.direction = 0

    def update(self, v_monitored: float, dt: float) -> int:
        s = self.spec
        lo = s.band_center - s.band_width / 2
        hi = s.band_center + s.band_width / 2
        want = 1 if v_monitored < lo else -1 if v_monitored > hi else 0
        if want == 0 or want != self.direction:
            self.timer = 0.0
            self.direction = want
            if want == 0:
                return 0
        self.timer += dt
        # tolerance absorbs float accumulation of dt so the tap time is dt-independent
        if self.timer < s.dwell - 1e-6:
            return 0
        self.timer = 0.0
        new = self.tap + want
        if abs(new) > s.tap_range:
            log.warning("regulator %s at tap limit %+d", s.location, self.tap)
            return 0
        self.tap = new
        return want


def regulator_update(solution: NetworkSolution, spec: RegulatorSpec,
                     controller: RegulatorController, dt: float) -> int:
    """Advance the tap changer by dt; returns the tap change (-1, 0 or +1)."""
    v = solution.bus_voltages(spec.monitored_bus)
    if not np.any(np.abs(v) > 0):
        raise NetworkError(f"regulator {spec.location}: monitored bus {spec.monitored_bus} is dead")
    return controller.update(float(np.mean(np.abs(v))), dt)
