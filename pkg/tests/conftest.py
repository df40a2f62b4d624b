import math

import pytest

from btbsim.netmodel import Bus, ConstantPowerLoad, NetworkModel
from btbsim.scenario import builtin_case, build_simulation

VLN = 4160 / math.sqrt(3)

_RUNS = {}


def run_builtin(name, **overrides):
    """Run a built-in case once per session and per override set."""
    key = (name, tuple(sorted(overrides.items())))
    if key not in _RUNS:
        doc = builtin_case(name)
        _RUNS[key] = build_simulation(doc, doc.sim_config(**overrides)).run()
    return _RUNS[key]


@pytest.fixture(scope="session")
def builtin_runs():
    return run_builtin


def one_bus(load_kw=0.0, load_kvar=0.0, energized=False):
    """Single three-phase 4.16 kV bus with one balanced load."""
    s = complex(load_kw, load_kvar) * 1e3 / 3
    return NetworkModel((Bus("b", ("A", "B", "C"), VLN, "device"),), (),
                        (ConstantPowerLoad("ld", "b", (s,) * 3, energized),))


VERDICTS = []


def verdict(criterion, ok, detail):
    """Record one acceptance line; the caller still asserts."""
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
