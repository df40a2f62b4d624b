"""Command-line front end.

Exit codes (stable):
    0  success
    2  usage error (bad flags, empty or unknown plot channels)
    3  scenario could not be read or parsed
    4  scenario failed validation
    5  numerical failure during simulation
"""
from __future__ import annotations

import argparse
import io
import os
import re
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .engine import SimulationError, TimeSeriesRecord
from .netmodel import NetworkError
from .scenario import CASES, ScenarioError, build_simulation, builtin_case, load_scenario

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_NUMERICAL = 5

RECORD_FILE = "record.csv"
EVENTS_FILE = "events.log"
SUMMARY_FILE = "summary.txt"


class UsageError(Exception):
    pass


def atomic_write(path: Path, data: str | bytes):
    """Write via a sibling temp file and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def summarize(record: TimeSeriesRecord) -> str:
    """Peak DC-link voltage, frequency range per microgrid and energy through each BTB."""
    lines = []
    for name in record.names:
        if name.endswith(".Vdc_pu"):
            btb = name[: -len(".Vdc_pu")]
            v = record[name]
            lines.append(f"{btb}.peak_Vdc_pu {v.max():.6f}")
            lines.append(f"{btb}.min_Vdc_pu {v.min():.6f}")
            p = record[f"{btb}.P_B"]
            # energy delivered out of side B, trapezoidal over the recorded samples
            e = float(np.sum(0.5 * (p[1:] + p[:-1]) * np.diff(record.time))) if len(p) > 1 else 0.0
            lines.append(f"{btb}.energy_B_kWh {e / 3.6e6:.6f}")
    freq = [n for n in record.names if n.startswith("f_")] or [n for n in record.names if n.endswith(".f")]
    for name in freq:
        f = record[name]
        live = f[f > 0]  # 0 marks a de-energized source
        if live.size:
            lines.append(f"{name}.min_Hz {live.min():.6f}")
            lines.append(f"{name}.max_Hz {live.max():.6f}")
        else:
            lines.append(f"{name} de-energized")
    return "\n".join(lines) + "\n"


def _load_doc(args):
    if args.case:
        return builtin_case(args.case)
    return load_scenario(args.scenario)


def run_one(doc, out: Path, dt=None, duration=None) -> tuple[int, str]:
    """Simulate one scenario document into ``out``; returns (exit code, message)."""
    try:
        cfg = doc.sim_config(dt=dt, duration=duration)
        sim = build_simulation(doc, cfg)
        result = sim.run()
    except ScenarioError as exc:
        return EXIT_VALIDATION, f"{doc.name}: invalid scenario: {exc}"
    except ValueError as exc:
        return EXIT_VALIDATION, f"{doc.name}: invalid settings: {exc}"
    except (SimulationError, NetworkError) as exc:
        return EXIT_NUMERICAL, f"{doc.name}: numerical failure: {exc}"
    atomic_write(out / RECORD_FILE, result.record.to_csv())
    atomic_write(out / EVENTS_FILE, "".join(line + "\n" for line in result.events))
    atomic_write(out / SUMMARY_FILE, f"scenario {doc.name}\n" + summarize(result.record))
    return EXIT_OK, f"{doc.name}: wrote {out} ({result.wall_time:.1f} s)"


def _run_case_worker(name, out, dt, duration):
    return run_one(builtin_case(name), Path(out), dt, duration)


def cmd_run(args) -> int:
    out = Path(args.out)
    if args.all_cases:
        jobs = args.jobs or min(len(CASES), os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_case_worker, c, str(out / c), args.dt, args.duration) for c in CASES]
            results = [f.result() for f in futures]
        code = EXIT_OK
        for rc, msg in results:
            print(msg, file=sys.stderr if rc else sys.stdout)
            code = max(code, rc)
        return code
    if not args.case and not args.scenario:
        raise UsageError("run needs a scenario path, --case NAME or --all-cases")
    if args.case and args.scenario:
        raise UsageError("give either a scenario path or --case, not both")
    try:
        doc = _load_doc(args)
    except ScenarioError as exc:
        return _report_scenario_error(exc, args.scenario or args.case)
    rc, msg = run_one(doc, out, args.dt, args.duration)
    print(msg, file=sys.stderr if rc else sys.stdout)
    return rc


def _report_scenario_error(exc: ScenarioError, source) -> int:
    print(f"{source}: {'cannot parse' if exc.kind == 'syntax' else 'invalid'} scenario", file=sys.stderr)
    for err in exc.errors:
        print(f"  {err}", file=sys.stderr)
    return EXIT_PARSE if exc.kind == "syntax" else EXIT_VALIDATION


def cmd_validate(args) -> int:
    try:
        doc = load_scenario(args.scenario)
    except ScenarioError as exc:
        return _report_scenario_error(exc, args.scenario)
    print(f"{args.scenario}: ok ({doc.name}, {len(doc.devices)} devices, {len(doc.events)} events)")
    return EXIT_OK


def cmd_cases(args) -> int:
    for name in CASES:
        doc = builtin_case(name)
        print(f"{name}\t{doc.sim.get('duration', '')} s\t{doc.description}")
    return EXIT_OK


def read_event_times(path: Path) -> list[float]:
    times = []
    if path.exists():
        for line in path.read_text().splitlines():
            parts = line.split()
            if len(parts) >= 2 and parts[1] == "EVENT":
                times.append(float(parts[0]))
    return sorted(set(times))


def _group_filename(channels) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", "+".join(channels)) + ".svg"


def plot_groups(record: TimeSeriesRecord, groups: list[list[str]], out: Path,
                events: list[float] = (), guides: list[float] = ()) -> list[Path]:
    """Render one SVG per channel group; output is byte-reproducible."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    missing = sorted({c for g in groups for c in g if c not in record})
    if missing:
        raise UsageError(f"unknown channel(s): {', '.join(missing)}; available: {', '.join(record.names)}")
    written = []
    with matplotlib.rc_context({"svg.hashsalt": "btbsim", "svg.fonttype": "path"}):
        for group in groups:
            fig, ax = plt.subplots(figsize=(8, 3.5))
            for ch in group:
                ax.plot(record.time, record[ch], label=ch, linewidth=1.0)
            for t in events:
                ax.axvline(t, color="0.6", linestyle=":", linewidth=0.8)
            for g in guides:
                ax.axhline(g, color="tab:red", linestyle="--", linewidth=0.8)
            ax.set_xlabel("time (s)")
            ax.set_ylabel(", ".join(group))
            ax.grid(True, alpha=0.3)
            ax.legend(loc="best", fontsize=8)
            fig.tight_layout()
            path = out / _group_filename(group)
            buf = io.BytesIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
            plt.close(fig)
            atomic_write(path, buf.getvalue())
            written.append(path)
    return written


def cmd_plot(args) -> int:
    groups = [[c.strip() for c in spec.split(",") if c.strip()] for spec in (args.channels or [])]
    groups = [g for g in groups if g]
    if not groups:
        raise UsageError("plot needs at least one channel (--channels a,b)")
    csv = Path(args.record)
    try:
        record = TimeSeriesRecord.from_csv(csv)
    except (OSError, ValueError) as exc:
        print(f"{csv}: cannot read record: {exc}", file=sys.stderr)
        return EXIT_PARSE
    events_path = Path(args.events) if args.events else csv.with_name(EVENTS_FILE)
    events = [] if args.no_events else read_event_times(events_path)
    for p in plot_groups(record, groups, Path(args.out), events, args.guide or []):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="btbsim", description="Phasor-domain simulator for BTB-coupled microgrids.",
                                 epilog="exit codes: 0 ok, 2 usage, 3 parse, 4 validation, 5 numerical. "
                                        "BTBSIM_DATA overrides the bundled data directory.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write record.csv, events.log, summary.txt")
    r.add_argument("scenario", nargs="?", help="scenario JSON path")
    r.add_argument("--case", choices=CASES, help="run a built-in case instead of a file")
    r.add_argument("--all-cases", action="store_true", help="run every built-in case into OUT/<case>/")
    r.add_argument("--jobs", type=int, help="worker processes for --all-cases")
    r.add_argument("--dt", type=float, help="override the time step (s)")
    r.add_argument("--duration", type=float, help="override the simulated duration (s)")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="parse and validate a scenario without running it")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("cases", help="list built-in cases")
    c.set_defaults(func=cmd_cases)

    p = sub.add_parser("plot", help="render channels of a record CSV to SVG")
    p.add_argument("record", help="record.csv written by run")
    p.add_argument("--channels", action="append", help="comma-separated channel group; repeat for more SVGs")
    p.add_argument("--out", default="plots", help="output directory (default: plots)")
    p.add_argument("--events", help="events.log for markers (default: next to the CSV)")
    p.add_argument("--no-events", action="store_true", help="omit event markers")
    p.add_argument("--guide", type=float, action="append", help="horizontal guide line; repeatable")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        ap.error(str(exc))  # exits with EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
