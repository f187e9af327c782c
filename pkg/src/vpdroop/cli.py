"""Command-line front end: ``vpdroop {simulate,equilibrium,eigen,sweep,verify}``.

Exit codes: 0 success, 1 acceptance failure, 2 configuration or usage
error, 3 numerical or domain error, 4 simulation error, 5 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import acceptance
from .config import ConfigError, emit_config, parse_config
from .controller import UnboundedValueError
from .net_model import DomainError
from .smallsignal import EigenError, OperatingPointError, analyze, eigen_csv, stability_sweep
from .steady_state import DegenerateGeometryError, EquilibriumError, droop_equilibrium
from .timedomain import SimulationError, Simulator, measure_metrics

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SIMULATION, EXIT_IO = range(6)
EQUILIBRIUM_SCHEMA_VERSION = 1
OUT_ENV = "VPDROOP_OUT"

log = logging.getLogger("vpdroop")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- files

def write_atomic(path: Path, text: str) -> Path:
    """Write through ``<path>.partial`` and rename once complete."""
    partial = path.with_name(path.name + ".partial")
    partial.write_text(text, encoding="utf-8")
    os.replace(partial, path)
    return path


def write_partial(path: Path, text: str) -> Path:
    partial = path.with_name(path.name + ".partial")
    partial.write_text(text, encoding="utf-8")
    return partial


def resolve_config(name: str) -> tuple[str, str]:
    """Text and stem of a config given as a path or a shipped scenario name."""
    p = Path(name)
    if p.is_file():
        return p.read_text(encoding="utf-8"), p.stem
    stem = p.stem if p.suffix == ".cfg" else p.name
    try:
        return acceptance.scenario_text(stem), stem
    except FileNotFoundError:
        raise UsageError(f"config {name!r} not found (neither a file nor a shipped scenario)") from None


def load_request(args):
    if not args.config:
        raise UsageError("a config file is required (positional or --config)")
    text, stem = resolve_config(args.config)
    return parse_config(text, args.set or ()), stem


def output_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    sf, stem = load_request(args)
    sc = sf.with_simulation(args.duration, args.dt, args.decimate)
    out = output_dir(args)
    trace_path = out / f"{stem}_trace.csv"
    try:
        trace = Simulator(sc).run()
    except SimulationError as exc:
        if exc.partial_trace is not None and len(exc.partial_trace.time):
            p = write_partial(trace_path, exc.partial_trace.to_csv_text())
            print(f"partial trace written to {p}", file=sys.stderr)
        raise
    write_atomic(trace_path, trace.to_csv_text())
    m = sf.metrics
    end = m.end_time if m.end_time is not None and m.end_time <= sc.duration else None
    window = min(m.window, sc.duration)
    report = measure_metrics(trace, window, end, m.event_time if end is not None else None, m.band)
    text = report.report() + "\n"
    write_atomic(out / f"{stem}_metrics.txt", text)
    print(text, end="")
    print(f"trace: {trace_path}")
    return EXIT_OK


def equilibrium_csv(eq) -> str:
    buf = io.StringIO()
    buf.write(f"# vpdroop-equilibrium schema={EQUILIBRIUM_SCHEMA_VERSION} "
              f"iterations={eq.iterations} residual={eq.residual:.3e}\n")
    recs = eq.solution.as_records()
    w = csv.DictWriter(buf, fieldnames=list(recs[0]), lineterminator="\n")
    w.writeheader()
    for r in recs:
        w.writerow({k: (v if isinstance(v, int) else f"{v:.12g}") for k, v in r.items()})
    return buf.getvalue()


def cmd_equilibrium(args) -> int:
    sf, stem = load_request(args)
    eq = droop_equilibrium(sf.config)
    path = write_atomic(output_dir(args) / f"{stem}_equilibrium.csv", equilibrium_csv(eq))
    sol = eq.solution
    for k in range(sol.n):
        print(f"inverter {k + 1}: E={eq.voltage_magnitudes[k]:.6g} V  P={sol.active_power[k]:.6g} W  "
              f"Q={sol.reactive_power[k]:.6g} var")
    print(f"pcc |V|={abs(sol.pcc_voltage):.6g} V; written {path}")
    return EXIT_OK


def cmd_eigen(args) -> int:
    sf, stem = load_request(args)
    _, _, rep = analyze(sf.config)
    path = write_atomic(output_dir(args) / f"{stem}_eigen.csv", eigen_csv([rep]))
    dom = rep.dominant_eigenvalue
    print(f"stable={rep.stable} spectral_abscissa={rep.spectral_abscissa:.6g} "
          f"dominant={dom.real:.6g}{dom.imag:+.6g}j ({rep.dominant_mode_label}); written {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    sf, stem = load_request(args)
    axis = args.axis or (sf.sweep.axis if sf.sweep else None)
    grid = args.grid or (sf.sweep.grid if sf.sweep else None)
    index = sf.sweep.inverter if sf.sweep else None
    if not axis or not grid:
        raise UsageError("sweep needs an axis and a grid (config [sweep] section or --axis/--grid)")
    points = stability_sweep(sf.config, axis, grid, index=index, parallel=args.parallel)
    path = write_atomic(output_dir(args) / f"{stem}_sweep.csv", eigen_csv(points, axis))
    for p in points:
        if p.report is None:
            print(f"{axis}={p.value:g}: failed ({p.error})")
        else:
            print(f"{axis}={p.value:g}: abscissa={p.report.spectral_abscissa:.6g} stable={p.report.stable}")
    print(f"written {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    numbers = args.only or sorted(acceptance.CHECKS)
    results = []
    for k in numbers:
        r = acceptance.run_check(k)
        print(r.line(), flush=True)
        results.append(r)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return EXIT_OK if passed == len(results) else EXIT_VERIFY


def cmd_emit(args) -> int:
    sf, _ = load_request(args)
    print(emit_config(sf), end="")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _grid(text: str):
    from .config import _float_list
    return _float_list(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config_pos", nargs="?", metavar="CONFIG",
                        help="scenario file or shipped scenario name")
    common.add_argument("--config", help="scenario file or shipped scenario name")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, e.g. load.apparent_power=600 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="vpdroop", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="time-domain run: trace CSV and metrics")
    s.add_argument("--dt", type=float, help="time step in seconds")
    s.add_argument("--duration", type=float, help="simulated time in seconds")
    s.add_argument("--decimate", type=int, help="keep every k-th sample")
    s.set_defaults(func=cmd_simulate)
    sub.add_parser("equilibrium", parents=[common], help="phasor steady state CSV").set_defaults(
        func=cmd_equilibrium)
    sub.add_parser("eigen", parents=[common], help="small-signal eigenvalue CSV").set_defaults(func=cmd_eigen)
    w = sub.add_parser("sweep", parents=[common], help="stability sweep, stacked eigenvalue CSV")
    w.add_argument("--axis", choices=("clock_angle", "droop_gain", "virtual_resistance", "load_pf"))
    w.add_argument("--grid", type=_grid, help="comma list or start:stop:count")
    w.add_argument("--parallel", type=int, default=1, metavar="N", help="worker processes")
    w.set_defaults(func=cmd_sweep)
    v = sub.add_parser("verify", help="run the acceptance checks")
    v.add_argument("--only", type=int, nargs="+", choices=sorted(acceptance.CHECKS), metavar="K")
    v.add_argument("--out", help=argparse.SUPPRESS)
    v.add_argument("-v", "--verbose", action="store_true")
    v.set_defaults(func=cmd_verify, config=None, config_pos=None)
    e = sub.add_parser("emit", parents=[common], help="print the canonical form of a config")
    e.set_defaults(func=cmd_emit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "config_pos", None) and getattr(args, "config", None):
        parser.error("give the config either positionally or with --config, not both")
    if getattr(args, "config_pos", None):
        args.config = args.config_pos
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"vpdroop: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"vpdroop: simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except (DomainError, EquilibriumError, OperatingPointError, EigenError, UnboundedValueError,
            DegenerateGeometryError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"vpdroop: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"vpdroop: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"vpdroop: invalid input: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
