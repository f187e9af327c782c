"""Small-signal sweeps over every shipped axis, one eigenvalue CSV per axis."""
import argparse
from pathlib import Path

from vpdroop.acceptance import load_scenario
from vpdroop.smallsignal import eigen_csv, stability_sweep

AXES = ("clock_angle", "droop_gain", "virtual_resistance", "load_pf")

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=".")
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for axis in AXES:
        sf = load_scenario(f"fig5_sweep_{axis}")
        sw = sf.sweep
        points = stability_sweep(sf.config, sw.axis, sw.grid, index=sw.inverter, parallel=args.parallel)
        path = out / f"sweep_{axis}.csv"
        path.write_text(eigen_csv(points, sw.axis), encoding="utf-8")
        worst = max((p.report.spectral_abscissa for p in points if p.report), default=float("nan"))
        failed = sum(p.report is None for p in points)
        print(f"{axis}: {len(points)} points, max abscissa {worst:.4g}, {failed} failed -> {path}")
