"""Run one of the shipped sweep configs and write its CSV/JSON report.

usage: python scripts/run_sweep.py {t1,final,t4} [--renewal] [--out-dir DIR]
"""
import argparse
import sys
from pathlib import Path

from bhlab.cli import main

ROOT = Path(__file__).resolve().parents[1]
SWEEPS = {"t1": "t1_sweep", "final": "final_sweep", "t4": "t4_sweep"}


def run(name, renewal=False, out_dir=None):
    stem = SWEEPS[name] + ("_renewal" if renewal else "")
    config = ROOT / "configs" / f"{stem}.json"
    if not config.exists():
        raise SystemExit(f"no config {config.name}")
    out = out_dir or ROOT / "results"
    return main(["experiment", "run", str(config), "--out-dir", str(out)])


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("sweep", choices=sorted(SWEEPS))
    p.add_argument("--renewal", action="store_true", help="use the renewal-consistent D")
    p.add_argument("--out-dir", default=None)
    a = p.parse_args()
    sys.exit(run(a.sweep, a.renewal, a.out_dir))
