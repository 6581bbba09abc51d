"""Sweep runner; pass --renewal to use the renewal-consistent D."""
import sys

from run_sweep import run

if __name__ == "__main__":
    sys.exit(run("final", renewal="--renewal" in sys.argv[1:]))
