#!/usr/bin/env python3
"""Sweep the scaling parameter on the shipped slow-relaxation scenario.

Writes the per-eta table and the fitted decay rate under results/.
Extra arguments are passed through to the driver, e.g. --threads 4.
"""

import sys
from pathlib import Path

from maxmat.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    extra = sys.argv[1:] or ["--out-dir", "results/etastudy", "--threads", "4"]
    sys.exit(main(["quasistatic-study", str(ROOT / "scenarios" / "ll_etastudy.yaml"), *extra]))
