#!/usr/bin/env python3
"""Fixed-point construction at increasing low-pass index.

Runs the short-window scenario for several indices and reports the
distance of each construction to the full-band reference, which should
shrink as the low-pass opens up.
"""

import sys
from pathlib import Path

from maxmat.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    extra = sys.argv[1:] or ["--out-dir", "results/mollified", "--n-list", "2,4,8,14"]
    sys.exit(main(["compare-mollified", str(ROOT / "scenarios" / "ll_mollified.yaml"), *extra]))
