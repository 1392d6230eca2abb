#!/usr/bin/env python3
"""INFNet desk-scale runner: gen-data, train, eval, ablate, sweep, dump-attention, grad-check.

  python scripts/run_infnet.py gen-data --config infnet.conf
  python scripts/run_infnet.py train --config infnet.conf --seed 1
  python scripts/run_infnet.py eval --config infnet.conf --split test

Exit codes: 0 ok, 1 failed grad check, 2 config, 3 data, 4 divergence, 5 I/O.
"""
from __future__ import annotations

import sys
from pathlib import Path

SCRIPT_DIR = Path(__file__).resolve().parent
sys.path.insert(0, str(SCRIPT_DIR))

from infnet.cli import main  # noqa: E402

if __name__ == "__main__":
    raise SystemExit(main())
