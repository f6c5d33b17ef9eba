#!/usr/bin/env python3
"""Run the bundled toy recipe end to end and print the scored metrics.

Equivalent to `spkforge run --config configs/toy.cfg` followed by a read
of exp/toy/metrics.txt, but as one command with a wall-clock report:

    python3 scripts/run_toy_recipe.py
    python3 scripts/run_toy_recipe.py --config configs/toy_identity.cfg
    python3 scripts/run_toy_recipe.py --stop-stage 10   # package + register too
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from spkforge.config import load_config
from spkforge.pipeline import run_pipeline


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=os.path.join("configs", "toy.cfg"))
    ap.add_argument("--stage", type=int, default=1)
    ap.add_argument("--stop-stage", type=int, default=8)
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    t0 = time.monotonic()
    run = run_pipeline(cfg, args.stage, args.stop_stage, log=print)
    elapsed = time.monotonic() - t0

    print(f"\nfinished in {elapsed:.0f}s; experiment dir: {run.exp}")
    if os.path.isfile(run.metrics_file):
        print()
        with open(run.metrics_file, encoding="utf-8") as f:
            sys.stdout.write(f.read())
    return 0


if __name__ == "__main__":
    sys.exit(main())
